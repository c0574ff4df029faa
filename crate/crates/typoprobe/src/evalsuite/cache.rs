//! Persistent verdict cache.
//!
//! One JSONL file per experiment under `cache/verdicts/`; each record keys a
//! (judge, prompt hash, response hash) triple to a verdict. Re-running an
//! evaluation therefore never re-queries a judge for a response it has
//! already graded, remote or offline alike.

use super::{EvalError, Judge, Judgment, Verdict};
use crate::store::text_content_hash;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    judge_name: String,
    prompt_hash: String,
    response_hash: String,
    verdict: Verdict,
    flagged: bool,
}

type Key = (String, String, String);

/// In-memory map over an append-only JSONL file. Rationales are not
/// persisted; a cache hit returns the verdict with `rationale: None`.
pub struct VerdictCache {
    path: PathBuf,
    entries: HashMap<Key, (Verdict, bool)>,
    hits: u64,
    misses: u64,
}

impl VerdictCache {
    pub fn open(cache_dir: &std::path::Path) -> Result<Self, EvalError> {
        let io = |e: std::io::Error| EvalError::CacheIo(e.to_string());
        fs::create_dir_all(cache_dir).map_err(io)?;
        let path = cache_dir.join("verdicts.jsonl");
        let mut entries = HashMap::new();
        if path.exists() {
            let file = fs::File::open(&path).map_err(io)?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line (crash mid-append) is skipped, not fatal;
                // the verdict will be re-judged and re-appended.
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.insert(
                            (rec.judge_name, rec.prompt_hash, rec.response_hash),
                            (rec.verdict, rec.flagged),
                        );
                    }
                    Err(_) => continue,
                }
            }
        }
        Ok(Self {
            path,
            entries,
            hits: 0,
            misses: 0,
        })
    }

    /// Returns the cached judgment for (judge, prompt, response) or invokes
    /// the judge, persists the verdict, and returns it.
    pub fn get_or_judge(
        &mut self,
        judge: &dyn Judge,
        source_prompt: &str,
        response_text: &str,
    ) -> Result<Judgment, EvalError> {
        let key = (
            judge.name().to_string(),
            text_content_hash(source_prompt),
            text_content_hash(response_text),
        );
        if let Some(&(verdict, flagged)) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(Judgment {
                verdict,
                rationale: None,
                flagged_unparseable: flagged,
            });
        }
        self.misses += 1;
        let judgment = judge.judge(source_prompt, response_text)?;
        let record = CacheRecord {
            judge_name: key.0.clone(),
            prompt_hash: key.1.clone(),
            response_hash: key.2.clone(),
            verdict: judgment.verdict,
            flagged: judgment.flagged_unparseable,
        };
        let io = |e: std::io::Error| EvalError::CacheIo(e.to_string());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io)?;
        let mut line =
            serde_json::to_string(&record).map_err(|e| EvalError::CacheIo(e.to_string()))?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io)?;
        self.entries
            .insert(key, (judgment.verdict, judgment.flagged_unparseable));
        Ok(judgment)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }
}

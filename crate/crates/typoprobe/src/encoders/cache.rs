//! Persistent per-encoder embedding cache.
//!
//! One JSONL file per encoder under `cache/embeddings/`; each record maps a
//! content hash to a vector. The cache is what enforces "text embeddings
//! are computed once and reused": repeat lookups return the stored vector
//! bitwise-identically (serde_json round-trips f64 exactly).

use super::{EmbeddingVector, EncoderError};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    content_hash: String,
    values: Vec<f64>,
}

/// In-memory map over an append-only JSONL file.
pub struct EmbeddingCache {
    path: PathBuf,
    entries: HashMap<String, Array1<f64>>,
    hits: u64,
    misses: u64,
}

impl EmbeddingCache {
    /// Opens (creating directories as needed) the cache for one encoder.
    pub fn open(cache_dir: &std::path::Path, encoder_name: &str) -> Result<Self, EncoderError> {
        let io = |e: std::io::Error| EncoderError::CacheIo(e.to_string());
        fs::create_dir_all(cache_dir).map_err(io)?;
        let path = cache_dir.join(format!("{encoder_name}.jsonl"));
        let mut entries = HashMap::new();
        if path.exists() {
            let file = fs::File::open(&path).map_err(io)?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line (crash mid-append) is skipped, not fatal;
                // the entry will be recomputed and re-appended.
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.insert(rec.content_hash, Array1::from(rec.values));
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

    /// Returns the cached vector for `content_hash` or computes, persists,
    /// and returns it.
    pub fn get_or_compute<F>(
        &mut self,
        content_hash: &str,
        compute: F,
    ) -> Result<EmbeddingVector, EncoderError>
    where
        F: FnOnce() -> Result<EmbeddingVector, EncoderError>,
    {
        if let Some(values) = self.entries.get(content_hash) {
            self.hits += 1;
            return Ok(EmbeddingVector {
                values: values.clone(),
                normalized: true,
            });
        }
        self.misses += 1;
        let emb = compute()?;
        let record = CacheRecord {
            content_hash: content_hash.to_string(),
            values: emb.values.to_vec(),
        };
        let io = |e: std::io::Error| EncoderError::CacheIo(e.to_string());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io)?;
        let mut line = serde_json::to_string(&record)
            .map_err(|e| EncoderError::CacheIo(e.to_string()))?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io)?;
        // Re-read through the serialized form so cached and uncached paths
        // return bitwise-identical vectors.
        let reparsed: CacheRecord = serde_json::from_str(line.trim_end())
            .map_err(|e| EncoderError::CacheIo(e.to_string()))?;
        let values = Array1::from(reparsed.values);
        self.entries.insert(content_hash.to_string(), values.clone());
        Ok(EmbeddingVector {
            values,
            normalized: true,
        })
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{resolve_encoder, EncoderResolution};
    use crate::store::text_content_hash;

    #[test]
    fn cache_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let enc = resolve_encoder("fixture-linear-a", &EncoderResolution::default()).unwrap();
        let text = "the instructions";
        let hash = text_content_hash(text);

        let mut cache = EmbeddingCache::open(dir.path(), &enc.name).unwrap();
        let first = cache.get_or_compute(&hash, || enc.embed_text(text)).unwrap();
        let second = cache.get_or_compute(&hash, || panic!("must not recompute")).unwrap();
        assert_eq!(first.values, second.values);
        assert_eq!(cache.stats(), (1, 1));

        // A fresh process sees the persisted entry and returns the same bits.
        let mut reopened = EmbeddingCache::open(dir.path(), &enc.name).unwrap();
        let third = reopened
            .get_or_compute(&hash, || panic!("must not recompute"))
            .unwrap();
        assert_eq!(first.values, third.values);
    }

    #[test]
    fn torn_trailing_line_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let enc = resolve_encoder("fixture-linear-a", &EncoderResolution::default()).unwrap();
        let hash = text_content_hash("alpha");
        {
            let mut cache = EmbeddingCache::open(dir.path(), &enc.name).unwrap();
            cache.get_or_compute(&hash, || enc.embed_text("alpha")).unwrap();
        }
        let path = dir.path().join(format!("{}.jsonl", enc.name));
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"content_hash\":\"zzz\",\"values\":[0.1,");
        fs::write(&path, &bytes).unwrap();

        let mut cache = EmbeddingCache::open(dir.path(), &enc.name).unwrap();
        assert_eq!(cache.len(), 1);
        let got = cache.get_or_compute(&hash, || panic!("cached")).unwrap();
        assert_eq!(got.dim(), enc.embed_dim);
    }

    #[test]
    fn distinct_hashes_are_distinct_entries() {
        let dir = tempfile::tempdir().unwrap();
        let enc = resolve_encoder("fixture-conv-a", &EncoderResolution::default()).unwrap();
        let mut cache = EmbeddingCache::open(dir.path(), &enc.name).unwrap();
        for text in ["one", "two", "three"] {
            cache
                .get_or_compute(&text_content_hash(text), || enc.embed_text(text))
                .unwrap();
        }
        assert_eq!(cache.len(), 3);
    }
}

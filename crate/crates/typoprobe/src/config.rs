//! Study configuration: one TOML document covering every pipeline stage,
//! with dotted-key overrides layered on top (overrides win). Unknown keys
//! are rejected and validation reports every violated field at once.

use crate::attack::AttackConfig;
use crate::encoders::{default_fixture_ensemble, EncoderResolution};
use crate::evalsuite::{Judge, JudgeDescriptor, JudgeKind, OfflineJudge, DEFAULT_JUDGE_TEMPLATE};
use crate::store::text_content_hash;
use crate::textimage::{RenderSpec, TransformKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid override `{key}`: {reason}")]
    BadOverride { key: String, reason: String },
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Field names used when ingesting structured (JSONL) prompt files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptFieldMap {
    pub id_field: String,
    pub text_field: String,
    pub category_field: String,
}

impl Default for PromptFieldMap {
    fn default() -> Self {
        Self {
            id_field: "id".into(),
            text_field: "text".into(),
            category_field: "category".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    /// How many qualifying prompts to keep.
    pub n: usize,
    /// Models whose text-success / degraded-failure pattern qualifies a
    /// prompt (the strictest targets).
    pub target_models: Vec<String>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            n: 50,
            target_models: vec!["mock-strict".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeConfig {
    pub kind: JudgeKind,
    /// Judge model name (remote kind only).
    pub model: String,
    /// Template override; None uses the built-in template.
    pub template: Option<String>,
    /// Target models to query and evaluate.
    pub targets: Vec<String>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            kind: JudgeKind::OfflineHeuristic,
            model: "gpt-4o".into(),
            template: None,
            targets: vec!["mock-strict".into(), "mock-lax".into()],
        }
    }
}

impl JudgeConfig {
    /// Descriptor of the judge this config denotes, without constructing a
    /// transport. Recorded in the experiment manifest.
    pub fn descriptor(&self) -> JudgeDescriptor {
        match self.kind {
            JudgeKind::OfflineHeuristic => OfflineJudge::bundled().descriptor(),
            JudgeKind::RemoteLlm => {
                let template = self.template.as_deref().unwrap_or(DEFAULT_JUDGE_TEMPLATE);
                JudgeDescriptor {
                    name: format!("remote-{}", self.model),
                    kind: JudgeKind::RemoteLlm,
                    content_hashes: [("template".to_string(), text_content_hash(template))]
                        .into(),
                }
            }
        }
    }
}

/// Everything one study run needs, in a single document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub experiment_id: String,
    pub prompts_file: PathBuf,
    /// Master seed; per-sample seeds derive from it and content hashes.
    pub seed: u64,
    /// Rendered font-size conditions, tagged `{n}px`.
    pub font_sizes: Vec<u32>,
    /// Degradations applied to the base-size rendering, tagged by kind.
    pub transforms: Vec<String>,
    pub encoders: Vec<String>,
    /// Per-encoder overrides keyed by encoder name.
    pub encoder: BTreeMap<String, EncoderResolution>,
    pub prompts: PromptFieldMap,
    pub render: RenderSpec,
    pub attack: AttackConfig,
    pub select: SelectConfig,
    pub judge: JudgeConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            experiment_id: "exp-0001".into(),
            prompts_file: "prompts.txt".into(),
            seed: 0,
            font_sizes: (6..=28).step_by(2).collect(),
            transforms: TransformKind::ALL
                .iter()
                .filter(|k| **k != TransformKind::Identity)
                .map(|k| k.name().to_string())
                .collect(),
            encoders: default_fixture_ensemble(),
            encoder: BTreeMap::new(),
            prompts: PromptFieldMap::default(),
            render: RenderSpec::default(),
            attack: AttackConfig::default(),
            select: SelectConfig::default(),
            judge: JudgeConfig::default(),
        }
    }
}

impl StudyConfig {
    /// Every violated field across all sections, prefixed by section.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.experiment_id.is_empty()
            || !self
                .experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        {
            v.push(format!(
                "experiment_id `{}` must be nonempty and use only [A-Za-z0-9._-]",
                self.experiment_id
            ));
        }
        if self.prompts_file.as_os_str().is_empty() {
            v.push("prompts_file must be set".into());
        }
        if self.font_sizes.is_empty() {
            v.push("font_sizes must be nonempty".into());
        }
        for &s in &self.font_sizes {
            if s == 0 || s >= self.render.canvas_px.max(1) {
                v.push(format!(
                    "font_sizes entry {s} must satisfy 1 <= size < render.canvas_px {}",
                    self.render.canvas_px
                ));
            }
        }
        for t in &self.transforms {
            if t.parse::<TransformKind>().is_err() {
                v.push(format!("transforms entry `{t}` is not a known transform"));
            }
        }
        if self.encoders.is_empty() {
            v.push("encoders must be nonempty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.encoders {
            if !seen.insert(e) {
                v.push(format!("encoders lists `{e}` more than once"));
            }
        }
        v.extend(self.render.violations().into_iter().map(|m| format!("render.{m}")));
        v.extend(self.attack.violations().into_iter().map(|m| format!("attack.{m}")));
        if self.select.n == 0 {
            v.push("select.n must be at least 1".into());
        }
        if self.select.target_models.is_empty() {
            v.push("select.target_models must be nonempty".into());
        }
        if self.judge.targets.is_empty() {
            v.push("judge.targets must be nonempty".into());
        }
        if self.judge.kind == JudgeKind::RemoteLlm && self.judge.model.is_empty() {
            v.push("judge.model must be set for the remote judge".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    /// The full default document as TOML, used by `--help` to enumerate
    /// every key with its default.
    pub fn defaults_toml() -> String {
        toml::to_string_pretty(&StudyConfig::default())
            .expect("default config always serializes")
    }
}

/// Parses `raw` as a TOML value (ints, floats, bools, arrays, quoted
/// strings); anything unparseable is taken as a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride {
        key: spec.to_string(),
        reason: "expected key=value".into(),
    })?;
    let key = key.trim();
    let segments: Vec<&str> = key.split('.').collect();
    if key.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::BadOverride {
            key: key.to_string(),
            reason: "empty key segment".into(),
        });
    }
    let mut cursor = table;
    for seg in &segments[..segments.len() - 1] {
        cursor = cursor
            .entry(seg.to_string())
            .or_insert(toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride {
                key: key.to_string(),
                reason: format!("`{seg}` is not a table"),
            })?;
    }
    cursor.insert(
        segments[segments.len() - 1].to_string(),
        parse_override_value(raw.trim()),
    );
    Ok(())
}

/// Loads the config file (or the built-in defaults when `path` is None),
/// applies dotted-key overrides in order, and type-checks the result.
/// Validation of field values is separate: call `validate()` on the result.
pub fn load_study_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<StudyConfig, ConfigError> {
    let mut table = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| ConfigError::Io {
                path: p.to_path_buf(),
                reason: e.to_string(),
            })?
            .parse::<toml::Table>()
            .map_err(|e| ConfigError::Parse(e.to_string()))?,
        None => toml::Table::try_from(StudyConfig::default())
            .map_err(|e| ConfigError::Parse(e.to_string()))?,
    };
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    table
        .try_into::<StudyConfig>()
        .map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Applies dotted-key overrides on top of an existing config, type-checked
/// the same way as `load_study_config`. Used when an experiment's recorded
/// config is adjusted for a single invocation.
pub fn override_study_config(
    base: &StudyConfig,
    overrides: &[String],
) -> Result<StudyConfig, ConfigError> {
    let mut table =
        toml::Table::try_from(base.clone()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    table
        .try_into::<StudyConfig>()
        .map_err(|e| ConfigError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::OuterRule;

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = StudyConfig::default();
        assert_eq!(cfg.font_sizes.len(), 12);
        assert_eq!(cfg.font_sizes.first(), Some(&6));
        assert_eq!(cfg.font_sizes.last(), Some(&28));
        assert_eq!(cfg.transforms.len(), 10);
        assert!(!cfg.transforms.contains(&"identity".to_string()));
        assert_eq!(cfg.encoders.len(), 4);
        assert_eq!(cfg.attack.epsilon, 32.0 / 255.0);
        assert_eq!(cfg.attack.steps_t, 100);
        assert_eq!(cfg.select.n, 50);
        assert_eq!(cfg.judge.kind, JudgeKind::OfflineHeuristic);
        cfg.validate().unwrap();
    }

    #[test]
    fn default_document_round_trips_through_toml() {
        let text = StudyConfig::defaults_toml();
        let back: StudyConfig = text.parse::<toml::Table>().unwrap().try_into().unwrap();
        assert_eq!(back, StudyConfig::default());
    }

    #[test]
    fn overrides_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.toml");
        std::fs::write(&path, "experiment_id = \"from-file\"\n[attack]\nepsilon = 0.05\n")
            .unwrap();
        let cfg = load_study_config(
            Some(&path),
            &["attack.epsilon=0.1".into(), "attack.steps_t=7".into()],
        )
        .unwrap();
        assert_eq!(cfg.experiment_id, "from-file");
        assert_eq!(cfg.attack.epsilon, 0.1);
        assert_eq!(cfg.attack.steps_t, 7);
    }

    #[test]
    fn overrides_parse_typed_values() {
        let cfg = load_study_config(
            None,
            &[
                "font_sizes=[6, 8]".into(),
                "judge.model=grader-9000".into(),
                "render.antialias=false".into(),
                "attack.outer_rule=scaled-difference".into(),
                "encoder.fixture-conv-a.resolution=64".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.font_sizes, vec![6, 8]);
        assert_eq!(cfg.judge.model, "grader-9000");
        assert!(!cfg.render.antialias);
        assert_eq!(cfg.attack.outer_rule, OuterRule::ScaledDifference);
        assert_eq!(cfg.encoder["fixture-conv-a"].resolution, Some(64));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_study_config(None, &["attack.bogus=1".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
        assert!(err.to_string().contains("bogus"));

        let err = load_study_config(None, &["not_a_key=1".into()]).unwrap_err();
        assert!(err.to_string().contains("not_a_key"));
    }

    #[test]
    fn overrides_are_type_checked() {
        let err = load_study_config(None, &["attack.steps_t=banana".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
        let err = load_study_config(None, &["nonsense".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::BadOverride { .. }), "{err}");
    }

    #[test]
    fn validation_lists_every_violated_field() {
        let cfg = load_study_config(
            None,
            &[
                "attack.epsilon=2.0".into(),
                "select.n=0".into(),
                "font_sizes=[]".into(),
            ],
        )
        .unwrap();
        let violations = cfg.violations();
        assert_eq!(violations.len(), 3, "{violations:?}");
        assert!(violations.iter().any(|m| m.contains("attack.epsilon")));
        assert!(violations.iter().any(|m| m.contains("select.n")));
        assert!(violations.iter().any(|m| m.contains("font_sizes")));
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("epsilon"));
    }

    #[test]
    fn bad_identifiers_and_transforms_are_violations() {
        let mut cfg = StudyConfig::default();
        cfg.experiment_id = "has space".into();
        cfg.transforms.push("solarize".into());
        cfg.encoders.push(cfg.encoders[0].clone());
        let v = cfg.violations();
        assert!(v.iter().any(|m| m.contains("experiment_id")));
        assert!(v.iter().any(|m| m.contains("solarize")));
        assert!(v.iter().any(|m| m.contains("more than once")));
    }

    #[test]
    fn help_document_covers_every_section() {
        let text = StudyConfig::defaults_toml();
        for key in [
            "experiment_id",
            "font_sizes",
            "[render]",
            "[attack]",
            "epsilon",
            "steps_t",
            "alpha_inner",
            "alpha_outer",
            "momentum_mu",
            "ssa_samples_s",
            "ssa_sigma",
            "ssa_rho",
            "di_prob",
            "[select]",
            "[judge]",
        ] {
            assert!(text.contains(key), "defaults document is missing {key}");
        }
    }

    #[test]
    fn judge_descriptors_pin_their_content() {
        let offline = JudgeConfig::default().descriptor();
        assert_eq!(offline.kind, JudgeKind::OfflineHeuristic);
        assert_eq!(offline.content_hashes.len(), 3);

        let remote = JudgeConfig {
            kind: JudgeKind::RemoteLlm,
            ..Default::default()
        }
        .descriptor();
        assert_eq!(remote.kind, JudgeKind::RemoteLlm);
        assert_eq!(remote.name, "remote-gpt-4o");
        assert_eq!(remote.content_hashes.len(), 1);
        let custom = JudgeConfig {
            kind: JudgeKind::RemoteLlm,
            template: Some("{prompt} {response}".into()),
            ..Default::default()
        }
        .descriptor();
        assert_ne!(
            custom.content_hashes["template"],
            remote.content_hashes["template"]
        );
    }
}

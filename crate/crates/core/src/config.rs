//! `section.key = value` run configuration with typed defaults.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::objectives::MaskingConfig;
use crate::perturb::PerturbConfig;
use crate::trainer::{FinetuneConfig, TrainConfig};

/// Every tunable setting of a run. Sections: `encoder`, `train`, `perturb`,
/// `masking`, `finetune`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub perturb: PerturbConfig,
    pub masking: MaskingConfig,
    pub finetune: FinetuneConfig,
}

fn sections(v: &Value) -> &Map<String, Value> {
    v.as_object().expect("config serializes to an object")
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys and ill-typed values are errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::default().with_overrides(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }

    /// Applies `key = value` assignments on top of `self`.
    pub fn with_overrides<'a>(
        &self,
        lines: impl IntoIterator<Item = (usize, &'a str)>,
    ) -> Result<RunConfig> {
        let mut root = serde_json::to_value(self).expect("config serializes");
        for (line_no, raw) in lines {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::parse("config", line_no, msg);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| err(format!("key `{key}` must be `section.field`")))?;
            let slot = root
                .get_mut(section)
                .and_then(|s| s.get_mut(field))
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            *slot = match slot {
                Value::Bool(_) => Value::Bool(
                    value
                        .parse()
                        .map_err(|_| err(format!("`{key}` expects true or false")))?,
                ),
                Value::Number(_) => {
                    let n: Value = serde_json::from_str(value)
                        .map_err(|_| err(format!("`{key}` expects a number, got `{value}`")))?;
                    if !n.is_number() {
                        return Err(err(format!("`{key}` expects a number, got `{value}`")));
                    }
                    n
                }
                _ => Value::String(value.to_string()),
            };
            // reject values the field type cannot hold, e.g. 0.5 for a count
            let section_value = root.get(section).expect("section exists").clone();
            check_section(section, section_value).map_err(|e| err(format!("`{key}`: {e}")))?;
        }
        let cfg: RunConfig =
            serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.perturb.validate()?;
        self.masking.validate()?;
        self.finetune.validate()?;
        if self.encoder.vocab_size > 0 {
            self.encoder.validate()?;
        }
        Ok(())
    }

    /// Every setting as sorted `section.key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// `(section.key, value)` pairs in section order, keys sorted.
    pub fn entries(&self) -> Vec<(String, String)> {
        let root = serde_json::to_value(self).expect("config serializes");
        let mut out = Vec::new();
        for (section, fields) in sections(&root) {
            let mut keys: Vec<_> = sections(fields).iter().collect();
            keys.sort_by(|a, b| a.0.cmp(b.0));
            for (k, v) in keys {
                out.push((format!("{section}.{k}"), scalar_text(v)));
            }
        }
        out
    }
}

fn check_section(section: &str, value: Value) -> std::result::Result<(), String> {
    fn as_type<T: DeserializeOwned>(v: Value) -> std::result::Result<(), String> {
        serde_json::from_value::<T>(v)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
    match section {
        "encoder" => as_type::<EncoderConfig>(value),
        "train" => as_type::<TrainConfig>(value),
        "perturb" => as_type::<PerturbConfig>(value),
        "masking" => as_type::<MaskingConfig>(value),
        "finetune" => as_type::<FinetuneConfig>(value),
        other => Err(format!("unknown section {other}")),
    }
}

//! Run configuration: plain-text `key=value` files with typed defaults.
//!
//! Defaults follow the reference training setup: 300-dim word embeddings,
//! 400 CNN filters with window 5, negative sampling ratio 6, batch 256,
//! dropout 0.2 and 40 aspects.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for {key}: {value:?} ({reason})")]
    BadValue { line: usize, key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Which news channels feed the encoders. The category view covers both
/// category and subcategory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputViews {
    pub title: bool,
    pub abstract_text: bool,
    pub category: bool,
}

impl InputViews {
    pub fn all() -> Self {
        InputViews { title: true, abstract_text: true, category: true }
    }

    pub fn none_enabled(&self) -> bool {
        !self.title && !self.abstract_text && !self.category
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        let mut v = InputViews { title: false, abstract_text: false, category: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "title" => v.title = true,
                "abstract" => v.abstract_text = true,
                "category" => v.category = true,
                other => return Err(format!("unknown view {other:?}")),
            }
        }
        if v.none_enabled() {
            return Err("at least one view must be enabled".into());
        }
        Ok(v)
    }
}

impl fmt::Display for InputViews {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.title {
            parts.push("title");
        }
        if self.abstract_text {
            parts.push("abstract");
        }
        if self.category {
            parts.push("category");
        }
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    // Data paths (required by `preprocess`; eval_behaviors by `eval`).
    pub news_path: Option<String>,
    pub behaviors_path: Option<String>,
    pub embeddings_path: Option<String>,
    pub eval_behaviors_path: Option<String>,

    // Model dimensions.
    pub embedding_dim: usize,
    pub cnn_filters: usize,
    pub window: usize,
    pub category_dim: usize,
    pub attention_hidden: usize,
    pub aspect_count: usize,

    // Preprocessing.
    pub title_len: usize,
    pub abstract_len: usize,
    pub history_cap: usize,
    pub min_count: usize,

    // Training.
    pub negative_ratio: usize,
    pub aspect_negative_ratio: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub ortho_weight: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub seed: u64,

    // Variant switches.
    pub input_views: InputViews,
    pub aspects_enabled: bool,
    pub deterministic: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            news_path: None,
            behaviors_path: None,
            embeddings_path: None,
            eval_behaviors_path: None,
            embedding_dim: 300,
            cnn_filters: 400,
            window: 5,
            category_dim: 100,
            attention_hidden: 200,
            aspect_count: 40,
            title_len: 30,
            abstract_len: 60,
            history_cap: 50,
            min_count: 2,
            negative_ratio: 6,
            aspect_negative_ratio: 6,
            batch_size: 256,
            dropout: 0.2,
            ortho_weight: 1.0,
            learning_rate: 1e-4,
            grad_clip: 5.0,
            epochs: 5,
            seed: 42,
            input_views: InputViews::all(),
            aspects_enabled: true,
            deterministic: true,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line,
                text: trimmed.to_string(),
            })?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        cfg.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            key: &str,
            value: &str,
            line: usize,
        ) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }

        match key {
            "news" => self.news_path = Some(value.to_string()),
            "behaviors" => self.behaviors_path = Some(value.to_string()),
            "embeddings" => self.embeddings_path = Some(value.to_string()),
            "eval_behaviors" => self.eval_behaviors_path = Some(value.to_string()),
            "embedding_dim" => self.embedding_dim = parse(key, value, line)?,
            "cnn_filters" => self.cnn_filters = parse(key, value, line)?,
            "window" => self.window = parse(key, value, line)?,
            "category_dim" => self.category_dim = parse(key, value, line)?,
            "attention_hidden" => self.attention_hidden = parse(key, value, line)?,
            "aspect_count" => self.aspect_count = parse(key, value, line)?,
            "title_len" => self.title_len = parse(key, value, line)?,
            "abstract_len" => self.abstract_len = parse(key, value, line)?,
            "history_cap" => self.history_cap = parse(key, value, line)?,
            "min_count" => self.min_count = parse(key, value, line)?,
            "negative_ratio" => self.negative_ratio = parse(key, value, line)?,
            "aspect_negative_ratio" => self.aspect_negative_ratio = parse(key, value, line)?,
            "batch_size" => self.batch_size = parse(key, value, line)?,
            "dropout" => self.dropout = parse(key, value, line)?,
            "ortho_weight" => self.ortho_weight = parse(key, value, line)?,
            "learning_rate" => self.learning_rate = parse(key, value, line)?,
            "grad_clip" => self.grad_clip = parse(key, value, line)?,
            "epochs" => self.epochs = parse(key, value, line)?,
            "seed" => self.seed = parse(key, value, line)?,
            "views" => {
                self.input_views =
                    InputViews::parse(value).map_err(|reason| ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: value.to_string(),
                        reason,
                    })?
            }
            "aspects" => self.aspects_enabled = parse(key, value, line)?,
            "deterministic" => self.deterministic = parse(key, value, line)?,
            other => {
                return Err(ConfigError::UnknownKey { line, key: other.to_string() });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embedding_dim == 0
            || self.cnn_filters == 0
            || self.category_dim == 0
            || self.attention_hidden == 0
            || self.aspect_count == 0
            || self.title_len == 0
            || self.abstract_len == 0
            || self.batch_size == 0
            || self.negative_ratio == 0
        {
            return Err("all dimensions and ratios must be positive".into());
        }
        if self.window % 2 == 0 {
            return Err(format!("window {} must be odd", self.window));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if self.input_views.none_enabled() {
            return Err("at least one input view must be enabled".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err("learning rate must be positive".into());
        }
        Ok(())
    }

    /// Canonical `key=value` dump. Parsing it back yields an equal config.
    pub fn to_key_values(&self) -> String {
        let mut map = BTreeMap::new();
        if let Some(p) = &self.news_path {
            map.insert("news", p.clone());
        }
        if let Some(p) = &self.behaviors_path {
            map.insert("behaviors", p.clone());
        }
        if let Some(p) = &self.embeddings_path {
            map.insert("embeddings", p.clone());
        }
        if let Some(p) = &self.eval_behaviors_path {
            map.insert("eval_behaviors", p.clone());
        }
        map.insert("embedding_dim", self.embedding_dim.to_string());
        map.insert("cnn_filters", self.cnn_filters.to_string());
        map.insert("window", self.window.to_string());
        map.insert("category_dim", self.category_dim.to_string());
        map.insert("attention_hidden", self.attention_hidden.to_string());
        map.insert("aspect_count", self.aspect_count.to_string());
        map.insert("title_len", self.title_len.to_string());
        map.insert("abstract_len", self.abstract_len.to_string());
        map.insert("history_cap", self.history_cap.to_string());
        map.insert("min_count", self.min_count.to_string());
        map.insert("negative_ratio", self.negative_ratio.to_string());
        map.insert("aspect_negative_ratio", self.aspect_negative_ratio.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("dropout", format!("{:?}", self.dropout));
        map.insert("ortho_weight", format!("{:?}", self.ortho_weight));
        map.insert("learning_rate", format!("{:?}", self.learning_rate));
        map.insert("grad_clip", format!("{:?}", self.grad_clip));
        map.insert("epochs", self.epochs.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("views", self.input_views.to_string());
        map.insert("aspects", self.aspects_enabled.to_string());
        map.insert("deterministic", self.deterministic.to_string());
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Fingerprint of everything that affects preprocessing output.
    pub fn preprocess_hash(&self) -> u64 {
        let relevant = format!(
            "news={:?};behaviors={:?};embeddings={:?};dim={};title_len={};abstract_len={};min_count={}",
            self.news_path,
            self.behaviors_path,
            self.embeddings_path,
            self.embedding_dim,
            self.title_len,
            self.abstract_len,
            self.min_count
        );
        fnv1a64(relevant.as_bytes())
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.to_key_values().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = Config::default();
        assert_eq!(c.embedding_dim, 300);
        assert_eq!(c.cnn_filters, 400);
        assert_eq!(c.window, 5);
        assert_eq!(c.negative_ratio, 6);
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.dropout, 0.2);
        assert_eq!(c.aspect_count, 40);
    }

    #[test]
    fn dump_then_parse_round_trips() {
        let mut c = Config::default();
        c.news_path = Some("/data/news.tsv".into());
        c.seed = 123;
        c.input_views = InputViews { title: true, abstract_text: false, category: true };
        c.dropout = 0.35;
        let parsed = Config::from_str_contents(&c.to_key_values()).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn unknown_key_and_bad_value_rejected() {
        assert!(matches!(
            Config::from_str_contents("bogus=1"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            Config::from_str_contents("window=abc"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            Config::from_str_contents("window=4"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let c = Config::from_str_contents("# comment\n\nseed=7\n").unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn views_parse_and_display() {
        let v = InputViews::parse("title,category").unwrap();
        assert!(v.title && v.category && !v.abstract_text);
        assert_eq!(v.to_string(), "title,category");
        assert!(InputViews::parse("").is_err());
        assert!(InputViews::parse("nope").is_err());
    }
}

//! Flat `key = value` experiment configs.
//!
//! `#` starts a comment; blank lines are ignored; later assignments win.
//! Unknown keys are rejected by name.

use crate::data::{DatasetKind, DatasetSpec, Regime};
use crate::schedule::{ScheduleMode, SchedulePreset};
use crate::trainer::{default_excluded, ScheduleSpec, TrainConfig, FAST_EVAL_SAMPLES};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("bad value `{value}` for `{key}`: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Every accepted key, in the order the resolved config is written.
pub const KEYS: &[&str] = &[
    "preset",
    "regime",
    "dataset",
    "n_samples",
    "noise",
    "seed",
    "data_seed",
    "iterations",
    "batch_size",
    "latent_dim",
    "g_hidden",
    "d_base",
    "slope",
    "lr_g",
    "lr_d",
    "beta1",
    "beta2",
    "eps",
    "mode",
    "coeff_start",
    "coeff_end",
    "update_interval",
    "total_steps",
    "excluded",
    "eval_every",
    "eval_samples",
    "g_sees_mask",
    "out",
    "fast",
];

pub const FAST_ITERATIONS: u64 = 500;

/// Parses config text into ordered `(key, value)` pairs, rejecting unknown keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Malformed {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Malformed {
                line: i + 1,
                text: raw.to_string(),
            });
        }
        check_key(key)?;
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(ConfigError::UnknownKey { key: key.to_string() })
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value == "none" || value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            msg: "expected true or false".into(),
        }),
    }
}

fn join(list: impl IntoIterator<Item = usize>) -> String {
    let v: Vec<String> = list.into_iter().map(|x| x.to_string()).collect();
    if v.is_empty() {
        "none".into()
    } else {
        v.join(",")
    }
}

/// A training config plus the run's naming and output settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub preset: SchedulePreset,
    pub regime: Regime,
    pub out_dir: PathBuf,
    pub fast: bool,
}

impl ExperimentConfig {
    /// Defaults for `preset` x `regime`, before any explicit key.
    pub fn preset(preset: SchedulePreset, regime: Regime, seed: u64, fast: bool) -> Self {
        let mut train = TrainConfig::new(regime.spec(seed), preset, seed);
        if fast {
            train.iterations = FAST_ITERATIONS;
            train.eval_every = FAST_ITERATIONS;
            train.eval_samples = FAST_EVAL_SAMPLES;
        }
        Self {
            train,
            preset,
            regime,
            out_dir: PathBuf::from("out"),
            fast,
        }
    }

    /// Resolves pairs in two passes: structural keys (preset, regime,
    /// dataset, seed, fast) pick the defaults, then every key is applied in
    /// order.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        for (k, _) in pairs {
            check_key(k)?;
        }
        let preset: SchedulePreset = last("preset").map_or(Ok(SchedulePreset::FixedFull), |v| parse("preset", v))?;
        let regime: Regime = last("regime").map_or(Ok(Regime::LimitedTiny), |v| parse("regime", v))?;
        let seed: u64 = last("seed").map_or(Ok(0), |v| parse("seed", v))?;
        let fast = last("fast").map_or(Ok(false), |v| parse_bool("fast", v))?;
        let mut cfg = Self::preset(preset, regime, seed, fast);
        if let Some(v) = last("dataset") {
            let kind: DatasetKind = parse("dataset", v)?;
            if kind != cfg.train.dataset.kind {
                let spec = DatasetSpec {
                    kind,
                    ..cfg.train.dataset
                };
                let mut fresh = TrainConfig::new(spec, preset, seed);
                fresh.iterations = cfg.train.iterations;
                fresh.eval_every = cfg.train.eval_every;
                fresh.eval_samples = cfg.train.eval_samples;
                cfg.train = fresh;
            }
        }
        for (k, v) in pairs {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "preset" | "regime" | "dataset" | "fast" => {}
            "seed" => t.seed = parse(key, v)?,
            "n_samples" => t.dataset.n_samples = parse(key, v)?,
            "noise" => t.dataset.noise = parse(key, v)?,
            "data_seed" => t.dataset.seed = parse(key, v)?,
            "iterations" => t.iterations = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "latent_dim" => t.latent_dim = parse(key, v)?,
            "g_hidden" => t.g_hidden = parse_list(key, v)?,
            "d_base" => t.d_base = parse_list(key, v)?,
            "slope" => t.slope = parse(key, v)?,
            "lr_g" => t.adam_g.lr = parse(key, v)?,
            "lr_d" => t.adam_d.lr = parse(key, v)?,
            "beta1" => {
                let b = parse(key, v)?;
                t.adam_g.beta1 = b;
                t.adam_d.beta1 = b;
            }
            "beta2" => {
                let b = parse(key, v)?;
                t.adam_g.beta2 = b;
                t.adam_d.beta2 = b;
            }
            "eps" => {
                let e = parse(key, v)?;
                t.adam_g.eps = e;
                t.adam_d.eps = e;
            }
            "mode" => t.schedule.mode = parse::<ScheduleMode>(key, v)?,
            "coeff_start" => t.schedule.coeff_start = parse(key, v)?,
            "coeff_end" => t.schedule.coeff_end = parse(key, v)?,
            "update_interval" => t.schedule.update_interval = parse(key, v)?,
            "total_steps" => {
                t.schedule.total_steps = if v == "auto" { None } else { Some(parse(key, v)?) };
            }
            "excluded" => t.schedule.excluded = parse_list(key, v)?.into_iter().collect(),
            "eval_every" => t.eval_every = parse(key, v)?,
            "eval_samples" => t.eval_samples = parse(key, v)?,
            "g_sees_mask" => t.g_sees_mask = parse_bool(key, v)?,
            "out" => self.out_dir = PathBuf::from(v),
            other => return Err(ConfigError::UnknownKey { key: other.to_string() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.schedule.mode != ScheduleMode::Decrease && !self.train.schedule.excluded.is_empty() {
            return Err(ConfigError::Invalid("`excluded` only applies to decrease mode".into()));
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Reads `path` (if any), then applies `overrides`. Returns the config
    /// and the file's verbatim text.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<(Self, Option<String>)> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?),
            None => None,
        };
        let mut pairs = match &text {
            Some(t) => parse_pairs(t)?,
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        Ok((Self::from_pairs(&pairs)?, text))
    }

    /// `<out>/<preset>-<regime>-seed<N>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.run_name())
    }

    pub fn run_name(&self) -> String {
        format!("{}-{}-seed{}", self.preset, self.regime, self.train.seed)
    }

    /// Every key, fully resolved; parses back to the same config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &t.schedule;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("preset", self.preset.to_string());
        kv("regime", self.regime.to_string());
        kv("dataset", t.dataset.kind.to_string());
        kv("n_samples", t.dataset.n_samples.to_string());
        kv("noise", t.dataset.noise.to_string());
        kv("seed", t.seed.to_string());
        kv("data_seed", t.dataset.seed.to_string());
        kv("iterations", t.iterations.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("latent_dim", t.latent_dim.to_string());
        kv("g_hidden", join(t.g_hidden.iter().copied()));
        kv("d_base", join(t.d_base.iter().copied()));
        kv("slope", t.slope.to_string());
        kv("lr_g", t.adam_g.lr.to_string());
        kv("lr_d", t.adam_d.lr.to_string());
        kv("beta1", t.adam_d.beta1.to_string());
        kv("beta2", t.adam_d.beta2.to_string());
        kv("eps", t.adam_d.eps.to_string());
        kv("mode", s.mode.to_string());
        kv("coeff_start", s.coeff_start.to_string());
        kv("coeff_end", s.coeff_end.to_string());
        kv("update_interval", s.update_interval.to_string());
        kv("total_steps", s.total_steps.map_or("auto".into(), |v| v.to_string()));
        kv("excluded", join(s.excluded.iter().copied()));
        kv("eval_every", t.eval_every.to_string());
        kv("eval_samples", t.eval_samples.to_string());
        kv("g_sees_mask", t.g_sees_mask.to_string());
        kv("out", self.out_dir.display().to_string());
        kv("fast", self.fast.to_string());
        out
    }
}

/// Excluded set a preset gets by default for `kind`.
pub fn preset_excluded(preset: SchedulePreset, kind: DatasetKind) -> BTreeSet<usize> {
    ScheduleSpec::from_preset(preset, default_excluded(kind)).excluded
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let p = parse_pairs("# header\n\nseed = 3 # trailing\n preset=dynamic-decrease\n").unwrap();
        assert_eq!(p, vec![("seed".into(), "3".into()), ("preset".into(), "dynamic-decrease".into())]);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_pairs("seed = 1\nlearning_rate = 3\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(parse_pairs("seed 3"), Err(ConfigError::Malformed { line: 1, .. })));
    }

    #[test]
    fn preset_defaults() {
        let c = ExperimentConfig::from_pairs(&[("preset".into(), "dynamic-decrease".into())]).unwrap();
        assert_eq!(c.train.schedule.mode, ScheduleMode::Decrease);
        assert_eq!((c.train.schedule.coeff_start, c.train.schedule.coeff_end), (1.0, 0.5));
        assert_eq!(c.train.schedule.excluded, preset_excluded(SchedulePreset::DynamicDecrease, DatasetKind::Ring8));
        let c = ExperimentConfig::from_pairs(&[("preset".into(), "dynamic-increase".into())]).unwrap();
        assert!(c.train.schedule.excluded.is_empty());
    }

    #[test]
    fn resolved_text_round_trips() {
        let pairs = parse_pairs("preset = dynamic-increase\nregime = limited\nseed = 9\nlr_d = 0.0003\nfast = true\nupdate_interval = 7\n").unwrap();
        let c = ExperimentConfig::from_pairs(&pairs).unwrap();
        let again = ExperimentConfig::from_pairs(&parse_pairs(&c.to_text()).unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.run_name(), "dynamic-increase-limited-seed9");
        assert_eq!(c.train.iterations, FAST_ITERATIONS);
    }

    #[test]
    fn excluded_outside_decrease_is_rejected() {
        let pairs = parse_pairs("preset = fixed-full\nexcluded = 0\n").unwrap();
        assert!(matches!(ExperimentConfig::from_pairs(&pairs), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn image_dataset_switches_architecture() {
        let pairs = parse_pairs("dataset = sprites16\npreset = dynamic-decrease\n").unwrap();
        let c = ExperimentConfig::from_pairs(&pairs).unwrap();
        assert_eq!(c.train.d_base, vec![16, 32, 64, 128]);
        assert_eq!(c.train.schedule.excluded, [0, 1].into());
    }
}

//! Flat `key = value` run configuration.
//!
//! Every key has a default; unknown keys, duplicate keys and unparsable
//! values are rejected with their line number. `#` starts a comment.

use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::fusion::{AblationFlags, ArchToggles, StageConfig};
use crate::preprocess::PreprocessConfig;
use crate::tasks::{DiffusionSchedule, GenLayout, TaskError, TrainConfig};

pub const SEED_ENV: &str = "SDG_SEED";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalMode {
    /// Relevant = same category.
    #[default]
    Category,
    /// Relevant = the paired image only.
    Instance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    pub stage: StageConfig,
    pub train: TrainConfig,
    /// Fraction of the training cache held out (per class) to pick the
    /// best epoch; 0 keeps the lowest training loss instead.
    pub val_fraction: f64,
    pub eval_batch_size: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub gen_layout: GenLayout,
    pub gen_time_dim: usize,
    /// Restrict generator training to one label.
    pub gen_label: Option<u32>,
    pub allow_untrained: bool,
    pub ret_embeddings: Option<PathBuf>,
    pub ret_pairs: Option<PathBuf>,
    pub ret_k: usize,
    pub ret_mode: RetrievalMode,
    /// Labels held out from retrieval training (zero-shot split).
    pub ret_test_labels: Vec<u32>,
    /// Category names for ndjson parsing; empty = assign in order of
    /// first appearance.
    pub categories: Vec<String>,
    pub seed: u64,
    pub metrics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            stage: StageConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.1,
            eval_batch_size: 64,
            diffusion_steps: 1000,
            beta_start: DiffusionSchedule::BETA_START,
            beta_end: DiffusionSchedule::BETA_END,
            gen_layout: GenLayout::default(),
            gen_time_dim: 64,
            gen_label: None,
            allow_untrained: false,
            ret_embeddings: None,
            ret_pairs: None,
            ret_k: 200,
            ret_mode: RetrievalMode::Category,
            ret_test_labels: Vec::new(),
            categories: Vec::new(),
            seed: 0,
            metrics: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        message: format!("{v:?}: {e}"),
    })
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(T::to_string).unwrap_or_default()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// All keys with their current values, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.preprocess;
        let s = &self.stage;
        let t = &self.train;
        let a = &s.ablation;
        let kv: Vec<(&str, String)> = vec![
            ("resample_interval", p.resample_interval.to_string()),
            ("min_points_per_stroke", p.min_points_per_stroke.to_string()),
            ("min_stroke_length", p.min_stroke_length.to_string()),
            ("outlier_factor", p.outlier_factor.to_string()),
            ("preserve_point_frequency", p.preserve_point_frequency.to_string()),
            ("s_max", p.s_max.to_string()),
            ("p_max", p.p_max.to_string()),
            ("modules", s.toggles.to_string().replace(' ', "")),
            ("sparse_widths", join(&s.sparse_widths)),
            ("dense_widths", join(&s.dense_widths)),
            ("stroke_hidden", s.stroke_hidden.to_string()),
            ("k_sparse", s.k_sparse.to_string()),
            ("k_dense", s.k_dense.to_string()),
            ("d_stride", s.d_stride.to_string()),
            ("exclude_sgraph", a.exclude_sgraph.to_string()),
            ("disable_inter_stroke_edges", a.disable_inter_stroke_edges.to_string()),
            ("random_temporal_neighborhoods", a.random_temporal_neighborhoods.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.optim.lr.to_string()),
            ("beta1", t.optim.beta1.to_string()),
            ("beta2", t.optim.beta2.to_string()),
            ("adam_eps", t.optim.eps.to_string()),
            ("weight_decay", t.optim.weight_decay.to_string()),
            ("grad_clip", t.grad_clip.unwrap_or(0.0).to_string()),
            ("record_wall_time", t.record_wall_time.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("eval_batch_size", self.eval_batch_size.to_string()),
            ("diffusion_steps", self.diffusion_steps.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("gen_strokes", self.gen_layout.strokes.to_string()),
            ("gen_points", self.gen_layout.points.to_string()),
            ("gen_time_dim", self.gen_time_dim.to_string()),
            ("gen_label", opt(&self.gen_label)),
            ("allow_untrained", self.allow_untrained.to_string()),
            ("ret_embeddings", opt(&self.ret_embeddings.as_ref().map(|p| p.display().to_string()))),
            ("ret_pairs", opt(&self.ret_pairs.as_ref().map(|p| p.display().to_string()))),
            ("ret_k", self.ret_k.to_string()),
            (
                "ret_mode",
                match self.ret_mode {
                    RetrievalMode::Category => "category".into(),
                    RetrievalMode::Instance => "instance".into(),
                },
            ),
            ("ret_test_labels", join(&self.ret_test_labels)),
            ("categories", self.categories.join(",")),
            ("seed", self.seed.to_string()),
            ("metrics", opt(&self.metrics.as_ref().map(|p| p.display().to_string()))),
        ];
        kv.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let p = &mut self.preprocess;
        let s = &mut self.stage;
        let t = &mut self.train;
        match key {
            "resample_interval" => p.resample_interval = parse(key, v)?,
            "min_points_per_stroke" => p.min_points_per_stroke = parse(key, v)?,
            "min_stroke_length" => p.min_stroke_length = parse(key, v)?,
            "outlier_factor" => p.outlier_factor = parse(key, v)?,
            "preserve_point_frequency" => {
                p.preserve_point_frequency = parse(key, v)?;
                s.ablation.preserve_point_frequency = p.preserve_point_frequency;
            }
            "s_max" => p.s_max = parse(key, v)?,
            "p_max" => p.p_max = parse(key, v)?,
            "modules" => {
                s.toggles = v.parse::<ArchToggles>().map_err(|m| ConfigError::BadValue {
                    key: key.into(),
                    message: m,
                })?
            }
            "sparse_widths" => s.sparse_widths = list(key, v)?,
            "dense_widths" => s.dense_widths = list(key, v)?,
            "stroke_hidden" => s.stroke_hidden = parse(key, v)?,
            "k_sparse" => s.k_sparse = parse(key, v)?,
            "k_dense" => s.k_dense = parse(key, v)?,
            "d_stride" => s.d_stride = parse(key, v)?,
            "exclude_sgraph" => s.ablation.exclude_sgraph = parse(key, v)?,
            "disable_inter_stroke_edges" => s.ablation.disable_inter_stroke_edges = parse(key, v)?,
            "random_temporal_neighborhoods" => s.ablation.random_temporal_neighborhoods = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr" => t.optim.lr = parse(key, v)?,
            "beta1" => t.optim.beta1 = parse(key, v)?,
            "beta2" => t.optim.beta2 = parse(key, v)?,
            "adam_eps" => t.optim.eps = parse(key, v)?,
            "weight_decay" => t.optim.weight_decay = parse(key, v)?,
            "grad_clip" => {
                let c: f64 = parse(key, v)?;
                t.grad_clip = (c > 0.0).then_some(c);
            }
            "record_wall_time" => t.record_wall_time = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "eval_batch_size" => self.eval_batch_size = parse(key, v)?,
            "diffusion_steps" => self.diffusion_steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "gen_strokes" => self.gen_layout.strokes = parse(key, v)?,
            "gen_points" => self.gen_layout.points = parse(key, v)?,
            "gen_time_dim" => self.gen_time_dim = parse(key, v)?,
            "gen_label" => self.gen_label = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "allow_untrained" => self.allow_untrained = parse(key, v)?,
            "ret_embeddings" => self.ret_embeddings = path(v),
            "ret_pairs" => self.ret_pairs = path(v),
            "ret_k" => self.ret_k = parse(key, v)?,
            "ret_mode" => {
                self.ret_mode = match v {
                    "category" => RetrievalMode::Category,
                    "instance" => RetrievalMode::Instance,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            message: format!("{v:?}: expected category or instance"),
                        })
                    }
                }
            }
            "ret_test_labels" => self.ret_test_labels = list(key, v)?,
            "categories" => self.categories = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            "seed" => self.seed = parse(key, v)?,
            "metrics" => self.metrics = path(v),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected key = value, got {body:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_owned()) {
                return Err(ConfigError::DuplicateKey { line, key: k.into() });
            }
            cfg.set(k, v).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                ConfigError::BadValue { key, message } => ConfigError::Syntax {
                    line,
                    message: format!("`{key}`: {message}"),
                },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies the `SDG_SEED` override, if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    /// Stage config for the generator (adds the time embedding width).
    pub fn gen_stage(&self) -> StageConfig {
        StageConfig {
            time_dim: Some(self.gen_time_dim),
            ..self.stage.clone()
        }
    }

    /// Training config with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule, TaskError> {
        DiffusionSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn ablation(&self) -> AblationFlags {
        self.stage.ablation
    }

    /// Checks every field without touching any data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.preprocess.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.stage.validate().map_err(ConfigError::Invalid)?;
        self.gen_stage().validate().map_err(ConfigError::Invalid)?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.schedule().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.stage.ablation.preserve_point_frequency != self.preprocess.preserve_point_frequency {
            return bad("preserve_point_frequency disagrees between preprocessing and model flags".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if self.eval_batch_size == 0 || self.ret_k == 0 {
            return bad("eval_batch_size and ret_k must be positive".into());
        }
        if self.gen_layout.strokes == 0 || self.gen_layout.points < 2 {
            return bad("generation layout needs ≥ 1 stroke of ≥ 2 points".into());
        }
        Ok(())
    }

    /// Scaled-down settings for quick runs on a desktop CPU.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.stage.sparse_widths = vec![32, 48, 64];
        c.stage.dense_widths = vec![16, 32, 64];
        c.stage.stroke_hidden = 16;
        c.train.batch_size = 16;
        c.diffusion_steps = 100;
        c.preprocess.min_points_per_stroke = 2;
        c
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let desk = RunConfig::desk();
        assert_eq!(RunConfig::parse(&desk.to_text()).unwrap(), desk);
        cfg.validate().unwrap();
        desk.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_duplicate() {
        assert_eq!(
            RunConfig::parse("seed = 1\n\nbogus = 2").unwrap_err(),
            ConfigError::UnknownKey {
                line: 3,
                key: "bogus".into()
            }
        );
        assert!(matches!(RunConfig::parse("seed=1\nseed=2"), Err(ConfigError::DuplicateKey { line: 2, .. })));
        assert!(matches!(RunConfig::parse("epochs = many"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("just words"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn values_and_comments() {
        let c = RunConfig::parse("# desk run\nmodules = SG + DG  # no fusion\nsparse_widths = 8, 16\ndense_widths=8,16\ngrad_clip = 0\n").unwrap();
        assert_eq!(c.stage.toggles.to_string(), "SG + DG");
        assert_eq!(c.stage.sparse_widths, vec![8, 16]);
        assert_eq!(c.train.grad_clip, None);
        c.validate().unwrap();
        let c = RunConfig::parse("preserve_point_frequency = true").unwrap();
        assert!(c.stage.ablation.preserve_point_frequency);
        c.validate().unwrap();
    }
}

//! Experiment configuration as flat `key = value` text.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineKind, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::learning::{OptimizerConfig, DEFAULT_K};
use crate::model::ModelOrder;
use crate::programming::HintLevel;
use crate::protocols::{CurriculumConfig, NoiseConfig, NoiseMode, NoiseSchedule};

pub const OUT_ENV: &str = "NSPDA_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Nspda(ModelOrder),
    Baseline(BaselineKind),
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Nspda(o) => write!(f, "nspda-{o}"),
            ModelKind::Baseline(k) => write!(f, "{k}"),
        }
    }
}

/// Which differentiable surrogate the NSPDA trains through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainCell {
    /// Quantized forward, straight-through state and read slopes.
    Ste,
    /// Smooth forward with read slopes.
    SteSmooth,
    /// Smooth forward, reads exogenous.
    Smooth,
}

impl fmt::Display for TrainCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainCell::Ste => "ste",
            TrainCell::SteSmooth => "ste-smooth",
            TrainCell::Smooth => "smooth",
        })
    }
}

impl FromStr for TrainCell {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ste" => Ok(TrainCell::Ste),
            "ste-smooth" => Ok(TrainCell::SteSmooth),
            "smooth" => Ok(TrainCell::Smooth),
            _ => Err(Error::Input(format!("unknown training cell {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub positives: usize,
    pub negatives: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Train and validation fractions; test takes the rest.
    pub train_frac: f64,
    pub valid_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { positives: 1987, negatives: 2021, len_min: 1, len_max: 21, train_frac: 0.8, valid_frac: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub train: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grammar: Grammar,
    pub order: ModelOrder,
    /// A stackless comparison model instead of the NSPDA.
    pub baseline: Option<BaselineKind>,
    /// Fixed state count; `None` draws it from the sizing rule.
    pub state_count: Option<usize>,
    pub hidden: usize,
    pub hints: HintLevel,
    pub cell: TrainCell,
    pub optimizer: OptimizerConfig,
    pub k: usize,
    pub curriculum: CurriculumConfig,
    pub noise: NoiseConfig,
    pub data: DataConfig,
    pub eval_lengths: Vec<usize>,
    pub eval_count: usize,
    pub seeds: Seeds,
    pub replicates: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grammar: Grammar::Anbn,
            order: ModelOrder::Third,
            baseline: None,
            state_count: None,
            hidden: DEFAULT_HIDDEN,
            hints: HintLevel::Hint2,
            cell: TrainCell::Ste,
            optimizer: OptimizerConfig::default(),
            k: DEFAULT_K,
            curriculum: CurriculumConfig::default(),
            noise: NoiseConfig::default(),
            data: DataConfig::default(),
            eval_lengths: vec![60],
            eval_count: 10_000,
            seeds: Seeds { data: 7, model: 1, train: 2 },
            replicates: 5,
            out: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Input(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Input(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

/// `lo:hi` or a single length.
pub fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    match value.split_once(':') {
        Some((a, b)) => Ok((parse(key, a.trim())?, parse(key, b.trim())?)),
        None => {
            let n = parse(key, value)?;
            Ok((n, n))
        }
    }
}

impl ExperimentConfig {
    /// Every key [`set`](Self::set) understands.
    pub const KEYS: &'static [&'static str] = &[
        "grammar",
        "model.kind",
        "model.order",
        "model.j",
        "model.hidden",
        "model.hints",
        "model.cell",
        "opt.algo",
        "opt.window",
        "opt.clip",
        "opt.lr0",
        "opt.k",
        "opt.rtrl_cap",
        "curriculum.mode",
        "curriculum.ntr",
        "curriculum.stage1_cap",
        "curriculum.stage2_cap",
        "curriculum.global_cap",
        "noise.enabled",
        "noise.np",
        "noise.beta",
        "noise.mode",
        "noise.schedule",
        "data.pos",
        "data.neg",
        "data.len",
        "data.train_frac",
        "data.valid_frac",
        "eval.lengths",
        "eval.count",
        "seed.data",
        "seed.model",
        "seed.train",
        "replicates",
        "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "grammar" => self.grammar = v.parse()?,
            "model.kind" => self.baseline = if v == "nspda" { None } else { Some(v.parse()?) },
            "model.order" => self.order = v.parse()?,
            "model.j" => self.state_count = if v == "auto" { None } else { Some(parse(key, v)?) },
            "model.hidden" => self.hidden = parse(key, v)?,
            "model.hints" => self.hints = v.parse()?,
            "model.cell" => self.cell = v.parse()?,
            "opt.algo" => self.optimizer.algorithm = v.parse()?,
            "opt.window" => self.optimizer.truncation_window = parse(key, v)?,
            "opt.clip" => self.optimizer.clip_magnitude = parse(key, v)?,
            "opt.lr0" => self.optimizer.lr0 = parse(key, v)?,
            "opt.k" => self.k = parse(key, v)?,
            "opt.rtrl_cap" => self.optimizer.rtrl_cap = parse(key, v)?,
            "curriculum.mode" => self.curriculum.mode = v.parse()?,
            "curriculum.ntr" => self.curriculum.ntr = parse(key, v)?,
            "curriculum.stage1_cap" => self.curriculum.stage1_cap = parse(key, v)?,
            "curriculum.stage2_cap" => self.curriculum.stage2_cap = parse(key, v)?,
            "curriculum.global_cap" => self.curriculum.global_cap = parse(key, v)?,
            "noise.enabled" => self.noise.enabled = parse_bool(key, v)?,
            "noise.np" => self.noise.np = parse(key, v)?,
            "noise.beta" => self.noise.beta = parse(key, v)?,
            "noise.mode" => {
                self.noise.mode = match v {
                    "multiplicative" => NoiseMode::Multiplicative,
                    "replace" => NoiseMode::Replace,
                    _ => return Err(Error::Input(format!("{key}: unknown noise mode {v:?}"))),
                }
            }
            "noise.schedule" => {
                self.noise.schedule = match v {
                    "per_sample" => NoiseSchedule::PerSample,
                    "per_epoch" => NoiseSchedule::PerEpoch,
                    _ => return Err(Error::Input(format!("{key}: unknown noise schedule {v:?}"))),
                }
            }
            "data.pos" => self.data.positives = parse(key, v)?,
            "data.neg" => self.data.negatives = parse(key, v)?,
            "data.len" => (self.data.len_min, self.data.len_max) = parse_range(key, v)?,
            "data.train_frac" => self.data.train_frac = parse(key, v)?,
            "data.valid_frac" => self.data.valid_frac = parse(key, v)?,
            "eval.lengths" => self.eval_lengths = parse_list(key, v)?,
            "eval.count" => self.eval_count = parse(key, v)?,
            "seed.data" => self.seeds.data = parse(key, v)?,
            "seed.model" => self.seeds.model = parse(key, v)?,
            "seed.train" => self.seeds.train = parse(key, v)?,
            "replicates" => self.replicates = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::Input(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn model(&self) -> ModelKind {
        self.baseline.map_or(ModelKind::Nspda(self.order), ModelKind::Baseline)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Input(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Replaces the output directory with `$NSPDA_OUT` when set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_ENV).filter(|d| !d.is_empty()) {
            self.out = PathBuf::from(dir);
        }
    }

    /// Canonical text form; `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let noise_mode = match self.noise.mode {
            NoiseMode::Multiplicative => "multiplicative",
            NoiseMode::Replace => "replace",
        };
        let schedule = match self.noise.schedule {
            NoiseSchedule::PerSample => "per_sample",
            NoiseSchedule::PerEpoch => "per_epoch",
        };
        let lengths: Vec<String> = self.eval_lengths.iter().map(usize::to_string).collect();
        let rows: [(&str, String); 35] = [
            ("grammar", self.grammar.to_string()),
            ("model.kind", self.baseline.map_or("nspda".into(), |k| k.to_string())),
            ("model.order", self.order.to_string()),
            ("model.j", self.state_count.map_or("auto".into(), |j| j.to_string())),
            ("model.hidden", self.hidden.to_string()),
            ("model.hints", self.hints.to_string()),
            ("model.cell", self.cell.to_string()),
            ("opt.algo", self.optimizer.algorithm.to_string()),
            ("opt.window", self.optimizer.truncation_window.to_string()),
            ("opt.clip", format!("{:?}", self.optimizer.clip_magnitude)),
            ("opt.lr0", format!("{:?}", self.optimizer.lr0)),
            ("opt.k", self.k.to_string()),
            ("opt.rtrl_cap", self.optimizer.rtrl_cap.to_string()),
            ("curriculum.mode", self.curriculum.mode.to_string()),
            ("curriculum.ntr", self.curriculum.ntr.to_string()),
            ("curriculum.stage1_cap", self.curriculum.stage1_cap.to_string()),
            ("curriculum.stage2_cap", self.curriculum.stage2_cap.to_string()),
            ("curriculum.global_cap", self.curriculum.global_cap.to_string()),
            ("noise.enabled", self.noise.enabled.to_string()),
            ("noise.np", format!("{:?}", self.noise.np)),
            ("noise.beta", format!("{:?}", self.noise.beta)),
            ("noise.mode", noise_mode.into()),
            ("noise.schedule", schedule.into()),
            ("data.pos", self.data.positives.to_string()),
            ("data.neg", self.data.negatives.to_string()),
            ("data.len", format!("{}:{}", self.data.len_min, self.data.len_max)),
            ("data.train_frac", format!("{:?}", self.data.train_frac)),
            ("data.valid_frac", format!("{:?}", self.data.valid_frac)),
            ("eval.lengths", lengths.join(",")),
            ("eval.count", self.eval_count.to_string()),
            ("seed.data", self.seeds.data.to_string()),
            ("seed.model", self.seeds.model.to_string()),
            ("seed.train", self.seeds.train.to_string()),
            ("replicates", self.replicates.to_string()),
            ("out", self.out.display().to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.noise.validate()?;
        if self.k == 0 {
            return Err(Error::Input("opt.k must be >= 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Input("replicates must be >= 1".into()));
        }
        if self.data.len_min == 0 || self.data.len_min > self.data.len_max {
            return Err(Error::Input(format!("data.len {}:{} is not a valid range", self.data.len_min, self.data.len_max)));
        }
        let (t, v) = (self.data.train_frac, self.data.valid_frac);
        if !(t > 0.0 && v >= 0.0 && t + v <= 1.0) {
            return Err(Error::Input(format!("split fractions {t}/{v} must be positive and sum to at most 1")));
        }
        if self.eval_lengths.contains(&0) {
            return Err(Error::Input("evaluation lengths must be >= 1".into()));
        }
        if self.eval_count < 2 {
            return Err(Error::Input("eval.count must be >= 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("grammar = dyck2\nmodel.order = second # comment\nnoise.np = 0.1\ndata.len = 2:9\neval.lengths = 60,480\n").unwrap();
        assert_eq!(cfg.grammar, Grammar::Dyck2);
        assert_eq!(cfg.model(), ModelKind::Nspda(ModelOrder::Second));
        assert_eq!((cfg.data.len_min, cfg.data.len_max), (2, 9));
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);

        let mut b = ExperimentConfig::default();
        b.set("model.kind", "rnn2").unwrap();
        assert_eq!(ExperimentConfig::from_text(&b.to_text()).unwrap(), b);
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let text = ExperimentConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        for k in ExperimentConfig::KEYS {
            assert!(keys.contains(k), "{k} missing from canonical text");
        }
        assert_eq!(keys.len(), ExperimentConfig::KEYS.len());
    }

    #[test]
    fn bad_lines_are_rejected() {
        assert!(ExperimentConfig::from_text("grammar anbn").is_err());
        assert!(ExperimentConfig::from_text("nope = 1").is_err());
        assert!(ExperimentConfig::from_text("grammar = klingon").is_err());
        assert!(ExperimentConfig::from_text("noise.enabled = maybe").is_err());
    }
}

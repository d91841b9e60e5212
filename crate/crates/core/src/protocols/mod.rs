//! Curriculum training: single-pass epochs, two-stage incremental learning,
//! the single-stage incremental and plain baselines, and per-epoch metrics.

mod noise;

pub use noise::{apply_adaptive_noise, create_partitions, NoiseConfig, NoiseEvent, NoiseMode, NoiseSchedule, NoiseTarget, NoiseTargets, NP_RANGE};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineParams;
use crate::error::{Error, Result};
use crate::grammar::{curriculum_slice, Dataset, LabeledString};
use crate::learning::{sample_gradient, sgd_step, LrMode, OptimizerConfig, RecurrentCell, RefinementSchedule, StraightThrough, DEFAULT_K};
use crate::model::{final_prediction, ModelParams};
use crate::par::derive_seed;
use crate::stack::ReadNoise;

/// A model the protocols can train and score.
pub trait Trainable: RecurrentCell + NoiseTargets + Clone + Send {
    /// ŷ after the last token in evaluation mode.
    fn eval_prediction(&self, tokens: &[usize], rng: &mut dyn RngCore) -> Result<f64>;
}

impl Trainable for ModelParams {
    fn eval_prediction(&self, tokens: &[usize], mut rng: &mut dyn RngCore) -> Result<f64> {
        final_prediction(self, tokens, ReadNoise::Random, &mut rng)
    }
}

impl Trainable for StraightThrough {
    fn eval_prediction(&self, tokens: &[usize], rng: &mut dyn RngCore) -> Result<f64> {
        self.params.eval_prediction(tokens, rng)
    }
}

impl Trainable for BaselineParams {
    fn eval_prediction(&self, tokens: &[usize], _rng: &mut dyn RngCore) -> Result<f64> {
        self.final_prediction(tokens)
    }
}

/// Fraction of samples classified correctly (ŷ > 0.5 ⇔ label); 1 for an empty set.
pub fn accuracy<M: Trainable>(model: &M, samples: &[LabeledString], rng: &mut dyn RngCore) -> Result<f64> {
    if samples.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if (model.eval_prediction(&s.tokens, rng)? > 0.5) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Two-stage incremental learning.
    TwoStage,
    /// Stage 2 alone.
    Incremental,
    /// Full-data passes from the first epoch.
    Standard,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::TwoStage => "2il",
            TrainMode::Incremental => "il",
            TrainMode::Standard => "standard",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2il" | "two_stage" => Ok(TrainMode::TwoStage),
            "il" | "incremental" => Ok(TrainMode::Incremental),
            "standard" | "plain" => Ok(TrainMode::Standard),
            _ => Err(Error::NotFound(format!("training mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub mode: TrainMode,
    pub ntr: usize,
    pub stage1_cap: usize,
    pub stage2_cap: usize,
    pub global_cap: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { mode: TrainMode::TwoStage, ntr: 14, stage1_cap: 200, stage2_cap: 350, global_cap: 500 }
    }
}

/// Everything a training run needs besides model and data.
#[derive(Clone)]
pub struct TrainSetup<'a> {
    pub optimizer: OptimizerConfig,
    pub curriculum: CurriculumConfig,
    pub noise: NoiseConfig,
    /// Refinement repeats K for unhinted steps.
    pub k: usize,
    /// Hint vector per sample; `None` means no hints.
    pub hinter: Option<&'a (dyn Fn(&[usize]) -> Vec<bool> + Sync)>,
}

impl TrainSetup<'_> {
    pub fn new(optimizer: OptimizerConfig, curriculum: CurriculumConfig, noise: NoiseConfig) -> Self {
        Self { optimizer, curriculum, noise, k: DEFAULT_K, hinter: None }
    }

    fn schedule(&self, tokens: &[usize]) -> RefinementSchedule {
        match self.hinter {
            Some(h) => RefinementSchedule::new(h(tokens), self.k).expect("k validated"),
            None => RefinementSchedule::unhinted(tokens.len(), self.k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub phase: String,
    pub slice_max_len: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub characters: u64,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: TrainMode,
    pub epochs: Vec<EpochRecord>,
    pub converged: bool,
    /// Epoch count at final convergence.
    pub epochs_to_convergence: Option<usize>,
    pub characters_to_convergence: Option<u64>,
    pub total_epochs: usize,
    pub total_characters: u64,
}

impl RunMetrics {
    /// Characters to convergence, +∞ when the run never converged.
    pub fn characters_or_inf(&self) -> f64 {
        self.characters_to_convergence.map_or(f64::INFINITY, |c| c as f64)
    }

    pub fn epochs_or_inf(&self) -> f64 {
        self.epochs_to_convergence.map_or(f64::INFINITY, |e| e as f64)
    }
}

/// Mutable counters threaded through the stages of one run.
struct RunState {
    epoch: usize,
    characters: u64,
    started: Instant,
    records: Vec<EpochRecord>,
    train_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    eval_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOutcome {
    pub epochs: usize,
    pub characters: u64,
    pub converged: bool,
}

fn is_converged<M: Trainable>(model: &M, slice: &[LabeledString], validation: &[LabeledString], max_len: usize, state: &RunState) -> Result<(bool, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.eval_seed, state.epoch as u64));
    let train = accuracy(model, slice, &mut rng)?;
    let val_slice: Vec<LabeledString> = validation.iter().filter(|s| s.tokens.len() <= max_len).cloned().collect();
    let val = if val_slice.is_empty() { train } else { accuracy(model, &val_slice, &mut rng)? };
    Ok((val >= 1.0, train, val))
}

/// One pass over `samples`; returns (characters, mean loss).
fn run_epoch<M: Trainable>(
    model: &mut M,
    samples: &[LabeledString],
    setup: &TrainSetup<'_>,
    lr_mode: LrMode,
    noise: bool,
    state: &mut RunState,
) -> Result<(u64, f64)> {
    if noise && setup.noise.schedule == NoiseSchedule::PerEpoch {
        apply_adaptive_noise(model, &setup.noise, &mut state.noise_rng);
    }
    let mut chars = 0u64;
    let mut loss = 0.0;
    for s in samples {
        if noise && setup.noise.schedule == NoiseSchedule::PerSample {
            apply_adaptive_noise(model, &setup.noise, &mut state.noise_rng);
        }
        let schedule = setup.schedule(&s.tokens);
        let g = sample_gradient(model, &s.tokens, s.target(), &schedule, &setup.optimizer, &mut state.train_rng)?;
        sgd_step(model, &g.grad, setup.optimizer.lr0, lr_mode, setup.optimizer.clip_magnitude, state.epoch, &mut state.train_rng);
        chars += s.tokens.len() as u64;
        loss += g.loss;
    }
    Ok((chars, loss / samples.len().max(1) as f64))
}

#[allow(clippy::too_many_arguments)]
fn record<M: Trainable>(
    model: &M,
    slice: &[LabeledString],
    validation: &[LabeledString],
    max_len: usize,
    stage: u8,
    phase: &str,
    loss: f64,
    state: &mut RunState,
) -> Result<bool> {
    let (converged, train, val) = is_converged(model, slice, validation, max_len, state)?;
    state.records.push(EpochRecord {
        epoch: state.epoch,
        stage,
        phase: phase.to_owned(),
        slice_max_len: max_len,
        train_accuracy: train,
        validation_accuracy: val,
        characters: state.characters,
        mean_loss: loss,
        wall_seconds: state.started.elapsed().as_secs_f64(),
    });
    Ok(converged)
}

/// Shuffled single-pass epochs on `slice` until validation accuracy (restricted
/// to lengths ≤ `max_len`) reaches 100% or `cap` epochs ran.
#[allow(clippy::too_many_arguments)]
fn train_until_converged<M: Trainable>(
    model: &mut M,
    slice: &[LabeledString],
    validation: &[LabeledString],
    max_len: usize,
    cap: usize,
    setup: &TrainSetup<'_>,
    lr_mode: LrMode,
    noise: bool,
    stage: u8,
    state: &mut RunState,
) -> Result<StageOutcome> {
    let chars0 = state.characters;
    let mut epochs = 0;
    let mut order: Vec<LabeledString> = slice.to_vec();
    let (mut converged, _, _) = is_converged(model, slice, validation, max_len, state)?;
    while !converged && epochs < cap && state.epoch < setup.curriculum.global_cap {
        order.shuffle(&mut state.train_rng);
        let (c, loss) = run_epoch(model, &order, setup, lr_mode, noise, state)?;
        state.characters += c;
        state.epoch += 1;
        epochs += 1;
        converged = record(model, slice, validation, max_len, stage, "random", loss, state)?;
    }
    Ok(StageOutcome { epochs, characters: state.characters - chars0, converged })
}

/// Single-pass epochs over `data` (in order) until validation convergence or
/// `epochs_cap`. Characters count every presented training token once.
pub fn train_stage<M: Trainable>(
    model: &mut M,
    data: &[LabeledString],
    validation: &[LabeledString],
    epochs_cap: usize,
    lr_mode: LrMode,
    setup: &TrainSetup<'_>,
) -> Result<StageOutcome> {
    if data.is_empty() {
        return Err(Error::Input("empty training slice".into()));
    }
    let mut state = RunState::new(setup);
    let max_len = data.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
    let chars0 = state.characters;
    let mut epochs = 0;
    let (mut converged, _, _) = is_converged(model, data, validation, max_len, &state)?;
    while !converged && epochs < epochs_cap {
        let (c, loss) = run_epoch(model, data, setup, lr_mode, setup.noise.enabled, &mut state)?;
        state.characters += c;
        state.epoch += 1;
        epochs += 1;
        converged = record(model, data, validation, max_len, 0, "stage", loss, &mut state)?;
    }
    Ok(StageOutcome { epochs, characters: state.characters - chars0, converged })
}

impl RunState {
    fn new(setup: &TrainSetup<'_>) -> Self {
        Self {
            epoch: 0,
            characters: 0,
            started: Instant::now(),
            records: Vec::new(),
            train_rng: ChaCha8Rng::seed_from_u64(setup.optimizer.seed),
            noise_rng: ChaCha8Rng::seed_from_u64(setup.noise.seed),
            eval_seed: derive_seed(setup.optimizer.seed, 0xE7A1),
        }
    }
}

/// Sequential passes over slices of length ≤ 1..=top, then the random phase on
/// slice(top). Returns whether the random phase converged.
#[allow(clippy::too_many_arguments)]
fn incremental_stage<M: Trainable>(
    model: &mut M,
    data: &Dataset,
    validation: &[LabeledString],
    top: usize,
    cap: usize,
    setup: &TrainSetup<'_>,
    lr_mode: LrMode,
    noise: bool,
    stage: u8,
    state: &mut RunState,
) -> Result<bool> {
    let stage_start = state.epoch;
    for n in 1..=top {
        if state.epoch - stage_start >= cap || state.epoch >= setup.curriculum.global_cap {
            return Ok(false);
        }
        let slice = curriculum_slice(data, n);
        if slice.samples.is_empty() {
            log::debug!("stage {stage}: no samples of length <= {n}, skipped");
            continue;
        }
        let (c, loss) = run_epoch(model, &slice.samples, setup, lr_mode, noise, state)?;
        state.characters += c;
        state.epoch += 1;
        record(model, &slice.samples, validation, n, stage, "sequential", loss, state)?;
    }
    let slice = curriculum_slice(data, top);
    if slice.samples.is_empty() {
        return Ok(false);
    }
    let remaining = cap.saturating_sub(state.epoch - stage_start);
    Ok(train_until_converged(model, &slice.samples, validation, top, remaining, setup, lr_mode, noise, stage, state)?.converged)
}

/// Trains `model` on `data` under `setup.curriculum.mode`.
///
/// Stage 1 (2-IL only): sequential slices 1..=N_Tr, then random passes on
/// slice(N_Tr) with the stochastic learning rate and no noise. Stage 2:
/// sequential slices 1..=N_max, then random passes on the full data with the
/// fixed learning rate and the noise regularizer (if enabled).
pub fn two_stage_incremental<M: Trainable>(
    model: &mut M,
    data: &Dataset,
    validation: &[LabeledString],
    setup: &TrainSetup<'_>,
) -> Result<RunMetrics> {
    if data.samples.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    setup.optimizer.validate()?;
    setup.noise.validate()?;
    if setup.k == 0 {
        return Err(Error::Input("refinement repeats K must be >= 1".into()));
    }
    let cur = setup.curriculum;
    let n_max = data.max_len();
    if cur.ntr == 0 || (cur.mode == TrainMode::TwoStage && cur.ntr > n_max) {
        return Err(Error::Input(format!("N_Tr={} must lie in [1, N_max={n_max}]", cur.ntr)));
    }
    let mut state = RunState::new(setup);
    let noise = setup.noise.enabled;
    let converged = match cur.mode {
        TrainMode::TwoStage => {
            let stage1 = incremental_stage(model, data, validation, cur.ntr, cur.stage1_cap, setup, LrMode::Stochastic, false, 1, &mut state)?;
            log::info!("stage 1 finished after {} epochs (converged: {stage1})", state.epoch);
            incremental_stage(model, data, validation, n_max, cur.stage2_cap, setup, LrMode::Fixed, noise, 2, &mut state)?
        }
        TrainMode::Incremental => {
            incremental_stage(model, data, validation, n_max, cur.global_cap, setup, LrMode::Fixed, noise, 2, &mut state)?
        }
        TrainMode::Standard => {
            train_until_converged(model, &data.samples, validation, n_max, cur.global_cap, setup, LrMode::Fixed, noise, 2, &mut state)?
                .converged
        }
    };
    Ok(RunMetrics {
        mode: cur.mode,
        converged,
        epochs_to_convergence: converged.then_some(state.epoch),
        characters_to_convergence: converged.then_some(state.characters),
        total_epochs: state.epoch,
        total_characters: state.characters,
        epochs: state.records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{sample_dataset, Grammar};
    use crate::model::{init_params, ModelOrder};

    fn setup(cap: usize) -> TrainSetup<'static> {
        let mut s = TrainSetup::new(
            OptimizerConfig { algorithm: crate::learning::Algorithm::Bptt, ..OptimizerConfig::default() },
            CurriculumConfig { ntr: 4, stage1_cap: cap, stage2_cap: cap, global_cap: 2 * cap, ..CurriculumConfig::default() },
            NoiseConfig::disabled(),
        );
        s.k = 1;
        s
    }

    #[test]
    fn character_counting() {
        let data: Vec<LabeledString> = [2usize, 3, 4].iter().map(|&n| LabeledString { tokens: vec![0; n], label: false }).collect();
        // contradictory labels: never converged
        let validation: Vec<LabeledString> = [true, false].iter().map(|&label| LabeledString { tokens: vec![0, 1], label }).collect();
        let mut m = init_params(ModelOrder::Third, 3, 2, 1).unwrap();
        let out = train_stage(&mut m, &data, &validation, 1, LrMode::Fixed, &setup(1)).unwrap();
        assert_eq!(out, StageOutcome { epochs: 1, characters: 9, converged: false });
    }

    #[test]
    fn zero_cap_leaves_model_unchanged() {
        let ds = sample_dataset(&Grammar::Anbn.pda(), 10, 10, 1, 8, 3).unwrap();
        let mut m = init_params(ModelOrder::Third, 4, 2, 1).unwrap();
        let before = m.clone();
        let out = train_stage(&mut m, &ds.samples, &[], 0, LrMode::Fixed, &setup(0)).unwrap();
        assert_eq!(out.epochs, 0);
        assert_eq!(m, before);
        let metrics = two_stage_incremental(&mut m, &ds, &[], &setup(0)).unwrap();
        assert_eq!(metrics.total_epochs, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn epochs_respect_global_cap() {
        let ds = sample_dataset(&Grammar::Anbn.pda(), 12, 12, 1, 8, 5).unwrap();
        let mut m = init_params(ModelOrder::Third, 4, 2, 2).unwrap();
        let mut s = setup(6);
        s.curriculum.global_cap = 9;
        let metrics = two_stage_incremental(&mut m, &ds, &ds.samples, &s).unwrap();
        assert!(metrics.total_epochs <= 9);
        assert_eq!(metrics.epochs.len(), metrics.total_epochs);
        assert!(metrics.epochs.windows(2).all(|w| w[0].characters <= w[1].characters));
    }
}

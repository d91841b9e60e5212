//! Losses, gradient procedures and the SGD update.

mod bptt;
mod cell;
mod rtrl;
mod surrogate;
mod uoro;

pub use bptt::{bptt, bptt_gradient, tbptt, tbptt_gradient};
pub use cell::{FlatParams, RecurrentCell, Segment, StepRecord, Trajectory};
pub(crate) use cell::logistic_slope;
pub use rtrl::{rtrl, rtrl_gradient, DEFAULT_RTRL_CAP};
pub use surrogate::StraightThrough;
pub use uoro::{uoro, uoro_gradient_stream};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Readout weights extended with zeros to the full state dimension.
pub(crate) fn padded_readout<C: RecurrentCell + ?Sized>(cell: &C) -> Vec<f64> {
    let mut w = cell.output_weights().to_vec();
    w.resize(cell.state_dim(), 0.0);
    w
}

/// Prediction clamp for the cross-entropy.
pub const CLAMP_EPS: f64 = 1e-7;
pub const DEFAULT_LR0: f64 = 0.1005000321;
pub const DEFAULT_CLIP: f64 = 13.0;
pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_K: usize = 4;

/// D(ŷ, y) with ŷ clamped to [ε, 1−ε].
pub fn instantaneous_loss(yhat: f64, y: f64) -> f64 {
    let p = yhat.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// ∂D/∂logit: ŷ − y inside the clamp band, 0 where the clamp is active.
pub fn logit_gradient(yhat: f64, y: f64) -> f64 {
    if (CLAMP_EPS..=1.0 - CLAMP_EPS).contains(&yhat) {
        yhat - y
    } else {
        0.0
    }
}

/// Per-step repeat counts S = K(1 − H) + H.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementSchedule {
    pub hints: Vec<bool>,
    pub k: usize,
}

impl RefinementSchedule {
    pub fn new(hints: Vec<bool>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Input("K must be >= 1".into()));
        }
        Ok(Self { hints, k })
    }

    /// No hints: every step repeats K times.
    pub fn unhinted(len: usize, k: usize) -> Self {
        Self { hints: vec![false; len], k: k.max(1) }
    }

    pub fn repeats(&self) -> Vec<usize> {
        self.hints.iter().map(|&h| if h { 1 } else { self.k }).collect()
    }

    pub fn total(&self) -> usize {
        self.repeats().iter().sum()
    }
}

/// Σ_t Σ_{k ≤ S(t)} D(ŷ_{t,k}, y).
pub fn refinement_loss(predictions: &[f64], y: f64, schedule: &RefinementSchedule) -> Result<f64> {
    if predictions.len() != schedule.total() {
        return Err(Error::Input(format!(
            "{} predictions for a schedule of {} terms",
            predictions.len(),
            schedule.total()
        )));
    }
    Ok(predictions.iter().map(|&p| instantaneous_loss(p, y)).sum())
}

/// Gradient with the same flat layout as the parameters it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl GradientBundle {
    pub fn zeros_like<P: FlatParams + ?Sized>(params: &P) -> Self {
        Self { values: vec![0.0; params.param_count()], segments: params.segments() }
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        let s = self.segments.iter().find(|s| s.name == name).expect("unknown segment");
        &self.values[s.range()]
    }

    pub fn add(&mut self, other: &GradientBundle) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Hard clip to [−c, c].
pub fn clip(values: &mut [f64], c: f64) {
    for v in values {
        *v = v.clamp(-c, c);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bptt,
    Tbptt,
    Rtrl,
    Uoro,
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bptt" => Ok(Algorithm::Bptt),
            "tbptt" => Ok(Algorithm::Tbptt),
            "rtrl" => Ok(Algorithm::Rtrl),
            "uoro" => Ok(Algorithm::Uoro),
            _ => Err(Error::Input(format!("unknown algorithm {s:?}"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Bptt => "bptt",
            Algorithm::Tbptt => "tbptt",
            Algorithm::Rtrl => "rtrl",
            Algorithm::Uoro => "uoro",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrMode {
    Stochastic,
    Fixed,
}

impl FromStr for LrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(LrMode::Stochastic),
            "fixed" => Ok(LrMode::Fixed),
            _ => Err(Error::Input(format!("unknown lr mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub truncation_window: usize,
    pub clip_magnitude: f64,
    pub lr0: f64,
    pub lr_mode: LrMode,
    pub seed: u64,
    /// Largest J·P the RTRL Jacobian may hold.
    pub rtrl_cap: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Uoro,
            truncation_window: DEFAULT_WINDOW,
            clip_magnitude: DEFAULT_CLIP,
            lr0: DEFAULT_LR0,
            lr_mode: LrMode::Stochastic,
            seed: 0,
            rtrl_cap: DEFAULT_RTRL_CAP,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_magnitude > 0.0) {
            return Err(Error::Input("clip magnitude must be positive".into()));
        }
        if self.truncation_window == 0 {
            return Err(Error::Input("truncation window must be >= 1".into()));
        }
        Ok(())
    }
}

/// λ = lr0 / (1 + epoch/100), times U(0.5, 1.5) in stochastic mode.
pub fn learning_rate<R: Rng + ?Sized>(lr0: f64, mode: LrMode, epoch: usize, rng: &mut R) -> f64 {
    let base = lr0 / (1.0 + epoch as f64 / 100.0);
    match mode {
        LrMode::Fixed => base,
        LrMode::Stochastic => base * rng.random_range(0.5..1.5),
    }
}

/// θ ← θ − λ·clip(g); returns λ.
pub fn sgd_step<P: FlatParams + ?Sized, R: Rng + ?Sized>(
    params: &mut P,
    grads: &GradientBundle,
    lr0: f64,
    lr_mode: LrMode,
    clip_magnitude: f64,
    epoch: usize,
    rng: &mut R,
) -> f64 {
    let lr = learning_rate(lr0, lr_mode, epoch, rng);
    let mut flat = params.to_flat();
    for (p, g) in flat.iter_mut().zip(&grads.values) {
        *p -= lr * g.clamp(-clip_magnitude, clip_magnitude);
    }
    params.set_flat(&flat);
    lr
}

/// Result of one sample's gradient computation.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub grad: GradientBundle,
    pub loss: f64,
    /// Final ŷ of the smooth run.
    pub final_prediction: f64,
}

/// Unrolls `cell` on one labeled sample and computes the configured gradient.
pub fn sample_gradient<C: RecurrentCell>(
    cell: &C,
    tokens: &[usize],
    y: f64,
    schedule: &RefinementSchedule,
    config: &OptimizerConfig,
    rng: &mut dyn RngCore,
) -> Result<SampleGradient> {
    let repeats = schedule.repeats();
    let traj = cell.unroll(tokens, &repeats, rng)?;
    let loss = traj.steps.iter().map(|s| instantaneous_loss(s.yhat, y)).sum();
    let grad = match config.algorithm {
        Algorithm::Bptt => bptt(cell, &traj, y),
        Algorithm::Tbptt => tbptt(cell, &traj, y, config.truncation_window),
        Algorithm::Rtrl => rtrl(cell, &traj, y, config.rtrl_cap)?,
        Algorithm::Uoro => {
            let mut nu = ChaCha8Rng::seed_from_u64(rng.next_u64());
            uoro(cell, &traj, y, &mut nu)
        }
    };
    let final_prediction = traj.steps.last().map_or(0.5, |s| s.yhat);
    Ok(SampleGradient { grad, loss, final_prediction })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values() {
        assert!((instantaneous_loss(0.5, 1.0) - 2f64.ln()).abs() < 1e-12);
        assert!(instantaneous_loss(1.0 - CLAMP_EPS, 1.0) < 1e-6);
        assert!((instantaneous_loss(0.25, 0.0) + 0.75f64.ln()).abs() < 1e-12);
        assert!(instantaneous_loss(1.0, 0.0).is_finite());
    }

    #[test]
    fn refinement_examples() {
        let s = RefinementSchedule::unhinted(3, 1);
        assert!((refinement_loss(&[0.5; 3], 1.0, &s).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        let s = RefinementSchedule::unhinted(2, 4);
        assert!((refinement_loss(&[0.5; 8], 0.0, &s).unwrap() - 8.0 * 2f64.ln()).abs() < 1e-12);
        let s = RefinementSchedule::new(vec![true, false], 4).unwrap();
        assert_eq!(s.repeats(), vec![1, 4]);
        assert_eq!(s.total(), 5);
        assert!(refinement_loss(&[0.5; 4], 0.0, &s).is_err());
    }

    #[test]
    fn learning_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(learning_rate(DEFAULT_LR0, LrMode::Fixed, 0, &mut rng), 0.1005000321);
        assert!((learning_rate(1.0, LrMode::Fixed, 100, &mut rng) - 0.5).abs() < 1e-15);
        for _ in 0..100 {
            let lr = learning_rate(1.0, LrMode::Stochastic, 0, &mut rng);
            assert!((0.5..1.5).contains(&lr));
        }
    }

    #[test]
    fn clipping_and_zero_gradient() {
        let mut v = vec![100.0, -20.0, 3.0];
        clip(&mut v, 13.0);
        assert_eq!(v, vec![13.0, -13.0, 3.0]);
        let before = v.clone();
        clip(&mut v, 13.0);
        assert_eq!(v, before);

        let mut p = crate::model::init_params(crate::model::ModelOrder::Third, 3, 2, 1).unwrap();
        let orig = p.clone();
        let g = GradientBundle::zeros_like(&p);
        sgd_step(&mut p, &g, 0.1, LrMode::Stochastic, 13.0, 0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p, orig);

        let mut g = GradientBundle::zeros_like(&p);
        g.values[0] = 100.0;
        sgd_step(&mut p, &g, 0.1, LrMode::Fixed, 13.0, 0, &mut ChaCha8Rng::seed_from_u64(1));
        assert!((orig.w_s[0] - p.w_s[0] - 1.3).abs() < 1e-12);
    }
}

//! Finite-difference, RTRL and UORO verification on tiny random models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::learning::{
    bptt, instantaneous_loss, rtrl, tbptt, uoro, Algorithm, FlatParams, GradientBundle, RecurrentCell,
    RefinementSchedule, DEFAULT_RTRL_CAP,
};
use crate::model::{init_params, ModelOrder, ModelParams};
use crate::par::{derive_seed, Exec};

/// A tiny model plus one labeled sample and its schedule.
#[derive(Debug, Clone)]
pub struct TinyCase {
    pub params: ModelParams,
    pub tokens: Vec<usize>,
    pub y: f64,
    pub schedule: RefinementSchedule,
    /// Seed of the read-noise stream used for every unroll.
    pub read_seed: u64,
}

/// J = 3, L = 2, T ∈ [1, 5], K ∈ {1, 4}, weights of order one.
pub fn tiny_case(order: ModelOrder, seed: u64) -> TinyCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(order, 3, 2, rng.random()).expect("valid dims");
    for w in params.w_s.iter_mut().chain(params.w_a.iter_mut()).chain(params.w_o.iter_mut()) {
        *w *= 10.0;
    }
    for b in params.b_s.iter_mut().chain(params.b_a.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    params.b_o = rng.random_range(-0.5..0.5);
    let t = rng.random_range(1..=5);
    let tokens = (0..t).map(|_| rng.random_range(0..2)).collect();
    let k = if rng.random_bool(0.5) { 1 } else { 4 };
    let hints = (0..t).map(|_| rng.random_bool(0.3)).collect();
    TinyCase {
        params,
        tokens,
        y: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        schedule: RefinementSchedule::new(hints, k).expect("k >= 1"),
        read_seed: rng.random(),
    }
}

impl TinyCase {
    pub fn trajectory(&self, params: &ModelParams) -> Result<crate::learning::Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.read_seed);
        params.unroll(&self.tokens, &self.schedule.repeats(), &mut rng)
    }

    pub fn loss(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.trajectory(params)?.steps.iter().map(|s| instantaneous_loss(s.yhat, self.y)).sum())
    }

    pub fn gradient(&self, algorithm: Algorithm, window: usize) -> Result<GradientBundle> {
        let traj = self.trajectory(&self.params)?;
        Ok(match algorithm {
            Algorithm::Bptt => bptt(&self.params, &traj, self.y),
            Algorithm::Tbptt => tbptt(&self.params, &traj, self.y, window),
            Algorithm::Rtrl => rtrl(&self.params, &traj, self.y, DEFAULT_RTRL_CAP)?,
            Algorithm::Uoro => uoro(&self.params, &traj, self.y, &mut ChaCha8Rng::seed_from_u64(self.read_seed ^ 1)),
        })
    }

    /// Central differences of the smooth loss with the read stream held fixed.
    pub fn finite_difference(&self, h: f64) -> Result<Vec<f64>> {
        let base = self.params.to_flat();
        let mut p = self.params.clone();
        let mut out = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] = base[i] + h;
            p.set_flat(&v);
            let plus = self.loss(&p)?;
            v[i] = base[i] - h;
            p.set_flat(&v);
            let minus = self.loss(&p)?;
            out.push((plus - minus) / (2.0 * h));
        }
        Ok(out)
    }
}

/// ‖a − b‖∞ / max(‖b‖∞, floor).
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    diff / scale.max(floor)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &str, errors: &[f64], tolerance: f64) -> Self {
        let worst = errors.iter().copied().fold(0.0, f64::max);
        Self { name: name.into(), trials: errors.len(), worst, tolerance, passed: worst < tolerance }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: worst {:.3e} (tolerance {:.0e}, {} trials)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.trials
        )
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const RTRL_TOLERANCE: f64 = 1e-6;
pub const UORO_Z_LIMIT: f64 = 3.0;

/// BPTT (or TBPTT with `window`) against central differences.
pub fn fd_check(trials: usize, seed: u64, algorithm: Algorithm, window: usize, exec: Exec) -> Result<CheckReport> {
    let errors: Result<Vec<f64>> = exec
        .map_range(trials, |i| {
            let case = tiny_case(ModelOrder::Third, derive_seed(seed, i as u64));
            let g = case.gradient(algorithm, window)?;
            let fd = case.finite_difference(FD_STEP)?;
            Ok(relative_error(&g.values, &fd, 1e-8))
        })
        .into_iter()
        .collect();
    Ok(CheckReport::new(&format!("{algorithm} vs finite differences"), &errors?, FD_TOLERANCE))
}

/// RTRL against BPTT.
pub fn rtrl_check(trials: usize, seed: u64, exec: Exec) -> Result<CheckReport> {
    let errors: Result<Vec<f64>> = exec
        .map_range(trials, |i| {
            let case = tiny_case(ModelOrder::Third, derive_seed(seed, i as u64));
            let a = case.gradient(Algorithm::Rtrl, 0)?;
            let b = case.gradient(Algorithm::Bptt, 0)?;
            Ok(relative_error(&a.values, &b.values, 1e-12))
        })
        .into_iter()
        .collect();
    Ok(CheckReport::new("rtrl vs bptt", &errors?, RTRL_TOLERANCE))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UoroReport {
    pub samples: usize,
    pub max_z: f64,
    /// Coordinates with zero sample variance that differ from the exact gradient.
    pub degenerate_mismatches: usize,
    pub passed: bool,
}

impl UoroReport {
    pub fn line(&self) -> String {
        format!(
            "{} uoro unbiasedness: max z-score {:.3} (limit {UORO_Z_LIMIT}, n={}, {} degenerate mismatches)",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_z,
            self.samples,
            self.degenerate_mismatches
        )
    }
}

/// Fixed tiny model with T = 4 and no refinement repeats.
pub fn uoro_case(seed: u64) -> TinyCase {
    let mut case = tiny_case(ModelOrder::Third, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    case.tokens = (0..4).map(|_| rng.random_range(0..2)).collect();
    case.schedule = RefinementSchedule::unhinted(4, 1);
    case
}

/// Per-coordinate z-score of the Monte-Carlo mean of `n` UORO estimates against RTRL.
pub fn uoro_check(n: usize, seed: u64, exec: Exec) -> Result<UoroReport> {
    let case = uoro_case(seed);
    let traj = case.trajectory(&case.params)?;
    let exact = rtrl(&case.params, &traj, case.y, DEFAULT_RTRL_CAP)?;
    let p = exact.values.len();
    let estimates = exec.map_range(n, |i| {
        let mut nu = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0xA5A5, i as u64));
        uoro(&case.params, &traj, case.y, &mut nu).values
    });
    let mut mean = vec![0.0; p];
    for e in &estimates {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; p];
    for e in &estimates {
        for ((s, v), m) in var.iter_mut().zip(e).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut max_z: f64 = 0.0;
    let mut degenerate = 0;
    for c in 0..p {
        let sd = (var[c] / (n as f64 - 1.0)).sqrt();
        let se = sd / (n as f64).sqrt();
        if se <= 1e-12 * (1.0 + mean[c].abs()) {
            if (mean[c] - exact.values[c]).abs() > 1e-9 * (1.0 + exact.values[c].abs()) {
                degenerate += 1;
            }
            continue;
        }
        max_z = max_z.max((mean[c] - exact.values[c]).abs() / se);
    }
    Ok(UoroReport { samples: n, max_z, degenerate_mismatches: degenerate, passed: max_z < UORO_Z_LIMIT && degenerate == 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_cases_are_deterministic() {
        let a = tiny_case(ModelOrder::Third, 4);
        let b = tiny_case(ModelOrder::Third, 4);
        assert_eq!(a.params, b.params);
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.loss(&a.params).unwrap(), b.loss(&b.params).unwrap());
    }

    #[test]
    fn relative_error_scale() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0], 1e-12), 0.0);
        assert!((relative_error(&[1.0, 2.2], &[1.0, 2.0], 1e-12) - 0.1).abs() < 1e-12);
    }
}

//! Partitioned weight noise for higher-order tensors.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineKind, BaselineParams};
use crate::error::{Error, Result};
use crate::learning::StraightThrough;
use crate::model::{ModelOrder, ModelParams};

pub const NP_RANGE: (f64, f64) = (0.08, 0.30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// M ← M·(1 + p̂β).
    Multiplicative,
    /// M ← (p̂β)·M, the literal reading.
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    PerSample,
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub np: f64,
    pub beta: f64,
    pub mode: NoiseMode,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: true, np: 0.2, beta: 0.01, mode: NoiseMode::Multiplicative, schedule: NoiseSchedule::PerSample, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(NP_RANGE.0..=NP_RANGE.1).contains(&self.np) {
            return Err(Error::Input(format!("noise fraction {} outside [{}, {}]", self.np, NP_RANGE.0, NP_RANGE.1)));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Input(format!("noise scale {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }
}

/// A tensor viewed as an `a × b` grid of equally sized matrices.
pub struct NoiseTarget<'a> {
    pub name: &'static str,
    pub data: &'a mut [f64],
    pub a: usize,
    pub b: usize,
}

/// Parameters that carry higher-order tensors for the regularizer.
pub trait NoiseTargets {
    /// In perturbation order. Empty for first-order models.
    fn noise_targets(&mut self) -> Vec<NoiseTarget<'_>>;
}

impl NoiseTargets for ModelParams {
    fn noise_targets(&mut self) -> Vec<NoiseTarget<'_>> {
        let (j, l) = (self.j, self.l);
        match self.order {
            ModelOrder::Third => vec![
                NoiseTarget { name: "w_s", data: &mut self.w_s, a: j, b: j },
                NoiseTarget { name: "w_a", data: &mut self.w_a, a: l, b: j },
            ],
            ModelOrder::Second => vec![
                NoiseTarget { name: "w_s", data: &mut self.w_s, a: j, b: 1 },
                NoiseTarget { name: "w_a", data: &mut self.w_a, a: l, b: 1 },
            ],
        }
    }
}

impl NoiseTargets for StraightThrough {
    fn noise_targets(&mut self) -> Vec<NoiseTarget<'_>> {
        self.params.noise_targets()
    }
}

impl NoiseTargets for BaselineParams {
    fn noise_targets(&mut self) -> Vec<NoiseTarget<'_>> {
        match self.kind {
            BaselineKind::FirstOrder => Vec::new(),
            BaselineKind::SecondOrder => {
                let h = self.h;
                vec![NoiseTarget { name: "w", data: &mut self.w, a: h, b: 1 }]
            }
        }
    }
}

/// Three contiguous partitions of the `a·b` matrices (remainder to the last),
/// ⌈np·size⌉ matrices drawn from each without replacement. Sorted within each
/// partition; partitions in index order.
pub fn create_partitions<R: Rng + ?Sized>(a: usize, b: usize, np: f64, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = a * b;
    if n < 3 {
        return Err(Error::Input(format!("need at least 3 matrices to partition, got {a}x{b}")));
    }
    let base = n / 3;
    let sizes = [base, base, n - 2 * base];
    let mut out = Vec::new();
    let mut start = 0;
    for size in sizes {
        let take = ((np * size as f64).ceil() as usize).min(size);
        let mut picked = sample(rng, size, take).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| ((start + i) / b, (start + i) % b)));
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEvent {
    pub p_hat: f64,
    /// (tensor name, matrix index pair) in application order.
    pub touched: Vec<(&'static str, (usize, usize))>,
}

/// One draw of p̂ ~ N(0, 1), then every selected matrix of every target in
/// order is scaled and p̂ halves. Targets with fewer than 3 matrices are skipped.
pub fn apply_adaptive_noise<P: NoiseTargets + ?Sized, R: Rng + ?Sized>(
    params: &mut P,
    config: &NoiseConfig,
    rng: &mut R,
) -> NoiseEvent {
    let mut p_hat: f64 = rng.sample(StandardNormal);
    let first = p_hat;
    let mut touched = Vec::new();
    for target in params.noise_targets() {
        let Ok(selection) = create_partitions(target.a, target.b, config.np, rng) else {
            log::debug!("noise skips {}: {}x{} matrices", target.name, target.a, target.b);
            continue;
        };
        let size = target.data.len() / (target.a * target.b);
        for (p, q) in selection {
            let start = (p * target.b + q) * size;
            let factor = match config.mode {
                NoiseMode::Multiplicative => 1.0 + p_hat * config.beta,
                NoiseMode::Replace => p_hat * config.beta,
            };
            target.data[start..start + size].iter_mut().for_each(|w| *w *= factor);
            touched.push((target.name, (p, q)));
            p_hat /= 2.0;
        }
    }
    NoiseEvent { p_hat: first, touched }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sel = create_partitions(3, 3, 1.0 / 3.0, &mut rng).unwrap();
        assert_eq!(sel.len(), 3);
        let flat: Vec<usize> = sel.iter().map(|&(p, q)| p * 3 + q).collect();
        assert!(flat[0] < 3 && (3..6).contains(&flat[1]) && (6..9).contains(&flat[2]));

        let sel = create_partitions(10, 1, 0.1, &mut rng).unwrap();
        let flat: Vec<usize> = sel.iter().map(|&(p, _)| p).collect();
        assert_eq!(flat.len(), 3);
        assert!(flat[0] < 3 && (3..6).contains(&flat[1]) && (6..10).contains(&flat[2]));

        assert!(create_partitions(2, 1, 0.2, &mut rng).is_err());
    }

    #[test]
    fn zero_beta_is_identity() {
        let mut p = init_params(ModelOrder::Third, 4, 2, 3).unwrap();
        let before = p.clone();
        let cfg = NoiseConfig { beta: 0.0, ..NoiseConfig::default() };
        let ev = apply_adaptive_noise(&mut p, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(!ev.touched.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn second_order_skips_small_action_tensor() {
        let mut p = init_params(ModelOrder::Second, 5, 2, 3).unwrap();
        let ev = apply_adaptive_noise(&mut p, &NoiseConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(ev.touched.iter().all(|(n, _)| *n == "w_s"));
    }

    #[test]
    fn halving_sequence() {
        let mut p = init_params(ModelOrder::Third, 3, 2, 3).unwrap();
        p.w_s.iter_mut().for_each(|w| *w = 1.0);
        p.w_a.iter_mut().for_each(|w| *w = 1.0);
        let cfg = NoiseConfig { beta: 0.5, ..NoiseConfig::default() };
        let ev = apply_adaptive_noise(&mut p, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let f = p.feature_len();
        for (n, ((name, (a, b)), scale)) in ev.touched.iter().zip(std::iter::successors(Some(ev.p_hat), |x| Some(x / 2.0))).enumerate() {
            let data = if *name == "w_s" { &p.w_s } else { &p.w_a };
            let start = (a * 3 + b) * f;
            assert_eq!(data[start], 1.0 + scale * 0.5, "matrix {n}");
        }
    }
}

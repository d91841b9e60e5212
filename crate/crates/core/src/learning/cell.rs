//! Differentiable recurrent cells as seen by the gradient procedures.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{forward_sequence, ForwardOptions, ModelParams};

/// A named contiguous range of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn layout(sizes: &[(&str, usize)]) -> Vec<Segment> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&(name, len)| {
                let s = Segment { name: name.to_owned(), start, len };
                start += len;
                s
            })
            .collect()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Parameters viewed as one flat vector.
pub trait FlatParams {
    fn segments(&self) -> Vec<Segment>;
    fn to_flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]);

    fn param_count(&self) -> usize {
        self.segments().iter().map(|s| s.len).sum()
    }

    fn segment(&self, name: &str) -> Option<Segment> {
        self.segments().into_iter().find(|s| s.name == name)
    }
}

/// One effective time step (refinement repeats are separate steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub token: usize,
    pub z_prev: Vec<f64>,
    /// The contracted input features φ (the raw one-hot for first-order cells).
    pub feature: Vec<f64>,
    pub z: Vec<f64>,
    /// ∂z/∂(pre-activation) per state component.
    pub slope: Vec<f64>,
    pub logit: f64,
    pub yhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub z0: Vec<f64>,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn predictions(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.yhat).collect()
    }
}

/// State map z_t = F(z_{t−1}, input_t; Θ) with logistic readout ŷ = σ(w_o·z + b_o).
///
/// `A_t = ∂z_t/∂z_{t−1}` and `B_t = ∂z_t/∂Θ` are exposed as products so the
/// gradient procedures stay generic. The readout parameters occupy
/// `output_offset()..` (one weight per readout unit, the first
/// `output_weights().len()` state components) followed by the scalar bias.
pub trait RecurrentCell: FlatParams + Sync {
    fn state_dim(&self) -> usize;

    fn unroll(&self, tokens: &[usize], schedule: &[usize], rng: &mut dyn RngCore) -> Result<Trajectory>;

    fn output_offset(&self) -> usize;

    fn output_weights(&self) -> &[f64];

    /// A_t · v.
    fn jvp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64>;

    /// A_tᵀ · v.
    fn vjp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64>;

    /// out += vᵀ · B_t.
    fn vjp_params(&self, step: &StepRecord, v: &[f64], out: &mut [f64]);

    /// m (J×P, row-major) += B_t.
    fn add_param_jacobian(&self, step: &StepRecord, m: &mut [f64]) {
        let p = self.param_count();
        let j = self.state_dim();
        let mut e = vec![0.0; j];
        for i in 0..j {
            e[i] = 1.0;
            self.vjp_params(step, &e, &mut m[i * p..(i + 1) * p]);
            e[i] = 0.0;
        }
    }

    /// Dense A_t (J×J, row-major).
    fn state_jacobian(&self, step: &StepRecord) -> Vec<f64> {
        let j = self.state_dim();
        let mut a = vec![0.0; j * j];
        let mut e = vec![0.0; j];
        for c in 0..j {
            e[c] = 1.0;
            let col = self.jvp_state(step, &e);
            for r in 0..j {
                a[r * j + c] = col[r];
            }
            e[c] = 0.0;
        }
        a
    }
}

/// σ' of the logistic state units, from their outputs.
pub(crate) fn logistic_slope(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&z| z * (1.0 - z)).collect()
}

impl RecurrentCell for ModelParams {
    fn state_dim(&self) -> usize {
        self.j
    }

    fn unroll(&self, tokens: &[usize], schedule: &[usize], mut rng: &mut dyn RngCore) -> Result<Trajectory> {
        let fwd = forward_sequence(self, tokens, schedule, ForwardOptions::smooth(), &mut rng)?;
        Ok(fwd.trajectory.expect("smooth forward records"))
    }

    fn output_offset(&self) -> usize {
        self.w_s.len() + self.b_s.len() + self.w_a.len() + self.b_a.len()
    }

    fn output_weights(&self) -> &[f64] {
        &self.w_o
    }

    fn jvp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64> {
        let (j, f) = (self.j, self.feature_len());
        let phi = &step.feature;
        let slope = &step.slope;
        (0..j)
            .map(|i| {
                let mut acc = 0.0;
                for (jj, &vj) in v.iter().enumerate() {
                    if vj == 0.0 {
                        continue;
                    }
                    let w = &self.w_s[(i * j + jj) * f..(i * j + jj + 1) * f];
                    acc += vj * w.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
                }
                slope[i] * acc
            })
            .collect()
    }

    fn vjp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64> {
        let (j, f) = (self.j, self.feature_len());
        let phi = &step.feature;
        let slope = &step.slope;
        let mut out = vec![0.0; j];
        for i in 0..j {
            let d = v[i] * slope[i];
            if d == 0.0 {
                continue;
            }
            for (jj, o) in out.iter_mut().enumerate() {
                let w = &self.w_s[(i * j + jj) * f..(i * j + jj + 1) * f];
                *o += d * w.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    fn vjp_params(&self, step: &StepRecord, v: &[f64], out: &mut [f64]) {
        let (j, f) = (self.j, self.feature_len());
        let slope = &step.slope;
        let b_off = self.w_s.len();
        for i in 0..j {
            let d = v[i] * slope[i];
            if d == 0.0 {
                continue;
            }
            out[b_off + i] += d;
            for (jj, &zj) in step.z_prev.iter().enumerate() {
                if zj == 0.0 {
                    continue;
                }
                let base = (i * j + jj) * f;
                for (m, &pm) in step.feature.iter().enumerate() {
                    out[base + m] += d * zj * pm;
                }
            }
        }
    }

    fn add_param_jacobian(&self, step: &StepRecord, m: &mut [f64]) {
        let (j, f) = (self.j, self.feature_len());
        let p = self.param_count();
        let slope = &step.slope;
        let b_off = self.w_s.len();
        for i in 0..j {
            let row = &mut m[i * p..(i + 1) * p];
            row[b_off + i] += slope[i];
            for (jj, &zj) in step.z_prev.iter().enumerate() {
                let base = (i * j + jj) * f;
                for (mm, &pm) in step.feature.iter().enumerate() {
                    row[base + mm] += slope[i] * zj * pm;
                }
            }
        }
    }
}

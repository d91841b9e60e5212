//! Straight-through training cell.
//!
//! The stack read is linearized as ∂r_c/∂u_c = f̂'(u_c), so the recurrent
//! state is z ‖ r and W_a receives gradient through the reads. With a
//! quantized forward the pass is exactly the evaluation (discrete W_s and W_a,
//! hard g and f), z = g(s) is linearized with σ'(s) and Jacobians use the
//! discrete weights; with a smooth forward z = ĝ(s) on full-precision weights.
//! Parameter gradients always land on the full-precision values.

use rand::RngCore;

use super::{FlatParams, RecurrentCell, Segment, StepRecord, Trajectory};
use crate::error::Result;
use crate::model::activation::{quantize_action_weight, quantize_state_weight};
use crate::model::{forward_sequence, ForwardOptions, Mode, ModelOrder, ModelParams};
use crate::stack::ReadNoise;

#[derive(Debug, Clone, PartialEq)]
pub struct StraightThrough {
    pub params: ModelParams,
    pub forward: Mode,
}

fn identity(w: f64) -> f64 {
    w
}

impl StraightThrough {
    pub fn new(params: ModelParams, forward: Mode) -> Self {
        Self { params, forward }
    }

    pub fn into_inner(self) -> ModelParams {
        self.params
    }

    /// Feature position fed by read component k on input x.
    fn read_position(&self, k: usize, x: usize) -> usize {
        match self.params.order {
            ModelOrder::Third => k * self.params.l + x,
            ModelOrder::Second => k,
        }
    }

    /// The two weight blocks: (tensor, rows, quantizer, offset of rows in ζ, offset of the tensor in Θ, offset of its bias).
    fn blocks(&self) -> [(&[f64], usize, fn(f64) -> f64, usize, usize, usize); 2] {
        let p = &self.params;
        let wa_off = p.w_s.len() + p.b_s.len();
        let (qs, qa): (fn(f64) -> f64, fn(f64) -> f64) = match self.forward {
            Mode::Quantized => (quantize_state_weight, quantize_action_weight),
            Mode::Smooth => (identity, identity),
        };
        [(&p.w_s, p.j, qs, 0, 0, p.w_s.len()), (&p.w_a, p.l, qa, p.j, wa_off, wa_off + p.w_a.len())]
    }
}

impl FlatParams for StraightThrough {
    fn segments(&self) -> Vec<Segment> {
        self.params.segments()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.params.to_flat()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        self.params.set_flat(flat)
    }
}

impl RecurrentCell for StraightThrough {
    fn state_dim(&self) -> usize {
        self.params.j + self.params.l
    }

    fn unroll(&self, tokens: &[usize], schedule: &[usize], mut rng: &mut dyn RngCore) -> Result<Trajectory> {
        let opts = ForwardOptions { mode: self.forward, noise: ReadNoise::Random, record: true, reads: true, trace: false };
        let fwd = forward_sequence(&self.params, tokens, schedule, opts, &mut rng)?;
        Ok(fwd.trajectory.expect("recorded"))
    }

    fn output_offset(&self) -> usize {
        self.params.output_offset()
    }

    fn output_weights(&self) -> &[f64] {
        &self.params.w_o
    }

    fn jvp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64> {
        let (j, l, f) = (self.params.j, self.params.l, self.params.feature_len());
        let (z, (vz, vr)) = (&step.z_prev[..j], v.split_at(j));
        let phi = &step.feature;
        let mut out = vec![0.0; j + l];
        for (w, rows, q, row_off, _, _) in self.blocks() {
            for i in 0..rows {
                let mut acc = 0.0;
                for jj in 0..j {
                    let base = (i * j + jj) * f;
                    if vz[jj] != 0.0 {
                        let mut inner = 0.0;
                        for (m, &pm) in phi.iter().enumerate() {
                            if pm != 0.0 {
                                inner += q(w[base + m]) * pm;
                            }
                        }
                        acc += vz[jj] * inner;
                    }
                    if z[jj] != 0.0 {
                        for (k, &vk) in vr.iter().enumerate() {
                            acc += vk * q(w[base + self.read_position(k, step.token)]) * z[jj];
                        }
                    }
                }
                out[row_off + i] = step.slope[row_off + i] * acc;
            }
        }
        out
    }

    fn vjp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64> {
        let (j, l, f) = (self.params.j, self.params.l, self.params.feature_len());
        let z = &step.z_prev[..j];
        let phi = &step.feature;
        let mut out = vec![0.0; j + l];
        for (w, rows, q, row_off, _, _) in self.blocks() {
            for i in 0..rows {
                let d = v[row_off + i] * step.slope[row_off + i];
                if d == 0.0 {
                    continue;
                }
                for jj in 0..j {
                    let base = (i * j + jj) * f;
                    let mut inner = 0.0;
                    for (m, &pm) in phi.iter().enumerate() {
                        if pm != 0.0 {
                            inner += q(w[base + m]) * pm;
                        }
                    }
                    out[jj] += d * inner;
                    if z[jj] != 0.0 {
                        for k in 0..l {
                            out[j + k] += d * q(w[base + self.read_position(k, step.token)]) * z[jj];
                        }
                    }
                }
            }
        }
        out
    }

    fn vjp_params(&self, step: &StepRecord, v: &[f64], out: &mut [f64]) {
        let (j, f) = (self.params.j, self.params.feature_len());
        let z = &step.z_prev[..j];
        for (_, rows, _, row_off, w_off, b_off) in self.blocks() {
            for i in 0..rows {
                let d = v[row_off + i] * step.slope[row_off + i];
                if d == 0.0 {
                    continue;
                }
                out[b_off + i] += d;
                for (jj, &zj) in z.iter().enumerate() {
                    if zj == 0.0 {
                        continue;
                    }
                    let base = w_off + (i * j + jj) * f;
                    for (m, &pm) in step.feature.iter().enumerate() {
                        out[base + m] += d * zj * pm;
                    }
                }
            }
        }
    }
}

//! Stackless comparison cells: a first-order Elman network and a
//! second-order network. Both train through the same protocol code as the NSPDA.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{logistic_slope, FlatParams, RecurrentCell, Segment, StepRecord, Trajectory};
use crate::model::activation::sigmoid;

pub const MAX_HIDDEN: usize = 50;
pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FirstOrder,
    SecondOrder,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::FirstOrder => "rnn",
            BaselineKind::SecondOrder => "rnn2",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" | "first_order" | "elman" => Ok(BaselineKind::FirstOrder),
            "rnn2" | "second_order" => Ok(BaselineKind::SecondOrder),
            _ => Err(Error::NotFound(format!("baseline kind {s:?}"))),
        }
    }
}

/// `w[i][m]` with m over `z ‖ x` (first order, H+L columns) or over
/// `(j, l)` pairs (second order, H·L columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub kind: BaselineKind,
    pub h: usize,
    pub l: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: f64,
}

impl BaselineParams {
    pub fn zeros(kind: BaselineKind, h: usize, l: usize) -> Result<Self> {
        if h == 0 || h > MAX_HIDDEN || l < 2 {
            return Err(Error::Input(format!("baseline needs 1 <= H <= {MAX_HIDDEN} and L >= 2, got H={h} L={l}")));
        }
        let cols = Self::columns(kind, h, l);
        Ok(Self { kind, h, l, w: vec![0.0; h * cols], b: vec![0.0; h], w_o: vec![0.0; h], b_o: 0.0 })
    }

    fn columns(kind: BaselineKind, h: usize, l: usize) -> usize {
        match kind {
            BaselineKind::FirstOrder => h + l,
            BaselineKind::SecondOrder => h * l,
        }
    }

    pub fn cols(&self) -> usize {
        Self::columns(self.kind, self.h, self.l)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.h >= 1
            && self.h <= MAX_HIDDEN
            && self.l >= 2
            && self.w.len() == self.h * self.cols()
            && self.b.len() == self.h
            && self.w_o.len() == self.h;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("baseline shapes inconsistent with kind={} H={} L={}", self.kind, self.h, self.l)))
        }
    }

    /// ∂s_i/∂z_j for input x.
    fn recurrent(&self, i: usize, j: usize, x: usize) -> f64 {
        let c = self.cols();
        match self.kind {
            BaselineKind::FirstOrder => self.w[i * c + j],
            BaselineKind::SecondOrder => self.w[i * c + j * self.l + x],
        }
    }

    fn pre_activation(&self, z: &[f64], x: usize) -> Vec<f64> {
        let c = self.cols();
        (0..self.h)
            .map(|i| {
                let mut s = self.b[i];
                for (j, &zj) in z.iter().enumerate() {
                    s += self.recurrent(i, j, x) * zj;
                }
                if self.kind == BaselineKind::FirstOrder {
                    s += self.w[i * c + self.h + x];
                }
                s
            })
            .collect()
    }

    /// One smooth step: (hidden', ŷ).
    pub fn step(&self, hidden: &[f64], x: usize) -> Result<(Vec<f64>, f64)> {
        if hidden.len() != self.h || x >= self.l {
            return Err(Error::Input(format!("hidden length {} / token {x} incompatible with H={} L={}", hidden.len(), self.h, self.l)));
        }
        let z: Vec<f64> = self.pre_activation(hidden, x).into_iter().map(sigmoid).collect();
        let logit = self.b_o + self.w_o.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
        Ok((z, sigmoid(logit)))
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.h];
        z[0] = 1.0;
        z
    }

    pub fn final_prediction(&self, tokens: &[usize]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        let mut z = self.initial_hidden();
        let mut y = 0.0;
        for &x in tokens {
            (z, y) = self.step(&z, x)?;
        }
        Ok(y)
    }

    pub fn classify(&self, tokens: &[usize]) -> Result<bool> {
        Ok(self.final_prediction(tokens)? > 0.5)
    }
}

/// U(−0.1, 0.1) weights, zero biases.
pub fn init_baseline(kind: BaselineKind, h: usize, l: usize, seed: u64) -> Result<BaselineParams> {
    let mut p = BaselineParams::zeros(kind, h, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in p.w.iter_mut().chain(p.w_o.iter_mut()) {
        *w = rng.random_range(-0.1..0.1);
    }
    Ok(p)
}

impl FlatParams for BaselineParams {
    fn segments(&self) -> Vec<Segment> {
        Segment::layout(&[("w", self.w.len()), ("b", self.h), ("w_o", self.h), ("b_o", 1)])
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w);
        v.extend_from_slice(&self.b);
        v.extend_from_slice(&self.w_o);
        v.push(self.b_o);
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let (w, rest) = flat.split_at(self.w.len());
        let (b, rest) = rest.split_at(self.h);
        let (w_o, rest) = rest.split_at(self.h);
        self.w.copy_from_slice(w);
        self.b.copy_from_slice(b);
        self.w_o.copy_from_slice(w_o);
        self.b_o = rest[0];
    }
}

impl RecurrentCell for BaselineParams {
    fn state_dim(&self) -> usize {
        self.h
    }

    fn unroll(&self, tokens: &[usize], schedule: &[usize], _rng: &mut dyn RngCore) -> Result<Trajectory> {
        self.validate()?;
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if schedule.len() != tokens.len() || schedule.contains(&0) {
            return Err(Error::Input("schedule needs one entry >= 1 per token".into()));
        }
        let z0 = self.initial_hidden();
        let mut z = z0.clone();
        let mut steps = Vec::with_capacity(schedule.iter().sum());
        for (&x, &reps) in tokens.iter().zip(schedule) {
            for _ in 0..reps {
                let (next, yhat) = self.step(&z, x)?;
                let mut feature = vec![0.0; self.l];
                feature[x] = 1.0;
                let logit = self.b_o + self.w_o.iter().zip(&next).map(|(w, v)| w * v).sum::<f64>();
                steps.push(StepRecord { token: x, z_prev: z, feature, slope: logistic_slope(&next), z: next.clone(), logit, yhat });
                z = next;
            }
        }
        Ok(Trajectory { z0, steps })
    }

    fn output_offset(&self) -> usize {
        self.w.len() + self.h
    }

    fn output_weights(&self) -> &[f64] {
        &self.w_o
    }

    fn jvp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64> {
        let slope = &step.slope;
        (0..self.h)
            .map(|i| slope[i] * v.iter().enumerate().map(|(j, vj)| self.recurrent(i, j, step.token) * vj).sum::<f64>())
            .collect()
    }

    fn vjp_state(&self, step: &StepRecord, v: &[f64]) -> Vec<f64> {
        let slope = &step.slope;
        let mut out = vec![0.0; self.h];
        for i in 0..self.h {
            let d = v[i] * slope[i];
            if d == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += d * self.recurrent(i, j, step.token);
            }
        }
        out
    }

    fn vjp_params(&self, step: &StepRecord, v: &[f64], out: &mut [f64]) {
        let slope = &step.slope;
        let c = self.cols();
        let b_off = self.w.len();
        let x = step.token;
        for i in 0..self.h {
            let d = v[i] * slope[i];
            if d == 0.0 {
                continue;
            }
            out[b_off + i] += d;
            let row = i * c;
            match self.kind {
                BaselineKind::FirstOrder => {
                    for (j, &zj) in step.z_prev.iter().enumerate() {
                        out[row + j] += d * zj;
                    }
                    out[row + self.h + x] += d;
                }
                BaselineKind::SecondOrder => {
                    for (j, &zj) in step.z_prev.iter().enumerate() {
                        out[row + j * self.l + x] += d * zj;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_half_vector() {
        for kind in [BaselineKind::FirstOrder, BaselineKind::SecondOrder] {
            let p = BaselineParams::zeros(kind, 4, 2).unwrap();
            let (z, y) = p.step(&[0.3, 0.1, 0.0, 0.9], 1).unwrap();
            assert!(z.iter().all(|&v| v == 0.5));
            assert_eq!(y, 0.5);
        }
    }

    #[test]
    fn second_order_one_hot_reads_one_entry() {
        let mut p = BaselineParams::zeros(BaselineKind::SecondOrder, 3, 2).unwrap();
        for (n, w) in p.w.iter_mut().enumerate() {
            *w = n as f64 * 0.01;
        }
        p.b = vec![0.2, -0.1, 0.05];
        let s = p.pre_activation(&[0.0, 1.0, 0.0], 1);
        for i in 0..3 {
            assert_eq!(s[i], p.w[i * 6 + 2 + 1] + p.b[i]);
        }
    }

    #[test]
    fn hidden_size_is_bounded() {
        assert!(BaselineParams::zeros(BaselineKind::FirstOrder, 51, 2).is_err());
        assert!(BaselineParams::zeros(BaselineKind::FirstOrder, 50, 2).is_ok());
        let p = BaselineParams::zeros(BaselineKind::FirstOrder, 3, 2).unwrap();
        assert!(p.step(&[0.0; 2], 0).is_err());
    }
}

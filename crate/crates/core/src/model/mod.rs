//! The NSPDA: a higher-order state network driving the digital stack.

pub mod activation;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{FlatParams, Segment, StepRecord, Trajectory};
use crate::stack::{arbitrate_action, read_vector, ActionVector, ReadNoise, ReadVector, Stack};
use activation::{quantize_action_weight, quantize_state_weight, sigmoid, smooth_action, step_action, step_state};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelOrder {
    Second,
    Third,
}

impl ModelOrder {
    /// Length of the contracted feature vector φ(r, x).
    pub fn feature_len(self, l: usize) -> usize {
        match self {
            ModelOrder::Second => 2 * l,
            ModelOrder::Third => l * l,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelOrder::Second => "second",
            ModelOrder::Third => "third",
        }
    }
}

impl fmt::Display for ModelOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "second" | "2" => Ok(ModelOrder::Second),
            "third" | "3" => Ok(ModelOrder::Third),
            _ => Err(Error::Input(format!("unknown model order {s:?}"))),
        }
    }
}

/// Weights and biases. Tensors are flat and row-major:
/// `w_s[i][j][m]` and `w_a[c][j][m]` where `m` indexes φ; for third order
/// `m = k·L + l`, so the layout equals `[i][j][k][l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub order: ModelOrder,
    pub j: usize,
    pub l: usize,
    pub w_s: Vec<f64>,
    pub b_s: Vec<f64>,
    pub w_a: Vec<f64>,
    pub b_a: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: f64,
}

impl ModelParams {
    pub fn zeros(order: ModelOrder, j: usize, l: usize) -> Result<Self> {
        if j == 0 || l < 2 {
            return Err(Error::Input(format!("need J >= 1 and L >= 2, got J={j} L={l}")));
        }
        let f = order.feature_len(l);
        Ok(Self {
            order,
            j,
            l,
            w_s: vec![0.0; j * j * f],
            b_s: vec![0.0; j],
            w_a: vec![0.0; l * j * f],
            b_a: vec![0.0; l],
            w_o: vec![0.0; j],
            b_o: 0.0,
        })
    }

    pub fn feature_len(&self) -> usize {
        self.order.feature_len(self.l)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_len();
        let ok = self.j >= 1
            && self.l >= 2
            && self.w_s.len() == self.j * self.j * f
            && self.b_s.len() == self.j
            && self.w_a.len() == self.l * self.j * f
            && self.b_a.len() == self.l
            && self.w_o.len() == self.j;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("tensor shapes inconsistent with order={} J={} L={}", self.order, self.j, self.l)))
        }
    }

    /// Feature index of (read k, input l).
    pub fn feature_index(&self, k: usize, l: usize) -> usize {
        match self.order {
            ModelOrder::Third => k * self.l + l,
            ModelOrder::Second => {
                debug_assert!(k == usize::MAX || l == usize::MAX);
                if l == usize::MAX {
                    k
                } else {
                    self.l + l
                }
            }
        }
    }

    pub fn ws_index(&self, i: usize, j: usize, m: usize) -> usize {
        (i * self.j + j) * self.feature_len() + m
    }

    pub fn wa_index(&self, c: usize, j: usize, m: usize) -> usize {
        (c * self.j + j) * self.feature_len() + m
    }

    /// Third order only: `W_s[i][j][k][l]`.
    pub fn ws4(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.w_s[self.ws_index(i, j, k * self.l + l)]
    }

    pub fn wa4(&self, c: usize, j: usize, k: usize, l: usize) -> f64 {
        self.w_a[self.wa_index(c, j, k * self.l + l)]
    }
}

/// U(−0.1, 0.1) tensors (including W_o), zero biases.
pub fn init_params(order: ModelOrder, j: usize, l: usize, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(order, j, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in p.w_s.iter_mut().chain(p.w_a.iter_mut()).chain(p.w_o.iter_mut()) {
        *w = rng.random_range(-0.1..0.1);
    }
    Ok(p)
}

/// J = M + U{12..29} (second order) or M + U{2..6} (third order).
pub fn size_state_count<R: Rng + ?Sized>(order: ModelOrder, m: usize, rng: &mut R) -> usize {
    m + match order {
        ModelOrder::Second => rng.random_range(12..=29),
        ModelOrder::Third => rng.random_range(2..=6),
    }
}

/// Discrete view: W_s ∈ {0,1}, W_a ∈ {−1,0,1}; W_o and biases unchanged.
pub fn quantize_weights(params: &ModelParams) -> ModelParams {
    let mut q = params.clone();
    q.w_s.iter_mut().for_each(|w| *w = quantize_state_weight(*w));
    q.w_a.iter_mut().for_each(|w| *w = quantize_action_weight(*w));
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// z' = ĝ(s), full-precision weights; stack still receives f(u).
    Smooth,
    /// z' = g(s), a' = f(u), discretized weights.
    Quantized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub z: Vec<f64>,
    pub stack: Stack,
    pub r: ReadVector,
    pub a: ActionVector,
    pub t: usize,
}

impl ModelState {
    /// z = e₀, empty stack, all-absent read.
    pub fn initial<R: Rng + ?Sized>(params: &ModelParams, noise: ReadNoise, rng: &mut R) -> Self {
        let mut z = vec![0.0; params.j];
        z[0] = 1.0;
        let stack = Stack::new();
        let r = read_vector(&stack, None, params.l, noise, rng);
        Self { z, stack, r, a: ActionVector::noop(params.l), t: 0 }
    }
}

/// Writes φ(r, x) into `phi` and its nonzero positions into `nz`.
fn features(order: ModelOrder, r: &[f64], x: usize, phi: &mut Vec<f64>, nz: &mut Vec<usize>) {
    let l = r.len();
    phi.clear();
    phi.resize(order.feature_len(l), 0.0);
    nz.clear();
    match order {
        ModelOrder::Third => {
            for (k, &rk) in r.iter().enumerate() {
                phi[k * l + x] = rk;
                nz.push(k * l + x);
            }
        }
        ModelOrder::Second => {
            phi[..l].copy_from_slice(r);
            phi[l + x] = 1.0;
            nz.extend(0..l);
            nz.push(l + x);
        }
    }
}

/// out[i] = bias[i] + Σ_j z_j Σ_m q(w[i][j][m]) φ_m, skipping zero z_j and zero φ_m.
#[allow(clippy::too_many_arguments)]
fn contract(
    w: &[f64],
    rows: usize,
    z: &[f64],
    f: usize,
    phi: &[f64],
    nz: &[usize],
    bias: &[f64],
    q: impl Fn(f64) -> f64,
    out: &mut Vec<f64>,
) {
    let jd = z.len();
    out.clear();
    for i in 0..rows {
        let mut acc = bias[i];
        for (j, &zj) in z.iter().enumerate() {
            if zj == 0.0 {
                continue;
            }
            let base = (i * jd + j) * f;
            let mut inner = 0.0;
            for &m in nz {
                inner += q(w[base + m]) * phi[m];
            }
            acc += zj * inner;
        }
        out.push(acc);
    }
}

/// Pre-activations (s, u) for state z, read r and input x.
pub fn pre_activations(params: &ModelParams, z: &[f64], r: &[f64], x: usize, mode: Mode) -> (Vec<f64>, Vec<f64>) {
    let (mut phi, mut nz, mut s, mut u) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    features(params.order, r, x, &mut phi, &mut nz);
    let f = params.feature_len();
    match mode {
        Mode::Smooth => {
            contract(&params.w_s, params.j, z, f, &phi, &nz, &params.b_s, |w| w, &mut s);
            contract(&params.w_a, params.l, z, f, &phi, &nz, &params.b_a, |w| w, &mut u);
        }
        Mode::Quantized => {
            contract(&params.w_s, params.j, z, f, &phi, &nz, &params.b_s, quantize_state_weight, &mut s);
            contract(&params.w_a, params.l, z, f, &phi, &nz, &params.b_a, quantize_action_weight, &mut u);
        }
    }
    (s, u)
}

#[derive(Debug, Default)]
struct Scratch {
    phi: Vec<f64>,
    nz: Vec<usize>,
    s: Vec<f64>,
    u: Vec<f64>,
    qa: Vec<i8>,
}

struct StepOut {
    yhat: f64,
    logit: f64,
    phi: Option<Vec<f64>>,
    z_prev: Option<Vec<f64>>,
    r_prev: Option<Vec<f64>>,
}

fn step_in_place<R: Rng + ?Sized>(
    params: &ModelParams,
    state: &mut ModelState,
    x: usize,
    mode: Mode,
    noise: ReadNoise,
    rng: &mut R,
    sc: &mut Scratch,
    record: bool,
) -> StepOut {
    let f = params.feature_len();
    features(params.order, state.r.values(), x, &mut sc.phi, &mut sc.nz);
    match mode {
        Mode::Smooth => {
            contract(&params.w_s, params.j, &state.z, f, &sc.phi, &sc.nz, &params.b_s, |w| w, &mut sc.s);
            contract(&params.w_a, params.l, &state.z, f, &sc.phi, &sc.nz, &params.b_a, |w| w, &mut sc.u);
        }
        Mode::Quantized => {
            contract(&params.w_s, params.j, &state.z, f, &sc.phi, &sc.nz, &params.b_s, quantize_state_weight, &mut sc.s);
            contract(&params.w_a, params.l, &state.z, f, &sc.phi, &sc.nz, &params.b_a, quantize_action_weight, &mut sc.u);
        }
    }
    let z_prev = record.then(|| state.z.clone());
    let r_prev = record.then(|| state.r.values().to_vec());
    for (zi, &si) in state.z.iter_mut().zip(&sc.s) {
        *zi = match mode {
            Mode::Smooth => sigmoid(si),
            Mode::Quantized => step_state(si),
        };
    }
    sc.qa.clear();
    sc.qa.extend(sc.u.iter().map(|&u| step_action(u)));
    let action = arbitrate_action(&sc.u, &sc.qa);
    let popped = state.stack.apply(&action);
    state.r = read_vector(&state.stack, popped, params.l, noise, rng);
    state.a = action;
    state.t += 1;
    let logit = params.w_o.iter().zip(&state.z).map(|(w, z)| w * z).sum::<f64>() + params.b_o;
    StepOut { yhat: sigmoid(logit), logit, phi: record.then(|| sc.phi.clone()), z_prev, r_prev }
}

/// One recurrence step on input symbol `x`; returns the new state and ŷ.
pub fn step<R: Rng + ?Sized>(
    params: &ModelParams,
    state: &ModelState,
    x: usize,
    mode: Mode,
    noise: ReadNoise,
    rng: &mut R,
) -> Result<(ModelState, f64)> {
    params.validate()?;
    if x >= params.l || state.z.len() != params.j || state.r.values().len() != params.l {
        return Err(Error::Input("input or state shape does not match the model".into()));
    }
    let mut next = state.clone();
    let out = step_in_place(params, &mut next, x, mode, noise, rng, &mut Scratch::default(), false);
    Ok((next, out.yhat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub noise: ReadNoise,
    /// Keep per-step records for gradient computation.
    pub record: bool,
    /// Records carry the extended state z ‖ r with read slopes f̂'(u).
    pub reads: bool,
    /// Collect per-step stack trace lines.
    pub trace: bool,
}

impl ForwardOptions {
    pub fn smooth() -> Self {
        Self { mode: Mode::Smooth, noise: ReadNoise::Random, record: true, reads: false, trace: false }
    }

    pub fn quantized(noise: ReadNoise) -> Self {
        Self { mode: Mode::Quantized, noise, record: false, reads: false, trace: false }
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub predictions: Vec<f64>,
    pub state: ModelState,
    pub trajectory: Option<Trajectory>,
    pub trace: Vec<String>,
}

/// Runs each token `schedule[t]` times with the state carried across repeats.
pub fn forward_sequence<R: Rng + ?Sized>(
    params: &ModelParams,
    tokens: &[usize],
    schedule: &[usize],
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<Forward> {
    params.validate()?;
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if schedule.len() != tokens.len() || schedule.contains(&0) {
        return Err(Error::Input("schedule needs one entry >= 1 per token".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= params.l) {
        return Err(Error::Input(format!("token {bad} outside alphabet of size {}", params.l)));
    }
    let mut state = ModelState::initial(params, opts.noise, rng);
    let total: usize = schedule.iter().sum();
    let mut predictions = Vec::with_capacity(total);
    let z0 = if opts.reads { state.z.iter().chain(state.r.values()).copied().collect() } else { state.z.clone() };
    let mut traj = opts.record.then(|| Trajectory { z0, steps: Vec::with_capacity(total) });
    let mut trace = Vec::new();
    let mut sc = Scratch::default();
    for (&x, &reps) in tokens.iter().zip(schedule) {
        for _ in 0..reps {
            let out = step_in_place(params, &mut state, x, opts.mode, opts.noise, rng, &mut sc, opts.record);
            predictions.push(out.yhat);
            if let Some(t) = traj.as_mut() {
                let mut z_prev = out.z_prev.expect("recorded");
                let mut z = state.z.clone();
                let mut slope: Vec<f64> = match opts.mode {
                    Mode::Smooth => z.iter().map(|&z| z * (1.0 - z)).collect(),
                    Mode::Quantized => sc.s.iter().map(|&s| sigmoid(s) * (1.0 - sigmoid(s))).collect(),
                };
                if opts.reads {
                    z_prev.extend(out.r_prev.expect("recorded"));
                    z.extend_from_slice(state.r.values());
                    slope.extend(sc.u.iter().map(|&u| {
                        let f = smooth_action(u);
                        0.5 * (1.0 - f * f)
                    }));
                }
                t.steps.push(StepRecord { token: x, z_prev, feature: out.phi.expect("recorded"), z, slope, logit: out.logit, yhat: out.yhat });
            }
            if opts.trace {
                trace.push(crate::stack::trace_line(state.t, &state.a, &state.stack, &state.r, None));
            }
        }
    }
    Ok(Forward { predictions, state, trajectory: traj, trace })
}

/// Quantized run with one pass per token; accept iff the final ŷ > 0.5.
pub fn classify<R: Rng + ?Sized>(params: &ModelParams, tokens: &[usize], noise: ReadNoise, rng: &mut R) -> Result<bool> {
    Ok(final_prediction(params, tokens, noise, rng)? > 0.5)
}

/// Final ŷ of a quantized single-pass run without keeping any history.
pub fn final_prediction<R: Rng + ?Sized>(params: &ModelParams, tokens: &[usize], noise: ReadNoise, rng: &mut R) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= params.l) {
        return Err(Error::Input(format!("token {bad} outside alphabet of size {}", params.l)));
    }
    let mut state = ModelState::initial(params, noise, rng);
    let mut sc = Scratch::default();
    let mut y = 0.0;
    for &x in tokens {
        y = step_in_place(params, &mut state, x, Mode::Quantized, noise, rng, &mut sc, false).yhat;
    }
    Ok(y)
}

impl FlatParams for ModelParams {
    fn segments(&self) -> Vec<Segment> {
        let sizes = [
            ("w_s", self.w_s.len()),
            ("b_s", self.b_s.len()),
            ("w_a", self.w_a.len()),
            ("b_a", self.b_a.len()),
            ("w_o", self.w_o.len()),
            ("b_o", 1),
        ];
        Segment::layout(&sizes)
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(&self.w_s);
        v.extend(&self.b_s);
        v.extend(&self.w_a);
        v.extend(&self.b_a);
        v.extend(&self.w_o);
        v.push(self.b_o);
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut rest = flat;
        for dst in [&mut self.w_s, &mut self.b_s, &mut self.w_a, &mut self.b_a, &mut self.w_o] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        self.b_o = rest[0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn init_shapes() {
        let p = init_params(ModelOrder::Third, 4, 2, 1).unwrap();
        assert_eq!(p.w_s.len(), 64);
        assert!(p.w_s.iter().all(|w| w.abs() < 0.1));
        assert!(p.b_s.iter().all(|&b| b == 0.0));
        let q = init_params(ModelOrder::Second, 4, 2, 1).unwrap();
        assert_eq!(q.w_s.len(), 4 * 4 * 4);
        assert_eq!(p, init_params(ModelOrder::Third, 4, 2, 1).unwrap());
        assert!(init_params(ModelOrder::Third, 0, 2, 1).is_err());
        assert!(init_params(ModelOrder::Third, 3, 1, 1).is_err());
    }

    #[test]
    fn sizing_ranges() {
        let mut r = rng();
        for _ in 0..200 {
            assert!((4..=8).contains(&size_state_count(ModelOrder::Third, 2, &mut r)));
            assert!((14..=31).contains(&size_state_count(ModelOrder::Second, 2, &mut r)));
            assert!((3..=7).contains(&size_state_count(ModelOrder::Third, 1, &mut r)));
        }
    }

    #[test]
    fn zero_weights_give_zero_state_and_noop() {
        let p = ModelParams::zeros(ModelOrder::Third, 3, 2).unwrap();
        let mut r = rng();
        let s0 = ModelState::initial(&p, ReadNoise::Random, &mut r);
        let (s1, _) = step(&p, &s0, 0, Mode::Quantized, ReadNoise::Random, &mut r).unwrap();
        assert!(s1.z.iter().all(|&z| z == 0.0));
        assert_eq!(s1.a, ActionVector::noop(2));
        assert_eq!(s1.stack, Stack::new());
    }

    #[test]
    fn schedule_controls_prediction_count() {
        let p = init_params(ModelOrder::Third, 3, 2, 5).unwrap();
        let toks = [0, 1, 1];
        let mut r = rng();
        let n = |s: &[usize], r: &mut ChaCha8Rng| forward_sequence(&p, &toks, s, ForwardOptions::smooth(), r).unwrap().predictions.len();
        assert_eq!(n(&[1, 1, 1], &mut r), 3);
        assert_eq!(n(&[4, 4, 4], &mut r), 12);
        assert_eq!(n(&[1, 4, 4], &mut r), 9);
        assert!(forward_sequence(&p, &[], &[], ForwardOptions::smooth(), &mut r).is_err());
        assert!(forward_sequence(&p, &toks, &[1, 0, 1], ForwardOptions::smooth(), &mut r).is_err());
    }

    #[test]
    fn one_hot_contraction_reads_a_single_entry() {
        let mut p = init_params(ModelOrder::Third, 3, 2, 9).unwrap();
        p.b_s = vec![0.25, -0.5, 1.0];
        let z = [0.0, 1.0, 0.0];
        let r = [0.0, 1.0];
        let (s, _) = pre_activations(&p, &z, &r, 0, Mode::Smooth);
        for i in 0..3 {
            assert_eq!(s[i], p.ws4(i, 1, 1, 0) + p.b_s[i]);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(ModelOrder::Second, 3, 3, 2).unwrap();
        let mut q = ModelParams::zeros(ModelOrder::Second, 3, 3).unwrap();
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
        assert_eq!(p.param_count(), p.to_flat().len());
    }

    #[test]
    fn random_model_classifies_anything() {
        let p = init_params(ModelOrder::Third, 5, 3, 4).unwrap();
        let mut r = rng();
        for toks in [vec![0], vec![2, 1, 0, 0, 2], vec![1; 100]] {
            classify(&p, &toks, ReadNoise::Random, &mut r).unwrap();
        }
    }
}

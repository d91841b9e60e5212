//! Sigmoidal activations and their quantized forms.

/// f = +1 above this value of f̂.
pub const PUSH_THRESHOLD: f64 = 0.13;
/// f = −1 below this value of f̂.
pub const POP_THRESHOLD: f64 = -0.09;

/// ĝ(v) = 1 / (1 + e^{−v}).
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// g(v) = 1 iff ĝ(v) > 0.5.
pub fn step_state(v: f64) -> f64 {
    if sigmoid(v) > 0.5 {
        1.0
    } else {
        0.0
    }
}

/// f̂(v) = 2ĝ(v) − 1.
pub fn smooth_action(v: f64) -> f64 {
    2.0 * sigmoid(v) - 1.0
}

/// f(v) ∈ {−1, 0, +1} with the asymmetric dead zone [−0.09, 0.13].
pub fn step_action(v: f64) -> i8 {
    let a = smooth_action(v);
    if a > PUSH_THRESHOLD {
        1
    } else if a < POP_THRESHOLD {
        -1
    } else {
        0
    }
}

/// W_s discretization: 1 if w > 0.5 else 0.
pub fn quantize_state_weight(w: f64) -> f64 {
    if w > 0.5 {
        1.0
    } else {
        0.0
    }
}

/// W_a discretization: ±1 beyond ±0.5 else 0.
pub fn quantize_action_weight(w: f64) -> f64 {
    if w > 0.5 {
        1.0
    } else if w < -0.5 {
        -1.0
    } else {
        0.0
    }
}

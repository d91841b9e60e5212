use rand::RngCore;

use super::{logit_gradient, padded_readout, GradientBundle, RecurrentCell, RefinementSchedule, Trajectory};
use crate::error::{Error, Result};

fn add_output_grad<C: RecurrentCell>(cell: &C, z: &[f64], d: f64, g: &mut [f64]) {
    let off = cell.output_offset();
    let jo = cell.output_weights().len();
    for (i, &zi) in z[..jo].iter().enumerate() {
        g[off + i] += d * zi;
    }
    g[off + jo] += d;
}

/// Full reverse-mode gradient of the summed per-step loss.
pub fn bptt<C: RecurrentCell>(cell: &C, traj: &Trajectory, y: f64) -> GradientBundle {
    let mut g = GradientBundle::zeros_like(cell);
    let w_o = padded_readout(cell);
    let mut carry = vec![0.0; cell.state_dim()];
    for st in traj.steps.iter().rev() {
        let d = logit_gradient(st.yhat, y);
        add_output_grad(cell, &st.z, d, &mut g.values);
        let dz: Vec<f64> = carry.iter().zip(&w_o).map(|(c, w)| c + d * w).collect();
        cell.vjp_params(st, &dz, &mut g.values);
        carry = cell.vjp_state(st, &dz);
    }
    g
}

/// Each step's loss is backpropagated through at most `window` steps
/// (itself included). A window covering the whole trajectory is plain BPTT.
pub fn tbptt<C: RecurrentCell>(cell: &C, traj: &Trajectory, y: f64, window: usize) -> GradientBundle {
    let n = traj.steps.len();
    if window >= n {
        return bptt(cell, traj, y);
    }
    let mut g = GradientBundle::zeros_like(cell);
    let w_o = padded_readout(cell);
    for t in 0..n {
        let st = &traj.steps[t];
        let d = logit_gradient(st.yhat, y);
        add_output_grad(cell, &st.z, d, &mut g.values);
        if d == 0.0 {
            continue;
        }
        let mut dz: Vec<f64> = w_o.iter().map(|w| d * w).collect();
        for back in 0..window.min(t + 1) {
            let s = &traj.steps[t - back];
            cell.vjp_params(s, &dz, &mut g.values);
            if back + 1 < window {
                dz = cell.vjp_state(s, &dz);
            }
        }
    }
    g
}

fn check_schedule(tokens: &[usize], schedule: &RefinementSchedule) -> Result<Vec<usize>> {
    if schedule.hints.len() != tokens.len() {
        return Err(Error::Input("schedule length differs from sample length".into()));
    }
    Ok(schedule.repeats())
}

pub fn bptt_gradient<C: RecurrentCell>(
    cell: &C,
    tokens: &[usize],
    y: f64,
    schedule: &RefinementSchedule,
    rng: &mut dyn RngCore,
) -> Result<GradientBundle> {
    let traj = cell.unroll(tokens, &check_schedule(tokens, schedule)?, rng)?;
    Ok(bptt(cell, &traj, y))
}

pub fn tbptt_gradient<C: RecurrentCell>(
    cell: &C,
    tokens: &[usize],
    y: f64,
    schedule: &RefinementSchedule,
    window: usize,
    rng: &mut dyn RngCore,
) -> Result<GradientBundle> {
    if window == 0 {
        return Err(Error::Input("truncation window must be >= 1".into()));
    }
    let traj = cell.unroll(tokens, &check_schedule(tokens, schedule)?, rng)?;
    Ok(tbptt(cell, &traj, y, window))
}

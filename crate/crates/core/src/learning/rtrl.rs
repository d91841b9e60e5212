use rand::RngCore;

use super::{logit_gradient, padded_readout, GradientBundle, RecurrentCell, RefinementSchedule, Trajectory};
use crate::error::{Error, Result};

/// Default bound on J·P for the dense sensitivity matrix.
pub const DEFAULT_RTRL_CAP: usize = 20_000_000;

/// Forward-mode gradient carrying M_t = ∂z_t/∂Θ = A_t M_{t−1} + B_t, M_0 = 0.
pub fn rtrl<C: RecurrentCell>(cell: &C, traj: &Trajectory, y: f64, cap: usize) -> Result<GradientBundle> {
    let j = cell.state_dim();
    let p = cell.param_count();
    if j.saturating_mul(p) > cap {
        return Err(Error::Capacity(format!("RTRL Jacobian {j}x{p} exceeds cap {cap}")));
    }
    let mut g = GradientBundle::zeros_like(cell);
    let off = cell.output_offset();
    let w_o = padded_readout(cell);
    let jo = cell.output_weights().len();
    let mut m = vec![0.0; j * p];
    let mut next = vec![0.0; j * p];
    for st in &traj.steps {
        let a = cell.state_jacobian(st);
        next.iter_mut().for_each(|x| *x = 0.0);
        for r in 0..j {
            let out = &mut next[r * p..(r + 1) * p];
            for c in 0..j {
                let arc = a[r * j + c];
                if arc == 0.0 {
                    continue;
                }
                for (o, &mv) in out.iter_mut().zip(&m[c * p..(c + 1) * p]) {
                    *o += arc * mv;
                }
            }
        }
        cell.add_param_jacobian(st, &mut next);
        std::mem::swap(&mut m, &mut next);

        let d = logit_gradient(st.yhat, y);
        if d == 0.0 {
            continue;
        }
        for (i, &zi) in st.z[..jo].iter().enumerate() {
            g.values[off + i] += d * zi;
        }
        g.values[off + jo] += d;
        for i in 0..j {
            let v = d * w_o[i];
            if v == 0.0 {
                continue;
            }
            for (gv, &mv) in g.values.iter_mut().zip(&m[i * p..(i + 1) * p]) {
                *gv += v * mv;
            }
        }
    }
    Ok(g)
}

pub fn rtrl_gradient<C: RecurrentCell>(
    cell: &C,
    tokens: &[usize],
    y: f64,
    schedule: &RefinementSchedule,
    cap: usize,
    rng: &mut dyn RngCore,
) -> Result<GradientBundle> {
    if schedule.hints.len() != tokens.len() {
        return Err(Error::Input("schedule length differs from sample length".into()));
    }
    let traj = cell.unroll(tokens, &schedule.repeats(), rng)?;
    rtrl(cell, &traj, y, cap)
}

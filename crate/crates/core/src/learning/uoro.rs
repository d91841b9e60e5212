use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{logit_gradient, GradientBundle, RecurrentCell, RefinementSchedule, Trajectory};
use crate::error::{Error, Result};

const FLOOR: f64 = 1e-7;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rank-one estimate ∂z_t/∂Θ ≈ z̃_t ⊗ θ̃_t with z̃_0 = 0, θ̃_0 = 0:
///
/// z̃ ← ρ₀·A z̃ + ρ₁·ν,  θ̃ ← θ̃/ρ₀ + (νᵀB)/ρ₁,  ν ∈ {±1}^J.
///
/// `nu_rng` only drives the sign vectors, so a fixed trajectory can be
/// re-estimated many times.
pub fn uoro<C: RecurrentCell, R: Rng + ?Sized>(cell: &C, traj: &Trajectory, y: f64, nu_rng: &mut R) -> GradientBundle {
    let j = cell.state_dim();
    let p = cell.param_count();
    let off = cell.output_offset();
    let w_o = cell.output_weights();
    let jo = w_o.len();
    let mut g = GradientBundle::zeros_like(cell);
    let mut zt = vec![0.0; j];
    let mut tt = vec![0.0; p];
    let mut nb = vec![0.0; p];
    for st in &traj.steps {
        let nu: Vec<f64> = (0..j).map(|_| if nu_rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let az = cell.jvp_state(st, &zt);
        nb.iter_mut().for_each(|x| *x = 0.0);
        cell.vjp_params(st, &nu, &mut nb);

        let theta_norm = norm(&tt);
        let rho0 = if theta_norm == 0.0 { 1.0 } else { (theta_norm / norm(&az).max(FLOOR)).sqrt() };
        let nb_norm = norm(&nb);
        let rho1 = if nb_norm == 0.0 { 1.0 } else { (nb_norm / norm(&nu).max(FLOOR)).sqrt() };

        for ((z, a), n) in zt.iter_mut().zip(&az).zip(&nu) {
            *z = rho0 * a + rho1 * n;
        }
        for (t, b) in tt.iter_mut().zip(&nb) {
            *t = *t / rho0 + b / rho1;
        }

        let d = logit_gradient(st.yhat, y);
        if d == 0.0 {
            continue;
        }
        for (i, &zi) in st.z[..jo].iter().enumerate() {
            g.values[off + i] += d * zi;
        }
        g.values[off + jo] += d;
        let scale = d * w_o.iter().zip(&zt).map(|(w, z)| w * z).sum::<f64>();
        if scale != 0.0 {
            for (gv, t) in g.values.iter_mut().zip(&tt) {
                *gv += scale * t;
            }
        }
    }
    g
}

/// Unrolls with `rng`, then draws the sign stream from a seed taken from `rng`.
pub fn uoro_gradient_stream<C: RecurrentCell>(
    cell: &C,
    tokens: &[usize],
    y: f64,
    schedule: &RefinementSchedule,
    rng: &mut dyn RngCore,
) -> Result<GradientBundle> {
    if schedule.hints.len() != tokens.len() {
        return Err(Error::Input("schedule length differs from sample length".into()));
    }
    let traj = cell.unroll(tokens, &schedule.repeats(), rng)?;
    let mut nu = ChaCha8Rng::seed_from_u64(rng.next_u64());
    Ok(uoro(cell, &traj, y, &mut nu))
}

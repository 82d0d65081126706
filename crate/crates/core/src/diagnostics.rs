//! Independent cross-checks of solved trajectories.
//!
//! These routines deliberately avoid the solver's own quadrature path:
//! they drive the dynamics forward from the initial state under the
//! stored control signal and accumulate the hard running reward by plain
//! midpoint Riemann sums at a caller-chosen refinement. Agreement with
//! the stored values is evidence, not construction.

use crate::game::{running_reward, terminal_reward, Control, GameGeometry, JointState, Player};
use crate::solver::EquilibriumTrajectory;

/// Linear interpolation of the stored fine control signal.
fn control_at(fine: &[(f64, Control, Control)], t: f64) -> (f64, f64) {
    match fine.binary_search_by(|probe| probe.0.partial_cmp(&t).unwrap()) {
        Ok(i) => (fine[i].1 .0, fine[i].2 .0),
        Err(0) => (fine[0].1 .0, fine[0].2 .0),
        Err(i) if i >= fine.len() => {
            let last = fine.last().unwrap();
            (last.1 .0, last.2 .0)
        }
        Err(i) => {
            let (t0, a1, a2) = fine[i - 1];
            let (t1, b1, b2) = fine[i];
            let w = (t - t0) / (t1 - t0);
            (a1.0 + (b1.0 - a1.0) * w, a2.0 + (b2.0 - a2.0) * w)
        }
    }
}

/// Recompute both players' initial values by re-integrating the stored
/// control signal at `refine` substeps per stored fine step.
pub fn reintegrate_initial_values(
    traj: &EquilibriumTrajectory,
    geom: &GameGeometry,
    refine: usize,
) -> (f64, f64) {
    let x0 = traj.states[0];
    let t0 = traj.times[0];
    let t_end = *traj.times.last().unwrap();
    if t_end <= t0 {
        return traj.values[0];
    }
    let n = (traj.fine_controls.len().max(2) - 1) * refine.max(1);
    let h = (t_end - t0) / n as f64;
    let mut p1 = x0.p1;
    let mut p2 = x0.p2;
    let mut reward = (0.0, 0.0);
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let (u1, u2) = control_at(&traj.fine_controls, t + 0.5 * h);
        // Midpoint state under locally constant control.
        let s_mid = JointState::new(
            p1.d + 0.5 * h * p1.v + 0.125 * h * h * u1,
            p1.v + 0.5 * h * u1,
            p2.d + 0.5 * h * p2.v + 0.125 * h * h * u2,
            p2.v + 0.5 * h * u2,
            t + 0.5 * h,
        );
        reward.0 += h * running_reward(&s_mid, Control(u1), Player::One, traj.config.theta1, geom, false);
        reward.1 += h * running_reward(&s_mid, Control(u2), Player::Two, traj.config.theta2, geom, false);
        p1.d += h * p1.v + 0.5 * h * h * u1;
        p1.v += h * u1;
        p2.d += h * p2.v + 0.5 * h * h * u2;
        p2.v += h * u2;
    }
    let s_end = JointState::new(p1.d, p1.v, p2.d, p2.v, t_end);
    (
        reward.0 + terminal_reward(&s_end, Player::One, geom),
        reward.1 + terminal_reward(&s_end, Player::Two, geom),
    )
}

/// Worst relative error of the stored initial values against the
/// re-integration oracle.
pub fn value_consistency_error(traj: &EquilibriumTrajectory, geom: &GameGeometry, refine: usize) -> f64 {
    let (nu1, nu2) = reintegrate_initial_values(traj, geom, refine);
    let e1 = (nu1 - traj.values[0].0).abs() / traj.values[0].0.abs().max(1.0);
    let e2 = (nu2 - traj.values[0].1).abs() / traj.values[0].1.abs().max(1.0);
    e1.max(e2)
}

/// Largest Hamiltonian stationarity violation along a trajectory:
/// `|lambda_v - 2u|` at interior controls, and the sign-violating part of
/// it at clamped controls.
pub fn stationarity_violation(traj: &EquilibriumTrajectory, geom: &GameGeometry) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..traj.samples() {
        for p in Player::BOTH {
            let u = traj.control_of(p, k).0;
            let lv = traj.costate_of(p, k).own_speed_component(p);
            let dh_du = lv - 2.0 * u;
            let v = if (u - geom.u_max).abs() < 1e-12 {
                // At the upper clamp the derivative must push upward...
                (-dh_du).max(0.0)
            } else if (u - geom.u_min).abs() < 1e-12 {
                // ...and downward at the lower clamp.
                dh_du.max(0.0)
            } else {
                dh_du.abs()
            };
            worst = worst.max(v);
        }
    }
    worst
}

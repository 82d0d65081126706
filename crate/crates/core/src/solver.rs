//! Two-point BVP solver for open-loop equilibrium trajectories.
//!
//! The necessary conditions couple the joint state `(d1, v1, d2, v2)`
//! with one 4-vector costate per player (the gradient of that player's
//! value over the full joint state), giving a 12-dimensional two-point
//! boundary value problem: states are pinned at the start, costates must
//! match the terminal-reward gradient at the horizon, and controls are
//! the pointwise Hamiltonian maximizers.
//!
//! The near-discontinuous collision penalty defeats single shooting, so
//! the solver uses multiple shooting with a damped Newton iteration and
//! a continuation schedule over the softening sharpness, re-using each
//! stage's solution as the next warm start. Value traces are quadratured
//! with the *hard* indicator so stored values reflect the true
//! discontinuous game; softening stays solver-internal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    collision_indicator, optimal_control, soft_indicator_deriv, soft_indicator_with_sharpness,
    terminal_reward, terminal_reward_gradient, Control, GameGeometry, JointState, Player,
    PlayerType, TypeConfig,
};

/// Gradient of one player's value with respect to the full joint state
/// `(d1, v1, d2, v2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costate(pub [f64; 4]);

impl Costate {
    /// Costate component paired with the player's own speed, which fixes
    /// the optimal control.
    pub fn own_speed_component(&self, player: Player) -> f64 {
        self.0[2 * player.index() + 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Multiple-shooting segment count over the full horizon.
    pub segments: usize,
    /// Max-norm tolerance on the full matching + boundary residual.
    pub newton_tol: f64,
    /// Newton iteration cap per continuation stage.
    pub max_newton_iters: usize,
    /// Softening sharpness continuation; the geometry's sharpness is
    /// appended as the final stage if not already last.
    pub gamma_schedule: Vec<f64>,
    /// RK4 substeps per sample interval.
    pub substeps_per_sample: usize,
    /// Trajectory sample spacing (s).
    pub sample_dt: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            segments: 10,
            newton_tol: 1e-6,
            max_newton_iters: 80,
            gamma_schedule: vec![1.0, 2.5],
            substeps_per_sample: 40,
            sample_dt: 0.1,
        }
    }
}

impl SolverOptions {
    /// Continuation stages ending exactly at the geometry's sharpness.
    fn stages(&self, geom: &GameGeometry) -> Vec<f64> {
        let target = geom.softening_sharpness;
        let mut out: Vec<f64> = self
            .gamma_schedule
            .iter()
            .copied()
            .filter(|g| *g > 0.0 && *g < target)
            .collect();
        out.push(target);
        out
    }
}

/// One converged BVP solution, sampled on the fixed time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumTrajectory {
    pub config: TypeConfig,
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
    pub controls: Vec<(Control, Control)>,
    pub costates: Vec<(Costate, Costate)>,
    /// Cost-to-go of each player at each sample, from hard-indicator
    /// quadrature plus the terminal reward.
    pub values: Vec<(f64, f64)>,
    /// Control signal at the solver's substep resolution. The coarse
    /// `controls` samples cannot place the penalty-window edges precisely
    /// enough for sub-0.1% value cross-checks; re-integration oracles use
    /// this trace.
    pub fine_controls: Vec<(f64, Control, Control)>,
    /// Max-norm of the terminal costate mismatch.
    pub boundary_residual: f64,
}

impl EquilibriumTrajectory {
    pub fn samples(&self) -> usize {
        self.times.len()
    }

    pub fn value_of(&self, player: Player, k: usize) -> f64 {
        match player {
            Player::One => self.values[k].0,
            Player::Two => self.values[k].1,
        }
    }

    pub fn costate_of(&self, player: Player, k: usize) -> &Costate {
        match player {
            Player::One => &self.costates[k].0,
            Player::Two => &self.costates[k].1,
        }
    }

    pub fn control_of(&self, player: Player, k: usize) -> Control {
        match player {
            Player::One => self.controls[k].0,
            Player::Two => self.controls[k].1,
        }
    }
}

/// Derivative of the 12-vector `(x, lambda_1, lambda_2)` with controls
/// substituted by the Hamiltonian argmax and the softened penalty from
/// the geometry's sharpness.
pub fn bvp_rhs(
    s: &JointState,
    lambda1: &Costate,
    lambda2: &Costate,
    config: &TypeConfig,
    geom: &GameGeometry,
) -> [f64; 12] {
    let mut y = [0.0; 12];
    y[0] = s.p1.d;
    y[1] = s.p1.v;
    y[2] = s.p2.d;
    y[3] = s.p2.v;
    y[4..8].copy_from_slice(&lambda1.0);
    y[8..12].copy_from_slice(&lambda2.0);
    rhs12(&y, config, geom, geom.softening_sharpness)
}

/// RHS over the packed 12-vector `[d1, v1, d2, v2, l1(4), l2(4)]`.
fn rhs12(y: &[f64; 12], config: &TypeConfig, geom: &GameGeometry, gamma: f64) -> [f64; 12] {
    let (d1, v1, d2, v2) = (y[0], y[1], y[2], y[3]);
    let l1 = &y[4..8];
    let l2 = &y[8..12];
    let u1 = geom.clamp_control(l1[1] / 2.0);
    let u2 = geom.clamp_control(l2[3] / 2.0);
    let b = geom.collision_penalty;

    // Softened occupancy factors and their position derivatives. Player
    // i's own box uses theta_i, the opposing box is always aggressive.
    let s1_own = soft_indicator_with_sharpness(d1, config.theta1, geom, gamma);
    let s1_own_dd = soft_indicator_deriv(d1, config.theta1, geom, gamma);
    let s2_own = soft_indicator_with_sharpness(d2, config.theta2, geom, gamma);
    let s2_own_dd = soft_indicator_deriv(d2, config.theta2, geom, gamma);
    let s1_agg = soft_indicator_with_sharpness(d1, PlayerType::Aggressive, geom, gamma);
    let s1_agg_dd = soft_indicator_deriv(d1, PlayerType::Aggressive, geom, gamma);
    let s2_agg = soft_indicator_with_sharpness(d2, PlayerType::Aggressive, geom, gamma);
    let s2_agg_dd = soft_indicator_deriv(d2, PlayerType::Aggressive, geom, gamma);

    // lambda_i' = -grad_x H_i with H_i = lambda_i . f + l_i.
    let dh1 = [
        -b * s1_own_dd * s2_agg, // d/d d1 of -b s(d1,t1) s(d2,agg)
        l1[0],
        -b * s1_own * s2_agg_dd,
        l1[2],
    ];
    let dh2 = [
        -b * s2_own * s1_agg_dd,
        l2[0],
        -b * s2_own_dd * s1_agg,
        l2[2],
    ];

    [
        v1,
        u1,
        v2,
        u2,
        -dh1[0],
        -dh1[1],
        -dh1[2],
        -dh1[3],
        -dh2[0],
        -dh2[1],
        -dh2[2],
        -dh2[3],
    ]
}

fn rk4_step(y: &[f64; 12], h: f64, config: &TypeConfig, geom: &GameGeometry, gamma: f64) -> [f64; 12] {
    let k1 = rhs12(y, config, geom, gamma);
    let mut y2 = *y;
    for i in 0..12 {
        y2[i] = y[i] + 0.5 * h * k1[i];
    }
    let k2 = rhs12(&y2, config, geom, gamma);
    for i in 0..12 {
        y2[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = rhs12(&y2, config, geom, gamma);
    for i in 0..12 {
        y2[i] = y[i] + h * k3[i];
    }
    let k4 = rhs12(&y2, config, geom, gamma);
    let mut out = *y;
    for i in 0..12 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Time grid shared by the shooting segments and the output samples.
struct Grid {
    t0: f64,
    dt: f64,
    n_intervals: usize,
    /// Sample indices of the segment boundaries, `[0, ..., n_intervals]`.
    seg_bounds: Vec<usize>,
    substeps: usize,
}

impl Grid {
    fn new(t0: f64, horizon: f64, opts: &SolverOptions) -> Grid {
        let remaining = horizon - t0;
        let n_intervals = ((remaining / opts.sample_dt).round() as usize).max(1);
        let dt = remaining / n_intervals as f64;
        let m = opts.segments.clamp(1, n_intervals);
        let seg_bounds: Vec<usize> = (0..=m)
            .map(|j| (j * n_intervals + m / 2) / m)
            .collect();
        Grid { t0, dt, n_intervals, seg_bounds, substeps: opts.substeps_per_sample.max(1) }
    }

    fn segment_count(&self) -> usize {
        self.seg_bounds.len() - 1
    }

    fn sample_time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
}

/// Integrate from sample `from` to sample `to`, optionally recording the
/// fine trail (one entry per substep, including both endpoints).
fn propagate(
    mut y: [f64; 12],
    grid: &Grid,
    from: usize,
    to: usize,
    config: &TypeConfig,
    geom: &GameGeometry,
    gamma: f64,
    mut trail: Option<&mut Vec<(f64, [f64; 12])>>,
) -> [f64; 12] {
    let h = grid.dt / grid.substeps as f64;
    if let Some(t) = trail.as_deref_mut() {
        t.push((grid.sample_time(from), y));
    }
    for i in from..to {
        let t_base = grid.sample_time(i);
        for k in 0..grid.substeps {
            y = rk4_step(&y, h, config, geom, gamma);
            if let Some(t) = trail.as_deref_mut() {
                t.push((t_base + (k + 1) as f64 * h, y));
            }
        }
    }
    y
}

/// Analytic solution of the decoupled, penalty-free problem; the Newton
/// warm start. Cross costate blocks are zero, position costates constant.
fn analytic_warm_start(p0: crate::game::PlayerState, t: f64, t0: f64, geom: &GameGeometry) -> (f64, f64, f64, f64) {
    let alpha = geom.terminal_position_weight;
    let horizon = geom.horizon;
    let total = horizon - t0;
    let v_t = (p0.v + total * geom.nominal_speed + alpha * total * total / 4.0) / (1.0 + total);
    let k = v_t - geom.nominal_speed;
    let tau = t - t0;
    let v = p0.v - k * tau + 0.5 * alpha * (total * tau - 0.5 * tau * tau);
    let d = p0.d + p0.v * tau - 0.5 * k * tau * tau
        + 0.5 * alpha * (0.5 * total * tau * tau - tau * tau * tau / 6.0);
    let lambda_d = alpha;
    let lambda_v = -2.0 * k + alpha * (horizon - t);
    (d, v, lambda_d, lambda_v)
}

fn pack_initial(x0: &JointState, lambda: &[f64]) -> [f64; 12] {
    let mut y = [0.0; 12];
    y[0] = x0.p1.d;
    y[1] = x0.p1.v;
    y[2] = x0.p2.d;
    y[3] = x0.p2.v;
    y[4..12].copy_from_slice(lambda);
    y
}

fn state_of(y: &[f64; 12], t: f64) -> JointState {
    JointState::new(y[0], y[1], y[2], y[3], t)
}

/// Terminal defect `lambda(T) - grad c(x(T))`, 8 components.
fn terminal_defect(y_end: &[f64; 12], horizon: f64, geom: &GameGeometry) -> [f64; 8] {
    let s = state_of(y_end, horizon);
    let g1 = terminal_reward_gradient(&s, Player::One, geom);
    let g2 = terminal_reward_gradient(&s, Player::Two, geom);
    let mut out = [0.0; 8];
    for i in 0..4 {
        out[i] = y_end[4 + i] - g1[i];
        out[4 + i] = y_end[8 + i] - g2[i];
    }
    out
}

struct Shooting<'a> {
    grid: &'a Grid,
    x0: &'a JointState,
    config: &'a TypeConfig,
    geom: &'a GameGeometry,
    gamma: f64,
}

impl Shooting<'_> {
    fn dim(&self) -> usize {
        8 + 12 * (self.grid.segment_count() - 1)
    }

    fn node_start(&self, z: &DVector<f64>, j: usize) -> [f64; 12] {
        if j == 0 {
            pack_initial(self.x0, &z.as_slice()[..8])
        } else {
            let mut y = [0.0; 12];
            y.copy_from_slice(&z.as_slice()[8 + 12 * (j - 1)..8 + 12 * j]);
            y
        }
    }

    fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let m = self.grid.segment_count();
        let mut f = DVector::zeros(self.dim());
        for j in 0..m {
            let y_end = propagate(
                self.node_start(z, j),
                self.grid,
                self.grid.seg_bounds[j],
                self.grid.seg_bounds[j + 1],
                self.config,
                self.geom,
                self.gamma,
                None,
            );
            if j + 1 < m {
                let next = self.node_start(z, j + 1);
                for i in 0..12 {
                    f[12 * j + i] = y_end[i] - next[i];
                }
            } else {
                let defect = terminal_defect(&y_end, self.geom.horizon, self.geom);
                for i in 0..8 {
                    f[12 * (m - 1) + i] = defect[i];
                }
            }
        }
        f
    }

    /// Dense Jacobian from per-segment forward differences; identity
    /// couplings to the next node are analytic.
    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let m = self.grid.segment_count();
        let dim = self.dim();
        let mut jac = DMatrix::zeros(dim, dim);

        for j in 0..m {
            let y_start = self.node_start(z, j);
            let y_end = propagate(
                y_start,
                self.grid,
                self.grid.seg_bounds[j],
                self.grid.seg_bounds[j + 1],
                self.config,
                self.geom,
                self.gamma,
                None,
            );
            let (col0, ncols, comp0) = if j == 0 { (0, 8, 4) } else { (8 + 12 * (j - 1), 12, 0) };
            let row0 = 12 * j;
            for c in 0..ncols {
                let comp = comp0 + c;
                let h = 1e-7 * (1.0 + y_start[comp].abs());
                let mut yp = y_start;
                yp[comp] += h;
                let end_p = propagate(
                    yp,
                    self.grid,
                    self.grid.seg_bounds[j],
                    self.grid.seg_bounds[j + 1],
                    self.config,
                    self.geom,
                    self.gamma,
                    None,
                );
                if j + 1 < m {
                    for r in 0..12 {
                        jac[(row0 + r, col0 + c)] = (end_p[r] - y_end[r]) / h;
                    }
                } else {
                    let d0 = terminal_defect(&y_end, self.geom.horizon, self.geom);
                    let dp = terminal_defect(&end_p, self.geom.horizon, self.geom);
                    for r in 0..8 {
                        jac[(row0 + r, col0 + c)] = (dp[r] - d0[r]) / h;
                    }
                }
            }
            if j + 1 < m {
                let next_col0 = 8 + 12 * j;
                for r in 0..12 {
                    jac[(row0 + r, next_col0 + r)] = -1.0;
                }
            }
        }
        jac
    }
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solve the equilibrium BVP from `x0` (its `t` is the start time).
///
/// On success the returned trajectory satisfies the terminal costate
/// condition to `opts.newton_tol` in max-norm; values come from
/// hard-indicator quadrature.
pub fn solve_bvp(
    x0: &JointState,
    config: &TypeConfig,
    geom: &GameGeometry,
    opts: &SolverOptions,
) -> Result<EquilibriumTrajectory> {
    geom.validate()?;
    if x0.t > geom.horizon + 1e-9 {
        return Err(Error::InvalidInput(format!(
            "start time {} beyond horizon {}",
            x0.t, geom.horizon
        )));
    }
    if geom.horizon - x0.t < 1e-9 {
        return Ok(terminal_trajectory(x0, config, geom));
    }

    let grid = Grid::new(x0.t, geom.horizon, opts);
    let m = grid.segment_count();

    // Warm start from the decoupled penalty-free solution.
    let mut z = DVector::zeros(8 + 12 * (m - 1));
    {
        let (_, _, ld1, lv1) = analytic_warm_start(x0.p1, x0.t, x0.t, geom);
        let (_, _, ld2, lv2) = analytic_warm_start(x0.p2, x0.t, x0.t, geom);
        z[0] = ld1;
        z[1] = lv1;
        z[6] = ld2;
        z[7] = lv2;
        for j in 1..m {
            let t = grid.sample_time(grid.seg_bounds[j]);
            let (d1, v1, ld1, lv1) = analytic_warm_start(x0.p1, t, x0.t, geom);
            let (d2, v2, ld2, lv2) = analytic_warm_start(x0.p2, t, x0.t, geom);
            let base = 8 + 12 * (j - 1);
            let node = [d1, v1, d2, v2, ld1, lv1, 0.0, 0.0, 0.0, 0.0, ld2, lv2];
            for (i, v) in node.iter().enumerate() {
                z[base + i] = *v;
            }
        }
    }

    let mut total_iters = 0usize;
    for gamma in opts.stages(geom) {
        let shooting = Shooting { grid: &grid, x0, config, geom, gamma };
        let mut f = shooting.residual(&z);
        let mut fnorm = max_norm(&f);
        let mut converged = fnorm <= opts.newton_tol;
        let mut iters = 0usize;
        while !converged && iters < opts.max_newton_iters {
            iters += 1;
            total_iters += 1;
            let jac = shooting.jacobian(&z);
            let lu = jac.lu();
            let Some(step) = lu.solve(&(-&f)) else {
                return Err(Error::NonConvergence { residual: fnorm, iterations: total_iters });
            };
            // Backtracking damping on the residual max-norm.
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= 1.0 / 1024.0 {
                let z_try = &z + &step * alpha;
                let f_try = shooting.residual(&z_try);
                let f_try_norm = max_norm(&f_try);
                if f_try_norm < (1.0 - 1e-4 * alpha) * fnorm || f_try_norm <= opts.newton_tol {
                    z = z_try;
                    f = f_try;
                    fnorm = f_try_norm;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence { residual: fnorm, iterations: total_iters });
            }
            converged = fnorm <= opts.newton_tol;
        }
        if !converged {
            return Err(Error::NonConvergence { residual: fnorm, iterations: total_iters });
        }
    }

    assemble(&grid, &z, x0, config, geom, opts)
}

/// Degenerate trajectory for a start exactly at the horizon.
fn terminal_trajectory(x0: &JointState, config: &TypeConfig, geom: &GameGeometry) -> EquilibriumTrajectory {
    let s = JointState { t: geom.horizon, ..*x0 };
    let g1 = terminal_reward_gradient(&s, Player::One, geom);
    let g2 = terminal_reward_gradient(&s, Player::Two, geom);
    let u = (optimal_control(g1[1], geom), optimal_control(g2[3], geom));
    EquilibriumTrajectory {
        config: *config,
        times: vec![geom.horizon],
        states: vec![s],
        controls: vec![u],
        costates: vec![(Costate(g1), Costate(g2))],
        values: vec![(
            terminal_reward(&s, Player::One, geom),
            terminal_reward(&s, Player::Two, geom),
        )],
        fine_controls: vec![(geom.horizon, u.0, u.1)],
        boundary_residual: 0.0,
    }
}

/// Occupancy sub-intervals of `[0, h]` where the locally quadratic
/// position `d(tau) = d0 + v0 tau + u tau^2 / 2` lies in `[lo, hi]`.
fn occupancy_windows(d0: f64, v0: f64, u: f64, lo: f64, hi: f64, h: f64) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0, h];
    let mut push_roots = |c: f64| {
        // d(tau) = c  <=>  (u/2) tau^2 + v0 tau + (d0 - c) = 0
        let a = 0.5 * u;
        if a.abs() < 1e-12 {
            if v0.abs() > 1e-12 {
                let r = (c - d0) / v0;
                if r > 0.0 && r < h {
                    cuts.push(r);
                }
            }
        } else {
            let disc = v0 * v0 - 4.0 * a * (d0 - c);
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for r in [(-v0 + sq) / (2.0 * a), (-v0 - sq) / (2.0 * a)] {
                    if r > 0.0 && r < h {
                        cuts.push(r);
                    }
                }
            }
        }
    };
    push_roots(lo);
    push_roots(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut windows: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let d = d0 + v0 * mid + 0.5 * u * mid * mid;
        if d >= lo && d <= hi {
            match windows.last_mut() {
                Some(last) if (last.1 - a).abs() < 1e-15 => last.1 = b,
                _ => windows.push((a, b)),
            }
        }
    }
    windows
}

fn intersect_measure(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                total += hi - lo;
            }
        }
    }
    total
}

/// Hard-penalty occupancy time of one player's reward within a fine
/// step, from the local quadratics of both positions.
fn hard_penalty_time(
    y: &[f64; 12],
    u1: f64,
    u2: f64,
    own: Player,
    theta_own: PlayerType,
    geom: &GameGeometry,
    h: f64,
) -> f64 {
    let own_interval = geom.collision_interval(theta_own);
    let agg = geom.collision_interval(PlayerType::Aggressive);
    let (w_own, w_other) = match own {
        Player::One => (
            occupancy_windows(y[0], y[1], u1, own_interval.0, own_interval.1, h),
            occupancy_windows(y[2], y[3], u2, agg.0, agg.1, h),
        ),
        Player::Two => (
            occupancy_windows(y[2], y[3], u2, own_interval.0, own_interval.1, h),
            occupancy_windows(y[0], y[1], u1, agg.0, agg.1, h),
        ),
    };
    intersect_measure(&w_own, &w_other)
}

fn assemble(
    grid: &Grid,
    z: &DVector<f64>,
    x0: &JointState,
    config: &TypeConfig,
    geom: &GameGeometry,
    _opts: &SolverOptions,
) -> Result<EquilibriumTrajectory> {
    let m = grid.segment_count();
    let gamma = geom.softening_sharpness;
    let shooting = Shooting { grid, x0, config, geom, gamma };

    // Stitch per-segment fine trails from the converged node values.
    let mut trail: Vec<(f64, [f64; 12])> = Vec::new();
    for j in 0..m {
        let mut seg = Vec::new();
        propagate(
            shooting.node_start(z, j),
            grid,
            grid.seg_bounds[j],
            grid.seg_bounds[j + 1],
            config,
            geom,
            gamma,
            Some(&mut seg),
        );
        if j > 0 {
            seg.remove(0);
        }
        trail.extend(seg);
    }

    let boundary_residual = {
        let d = terminal_defect(&trail.last().unwrap().1, geom.horizon, geom);
        d.iter().fold(0.0f64, |mx, x| mx.max(x.abs()))
    };

    // Per fine step: control-effort trapezoid plus exact hard-penalty
    // occupancy time from local quadratics.
    let n_fine = trail.len() - 1;
    let mut reward_steps: Vec<(f64, f64)> = Vec::with_capacity(n_fine);
    for i in 0..n_fine {
        let (ta, ya) = &trail[i];
        let (tb, yb) = &trail[i + 1];
        let h = tb - ta;
        let (ua, u2a) = (geom.clamp_control(ya[5] / 2.0), geom.clamp_control(ya[11] / 2.0));
        let (ub, u2b) = (geom.clamp_control(yb[5] / 2.0), geom.clamp_control(yb[11] / 2.0));
        let effort1 = 0.5 * h * (ua * ua + ub * ub);
        let effort2 = 0.5 * h * (u2a * u2a + u2b * u2b);
        let pen1 = geom.collision_penalty
            * hard_penalty_time(ya, ua, u2a, Player::One, config.theta1, geom, h);
        let pen2 = geom.collision_penalty
            * hard_penalty_time(ya, ua, u2a, Player::Two, config.theta2, geom, h);
        reward_steps.push((-(effort1 + pen1), -(effort2 + pen2)));
    }

    // Samples sit every `substeps` fine nodes.
    let n_samples = grid.n_intervals + 1;
    let mut times = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples);
    let mut controls = Vec::with_capacity(n_samples);
    let mut costates = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let (t, y) = &trail[k * grid.substeps];
        times.push(*t);
        states.push(state_of(y, *t));
        controls.push((
            Control(geom.clamp_control(y[5] / 2.0)),
            Control(geom.clamp_control(y[11] / 2.0)),
        ));
        costates.push((
            Costate([y[4], y[5], y[6], y[7]]),
            Costate([y[8], y[9], y[10], y[11]]),
        ));
    }

    // Backward cumulative values.
    let s_end = states.last().unwrap();
    let mut values = vec![(0.0, 0.0); n_samples];
    values[n_samples - 1] = (
        terminal_reward(s_end, Player::One, geom),
        terminal_reward(s_end, Player::Two, geom),
    );
    for k in (0..n_samples - 1).rev() {
        let mut acc = (0.0, 0.0);
        for i in k * grid.substeps..(k + 1) * grid.substeps {
            acc.0 += reward_steps[i].0;
            acc.1 += reward_steps[i].1;
        }
        values[k] = (values[k + 1].0 + acc.0, values[k + 1].1 + acc.1);
    }

    let fine_controls = trail
        .iter()
        .map(|(t, y)| {
            (
                *t,
                Control(geom.clamp_control(y[5] / 2.0)),
                Control(geom.clamp_control(y[11] / 2.0)),
            )
        })
        .collect();

    Ok(EquilibriumTrajectory {
        config: *config,
        times,
        states,
        controls,
        costates,
        values,
        fine_controls,
        boundary_residual,
    })
}

/// True with the hard indicators: both players simultaneously inside
/// their penalty boxes at this state.
pub fn hard_penalty_active(s: &JointState, config: &TypeConfig, geom: &GameGeometry) -> bool {
    collision_indicator(s.p1.d, config.theta1, geom) > 0.0
        && collision_indicator(s.p2.d, PlayerType::Aggressive, geom) > 0.0
        || collision_indicator(s.p2.d, config.theta2, geom) > 0.0
            && collision_indicator(s.p1.d, PlayerType::Aggressive, geom) > 0.0
}

/// Whether a converged trajectory ever activates either player's penalty,
/// measured with both the hard product and the softened tails. Used to
/// select penalty-free trajectories for costate/value-gradient checks.
pub fn is_penalty_free(traj: &EquilibriumTrajectory, geom: &GameGeometry, soft_tol: f64) -> bool {
    traj.states.iter().all(|s| {
        let soft1 = crate::game::penalty_product(s, Player::One, traj.config.theta1, geom, true);
        let soft2 = crate::game::penalty_product(s, Player::Two, traj.config.theta2, geom, true);
        !hard_penalty_active(s, &traj.config, geom) && soft1 < soft_tol && soft2 < soft_tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom() -> GameGeometry {
        GameGeometry::default()
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    fn aa() -> TypeConfig {
        TypeConfig::ALL[0]
    }

    #[test]
    fn rhs_cross_speed_coupling_and_penalty_free_positions() {
        let g = geom();
        let s = JointState::new(10.0, 20.0, 12.0, 19.0, 0.0);
        let l1 = Costate([0.3, 2.0, -0.1, 0.4]);
        let l2 = Costate([0.2, -0.5, 0.6, 3.0]);
        let dy = bvp_rhs(&s, &l1, &l2, &aa(), &g);
        // Speed costate rates are minus the own-position costates.
        assert_relative_eq!(dy[5], -l1.0[0]);
        assert_relative_eq!(dy[7], -l1.0[2]);
        assert_relative_eq!(dy[9], -l2.0[0]);
        assert_relative_eq!(dy[11], -l2.0[2]);
        // Far from the conflict region the position costates are frozen
        // up to the exponentially small softened tails.
        assert!(dy[4].abs() < 1e-8);
        assert!(dy[6].abs() < 1e-8);
        // Dynamics block carries the argmax controls.
        assert_relative_eq!(dy[0], 20.0);
        assert_relative_eq!(dy[1], 1.0); // clamp(2/2)
        assert_relative_eq!(dy[3], 1.5); // clamp(3/2)
    }

    #[test]
    fn terminal_defect_is_gradient_of_terminal_reward() {
        let g = geom();
        let mut y = [0.0; 12];
        y[0] = 60.0;
        y[1] = 20.0;
        y[2] = 55.0;
        y[3] = 17.0;
        // lambda exactly at grad c: defect must vanish.
        y[4] = g.terminal_position_weight;
        y[5] = -2.0 * (20.0 - g.nominal_speed);
        y[10] = g.terminal_position_weight;
        y[11] = -2.0 * (17.0 - g.nominal_speed);
        let defect = terminal_defect(&y, g.horizon, &g);
        for d in defect {
            assert_relative_eq!(d, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn solves_far_past_intersection_to_analytic_solution() {
        let g = geom();
        // Both players already beyond the conflict region: the decoupled
        // restore-speed solution is exact up to softened tails.
        let x0 = JointState::new(45.0, 20.0, 47.0, 22.0, 0.0);
        let traj = solve_bvp(&x0, &aa(), &g, &opts()).unwrap();
        assert_eq!(traj.samples(), 31);
        assert!(traj.boundary_residual <= 1e-6);

        for (p, p0) in [(Player::One, x0.p1), (Player::Two, x0.p2)] {
            let (_, _, ld, lv) = analytic_warm_start(p0, 0.0, 0.0, &g);
            let l = traj.costate_of(p, 0);
            assert_relative_eq!(l.0[2 * p.index()], ld, max_relative = 1e-5, epsilon = 1e-8);
            assert_relative_eq!(l.0[2 * p.index() + 1], lv, max_relative = 1e-5, epsilon = 1e-8);
            // Analytic value: effort integral plus terminal reward.
            let total = g.horizon;
            let v_t = (p0.v + total * g.nominal_speed) / (1.0 + total);
            let u0 = -(v_t - g.nominal_speed);
            // With alpha ~ 1e-6 the control is nearly constant u0.
            let effort = u0 * u0 * total;
            let d_t = p0.d + 0.5 * (p0.v + v_t) * total;
            let c = g.terminal_position_weight * d_t - (v_t - g.nominal_speed).powi(2);
            let nu = traj.value_of(p, 0);
            assert_relative_eq!(nu, c - effort, max_relative = 1e-3, epsilon = 1e-4);
            // Controls stay penalty-free and interior.
            let u = traj.control_of(p, 0);
            assert_relative_eq!(u.0, u0, max_relative = 1e-3, epsilon = 1e-4);
        }
    }

    #[test]
    fn symmetric_initial_state_gives_swap_symmetric_trajectory() {
        let g = geom();
        let x0 = JointState::new(17.0, 20.0, 17.0, 20.0, 0.0);
        let traj = solve_bvp(&x0, &aa(), &g, &opts()).unwrap();
        for k in 0..traj.samples() {
            let s = &traj.states[k];
            assert_relative_eq!(s.p1.d, s.p2.d, max_relative = 1e-6, epsilon = 1e-6);
            assert_relative_eq!(s.p1.v, s.p2.v, max_relative = 1e-6, epsilon = 1e-6);
            let (u1, u2) = traj.controls[k];
            assert_relative_eq!(u1.0, u2.0, max_relative = 1e-5, epsilon = 1e-6);
            let (l1, l2) = (traj.costates[k].0 .0, traj.costates[k].1 .0);
            // lambda_2 mirrors lambda_1 with the player blocks swapped.
            assert_relative_eq!(l1[0], l2[2], max_relative = 1e-5, epsilon = 1e-7);
            assert_relative_eq!(l1[1], l2[3], max_relative = 1e-5, epsilon = 1e-7);
            let (v1, v2) = traj.values[k];
            assert_relative_eq!(v1, v2, max_relative = 1e-6, epsilon = 1e-6);
        }
    }

    #[test]
    fn stored_values_match_independent_reintegration() {
        let g = geom();
        // One penalty-crossing and one penalty-free start.
        for x0 in [
            JointState::new(16.0, 21.0, 18.5, 19.0, 0.0),
            JointState::new(45.0, 20.0, 47.0, 22.0, 0.0),
        ] {
            let traj = solve_bvp(&x0, &aa(), &g, &opts()).unwrap();
            let err = crate::diagnostics::value_consistency_error(&traj, &g, 8);
            assert!(err < 1e-3, "value consistency {err:.3e} at {x0:?}");
        }
    }

    #[test]
    fn occupancy_windows_handle_crossings() {
        // Constant speed 10 m/s entering [34.25, 38.75] from d0 = 30.
        let w = occupancy_windows(30.0, 10.0, 0.0, 34.25, 38.75, 1.0);
        assert_eq!(w.len(), 1);
        assert_relative_eq!(w[0].0, 0.425, epsilon = 1e-12);
        assert_relative_eq!(w[0].1, 0.875, epsilon = 1e-12);
        // Entirely inside.
        let w = occupancy_windows(36.0, 0.0, 0.0, 34.25, 38.75, 0.5);
        assert_eq!(w, vec![(0.0, 0.5)]);
        // Entirely outside.
        let w = occupancy_windows(10.0, 1.0, 0.0, 34.25, 38.75, 0.5);
        assert!(w.is_empty());
    }

    #[test]
    fn start_at_horizon_returns_terminal_sample() {
        let g = geom();
        let x0 = JointState::new(50.0, 19.0, 52.0, 18.0, g.horizon);
        let traj = solve_bvp(&x0, &aa(), &g, &opts()).unwrap();
        assert_eq!(traj.samples(), 1);
        assert_relative_eq!(traj.values[0].0, terminal_reward(&traj.states[0], Player::One, &g));
    }
}


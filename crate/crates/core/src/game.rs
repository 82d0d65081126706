//! Intersection game definition.
//!
//! Two cars approach an uncontrolled intersection, each moving along its
//! own road with double-integrator dynamics. Players are rewarded for
//! crossing and restoring nominal speed, and heavily penalized when both
//! occupy the conflict region at once. Everything here is a pure function
//! of its arguments; all other modules build on these definitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position and speed of one car along its own road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerState {
    /// Position along own road (m).
    pub d: f64,
    /// Speed (m/s).
    pub v: f64,
}

/// Joint state of both players plus time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub p1: PlayerState,
    pub p2: PlayerState,
    /// Time (s) in `[0, horizon]`.
    pub t: f64,
}

impl JointState {
    pub fn new(d1: f64, v1: f64, d2: f64, v2: f64, t: f64) -> Self {
        Self {
            p1: PlayerState { d: d1, v: v1 },
            p2: PlayerState { d: d2, v: v2 },
            t,
        }
    }

    /// Coordinates in the fixed `(d1, v1, d2, v2, t)` order used as
    /// network input and dataset layout.
    pub fn as_array(&self) -> [f64; 5] {
        [self.p1.d, self.p1.v, self.p2.d, self.p2.v, self.t]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    /// Same instant with the two players exchanged.
    pub fn swap_players(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
            t: self.t,
        }
    }

    pub fn player(&self, p: Player) -> PlayerState {
        match p {
            Player::One => self.p1,
            Player::Two => self.p2,
        }
    }
}

/// Player identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::One, Player::Two];

    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn other(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    pub fn from_index(i: usize) -> Option<Player> {
        match i {
            0 => Some(Player::One),
            1 => Some(Player::Two),
            _ => None,
        }
    }
}

/// Driving style. The numeric width factor scales how much of the
/// intersection a player treats as unsafe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlayerType {
    Aggressive,
    NonAggressive,
}

impl PlayerType {
    /// Width factor of the occupancy interval (1 for aggressive, 5 for
    /// non-aggressive: cautious players keep clear of a larger region).
    pub fn width_factor(self) -> f64 {
        match self {
            PlayerType::Aggressive => 1.0,
            PlayerType::NonAggressive => 5.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            PlayerType::Aggressive => "a",
            PlayerType::NonAggressive => "na",
        }
    }

    pub fn parse(s: &str) -> Option<PlayerType> {
        match s {
            "a" => Some(PlayerType::Aggressive),
            "na" => Some(PlayerType::NonAggressive),
            _ => None,
        }
    }
}

/// One of the four complete-information games, fixed by both players'
/// types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypeConfig {
    pub theta1: PlayerType,
    pub theta2: PlayerType,
}

impl TypeConfig {
    pub const ALL: [TypeConfig; 4] = [
        TypeConfig { theta1: PlayerType::Aggressive, theta2: PlayerType::Aggressive },
        TypeConfig { theta1: PlayerType::Aggressive, theta2: PlayerType::NonAggressive },
        TypeConfig { theta1: PlayerType::NonAggressive, theta2: PlayerType::Aggressive },
        TypeConfig { theta1: PlayerType::NonAggressive, theta2: PlayerType::NonAggressive },
    ];

    pub fn new(theta1: PlayerType, theta2: PlayerType) -> Self {
        Self { theta1, theta2 }
    }

    pub fn type_of(&self, p: Player) -> PlayerType {
        match p {
            Player::One => self.theta1,
            Player::Two => self.theta2,
        }
    }

    /// Copy with one player's type replaced. Used for belief hypotheses.
    pub fn with_type(mut self, p: Player, theta: PlayerType) -> Self {
        match p {
            Player::One => self.theta1 = theta,
            Player::Two => self.theta2 = theta,
        }
        self
    }

    /// Stable index into `ALL`.
    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).expect("exhaustive")
    }

    /// Short tag like `a-na`, usable in file names and flags.
    pub fn tag(&self) -> String {
        format!("{}-{}", self.theta1.tag(), self.theta2.tag())
    }

    pub fn parse(s: &str) -> Option<TypeConfig> {
        let (a, b) = s.split_once('-')?;
        Some(TypeConfig::new(PlayerType::parse(a)?, PlayerType::parse(b)?))
    }

    pub fn is_symmetric(&self) -> bool {
        self.theta1 == self.theta2
    }
}

/// Acceleration input (m/s^2).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Control(pub f64);

/// Geometry and reward constants of the intersection game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameGeometry {
    /// Road length R (m); the conflict region sits at the road midpoint.
    pub road_length: f64,
    /// Car length (m).
    pub car_length: f64,
    /// Car width W (m).
    pub car_width: f64,
    /// Collision penalty weight b (reward units per second of overlap).
    pub collision_penalty: f64,
    /// Terminal position weight alpha.
    pub terminal_position_weight: f64,
    /// Nominal speed to restore at the horizon (m/s).
    pub nominal_speed: f64,
    /// Interaction horizon T (s).
    pub horizon: f64,
    /// Lower control bound (m/s^2).
    pub u_min: f64,
    /// Upper control bound (m/s^2).
    pub u_max: f64,
    /// Logistic sharpness gamma (1/m) of the softened occupancy
    /// indicator used inside the BVP solver and the PDE residual.
    pub softening_sharpness: f64,
}

impl Default for GameGeometry {
    fn default() -> Self {
        Self {
            road_length: 70.0,
            car_length: 3.0,
            car_width: 1.5,
            collision_penalty: 1e4,
            terminal_position_weight: 1e-6,
            nominal_speed: 18.0,
            horizon: 3.0,
            u_min: -5.0,
            u_max: 10.0,
            softening_sharpness: 5.0,
        }
    }
}

impl GameGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("road_length", self.road_length),
            ("car_length", self.car_length),
            ("car_width", self.car_width),
            ("softening_sharpness", self.softening_sharpness),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.u_min < self.u_max) {
            return Err(Error::Config(format!(
                "control bounds must satisfy u_min < u_max, got [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        Ok(())
    }

    /// Closed interval of own positions a player of the given type treats
    /// as occupying the intersection: `[R/2 - theta W/2, (R+W)/2 + L]`.
    pub fn collision_interval(&self, theta: PlayerType) -> (f64, f64) {
        let lo = self.road_length / 2.0 - theta.width_factor() * self.car_width / 2.0;
        let hi = (self.road_length + self.car_width) / 2.0 + self.car_length;
        (lo, hi)
    }

    pub fn clamp_control(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

/// Joint state derivative `(d1', v1', d2', v2')` under the
/// double-integrator dynamics.
pub fn dynamics(s: &JointState, u1: Control, u2: Control) -> [f64; 4] {
    [s.p1.v, u1.0, s.p2.v, u2.0]
}

/// Hard occupancy indicator: 1 iff `d` lies in the closed collision
/// interval for the given type.
pub fn collision_indicator(d: f64, theta: PlayerType, geom: &GameGeometry) -> f64 {
    let (lo, hi) = geom.collision_interval(theta);
    if d >= lo && d <= hi {
        1.0
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic-product softening of [`collision_indicator`]:
/// `sig(gamma (d - lo)) * sig(gamma (hi - d))`. Converges pointwise to
/// the hard indicator as gamma grows, except at the interval endpoints.
pub fn soft_collision_indicator(d: f64, theta: PlayerType, geom: &GameGeometry) -> f64 {
    soft_indicator_with_sharpness(d, theta, geom, geom.softening_sharpness)
}

/// Softened indicator with an explicit sharpness, for continuation
/// schedules that solve with a blunter ramp first.
pub fn soft_indicator_with_sharpness(
    d: f64,
    theta: PlayerType,
    geom: &GameGeometry,
    gamma: f64,
) -> f64 {
    let (lo, hi) = geom.collision_interval(theta);
    sigmoid(gamma * (d - lo)) * sigmoid(gamma * (hi - d))
}

/// Derivative of the softened indicator with respect to `d`.
pub fn soft_indicator_deriv(d: f64, theta: PlayerType, geom: &GameGeometry, gamma: f64) -> f64 {
    let (lo, hi) = geom.collision_interval(theta);
    let a = sigmoid(gamma * (d - lo));
    let b = sigmoid(gamma * (hi - d));
    gamma * a * (1.0 - a) * b - gamma * a * b * (1.0 - b)
}

/// Occupancy product `sigma(d_i, theta_i) * sigma(d_-i, aggressive)` for
/// one player. The other player's position is always measured against the
/// aggressive (physical) box.
pub fn penalty_product(
    s: &JointState,
    player: Player,
    theta_own: PlayerType,
    geom: &GameGeometry,
    softened: bool,
) -> f64 {
    let (own, other) = match player {
        Player::One => (s.p1.d, s.p2.d),
        Player::Two => (s.p2.d, s.p1.d),
    };
    if softened {
        soft_collision_indicator(own, theta_own, geom)
            * soft_collision_indicator(other, PlayerType::Aggressive, geom)
    } else {
        collision_indicator(own, theta_own, geom)
            * collision_indicator(other, PlayerType::Aggressive, geom)
    }
}

/// Instantaneous reward rate `-u^2 - b sigma sigma` for one player.
pub fn running_reward(
    s: &JointState,
    u: Control,
    player: Player,
    theta_own: PlayerType,
    geom: &GameGeometry,
    softened: bool,
) -> f64 {
    -u.0 * u.0 - geom.collision_penalty * penalty_product(s, player, theta_own, geom, softened)
}

/// Terminal reward `alpha d_i(T) - (v_i(T) - nominal)^2`. The caller is
/// responsible for evaluating this at the horizon.
pub fn terminal_reward(s: &JointState, player: Player, geom: &GameGeometry) -> f64 {
    let p = s.player(player);
    let dv = p.v - geom.nominal_speed;
    geom.terminal_position_weight * p.d - dv * dv
}

/// Gradient of the terminal reward with respect to `(d1, v1, d2, v2)`.
pub fn terminal_reward_gradient(s: &JointState, player: Player, geom: &GameGeometry) -> [f64; 4] {
    let p = s.player(player);
    let mut g = [0.0; 4];
    let base = 2 * player.index();
    g[base] = geom.terminal_position_weight;
    g[base + 1] = -2.0 * (p.v - geom.nominal_speed);
    g
}

/// Player-i Hamiltonian `lambda . f + l_i`, strictly concave in the own
/// control. `costate` is the gradient of player i's value over the full
/// joint state `(d1, v1, d2, v2)`.
pub fn hamiltonian(
    s: &JointState,
    costate: &[f64; 4],
    u_own: Control,
    u_other: Control,
    player: Player,
    theta_own: PlayerType,
    geom: &GameGeometry,
    softened: bool,
) -> f64 {
    let (u1, u2) = match player {
        Player::One => (u_own, u_other),
        Player::Two => (u_other, u_own),
    };
    let f = dynamics(s, u1, u2);
    let flow: f64 = costate.iter().zip(f.iter()).map(|(l, fi)| l * fi).sum();
    flow + running_reward(s, u_own, player, theta_own, geom, softened)
}

/// Unique maximizer of the Hamiltonian in the own control:
/// `clamp(lambda_v / 2, u_min, u_max)`.
pub fn optimal_control(lambda_v: f64, geom: &GameGeometry) -> Control {
    Control(geom.clamp_control(lambda_v / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geom() -> GameGeometry {
        GameGeometry::default()
    }

    #[test]
    fn dynamics_is_direct_substitution() {
        let s = JointState::new(20.0, 18.0, 20.0, 20.0, 0.0);
        assert_eq!(dynamics(&s, Control(2.0), Control(-1.0)), [18.0, 2.0, 20.0, -1.0]);

        let s = JointState::new(1.0, 7.0, 2.0, 9.0, 0.5);
        assert_eq!(dynamics(&s, Control(0.0), Control(0.0)), [7.0, 0.0, 9.0, 0.0]);

        let s = JointState::new(15.0, 25.0, 15.0, 25.0, 0.0);
        assert_eq!(dynamics(&s, Control(10.0), Control(-5.0)), [25.0, 10.0, 25.0, -5.0]);
    }

    #[test]
    fn collision_interval_matches_defaults() {
        let g = geom();
        let (lo, hi) = g.collision_interval(PlayerType::Aggressive);
        assert_relative_eq!(lo, 34.25);
        assert_relative_eq!(hi, 38.75);
        let (lo5, hi5) = g.collision_interval(PlayerType::NonAggressive);
        assert_relative_eq!(lo5, 31.25);
        assert_relative_eq!(hi5, 38.75);
    }

    #[test]
    fn hard_indicator_examples() {
        let g = geom();
        assert_eq!(collision_indicator(36.0, PlayerType::Aggressive, &g), 1.0);
        assert_eq!(collision_indicator(30.0, PlayerType::Aggressive, &g), 0.0);
        assert_eq!(collision_indicator(33.0, PlayerType::NonAggressive, &g), 1.0);
        // Closed-interval membership at the endpoints.
        assert_eq!(collision_indicator(34.25, PlayerType::Aggressive, &g), 1.0);
        assert_eq!(collision_indicator(38.75, PlayerType::Aggressive, &g), 1.0);
    }

    #[test]
    fn soft_indicator_examples() {
        let g = geom();
        let (lo, hi) = g.collision_interval(PlayerType::Aggressive);
        let mid = 0.5 * (lo + hi);
        assert!(soft_collision_indicator(mid, PlayerType::Aggressive, &g) > 0.99);
        // At the endpoint the ramp sits at its half height.
        let at_lo = soft_indicator_with_sharpness(lo, PlayerType::Aggressive, &g, 1e6);
        assert_relative_eq!(at_lo, 0.5, max_relative = 1e-9);
        // Deep tail.
        assert!(soft_collision_indicator(lo - 4.0, PlayerType::Aggressive, &g) < 1e-6);
    }

    #[test]
    fn soft_indicator_deriv_matches_finite_difference() {
        let g = geom();
        let h = 1e-6;
        for d in [30.0, 34.25, 36.0, 38.75, 40.0] {
            for gamma in [1.0, 5.0] {
                let fd = (soft_indicator_with_sharpness(d + h, PlayerType::Aggressive, &g, gamma)
                    - soft_indicator_with_sharpness(d - h, PlayerType::Aggressive, &g, gamma))
                    / (2.0 * h);
                let an = soft_indicator_deriv(d, PlayerType::Aggressive, &g, gamma);
                assert_relative_eq!(fd, an, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn running_reward_examples() {
        let g = geom();
        // Both players outside the region: penalty term vanishes.
        let s = JointState::new(10.0, 18.0, 10.0, 18.0, 0.0);
        assert_relative_eq!(
            running_reward(&s, Control(2.0), Player::One, PlayerType::Aggressive, &g, false),
            -4.0
        );
        // Both inside: hard penalty b = 1e4.
        let s = JointState::new(36.0, 18.0, 36.0, 18.0, 1.0);
        assert_relative_eq!(
            running_reward(&s, Control(0.0), Player::One, PlayerType::Aggressive, &g, false),
            -1e4
        );
        // Only player one inside: product vanishes.
        let s = JointState::new(36.0, 18.0, 10.0, 18.0, 1.0);
        assert_relative_eq!(
            running_reward(&s, Control(0.0), Player::One, PlayerType::Aggressive, &g, false),
            0.0
        );
    }

    #[test]
    fn terminal_reward_examples() {
        let g = geom();
        let s = JointState::new(60.0, 18.0, 0.0, 0.0, 3.0);
        assert_relative_eq!(terminal_reward(&s, Player::One, &g), 6e-5);
        let s = JointState::new(0.0, 20.0, 0.0, 0.0, 3.0);
        assert_relative_eq!(terminal_reward(&s, Player::One, &g), -4.0);
        let s = JointState::new(100.0, 16.0, 0.0, 0.0, 3.0);
        assert_relative_eq!(terminal_reward(&s, Player::One, &g), 1e-4 - 4.0);
    }

    #[test]
    fn terminal_gradient_is_blockwise() {
        let g = geom();
        let s = JointState::new(60.0, 20.0, 50.0, 16.0, 3.0);
        assert_eq!(
            terminal_reward_gradient(&s, Player::One, &g),
            [1e-6, -4.0, 0.0, 0.0]
        );
        assert_eq!(
            terminal_reward_gradient(&s, Player::Two, &g),
            [0.0, 0.0, 1e-6, 4.0]
        );
    }

    #[test]
    fn hamiltonian_examples() {
        let g = geom();
        let s = JointState::new(10.0, 18.0, 10.0, 20.0, 0.0);
        let h = hamiltonian(
            &s,
            &[0.0, 1.0, 0.0, 0.0],
            Control(0.0),
            Control(0.0),
            Player::One,
            PlayerType::Aggressive,
            &g,
            false,
        );
        assert_relative_eq!(h, 0.0);

        let h = hamiltonian(
            &s,
            &[1.0, 4.0, 0.0, 0.0],
            Control(2.0),
            Control(0.0),
            Player::One,
            PlayerType::Aggressive,
            &g,
            false,
        );
        assert_relative_eq!(h, 22.0); // 18 + 8 - 4

        // Stationarity of the concave quadratic at u = lambda_v / 2.
        let lv = 4.0;
        let u_star = optimal_control(lv, &g);
        let eps = 1e-6;
        let hp = hamiltonian(&s, &[1.0, lv, 0.0, 0.0], Control(u_star.0 + eps), Control(0.0), Player::One, PlayerType::Aggressive, &g, false);
        let hm = hamiltonian(&s, &[1.0, lv, 0.0, 0.0], Control(u_star.0 - eps), Control(0.0), Player::One, PlayerType::Aggressive, &g, false);
        assert!(((hp - hm) / (2.0 * eps)).abs() < 1e-6);
    }

    #[test]
    fn optimal_control_examples() {
        let g = geom();
        assert_relative_eq!(optimal_control(4.0, &g).0, 2.0);
        assert_relative_eq!(optimal_control(30.0, &g).0, 10.0);
        assert_relative_eq!(optimal_control(-12.0, &g).0, -5.0);
    }

    #[test]
    fn soft_indicator_sharpness_monotone_toward_hard() {
        let g = geom();
        let (lo, hi) = g.collision_interval(PlayerType::Aggressive);
        // Points at least 1 m away from both endpoints.
        let points = [lo - 3.0, lo - 1.0, 0.5 * (lo + hi), hi - 1.0 + 0.0, hi + 1.0, hi + 3.0];
        for &d in &points {
            if (d - lo).abs() < 1.0 || (d - hi).abs() < 1.0 {
                continue;
            }
            let hard = collision_indicator(d, PlayerType::Aggressive, &g);
            let errs: Vec<f64> = [1.0, 5.0, 25.0]
                .iter()
                .map(|&gm| (soft_indicator_with_sharpness(d, PlayerType::Aggressive, &g, gm) - hard).abs())
                .collect();
            assert!(errs[0] >= errs[1] && errs[1] >= errs[2], "d={d} errs={errs:?}");
        }
    }

    #[test]
    fn nonaggressive_interval_strictly_contains_aggressive() {
        let g = geom();
        let (lo_a, hi_a) = g.collision_interval(PlayerType::Aggressive);
        let (lo_na, hi_na) = g.collision_interval(PlayerType::NonAggressive);
        assert!(lo_na < lo_a);
        assert!(hi_na >= hi_a);
    }

    proptest! {
        #[test]
        fn optimal_control_stays_in_bounds(lv in -1e4f64..1e4) {
            let g = geom();
            let u = optimal_control(lv, &g);
            prop_assert!(u.0 >= g.u_min && u.0 <= g.u_max);
        }

        #[test]
        fn hamiltonian_maximized_at_optimal_control(
            lv in -30.0f64..30.0,
            u in -5.0f64..10.0,
        ) {
            let g = geom();
            let s = JointState::new(10.0, 20.0, 12.0, 19.0, 0.3);
            let cost = [0.7, lv, -0.2, 0.1];
            let star = optimal_control(lv, &g);
            let h_star = hamiltonian(&s, &cost, star, Control(1.0), Player::One, PlayerType::Aggressive, &g, true);
            let h_u = hamiltonian(&s, &cost, Control(u), Control(1.0), Player::One, PlayerType::Aggressive, &g, true);
            prop_assert!(h_star >= h_u - 1e-12);
        }

        #[test]
        fn running_reward_nonpositive(
            d1 in 0.0f64..80.0,
            d2 in 0.0f64..80.0,
            u in -5.0f64..10.0,
        ) {
            let g = geom();
            let s = JointState::new(d1, 18.0, d2, 18.0, 0.0);
            let r = running_reward(&s, Control(u), Player::One, PlayerType::Aggressive, &g, false);
            prop_assert!(r <= 0.0);
            let zero = u == 0.0 && penalty_product(&s, Player::One, PlayerType::Aggressive, &g, false) == 0.0;
            prop_assert_eq!(r == 0.0, zero);
        }
    }
}

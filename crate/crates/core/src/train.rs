//! Training regimes for pairs of value networks.
//!
//! Three regimes share one machinery:
//!
//! * supervised: value and value-gradient matching on BVP records;
//! * self-supervised: PDE-residual minimization over collocation points
//!   with a terminal boundary term, warmed up on the boundary alone and
//!   refined under an expanding time window anchored at the horizon;
//! * hybrid: supervised pretraining followed by joint minimization of
//!   both losses, with the same expanding window on collocation points.
//!
//! Every phase draws from its own RNG stream, so a hybrid run with an
//! empty dataset consumes exactly the self-supervised refine stream, and
//! a hybrid run with zero refine budget is bitwise the supervised run.
//! Batch evaluation parallelizes over fixed-size chunks whose partial
//! gradients are reduced in chunk order, keeping loss traces identical
//! across thread counts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::dataset::{SamplingDomain, SupervisedDataset, SupervisedRecord};
use crate::error::{Error, Result};
use crate::game::{
    dynamics, optimal_control, running_reward, terminal_reward, GameGeometry, JointState, Player,
    TypeConfig,
};
use crate::net::{Activation, MlpGrads, NetOutput, ValueNet, Workspace};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Supervised,
    SelfSupervised,
    Hybrid,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Supervised, Regime::SelfSupervised, Regime::Hybrid];

    pub fn tag(self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::SelfSupervised => "self-supervised",
            Regime::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s {
            "supervised" => Some(Regime::Supervised),
            "self-supervised" | "self_supervised" => Some(Regime::SelfSupervised),
            "hybrid" => Some(Regime::Hybrid),
            _ => None,
        }
    }
}

/// Norm applied to the terminal-condition mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryNorm {
    L1,
    L2,
}

impl BoundaryNorm {
    pub fn apply(self, e: f64) -> f64 {
        match self {
            BoundaryNorm::L1 => e.abs(),
            BoundaryNorm::L2 => e * e,
        }
    }

    pub fn derivative(self, e: f64) -> f64 {
        match self {
            BoundaryNorm::L1 => sign(e),
            BoundaryNorm::L2 => 2.0 * e,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            BoundaryNorm::L1 => "l1",
            BoundaryNorm::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<BoundaryNorm> {
        match s {
            "l1" => Some(BoundaryNorm::L1),
            "l2" => Some(BoundaryNorm::L2),
            _ => None,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Weight of the value-gradient term in the supervised loss.
    pub c1: f64,
    /// Weight of the boundary term in the self-supervised loss.
    pub c2: f64,
    pub boundary_norm: BoundaryNorm,
    /// Supervised iterations (phase 1 of supervised and hybrid runs).
    pub pretrain_iters: usize,
    /// Refinement iterations under the expanding window.
    pub refine_iters: usize,
    /// Boundary-only warmup iterations (self-supervised phase 1).
    pub boundary_warmup_iters: usize,
    pub batch_supervised: usize,
    pub batch_collocation: usize,
    pub batch_boundary: usize,
    /// Size of the fixed boundary pool drawn for the warmup phase.
    pub boundary_pool: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Supervised,
            c1: 1.0,
            c2: 1.0,
            boundary_norm: BoundaryNorm::L1,
            pretrain_iters: 100_000,
            refine_iters: 0,
            boundary_warmup_iters: 0,
            batch_supervised: 512,
            batch_collocation: 512,
            batch_boundary: 128,
            boundary_pool: 1000,
            learning_rate: 2e-5,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// The two networks of one complete-information game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetPair {
    pub p1: ValueNet,
    pub p2: ValueNet,
}

impl NetPair {
    /// Fresh pair with per-player init streams.
    pub fn init(
        config: TypeConfig,
        activation: Activation,
        normalizer: crate::net::Normalizer,
        seed: u64,
    ) -> Result<NetPair> {
        let mut make = |player: Player, label: &str| -> Result<ValueNet> {
            let mut rng = stream(seed, label);
            Ok(ValueNet {
                mlp: crate::net::Mlp::new(5, 64, 3, activation, normalizer.clone(), &mut rng)?,
                player,
                config,
            })
        };
        Ok(NetPair {
            p1: make(Player::One, "init-p1")?,
            p2: make(Player::Two, "init-p2")?,
        })
    }

    pub fn net(&self, p: Player) -> &ValueNet {
        match p {
            Player::One => &self.p1,
            Player::Two => &self.p2,
        }
    }

    pub fn config(&self) -> TypeConfig {
        self.p1.config
    }
}

/// Parameter gradients for a pair.
#[derive(Debug, Clone)]
pub struct PairGrads {
    pub p1: MlpGrads,
    pub p2: MlpGrads,
}

impl PairGrads {
    pub fn zeros_like(pair: &NetPair) -> Self {
        Self {
            p1: MlpGrads::zeros_like(&pair.p1.mlp),
            p2: MlpGrads::zeros_like(&pair.p2.mlp),
        }
    }

    fn zero(&mut self) {
        self.p1.zero();
        self.p2.zero();
    }

    fn add_assign(&mut self, other: &PairGrads) {
        self.p1.add_assign(&other.p1);
        self.p2.add_assign(&other.p2);
    }
}

/// Additive components of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub value: f64,
    pub gradient: f64,
    pub residual: f64,
    pub boundary: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.value + self.gradient + self.residual + self.boundary
    }

    fn add_assign(&mut self, o: &LossTerms) {
        self.value += o.value;
        self.gradient += o.gradient;
        self.residual += o.residual;
        self.boundary += o.boundary;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub value_term: f64,
    pub gradient_term: f64,
    pub residual_term: f64,
    pub boundary_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: Regime,
    pub iterations: usize,
    pub rows: Vec<LossRow>,
    pub final_loss: f64,
    /// Wall clock is reporting metadata only; deterministic outputs must
    /// not embed it.
    pub wall_clock_s: f64,
}

const PAR_CHUNK: usize = 64;

/// Evaluate per-item contributions in parallel chunks and reduce the
/// partial sums in chunk order.
fn chunked_eval<T: Sync, F>(items: &[T], pair: &NetPair, f: F) -> (LossTerms, PairGrads)
where
    F: Fn(&T, &mut Workspace, &mut PairGrads) -> LossTerms + Sync,
{
    let partials: Vec<(LossTerms, PairGrads)> = items
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut ws = pair.p1.mlp.workspace();
            let mut grads = PairGrads::zeros_like(pair);
            let mut terms = LossTerms::default();
            for item in chunk {
                terms.add_assign(&f(item, &mut ws, &mut grads));
            }
            (terms, grads)
        })
        .collect();
    let mut terms = LossTerms::default();
    let mut grads = PairGrads::zeros_like(pair);
    for (t, g) in &partials {
        terms.add_assign(t);
        grads.add_assign(g);
    }
    (terms, grads)
}

/// Eq.-style supervised loss: sum over the batch (and thereby both
/// players) of `|v_hat - v| + c1 ||grad_hat - grad||`, where the norm
/// runs over the four spatial components. Returns the loss terms and the
/// parameter gradients of their sum.
pub fn supervised_loss(
    pair: &NetPair,
    batch: &[SupervisedRecord],
    c1: f64,
) -> (LossTerms, PairGrads) {
    chunked_eval(batch, pair, |rec, ws, grads| {
        let net = pair.net(rec.player);
        let out = net.mlp.forward_grad(&rec.state.as_array(), ws);
        let ev = out.value - rec.value;
        let mut eg = [0.0; 5];
        let mut norm_sq = 0.0;
        for j in 0..4 {
            eg[j] = out.gradient[j] - rec.gradient[j];
            norm_sq += eg[j] * eg[j];
        }
        let norm = norm_sq.sqrt();
        let d_value = sign(ev);
        let mut d_gradient = [0.0; 5];
        if norm > 0.0 {
            for j in 0..4 {
                d_gradient[j] = c1 * eg[j] / norm;
            }
        }
        let g = match rec.player {
            Player::One => &mut grads.p1,
            Player::Two => &mut grads.p2,
        };
        net.mlp.vjp_accumulate(&rec.state.as_array(), d_value, &d_gradient, ws, g);
        LossTerms { value: ev.abs(), gradient: c1 * norm, ..Default::default() }
    })
}

/// Instantaneous argmax controls prescribed by the current networks.
fn argmax_controls(o1: &NetOutput, o2: &NetOutput, geom: &GameGeometry) -> (crate::game::Control, crate::game::Control) {
    (
        optimal_control(o1.gradient[1], geom),
        optimal_control(o2.gradient[3], geom),
    )
}

/// PDE residual of both players at one point, with controls taken from
/// the evaluators themselves:
/// `r_i = dv_i/dt + grad_x v_i . f(x, u1*, u2*) + l_i(softened)`.
///
/// The evaluators are closures so oracle value functions can stand in
/// for networks in tests and diagnostics.
pub fn hji_residual_with<F1, F2>(
    eval1: F1,
    eval2: F2,
    s: &JointState,
    config: &TypeConfig,
    geom: &GameGeometry,
) -> (f64, f64)
where
    F1: FnOnce(&JointState) -> NetOutput,
    F2: FnOnce(&JointState) -> NetOutput,
{
    let o1 = eval1(s);
    let o2 = eval2(s);
    residual_from_outputs(&o1, &o2, s, config, geom).0
}

fn residual_from_outputs(
    o1: &NetOutput,
    o2: &NetOutput,
    s: &JointState,
    config: &TypeConfig,
    geom: &GameGeometry,
) -> ((f64, f64), [f64; 4]) {
    let (u1, u2) = argmax_controls(o1, o2, geom);
    let f = dynamics(s, u1, u2);
    let flow = |o: &NetOutput| -> f64 { (0..4).map(|j| o.gradient[j] * f[j]).sum() };
    let r1 = o1.gradient[4]
        + flow(o1)
        + running_reward(s, u1, Player::One, config.theta1, geom, true);
    let r2 = o2.gradient[4]
        + flow(o2)
        + running_reward(s, u2, Player::Two, config.theta2, geom, true);
    ((r1, r2), f)
}

/// Residuals of the pair's own networks at one point.
pub fn hji_residual(pair: &NetPair, s: &JointState, geom: &GameGeometry) -> (f64, f64) {
    let mut ws = pair.p1.mlp.workspace();
    let o1 = pair.p1.eval(s, &mut ws);
    let o2 = pair.p2.eval(s, &mut ws);
    residual_from_outputs(&o1, &o2, s, &pair.config(), geom).0
}

/// Self-supervised loss: mean absolute residual over the collocation
/// points plus `c2` times the mean boundary-norm mismatch at the
/// terminal points. The argmax controls inside the residual are treated
/// as constants when differentiating.
pub fn self_supervised_loss(
    pair: &NetPair,
    pde_points: &[JointState],
    boundary_points: &[JointState],
    c2: f64,
    norm: BoundaryNorm,
    geom: &GameGeometry,
) -> (LossTerms, PairGrads) {
    let config = pair.config();
    let n = pde_points.len().max(1) as f64;
    let (mut terms, mut grads) = chunked_eval(pde_points, pair, |s, ws, grads| {
        let x = s.as_array();
        let o1 = pair.p1.mlp.forward_grad(&x, ws);
        let o2 = pair.p2.mlp.forward_grad(&x, ws);
        let ((r1, r2), f) = residual_from_outputs(&o1, &o2, s, &config, geom);
        // d|r|/d(grad) = sign(r) * (f, 1); the envelope-style
        // stop-gradient keeps the controls fixed.
        for (r, net, g) in [(r1, &pair.p1, &mut grads.p1), (r2, &pair.p2, &mut grads.p2)] {
            let sr = sign(r) / n;
            let d_gradient = [sr * f[0], sr * f[1], sr * f[2], sr * f[3], sr];
            net.mlp.vjp_accumulate(&x, 0.0, &d_gradient, ws, g);
        }
        LossTerms { residual: (r1.abs() + r2.abs()) / n, ..Default::default() }
    });

    if !boundary_points.is_empty() && c2 > 0.0 {
        let nb = boundary_points.len() as f64;
        let (bterms, bgrads) = chunked_eval(boundary_points, pair, |s, ws, grads| {
            let x = s.as_array();
            let mut term = 0.0;
            for (net, g) in [(&pair.p1, &mut grads.p1), (&pair.p2, &mut grads.p2)] {
                let out = net.mlp.forward_grad(&x, ws);
                let e = out.value - terminal_reward(s, net.player, geom);
                term += c2 * norm.apply(e) / nb;
                let d_value = c2 * norm.derivative(e) / nb;
                net.mlp.vjp_accumulate(&x, d_value, &[0.0; 5], ws, g);
            }
            LossTerms { boundary: term, ..Default::default() }
        });
        terms.add_assign(&bterms);
        grads.add_assign(&bgrads);
    }
    (terms, grads)
}

/// Expanding time window: at refinement progress `i` of `total`, times
/// are sampled from `[horizon - w, horizon]` with `w` growing linearly
/// from 0 to the full horizon.
pub fn curriculum_window(i: usize, total: usize, horizon: f64) -> f64 {
    if total <= 1 {
        horizon
    } else {
        horizon * i as f64 / (total - 1) as f64
    }
}

struct Session<'a> {
    pair: &'a mut NetPair,
    cfg: &'a TrainConfig,
    geom: &'a GameGeometry,
    adam1: Adam,
    adam2: Adam,
    rows: Vec<LossRow>,
    iteration: usize,
}

impl<'a> Session<'a> {
    fn new(pair: &'a mut NetPair, cfg: &'a TrainConfig, geom: &'a GameGeometry) -> Result<Session<'a>> {
        cfg.validate()?;
        let adam1 = Adam::new(&pair.p1.mlp);
        let adam2 = Adam::new(&pair.p2.mlp);
        Ok(Session { pair, cfg, geom, adam1, adam2, rows: Vec::new(), iteration: 0 })
    }

    fn apply(&mut self, terms: LossTerms, grads: &PairGrads, phase_iters: usize, phase_i: usize) -> Result<()> {
        let total = terms.total();
        if !total.is_finite() {
            return Err(Error::DivergenceDetected { iteration: self.iteration, loss: total });
        }
        self.adam1.step(&mut self.pair.p1.mlp, &grads.p1, self.cfg.learning_rate);
        self.adam2.step(&mut self.pair.p2.mlp, &grads.p2, self.cfg.learning_rate);
        if phase_i % self.cfg.log_every.max(1) == 0 || phase_i + 1 == phase_iters {
            self.rows.push(LossRow {
                iteration: self.iteration,
                value_term: terms.value,
                gradient_term: terms.gradient,
                residual_term: terms.residual,
                boundary_term: terms.boundary,
                total,
            });
        }
        self.iteration += 1;
        Ok(())
    }

    /// Supervised phase shared by the supervised regime and hybrid
    /// pretraining.
    fn supervised_phase(&mut self, dataset: &SupervisedDataset, iters: usize) -> Result<()> {
        if iters == 0 || dataset.is_empty() {
            return Ok(());
        }
        let mut rng = stream(self.cfg.seed, "supervised-batches");
        let mut batch = Vec::with_capacity(self.cfg.batch_supervised);
        for i in 0..iters {
            batch.clear();
            for _ in 0..self.cfg.batch_supervised {
                batch.push(dataset.records[rng.gen_range(0..dataset.records.len())]);
            }
            let (terms, grads) = supervised_loss(self.pair, &batch, self.cfg.c1);
            self.apply(terms, &grads, iters, i)?;
        }
        Ok(())
    }

    /// Boundary-only warmup on a fixed pool of terminal states.
    fn warmup_phase(&mut self, domain: &SamplingDomain, iters: usize) -> Result<()> {
        if iters == 0 {
            return Ok(());
        }
        let horizon = self.geom.horizon;
        let mut pool_rng = stream(self.cfg.seed, "boundary-pool");
        let pool: Vec<JointState> = (0..self.cfg.boundary_pool.max(1))
            .map(|_| domain.sample_joint(&mut pool_rng, horizon))
            .collect();
        let mut rng = stream(self.cfg.seed, "warmup-batches");
        let take = self.cfg.batch_boundary.min(pool.len());
        for i in 0..iters {
            let batch: Vec<JointState> =
                (0..take).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
            let (terms, grads) = self_supervised_loss(
                self.pair,
                &[],
                &batch,
                self.cfg.c2,
                self.cfg.boundary_norm,
                self.geom,
            );
            self.apply(terms, &grads, iters, i)?;
        }
        Ok(())
    }

    /// Expanding-window refinement; with a dataset present this is the
    /// hybrid joint phase, without one it is the self-supervised phase 2.
    fn refine_phase(
        &mut self,
        dataset: Option<&SupervisedDataset>,
        domain: &SamplingDomain,
        iters: usize,
    ) -> Result<()> {
        if iters == 0 {
            return Ok(());
        }
        let horizon = self.geom.horizon;
        let dataset = dataset.filter(|d| !d.is_empty());
        let mut sup_rng = stream(self.cfg.seed, "refine-supervised-batches");
        let mut colloc_rng = stream(self.cfg.seed, "refine-collocation");
        let mut boundary_rng = stream(self.cfg.seed, "refine-boundary");
        for i in 0..iters {
            let w = curriculum_window(i, iters, horizon);
            let colloc: Vec<JointState> = (0..self.cfg.batch_collocation)
                .map(|_| {
                    let t = if w > 0.0 {
                        colloc_rng.gen_range((horizon - w)..horizon)
                    } else {
                        horizon
                    };
                    domain.sample_joint(&mut colloc_rng, t)
                })
                .collect();
            let boundary: Vec<JointState> = (0..self.cfg.batch_boundary)
                .map(|_| domain.sample_joint(&mut boundary_rng, horizon))
                .collect();
            let (mut terms, mut grads) = self_supervised_loss(
                self.pair,
                &colloc,
                &boundary,
                self.cfg.c2,
                self.cfg.boundary_norm,
                self.geom,
            );
            if let Some(ds) = dataset {
                let batch: Vec<SupervisedRecord> = (0..self.cfg.batch_supervised)
                    .map(|_| ds.records[sup_rng.gen_range(0..ds.records.len())])
                    .collect();
                let (sterms, sgrads) = supervised_loss(self.pair, &batch, self.cfg.c1);
                terms.add_assign(&sterms);
                grads.add_assign(&sgrads);
            }
            self.apply(terms, &grads, iters, i)?;
        }
        Ok(())
    }

    fn report(self, regime: Regime, started: std::time::Instant) -> TrainReport {
        let final_loss = self.rows.last().map(|r| r.total).unwrap_or(0.0);
        TrainReport {
            regime,
            iterations: self.iteration,
            rows: self.rows,
            final_loss,
            wall_clock_s: started.elapsed().as_secs_f64(),
        }
    }
}

/// Supervised regime: `pretrain_iters` Adam steps on uniformly drawn
/// minibatches of the dataset.
pub fn train_supervised(
    pair: &mut NetPair,
    dataset: &SupervisedDataset,
    cfg: &TrainConfig,
    geom: &GameGeometry,
) -> Result<TrainReport> {
    if dataset.config != pair.config() {
        return Err(Error::InvalidInput(format!(
            "dataset is for {} but networks approximate {}",
            dataset.config.tag(),
            pair.config().tag()
        )));
    }
    let started = std::time::Instant::now();
    let mut session = Session::new(pair, cfg, geom)?;
    session.supervised_phase(dataset, cfg.pretrain_iters)?;
    Ok(session.report(Regime::Supervised, started))
}

/// Self-supervised regime: boundary warmup on a fixed terminal pool,
/// then expanding-window residual refinement.
pub fn train_self_supervised(
    pair: &mut NetPair,
    domain: &SamplingDomain,
    cfg: &TrainConfig,
    geom: &GameGeometry,
) -> Result<TrainReport> {
    let started = std::time::Instant::now();
    let mut session = Session::new(pair, cfg, geom)?;
    session.warmup_phase(domain, cfg.boundary_warmup_iters)?;
    session.refine_phase(None, domain, cfg.refine_iters)?;
    Ok(session.report(Regime::SelfSupervised, started))
}

/// Hybrid regime: supervised pretraining, then joint refinement of the
/// supervised and self-supervised losses under the expanding window.
pub fn train_hybrid(
    pair: &mut NetPair,
    dataset: &SupervisedDataset,
    domain: &SamplingDomain,
    cfg: &TrainConfig,
    geom: &GameGeometry,
) -> Result<TrainReport> {
    if dataset.config != pair.config() {
        return Err(Error::InvalidInput(format!(
            "dataset is for {} but networks approximate {}",
            dataset.config.tag(),
            pair.config().tag()
        )));
    }
    let started = std::time::Instant::now();
    let mut session = Session::new(pair, cfg, geom)?;
    session.supervised_phase(dataset, cfg.pretrain_iters)?;
    session.refine_phase(Some(dataset), domain, cfg.refine_iters)?;
    Ok(session.report(Regime::Hybrid, started))
}

/// Dispatch on the regime; self-supervised ignores the dataset.
pub fn train(
    pair: &mut NetPair,
    dataset: &SupervisedDataset,
    domain: &SamplingDomain,
    cfg: &TrainConfig,
    geom: &GameGeometry,
) -> Result<TrainReport> {
    match cfg.regime {
        Regime::Supervised => train_supervised(pair, dataset, cfg, geom),
        Regime::SelfSupervised => train_self_supervised(pair, domain, cfg, geom),
        Regime::Hybrid => train_hybrid(pair, dataset, domain, cfg, geom),
    }
}

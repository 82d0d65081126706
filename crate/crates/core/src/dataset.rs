//! Supervised datasets from batched BVP solves.
//!
//! Initial states are drawn uniformly from a sampling domain (identical
//! ranges for both players), solved in parallel, and flattened into
//! per-sample records carrying the value and its joint-state gradient.
//! Failed solves are logged and replaced by fresh uniform draws so the
//! initial-state distribution stays uniform; record order follows the
//! draw order, never completion order, so a fixed seed gives a
//! byte-stable dataset.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameGeometry, JointState, Player, PlayerState, TypeConfig};
use crate::rng::stream;
use crate::solver::{solve_bvp, EquilibriumTrajectory, SolverOptions};

/// Per-player `(d, v)` ranges, applied identically to both players.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDomain {
    pub d: (f64, f64),
    pub v: (f64, f64),
}

impl SamplingDomain {
    /// Narrow band of near-simultaneous approaches used to collect
    /// supervised equilibria.
    pub fn data_collection() -> Self {
        Self { d: (15.0, 20.0), v: (18.0, 25.0) }
    }

    /// Wide state space used for PDE collocation.
    pub fn collocation() -> Self {
        Self { d: (15.0, 105.0), v: (15.0, 32.0) }
    }

    /// Expanded band for out-of-distribution evaluation.
    pub fn expanded() -> Self {
        Self { d: (15.0, 30.0), v: (18.0, 25.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.0 < self.d.1 && self.v.0 < self.v.1 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("empty sampling domain {self:?}")))
        }
    }

    pub fn sample_player<R: Rng>(&self, rng: &mut R) -> PlayerState {
        PlayerState {
            d: rng.gen_range(self.d.0..self.d.1),
            v: rng.gen_range(self.v.0..self.v.1),
        }
    }

    /// Joint state at a fixed time, both players drawn independently.
    pub fn sample_joint<R: Rng>(&self, rng: &mut R, t: f64) -> JointState {
        let p1 = self.sample_player(rng);
        let p2 = self.sample_player(rng);
        JointState { p1, p2, t }
    }
}

/// Named domain selector used by the CLI and file metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    /// Data-collection band (`gt`).
    Gt,
    /// Collocation space (`hj`).
    Hj,
    /// Expanded evaluation band (`xp`).
    Xp,
}

impl DomainKind {
    pub fn domain(self) -> SamplingDomain {
        match self {
            DomainKind::Gt => SamplingDomain::data_collection(),
            DomainKind::Hj => SamplingDomain::collocation(),
            DomainKind::Xp => SamplingDomain::expanded(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            DomainKind::Gt => "gt",
            DomainKind::Hj => "hj",
            DomainKind::Xp => "xp",
        }
    }

    pub fn parse(s: &str) -> Option<DomainKind> {
        match s {
            "gt" => Some(DomainKind::Gt),
            "hj" => Some(DomainKind::Hj),
            "xp" => Some(DomainKind::Xp),
            _ => None,
        }
    }
}

/// One dataset row: joint state and time, owning player, value, and the
/// 4-vector value gradient over `(d1, v1, d2, v2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedRecord {
    pub state: JointState,
    pub player: Player,
    pub value: f64,
    pub gradient: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub domain: SamplingDomain,
    pub config: String,
    pub requested_trajectories: usize,
    pub converged_trajectories: usize,
    pub attempted_solves: usize,
    pub solver: SolverOptions,
    pub geometry: GameGeometry,
}

/// Records from converged BVP solves for one type configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    pub config: TypeConfig,
    pub records: Vec<SupervisedRecord>,
    pub meta: DatasetMeta,
}

impl SupervisedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Empty dataset carrying only identity, for regime-equivalence
    /// plumbing and tests.
    pub fn empty(config: TypeConfig, geom: &GameGeometry) -> Self {
        Self {
            config,
            records: Vec::new(),
            meta: DatasetMeta {
                seed: 0,
                domain: SamplingDomain::data_collection(),
                config: config.tag(),
                requested_trajectories: 0,
                converged_trajectories: 0,
                attempted_solves: 0,
                solver: SolverOptions::default(),
                geometry: geom.clone(),
            },
        }
    }
}

/// Flatten one converged trajectory into `samples x 2` records.
pub fn trajectory_records(traj: &EquilibriumTrajectory) -> Vec<SupervisedRecord> {
    let mut out = Vec::with_capacity(traj.samples() * 2);
    for k in 0..traj.samples() {
        for p in Player::BOTH {
            out.push(SupervisedRecord {
                state: traj.states[k],
                player: p,
                value: traj.value_of(p, k),
                gradient: traj.costate_of(p, k).0,
            });
        }
    }
    out
}

/// Solve `n_traj` equilibria from uniform initial states and flatten them
/// into a dataset.
///
/// Failed solves are replaced by fresh draws; if after the retry budget
/// fewer than 90% of the requested trajectories converged the dataset is
/// rejected as incomplete.
pub fn generate_dataset(
    domain: &SamplingDomain,
    n_traj: usize,
    config: &TypeConfig,
    seed: u64,
    geom: &GameGeometry,
    opts: &SolverOptions,
) -> Result<SupervisedDataset> {
    if n_traj == 0 {
        return Err(Error::InvalidInput("n_traj must be > 0".into()));
    }
    domain.validate()?;

    let mut rng = stream(seed, "initial-states");
    let budget = 2 * n_traj + 8;
    let mut attempts = 0usize;
    let mut trajectories: Vec<EquilibriumTrajectory> = Vec::with_capacity(n_traj);

    while trajectories.len() < n_traj && attempts < budget {
        let want = (n_traj - trajectories.len()).min(budget - attempts);
        let draws: Vec<JointState> = (0..want).map(|_| domain.sample_joint(&mut rng, 0.0)).collect();
        attempts += want;
        // Parallel solves, results kept in draw order.
        let solved: Vec<Option<EquilibriumTrajectory>> = draws
            .par_iter()
            .map(|x0| solve_bvp(x0, config, geom, opts).ok())
            .collect();
        for traj in solved.into_iter().flatten() {
            debug_assert!(traj.boundary_residual <= opts.newton_tol);
            trajectories.push(traj);
        }
    }

    let converged = trajectories.len();
    if converged * 10 < n_traj * 9 {
        return Err(Error::DatasetIncomplete { requested: n_traj, converged });
    }

    let mut records = Vec::with_capacity(converged * 62);
    for traj in &trajectories {
        records.extend(trajectory_records(traj));
    }

    Ok(SupervisedDataset {
        config: *config,
        records,
        meta: DatasetMeta {
            seed,
            domain: *domain,
            config: config.tag(),
            requested_trajectories: n_traj,
            converged_trajectories: converged,
            attempted_solves: attempts,
            solver: opts.clone(),
            geometry: geom.clone(),
        },
    })
}

/// Uniform collocation points over `domain x domain x [0, horizon]`.
pub fn sample_pde_states(
    domain: &SamplingDomain,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<JointState>> {
    if n == 0 {
        return Err(Error::InvalidInput("collocation count must be > 0".into()));
    }
    domain.validate()?;
    let mut rng = stream(seed, "pde-states");
    Ok((0..n)
        .map(|_| {
            let t = rng.gen_range(0.0..horizon);
            domain.sample_joint(&mut rng, t)
        })
        .collect())
}

pub const CSV_HEADER: &str = "t,d1,v1,d2,v2,player,value,g_d1,g_v1,g_d2,g_v2";

/// Write the records as columnar text plus a JSON metadata sidecar at
/// `<path>.meta.json`. Leading `#` lines carry the run stamp.
pub fn write_dataset_csv(
    dataset: &SupervisedDataset,
    path: &Path,
    stamp_lines: &[String],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in stamp_lines {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    for r in &dataset.records {
        let s = r.state;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.p1.d,
            s.p1.v,
            s.p2.d,
            s.p2.v,
            r.player.index() + 1,
            r.value,
            r.gradient[0],
            r.gradient[1],
            r.gradient[2],
            r.gradient[3],
        )?;
    }
    out.flush()?;
    let meta_path = sidecar_path(path);
    let body = serde_json::to_string_pretty(&dataset.meta)
        .map_err(|e| Error::InvalidInput(format!("metadata serialization: {e}")))?;
    std::fs::write(meta_path, body)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

/// Read a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path) -> Result<SupervisedDataset> {
    let meta_body = std::fs::read_to_string(sidecar_path(path))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_body)
        .map_err(|e| Error::Config(format!("dataset metadata {}: {e}", path.display())))?;
    let config = TypeConfig::parse(&meta.config)
        .ok_or_else(|| Error::Config(format!("bad type config tag {:?}", meta.config)))?;

    let body = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut saw_header = false;
    for (ln, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(Error::Config(format!(
                    "{}: unexpected header {line:?}",
                    path.display()
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Config(format!(
                "{}:{}: expected 11 fields, got {}",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{}:{}: field {i}: {e}", path.display(), ln + 1)))
        };
        let player = match fields[5] {
            "1" => Player::One,
            "2" => Player::Two,
            other => {
                return Err(Error::Config(format!(
                    "{}:{}: bad player {other:?}",
                    path.display(),
                    ln + 1
                )))
            }
        };
        records.push(SupervisedRecord {
            state: JointState::new(num(1)?, num(2)?, num(3)?, num(4)?, num(0)?),
            player,
            value: num(6)?,
            gradient: [num(7)?, num(8)?, num(9)?, num(10)?],
        });
    }
    Ok(SupervisedDataset { config, records, meta })
}

//! Run orchestration: configuration, gamma sweeps, output files and
//! checkpoints.
//!
//! Each gamma value is an independent branch with its own directory
//! `gamma_<value>` under the output directory. Branches run on separate
//! threads and never share files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{self, AgentEnsemble, InitKind, RNG_ALGORITHM};
use crate::error::{Error, Result};
use crate::grid::{Distribution, GrowthPolicy, WealthGrid, DEFAULT_BIN_WIDTH, DEFAULT_NORMAL_VARIANCE};
use crate::io;
use crate::kinetics::{self, Params};
use crate::metrics::{self, MetricsConfig, MetricsRecord};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const CHECKPOINT_FORMAT: &str = "kinetic-market-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Grid,
    Agents,
    Both,
}

impl Mode {
    pub fn grid(self) -> bool {
        matches!(self, Mode::Grid | Mode::Both)
    }

    pub fn agents(self) -> bool {
        matches!(self, Mode::Agents | Mode::Both)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Mode::Grid),
            "agents" => Ok(Mode::Agents),
            "both" => Ok(Mode::Both),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub norm_tol: f64,
    pub mean_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let p = Params::default();
        Tolerances {
            norm_tol: p.norm_tol,
            mean_tol: p.mean_tol,
        }
    }
}

/// Everything a run needs. Read from TOML; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub init: InitKind,
    pub gamma_list: Vec<f64>,
    pub n_steps: u64,
    /// Metrics and snapshots are taken every `sample_every` steps and at the last step.
    pub sample_every: u64,
    pub bin_width: f64,
    /// Initial number of bins; the grid doubles as the tail spreads.
    pub n_bins: usize,
    pub max_bins: usize,
    pub k_dt: f64,
    pub r_agents: usize,
    /// Agent trades per grid step; defaults to `round(r_agents * k_dt)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interactions_per_step: Option<u64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    pub tolerances: Tolerances,
    pub normal_variance: f64,
    pub active_mass_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_window: Option<(f64, f64)>,
    /// Population for the `ln N_T` offset of the Theil entropy.
    pub theil_agents: f64,
    pub lorenz_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = Params::default();
        RunConfig {
            mode: Mode::Grid,
            init: InitKind::Uniform,
            gamma_list: vec![0.0],
            n_steps: 800,
            sample_every: 100,
            bin_width: DEFAULT_BIN_WIDTH,
            n_bins: 400,
            max_bins: p.growth.max_bins,
            k_dt: p.k_dt,
            r_agents: 10_000,
            interactions_per_step: None,
            seed: 1,
            output_dir: PathBuf::from("output"),
            checkpoint_every: None,
            tolerances: Tolerances::default(),
            normal_variance: DEFAULT_NORMAL_VARIANCE,
            active_mass_floor: p.active_mass_floor,
            tail_window: None,
            theil_agents: MetricsConfig::default().n_agents,
            lorenz_points: 101,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_list.is_empty() {
            return Err(Error::config("gamma_list", "must not be empty"));
        }
        for (i, g) in self.gamma_list.iter().enumerate() {
            if !(0.0..=1.0).contains(g) {
                return Err(Error::config("gamma_list", format!("{g} is outside [0, 1]")));
            }
            if self.gamma_list[..i].contains(g) {
                return Err(Error::config("gamma_list", format!("{g} listed twice")));
            }
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be at least 1"));
        }
        if self.sample_every == 0 {
            return Err(Error::config("sample_every", "must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        WealthGrid::new(self.bin_width, self.n_bins)?;
        if self.max_bins < self.n_bins {
            return Err(Error::config("max_bins", "must be at least n_bins"));
        }
        if self.mode.agents() && self.r_agents < 2 {
            return Err(Error::config("r_agents", format!("need at least 2 agents, got {}", self.r_agents)));
        }
        if !(self.normal_variance > 0.0 && self.normal_variance.is_finite()) {
            return Err(Error::config("normal_variance", "must be positive"));
        }
        if let Some((lo, hi)) = self.tail_window {
            if !(lo < hi) {
                return Err(Error::config("tail_window", "lower end must be below upper end"));
            }
        }
        if !(self.theil_agents >= 1.0) {
            return Err(Error::config("theil_agents", "must be at least 1"));
        }
        if self.lorenz_points < 2 {
            return Err(Error::config("lorenz_points", "must be at least 2"));
        }
        for g in &self.gamma_list {
            self.params(*g).validate()?;
        }
        Ok(())
    }

    pub fn params(&self, gamma: f64) -> Params {
        Params {
            gamma,
            k_dt: self.k_dt,
            norm_tol: self.tolerances.norm_tol,
            mean_tol: self.tolerances.mean_tol,
            growth: GrowthPolicy {
                max_bins: self.max_bins,
                ..GrowthPolicy::default()
            },
            active_mass_floor: self.active_mass_floor,
            ..Params::default()
        }
    }

    pub fn metrics_config(&self) -> MetricsConfig {
        MetricsConfig {
            tail_window: self.tail_window,
            n_agents: self.theil_agents,
        }
    }

    pub fn trades_per_step(&self) -> u64 {
        self.interactions_per_step
            .unwrap_or_else(|| agents::interactions_per_step(self.r_agents, self.k_dt))
    }

    /// Initial grid distribution.
    pub fn initial_distribution(&self) -> Result<Distribution> {
        let grid = WealthGrid::new(self.bin_width, self.n_bins)?;
        match self.init {
            InitKind::Uniform => Distribution::uniform(grid),
            InitKind::Normal => Distribution::normal(grid, self.normal_variance),
        }
    }

    pub fn initial_ensemble(&self) -> Result<AgentEnsemble> {
        AgentEnsemble::with_variance(self.r_agents, self.init, self.seed, self.normal_variance)
    }
}

/// Directory name of a gamma branch.
pub fn branch_dir_name(gamma: f64) -> String {
    format!("gamma_{gamma}")
}

/// Integrate `n_steps` steps, calling `observe` on the initial state and
/// after every step. On failure the states already observed are the partial
/// trajectory.
pub fn evolve<F>(initial: Distribution, params: &Params, n_steps: u64, mut observe: F) -> Result<Distribution>
where
    F: FnMut(u64, &Distribution),
{
    params.validate()?;
    observe(0, &initial);
    let mut dist = initial;
    for t in 1..=n_steps {
        dist = kinetics::step_numbered(&dist, params, t)?;
        observe(t, &dist);
    }
    Ok(dist)
}

/// Outcome of one gamma branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub gamma: f64,
    pub directory: String,
    pub steps_completed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub branches: Vec<BranchSummary>,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.branches.iter().all(|b| b.error.is_none())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    rng_algorithm: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    restored_from: Option<RestoredFrom>,
    config: &'a RunConfig,
    branches: &'a [BranchSummary],
}

#[derive(Serialize)]
struct RestoredFrom {
    file: String,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridState {
    bin_width: f64,
    n_bins: usize,
    density: Vec<f64>,
    condensate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgentState {
    wealths: Vec<f64>,
    seed: u64,
    /// Stream position as a decimal string (it is a 128-bit counter).
    word_pos: String,
    interactions: u64,
}

/// On-disk state of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    code_version: String,
    config: RunConfig,
    gamma: f64,
    step: u64,
    grid: Option<GridState>,
    agents: Option<AgentState>,
    grid_records: Vec<MetricsRecord>,
    agent_records: Vec<MetricsRecord>,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
        }
        if ck.version != CHECKPOINT_VERSION || ck.code_version != CODE_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: written by {} (format {}), this is {} (format {})",
                path.display(),
                ck.code_version,
                ck.version,
                CODE_VERSION,
                CHECKPOINT_VERSION
            )));
        }
        Ok(ck)
    }
}

/// Live state of one gamma branch.
struct Branch {
    cfg: RunConfig,
    gamma: f64,
    params: Params,
    dir: PathBuf,
    step: u64,
    grid: Option<Distribution>,
    agents: Option<AgentEnsemble>,
    grid_records: Vec<MetricsRecord>,
    agent_records: Vec<MetricsRecord>,
}

impl Branch {
    fn fresh(cfg: &RunConfig, gamma: f64) -> Result<Self> {
        Ok(Branch {
            cfg: cfg.clone(),
            gamma,
            params: cfg.params(gamma),
            dir: cfg.output_dir.join(branch_dir_name(gamma)),
            step: 0,
            grid: cfg.mode.grid().then(|| cfg.initial_distribution()).transpose()?,
            agents: cfg.mode.agents().then(|| cfg.initial_ensemble()).transpose()?,
            grid_records: Vec::new(),
            agent_records: Vec::new(),
        })
    }

    fn from_checkpoint(ck: Checkpoint, cfg: RunConfig) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("inconsistent {what}"));
        let grid = match ck.grid {
            Some(g) => {
                let wg = WealthGrid::new(g.bin_width, g.n_bins).map_err(|_| corrupt("grid geometry"))?;
                Some(Distribution::with_condensate(wg, g.density, g.condensate).map_err(|_| corrupt("density"))?)
            }
            None => None,
        };
        let agents = match ck.agents {
            Some(a) => {
                let pos: u128 = a.word_pos.parse().map_err(|_| corrupt("random stream position"))?;
                Some(AgentEnsemble::restore(a.wealths, a.seed, pos, a.interactions).map_err(|_| corrupt("wealths"))?)
            }
            None => None,
        };
        if grid.is_some() != cfg.mode.grid() || agents.is_some() != cfg.mode.agents() {
            return Err(corrupt("mode"));
        }
        Ok(Branch {
            params: cfg.params(ck.gamma),
            dir: cfg.output_dir.join(branch_dir_name(ck.gamma)),
            cfg,
            gamma: ck.gamma,
            step: ck.step,
            grid,
            agents,
            grid_records: ck.grid_records,
            agent_records: ck.agent_records,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            code_version: CODE_VERSION.into(),
            config: self.cfg.clone(),
            gamma: self.gamma,
            step: self.step,
            grid: self.grid.as_ref().map(|d| GridState {
                bin_width: d.grid().bin_width(),
                n_bins: d.grid().n_bins(),
                density: d.density().to_vec(),
                condensate: d.condensate(),
            }),
            agents: self.agents.as_ref().map(|e| AgentState {
                wealths: e.wealths().to_vec(),
                seed: e.seed(),
                word_pos: e.rng_word_pos().to_string(),
                interactions: e.interactions(),
            }),
            grid_records: self.grid_records.clone(),
            agent_records: self.agent_records.clone(),
        }
    }

    fn file(&self, stem: &str) -> PathBuf {
        self.dir.join(format!("{stem}_t{:06}.{}", self.step, if stem == "checkpoint" { "json" } else { "csv" }))
    }

    fn sample(&mut self) -> Result<()> {
        let mcfg = self.cfg.metrics_config();
        if let Some(dist) = &self.grid {
            self.grid_records.push(MetricsRecord::compute(self.step, dist, &mcfg));
            io::write_snapshot(&self.file("grid_snapshot"), dist)?;
            io::write_lorenz(&self.file("grid_lorenz"), &metrics::lorenz_curve(dist, self.cfg.lorenz_points))?;
        }
        if let Some(ens) = &self.agents {
            let hist = ens.empirical_histogram(histogram_grid(&self.cfg, ens)?).distribution;
            self.agent_records.push(MetricsRecord::compute(self.step, &hist, &mcfg));
            io::write_snapshot(&self.file("agents_snapshot"), &hist)?;
            io::write_lorenz(&self.file("agents_lorenz"), &metrics::lorenz_curve(&hist, self.cfg.lorenz_points))?;
            io::write_ensemble(&self.file("agents_ensemble"), ens.wealths())?;
        }
        Ok(())
    }

    fn advance(&mut self) -> Result<()> {
        let trades = self.cfg.trades_per_step();
        while self.step < self.cfg.n_steps {
            let t = self.step + 1;
            if let Some(dist) = &self.grid {
                self.grid = Some(kinetics::step_numbered(dist, &self.params, t)?);
            }
            if let Some(ens) = &mut self.agents {
                ens.interact(&self.params, trades);
            }
            self.step = t;
            if t % self.cfg.sample_every == 0 || t == self.cfg.n_steps {
                self.sample()?;
            }
            if self.cfg.checkpoint_every.is_some_and(|c| t % c == 0) {
                io::write_json(&self.file("checkpoint"), &self.checkpoint())?;
            }
        }
        Ok(())
    }

    fn write_metrics(&self) -> Result<()> {
        if self.grid.is_some() {
            io::write_metrics(&self.dir.join("grid_metrics.csv"), &self.grid_records)?;
        }
        if self.agents.is_some() {
            io::write_metrics(&self.dir.join("agents_metrics.csv"), &self.agent_records)?;
        }
        Ok(())
    }

    /// Run to completion; an error aborts this branch only and leaves the
    /// partial metrics plus an `error.txt` marker.
    fn execute(mut self) -> BranchSummary {
        let outcome = std::fs::create_dir_all(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))
            .and_then(|_| self.advance());
        let written = self.write_metrics();
        let error = outcome.and(written).err().map(|e| e.to_string());
        if let Some(msg) = &error {
            let _ = std::fs::write(self.dir.join("error.txt"), format!("{msg}\n"));
        }
        BranchSummary {
            gamma: self.gamma,
            directory: branch_dir_name(self.gamma),
            steps_completed: self.step,
            error,
        }
    }
}

/// Grid wide enough to bin every agent.
fn histogram_grid(cfg: &RunConfig, ens: &AgentEnsemble) -> Result<WealthGrid> {
    let richest = ens.wealths().iter().cloned().fold(0.0, f64::max);
    let mut n = cfg.n_bins;
    while (n as f64 - 0.5) * cfg.bin_width <= richest {
        n *= 2;
    }
    WealthGrid::new(cfg.bin_width, n)
}

fn execute_all(cfg: &RunConfig, branches: Vec<Branch>, restored_from: Option<RestoredFrom>) -> Result<RunSummary> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let results: Vec<BranchSummary> = std::thread::scope(|s| {
        let handles: Vec<_> = branches.into_iter().map(|b| s.spawn(move || b.execute())).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("branch thread panicked"))
            .collect()
    });
    let manifest = Manifest {
        code_version: CODE_VERSION,
        rng_algorithm: RNG_ALGORITHM,
        restored_from,
        config: cfg,
        branches: &results,
    };
    io::write_json(&cfg.output_dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary { branches: results })
}

/// Execute every gamma branch of `cfg`.
///
/// Configuration problems are returned as errors before anything runs.
/// Failures inside a branch are reported in the summary.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let branches = cfg
        .gamma_list
        .iter()
        .map(|&g| Branch::fresh(cfg, g))
        .collect::<Result<Vec<_>>>()?;
    execute_all(cfg, branches, None)
}

/// Continue a checkpointed branch for `extra_steps` more steps, writing into
/// `output_dir` (or the checkpointed configuration's directory).
pub fn restore(path: &Path, extra_steps: u64, output_dir: Option<PathBuf>) -> Result<RunSummary> {
    let ck = Checkpoint::load(path)?;
    let mut cfg = ck.config.clone();
    cfg.n_steps = ck.step + extra_steps;
    cfg.gamma_list = vec![ck.gamma];
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    let from = RestoredFrom {
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        step: ck.step,
    };
    let branch = Branch::from_checkpoint(ck, cfg.clone())?;
    execute_all(&cfg, vec![branch], Some(from))
}

//! Explicit-agent Monte Carlo of the same exchange rule.
//!
//! Used as an independent check on the grid integrator: no binning, no
//! deposition, just `R` wealths and a seeded random stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Distribution, WealthGrid, DEFAULT_NORMAL_VARIANCE};
use crate::kinetics::{exchange_unchecked, Params};

/// Name of the generator, recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Normal,
    Uniform,
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(InitKind::Normal),
            "uniform" => Ok(InitKind::Uniform),
            other => Err(Error::config("init", format!("unknown initial condition `{other}`"))),
        }
    }
}

/// Trades per grid step that reproduce the grid's transaction rate.
///
/// On the grid a fraction `2 k_dt` of all agents trades each step; one
/// pairwise trade moves two agents, so `R k_dt` trades per step match it.
pub fn interactions_per_step(r: usize, k_dt: f64) -> u64 {
    (r as f64 * k_dt).round().max(1.0) as u64
}

#[derive(Debug, Clone)]
pub struct AgentEnsemble {
    wealths: Vec<f64>,
    seed: u64,
    rng: ChaCha8Rng,
    interactions: u64,
}

/// Histogram of an ensemble plus whatever did not fit on the grid.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub distribution: Distribution,
    pub overflow_mass: f64,
}

impl AgentEnsemble {
    pub fn new(r: usize, init: InitKind, seed: u64) -> Result<Self> {
        Self::with_variance(r, init, seed, DEFAULT_NORMAL_VARIANCE)
    }

    /// Like [`new`](Self::new) with an explicit variance for the normal law.
    pub fn with_variance(r: usize, init: InitKind, seed: u64, variance: f64) -> Result<Self> {
        if r < 2 {
            return Err(Error::config("r_agents", format!("need at least 2 agents, got {r}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wealths: Vec<f64> = match init {
            InitKind::Uniform => (0..r).map(|_| rng.random_range(0.0..2.0)).collect(),
            InitKind::Normal => {
                let law = Normal::new(1.0, variance.sqrt())
                    .map_err(|e| Error::config("normal_variance", e.to_string()))?;
                (0..r)
                    .map(|_| loop {
                        let w: f64 = law.sample(&mut rng);
                        if w >= 0.0 {
                            break w;
                        }
                    })
                    .collect()
            }
        };
        let mean = wealths.iter().sum::<f64>() / r as f64;
        wealths.iter_mut().for_each(|w| *w /= mean);
        Ok(AgentEnsemble {
            wealths,
            seed,
            rng,
            interactions: 0,
        })
    }

    /// Ensemble with given wealths and a fresh stream.
    pub fn from_wealths(wealths: Vec<f64>, seed: u64) -> Result<Self> {
        if wealths.len() < 2 {
            return Err(Error::config("r_agents", "need at least 2 agents"));
        }
        if wealths.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("agent wealth must be non-negative".into()));
        }
        Ok(AgentEnsemble {
            wealths,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            interactions: 0,
        })
    }

    pub fn wealths(&self) -> &[f64] {
        &self.wealths
    }

    pub fn len(&self) -> usize {
        self.wealths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wealths.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn interactions(&self) -> u64 {
        self.interactions
    }

    pub fn total_wealth(&self) -> f64 {
        self.wealths.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total_wealth() / self.wealths.len() as f64
    }

    /// Position of the random stream, for checkpoints.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rebuild an ensemble mid-run from checkpointed parts.
    pub fn restore(wealths: Vec<f64>, seed: u64, word_pos: u128, interactions: u64) -> Result<Self> {
        let mut e = Self::from_wealths(wealths, seed)?;
        e.rng.set_word_pos(word_pos);
        e.interactions = interactions;
        Ok(e)
    }

    /// Perform `n` trades between uniformly drawn distinct pairs.
    pub fn interact(&mut self, params: &Params, n: u64) {
        let r = self.wealths.len();
        let gamma = params.gamma;
        for _ in 0..n {
            let a = self.rng.random_range(0..r);
            let mut b = self.rng.random_range(0..r - 1);
            if b >= a {
                b += 1;
            }
            let (wa, wb) = (self.wealths[a], self.wealths[b]);
            let dw = exchange_unchecked(wa, wb);
            let p_a = 0.5 * (1.0 - gamma * (wa - wb).tanh());
            let u: f64 = self.rng.random();
            let (winner, loser) = if u < p_a { (a, b) } else { (b, a) };
            let lw = self.wealths[loser];
            let left = (lw - dw).max(0.0);
            self.wealths[loser] = left;
            self.wealths[winner] += lw - left;
        }
        self.interactions += n;
    }

    /// Bin the agents onto `grid` with mass `1/R` each.
    pub fn empirical_histogram(&self, grid: WealthGrid) -> Histogram {
        let mut dist = Distribution::empty(grid);
        let m = 1.0 / self.wealths.len() as f64;
        let mut overflow = 0.0;
        for &w in &self.wealths {
            if dist.deposit(w, m).is_err() {
                overflow += m;
            }
        }
        Histogram {
            distribution: dist,
            overflow_mass: overflow,
        }
    }

    /// Exact Gini coefficient of the sample.
    pub fn gini(&self) -> f64 {
        sample_gini(&self.wealths)
    }

    /// Fraction of agents holding less than `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        self.wealths.iter().filter(|&&w| w < threshold).count() as f64 / self.wealths.len() as f64
    }
}

/// Gini coefficient of a finite sample via the sorted-rank formula.
pub fn sample_gini(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = v
        .iter()
        .enumerate()
        .map(|(i, w)| (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * w)
        .sum();
    weighted / (n as f64 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    #[test]
    fn init_rescales_mean() {
        for kind in [InitKind::Uniform, InitKind::Normal] {
            let e = AgentEnsemble::new(10_000, kind, 7).unwrap();
            assert!((e.mean() - 1.0).abs() < 1e-12);
            assert!(e.wealths().iter().all(|&w| w >= 0.0));
        }
        assert!(AgentEnsemble::new(1, InitKind::Uniform, 7).is_err());
    }

    #[test]
    fn uniform_sample_gini() {
        let e = AgentEnsemble::new(10_000, InitKind::Uniform, 11).unwrap();
        assert!((e.gini() - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn two_equal_agents() {
        let mut e = AgentEnsemble::from_wealths(vec![1.0, 1.0], 3).unwrap();
        e.interact(&Params::default(), 1);
        let mut w = e.wealths().to_vec();
        w.sort_by(f64::total_cmp);
        assert_eq!(w, vec![0.5, 1.5]);
        assert_eq!(e.interactions(), 1);
    }

    #[test]
    fn broke_agents_stay_broke() {
        let mut e = AgentEnsemble::from_wealths(vec![0.0, 2.0, 1.0, 0.0], 5).unwrap();
        e.interact(&Params::with_gamma(1.0), 1000);
        // a zero wealth can only change if it trades dw > 0, which it never does
        assert_eq!(e.wealths()[0], 0.0);
        assert_eq!(e.wealths()[3], 0.0);
    }

    #[test]
    fn seeded_replay() {
        let mut a = AgentEnsemble::new(500, InitKind::Normal, 42).unwrap();
        let mut b = AgentEnsemble::new(500, InitKind::Normal, 42).unwrap();
        a.interact(&Params::with_gamma(0.5), 10_000);
        b.interact(&Params::with_gamma(0.5), 10_000);
        assert_eq!(a.wealths(), b.wealths());
    }

    #[test]
    fn restore_continues_stream() {
        let params = Params::default();
        let mut a = AgentEnsemble::new(100, InitKind::Uniform, 9).unwrap();
        a.interact(&params, 500);
        let mut b = AgentEnsemble::restore(a.wealths().to_vec(), a.seed(), a.rng_word_pos(), 500).unwrap();
        a.interact(&params, 500);
        b.interact(&params, 500);
        assert_eq!(a.wealths(), b.wealths());
        assert_eq!(b.interactions(), 1000);
    }

    #[test]
    fn histogram_examples() {
        let grid = WealthGrid::new(0.01, 400).unwrap();
        let c = grid.center(42);
        let e = AgentEnsemble::from_wealths(vec![c, c], 1).unwrap();
        let h = e.empirical_histogram(grid);
        assert!((h.distribution.bin_mass(42) - 1.0).abs() < 1e-12);

        let e = AgentEnsemble::new(1000, InitKind::Uniform, 2).unwrap();
        let h = e.empirical_histogram(grid);
        assert!((h.distribution.norm() - 1.0).abs() < 1e-12);
        assert!((h.distribution.mean() - e.mean()).abs() < 1e-12);
        assert_eq!(h.overflow_mass, 0.0);
    }

    #[test]
    fn histogram_reports_overflow() {
        let grid = WealthGrid::new(0.01, 100).unwrap();
        let e = AgentEnsemble::from_wealths(vec![0.5, 5.0], 1).unwrap();
        let h = e.empirical_histogram(grid);
        assert_eq!(h.overflow_mass, 0.5);
        assert!((metrics::misery_fraction(&h.distribution)).abs() < 1e-12);
    }

    #[test]
    fn sample_gini_extremes() {
        assert_eq!(sample_gini(&[1.0; 10]), 0.0);
        let mut v = vec![0.0; 99];
        v.push(100.0);
        assert!((sample_gini(&v) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn rate_matching() {
        assert_eq!(interactions_per_step(10_000, 0.01), 100);
        assert_eq!(interactions_per_step(10, 0.01), 1);
    }
}

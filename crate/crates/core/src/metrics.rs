//! Inequality and entropy observables of a wealth [`Distribution`].
//!
//! Every function here is a pure read of the distribution. The condensate
//! atom counts as part of bin 0 for per-bin quantities (entropy, misery
//! fraction) and as wealth exactly zero for wealth-weighted ones.

use serde::{Deserialize, Serialize};

use crate::grid::Distribution;

/// Smallest density still counted as populated when picking the tail-fit window.
pub const TAIL_DENSITY_FLOOR: f64 = 1e-9;
/// Minimum number of bins for a tail fit.
pub const TAIL_MIN_BINS: usize = 5;
/// Fits with a lower coefficient of determination are rejected.
pub const TAIL_MIN_R2: f64 = 0.98;

/// Differential Shannon entropy `-sum N ln N h`, in nats. May be negative.
pub fn shannon_entropy(dist: &Distribution) -> f64 {
    let h = dist.grid().bin_width();
    let mut s = 0.0;
    for i in 0..dist.grid().n_bins() {
        let n = dist.bin_density(i);
        if n > 0.0 {
            s -= n * n.ln() * h;
        }
    }
    s
}

/// Wealth-weighted part of the Theil entropy, `-sum N (w/<w>) ln(w/<w>) h`.
///
/// The full Theil entropy of `N_T` agents is `ln N_T` plus this value.
pub fn theil_entropy_integral(dist: &Distribution) -> f64 {
    let mean = dist.mean();
    if mean <= 0.0 {
        return 0.0;
    }
    let grid = dist.grid();
    let h = grid.bin_width();
    dist.density()
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(i, d)| {
            let x = grid.center(i) / mean;
            -d * h * x * x.ln()
        })
        .sum()
}

/// Full Theil entropy for a population of `n_agents`.
pub fn theil_entropy(dist: &Distribution, n_agents: f64) -> f64 {
    n_agents.ln() + theil_entropy_integral(dist)
}

/// Expected wealth exchanged per unit rate: `1/2 sum_ij m_i m_j w_i w_j / (w_i + w_j)`.
pub fn liquidity(dist: &Distribution) -> f64 {
    let grid = dist.grid();
    let masses = dist.masses();
    let populated: Vec<(f64, f64)> = masses
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(i, &m)| (grid.center(i), m))
        .collect();
    let mut total = 0.0;
    for (a, &(wi, mi)) in populated.iter().enumerate() {
        total += 0.5 * mi * mi * wi;
        let mut row = 0.0;
        for &(wj, mj) in &populated[a + 1..] {
            row += mj * wi * wj / (wi + wj);
        }
        total += 2.0 * mi * row;
    }
    0.5 * total
}

/// Points of a Lorenz curve: population share `x` and wealth share `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorenzCurve {
    pub points: Vec<(f64, f64)>,
}

impl LorenzCurve {
    /// Linear interpolation of `L` at population share `x`.
    pub fn at(&self, x: f64) -> f64 {
        let pts = &self.points;
        match pts.iter().position(|p| p.0 >= x) {
            None => 1.0,
            Some(0) => pts[0].1,
            Some(k) => {
                let (x0, l0) = pts[k - 1];
                let (x1, l1) = pts[k];
                if x1 == x0 {
                    l1
                } else {
                    l0 + (l1 - l0) * (x - x0) / (x1 - x0)
                }
            }
        }
    }

    /// `1 - 2 * integral of L`, trapezoidal, clamped to `[0, 1]`.
    pub fn gini(&self) -> f64 {
        let area: f64 = self
            .points
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum();
        (1.0 - 2.0 * area).clamp(0.0, 1.0)
    }
}

/// Cumulative (population, wealth) shares after the condensate and after each bin.
fn lorenz_full(dist: &Distribution) -> LorenzCurve {
    let grid = dist.grid();
    let norm = dist.norm();
    let wealth = dist.mean();
    let mut points = Vec::with_capacity(grid.n_bins() + 2);
    points.push((0.0, 0.0));
    if norm <= 0.0 || wealth <= 0.0 {
        points.push((1.0, 1.0));
        return LorenzCurve { points };
    }
    let mut x = dist.condensate();
    let mut f = 0.0;
    if x > 0.0 {
        points.push((x / norm, 0.0));
    }
    let last = dist.top_populated().unwrap_or(0);
    for (i, m) in dist.masses().into_iter().enumerate().take(last + 1) {
        if m == 0.0 {
            continue;
        }
        x += m;
        f += m * grid.center(i);
        points.push(((x / norm).min(1.0), (f / wealth).min(1.0)));
    }
    if let Some(p) = points.last_mut() {
        *p = (1.0, 1.0);
    }
    LorenzCurve { points }
}

/// Lorenz curve sampled at `n_points` evenly spaced wealth thresholds over the grid.
///
/// The end points (0, 0) and (1, 1) are always present.
pub fn lorenz_curve(dist: &Distribution, n_points: usize) -> LorenzCurve {
    let n_points = n_points.max(2);
    let grid = dist.grid();
    let n = grid.n_bins();
    let norm = dist.norm();
    let wealth = dist.mean();
    if norm <= 0.0 || wealth <= 0.0 {
        return LorenzCurve {
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        };
    }
    // cumulative shares at every bin edge
    let masses = dist.masses();
    let mut cum = Vec::with_capacity(n + 1);
    let mut x = dist.condensate();
    let mut f = 0.0;
    cum.push((x, f));
    for (i, m) in masses.iter().enumerate() {
        x += m;
        f += m * grid.center(i);
        cum.push((x, f));
    }
    let mut points = Vec::with_capacity(n_points);
    points.push((0.0, 0.0));
    for s in 1..n_points - 1 {
        let edge = (s * n + (n_points - 1) / 2) / (n_points - 1);
        let (x, f) = cum[edge];
        points.push(((x / norm).min(1.0), (f / wealth).min(1.0)));
    }
    points.push((1.0, 1.0));
    LorenzCurve { points }
}

/// Gini coefficient from the Lorenz curve at full bin resolution.
pub fn gini(dist: &Distribution) -> f64 {
    lorenz_full(dist).gini()
}

/// Least-squares decay rate of `ln N` over bins with centers in `[fit_lo, fit_hi]`.
///
/// `None` when fewer than five bins are usable or the fit is poor (R^2 below 0.98).
pub fn tail_exponent(dist: &Distribution, fit_lo: f64, fit_hi: f64) -> Option<f64> {
    let grid = dist.grid();
    let pts: Vec<(f64, f64)> = (0..grid.n_bins())
        .map(|i| (grid.center(i), dist.bin_density(i)))
        .filter(|&(w, d)| w >= fit_lo && w <= fit_hi && d > 0.0)
        .map(|(w, d)| (w, d.ln()))
        .collect();
    let (slope, r2) = linear_fit(&pts)?;
    (r2 >= TAIL_MIN_R2).then_some(-slope)
}

/// Slope and R^2 of an ordinary least-squares line; `None` below five points.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < TAIL_MIN_BINS {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, r2))
}

/// Default tail-fit window: from `<w>` up to the last bin whose density exceeds 1e-9.
pub fn default_tail_window(dist: &Distribution) -> Option<(f64, f64)> {
    let grid = dist.grid();
    let hi = (0..grid.n_bins())
        .rev()
        .find(|&i| dist.bin_density(i) > TAIL_DENSITY_FLOOR)?;
    let hi = grid.center(hi);
    (hi > 1.0).then_some((1.0, hi))
}

/// Average chance that an agent holding `w` gains in its next trade.
pub fn gain_probability(dist: &Distribution, gamma: f64, w: f64) -> f64 {
    let norm = dist.norm();
    if norm <= 0.0 {
        return 0.5;
    }
    let grid = dist.grid();
    let mut avg = dist.condensate() * w.tanh();
    for (j, m) in dist.masses().into_iter().enumerate() {
        if m > 0.0 {
            avg += m * (w - grid.center(j)).tanh();
        }
    }
    0.5 * (1.0 - gamma * avg / norm)
}

/// [`gain_probability`] at every bin center.
pub fn gain_probability_profile(dist: &Distribution, gamma: f64) -> Vec<f64> {
    dist.grid()
        .centers()
        .map(|w| gain_probability(dist, gamma, w))
        .collect()
}

/// Probability mass in the lowest bin, condensate included.
pub fn misery_fraction(dist: &Distribution) -> f64 {
    dist.bin_mass(0)
}

/// How the tail-fit window and Theil offset are chosen for a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Fixed `(lo, hi)` window; `None` picks [`default_tail_window`].
    pub tail_window: Option<(f64, f64)>,
    /// Population used for the `ln N_T` offset of the full Theil entropy.
    pub n_agents: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            tail_window: None,
            n_agents: 1e4,
        }
    }
}

/// One time sample of every scalar observable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    pub entropy: f64,
    pub theil_integral: f64,
    pub liquidity: f64,
    pub gini: f64,
    pub zeta: Option<f64>,
    pub misery: f64,
    pub norm: f64,
    pub mean: f64,
}

impl MetricsRecord {
    pub fn compute(t: u64, dist: &Distribution, cfg: &MetricsConfig) -> Self {
        let zeta = cfg
            .tail_window
            .or_else(|| default_tail_window(dist))
            .and_then(|(lo, hi)| tail_exponent(dist, lo, hi));
        MetricsRecord {
            t,
            entropy: shannon_entropy(dist),
            theil_integral: theil_entropy_integral(dist),
            liquidity: liquidity(dist),
            gini: gini(dist),
            zeta,
            misery: misery_fraction(dist),
            norm: dist.norm(),
            mean: dist.mean(),
        }
    }
}

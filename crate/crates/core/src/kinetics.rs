//! Forward-Euler integration of the binned exchange master equation.
//!
//! Two agents with wealths `w1`, `w2` meet at rate `k N(w1) N(w2)` and trade
//! `dw = w1 w2 / (w1 + w2)`; the agent holding `w1` wins it with probability
//! `(1 - gamma tanh(w1 - w2)) / 2`. On the grid every pair of bins sends its
//! transaction mass to the four post-trade wealths through the
//! moment-conserving deposit, so both agent number and total wealth are
//! conserved up to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{scatter_mass, Distribution, GrowthPolicy};

/// Wealth moved in one trade between holders of `w1` and `w2`.
///
/// Never exceeds the poorer side's wealth; zero when either side has nothing.
pub fn exchange_amount(w1: f64, w2: f64) -> Result<f64> {
    if !(w1 >= 0.0 && w2 >= 0.0) {
        return Err(Error::Domain(format!("wealth must be non-negative, got ({w1}, {w2})")));
    }
    Ok(exchange_unchecked(w1, w2))
}

#[inline]
pub(crate) fn exchange_unchecked(w1: f64, w2: f64) -> f64 {
    let s = w1 + w2;
    if s == 0.0 {
        0.0
    } else {
        w1 * w2 / s
    }
}

/// Probability that the holder of `w1` wins a trade against the holder of `w2`.
pub fn win_probability(gamma: f64, w1: f64, w2: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(0.5 * (1.0 - gamma * (w1 - w2).tanh()))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma must lie in [0, 1], got {gamma}")))
    }
}

/// Integration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// Bias toward the poorer agent, in `[0, 1]`.
    pub gamma: f64,
    /// Exchange rate times time step.
    pub k_dt: f64,
    pub norm_tol: f64,
    pub mean_tol: f64,
    pub growth: GrowthPolicy,
    pub renormalize_each_step: bool,
    /// Bins holding less mass than this sit out the step. Skipping a bin
    /// drops both its outflow and its inflow, so conservation stays exact.
    pub active_mass_floor: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            gamma: 0.0,
            k_dt: 0.01,
            norm_tol: 1e-9,
            mean_tol: 1e-6,
            growth: GrowthPolicy::default(),
            renormalize_each_step: true,
            active_mass_floor: 1e-12,
        }
    }
}

impl Params {
    pub fn with_gamma(gamma: f64) -> Self {
        Params {
            gamma,
            ..Params::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.k_dt > 0.0 && self.k_dt <= 0.5) {
            return Err(Error::config("k_dt", format!("must lie in (0, 0.5], got {}", self.k_dt)));
        }
        if !(self.norm_tol > 0.0 && self.mean_tol > 0.0) {
            return Err(Error::config("tolerances", "norm_tol and mean_tol must be positive"));
        }
        if !(self.active_mass_floor >= 0.0) {
            return Err(Error::config("active_mass_floor", "must be non-negative"));
        }
        if !(self.growth.top_fraction > 0.0 && self.growth.top_fraction <= 1.0) {
            return Err(Error::config("growth.top_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Grow the grid so that the next step cannot deposit past the last center.
fn ensure_capacity(dist: &mut Distribution, params: &Params) -> Result<()> {
    let grid = *dist.grid();
    let h = grid.bin_width();
    let floor = params.active_mass_floor;
    let top = dist
        .density()
        .iter()
        .rposition(|&d| d * h >= floor && d > 0.0);
    let Some(top) = top else { return Ok(()) };

    // the largest reachable wealth is 3/2 of the richest trading bin
    let reach = 1.5 * grid.center(top);
    let mut required = (reach / h - 0.5).ceil() as usize + 2;
    if dist.top_mass(&params.growth) > params.growth.top_mass_trigger {
        required = required.max(2 * grid.n_bins());
    }
    if required > grid.n_bins() {
        match params.growth.grown_size(grid.n_bins(), required) {
            Some(n) => dist.grow_to(n),
            None => {
                let lost: f64 = dist.density()[top..].iter().map(|d| d * h).sum();
                return Err(Error::Overflow {
                    w: reach,
                    w_max: grid.w_max(),
                    lost_mass: lost,
                });
            }
        }
    }
    Ok(())
}

/// One forward-Euler update.
pub fn step(dist: &Distribution, params: &Params) -> Result<Distribution> {
    step_numbered(dist, params, 0)
}

pub(crate) fn step_numbered(dist: &Distribution, params: &Params, step_no: u64) -> Result<Distribution> {
    params.validate()?;
    let mut base = dist.clone();
    ensure_capacity(&mut base, params)?;

    let grid = *base.grid();
    let h = grid.bin_width();
    let n = grid.n_bins();
    let k = params.k_dt;
    let gamma = params.gamma;

    let old = base.masses();
    let mut acc = old.clone();
    let mut condensate = base.condensate();

    let active: Vec<usize> = (0..n)
        .filter(|&i| old[i] > 0.0 && old[i] >= params.active_mass_floor)
        .collect();
    let active_mass: f64 = active.iter().map(|&i| old[i]).sum();

    // tanh((j - i) h) depends only on the index gap
    let span = active.last().map_or(0, |&t| t - active[0] + 1);
    let tanh_gap: Vec<f64> = (0..span).map(|d| (d as f64 * h).tanh()).collect();

    for &i in &active {
        acc[i] -= 2.0 * k * old[i] * active_mass;
    }

    let rows = pair_chunks(active.len());
    let ctx = PairContext {
        active: &active,
        old: &old,
        tanh_gap: &tanh_gap,
        h,
        k,
        gamma,
    };
    let parts = route_chunks(&ctx, &rows, n);
    // merge in chunk order so the sum does not depend on the worker count
    let mut lost = 0.0;
    for part in &parts {
        for (x, p) in acc.iter_mut().zip(&part.masses) {
            *x += p;
        }
        condensate += part.condensate;
        lost += part.lost;
    }
    if lost > 0.0 {
        return Err(Error::Overflow {
            w: grid.w_max(),
            w_max: grid.w_max(),
            lost_mass: lost,
        });
    }
    if let Some((i, m)) = acc.iter().enumerate().find(|(_, m)| **m < 0.0) {
        return Err(Error::Integrity {
            step: step_no,
            reason: format!("negative mass {m:e} in bin {i}"),
        });
    }

    let mut next = Distribution::from_masses(grid, &acc, condensate);
    if params.renormalize_each_step && next.norm() > 0.0 {
        let target = dist.norm();
        next.renormalize();
        if target != 1.0 {
            next = Distribution::from_masses(
                grid,
                &next.masses().iter().map(|m| m * target).collect::<Vec<_>>(),
                next.condensate() * target,
            );
        }
    }
    let dn = (next.norm() - dist.norm()).abs();
    let dm = (next.mean() - dist.mean()).abs();
    if dn > params.norm_tol || dm > params.mean_tol {
        return Err(Error::Integrity {
            step: step_no,
            reason: format!("norm drift {dn:e}, mean drift {dm:e}"),
        });
    }
    Ok(next)
}

/// The pair loop is cut into this many pieces whatever the thread count.
const PAIR_CHUNKS: usize = 16;

struct PairContext<'a> {
    active: &'a [usize],
    old: &'a [f64],
    tanh_gap: &'a [f64],
    h: f64,
    k: f64,
    gamma: f64,
}

struct Routed {
    masses: Vec<f64>,
    condensate: f64,
    lost: f64,
}

/// Split outer rows of the triangular pair loop into pieces of similar work.
fn pair_chunks(len: usize) -> Vec<std::ops::Range<usize>> {
    let total = len * (len + 1) / 2;
    let mut cuts = vec![0];
    let mut done = 0;
    for a in 0..len {
        done += len - a;
        if done * PAIR_CHUNKS >= total * cuts.len() && cuts.len() < PAIR_CHUNKS {
            cuts.push(a + 1);
        }
    }
    if *cuts.last().unwrap() != len {
        cuts.push(len);
    }
    cuts.windows(2).map(|w| w[0]..w[1]).collect()
}

fn route_chunks(ctx: &PairContext, rows: &[std::ops::Range<usize>], n: usize) -> Vec<Routed> {
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(rows.len());
    if workers <= 1 || ctx.active.len() < 256 {
        return rows.iter().map(|r| route_rows(ctx, r.clone(), n)).collect();
    }
    let mut out: Vec<Option<Routed>> = (0..rows.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..rows.len())
                        .step_by(workers)
                        .map(|c| (c, route_rows(ctx, rows[c].clone(), n)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("pair worker panicked") {
                out[c] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every chunk routed")).collect()
}

/// Inflow from all pairs whose poorer member is one of `rows`.
///
/// Positions are handled in index units, u = w / h - 1/2, so bin i sits at
/// u = i and a trade of size dw shifts u by dw / h. The fractional part of
/// the shift is shared by all four destinations of a pair.
fn route_rows(ctx: &PairContext, rows: std::ops::Range<usize>, n: usize) -> Routed {
    let PairContext {
        active,
        old,
        tanh_gap,
        h,
        k,
        gamma,
    } = *ctx;
    let mut acc = vec![0.0; n];
    let mut condensate = 0.0;
    let mut lost = 0.0;
    for a in rows {
        let i = active[a];
        let ai = i as f64 + 0.5;
        let wi = ai * h;
        let mi = old[i];

        let t = k * mi * mi;
        lost += scatter_mass(&mut acc, &mut condensate, h, 1.5 * wi, t);
        lost += scatter_mass(&mut acc, &mut condensate, h, 0.5 * wi, t);

        for &j in &active[a + 1..] {
            let aj = j as f64 + 0.5;
            // both orderings of the pair route identically
            let t = 2.0 * k * mi * old[j];
            let shift = ai * aj / (ai + aj);
            let whole = shift as usize;
            let frac = shift - whole as f64;
            // i is the poorer side: tanh(wi - wj) = -tanh_gap
            let win_i = t * 0.5 * (1.0 + gamma * tanh_gap[j - i]);
            let lose_i = t - win_i;

            // i + shift and j + shift
            acc[i + whole] += win_i * (1.0 - frac);
            acc[i + whole + 1] += win_i * frac;
            acc[j + whole] += lose_i * (1.0 - frac);
            acc[j + whole + 1] += lose_i * frac;
            // j - shift stays above u = 0 because shift < i + 1/2
            let down = j - whole;
            acc[down] += win_i * (1.0 - frac);
            acc[down - 1] += win_i * frac;
            // i - shift may fall below the first center
            if whole < i {
                let down = i - whole;
                acc[down] += lose_i * (1.0 - frac);
                acc[down - 1] += lose_i * frac;
            } else {
                lost += scatter_mass(&mut acc, &mut condensate, h, (ai - shift) * h, lose_i);
            }
        }
    }
    Routed {
        masses: acc,
        condensate,
        lost,
    }
}

/// Rate of change of the Shannon entropy implied by the evolution equation.
///
/// Pairs whose integrand refers to a zero density are skipped; they carry no
/// transaction mass in the limit.
pub fn entropy_production(dist: &Distribution, params: &Params) -> f64 {
    let grid = dist.grid();
    let h = grid.bin_width();
    let n = grid.n_bins();
    let dens: Vec<f64> = (0..n).map(|i| dist.bin_density(i)).collect();
    let top = match dens.iter().rposition(|&d| d > 0.0) {
        Some(t) => t,
        None => return 0.0,
    };

    let interp = |w: f64| -> f64 {
        let u = w / h - 0.5;
        if u <= 0.0 {
            return dens[0];
        }
        let lo = u as usize;
        if lo >= n - 1 {
            return if lo == n - 1 && u == lo as f64 { dens[lo] } else { 0.0 };
        }
        let f = u - lo as f64;
        dens[lo] * (1.0 - f) + dens[lo + 1] * f
    };

    let gamma = params.gamma;
    let mut total = 0.0;
    for i in 0..=top {
        let ni = dens[i];
        if ni <= 0.0 {
            continue;
        }
        let wi = grid.center(i);
        let log_ni = ni.ln();
        for j in 0..=top {
            let nj = dens[j];
            if nj <= 0.0 {
                continue;
            }
            let wj = grid.center(j);
            let dw = wi * wj / (wi + wj);
            let up = interp(wi + dw);
            let down = interp(wi - dw);
            if up <= 0.0 || down <= 0.0 {
                continue;
            }
            let tg = gamma * (wi - wj).tanh();
            let log_ratio = (1.0 - tg) * up.ln() + (1.0 + tg) * down.ln() - log_ni - nj.ln();
            total += ni * nj * log_ratio;
        }
    }
    -params.k_dt * total * h * h
}

//! Discretized wealth axis and the densities that live on it.
//!
//! Wealth is measured in units of the average wealth. Bin `i` covers
//! `[i*h, (i+1)*h)` and is represented by its center `(i + 1/2)*h`.
//! Mass at exactly `w = 0` (agents that can no longer trade) is held in a
//! separate condensate atom that belongs to bin 0 for every observable that
//! works per bin, and sits at `w = 0` for every wealth-weighted one.
//!
//! Deposition is a two-point linear (cloud-in-cell) split. Between two bin
//! centers it conserves mass and first moment exactly; below the first
//! center the split is taken between the condensate atom and bin 0, which
//! keeps both moments exact all the way down to `w = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bin width: one hundredth of the average wealth.
pub const DEFAULT_BIN_WIDTH: f64 = 0.01;

/// Default variance of the normal initial condition.
pub const DEFAULT_NORMAL_VARIANCE: f64 = 1.0 / 6.0;

/// Upper-tail z-score leaving 1e-6 of a unit normal outside the grid.
const NORMAL_TAIL_Z: f64 = 4.753_424_308_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WealthGrid {
    bin_width: f64,
    n_bins: usize,
}

impl WealthGrid {
    pub fn new(bin_width: f64, n_bins: usize) -> Result<Self> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::config("bin_width", format!("must be positive, got {bin_width}")));
        }
        if n_bins < 2 {
            return Err(Error::config("n_bins", format!("must be at least 2, got {n_bins}")));
        }
        Ok(WealthGrid { bin_width, n_bins })
    }

    #[inline]
    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    #[inline]
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Upper edge of the last bin.
    pub fn w_max(&self) -> f64 {
        self.n_bins as f64 * self.bin_width
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }

    pub fn last_center(&self) -> f64 {
        self.center(self.n_bins - 1)
    }

    /// Index of the bin whose interval contains `w`, clamped to the grid.
    pub fn bin_of(&self, w: f64) -> usize {
        if w <= 0.0 {
            return 0;
        }
        ((w / self.bin_width) as usize).min(self.n_bins - 1)
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_bins).map(|i| self.center(i))
    }

    fn with_bins(&self, n_bins: usize) -> Self {
        WealthGrid {
            bin_width: self.bin_width,
            n_bins,
        }
    }
}

/// When and how far a distribution may grow toward higher wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthPolicy {
    /// Fraction of the grid (from the top) that is watched for mass.
    pub top_fraction: f64,
    /// Growth is triggered once the watched region holds more than this.
    pub top_mass_trigger: f64,
    /// Hard ceiling on the number of bins; growth beyond it is an overflow.
    pub max_bins: usize,
}

impl Default for GrowthPolicy {
    fn default() -> Self {
        GrowthPolicy {
            top_fraction: 0.05,
            top_mass_trigger: 1e-12,
            max_bins: 1 << 16,
        }
    }
}

impl GrowthPolicy {
    /// Smallest doubling of `n_bins` that is at least `required`, if the cap allows it.
    pub fn grown_size(&self, n_bins: usize, required: usize) -> Option<usize> {
        let mut n = n_bins;
        while n < required {
            n = n.checked_mul(2)?;
        }
        (n <= self.max_bins).then_some(n)
    }
}

/// Split `mass` deposited at wealth `w` between the two nearest support points.
///
/// `masses` holds per-bin mass (density times bin width). Returns the mass
/// that could not be placed because `w` lies beyond the last bin center.
#[inline]
pub(crate) fn scatter_mass(
    masses: &mut [f64],
    condensate: &mut f64,
    bin_width: f64,
    w: f64,
    mass: f64,
) -> f64 {
    let u = w / bin_width - 0.5;
    if u < 0.0 {
        // between the atom at 0 and the center of bin 0
        let to_bin0 = w / (0.5 * bin_width);
        masses[0] += mass * to_bin0;
        *condensate += mass * (1.0 - to_bin0);
        return 0.0;
    }
    let lo = u as usize;
    let frac = u - lo as f64;
    let last = masses.len() - 1;
    if lo > last || (lo == last && frac > 0.0) {
        return mass;
    }
    if frac == 0.0 {
        masses[lo] += mass;
    } else {
        masses[lo] += mass * (1.0 - frac);
        masses[lo + 1] += mass * frac;
    }
    0.0
}

/// Wealth density on a [`WealthGrid`], plus the condensate atom at `w = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    grid: WealthGrid,
    density: Vec<f64>,
    condensate: f64,
    norm: f64,
    mean: f64,
}

impl Distribution {
    pub fn new(grid: WealthGrid, density: Vec<f64>) -> Result<Self> {
        Self::with_condensate(grid, density, 0.0)
    }

    /// Build from a density array and a point mass at `w = 0`.
    pub fn with_condensate(grid: WealthGrid, density: Vec<f64>, condensate: f64) -> Result<Self> {
        if density.len() != grid.n_bins() {
            return Err(Error::Domain(format!(
                "density has {} entries, grid has {} bins",
                density.len(),
                grid.n_bins()
            )));
        }
        if let Some((i, d)) = density
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.is_finite() && **d >= 0.0))
        {
            return Err(Error::Domain(format!("density[{i}] = {d} is not a non-negative number")));
        }
        if !(condensate.is_finite() && condensate >= 0.0) {
            return Err(Error::Domain(format!("condensate mass {condensate} is not valid")));
        }
        let mut dist = Distribution {
            grid,
            density,
            condensate,
            norm: 0.0,
            mean: 0.0,
        };
        dist.refresh_moments();
        Ok(dist)
    }

    /// All-zero distribution (norm 0); a starting point for histograms.
    pub fn empty(grid: WealthGrid) -> Self {
        Distribution {
            grid,
            density: vec![0.0; grid.n_bins()],
            condensate: 0.0,
            norm: 0.0,
            mean: 0.0,
        }
    }

    pub(crate) fn from_masses(grid: WealthGrid, masses: &[f64], condensate: f64) -> Self {
        let h = grid.bin_width();
        let mut dist = Distribution {
            grid,
            density: masses.iter().map(|m| m / h).collect(),
            condensate,
            norm: 0.0,
            mean: 0.0,
        };
        dist.refresh_moments();
        dist
    }

    /// Normal law with mean 1 and the given variance, truncated at `w = 0`,
    /// normalized and then rescaled in wealth so that the mean is exactly 1.
    pub fn normal(grid: WealthGrid, variance: f64) -> Result<Self> {
        let mut dist = Self::normal_unscaled(grid, variance)?;
        let scale = 1.0 / dist.mean;
        let h = grid.bin_width();
        let mut masses = vec![0.0; grid.n_bins()];
        let mut condensate = dist.condensate;
        let last = grid.last_center();
        for (i, d) in dist.density.iter().enumerate() {
            // the width check in normal_unscaled leaves only negligible mass
            // that a scale above 1 could push past the last center
            let w = (grid.center(i) * scale).min(last);
            scatter_mass(&mut masses, &mut condensate, h, w, d * h);
        }
        dist = Self::from_masses(grid, &masses, condensate);
        Ok(dist)
    }

    /// Truncated, normalized normal law before the wealth rescale.
    pub fn normal_unscaled(grid: WealthGrid, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::config("normal_variance", format!("must be positive, got {variance}")));
        }
        if grid.w_max() < 2.0 {
            return Err(Error::config("n_bins", "grid must span at least [0, 2]"));
        }
        let sigma = variance.sqrt();
        if grid.w_max() < 1.0 + NORMAL_TAIL_Z * sigma {
            return Err(Error::config(
                "n_bins",
                format!(
                    "grid up to {} loses more than 1e-6 of a normal law with variance {variance}",
                    grid.w_max()
                ),
            ));
        }
        let mut density: Vec<f64> = grid
            .centers()
            .map(|w| (-(w - 1.0).powi(2) / (2.0 * variance)).exp())
            .collect();
        let norm: f64 = density.iter().sum::<f64>() * grid.bin_width();
        density.iter_mut().for_each(|d| *d /= norm);
        Self::new(grid, density)
    }

    /// Density 1/2 on `[0, 2)` and zero above.
    pub fn uniform(grid: WealthGrid) -> Result<Self> {
        if grid.w_max() < 2.0 - 1e-12 {
            return Err(Error::config("n_bins", "grid must span at least [0, 2]"));
        }
        let density = grid
            .centers()
            .map(|w| if w < 2.0 { 0.5 } else { 0.0 })
            .collect();
        Self::new(grid, density)
    }

    /// Everything in the bin containing `w`. Handy for tests and examples.
    pub fn point_mass(grid: WealthGrid, w: f64) -> Result<Self> {
        let mut density = vec![0.0; grid.n_bins()];
        density[grid.bin_of(w)] = 1.0 / grid.bin_width();
        Self::new(grid, density)
    }

    #[inline]
    pub fn grid(&self) -> &WealthGrid {
        &self.grid
    }

    /// Density of the continuous part, per unit wealth. The condensate is not included.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Probability mass held exactly at `w = 0`.
    pub fn condensate(&self) -> f64 {
        self.condensate
    }

    /// Mass of bin `i`; bin 0 includes the condensate atom.
    pub fn bin_mass(&self, i: usize) -> f64 {
        let m = self.density[i] * self.grid.bin_width();
        if i == 0 {
            m + self.condensate
        } else {
            m
        }
    }

    /// Density of bin `i` as seen by per-bin observables (bin 0 includes the condensate).
    pub fn bin_density(&self, i: usize) -> f64 {
        self.bin_mass(i) / self.grid.bin_width()
    }

    /// Per-bin masses of the continuous part.
    pub fn masses(&self) -> Vec<f64> {
        let h = self.grid.bin_width();
        self.density.iter().map(|d| d * h).collect()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Index of the highest bin carrying any mass, if there is one.
    pub fn top_populated(&self) -> Option<usize> {
        self.density.iter().rposition(|&d| d > 0.0)
    }

    pub(crate) fn refresh_moments(&mut self) {
        let h = self.grid.bin_width();
        let mut norm = self.condensate;
        let mut first = 0.0;
        for (i, d) in self.density.iter().enumerate() {
            let m = d * h;
            norm += m;
            first += self.grid.center(i) * m;
        }
        self.norm = norm;
        self.mean = first;
    }

    /// Moment-conserving deposit of `mass` at wealth `w`.
    ///
    /// Fails with [`Error::Overflow`] if `w` is past the last bin center;
    /// nothing is deposited in that case.
    pub fn deposit(&mut self, w: f64, mass: f64) -> Result<()> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Domain(format!("deposit wealth must be non-negative, got {w}")));
        }
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(Error::Domain(format!("deposit mass must be non-negative, got {mass}")));
        }
        if w > self.grid.last_center() {
            return Err(Error::Overflow {
                w,
                w_max: self.grid.w_max(),
                lost_mass: mass,
            });
        }
        let h = self.grid.bin_width();
        let u = w / h - 0.5;
        if u < 0.0 {
            let to_bin0 = w / (0.5 * h);
            self.density[0] += mass * to_bin0 / h;
            self.condensate += mass * (1.0 - to_bin0);
        } else {
            let lo = u as usize;
            let frac = u - lo as f64;
            if frac == 0.0 {
                self.density[lo] += mass / h;
            } else {
                self.density[lo] += mass * (1.0 - frac) / h;
                self.density[lo + 1] += mass * frac / h;
            }
        }
        self.norm += mass;
        self.mean += w * mass;
        Ok(())
    }

    /// Like [`deposit`](Self::deposit), but doubles the grid as needed first.
    pub fn deposit_growing(&mut self, w: f64, mass: f64, policy: &GrowthPolicy) -> Result<()> {
        if w.is_finite() && w > self.grid.last_center() {
            let required = (w / self.grid.bin_width() + 0.5).ceil() as usize + 1;
            match policy.grown_size(self.grid.n_bins(), required) {
                Some(n) => self.grow_to(n),
                None => {
                    return Err(Error::Overflow {
                        w,
                        w_max: self.grid.w_max(),
                        lost_mass: mass,
                    })
                }
            }
        }
        self.deposit(w, mass)
    }

    /// Copy onto a wider grid with the same bin width; new bins are empty.
    pub fn extend_grid(&self, new_n_bins: usize) -> Result<Self> {
        if new_n_bins <= self.grid.n_bins() {
            return Err(Error::config(
                "n_bins",
                format!(
                    "extension must grow the grid ({} -> {new_n_bins})",
                    self.grid.n_bins()
                ),
            ));
        }
        let mut out = self.clone();
        out.grow_to(new_n_bins);
        Ok(out)
    }

    pub(crate) fn grow_to(&mut self, new_n_bins: usize) {
        if new_n_bins > self.grid.n_bins() {
            self.grid = self.grid.with_bins(new_n_bins);
            self.density.resize(new_n_bins, 0.0);
        }
    }

    /// Mass held in the top `policy.top_fraction` of the bins.
    pub fn top_mass(&self, policy: &GrowthPolicy) -> f64 {
        let n = self.grid.n_bins();
        let watched = ((n as f64 * policy.top_fraction).ceil() as usize).clamp(1, n);
        let h = self.grid.bin_width();
        self.density[n - watched..].iter().map(|d| d * h).sum()
    }

    /// Rescale all mass so that the norm is exactly one.
    pub(crate) fn renormalize(&mut self) {
        if self.norm > 0.0 {
            let s = 1.0 / self.norm;
            self.density.iter_mut().for_each(|d| *d *= s);
            self.condensate *= s;
            self.refresh_moments();
        }
    }

    /// Sum of absolute differences in per-bin mass (condensate folded into bin 0).
    ///
    /// Grids of different length are compared with the shorter one zero-padded.
    pub fn l1_distance(&self, other: &Distribution) -> f64 {
        let n = self.grid.n_bins().max(other.grid.n_bins());
        (0..n)
            .map(|i| {
                let a = if i < self.grid.n_bins() { self.bin_mass(i) } else { 0.0 };
                let b = if i < other.grid.n_bins() { other.bin_mass(i) } else { 0.0 };
                (a - b).abs()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> WealthGrid {
        WealthGrid::new(0.01, n).unwrap()
    }

    #[test]
    fn grid_extent() {
        assert!((grid(400).w_max() - 4.0).abs() < 1e-12);
        assert!((grid(100).w_max() - 1.0).abs() < 1e-12);
        assert!(matches!(WealthGrid::new(-0.01, 400), Err(Error::Config { .. })));
        assert!(matches!(WealthGrid::new(0.01, 1), Err(Error::Config { .. })));
        assert!(WealthGrid::new(0.0, 10).is_err());
    }

    #[test]
    fn uniform_init() {
        let d = Distribution::uniform(grid(400)).unwrap();
        let g = d.grid();
        assert_eq!(d.density()[g.bin_of(1.0)], 0.5);
        assert!((d.norm() - 1.0).abs() < 1e-12);
        assert!((d.mean() - 1.0).abs() < 1e-9);
        assert_eq!(d.density()[250], 0.0);
        assert!(Distribution::uniform(grid(150)).is_err());
    }

    #[test]
    fn normal_init() {
        let g = grid(400);
        let raw = Distribution::normal_unscaled(g, DEFAULT_NORMAL_VARIANCE).unwrap();
        let peak = raw
            .density()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // 1.0 sits on the edge between bins 99 and 100; the law is symmetric about it
        assert!(peak == 99 || peak == 100, "peak at {peak}");

        let d = Distribution::normal(g, DEFAULT_NORMAL_VARIANCE).unwrap();
        assert!((d.norm() - 1.0).abs() < 1e-12);
        assert!((d.mean() - 1.0).abs() < 1e-9);
        assert!(d.density().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn normal_init_needs_room() {
        // 1 + 4.75 * 0.408 ~ 2.94 exceeds w_max = 2.5
        assert!(Distribution::normal(grid(250), DEFAULT_NORMAL_VARIANCE).is_err());
        assert!(Distribution::normal(grid(300), DEFAULT_NORMAL_VARIANCE).is_ok());
        assert!(Distribution::normal(grid(400), -1.0).is_err());
    }

    #[test]
    fn deposit_splits_linearly() {
        let mut d = Distribution::empty(grid(10));
        d.deposit(0.012, 1.0).unwrap();
        assert!((d.bin_mass(0) - 0.3).abs() < 1e-12);
        assert!((d.bin_mass(1) - 0.7).abs() < 1e-12);

        let mut d = Distribution::empty(grid(10));
        d.deposit(d.grid().center(3), 1.0).unwrap();
        assert!((d.bin_mass(3) - 1.0).abs() < 1e-12);
        assert!(d.bin_mass(2) + d.bin_mass(4) < 1e-12);
    }

    #[test]
    fn deposit_below_first_center_uses_condensate() {
        let mut d = Distribution::empty(grid(10));
        d.deposit(0.002, 1.0).unwrap();
        assert!((d.condensate() - 0.6).abs() < 1e-12);
        assert!((d.bin_mass(0) - 1.0).abs() < 1e-12);
        assert!((d.mean() - 0.002).abs() < 1e-15);

        let mut d = Distribution::empty(grid(10));
        d.deposit(0.0, 0.5).unwrap();
        assert_eq!(d.condensate(), 0.5);
        assert_eq!(d.density()[0], 0.0);
    }

    #[test]
    fn deposit_errors() {
        let mut d = Distribution::empty(grid(10));
        assert!(matches!(d.deposit(-0.1, 1.0), Err(Error::Domain(_))));
        assert!(matches!(d.deposit(0.1, -1.0), Err(Error::Domain(_))));
        match d.deposit(0.2, 0.25) {
            Err(Error::Overflow { lost_mass, .. }) => assert_eq!(lost_mass, 0.25),
            other => panic!("expected overflow, got {other:?}"),
        }
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn deposit_growing_doubles() {
        let mut d = Distribution::empty(grid(10));
        d.deposit_growing(0.35, 1.0, &GrowthPolicy::default()).unwrap();
        assert_eq!(d.grid().n_bins(), 40);
        assert!((d.mean() - 0.35).abs() < 1e-15);

        let capped = GrowthPolicy {
            max_bins: 20,
            ..GrowthPolicy::default()
        };
        assert!(matches!(
            d.deposit_growing(5.0, 1.0, &capped),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn extension_keeps_moments() {
        let d = Distribution::uniform(grid(400)).unwrap();
        let e = d.extend_grid(800).unwrap();
        assert_eq!(e.grid().n_bins(), 800);
        assert_eq!(e.norm(), d.norm());
        assert_eq!(e.mean(), d.mean());
        assert!(d.extend_grid(300).is_err());
        assert!(d.extend_grid(400).is_err());
    }

    #[test]
    fn top_mass_watches_last_bins() {
        let mut d = Distribution::empty(grid(100));
        d.deposit(d.grid().center(97), 1e-6).unwrap();
        d.deposit(d.grid().center(10), 1.0).unwrap();
        assert!((d.top_mass(&GrowthPolicy::default()) - 1e-6).abs() < 1e-18);
    }
}

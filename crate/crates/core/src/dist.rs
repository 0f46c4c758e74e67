//! One-dimensional score densities.
//!
//! A [`ScoreDistribution`] is either a Gaussian, a gridded empirical density
//! (piecewise linear between nodes, integrated exactly, so the normalizing
//! integral is the trapezoidal sum), or a finite mixture of other
//! distributions. Mixtures are what the label-flip transforms produce: the
//! biased class-conditional density is always a convex combination of the
//! true ones.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::numeric::{bisect, linspace, smoothed_slope, trapezoid};

/// Gaussian supports are truncated at this many standard deviations.
pub const GAUSSIAN_REACH: f64 = 8.0;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq)]
pub enum DistKind {
    Gaussian { mean: f64, std: f64 },
    Empirical(Empirical),
    Mixture(Vec<(f64, ScoreDistribution)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    kind: DistKind,
    lo: f64,
    hi: f64,
}

/// Node-valued density with linear interpolation inside each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Empirical {
    grid: Vec<f64>,
    density: Vec<f64>,
    // mass to the left of / right of each node
    head: Vec<f64>,
    tail: Vec<f64>,
}

impl Empirical {
    fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::InvalidDistribution(format!(
                "empirical density needs at least 2 cells and matching lengths (grid {}, density {})",
                grid.len(),
                density.len()
            )));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidDistribution(
                "empirical grid must be finite and strictly ascending".into(),
            ));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidDistribution(
                "empirical density weights must be finite and nonnegative".into(),
            ));
        }
        let total = trapezoid(&grid, &density);
        if total <= 0.0 {
            return Err(Error::InvalidDistribution(
                "empirical density has zero mass".into(),
            ));
        }
        let density: Vec<f64> = density.iter().map(|d| d / total).collect();
        let n = grid.len();
        let cells: Vec<f64> = (0..n - 1)
            .map(|i| 0.5 * (grid[i + 1] - grid[i]) * (density[i] + density[i + 1]))
            .collect();
        let mut head = vec![0.0; n];
        for i in 1..n {
            head[i] = head[i - 1] + cells[i - 1];
        }
        let mut tail = vec![0.0; n];
        for i in (0..n - 1).rev() {
            tail[i] = tail[i + 1] + cells[i];
        }
        Ok(Self {
            grid,
            density,
            head,
            tail,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    fn cell(&self, x: f64) -> usize {
        let k = self.grid.partition_point(|&g| g <= x);
        k.saturating_sub(1).min(self.grid.len() - 2)
    }

    fn pdf(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x < self.grid[0] || x > self.grid[n - 1] {
            return 0.0;
        }
        let k = self.cell(x);
        let t = (x - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        self.density[k] + t * (self.density[k + 1] - self.density[k])
    }

    fn tail(&self, x: f64) -> f64 {
        let k = self.cell(x);
        let right = 0.5 * (self.grid[k + 1] - x) * (self.pdf(x) + self.density[k + 1]);
        (self.tail[k + 1] + right).clamp(0.0, 1.0)
    }

    fn cdf(&self, x: f64) -> f64 {
        let k = self.cell(x);
        let left = 0.5 * (x - self.grid[k]) * (self.density[k] + self.pdf(x));
        (self.head[k] + left).clamp(0.0, 1.0)
    }
}

impl ScoreDistribution {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "gaussian needs finite mean and positive std (got {mean}, {std})"
            )));
        }
        Ok(Self {
            kind: DistKind::Gaussian { mean, std },
            lo: mean - GAUSSIAN_REACH * std,
            hi: mean + GAUSSIAN_REACH * std,
        })
    }

    /// Builds a gridded density; weights are renormalized to unit mass.
    pub fn empirical(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let e = Empirical::new(grid, density)?;
        let (lo, hi) = (e.grid[0], e.grid[e.grid.len() - 1]);
        Ok(Self {
            kind: DistKind::Empirical(e),
            lo,
            hi,
        })
    }

    /// Convex combination of distributions. Zero-weight components are
    /// dropped, a single survivor is returned as-is, and empirical
    /// components sharing one grid are collapsed into a single table.
    pub fn mixture(components: Vec<(f64, ScoreDistribution)>) -> Result<Self> {
        if components.iter().any(|(w, _)| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "mixture weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution(
                "mixture has zero total weight".into(),
            ));
        }
        let mut parts: Vec<(f64, ScoreDistribution)> = components
            .into_iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, d)| (w / total, d))
            .collect();
        if parts.len() == 1 {
            return Ok(parts.pop().unwrap().1);
        }
        if let Some(grid) = shared_grid(&parts) {
            let mut density = vec![0.0; grid.len()];
            for (w, d) in &parts {
                if let DistKind::Empirical(e) = &d.kind {
                    for (acc, v) in density.iter_mut().zip(&e.density) {
                        *acc += w * v;
                    }
                }
            }
            return Self::empirical(grid, density);
        }
        let lo = parts
            .iter()
            .map(|(_, d)| d.lo)
            .fold(f64::INFINITY, f64::min);
        let hi = parts
            .iter()
            .map(|(_, d)| d.hi)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            kind: DistKind::Mixture(parts),
            lo,
            hi,
        })
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// True when density and its derivative have closed forms (Gaussian
    /// components only).
    pub fn is_analytic(&self) -> bool {
        match &self.kind {
            DistKind::Gaussian { .. } => true,
            DistKind::Empirical(_) => false,
            DistKind::Mixture(parts) => parts.iter().all(|(_, d)| d.is_analytic()),
        }
    }

    /// Union of the tabulation grids of all empirical components.
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_nodes(&mut out);
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        out
    }

    fn collect_nodes(&self, out: &mut Vec<f64>) {
        match &self.kind {
            DistKind::Gaussian { .. } => {}
            DistKind::Empirical(e) => out.extend_from_slice(&e.grid),
            DistKind::Mixture(parts) => parts.iter().for_each(|(_, d)| d.collect_nodes(out)),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match &self.kind {
            DistKind::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                INV_SQRT_2PI / std * (-0.5 * z * z).exp()
            }
            DistKind::Empirical(e) => e.pdf(x),
            DistKind::Mixture(parts) => parts.iter().map(|(w, d)| w * d.pdf(x)).sum(),
        }
    }

    /// Derivative of the density in `x`. Empirical tables are smoothed with a
    /// Gaussian kernel (bandwidth two grid steps) before differencing.
    pub fn pdf_slope(&self, x: f64) -> f64 {
        match &self.kind {
            DistKind::Gaussian { mean, std } => -(x - mean) / (std * std) * self.pdf(x),
            DistKind::Empirical(e) => {
                if x < self.lo || x > self.hi {
                    0.0
                } else {
                    smoothed_slope(&e.grid, &e.density, x)
                }
            }
            DistKind::Mixture(parts) => parts.iter().map(|(w, d)| w * d.pdf_slope(x)).sum(),
        }
    }

    /// `P(X >= theta)`: exactly 1 at or below the lower bound and exactly 0 at
    /// or above the upper bound.
    pub fn tail(&self, theta: f64) -> f64 {
        if theta <= self.lo {
            return 1.0;
        }
        if theta >= self.hi {
            return 0.0;
        }
        match &self.kind {
            DistKind::Gaussian { mean, std } => 0.5 * erfc((theta - mean) / (std * SQRT_2)),
            DistKind::Empirical(e) => e.tail(theta),
            DistKind::Mixture(parts) => parts.iter().map(|(w, d)| w * d.tail(theta)).sum(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        match &self.kind {
            DistKind::Gaussian { mean, std } => 0.5 * erfc(-(x - mean) / (std * SQRT_2)),
            DistKind::Empirical(e) => e.cdf(x),
            DistKind::Mixture(parts) => parts.iter().map(|(w, d)| w * d.cdf(x)).sum(),
        }
    }

    /// Smallest-bracket solution of `tail(theta) = p` on the support.
    pub fn inverse_tail(&self, p: f64) -> f64 {
        if p >= 1.0 {
            return self.lo;
        }
        if p <= 0.0 {
            return self.hi;
        }
        let xtol = 1e-13 * (1.0 + self.lo.abs().max(self.hi.abs()));
        bisect(|t| self.tail(t) - p, self.lo, self.hi, xtol)
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            DistKind::Gaussian { mean, .. } => *mean,
            DistKind::Empirical(e) => {
                // exact first moment of the piecewise-linear density
                e.grid
                    .windows(2)
                    .zip(e.density.windows(2))
                    .map(|(x, f)| {
                        let h = x[1] - x[0];
                        h * (f[0] * (2.0 * x[0] + x[1]) + f[1] * (x[0] + 2.0 * x[1])) / 6.0
                    })
                    .sum()
            }
            DistKind::Mixture(parts) => parts.iter().map(|(w, d)| w * d.mean()).sum(),
        }
    }

    /// Translates the density so that observed scores are `x - shift`.
    pub fn shifted(&self, shift: f64) -> ScoreDistribution {
        match &self.kind {
            DistKind::Gaussian { mean, std } => {
                ScoreDistribution::gaussian(mean - shift, *std).expect("shift keeps std")
            }
            DistKind::Empirical(e) => ScoreDistribution::empirical(
                e.grid.iter().map(|x| x - shift).collect(),
                e.density.clone(),
            )
            .expect("translation keeps a valid table"),
            DistKind::Mixture(parts) => ScoreDistribution::mixture(
                parts.iter().map(|(w, d)| (*w, d.shifted(shift))).collect(),
            )
            .expect("translation keeps weights"),
        }
    }

    /// Distribution of `(1 - c) x + c x0`, i.e. the affine underestimate
    /// `x - c (x - x0)`. Requires `c < 1`.
    pub fn affinely_mapped(&self, c: f64, x0: f64) -> ScoreDistribution {
        let scale = 1.0 - c;
        match &self.kind {
            DistKind::Gaussian { mean, std } => {
                ScoreDistribution::gaussian(scale * mean + c * x0, scale * std)
                    .expect("affine map keeps std positive")
            }
            DistKind::Empirical(e) => ScoreDistribution::empirical(
                e.grid.iter().map(|x| scale * x + c * x0).collect(),
                e.density.clone(),
            )
            .expect("affine map keeps a valid table"),
            DistKind::Mixture(parts) => ScoreDistribution::mixture(
                parts
                    .iter()
                    .map(|(w, d)| (*w, d.affinely_mapped(c, x0)))
                    .collect(),
            )
            .expect("affine map keeps weights"),
        }
    }

    /// Tabulates the density on `n` evenly spaced nodes over its bounds.
    pub fn tabulated(&self, n: usize) -> Result<ScoreDistribution> {
        if let DistKind::Empirical(_) = self.kind {
            return Ok(self.clone());
        }
        let grid = linspace(self.lo, self.hi, n);
        let density = grid.iter().map(|&x| self.pdf(x)).collect();
        ScoreDistribution::empirical(grid, density)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            DistKind::Gaussian { mean, std } => Normal::new(*mean, *std)
                .expect("validated at construction")
                .sample(rng),
            DistKind::Empirical(_) => {
                let u: f64 = rng.random();
                self.inverse_tail(1.0 - u)
            }
            DistKind::Mixture(parts) => {
                let mut u: f64 = rng.random();
                for (w, d) in parts {
                    if u < *w {
                        return d.sample(rng);
                    }
                    u -= w;
                }
                parts[parts.len() - 1].1.sample(rng)
            }
        }
    }
}

fn shared_grid(parts: &[(f64, ScoreDistribution)]) -> Option<Vec<f64>> {
    let mut grid: Option<&Vec<f64>> = None;
    for (_, d) in parts {
        match &d.kind {
            DistKind::Empirical(e) => match grid {
                None => grid = Some(&e.grid),
                Some(g) if *g == e.grid => {}
                Some(_) => return None,
            },
            _ => return None,
        }
    }
    grid.cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform01() -> ScoreDistribution {
        ScoreDistribution::empirical(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn tail_at_lower_bound_is_one() {
        let g = ScoreDistribution::gaussian(70.0, 10.0).unwrap();
        assert_eq!(g.tail(g.bounds().0), 1.0);
        let u = uniform01();
        assert_eq!(u.tail(0.0), 1.0);
        assert_eq!(u.tail(1.0), 0.0);
        assert_eq!(u.tail(-5.0), 1.0);
        assert_eq!(u.tail(7.0), 0.0);
    }

    #[test]
    fn gaussian_tail_at_mean_is_half() {
        let g = ScoreDistribution::gaussian(70.0, 10.0).unwrap();
        assert_abs_diff_eq!(g.tail(70.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uniform_tail_quarter() {
        assert_abs_diff_eq!(uniform01().tail(0.25), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn default_gaussian_bounds_are_eight_sigma() {
        let g = ScoreDistribution::gaussian(50.0, 10.0).unwrap();
        assert_eq!(g.bounds(), (-30.0, 130.0));
    }

    #[test]
    fn empirical_is_normalized_and_validated() {
        let d = ScoreDistribution::empirical(vec![0.0, 1.0, 2.0], vec![2.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(d.pdf(0.5), 0.5, epsilon = 1e-15);
        assert!(ScoreDistribution::empirical(vec![0.0], vec![1.0]).is_err());
        assert!(ScoreDistribution::empirical(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ScoreDistribution::empirical(vec![0.0, 1.0], vec![-1.0, 1.0]).is_err());
        assert!(ScoreDistribution::empirical(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(ScoreDistribution::gaussian(0.0, 0.0).is_err());
    }

    #[test]
    fn empirical_tail_matches_exact_integral_of_linear_density() {
        // density 2x on [0, 1]: tail(t) = 1 - t^2
        let d = ScoreDistribution::empirical(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        for t in [0.1, 0.3, 0.77] {
            assert_abs_diff_eq!(d.tail(t), 1.0 - t * t, epsilon = 1e-15);
            assert_abs_diff_eq!(d.cdf(t), t * t, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(d.mean(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn mixture_of_same_grid_tables_collapses() {
        let a = ScoreDistribution::empirical(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        let b = ScoreDistribution::empirical(vec![0.0, 1.0], vec![2.0, 0.0]).unwrap();
        let m = ScoreDistribution::mixture(vec![(0.5, a), (0.5, b)]).unwrap();
        assert!(matches!(m.kind(), DistKind::Empirical(_)));
        assert_abs_diff_eq!(m.pdf(0.3), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_component_mixture_is_the_component() {
        let g = ScoreDistribution::gaussian(1.0, 2.0).unwrap();
        let u = uniform01();
        let m = ScoreDistribution::mixture(vec![(1.0, g.clone()), (0.0, u)]).unwrap();
        assert_eq!(m, g);
    }

    #[test]
    fn gaussian_slope_matches_finite_difference() {
        let g = ScoreDistribution::gaussian(70.0, 10.0).unwrap();
        let h = 1e-5;
        for x in [45.0, 70.0, 83.0] {
            let fd = (g.pdf(x + h) - g.pdf(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(g.pdf_slope(x), fd, epsilon = 1e-10);
        }
    }

    #[test]
    fn shift_moves_gaussian_mean_down() {
        let g = ScoreDistribution::gaussian(70.0, 10.0)
            .unwrap()
            .shifted(7.0);
        assert_eq!(g, ScoreDistribution::gaussian(63.0, 10.0).unwrap());
        let e = uniform01().shifted(0.5);
        assert_eq!(e.bounds(), (-0.5, 0.5));
    }

    #[test]
    fn affine_map_of_gaussian() {
        let g = ScoreDistribution::gaussian(70.0, 10.0)
            .unwrap()
            .affinely_mapped(0.1, 0.0);
        assert_eq!(g, ScoreDistribution::gaussian(63.0, 9.0).unwrap());
    }

    proptest! {
        #[test]
        fn tail_is_nonincreasing_and_inverse_consistent(
            weights in proptest::collection::vec(0.0f64..5.0, 3..12),
            t1 in 0.0f64..1.0, t2 in 0.0f64..1.0,
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 0.1);
            let grid = linspace(0.0, 1.0, weights.len());
            let d = ScoreDistribution::empirical(grid, weights).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(d.tail(lo) >= d.tail(hi) - 1e-15);
            prop_assert!((d.tail(lo) + d.cdf(lo) - 1.0).abs() < 1e-12);
            let p = d.tail(lo);
            prop_assert!((d.tail(d.inverse_tail(p)) - p).abs() < 1e-9);
        }

        #[test]
        fn gaussian_mixture_tail_inverse(p in 0.001f64..0.999, w in 0.05f64..0.95) {
            let m = ScoreDistribution::mixture(vec![
                (w, ScoreDistribution::gaussian(70.0, 10.0).unwrap()),
                (1.0 - w, ScoreDistribution::gaussian(50.0, 10.0).unwrap()),
            ]).unwrap();
            let t = m.inverse_tail(p);
            prop_assert!((m.tail(t) - p).abs() < 1e-12);
        }
    }
}

//! Groups, populations, and conversions between the equivalent primitives
//! (class-conditional densities plus a qualification rate, or a
//! qualification profile plus the overall density).

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dist::ScoreDistribution;
use crate::error::{Error, Result};
use crate::numeric::{linspace, smoothed_slope, trapezoid};

/// Profiles are clamped to `[PROFILE_CLAMP, 1 - PROFILE_CLAMP]` before they
/// are divided by in the Bayes inversion.
pub const PROFILE_CLAMP: f64 = 1e-9;

/// Points used to validate analytic (Gaussian) models.
const VALIDATION_POINTS: usize = 801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupId {
    A,
    B,
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupId::A => "a",
            GroupId::B => "b",
        })
    }
}

/// A value for each of the two groups.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerGroup<T> {
    pub a: T,
    pub b: T,
}

impl<T> PerGroup<T> {
    pub fn new(a: T, b: T) -> Self {
        Self { a, b }
    }

    pub fn get(&self, g: GroupId) -> &T {
        match g {
            GroupId::A => &self.a,
            GroupId::B => &self.b,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(GroupId, &T) -> U) -> PerGroup<U> {
        PerGroup {
            a: f(GroupId::A, &self.a),
            b: f(GroupId::B, &self.b),
        }
    }
}

/// One group's primitives: mass, qualification rate and class-conditional
/// score densities (`qualified` is f¹, `unqualified` is f⁰).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    id: GroupId,
    mass: f64,
    alpha: f64,
    qualified: ScoreDistribution,
    unqualified: ScoreDistribution,
    overall: ScoreDistribution,
}

impl GroupModel {
    pub fn new(
        id: GroupId,
        mass: f64,
        alpha: f64,
        qualified: ScoreDistribution,
        unqualified: ScoreDistribution,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&mass) {
            return Err(Error::InvalidParameter(format!(
                "group {id} mass {mass} outside [0, 1]"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "group {id} qualification rate {alpha} outside (0, 1)"
            )));
        }
        let overall = ScoreDistribution::mixture(vec![
            (alpha, qualified.clone()),
            (1.0 - alpha, unqualified.clone()),
        ])?;
        Ok(Self {
            id,
            mass,
            alpha,
            qualified,
            unqualified,
            overall,
        })
    }

    /// Rebuilds a group from a tabulated profile and the overall density by
    /// Bayes inversion: f¹ ∝ γ f and f⁰ ∝ (1 − γ) f on `grid`.
    ///
    /// The qualification rate is always taken as ∫γf; a supplied `alpha` that
    /// disagrees by more than 2% only triggers a warning.
    pub fn from_profile(
        id: GroupId,
        mass: f64,
        grid: &[f64],
        gamma: &[f64],
        overall: &ScoreDistribution,
        alpha: Option<f64>,
    ) -> Result<Self> {
        if grid.len() != gamma.len() {
            return Err(Error::InconsistentInput(format!(
                "group {id}: {} profile values for {} grid points",
                gamma.len(),
                grid.len()
            )));
        }
        if let Some((x, g)) = grid
            .iter()
            .zip(gamma)
            .find(|(_, g)| !(0.0..=1.0).contains(*g))
        {
            return Err(Error::InconsistentInput(format!(
                "group {id}: profile value {g} at score {x} outside [0, 1]"
            )));
        }
        let f: Vec<f64> = grid.iter().map(|&x| overall.pdf(x)).collect();
        let gamma: Vec<f64> = gamma
            .iter()
            .map(|g| g.clamp(PROFILE_CLAMP, 1.0 - PROFILE_CLAMP))
            .collect();
        let q: Vec<f64> = gamma.iter().zip(&f).map(|(g, f)| g * f).collect();
        let u: Vec<f64> = gamma.iter().zip(&f).map(|(g, f)| (1.0 - g) * f).collect();
        let integral = trapezoid(grid, &q) / trapezoid(grid, &f);
        if let Some(given) = alpha {
            if (given - integral).abs() > 0.02 * integral {
                warn!(
                    "group {id}: supplied qualification rate {given} differs from the profile integral {integral}; using the integral"
                );
            }
        }
        let qualified = ScoreDistribution::empirical(grid.to_vec(), q)?;
        let unqualified = ScoreDistribution::empirical(grid.to_vec(), u)?;
        Self::new(id, mass, integral, qualified, unqualified)
    }

    pub fn id(&self) -> GroupId {
        self.id
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn qualified(&self) -> &ScoreDistribution {
        &self.qualified
    }

    pub fn unqualified(&self) -> &ScoreDistribution {
        &self.unqualified
    }

    /// The overall score density α f¹ + (1 − α) f⁰.
    pub fn overall(&self) -> &ScoreDistribution {
        &self.overall
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.overall.bounds()
    }

    pub fn is_analytic(&self) -> bool {
        self.overall.is_analytic()
    }

    /// Same class densities, different qualification rate.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.id,
            self.mass,
            alpha,
            self.qualified.clone(),
            self.unqualified.clone(),
        )
    }

    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Self::new(
            self.id,
            mass,
            self.alpha,
            self.qualified.clone(),
            self.unqualified.clone(),
        )
    }

    /// Likelihood ratio f¹/f⁰ (infinite where only f¹ has mass, NaN where
    /// neither does).
    pub fn likelihood_ratio(&self, x: f64) -> f64 {
        let (p1, p0) = (self.qualified.pdf(x), self.unqualified.pdf(x));
        if p0 > 0.0 {
            p1 / p0
        } else if p1 > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        }
    }

    fn raw_profile(&self, x: f64) -> Option<f64> {
        let q = self.alpha * self.qualified.pdf(x);
        let u = (1.0 - self.alpha) * self.unqualified.pdf(x);
        (q + u > 0.0).then(|| q / (q + u))
    }

    /// Points where the model is validated: the union of the tabulation
    /// grids, or an even grid over the support for analytic models.
    pub fn validation_grid(&self) -> Vec<f64> {
        let nodes = self.overall.nodes();
        if nodes.is_empty() {
            let (lo, hi) = self.bounds();
            linspace(lo, hi, VALIDATION_POINTS)
        } else {
            nodes
        }
    }

    fn nearest_defined_profile(&self, x: f64) -> Option<f64> {
        let mut grid = self.validation_grid();
        grid.sort_by(|p, q| (p - x).abs().total_cmp(&(q - x).abs()));
        grid.into_iter().find_map(|p| self.raw_profile(p))
    }

    /// The profile γ(x), falling back to the nearest defined value where
    /// both densities vanish. Never fails; used by the solvers.
    pub fn gamma(&self, x: f64) -> f64 {
        self.raw_profile(x)
            .or_else(|| self.nearest_defined_profile(x))
            .unwrap_or(self.alpha)
    }

    /// Derivative of the profile: analytic when the densities are, otherwise
    /// a kernel-smoothed central difference over the tabulation grid.
    pub fn profile_slope(&self, x: f64) -> f64 {
        if self.is_analytic() {
            let (p1, p0) = (self.qualified.pdf(x), self.unqualified.pdf(x));
            if p1 <= 0.0 || p0 <= 0.0 {
                return 0.0;
            }
            let g = self.gamma(x);
            let dlog_l = self.qualified.pdf_slope(x) / p1 - self.unqualified.pdf_slope(x) / p0;
            g * (1.0 - g) * dlog_l
        } else {
            let grid = self.validation_grid();
            let values: Vec<f64> = grid.iter().map(|&p| self.gamma(p)).collect();
            smoothed_slope(&grid, &values, x)
        }
    }

    /// Tabulates (γ, f) on `grid`, the inverse of [`GroupModel::from_profile`].
    pub fn profile_table(&self, grid: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let gamma = grid.iter().map(|&x| self.gamma(x)).collect();
        let f = grid.iter().map(|&x| self.overall.pdf(x)).collect();
        (gamma, f)
    }
}

/// γ_g(x) = α f¹(x) / (α f¹(x) + (1 − α) f⁰(x)).
pub fn qualification_profile(g: &GroupModel, x: f64) -> Result<f64> {
    let (lo, hi) = g.bounds();
    if !(lo..=hi).contains(&x) {
        return Err(Error::Domain { x, lo, hi });
    }
    match g.raw_profile(x) {
        Some(v) => Ok(v),
        None => Err(Error::DegenerateDensity {
            x,
            fallback: g.nearest_defined_profile(x).unwrap_or(g.alpha),
        }),
    }
}

/// `P(X >= theta)` under `d`.
pub fn cdf_tail(d: &ScoreDistribution, theta: f64) -> f64 {
    d.tail(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlrReport {
    pub holds: bool,
    /// Score at which the largest drop in the likelihood ratio ends.
    pub worst_cell: Option<f64>,
    /// Largest relative drop `(l_i - l_{i+1}) / l_i` between neighbours.
    pub max_drop: f64,
}

/// Checks that f¹/f⁰ is nondecreasing on the validation grid (slack 1e-9).
pub fn check_mlr(g: &GroupModel) -> MlrReport {
    let ratios: Vec<(f64, f64)> = g
        .validation_grid()
        .into_iter()
        .map(|x| (x, g.likelihood_ratio(x)))
        .filter(|(_, l)| !l.is_nan())
        .collect();
    let mut report = MlrReport {
        holds: true,
        worst_cell: None,
        max_drop: 0.0,
    };
    for w in ratios.windows(2) {
        let ((_, prev), (x, next)) = (w[0], w[1]);
        if next >= prev - 1e-9 * prev.max(1.0) {
            continue;
        }
        let drop = if prev.is_infinite() {
            1.0
        } else {
            (prev - next) / prev
        };
        report.holds = false;
        if drop > report.max_drop {
            report.max_drop = drop;
            report.worst_cell = Some(x);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mlr: PerGroup<MlrReport>,
    /// Share of the validation grid where γ_b ≤ γ_a + 1e-9.
    pub disadvantaged_fraction: f64,
}

impl Diagnostics {
    fn compute(a: &GroupModel, b: &GroupModel) -> Self {
        let (alo, ahi) = a.bounds();
        let (blo, bhi) = b.bounds();
        let (lo, hi) = (alo.max(blo), ahi.min(bhi));
        let mut grid: Vec<f64> = a
            .validation_grid()
            .into_iter()
            .chain(b.validation_grid())
            .filter(|x| (lo..=hi).contains(x))
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let defined: Vec<(f64, f64)> = grid
            .iter()
            .filter_map(|&x| Some((a.raw_profile(x)?, b.raw_profile(x)?)))
            .collect();
        let fraction = if defined.is_empty() {
            0.0
        } else {
            defined.iter().filter(|(ga, gb)| *gb <= ga + 1e-9).count() as f64 / defined.len() as f64
        };
        Self {
            mlr: PerGroup::new(check_mlr(a), check_mlr(b)),
            disadvantaged_fraction: fraction,
        }
    }

    pub fn b_disadvantaged(&self) -> bool {
        self.disadvantaged_fraction >= 1.0
    }

    pub fn mlr_holds(&self) -> bool {
        self.mlr.a.holds && self.mlr.b.holds
    }
}

/// Two groups plus the firm's gain per true positive and loss per false
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    a: GroupModel,
    b: GroupModel,
    u_plus: f64,
    u_minus: f64,
    diagnostics: Diagnostics,
}

impl Population {
    pub fn new(a: GroupModel, b: GroupModel, u_plus: f64, u_minus: f64) -> Result<Self> {
        if a.id() != GroupId::A || b.id() != GroupId::B {
            return Err(Error::InvalidParameter(
                "groups must be (a, b) in order".into(),
            ));
        }
        if (a.mass() + b.mass() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "group masses {} + {} do not sum to 1",
                a.mass(),
                b.mass()
            )));
        }
        if !(u_plus > 0.0 && u_plus.is_finite() && u_minus > 0.0 && u_minus.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "utilities must be positive and finite (u+ = {u_plus}, u- = {u_minus})"
            )));
        }
        let diagnostics = Diagnostics::compute(&a, &b);
        Ok(Self {
            a,
            b,
            u_plus,
            u_minus,
            diagnostics,
        })
    }

    pub fn a(&self) -> &GroupModel {
        &self.a
    }

    pub fn b(&self) -> &GroupModel {
        &self.b
    }

    pub fn group(&self, g: GroupId) -> &GroupModel {
        match g {
            GroupId::A => &self.a,
            GroupId::B => &self.b,
        }
    }

    pub fn groups(&self) -> PerGroup<&GroupModel> {
        PerGroup::new(&self.a, &self.b)
    }

    pub fn u_plus(&self) -> f64 {
        self.u_plus
    }

    pub fn u_minus(&self) -> f64 {
        self.u_minus
    }

    /// u₋ / (u₊ + u₋), the profile level at which accepting breaks even.
    pub fn break_even(&self) -> f64 {
        self.u_minus / (self.u_plus + self.u_minus)
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// Replaces one group, keeping everything else.
    pub fn with_group(&self, g: GroupModel) -> Result<Self> {
        let (a, b) = match g.id() {
            GroupId::A => (g, self.b.clone()),
            GroupId::B => (self.a.clone(), g),
        };
        Self::new(a, b, self.u_plus, self.u_minus)
    }
}

/// Per-group input to [`population_from_profile`].
#[derive(Debug, Clone)]
pub struct ProfileInput {
    pub mass: f64,
    pub grid: Vec<f64>,
    pub gamma: Vec<f64>,
    pub overall: ScoreDistribution,
    pub alpha: Option<f64>,
}

pub fn population_from_profile(
    input: PerGroup<ProfileInput>,
    u_plus: f64,
    u_minus: f64,
) -> Result<Population> {
    let build = |id, p: &ProfileInput| {
        GroupModel::from_profile(id, p.mass, &p.grid, &p.gamma, &p.overall, p.alpha)
    };
    Population::new(
        build(GroupId::A, &input.a)?,
        build(GroupId::B, &input.b)?,
        u_plus,
        u_minus,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normal {
    pub mean: f64,
    pub std: f64,
}

impl Normal {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    pub fn to_dist(self) -> Result<ScoreDistribution> {
        ScoreDistribution::gaussian(self.mean, self.std)
    }
}

/// Gaussian two-group population. Defaults give the standard synthetic
/// setup: n = (0.8, 0.2), α = (0.8, 0.3), f¹ = N(70, 10), f⁰ = N(50, 10) in
/// both groups, u₋/u₊ = 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_a: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub qualified_a: Normal,
    pub unqualified_a: Normal,
    pub qualified_b: Normal,
    pub unqualified_b: Normal,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_a: 0.8,
            alpha_a: 0.8,
            alpha_b: 0.3,
            qualified_a: Normal::new(70.0, 10.0),
            unqualified_a: Normal::new(50.0, 10.0),
            qualified_b: Normal::new(70.0, 10.0),
            unqualified_b: Normal::new(50.0, 10.0),
        }
    }
}

impl SyntheticParams {
    pub fn build(&self, u_plus: f64, u_minus: f64) -> Result<Population> {
        let a = GroupModel::new(
            GroupId::A,
            self.n_a,
            self.alpha_a,
            self.qualified_a.to_dist()?,
            self.unqualified_a.to_dist()?,
        )?;
        let b = GroupModel::new(
            GroupId::B,
            1.0 - self.n_a,
            self.alpha_b,
            self.qualified_b.to_dist()?,
            self.unqualified_b.to_dist()?,
        )?;
        Population::new(a, b, u_plus, u_minus)
    }
}

/// The default synthetic population with u₊ = 1, u₋ = 10.
pub fn synthetic() -> Population {
    SyntheticParams::default()
        .build(1.0, 10.0)
        .expect("default synthetic parameters are valid")
}

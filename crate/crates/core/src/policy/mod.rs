//! Fairness measures, utility, and threshold solvers.

mod contour;
mod oracle;
mod solve;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::ScoreDistribution;
use crate::error::{Error, Result};
use crate::numeric::linspace;
use crate::population::{GroupId, GroupModel, PerGroup, Population};

pub use contour::{utility_contour, utility_contour_with, Contour, ContourCurve};
pub use oracle::{grid_oracle, grid_oracle_with};
pub use solve::{solve_fair, solve_fair_with, solve_mu};

/// Points used to tabulate a [`ConstraintCurve`].
pub const CURVE_POINTS: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "MU", alias = "mu")]
    Mu,
    #[serde(rename = "DP", alias = "dp")]
    Dp,
    #[serde(rename = "TPR", alias = "tpr")]
    Tpr,
    #[serde(rename = "FPR", alias = "fpr")]
    Fpr,
    #[serde(rename = "EO", alias = "eo")]
    Eo,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Mu,
        Criterion::Dp,
        Criterion::Tpr,
        Criterion::Fpr,
        Criterion::Eo,
    ];

    /// The single-measure criteria whose gap is reported for every policy.
    pub const MEASURES: [Criterion; 3] = [Criterion::Dp, Criterion::Tpr, Criterion::Fpr];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Mu => "MU",
            Criterion::Dp => "DP",
            Criterion::Tpr => "TPR",
            Criterion::Fpr => "FPR",
            Criterion::Eo => "EO",
        }
    }

    /// Measures constrained by this criterion.
    pub fn required(self) -> &'static [Criterion] {
        match self {
            Criterion::Mu => &[],
            Criterion::Dp => &[Criterion::Dp],
            Criterion::Tpr => &[Criterion::Tpr],
            Criterion::Fpr => &[Criterion::Fpr],
            Criterion::Eo => &[Criterion::Tpr, Criterion::Fpr],
        }
    }

    fn is_measure(self) -> bool {
        matches!(self, Criterion::Dp | Criterion::Tpr | Criterion::Fpr)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown criterion `{s}`")))
    }
}

pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub criterion: Criterion,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl FairnessSpec {
    pub fn new(criterion: Criterion, epsilon: f64) -> Self {
        Self { criterion, epsilon }
    }

    /// Equality constraint (ε = 0).
    pub fn hard(criterion: Criterion) -> Self {
        Self::new(criterion, 0.0)
    }

    pub fn mu() -> Self {
        Self::new(Criterion::Mu, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverPath {
    RootFind,
    Grid,
}

impl fmt::Display for SolverPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverPath::RootFind => "rootfind",
            SolverPath::Grid => "grid",
        })
    }
}

/// Set when a threshold sits on the edge of its group's score support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    AcceptAll,
    RejectAll,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdPair {
    pub theta: PerGroup<f64>,
    /// Stationarity residual for root-found solutions, the largest
    /// constrained gap for grid solutions.
    pub residual: f64,
    pub solver: SolverPath,
    pub boundary: PerGroup<Option<Boundary>>,
}

impl ThresholdPair {
    pub(crate) fn new(
        pop: &Population,
        theta: PerGroup<f64>,
        residual: f64,
        solver: SolverPath,
    ) -> Self {
        let boundary = theta.map(|g, &t| boundary_of(pop.group(g), t));
        Self {
            theta,
            residual,
            solver,
            boundary,
        }
    }

    pub fn is_interior(&self) -> bool {
        self.boundary.a.is_none() && self.boundary.b.is_none()
    }
}

fn boundary_of(g: &GroupModel, theta: f64) -> Option<Boundary> {
    let (lo, hi) = g.bounds();
    if theta <= lo {
        Some(Boundary::AcceptAll)
    } else if theta >= hi {
        Some(Boundary::RejectAll)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvaluation {
    /// Selection rate (the DP measure).
    pub selection: PerGroup<f64>,
    pub tpr: PerGroup<f64>,
    pub fpr: PerGroup<f64>,
    pub utility: PerGroup<f64>,
    pub total_utility: f64,
}

impl PolicyEvaluation {
    pub fn rates(&self, c: Criterion) -> Option<PerGroup<f64>> {
        match c {
            Criterion::Dp => Some(self.selection),
            Criterion::Tpr => Some(self.tpr),
            Criterion::Fpr => Some(self.fpr),
            _ => None,
        }
    }

    /// |C_a − C_b| for a measure; the larger of the TPR and FPR gaps for EO;
    /// zero for MU.
    pub fn gap(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Mu => 0.0,
            Criterion::Eo => self.gap(Criterion::Tpr).max(self.gap(Criterion::Fpr)),
            _ => {
                let r = self.rates(c).expect("measure criterion");
                (r.a - r.b).abs()
            }
        }
    }
}

/// Distribution whose tail is the criterion's measure.
pub(crate) fn measure_dist(g: &GroupModel, c: Criterion) -> &ScoreDistribution {
    match c {
        Criterion::Dp => g.overall(),
        Criterion::Tpr => g.qualified(),
        Criterion::Fpr => g.unqualified(),
        _ => unreachable!("not a single measure"),
    }
}

fn require_measure(c: Criterion) -> Result<()> {
    if c.is_measure() {
        Ok(())
    } else {
        Err(Error::UnsupportedCriterion(c))
    }
}

/// C^f_g(θ): selection rate (DP), true-positive rate (TPR) or false-positive
/// rate (FPR) of the threshold θ in group `g`.
pub fn fairness_measure(pop: &Population, g: GroupId, c: Criterion, theta: f64) -> Result<f64> {
    require_measure(c)?;
    Ok(measure_dist(pop.group(g), c).tail(theta))
}

/// U_g(θ) = α u₊ P(X ≥ θ | y=1) − (1 − α) u₋ P(X ≥ θ | y=0).
pub fn group_utility(pop: &Population, g: &GroupModel, theta: f64) -> f64 {
    g.alpha() * pop.u_plus() * g.qualified().tail(theta)
        - (1.0 - g.alpha()) * pop.u_minus() * g.unqualified().tail(theta)
}

/// −dU_g/dθ, the marginal value of the applicant at score θ.
pub(crate) fn marginal_value(pop: &Population, g: &GroupModel, theta: f64) -> f64 {
    g.alpha() * pop.u_plus() * g.qualified().pdf(theta)
        - (1.0 - g.alpha()) * pop.u_minus() * g.unqualified().pdf(theta)
}

/// Rates and utilities of a threshold pair.
pub fn evaluate(pop: &Population, theta: PerGroup<f64>) -> PolicyEvaluation {
    let groups = pop.groups();
    let tpr = PerGroup::new(
        groups.a.qualified().tail(theta.a),
        groups.b.qualified().tail(theta.b),
    );
    let fpr = PerGroup::new(
        groups.a.unqualified().tail(theta.a),
        groups.b.unqualified().tail(theta.b),
    );
    let selection = groups.map(|g, m| {
        let (t, f) = (*tpr.get(g), *fpr.get(g));
        m.alpha() * t + (1.0 - m.alpha()) * f
    });
    let utility = groups.map(|g, m| {
        m.alpha() * pop.u_plus() * tpr.get(g) - (1.0 - m.alpha()) * pop.u_minus() * fpr.get(g)
    });
    let total_utility = pop.a().mass() * utility.a + pop.b().mass() * utility.b;
    PolicyEvaluation {
        selection,
        tpr,
        fpr,
        utility,
        total_utility,
    }
}

/// Σ_g n_g (α_g u₊ f¹_g(θ_g) − (1 − α_g) u₋ f⁰_g(θ_g)) / c_g(θ_g), where c_g
/// is the density of the constrained measure. Zero at a constrained optimum.
pub fn stationarity_residual(pop: &Population, c: Criterion, theta: PerGroup<f64>) -> Result<f64> {
    require_measure(c)?;
    Ok(pop
        .groups()
        .map(|g, m| {
            let t = *theta.get(g);
            m.mass() * marginal_value(pop, m, t) / measure_dist(m, c).pdf(t)
        })
        .into_sum())
}

/// Residual of the closed-form threshold identity for each criterion,
/// written as (left side − right side):
///
/// * DP: Σ n_g γ_g − u₋/(u₊+u₋)
/// * TPR: Σ n_g α_g / γ_g − Σ n_g α_g · (u₊+u₋)/u₋
/// * FPR: Σ n_g (1−α_g)/(1−γ_g) − Σ n_g (1−α_g) · (u₊+u₋)/u₊
pub fn profile_stationarity_residual(
    pop: &Population,
    c: Criterion,
    theta: PerGroup<f64>,
) -> Result<f64> {
    require_measure(c)?;
    let be = pop.break_even();
    let gamma = pop.groups().map(|g, m| m.gamma(*theta.get(g)));
    let terms = pop.groups().map(|g, m| {
        let (n, a, y) = (m.mass(), m.alpha(), *gamma.get(g));
        match c {
            Criterion::Dp => (n * y, n),
            Criterion::Tpr => (n * a / y, n * a),
            Criterion::Fpr => (n * (1.0 - a) / (1.0 - y), n * (1.0 - a)),
            _ => unreachable!(),
        }
    });
    let (lhs, weight) = (terms.a.0 + terms.b.0, terms.a.1 + terms.b.1);
    Ok(match c {
        Criterion::Dp => lhs - be * weight,
        Criterion::Tpr => lhs - weight / be,
        _ => lhs - weight / (1.0 - be),
    })
}

trait SumPair {
    fn into_sum(self) -> f64;
}

impl SumPair for PerGroup<f64> {
    fn into_sum(self) -> f64 {
        self.a + self.b
    }
}

/// θ_a = (C^f_a)⁻¹(C^f_b(θ_b)): the group-a threshold that equalizes the
/// measure with group b.
pub fn match_threshold(pop: &Population, c: Criterion, theta_b: f64) -> Result<f64> {
    require_measure(c)?;
    Ok(matched(pop, c, theta_b))
}

pub(crate) fn matched(pop: &Population, c: Criterion, theta_b: f64) -> f64 {
    let target = measure_dist(pop.b(), c).tail(theta_b);
    measure_dist(pop.a(), c).inverse_tail(target)
}

/// Tabulated equality curve θ_b ↦ θ_a.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCurve {
    pub criterion: Criterion,
    pub theta_b: Vec<f64>,
    pub theta_a: Vec<f64>,
}

impl ConstraintCurve {
    /// Linear interpolation, clamped to the tabulated range.
    pub fn eval(&self, theta_b: f64) -> f64 {
        let xs = &self.theta_b;
        let n = xs.len();
        if theta_b <= xs[0] {
            return self.theta_a[0];
        }
        if theta_b >= xs[n - 1] {
            return self.theta_a[n - 1];
        }
        let k = xs.partition_point(|&x| x <= theta_b) - 1;
        let t = (theta_b - xs[k]) / (xs[k + 1] - xs[k]);
        self.theta_a[k] + t * (self.theta_a[k + 1] - self.theta_a[k])
    }
}

pub fn constraint_curve(pop: &Population, c: Criterion) -> Result<ConstraintCurve> {
    require_measure(c)?;
    let (lo, hi) = pop.b().bounds();
    let theta_b = linspace(lo, hi, CURVE_POINTS);
    let theta_a = theta_b.iter().map(|&t| matched(pop, c, t)).collect();
    Ok(ConstraintCurve {
        criterion: c,
        theta_b,
        theta_a,
    })
}

/// Default lattice step: the joint score range over 400.
pub fn default_grid_step(pop: &Population) -> f64 {
    let (alo, ahi) = pop.a().bounds();
    let (blo, bhi) = pop.b().bounds();
    (ahi.max(bhi) - alo.min(blo)) / 400.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ScoreDistribution;
    use crate::population::{synthetic, GroupModel, Normal, SyntheticParams};
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

    #[test]
    fn criterion_parses_case_insensitively() {
        assert_eq!("tpr".parse::<Criterion>().unwrap(), Criterion::Tpr);
        assert_eq!(" EO ".parse::<Criterion>().unwrap(), Criterion::Eo);
        assert!("xyz".parse::<Criterion>().is_err());
        assert_eq!(Criterion::Fpr.to_string(), "FPR");
    }

    #[test]
    fn measures_at_lower_bound_are_one() {
        let pop = synthetic();
        for c in Criterion::MEASURES {
            for g in [GroupId::A, GroupId::B] {
                let lo = pop.group(g).bounds().0;
                assert_eq!(fairness_measure(&pop, g, c, lo).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn tpr_at_qualified_mean_is_half() {
        let pop = synthetic();
        assert_abs_diff_eq!(
            fairness_measure(&pop, GroupId::B, Criterion::Tpr, 70.0).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn dp_of_synthetic_b_at_60() {
        let pop = synthetic();
        let phi = StatNormal::new(0.0, 1.0).unwrap();
        let expected = 0.3 * (1.0 - phi.cdf(-1.0)) + 0.7 * (1.0 - phi.cdf(1.0));
        let got = fairness_measure(&pop, GroupId::B, Criterion::Dp, 60.0).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(got, 0.36346, epsilon = 5e-5);
    }

    #[test]
    fn mu_and_eo_are_not_measures() {
        let pop = synthetic();
        for c in [Criterion::Mu, Criterion::Eo] {
            assert!(matches!(
                fairness_measure(&pop, GroupId::A, c, 60.0),
                Err(Error::UnsupportedCriterion(_))
            ));
        }
    }

    #[test]
    fn reject_all_and_accept_all_utilities() {
        let pop = synthetic();
        let hi = pop.groups().map(|_, g| g.bounds().1);
        let e = evaluate(&pop, hi);
        assert_eq!(e.selection, PerGroup::new(0.0, 0.0));
        assert_eq!(e.total_utility, 0.0);

        let lo = pop.groups().map(|_, g| g.bounds().0);
        let e = evaluate(&pop, lo);
        for g in [GroupId::A, GroupId::B] {
            let m = pop.group(g);
            assert_abs_diff_eq!(
                *e.utility.get(g),
                m.alpha() * 1.0 - (1.0 - m.alpha()) * 10.0,
                epsilon = 1e-15
            );
        }
        assert_abs_diff_eq!(
            e.total_utility,
            0.8 * e.utility.a + 0.2 * e.utility.b,
            epsilon = 1e-12
        );
    }

    #[test]
    fn identical_groups_give_identity_curve() {
        let pop = SyntheticParams {
            alpha_b: 0.8,
            ..Default::default()
        }
        .build(1.0, 10.0)
        .unwrap();
        let curve = constraint_curve(&pop, Criterion::Dp).unwrap();
        for (tb, ta) in curve.theta_b.iter().zip(&curve.theta_a) {
            // the tail saturates far out, where the inverse is ill-posed
            let s = pop.b().overall().tail(*tb);
            if s > 1e-6 && s < 1.0 - 1e-6 {
                assert_abs_diff_eq!(ta, tb, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn fatter_b_tail_pulls_curve_below_identity() {
        let pop = SyntheticParams {
            qualified_b: Normal::new(75.0, 10.0),
            unqualified_b: Normal::new(55.0, 10.0),
            alpha_b: 0.8,
            ..Default::default()
        }
        .build(1.0, 10.0)
        .unwrap();
        let curve = constraint_curve(&pop, Criterion::Dp).unwrap();
        let (lo, hi) = pop.b().bounds();
        for (&tb, &ta) in curve.theta_b.iter().zip(&curve.theta_a) {
            if tb > lo + 1.0 && tb < hi - 30.0 {
                assert!(ta < tb, "{ta} !< {tb}");
                let ca = fairness_measure(&pop, GroupId::A, Criterion::Dp, ta).unwrap();
                let cb = fairness_measure(&pop, GroupId::B, Criterion::Dp, tb).unwrap();
                assert!((ca - cb).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn curve_endpoints_and_monotonicity() {
        let pop = synthetic();
        for c in Criterion::MEASURES {
            let curve = constraint_curve(&pop, c).unwrap();
            let (lo, hi) = measure_dist(pop.a(), c).bounds();
            assert_eq!(curve.theta_a[0], lo);
            assert_eq!(*curve.theta_a.last().unwrap(), hi);
            assert!(curve.theta_a.windows(2).all(|w| w[1] >= w[0]));
            for (&tb, &ta) in curve.theta_b.iter().zip(&curve.theta_a) {
                let ca = fairness_measure(&pop, GroupId::A, c, ta).unwrap();
                let cb = fairness_measure(&pop, GroupId::B, c, tb).unwrap();
                assert!((ca - cb).abs() <= 1e-9, "{c} at {tb}: {ca} vs {cb}");
            }
        }
    }

    #[test]
    fn curve_interpolates_between_nodes() {
        let pop = synthetic();
        let curve = constraint_curve(&pop, Criterion::Dp).unwrap();
        let tb = 0.5 * (curve.theta_b[200] + curve.theta_b[201]);
        let exact = match_threshold(&pop, Criterion::Dp, tb).unwrap();
        assert_abs_diff_eq!(curve.eval(tb), exact, epsilon = 1e-3);
    }

    #[test]
    fn dp_profile_residual_scales_density_residual() {
        // for DP the density form is (u₊+u₋) times the profile form
        let pop = synthetic();
        let theta = PerGroup::new(71.0, 64.0);
        let dens = stationarity_residual(&pop, Criterion::Dp, theta).unwrap();
        let prof = profile_stationarity_residual(&pop, Criterion::Dp, theta).unwrap();
        assert_abs_diff_eq!(dens, 11.0 * prof, epsilon = 1e-12);
    }

    #[test]
    fn evaluation_total_is_mass_weighted() {
        let q = ScoreDistribution::gaussian(1.0, 1.0).unwrap();
        let u = ScoreDistribution::gaussian(0.0, 1.0).unwrap();
        let a = GroupModel::new(GroupId::A, 0.25, 0.5, q.clone(), u.clone()).unwrap();
        let b = GroupModel::new(GroupId::B, 0.75, 0.4, q, u).unwrap();
        let pop = Population::new(a, b, 2.0, 3.0).unwrap();
        let e = evaluate(&pop, PerGroup::new(0.3, 0.7));
        assert_abs_diff_eq!(
            e.total_utility,
            0.25 * e.utility.a + 0.75 * e.utility.b,
            epsilon = 1e-12
        );
    }
}

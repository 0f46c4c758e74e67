//! Bias transforms: the population a prior decision-maker's data implies
//! when labels were flipped or scores mismeasured.
//!
//! Label flips are exact: the biased class-conditional densities are finite
//! mixtures of the true ones, so the overall density of every group is
//! preserved identically and no renormalization is needed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::ScoreDistribution;
use crate::error::{Error, Result};
use crate::ingest::{Record, ScoredRecords};
use crate::population::{GroupId, GroupModel, Population, PROFILE_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftTarget {
    Qualified,
    Unqualified,
    All,
}

impl ShiftTarget {
    pub fn shifts_qualified(self) -> bool {
        matches!(self, ShiftTarget::Qualified | ShiftTarget::All)
    }

    pub fn shifts_unqualified(self) -> bool {
        matches!(self, ShiftTarget::Unqualified | ShiftTarget::All)
    }
}

/// Score underestimate ε(x): observed scores are `x - ε(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shift {
    Constant {
        epsilon: f64,
    },
    /// ε(x) = c (x − x0) with c in [0, 1).
    Affine {
        c: f64,
        x0: f64,
    },
    /// Tabulated ε(x), linearly interpolated; the shifted density is
    /// tabulated on the same grid.
    Table {
        grid: Vec<f64>,
        epsilon: Vec<f64>,
    },
}

impl Shift {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            Shift::Constant { epsilon } if !(*epsilon >= 0.0 && epsilon.is_finite()) => bad(
                format!("constant shift must be nonnegative (got {epsilon})"),
            ),
            Shift::Affine { c, x0 } if !((0.0..1.0).contains(c) && x0.is_finite()) => {
                bad(format!("affine shift slope must lie in [0, 1) (got {c})"))
            }
            Shift::Table { grid, epsilon } => {
                if grid.len() < 2 || grid.len() != epsilon.len() {
                    return bad("shift table needs matching grid and values (≥ 2 rows)".into());
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("shift table grid must be strictly ascending".into());
                }
                if epsilon.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                    return bad("shift table values must be nonnegative".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Shift::Constant { epsilon } => *epsilon == 0.0,
            Shift::Affine { c, .. } => *c == 0.0,
            Shift::Table { epsilon, .. } => epsilon.iter().all(|e| *e == 0.0),
        }
    }

    fn apply(&self, d: &ScoreDistribution) -> Result<ScoreDistribution> {
        Ok(match self {
            Shift::Constant { epsilon } => d.shifted(*epsilon),
            // f̂(x) ∝ f(x + c(x − x0)) is the law of x − (c/(1+c))(x − x0)
            Shift::Affine { c, x0 } => d.affinely_mapped(c / (1.0 + c), *x0),
            Shift::Table { grid, epsilon } => {
                let density = grid
                    .iter()
                    .zip(epsilon)
                    .map(|(&x, &e)| d.pdf(x + e))
                    .collect();
                ScoreDistribution::empirical(grid.clone(), density)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasFamily {
    /// A fraction 1 − β of group b's qualified labels flipped to 0.
    UnderestimateB { beta: f64 },
    /// A fraction β of group a's unqualified labels flipped to 1.
    OverestimateA { beta: f64 },
    /// Group b's scores underestimated by ε(x) for the targeted classes.
    FeatureShiftB { shift: Shift, target: ShiftTarget },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    #[serde(flatten)]
    pub family: BiasFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BiasSpec {
    pub fn new(family: BiasFamily) -> Self {
        Self { family, seed: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BiasDiagnostics {
    /// For qualified-only shifts: whether l̂_b ≤ l_b held on the validation
    /// grid.
    pub ratio_dominated: Option<bool>,
    /// A tabulated density was translated past its original support.
    pub left_domain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedPopulation {
    pub biased: Population,
    pub truth: Population,
    pub spec: BiasSpec,
    pub diagnostics: BiasDiagnostics,
}

pub fn apply(pop: &Population, spec: &BiasSpec) -> Result<BiasedPopulation> {
    let mut bp = match &spec.family {
        BiasFamily::UnderestimateB { beta } => apply_underestimate_b(pop, *beta)?,
        BiasFamily::OverestimateA { beta } => apply_overestimate_a(pop, *beta)?,
        BiasFamily::FeatureShiftB { shift, target } => apply_feature_shift_b(pop, shift, *target)?,
    };
    bp.spec.seed = spec.seed;
    Ok(bp)
}

fn biased(pop: &Population, biased: Population, family: BiasFamily) -> BiasedPopulation {
    BiasedPopulation {
        biased,
        truth: pop.clone(),
        spec: BiasSpec::new(family),
        diagnostics: BiasDiagnostics::default(),
    }
}

/// α̂_b = β α_b, f̂¹_b = f¹_b and
/// f̂⁰_b = [(1 − β) α_b f¹_b + (1 − α_b) f⁰_b] / (1 − β α_b).
pub fn apply_underestimate_b(pop: &Population, beta: f64) -> Result<BiasedPopulation> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "underestimation level must lie in (0, 1] (got {beta})"
        )));
    }
    let family = BiasFamily::UnderestimateB { beta };
    if beta == 1.0 {
        return Ok(biased(pop, pop.clone(), family));
    }
    let b = pop.b();
    let alpha = b.alpha();
    let unqualified = ScoreDistribution::mixture(vec![
        ((1.0 - beta) * alpha, b.qualified().clone()),
        (1.0 - alpha, b.unqualified().clone()),
    ])?;
    let g = GroupModel::new(
        GroupId::B,
        b.mass(),
        beta * alpha,
        b.qualified().clone(),
        unqualified,
    )?;
    Ok(biased(pop, pop.with_group(g)?, family))
}

/// α̂_a = (1 − β) α_a + β, f̂⁰_a = f⁰_a and
/// f̂¹_a = [α_a f¹_a + β (1 − α_a) f⁰_a] / α̂_a.
pub fn apply_overestimate_a(pop: &Population, beta: f64) -> Result<BiasedPopulation> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!(
            "overestimation level must lie in [0, 1) (got {beta})"
        )));
    }
    let family = BiasFamily::OverestimateA { beta };
    if beta == 0.0 {
        return Ok(biased(pop, pop.clone(), family));
    }
    let a = pop.a();
    let alpha = a.alpha();
    let qualified = ScoreDistribution::mixture(vec![
        (alpha, a.qualified().clone()),
        (beta * (1.0 - alpha), a.unqualified().clone()),
    ])?;
    let g = GroupModel::new(
        GroupId::A,
        a.mass(),
        (1.0 - beta) * alpha + beta,
        qualified,
        a.unqualified().clone(),
    )?;
    Ok(biased(pop, pop.with_group(g)?, family))
}

/// Translates the targeted class densities of group b: f̂(x) = f(x + ε(x)).
pub fn apply_feature_shift_b(
    pop: &Population,
    shift: &Shift,
    target: ShiftTarget,
) -> Result<BiasedPopulation> {
    shift.validate()?;
    let family = BiasFamily::FeatureShiftB {
        shift: shift.clone(),
        target,
    };
    if shift.is_zero() {
        return Ok(biased(pop, pop.clone(), family));
    }
    let b = pop.b();
    let mut q = b.qualified().clone();
    let mut u = b.unqualified().clone();
    if target.shifts_qualified() {
        q = shift.apply(&q)?;
    }
    if target.shifts_unqualified() {
        u = shift.apply(&u)?;
    }
    let g = GroupModel::new(GroupId::B, b.mass(), b.alpha(), q, u)?;
    let left_domain = !b.is_analytic() && {
        let ((lo, hi), (nlo, nhi)) = (b.bounds(), g.bounds());
        nlo < lo || nhi > hi
    };
    let ratio_dominated = (target == ShiftTarget::Qualified).then(|| {
        b.validation_grid().iter().all(|&x| {
            let (l, lh) = (b.likelihood_ratio(x), g.likelihood_ratio(x));
            l.is_nan() || lh.is_nan() || lh <= l * (1.0 + 1e-9) + 1e-12
        })
    });
    let mut bp = biased(pop, pop.with_group(g)?, family);
    bp.diagnostics = BiasDiagnostics {
        ratio_dominated,
        left_domain,
    };
    Ok(bp)
}

/// Constant translation of group b by `shift` (any sign). Used to perturb
/// around the unbiased population in finite-difference checks.
pub(crate) fn translate_b(pop: &Population, target: ShiftTarget, shift: f64) -> Result<Population> {
    let b = pop.b();
    let q = if target.shifts_qualified() {
        b.qualified().shifted(shift)
    } else {
        b.qualified().clone()
    };
    let u = if target.shifts_unqualified() {
        b.unqualified().shifted(shift)
    } else {
        b.unqualified().clone()
    };
    pop.with_group(GroupModel::new(GroupId::B, b.mass(), b.alpha(), q, u)?)
}

fn clamped_profile(g: &GroupModel, x: f64) -> f64 {
    g.gamma(x).clamp(PROFILE_CLAMP, 1.0 - PROFILE_CLAMP)
}

/// Pointwise rescaling form of the underestimated f̂⁰_b:
/// [(1 − α)/(1 − βα)] · [(1 − βγ(x))/(1 − γ(x))] · f⁰(x).
pub fn underestimated_unqualified_pdf(g: &GroupModel, beta: f64, x: f64) -> f64 {
    let (a, y) = (g.alpha(), clamped_profile(g, x));
    (1.0 - a) / (1.0 - beta * a) * (1.0 - beta * y) / (1.0 - y) * g.unqualified().pdf(x)
}

/// Pointwise rescaling form of the overestimated f̂¹_a:
/// [α/((1 − β)α + β)] · [((1 − β)γ(x) + β)/γ(x)] · f¹(x).
pub fn overestimated_qualified_pdf(g: &GroupModel, beta: f64, x: f64) -> f64 {
    let (a, y) = (g.alpha(), clamped_profile(g, x));
    a / ((1.0 - beta) * a + beta) * ((1.0 - beta) * y + beta) / y * g.qualified().pdf(x)
}

fn draw(pop: &Population, rng: &mut ChaCha8Rng) -> Record {
    let group = if rng.random::<f64>() < pop.a().mass() {
        GroupId::A
    } else {
        GroupId::B
    };
    let g = pop.group(group);
    let label = rng.random::<f64>() < g.alpha();
    let score = if label {
        g.qualified().sample(rng)
    } else {
        g.unqualified().sample(rng)
    };
    Record {
        group,
        score,
        label,
    }
}

/// Draws `n` labelled records from the biased population.
pub fn sample_dataset(bp: &BiasedPopulation, n: usize, seed: u64) -> Result<ScoredRecords> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "sample size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ScoredRecords::new(
        (0..n).map(|_| draw(&bp.biased, &mut rng)).collect(),
    ))
}

/// Label flips applied record by record to samples from the truth; lets the
/// two flip families be composed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelFlips {
    /// Keep probability β for group b's positive labels.
    pub underestimate_b: Option<f64>,
    /// Flip probability β for group a's negative labels.
    pub overestimate_a: Option<f64>,
}

pub fn sample_flipped(
    truth: &Population,
    n: usize,
    seed: u64,
    flips: LabelFlips,
) -> Result<ScoredRecords> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "sample size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let mut r = draw(truth, &mut rng);
            let u: f64 = rng.random();
            match (r.group, r.label) {
                (GroupId::B, true) => {
                    if let Some(beta) = flips.underestimate_b {
                        r.label = u < beta;
                    }
                }
                (GroupId::A, false) => {
                    if let Some(beta) = flips.overestimate_a {
                        r.label = u < beta;
                    }
                }
                _ => {}
            }
            r
        })
        .collect();
    Ok(ScoredRecords::new(rows))
}

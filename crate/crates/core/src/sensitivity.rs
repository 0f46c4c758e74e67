//! Rates of change of fair thresholds with the bias level β at β = 1, in
//! closed form and by finite differences of full re-solves.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bias::{apply_underestimate_b, translate_b, ShiftTarget};
use crate::error::{Error, Result};
use crate::par::{map_slice, Exec};
use crate::policy::{solve_fair, Criterion, FairnessSpec, ThresholdPair};
use crate::population::{GroupId, GroupModel, PerGroup, Population};

/// Step in β for the finite-difference checks.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    /// Underestimated qualification of group b.
    Label,
    /// Mismeasured scores of group b.
    Feature,
}

impl BiasKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasKind::Label => "label",
            BiasKind::Feature => "feature",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub criterion: Criterion,
    pub kind: BiasKind,
    /// Unbiased fair thresholds the rates are evaluated at.
    pub theta: PerGroup<f64>,
    /// dθ_g/dβ from the closed forms.
    pub analytic: PerGroup<f64>,
    pub finite_difference: PerGroup<f64>,
    pub relative_error: PerGroup<f64>,
}

impl SensitivityReport {
    fn new(
        criterion: Criterion,
        kind: BiasKind,
        theta: PerGroup<f64>,
        analytic: PerGroup<f64>,
        finite_difference: PerGroup<f64>,
    ) -> Self {
        let rel = |a: f64, fd: f64| (a - fd).abs() / fd.abs().max(1e-12);
        Self {
            criterion,
            kind,
            theta,
            analytic,
            finite_difference,
            relative_error: PerGroup::new(
                rel(analytic.a, finite_difference.a),
                rel(analytic.b, finite_difference.b),
            ),
        }
    }

    pub fn d_theta_a_d_beta(&self) -> f64 {
        self.analytic.a
    }

    pub fn d_theta_b_d_beta(&self) -> f64 {
        self.analytic.b
    }

    /// (dθ_a/dβ) / (dθ_b/dβ).
    pub fn coupling_ratio(&self) -> f64 {
        self.analytic.a / self.analytic.b
    }
}

/// Writes `bias,criterion,group,analytic,fd,rel_err` rows.
pub fn write_sensitivity_csv<W: Write>(reports: &[SensitivityReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bias", "criterion", "group", "analytic", "fd", "rel_err"])?;
    for r in reports {
        for g in [GroupId::A, GroupId::B] {
            w.write_record([
                r.kind.as_str().to_string(),
                r.criterion.to_string(),
                g.to_string(),
                r.analytic.get(g).to_string(),
                r.finite_difference.get(g).to_string(),
                r.relative_error.get(g).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn interior_solution(pop: &Population, c: Criterion) -> Result<ThresholdPair> {
    let pair = solve_fair(pop, FairnessSpec::hard(c))?;
    if !pair.is_interior() {
        return Err(Error::SolverUnavailable(format!(
            "{c} thresholds of the unbiased population lie on the support boundary ({:?})",
            pair.boundary
        )));
    }
    Ok(pair)
}

/// Density whose tail is the criterion's measure.
fn measure_pdf(g: &GroupModel, c: Criterion, x: f64) -> f64 {
    match c {
        Criterion::Dp => g.overall().pdf(x),
        Criterion::Tpr => g.qualified().pdf(x),
        Criterion::Fpr => g.unqualified().pdf(x),
        _ => unreachable!(),
    }
}

/// Closed-form dθ_g/dβ under underestimation of group b's qualification.
///
/// DP:  dθ_b/dβ = −γ_b / [(n_a/n_b) γ'_a f_b/f_a + γ'_b]
/// TPR: dθ_b/dβ = −(1 + u₊/u₋) /
///      [(n_a/n_b)(α_a/α_b)(f¹_b/f¹_a) γ'_a/γ_a² + γ'_b/γ_b²]
///
/// and dθ_a/dβ = (c_b/c_a) dθ_b/dβ with c the measure's density.
pub fn label_bias_rates(
    pop: &Population,
    c: Criterion,
    theta: PerGroup<f64>,
) -> Result<PerGroup<f64>> {
    let (a, b) = (pop.a(), pop.b());
    let (ta, tb) = (theta.a, theta.b);
    let ratio = measure_pdf(b, c, tb) / measure_pdf(a, c, ta);
    let (ga, gb) = (a.gamma(ta), b.gamma(tb));
    let (dga, dgb) = (a.profile_slope(ta), b.profile_slope(tb));
    let masses = a.mass() / b.mass();
    let db = match c {
        Criterion::Dp => -gb / (masses * dga * ratio + dgb),
        Criterion::Tpr => {
            -(1.0 + pop.u_plus() / pop.u_minus())
                / (masses * (a.alpha() / b.alpha()) * ratio * dga / (ga * ga) + dgb / (gb * gb))
        }
        other => return Err(Error::UnsupportedCriterion(other)),
    };
    Ok(PerGroup::new(ratio * db, db))
}

/// Second-order one-sided difference at β = 1 (β > 1 is not a valid
/// underestimation level).
fn backward_difference(f0: f64, f1: f64, f2: f64) -> f64 {
    (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * FD_STEP)
}

pub fn sensitivity_label_bias(pop: &Population, c: Criterion) -> Result<SensitivityReport> {
    sensitivity_label_bias_with(pop, c, Exec::Auto)
}

pub fn sensitivity_label_bias_with(
    pop: &Population,
    c: Criterion,
    exec: Exec,
) -> Result<SensitivityReport> {
    if !matches!(c, Criterion::Dp | Criterion::Tpr) {
        return Err(Error::UnsupportedCriterion(c));
    }
    let base = interior_solution(pop, c)?;
    let analytic = label_bias_rates(pop, c, base.theta)?;
    let betas = [1.0 - FD_STEP, 1.0 - 2.0 * FD_STEP];
    let solved = map_slice(exec, &betas, |&beta| -> Result<PerGroup<f64>> {
        let bp = apply_underestimate_b(pop, beta)?;
        Ok(solve_fair(&bp.biased, FairnessSpec::hard(c))?.theta)
    });
    let solved: Vec<PerGroup<f64>> = solved.into_iter().collect::<Result<_>>()?;
    let fd = PerGroup::new(
        backward_difference(base.theta.a, solved[0].a, solved[1].a),
        backward_difference(base.theta.b, solved[0].b, solved[1].b),
    );
    Ok(SensitivityReport::new(
        c,
        BiasKind::Label,
        base.theta,
        analytic,
        fd,
    ))
}

/// Family of constant score underestimates of group b parametrized by β:
/// the targeted classes are shifted down by (1 − β)·`drop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftFamily {
    pub target: ShiftTarget,
    pub drop: f64,
}

/// Implicit-function rates for TPR/FPR thresholds under a [`ShiftFamily`].
///
/// The biased fair thresholds solve G₁ = C_a(θ_a) − Ĉ_b(θ_b; β) = 0 and the
/// stationarity condition G₂ = 0, written through the likelihood ratios:
///
/// * TPR: G₂ = Σ n_g (α_g u₊ − (1 − α_g) u₋ / l_g(θ_g))
/// * FPR: G₂ = Σ n_g (α_g u₊ l_g(θ_g) − (1 − α_g) u₋)
///
/// with group b's l̂_b, Ĉ_b depending on β through f̂^y_b(x) = f^y_b(x + s),
/// s = (1 − β)·drop. Differentiating at β = 1 gives a 2×2 linear system for
/// (dθ_a/dβ, dθ_b/dβ).
pub fn feature_bias_rates(
    pop: &Population,
    c: Criterion,
    family: ShiftFamily,
    theta: PerGroup<f64>,
) -> Result<PerGroup<f64>> {
    let (a, b) = (pop.a(), pop.b());
    let (ta, tb) = (theta.a, theta.b);
    let (qualified_measure, targeted) = match c {
        Criterion::Tpr => (true, family.target.shifts_qualified()),
        Criterion::Fpr => (false, family.target.shifts_unqualified()),
        other => return Err(Error::UnsupportedCriterion(other)),
    };
    let ratio_and_slope = |g: &GroupModel, x: f64| {
        let (p1, p0) = (g.qualified().pdf(x), g.unqualified().pdf(x));
        let (d1, d0) = (g.qualified().pdf_slope(x), g.unqualified().pdf_slope(x));
        (p1 / p0, (d1 * p0 - p1 * d0) / (p0 * p0), p1, p0, d1, d0)
    };
    let (la, dla, ..) = ratio_and_slope(a, ta);
    let (lb, dlb, p1b, p0b, d1b, d0b) = ratio_and_slope(b, tb);

    // β-derivatives of the biased group-b primitives at β = 1
    let dq = if family.target.shifts_qualified() {
        -family.drop * d1b
    } else {
        0.0
    };
    let du = if family.target.shifts_unqualified() {
        -family.drop * d0b
    } else {
        0.0
    };
    let dl_beta = (dq * p0b - p1b * du) / (p0b * p0b);
    let measure_b = if qualified_measure { p1b } else { p0b };
    let dc_beta = if targeted {
        family.drop * measure_b
    } else {
        0.0
    };

    let j11 = -if qualified_measure {
        a.qualified().pdf(ta)
    } else {
        a.unqualified().pdf(ta)
    };
    let j12 = measure_b;
    let g1b = -dc_beta;
    let (up, um) = (pop.u_plus(), pop.u_minus());
    let (j21, j22, g2b) = if qualified_measure {
        (
            a.mass() * (1.0 - a.alpha()) * um * dla / (la * la),
            b.mass() * (1.0 - b.alpha()) * um * dlb / (lb * lb),
            b.mass() * (1.0 - b.alpha()) * um * dl_beta / (lb * lb),
        )
    } else {
        (
            a.mass() * a.alpha() * up * dla,
            b.mass() * b.alpha() * up * dlb,
            b.mass() * b.alpha() * up * dl_beta,
        )
    };
    let det = j11 * j22 - j12 * j21;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::SolverUnavailable(
            "singular sensitivity system at the unbiased thresholds".into(),
        ));
    }
    let (r1, r2) = (-g1b, -g2b);
    Ok(PerGroup::new(
        (r1 * j22 - j12 * r2) / det,
        (j11 * r2 - j21 * r1) / det,
    ))
}

pub fn sensitivity_feature_bias(
    pop: &Population,
    c: Criterion,
    family: ShiftFamily,
) -> Result<SensitivityReport> {
    sensitivity_feature_bias_with(pop, c, family, Exec::Auto)
}

pub fn sensitivity_feature_bias_with(
    pop: &Population,
    c: Criterion,
    family: ShiftFamily,
    exec: Exec,
) -> Result<SensitivityReport> {
    if !matches!(c, Criterion::Tpr | Criterion::Fpr) {
        return Err(Error::UnsupportedCriterion(c));
    }
    let base = interior_solution(pop, c)?;
    let analytic = feature_bias_rates(pop, c, family, base.theta)?;
    // β = 1 ± h means shifts of ∓h·drop; β > 1 is a harmless upward shift
    let shifts = [-FD_STEP * family.drop, FD_STEP * family.drop];
    let solved = map_slice(exec, &shifts, |&s| -> Result<PerGroup<f64>> {
        let p = translate_b(pop, family.target, s)?;
        Ok(solve_fair(&p, FairnessSpec::hard(c))?.theta)
    });
    let solved: Vec<PerGroup<f64>> = solved.into_iter().collect::<Result<_>>()?;
    let (up, down) = (solved[0], solved[1]);
    let fd = PerGroup::new(
        (up.a - down.a) / (2.0 * FD_STEP),
        (up.b - down.b) / (2.0 * FD_STEP),
    );
    Ok(SensitivityReport::new(
        c,
        BiasKind::Feature,
        base.theta,
        analytic,
        fd,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossoverRow {
    pub alpha_b: f64,
    /// |dθ_b/dβ| under TPR.
    pub tpr: f64,
    /// |dθ_b/dβ| under DP.
    pub dp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossoverReport {
    pub rows: Vec<CrossoverRow>,
    /// Largest α_b of the leading run of rows where TPR is strictly less
    /// sensitive than DP.
    pub alpha_bar: Option<f64>,
}

/// Compares DP and TPR label-bias sensitivity of group b's threshold as α_b
/// varies with everything else held fixed.
pub fn compare_dp_tpr(pop: &Population, alpha_b_grid: &[f64]) -> Result<CrossoverReport> {
    let rows = map_slice(Exec::Auto, alpha_b_grid, |&alpha| -> Result<CrossoverRow> {
        let p = pop.with_group(pop.b().with_alpha(alpha)?)?;
        let rate = |c| -> Result<f64> {
            let pair = interior_solution(&p, c)?;
            Ok(label_bias_rates(&p, c, pair.theta)?.b.abs())
        };
        Ok(CrossoverRow {
            alpha_b: alpha,
            tpr: rate(Criterion::Tpr)?,
            dp: rate(Criterion::Dp)?,
        })
    });
    let rows: Vec<CrossoverRow> = rows.into_iter().collect::<Result<_>>()?;
    let alpha_bar = rows
        .iter()
        .take_while(|r| r.tpr < r.dp)
        .last()
        .map(|r| r.alpha_b);
    Ok(CrossoverReport { rows, alpha_bar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{synthetic, SyntheticParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn label_bias_matches_finite_differences() {
        let pop = synthetic();
        for c in [Criterion::Dp, Criterion::Tpr] {
            let r = sensitivity_label_bias(&pop, c).unwrap();
            assert!(
                r.analytic.a < 0.0 && r.analytic.b < 0.0,
                "{c}: {:?}",
                r.analytic
            );
            assert!(
                r.relative_error.a <= 0.01 && r.relative_error.b <= 0.01,
                "{c}: {r:?}"
            );
        }
    }

    #[test]
    fn frozen_label_rates() {
        // Values from an independent re-implementation of the closed forms.
        let pop = synthetic();
        let dp = sensitivity_label_bias(&pop, Criterion::Dp).unwrap();
        let tpr = sensitivity_label_bias(&pop, Criterion::Tpr).unwrap();
        assert_abs_diff_eq!(dp.analytic.b, -10.86, epsilon = 0.01);
        assert_abs_diff_eq!(tpr.analytic.b, -4.71, epsilon = 0.01);
    }

    #[test]
    fn identical_groups_collapse_the_dp_formula() {
        let pop = SyntheticParams {
            alpha_b: 0.8,
            ..Default::default()
        }
        .build(1.0, 10.0)
        .unwrap();
        let r = sensitivity_label_bias(&pop, Criterion::Dp).unwrap();
        let t = r.theta.b;
        let b = pop.b();
        let expected = -b.gamma(t) / ((0.8 / 0.2 + 1.0) * b.profile_slope(t));
        assert_abs_diff_eq!(r.analytic.b, expected, epsilon = 1e-9);
    }

    #[test]
    fn coupling_ratio_is_the_measure_density_ratio() {
        let pop = synthetic();
        for c in [Criterion::Dp, Criterion::Tpr] {
            let r = sensitivity_label_bias(&pop, c).unwrap();
            let ratio = measure_pdf(pop.b(), c, r.theta.b) / measure_pdf(pop.a(), c, r.theta.a);
            assert!((r.coupling_ratio() - ratio).abs() <= 1e-6);
        }
    }

    #[test]
    fn feature_bias_matches_finite_differences() {
        let pop = synthetic();
        for target in [
            ShiftTarget::Qualified,
            ShiftTarget::Unqualified,
            ShiftTarget::All,
        ] {
            for c in [Criterion::Tpr, Criterion::Fpr] {
                let r =
                    sensitivity_feature_bias(&pop, c, ShiftFamily { target, drop: 50.0 }).unwrap();
                for g in [GroupId::A, GroupId::B] {
                    let (an, fd) = (*r.analytic.get(g), *r.finite_difference.get(g));
                    // near-zero rates are compared absolutely
                    assert!(
                        *r.relative_error.get(g) <= 0.02 || (an - fd).abs() < 1e-6,
                        "{c} {target:?} {g}: {an} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_drop_has_zero_sensitivity() {
        let pop = synthetic();
        let fam = ShiftFamily {
            target: ShiftTarget::Qualified,
            drop: 0.0,
        };
        for c in [Criterion::Tpr, Criterion::Fpr] {
            let r = sensitivity_feature_bias(&pop, c, fam).unwrap();
            for g in [GroupId::A, GroupId::B] {
                assert!((r.analytic.get(g) - r.finite_difference.get(g)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn unsupported_criteria_are_rejected() {
        let pop = synthetic();
        assert!(sensitivity_label_bias(&pop, Criterion::Fpr).is_err());
        let fam = ShiftFamily {
            target: ShiftTarget::All,
            drop: 1.0,
        };
        assert!(sensitivity_feature_bias(&pop, Criterion::Dp, fam).is_err());
    }

    #[test]
    fn crossover_single_point_and_finite() {
        let pop = synthetic();
        let r = compare_dp_tpr(&pop, &[0.3]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].tpr.is_finite() && r.rows[0].dp.is_finite());
    }

    #[test]
    fn csv_rows() {
        let pop = synthetic();
        let r = sensitivity_label_bias(&pop, Criterion::Dp).unwrap();
        let mut buf = Vec::new();
        write_sensitivity_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "bias,criterion,group,analytic,fd,rel_err");
        assert!(lines[1].starts_with("label,DP,a,") && lines[2].starts_with("label,DP,b,"));
    }
}

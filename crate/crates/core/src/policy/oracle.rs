//! Brute-force lattice search over threshold pairs. Serves as the
//! independent oracle for the curve solver and as the soft-constraint route.

use super::{evaluate, group_utility, Criterion, FairnessSpec, SolverPath, ThresholdPair};
use crate::error::{Error, Result};
use crate::numeric::lattice;
use crate::par::{map_range, Exec};
use crate::population::{GroupModel, PerGroup, Population};

/// Per-threshold measures and utility of one group along its lattice.
struct Axis {
    theta: Vec<f64>,
    dp: Vec<f64>,
    tpr: Vec<f64>,
    fpr: Vec<f64>,
    utility: Vec<f64>,
}

impl Axis {
    fn new(pop: &Population, g: &GroupModel, step: f64, exec: Exec) -> Self {
        let (lo, hi) = g.bounds();
        let theta = lattice(lo, hi, step);
        let rows = map_range(exec, theta.len(), |i| {
            let t = theta[i];
            let tpr = g.qualified().tail(t);
            let fpr = g.unqualified().tail(t);
            (
                g.alpha() * tpr + (1.0 - g.alpha()) * fpr,
                tpr,
                fpr,
                group_utility(pop, g, t),
            )
        });
        let mut axis = Axis {
            theta,
            dp: Vec::with_capacity(rows.len()),
            tpr: Vec::with_capacity(rows.len()),
            fpr: Vec::with_capacity(rows.len()),
            utility: Vec::with_capacity(rows.len()),
        };
        for (dp, tpr, fpr, u) in rows {
            axis.dp.push(dp);
            axis.tpr.push(tpr);
            axis.fpr.push(fpr);
            axis.utility.push(u);
        }
        axis
    }

    fn measure(&self, c: Criterion) -> &[f64] {
        match c {
            Criterion::Dp => &self.dp,
            Criterion::Tpr => &self.tpr,
            Criterion::Fpr => &self.fpr,
            _ => unreachable!("not a single measure"),
        }
    }

    /// Largest change of the measure between neighbouring lattice points.
    fn resolution(&self, c: Criterion) -> f64 {
        self.measure(c)
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .fold(0.0, f64::max)
    }

    fn argmax_utility(&self) -> usize {
        let mut best = 0;
        for i in 1..self.theta.len() {
            if self.utility[i] > self.utility[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LatticeMode {
    /// Feasible iff every constrained gap is at most ε.
    Strict,
    /// Feasible iff every constrained gap is at most max(ε, lattice
    /// resolution of the measure).
    Resolution,
}

fn max_gap(required: &[Criterion], a: &Axis, i: usize, b: &Axis, j: usize) -> f64 {
    required
        .iter()
        .map(|&c| (a.measure(c)[i] - b.measure(c)[j]).abs())
        .fold(0.0, f64::max)
}

/// Exhaustive scan of the (θ_a, θ_b) lattice. Rows (fixed θ_b) are scanned
/// in parallel; the reduction visits rows in ascending θ_b and keeps the
/// first maximum, so ties go to the smaller θ_b and then the smaller θ_a.
pub(crate) fn lattice_search(
    pop: &Population,
    spec: FairnessSpec,
    step: f64,
    mode: LatticeMode,
    exec: Exec,
) -> Result<ThresholdPair> {
    let required = spec.criterion.required();
    let a = Axis::new(pop, pop.a(), step, exec);
    let b = Axis::new(pop, pop.b(), step, exec);
    let tol = match mode {
        LatticeMode::Strict => spec.epsilon,
        LatticeMode::Resolution => required
            .iter()
            .map(|&c| a.resolution(c).max(b.resolution(c)))
            .fold(spec.epsilon, f64::max),
    };
    let (na, nb) = (pop.a().mass(), pop.b().mass());

    // per row: best feasible (utility, i) and the smallest max-gap seen
    let rows = map_range(exec, b.theta.len(), |j| {
        let mut best: Option<(f64, usize)> = None;
        let mut min_gap = f64::INFINITY;
        for i in 0..a.theta.len() {
            let gap = max_gap(required, &a, i, &b, j);
            min_gap = min_gap.min(gap);
            if gap > tol {
                continue;
            }
            let v = na * a.utility[i] + nb * b.utility[j];
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, i));
            }
        }
        (best, min_gap)
    });

    let mut best: Option<(f64, usize, usize)> = None;
    let mut min_feasible = f64::INFINITY;
    for (j, (row, min_gap)) in rows.into_iter().enumerate() {
        min_feasible = min_feasible.min(min_gap);
        if let Some((v, i)) = row {
            if best.is_none_or(|(bv, _, _)| v > bv) {
                best = Some((v, i, j));
            }
        }
    }
    let (_, i, j) = best.ok_or(Error::InfeasibleConstraint {
        epsilon: spec.epsilon,
        min_feasible,
    })?;
    let gap = max_gap(required, &a, i, &b, j);
    Ok(ThresholdPair::new(
        pop,
        PerGroup::new(a.theta[i], b.theta[j]),
        gap,
        SolverPath::Grid,
    ))
}

/// Local improvement of a lattice solution, keeping strict feasibility.
pub(crate) fn refine(
    pop: &Population,
    spec: FairnessSpec,
    coarse: &ThresholdPair,
    step: f64,
) -> ThresholdPair {
    // pattern search: scan a 21 × 21 patch, recentre while the best point
    // moves (the feasible band can be long and thin), halve once the centre
    // wins
    let required = spec.criterion.required();
    let score = |theta: PerGroup<f64>| -> Option<(f64, f64)> {
        let e = evaluate(pop, theta);
        let gap = required.iter().map(|&c| e.gap(c)).fold(0.0, f64::max);
        (gap <= spec.epsilon).then_some((e.total_utility, gap))
    };
    let Some(mut best) = score(coarse.theta).map(|(u, g)| (u, coarse.theta, g)) else {
        return coarse.clone();
    };
    let mut h = step / 10.0;
    for _ in 0..REFINE_ROUNDS {
        if h < step * 1e-6 {
            break;
        }
        let local = |g: &GroupModel, center: f64| -> Vec<f64> {
            let (lo, hi) = g.bounds();
            let mut v: Vec<f64> = (-10..=10)
                .map(|k| (center + h * k as f64).clamp(lo, hi))
                .collect();
            v.dedup();
            v
        };
        let center = best.1;
        for &b in &local(pop.b(), center.b) {
            for &a in &local(pop.a(), center.a) {
                let theta = PerGroup::new(a, b);
                if let Some((u, gap)) = score(theta) {
                    if u > best.0 {
                        best = (u, theta, gap);
                    }
                }
            }
        }
        if best.1 == center {
            h /= 2.0;
        }
    }
    ThresholdPair::new(pop, best.1, best.2, SolverPath::Grid)
}

const REFINE_ROUNDS: usize = 400;

/// Brute-force reference solution on a lattice with spacing `step`.
///
/// * MU: per-group lattice argmax of U_g.
/// * Single measure with ε = 0: for every lattice θ_b, θ_a is placed on the
///   equality curve by linear interpolation between the two group-a lattice
///   points whose measures bracket C_b(θ_b).
/// * Otherwise: exhaustive pair scan with feasibility at the lattice's
///   measure resolution when that exceeds ε.
pub fn grid_oracle(pop: &Population, spec: FairnessSpec, step: f64) -> Result<ThresholdPair> {
    grid_oracle_with(pop, spec, step, Exec::Auto)
}

pub fn grid_oracle_with(
    pop: &Population,
    spec: FairnessSpec,
    step: f64,
    exec: Exec,
) -> Result<ThresholdPair> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "oracle step must be positive (got {step})"
        )));
    }
    match spec.criterion {
        Criterion::Mu => {
            let theta = pop.groups().map(|_, g| {
                let axis = Axis::new(pop, g, step, exec);
                axis.theta[axis.argmax_utility()]
            });
            Ok(ThresholdPair::new(pop, theta, 0.0, SolverPath::Grid))
        }
        c if spec.epsilon == 0.0 && c != Criterion::Eo => Ok(curve_oracle(pop, c, step, exec)),
        _ => lattice_search(pop, spec, step, LatticeMode::Resolution, exec),
    }
}

fn curve_oracle(pop: &Population, c: Criterion, step: f64, exec: Exec) -> ThresholdPair {
    let a = Axis::new(pop, pop.a(), step, exec);
    let b = Axis::new(pop, pop.b(), step, exec);
    let ca = a.measure(c);
    let (na, nb) = (pop.a().mass(), pop.b().mass());
    let rows = map_range(exec, b.theta.len(), |j| {
        let target = b.measure(c)[j];
        // measures decrease along the lattice
        let k = ca.partition_point(|&v| v > target);
        let ta = if k == 0 {
            a.theta[0]
        } else if k >= ca.len() {
            a.theta[ca.len() - 1]
        } else {
            let (v0, v1) = (ca[k - 1], ca[k]);
            let t = if v0 > v1 {
                (v0 - target) / (v0 - v1)
            } else {
                0.0
            };
            a.theta[k - 1] + t * (a.theta[k] - a.theta[k - 1])
        };
        (na * group_utility(pop, pop.a(), ta) + nb * b.utility[j], ta)
    });
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for (j, (v, ta)) in rows.into_iter().enumerate() {
        if v > best.0 {
            best = (v, ta, b.theta[j]);
        }
    }
    let theta = PerGroup::new(best.1, best.2);
    let e = evaluate(pop, theta);
    ThresholdPair::new(pop, theta, e.gap(c), SolverPath::Grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{solve_fair, solve_mu};
    use crate::population::synthetic;

    #[test]
    fn mu_oracle_is_per_group_lattice_argmax() {
        let pop = synthetic();
        let oracle = grid_oracle(&pop, FairnessSpec::mu(), 0.05).unwrap();
        let mu = solve_mu(&pop);
        assert!((oracle.theta.a - mu.theta.a).abs() <= 0.05);
        assert!((oracle.theta.b - mu.theta.b).abs() <= 0.05);
    }

    #[test]
    fn oracle_agrees_with_curve_solver_within_a_step() {
        let pop = synthetic();
        for c in Criterion::MEASURES {
            let spec = FairnessSpec::hard(c);
            let oracle = grid_oracle(&pop, spec, 0.05).unwrap();
            let pair = solve_fair(&pop, spec).unwrap();
            assert!((oracle.theta.a - pair.theta.a).abs() <= 0.05, "{c} a");
            assert!((oracle.theta.b - pair.theta.b).abs() <= 0.05, "{c} b");
        }
    }

    #[test]
    fn sequential_and_parallel_scans_agree() {
        let pop = synthetic();
        let spec = FairnessSpec::new(Criterion::Eo, 0.01);
        let s = grid_oracle_with(&pop, spec, 0.5, Exec::Sequential).unwrap();
        let p = grid_oracle_with(&pop, spec, 0.5, Exec::Parallel).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn soft_oracle_is_near_refined_solution() {
        let pop = synthetic();
        let spec = FairnessSpec::new(Criterion::Dp, 0.01);
        let oracle = grid_oracle(&pop, spec, 0.1).unwrap();
        let pair = solve_fair(&pop, spec).unwrap();
        let (uo, up) = (
            evaluate(&pop, oracle.theta).total_utility,
            evaluate(&pop, pair.theta).total_utility,
        );
        assert!((uo - up).abs() < 1e-3, "{uo} vs {up}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let pop = synthetic();
        assert!(grid_oracle(&pop, FairnessSpec::mu(), 0.0).is_err());
    }
}

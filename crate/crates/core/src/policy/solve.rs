use log::debug;

use super::oracle::{lattice_search, LatticeMode};
use super::{
    default_grid_step, evaluate, group_utility, matched, measure_dist,
    profile_stationarity_residual, stationarity_residual, Criterion, FairnessSpec, SolverPath,
    ThresholdPair,
};
use crate::error::Result;
use crate::numeric::{bisect, golden_section_max, lattice, linspace};
use crate::par::Exec;
use crate::population::{GroupModel, PerGroup, Population};

/// Points scanned along the equality curve to bracket the optimum.
const SCAN_POINTS: usize = 64;

fn xtol(lo: f64, hi: f64) -> f64 {
    1e-13 * (1.0 + lo.abs().max(hi.abs()))
}

/// Utility-maximizing thresholds: per group, the score where γ_g reaches
/// u₋/(u₊+u₋). Falls back to a per-group lattice search when the likelihood
/// ratio is not monotone.
pub fn solve_mu(pop: &Population) -> ThresholdPair {
    let target = pop.break_even();
    let mut path = SolverPath::RootFind;
    let theta = pop.groups().map(|g, m| {
        if pop.diagnostics().mlr.get(g).holds {
            mu_root(m, target)
        } else {
            path = SolverPath::Grid;
            mu_grid(pop, m)
        }
    });
    let residual = pop
        .groups()
        .map(|g, m| (m.gamma(*theta.get(g)) - target).abs());
    let pair = ThresholdPair::new(pop, theta, residual.a.max(residual.b), path);
    if !pair.is_interior() {
        debug!("MU solution on the support boundary: {:?}", pair.boundary);
    }
    pair
}

fn mu_root(g: &GroupModel, target: f64) -> f64 {
    let (lo, hi) = g.bounds();
    if g.gamma(lo) >= target {
        return lo;
    }
    if g.gamma(hi) < target {
        return hi;
    }
    bisect(|t| g.gamma(t) - target, lo, hi, xtol(lo, hi))
}

fn mu_grid(pop: &Population, g: &GroupModel) -> f64 {
    let (lo, hi) = g.bounds();
    let step = (hi - lo) / 400.0;
    let xs = lattice(lo, hi, step);
    let u = |t: f64| group_utility(pop, g, t);
    let mut best = (u(xs[0]), xs[0]);
    for &x in &xs[1..] {
        let v = u(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    let (a, b) = golden_section_max(u, (best.1 - step).max(lo), (best.1 + step).min(hi), 1e-9);
    let mid = 0.5 * (a + b);
    if u(mid) > best.0 {
        mid
    } else {
        best.1
    }
}

/// Fairness-constrained thresholds.
///
/// For a single measure the optimum is found on the equality curve
/// θ_a = φ(θ_b): a coarse scan brackets local maxima of the total utility,
/// golden-section narrows each, and bisection on the stationarity residual
/// polishes the result. With ε > 0 the optimum is MU when that is feasible
/// and otherwise lies on one of the offset curves C_a = C_b ± ε. EO goes
/// through a lattice search over both thresholds with local refinement.
pub fn solve_fair(pop: &Population, spec: FairnessSpec) -> Result<ThresholdPair> {
    solve_fair_with(pop, spec, Exec::Auto)
}

pub fn solve_fair_with(pop: &Population, spec: FairnessSpec, exec: Exec) -> Result<ThresholdPair> {
    match spec.criterion {
        Criterion::Mu => Ok(solve_mu(pop)),
        c if spec.epsilon == 0.0 && c != Criterion::Eo => Ok(solve_on_curve(pop, c, 0.0)),
        Criterion::Eo => {
            let step = default_grid_step(pop);
            let coarse = lattice_search(pop, spec, step, LatticeMode::Strict, exec)?;
            Ok(super::oracle::refine(pop, spec, &coarse, step))
        }
        c => Ok(solve_soft(pop, c, spec.epsilon)),
    }
}

fn solve_soft(pop: &Population, c: Criterion, epsilon: f64) -> ThresholdPair {
    let mu = solve_mu(pop);
    if evaluate(pop, mu.theta).gap(c) <= epsilon {
        return mu;
    }
    let utility = |p: &ThresholdPair| evaluate(pop, p.theta).total_utility;
    let lower = solve_on_curve(pop, c, -epsilon);
    let upper = solve_on_curve(pop, c, epsilon);
    if utility(&upper) > utility(&lower) {
        upper
    } else {
        lower
    }
}

/// θ_a with C_a(θ_a) = C_b(θ_b) + offset (clamped to [0, 1]).
fn offset_match(pop: &Population, c: Criterion, theta_b: f64, offset: f64) -> f64 {
    if offset == 0.0 {
        return matched(pop, c, theta_b);
    }
    let target = (measure_dist(pop.b(), c).tail(theta_b) + offset).clamp(0.0, 1.0);
    measure_dist(pop.a(), c).inverse_tail(target)
}

fn solve_on_curve(pop: &Population, c: Criterion, offset: f64) -> ThresholdPair {
    let (na, nb) = (pop.a().mass(), pop.b().mass());
    let total = |tb: f64| -> (f64, f64) {
        let ta = offset_match(pop, c, tb, offset);
        (
            na * group_utility(pop, pop.a(), ta) + nb * group_utility(pop, pop.b(), tb),
            ta,
        )
    };
    let stationarity = |tb: f64| {
        let ta = offset_match(pop, c, tb, offset);
        stationarity_residual(pop, c, PerGroup::new(ta, tb)).expect("measure criterion")
    };

    let (lo, hi) = pop.b().bounds();
    let xs = linspace(lo, hi, SCAN_POINTS);
    let vals: Vec<f64> = xs.iter().map(|&x| total(x).0).collect();

    let mut candidates = vec![lo, hi];
    for i in 1..SCAN_POINTS - 1 {
        let peak = vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1];
        let strict = vals[i] > vals[i - 1] || vals[i] > vals[i + 1];
        if !(peak && strict) {
            continue;
        }
        let (l, r) = (xs[i - 1], xs[i + 1]);
        let (ga, gb) = golden_section_max(|t| total(t).0, l, r, 1e-9 * (1.0 + r.abs()));
        let mut best = 0.5 * (ga + gb);
        let (sl, sr) = (stationarity(l), stationarity(r));
        if sl.is_finite() && sr.is_finite() && (sl > 0.0) != (sr > 0.0) {
            let root = bisect(stationarity, l, r, xtol(l, r));
            if total(root).0 >= total(best).0 - 1e-12 * total(best).0.abs().max(1.0) {
                best = root;
            }
        }
        candidates.push(best);
    }

    // Highest utility wins; ties go to the smaller (more inclusive) θ_b.
    candidates.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, lo, lo);
    for tb in candidates {
        let (v, ta) = total(tb);
        if v > best.0 {
            best = (v, tb, ta);
        }
    }
    let theta = PerGroup::new(best.2, best.1);
    let mut residual = stationarity_residual(pop, c, theta).expect("measure criterion");
    if !residual.is_finite() {
        residual = profile_stationarity_residual(pop, c, theta).expect("measure criterion");
    }
    ThresholdPair::new(pop, theta, residual, SolverPath::RootFind)
}

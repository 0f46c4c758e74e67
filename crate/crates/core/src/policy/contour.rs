use serde::Serialize;

use super::{evaluate, measure_dist, Criterion};
use crate::error::{Error, Result};
use crate::numeric::linspace;
use crate::par::{map_range, Exec};
use crate::population::{PerGroup, Population};

/// Total utility over a lattice of selection-rate pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contour {
    /// Selection-rate lattice shared by both axes.
    pub rates: Vec<f64>,
    /// `utility[i][j]` is the total utility at `s_a = rates[i]`,
    /// `s_b = rates[j]`.
    pub utility: Vec<Vec<f64>>,
    pub curves: Vec<ContourCurve>,
}

/// Locus of selection-rate pairs on which a criterion's gap is zero,
/// parametrized by group b's selection rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourCurve {
    pub criterion: Criterion,
    pub points: Vec<(f64, f64)>,
}

impl Contour {
    /// Lattice cell with the highest utility, as `(s_a, s_b)`.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (i, row) in self.utility.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        (self.rates[best.1], self.rates[best.2])
    }
}

/// Evaluates total utility on an `(n + 1) × (n + 1)` lattice of selection
/// rates in [0, 1]², inverting each group's selection rate to a threshold.
pub fn utility_contour(pop: &Population, n: usize) -> Result<Contour> {
    utility_contour_with(pop, n, Exec::Auto)
}

pub fn utility_contour_with(pop: &Population, n: usize, exec: Exec) -> Result<Contour> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "contour lattice needs at least one cell".into(),
        ));
    }
    let rates = linspace(0.0, 1.0, n + 1);
    let thresholds = pop.groups().map(|_, g| {
        rates
            .iter()
            .map(|&s| g.overall().inverse_tail(s))
            .collect::<Vec<f64>>()
    });
    let utility = map_range(exec, rates.len(), |i| {
        (0..rates.len())
            .map(|j| evaluate(pop, PerGroup::new(thresholds.a[i], thresholds.b[j])).total_utility)
            .collect()
    });
    let curves = Criterion::MEASURES
        .iter()
        .map(|&c| ContourCurve {
            criterion: c,
            points: thresholds
                .b
                .iter()
                .zip(&rates)
                .map(|(&tb, &sb)| {
                    let target = measure_dist(pop.b(), c).tail(tb);
                    let ta = measure_dist(pop.a(), c).inverse_tail(target);
                    (pop.a().overall().tail(ta), sb)
                })
                .collect(),
        })
        .collect();
    Ok(Contour {
        rates,
        utility,
        curves,
    })
}

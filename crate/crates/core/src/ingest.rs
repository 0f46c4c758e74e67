//! Loaders for real-world inputs: gridded qualification-profile tables and
//! scored, labelled records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::dist::ScoreDistribution;
use crate::error::{Error, Result};
use crate::numeric::trapezoid;
use crate::population::{GroupId, GroupModel, PerGroup, Population, ProfileInput};

const PROFILE_COLUMNS: [&str; 5] = ["score", "gamma_a", "gamma_b", "density_a", "density_b"];

/// Per-score qualification profile and score density for both groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileTable {
    pub score: Vec<f64>,
    pub gamma: PerGroup<Vec<f64>>,
    /// Normalized to unit trapezoidal mass per group.
    pub density: PerGroup<Vec<f64>>,
    pub mass: PerGroup<f64>,
    pub u_minus_over_u_plus: Option<f64>,
}

impl ProfileTable {
    /// ∫γ_g f_g by the trapezoidal rule on the table grid.
    pub fn alpha(&self, g: GroupId) -> f64 {
        let gf: Vec<f64> = self
            .gamma
            .get(g)
            .iter()
            .zip(self.density.get(g))
            .map(|(y, f)| y * f)
            .collect();
        trapezoid(&self.score, &gf)
    }
}

fn parse_metadata(text: &str, out: &mut BTreeMap<String, f64>) -> Result<()> {
    for (i, line) in text.lines().enumerate() {
        let line = line.trim().trim_start_matches('#').trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let value = v.trim().parse::<f64>().map_err(|e| Error::Parse {
            row: i + 1,
            column: k.trim().to_string(),
            message: e.to_string(),
        })?;
        out.insert(k.trim().to_string(), value);
    }
    Ok(())
}

fn parse_cell(field: &str, row: usize, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{field}`: {e}"),
    })
}

/// Reads a `score,gamma_a,gamma_b,density_a,density_b` table.
///
/// Metadata (`n_a`, `n_b`, `u_minus_over_u_plus`) comes from `key = value`
/// lines prefixed with `#` inside the file, or from a sidecar file with the
/// same stem and a `.meta` extension; inline values win.
pub fn load_profile_table(path: impl AsRef<Path>) -> Result<ProfileTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut meta = BTreeMap::new();
    let sidecar = path.with_extension("meta");
    if sidecar.exists() {
        parse_metadata(&fs::read_to_string(&sidecar)?, &mut meta)?;
    }
    let comments: String = text
        .lines()
        .filter(|l| l.trim_start().starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    parse_metadata(&comments, &mut meta)?;
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map(|l| format!("{l}\n"))
        .collect();
    parse_profile_csv(&body, &meta)
}

fn parse_profile_csv(body: &str, meta: &BTreeMap<String, f64>) -> Result<ProfileTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let index: Vec<usize> = PROFILE_COLUMNS
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| {
                Error::Validation(format!("profile table is missing column `{name}`"))
            })
        })
        .collect::<Result<_>>()?;

    let mut cols: [Vec<f64>; 5] = Default::default();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (k, &i) in index.iter().enumerate() {
            let field = record.get(i).unwrap_or("");
            let v = parse_cell(field, row, PROFILE_COLUMNS[k])?;
            cols[k].push(v);
        }
    }
    let [score, gamma_a, gamma_b, density_a, density_b] = cols;

    if score.len() < 2 {
        return Err(Error::Validation(
            "profile table needs at least 2 rows".into(),
        ));
    }
    if let Some(i) = score.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "scores must be strictly ascending (row {})",
            i + 2
        )));
    }
    for (name, col) in [("gamma_a", &gamma_a), ("gamma_b", &gamma_b)] {
        if let Some(i) = col.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation(format!(
                "probability {} in row {}, column `{name}` lies outside [0, 1]",
                col[i],
                i + 1
            )));
        }
    }
    let mut density = PerGroup::new(density_a, density_b);
    for (name, col) in [("density_a", &mut density.a), ("density_b", &mut density.b)] {
        if let Some(i) = col.iter().position(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::Validation(format!(
                "density {} in row {}, column `{name}` is negative",
                col[i],
                i + 1
            )));
        }
        let mass = trapezoid(&score, col);
        if mass <= 0.0 {
            return Err(Error::Validation(format!("column `{name}` has zero mass")));
        }
        if (mass - 1.0).abs() > 1e-3 {
            warn!("column `{name}` integrates to {mass}; renormalizing");
        }
        col.iter_mut().for_each(|d| *d /= mass);
    }

    let n_a = meta.get("n_a").copied();
    let n_b = meta.get("n_b").copied();
    let mass = match (n_a, n_b) {
        (Some(a), Some(b)) => PerGroup::new(a, b),
        (Some(a), None) => PerGroup::new(a, 1.0 - a),
        (None, Some(b)) => PerGroup::new(1.0 - b, b),
        (None, None) => {
            return Err(Error::Validation(
                "profile table metadata must give n_a and/or n_b".into(),
            ))
        }
    };
    if (mass.a + mass.b - 1.0).abs() > 1e-6 || mass.a < 0.0 || mass.b < 0.0 {
        return Err(Error::Validation(format!(
            "group fractions n_a = {}, n_b = {} must be nonnegative and sum to 1",
            mass.a, mass.b
        )));
    }
    Ok(ProfileTable {
        score,
        gamma: PerGroup::new(gamma_a, gamma_b),
        density,
        mass,
        u_minus_over_u_plus: meta.get("u_minus_over_u_plus").copied(),
    })
}

/// Builds the population implied by a profile table (Bayes inversion per
/// group on the table grid).
pub fn table_to_population(t: &ProfileTable, u_plus: f64, u_minus: f64) -> Result<Population> {
    let input = |g: GroupId| -> Result<ProfileInput> {
        Ok(ProfileInput {
            mass: *t.mass.get(g),
            grid: t.score.clone(),
            gamma: t.gamma.get(g).clone(),
            overall: ScoreDistribution::empirical(t.score.clone(), t.density.get(g).clone())?,
            alpha: None,
        })
    };
    let pop = crate::population::population_from_profile(
        PerGroup::new(input(GroupId::A)?, input(GroupId::B)?),
        u_plus,
        u_minus,
    )?;
    let d = pop.diagnostics();
    if !d.mlr_holds() {
        warn!(
            "likelihood ratio is not monotone (a: {:?}, b: {:?}); solvers fall back to lattice search where needed",
            d.mlr.a.worst_cell, d.mlr.b.worst_cell
        );
    }
    Ok(pop)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Record {
    pub group: GroupId,
    pub score: f64,
    pub label: bool,
}

/// Scored, labelled records from two groups.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScoredRecords {
    rows: Vec<Record>,
}

impl ScoredRecords {
    pub fn new(rows: Vec<Record>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Positive-label rate and row count of group `g`.
    pub fn label_rate(&self, g: GroupId) -> (f64, usize) {
        let (pos, n) = self
            .rows
            .iter()
            .filter(|r| r.group == g)
            .fold((0usize, 0usize), |(p, n), r| (p + r.label as usize, n + 1));
        (if n == 0 { 0.0 } else { pos as f64 / n as f64 }, n)
    }

    fn scores(&self, g: GroupId, label: Option<bool>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.group == g && label.is_none_or(|l| r.label == l))
            .map(|r| r.score)
            .collect()
    }
}

/// Reads a `group,score,label` CSV (group `a`/`b`, label `0`/`1`).
pub fn load_records(path: impl AsRef<Path>) -> Result<ScoredRecords> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("records file is missing column `{name}`")))
    };
    let (gi, si, li) = (col("group")?, col("score")?, col("label")?);
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let group = match record.get(gi).unwrap_or("").to_ascii_lowercase().as_str() {
            "a" => GroupId::A,
            "b" => GroupId::B,
            other => {
                return Err(Error::Parse {
                    row,
                    column: "group".into(),
                    message: format!("expected `a` or `b`, found `{other}`"),
                })
            }
        };
        let score = parse_cell(record.get(si).unwrap_or(""), row, "score")?;
        let label = match record.get(li).unwrap_or("") {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    row,
                    column: "label".into(),
                    message: format!("expected 0 or 1, found `{other}`"),
                })
            }
        };
        rows.push(Record {
            group,
            score,
            label,
        });
    }
    Ok(ScoredRecords::new(rows))
}

/// Maximum number of histogram bins chosen automatically.
pub const MAX_BINS: usize = 200;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, t) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + t * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Freedman–Diaconis bin count, clamped to [2, MAX_BINS].
pub fn freedman_diaconis_bins(scores: &[f64]) -> usize {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[s.len() - 1] - s[0];
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    if width.is_nan() || width <= 0.0 || range.is_nan() || range <= 0.0 {
        return 2;
    }
    ((range / width).ceil() as usize).clamp(2, MAX_BINS)
}

/// Histogram density on `[lo, hi]`: nodes at bin centres plus both edges,
/// with the edge values copying the neighbouring bin so the trapezoidal mass
/// equals the histogram mass.
fn histogram(scores: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in scores {
        let k = (((x - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = scores.len() as f64;
    let mut grid = vec![lo];
    let mut dens = vec![counts[0] as f64 / (n * width)];
    for (k, &c) in counts.iter().enumerate() {
        grid.push(lo + (k as f64 + 0.5) * width);
        dens.push(c as f64 / (n * width));
    }
    grid.push(hi);
    dens.push(counts[bins - 1] as f64 / (n * width));
    (grid, dens)
}

/// Histograms each (group, label) cell into an empirical density; α_g is the
/// label mean and n_g the group frequency. `bins = None` picks a
/// Freedman–Diaconis count per group.
pub fn records_to_population(
    r: &ScoredRecords,
    bins: Option<usize>,
    u_plus: f64,
    u_minus: f64,
) -> Result<Population> {
    if let Some(b) = bins {
        if b < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 histogram bins (got {b})"
            )));
        }
    }
    let total = r.len();
    let build = |g: GroupId| -> Result<GroupModel> {
        let all = r.scores(g, None);
        for label in [true, false] {
            let cell = r.scores(g, Some(label));
            let mut distinct = cell.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "group {g}, label {}: {} rows with {} distinct scores",
                    label as u8,
                    cell.len(),
                    distinct.len()
                )));
            }
        }
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = bins.unwrap_or_else(|| freedman_diaconis_bins(&all));
        let dist = |label| {
            let (grid, dens) = histogram(&r.scores(g, Some(label)), lo, hi, k);
            ScoreDistribution::empirical(grid, dens)
        };
        let (alpha, count) = r.label_rate(g);
        GroupModel::new(
            g,
            count as f64 / total as f64,
            alpha,
            dist(true)?,
            dist(false)?,
        )
    };
    let pop = Population::new(build(GroupId::A)?, build(GroupId::B)?, u_plus, u_minus)?;
    if !pop.diagnostics().mlr_holds() {
        warn!("histogrammed likelihood ratio is not monotone");
    }
    Ok(pop)
}

//! Declarative bias sweeps: build a population, bias it at each level, solve
//! every fairness spec on the biased data and evaluate on the truth.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::bias::{self, sample_dataset, BiasFamily, BiasSpec, Shift, ShiftTarget};
use crate::error::{Error, Result};
use crate::ingest::{load_profile_table, load_records, records_to_population, table_to_population};
use crate::numeric::ols_slope;
use crate::par::{map_range, Exec};
use crate::policy::{
    evaluate, grid_oracle, solve_fair, utility_contour_with, Contour, Criterion, FairnessSpec,
    PolicyEvaluation, ThresholdPair, DEFAULT_EPSILON,
};
use crate::population::{Population, SyntheticParams};
use crate::sensitivity::{
    sensitivity_feature_bias, sensitivity_label_bias, write_sensitivity_csv, SensitivityReport,
    ShiftFamily,
};

pub const DEFAULT_LOSS_RATIO: f64 = 10.0;

pub const RESULTS_HEADER: [&str; 14] = [
    "spec",
    "beta",
    "theta_a",
    "theta_b",
    "sel_a",
    "sel_b",
    "gap_dp",
    "gap_tpr",
    "gap_fpr",
    "util_a",
    "util_b",
    "util_total",
    "solver",
    "residual",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSource {
    Synthetic {
        #[serde(flatten)]
        params: SyntheticParams,
    },
    ProfileTable {
        path: PathBuf,
    },
    Records {
        path: PathBuf,
        #[serde(default)]
        bins: Option<usize>,
    },
}

/// A spec entry: a bare criterion name, or a table with its own ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecEntry {
    Name(Criterion),
    Full {
        criterion: Criterion,
        epsilon: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepFamily {
    UnderestimateB {
        #[serde(default)]
        betas: Option<Vec<f64>>,
    },
    OverestimateA {
        #[serde(default)]
        betas: Option<Vec<f64>>,
    },
    /// Constant underestimate of (1 − β)·`drop` on the targeted classes.
    FeatureShiftB {
        target: ShiftTarget,
        drop: f64,
        #[serde(default)]
        betas: Option<Vec<f64>>,
    },
}

impl SweepFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SweepFamily::UnderestimateB { .. } => "underestimate_b",
            SweepFamily::OverestimateA { .. } => "overestimate_a",
            SweepFamily::FeatureShiftB { .. } => "feature_shift_b",
        }
    }

    /// The sweep levels; defaults to 1.0, 0.95, …, 0.5 (0.0, 0.05, …, 0.5
    /// for overestimation, whose unbiased level is 0).
    pub fn betas(&self) -> Vec<f64> {
        let explicit = match self {
            SweepFamily::UnderestimateB { betas }
            | SweepFamily::OverestimateA { betas }
            | SweepFamily::FeatureShiftB { betas, .. } => betas.clone(),
        };
        explicit.unwrap_or_else(|| {
            let levels = (0..=10).map(|k| k as f64 / 20.0);
            match self {
                SweepFamily::OverestimateA { .. } => levels.collect(),
                _ => levels.map(|b| (20.0 - 20.0 * b).round() / 20.0).collect(),
            }
        })
    }

    fn in_range(&self, beta: f64) -> bool {
        match self {
            SweepFamily::UnderestimateB { .. } => beta > 0.0 && beta <= 1.0,
            SweepFamily::OverestimateA { .. } => (0.0..1.0).contains(&beta),
            SweepFamily::FeatureShiftB { .. } => (0.0..=1.0).contains(&beta),
        }
    }

    /// Bias level used for trend fits: 1 − β, or β for overestimation.
    pub fn level(&self, beta: f64) -> f64 {
        match self {
            SweepFamily::OverestimateA { .. } => beta,
            _ => 1.0 - beta,
        }
    }

    pub fn spec_at(&self, beta: f64) -> BiasSpec {
        BiasSpec::new(match self {
            SweepFamily::UnderestimateB { .. } => BiasFamily::UnderestimateB { beta },
            SweepFamily::OverestimateA { .. } => BiasFamily::OverestimateA { beta },
            SweepFamily::FeatureShiftB { target, drop, .. } => BiasFamily::FeatureShiftB {
                shift: Shift::Constant {
                    epsilon: (1.0 - beta) * drop,
                },
                target: *target,
            },
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Results file name inside the output directory.
    pub results: Option<String>,
    /// Selection-rate lattice cells per axis; enables contour output.
    pub contour: Option<usize>,
    /// Enables the sensitivity table.
    pub sensitivity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub population: PopulationSource,
    #[serde(default = "default_specs")]
    pub specs: Vec<SpecEntry>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// u₋/u₊; utilities are reported in units of u₊. Falls back to the
    /// profile table's metadata, then to 10.
    #[serde(default)]
    pub u_minus_over_u_plus: Option<f64>,
    pub bias: SweepFamily,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Train on `sample` records drawn from each biased population (seeded
    /// by `seed` and the sweep index) instead of the exact biased densities.
    #[serde(default)]
    pub sample: Option<usize>,
    /// Histogram bins for sampled training data; Freedman–Diaconis if unset.
    #[serde(default)]
    pub sample_bins: Option<usize>,
}

fn default_specs() -> Vec<SpecEntry> {
    [Criterion::Dp, Criterion::Tpr, Criterion::Fpr, Criterion::Eo]
        .into_iter()
        .map(SpecEntry::Name)
        .collect()
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        Ok(s)
    }

    /// Reads a scenario file; relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut s = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut s.population {
            PopulationSource::ProfileTable { path } | PopulationSource::Records { path, .. } => {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
            PopulationSource::Synthetic { .. } => {}
        }
        Ok(s)
    }

    /// The specs to run: MU first as the baseline, then the listed ones in
    /// order, without duplicates.
    pub fn fairness_specs(&self) -> Vec<FairnessSpec> {
        let mut out = vec![FairnessSpec::mu()];
        for e in &self.specs {
            let spec = match e {
                SpecEntry::Name(c) => FairnessSpec::new(*c, self.epsilon),
                SpecEntry::Full { criterion, epsilon } => {
                    FairnessSpec::new(*criterion, epsilon.unwrap_or(self.epsilon))
                }
            };
            let spec = if spec.criterion == Criterion::Mu {
                FairnessSpec::mu()
            } else {
                spec
            };
            if !out.contains(&spec) {
                out.push(spec);
            }
        }
        out
    }

    pub fn spec_label(&self, spec: &FairnessSpec) -> String {
        if spec.criterion == Criterion::Mu || spec.epsilon == self.epsilon {
            spec.criterion.to_string()
        } else {
            format!("{}@{}", spec.criterion, spec.epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.specs.is_empty() {
            return fail("at least one fairness spec is required".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return fail(format!(
                "epsilon must be nonnegative (got {})",
                self.epsilon
            ));
        }
        for s in self.fairness_specs() {
            if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
                return fail(format!("{} epsilon must be nonnegative", s.criterion));
            }
        }
        if let Some(r) = self.u_minus_over_u_plus {
            if !(r > 0.0 && r.is_finite()) {
                return fail(format!("u_minus_over_u_plus must be positive (got {r})"));
            }
        }
        let betas = self.bias.betas();
        if betas.is_empty() {
            return fail("the bias sweep is empty".into());
        }
        if let Some(b) = betas.iter().find(|&&b| !self.bias.in_range(b)) {
            return fail(format!(
                "sweep level {b} is outside the range of {}",
                self.bias.name()
            ));
        }
        if let SweepFamily::FeatureShiftB { drop, .. } = self.bias {
            if !(drop >= 0.0 && drop.is_finite()) {
                return fail(format!("shift drop must be nonnegative (got {drop})"));
            }
        }
        if let Some(step) = self.grid_step {
            if !(step > 0.0 && step.is_finite()) {
                return fail(format!("grid_step must be positive (got {step})"));
            }
        }
        if self.sample == Some(0) {
            return fail("sample size must be at least 1".into());
        }
        if self.outputs.contour == Some(0) {
            return fail("contour lattice needs at least one cell".into());
        }
        match &self.population {
            PopulationSource::ProfileTable { path } | PopulationSource::Records { path, .. } => {
                if !path.exists() {
                    return fail(format!("input file {} does not exist", path.display()));
                }
            }
            PopulationSource::Synthetic { params } => {
                params.build(1.0, DEFAULT_LOSS_RATIO).map_err(|e| {
                    Error::Validation(format!("synthetic population is invalid: {e}"))
                })?;
            }
        }
        Ok(())
    }

    /// Builds the ground-truth population with u₊ = 1.
    pub fn population(&self) -> Result<Population> {
        match &self.population {
            PopulationSource::Synthetic { params } => {
                params.build(1.0, self.u_minus_over_u_plus.unwrap_or(DEFAULT_LOSS_RATIO))
            }
            PopulationSource::ProfileTable { path } => {
                let t = load_profile_table(path)?;
                let ratio = self
                    .u_minus_over_u_plus
                    .or(t.u_minus_over_u_plus)
                    .unwrap_or(DEFAULT_LOSS_RATIO);
                table_to_population(&t, 1.0, ratio)
            }
            PopulationSource::Records { path, bins } => {
                let r = load_records(path)?;
                records_to_population(
                    &r,
                    *bins,
                    1.0,
                    self.u_minus_over_u_plus.unwrap_or(DEFAULT_LOSS_RATIO),
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellError {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for CellError {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    /// Solved on the biased population.
    pub trained: ThresholdPair,
    /// The trained thresholds evaluated on the truth.
    pub truth: PolicyEvaluation,
    /// The trained thresholds evaluated on the biased population.
    pub biased: PolicyEvaluation,
    /// Lattice cross-check on the biased population, when enabled.
    pub oracle: Option<std::result::Result<ThresholdPair, CellError>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub spec: FairnessSpec,
    pub label: String,
    pub beta: f64,
    pub outcome: std::result::Result<CellOutcome, CellError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub family: SweepFamily,
    /// Rows ordered by spec, then by β as listed in the sweep.
    pub rows: Vec<SweepRow>,
    pub oracle: bool,
}

impl SweepResult {
    pub fn rows_for(&self, spec: &FairnessSpec) -> impl Iterator<Item = &SweepRow> {
        let spec = *spec;
        self.rows.iter().filter(move |r| r.spec == spec)
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.outcome.is_err())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub exec: Exec,
    pub oracle: Option<bool>,
    pub grid_step: Option<f64>,
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            exec: Exec::Auto,
            oracle: None,
            grid_step: None,
            seed: None,
        }
    }
}

pub fn run_scenario(s: &Scenario) -> Result<SweepResult> {
    run_scenario_with(s, RunOptions::default())
}

/// Runs the sweep. Cells are independent and run in parallel; each cell's
/// solver error is recorded in its row instead of aborting the run.
pub fn run_scenario_with(s: &Scenario, opts: RunOptions) -> Result<SweepResult> {
    s.validate()?;
    let truth = s.population()?;
    let betas = s.bias.betas();
    let specs = s.fairness_specs();
    let oracle = opts.oracle.unwrap_or(s.oracle);
    let step = opts.grid_step.or(s.grid_step);

    let seed = opts.seed.unwrap_or(s.seed);
    let build = |k: usize| -> Result<Population> {
        let bp = bias::apply(&truth, &s.bias.spec_at(betas[k]))?;
        match s.sample {
            None => Ok(bp.biased),
            Some(n) => {
                let rec = sample_dataset(&bp, n, seed.wrapping_add(k as u64))?;
                records_to_population(&rec, s.sample_bins, truth.u_plus(), truth.u_minus())
            }
        }
    };
    let biased: Vec<std::result::Result<Population, CellError>> =
        map_range(opts.exec, betas.len(), |k| {
            build(k).map_err(|e| CellError::from(&e))
        });

    let cells = specs.len() * betas.len();
    let rows = map_range(opts.exec, cells, |idx| {
        let (si, bi) = (idx / betas.len(), idx % betas.len());
        let spec = specs[si];
        let outcome = biased[bi].clone().and_then(|pop| {
            let trained = solve_fair(&pop, spec).map_err(|e| CellError::from(&e))?;
            let oracle = oracle.then(|| {
                let step = step.unwrap_or_else(|| crate::policy::default_grid_step(&pop));
                grid_oracle(&pop, spec, step).map_err(|e| CellError::from(&e))
            });
            Ok(CellOutcome {
                truth: evaluate(&truth, trained.theta),
                biased: evaluate(&pop, trained.theta),
                trained,
                oracle,
            })
        });
        SweepRow {
            spec,
            label: s.spec_label(&spec),
            beta: betas[bi],
            outcome,
        }
    });
    info!("swept {} cells", rows.len());
    Ok(SweepResult {
        family: s.bias.clone(),
        rows,
        oracle,
    })
}

/// OLS slope of the truth-side gap of `criterion`, for rows trained under
/// that criterion, against the bias level.
pub fn fit_violation_trend(sr: &SweepResult, criterion: Criterion) -> Result<f64> {
    let points: Vec<(f64, f64)> = sr
        .rows
        .iter()
        .filter(|r| r.spec.criterion == criterion)
        .filter_map(|r| {
            let o = r.outcome.as_ref().ok()?;
            Some((sr.family.level(r.beta), o.truth.gap(criterion)))
        })
        .collect();
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "trend fit for {criterion} needs at least 3 solved sweep points (got {})",
            points.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    Ok(ols_slope(&xs, &ys))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the results table.
pub fn write_results<W: Write>(sr: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = RESULTS_HEADER.to_vec();
    if sr.oracle {
        header.extend(["oracle_theta_a", "oracle_theta_b"]);
    }
    w.write_record(&header)?;
    for r in &sr.rows {
        let mut rec: Vec<String> = vec![r.label.clone(), r.beta.to_string()];
        match &r.outcome {
            Ok(o) => {
                let t = &o.truth;
                rec.extend(
                    [
                        o.trained.theta.a,
                        o.trained.theta.b,
                        t.selection.a,
                        t.selection.b,
                        t.gap(Criterion::Dp),
                        t.gap(Criterion::Tpr),
                        t.gap(Criterion::Fpr),
                        t.utility.a,
                        t.utility.b,
                        t.total_utility,
                    ]
                    .iter()
                    .map(|v| v.to_string()),
                );
                rec.push(o.trained.solver.to_string());
                rec.push(o.trained.residual.to_string());
                if sr.oracle {
                    let th = o
                        .oracle
                        .as_ref()
                        .and_then(|x| x.as_ref().ok())
                        .map(|p| p.theta);
                    rec.push(fmt_opt(th.map(|t| t.a)));
                    rec.push(fmt_opt(th.map(|t| t.b)));
                }
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 10));
                rec.push(e.kind.clone());
                rec.push(String::new());
                if sr.oracle {
                    rec.extend([String::new(), String::new()]);
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `s_a,s_b,utility` for the contour matrix.
pub fn write_contour<W: Write>(c: &Contour, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s_a", "s_b", "utility"])?;
    for (i, row) in c.utility.iter().enumerate() {
        for (j, u) in row.iter().enumerate() {
            w.write_record([
                c.rates[i].to_string(),
                c.rates[j].to_string(),
                u.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_curve<W: Write>(points: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s_a", "s_b"])?;
    for (a, b) in points {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sensitivity reports for the scenario's population: label bias for DP/TPR
/// and, for feature-shift sweeps, feature bias for TPR/FPR.
pub fn scenario_sensitivity(s: &Scenario) -> Result<Vec<SensitivityReport>> {
    let pop = s.population()?;
    let mut out = Vec::new();
    for c in [Criterion::Dp, Criterion::Tpr] {
        out.push(sensitivity_label_bias(&pop, c)?);
    }
    if let SweepFamily::FeatureShiftB { target, drop, .. } = s.bias {
        for c in [Criterion::Tpr, Criterion::Fpr] {
            out.push(sensitivity_feature_bias(
                &pop,
                c,
                ShiftFamily { target, drop },
            )?);
        }
    }
    Ok(out)
}

/// Files written by [`emit_outputs`].
#[derive(Debug, Clone, Default)]
pub struct Emitted {
    pub files: Vec<PathBuf>,
}

fn create(
    dir: &Path,
    name: &str,
    files: &mut Vec<PathBuf>,
) -> Result<std::io::BufWriter<fs::File>> {
    let p = dir.join(name);
    let f = fs::File::create(&p)?;
    files.push(p);
    Ok(std::io::BufWriter::new(f))
}

pub fn write_contour_files(dir: &Path, c: &Contour, files: &mut Vec<PathBuf>) -> Result<()> {
    write_contour(c, create(dir, "contour.csv", files)?)?;
    for curve in &c.curves {
        let name = format!("contour_{}.csv", curve.criterion.as_str().to_lowercase());
        write_curve(&curve.points, create(dir, &name, files)?)?;
    }
    Ok(())
}

pub fn write_sensitivity_file(
    dir: &Path,
    reports: &[SensitivityReport],
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    write_sensitivity_csv(reports, create(dir, "sensitivity.csv", files)?)
}

/// Writes the results table and whatever extra outputs the scenario asks
/// for into `dir`. Output is byte-identical across runs.
pub fn emit_outputs(s: &Scenario, sr: &SweepResult, dir: &Path, exec: Exec) -> Result<Emitted> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let name = s.outputs.results.as_deref().unwrap_or("results.csv");
    write_results(sr, create(dir, name, &mut files)?)?;
    if let Some(n) = s.outputs.contour {
        let c = utility_contour_with(&s.population()?, n, exec)?;
        write_contour_files(dir, &c, &mut files)?;
    }
    if s.outputs.sensitivity {
        write_sensitivity_file(dir, &scenario_sensitivity(s)?, &mut files)?;
    }
    Ok(Emitted { files })
}

//! Config-driven Monte Carlo sweeps over drops, with CSV output, per-figure
//! plot data and complexity summaries.
//!
//! Drop `d` uses the same geometry seed at every sweep point, so methods and
//! sweep values are compared on common random numbers. Drops run in
//! parallel; every reduction happens afterwards in drop order, which keeps
//! the CSV byte-identical across thread counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{KappaModel, ScenarioScsi};
use crate::dataset::{read_dataset, Dataset};
use crate::error::{Error, Result};
use crate::factorization::build_all_factors;
use crate::rates::{rate_ap1, rate_ap2, rate_mc};
use crate::rng::derive_seed;
use crate::scenario::ScenarioConfig;
use crate::solvers::{
    solve_baseline, solve_ms_jocdwm, solve_ms_jowm, Baseline, ConvergenceTrace, IterationRecord, PrecoderSolution,
    SolverConfig,
};
use crate::te::cfp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SS-M")]
    SsM,
    #[serde(rename = "SS-WM")]
    SsWm,
    #[serde(rename = "MS-SepWM")]
    MsSepWm,
    #[serde(rename = "MS-JoWM")]
    MsJoWm,
    #[serde(rename = "MS-JoCDWM")]
    MsJoCdwm,
    #[serde(rename = "CFP-from-dataset")]
    CfpFromDataset,
}

impl Method {
    /// Canonical column order.
    pub const ALL: [Method; 6] = [
        Method::SsM,
        Method::SsWm,
        Method::MsSepWm,
        Method::MsJoWm,
        Method::MsJoCdwm,
        Method::CfpFromDataset,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::SsM => "SS-M",
            Method::SsWm => "SS-WM",
            Method::MsSepWm => "MS-SepWM",
            Method::MsJoWm => "MS-JoWM",
            Method::MsJoCdwm => "MS-JoCDWM",
            Method::CfpFromDataset => "CFP-from-dataset",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Per-satellite budget, dBm.
    PTx,
    /// Constant Rician factor on every link, dB.
    Kappa,
    /// Phase-error variance ς².
    Zeta2,
    /// Number of cooperating satellites.
    S,
    /// Number of users.
    K,
}

impl SweepAxis {
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::PTx => "P_TX_dBm",
            SweepAxis::Kappa => "kappa_dB",
            SweepAxis::Zeta2 => "zeta2",
            SweepAxis::S => "S",
            SweepAxis::K => "K",
        }
    }

    pub fn from_column(c: &str) -> Option<Self> {
        [SweepAxis::PTx, SweepAxis::Kappa, SweepAxis::Zeta2, SweepAxis::S, SweepAxis::K]
            .into_iter()
            .find(|a| a.column() == c)
    }

    /// Accepts both the config names and the CSV column names.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p_tx" | "p_tx_dbm" | "ptx" => Ok(SweepAxis::PTx),
            "kappa" | "kappa_db" => Ok(SweepAxis::Kappa),
            "zeta2" => Ok(SweepAxis::Zeta2),
            "s" => Ok(SweepAxis::S),
            "k" => Ok(SweepAxis::K),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis '{other}'"))),
        }
    }

    /// Applies one sweep value to a scenario.
    pub fn apply(self, scenario: &mut ScenarioConfig, value: f64) -> Result<()> {
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} must be a positive integer, got {value}", self.column())))
            }
        };
        match self {
            SweepAxis::PTx => scenario.p_tx_dbm = value,
            SweepAxis::Kappa => scenario.link.kappa = KappaModel::ConstantDb { value_db: value },
            SweepAxis::Zeta2 => scenario.link.phase_var = value,
            SweepAxis::S => scenario.num_sats = count()?,
            SweepAxis::K => scenario.num_users = count()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::PTx,
            values: vec![20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_drops: usize,
    /// Channel draws per drop for the ergodic rate.
    pub n_mc_rate: usize,
    pub methods: Vec<Method>,
    /// Labels file consumed by `CFP-from-dataset`.
    pub cfp_dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub sweep: SweepConfig,
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_drops: 50,
            n_mc_rate: 200,
            methods: vec![Method::SsM, Method::SsWm, Method::MsSepWm, Method::MsJoWm, Method::MsJoCdwm],
            cfp_dataset: None,
            output_dir: None,
            sweep: SweepConfig::default(),
            scenario: ScenarioConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_drops == 0 {
            return Err(Error::InvalidConfig("n_drops must be at least 1".into()));
        }
        if self.n_mc_rate == 0 {
            return Err(Error::InvalidConfig("n_mc_rate must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::InvalidConfig("sweep.values must not be empty".into()));
        }
        if self.methods.contains(&Method::CfpFromDataset) && self.cfp_dataset.is_none() {
            return Err(Error::InvalidConfig("CFP-from-dataset needs cfp_dataset".into()));
        }
        self.solver.validate()?;
        for &v in &self.sweep.values {
            let mut s = self.scenario.clone();
            self.sweep.axis.apply(&mut s, v)?;
            s.validate()?;
        }
        Ok(())
    }
}

/// Annotated default configuration for `--print-schema`.
pub fn schema_text() -> String {
    let body = ExperimentConfig::default().to_toml().unwrap_or_default();
    let mut out = String::new();
    out.push_str("# Experiment configuration. Every key is optional; shown values are the defaults.\n");
    out.push_str("# methods: any of \"SS-M\", \"SS-WM\", \"MS-SepWM\", \"MS-JoWM\", \"MS-JoCDWM\", \"CFP-from-dataset\"\n");
    out.push_str("# sweep.axis: p_tx (dBm) | kappa (dB, constant on every link) | zeta2 | s | k\n");
    out.push_str("# scenario.link.kappa: { kind = \"normal_db\", mean_db, std_db } or { kind = \"constant_db\", value_db }\n");
    out.push_str("# solver.init_scheme: matched_filter | dominant_eigen\n");
    out.push_str("# cfp_dataset: path to a dataset file; record p*n_drops + d feeds drop d of sweep point p\n");
    out.push_str("# output_dir: default output directory when --out is not given\n\n");
    out.push_str(&body);
    out
}

/// Everything measured for one method on one drop.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub rate_ap1: f64,
    pub rate_ap2: f64,
    pub rate_e: f64,
    pub rate_e_stderr: f64,
    pub iterations: usize,
    pub linear_solves: usize,
    pub elapsed_secs: f64,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub enum DropOutcome {
    Ok(MethodOutcome),
    Excluded(String),
}

/// Runs one solver on a scenario; `Err` only for non-numerical failures.
pub fn solve_method(scsi: &ScenarioScsi, method: Method, solver: &SolverConfig) -> Result<(PrecoderSolution, ConvergenceTrace)> {
    match method {
        Method::SsM => solve_baseline(scsi, solver, Baseline::SsM),
        Method::SsWm => solve_baseline(scsi, solver, Baseline::SsWm),
        Method::MsSepWm => solve_baseline(scsi, solver, Baseline::MsSepWm),
        Method::MsJoWm => solve_ms_jowm(scsi, solver),
        Method::MsJoCdwm => solve_ms_jocdwm(scsi, solver),
        Method::CfpFromDataset => Err(Error::InvalidInput("CFP-from-dataset needs labels".into())),
    }
}

/// Rates of a finished precoder: both surrogates and the ergodic estimate.
pub fn evaluate(
    scsi: &ScenarioScsi,
    sol: &PrecoderSolution,
    trace: ConvergenceTrace,
    n_mc: usize,
    mc_seed: u64,
) -> Result<MethodOutcome> {
    let factors = build_all_factors(scsi)?;
    let ap1 = rate_ap1(&sol.w, scsi, &factors)?;
    let ap2 = rate_ap2(&sol.w, scsi, &factors)?;
    let re = rate_mc(&sol.w, scsi, &factors, n_mc, mc_seed)?;
    Ok(MethodOutcome {
        rate_ap1: ap1.sum_rate,
        rate_ap2: ap2.sum_rate,
        rate_e: re.sum_rate,
        rate_e_stderr: re.mc_stderr.unwrap_or(0.0),
        iterations: trace.iterations,
        linear_solves: trace.linear_solves,
        elapsed_secs: trace.elapsed_secs,
        records: trace.records,
    })
}

fn run_one(scsi: &ScenarioScsi, method: Method, cfg: &ExperimentConfig, mc_seed: u64) -> Result<DropOutcome> {
    match solve_method(scsi, method, &cfg.solver) {
        Ok((_, trace)) if trace.breakdown => Ok(DropOutcome::Excluded("solver breakdown".into())),
        Ok((sol, trace)) => Ok(DropOutcome::Ok(evaluate(scsi, &sol, trace, cfg.n_mc_rate, mc_seed)?)),
        Err(Error::Numerical(m)) => Ok(DropOutcome::Excluded(m)),
        Err(e) => Err(e),
    }
}

fn run_cfp(dataset: &Dataset, index: usize, cfg: &ExperimentConfig, mc_seed: u64) -> Result<DropOutcome> {
    let rec = dataset.records.get(index).ok_or_else(|| {
        Error::InvalidConfig(format!("dataset has {} records, drop needs record {index}", dataset.records.len()))
    })?;
    let scsi = rec.inputs.to_scsi(dataset.header.array)?;
    let start = Instant::now();
    let sol = match cfp(&rec.labels, &rec.inputs, dataset.header.array, cfg.solver.ridge_floor) {
        Ok(s) => s,
        Err(Error::Numerical(m)) => return Ok(DropOutcome::Excluded(m)),
        Err(e) => return Err(e),
    };
    let trace = ConvergenceTrace {
        linear_solves: scsi.num_users,
        elapsed_secs: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    Ok(DropOutcome::Ok(evaluate(&scsi, &sol, trace, cfg.n_mc_rate, mc_seed)?))
}

/// Mean and standard error over drops.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self { mean, stderr: (var / n as f64).sqrt() }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub value: f64,
    pub method: Method,
    pub n_ok: usize,
    pub n_excluded: usize,
    pub rate_ap1: Stat,
    pub rate_ap2: Stat,
    pub rate_e: Stat,
    pub iterations_mean: f64,
    pub linear_solves_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub axis: SweepAxis,
    pub rows: Vec<SummaryRow>,
    /// `[point][drop][method]` in config order.
    pub outcomes: Vec<Vec<Vec<DropOutcome>>>,
    pub methods: Vec<Method>,
    pub values: Vec<f64>,
    pub elapsed_secs: f64,
}

/// Runs every sweep point and drop. Per-drop numerical failures are excluded
/// and counted; a point where some method kept no drop at all is an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let dataset = match (&cfg.cfp_dataset, cfg.methods.contains(&Method::CfpFromDataset)) {
        (Some(p), true) => Some(read_dataset(p)?),
        _ => None,
    };
    let states = cfg.scenario.states()?;
    let mut outcomes = Vec::with_capacity(cfg.sweep.values.len());
    for (p, &value) in cfg.sweep.values.iter().enumerate() {
        let mut scenario = cfg.scenario.clone();
        cfg.sweep.axis.apply(&mut scenario, value)?;
        let per_drop: Vec<Vec<DropOutcome>> = (0..cfg.n_drops)
            .into_par_iter()
            .map(|d| {
                let drop = scenario.generate(&states, derive_seed(cfg.seed, &[d as u64]))?;
                let mc_seed = derive_seed(cfg.seed, &[p as u64, d as u64, 0x5245]);
                cfg.methods
                    .iter()
                    .map(|&m| match m {
                        Method::CfpFromDataset => {
                            let ds = dataset.as_ref().expect("dataset loaded when CFP is requested");
                            run_cfp(ds, p * cfg.n_drops + d, cfg, mc_seed)
                        }
                        _ => run_one(&drop.scsi, m, cfg, mc_seed),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        outcomes.push(per_drop);
    }
    let rows = summarize(&cfg.sweep.values, &cfg.methods, &outcomes);
    if let Some(r) = rows.iter().find(|r| r.n_ok == 0) {
        return Err(Error::Numerical(format!(
            "{} kept no drop at {} = {}",
            r.method.label(),
            cfg.sweep.axis.column(),
            r.value
        )));
    }
    Ok(ExperimentResult {
        axis: cfg.sweep.axis,
        rows,
        outcomes,
        methods: cfg.methods.clone(),
        values: cfg.sweep.values.clone(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

fn summarize(values: &[f64], methods: &[Method], outcomes: &[Vec<Vec<DropOutcome>>]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (p, &value) in values.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            let ok: Vec<&MethodOutcome> = outcomes[p]
                .iter()
                .filter_map(|d| match &d[mi] {
                    DropOutcome::Ok(o) => Some(o),
                    DropOutcome::Excluded(_) => None,
                })
                .collect();
            let pick = |f: fn(&MethodOutcome) -> f64| Stat::of(&ok.iter().map(|o| f(o)).collect::<Vec<_>>());
            let n = ok.len().max(1) as f64;
            rows.push(SummaryRow {
                value,
                method,
                n_ok: ok.len(),
                n_excluded: outcomes[p].len() - ok.len(),
                rate_ap1: pick(|o| o.rate_ap1),
                rate_ap2: pick(|o| o.rate_ap2),
                rate_e: pick(|o| o.rate_e),
                iterations_mean: ok.iter().map(|o| o.iterations as f64).sum::<f64>() / n,
                linear_solves_mean: ok.iter().map(|o| o.linear_solves as f64).sum::<f64>() / n,
            });
        }
    }
    rows
}

const CSV_FIELDS: [&str; 11] = [
    "method",
    "n_ok",
    "n_excluded",
    "rate_ap1_mean",
    "rate_ap1_stderr",
    "rate_ap2_mean",
    "rate_ap2_stderr",
    "rate_e_mean",
    "rate_e_stderr",
    "iterations_mean",
    "linear_solves_mean",
];

/// Builds a CSV document from a header and string rows. Floats are written
/// with Rust's shortest round-trip formatting, which is deterministic.
fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing into a Vec cannot fail
    w.write_record(header).expect("in-memory CSV");
    for r in rows {
        w.write_record(&r).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}

/// Summary CSV; the first column is named after the sweep axis.
pub fn results_csv(axis: SweepAxis, rows: &[SummaryRow]) -> String {
    let mut header = vec![axis.column()];
    header.extend(CSV_FIELDS);
    csv_text(
        &header,
        rows.iter().map(|r| {
            vec![
                r.value.to_string(),
                r.method.label().to_string(),
                r.n_ok.to_string(),
                r.n_excluded.to_string(),
                r.rate_ap1.mean.to_string(),
                r.rate_ap1.stderr.to_string(),
                r.rate_ap2.mean.to_string(),
                r.rate_ap2.stderr.to_string(),
                r.rate_e.mean.to_string(),
                r.rate_e.stderr.to_string(),
                r.iterations_mean.to_string(),
                r.linear_solves_mean.to_string(),
            ]
        }),
    )
}

/// Parses [`results_csv`] output.
pub fn parse_results_csv(text: &str) -> Result<(SweepAxis, Vec<SummaryRow>)> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::Format(format!("CSV header: {e}")))?.clone();
    let first = header.get(0).ok_or_else(|| Error::Format("empty CSV header".into()))?;
    let axis = SweepAxis::from_column(first).ok_or_else(|| Error::Format(format!("unknown axis column '{first}'")))?;
    if header.iter().skip(1).ne(CSV_FIELDS) {
        return Err(Error::Format("unexpected CSV header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|_| Error::Format(format!("row {}: bad number '{}'", i + 1, &rec[j])))
        };
        let int = |j: usize| -> Result<usize> {
            rec[j].parse::<usize>().map_err(|_| Error::Format(format!("row {}: bad count '{}'", i + 1, &rec[j])))
        };
        rows.push(SummaryRow {
            value: num(0)?,
            method: rec[1]
                .parse()
                .map_err(|_| Error::Format(format!("row {}: unknown method '{}'", i + 1, &rec[1])))?,
            n_ok: int(2)?,
            n_excluded: int(3)?,
            rate_ap1: Stat { mean: num(4)?, stderr: num(5)? },
            rate_ap2: Stat { mean: num(6)?, stderr: num(7)? },
            rate_e: Stat { mean: num(8)?, stderr: num(9)? },
            iterations_mean: num(10)?,
            linear_solves_mean: num(11)?,
        });
    }
    Ok((axis, rows))
}

fn ok_outcomes(result: &ExperimentResult) -> impl Iterator<Item = (usize, usize, usize, &MethodOutcome)> {
    result.outcomes.iter().enumerate().flat_map(|(p, drops)| {
        drops.iter().enumerate().flat_map(move |(d, per_method)| {
            per_method.iter().enumerate().filter_map(move |(mi, o)| match o {
                DropOutcome::Ok(o) => Some((p, d, mi, o)),
                DropOutcome::Excluded(_) => None,
            })
        })
    })
}

/// Per-iteration records of the iterative methods.
pub fn traces_csv(result: &ExperimentResult) -> String {
    let rows = ok_outcomes(result).flat_map(|(p, d, mi, o)| {
        o.records.iter().map(move |r| {
            vec![
                result.values[p].to_string(),
                d.to_string(),
                result.methods[mi].label().to_string(),
                r.iteration.to_string(),
                r.objective.to_string(),
                r.rate_ap1.to_string(),
                r.rate_ap2.to_string(),
            ]
        })
    });
    csv_text(
        &[result.axis.column(), "drop", "method", "iteration", "objective", "rate_ap1", "rate_ap2"],
        rows.collect::<Vec<_>>(),
    )
}

/// Wall-clock summary; informative only, never compared across runs.
pub fn timing_csv(result: &ExperimentResult) -> String {
    let mut rows = Vec::new();
    for (p, &value) in result.values.iter().enumerate() {
        for (mi, m) in result.methods.iter().enumerate() {
            let t: Vec<f64> = ok_outcomes(result)
                .filter(|(pp, _, mm, _)| *pp == p && *mm == mi)
                .map(|(_, _, _, o)| o.elapsed_secs)
                .collect();
            let total: f64 = t.iter().sum();
            rows.push(vec![
                value.to_string(),
                m.label().to_string(),
                format!("{:.6}", total / t.len().max(1) as f64),
                format!("{total:.6}"),
            ]);
        }
    }
    csv_text(&[result.axis.column(), "method", "mean_elapsed_s", "total_elapsed_s"], rows)
}

fn excluded_log(result: &ExperimentResult) -> String {
    let mut out = String::new();
    for (p, drops) in result.outcomes.iter().enumerate() {
        for (d, per_method) in drops.iter().enumerate() {
            for (mi, o) in per_method.iter().enumerate() {
                if let DropOutcome::Excluded(why) = o {
                    let _ = writeln!(
                        out,
                        "{}={} drop {d} {}: {why}",
                        result.axis.column(),
                        result.values[p],
                        result.methods[mi].label()
                    );
                }
            }
        }
    }
    out
}

/// Iteration and linear-solve counts of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub method: Method,
    pub runs: usize,
    pub iterations_mean: f64,
    pub iterations_max: usize,
    pub linear_solves_mean: f64,
    pub linear_solves_max: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexitySummary {
    pub rows: Vec<ComplexityRow>,
    /// Largest joint-solver iteration count seen, checked against `I_max`.
    pub within_iteration_cap: bool,
}

/// Summarizes `(method, iterations, linear solves)` triples per method.
pub fn report_complexity(runs: &[(Method, usize, usize)], i_max: usize) -> ComplexitySummary {
    let mut by: BTreeMap<Method, Vec<(usize, usize)>> = BTreeMap::new();
    for &(m, it, ls) in runs {
        by.entry(m).or_default().push((it, ls));
    }
    let rows: Vec<ComplexityRow> = by
        .into_iter()
        .map(|(method, v)| {
            let n = v.len() as f64;
            ComplexityRow {
                method,
                runs: v.len(),
                iterations_mean: v.iter().map(|x| x.0 as f64).sum::<f64>() / n,
                iterations_max: v.iter().map(|x| x.0).max().unwrap_or(0),
                linear_solves_mean: v.iter().map(|x| x.1 as f64).sum::<f64>() / n,
                linear_solves_max: v.iter().map(|x| x.1).max().unwrap_or(0),
            }
        })
        .collect();
    let within = rows
        .iter()
        .filter(|r| matches!(r.method, Method::MsJoCdwm | Method::MsJoWm))
        .all(|r| r.iterations_max <= i_max);
    ComplexitySummary { rows, within_iteration_cap: within }
}

pub fn complexity_of(result: &ExperimentResult, i_max: usize) -> ComplexitySummary {
    let runs: Vec<_> = ok_outcomes(result)
        .map(|(_, _, mi, o)| (result.methods[mi], o.iterations, o.linear_solves))
        .collect();
    report_complexity(&runs, i_max)
}

pub fn complexity_csv(summary: &ComplexitySummary) -> String {
    csv_text(
        &["method", "runs", "iterations_mean", "iterations_max", "linear_solves_mean", "linear_solves_max"],
        summary.rows.iter().map(|r| {
            vec![
                r.method.label().to_string(),
                r.runs.to_string(),
                r.iterations_mean.to_string(),
                r.iterations_max.to_string(),
                r.linear_solves_mean.to_string(),
                r.linear_solves_max.to_string(),
            ]
        }),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `results.csv`, `traces.csv`, `complexity.csv`, `timing.csv` and
/// `excluded.log` into `dir`.
pub fn write_outputs(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(vec![
        write(dir, "results.csv", &results_csv(result.axis, &result.rows))?,
        write(dir, "traces.csv", &traces_csv(result))?,
        write(dir, "complexity.csv", &complexity_csv(&complexity_of(result, cfg.solver.i_max)))?,
        write(dir, "timing.csv", &timing_csv(result))?,
        write(dir, "excluded.log", &excluded_log(result))?,
    ])
}

/// Whitespace-delimited tables, one per rate metric: the sweep value then
/// one column per method in canonical order.
pub fn plot_tables(axis: SweepAxis, rows: &[SummaryRow]) -> Vec<(String, String)> {
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| rows.iter().any(|r| r.method == *m)).collect();
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    let metrics: [(&str, fn(&SummaryRow) -> f64); 3] = [
        ("rate_e", |r| r.rate_e.mean),
        ("rate_ap1", |r| r.rate_ap1.mean),
        ("rate_ap2", |r| r.rate_ap2.mean),
    ];
    metrics
        .iter()
        .map(|(name, get)| {
            let mut text = axis.column().to_string();
            for m in &methods {
                text.push(' ');
                text.push_str(m.label());
            }
            text.push('\n');
            for &v in &values {
                text.push_str(&v.to_string());
                for m in &methods {
                    let cell = rows.iter().find(|r| r.value == v && r.method == *m).map(get).unwrap_or(f64::NAN);
                    let _ = write!(text, " {cell}");
                }
                text.push('\n');
            }
            (format!("{name}_vs_{}.dat", axis.column()), text)
        })
        .collect()
}

/// Reads `results.csv` and writes the per-figure tables into `out`.
pub fn emit_plot_data(csv_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let (axis, rows) = parse_results_csv(&text)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    plot_tables(axis, &rows)
        .into_iter()
        .map(|(name, body)| write(out, &name, &body))
        .collect()
}

/// Parses a table written by [`plot_tables`]: header names and numeric rows.
pub fn parse_plot_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format("empty table".into()))?
        .split_whitespace()
        .map(String::from)
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{x}'"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

//! Experiment execution and artifact writing.

use std::path::{Path, PathBuf};

use emmf::data::{inject_block_noise, inject_outlier_vectors};
use emmf::eval::{acc, nmi, MetricSummary};
use emmf::graph::knn_graph;
use emmf::losses::{bound_curve, influence_curve, InfluenceReport};
use emmf::solvers::{fit, Method, SolverConfig};
use emmf::DataMatrix;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SweepParameter};
use crate::error::{CliError, Result};

/// σ values used by `influence` when the config has no sigma sweep.
pub const DEFAULT_SIGMAS: [f64; 5] = [1.0, 10.0, 100.0, 1e3, 1e4];

/// Outcome of one (sweep point, repetition) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub point: Option<usize>,
    pub value: Option<f64>,
    pub repetition: usize,
    pub seed: u64,
    pub acc: f64,
    pub nmi: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub drift: Vec<f64>,
    pub sample_errors: Vec<f64>,
}

impl RunRecord {
    pub fn run_id(&self) -> String {
        match self.point {
            None => self.repetition.to_string(),
            Some(p) => format!("{p}_{}", self.repetition),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub value: Option<f64>,
    pub metrics: MetricSummary,
    pub iterations_mean: f64,
    pub objective_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<PointSummary>,
    pub files: Vec<PathBuf>,
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))
}

/// Metrics over the samples where `mask` is true; NaN without labels.
fn score(x: &DataMatrix, pred: &[usize], mask: &[bool]) -> Result<(f64, f64)> {
    let Some(truth) = x.labels() else {
        return Ok((f64::NAN, f64::NAN));
    };
    let keep: Vec<usize> = (0..pred.len()).filter(|&i| mask[i]).collect();
    let p: Vec<usize> = keep.iter().map(|&i| pred[i]).collect();
    let t: Vec<usize> = keep.iter().map(|&i| truth[i]).collect();
    Ok((acc(&p, &t)?, nmi(&p, &t)?))
}

fn run_one(
    base: &DataMatrix,
    cfg: &ExperimentConfig,
    point: Option<(usize, f64)>,
    repetition: usize,
    seed: u64,
) -> Result<RunRecord> {
    let mut solver: SolverConfig = cfg.solver.clone();
    solver.seed = seed;
    let n = base.n_samples();
    let (x, mask) = match (cfg.sweep.as_ref().map(|s| s.parameter), point) {
        (Some(SweepParameter::OutlierCount), Some((_, v))) => inject_outlier_vectors(base, v as usize, seed)?,
        (Some(SweepParameter::BlockSize), Some((_, v))) => {
            let k = v as usize;
            let (x, _) = inject_block_noise(base, k * k, cfg.block_samples_per_class, seed)?;
            (x, vec![true; n])
        }
        (Some(SweepParameter::Lambda), Some((_, v))) => {
            solver.lambda = v;
            (base.clone(), vec![true; n])
        }
        _ => (base.clone(), vec![true; n]),
    };
    let graph = match solver.method {
        Method::Gemmf => Some(knn_graph(&x, cfg.graph_k)?),
        _ => None,
    };
    let res = fit(&x, &solver, graph.as_ref())?;
    let (a, m) = score(&x, &res.assignments, &mask)?;
    let errors = res.sample_errors(&x)?;
    Ok(RunRecord {
        point: point.map(|p| p.0),
        value: point.map(|p| p.1),
        repetition,
        seed,
        acc: a,
        nmi: m,
        iterations: res.trace.iterations,
        converged: res.trace.converged,
        objective: res.trace.final_objective().unwrap_or(f64::NAN),
        trace: res.trace.objective,
        drift: res.trace.orthogonality_drift,
        sample_errors: errors.to_vec(),
    })
}

/// Runs every (sweep point, repetition) pair, in parallel when `threads`
/// allows, then writes all artifacts into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.sweep.as_ref().is_some_and(|s| s.parameter == SweepParameter::Sigma) {
        return Err(CliError::Input("sigma sweeps belong to the influence command".into()));
    }
    let base = cfg.dataset.load(None)?;
    let points: Vec<Option<(usize, f64)>> = match &cfg.sweep {
        None => vec![None],
        Some(s) => s.values.iter().copied().enumerate().map(Some).collect(),
    };
    let seeds = cfg.derived_seeds();
    let jobs: Vec<(Option<(usize, f64)>, usize, u64)> = points
        .iter()
        .flat_map(|&p| seeds.iter().enumerate().map(move |(r, &s)| (p, r, s)))
        .collect();

    let pool = build_pool(threads)?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, r, s)| run_one(&base, cfg, p, r, s))
            .collect::<Result<Vec<_>>>()
    })?;

    let summaries = points
        .iter()
        .map(|p| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.point == p.map(|q| q.0)).collect();
            let k = group.len() as f64;
            Ok(PointSummary {
                value: p.map(|q| q.1),
                metrics: MetricSummary::from_runs(group.iter().map(|r| (r.acc, r.nmi)).collect())?,
                iterations_mean: group.iter().map(|r| r.iterations as f64).sum::<f64>() / k,
                objective_mean: group.iter().map(|r| r.objective).sum::<f64>() / k,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let parameter = cfg.sweep.as_ref().map_or("", |s| s.parameter.as_str());
    let mut files = vec![
        ("metrics.csv".to_string(), metrics_csv(parameter, &runs)?),
        ("summary.csv".to_string(), summary_csv(parameter, &summaries)?),
    ];
    let with_drift = cfg.solver.method == Method::Gemmf;
    for r in &runs {
        files.push((format!("trace_{}.csv", r.run_id()), trace_csv(r, with_drift)?));
        files.push((format!("errors_{}.csv", r.run_id()), errors_csv(r)?));
    }
    files.push(("manifest.json".to_string(), cfg.manifest()?.into_bytes()));
    let files = write_outputs(out, files)?;
    Ok(ExperimentReport { runs, summaries, files })
}

/// Influence ratios of one perturbed entry across a σ sweep.
///
/// Factors come from a single fit of `cfg.solver` on the clean data and stay
/// fixed while σ varies.
pub fn run_influence(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(f64, InfluenceReport)>> {
    cfg.validate()?;
    let sigmas: Vec<f64> = match &cfg.sweep {
        None => DEFAULT_SIGMAS.to_vec(),
        Some(s) if s.parameter == SweepParameter::Sigma => s.values.clone(),
        Some(s) => {
            return Err(CliError::Input(format!(
                "influence needs a sigma sweep, got {}",
                s.parameter.as_str()
            )))
        }
    };
    let x = cfg.dataset.load(None)?;
    if cfg.influence.sample >= x.n_samples() {
        return Err(CliError::Input(format!(
            "influence sample {} out of range for {} samples",
            cfg.influence.sample,
            x.n_samples()
        )));
    }
    let graph = match cfg.solver.method {
        Method::Gemmf => Some(knn_graph(&x, cfg.graph_k)?),
        _ => None,
    };
    let res = fit(&x, &cfg.solver, graph.as_ref())?;
    let curve = influence_curve(&x, &res.factors, cfg.influence.feature, cfg.influence.sample, &sigmas)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sigma", "phi_nmf", "phi_l21", "phi_emmf"])?;
    for (s, r) in &curve {
        w.write_record([s.to_string(), r.phi_nmf.to_string(), r.phi_l21.to_string(), r.phi_emmf.to_string()])?;
    }
    write_outputs(
        out,
        vec![
            ("phi_curves.csv".into(), finish(w)?),
            ("manifest.json".into(), cfg.manifest()?.into_bytes()),
        ],
    )?;
    Ok(curve)
}

/// Writes `bound.csv` for `n = 3..=n_max`.
pub fn run_bound_curve(n_max: usize, p_step: f64, out: &Path) -> Result<Vec<(usize, f64, f64)>> {
    if n_max < 3 {
        return Err(CliError::Input(format!("n_max must be at least 3, got {n_max}")));
    }
    let rows = bound_curve(3..=n_max, p_step)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "upper_bound", "argmax_p"])?;
    for (n, b, p) in &rows {
        w.write_record([n.to_string(), b.to_string(), p.to_string()])?;
    }
    write_outputs(out, vec![("bound.csv".into(), finish(w)?)])?;
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn metrics_csv(parameter: &str, runs: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "parameter", "value", "repetition", "seed", "acc", "nmi", "iterations", "converged", "objective",
    ])?;
    for r in runs {
        w.write_record([
            parameter.to_string(),
            opt(r.value),
            r.repetition.to_string(),
            r.seed.to_string(),
            r.acc.to_string(),
            r.nmi.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.objective.to_string(),
        ])?;
    }
    finish(w)
}

fn summary_csv(parameter: &str, summaries: &[PointSummary]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "parameter",
        "value",
        "repetitions",
        "acc_mean",
        "acc_std",
        "nmi_mean",
        "nmi_std",
        "iterations_mean",
        "objective_mean",
    ])?;
    for s in summaries {
        let m = &s.metrics;
        w.write_record([
            parameter.to_string(),
            opt(s.value),
            m.per_run.len().to_string(),
            m.acc_mean.to_string(),
            m.acc_std.to_string(),
            m.nmi_mean.to_string(),
            m.nmi_std.to_string(),
            s.iterations_mean.to_string(),
            s.objective_mean.to_string(),
        ])?;
    }
    finish(w)
}

fn trace_csv(r: &RunRecord, with_drift: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if with_drift {
        w.write_record(["iteration", "objective", "orthogonality_drift"])?;
    } else {
        w.write_record(["iteration", "objective"])?;
    }
    for (t, obj) in r.trace.iter().enumerate() {
        if with_drift {
            w.write_record([t.to_string(), obj.to_string(), opt(r.drift.get(t).copied())])?;
        } else {
            w.write_record([t.to_string(), obj.to_string()])?;
        }
    }
    finish(w)
}

fn errors_csv(r: &RunRecord) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample", "error"])?;
    for (i, e) in r.sample_errors.iter().enumerate() {
        w.write_record([i.to_string(), e.to_string()])?;
    }
    finish(w)
}

/// Writes every file or none: anything already written is removed on error.
fn write_outputs(out: &Path, files: Vec<(String, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out.join(name);
        if let Err(e) = std::fs::write(&path, bytes) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(written)
}

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use cmiknn_core::datagen::{apply_componentwise, sample_gaussian_chain, true_cmi_xy_given_z};
use cmiknn_core::dinfo::{build_digraph, ingest_csv, DiConfig, DiGraph, IngestReport};
use cmiknn_core::estimator::{plan_isolated, plan_midiff, run_algorithm1, run_midiff, Method, Timings};
use cmiknn_core::report::write_trials_csv;
use cmiknn_core::rng::derive_seed;
use cmiknn_core::stats::{mann_whitney_u, MannWhitney};
use cmiknn_core::theory::{diagnostic_table, write_diagnostics_csv, BoundParams};
use cmiknn_core::{Dataset, EstimateReport, EstimatorConfig, GaussianChainConfig, Role};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EstimatorChoice, Preset, RunConfig};
use crate::output::{content_hash, Staged};

/// Seed-derivation tags for the CLI layer.
mod seed_tag {
    pub const DATA: u64 = 100;
    pub const JOB: u64 = 101;
    pub const CELL: u64 = 102;
}

/// Accuracy level at which the bound diagnostics are tabulated.
const DIAGNOSTIC_EPS: f64 = 0.1;

/// What a command hands back to `main`.
pub struct Outcome {
    pub staged: Staged,
    pub summary: String,
    /// Set when part of the work failed but the remaining outputs are still
    /// worth writing (bench cells).
    pub partial_failure: Option<String>,
}

#[derive(Serialize)]
struct Header<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    input_hash: String,
    config: &'a RunConfig,
}

fn header<'a>(command: &'static str, config: &'a RunConfig, input_hash: String) -> Header<'a> {
    Header {
        tool: "cmiknn",
        version: env!("CARGO_PKG_VERSION"),
        command,
        input_hash,
        config,
    }
}

fn config_hash(config: &RunConfig) -> Result<String> {
    Ok(content_hash([serde_json::to_vec(config)?.as_slice()]))
}

#[derive(Serialize)]
struct JobResult {
    name: String,
    truth: Option<f64>,
    dims: (usize, usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    isolated_knn: Option<EstimateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    midiff: Option<EstimateReport>,
}

#[derive(Serialize)]
struct RunArtifact<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    runs: Vec<JobResult>,
}

/// One dataset to estimate on.
struct Job {
    name: String,
    truth: Option<f64>,
    dataset: Dataset,
}

/// Confirms every requested estimator can run on `n` samples.
fn check_plans(config: &RunConfig, est: &EstimatorConfig, n: usize) -> Result<()> {
    if config.wants_isolated() {
        plan_isolated(n, est).context("isolated k-NN schedule")?;
    }
    if config.wants_midiff() {
        plan_midiff(n, est).context("MI-Diff schedule")?;
    }
    Ok(())
}

fn estimate_jobs(config: &RunConfig, est: &EstimatorConfig, jobs: Vec<Job>, stage: &mut Staged) -> Result<(Vec<JobResult>, Vec<(String, Timings)>)> {
    let mut results = Vec::new();
    let mut timings = Vec::new();
    for (i, job) in jobs.into_iter().enumerate() {
        let seed = derive_seed(config.seed, &[seed_tag::JOB, i as u64]);
        let isolated = if config.wants_isolated() {
            let r = run_algorithm1(&job.dataset, est, seed).with_context(|| format!("run `{}`", job.name))?;
            timings.push((format!("{}/isolated_knn", job.name), r.timings));
            Some(r)
        } else {
            None
        };
        let midiff = if config.wants_midiff() {
            let r = run_midiff(&job.dataset, est, seed).with_context(|| format!("MI-Diff run `{}`", job.name))?;
            timings.push((format!("{}/midiff", job.name), r.timings));
            Some(r)
        } else {
            None
        };
        for (tag, rep) in [("isolated_knn", &isolated), ("midiff", &midiff)] {
            if let Some(r) = rep {
                let mut buf = Vec::new();
                write_trials_csv(r, &mut buf)?;
                stage.add(format!("{}_{tag}_trials.csv", job.name), buf);
                if config.diagnostics && tag == "isolated_knn" {
                    let params = BoundParams::from_schedule(&r.schedule, r.tau, r.dims.2.max(1));
                    let rows = diagnostic_table(&params, DIAGNOSTIC_EPS)?;
                    let mut buf = Vec::new();
                    write_diagnostics_csv(&rows, &mut buf)?;
                    stage.add(format!("{}_diagnostics.csv", job.name), buf);
                }
            }
        }
        results.push(JobResult {
            name: job.name,
            truth: job.truth,
            dims: job.dataset.dims(),
            isolated_knn: isolated,
            midiff,
        });
    }
    Ok((results, timings))
}

fn timings_json(timings: &[(String, Timings)]) -> serde_json::Value {
    serde_json::Value::Object(
        timings
            .iter()
            .map(|(k, t)| (k.clone(), serde_json::to_value(t).expect("plain struct")))
            .collect(),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn summary_table(config: &RunConfig, results: &[JobResult]) -> String {
    let mut cols: Vec<&str> = Vec::new();
    for e in &config.estimators {
        cols.push(match e {
            EstimatorChoice::Dv => "dv",
            EstimatorChoice::Nwj => "nwj",
            EstimatorChoice::Ldr => "ldr",
            EstimatorChoice::Midiff => "midiff_dv",
        });
    }
    let mut out = format!("{:<14}{:>10}", "run", "truth");
    for c in &cols {
        let _ = write!(out, "{c:>12}");
    }
    out.push('\n');
    for r in results {
        let _ = write!(out, "{:<14}{:>10}", r.name, fmt_opt(r.truth));
        for c in &cols {
            let v = match (*c, &r.isolated_knn, &r.midiff) {
                ("midiff_dv", _, Some(m)) => Some(m.average.dv),
                ("dv", Some(i), _) => Some(i.average.dv),
                ("nwj", Some(i), _) => Some(i.average.nwj),
                ("ldr", Some(i), _) => Some(i.average.ldr),
                _ => None,
            };
            let _ = write!(out, "{:>12}", fmt_opt(v));
        }
        out.push('\n');
    }
    out
}

fn finish_estimation(command: &'static str, config: &RunConfig, input_hash: String, jobs: Vec<Job>) -> Result<Outcome> {
    let est = config.estimator_config();
    let mut staged = Staged::default();
    let (runs, timings) = estimate_jobs(config, &est, jobs, &mut staged)?;
    let summary = summary_table(config, &runs);
    staged.add_json(
        "report.json",
        &RunArtifact {
            header: header(command, config, input_hash),
            runs,
        },
    )?;
    staged.add_json("timings.json", &timings_json(&timings))?;
    Ok(Outcome {
        staged,
        summary,
        partial_failure: None,
    })
}

fn synthetic_truth(chain: &GaussianChainConfig) -> Option<f64> {
    true_cmi_xy_given_z(chain).ok()
}

/// `synth`: generate data for the preset, estimate, report against truth.
pub fn synth(config: &RunConfig) -> Result<Outcome> {
    config.validate_common()?;
    let chain = config.chain()?;
    let map = config.map()?;
    let est = config.estimator_config();
    let n = config.data.n;
    check_plans(config, &est, n)?;
    if config.data.preset == Preset::Dpi {
        ensure!(
            config.data.split_d1 >= 1 && config.data.split_d1 < chain.d,
            "split_d1 must lie in 1..{}",
            chain.d
        );
    }

    let data = sample_gaussian_chain(&chain, n, derive_seed(config.seed, &[seed_tag::DATA]))?;
    let data = apply_componentwise(&data, Role::X, map);
    let jobs = match config.data.preset {
        Preset::Zero => vec![Job {
            name: "xz_given_y".into(),
            truth: Some(0.0),
            dataset: data.permute_roles(Role::X, Role::Z, Role::Y),
        }],
        Preset::Dpi => {
            let d1 = config.data.split_d1;
            let (first, second) = data.split_y(d1)?;
            let part = |d| GaussianChainConfig { d, ..chain };
            let split_truth = |d| if chain.rho == 0.0 { synthetic_truth(&part(d)) } else { None };
            vec![
                Job {
                    name: "full".into(),
                    truth: synthetic_truth(&chain),
                    dataset: data,
                },
                Job {
                    name: "y1".into(),
                    truth: split_truth(d1),
                    dataset: first,
                },
                Job {
                    name: "y2_given_y1".into(),
                    truth: split_truth(chain.d - d1),
                    dataset: second,
                },
            ]
        }
        _ => vec![Job {
            name: "xy_given_z".into(),
            truth: synthetic_truth(&chain),
            dataset: data,
        }],
    };
    finish_estimation("synth", config, config_hash(config)?, jobs)
}

/// `estimate`: run on a user CSV dataset.
pub fn estimate(config: &RunConfig) -> Result<Outcome> {
    config.validate_common()?;
    let Some(input) = config.estimate.input.as_deref() else {
        bail!("estimate needs an input CSV (--input or [estimate] input)");
    };
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let dims = config.estimate.dims.map(|[a, b, c]| (a, b, c));
    let dataset = Dataset::read_csv(bytes.as_slice(), input, dims)?;
    check_plans(config, &config.estimator_config(), dataset.len())?;
    let jobs = vec![Job {
        name: "input".into(),
        truth: None,
        dataset,
    }];
    finish_estimation("estimate", config, content_hash([bytes.as_slice()]), jobs)
}

#[derive(Serialize)]
struct DigraphArtifact<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    ingest: IngestReport,
    graph: DiGraph,
}

/// `digraph`: directed-information graph over three series of a CSV file.
pub fn digraph(config: &RunConfig) -> Result<Outcome> {
    config.validate_common()?;
    let dg = &config.digraph;
    let Some(input) = dg.input.as_deref() else {
        bail!("digraph needs an input CSV (--input or [digraph] input)");
    };
    ensure!(dg.nodes.len() == 3, "digraph needs exactly three node names, got {}", dg.nodes.len());
    ensure!(dg.lag >= 1, "lag must be at least 1");
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let (table, ingest) = ingest_csv(input, &dg.nodes, dg.drop_policy)?;
    ensure!(table.len() >= dg.lag, "series of length {} is shorter than the lag {}", table.len(), dg.lag);
    let est = config.estimator_config();
    plan_isolated(table.len() - dg.lag + 1, &est).context("isolated k-NN schedule on the embedded series")?;

    let di = DiConfig {
        l: dg.lag,
        estimator: dg.estimator,
        standardize: dg.standardize,
        estimation: est,
    };
    let nodes: Vec<&str> = dg.nodes.iter().map(String::as_str).collect();
    let graph = build_digraph(&table, &nodes, &di, config.seed)?;

    let mut summary = format!("{:<12}", "from\\to");
    for n in &graph.nodes {
        let _ = write!(summary, "{n:>12}");
    }
    summary.push('\n');
    for (n, row) in graph.nodes.iter().zip(&graph.weights) {
        let _ = write!(summary, "{n:<12}");
        for v in row {
            let _ = write!(summary, "{v:>12.4}");
        }
        summary.push('\n');
    }
    let _ = writeln!(summary, "rows read {}, dropped {}", ingest.rows_read, ingest.rows_dropped);

    let mut staged = Staged::default();
    let mut csv_buf = Vec::new();
    graph.write_csv(&mut csv_buf)?;
    staged.add("digraph.csv", csv_buf);
    staged.add_json(
        "digraph.json",
        &DigraphArtifact {
            header: header("digraph", config, content_hash([bytes.as_slice()])),
            ingest,
            graph,
        },
    )?;
    Ok(Outcome {
        staged,
        summary,
        partial_failure: None,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct CellSpec {
    n: usize,
    k: usize,
    d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_over_n: Option<f64>,
}

#[derive(Serialize)]
struct MethodResult {
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<EstimateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct CellResult {
    cell: usize,
    #[serde(flatten)]
    spec: CellSpec,
    truth: Option<f64>,
    methods: Vec<MethodResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mann_whitney: Option<MannWhitney>,
}

#[derive(Serialize)]
struct BenchArtifact<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    cells: Vec<CellResult>,
}

fn bench_cells(config: &RunConfig) -> Result<Vec<CellSpec>> {
    let b = &config.bench;
    ensure!(!b.n.is_empty() && !b.d.is_empty(), "bench grid needs at least one n and one d");
    let mut cells = Vec::new();
    for &d in &b.d {
        for &n in &b.n {
            if b.k_over_n.is_empty() {
                ensure!(!b.k.is_empty(), "bench grid needs at least one k");
                for &k in &b.k {
                    cells.push(CellSpec { n, k, d, k_over_n: None });
                }
            } else {
                for &r in &b.k_over_n {
                    ensure!(r > 0.0 && r < 1.0, "k_over_n ratios must lie in (0, 1), got {r}");
                    let k = ((r * n as f64).round() as usize).max(1);
                    cells.push(CellSpec { n, k, d, k_over_n: Some(r) });
                }
            }
        }
    }
    Ok(cells)
}

fn run_cell(config: &RunConfig, base: &GaussianChainConfig, index: usize, spec: CellSpec) -> Result<CellResult> {
    let chain = GaussianChainConfig::new(base.sigma_x, base.sigma_y, base.sigma_z, spec.d, base.rho)?;
    let mut est = config.estimator_config();
    est.schedule = match est.schedule {
        cmiknn_core::ScheduleMode::FixedK { .. } => cmiknn_core::ScheduleMode::FixedK { k: spec.k },
        theory => theory,
    };
    let seed = derive_seed(config.seed, &[seed_tag::CELL, index as u64]);
    let data = sample_gaussian_chain(&chain, spec.n, derive_seed(seed, &[seed_tag::DATA]))?;
    let data = apply_componentwise(&data, Role::X, config.map()?);
    let methods: Vec<MethodResult> = config
        .bench
        .methods
        .iter()
        .map(|&method| {
            let r = match method {
                Method::IsolatedKnn => run_algorithm1(&data, &est, seed),
                Method::Midiff => run_midiff(&data, &est, seed),
            };
            match r {
                Ok(report) => MethodResult {
                    method,
                    report: Some(report),
                    error: None,
                },
                Err(e) => MethodResult {
                    method,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mann_whitney = if config.bench.mwu {
        match (&methods[0].report, &methods[1].report) {
            (Some(a), Some(b)) => {
                let kind = config.bench.mwu_estimator;
                let va: Vec<f64> = a.per_trial.iter().map(|t| t.estimates.get(kind)).collect();
                let vb: Vec<f64> = b.per_trial.iter().map(|t| t.estimates.get(kind)).collect();
                Some(mann_whitney_u(&va, &vb)?)
            }
            _ => None,
        }
    } else {
        None
    };
    Ok(CellResult {
        cell: index,
        spec,
        truth: true_cmi_xy_given_z(&chain).ok(),
        methods,
        mann_whitney,
    })
}

/// `bench`: sweep a grid of `(n, k, d)` cells; failed cells are recorded and
/// the sweep continues.
pub fn bench(config: &RunConfig) -> Result<Outcome> {
    config.validate_common()?;
    ensure!(!config.bench.methods.is_empty(), "bench needs at least one method");
    if config.bench.mwu {
        ensure!(config.bench.methods.len() >= 2, "the Mann-Whitney comparison needs two methods");
    }
    let base = config.chain()?;
    config.map()?;
    let cells = bench_cells(config)?;

    let results: Vec<CellResult> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &spec)| {
            run_cell(config, &base, i, spec).unwrap_or_else(|e| CellResult {
                cell: i,
                spec,
                truth: None,
                methods: vec![MethodResult {
                    method: config.bench.methods[0],
                    report: None,
                    error: Some(e.to_string()),
                }],
                mann_whitney: None,
            })
        })
        .collect();

    let mut long = csv::Writer::from_writer(Vec::new());
    long.write_record(["cell", "method", "n", "k", "d", "k_over_n", "trial", "estimator", "value", "truth"])?;
    let mut mwu = csv::Writer::from_writer(Vec::new());
    mwu.write_record(["cell", "n", "k", "d", "estimator", "u1", "u2", "p_value", "p_method"])?;
    let mut failures = Vec::new();
    let mut summary = format!("{:<6}{:>9}{:>7}{:>4}  {:<14}{:>10}{:>10}\n", "cell", "n", "k", "d", "method", "truth", "dv");
    for c in &results {
        let ratio = c.spec.k_over_n.map(|r| r.to_string()).unwrap_or_default();
        let truth = c.truth.map(|t| t.to_string()).unwrap_or_default();
        for m in &c.methods {
            let method = serde_json::to_value(m.method)?.as_str().unwrap_or_default().to_string();
            match (&m.report, &m.error) {
                (Some(r), _) => {
                    for t in &r.per_trial {
                        for (name, v) in [("dv", t.estimates.dv), ("nwj", t.estimates.nwj), ("ldr", t.estimates.ldr)] {
                            long.write_record([
                                c.cell.to_string(),
                                method.clone(),
                                c.spec.n.to_string(),
                                c.spec.k.to_string(),
                                c.spec.d.to_string(),
                                ratio.clone(),
                                t.trial.to_string(),
                                name.to_string(),
                                v.to_string(),
                                truth.clone(),
                            ])?;
                        }
                    }
                    let _ = writeln!(
                        summary,
                        "{:<6}{:>9}{:>7}{:>4}  {:<14}{:>10}{:>10.4}",
                        c.cell,
                        c.spec.n,
                        c.spec.k,
                        c.spec.d,
                        method,
                        fmt_opt(c.truth),
                        r.average.dv
                    );
                }
                (None, err) => {
                    let msg = err.clone().unwrap_or_default();
                    let _ = writeln!(summary, "{:<6}{:>9}{:>7}{:>4}  {:<14}  failed: {msg}", c.cell, c.spec.n, c.spec.k, c.spec.d, method);
                    failures.push(format!("cell {} ({method}): {msg}", c.cell));
                }
            }
        }
        if let Some(u) = &c.mann_whitney {
            mwu.write_record([
                c.cell.to_string(),
                c.spec.n.to_string(),
                c.spec.k.to_string(),
                c.spec.d.to_string(),
                config.bench.mwu_estimator.to_string(),
                u.u1.to_string(),
                u.u2.to_string(),
                u.p_value.to_string(),
                serde_json::to_value(u.method)?.as_str().unwrap_or_default().to_string(),
            ])?;
        }
    }

    let mut staged = Staged::default();
    staged.add("bench_long.csv", long.into_inner().map_err(|e| e.into_error())?);
    if config.bench.mwu {
        staged.add("mann_whitney.csv", mwu.into_inner().map_err(|e| e.into_error())?);
    }
    staged.add_json(
        "bench.json",
        &BenchArtifact {
            header: header("bench", config, config_hash(config)?),
            cells: results,
        },
    )?;
    Ok(Outcome {
        staged,
        summary,
        partial_failure: (!failures.is_empty()).then(|| failures.join("\n")),
    })
}

/// Reads the config file if given, else defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_toml_file(p),
        None => Ok(RunConfig::default()),
    }
}

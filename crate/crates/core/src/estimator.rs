//! Density-ratio models and the DV, NWJ, and LDR estimators of `I(X;Y|Z)`.
//!
//! With a ratio estimate `G(x, y, z)` of `p(x, y, z) / (p(x|z) p(y, z))`, a
//! joint test batch `J` (size `b`) and a product test batch `P` (size `b'`):
//!
//! ```text
//! LDR = mean_J ln G
//! DV  = mean_J ln G - ln mean_P G
//! NWJ = 1 + mean_J ln G - mean_P G
//! ```
//!
//! NWJ never exceeds DV because `1 + ln t <= t`.
//!
//! [`run_algorithm1`] splits the data, then for each of `T` trials trains a
//! classifier on fresh train batches and evaluates the three estimators on
//! fresh test batches; [`run_midiff`] is the two-term baseline
//! `I(X;Y,Z) - I(X;Z)` with independently paired product batches.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, NetConfig};
use crate::datagen::{quad_form_inv, split_dataset, Dataset, GaussianChainConfig};
use crate::error::{Error, Result};
use crate::knn::KnnStructure;
use crate::resample::{
    isolated_knn_batch_with, joint_batch, midiff_product_batch_xyz, midiff_product_batch_xz,
    schedule_from_n, BatchSchedule, LabeledBatch, ScheduleMode,
};
use crate::rng::{derive_seed, tag};

/// Which log-ratio the analytic Gaussian-chain model returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleTarget {
    /// `ln p(x|y,z) - ln p(x|z)` on `[x | y | z]`.
    CmiXyGivenZ,
    /// `ln p(x|y,z) - ln p(x)` on `[x | y | z]`.
    MiXWithYz,
    /// `ln p(x|z) - ln p(x)` on `[x | z]`.
    MiXWithZ,
}

/// Exact density ratio of the Gaussian chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    pub config: GaussianChainConfig,
    pub target: OracleTarget,
    chol: Array2<f64>,
}

impl GaussianOracle {
    pub fn new(config: GaussianChainConfig, target: OracleTarget) -> Result<Self> {
        let chol = config.cholesky()?;
        Ok(Self {
            config,
            target,
            chol,
        })
    }

    fn input_dim(&self) -> usize {
        match self.target {
            OracleTarget::MiXWithZ => 2 * self.config.d,
            _ => 3 * self.config.d,
        }
    }

    /// Log-ratio for one concatenated row.
    pub fn log_ratio(&self, row: &[f64]) -> f64 {
        let d = self.config.d;
        let mo = self.config.moments();
        let x = &row[..d];
        // ln N(x; g v, s S) up to terms shared by numerator and denominator.
        let log_kernel = |gain: f64, var: f64, cond: Option<&[f64]>| -> f64 {
            let resid: Array1<f64> = match cond {
                Some(v) => x.iter().zip(v).map(|(a, b)| a - gain * b).collect(),
                None => x.iter().copied().collect(),
            };
            -0.5 * d as f64 * var.ln() - 0.5 * quad_form_inv(&self.chol, resid.view()) / var
        };
        match self.target {
            OracleTarget::CmiXyGivenZ => {
                let (y, z) = (&row[d..2 * d], &row[2 * d..3 * d]);
                log_kernel(mo.x_given_y_gain, mo.x_given_y_var, Some(y))
                    - log_kernel(mo.x_given_z_gain, mo.x_given_z_var, Some(z))
            }
            OracleTarget::MiXWithYz => {
                let y = &row[d..2 * d];
                log_kernel(mo.x_given_y_gain, mo.x_given_y_var, Some(y))
                    - log_kernel(1.0, mo.x_var, None)
            }
            OracleTarget::MiXWithZ => {
                let z = &row[d..2 * d];
                log_kernel(mo.x_given_z_gain, mo.x_given_z_var, Some(z))
                    - log_kernel(1.0, mo.x_var, None)
            }
        }
    }
}

/// A density-ratio estimate `G`.
#[derive(Debug, Clone)]
pub enum RatioModel {
    /// `G = (1 - p1)/p1 * w/(1 - w)` from a clamped classifier output `w`.
    Learned { classifier: Classifier, p1: f64 },
    /// The analytic ratio of the Gaussian chain.
    Oracle(GaussianOracle),
}

impl RatioModel {
    pub fn learned(classifier: Classifier, p1: f64) -> Result<Self> {
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(Error::config(format!("prior p1 must lie in (0, 1), got {p1}")));
        }
        Ok(RatioModel::Learned { classifier, p1 })
    }

    pub fn oracle(config: GaussianChainConfig, target: OracleTarget) -> Result<Self> {
        Ok(RatioModel::Oracle(GaussianOracle::new(config, target)?))
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            RatioModel::Learned { classifier, .. } => Some(classifier.tau()),
            RatioModel::Oracle(_) => None,
        }
    }

    /// Range `[(1-p1)/p1 * tau/(1-tau), (1-p1)/p1 * (1-tau)/tau]` that a
    /// learned ratio cannot leave; `None` for the oracle.
    pub fn gamma_bounds(&self) -> Option<(f64, f64)> {
        match self {
            RatioModel::Learned { classifier, p1 } => {
                let tau = classifier.tau();
                Some((odds_ratio(tau, *p1), odds_ratio(1.0 - tau, *p1)))
            }
            RatioModel::Oracle(_) => None,
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            RatioModel::Learned { classifier, .. } => classifier.config().input_dim,
            RatioModel::Oracle(o) => o.input_dim(),
        }
    }

    /// `ln G` for each row of concatenated features.
    pub fn log_gamma_rows(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: features.ncols(),
            });
        }
        match self {
            RatioModel::Learned { classifier, p1 } => {
                let prior = ((1.0 - p1) / p1).ln();
                Ok(classifier
                    .evaluate_batch(features)?
                    .mapv(|w| prior + w.ln() - (1.0 - w).ln()))
            }
            RatioModel::Oracle(o) => {
                let mut buf = Vec::with_capacity(features.ncols());
                Ok(features
                    .rows()
                    .into_iter()
                    .map(|r| {
                        buf.clear();
                        buf.extend(r.iter().copied());
                        o.log_ratio(&buf)
                    })
                    .collect())
            }
        }
    }

    pub fn log_gamma(&self, batch: &LabeledBatch) -> Result<Array1<f64>> {
        let f = batch.features();
        self.log_gamma_rows(f.view())
    }

    /// `G` at one concatenated `(x, y, z)` sample.
    pub fn gamma_hat(&self, sample: &[f64]) -> Result<f64> {
        match self {
            RatioModel::Learned { classifier, p1 } => Ok(odds_ratio(classifier.evaluate(sample)?, *p1)),
            RatioModel::Oracle(o) => {
                if sample.len() != o.input_dim() {
                    return Err(Error::Dimension {
                        expected: o.input_dim(),
                        got: sample.len(),
                    });
                }
                Ok(o.log_ratio(sample).exp())
            }
        }
    }
}

/// `(1 - p1)/p1 * w/(1 - w)`.
pub fn odds_ratio(w: f64, p1: f64) -> f64 {
    (1.0 - p1) / p1 * w / (1.0 - w)
}

/// The three estimates from one pair of test batches.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimates {
    pub dv: f64,
    pub nwj: f64,
    pub ldr: f64,
}

/// Selects one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Dv,
    Nwj,
    Ldr,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dv" => Ok(EstimatorKind::Dv),
            "nwj" => Ok(EstimatorKind::Nwj),
            "ldr" => Ok(EstimatorKind::Ldr),
            other => Err(Error::config(format!("unknown estimator `{other}`"))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Dv => "dv",
            EstimatorKind::Nwj => "nwj",
            EstimatorKind::Ldr => "ldr",
        })
    }
}

impl Estimates {
    pub fn get(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::Dv => self.dv,
            EstimatorKind::Nwj => self.nwj,
            EstimatorKind::Ldr => self.ldr,
        }
    }

    fn minus(&self, other: &Estimates) -> Estimates {
        Estimates {
            dv: self.dv - other.dv,
            nwj: self.nwj - other.nwj,
            ldr: self.ldr - other.ldr,
        }
    }
}

fn mean(v: &Array1<f64>) -> f64 {
    v.sum() / v.len() as f64
}

fn log_mean_exp(v: &Array1<f64>) -> f64 {
    let max = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    max + (v.mapv(|l| (l - max).exp()).sum() / v.len() as f64).ln()
}

fn non_empty(batch: &LabeledBatch, what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty(format!("{what} batch is empty")));
    }
    Ok(())
}

/// Donsker-Varadhan estimate.
pub fn estimate_dv(model: &RatioModel, joint: &LabeledBatch, product: &LabeledBatch) -> Result<f64> {
    Ok(estimate_all(model, joint, product)?.dv)
}

/// NWJ estimate.
pub fn estimate_nwj(model: &RatioModel, joint: &LabeledBatch, product: &LabeledBatch) -> Result<f64> {
    Ok(estimate_all(model, joint, product)?.nwj)
}

/// Log-density-ratio estimate; needs only the joint batch.
pub fn estimate_ldr(model: &RatioModel, joint: &LabeledBatch) -> Result<f64> {
    non_empty(joint, "joint")?;
    Ok(mean(&model.log_gamma(joint)?))
}

/// DV, NWJ, and LDR from one evaluation of the model on both batches.
pub fn estimate_all(model: &RatioModel, joint: &LabeledBatch, product: &LabeledBatch) -> Result<Estimates> {
    non_empty(joint, "joint")?;
    non_empty(product, "product")?;
    let lj = model.log_gamma(joint)?;
    let lp = model.log_gamma(product)?;
    Ok(estimates_from_log_gamma(&lj, &lp))
}

/// The estimators from precomputed `ln G` values.
pub fn estimates_from_log_gamma(joint: &Array1<f64>, product: &Array1<f64>) -> Estimates {
    let ldr = mean(joint);
    let lme = log_mean_exp(product);
    Estimates {
        dv: ldr - lme,
        nwj: 1.0 + ldr - lme.exp(),
        ldr,
    }
}

/// Estimation settings shared by the trial loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub trials: usize,
    pub schedule: ScheduleMode,
    /// Joint batch size `b`; defaults to the size of the smaller split.
    #[serde(default)]
    pub joint_batch: Option<usize>,
    pub train_fraction: f64,
    /// Network settings; `input_dim` is filled in from the data.
    pub net: NetConfig,
    #[serde(default)]
    pub knn: KnnStructure,
}

impl EstimatorConfig {
    /// `T` trials, fixed `k`, half the data for training, default network.
    pub fn new(trials: usize, k: usize) -> Self {
        Self {
            trials,
            schedule: ScheduleMode::FixedK { k },
            joint_batch: None,
            train_fraction: 0.5,
            net: NetConfig::new(1),
            knn: KnnStructure::Auto,
        }
    }
}

/// Per-term estimates of the MI-Diff baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidiffTerms {
    /// `I(X;Y,Z)`.
    pub xyz: Estimates,
    /// `I(X;Z)`.
    pub xz: Estimates,
}

/// One trial's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEstimate {
    pub trial: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub estimates: Estimates,
    /// Final-epoch training loss of each classifier.
    pub final_train_loss: Vec<f64>,
    /// Parameter norm of each classifier after training.
    pub parameter_norm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub midiff: Option<MidiffTerms>,
}

/// Mean, extremes, and sample standard deviation across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Spread {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        }
    }
}

/// Which batching scheme produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IsolatedKnn,
    Midiff,
}

/// Wall-clock seconds spent per stage, summed over trials.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub split: f64,
    pub resample: f64,
    pub train: f64,
    pub evaluate: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub n: usize,
    pub dims: (usize, usize, usize),
    pub n_train: usize,
    pub n_test: usize,
    pub schedule: BatchSchedule,
    pub tau: f64,
    pub epochs: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub config: EstimatorConfig,
    pub per_trial: Vec<TrialEstimate>,
    /// Arithmetic means of the per-trial values.
    pub average: Estimates,
    pub dv: Spread,
    pub nwj: Spread,
    pub ldr: Spread,
    /// Kept out of the serialized report so reruns compare byte-for-byte.
    #[serde(skip)]
    pub timings: Timings,
}

impl EstimateReport {
    fn assemble(
        method: Method,
        dataset: &Dataset,
        split: (usize, usize),
        schedule: BatchSchedule,
        config: &EstimatorConfig,
        net: &NetConfig,
        seed: u64,
        per_trial: Vec<TrialEstimate>,
        timings: Timings,
    ) -> Self {
        let col = |k: EstimatorKind| per_trial.iter().map(|t| t.estimates.get(k)).collect::<Vec<_>>();
        let (dv, nwj, ldr) = (
            Spread::of(&col(EstimatorKind::Dv)),
            Spread::of(&col(EstimatorKind::Nwj)),
            Spread::of(&col(EstimatorKind::Ldr)),
        );
        let mut config = config.clone();
        config.net = net.clone();
        EstimateReport {
            method,
            n: dataset.len(),
            dims: dataset.dims(),
            n_train: split.0,
            n_test: split.1,
            schedule,
            tau: net.tau,
            epochs: net.epochs,
            trials: per_trial.len(),
            master_seed: seed,
            config,
            average: Estimates {
                dv: dv.mean,
                nwj: nwj.mean,
                ldr: ldr.mean,
            },
            dv,
            nwj,
            ldr,
            per_trial,
            timings,
        }
    }

    pub fn spread(&self, kind: EstimatorKind) -> Spread {
        match kind {
            EstimatorKind::Dv => self.dv,
            EstimatorKind::Nwj => self.nwj,
            EstimatorKind::Ldr => self.ldr,
        }
    }
}

fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &[tag::TRIAL, trial as u64])
}

fn check_common(config: &EstimatorConfig) -> Result<()> {
    if config.trials == 0 {
        return Err(Error::config("at least one trial is required"));
    }
    Ok(())
}

#[derive(Default)]
struct Clock(Timings);

impl Clock {
    fn time<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *slot += start.elapsed().as_secs_f64();
        out
    }
}

fn split_sizes(n: usize, train_fraction: f64) -> Result<(usize, usize)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!(
            "train fraction {train_fraction} of {n} samples leaves an empty part"
        )));
    }
    Ok((n_train, n - n_train))
}

/// Split sizes and batch schedule that [`run_algorithm1`] would use on `n`
/// samples, or the reason it cannot run. The joint batch size defaults to
/// the smaller split.
pub fn plan_isolated(n: usize, config: &EstimatorConfig) -> Result<(usize, usize, BatchSchedule)> {
    check_common(config)?;
    let (n_train, n_test) = split_sizes(n, config.train_fraction)?;
    let b = config.joint_batch.unwrap_or(n_train.min(n_test));
    let schedule = schedule_from_n(n_train, config.schedule, b)?;
    if schedule.b > n_test || schedule.m >= n_test || schedule.k > n_test - schedule.m {
        return Err(Error::Schedule(format!(
            "test split of {n_test} samples cannot hold b = {}, m = {}, k = {}",
            schedule.b, schedule.m, schedule.k
        )));
    }
    Ok((n_train, n_test, schedule))
}

/// Like [`plan_isolated`] for [`run_midiff`]; `k` and `m` are unused and zero.
pub fn plan_midiff(n: usize, config: &EstimatorConfig) -> Result<(usize, usize, BatchSchedule)> {
    check_common(config)?;
    let (n_train, n_test) = split_sizes(n, config.train_fraction)?;
    let b = config.joint_batch.unwrap_or(n_train.min(n_test));
    if b == 0 || b > n_train || b > n_test {
        return Err(Error::Schedule(format!(
            "MI-Diff batch size b = {b} must fit both splits ({n_train} / {n_test})"
        )));
    }
    let schedule = BatchSchedule {
        n: n_train,
        k: 0,
        m: 0,
        b,
        b_prime: b,
        epsilon_0: None,
    };
    Ok((n_train, n_test, schedule))
}

/// Runs the isolated k-NN estimator over `config.trials` trials.
///
/// Split once; then per trial: joint and isolated k-NN batches from the
/// train part, train a fresh classifier, draw test batches of the same
/// sizes from the held-out part, and evaluate DV, NWJ, and LDR. Trials run
/// in parallel; results do not depend on the thread count.
pub fn run_algorithm1(dataset: &Dataset, config: &EstimatorConfig, seed: u64) -> Result<EstimateReport> {
    check_common(config)?;
    let mut clock = Clock::default();
    let (train, test) = Clock::time(&mut clock.0.split, || {
        split_dataset(dataset, config.train_fraction, derive_seed(seed, &[tag::SPLIT]))
    })?;
    let (_, _, schedule) = plan_isolated(dataset.len(), config)?;
    let (dx, dy, dz) = dataset.dims();
    let mut net = config.net.clone();
    net.input_dim = dx + dy + dz;
    net.validate()?;
    let p1 = schedule.p1();

    let outcomes: Vec<(TrialEstimate, Timings)> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let ts = trial_seed(seed, t);
            let s = |purpose: u64| derive_seed(ts, &[purpose]);
            let mut tm = Timings::default();
            let mut run = || -> Result<TrialEstimate> {
                let (jt, pt) = Clock::time(&mut tm.resample, || -> Result<_> {
                    Ok((
                        joint_batch(&train, schedule.b, s(tag::JOINT_TRAIN))?,
                        isolated_knn_batch_with(&train, schedule.m, schedule.k, s(tag::PRODUCT_TRAIN), config.knn)?,
                    ))
                })?;
                let mut trial_net = net.clone();
                trial_net.init_seed = derive_seed(ts, &[tag::INIT, net.init_seed]);
                let classifier = Clock::time(&mut tm.train, || {
                    Classifier::init(trial_net)?.train(&jt, &pt, s(tag::SHUFFLE))
                })?;
                let (je, pe) = Clock::time(&mut tm.resample, || -> Result<_> {
                    Ok((
                        joint_batch(&test, schedule.b, s(tag::JOINT_TEST))?,
                        isolated_knn_batch_with(&test, schedule.m, schedule.k, s(tag::PRODUCT_TEST), config.knn)?,
                    ))
                })?;
                let loss = classifier.log.epoch_loss.last().copied().unwrap_or(f64::NAN);
                let norm = classifier.log.parameter_norm;
                let model = RatioModel::learned(classifier, p1)?;
                let estimates = Clock::time(&mut tm.evaluate, || estimate_all(&model, &je, &pe))?;
                Ok(TrialEstimate {
                    trial: t,
                    seed: ts,
                    estimates,
                    final_train_loss: vec![loss],
                    parameter_norm: vec![norm],
                    midiff: None,
                })
            };
            let out = run().map_err(|e| Error::Trial {
                trial: t,
                source: Box::new(e),
            })?;
            Ok((out, tm))
        })
        .collect::<Result<_>>()?;

    let mut timings = clock.0;
    let per_trial = outcomes
        .into_iter()
        .map(|(t, tm)| {
            timings.resample += tm.resample;
            timings.train += tm.train;
            timings.evaluate += tm.evaluate;
            t
        })
        .collect();
    Ok(EstimateReport::assemble(
        Method::IsolatedKnn,
        dataset,
        (train.len(), test.len()),
        schedule,
        config,
        &net,
        seed,
        per_trial,
        timings,
    ))
}

/// MI-Diff baseline: `I(X;Y|Z) = I(X;Y,Z) - I(X;Z)`, each term estimated by
/// its own classifier against independently paired product batches.
///
/// The schedule's `k` is ignored; both product batches have size `b`.
pub fn run_midiff(dataset: &Dataset, config: &EstimatorConfig, seed: u64) -> Result<EstimateReport> {
    check_common(config)?;
    let mut clock = Clock::default();
    let (train, test) = Clock::time(&mut clock.0.split, || {
        split_dataset(dataset, config.train_fraction, derive_seed(seed, &[tag::SPLIT]))
    })?;
    let (_, _, schedule) = plan_midiff(dataset.len(), config)?;
    let b = schedule.b;
    let (dx, dy, dz) = dataset.dims();
    let mut net_xyz = config.net.clone();
    net_xyz.input_dim = dx + dy + dz;
    net_xyz.validate()?;
    let mut net_xz = net_xyz.clone();
    net_xz.input_dim = dx + dz;

    let outcomes: Vec<(TrialEstimate, Timings)> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let ts = trial_seed(seed, t);
            let mut tm = Timings::default();
            let mut term = |term_tag: u64, net: &NetConfig| -> Result<(Estimates, f64, f64)> {
                let s = |purpose: u64| derive_seed(ts, &[term_tag, purpose]);
                let product = |ds: &Dataset, sd: u64| {
                    if term_tag == tag::TERM_XZ {
                        midiff_product_batch_xz(ds, b, sd)
                    } else {
                        midiff_product_batch_xyz(ds, b, sd)
                    }
                };
                let shape = |j: LabeledBatch| if term_tag == tag::TERM_XZ { j.without_y() } else { j };
                let (jt, pt) = Clock::time(&mut tm.resample, || -> Result<_> {
                    Ok((shape(joint_batch(&train, b, s(tag::JOINT_TRAIN))?), product(&train, s(tag::PRODUCT_TRAIN))?))
                })?;
                let mut trial_net = net.clone();
                trial_net.init_seed = derive_seed(ts, &[term_tag, tag::INIT, net.init_seed]);
                let classifier = Clock::time(&mut tm.train, || {
                    Classifier::init(trial_net)?.train(&jt, &pt, s(tag::SHUFFLE))
                })?;
                let (je, pe) = Clock::time(&mut tm.resample, || -> Result<_> {
                    Ok((shape(joint_batch(&test, b, s(tag::JOINT_TEST))?), product(&test, s(tag::PRODUCT_TEST))?))
                })?;
                let loss = classifier.log.epoch_loss.last().copied().unwrap_or(f64::NAN);
                let norm = classifier.log.parameter_norm;
                let model = RatioModel::learned(classifier, 0.5)?;
                let est = Clock::time(&mut tm.evaluate, || estimate_all(&model, &je, &pe))?;
                Ok((est, loss, norm))
            };
            let run = |term: &mut dyn FnMut(u64, &NetConfig) -> Result<(Estimates, f64, f64)>| -> Result<TrialEstimate> {
                let (xyz, l1, n1) = term(tag::TERM_XYZ, &net_xyz)?;
                let (xz, l2, n2) = term(tag::TERM_XZ, &net_xz)?;
                Ok(TrialEstimate {
                    trial: t,
                    seed: ts,
                    estimates: xyz.minus(&xz),
                    final_train_loss: vec![l1, l2],
                    parameter_norm: vec![n1, n2],
                    midiff: Some(MidiffTerms { xyz, xz }),
                })
            };
            let out = run(&mut term).map_err(|e| Error::Trial {
                trial: t,
                source: Box::new(e),
            })?;
            Ok((out, tm))
        })
        .collect::<Result<_>>()?;

    let mut timings = clock.0;
    let per_trial = outcomes
        .into_iter()
        .map(|(t, tm)| {
            timings.resample += tm.resample;
            timings.train += tm.train;
            timings.evaluate += tm.evaluate;
            t
        })
        .collect();
    Ok(EstimateReport::assemble(
        Method::Midiff,
        dataset,
        (train.len(), test.len()),
        schedule,
        config,
        &net_xyz,
        seed,
        per_trial,
        timings,
    ))
}

/// MI-Diff difference from two oracle ratio models on shared joint samples.
pub fn midiff_oracle(
    model_xyz: &RatioModel,
    model_xz: &RatioModel,
    joint: &LabeledBatch,
    product_xyz: &LabeledBatch,
    product_xz: &LabeledBatch,
) -> Result<MidiffTerms> {
    Ok(MidiffTerms {
        xyz: estimate_all(model_xyz, joint, product_xyz)?,
        xz: estimate_all(model_xz, &joint.without_y(), product_xz)?,
    })
}

impl MidiffTerms {
    pub fn difference(&self) -> Estimates {
        self.xyz.minus(&self.xz)
    }
}

//! Accuracy reports and the experiment protocols built on top of training:
//! multi-domain runs (optionally k-fold), ablations, adaptation to an
//! unlabeled target, and hyper-parameter sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::Matrix;
use crate::baseline::{train_baseline, Baseline};
use crate::data::{
    five_fold_split, ratio_split, to_dense_batch, DomainPools, MultiDomainDataset, SparseExample,
};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trainer::{train, Ablation, TrainConfig, TrainOutcome};

const EVAL_CHUNK: usize = 256;

/// Fraction of `pool` whose label matches `predict` on dense chunks.
fn pool_accuracy<F>(pool: &[SparseExample], vocab: usize, binarize: bool, predict: F) -> Result<f64>
where
    F: Fn(&Matrix) -> Result<Vec<usize>>,
{
    if pool.is_empty() {
        return Err(Error::Config("cannot evaluate an empty pool".into()));
    }
    let mut correct = 0usize;
    for chunk in pool.chunks(EVAL_CHUNK) {
        let x = to_dense_batch(chunk, vocab, binarize);
        let labels = predict(&x)?;
        for (ex, &y) in chunk.iter().zip(&labels) {
            let truth = ex.label.ok_or_else(|| {
                Error::Contract("evaluation pool holds an unlabeled example".into())
            })?;
            correct += usize::from(usize::from(truth) == y);
        }
    }
    Ok(correct as f64 / pool.len() as f64)
}

/// Accuracy of averaged-classifier predictions on one domain's pool.
pub fn accuracy(
    params: &ModelParams,
    pool: &[SparseExample],
    domain: usize,
    zero_domain: bool,
    binarize: bool,
) -> Result<f64> {
    pool_accuracy(pool, params.arch.vocab_size, binarize, |x| {
        Ok(params.predict(x, domain, zero_domain)?.labels)
    })
}

/// Unweighted mean accuracy over `(domain, pool)` pairs; the `zero_domain`
/// domain is scored with its private block zeroed.
pub fn average_accuracy(
    params: &ModelParams,
    pools: &[(usize, &[SparseExample])],
    zero_domain: Option<usize>,
    binarize: bool,
) -> Result<f64> {
    if pools.is_empty() {
        return Err(Error::Config("no pools to evaluate".into()));
    }
    let mut sum = 0.0;
    for &(m, pool) in pools {
        sum += accuracy(params, pool, m, zero_domain == Some(m), binarize)?;
    }
    Ok(sum / pools.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub domains: Vec<String>,
    pub accuracy: Vec<f64>,
    /// Unweighted mean of `accuracy`.
    pub average: f64,
    pub fingerprint: String,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(
        method: &str,
        domains: Vec<String>,
        accuracy: Vec<f64>,
        config: &TrainConfig,
    ) -> Self {
        let average = accuracy.iter().sum::<f64>() / accuracy.len().max(1) as f64;
        Self {
            method: method.to_string(),
            domains,
            accuracy,
            average,
            fingerprint: crate::config::fingerprint(config),
            seed: config.seed,
            notes: Vec::new(),
        }
    }

    pub fn accuracy_of(&self, domain: &str) -> Option<f64> {
        self.domains
            .iter()
            .position(|d| d == domain)
            .map(|i| self.accuracy[i])
    }

    /// Per-domain mean of several reports over the same domains.
    pub fn mean(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Contract("cannot average zero reports".into()))?;
        if reports.iter().any(|r| r.domains != first.domains) {
            return Err(Error::Contract("reports cover different domains".into()));
        }
        let n = reports.len() as f64;
        let accuracy: Vec<f64> = (0..first.domains.len())
            .map(|i| reports.iter().map(|r| r.accuracy[i]).sum::<f64>() / n)
            .collect();
        let average = accuracy.iter().sum::<f64>() / accuracy.len().max(1) as f64;
        Ok(EvalReport {
            accuracy,
            average,
            ..first.clone()
        })
    }
}

/// Scores `params` on every domain's test pool.
pub fn evaluate(
    params: &ModelParams,
    data: &MultiDomainDataset,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    data.domains
        .iter()
        .enumerate()
        .map(|(m, d)| {
            if d.test.is_empty() {
                return Err(Error::Config(format!(
                    "domain {:?} has no test pool",
                    d.name
                )));
            }
            accuracy(
                params,
                &d.test,
                m,
                config.uda_target == Some(m),
                config.binarize,
            )
        })
        .collect()
}

pub fn evaluate_baseline(
    model: &Baseline,
    data: &MultiDomainDataset,
    binarize: bool,
) -> Result<Vec<f64>> {
    data.domains
        .iter()
        .map(|d| {
            if d.test.is_empty() {
                return Err(Error::Config(format!(
                    "domain {:?} has no test pool",
                    d.name
                )));
            }
            pool_accuracy(&d.test, data.vocab_size, binarize, |x| model.predict(x))
        })
        .collect()
}

/// Runs independent jobs on a pool of `threads` workers; results keep job order.
pub fn run_parallel<T, F>(threads: usize, jobs: Vec<F>) -> Result<Vec<T>>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    if threads <= 1 {
        return jobs.into_iter().map(|j| j()).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| jobs.into_par_iter().map(|j| j()).collect())
}

/// Training views for a multi-domain run. With `folds == 1` and fixed
/// validation and test pools on every domain, the pools are used as given;
/// otherwise each domain's labeled pool is split five ways and folds
/// `0..folds` are returned.
pub fn fold_views(
    data: &MultiDomainDataset,
    folds: usize,
    seed: u64,
) -> Result<Vec<MultiDomainDataset>> {
    if !(1..=5).contains(&folds) {
        return Err(Error::Config(format!(
            "folds must be in 1..=5, got {folds}"
        )));
    }
    let fixed = data
        .domains
        .iter()
        .all(|d| !d.valid.is_empty() && !d.test.is_empty());
    if folds == 1 && fixed {
        return Ok(vec![data.clone()]);
    }
    (0..folds)
        .map(|fold| {
            let domains = data
                .domains
                .iter()
                .enumerate()
                .map(|(m, d)| {
                    let s = five_fold_split(&d.labeled, fold, seed.wrapping_add(m as u64))?;
                    Ok(DomainPools {
                        name: d.name.clone(),
                        labeled: s.train,
                        unlabeled: d.unlabeled.clone(),
                        valid: s.valid,
                        test: s.test,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MultiDomainDataset {
                vocab_size: data.vocab_size,
                domains,
            })
        })
        .collect()
}

fn method_name(ablation: Ablation) -> &'static str {
    match ablation {
        Ablation::None => "dacl",
        Ablation::NoDiscriminator => "dacl-no-d",
        Ablation::NoSecondClassifier => "dacl-no-c2",
    }
}

/// A single training run on a prepared view, scored with the
/// best-on-validation snapshot.
pub fn train_and_evaluate(
    view: &MultiDomainDataset,
    config: &TrainConfig,
) -> Result<(EvalReport, TrainOutcome)> {
    let outcome = train(view, config)?;
    let acc = evaluate(&outcome.best, view, config)?;
    let report = EvalReport::new(method_name(config.ablation), view.names(), acc, config);
    Ok((report, outcome))
}

/// Multi-domain classification, averaged over `folds` folds.
pub fn run_mdtc(
    data: &MultiDomainDataset,
    config: &TrainConfig,
    folds: usize,
    threads: usize,
) -> Result<EvalReport> {
    if config.uda_target.is_some() {
        return Err(Error::Config(
            "multi-domain runs take no adaptation target".into(),
        ));
    }
    let views = fold_views(data, folds, config.seed)?;
    let jobs: Vec<_> = views
        .iter()
        .map(|v| move || train_and_evaluate(v, config).map(|(r, _)| r))
        .collect();
    let reports = run_parallel(threads, jobs)?;
    let mut mean = EvalReport::mean(&reports)?;
    if reports.len() > 1 {
        mean.notes
            .push(format!("mean over {} folds", reports.len()));
    }
    Ok(mean)
}

/// The shared-only MLP baseline under the same protocol as [`run_mdtc`].
pub fn run_mdtc_baseline(
    data: &MultiDomainDataset,
    config: &TrainConfig,
    folds: usize,
) -> Result<EvalReport> {
    let views = fold_views(data, folds, config.seed)?;
    let reports = views
        .iter()
        .map(|v| {
            let model = train_baseline(v, config)?;
            let acc = evaluate_baseline(&model, v, config.binarize)?;
            Ok(EvalReport::new("mlp", v.names(), acc, config))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::mean(&reports)
}

/// Full model and both ablations with the same seed.
pub fn run_ablation(
    data: &MultiDomainDataset,
    config: &TrainConfig,
    folds: usize,
    threads: usize,
) -> Result<Vec<EvalReport>> {
    let jobs: Vec<_> = Ablation::ALL
        .into_iter()
        .map(|ablation| {
            let cfg = TrainConfig {
                ablation,
                ..config.clone()
            };
            move || run_mdtc(data, &cfg, folds, 1)
        })
        .collect();
    run_parallel(threads, jobs)
}

/// Domains of an adaptation run: sources keep their pools (split 70/10/20
/// when they lack fixed validation and test pools); the target loses its
/// labeled pool, whose examples join its unlabeled pool without labels and
/// serve as its test pool unless it has its own.
pub fn uda_view(data: &MultiDomainDataset, target: usize, seed: u64) -> Result<MultiDomainDataset> {
    if target >= data.num_domains() {
        return Err(Error::Range {
            what: "adaptation target",
            index: target,
            len: data.num_domains(),
        });
    }
    if data.num_domains() < 2 {
        return Err(Error::Config(
            "adaptation needs at least one source domain".into(),
        ));
    }
    let mut domains = Vec::with_capacity(data.num_domains());
    for (m, d) in data.domains.iter().enumerate() {
        if m == target {
            let mut unlabeled = d.unlabeled.clone();
            unlabeled.extend(d.labeled.iter().map(SparseExample::unlabeled));
            if unlabeled.is_empty() {
                return Err(Error::Config(format!(
                    "adaptation target {:?} has no unlabeled data",
                    d.name
                )));
            }
            let test = if d.test.is_empty() {
                d.labeled.clone()
            } else {
                d.test.clone()
            };
            domains.push(DomainPools {
                name: d.name.clone(),
                labeled: Vec::new(),
                unlabeled,
                valid: Vec::new(),
                test,
            });
        } else if d.valid.is_empty() || d.test.is_empty() {
            let s = ratio_split(&d.labeled, seed.wrapping_add(m as u64))?;
            domains.push(DomainPools {
                name: d.name.clone(),
                labeled: s.train,
                unlabeled: d.unlabeled.clone(),
                valid: s.valid,
                test: s.test,
            });
        } else {
            domains.push(d.clone());
        }
    }
    Ok(MultiDomainDataset {
        vocab_size: data.vocab_size,
        domains,
    })
}

#[derive(Clone, Debug)]
pub struct UdaRun {
    pub report: EvalReport,
    /// Labels read from each domain during training.
    pub label_reads: Vec<u64>,
}

pub fn run_uda(data: &MultiDomainDataset, target: usize, config: &TrainConfig) -> Result<UdaRun> {
    let view = uda_view(data, target, config.seed)?;
    let cfg = TrainConfig {
        uda_target: Some(target),
        ..config.clone()
    };
    let (mut report, outcome) = train_and_evaluate(&view, &cfg)?;
    report.method = format!("{}-uda", report.method);
    let tested_on = if data.domains[target].test.is_empty() {
        "its labeled examples"
    } else {
        "its own test pool"
    };
    report.notes.push(format!(
        "target {:?}: labeled examples joined the unlabeled pool without labels; scored on {tested_on}",
        view.domains[target].name
    ));
    Ok(UdaRun {
        report,
        label_reads: outcome.label_reads,
    })
}

/// Shared-only MLP trained on the pooled sources and scored on the target.
pub fn run_uda_baseline(
    data: &MultiDomainDataset,
    target: usize,
    config: &TrainConfig,
) -> Result<EvalReport> {
    let view = uda_view(data, target, config.seed)?;
    let sources = MultiDomainDataset {
        vocab_size: view.vocab_size,
        domains: view
            .domains
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != target)
            .map(|(_, d)| d.clone())
            .collect(),
    };
    let cfg = TrainConfig {
        uda_target: None,
        ..config.clone()
    };
    let model = train_baseline(&sources, &cfg)?;
    let acc = evaluate_baseline(&model, &view, cfg.binarize)?;
    let mut report = EvalReport::new("mlp-uda", view.names(), acc, &cfg);
    report.notes.push(format!(
        "trained on sources only; target {:?}",
        view.domains[target].name
    ));
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Gamma,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Gamma => "gamma",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn new(param: SweepParam) -> Self {
        Self {
            param,
            values: vec![0.001, 0.01, 0.1, 1.0, 10.0],
        }
    }
}

/// One run per value with everything else, the seed included, held fixed.
pub fn run_sweep(
    data: &MultiDomainDataset,
    spec: &SweepSpec,
    config: &TrainConfig,
    folds: usize,
    threads: usize,
) -> Result<Vec<(f64, EvalReport)>> {
    if spec.values.is_empty() || spec.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config("sweep values must be positive".into()));
    }
    let jobs: Vec<_> = spec
        .values
        .iter()
        .map(|&v| {
            let mut cfg = config.clone();
            match spec.param {
                SweepParam::Alpha => cfg.hyper.alpha = v,
                SweepParam::Gamma => cfg.hyper.gamma = v,
            }
            move || run_mdtc(data, &cfg, folds, 1).map(|r| (v, r))
        })
        .collect();
    run_parallel(threads, jobs)
}

pub fn sweep_csv(param: SweepParam, results: &[(f64, EvalReport)]) -> String {
    let mut out = String::new();
    if let Some((_, first)) = results.first() {
        let _ = writeln!(
            out,
            "{},{},average",
            param.as_str(),
            first.domains.join(",")
        );
    }
    for (v, r) in results {
        let accs: Vec<String> = r.accuracy.iter().map(|a| format!("{a:.6}")).collect();
        let _ = writeln!(out, "{v},{},{:.6}", accs.join(","), r.average);
    }
    out
}

/// `method,seed,fingerprint,<domains...>,average` with one row per report.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let _ = writeln!(
            out,
            "method,seed,fingerprint,{},average",
            first.domains.join(",")
        );
    }
    for r in reports {
        let accs: Vec<String> = r.accuracy.iter().map(|a| format!("{a:.6}")).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6}",
            r.method,
            r.seed,
            r.fingerprint,
            accs.join(","),
            r.average
        );
    }
    out
}

/// Methods as rows, domains as columns, accuracies in percent, last column AVG.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut header = vec!["Method".to_string()];
    header.extend(first.domains.iter().cloned());
    header.push("AVG".into());
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.method.clone()];
            row.extend(r.accuracy.iter().map(|a| format!("{:.2}", 100.0 * a)));
            row.push(format!("{:.2}", 100.0 * r.average));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    for r in reports {
        for n in &r.notes {
            let _ = writeln!(out, "note ({}): {n}", r.method);
        }
    }
    out
}

//! The stepwise adversarial loop. Each iteration samples one labeled and one
//! unlabeled batch per domain and runs, on those same batches:
//!
//! 1. the learning step: descend both extractors and both classifiers on
//!    `lc1 + lc2 + alpha * lsep`;
//! 2. the adversary step: ascend the classifiers on `ladv_u - (lc1 + lc2)`,
//!    then ascend the discriminator on `ladv_d`, extractor outputs held fixed;
//! 3. the refinement step: descend the extractors on `ladv_u + gamma * ladv_d`
//!    with classifiers and discriminator frozen.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Matrix, Var};
use crate::data::{to_dense_batch, MultiDomainDataset, SparseExample};
use crate::error::{Error, Result};
use crate::eval::average_accuracy;
use crate::losses::{
    classification_loss, discrepancy_loss, domain_adv_loss, separation_loss, HyperParams,
    LossBundle,
};
use crate::model::{Architecture, BoundModel, Components, Group, ModelParams, Trainable};
use crate::optim::{AdamState, Direction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Ablation {
    #[default]
    None,
    NoDiscriminator,
    NoSecondClassifier,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [
        Ablation::None,
        Ablation::NoDiscriminator,
        Ablation::NoSecondClassifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoDiscriminator => "no-d",
            Ablation::NoSecondClassifier => "no-c2",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "full" => Ok(Ablation::None),
            "no-d" => Ok(Ablation::NoDiscriminator),
            "no-c2" => Ok(Ablation::NoSecondClassifier),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (none, no-d, no-c2)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hyper: HyperParams,
    pub lr: f64,
    /// Rows per domain per pool in every batch draw.
    pub batch_size: usize,
    /// Passes over the largest labeled pool.
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// `vocab_size` must match the dataset.
    pub arch: Architecture,
    pub binarize: bool,
    /// Domain trained from unlabeled data only, without a private extractor.
    pub uda_target: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            lr: 1e-4,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            ablation: Ablation::None,
            arch: Architecture::default(),
            binarize: false,
            uda_target: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn components(&self, domains: usize) -> Components {
        let mut c = Components::full(domains);
        if let Some(t) = self.uda_target {
            if t < domains {
                c.private[t] = false;
            }
        }
        c.discriminator = self.ablation != Ablation::NoDiscriminator;
        c.second_classifier = self.ablation != Ablation::NoSecondClassifier;
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum StepKind {
    Learn,
    Adversary,
    Refine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub epoch: usize,
    pub step: usize,
    pub losses: LossBundle,
    pub wall_ms: f64,
}

/// One draw: per domain, a labeled batch (absent for a domain trained
/// without labels) and an unlabeled batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batches {
    pub labeled: Vec<Option<(Matrix, Vec<usize>)>>,
    pub unlabeled: Vec<Matrix>,
}

struct PoolCursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl PoolCursor {
    fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    /// Next `k` indices; the pool is reshuffled each time it is exhausted,
    /// so small pools wrap around.
    fn draw(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Seeded per-domain batch source. Labels are only read through
/// [`BatchSampler::sample`] for supervised domains, and every read is counted.
pub struct BatchSampler<'d> {
    labeled: Vec<Option<(&'d [SparseExample], PoolCursor)>>,
    unlabeled: Vec<(&'d [SparseExample], PoolCursor)>,
    batch_size: usize,
    vocab_size: usize,
    binarize: bool,
    label_reads: Vec<u64>,
}

const SAMPLER_STREAM_BASE: u64 = 1000;

impl<'d> BatchSampler<'d> {
    /// A domain with an empty unlabeled pool draws its unlabeled batches
    /// from the features of its labeled pool.
    pub fn new(data: &'d MultiDomainDataset, config: &TrainConfig) -> Result<Self> {
        let stream = |m: usize, k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(SAMPLER_STREAM_BASE + 2 * m as u64 + k);
            rng
        };
        let mut labeled = Vec::with_capacity(data.num_domains());
        let mut unlabeled = Vec::with_capacity(data.num_domains());
        for (m, d) in data.domains.iter().enumerate() {
            let supervised = config.uda_target != Some(m);
            if supervised && d.labeled.is_empty() {
                return Err(Error::Config(format!(
                    "domain {:?} has no labeled examples",
                    d.name
                )));
            }
            labeled.push(supervised.then(|| {
                (
                    d.labeled.as_slice(),
                    PoolCursor::new(d.labeled.len(), stream(m, 0)),
                )
            }));
            let pool = if !d.unlabeled.is_empty() {
                d.unlabeled.as_slice()
            } else if supervised {
                d.labeled.as_slice()
            } else {
                return Err(Error::Config(format!(
                    "adaptation target {:?} has no unlabeled examples",
                    d.name
                )));
            };
            unlabeled.push((pool, PoolCursor::new(pool.len(), stream(m, 1))));
        }
        Ok(Self {
            labeled,
            unlabeled,
            batch_size: config.batch_size,
            vocab_size: data.vocab_size,
            binarize: config.binarize,
            label_reads: vec![0; data.num_domains()],
        })
    }

    pub fn sample(&mut self) -> Batches {
        let (b, vocab, binarize) = (self.batch_size, self.vocab_size, self.binarize);
        let mut labeled = Vec::with_capacity(self.labeled.len());
        for (m, slot) in self.labeled.iter_mut().enumerate() {
            labeled.push(slot.as_mut().map(|(pool, cursor)| {
                let rows: Vec<&SparseExample> =
                    cursor.draw(b).into_iter().map(|i| &pool[i]).collect();
                let labels: Vec<usize> = rows
                    .iter()
                    .map(|ex| usize::from(ex.label.expect("validated labeled pool")))
                    .collect();
                self.label_reads[m] += labels.len() as u64;
                (to_dense_batch(rows, vocab, binarize), labels)
            }));
        }
        let unlabeled = self
            .unlabeled
            .iter_mut()
            .map(|(pool, cursor)| {
                let rows: Vec<&SparseExample> =
                    cursor.draw(b).into_iter().map(|i| &pool[i]).collect();
                to_dense_batch(rows, vocab, binarize)
            })
            .collect();
        Batches { labeled, unlabeled }
    }

    /// Labels read so far, per domain.
    pub fn label_reads(&self) -> &[u64] {
        &self.label_reads
    }
}

fn accumulate(g: &mut Graph<'_>, acc: Option<Var>, term: Var) -> Result<Var> {
    match acc {
        Some(a) => g.add(a, term),
        None => Ok(term),
    }
}

fn value(g: &Graph<'_>, v: Option<Var>) -> Option<f64> {
    v.map(|v| g.value(v).item())
}

/// Graph handles for the learning-step objective and its terms.
#[derive(Clone, Copy, Debug)]
pub struct LearningTerms {
    pub total: Var,
    pub lc1: Var,
    pub lc2: Option<Var>,
    pub lsep: Var,
}

/// `lc1 + lc2 + alpha * lsep` over every labeled batch.
pub fn learning_objective(
    g: &mut Graph<'_>,
    model: &BoundModel,
    batches: &Batches,
    alpha: f64,
) -> Result<LearningTerms> {
    let (mut lc1, mut lc2, mut features) = (None, None, Vec::new());
    for (m, slot) in batches.labeled.iter().enumerate() {
        let Some((x, y)) = slot else { continue };
        let x = g.leaf(x.clone(), false);
        let f = model.extract(g, x, m)?;
        let (p1, p2) = model.classify(g, f)?;
        let t1 = classification_loss(g, p1, y)?;
        lc1 = Some(accumulate(g, lc1, t1)?);
        if let Some(p2) = p2 {
            let t2 = classification_loss(g, p2, y)?;
            lc2 = Some(accumulate(g, lc2, t2)?);
        }
        features.push(f);
    }
    let lc1 = lc1.ok_or_else(|| Error::Contract("learning step needs a labeled batch".into()))?;
    let lsep = separation_loss(g, &features)?;
    let mut total = lc1;
    if let Some(lc2) = lc2 {
        total = g.add(total, lc2)?;
    }
    let weighted = g.scale(lsep, alpha);
    total = g.add(total, weighted)?;
    Ok(LearningTerms {
        total,
        lc1,
        lc2,
        lsep,
    })
}

/// Model state plus one optimizer per (group, step) pair.
pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    optimizers: BTreeMap<(Group, StepKind), AdamState>,
}

impl Trainer {
    pub fn new(config: TrainConfig, domains: usize) -> Result<Self> {
        config.validate()?;
        if let Some(t) = config.uda_target {
            if t >= domains {
                return Err(Error::Range {
                    what: "adaptation target",
                    index: t,
                    len: domains,
                });
            }
        }
        let params = ModelParams::init(&config.arch, &config.components(domains), config.seed)?;
        Ok(Self::with_params(config, params))
    }

    pub fn with_params(config: TrainConfig, params: ModelParams) -> Self {
        Self {
            config,
            params,
            optimizers: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn apply(
        &mut self,
        step: StepKind,
        dir: Direction,
        grads: Vec<(Group, Vec<Matrix>)>,
    ) -> Result<()> {
        for (group, grads) in grads {
            let mut params = self.params.group_params_mut(group);
            if params.is_empty() {
                continue;
            }
            self.optimizers.entry((group, step)).or_default().update(
                &mut params,
                &grads,
                self.config.lr,
                dir,
            )?;
        }
        Ok(())
    }

    /// Descends the extractors and classifiers on the supervised objective.
    pub fn l_step(&mut self, batches: &Batches) -> Result<LossBundle> {
        let has_c2 = self.params.c2.is_some();
        let alpha = self.config.hyper.alpha;
        let (losses, grads) = {
            let mut g = Graph::new();
            let trainable = Trainable {
                shared: true,
                domain: true,
                c1: true,
                c2: has_c2,
                disc: false,
            };
            let model = self.params.bind(&mut g, trainable);
            let LearningTerms {
                total,
                lc1,
                lc2,
                lsep,
            } = learning_objective(&mut g, &model, batches, alpha)?;
            g.backward(total)?;
            let losses = LossBundle {
                lc1: value(&g, Some(lc1)),
                lc2: value(&g, lc2),
                lsep: value(&g, Some(lsep)),
                ..LossBundle::default()
            };
            let grads = [
                Group::SharedExtractor,
                Group::DomainExtractors,
                Group::Classifier1,
                Group::Classifier2,
            ]
            .into_iter()
            .map(|grp| (grp, model.take_group_grads(&mut g, grp)))
            .collect::<Vec<_>>();
            (losses, grads)
        };
        self.apply(StepKind::Learn, Direction::Descend, grads)?;
        Ok(losses)
    }

    /// Ascends the classifiers on `ladv_u - (lc1 + lc2)` and the
    /// discriminator on `ladv_d`. Without a second classifier there is no
    /// classifier adversary, and only the discriminator moves.
    pub fn a_step(&mut self, batches: &Batches) -> Result<LossBundle> {
        let has_c2 = self.params.c2.is_some();
        let has_disc = self.params.disc.is_some();
        let (losses, c_grads, d_grads) = {
            let mut g = Graph::new();
            let trainable = Trainable {
                c1: has_c2,
                c2: has_c2,
                disc: has_disc,
                ..Trainable::NONE
            };
            let model = self.params.bind(&mut g, trainable);
            let (mut lc, mut ladv_u, mut disc_probs) = (None, None, Vec::new());
            let mut pairs = Vec::new();
            for (m, xu) in batches.unlabeled.iter().enumerate() {
                let xu = g.constant(xu);
                let mut shared_rows = None;
                if let Some((xl, y)) = &batches.labeled[m] {
                    let xl = g.constant(xl);
                    if has_c2 {
                        let f = model.extract(&mut g, xl, m)?;
                        let (p1, p2) = model.classify(&mut g, f)?;
                        let t1 = classification_loss(&mut g, p1, y)?;
                        let t2 = classification_loss(&mut g, p2.expect("second classifier"), y)?;
                        let t = g.add(t1, t2)?;
                        lc = Some(accumulate(&mut g, lc, t)?);
                        shared_rows = Some(f.shared);
                    } else {
                        shared_rows = Some(model.shared.forward(&mut g, xl)?);
                    }
                }
                let su = if has_c2 {
                    let f = model.extract(&mut g, xu, m)?;
                    let (p1, p2) = model.classify(&mut g, f)?;
                    pairs.push((p1, p2.expect("second classifier")));
                    f.shared
                } else {
                    model.shared.forward(&mut g, xu)?
                };
                if has_disc {
                    let s = match shared_rows {
                        Some(sl) => g.vstack(sl, su)?,
                        None => su,
                    };
                    let p = model.discriminate(&mut g, s)?.expect("discriminator");
                    disc_probs.push(p);
                }
            }
            if has_c2 {
                ladv_u = Some(discrepancy_loss(&mut g, &pairs)?);
            }
            let ladv_d = has_disc
                .then(|| domain_adv_loss(&mut g, &disc_probs))
                .transpose()?;
            let mut root = None;
            if let Some(u) = ladv_u {
                let la = match lc {
                    Some(lc) => g.sub(u, lc)?,
                    None => u,
                };
                root = Some(la);
            }
            if let Some(d) = ladv_d {
                root = Some(accumulate(&mut g, root, d)?);
            }
            if let Some(root) = root {
                g.backward(root)?;
            }
            let losses = LossBundle {
                ladv_d: value(&g, ladv_d),
                ladv_u: value(&g, ladv_u),
                ..LossBundle::default()
            };
            let c_grads = if has_c2 {
                vec![
                    (
                        Group::Classifier1,
                        model.take_group_grads(&mut g, Group::Classifier1),
                    ),
                    (
                        Group::Classifier2,
                        model.take_group_grads(&mut g, Group::Classifier2),
                    ),
                ]
            } else {
                Vec::new()
            };
            let d_grads = vec![(
                Group::Discriminator,
                model.take_group_grads(&mut g, Group::Discriminator),
            )];
            (losses, c_grads, d_grads)
        };
        self.apply(StepKind::Adversary, Direction::Ascend, c_grads)?;
        self.apply(StepKind::Adversary, Direction::Ascend, d_grads)?;
        Ok(losses)
    }

    /// Descends the extractors on `ladv_u + gamma * ladv_d` with a fresh
    /// forward pass.
    pub fn r_step(&mut self, batches: &Batches) -> Result<LossBundle> {
        let has_c2 = self.params.c2.is_some();
        let has_disc = self.params.disc.is_some();
        let gamma = self.config.hyper.gamma;
        let (losses, grads) = {
            let mut g = Graph::new();
            let trainable = Trainable {
                shared: true,
                domain: has_c2,
                ..Trainable::NONE
            };
            let model = self.params.bind(&mut g, trainable);
            let (mut pairs, mut disc_probs) = (Vec::new(), Vec::new());
            for (m, xu) in batches.unlabeled.iter().enumerate() {
                let xu = g.constant(xu);
                let su = if has_c2 {
                    let f = model.extract(&mut g, xu, m)?;
                    let (p1, p2) = model.classify(&mut g, f)?;
                    pairs.push((p1, p2.expect("second classifier")));
                    f.shared
                } else {
                    model.shared.forward(&mut g, xu)?
                };
                if has_disc {
                    let s = match &batches.labeled[m] {
                        Some((xl, _)) => {
                            let xl = g.constant(xl);
                            let sl = model.shared.forward(&mut g, xl)?;
                            g.vstack(sl, su)?
                        }
                        None => su,
                    };
                    disc_probs.push(model.discriminate(&mut g, s)?.expect("discriminator"));
                }
            }
            let ladv_u = has_c2
                .then(|| discrepancy_loss(&mut g, &pairs))
                .transpose()?;
            let ladv_d = has_disc
                .then(|| domain_adv_loss(&mut g, &disc_probs))
                .transpose()?;
            let mut root = ladv_u;
            if let Some(d) = ladv_d {
                let weighted = g.scale(d, gamma);
                root = Some(accumulate(&mut g, root, weighted)?);
            }
            let root =
                root.ok_or_else(|| Error::Contract("refinement step has no objective".into()))?;
            g.backward(root)?;
            let losses = LossBundle {
                ladv_d: value(&g, ladv_d),
                ladv_u: value(&g, ladv_u),
                ..LossBundle::default()
            };
            let mut grads = vec![(
                Group::SharedExtractor,
                model.take_group_grads(&mut g, Group::SharedExtractor),
            )];
            if has_c2 {
                grads.push((
                    Group::DomainExtractors,
                    model.take_group_grads(&mut g, Group::DomainExtractors),
                ));
            }
            (losses, grads)
        };
        self.apply(StepKind::Refine, Direction::Descend, grads)?;
        Ok(losses)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Parameters at the epoch with the best mean validation accuracy
    /// (epoch 0 is the initialisation).
    pub best: ModelParams,
    pub best_epoch: usize,
    /// Mean validation accuracy after each epoch, starting with epoch 0;
    /// `None` when no domain has a validation pool.
    pub valid_history: Vec<Option<f64>>,
    pub reports: Vec<StepReport>,
    pub label_reads: Vec<u64>,
}

/// Iterations per epoch: enough batches to cover the largest labeled pool once.
pub fn iterations_per_epoch(data: &MultiDomainDataset, config: &TrainConfig) -> usize {
    data.domains
        .iter()
        .enumerate()
        .filter(|(m, _)| config.uda_target != Some(*m))
        .map(|(_, d)| d.labeled.len().div_ceil(config.batch_size))
        .max()
        .unwrap_or(0)
}

fn validation_accuracy(
    params: &ModelParams,
    data: &MultiDomainDataset,
    config: &TrainConfig,
) -> Result<Option<f64>> {
    let pools: Vec<(usize, &[SparseExample])> = data
        .domains
        .iter()
        .enumerate()
        .filter(|(m, d)| config.uda_target != Some(*m) && !d.valid.is_empty())
        .map(|(m, d)| (m, d.valid.as_slice()))
        .collect();
    if pools.is_empty() {
        return Ok(None);
    }
    average_accuracy(params, &pools, config.uda_target, config.binarize).map(Some)
}

/// Runs the full loop. `data` holds the training view: `labeled` pools are
/// training data and `valid` pools drive snapshot selection.
pub fn train(data: &MultiDomainDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    if data.num_domains() == 0 {
        return Err(Error::Config("dataset has no domains".into()));
    }
    if config.arch.vocab_size != data.vocab_size {
        return Err(Error::Config(format!(
            "architecture expects {} features, dataset has {}",
            config.arch.vocab_size, data.vocab_size
        )));
    }
    let mut trainer = Trainer::new(config.clone(), data.num_domains())?;
    let mut sampler = BatchSampler::new(data, config)?;
    let per_epoch = iterations_per_epoch(data, config);

    let initial = validation_accuracy(trainer.params(), data, config)?;
    let mut valid_history = vec![initial];
    let mut best = trainer.params().clone();
    let mut best_epoch = 0;
    let mut best_acc = initial;
    let mut reports = Vec::with_capacity(config.epochs * per_epoch);

    for epoch in 1..=config.epochs {
        for step in 0..per_epoch {
            let start = Instant::now();
            let batches = sampler.sample();
            let l = trainer.l_step(&batches)?;
            let a = trainer.a_step(&batches)?;
            let r = trainer.r_step(&batches)?;
            for bundle in [&l, &a, &r] {
                if let Some(term) = bundle.non_finite_term() {
                    return Err(Error::NumericalAbort { term, epoch, step });
                }
            }
            reports.push(StepReport {
                epoch,
                step,
                losses: LossBundle {
                    ladv_d: a.ladv_d,
                    ladv_u: a.ladv_u,
                    ..l
                },
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        let acc = validation_accuracy(trainer.params(), data, config)?;
        valid_history.push(acc);
        if let (Some(a), Some(b)) = (acc, best_acc) {
            if a > b {
                best = trainer.params().clone();
                best_epoch = epoch;
                best_acc = acc;
            }
        } else if acc.is_none() {
            best_epoch = epoch;
        }
    }
    let params = trainer.into_params();
    if best_acc.is_none() {
        best = params.clone();
    }
    Ok(TrainOutcome {
        params,
        best,
        best_epoch,
        valid_history,
        reports,
        label_reads: sampler.label_reads().to_vec(),
    })
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.17e}")).unwrap_or_default()
}

pub fn metrics_csv(reports: &[StepReport]) -> String {
    let mut out = String::from("epoch,step,lc1,lc2,lsep,ladv_d,ladv_u,wall_ms\n");
    for r in reports {
        let l = &r.losses;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.3}",
            r.epoch,
            r.step,
            csv_opt(l.lc1),
            csv_opt(l.lc2),
            csv_opt(l.lsep),
            csv_opt(l.ladv_d),
            csv_opt(l.ladv_u),
            r.wall_ms
        );
    }
    out
}

pub fn write_metrics(path: &Path, reports: &[StepReport]) -> Result<()> {
    fs::write(path, metrics_csv(reports)).map_err(|e| Error::io(path, e))
}

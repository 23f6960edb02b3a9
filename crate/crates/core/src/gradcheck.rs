//! Full finite-difference oracle: every autodiff op plus the four training
//! losses and the complete learning-step objective over all model weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::check::{
    check_ops, compare, relative_error, CheckReport, Comparison, COMPOSITE_TOLERANCE, FD_STEP,
    KINK_MARGIN,
};
use crate::autodiff::{Fault, Graph, Matrix, Var};
use crate::error::Result;
use crate::losses::{classification_loss, discrepancy_loss, domain_adv_loss, separation_loss};
use crate::model::{
    Architecture, BoundModel, Components, FeatureVars, Group, ModelParams, Trainable,
};
use crate::trainer::{learning_objective, Batches};

/// Names of the composite checks, in report order.
pub const COMPOSITES: [&str; 5] = [
    "classification_loss",
    "separation_loss",
    "domain_adv_loss",
    "discrepancy_loss",
    "learning_step",
];

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn shapes(inputs: &[Matrix]) -> String {
    inputs
        .iter()
        .map(|m| format!("{}x{}", m.rows(), m.cols()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Gradient of `objective` with respect to every weight of `params`,
/// analytic versus central differences.
fn compare_model<F>(params: &ModelParams, objective: F, fault: Option<Fault>) -> Result<Comparison>
where
    F: for<'p> Fn(&mut Graph<'p>, &BoundModel) -> Result<Var>,
{
    let (analytic, kink_gap) = {
        let mut g = Graph::new();
        if let Some(f) = fault {
            g.inject_fault(f);
        }
        let model = params.bind(&mut g, Trainable::ALL);
        let root = objective(&mut g, &model)?;
        g.backward(root)?;
        let flat: Vec<f64> = Group::ALL
            .iter()
            .flat_map(|&grp| model.take_group_grads(&mut g, grp))
            .flat_map(Matrix::into_vec)
            .collect();
        (flat, g.kink_gap())
    };
    let eval = |p: &ModelParams| -> Result<f64> {
        let mut g = Graph::new();
        let model = p.bind(&mut g, Trainable::NONE);
        let root = objective(&mut g, &model)?;
        Ok(g.value(root).item())
    };
    let mut work = params.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..work.params_mut().len() {
        for j in 0..work.params_mut()[i].len() {
            let orig = work.params_mut()[i].data()[j];
            work.params_mut()[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work)?;
            work.params_mut()[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work)?;
            work.params_mut()[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(Comparison {
        rel_err: relative_error(&analytic, &numeric),
        kink_gap,
    })
}

/// Two domains, two examples each, small enough to difference every weight.
fn toy_arch() -> Architecture {
    Architecture {
        vocab_size: 6,
        extractor_hidden: vec![5],
        shared_dim: 4,
        domain_dim: 3,
        c1_hidden: 4,
        c2_hidden: 3,
        disc_hidden: 4,
        ..Architecture::default()
    }
}

fn toy_batches(rng: &mut ChaCha8Rng, arch: &Architecture) -> Batches {
    let batch = |rng: &mut ChaCha8Rng| uniform(rng, 2, arch.vocab_size, 0.1, 1.0);
    let labeled = (0..2)
        .map(|_| {
            Some((
                batch(rng),
                vec![rng.random_range(0..2), rng.random_range(0..2)],
            ))
        })
        .collect();
    let unlabeled = (0..2).map(|_| batch(rng)).collect();
    Batches { labeled, unlabeled }
}

fn softmaxed(g: &mut Graph<'_>, v: Var) -> Var {
    g.row_softmax(v)
}

/// One seeded instance of composite `k`.
fn instance(k: usize, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<(Comparison, String)> {
    let n = rng.random_range(1..=4);
    match k {
        0 => {
            let inputs = vec![uniform(rng, n, 2, -2.0, 2.0)];
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let cmp = compare(
                &inputs,
                |g, v| {
                    let p = softmaxed(g, v[0]);
                    classification_loss(g, p, &labels)
                },
                fault,
            )?;
            Ok((cmp, shapes(&inputs)))
        }
        1 => {
            let (a, b) = (rng.random_range(1..=4), rng.random_range(1..=3));
            let inputs: Vec<Matrix> = (0..2)
                .flat_map(|_| [uniform(rng, n, a, -1.0, 1.0), uniform(rng, n, b, -1.0, 1.0)])
                .collect();
            let cmp = compare(
                &inputs,
                |g, v| {
                    let pairs: Vec<FeatureVars> = v
                        .chunks(2)
                        .map(|c| FeatureVars {
                            shared: c[0],
                            domain: c[1],
                        })
                        .collect();
                    separation_loss(g, &pairs)
                },
                fault,
            )?;
            Ok((cmp, shapes(&inputs)))
        }
        2 => {
            let domains = rng.random_range(2..=4);
            let inputs: Vec<Matrix> = (0..domains)
                .map(|_| {
                    let rows = rng.random_range(1..=4);
                    uniform(rng, rows, domains, -2.0, 2.0)
                })
                .collect();
            let cmp = compare(
                &inputs,
                |g, v| {
                    let probs: Vec<Var> = v.iter().map(|&x| softmaxed(g, x)).collect();
                    domain_adv_loss(g, &probs)
                },
                fault,
            )?;
            Ok((cmp, shapes(&inputs)))
        }
        3 => {
            let domains = rng.random_range(1..=3);
            let inputs: Vec<Matrix> = (0..2 * domains)
                .map(|_| uniform(rng, n, 2, -2.0, 2.0))
                .collect();
            let cmp = compare(
                &inputs,
                |g, v| {
                    let pairs: Vec<(Var, Var)> = v
                        .chunks(2)
                        .map(|c| (softmaxed(g, c[0]), softmaxed(g, c[1])))
                        .collect();
                    discrepancy_loss(g, &pairs)
                },
                fault,
            )?;
            Ok((cmp, shapes(&inputs)))
        }
        _ => {
            let arch = toy_arch();
            let params = ModelParams::init(&arch, &Components::full(2), rng.random())?;
            let batches = toy_batches(rng, &arch);
            let alpha = rng.random_range(0.05..1.0);
            let cmp = compare_model(
                &params,
                |g, model| Ok(learning_objective(g, model, &batches, alpha)?.total),
                fault,
            )?;
            Ok((cmp, format!("{} weights", params.num_params())))
        }
    }
}

/// Runs `instances` seeded checks of each composite.
pub fn check_composites(
    instances: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::with_capacity(COMPOSITES.len());
    for (k, name) in COMPOSITES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(500 + k as u64);
        let mut report = CheckReport {
            name: name.to_string(),
            instances: 0,
            worst_rel_err: 0.0,
            worst_shapes: String::new(),
            tolerance: COMPOSITE_TOLERANCE,
        };
        while report.instances < instances {
            let (cmp, shape) = instance(k, &mut rng, fault)?;
            if cmp.kink_gap < KINK_MARGIN {
                continue;
            }
            report.instances += 1;
            if cmp.rel_err >= report.worst_rel_err {
                report.worst_rel_err = cmp.rel_err;
                report.worst_shapes = shape;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Ops then composites.
pub fn check_all(instances: usize, seed: u64, fault: Option<Fault>) -> Result<Vec<CheckReport>> {
    let mut reports = check_ops(instances, seed, fault)?;
    reports.extend(check_composites(instances, seed, fault)?);
    Ok(reports)
}

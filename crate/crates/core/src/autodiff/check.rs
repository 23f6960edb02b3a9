//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values on fresh graphs, so it
//! shares nothing with the backward rules it is checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Fault, Graph, Matrix, Var};
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Points closer than this to a ReLU/|.|/clamp kink are resampled.
pub const KINK_MARGIN: f64 = 1e-3;
/// Tolerance for single ops.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for composite losses.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Comparison {
    pub rel_err: f64,
    pub kink_gap: f64,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)` over all concatenated entries.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Compares backward gradients of a scalar function of `inputs` with central
/// differences taken on every input entry.
pub fn compare<F>(inputs: &[Matrix], build: F, fault: Option<Fault>) -> Result<Comparison>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let (analytic, kink_gap) = {
        let mut g = Graph::new();
        if let Some(f) = fault {
            g.inject_fault(f);
        }
        let vars: Vec<Var> = inputs.iter().map(|m| g.param(m)).collect();
        let root = build(&mut g, &vars)?;
        g.backward(root)?;
        let mut flat = Vec::new();
        for &v in &vars {
            flat.extend_from_slice(g.grad(v).data());
        }
        (flat, g.kink_gap())
    };

    let eval = |perturbed: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|m| g.constant(m)).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.value(root).item())
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work: Vec<Matrix> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(Comparison {
        rel_err: relative_error(&analytic, &numeric),
        kink_gap,
    })
}

/// Outcome of checking one registered op (or composite) over many instances.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub worst_rel_err: f64,
    pub worst_shapes: String,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < self.tolerance
    }
}

type Generator = fn(&mut ChaCha8Rng) -> Vec<Matrix>;
type Builder = fn(&mut Graph<'_>, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    generate: Generator,
    build: Builder,
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=5)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Entries with magnitude in `[0.05, 2)` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let m = rng.random_range(0.05..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(out * weights)` with `weights` the last input.
fn project(g: &mut Graph<'_>, out: Var, weights: Var) -> Result<Var> {
    let prod = g.mul(out, weights)?;
    Ok(g.sum_all(prod))
}

fn registry() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            generate: |rng| {
                let (n, k, m) = (dim(rng), dim(rng), dim(rng));
                vec![
                    uniform(rng, n, k, -1.0, 1.0),
                    uniform(rng, k, m, -1.0, 1.0),
                    uniform(rng, n, m, -1.0, 1.0),
                ]
            },
            build: |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, v[2])
            },
        },
        OpCase {
            name: "add",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                (0..3).map(|_| uniform(rng, n, m, -1.0, 1.0)).collect()
            },
            build: |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, v[2])
            },
        },
        OpCase {
            name: "sub",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                (0..3).map(|_| uniform(rng, n, m, -1.0, 1.0)).collect()
            },
            build: |g, v| {
                let y = g.sub(v[0], v[1])?;
                project(g, y, v[2])
            },
        },
        OpCase {
            name: "mul",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                (0..3).map(|_| uniform(rng, n, m, -1.0, 1.0)).collect()
            },
            build: |g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, v[2])
            },
        },
        OpCase {
            name: "scale",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                (0..2).map(|_| uniform(rng, n, m, -1.0, 1.0)).collect()
            },
            build: |g, v| {
                let y = g.scale(v[0], -1.3);
                project(g, y, v[1])
            },
        },
        OpCase {
            name: "add_row",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![
                    uniform(rng, n, m, -1.0, 1.0),
                    uniform(rng, 1, m, -1.0, 1.0),
                    uniform(rng, n, m, -1.0, 1.0),
                ]
            },
            build: |g, v| {
                let y = g.add_row(v[0], v[1])?;
                project(g, y, v[2])
            },
        },
        OpCase {
            name: "relu",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![away_from_zero(rng, n, m), uniform(rng, n, m, -1.0, 1.0)]
            },
            build: |g, v| {
                let y = g.relu(v[0]);
                project(g, y, v[1])
            },
        },
        OpCase {
            name: "log",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![uniform(rng, n, m, 0.2, 3.0), uniform(rng, n, m, -1.0, 1.0)]
            },
            build: |g, v| {
                let y = g.log(v[0])?;
                project(g, y, v[1])
            },
        },
        OpCase {
            name: "clamp_min",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![away_from_zero(rng, n, m), uniform(rng, n, m, -1.0, 1.0)]
            },
            build: |g, v| {
                let y = g.clamp_min(v[0], 0.0);
                project(g, y, v[1])
            },
        },
        OpCase {
            name: "row_softmax",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng) + 1);
                vec![uniform(rng, n, m, -3.0, 3.0), uniform(rng, n, m, -1.0, 1.0)]
            },
            build: |g, v| {
                let y = g.row_softmax(v[0]);
                project(g, y, v[1])
            },
        },
        OpCase {
            name: "concat_cols",
            generate: |rng| {
                let (n, d1, d2) = (dim(rng), dim(rng), dim(rng));
                vec![
                    uniform(rng, n, d1, -1.0, 1.0),
                    uniform(rng, n, d2, -1.0, 1.0),
                    uniform(rng, n, d1 + d2, -1.0, 1.0),
                ]
            },
            build: |g, v| {
                let y = g.concat_cols(v[0], v[1])?;
                project(g, y, v[2])
            },
        },
        OpCase {
            name: "vstack",
            generate: |rng| {
                let (n1, n2, m) = (dim(rng), dim(rng), dim(rng));
                vec![
                    uniform(rng, n1, m, -1.0, 1.0),
                    uniform(rng, n2, m, -1.0, 1.0),
                    uniform(rng, n1 + n2, m, -1.0, 1.0),
                ]
            },
            build: |g, v| {
                let y = g.vstack(v[0], v[1])?;
                project(g, y, v[2])
            },
        },
        OpCase {
            name: "transpose",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![uniform(rng, n, m, -1.0, 1.0), uniform(rng, m, n, -1.0, 1.0)]
            },
            build: |g, v| {
                let y = g.transpose(v[0]);
                project(g, y, v[1])
            },
        },
        OpCase {
            name: "mean_rows",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![uniform(rng, n, m, -1.0, 1.0)]
            },
            build: |g, v| g.mean_rows(v[0]),
        },
        OpCase {
            name: "sum_all",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![uniform(rng, n, m, -1.0, 1.0)]
            },
            build: |g, v| Ok(g.sum_all(v[0])),
        },
        OpCase {
            name: "l1_rowdiff_mean",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                let p = uniform(rng, n, m, -1.0, 1.0);
                let q = p.zip_map(&away_from_zero(rng, n, m), |a, d| a + d);
                vec![p, q]
            },
            build: |g, v| g.l1_rowdiff_mean(v[0], v[1]),
        },
        OpCase {
            name: "frob_sq",
            generate: |rng| {
                let (n, m) = (dim(rng), dim(rng));
                vec![uniform(rng, n, m, -1.0, 1.0)]
            },
            build: |g, v| Ok(g.frob_sq(v[0])),
        },
    ]
}

/// Names of every op covered by [`check_ops`], in report order.
pub fn registered_ops() -> Vec<&'static str> {
    registry().iter().map(|c| c.name).collect()
}

fn shapes(inputs: &[Matrix]) -> String {
    inputs
        .iter()
        .map(|m| format!("{}x{}", m.rows(), m.cols()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Runs `instances` seeded random checks per registered op.
pub fn check_ops(instances: usize, seed: u64, fault: Option<Fault>) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (k, case) in registry().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut report = CheckReport {
            name: case.name.to_string(),
            instances: 0,
            worst_rel_err: 0.0,
            worst_shapes: String::new(),
            tolerance: OP_TOLERANCE,
        };
        while report.instances < instances {
            let inputs = (case.generate)(&mut rng);
            let cmp = compare(&inputs, case.build, fault)?;
            if cmp.kink_gap < KINK_MARGIN {
                continue;
            }
            report.instances += 1;
            if cmp.rel_err >= report.worst_rel_err {
                report.worst_rel_err = cmp.rel_err;
                report.worst_shapes = shapes(&inputs);
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are expected to fail and do not fail the
//! target; any other failure does. A known-red criterion that starts passing
//! is reported so the list can shrink.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dacl::autodiff::Graph;
use dacl::data::{generate_synthetic, SynthSpec};
use dacl::eval::{run_mdtc, run_mdtc_baseline, run_uda, run_uda_baseline};
use dacl::gradcheck::check_all;
use dacl::losses::{classification_loss, discrepancy_loss, domain_adv_loss, separation_loss};
use dacl::model::{Architecture, FeatureVars, Group};
use dacl::trainer::{Ablation, BatchSampler, TrainConfig, Trainer};
use dacl::Matrix;

/// Finite-difference instances per op and per composite.
const GRAD_INSTANCES: usize = 20;
const GRAD_BUDGET_S: f64 = 60.0;
const ISOLATION_STEPS: usize = 50;
const LOSS_TOL: f64 = 1e-9;
const SEEDS: u64 = 5;
/// Required mean advantage of the full model over the MLP baseline.
const MDTC_MARGIN: f64 = 0.03;
const MDTC_BUDGET_S: f64 = 600.0;
const UDA_TARGET: usize = 3;

/// Criteria that fail on the current implementation, with the reason.
const KNOWN_RED: &[(u32, &str)] = &[(
    6,
    "adaptation collapses: the discrepancy game kills shared ReLU features before the target benefits",
)];

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn bench_arch() -> Architecture {
    Architecture {
        vocab_size: 500,
        extractor_hidden: vec![256, 128],
        ..Architecture::default()
    }
}

fn bench_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        arch: bench_arch(),
        ..TrainConfig::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_all(v: &[f64]) -> String {
    v.iter()
        .map(|a| format!("{:.4}", a))
        .collect::<Vec<_>>()
        .join(" ")
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let reports = check_all(GRAD_INSTANCES, 7, None).expect("gradient check runs");
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed() || r.instances < GRAD_INSTANCES)
        .map(|r| format!("{} {:.2e}", r.name, r.worst_rel_err))
        .collect();
    let worst = reports
        .iter()
        .max_by(|a, b| (a.worst_rel_err / a.tolerance).total_cmp(&(b.worst_rel_err / b.tolerance)))
        .expect("at least one check");
    Outcome {
        id: 1,
        name: "gradient oracle",
        passed: failed.is_empty() && secs < GRAD_BUDGET_S,
        detail: format!(
            "{} checks x {GRAD_INSTANCES} instances, worst {} {:.2e} (tol {:.0e}), {secs:.1}s{}",
            reports.len(),
            worst.name,
            worst.worst_rel_err,
            worst.tolerance,
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failed: {}", failed.join(", "))
            }
        ),
    }
}

fn groups(t: &Trainer) -> Vec<(Group, Vec<Matrix>)> {
    Group::ALL
        .iter()
        .map(|&g| (g, t.params().group_params(g).into_iter().cloned().collect()))
        .collect()
}

/// Groups whose weights differ between two snapshots.
fn moved(before: &[(Group, Vec<Matrix>)], after: &[(Group, Vec<Matrix>)]) -> Vec<Group> {
    before
        .iter()
        .zip(after)
        .filter(|((_, a), (_, b))| a != b)
        .map(|((g, _), _)| *g)
        .collect()
}

fn step_isolation() -> Outcome {
    use Group::*;
    let spec = SynthSpec {
        domains: 3,
        vocab_size: 120,
        labeled_per_domain: 24,
        unlabeled_per_domain: 40,
        valid_per_domain: 0,
        test_per_domain: 0,
        ..SynthSpec::default()
    };
    let (data, _) = generate_synthetic(&spec).expect("toy corpus");
    let mut violations = Vec::new();
    let mut moves = 0usize;
    for ablation in Ablation::ALL {
        let cfg = TrainConfig {
            ablation,
            lr: 1e-3,
            arch: Architecture {
                vocab_size: 120,
                extractor_hidden: vec![16],
                shared_dim: 8,
                domain_dim: 4,
                c1_hidden: 8,
                c2_hidden: 4,
                disc_hidden: 8,
                ..Architecture::default()
            },
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg.clone(), data.num_domains()).expect("trainer");
        let mut sampler = BatchSampler::new(&data, &cfg).expect("sampler");
        let frozen: [(&str, &[Group]); 3] = [
            ("l_step", &[Discriminator]),
            ("a_step", &[SharedExtractor, DomainExtractors]),
            ("r_step", &[Classifier1, Classifier2, Discriminator]),
        ];
        for step in 0..ISOLATION_STEPS {
            let batches = sampler.sample();
            for (name, forbidden) in frozen {
                let before = groups(&trainer);
                match name {
                    "l_step" => trainer.l_step(&batches),
                    "a_step" => trainer.a_step(&batches),
                    _ => trainer.r_step(&batches),
                }
                .expect("step runs");
                let changed = moved(&before, &groups(&trainer));
                moves += changed.len();
                for g in changed.iter().filter(|g| forbidden.contains(g)) {
                    violations.push(format!(
                        "{} {name} moved {g:?} at step {step}",
                        ablation.as_str()
                    ));
                }
            }
        }
    }
    Outcome {
        id: 2,
        name: "step isolation",
        passed: violations.is_empty() && moves > 0,
        detail: if violations.is_empty() {
            format!("{ISOLATION_STEPS} iterations x 3 variants, frozen groups bit-identical, {moves} group updates seen")
        } else {
            violations
                .into_iter()
                .take(3)
                .collect::<Vec<_>>()
                .join("; ")
        },
    }
}

fn loss_values() -> Outcome {
    let mut cases: Vec<(&str, f64, f64)> = Vec::new();
    let rows = |r: &[&[f64]]| Matrix::from_rows(r);
    let mut g = Graph::new();

    let p = g.leaf(rows(&[&[1.0, 0.0], &[0.0, 1.0]]), false);
    let v = classification_loss(&mut g, p, &[0, 1]).unwrap();
    cases.push(("lc perfect", g.value(v).item(), 0.0));
    let p = g.leaf(rows(&[&[0.5, 0.5]]), false);
    let v = classification_loss(&mut g, p, &[1]).unwrap();
    cases.push(("lc uniform", g.value(v).item(), std::f64::consts::LN_2));
    let p = g.leaf(rows(&[&[0.8, 0.2], &[0.3, 0.7]]), false);
    let v = classification_loss(&mut g, p, &[0, 1]).unwrap();
    cases.push((
        "lc hand",
        g.value(v).item(),
        (-(0.8f64).ln() - (0.7f64).ln()) / 2.0,
    ));

    let pair = |g: &mut Graph<'_>, s: &[&[f64]], d: &[&[f64]]| FeatureVars {
        shared: g.leaf(Matrix::from_rows(s), false),
        domain: g.leaf(Matrix::from_rows(d), false),
    };
    let f = pair(&mut g, &[&[1.0, 0.0, 0.0]], &[&[2.0, 0.0]]);
    let v = separation_loss(&mut g, &[f]).unwrap();
    cases.push(("lsep single", g.value(v).item(), 4.0));
    let f = pair(
        &mut g,
        &[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]],
        &[&[2.0, 0.0], &[2.0, 0.0]],
    );
    let v = separation_loss(&mut g, &[f]).unwrap();
    cases.push(("lsep cancellation", g.value(v).item(), 0.0));

    let uniform: Vec<_> = (0..4)
        .map(|_| g.leaf(Matrix::filled(3, 4, 0.25), false))
        .collect();
    let v = domain_adv_loss(&mut g, &uniform).unwrap();
    cases.push((
        "ladv_d uniform M=4",
        g.value(v).item(),
        4.0 * (0.25f64).ln(),
    ));
    let perfect: Vec<_> = (0..3)
        .map(|m| {
            g.leaf(
                Matrix::from_fn(2, 3, |_, c| if c == m { 1.0 } else { 0.0 }),
                false,
            )
        })
        .collect();
    let v = domain_adv_loss(&mut g, &perfect).unwrap();
    cases.push(("ladv_d perfect", g.value(v).item(), 0.0));
    let a = g.leaf(rows(&[&[0.7, 0.3]]), false);
    let b = g.leaf(rows(&[&[0.4, 0.6]]), false);
    let v = domain_adv_loss(&mut g, &[a, b]).unwrap();
    cases.push((
        "ladv_d hand",
        g.value(v).item(),
        (0.7f64).ln() + (0.6f64).ln(),
    ));

    let p = g.leaf(rows(&[&[0.6, 0.4]]), false);
    let v = discrepancy_loss(&mut g, &[(p, p)]).unwrap();
    cases.push(("ladv_u identical", g.value(v).item(), 0.0));
    let a = g.leaf(rows(&[&[1.0, 0.0], &[1.0, 0.0]]), false);
    let b = g.leaf(rows(&[&[0.0, 1.0], &[0.0, 1.0]]), false);
    let v = discrepancy_loss(&mut g, &[(a, b)]).unwrap();
    cases.push(("ladv_u maximum", g.value(v).item(), 2.0));
    let a = g.leaf(rows(&[&[0.6, 0.4]]), false);
    let b = g.leaf(rows(&[&[0.4, 0.6]]), false);
    let v = discrepancy_loss(&mut g, &[(a, b)]).unwrap();
    cases.push(("ladv_u hand", g.value(v).item(), 0.4));

    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > LOSS_TOL)
        .map(|(n, got, want)| format!("{n}: {got} vs {want}"))
        .collect();
    Outcome {
        id: 3,
        name: "loss values",
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{} cases within {LOSS_TOL:e}", cases.len())
        } else {
            bad.join("; ")
        },
    }
}

struct Benchmark {
    full: Vec<f64>,
    no_d: Vec<f64>,
    no_c2: Vec<f64>,
    mlp: Vec<f64>,
    mdtc_secs: f64,
}

fn run_benchmark() -> Benchmark {
    let mut b = Benchmark {
        full: Vec::new(),
        no_d: Vec::new(),
        no_c2: Vec::new(),
        mlp: Vec::new(),
        mdtc_secs: 0.0,
    };
    for seed in 0..SEEDS {
        let (data, _) = generate_synthetic(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })
        .expect("benchmark corpus");
        let cfg = bench_config(seed);
        let t = Instant::now();
        b.full
            .push(run_mdtc(&data, &cfg, 1, 1).expect("full run").average);
        b.mlp.push(
            run_mdtc_baseline(&data, &cfg, 1)
                .expect("baseline run")
                .average,
        );
        b.mdtc_secs += t.elapsed().as_secs_f64();
        for (ablation, out) in [
            (Ablation::NoDiscriminator, &mut b.no_d),
            (Ablation::NoSecondClassifier, &mut b.no_c2),
        ] {
            let arm = TrainConfig {
                ablation,
                ..cfg.clone()
            };
            out.push(run_mdtc(&data, &arm, 1, 1).expect("ablation run").average);
        }
    }
    b
}

fn mdtc_benefit(b: &Benchmark) -> Outcome {
    let (full, mlp) = (mean(&b.full), mean(&b.mlp));
    Outcome {
        id: 4,
        name: "synthetic MDTC benefit",
        passed: full - mlp >= MDTC_MARGIN && b.mdtc_secs < MDTC_BUDGET_S,
        detail: format!(
            "dacl {full:.4} [{}] vs mlp {mlp:.4} [{}], gap {:+.2} points (need {:+.0}), {:.0}s",
            fmt_all(&b.full),
            fmt_all(&b.mlp),
            100.0 * (full - mlp),
            100.0 * MDTC_MARGIN,
            b.mdtc_secs
        ),
    }
}

fn ablation_order(b: &Benchmark) -> Outcome {
    let (full, no_d, no_c2) = (mean(&b.full), mean(&b.no_d), mean(&b.no_c2));
    Outcome {
        id: 5,
        name: "ablation ordering",
        passed: full >= no_d && full >= no_c2,
        detail: format!(
            "full {full:.4} no-d {no_d:.4} [{}] no-c2 {no_c2:.4} [{}]",
            fmt_all(&b.no_d),
            fmt_all(&b.no_c2)
        ),
    }
}

fn uda_benefit() -> Outcome {
    let (mut dacl, mut mlp, mut leaked) = (Vec::new(), Vec::new(), 0u64);
    for seed in 0..SEEDS {
        let spec = SynthSpec {
            seed,
            domains: 4,
            flipped_words: 0,
            ..SynthSpec::default()
        };
        let (data, _) = generate_synthetic(&spec).expect("adaptation corpus");
        let cfg = bench_config(seed);
        let name = &data.domains[UDA_TARGET].name;
        let run = run_uda(&data, UDA_TARGET, &cfg).expect("adaptation run");
        leaked += run.label_reads[UDA_TARGET];
        dacl.push(run.report.accuracy_of(name).expect("target scored"));
        let base = run_uda_baseline(&data, UDA_TARGET, &cfg).expect("baseline run");
        mlp.push(base.accuracy_of(name).expect("target scored"));
    }
    let (d, m) = (mean(&dacl), mean(&mlp));
    Outcome {
        id: 6,
        name: "UDA benefit",
        passed: d >= m && leaked == 0,
        detail: format!(
            "target d{UDA_TARGET}: dacl {d:.4} [{}] vs mlp {m:.4} [{}], target labels read {leaked}",
            fmt_all(&dacl),
            fmt_all(&mlp)
        ),
    }
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dacl"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let config = dir.path().join("c.txt");
    fs::write(
        &config,
        "extractor_hidden=32\nepochs=3\nseed=11\nthreads=1\n",
    )
    .expect("config");
    let ok = run_cli(&[
        "synth",
        "--out",
        &p("data"),
        "--seed",
        "4",
        "--labeled",
        "40",
        "--unlabeled",
        "120",
        "--valid",
        "20",
        "--test",
        "60",
    ]) && run_cli(&[
        "train",
        "--config",
        &p("c.txt"),
        "--data",
        &p("data/manifest.tsv"),
        "--out",
        &p("a"),
    ]) && run_cli(&[
        "train",
        "--config",
        &p("a/run_manifest.txt"),
        "--out",
        &p("b"),
    ]);
    let same = |f: &str| {
        let read = |d: &str| fs::read(Path::new(&p(d)).join(f)).ok();
        read("a").is_some() && read("a") == read("b")
    };
    let files = ["report.csv", "report.txt", "snapshot.bin"];
    let identical: Vec<&str> = files.iter().copied().filter(|f| same(f)).collect();
    Outcome {
        id: 7,
        name: "determinism",
        passed: ok && identical.len() == files.len(),
        detail: format!(
            "second run replayed from the first run's manifest; identical: {}",
            if identical.is_empty() {
                "none".into()
            } else {
                identical.join(", ")
            }
        ),
    }
}

fn main() {
    let started = Instant::now();
    let mut outcomes = vec![gradient_oracle(), step_isolation(), loss_values()];
    let bench = run_benchmark();
    outcomes.push(mdtc_benefit(&bench));
    outcomes.push(ablation_order(&bench));
    outcomes.push(uda_benefit());
    outcomes.push(determinism());

    let mut unexpected = 0;
    for o in &outcomes {
        let known = KNOWN_RED.iter().find(|(id, _)| *id == o.id);
        let tag = match (o.passed, known) {
            (true, None) => "PASS",
            (true, Some(_)) => "PASS (listed as known red; remove it)",
            (false, Some(_)) => "FAIL (known red)",
            (false, None) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {} {}: {tag}: {}", o.id, o.name, o.detail);
        if let (false, Some((_, why))) = (o.passed, known) {
            println!("    reason: {why}");
        }
    }
    println!("criterion 8 Amazon reproduction: not run here; see scripts/reproduce_amazon.sh");
    println!(
        "acceptance finished in {:.0}s",
        started.elapsed().as_secs_f64()
    );
    if unexpected > 0 {
        println!("{unexpected} criteria failed unexpectedly");
        std::process::exit(1);
    }
}

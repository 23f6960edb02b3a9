use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dacl::autodiff::check::CheckReport;
use dacl::autodiff::Fault;
use dacl::config::{RunConfig, RunManifest};
use dacl::data::{generate_synthetic, load_corpus, write_corpus, MultiDomainDataset, SynthSpec};
use dacl::eval::{
    evaluate, fold_views, reports_csv, reports_table, run_parallel, run_uda_baseline, sweep_csv,
    train_and_evaluate, uda_view, EvalReport, SweepParam,
};
use dacl::gradcheck::check_all;
use dacl::trainer::{write_metrics, Ablation, TrainConfig};
use dacl::{snapshot, Error, Result};

const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "dacl",
    version,
    about = "Dual adversarial co-learning for multi-domain text classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference check of every op, loss and the learning step.
    Gradcheck(GradcheckArgs),
    /// Write a seeded synthetic multi-domain corpus.
    Synth(SynthArgs),
    /// Train and score one model per fold.
    Train(RunArgs),
    /// Score a saved snapshot on the test pools.
    Eval(EvalArgs),
    /// Train the full model and both ablations with one seed.
    Ablate(RunArgs),
    /// Adapt to an unlabeled target domain and compare with the pooled-source MLP.
    Uda(RunArgs),
    /// Vary alpha or gamma over a grid.
    Sweep(SweepArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FaultArg {
    MatmulSign,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random instances per op and per composite.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    labeled: Option<usize>,
    #[arg(long)]
    unlabeled: Option<usize>,
    #[arg(long)]
    valid: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    shared_words: Option<usize>,
    #[arg(long)]
    flipped_words: Option<usize>,
    #[arg(long)]
    marker_words: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    signal_on: Option<f64>,
    #[arg(long)]
    signal_off: Option<f64>,
    #[arg(long)]
    marker_rate: Option<f64>,
    #[arg(long)]
    background_rate: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AblationArg {
    None,
    NoD,
    NoC2,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::None => Ablation::None,
            AblationArg::NoD => Ablation::NoDiscriminator,
            AblationArg::NoC2 => Ablation::NoSecondClassifier,
        }
    }
}

/// Flags shared by every training command; each overrides the config file.
#[derive(Args, Debug)]
struct RunArgs {
    /// Flat key=value file; a run manifest is accepted as is.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Corpus manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    /// Target domain name.
    #[arg(long)]
    uda_target: Option<String>,
    #[arg(long)]
    binarize: bool,
    /// Concurrent independent runs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run manifest or config of the run that produced the snapshot.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fold whose test pools are scored.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ParamArg {
    Alpha,
    Gamma,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    param: ParamArg,
    /// Comma-separated grid; defaults to 0.001,0.01,0.1,1,10.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.alpha {
        t.hyper.alpha = v;
    }
    if let Some(v) = args.gamma {
        t.hyper.gamma = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.batch {
        t.batch_size = v;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.ablation {
        t.ablation = v.into();
    }
    if args.binarize {
        t.binarize = true;
    }
    if let Some(v) = &args.data {
        cfg.data = Some(v.clone());
    }
    if let Some(v) = args.folds {
        cfg.folds = v;
    }
    if let Some(v) = &args.uda_target {
        cfg.uda_target = Some(v.clone());
    }
    if let Some(v) = args.threads {
        cfg.threads = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the corpus and takes the input width from it.
fn load_data(cfg: &mut RunConfig) -> Result<MultiDomainDataset> {
    let path = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("no corpus given (--data or data= in the config)".into()))?;
    let data = load_corpus(&path)?;
    cfg.train.arch.vocab_size = data.vocab_size;
    cfg.train.validate()?;
    Ok(data)
}

fn target_index(cfg: &RunConfig, data: &MultiDomainDataset) -> Result<Option<usize>> {
    cfg.uda_target
        .as_deref()
        .map(|name| data.domain_index(name))
        .transpose()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> Result<String> {
    let table = reports_table(reports);
    write_text(&out.join("report.csv"), &reports_csv(reports))?;
    write_text(&out.join("report.txt"), &table)?;
    Ok(table)
}

/// Trains every view, writing per-run metrics and best snapshot under
/// `prefix`, and returns the per-domain mean report.
fn train_views(
    views: &[MultiDomainDataset],
    config: &TrainConfig,
    out: &Path,
    prefix: &str,
    threads: usize,
) -> Result<EvalReport> {
    let jobs: Vec<_> = views
        .iter()
        .enumerate()
        .map(|(k, view)| {
            let suffix = if views.len() > 1 {
                format!("_fold{k}")
            } else {
                String::new()
            };
            move || {
                let (report, outcome) = train_and_evaluate(view, config)?;
                write_metrics(
                    &out.join(format!("{prefix}metrics{suffix}.csv")),
                    &outcome.reports,
                )?;
                snapshot::save(
                    &outcome.best,
                    &out.join(format!("{prefix}snapshot{suffix}.bin")),
                )?;
                Ok(report)
            }
        })
        .collect();
    let reports = run_parallel(threads, jobs)?;
    let mut mean = EvalReport::mean(&reports)?;
    if reports.len() > 1 {
        mean.notes
            .push(format!("mean over {} folds", reports.len()));
    }
    Ok(mean)
}

/// Training views and the resolved config for an MDTC or adaptation run.
fn prepare(
    cfg: &RunConfig,
    data: &MultiDomainDataset,
) -> Result<(Vec<MultiDomainDataset>, TrainConfig)> {
    let mut train = cfg.train.clone();
    match target_index(cfg, data)? {
        Some(t) => {
            train.uda_target = Some(t);
            Ok((vec![uda_view(data, t, train.seed)?], train))
        }
        None => Ok((fold_views(data, cfg.folds, train.seed)?, train)),
    }
}

fn start(command: &str, args: &RunArgs) -> Result<(RunConfig, MultiDomainDataset)> {
    let mut cfg = resolve(args)?;
    let data = load_data(&mut cfg)?;
    target_index(&cfg, &data)?;
    create_dir(&args.out)?;
    RunManifest::new(command, &args.out, cfg.clone()).write(&args.out)?;
    Ok((cfg, data))
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let fault = args
        .inject_fault
        .map(|FaultArg::MatmulSign| Fault::MatmulBackwardSignFlip);
    let reports = check_all(args.instances, args.seed, fault)?;
    let print = |r: &CheckReport| {
        let status = if r.passed() { "ok  " } else { "FAIL" };
        println!(
            "{status} {:<22} instances {:>3}  worst rel err {:.3e}  (tol {:.0e})  shapes {}",
            r.name, r.instances, r.worst_rel_err, r.tolerance, r.worst_shapes
        );
    };
    reports.iter().for_each(print);
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        println!("{failed} of {} checks failed", reports.len());
        return Ok(ExitCode::from(EXIT_CHECK_FAILED));
    }
    println!("all {} checks passed", reports.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: &SynthArgs) -> Result<ExitCode> {
    let mut spec = SynthSpec::default();
    macro_rules! apply {
        ($($field:ident <- $arg:ident),* $(,)?) => {
            $(if let Some(v) = args.$arg { spec.$field = v; })*
        };
    }
    apply!(
        seed <- seed,
        domains <- domains,
        vocab_size <- vocab,
        labeled_per_domain <- labeled,
        unlabeled_per_domain <- unlabeled,
        valid_per_domain <- valid,
        test_per_domain <- test,
        shared_signal_words <- shared_words,
        flipped_words <- flipped_words,
        marker_words <- marker_words,
        noise_rate <- noise,
        signal_on <- signal_on,
        signal_off <- signal_off,
        marker_rate <- marker_rate,
        background_rate <- background_rate,
    );
    let (data, _) = generate_synthetic(&spec)?;
    let manifest = write_corpus(&data, &args.out)?;
    write_text(&args.out.join("meta.txt"), &spec.to_meta())?;
    println!(
        "wrote {} domains to {}",
        data.num_domains(),
        manifest.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: &RunArgs) -> Result<ExitCode> {
    let (cfg, data) = start("train", args)?;
    let (views, train) = prepare(&cfg, &data)?;
    let report = train_views(&views, &train, &args.out, "", cfg.threads)?;
    print!("{}", write_reports(&args.out, &[report])?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &EvalArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    cfg.validate()?;
    let data = load_data(&mut cfg)?;
    let (views, train) = prepare(&cfg, &data)?;
    let view = views.get(args.fold).ok_or(Error::Range {
        what: "fold",
        index: args.fold,
        len: views.len(),
    })?;
    let params = snapshot::load(&args.snapshot)?;
    if params.arch != train.arch || params.components() != train.components(view.num_domains()) {
        return Err(Error::Snapshot(
            "snapshot does not match the configured architecture".into(),
        ));
    }
    let acc = evaluate(&params, view, &train)?;
    let report = EvalReport::new("dacl", view.names(), acc, &train);
    match &args.out {
        Some(out) => {
            create_dir(out)?;
            print!("{}", write_reports(out, &[report])?);
        }
        None => print!("{}", reports_table(&[report])),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: &RunArgs) -> Result<ExitCode> {
    let (cfg, data) = start("ablate", args)?;
    let (views, train) = prepare(&cfg, &data)?;
    let reports = Ablation::ALL
        .into_iter()
        .map(|ablation| {
            let arm = TrainConfig {
                ablation,
                ..train.clone()
            };
            train_views(
                &views,
                &arm,
                &args.out,
                &format!("{}_", ablation.as_str()),
                cfg.threads,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", write_reports(&args.out, &reports)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_uda(args: &RunArgs) -> Result<ExitCode> {
    let (cfg, data) = start("uda", args)?;
    let target =
        target_index(&cfg, &data)?.ok_or_else(|| Error::Config("uda needs --uda-target".into()))?;
    let (views, train) = prepare(&cfg, &data)?;
    let mut dacl = train_views(&views, &train, &args.out, "", 1)?;
    dacl.method = "dacl-uda".into();
    let held_out = &views[0].domains[target];
    dacl.notes.push(format!(
        "target {:?}: labeled examples joined the unlabeled pool without labels; {} test examples",
        held_out.name,
        held_out.test.len()
    ));
    let base = run_uda_baseline(&data, target, &cfg.train)?;
    let name = &data.domains[target].name;
    let summary = format!(
        "target {name}: dacl {:.2}  mlp {:.2}\n",
        100.0 * dacl.accuracy_of(name).unwrap_or(f64::NAN),
        100.0 * base.accuracy_of(name).unwrap_or(f64::NAN)
    );
    print!("{}{summary}", write_reports(&args.out, &[dacl, base])?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let (cfg, data) = start("sweep", &args.run)?;
    let (views, train) = prepare(&cfg, &data)?;
    let param = match args.param {
        ParamArg::Alpha => SweepParam::Alpha,
        ParamArg::Gamma => SweepParam::Gamma,
    };
    let values = if args.values.is_empty() {
        dacl::eval::SweepSpec::new(param).values
    } else {
        args.values.clone()
    };
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config("sweep values must be positive".into()));
    }
    let results = values
        .iter()
        .map(|&v| {
            let mut point = train.clone();
            match param {
                SweepParam::Alpha => point.hyper.alpha = v,
                SweepParam::Gamma => point.hyper.gamma = v,
            }
            let prefix = format!("{}{v}_", param.as_str());
            let mut r = train_views(&views, &point, &args.run.out, &prefix, cfg.threads)?;
            r.method = format!("{}={v}", param.as_str());
            Ok((v, r))
        })
        .collect::<Result<Vec<_>>>()?;
    write_text(&args.run.out.join("sweep.csv"), &sweep_csv(param, &results))?;
    let reports: Vec<EvalReport> = results.into_iter().map(|(_, r)| r).collect();
    print!("{}", write_reports(&args.run.out, &reports)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Uda(a) => cmd_uda(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use tensynth::bench::{self, Benchmark};
use tensynth::datagen::{
    feasible_sequences, manifest_path, read_dataset, write_dataset, write_manifest, Dataset,
    DatasetManifest, GenConfig,
};
use tensynth::encoding::{encode_spec, tensors};
use tensynth::nn::{
    train_multilabel, train_seq, weights_kind, MultiLabelModel, SeqHyper, SeqModel, TrainConfig,
};
use tensynth::search::{synthesize, Limits, Models, Status, Strategy};
use tensynth::{Registry, TaskSpec};

#[derive(Parser)]
#[command(
    name = "tensynth",
    version,
    about = "Synthesize tensor programs from input/output examples"
)]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// `core16` or a comma-separated list of op names.
    #[arg(long, global = true)]
    registry: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe op sequences for feasibility and generate a dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_len: usize,
        #[arg(long, default_value_t = 1000)]
        samples_per_seq: usize,
        #[arg(long, default_value_t = 200)]
        probe_trials: usize,
    },
    /// Train a sequence or multi-label model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Seq)]
        mode: Mode,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 3)]
        patience: usize,
    },
    /// Search for a program satisfying one specification.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "enum")]
        strategy: Strategy,
        /// Sequence or multi-label weights, whichever the strategy needs.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Seconds before giving up.
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
        #[arg(long, default_value_t = 400)]
        max_cost: u32,
        /// Fall back to plain enumeration when a guided strategy fails.
        #[arg(long)]
        fallback: bool,
    },
    /// Run strategies over a benchmark suite and write a report.
    Bench {
        /// Suite file; the bundled core suite when omitted.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "enum")]
        strategies: Vec<Strategy>,
        /// Sequence model weights.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        multilabel_model: Option<PathBuf>,
        /// Report path; `.md` writes markdown, anything else JSON.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
        #[arg(long, default_value_t = 400)]
        max_cost: u32,
        #[arg(long)]
        fallback: bool,
        /// Zero all wall times so reports from identical runs match.
        #[arg(long)]
        omit_timings: bool,
    },
    /// Top-k accuracy of a sequence model on a dataset split.
    EvalModel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_delimiter = ',', default_value = "1,3,10")]
        k: Vec<usize>,
        /// Also rank the expected sequences of this suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the encoded vector of a specification as comma-separated values.
    Encode {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Export matched hidden-state pairs and their cosine statistics.
    ProbeHidden {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Seq,
    Multilabel,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

/// Raised when a search ends without a program; maps to exit code 1.
#[derive(Debug)]
struct SearchFailed(Status);

impl std::fmt::Display for SearchFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no program found ({:?})", self.0)
    }
}

impl std::error::Error for SearchFailed {}

fn registry(flag: Option<&str>) -> Result<Registry> {
    match flag {
        None | Some("core16") => Ok(Registry::core16()),
        Some(list) => Registry::parse(list).with_context(|| format!("bad --registry `{list}`")),
    }
}

fn split(data: &Dataset, which: SplitArg) -> &[tensynth::datagen::DatasetRecord] {
    match which {
        SplitArg::Train => &data.train,
        SplitArg::Valid => &data.valid,
        SplitArg::Test => &data.test,
    }
}

fn read_spec(path: &Path) -> Result<TaskSpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing spec {}", path.display()))
}

fn limits(timeout: f64, max_cost: u32, fallback: bool) -> Result<Limits> {
    if !(timeout > 0.0 && timeout.is_finite()) {
        bail!("--timeout must be positive");
    }
    Ok(Limits {
        timeout: Duration::from_secs_f64(timeout),
        max_cost,
        fallback,
        ..Limits::default()
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

struct LoadedModels {
    seq: Option<SeqModel<f32>>,
    multilabel: Option<MultiLabelModel<f32>>,
}

impl LoadedModels {
    fn models(&self) -> Models<'_> {
        Models {
            seq: self.seq.as_ref(),
            multilabel: self.multilabel.as_ref(),
        }
    }
}

/// Loads a weights file of either kind.
fn load_any(path: &Path, into: &mut LoadedModels) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match weights_kind(&bytes)?.as_str() {
        "seq" => into.seq = Some(SeqModel::from_bytes(&bytes)?),
        _ => into.multilabel = Some(MultiLabelModel::from_bytes(&bytes)?),
    }
    Ok(())
}

fn gen_data(
    cli: &Cli,
    out: &Path,
    max_len: usize,
    samples_per_seq: usize,
    probe_trials: usize,
) -> Result<()> {
    let registry = registry(cli.registry.as_deref())?;
    let cfg = GenConfig {
        samples_per_seq,
        probe_trials,
        seed: cli.seed,
        ..GenConfig::default()
    };
    let census = feasible_sequences(&registry, max_len, &cfg);
    log::info!(
        "{} of {} sequences feasible",
        census.feasible.len(),
        census.candidates
    );
    let data = tensynth::datagen::generate_dataset(&census.feasible, &cfg)?;
    write_dataset(out, &data)?;
    let totals = [
        ("train", data.train.len()),
        ("valid", data.valid.len()),
        ("test", data.test.len()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let manifest = DatasetManifest {
        version: 1,
        config: cfg,
        registry: registry.names().iter().map(|s| s.to_string()).collect(),
        max_len,
        census: Some(census),
        totals,
        sequences: data.stats,
    };
    write_manifest(&manifest_path(out), &manifest)?;
    println!(
        "{} train, {} valid, {} test records over {} sequences",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        manifest.sequences.len()
    );
    Ok(())
}

/// Registry from the flag, else from the dataset manifest, else core16.
fn training_registry(cli: &Cli, data: &Path) -> Result<Registry> {
    if cli.registry.is_some() {
        return registry(cli.registry.as_deref());
    }
    match std::fs::read_to_string(manifest_path(data)) {
        Ok(text) => {
            let manifest: DatasetManifest =
                serde_json::from_str(&text).context("parsing dataset manifest")?;
            Ok(Registry::from_names(&manifest.registry)?)
        }
        Err(_) => Ok(Registry::core16()),
    }
}

#[allow(clippy::too_many_arguments)]
fn train(
    cli: &Cli,
    data_path: &Path,
    out: &Path,
    mode: Mode,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    patience: usize,
) -> Result<()> {
    let registry = training_registry(cli, data_path)?;
    let data =
        read_dataset(data_path).with_context(|| format!("reading {}", data_path.display()))?;
    let cfg = TrainConfig {
        epochs,
        lr,
        batch_size,
        patience,
        seed: cli.seed,
        hyper: SeqHyper::default(),
    };
    let (bytes, report, mode_name) = match mode {
        Mode::Seq => {
            let (m, r) = train_seq(&data.train, &data.valid, &registry, &cfg)?;
            (m.to_bytes(), r, "seq")
        }
        Mode::Multilabel => {
            let (m, r) = train_multilabel(&data.train, &data.valid, &registry, &cfg)?;
            (m.to_bytes(), r, "multilabel")
        }
    };
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    let mut report_path = out.as_os_str().to_os_string();
    report_path.push(".report.json");
    let record = json!({
        "mode": mode_name,
        "data": data_path.display().to_string(),
        "registry": registry.names(),
        "config": cfg,
        "report": report,
    });
    write_text(
        Path::new(&report_path),
        &(serde_json::to_string_pretty(&record)? + "\n"),
    )?;
    if let Some(last) = report.history.iter().find(|e| e.epoch == report.best_epoch) {
        println!(
            "best epoch {}: valid loss {:.4}{}",
            last.epoch,
            last.valid_loss,
            last.valid_top1
                .map(|t| format!(", valid top-1 {t:.4}"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn synth(
    cli: &Cli,
    spec: &Path,
    strategy: Strategy,
    model: Option<&Path>,
    limits: Limits,
) -> Result<()> {
    let registry = registry(cli.registry.as_deref())?;
    let spec = read_spec(spec)?;
    let mut loaded = LoadedModels {
        seq: None,
        multilabel: None,
    };
    if let Some(path) = model {
        load_any(path, &mut loaded)?;
    }
    let r = synthesize(&spec, strategy, &registry, loaded.models(), &limits)?;
    log::info!("{strategy}: {:?} in {:.3}s", r.status, r.stats.elapsed_secs);
    let record = json!({
        "status": r.status,
        "program": r.program.as_ref().map(|p| p.render()),
        "cost": r.cost,
        "candidates": r.stats.candidates,
        "model_invocations": r.stats.model_invocations,
        "pool_size": r.stats.pool_size,
        "strategy": strategy,
        "registry": registry.names(),
        "limits": {
            "timeout_secs": limits.timeout.as_secs_f64(),
            "max_cost": limits.max_cost,
            "beam_width": limits.beam_width,
            "node_budget": limits.node_budget,
            "fallback": limits.fallback,
        },
    });
    if let Some(p) = &r.program {
        println!("{p}");
    }
    println!("{}", serde_json::to_string(&record)?);
    if r.status != Status::Found {
        return Err(SearchFailed(r.status).into());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_bench(
    cli: &Cli,
    suite: Option<&Path>,
    strategies: &[Strategy],
    model: Option<&Path>,
    multilabel_model: Option<&Path>,
    report: &Path,
    limits: Limits,
    omit_timings: bool,
) -> Result<()> {
    let registry = registry(cli.registry.as_deref())?;
    let suite: Vec<Benchmark> = match suite {
        Some(p) => bench::load_suite(p)?,
        None => bench::core_suite(),
    };
    let suite = bench::filter_suite(&suite, &registry);
    let mut loaded = LoadedModels {
        seq: None,
        multilabel: None,
    };
    for path in [model, multilabel_model].into_iter().flatten() {
        load_any(path, &mut loaded)?;
    }
    let mut out = bench::run_suite(
        &suite,
        strategies,
        &registry,
        loaded.models(),
        &limits,
        cli.seed,
    );
    if omit_timings {
        out = out.without_timings();
    }
    let text = if report.extension().is_some_and(|e| e == "md") {
        out.to_markdown()
    } else {
        out.to_json()
    };
    write_text(report, &text)?;
    for s in &out.summaries {
        println!(
            "{}: {} found, {} not found",
            s.strategy, s.found, s.not_found
        );
    }
    Ok(())
}

fn eval_model(
    cli: &Cli,
    model: &Path,
    data: &Path,
    which: SplitArg,
    k: &[usize],
    suite: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let model = SeqModel::load(model)?;
    let data = read_dataset(data)?;
    let records = split(&data, which);
    let report = bench::eval_model(&model, records, k);
    let suite_acc = match suite {
        Some(p) => Some(bench::suite_accuracy(
            &model,
            &bench::filter_suite(&bench::load_suite(p)?, &model.registry),
            Limits::default().beam_width,
        )),
        None => None,
    };
    let record = json!({
        "seed": cli.seed,
        "registry": model.registry.names(),
        "records": report.records,
        "top": report.top,
        "suite": suite_acc,
    });
    let text = serde_json::to_string_pretty(&record)? + "\n";
    match out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn encode(spec: &Path) -> Result<()> {
    let spec = read_spec(spec)?;
    let enc = encode_spec(&tensors(&spec.inputs), &spec.output)?;
    println!("{}", enc.to_csv());
    Ok(())
}

fn probe_hidden(
    cli: &Cli,
    model: &Path,
    data: &Path,
    which: SplitArg,
    pairs: usize,
    out: &Path,
) -> Result<()> {
    let model = SeqModel::load(model)?;
    let data = read_dataset(data)?;
    let report = bench::probe_hidden(&model, split(&data, which), pairs, cli.seed);
    write_text(out, &(serde_json::to_string(&report)? + "\n"))?;
    println!(
        "{} pairs: matched cosine {:.4}, shuffled {:.4}, gap {:.4}",
        report.pairs, report.mean_matched, report.mean_shuffled, report.gap
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData {
            out,
            max_len,
            samples_per_seq,
            probe_trials,
        } => gen_data(cli, out, *max_len, *samples_per_seq, *probe_trials),
        Command::Train {
            data,
            out,
            mode,
            epochs,
            lr,
            batch_size,
            patience,
        } => train(cli, data, out, *mode, *epochs, *lr, *batch_size, *patience),
        Command::Synth {
            spec,
            strategy,
            model,
            timeout,
            max_cost,
            fallback,
        } => synth(
            cli,
            spec,
            *strategy,
            model.as_deref(),
            limits(*timeout, *max_cost, *fallback)?,
        ),
        Command::Bench {
            suite,
            strategies,
            model,
            multilabel_model,
            report,
            timeout,
            max_cost,
            fallback,
            omit_timings,
        } => run_bench(
            cli,
            suite.as_deref(),
            strategies,
            model.as_deref(),
            multilabel_model.as_deref(),
            report,
            limits(*timeout, *max_cost, *fallback)?,
            *omit_timings,
        ),
        Command::EvalModel {
            model,
            data,
            split,
            k,
            suite,
            out,
        } => eval_model(
            cli,
            model,
            data,
            *split,
            k,
            suite.as_deref(),
            out.as_deref(),
        ),
        Command::Encode { spec } => encode(spec),
        Command::ProbeHidden {
            model,
            data,
            split,
            pairs,
            out,
        } => probe_hidden(cli, model, data, *split, *pairs, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<SearchFailed>() => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

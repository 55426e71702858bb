//! Command line front end: deterministic, scriptable access to the bound
//! calculators, the simulators, the synthetic benchmark, router training,
//! and evaluation. Results go to stdout or `--out` as JSON or CSV; logs go
//! to stderr.

use std::fmt::Write as FmtWrite;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use routelab_core::aggregation::{mc_win_prob_partitioned, AggregationRule, TiePolicy};
use routelab_core::bounds::{
    bound_value, lower_hypothesis_holds, upper_hypothesis_holds, BoundKind,
};
use routelab_core::dataset::{
    load_dataset, normalize_costs, save_records, synth_benchmark, utility, CostTransform,
    MethodUniverse, QuestionRecord, UtilityConfig,
};
use routelab_core::distributions::GenerationProfile;
use routelab_core::eval::{
    evaluate_policy, pareto_sweep, project_2d, universe_upper_bound, COST_NOTE,
};
use routelab_core::router::{
    build_positives, build_target_table, export_embeddings, train_with_history, RouterModel,
    TrainConfig,
};
use routelab_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "routelab",
    version,
    about = "Accuracy bounds for answer aggregation and a utility-driven method router"
)]
struct Cli {
    /// Worker threads for Monte Carlo simulation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a win-probability bound for a rule on a profile.
    Bounds(BoundsArgs),
    /// Monte Carlo estimate of the win probability.
    Simulate(SimulateArgs),
    /// Emit the per-(question, method) routing targets for a dataset.
    EstimateTargets(EstimateTargetsArgs),
    /// Generate a synthetic benchmark dataset.
    Synth(SynthArgs),
    /// Attach normalized costs, utilities, and the positive label per question.
    BuildDataset(BuildDatasetArgs),
    /// Train a router and write a checkpoint.
    Train(TrainArgs),
    /// Route feature vectors with a trained model.
    Route(RouteArgs),
    /// Evaluate a trained router on a dataset split.
    Eval(EvalArgs),
    /// Sweep the accuracy weight lambda and report the trade-off as CSV.
    Pareto(ParetoArgs),
    /// Export method and question embeddings as CSV.
    ExportEmbeddings(ExportEmbeddingsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Lower,
    Upper,
    /// Pick the side whose hypothesis the profile satisfies.
    Auto,
}

#[derive(Args)]
struct BoundsArgs {
    /// Profile JSON: {"probs": [...], "correct_index": 0, "mus": [...], "sigmas": [...]}.
    #[arg(long)]
    profile: PathBuf,
    /// Aggregation rule code: mv, pvm, pvl, pmm, or pml.
    #[arg(long)]
    rule: String,
    /// Number of aggregated draws.
    #[arg(long)]
    n: u32,
    #[arg(long, value_enum, default_value_t = Side::Auto)]
    side: Side,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Aggregation rule code: mv, pvm, pvl, pmm, or pml.
    #[arg(long)]
    rule: String,
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Break exact aggregation ties uniformly at random or toward the
    /// lowest answer index.
    #[arg(long, value_enum, default_value_t = TieArg::Uniform)]
    tie: TieArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    Uniform,
    Lowest,
}

#[derive(Args)]
struct EstimateTargetsArgs {
    /// Dataset JSONL path.
    #[arg(long)]
    dataset: PathBuf,
    /// Universe JSON path.
    #[arg(long)]
    universe: PathBuf,
    /// Below this draw count, score-max targets use empirical accuracy.
    #[arg(long, default_value_t = 8)]
    small_n_threshold: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    questions: usize,
    /// Universe JSON; the built-in 12-method universe when omitted.
    #[arg(long)]
    universe: Option<PathBuf>,
    /// Where to also write the universe that was used.
    #[arg(long)]
    universe_out: Option<PathBuf>,
    /// Feature dimension of the generated questions.
    #[arg(long, default_value_t = 8)]
    features: usize,
    /// Dataset JSONL output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    universe: PathBuf,
    /// Accuracy weight of the utility.
    #[arg(long)]
    lambda: f64,
    /// Cost transform: identity or log1p.
    #[arg(long, default_value = "identity")]
    transform: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    universe: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Ratio-regularizer weight.
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Hidden width of the question embedder.
    #[arg(long, default_value_t = 256)]
    h: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    sim_epsilon: f64,
    #[arg(long, default_value_t = 8)]
    small_n_threshold: u32,
}

#[derive(Args)]
struct RouteArgs {
    /// Checkpoint path.
    #[arg(long)]
    model: PathBuf,
    /// JSON file holding one feature vector or an array of feature vectors.
    #[arg(long)]
    features_file: PathBuf,
    /// Optional universe JSON to verify the checkpoint hash against.
    #[arg(long)]
    universe: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    universe: PathBuf,
    /// Which part of the dataset to evaluate.
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Fraction of questions (taken from the tail) forming the test split.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Accuracy above which a question counts as solvable by a method.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParetoArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    universe: PathBuf,
    /// Comma-separated accuracy weights.
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    lambdas: String,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 256)]
    h: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportEmbeddingsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    universe: PathBuf,
    /// Project vectors to two principal components instead of exporting
    /// them in full.
    #[arg(long)]
    projected: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Domain("--threads must be >= 1".into()));
    }
    match cli.command {
        Command::Bounds(args) => cmd_bounds(args),
        Command::Simulate(args) => cmd_simulate(args, cli.threads),
        Command::EstimateTargets(args) => cmd_estimate_targets(args),
        Command::Synth(args) => cmd_synth(args),
        Command::BuildDataset(args) => cmd_build_dataset(args),
        Command::Train(args) => cmd_train(args),
        Command::Route(args) => cmd_route(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Pareto(args) => cmd_pareto(args),
        Command::ExportEmbeddings(args) => cmd_export_embeddings(args),
    }
}

/// Writes to stdout, treating a closed pipe (e.g. piping into `head`) as a
/// clean end of output rather than an error.
fn write_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// Writes `content` (plus a trailing newline) to `--out` or stdout.
fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    let mut text = content.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => write_stdout(&text)?,
    }
    Ok(())
}

fn load_profile(path: &Path) -> Result<GenerationProfile> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn parse_rule(code: &str) -> Result<AggregationRule> {
    code.parse()
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let profile = load_profile(&args.profile)?;
    let rule = parse_rule(&args.rule)?;
    let kind = match args.side {
        Side::Lower => BoundKind::Lower,
        Side::Upper => BoundKind::Upper,
        Side::Auto => {
            if lower_hypothesis_holds(&profile, rule) {
                BoundKind::Lower
            } else if upper_hypothesis_holds(&profile, rule) {
                BoundKind::Upper
            } else {
                return Err(Error::Hypothesis(
                    "neither bound applies: no answer strictly dominates".into(),
                ));
            }
        }
    };
    let result = bound_value(&profile, rule, args.n, kind)?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&result)?)
}

fn cmd_simulate(args: SimulateArgs, threads: usize) -> Result<()> {
    let profile = load_profile(&args.profile)?;
    let rule = parse_rule(&args.rule)?;
    let ties = match args.tie {
        TieArg::Uniform => TiePolicy::UniformRandom { seed: args.seed },
        TieArg::Lowest => TiePolicy::LowestIndex,
    };
    let estimate =
        mc_win_prob_partitioned(&profile, rule, args.n, args.trials, args.seed, &ties, threads)?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&estimate)?)
}

fn cmd_estimate_targets(args: EstimateTargetsArgs) -> Result<()> {
    let (universe, records) = load_dataset(&args.universe, &args.dataset)?;
    let table = build_target_table(&records, &universe, args.small_n_threshold)?;
    let rows: Vec<serde_json::Value> = records
        .iter()
        .zip(&table)
        .map(|(r, targets)| {
            serde_json::json!({
                "qid": r.qid,
                "targets": targets,
            })
        })
        .collect();
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&rows)?)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let universe = match &args.universe {
        Some(path) => MethodUniverse::load(path)?,
        None => MethodUniverse::demo(),
    };
    if let Some(path) = &args.universe_out {
        universe.save(path)?;
    }
    let records = synth_benchmark(args.seed, args.questions, &universe, args.features)?;
    match &args.out {
        Some(path) => save_records(path, &records),
        None => {
            let mut text = String::new();
            for record in &records {
                text.push_str(&serde_json::to_string(record)?);
                text.push('\n');
            }
            write_stdout(&text)
        }
    }
}

fn cmd_build_dataset(args: BuildDatasetArgs) -> Result<()> {
    // Loading through load_dataset cross-validates the table shapes.
    let (_universe, records) = load_dataset(&args.universe, &args.dataset)?;
    let transform: CostTransform = args.transform.parse()?;
    let cfg = UtilityConfig::new(args.lambda, transform)?;
    let positives = build_positives(&records, args.lambda)?;
    let mut lines = String::new();
    for (record, positive) in records.iter().zip(positives) {
        let costs = normalize_costs(record, cfg.transform)?;
        let utilities = record
            .accuracy
            .iter()
            .zip(&costs)
            .map(|(&a, &c)| utility(a, c, &cfg))
            .collect::<Result<Vec<f64>>>()?;
        let row = serde_json::json!({
            "qid": record.qid,
            "normalized_cost": costs,
            "utility": utilities,
            "positive_method": positive,
        });
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, lines)?;
            Ok(())
        }
        None => write_stdout(&lines),
    }
}

fn train_config_from(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        lambda: args.lambda,
        tau: args.tau,
        d: args.d,
        h: args.h,
        lr: args.lr,
        epochs: args.epochs,
        batch: args.batch,
        seed: args.seed,
        sim_epsilon: args.sim_epsilon,
        small_n_threshold: args.small_n_threshold,
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (universe, records) = load_dataset(&args.universe, &args.dataset)?;
    let cfg = train_config_from(&args);
    let (model, history) = train_with_history(&records, &universe, &cfg)?;
    model.save(&args.out)?;
    let summary = serde_json::json!({
        "checkpoint": args.out.display().to_string(),
        "epochs": history.len(),
        "first_loss": history.first(),
        "final_loss": history.last(),
        "universe_hash": model.universe_hash(),
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_stdout(&text)
}

fn cmd_route(args: RouteArgs) -> Result<()> {
    let model = match &args.universe {
        Some(path) => RouterModel::load_for_universe(&args.model, &MethodUniverse::load(path)?)?,
        None => RouterModel::load(&args.model)?,
    };
    let file = File::open(&args.features_file)?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))?;
    let rows: Vec<Vec<f64>> = match value {
        serde_json::Value::Array(items) if items.iter().all(|v| v.is_number()) => {
            vec![serde_json::from_value(serde_json::Value::Array(items))?]
        }
        other => serde_json::from_value(other).map_err(|e| {
            Error::Schema(format!(
                "features file must hold a vector or an array of vectors: {e}"
            ))
        })?,
    };
    let choices = rows.iter().map(|f| model.route(f)).collect::<Result<Vec<usize>>>()?;
    let output = serde_json::json!({ "choices": choices });
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&output)?)
}

/// Deterministic tail split: the last `ceil(fraction * len)` records test.
fn split_records(records: &[QuestionRecord], fraction: f64) -> Result<(&[QuestionRecord], &[QuestionRecord])> {
    if !fraction.is_finite() || !(0.0..1.0).contains(&fraction) {
        return Err(Error::Domain(format!("test fraction {fraction} outside [0, 1)")));
    }
    let test_len = ((records.len() as f64) * fraction).ceil() as usize;
    let cut = records.len() - test_len;
    if cut == 0 {
        return Err(Error::Domain("test fraction leaves no training data".into()));
    }
    Ok(records.split_at(cut))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (universe, records) = load_dataset(&args.universe, &args.dataset)?;
    let model = RouterModel::load_for_universe(&args.model, &universe)?;
    let subset: &[QuestionRecord] = match args.split {
        Split::All => &records,
        Split::Train => split_records(&records, args.test_fraction)?.0,
        Split::Test => split_records(&records, args.test_fraction)?.1,
    };
    if subset.is_empty() {
        return Err(Error::Domain("selected split is empty".into()));
    }
    let report = evaluate_policy(|r| model.route(&r.features), subset, universe.len())?;
    let upper = universe_upper_bound(subset, args.threshold)?;
    let output = serde_json::json!({
        "report": report,
        "universe_upper_bound": upper,
        "solvable_threshold": args.threshold,
        "questions": subset.len(),
        "note": COST_NOTE,
    });
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&output)?)
}

fn parse_lambdas(text: &str) -> Result<Vec<f64>> {
    let lambdas = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad lambda {s:?} in --lambdas")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if lambdas.iter().any(|l| !l.is_finite() || !(0.0..=1.0).contains(l)) {
        return Err(Error::Domain("every lambda must lie in [0, 1]".into()));
    }
    Ok(lambdas)
}

fn cmd_pareto(args: ParetoArgs) -> Result<()> {
    let (universe, records) = load_dataset(&args.universe, &args.dataset)?;
    let lambdas = parse_lambdas(&args.lambdas)?;
    let (train_set, test_set) = split_records(&records, args.test_fraction)?;
    if test_set.is_empty() {
        return Err(Error::Domain("test fraction leaves no test data".into()));
    }
    let cfg = TrainConfig {
        lambda: 0.0,
        tau: args.tau,
        d: args.d,
        h: args.h,
        lr: args.lr,
        epochs: args.epochs,
        batch: args.batch,
        seed: args.seed,
        sim_epsilon: 1e-6,
        small_n_threshold: 8,
    };
    let points = pareto_sweep(train_set, test_set, &universe, &lambdas, &cfg)?;
    let mut csv = String::from("lambda,accuracy,avg_cost\n");
    for p in &points {
        writeln!(csv, "{},{},{}", p.lambda, p.accuracy, p.avg_raw_cost)
            .expect("writing to a String cannot fail");
    }
    emit(args.out.as_deref(), csv.trim_end_matches('\n'))
}

fn cmd_export_embeddings(args: ExportEmbeddingsArgs) -> Result<()> {
    let (universe, records) = load_dataset(&args.universe, &args.dataset)?;
    let model = RouterModel::load_for_universe(&args.model, &universe)?;
    let vectors = export_embeddings(&model, &universe, &records)?;
    let mut csv = String::new();
    if args.projected {
        let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.vector.clone()).collect();
        let projected = project_2d(&rows)?;
        csv.push_str("label,x,y\n");
        for (v, p) in vectors.iter().zip(projected) {
            writeln!(csv, "{},{},{}", v.label, p[0], p[1]).expect("string write");
        }
    } else {
        let dim = vectors.first().map_or(0, |v| v.vector.len());
        csv.push_str("label");
        for t in 0..dim {
            csv.push_str(&format!(",v{t}"));
        }
        csv.push('\n');
        for v in &vectors {
            csv.push_str(&v.label);
            for x in &v.vector {
                csv.push_str(&format!(",{x}"));
            }
            csv.push('\n');
        }
    }
    emit(args.out.as_deref(), csv.trim_end_matches('\n'))
}

mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use apood::baselines::{save_baseline, BaselineHyperparams, BaselineModel, FitOptions, Method};
use apood::corpus::{load_corpus, Corpus, Label};
use apood::metrics::{read_scores, write_scores_to, EvalReport};
use apood::model::{save_model, train_with_log, ApoodModel, ScoreKind};
use apood::optim::OptimizerKind;
use apood::pooling::Similarity;
use apood::selfcheck::run_selfcheck;
use apood::toy::run_toy_experiment;
use apood::{Error, ErrorKind};

use config::RunConfig;

const EXIT_SELFCHECK: u8 = 5;

#[derive(Parser)]
#[command(name = "apood", version, about = "Attention-pooled OOD detection on token-embedding corpora")]
struct Cli {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on an ID corpus, optionally with AUX outliers.
    Train(TrainArgs),
    /// Score a corpus with a saved model (AP-OOD or baseline).
    Score(ScoreArgs),
    /// AUROC and FPR95 from two scores CSVs.
    Eval(EvalArgs),
    /// Fit or score embedding-space baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Run the 2-D toy experiment.
    Toy(ToyArgs),
    /// Run the built-in identity suites.
    Selfcheck(SelfcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SimilarityArg {
    Dot,
    Euclidean,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Sum,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Id,
    Aux,
    Ood,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    id: Option<PathBuf>,
    #[arg(long)]
    aux: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    similarity: Option<SimilarityArg>,
    #[arg(long)]
    optimizer: Option<OptimizerArg>,
    /// Drop the log-norm term from the unsupervised loss.
    #[arg(long)]
    no_norm_penalty: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Value of the label column.
    #[arg(long, value_enum, default_value_t = LabelArg::Id)]
    label: LabelArg,
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    id_scores: PathBuf,
    #[arg(long)]
    ood_scores: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BaselineCommand {
    Fit(BaselineFitArgs),
    Score(ScoreArgs),
}

#[derive(Args)]
struct BaselineFitArgs {
    /// maha, knn, svdd, sad, logit or relmaha.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    id: Option<PathBuf>,
    #[arg(long)]
    aux: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out_dim: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Full report; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot data only.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Lib(Error),
    Selfcheck(Vec<&'static str>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult = Result<(), Failure>;

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Io => 2,
        ErrorKind::Shape => 3,
        ErrorKind::Format => 4,
        ErrorKind::Other => 1,
    }
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    path.ok_or_else(|| Error::Argument(format!("missing {what} path (flag or config)")))
}

fn load_labelled(path: &Path, label: Label) -> Result<Corpus, Error> {
    Ok(load_corpus(path)?.with_label(label))
}

fn write_output(path: Option<&Path>, text: &str) -> io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.write_all(b"\n")
        }
    }
}

fn cmd_train(cfg: RunConfig, args: TrainArgs) -> CmdResult {
    let mut hp = cfg.hyperparams;
    if let Some(v) = args.beta {
        hp.beta = v;
    }
    if let Some(v) = args.heads {
        hp.heads = v;
    }
    if let Some(v) = args.queries {
        hp.queries_per_head = v;
    }
    if let Some(v) = args.lambda {
        hp.lambda_aux = v;
    }
    if let Some(v) = args.lr {
        hp.lr = v;
    }
    if let Some(v) = args.steps {
        hp.steps = v;
    }
    if let Some(v) = args.batch_size {
        hp.batch_size = v;
    }
    if let Some(v) = args.seed {
        hp.seed = v;
    }
    if let Some(v) = args.similarity {
        hp.similarity = match v {
            SimilarityArg::Dot => Similarity::Dot,
            SimilarityArg::Euclidean => Similarity::Euclidean,
        };
    }
    if let Some(v) = args.optimizer {
        hp.optimizer = match v {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        };
    }
    if args.no_norm_penalty {
        hp.norm_penalty = false;
    }
    let id_path = required(args.id.or(cfg.id_corpus), "ID corpus")?;
    let out = required(args.out.or(cfg.model_out), "model output")?;
    let id = load_labelled(&id_path, Label::Id)?;
    let aux = match args.aux.or(cfg.aux_corpus) {
        Some(p) => Some(load_labelled(&p, Label::Aux)?),
        None => None,
    };
    if aux.is_some() && hp.lambda_aux == 0.0 {
        eprintln!("warning: lambda_aux is 0, so the AUX term has no effect on training");
    }
    let start = Instant::now();
    let (model, log) = train_with_log(&id, aux.as_ref(), &hp)?;
    save_model(&model, &out)?;
    let summary = json!({
        "model": out,
        "steps": hp.steps,
        "final_loss": log.losses.last(),
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    println!("{summary}");
    Ok(())
}

enum AnyModel {
    Apood(ApoodModel),
    Baseline(BaselineModel),
}

fn load_any_model(path: &Path) -> Result<AnyModel, Error> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(apood::model::MODEL_FORMAT) => Ok(AnyModel::Apood(ApoodModel::from_json(&text)?)),
        Some(_) => Ok(AnyModel::Baseline(BaselineModel::from_json(&text)?)),
        None => Err(Error::Format(format!("{}: missing format tag", path.display()))),
    }
}

fn cmd_score(cfg: RunConfig, args: ScoreArgs) -> CmdResult {
    let model_path = required(args.model.or(cfg.model_out), "model")?;
    let corpus_path = required(args.corpus.or(cfg.ood_corpus), "corpus")?;
    let label = match args.label {
        LabelArg::Id => Label::Id,
        LabelArg::Aux => Label::Aux,
        LabelArg::Ood => Label::Ood,
    };
    let kind = match args.score {
        Some(ScoreArg::Sum) => ScoreKind::Sum,
        Some(ScoreArg::Min) => ScoreKind::Min,
        None => cfg.score,
    };
    let model = load_any_model(&model_path)?;
    let corpus = load_labelled(&corpus_path, label)?;
    let scores = match &model {
        AnyModel::Apood(m) => m.score_corpus(&corpus, kind)?,
        AnyModel::Baseline(b) => b.score_corpus(&corpus)?,
    };
    let mut buf = Vec::new();
    write_scores_to(&mut buf, &scores, label)?;
    match args.out.or(cfg.scores_out) {
        Some(p) => fs::write(p, buf)?,
        None => io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let id: Vec<f64> = read_scores(&args.id_scores)?.into_iter().map(|r| r.score).collect();
    let ood: Vec<f64> = read_scores(&args.ood_scores)?.into_iter().map(|r| r.score).collect();
    let report = EvalReport::compute(&id, &ood)?;
    eprintln!("{}", report.summary());
    write_output(args.out.as_deref(), &report.to_json())?;
    Ok(())
}

fn cmd_baseline_fit(cfg: RunConfig, args: BaselineFitArgs) -> CmdResult {
    let name = args
        .method
        .or(cfg.method)
        .ok_or_else(|| Error::Argument("missing --method".into()))?;
    let method: Method = name.parse()?;
    let b = cfg.baseline;
    let opts = FitOptions {
        hp: BaselineHyperparams {
            lr: args.lr.unwrap_or(b.lr),
            steps: args.steps.unwrap_or(b.steps),
            seed: args.seed.unwrap_or(cfg.hyperparams.seed),
            weight_decay: b.weight_decay,
            ..Default::default()
        },
        k: args.k.unwrap_or(b.k),
        out_dim: args.out_dim.or(b.out_dim),
        eta: args.eta.unwrap_or(b.eta),
    };
    let id = load_labelled(&required(args.id.or(cfg.id_corpus), "ID corpus")?, Label::Id)?;
    let aux = match args.aux.or(cfg.aux_corpus) {
        Some(p) => Some(load_labelled(&p, Label::Aux)?),
        None => None,
    };
    let out = required(args.out.or(cfg.model_out), "model output")?;
    let model = BaselineModel::fit(method, &id, aux.as_ref(), &opts)?;
    save_baseline(&model, &out)?;
    println!("{}", json!({ "model": out, "method": method.as_str() }));
    Ok(())
}

fn cmd_toy(cfg: RunConfig, args: ToyArgs) -> CmdResult {
    let mut toy = cfg.toy;
    if let Some(v) = args.seed {
        toy.seed = v;
    }
    if let Some(v) = args.n {
        toy.n_per_class = v;
    }
    if let Some(v) = args.sigma {
        toy.sigma = v;
    }
    if let Some(v) = args.beta {
        toy.beta = v;
    }
    if let Some(v) = args.steps {
        toy.steps = v;
    }
    if let Some(v) = args.lr {
        toy.lr = v;
    }
    let report = run_toy_experiment(&toy)?;
    eprintln!(
        "mahalanobis AUROC {:.2}  deep-svdd AUROC {:.2}  ap-ood AUROC {:.2}  w = ({:.3}, {:.3})",
        100.0 * report.maha_auroc,
        100.0 * report.svdd_auroc,
        100.0 * report.apood_auroc,
        report.plot.w_final[0],
        report.plot.w_final[1],
    );
    if let Some(p) = &args.plot {
        fs::write(p, serde_json::to_string(&report.plot).expect("plot data serialises"))?;
    }
    write_output(
        args.out.as_deref(),
        &serde_json::to_string(&report).expect("report serialises"),
    )?;
    Ok(())
}

fn cmd_selfcheck(args: SelfcheckArgs) -> CmdResult {
    let report = run_selfcheck(args.seed)?;
    println!("{}", serde_json::to_string(&report).expect("report serialises"));
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Selfcheck(report.failures()))
    }
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("APOOD_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Argument(format!("APOOD_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => cmd_train(cfg, a),
        Command::Score(a) => cmd_score(cfg, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(BaselineCommand::Fit(a)) => cmd_baseline_fit(cfg, a),
        Command::Baseline(BaselineCommand::Score(a)) => cmd_score(cfg, a),
        Command::Toy(a) => cmd_toy(cfg, a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": "other", "message": e.to_string() } }));
            return ExitCode::from(exit_code(ErrorKind::Other));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            let kind = e.kind();
            eprintln!("{}", json!({ "error": { "kind": kind.as_str(), "message": e.to_string() } }));
            ExitCode::from(exit_code(kind))
        }
        Err(Failure::Selfcheck(failures)) => {
            eprintln!("{}", json!({ "error": { "kind": "selfcheck", "failures": failures } }));
            ExitCode::from(EXIT_SELFCHECK)
        }
    }
}

mod config;
mod manifest;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use gath_core::ablate;
use gath_core::checkpoint::{load_model, save_model, MODEL_FILE, PARAMS_FILE};
use gath_core::corpus::{generate_synthetic, load_dataset, write_jsonl, QAExample, SynthConfig};
use gath_core::encoder::Vocab;
use gath_core::gath::{GatMode, LevelOrder};
use gath_core::gradcheck::{check_gradients, random_setup, GradCheckConfig};
use gath_core::graph::{build_graph, select_paragraphs, GraphConfig, RandomGraphSpec};
use gath_core::heads::LossWeights;
use gath_core::model::{Model, ModelConfig};
use gath_core::optim::AdamConfig;
use gath_core::score::{category_table, metrics_table, score, MetricsReport, Predictions};
use gath_core::tensor::Real;
use gath_core::train::{evaluate, prepare, train_with, TrainConfig};
use manifest::ManifestBuilder;
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Hierarchical graph attention for multi-hop question answering.
#[derive(Parser, Debug)]
#[command(name = "gath", version)]
struct Cli {
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true, value_parser = positive)]
    jobs: Option<usize>,
    /// Key-value config file. Flags on the command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic bridge/comparison dataset as JSONL.
    GenSynth(GenSynthArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Score a prediction file, or a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train one model per level order / baseline and compare them.
    Ablate(AblateArgs),
    /// Finite-difference check of every parameter group on a random graph.
    Gradcheck(GradcheckArgs),
    /// Dump the hierarchical graph of one or all examples as JSON.
    BuildGraph(BuildGraphArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Number of examples.
    #[arg(long, value_parser = positive, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 300)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    sentences: usize,
    #[arg(long, default_value_t = 8)]
    distractors: usize,
    #[arg(long, default_value_t = 0.8)]
    bridge_fraction: f64,
    /// Share of comparison questions answered yes/no.
    #[arg(long, default_value_t = 0.3)]
    yes_no_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct GraphArgs {
    #[arg(long, default_value_t = 4)]
    max_paragraphs: usize,
    /// Question-sentence edges.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    qs_edges: OnOff,
    /// Connect every sentence pair of a paragraph, not only neighbours.
    #[arg(long)]
    ss_all_pairs: bool,
    /// Skip entity nodes.
    #[arg(long)]
    no_entities: bool,
}

impl GraphArgs {
    fn config(&self) -> GraphConfig {
        GraphConfig {
            max_paragraphs: self.max_paragraphs,
            qs_edges: self.qs_edges == OnOff::On,
            ss_all_pairs: self.ss_all_pairs,
            entities: !self.no_entities,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Model width.
    #[arg(long, default_value_t = 32)]
    d: usize,
    /// Attention heads; must divide d.
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value = "gath")]
    mode: GatMode,
    /// Level order for gath, e.g. p,s,e or s,e,p; p+s+e updates together.
    #[arg(long, default_value = "s,e,p")]
    order: LevelOrder,
    /// Also update the query node.
    #[arg(long)]
    include_query_level: bool,
    /// Separate attention parameters per stage.
    #[arg(long)]
    per_stage_params: bool,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 5000)]
    vocab_size: usize,
    /// Dropout on attention coefficients and head hidden layers.
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, default_value_t = 0.2)]
    encoder_dropout: f64,
    /// LeakyReLU negative slope.
    #[arg(long, default_value_t = 0.2)]
    slope: f64,
    #[arg(long)]
    no_bi_attention: bool,
    #[arg(long)]
    no_local_context: bool,
    #[arg(long)]
    no_exact_match: bool,
    #[arg(long, default_value_t = 30)]
    max_span: usize,
    #[arg(long, default_value_t = 0.5)]
    support_threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_para: f64,
    #[arg(long, default_value_t = 2.0)]
    lambda_sent: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_entity: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_type: f64,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> ModelConfig {
        let mut c = ModelConfig {
            seed,
            max_span: self.max_span,
            support_threshold: self.support_threshold,
            graph: self.graph.config(),
            loss: LossWeights {
                para: self.lambda_para,
                sent: self.lambda_sent,
                entity: self.lambda_entity,
                answer_type: self.lambda_type,
            },
            ..ModelConfig::default()
        };
        c.encoder.d = self.d;
        c.encoder.vocab_size = self.vocab_size;
        c.encoder.dropout = self.encoder_dropout;
        c.encoder.use_bi_attention = !self.no_bi_attention;
        c.encoder.local_context = !self.no_local_context;
        c.encoder.exact_match = !self.no_exact_match;
        c.gath.heads = self.heads;
        c.gath.mode = self.mode;
        c.gath.level_order = self.order.clone();
        c.gath.include_query_level = self.include_query_level;
        c.gath.per_stage_params = self.per_stage_params;
        c.gath.dropout = self.dropout;
        c.gath.slope = self.slope;
        c
    }
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long, value_parser = positive, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, value_parser = positive, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
}

impl OptimArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            adam: AdamConfig {
                learning_rate: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training set (JSONL or official JSON).
    #[arg(long)]
    data: PathBuf,
    /// Dev set; the checkpoint keeps the epoch with the lowest dev loss.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Held-out set scored after training.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction file to score (with --gold).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Gold dataset for --pred.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Checkpoint directory to run (with --data).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset for --checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Where to write the checkpoint's predictions.
    #[arg(long)]
    pred_out: Option<PathBuf>,
    /// JSON metrics report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    /// Fail (exit 1) below this answer EM.
    #[arg(long)]
    min_answer_em: Option<f64>,
    /// Fail (exit 1) below this support F1.
    #[arg(long)]
    min_support_f1: Option<f64>,
    /// Fail (exit 1) below this joint F1.
    #[arg(long)]
    min_joint_f1: Option<f64>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Scored set.
    #[arg(long)]
    test: PathBuf,
    /// Level orders separated by `;`, e.g. "p,s,e;s,e,p". Without it the four
    /// standard orders run together with the baselines.
    #[arg(long)]
    orders: Option<String>,
    /// Add GAT 1-/2-layer, GAT + QS and GATH S/E/P + QS rows.
    #[arg(long)]
    baselines: bool,
    /// Output directory for the report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    n_p: usize,
    #[arg(long, default_value_t = 5)]
    n_s: usize,
    #[arg(long, default_value_t = 4)]
    n_e: usize,
    /// Distinct random words.
    #[arg(long, default_value_t = 20)]
    words: usize,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Entries probed per parameter group.
    #[arg(long, value_parser = positive, default_value_t = 256)]
    max_entries: usize,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct BuildGraphArgs {
    #[arg(long)]
    data: PathBuf,
    /// Example id; dumps all examples as JSONL when neither --id nor --index is given.
    #[arg(long, conflicts_with = "index")]
    id: Option<String>,
    #[arg(long)]
    index: Option<usize>,
    /// Select paragraphs as in training (gold paragraphs forced in).
    #[arg(long)]
    force_gold: bool,
    #[command(flatten)]
    graph: GraphArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Check(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) | Failure::Run(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Check(m) => write!(f, "check failed: {m}"),
            Failure::Run(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<gath_core::Error> for Failure {
    fn from(e: gath_core::Error) -> Self {
        match e {
            gath_core::Error::Config(m) => Failure::Usage(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

/// Relative input paths are taken relative to `GATH_DATA_ROOT` when it is set.
fn input(path: &Path) -> Result<PathBuf, Failure> {
    let p = match std::env::var_os("GATH_DATA_ROOT") {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    };
    if !p.is_file() {
        return Err(Failure::Usage(format!("input file not found: {}", p.display())));
    }
    Ok(p)
}

fn load(path: &Path) -> Result<(PathBuf, Vec<QAExample>), Failure> {
    let p = input(path)?;
    let data = load_dataset(&p)?;
    if data.is_empty() {
        return Err(Failure::Usage(format!("{} contains no examples", p.display())));
    }
    Ok((p, data))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn print_report(label: &str, report: &MetricsReport) {
    say!("{}", metrics_table(&[(label.to_string(), report)]));
    say!("{}", category_table(report));
}

fn gen_synth(a: &GenSynthArgs) -> Outcome {
    let cfg = SynthConfig {
        num_examples: a.n,
        vocab_size: a.vocab_size,
        num_entities: a.entities,
        sentences_per_paragraph: a.sentences,
        distractor_count: a.distractors,
        bridge_fraction: a.bridge_fraction,
        yes_no_fraction: a.yes_no_fraction,
        seed: a.seed,
    };
    cfg.validate()?;
    let data = generate_synthetic(&cfg).map_err(|e| match e {
        gath_core::Error::VocabTooSmall { .. } => Failure::Usage(e.to_string()),
        other => other.into(),
    })?;
    write_jsonl(&a.out, &data)?;
    say!("wrote {} examples to {}", data.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Outcome {
    match a.precision {
        Precision::F32 => train_as::<f32>(a),
        Precision::F64 => train_as::<f64>(a),
    }
}

fn train_as<T: Real>(a: &TrainArgs) -> Outcome {
    let model_cfg = a.model.config(a.seed);
    let train_cfg = a.optim.config(a.seed);
    model_cfg.validate()?;
    train_cfg.validate()?;
    let (data_path, data) = load(&a.data)?;
    let dev = a.dev.as_deref().map(load).transpose()?;
    let test = a.test.as_deref().map(load).transpose()?;

    let snapshot = serde_json::json!({ "model": &model_cfg, "train": &train_cfg });
    let mut manifest = ManifestBuilder::new("train", a.seed, &format!("{:?}", T::DTYPE).to_lowercase(), snapshot);
    manifest.input(&data_path)?;
    for (p, _) in dev.iter().chain(test.iter()) {
        manifest.input(p)?;
    }

    let vocab = Vocab::build(&data, model_cfg.encoder.vocab_size);
    let mut model: Model<T> = Model::new(model_cfg, vocab)?;
    let train_insts = prepare(&model, &data, true)?;
    let dev_insts = match &dev {
        Some((_, d)) => prepare(&model, d, false)?,
        None => Vec::new(),
    };
    let report = train_with(&mut model, &train_insts, &dev_insts, &train_cfg, |_, _, _| {})?;

    std::fs::create_dir_all(&a.out)?;
    save_model(&model, &a.out)?;
    report.write_csv(a.out.join("loss.csv"))?;
    write_json(&a.out.join("train.json"), &report)?;
    let mut outputs = vec![MODEL_FILE, PARAMS_FILE, "loss.csv", "train.json"];
    if let Some((_, t)) = &test {
        let (preds, metrics) = evaluate(&model, t)?;
        write_json(&a.out.join("predictions.json"), &preds)?;
        write_json(&a.out.join("metrics.json"), &metrics)?;
        outputs.extend(["predictions.json", "metrics.json"]);
        print_report("test", &metrics);
    }
    manifest.write(&a.out, &outputs)?;
    say!(
        "checkpoint written to {} (best epoch {})",
        a.out.display(),
        report.best_epoch
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Outcome {
    let (preds, gold) = match (&a.pred, &a.gold, &a.checkpoint, &a.data) {
        (Some(p), Some(g), None, None) => {
            let p = input(p)?;
            let preds: Predictions = serde_json::from_str(&std::fs::read_to_string(&p)?)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            (preds, load(g)?.1)
        }
        (None, None, Some(c), Some(d)) => {
            if !c.join(MODEL_FILE).is_file() {
                return Err(Failure::Usage(format!("no checkpoint in {}", c.display())));
            }
            let (_, data) = load(d)?;
            let preds = match a.precision {
                Precision::F32 => evaluate(&load_model::<f32>(c)?, &data)?.0,
                Precision::F64 => evaluate(&load_model::<f64>(c)?, &data)?.0,
            };
            if let Some(out) = &a.pred_out {
                write_json(out, &preds)?;
            }
            (preds, data)
        }
        _ => {
            return Err(Failure::Usage(
                "give either --pred with --gold, or --checkpoint with --data".into(),
            ))
        }
    };
    let report = score(&preds, &gold)?;
    print_report("eval", &report);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    let mut failed = Vec::new();
    for (name, min, got) in [
        ("answer EM", a.min_answer_em, report.answer.em),
        ("support F1", a.min_support_f1, report.support.f1),
        ("joint F1", a.min_joint_f1, report.joint.f1),
    ] {
        if let Some(min) = min {
            if got < min {
                failed.push(format!("{name} {got:.4} < {min}"));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}

fn ablate_cmd(a: &AblateArgs) -> Outcome {
    let (orders, baselines) = match &a.orders {
        Some(s) => {
            let orders = s
                .split(';')
                .filter(|o| !o.trim().is_empty())
                .map(|o| o.trim().parse::<LevelOrder>())
                .collect::<Result<Vec<_>, _>>()?;
            (orders, a.baselines)
        }
        None => (LevelOrder::paper_orders(), true),
    };
    let variants = ablate::plan(&orders, baselines)?;
    let base = a.model.config(a.seed);
    let train_cfg = a.optim.config(a.seed);
    base.validate()?;
    train_cfg.validate()?;
    for v in &variants {
        v.apply(&base).validate()?;
    }
    let (data_path, data) = load(&a.data)?;
    let (test_path, test) = load(&a.test)?;
    let dev = a.dev.as_deref().map(load).transpose()?;
    let dev_set: &[QAExample] = dev.as_ref().map_or(&[], |(_, d)| d);

    let on_row = |r: &ablate::AblationRow| {
        log::info!(
            "{}: answer EM {:.3}, support F1 {:.3}, joint F1 {:.3} ({:.0}s)",
            r.variant.label,
            r.report.answer.em,
            r.report.support.f1,
            r.report.joint.f1,
            r.seconds
        )
    };
    let rows = match a.precision {
        Precision::F32 => ablate::run::<f32>(&data, dev_set, &test, &base, &train_cfg, &variants, on_row)?,
        Precision::F64 => ablate::run::<f64>(&data, dev_set, &test, &base, &train_cfg, &variants, on_row)?,
    };
    let table = ablate::table(&rows);
    say!("{table}");

    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        let snapshot = serde_json::json!({
            "model": &base,
            "train": &train_cfg,
            "variants": &variants,
        });
        let precision = match a.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        let mut manifest = ManifestBuilder::new("ablate", a.seed, precision, snapshot);
        manifest.input(&data_path)?;
        manifest.input(&test_path)?;
        if let Some((p, _)) = &dev {
            manifest.input(p)?;
        }
        write_json(&out.join("ablation.json"), &rows)?;
        std::fs::write(out.join("table.txt"), table + "\n")?;
        manifest.write(out, &["ablation.json", "table.txt"])?;
    }
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Outcome {
    let cfg = a.model.config(a.seed);
    cfg.validate()?;
    let spec = RandomGraphSpec {
        n_p: a.n_p,
        n_s: a.n_s,
        n_e: a.n_e,
        vocab: a.words,
        options: cfg.graph.edge_options(),
    };
    let (mut model, inst) = random_setup(cfg, &spec, a.seed)?;
    let check = GradCheckConfig {
        epsilon: a.epsilon,
        tolerance: a.tolerance,
        max_entries: a.max_entries,
        seed: a.seed,
    };
    say!(
        "random graph: {} nodes ({} p, {} s, {} e), {} edges",
        inst.graph.num_nodes(),
        inst.graph.n_p,
        inst.graph.n_s,
        inst.graph.n_e,
        inst.graph.edges.len()
    );
    let rows = check_gradients(&mut model, &inst, &check)?;
    for r in &rows {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        say!(
            "{verdict} rel_err<{:e} {:<24} rel_err={:.3e} checked={}/{}",
            a.tolerance, r.name, r.rel_err, r.checked, r.numel
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &rows)?;
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} parameter groups", rows.len())));
    }
    Ok(())
}

fn build_graph_cmd(a: &BuildGraphArgs) -> Outcome {
    let (_, data) = load(&a.data)?;
    let picked: Vec<&QAExample> = match (&a.id, a.index) {
        (Some(id), _) => vec![data
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| Failure::Usage(format!("no example with id `{id}`")))?],
        (None, Some(i)) => vec![data
            .get(i)
            .ok_or_else(|| Failure::Usage(format!("index {i} out of range ({} examples)", data.len())))?],
        (None, None) => data.iter().collect(),
    };
    let cfg = a.graph.config();
    let mut lines = Vec::with_capacity(picked.len());
    for ex in &picked {
        let selected = select_paragraphs(ex, cfg.max_paragraphs, a.force_gold);
        let graph = build_graph(ex, &selected, &cfg)?;
        let titles: Vec<&str> = selected.iter().map(|&i| ex.paragraphs[i].title.as_str()).collect();
        let dump = serde_json::json!({ "id": ex.id, "selected": titles, "graph": graph });
        lines.push(if picked.len() == 1 {
            serde_json::to_string_pretty(&dump)?
        } else {
            serde_json::to_string(&dump)?
        });
    }
    let text = lines.join("\n") + "\n";
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    match &cli.command {
        Cmd::GenSynth(a) => gen_synth(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Ablate(a) => ablate_cmd(a),
        Cmd::Gradcheck(a) => gradcheck_cmd(a),
        Cmd::BuildGraph(a) => build_graph_cmd(a),
    }
}

/// Position of the subcommand name and the `--config` value, skipping
/// the global flags that take a value.
fn scan(args: &[OsString]) -> (Option<usize>, Option<PathBuf>) {
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if a == "--config" || a == "--jobs" {
            if a == "--config" {
                config = args.get(i + 1).map(PathBuf::from);
            }
            i += 1;
        } else if !a.starts_with('-') {
            return (Some(i), config);
        }
        i += 1;
    }
    (None, config)
}

fn parse_cli() -> Result<Cli, clap::Error> {
    let mut args: Vec<OsString> = std::env::args_os().collect();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in &names {
        cmd = cmd.mut_subcommand(n, |s| s.args_override_self(true));
    }
    let (sub_at, config) = scan(&args);
    if let (Some(at), Some(path)) = (sub_at, config) {
        let sub = args[at].to_string_lossy().into_owned();
        let injected = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))
            .and_then(|t| config::parse(&t))
            .and_then(|c| config::to_args(&c, &cmd, &sub));
        match injected {
            Ok(extra) => {
                args.splice(at + 1..at + 1, extra.into_iter().map(OsString::from));
            }
            Err(m) => return Err(cmd.error(clap::error::ErrorKind::InvalidValue, m)),
        }
    }
    let matches = cmd.try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match parse_cli() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}

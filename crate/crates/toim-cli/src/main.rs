//! Command-line pipeline driver: generate or ingest a corpus, train the
//! topic-level opinion influence model, propagate influence, predict,
//! evaluate, and export model tables.
//!
//! Every run is driven by a single JSON config (`--config`), with a few
//! flags overriding individual keys. All outputs embed the effective
//! config hash and global seed, and re-running a command with the same
//! inputs produces byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use toim::corpus::ingest_messages;
use toim::gibbs::GibbsConfig;
use toim::influence::{self, ModelFile, OaiWeights, TrainOptions, TrainedModel};
use toim::opinion::{build_coe_candidates, build_corpus_stats, candidates_tsv, CoETable};
use toim::predict::{baseline_majority, evaluate, predict, PredictionConfig};
use toim::propagation::{
    direct_agree_matrix, refine_ledger, PropagationConfig, PropagationMode, RefinedParams,
};
use toim::synth::{self, GoldLabel, SynthSpec};
use toim::ToimError;

// ---------------------------------------------------------------------
// Configuration

/// One JSON document configures every command; flags override keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    /// Global seed; feeds the synthetic generator, the sampler, the
    /// ledger draws, and prediction.
    seed: u64,
    workers: usize,
    topics: usize,
    /// Sampler sweeps.
    iterations: usize,
    /// User-topic prior; defaults to 50/K when absent.
    alpha: Option<f64>,
    /// Topic-noun prior; defaults to 0.01 when absent.
    gibbs_beta: Option<f64>,
    /// Additive smoothing for opinion and agreement estimates.
    smoothing: f64,
    /// Minimum statistical dependence for the fallback opinion resolver.
    min_sd: f64,
    oai: OaiWeights,
    synth: SynthSpec,
    propagation: PropagationConfig,
    prediction: PredictionConfig,
    paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: 1,
            topics: 2,
            iterations: 50,
            alpha: None,
            gibbs_beta: None,
            smoothing: 0.0,
            min_sd: 0.0,
            oai: OaiWeights::default(),
            synth: SynthSpec::default(),
            propagation: PropagationConfig::default(),
            prediction: PredictionConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Artifact locations; unset entries resolve to fixed names under the
/// output directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PathsConfig {
    out_dir: Option<PathBuf>,
    corpus: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    coe: Option<PathBuf>,
    gold: Option<PathBuf>,
    model: Option<PathBuf>,
    refined: Option<PathBuf>,
    predictions: Option<PathBuf>,
    report: Option<PathBuf>,
}

impl RunConfig {
    fn gibbs_config(&self) -> GibbsConfig {
        let mut g = GibbsConfig::new(self.topics, self.iterations, self.seed);
        if let Some(a) = self.alpha {
            g.alpha = a;
        }
        if let Some(b) = self.gibbs_beta {
            g.beta = b;
        }
        g
    }

    fn out_dir(&self) -> PathBuf {
        self.paths
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir().join(name))
    }

    fn corpus_path(&self) -> PathBuf {
        self.path(&self.paths.corpus, "messages.jsonl")
    }
    fn lexicon_path(&self) -> PathBuf {
        self.path(&self.paths.lexicon, "lexicon.tsv")
    }
    fn gold_path(&self) -> PathBuf {
        self.path(&self.paths.gold, "gold.jsonl")
    }
    fn model_path(&self) -> PathBuf {
        self.path(&self.paths.model, "model.json")
    }
    fn refined_path(&self) -> PathBuf {
        self.path(&self.paths.refined, "refined.csv")
    }
    fn predictions_path(&self) -> PathBuf {
        self.path(&self.paths.predictions, "predictions.jsonl")
    }
    fn report_path(&self) -> PathBuf {
        self.path(&self.paths.report, "report.json")
    }

    /// Stable hash of the effective (post-override) configuration.
    fn hash(&self) -> u64 {
        let canonical = serde_json::to_string(self).expect("config serializes");
        toim::seed::sub_seed(0x746f_696d, &[&canonical])
    }
}

// ---------------------------------------------------------------------
// CLI surface

#[derive(Parser, Debug)]
#[command(
    name = "toim",
    about = "Topic-level opinion influence modeling pipeline",
    version
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count override for parallel phases.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Topic count override.
    #[arg(long, global = true)]
    topics: Option<usize>,
    /// Propagation mode override.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Propagation step count override.
    #[arg(long, global = true)]
    t: Option<usize>,
    /// Propagation decay override.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Prediction history weight override.
    #[arg(long, global = true)]
    w: Option<f64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Conservative,
    Nonconservative,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-parameter synthetic corpus.
    Synth,
    /// Validate a corpus and report graph statistics.
    Ingest,
    /// Learn topics, opinion history, and pairwise influence.
    Train,
    /// Diffuse learned influence and write refined tie strengths.
    Propagate,
    /// Predict opinions for every user in the gold file.
    Predict,
    /// Score predictions against gold labels.
    Eval,
    /// Export model tables and competitive-entity candidates.
    Export,
}

// ---------------------------------------------------------------------
// Error handling: exit 1 for validation problems, 2 for runtime ones.

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<ToimError> for CliError {
    fn from(e: ToimError) -> Self {
        match e {
            ToimError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

// ---------------------------------------------------------------------
// Helpers

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| validation(format!("config {}: {e}", path.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| validation(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(topics) = cli.topics {
        config.topics = topics;
    }
    if let Some(mode) = cli.mode {
        config.propagation.mode = match mode {
            ModeArg::Conservative => PropagationMode::Conservative,
            ModeArg::Nonconservative => PropagationMode::Nonconservative,
        };
    }
    if let Some(t) = cli.t {
        config.propagation.steps = t;
    }
    if let Some(beta) = cli.beta {
        config.propagation.decay_beta = beta;
    }
    if let Some(w) = cli.w {
        config.prediction.w = w;
    }
    if let Some(out) = &cli.out {
        config.paths.out_dir = Some(out.clone());
    }
    // The prediction stage shares the global seed unless the config
    // pinned one explicitly; the synthetic generator always follows it.
    config.synth.seed = config.seed;
    Ok(config)
}

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(validation(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

/// Comment header carried by every text artifact.
fn header(config: &RunConfig) -> String {
    format!("# config_hash={:016x} seed={}\n", config.hash(), config.seed)
}

fn write_artifact(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime(format!("create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| runtime(format!("write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_model(config: &RunConfig) -> CliResult<(TrainedModel, Vec<String>, Vec<String>)> {
    let path = config.model_path();
    require_exists(&path, "model file")?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| runtime(format!("read {}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| runtime(format!("model {}: {e}", path.display())))?;
    let users = file.users.clone();
    let nouns = file.nouns.clone();
    Ok((file.into_model(), users, nouns))
}

fn load_gold(config: &RunConfig) -> CliResult<Vec<GoldLabel>> {
    let path = config.gold_path();
    require_exists(&path, "gold file")?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| runtime(format!("read {}: {e}", path.display())))?;
    let mut gold = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let label: GoldLabel = serde_json::from_str(line)
            .map_err(|e| runtime(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
        gold.push(label);
    }
    if gold.is_empty() {
        return Err(runtime(format!("{}: no gold labels", path.display())));
    }
    Ok(gold)
}

/// Learned dominant topic of a user: the argmax of their topic mixture.
fn dominant_topic(model: &TrainedModel, user: usize) -> usize {
    let row = &model.topics.theta[user];
    (0..row.len())
        .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
        .unwrap_or(0)
}

// ---------------------------------------------------------------------
// Commands

fn cmd_synth(config: &RunConfig) -> CliResult<()> {
    let corpus = synth::generate(&config.synth)?;
    let graph = corpus.to_graph()?;
    let head = header(config);
    write_artifact(
        &config.corpus_path(),
        &format!("{head}{}", graph.to_jsonl()),
    )?;
    write_artifact(
        &config.lexicon_path(),
        &format!("{head}{}", corpus.lexicon_tsv()),
    )?;
    write_artifact(
        &config.gold_path(),
        &format!("{head}{}", corpus.gold_jsonl()),
    )?;
    Ok(())
}

fn cmd_ingest(config: &RunConfig) -> CliResult<()> {
    let corpus_path = config.corpus_path();
    let lexicon_path = config.lexicon_path();
    require_exists(&corpus_path, "corpus file")?;
    require_exists(&lexicon_path, "lexicon file")?;
    let ingested = ingest_messages(&corpus_path, &lexicon_path)?;
    let summary = serde_json::json!({
        "config_hash": format!("{:016x}", config.hash()),
        "seed": config.seed,
        "summary": ingested.graph.summary(),
        "nouns": ingested.vocab.nouns.len(),
        "opinion_words": ingested.vocab.opinion_words.len(),
        "warnings": ingested.warnings,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_artifact(&config.out_dir().join("summary.json"), &format!("{text}\n"))
}

fn cmd_train(config: &RunConfig) -> CliResult<()> {
    let gibbs = config.gibbs_config();
    gibbs.validate()?;
    let corpus_path = config.corpus_path();
    let lexicon_path = config.lexicon_path();
    require_exists(&corpus_path, "corpus file")?;
    require_exists(&lexicon_path, "lexicon file")?;
    let ingested = ingest_messages(&corpus_path, &lexicon_path)?;
    let stats = build_corpus_stats(&ingested.graph, &ingested.vocab);
    let coe = match &config.paths.coe {
        Some(path) => {
            require_exists(path, "competitive-entity file")?;
            CoETable::load(path)?
        }
        None => CoETable::default(),
    };
    let options = TrainOptions {
        smoothing: config.smoothing,
        min_sd: config.min_sd,
        workers: config.workers,
    };
    let model = influence::train(
        &ingested.graph,
        &ingested.vocab,
        &stats,
        &coe,
        &gibbs,
        &config.oai,
        &options,
    )?;
    let users: Vec<String> = ingested.graph.users.iter().map(|u| u.id.clone()).collect();
    let file = ModelFile::from_model(&model, users, ingested.vocab.nouns.clone(), config.hash());
    let text = serde_json::to_string_pretty(&file).expect("model serializes");
    write_artifact(&config.model_path(), &format!("{text}\n"))
}

fn cmd_propagate(config: &RunConfig) -> CliResult<()> {
    config.propagation.validate()?;
    let (model, users, _) = load_model(config)?;
    let mut out = header(config);
    let mut wrote_columns = false;
    for topic in 0..model.gibbs_config.k {
        let refined = refine_ledger(&model, topic, users.len(), &config.propagation)?;
        let direct = direct_agree_matrix(&model.strengths, topic, users.len());
        let csv = refined.to_csv(&direct, &config.propagation);
        let mut lines = csv.lines();
        let columns = lines.next().unwrap_or_default();
        if !wrote_columns {
            out.push_str(columns);
            out.push('\n');
            wrote_columns = true;
        }
        for line in lines {
            out.push_str(line);
            out.push('\n');
        }
    }
    write_artifact(&config.refined_path(), &out)
}

fn refined_for(
    config: &RunConfig,
    model: &TrainedModel,
    n_users: usize,
    topic: usize,
    cache: &mut BTreeMap<usize, RefinedParams>,
) -> CliResult<()> {
    if !cache.contains_key(&topic) {
        let refined = refine_ledger(model, topic, n_users, &config.propagation)?;
        cache.insert(topic, refined);
    }
    Ok(())
}

fn cmd_predict(config: &RunConfig) -> CliResult<()> {
    let mut prediction = config.prediction.clone();
    prediction.seed = config.seed;
    prediction.validate()?;
    let (model, users, _) = load_model(config)?;
    let gold = load_gold(config)?;
    let user_index: BTreeMap<&str, usize> = users
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    // Test-time opinions: every gold label, keyed by the user's learned
    // dominant topic.
    let mut known = BTreeMap::new();
    let mut targets = Vec::new();
    for label in &gold {
        let &u = user_index
            .get(label.user.as_str())
            .ok_or_else(|| runtime(format!("gold user {} not in model", label.user)))?;
        let k = dominant_topic(&model, u);
        known.insert((u, k), label.polarity);
        targets.push((label.user.clone(), u, k));
    }

    let mut refined_cache = BTreeMap::new();
    let mut out = header(config);
    for (id, u, k) in targets {
        let refined = if prediction.use_refined {
            refined_for(config, &model, users.len(), k, &mut refined_cache)?;
            refined_cache.get(&k)
        } else {
            None
        };
        let line = match predict(&model, refined, u, k, &known, &prediction) {
            Ok(p) => serde_json::json!({
                "user": id,
                "topic": k,
                "pred": if p.abstained { 0 } else { p.o_new },
                "swo": p.swo,
                "support": p.support,
                "abstained": p.abstained,
            }),
            // No neighborhood at all: abstain.
            Err(ToimError::NoNeighbors { .. }) => serde_json::json!({
                "user": id,
                "topic": k,
                "pred": 0,
                "swo": 0.0,
                "support": 0,
                "abstained": true,
            }),
            Err(e) => return Err(e.into()),
        };
        out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
        out.push('\n');
    }
    write_artifact(&config.predictions_path(), &out)
}

#[derive(Debug, Deserialize)]
struct PredictionLine {
    user: String,
    pred: i8,
}

fn cmd_eval(config: &RunConfig) -> CliResult<()> {
    let pred_path = config.predictions_path();
    require_exists(&pred_path, "predictions file")?;
    let text = std::fs::read_to_string(&pred_path)
        .map_err(|e| runtime(format!("read {}: {e}", pred_path.display())))?;
    let mut predicted: BTreeMap<String, i8> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(line)
            .map_err(|e| runtime(format!("{} line {}: {e}", pred_path.display(), lineno + 1)))?;
        predicted.insert(p.user, p.pred);
    }
    let gold = load_gold(config)?;
    let mut pairs = Vec::new();
    for label in &gold {
        let pred = *predicted
            .get(&label.user)
            .ok_or_else(|| runtime(format!("no prediction for gold user {}", label.user)))?;
        pairs.push((pred, label.polarity));
    }
    let report = evaluate(&pairs)?;
    let labels: Vec<i8> = gold.iter().map(|g| g.polarity).collect();
    let majority = baseline_majority(&labels);
    let majority_correct = labels.iter().filter(|&&g| g == majority).count();
    let doc = serde_json::json!({
        "config_hash": format!("{:016x}", config.hash()),
        "seed": config.seed,
        "report": report,
        "baseline_majority_accuracy": majority_correct as f64 / labels.len() as f64,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    write_artifact(&config.report_path(), &format!("{text}\n"))
}

fn cmd_export(config: &RunConfig) -> CliResult<()> {
    let (model, users, nouns) = load_model(config)?;
    let head = header(config);
    let (pairs, warnings) = build_coe_candidates(&model.topics.phi, &nouns, 20);
    for w in warnings {
        eprintln!("warning: {w}");
    }
    write_artifact(
        &config.out_dir().join("candidates.tsv"),
        &format!("{head}{}", candidates_tsv(&pairs)),
    )?;

    let mut theta = format!("{head}user,topic,weight\n");
    for (u, row) in model.topics.theta.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            theta.push_str(&format!("{},{k},{v}\n", users[u]));
        }
    }
    write_artifact(&config.out_dir().join("theta.csv"), &theta)?;

    let mut phi = format!("{head}topic,noun,weight\n");
    for (k, row) in model.topics.phi.iter().enumerate() {
        for (n, v) in row.iter().enumerate() {
            phi.push_str(&format!("{k},{},{v}\n", nouns[n]));
        }
    }
    write_artifact(&config.out_dir().join("phi.csv"), &phi)?;

    let mut psi = format!("{head}user,topic,p_pos,p_neg,observed\n");
    for u in 0..users.len() {
        for k in 0..model.gibbs_config.k {
            let e = model.psi.get(u, k);
            psi.push_str(&format!(
                "{},{k},{},{},{}\n",
                users[u], e.p_pos, e.p_neg, e.observed
            ));
        }
    }
    write_artifact(&config.out_dir().join("psi.csv"), &psi)
}

// ---------------------------------------------------------------------

fn run(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli)?;
    match cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Ingest => cmd_ingest(&config),
        Command::Train => cmd_train(&config),
        Command::Propagate => cmd_propagate(&config),
        Command::Predict => cmd_predict(&config),
        Command::Eval => cmd_eval(&config),
        Command::Export => cmd_export(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

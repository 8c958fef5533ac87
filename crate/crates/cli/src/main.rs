//! Command-line front end: graph building, retrieval, training, evaluation,
//! ablation sweeps and gradient self-checks.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! check failure. Tables go to stdout, diagnostics to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mrmkg::config::{apply_config, parse_query_source, set, write_config};
use mrmkg::embedding::{load_embeddings, save_embeddings, EmbeddingError, EmbeddingStore};
use mrmkg::graph::{ingest_scene_graphs, load_graph, parse_scene_graph_lines, save_graph, GraphError, Modality, MultimodalGraph};
use mrmkg::model::{selfcheck, ModelError, Vocab};
use mrmkg::nn::{load_checkpoint, save_checkpoint, save_optimizer, NnError};
use mrmkg::retrieval::{pseudo_query, retrieve_subgraph, RetrievalConfig, RetrievalError};
use mrmkg::train::synthetic::{generate, synthetic_retrieval, SyntheticConfig};
use mrmkg::train::{
    evaluate, extend_vocab, finetune, parse_ranks, prepare, pretrain, run_ablation, warm_start, write_loss_log, Dataset,
    RankingMetrics, Stage, TrainConfig, TrainError, TrainRun,
};

#[derive(Parser)]
#[command(name = "mrmkg", version, about = "Multimodal knowledge-graph augmented reasoning toolkit")]
struct Cli {
    /// Seed for initialization, shuffling and alignment sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Concurrent runs for `ablate`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Any config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest JSON Lines scene graphs into a graph file.
    BuildGraph {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `<out>/graph.mmkg`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write pseudo embeddings for every entity and relation of a graph.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        pseudo_seed: u64,
        /// Defaults to `<out>/embeddings.emb`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Retrieve the query-relevant subgraph.
    Retrieve {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, conflicts_with = "pseudo_seed", required_unless_present = "pseudo_seed")]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        pseudo_seed: Option<u64>,
        /// Width of pseudo embeddings.
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long)]
        query_text: Option<String>,
        #[arg(long)]
        query_image_key: Option<String>,
        #[arg(long, default_value = "text", value_parser = parse_query_source)]
        mode: mrmkg::embedding::QuerySource,
        /// Triples whose entities seed the expansion [default: --n-final]
        #[arg(long)]
        n_seed: Option<usize>,
        #[arg(long, default_value_t = 10)]
        n_final: usize,
        #[arg(long, default_value_t = 1)]
        hops: usize,
    },
    /// Train from scratch; writes a checkpoint, loss log and vocabulary.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Warm-start from a checkpoint and train on a task corpus.
    Finetune {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `vocab.txt` next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on a corpus, or summarize a rank file.
    Evaluate {
        /// One gold rank per line.
        #[arg(long, conflicts_with_all = ["corpus", "checkpoint"], required_unless_present = "corpus")]
        ranks: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the four stacked configurations over several seeds.
    Ablate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck,
    /// Generate the synthetic color-question corpus.
    Synth {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value = "corpus.txt")]
        name: String,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(what: impl std::fmt::Display) -> Self {
        Failure { code: 1, message: what.to_string() }
    }

    fn invalid(what: impl std::fmt::Display) -> Self {
        Failure { code: 2, message: what.to_string() }
    }
}

fn graph_code(e: &GraphError) -> u8 {
    if matches!(e, GraphError::Io(_)) { 1 } else { 2 }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Nn(NnError::Io(_)) => 1,
        ModelError::Graph(g) => graph_code(g),
        ModelError::Embedding(EmbeddingError::Io(_)) => 1,
        ModelError::Retrieval(RetrievalError::Embedding(EmbeddingError::Io(_))) => 1,
        _ => 2,
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Io(_) => 1,
            TrainError::Graph { source, .. } => graph_code(source),
            TrainError::NonFinite { .. } => 3,
            TrainError::Model(m) => model_code(m),
            TrainError::Instance { source, .. } => Failure::from((**source).clone()).code,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure { code: model_code(&e), message: e.to_string() }
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        ModelError::from(e).into()
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure { code: graph_code(&e), message: e.to_string() }
    }
}

impl From<EmbeddingError> for Failure {
    fn from(e: EmbeddingError) -> Self {
        ModelError::from(e).into()
    }
}

impl From<RetrievalError> for Failure {
    fn from(e: RetrievalError) -> Self {
        ModelError::from(e).into()
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out).map_err(|e| Failure::io(format!("{}: {e}", cli.out.display())))?;
    Ok(&cli.out)
}

fn load_graph_file(path: &Path) -> Result<MultimodalGraph> {
    load_graph(path).map_err(|e| Failure { code: graph_code(&e), message: format!("{}: {e}", path.display()) })
}

/// Defaults, then the config file, then flags.
fn effective_config(cli: &Cli, stage: Stage, overrides: &Overrides) -> Result<TrainConfig> {
    let mut cfg = TrainConfig { stage, ..TrainConfig::default() };
    if let Some(path) = &cli.config {
        apply_config(&mut cfg, &read(path)?).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    }
    for kv in &overrides.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::invalid(format!("--set expects key=value, got {kv:?}")))?;
        set(&mut cfg, k.trim(), v.trim()).map_err(Failure::invalid)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(e) = overrides.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = overrides.lr {
        cfg.lr = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn echo_config(dir: &Path, cfg: &TrainConfig) -> Result<()> {
    write(&dir.join("config.txt"), write_config(cfg))
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::parse(&read(path)?).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn vocab_beside(checkpoint: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| checkpoint.with_file_name("vocab.txt"))
}

fn save_run(dir: &Path, run: &TrainRun, vocab: &Vocab, cfg: &TrainConfig) -> Result<()> {
    echo_config(dir, cfg)?;
    let ckpt = dir.join("checkpoint.ckpt");
    save_checkpoint(&run.model.params, &ckpt)?;
    eprintln!("wrote {}", ckpt.display());
    let opt = dir.join("optimizer.state");
    save_optimizer(&run.optimizer, &opt)?;
    eprintln!("wrote {}", opt.display());
    write(&dir.join("loss.tsv"), write_loss_log(&run.log))?;
    write(&dir.join("vocab.txt"), vocab.write())?;
    if let (Some(first), Some(last)) = (run.log.first(), run.log.last()) {
        eprintln!("steps {} first loss {} last loss {}", run.log.len(), first.loss, last.loss);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildGraph { input, output } => {
            let records = parse_scene_graph_lines(&read(input)?)
                .map_err(|e| Failure { code: graph_code(&e), message: format!("{}: {e}", input.display()) })?;
            let graph = ingest_scene_graphs(&records)?;
            let path = output.clone().unwrap_or_else(|| cli.out.join("graph.mmkg"));
            if output.is_none() {
                out_dir(cli)?;
            }
            save_graph(&graph, &path)?;
            eprintln!("wrote {}", path.display());
            println!(
                "entities {} text {} image {} attribute {} relations {} triples {}",
                graph.entity_count(),
                graph.count_by_modality(Modality::Text),
                graph.count_by_modality(Modality::Image),
                graph.count_by_modality(Modality::Attribute),
                graph.relation_count(),
                graph.triple_count()
            );
        }
        Command::Embed { graph, dim, pseudo_seed, output } => {
            if *dim == 0 {
                return Err(Failure::invalid("--dim must be positive"));
            }
            let g = load_graph_file(graph)?;
            let store = EmbeddingStore::pseudo(&g, *dim, *pseudo_seed)?;
            let path = output.clone().unwrap_or_else(|| cli.out.join("embeddings.emb"));
            if output.is_none() {
                out_dir(cli)?;
            }
            save_embeddings(&store, &path)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Retrieve { graph, embeddings, pseudo_seed, dim, query_text, query_image_key, mode, n_seed, n_final, hops } => {
            let g = load_graph_file(graph)?;
            let (store, seed) = match (embeddings, pseudo_seed) {
                (Some(path), _) => (load_embeddings(path, &g)?, 0),
                (None, Some(seed)) => {
                    if *dim == 0 {
                        return Err(Failure::invalid("--dim must be positive"));
                    }
                    (EmbeddingStore::pseudo(&g, *dim, *seed)?, *seed)
                }
                (None, None) => return Err(Failure::invalid("--embeddings or --pseudo-seed is required")),
            };
            let config = RetrievalConfig { mode: *mode, n_seed: n_seed.unwrap_or(*n_final), n_final: *n_final, hops: *hops };
            let text = query_text.as_deref().unwrap_or("");
            let query = match (*mode, text.trim().is_empty()) {
                (mrmkg::embedding::QuerySource::ImageOnly, _) => pseudo_query("", query_image_key.as_deref(), *mode, store.dim(), seed)?,
                (_, true) => return Err(RetrievalError::MissingModality(*mode).into()),
                _ => pseudo_query(text, query_image_key.as_deref(), *mode, store.dim(), seed)?,
            };
            let sub = retrieve_subgraph(&query, &g, &store, &config)?;
            let dir = out_dir(cli)?;
            let path = dir.join("subgraph.mmkg");
            save_graph(&sub.graph, &path)?;
            eprintln!("wrote {}", path.display());
            write(&dir.join("subgraph.scores"), sub.score_sidecar())?;
            println!("triples {} entities {}", sub.graph.triple_count(), sub.graph.entity_count());
        }
        Command::Pretrain { corpus, overrides } => {
            let cfg = effective_config(cli, Stage::Pretrain, overrides)?;
            let data = Dataset::load(corpus)?;
            let mut vocab = Vocab::new();
            extend_vocab(&mut vocab, &data)?;
            let run = pretrain(&data, &vocab, &cfg)?;
            save_run(out_dir(cli)?, &run, &vocab, &cfg)?;
        }
        Command::Finetune { corpus, checkpoint, vocab, overrides } => {
            let cfg = effective_config(cli, Stage::Finetune, overrides)?;
            let data = Dataset::load(corpus)?;
            let mut v = load_vocab(&vocab_beside(checkpoint, vocab))?;
            extend_vocab(&mut v, &data)?;
            let ckpt = load_checkpoint(checkpoint)?;
            let run = finetune(&data, &v, &ckpt, &cfg)?;
            save_run(out_dir(cli)?, &run, &v, &cfg)?;
        }
        Command::Evaluate { ranks, corpus, checkpoint, vocab, overrides } => {
            if let Some(path) = ranks {
                let metrics = RankingMetrics::from_ranks(parse_ranks(&read(path)?)?)?;
                print!("{}", metrics.table());
                return Ok(());
            }
            let (Some(corpus), Some(checkpoint)) = (corpus, checkpoint) else {
                return Err(Failure::invalid("evaluate needs --ranks or --corpus with --checkpoint"));
            };
            let cfg = effective_config(cli, Stage::Finetune, overrides)?;
            let data = Dataset::load(corpus)?;
            let mut v = load_vocab(&vocab_beside(checkpoint, vocab))?;
            extend_vocab(&mut v, &data)?;
            let model = warm_start(&cfg.model, cfg.seed, &load_checkpoint(checkpoint)?, &[&data])?;
            let examples = prepare(&data, &v, &model.config, &cfg.retrieval)?;
            echo_config(out_dir(cli)?, &cfg)?;
            print!("{}", evaluate(&model, &examples)?.table());
        }
        Command::Ablate { train, test, seeds, overrides } => {
            let cfg = effective_config(cli, Stage::Pretrain, overrides)?;
            let (tr, te) = (Dataset::load(train)?, Dataset::load(test)?);
            let mut vocab = Vocab::new();
            extend_vocab(&mut vocab, &tr)?;
            extend_vocab(&mut vocab, &te)?;
            let report = run_ablation(&cfg, &tr, &te, &vocab, seeds, cli.jobs)?;
            let dir = out_dir(cli)?;
            echo_config(dir, &cfg)?;
            write(&dir.join("ablation.txt"), report.table())?;
            write(&dir.join("ablation.tsv"), report.tsv())?;
            print!("{}", report.table());
        }
        Command::Gradcheck => {
            let rows = selfcheck::run_all(cli.seed.unwrap_or(0))?;
            println!("layer\tmax_rel_error\ttolerance\tchecked\tstatus");
            let mut failed = 0;
            for r in &rows {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                failed += !r.passed() as usize;
                println!("{}\t{:.3e}\t{:.0e}\t{}/{}\t{status}", r.name, r.result.max_rel_error, r.tolerance, r.result.checked, r.result.total);
            }
            if failed > 0 {
                return Err(Failure { code: 3, message: format!("{failed} gradient checks exceed tolerance") });
            }
        }
        Command::Synth { instances, name } => {
            if name.contains('/') || name.is_empty() {
                return Err(Failure::invalid("--name must be a plain file name"));
            }
            let dir = out_dir(cli)?;
            let data = generate(&SyntheticConfig::new(*instances, cli.seed.unwrap_or(0)))?;
            let path = dir.join(name);
            data.save(&path)?;
            eprintln!("wrote {} and {} graphs", path.display(), data.graphs.len());
            let r = synthetic_retrieval();
            let conf = format!(
                "# retrieval that isolates the asked object's neighborhood\nretrieval_mode = {}\nn_seed = {}\nn_final = {}\nhops = {}\n",
                mrmkg::config::query_source_str(r.mode),
                r.n_seed,
                r.n_final,
                r.hops
            );
            write(&dir.join("synth.conf"), conf)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

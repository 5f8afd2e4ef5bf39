//! The `dialog-rank` command line.

pub mod config;
pub mod model_file;
pub mod selftest;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    build_ranking_instances, generate_training_set, load_instances, load_triples, read_dialogs, split_dialogs,
    synthetic_dialogs, write_dialogs, write_instances, write_triples, RankingInstance, SplitSpec, SyntheticConfig,
    UtterancePool,
};
use crate::encoders::Architecture;
use crate::error::{Error, Result};
use crate::ranking::{
    evaluate, format_metrics_table, format_nbest, group_by_n, rank, tfidf_fit, Ensemble, MetricsTable, PairScorer,
    TextScorer, STANDARD_METRICS,
};
use crate::scorer::DualEncoderModel;
use crate::text::{build_vocabulary, load_pretrained, tokenize, EmbeddingMatrix, Vocabulary};
use crate::training::{encode_examples, encode_instances, sweep, sweep_to_csv, train};

pub use config::RunConfig;
pub use model_file::{load_model, save_model};

#[derive(Debug, Parser)]
#[command(
    name = "dialog-rank",
    version,
    about = "Next-utterance ranking for multi-turn dialog"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every command. Each one overrides the matching key
/// of the `--config` file.
#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// cnn, lstm or bilstm
    #[arg(long, global = true)]
    pub arch: Option<String>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// One encoder for contexts and responses
    #[arg(long, global = true, conflicts_with = "separate")]
    pub shared: bool,
    /// Separate context and response encoders
    #[arg(long, global = true)]
    pub separate: bool,
    #[arg(long, global = true)]
    pub freeze_embeddings: bool,
    /// Worker threads for evaluation; 1 is fully deterministic
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// File listing member model paths, one per line
    #[arg(long, global = true)]
    pub ensemble: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embedding_dim: Option<usize>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// CNN filters as width:count pairs, e.g. 2:400,3:100,4:100
    #[arg(long, global = true)]
    pub filters: Option<String>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    pub eval_candidates: Option<usize>,
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split dialogs and write training triples and ranking instances
    Prepare {
        /// Dialog file (speaker<TAB>utterance lines, blank line between dialogs)
        #[arg(long, conflicts_with = "synthetic")]
        dialogs: Option<PathBuf>,
        /// Generate this many synthetic dialogs instead of reading a file
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0.02)]
        valid_fraction: f64,
    },
    /// Build a vocabulary and an embedding table from training triples
    Vocab {
        #[arg(long)]
        train: Option<PathBuf>,
        /// Pretrained GloVe-format vectors
        #[arg(long)]
        glove: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the embedding table in GloVe text format
        #[arg(long)]
        embeddings_out: Option<PathBuf>,
        #[arg(long)]
        min_count: Option<usize>,
        #[arg(long)]
        max_vocab: Option<usize>,
    },
    /// Train one model with early stopping on validation Recall@1
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Starting embeddings in GloVe text format
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Output model path
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch history CSV
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Recall@k of a model, an ensemble or the TF-IDF baseline
    Evaluate {
        #[arg(long)]
        test: Option<PathBuf>,
        /// Fit the TF-IDF baseline on these training triples and evaluate it
        #[arg(long)]
        tfidf: Option<PathBuf>,
        /// Metrics CSV output
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Print a ranked n-best list for one context
    Rank {
        /// File holding the context text
        #[arg(long)]
        context: PathBuf,
        /// File with one candidate response per line
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Check that models load together and write an ensemble manifest
    Ensemble {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        members: Vec<PathBuf>,
    },
    /// Test Recall@1 as a function of training-set size
    Sweep {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Comma-separated ascending sizes
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Comma-separated architectures; all when omitted
        #[arg(long, value_delimiter = ',')]
        archs: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient checks and oracle comparisons; exit 0 iff all pass
    Selftest {
        #[arg(long, hide = true)]
        break_backward: bool,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on invalid input, 2 on I/O failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout();
    match execute(cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn settings(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides: Vec<(&str, Option<String>)> = vec![
        ("seed", common.seed.map(|v| v.to_string())),
        ("arch", common.arch.clone()),
        ("batch_size", common.batch_size.map(|v| v.to_string())),
        ("epochs", common.epochs.map(|v| v.to_string())),
        ("patience", common.patience.map(|v| v.to_string())),
        ("shared", common.shared.then(|| "true".into())),
        ("shared", common.separate.then(|| "false".into())),
        ("freeze_embeddings", common.freeze_embeddings.then(|| "true".into())),
        ("threads", common.threads.map(|v| v.to_string())),
        ("model", common.model.as_ref().map(|p| p.display().to_string())),
        ("ensemble", common.ensemble.as_ref().map(|p| p.display().to_string())),
        ("embedding_dim", common.embedding_dim.map(|v| v.to_string())),
        ("hidden", common.hidden.map(|v| v.to_string())),
        ("filters", common.filters.clone()),
        ("learning_rate", common.learning_rate.map(|v| v.to_string())),
        ("max_len", common.max_len.map(|v| v.to_string())),
        ("eval_candidates", common.eval_candidates.map(|v| v.to_string())),
        ("vocab", common.vocab.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn set_path(cfg: &mut RunConfig, key: &str, path: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = path {
        cfg.set(key, p.display().to_string())?;
    }
    Ok(())
}

fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> Result<i32> {
    let mut cfg = settings(&cli.common)?;
    let threads: usize = cfg.get_or("threads", 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &mut cfg, out))
}

fn dispatch(command: Command, cfg: &mut RunConfig, out: &mut (dyn Write + Send)) -> Result<i32> {
    match command {
        Command::Prepare {
            dialogs,
            synthetic,
            out: dir,
            test_fraction,
            valid_fraction,
        } => prepare(cfg, dialogs, synthetic, &dir, test_fraction, valid_fraction, out),
        Command::Vocab {
            train,
            glove,
            out: path,
            embeddings_out,
            min_count,
            max_vocab,
        } => {
            set_path(cfg, "train", &train)?;
            if let Some(v) = min_count {
                cfg.set("min_count", v.to_string())?;
            }
            if let Some(v) = max_vocab {
                cfg.set("max_vocab", v.to_string())?;
            }
            vocab_cmd(cfg, glove.as_deref(), &path, embeddings_out.as_deref(), out)
        }
        Command::Train {
            train,
            valid,
            embeddings,
            out: model_out,
            history,
        } => {
            set_path(cfg, "train", &train)?;
            set_path(cfg, "valid", &valid)?;
            set_path(cfg, "embeddings", &embeddings)?;
            set_path(cfg, "out", &model_out)?;
            train_cmd(cfg, history.as_deref(), out)
        }
        Command::Evaluate {
            test,
            tfidf,
            metrics_out,
        } => {
            set_path(cfg, "test", &test)?;
            evaluate_cmd(cfg, tfidf.as_deref(), metrics_out.as_deref(), out)
        }
        Command::Rank { context, candidates } => rank_cmd(cfg, &context, &candidates, out),
        Command::Ensemble { out: manifest, members } => ensemble_cmd(cfg, &manifest, &members, out),
        Command::Sweep {
            train,
            valid,
            test,
            sizes,
            archs,
            out: csv_out,
        } => {
            set_path(cfg, "train", &train)?;
            set_path(cfg, "valid", &valid)?;
            set_path(cfg, "test", &test)?;
            set_path(cfg, "out", &csv_out)?;
            sweep_cmd(cfg, &sizes, &archs, out)
        }
        Command::Selftest { break_backward } => {
            let results = selftest::run_all(break_backward);
            let mut ok = true;
            for r in &results {
                ok &= r.passed;
                writeln!(
                    out,
                    "{} {:<22} {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                )?;
            }
            Ok(if ok { 0 } else { 1 })
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    let path = cfg.require_path("vocab")?;
    let bytes = std::fs::read(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Vocabulary::from_bytes(&bytes)
}

fn read_instances(path: &Path) -> Result<Vec<RankingInstance>> {
    load_instances(open(path)?)
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    cfg: &RunConfig,
    dialogs: Option<PathBuf>,
    synthetic: Option<usize>,
    dir: &Path,
    test_fraction: f64,
    valid_fraction: f64,
    out: &mut (dyn Write + Send),
) -> Result<i32> {
    let seed: u64 = cfg.get_or("seed", 0)?;
    let eval_n: usize = cfg.get_or("eval_candidates", 10)?;
    let all = match (dialogs, synthetic) {
        (Some(p), None) => read_dialogs(open(&p)?)?,
        (None, Some(n)) => synthetic_dialogs(n, seed, &SyntheticConfig::default()),
        _ => return Err(Error::validation("give exactly one of --dialogs or --synthetic")),
    };
    let usable: Vec<_> = all.iter().filter(|d| d.len() >= 3).cloned().collect();
    let split = split_dialogs(
        &usable,
        &SplitSpec {
            test_fraction,
            valid_fraction,
            seed,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Distractors for each split come from that split only.
    let train_pool = UtterancePool::from_dialogs(&split.train)?;
    let examples = generate_training_set(&split.train, &train_pool, &mut rng)?;
    let valid_pool = UtterancePool::from_dialogs(&split.valid)?;
    let valid = build_ranking_instances(&split.valid, eval_n, &valid_pool, &mut rng)?;
    let test_pool = UtterancePool::from_dialogs(&split.test)?;
    let mut test = build_ranking_instances(&split.test, 2, &test_pool, &mut rng)?;
    test.extend(build_ranking_instances(&split.test, 10, &test_pool, &mut rng)?);

    std::fs::create_dir_all(dir)?;
    if synthetic.is_some() {
        write_dialogs(create(&dir.join("dialogs.txt"))?, &all)?;
    }
    write_triples(create(&dir.join("train.csv"))?, &examples)?;
    write_instances(create(&dir.join("valid.csv"))?, &valid)?;
    write_instances(create(&dir.join("test.csv"))?, &test)?;
    writeln!(
        out,
        "{} dialogs ({} skipped as too short): {} train / {} valid / {} test",
        all.len(),
        all.len() - usable.len(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    )?;
    writeln!(
        out,
        "wrote {} training triples, {} validation and {} test instances to {}",
        examples.len(),
        valid.len(),
        test.len(),
        dir.display()
    )?;
    Ok(0)
}

fn vocab_cmd(
    cfg: &RunConfig,
    glove: Option<&Path>,
    path: &Path,
    embeddings_out: Option<&Path>,
    out: &mut (dyn Write + Send),
) -> Result<i32> {
    let examples = load_triples(open(&cfg.require_path("train")?)?, true)?;
    let vocab = build_vocabulary(
        examples
            .iter()
            .flat_map(|e| [tokenize(&e.context), tokenize(&e.response)]),
        cfg.get_or("min_count", 1)?,
        cfg.get_or("max_vocab", usize::MAX)?,
    )?;
    create(path)?.write_all(&vocab.to_bytes())?;
    writeln!(out, "vocabulary: {} tokens -> {}", vocab.len(), path.display())?;
    if let Some(emb_path) = embeddings_out {
        let dim = cfg.get_or("embedding_dim", 300)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.get_or("seed", 0)?);
        let emb = match glove {
            Some(g) => load_pretrained(open(g)?, &vocab, dim, &mut rng)?,
            None => EmbeddingMatrix::random(vocab.len(), dim, &mut rng),
        };
        create(emb_path)?.write_all(emb.to_glove_text(&vocab).as_bytes())?;
        writeln!(out, "embeddings: {}x{dim} -> {}", vocab.len(), emb_path.display())?;
    }
    Ok(0)
}

fn train_cmd(cfg: &RunConfig, history_path: Option<&Path>, out: &mut (dyn Write + Send)) -> Result<i32> {
    let vocab = read_vocab(cfg)?;
    let train_cfg = cfg.train_config()?;
    let mut spec = cfg.model_spec()?;
    let arch = cfg.architecture()?;
    if let Some(p) = cfg.path("embeddings") {
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        spec.embeddings = Some(load_pretrained(open(&p)?, &vocab, spec.embedding_dim, &mut rng)?);
    }
    let model_path = cfg.require_path("out")?;
    let examples = load_triples(open(&cfg.require_path("train")?)?, true)?;
    let valid: Vec<_> = read_instances(&cfg.require_path("valid")?)?
        .into_iter()
        .filter(|i| i.n() == train_cfg.eval_candidates)
        .collect();
    let data = encode_examples(&examples, &vocab, train_cfg.max_len);
    let valid = encode_instances(&valid, &vocab, train_cfg.max_len);

    let model = spec.build(arch, vocab.len(), train_cfg.seed)?;
    let (best, history) = train(model, &data, &valid, &train_cfg)?;
    save_model(&best, &vocab, &model_path)?;
    if let Some(h) = history_path {
        create(h)?.write_all(history.to_csv().as_bytes())?;
    }
    for r in &history.epochs {
        writeln!(
            out,
            "epoch {:>3}  loss {:.4}  valid 1 in {} R@1 {:.3}  {:.1}s",
            r.epoch, r.loss, train_cfg.eval_candidates, r.recall_at_1, r.seconds
        )?;
    }
    writeln!(
        out,
        "best epoch {} ({arch}); model -> {}",
        history.best_epoch,
        model_path.display()
    )?;
    Ok(0)
}

/// Reads a manifest: one model path per line, `#` comments, relative paths
/// resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let members: Vec<PathBuf> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect();
    if members.is_empty() {
        return Err(Error::validation(format!(
            "manifest {} lists no models",
            path.display()
        )));
    }
    Ok(members)
}

#[allow(clippy::large_enum_variant)]
enum Loaded {
    Single(DualEncoderModel),
    Ensemble(Ensemble),
}

fn load_scorer(cfg: &RunConfig, vocab: &Vocabulary) -> Result<(String, Loaded)> {
    match (cfg.path("model"), cfg.path("ensemble")) {
        (Some(m), None) => {
            let model = load_model(&m, vocab)?;
            Ok((model.architecture().to_string(), Loaded::Single(model)))
        }
        (None, Some(e)) => {
            let members = read_manifest(&e)?
                .iter()
                .map(|p| load_model(p, vocab))
                .collect::<Result<Vec<_>>>()?;
            let ens = Ensemble::new(members)?;
            Ok((format!("ensemble({})", ens.len()), Loaded::Ensemble(ens)))
        }
        _ => Err(Error::validation("give exactly one of --model or --ensemble")),
    }
}

fn with_text_scorer<T>(
    loaded: &Loaded,
    vocab: &Vocabulary,
    max_len: usize,
    f: impl FnOnce(&dyn PairScorer) -> Result<T>,
) -> Result<T> {
    match loaded {
        Loaded::Single(m) => f(&TextScorer::new(m, vocab, max_len)),
        Loaded::Ensemble(e) => f(&TextScorer::new(e, vocab, max_len)),
    }
}

fn evaluate_cmd(
    cfg: &RunConfig,
    tfidf_train: Option<&Path>,
    metrics_out: Option<&Path>,
    out: &mut (dyn Write + Send),
) -> Result<i32> {
    let instances = group_by_n(read_instances(&cfg.require_path("test")?)?);
    let (name, table): (String, MetricsTable) = match tfidf_train {
        Some(p) => {
            if cfg.path("model").is_some() || cfg.path("ensemble").is_some() {
                return Err(Error::validation(
                    "--tfidf cannot be combined with --model or --ensemble",
                ));
            }
            let examples = load_triples(open(p)?, true)?;
            let model = tfidf_fit(
                examples
                    .iter()
                    .flat_map(|e| [tokenize(&e.context), tokenize(&e.response)]),
            )?;
            writeln!(out, "# tfidf: {}", model.variant())?;
            ("tfidf".into(), evaluate(&model, &instances, &STANDARD_METRICS)?)
        }
        None => {
            let vocab = read_vocab(cfg)?;
            let (name, loaded) = load_scorer(cfg, &vocab)?;
            let max_len = cfg.get_or("max_len", crate::text::DEFAULT_MAX_LEN)?;
            let table = with_text_scorer(&loaded, &vocab, max_len, |s| evaluate(s, &instances, &STANDARD_METRICS))?;
            (name, table)
        }
    };
    write!(out, "{}", format_metrics_table(&[(name, table.clone())]))?;
    if let Some(p) = metrics_out {
        create(p)?.write_all(table.to_csv().as_bytes())?;
    }
    Ok(0)
}

fn rank_cmd(cfg: &RunConfig, context: &Path, candidates: &Path, out: &mut (dyn Write + Send)) -> Result<i32> {
    let vocab = read_vocab(cfg)?;
    let (_, loaded) = load_scorer(cfg, &vocab)?;
    let context = std::fs::read_to_string(context)?.trim().to_string();
    let candidates: Vec<String> = std::fs::read_to_string(candidates)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    // The truth index only matters for metrics; the list itself does not use it.
    let instance = RankingInstance::new(context.clone(), candidates.clone(), 0)?;
    let max_len = cfg.get_or("max_len", crate::text::DEFAULT_MAX_LEN)?;
    let result = with_text_scorer(&loaded, &vocab, max_len, |s| rank(&instance, s))?;
    writeln!(out, "Context: {context}")?;
    write!(out, "{}", format_nbest(&candidates, &result))?;
    Ok(0)
}

fn ensemble_cmd(cfg: &RunConfig, manifest: &Path, members: &[PathBuf], out: &mut (dyn Write + Send)) -> Result<i32> {
    let vocab = read_vocab(cfg)?;
    let models = members
        .iter()
        .map(|p| load_model(p, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let ens = Ensemble::new(models)?;
    let mut w = create(manifest)?;
    writeln!(w, "# ensemble of {} models", ens.len())?;
    for p in members {
        let abs = std::fs::canonicalize(p)?;
        writeln!(w, "{}", abs.display())?;
    }
    w.flush()?;
    let parts: Vec<String> = ens.composition().iter().map(|(a, n)| format!("{n} {a}")).collect();
    writeln!(out, "ensemble of {} -> {}", parts.join(", "), manifest.display())?;
    Ok(0)
}

fn sweep_cmd(cfg: &RunConfig, sizes: &[usize], archs: &[String], out: &mut (dyn Write + Send)) -> Result<i32> {
    let vocab = read_vocab(cfg)?;
    let train_cfg = cfg.train_config()?;
    let spec = cfg.model_spec()?;
    let archs: Vec<Architecture> = if archs.is_empty() {
        Architecture::ALL.to_vec()
    } else {
        archs.iter().map(|a| a.parse()).collect::<Result<_>>()?
    };
    let examples = load_triples(open(&cfg.require_path("train")?)?, true)?;
    let valid: Vec<_> = read_instances(&cfg.require_path("valid")?)?
        .into_iter()
        .filter(|i| i.n() == train_cfg.eval_candidates)
        .collect();
    let test: Vec<_> = read_instances(&cfg.require_path("test")?)?
        .into_iter()
        .filter(|i| i.n() == 10)
        .collect();
    let rows = sweep(
        sizes,
        &encode_examples(&examples, &vocab, train_cfg.max_len),
        &encode_instances(&valid, &vocab, train_cfg.max_len),
        &encode_instances(&test, &vocab, train_cfg.max_len),
        vocab.len(),
        &spec,
        &archs,
        &train_cfg,
    )?;
    let csv = sweep_to_csv(&rows);
    if let Some(p) = cfg.path("out") {
        create(&p)?.write_all(csv.as_bytes())?;
    }
    write!(out, "{csv}")?;
    Ok(0)
}

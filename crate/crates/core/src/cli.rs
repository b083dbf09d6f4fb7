//! Command-line front end.
//!
//! Settings resolve in three layers: command-line flags override the
//! `--config` TOML file, which overrides built-in defaults. Every command
//! that writes files also writes the resolved configuration next to them.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bias::{partition_bias, write_partition};
use crate::corpus::{load_manifest, select_corpus, CorpusSelector, SourceKind, SplitTag};
use crate::embedding::{
    export_tsv, load_embeddings_file, load_matrix_file, save_embeddings_file, save_matrix_file, train_sgns,
    SgnsConfig,
};
use crate::error::Error;
use crate::eval::{evaluate, run_ablation, sweep_extra_plots, AblationCell, AblationSpec};
use crate::finetune::{run_finetune, FinetuneConfig};
use crate::qamodel::{load_qa, score_qa, write_predictions, OovPolicy, QaModel};
use crate::synth::{generate_synth, SynthConfig};

/// Everything a run can be configured with. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds corpus sampling, embedding training, fine-tuning and synthesis.
    pub seed: u64,
    pub workers: usize,
    pub oov_policy: OovPolicy,
    pub paths: Paths,
    pub corpus: CorpusSelector,
    pub sgns: SgnsConfig,
    pub finetune: FinetuneConfig,
    pub synth: SynthConfig,
    pub ablation: AblationSettings,
    pub sweep: SweepSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            oov_policy: OovPolicy::Skip,
            paths: Paths::default(),
            corpus: CorpusSelector::plots([SplitTag::Train, SplitTag::Val]),
            sgns: SgnsConfig::default(),
            finetune: FinetuneConfig::default(),
            synth: SynthConfig::default(),
            ablation: AblationSettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub reweight: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub qa_train: Option<PathBuf>,
    pub qa_val: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    /// Corpus labels such as `train+val` or `train+val+200gen`.
    pub cells: Vec<String>,
    pub fine_tune: bool,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            cells: vec!["val".into(), "train".into(), "train+val".into()],
            fine_tune: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            budgets: vec![0, 100, 250, 500, 1000],
            seeds: vec![1, 2, 3],
        }
    }
}

impl RunConfig {
    /// Pushes the shared seed and worker count into every component.
    fn sync(&mut self) {
        self.sgns.seed = self.seed;
        self.sgns.workers = self.workers;
        self.finetune.seed = self.seed;
        self.finetune.workers = self.workers;
        self.synth.seed = self.seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes to TOML")
    }
}

/// Parses corpus labels like `train+val`, `val` or `train+val+200gen`
/// into plot selectors.
pub fn parse_corpus_label(label: &str) -> Result<CorpusSelector, String> {
    let mut splits = Vec::new();
    let mut extra = None;
    for part in label.split('+').map(str::trim) {
        if let Some(n) = part.strip_suffix("gen").filter(|n| !n.is_empty()) {
            extra = Some(n.parse::<usize>().map_err(|_| format!("bad extra-plot count in {label:?}"))?);
        } else {
            splits.push(SplitTag::from_str(part).map_err(|_| format!("unknown split {part:?} in {label:?}"))?);
        }
    }
    if splits.is_empty() {
        return Err(format!("corpus label {label:?} names no split"));
    }
    let sel = CorpusSelector::plots(splits);
    Ok(match extra {
        Some(n) => sel.with_extra(n),
        None => sel,
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "wikiword",
    version,
    about = "Plot-restricted word embeddings and a question/answer-only multiple-choice model"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train skip-gram embeddings on a selected slice of a corpus manifest.
    TrainEmbed(TrainEmbedArgs),
    /// Score a QA file and write one prediction per item.
    Answer(AnswerArgs),
    /// Fit the reweighting matrix on labelled QA items.
    Finetune(FinetuneArgs),
    /// Report exact-match accuracy on a labelled QA file.
    Evaluate(EvaluateArgs),
    /// Train/val accuracy grid over embedding corpora, with and without fine-tuning.
    Ablate(AblateArgs),
    /// Validation accuracy as extra general plots join the embedding corpus.
    Sweep(SweepArgs),
    /// Split a QA file into the items the untrained model gets right and the rest.
    Partition(PartitionArgs),
    /// Generate a synthetic corpus and QA set with planted co-occurrence bias.
    Synth(SynthArgs),
    /// Write embeddings as tab-separated token and vector rows.
    ExportEmbed(ExportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; more than one makes embedding training non-reproducible.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OovArg {
    Skip,
    ZeroFill,
}

#[derive(Debug, Args)]
struct ModelFlags {
    /// Embeddings in word2vec text format.
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Reweighting matrix written by `finetune`; identity when omitted.
    #[arg(long, value_name = "FILE")]
    reweight: Option<PathBuf>,
    /// How out-of-vocabulary tokens enter the sentence average.
    #[arg(long, value_enum)]
    oov: Option<OovArg>,
}

#[derive(Debug, Args)]
struct CorpusFlags {
    /// Corpus manifest (JSON lines).
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Splits whose documents train the embeddings, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "SPLIT")]
    splits: Option<Vec<SplitTag>>,
    /// Document kinds to include, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "KIND")]
    kinds: Option<Vec<SourceKind>>,
    /// Extra general documents sampled into the corpus.
    #[arg(long, value_name = "N")]
    extra_plots: Option<usize>,
}

#[derive(Debug, Args)]
struct SgnsFlags {
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Maximum context window.
    #[arg(long)]
    window: Option<usize>,
    /// Negative samples per positive pair.
    #[arg(long)]
    negatives: Option<usize>,
    /// Passes over the embedding corpus.
    #[arg(long)]
    embed_epochs: Option<usize>,
    /// Initial embedding learning rate.
    #[arg(long)]
    embed_lr: Option<f64>,
    /// Final embedding learning rate.
    #[arg(long)]
    min_lr: Option<f64>,
    /// Drop tokens seen fewer times than this.
    #[arg(long)]
    min_count: Option<u64>,
    /// Frequent-token subsampling threshold.
    #[arg(long)]
    subsample: Option<f64>,
}

#[derive(Debug, Args)]
struct FinetuneFlags {
    /// Logit scale applied to cosine scores.
    #[arg(long)]
    loss_scale: Option<f64>,
    /// Fine-tuning learning rate.
    #[arg(long)]
    ft_lr: Option<f64>,
    /// Fine-tuning epochs.
    #[arg(long)]
    ft_epochs: Option<usize>,
    /// Items per gradient step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Weight of the squared distance between the matrix and identity.
    #[arg(long)]
    identity_penalty: Option<f64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainEmbedArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusFlags,
    #[command(flatten)]
    sgns: SgnsFlags,
    /// Output embedding file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnswerArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    /// QA file (JSON lines); labels are not needed.
    #[arg(long, value_name = "FILE")]
    qa: Option<PathBuf>,
    /// Predictions file; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    ft: FinetuneFlags,
    /// Labelled training QA file.
    #[arg(long, value_name = "FILE")]
    qa_train: Option<PathBuf>,
    /// Labelled validation QA file used for model selection.
    #[arg(long, value_name = "FILE")]
    qa_val: Option<PathBuf>,
    /// Output matrix file; the training report goes next to it.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    /// Labelled QA file.
    #[arg(long, value_name = "FILE")]
    qa: Option<PathBuf>,
    /// Full report with per-item predictions (JSON).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sgns: SgnsFlags,
    #[command(flatten)]
    ft: FinetuneFlags,
    /// Corpus manifest (JSON lines).
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Labelled training QA file.
    #[arg(long, value_name = "FILE")]
    qa_train: Option<PathBuf>,
    /// Labelled validation QA file.
    #[arg(long, value_name = "FILE")]
    qa_val: Option<PathBuf>,
    /// Corpus cells such as `val,train,train+val,train+val+200gen`.
    #[arg(long, value_delimiter = ',', value_name = "LABEL")]
    cells: Option<Vec<String>>,
    /// Also fine-tune every cell.
    #[arg(long, overrides_with = "no_fine_tune")]
    fine_tune: bool,
    /// Only evaluate the untrained model.
    #[arg(long)]
    no_fine_tune: bool,
    /// Directory for the grid as JSON and text.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusFlags,
    #[command(flatten)]
    sgns: SgnsFlags,
    /// Labelled validation QA file.
    #[arg(long, value_name = "FILE")]
    qa_val: Option<PathBuf>,
    /// Extra general plots per point, ascending and comma separated.
    #[arg(long, value_delimiter = ',', value_name = "N")]
    budgets: Option<Vec<usize>>,
    /// Seeds averaged at every point, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "SEED")]
    seeds: Option<Vec<u64>>,
    /// Directory for the curve as JSON, TSV and text.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    /// Labelled QA file to split.
    #[arg(long, value_name = "FILE")]
    qa: Option<PathBuf>,
    /// Directory for the two subsets and the partition manifest.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of movies.
    #[arg(long)]
    n_movies: Option<usize>,
    /// Entity tokens per movie (at least 3).
    #[arg(long)]
    entities_per_movie: Option<usize>,
    /// Sentences in every plot.
    #[arg(long)]
    sentences_per_plot: Option<usize>,
    /// Questions answerable from co-occurrence alone.
    #[arg(long)]
    n_biased_qa: Option<usize>,
    /// Questions whose label the plots say nothing about.
    #[arg(long)]
    n_unbiased_qa: Option<usize>,
    /// Distinct filler words.
    #[arg(long)]
    filler_vocab_size: Option<usize>,
    /// General plots about cross-movie decoy groups (default ten per movie).
    #[arg(long)]
    n_general_plots: Option<usize>,
    /// Share of movies assigned to the validation split.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Embeddings in word2vec text format.
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Output TSV file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    /// Bad or missing arguments; carries the subcommand name for its help.
    Usage(&'static str, String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

macro_rules! set {
    ($target:expr, $flag:expr) => {
        if let Some(v) = $flag.clone() {
            $target = v;
        }
    };
    ($target:expr, some $flag:expr) => {
        if let Some(v) = $flag.clone() {
            $target = Some(v);
        }
    };
}

fn resolve(common: &Common, apply: impl FnOnce(&mut RunConfig)) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&raw).map_err(|e| {
                Error::InvalidConfig(format!("{}: {}", path.display(), e.to_string().trim_end()))
            })?
        }
        None => RunConfig::default(),
    };
    set!(cfg.seed, common.seed);
    set!(cfg.workers, common.workers);
    apply(&mut cfg);
    cfg.sync();
    Ok(cfg)
}

fn apply_model(cfg: &mut RunConfig, m: &ModelFlags) {
    set!(cfg.paths.embeddings, some m.embeddings);
    set!(cfg.paths.reweight, some m.reweight);
    if let Some(o) = m.oov {
        cfg.oov_policy = match o {
            OovArg::Skip => OovPolicy::Skip,
            OovArg::ZeroFill => OovPolicy::ZeroFill,
        };
    }
}

fn apply_corpus(cfg: &mut RunConfig, c: &CorpusFlags) {
    set!(cfg.paths.manifest, some c.manifest);
    if let Some(s) = &c.splits {
        cfg.corpus.include_splits = s.iter().copied().collect();
    }
    if let Some(k) = &c.kinds {
        cfg.corpus.include_kinds = k.iter().copied().collect();
    }
    set!(cfg.corpus.extra_plot_budget, some c.extra_plots);
}

fn apply_sgns(cfg: &mut RunConfig, s: &SgnsFlags) {
    set!(cfg.sgns.dim, s.dim);
    set!(cfg.sgns.window, s.window);
    set!(cfg.sgns.negatives, s.negatives);
    set!(cfg.sgns.epochs, s.embed_epochs);
    set!(cfg.sgns.initial_lr, s.embed_lr);
    set!(cfg.sgns.min_lr, s.min_lr);
    set!(cfg.sgns.min_count, s.min_count);
    set!(cfg.sgns.subsample_threshold, some s.subsample);
}

fn apply_finetune(cfg: &mut RunConfig, f: &FinetuneFlags) {
    set!(cfg.finetune.loss_scale, f.loss_scale);
    set!(cfg.finetune.learning_rate, f.ft_lr);
    set!(cfg.finetune.epochs, f.ft_epochs);
    set!(cfg.finetune.batch_size, f.batch_size);
    set!(cfg.finetune.identity_penalty, f.identity_penalty);
    set!(cfg.finetune.early_stop_patience, f.patience);
}

fn required<'a>(cmd: &'static str, flag: &str, value: &'a Option<PathBuf>) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Usage(cmd, format!("--{flag} is required (flag or config file)")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

/// `<file>.config.toml` for file outputs.
fn config_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".config.toml");
    out.with_file_name(name)
}

fn load_model(cmd: &'static str, cfg: &RunConfig) -> CliResult<QaModel> {
    let es = load_embeddings_file(required(cmd, "embeddings", &cfg.paths.embeddings)?)?;
    let model = match &cfg.paths.reweight {
        Some(p) => QaModel::new(es, load_matrix_file(p)?).map_err(|e| e.in_file(p))?,
        None => QaModel::untrained(es),
    };
    Ok(model.with_oov_policy(cfg.oov_policy))
}

fn cmd_train_embed(a: &TrainEmbedArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "train-embed";
    let cfg = resolve(&a.common, |c| {
        apply_corpus(c, &a.corpus);
        apply_sgns(c, &a.sgns);
        set!(c.paths.out, some a.out);
    })?;
    let manifest = required(CMD, "manifest", &cfg.paths.manifest)?;
    let target = required(CMD, "out", &cfg.paths.out)?;
    cfg.sgns.validate()?;
    let docs = load_manifest(manifest)?;
    let corpus = select_corpus(&docs, &cfg.corpus, cfg.seed)?;
    let es = train_sgns(&corpus, &cfg.sgns)?;
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_embeddings_file(&es, target)?;
    write_file(&config_beside(target), cfg.to_toml())?;
    let _ = writeln!(
        out,
        "trained {} vectors of dimension {} on {} documents ({}) -> {}",
        es.len(),
        es.dim(),
        corpus.len(),
        cfg.corpus.label(),
        target.display()
    );
    Ok(())
}

fn cmd_answer(a: &AnswerArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "answer";
    let cfg = resolve(&a.common, |c| {
        apply_model(c, &a.model);
        set!(c.paths.qa, some a.qa);
        set!(c.paths.out, some a.out);
    })?;
    let qa = required(CMD, "qa", &cfg.paths.qa)?;
    let model = load_model(CMD, &cfg)?;
    let items = load_qa(qa)?;
    let preds: Vec<_> = items.iter().map(|it| score_qa(it, &model)).collect();
    match &cfg.paths.out {
        Some(path) => {
            write_predictions(path, &preds)?;
            write_file(&config_beside(path), cfg.to_toml())?;
            let _ = writeln!(out, "wrote {} predictions -> {}", preds.len(), path.display());
        }
        None => {
            for p in &preds {
                let _ = writeln!(out, "{}", serde_json::to_string(p).expect("Prediction serializes"));
            }
        }
    }
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "finetune";
    let cfg = resolve(&a.common, |c| {
        apply_model(c, &a.model);
        apply_finetune(c, &a.ft);
        set!(c.paths.qa_train, some a.qa_train);
        set!(c.paths.qa_val, some a.qa_val);
        set!(c.paths.out, some a.out);
    })?;
    let train_path = required(CMD, "qa-train", &cfg.paths.qa_train)?;
    let target = required(CMD, "out", &cfg.paths.out)?;
    let model = load_model(CMD, &cfg)?;
    let train = load_qa(train_path)?;
    let val = match &cfg.paths.qa_val {
        Some(p) => load_qa(p)?,
        None => Vec::new(),
    };
    let report = run_finetune(&train, &val, &model, &cfg.finetune).map_err(|e| match &e {
        Error::MissingLabel { qid } if train.iter().any(|it| &it.qid == qid) => e.in_file(train_path),
        Error::MissingLabel { .. } => e.in_file(cfg.paths.qa_val.as_deref().unwrap_or(train_path)),
        _ => e,
    })?;
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_matrix_file(&report.reweight, target)?;
    let mut report_path = target.as_os_str().to_owned();
    report_path.push(".report.json");
    write_file(
        Path::new(&report_path),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;
    write_file(&config_beside(target), cfg.to_toml())?;
    let chosen = &report.epochs[report.chosen_epoch];
    let _ = writeln!(
        out,
        "chose epoch {} of {} (train accuracy {:.4}{}) -> {}",
        report.chosen_epoch,
        report.epochs.len() - 1,
        chosen.train_accuracy,
        chosen
            .val_accuracy
            .map(|v| format!(", val accuracy {v:.4}"))
            .unwrap_or_default(),
        target.display()
    );
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "evaluate";
    let cfg = resolve(&a.common, |c| {
        apply_model(c, &a.model);
        set!(c.paths.qa, some a.qa);
        set!(c.paths.out, some a.out);
    })?;
    let qa = required(CMD, "qa", &cfg.paths.qa)?;
    let model = load_model(CMD, &cfg)?;
    let items = load_qa(qa)?;
    let label = qa.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = evaluate(&items, &model).map_err(|e| e.in_file(qa))?.with_label(label);
    if let Some(path) = &cfg.paths.out {
        write_file(path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
        write_file(&config_beside(path), cfg.to_toml())?;
    }
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&report.summary()).expect("summary serializes")
    );
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "ablate";
    let cfg = resolve(&a.common, |c| {
        apply_sgns(c, &a.sgns);
        apply_finetune(c, &a.ft);
        set!(c.paths.manifest, some a.manifest);
        set!(c.paths.qa_train, some a.qa_train);
        set!(c.paths.qa_val, some a.qa_val);
        set!(c.paths.out, some a.out);
        set!(c.ablation.cells, a.cells);
        if a.fine_tune {
            c.ablation.fine_tune = true;
        }
        if a.no_fine_tune {
            c.ablation.fine_tune = false;
        }
    })?;
    let manifest = required(CMD, "manifest", &cfg.paths.manifest)?;
    let train_path = required(CMD, "qa-train", &cfg.paths.qa_train)?;
    let val_path = required(CMD, "qa-val", &cfg.paths.qa_val)?;
    let cells = cfg
        .ablation
        .cells
        .iter()
        .map(|l| {
            parse_corpus_label(l).map(|selector| AblationCell {
                selector,
                fine_tune: cfg.ablation.fine_tune,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|m| Failure::Usage(CMD, m))?;
    let spec = AblationSpec {
        cells,
        sgns: cfg.sgns.clone(),
        finetune: cfg.finetune.clone(),
        seed: cfg.seed,
    };
    let docs = load_manifest(manifest)?;
    let train = load_qa(train_path)?;
    let val = load_qa(val_path)?;
    let table = run_ablation(&spec, &docs, &train, &val)?;
    let text = table.render();
    if let Some(dir) = &cfg.paths.out {
        write_file(&dir.join("ablation.json"), serde_json::to_string_pretty(&table).expect("table serializes") + "\n")?;
        write_file(&dir.join("ablation.txt"), &text)?;
        write_file(&dir.join("config.toml"), cfg.to_toml())?;
    }
    let _ = write!(out, "{text}");
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "sweep";
    let cfg = resolve(&a.common, |c| {
        apply_corpus(c, &a.corpus);
        apply_sgns(c, &a.sgns);
        set!(c.paths.qa_val, some a.qa_val);
        set!(c.paths.out, some a.out);
        set!(c.sweep.budgets, a.budgets);
        set!(c.sweep.seeds, a.seeds);
    })?;
    let manifest = required(CMD, "manifest", &cfg.paths.manifest)?;
    let val_path = required(CMD, "qa-val", &cfg.paths.qa_val)?;
    let docs = load_manifest(manifest)?;
    let val = load_qa(val_path)?;
    let base = CorpusSelector {
        extra_plot_budget: None,
        ..cfg.corpus.clone()
    };
    let curve = sweep_extra_plots(&cfg.sweep.budgets, &base, &cfg.sgns, &docs, &val, &cfg.sweep.seeds)?;
    let text = curve.render();
    if let Some(dir) = &cfg.paths.out {
        write_file(&dir.join("sweep.json"), serde_json::to_string_pretty(&curve).expect("curve serializes") + "\n")?;
        write_file(&dir.join("sweep.tsv"), curve.to_tsv())?;
        write_file(&dir.join("sweep.txt"), &text)?;
        write_file(&dir.join("config.toml"), cfg.to_toml())?;
    }
    let _ = write!(out, "{text}");
    Ok(())
}

fn cmd_partition(a: &PartitionArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "partition";
    let cfg = resolve(&a.common, |c| {
        apply_model(c, &a.model);
        set!(c.paths.qa, some a.qa);
        set!(c.paths.out, some a.out);
    })?;
    let qa = required(CMD, "qa", &cfg.paths.qa)?;
    let dir = required(CMD, "out", &cfg.paths.out)?;
    let model = load_model(CMD, &cfg)?;
    let items = load_qa(qa)?;
    let partition = partition_bias(&items, &model).map_err(|e| match e {
        Error::MissingLabel { .. } | Error::InvalidItem { .. } => e.in_file(qa),
        e => e,
    })?;
    let mut sources = vec![qa.to_path_buf()];
    sources.extend(cfg.paths.embeddings.clone());
    let manifest = write_partition(dir, &items, &partition, &sources)?;
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    let _ = writeln!(
        out,
        "{} biased, {} unbiased of {} items (model {}) -> {}",
        manifest.counts.biased,
        manifest.counts.unbiased,
        manifest.counts.total,
        &manifest.fingerprint[..12],
        dir.display()
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "synth";
    let cfg = resolve(&a.common, |c| {
        set!(c.synth.n_movies, a.n_movies);
        set!(c.synth.entities_per_movie, a.entities_per_movie);
        set!(c.synth.sentences_per_plot, a.sentences_per_plot);
        set!(c.synth.n_biased_qa, a.n_biased_qa);
        set!(c.synth.n_unbiased_qa, a.n_unbiased_qa);
        set!(c.synth.filler_vocab_size, a.filler_vocab_size);
        set!(c.synth.n_general_plots, some a.n_general_plots);
        set!(c.synth.val_fraction, a.val_fraction);
        set!(c.paths.out, some a.out);
    })?;
    let dir = required(CMD, "out", &cfg.paths.out)?;
    let world = generate_synth(&cfg.synth)?;
    world.write(dir)?;
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    let _ = writeln!(
        out,
        "{} documents, {} QA items -> {}",
        world.documents.len(),
        world.qa_items.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> CliResult {
    const CMD: &str = "export-embed";
    let cfg = resolve(&a.common, |c| {
        set!(c.paths.embeddings, some a.embeddings);
        set!(c.paths.out, some a.out);
    })?;
    let src = required(CMD, "embeddings", &cfg.paths.embeddings)?;
    let target = required(CMD, "out", &cfg.paths.out)?;
    let es = load_embeddings_file(src)?;
    let mut buf = Vec::new();
    export_tsv(&es, &mut buf).expect("write to Vec");
    write_file(target, buf)?;
    write_file(&config_beside(target), cfg.to_toml())?;
    let _ = writeln!(out, "exported {} vectors -> {}", es.len(), target.display());
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::TrainEmbed(a) => cmd_train_embed(a, out),
        Command::Answer(a) => cmd_answer(a, out),
        Command::Finetune(a) => cmd_finetune(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Partition(a) => cmd_partition(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::ExportEmbed(a) => cmd_export(a, out),
    }
}

fn workers_of(cli: &Cli) -> Option<usize> {
    let common = match &cli.command {
        Command::TrainEmbed(a) => &a.common,
        Command::Answer(a) => &a.common,
        Command::Finetune(a) => &a.common,
        Command::Evaluate(a) => &a.common,
        Command::Ablate(a) => &a.common,
        Command::Sweep(a) => &a.common,
        Command::Partition(a) => &a.common,
        Command::Synth(a) => &a.common,
        Command::ExportEmbed(a) => &a.common,
    };
    common.workers
}

fn print_subcommand_help(name: &str) {
    let mut cmd = Cli::command();
    cmd.build();
    let help = match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_help(),
        None => cmd.render_help(),
    };
    eprint!("{help}");
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit status: 0 success, 1 usage error, 2 data or format error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = workers_of(&cli).filter(|&n| n > 0) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match dispatch(&cli, &mut lock) {
        Ok(()) => 0,
        Err(Failure::Usage(cmd, msg)) => {
            eprintln!("error: {msg}\n");
            print_subcommand_help(cmd);
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

//! Command-line front end: corpus generation, teacher and student training,
//! calibration, evaluation and reporting, tied together by a manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{self, bin_predictions};
use crate::datagen::{
    generate_corpus, ingest_parallel_text, read_file, write_file, ParallelCorpus, Tokenization, ToyGrammar, DEFAULT_MAX_LEN,
    DEFAULT_MIN_LEN, DEFAULT_PAIRS, DEFAULT_VOCAB, SPLIT_FILES, VOCAB_FILE,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_checkpoint, EvalOptions, MetricsReport};
use crate::model::Checkpoint;
use crate::training::{build_teacher, teacher_for_student, train, LossMode, RunLog, TeacherTemperature, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAMMAR_FILE: &str = "grammar.json";
pub const STEPS_FILE: &str = "steps.csv";
pub const EPOCHS_FILE: &str = "epochs.json";
pub const ALPHA_FILE: &str = "alpha_trajectory.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Parser, Debug)]
#[command(name = "hardgate", version, about = "Calibration-gated knowledge distillation for sequence models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a toy corpus, or ingest aligned text files, into a directory.
    GenCorpus(GenCorpusArgs),
    /// Train a teacher (ce or ls_uniform) and resolve its temperature.
    TrainTeacher(TrainArgs),
    /// Train a student under one of the loss modes.
    TrainStudent(TrainArgs),
    /// Fit a temperature for a checkpoint on the validation split.
    Calibrate(CalibrateArgs),
    /// Compute BLEU, WER and calibration metrics for a checkpoint.
    Evaluate(EvaluateArgs),
    /// Evaluate and also export the gate trajectory of a run log.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PAIRS)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.7)]
    pub ambiguity: f64,
    #[arg(long, default_value_t = DEFAULT_VOCAB)]
    pub vocab: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_LEN)]
    pub min_len: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grammar JSON; replaces the generator flags.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Aligned source text to ingest instead of generating.
    #[arg(long, requires = "target_text")]
    pub source_text: Option<PathBuf>,
    #[arg(long, requires = "source_text")]
    pub target_text: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TokenizationArg::Whitespace)]
    pub tokenization: TokenizationArg,
    #[arg(long, default_value_t = 10_000)]
    pub max_vocab: usize,
    /// Manifest to update (default: <out>/manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TokenizationArg {
    Whitespace,
    Char,
}

impl From<TokenizationArg> for Tokenization {
    fn from(t: TokenizationArg) -> Self {
        match t {
            TokenizationArg::Whitespace => Tokenization::Whitespace,
            TokenizationArg::Char => Tokenization::Char,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// TrainConfig JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ce | ls_uniform | ls_unigram | soft_kd | hkd_token | hkd_sentence
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// A positive number or "fit".
    #[arg(long)]
    pub teacher_temp: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Force every gate to this value (hkd modes only).
    #[arg(long)]
    pub gate_override: Option<f64>,
    /// Directory for steps.csv and epochs.json (default: next to the checkpoint).
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Manifest to update (default: <corpus>/manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = calibration::DEFAULT_NUM_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = calibration::DEFAULT_NUM_BINS)]
    pub bins: usize,
    /// Temperature for calibration metrics.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub eval: EvaluateArgs,
    /// Directory holding the run's steps.csv.
    #[arg(long)]
    pub run_log: Option<PathBuf>,
}

/// One file recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

/// Paths and hashes of everything an experiment produced, plus the
/// arguments of the command that produced each group.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub config_hashes: BTreeMap<String, String>,
    pub commands: BTreeMap<String, Vec<String>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl ExperimentManifest {
    pub fn load_or_new(path: &Path, name: &str) -> Result<Self> {
        if !path.exists() {
            return Ok(Self {
                name: name.to_string(),
                ..Self::default()
            });
        }
        serde_json::from_str(&read_file(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn record_file(&mut self, key: &str, path: &Path) -> Result<()> {
        self.artifacts.insert(
            key.to_string(),
            ArtifactEntry {
                path: path.display().to_string(),
                sha256: file_sha256(path)?,
            },
        );
        Ok(())
    }

    /// Write-then-rename so readers never see a partial manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&tmp, text.as_bytes())?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

fn update_manifest(path: &Path, key: &str, args: &[String], files: &[(String, PathBuf)], config: Option<&str>) -> Result<()> {
    let name = path
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    let mut manifest = ExperimentManifest::load_or_new(path, &name)?;
    manifest.commands.insert(key.to_string(), args.to_vec());
    for (k, p) in files {
        manifest.record_file(k, p)?;
    }
    if let Some(c) = config {
        manifest.config_hashes.insert(key.to_string(), sha256_hex(c.as_bytes()));
    }
    manifest.save(path)
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 success, 1 usage/validation, 2 numeric, 3 I/O.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, recorded: &[String]) -> Result<()> {
    match command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a, recorded),
        Command::TrainTeacher(a) => cmd_train(&a, true, recorded),
        Command::TrainStudent(a) => cmd_train(&a, false, recorded),
        Command::Calibrate(a) => cmd_calibrate(&a, recorded),
        Command::Evaluate(a) => cmd_evaluate(&a, recorded).map(|_| ()),
        Command::Report(a) => cmd_report(&a, recorded),
    }
}

pub fn cmd_gen_corpus(a: &GenCorpusArgs, recorded: &[String]) -> Result<()> {
    if !(a.ambiguity > 0.0 && a.ambiguity <= 1.0) {
        return Err(Error::Validation(format!("--ambiguity must lie in (0, 1], got {}", a.ambiguity)));
    }
    let (corpus, grammar) = match (&a.source_text, &a.target_text) {
        (Some(src), Some(tgt)) => {
            let ingested = ingest_parallel_text(src, tgt, a.tokenization.into(), a.max_vocab)?;
            (ParallelCorpus::from_pairs(ingested.train, ingested.vocab), None)
        }
        _ => {
            let grammar = match &a.grammar {
                Some(path) => serde_json::from_str::<ToyGrammar>(&read_file(path)?)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                None => ToyGrammar::with_ambiguity(a.vocab, a.ambiguity, a.min_len, a.max_len, a.seed)?,
            };
            (generate_corpus(&grammar, a.pairs, a.seed)?, Some(grammar))
        }
    };
    corpus.write_dir(&a.out)?;
    let mut files: Vec<(String, PathBuf)> = SPLIT_FILES
        .iter()
        .chain(std::iter::once(&VOCAB_FILE))
        .map(|f| (format!("corpus/{f}"), a.out.join(f)))
        .collect();
    let grammar_json = grammar.map(|g| serde_json::to_string_pretty(&g).expect("grammar serializes"));
    if let Some(text) = &grammar_json {
        let path = a.out.join(GRAMMAR_FILE);
        write_file(&path, text.as_bytes())?;
        files.push((format!("corpus/{GRAMMAR_FILE}"), path));
    }
    let manifest = a.manifest.clone().unwrap_or_else(|| a.out.join(MANIFEST_FILE));
    update_manifest(&manifest, "gen-corpus", recorded, &files, grammar_json.as_deref())?;
    eprintln!(
        "wrote {} train / {} valid / {} test pairs, vocabulary {} to {}",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        a.out.display()
    );
    Ok(())
}

/// Config file first, then flags; all checks that need no compute happen
/// here.
pub fn resolve_train_config(a: &TrainArgs, teacher_run: bool) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = read_file(path)?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            // flags may supply the mandatory fields
            if let Some(obj) = value.as_object_mut() {
                if let Some(seed) = a.seed {
                    obj.insert("seed".into(), seed.into());
                }
                if let Some(loss) = &a.loss {
                    obj.insert("loss_mode".into(), loss.clone().into());
                }
                if teacher_run && !obj.contains_key("loss_mode") {
                    obj.insert("loss_mode".into(), "ls_uniform".into());
                }
            }
            serde_json::from_value::<TrainConfig>(value)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            let loss = match (&a.loss, teacher_run) {
                (Some(l), _) => l.parse()?,
                (None, true) => LossMode::LsUniform,
                (None, false) => return Err(Error::Validation("train-student requires --loss".into())),
            };
            let seed = a
                .seed
                .ok_or_else(|| Error::Validation("--seed is required (or set it in --config)".into()))?;
            TrainConfig::new(loss, seed)
        }
    };
    if let Some(l) = &a.loss {
        cfg.loss_mode = l.parse()?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = &a.teacher_temp {
        cfg.teacher_temperature = t.parse::<TeacherTemperature>()?;
    }
    if let Some(p) = &a.teacher {
        cfg.teacher_checkpoint = Some(p.clone());
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.peak_lr = lr;
    }
    if let Some(m) = a.max_tokens {
        cfg.max_tokens = m;
    }
    if let Some(g) = a.gate_override {
        cfg.gate_override = Some(g);
    }
    cfg.validate().map_err(|e| Error::Validation(e.to_string()))?;

    if teacher_run {
        if !matches!(cfg.loss_mode, LossMode::Ce | LossMode::LsUniform) {
            return Err(Error::Validation(format!(
                "train-teacher supports --loss ce or ls_uniform, not {}",
                cfg.loss_mode
            )));
        }
    } else if cfg.loss_mode.needs_teacher() {
        if cfg.teacher_checkpoint.is_none() {
            return Err(Error::Validation(format!("--loss {} requires --teacher", cfg.loss_mode)));
        }
    } else {
        if a.teacher_temp.is_some() {
            eprintln!("warning: --teacher-temp is ignored for --loss {}", cfg.loss_mode);
        }
        if a.teacher.is_some() {
            eprintln!("warning: --teacher is ignored for --loss {}", cfg.loss_mode);
        }
        cfg.teacher_checkpoint = None;
    }
    if cfg.gate_override.is_some() && cfg.loss_mode.gate_mode().is_none() {
        eprintln!("warning: --gate-override only affects hkd modes");
    }
    Ok(cfg)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        ));
    }
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<ParallelCorpus> {
    require_file(&dir.join(VOCAB_FILE), "corpus vocabulary")?;
    ParallelCorpus::load_dir(dir)
}

fn write_run_log(log: &RunLog, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let steps = dir.join(STEPS_FILE);
    let mut buf = Vec::new();
    log.write_steps_csv(&mut buf)?;
    write_file(&steps, &buf)?;
    let epochs = dir.join(EPOCHS_FILE);
    write_file(&epochs, log.epochs_json().as_bytes())?;
    Ok((steps, epochs))
}

fn default_log_dir(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    out.with_file_name(format!("{stem}_logs"))
}

pub fn cmd_train(a: &TrainArgs, teacher_run: bool, recorded: &[String]) -> Result<()> {
    let cfg = resolve_train_config(a, teacher_run)?;
    let corpus = load_corpus(&a.corpus)?;
    let teacher_ck = match (&cfg.teacher_checkpoint, cfg.loss_mode.needs_teacher()) {
        (Some(path), true) => {
            require_file(path, "teacher checkpoint")?;
            let ck = Checkpoint::load(path)?;
            crate::evaluation::check_vocabulary(&ck, &corpus.vocab)?;
            Some(ck)
        }
        _ => None,
    };

    let (params, log, temperature) = if teacher_run {
        let (teacher, log) = build_teacher(&cfg, &corpus)?;
        (teacher.params, log, Some(teacher.temperature))
    } else {
        let teacher = teacher_ck
            .map(|ck| teacher_for_student(&cfg, &corpus, ck.params))
            .transpose()?;
        let outcome = train(&cfg, &corpus, teacher.as_ref())?;
        (outcome.params, outcome.log, None)
    };
    for e in &log.epochs {
        eprintln!(
            "epoch {:>3}  train {:.4}  valid nll {:.4}  ece {:.4}  acc {:.4}",
            e.epoch, e.train_loss, e.valid_nll, e.valid_ece, e.valid_accuracy
        );
    }
    if log.skipped_pairs > 0 {
        eprintln!("warning: skipped {} training pairs longer than max_tokens", log.skipped_pairs);
    }

    let checkpoint = Checkpoint {
        params,
        vocab_fingerprint: Some(corpus.vocab.fingerprint()),
        temperature,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    checkpoint.save(&a.out)?;
    let log_dir = a.log_dir.clone().unwrap_or_else(|| default_log_dir(&a.out));
    let (steps, epochs) = write_run_log(&log, &log_dir)?;
    let config_json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    write_file(&log_dir.join("config.json"), config_json.as_bytes())?;

    let role = if teacher_run { "teacher" } else { "student" };
    let key = format!("{role}:{}", a.out.display());
    let files = vec![
        (format!("{key}/checkpoint"), a.out.clone()),
        (format!("{key}/steps"), steps),
        (format!("{key}/epochs"), epochs),
    ];
    let manifest = a.manifest.clone().unwrap_or_else(|| a.corpus.join(MANIFEST_FILE));
    update_manifest(&manifest, &key, recorded, &files, Some(&config_json))?;
    if let Some(t) = temperature {
        eprintln!("teacher temperature {t}");
    }
    eprintln!("best epoch {}; checkpoint written to {}", log.best_epoch, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CalibrationOutput {
    temperature: f64,
    nll: f64,
    scores: Vec<(f64, f64)>,
    ece_at_1: f64,
    ece_at_fit: f64,
}

pub fn cmd_calibrate(a: &CalibrateArgs, recorded: &[String]) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let corpus = load_corpus(&a.corpus)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    crate::evaluation::check_vocabulary(&ck, &corpus.vocab)?;
    let grid = a.grid.clone().unwrap_or_else(|| calibration::DEFAULT_TEMPERATURE_GRID.to_vec());
    let batches = crate::datagen::make_batches(&corpus.valid, &corpus.vocab, crate::datagen::DEFAULT_MAX_TOKENS, 0)?.batches;
    let fit = calibration::fit_temperature(&ck.params, &batches, &grid)?;
    let ece_at = |tau: f64| -> Result<f64> {
        let recs = calibration::collect_next_token_records(&ck.params, tau, &batches)?;
        Ok(calibration::ece(&bin_predictions(&recs, a.bins)?))
    };
    let out = CalibrationOutput {
        temperature: fit.temperature,
        nll: fit.nll,
        ece_at_1: ece_at(1.0)?,
        ece_at_fit: ece_at(fit.temperature)?,
        scores: fit.scores,
    };
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let path = a.out_dir.join(CALIBRATION_FILE);
    write_file(&path, serde_json::to_string_pretty(&out).expect("serializes").as_bytes())?;
    let manifest = a.manifest.clone().unwrap_or_else(|| a.corpus.join(MANIFEST_FILE));
    let key = format!("calibrate:{}", a.out_dir.display());
    update_manifest(&manifest, &key, recorded, &[(format!("{key}/calibration"), path)], None)?;
    eprintln!(
        "fitted temperature {} (nll {:.4}); ece {:.4} at 1.0, {:.4} fitted",
        out.temperature, out.nll, out.ece_at_1, out.ece_at_fit
    );
    Ok(())
}

fn run_evaluation(a: &EvaluateArgs) -> Result<MetricsReport> {
    require_file(&a.checkpoint, "checkpoint")?;
    let corpus = load_corpus(&a.corpus)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let options = EvalOptions {
        num_bins: a.bins,
        temperature: a.temperature,
        ..EvalOptions::default()
    };
    if !(a.temperature > 0.0) || a.bins == 0 {
        return Err(Error::Validation("--temperature and --bins must be positive".into()));
    }
    let evaluation = evaluate_checkpoint(&ck, &corpus, &options)?;
    evaluation.write_artifacts(&a.out_dir)
}

fn report_files(dir: &Path, key: &str, extra: &[&str]) -> Vec<(String, PathBuf)> {
    use crate::evaluation::{HISTOGRAM_FILE, HYPOTHESES_FILE, RECORDS_FILE, RELIABILITY_FILE, REPORT_FILE};
    [REPORT_FILE, RELIABILITY_FILE, HISTOGRAM_FILE, RECORDS_FILE, HYPOTHESES_FILE]
        .iter()
        .chain(extra)
        .map(|f| (format!("{key}/{f}"), dir.join(f)))
        .collect()
}

pub fn cmd_evaluate(a: &EvaluateArgs, recorded: &[String]) -> Result<MetricsReport> {
    let report = run_evaluation(a)?;
    let key = format!("evaluate:{}", a.out_dir.display());
    let manifest = a.manifest.clone().unwrap_or_else(|| a.corpus.join(MANIFEST_FILE));
    update_manifest(&manifest, &key, recorded, &report_files(&a.out_dir, &key, &[]), None)?;
    eprintln!(
        "bleu {:.4}  wer {:.4}  valid nll {:.4}  ece {:.4}  mce {:.4}",
        report.bleu, report.wer, report.valid_nll, report.ece, report.mce
    );
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct AlphaRow {
    step: usize,
    alpha_token: Option<f64>,
    alpha_sentence: Option<f64>,
}

pub fn cmd_report(a: &ReportArgs, recorded: &[String]) -> Result<()> {
    if let Some(dir) = &a.run_log {
        require_file(&dir.join(STEPS_FILE), "run log")?;
    }
    let report = run_evaluation(&a.eval)?;
    let mut extra = Vec::new();
    if let Some(dir) = &a.run_log {
        let steps_path = dir.join(STEPS_FILE);
        let mut rdr = csv::Reader::from_path(&steps_path)
            .map_err(|e| Error::Format(format!("{}: {e}", steps_path.display())))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rdr.deserialize::<crate::training::StepRecord>() {
            let r = row.map_err(|e| Error::Format(format!("{}: {e}", steps_path.display())))?;
            w.serialize(AlphaRow {
                step: r.step,
                alpha_token: r.alpha_token,
                alpha_sentence: r.alpha_sentence,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        write_file(&a.eval.out_dir.join(ALPHA_FILE), &bytes)?;
        extra.push(ALPHA_FILE);
    }
    let key = format!("report:{}", a.eval.out_dir.display());
    let manifest = a.eval.manifest.clone().unwrap_or_else(|| a.eval.corpus.join(MANIFEST_FILE));
    update_manifest(&manifest, &key, recorded, &report_files(&a.eval.out_dir, &key, &extra), None)?;
    eprintln!(
        "bleu {:.4}  wer {:.4}  valid nll {:.4}  ece {:.4}  mce {:.4}",
        report.bleu, report.wer, report.valid_nll, report.ece, report.mce
    );
    Ok(())
}

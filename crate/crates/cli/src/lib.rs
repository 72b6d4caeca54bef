//! `stmc` command implementations. Each command returns a [`CliError`] whose
//! [`CliError::exit_code`] distinguishes configuration, data and numerical
//! failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use stmc_core::config::{RunConfig, CUE_NAMES};
use stmc_core::gradcheck::full_suite;
use stmc_core::train::{evaluate, EvalReport, Trainer};
use stmc_core::{ConfigError, CoreError, PosteriorSequence, Stmc, Vocabulary};
use stmc_data::{generate_corpus, read_dataset, write_dataset, Clip, Corpus, DataError, Split};
use stmc_tensor::gradcheck::GradCheckConfig;
use stmc_tensor::OpKind;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let m = e.to_string();
        match e {
            CoreError::Config(_) => CliError::Config(m),
            CoreError::Data(_) | CoreError::Vocabulary(_) | CoreError::Checkpoint(_) | CoreError::TooShort { .. } => {
                CliError::Data(m)
            }
            CoreError::Numerical(inner) => CliError::Numerical(inner),
            _ => CliError::Other(m),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Other(format!("{}: {e}", path.display()))
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "stmc", about = "Spatial-temporal multi-cue sequence recognition on a synthetic corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` configuration file applied over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (data seed for gen-data, training seed otherwise).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory: dataset for gen-data, run directory otherwise.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Start from the paper-scale profile instead of the desk-scale defaults.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Overwrite existing output (gen-data) or restart instead of resuming (train).
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train end-to-end with the joint loss.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Beam-search evaluation of a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "dev")]
        split: Split,
        /// Checkpoint directory (default: `<out>/best`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        /// Also score each intra-cue encoder.
        #[arg(long)]
        per_cue: bool,
    },
    /// Decode one clip and show the per-step top-3 posteriors.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Clip id in the dataset.
        clip: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Finite-difference check of every primitive and the full joint loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupt one op's backward rule (checker self-test).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

/// Defaults (or the paper profile), then the config file, then `--seed`.
pub fn resolve_config(common: &Common, seed_key: &str) -> Result<RunConfig> {
    let mut cfg = if common.paper_scale { RunConfig::paper_scale() } else { RunConfig::default() };
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(s) = common.seed {
        cfg.set(seed_key, &s.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, default: &Path) -> PathBuf {
    common.out.clone().unwrap_or_else(|| default.to_path_buf())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData { common } => gen_data(&common, out),
        Command::Train { common } => train(&common, out),
        Command::Eval { common, split, checkpoint, beam, per_cue } => {
            eval(&common, split, checkpoint, beam, per_cue, out)
        }
        Command::Decode { common, clip, checkpoint, beam } => decode(&common, &clip, checkpoint, beam, out),
        Command::Gradcheck { common, inject_fault } => gradcheck(&common, inject_fault.as_deref(), out),
    }
}

fn w(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| CliError::Other(format!("writing output: {e}")))
}

// ---------- gen-data ----------

pub fn gen_data(common: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(common, "data_seed")?;
    let dir = out_dir(common, &cfg.data.data_dir);
    if dir.exists() && fs::read_dir(&dir).map_err(io(&dir))?.next().is_some() {
        if !common.force {
            return Err(CliError::Data(format!("{} exists and is not empty (use --force)", dir.display())));
        }
        // only what a previous gen-data wrote; anything else is left alone
        let clips = dir.join("clips");
        if clips.exists() {
            fs::remove_dir_all(&clips).map_err(io(&clips))?;
        }
        for f in ["manifest.json", "vocab.txt"] {
            let p = dir.join(f);
            if p.exists() {
                fs::remove_file(&p).map_err(io(&p))?;
            }
        }
    }
    let corpus = generate_corpus(&cfg.corpus())?;
    let manifest = write_dataset(&corpus, &dir)?;
    w(out, format!("wrote {} clips ({} glosses) to {}", manifest.clips.len(), manifest.vocabulary.len(), dir.display()))
}

// ---------- train ----------

fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, Vocabulary)> {
    let dir = &cfg.data.data_dir;
    if !dir.join("manifest.json").exists() {
        return Err(CliError::Data(format!("no dataset at {} (run `stmc gen-data` first)", dir.display())));
    }
    let corpus = read_dataset(dir)?;
    if let Some(c) = corpus.clips.first() {
        if c.size != cfg.model.input_size {
            return Err(CliError::Config(format!(
                "dataset canvas {} differs from input_size {}",
                c.size, cfg.model.input_size
            )));
        }
    }
    let vocab = Vocabulary::new(corpus.vocabulary.clone())?;
    Ok((corpus, vocab))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

pub fn train(common: &Common, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(common, "seed")?;
    let run_dir = out_dir(common, Path::new("run"));
    let (corpus, vocab) = load_corpus(&cfg)?;
    let last = run_dir.join("last");
    let resume = !common.force && last.join("model.ckpt").exists();
    if !resume && run_dir.exists() {
        for sub in ["last", "best"] {
            let p = run_dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(io(&p))?;
            }
        }
    }
    for d in [&run_dir, &last, &run_dir.join("best")] {
        fs::create_dir_all(d).map_err(io(d))?;
    }
    if resume {
        let echoed = fs::read_to_string(run_dir.join("config.txt")).map_err(io(&run_dir))?;
        // the schedule may be extended on resume; nothing else may change
        let mut prev = RunConfig::from_text(&echoed)?;
        prev.train.epochs = cfg.train.epochs;
        prev.train.eval_every = cfg.train.eval_every;
        prev.train.stop_train_wer = cfg.train.stop_train_wer;
        if prev != cfg {
            return Err(CliError::Config(format!(
                "{} was trained with a different configuration (use --force to restart)",
                run_dir.display()
            )));
        }
    }
    write_file(&run_dir.join("config.txt"), &cfg.to_text())?;
    write_file(&run_dir.join("vocab.txt"), &(vocab.glosses().join("\n") + "\n"))?;

    let train: Vec<&Clip> = corpus.split(Split::Train).collect();
    let dev: Vec<&Clip> = corpus.split(Split::Dev).collect();
    if train.is_empty() {
        return Err(CliError::Data("training split is empty".into()));
    }
    let mut trainer = Trainer::new(cfg.clone(), vocab)?;
    let metrics_path = run_dir.join("metrics.jsonl");
    let mut best = f64::INFINITY;
    if resume {
        trainer.load(&last)?;
        // drop log lines past the checkpoint so a resumed log matches a fresh one
        let text = fs::read_to_string(&metrics_path).unwrap_or_default();
        let mut kept = String::new();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| CliError::Data(e.to_string()))?;
            if v["epoch"].as_u64().unwrap_or(0) as usize <= trainer.epoch {
                if let Some(d) = v["dev_wer"].as_f64() {
                    best = best.min(d);
                }
                kept.push_str(line);
                kept.push('\n');
            }
        }
        write_file(&metrics_path, &kept)?;
        w(out, format!("resuming {} after epoch {}", run_dir.display(), trainer.epoch))?;
    } else {
        write_file(&metrics_path, "")?;
    }
    let mut log = fs::OpenOptions::new().append(true).open(&metrics_path).map_err(io(&metrics_path))?;
    let start = Instant::now();
    let t = cfg.train.clone();
    while trainer.epoch < t.epochs {
        let stats = trainer.run_epoch(&train)?;
        let e = stats.epoch;
        let mut rec = json!({
            "epoch": e,
            "loss": stats.loss.total,
            "ctc_inter": stats.loss.ctc_inter,
            "ctc_intra": stats.loss.ctc_intra,
            "regression": stats.loss.regression,
            "augment_fallbacks": stats.fallbacks,
        });
        let evaluate_now = e % t.eval_every == 0 || e == t.epochs;
        let mut stop = false;
        if evaluate_now && !dev.is_empty() {
            let r = trainer.evaluate(&dev, t.beam_width, false)?;
            rec["dev_wer"] = json!(r.wer);
            rec["dev_del"] = json!(r.counts.del);
            rec["dev_ins"] = json!(r.counts.ins);
            rec["dev_sub"] = json!(r.counts.sub);
            if r.wer < best {
                best = r.wer;
                trainer.save(&run_dir.join("best"))?;
            }
        }
        if evaluate_now && t.stop_train_wer >= 0.0 {
            let r = trainer.evaluate(&train, t.beam_width, false)?;
            rec["train_wer"] = json!(r.wer);
            stop = r.wer <= t.stop_train_wer;
        }
        trainer.save(&last)?;
        if dev.is_empty() && evaluate_now {
            trainer.save(&run_dir.join("best"))?;
        }
        writeln!(log, "{rec}").map_err(io(&metrics_path))?;
        w(out, format!("{rec} ({:.1}s)", start.elapsed().as_secs_f64()))?;
        if stop {
            w(out, format!("train WER at or below {} after epoch {e}; stopping", t.stop_train_wer))?;
            break;
        }
    }
    if !run_dir.join("best").join("model.ckpt").exists() {
        trainer.save(&run_dir.join("best"))?;
    }
    Ok(())
}

// ---------- eval / decode ----------

/// Model, parameters, vocabulary and dataset for a trained run directory.
pub struct Loaded {
    pub cfg: RunConfig,
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub trainer: Trainer,
}

pub fn load_run(common: &Common, checkpoint: Option<PathBuf>) -> Result<Loaded> {
    let run_dir = out_dir(common, Path::new("run"));
    let echoed = run_dir.join("config.txt");
    let mut cfg = if echoed.exists() {
        let text = fs::read_to_string(&echoed).map_err(io(&echoed))?;
        RunConfig::from_text(&text)?
    } else {
        resolve_config(common, "seed")?
    };
    if echoed.exists() {
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
            cfg.validate()?;
        }
    }
    let (corpus, vocab) = load_corpus(&cfg)?;
    let vocab_path = run_dir.join("vocab.txt");
    if vocab_path.exists() {
        let text = fs::read_to_string(&vocab_path).map_err(io(&vocab_path))?;
        let trained: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if trained != vocab.glosses() {
            return Err(CliError::Data(format!(
                "vocabulary mismatch: checkpoint has {} glosses {:?}, dataset {} {:?}",
                trained.len(),
                trained,
                vocab.glosses().len(),
                vocab.glosses()
            )));
        }
    }
    let mut trainer = Trainer::new(cfg.clone(), vocab.clone())?;
    let ckpt = checkpoint.unwrap_or_else(|| run_dir.join("best"));
    if !ckpt.join("model.ckpt").exists() {
        return Err(CliError::Data(format!("no checkpoint at {}", ckpt.display())));
    }
    trainer.load(&ckpt)?;
    Ok(Loaded { cfg, corpus, vocab, trainer })
}

pub fn format_report(report: &EvalReport, split: Split) -> String {
    let c = &report.counts;
    let mut s = format!(
        "{} WER {:.2}% (sub {}, del {}, ins {}; {} reference glosses); keypoint error {:.3} cells",
        split.name(),
        100.0 * report.wer,
        c.sub,
        c.del,
        c.ins,
        report.ref_words,
        report.keypoint_error
    );
    if let Some(cue) = report.cue_wer {
        s.push_str(&format!("\n{:<6} {:.2}%", "inter", 100.0 * report.wer));
        for (name, w) in CUE_NAMES.iter().zip(cue) {
            s.push_str(&format!("\n{name:<6} {:.2}%", 100.0 * w));
        }
    }
    s
}

pub fn eval(
    common: &Common,
    split: Split,
    checkpoint: Option<PathBuf>,
    beam: Option<usize>,
    per_cue: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let l = load_run(common, checkpoint)?;
    let clips: Vec<&Clip> = l.corpus.split(split).collect();
    if clips.is_empty() {
        return Err(CliError::Data(format!("split {} is empty", split.name())));
    }
    let beam = beam.unwrap_or(l.cfg.train.beam_width);
    if beam == 0 {
        return Err(CliError::Config("beam width must be at least 1".into()));
    }
    let report = evaluate(&l.trainer.model, &l.trainer.params, &clips, beam, per_cue)?;
    let run_dir = out_dir(common, Path::new("run"));
    let mut hyp = String::new();
    for r in &report.clips {
        let line = format!("{}\t{}", r.id, render(&l.vocab, &r.hypothesis));
        w(out, &line)?;
        hyp.push_str(&line);
        hyp.push('\n');
    }
    write_file(&run_dir.join(format!("hyp_{}.txt", split.name())), &hyp)?;
    w(out, format_report(&report, split))
}

fn render(vocab: &Vocabulary, glosses: &[usize]) -> String {
    glosses.iter().map(|&g| vocab.glosses()[g].as_str()).collect::<Vec<_>>().join(" ")
}

pub fn decode(common: &Common, clip_id: &str, checkpoint: Option<PathBuf>, beam: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let l = load_run(common, checkpoint)?;
    let clip = l
        .corpus
        .clips
        .iter()
        .find(|c| c.id == clip_id)
        .ok_or_else(|| CliError::Data(format!("no clip '{clip_id}' in {}", l.cfg.data.data_dir.display())))?;
    let model: &Stmc = &l.trainer.model;
    if clip.len() < model.cfg.min_frames() {
        return Err(CliError::Data(format!(
            "clip {clip_id} has {} frames; at least {} are required",
            clip.len(),
            model.cfg.min_frames()
        )));
    }
    let mut tape = stmc_tensor::Tape::<f32>::new();
    let p = l.trainer.params.bind(&mut tape);
    let o = model.forward_clips(&mut tape, &p, &[clip])?.remove(0);
    let shape = tape.shape(o.inter_logits).to_vec();
    let post = PosteriorSequence::from_logits(shape[0], shape[1], &tape.value(o.inter_logits).to_f64_vec())?;
    let labels = stmc_core::decode::beam_search_decode(&post, beam.unwrap_or(l.cfg.train.beam_width));
    w(out, format!("{}\t{}", clip.id, l.vocab.render(&labels)))?;
    for t in 0..post.steps() {
        let row = post.row(t);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let top: Vec<String> = idx.iter().take(3).map(|&k| format!("{} {:.3}", l.vocab.name(k), row[k])).collect();
        w(out, format!("# t={t}: {}", top.join(", ")))?;
    }
    Ok(())
}

// ---------- gradcheck ----------

pub fn parse_op(name: &str) -> Option<OpKind> {
    use OpKind::*;
    [
        Conv2d, ConvTranspose2d, TemporalConv1d, TemporalMaxPool, MaxPool2d, Dense, Relu, Sigmoid, Tanh, Add, Sub, Mul,
        Scale, Sum, RowSoftmax, GlobalAvgPool2d, Concat, Slice, Reshape, Crop, SoftArgmax, SmoothL1, ScalarFn,
    ]
    .into_iter()
    .find(|k| k.name() == name)
}

pub fn gradcheck(common: &Common, fault: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let cfg = GradCheckConfig { seed: common.seed.unwrap_or(0), ..GradCheckConfig::default() };
    let kind = match fault {
        Some(name) => Some(parse_op(name).ok_or_else(|| CliError::Config(format!("unknown op '{name}'")))?),
        None => None,
    };
    stmc_tensor::tape::inject_backward_fault(kind);
    let reports = full_suite(&cfg);
    stmc_tensor::tape::inject_backward_fault(None);
    let reports = reports?;
    let mut failed = Vec::new();
    for r in &reports {
        w(out, r)?;
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        w(out, format!("all {} checks passed", reports.len()))
    } else {
        Err(CliError::Numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}

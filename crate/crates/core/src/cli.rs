//! Command-line front end.
//!
//! Configuration is resolved in three layers: preset defaults, then flags
//! (`--seed`, `--set key=value`, subcommand flags), then the `--config` file,
//! which has the last word.
//!
//! Exit codes for every subcommand:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | artifact written and validated |
//! | 1 | runtime failure (non-finite loss, degenerate gold, ...) |
//! | 2 | usage or input error (bad flag, missing or malformed file) |
//! | 3 | configuration error or checkpoint/config mismatch |
//!
//! `COREF_MT_WORKDIR`, when set, is the directory relative paths resolve
//! against.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ModelConfig;
use crate::corpus::io::{read_parallel_documents, read_windows, write_parallel_documents, write_windows};
use crate::corpus::synthetic::{synthetic_documents, SyntheticSpec};
use crate::corpus::{learn_from_documents, preprocess, BpeModel, Sentence};
use crate::eval::bleu::corpus_bleu;
use crate::eval::contrastive::{contrastive_accuracy, read_contrastive};
use crate::eval::experiments::{run_experiment_suite, schedule, window_muc, Experiment, SuiteConfig, SuiteData};
use crate::eval::heatmap::{attention_heatmap, coref_heatmap, write_heatmap, Heatmap};
use crate::inference::{eval_tokens, read_nbest, rerank_cached, tune_beta, write_nbest};
use crate::model::{EncodedWindow, Model};
use crate::training::{token_accuracy, train, TrainOptions};
use crate::{Error, Result};

pub const WORKDIR_ENV: &str = "COREF_MT_WORKDIR";

#[derive(Debug, Parser)]
#[command(name = "coref-mt", version, about = "Context-aware translation with a coreference explanation head")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// `key = value` configuration file; overrides flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Starting preset: desk, wmt-en-ru or wmt-en-de.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Individual configuration overrides, `key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic pronoun corpus as raw document files.
    Synth(SynthArgs),
    /// Window, segment and remap a raw document corpus.
    Preprocess(PreprocessArgs),
    /// Train a model on preprocessed windows.
    Train(TrainArgs),
    /// Beam-decode windows into an N-best file.
    Translate(TranslateArgs),
    /// Rerank an N-best file offline.
    Rerank(RerankArgs),
    /// Print BLEU, MUC and contrastive accuracy.
    Evaluate(EvaluateArgs),
    /// Dump an attention heat map for one window.
    Heatmap(HeatmapArgs),
    /// Run experiment grids.
    Experiments(ExperimentArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output prefix; writes `<out>.src`, `<out>.tgt`, `<out>.clusters`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    documents: usize,
    #[arg(long, default_value_t = 5)]
    sentences: usize,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Cluster sidecar, one JSON line per document.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Output prefix for the window files.
    #[arg(long)]
    out: PathBuf,
    /// Sentences per window.
    #[arg(short = 'm', long = "window", default_value_t = 4)]
    m: usize,
    /// Apply these merges instead of learning new ones.
    #[arg(long)]
    bpe: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training window prefix.
    #[arg(long)]
    train: PathBuf,
    /// Validation window prefix.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Window prefix; only `<input>.src` is required.
    #[arg(long)]
    input: PathBuf,
    /// N-best output file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Debug, Args)]
struct RerankArgs {
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fixed weight of the coreference score.
    #[arg(long, conflicts_with = "tune_nbest")]
    beta: Option<f64>,
    /// N-best file to tune β on.
    #[arg(long, requires = "tune_ref")]
    tune_nbest: Option<PathBuf>,
    /// Target file with references for `--tune-nbest`.
    #[arg(long)]
    tune_ref: Option<PathBuf>,
    /// Also write the top hypothesis of each list, one per line.
    #[arg(long)]
    hyp_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Hypothesis file, one window per line.
    #[arg(long, conflicts_with = "nbest")]
    hyp: Option<PathBuf>,
    /// N-best file; its top hypotheses are scored.
    #[arg(long)]
    nbest: Option<PathBuf>,
    /// Reference file, one window per line.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Checkpoint for MUC, token accuracy and contrastive scoring.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Window prefix scored with `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    input: Option<PathBuf>,
    /// Contrastive test file.
    #[arg(long, requires = "checkpoint")]
    contrastive: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Window index within the input.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// `encoder` or `coref`.
    #[arg(long, default_value = "encoder")]
    layer: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Grid such as `m=2,3,4`, `alpha=0.8,1,2`, `size=100,200`, `prune=0,10,20`,
    /// `prune-retrain=0,10` or `beta=0,0.5,1`. Repeatable.
    #[arg(long = "grid", required = true)]
    grids: Vec<String>,
    /// Directory holding one subdirectory per condition and the report.
    #[arg(long)]
    work_dir: PathBuf,
    #[arg(long, requires = "tgt")]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Use this many synthetic documents instead of files.
    #[arg(long, conflicts_with = "src")]
    synthetic: Option<usize>,
    /// Parallel workers.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Load `best.ckpt` from each condition directory instead of training.
    #[arg(long)]
    no_train: bool,
    /// Print the scheduled conditions and exit.
    #[arg(long)]
    dry_run: bool,
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::CheckpointMismatch(_) | Error::Checkpoint(_) => 3,
        Error::NonFiniteLoss { .. } | Error::DegenerateGold | Error::EmptyValidationSet => 1,
        _ => 2,
    }
}

impl Cli {
    fn resolve_config(&self, extra: &[(&str, String)]) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.preset)?;
        cfg.seed = self.seed;
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` must be key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        for (k, v) in extra {
            cfg.set(k, v)?;
        }
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg = cfg.apply_kv(&text)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a checkpoint, refusing it when explicit configuration disagrees
    /// with its architecture.
    fn load_model(&self, path: &Path) -> Result<Model> {
        if !path.exists() {
            return Err(Error::InvalidArgument(format!("checkpoint {} does not exist", path.display())));
        }
        if self.config.is_some() || !self.overrides.is_empty() {
            Model::load_checked(path, &self.resolve_config(&[])?)
        } else {
            Model::load(path)
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.split_whitespace().map(String::from).collect()).collect())
}

fn write_lines(path: &Path, lines: &[Sentence]) -> Result<()> {
    let s: String = lines.iter().map(|l| l.join(" ") + "\n").collect();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn cmd_synth(cli: &Cli, a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let docs = synthetic_documents(&SyntheticSpec {
        documents: a.documents,
        sentences_per_document: a.sentences,
        seed: cli.seed,
    });
    let (s, t, c) = crate::corpus::io::window_paths(&a.out);
    write_parallel_documents(&docs, &s, &t, &c)?;
    writeln!(out, "wrote {} documents to {}.{{src,tgt,clusters}}", docs.len(), a.out.display()).ok();
    Ok(())
}

fn bpe_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".bpe");
    PathBuf::from(p)
}

fn cmd_preprocess(cli: &Cli, a: &PreprocessArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.resolve_config(&[])?;
    for p in [&a.src, &a.tgt] {
        if !p.exists() {
            return Err(Error::InvalidArgument(format!("input file {} does not exist", p.display())));
        }
    }
    let docs = read_parallel_documents(&a.src, &a.tgt, a.clusters.as_deref())?;
    let bpe = match &a.bpe {
        Some(p) => BpeModel::load(p)?,
        None => learn_from_documents(&docs, cfg.num_merges)?,
    };
    let records = preprocess(&docs, a.m, &bpe)?;
    write_windows(&a.out, &records)?;
    bpe.save(&bpe_path(&a.out))?;
    writeln!(out, "wrote {} windows (m={}) to {}", records.len(), a.m, a.out.display()).ok();
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(v) = &a.variant {
        extra.push(("variant", v.clone()));
    }
    if let Some(e) = a.epochs {
        extra.push(("epochs", e.to_string()));
    }
    let cfg = cli.resolve_config(&extra)?;
    let train_w = read_windows(&a.train)?;
    let valid_w = match &a.valid {
        Some(p) => read_windows(p)?,
        None => Vec::new(),
    };
    let state = train(
        &cfg,
        &train_w,
        &valid_w,
        &TrainOptions {
            out_dir: Some(a.out.clone()),
        },
    )?;
    let cfg_path = a.out.join("config.kv");
    fs::write(&cfg_path, state.model.config.to_kv()).map_err(|e| Error::io(&cfg_path, e))?;
    Model::load(&a.out.join("best.ckpt"))?;
    let last = state.epochs.last();
    writeln!(
        out,
        "trained {} epochs ({} steps, stop {:?}); final train loss {:.4}",
        state.epoch,
        state.step(),
        state.stop,
        last.map_or(f64::NAN, |e| e.train.total)
    )
    .ok();
    Ok(())
}

fn cmd_translate(cli: &Cli, a: &TranslateArgs, out: &mut dyn Write) -> Result<()> {
    let model = cli.load_model(&a.checkpoint)?;
    let windows = read_windows(&a.input)?;
    let beam = a.beam.unwrap_or(model.config.beam);
    let lists = crate::eval::experiments::decode_windows(&model, &windows, beam)?;
    write_nbest(&a.out, &lists)?;
    read_nbest(&a.out)?;
    writeln!(out, "wrote {} N-best lists (beam {beam}) to {}", lists.len(), a.out.display()).ok();
    Ok(())
}

fn cmd_rerank(cli: &Cli, a: &RerankArgs, out: &mut dyn Write) -> Result<()> {
    let lists = read_nbest(&a.nbest)?;
    let beta = match (&a.tune_nbest, &a.tune_ref, a.beta) {
        (Some(n), Some(r), _) => {
            let choice = tune_beta(&read_nbest(n)?, &read_lines(r)?)?;
            writeln!(out, "tuned beta {} (BLEU {:.2}, {} grid points)", choice.beta, choice.bleu, choice.evaluated).ok();
            choice.beta
        }
        (_, _, Some(b)) => b,
        _ => cli.resolve_config(&[])?.beta,
    };
    let reranked: Vec<_> = lists.iter().map(|l| rerank_cached(l, beta)).collect();
    write_nbest(&a.out, &reranked)?;
    if let Some(h) = &a.hyp_out {
        let tops: Vec<Sentence> = reranked.iter().map(|l| l.best().tokens.clone()).collect();
        write_lines(h, &tops)?;
    }
    writeln!(out, "beta\t{beta}").ok();
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let mut printed = false;
    let hyps = match (&a.hyp, &a.nbest) {
        (Some(h), _) => Some(read_lines(h)?),
        (_, Some(n)) => Some(read_nbest(n)?.iter().map(|l| l.best().tokens.clone()).collect()),
        _ => None,
    };
    if let Some(hyps) = hyps {
        let r = a
            .reference
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--reference is required with --hyp or --nbest".into()))?;
        let refs = read_lines(r)?;
        let h: Vec<Sentence> = hyps.iter().map(|s| eval_tokens(s)).collect();
        let r: Vec<Sentence> = refs.iter().map(|s| eval_tokens(s)).collect();
        writeln!(out, "BLEU\t{:.2}", corpus_bleu(&h, &r)?).ok();
        printed = true;
    }
    if let Some(ck) = &a.checkpoint {
        let model = cli.load_model(ck)?;
        if let Some(input) = &a.input {
            let windows: Vec<EncodedWindow> = read_windows(input)?.iter().map(|r| model.encode_record_lossy(r)).collect();
            writeln!(out, "token_accuracy\t{:.4}", token_accuracy(&model, &windows)?).ok();
            if model.config.variant.has_coref_head() {
                match window_muc(&model, &windows)? {
                    Some(f) => writeln!(out, "MUC_F1\t{f:.4}"),
                    None => writeln!(out, "MUC_F1\t-"),
                }
                .ok();
            }
            printed = true;
        }
        if let Some(c) = &a.contrastive {
            let items = read_contrastive(c)?;
            writeln!(out, "category\tcorrect\ttotal\taccuracy").ok();
            for (cat, acc) in contrastive_accuracy(&model, &items)? {
                writeln!(out, "{cat}\t{}\t{}\t{:.4}", acc.correct, acc.total, acc.accuracy).ok();
            }
            printed = true;
        }
    }
    if !printed {
        return Err(Error::InvalidArgument(
            "nothing to evaluate: give --hyp/--nbest with --reference, or --checkpoint with --input/--contrastive".into(),
        ));
    }
    Ok(())
}

fn cmd_heatmap(cli: &Cli, a: &HeatmapArgs, out: &mut dyn Write) -> Result<()> {
    let model = cli.load_model(&a.checkpoint)?;
    let windows = read_windows(&a.input)?;
    let rec = windows
        .get(a.index)
        .ok_or_else(|| Error::InvalidArgument(format!("window {} out of range ({} windows)", a.index, windows.len())))?;
    let w = model.encode_record_lossy(rec);
    let (values, layer) = match a.layer.as_str() {
        "encoder" => (attention_heatmap(&model, &w.src, &w.clusters)?, format!("enc.{}", model.config.enc_layers - 1)),
        "coref" => (coref_heatmap(&model, &w)?, "coref".to_string()),
        other => return Err(Error::InvalidArgument(format!("unknown layer `{other}`; use encoder or coref"))),
    };
    write_heatmap(
        &a.out,
        &Heatmap {
            layer,
            model: model.config.variant.to_string(),
            values,
        },
    )?;
    writeln!(out, "wrote heat map to {}", a.out.display()).ok();
    Ok(())
}

fn cmd_experiments(cli: &Cli, a: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let base = cli.resolve_config(&[])?;
    let experiments: Vec<Experiment> = a.grids.iter().map(|g| Experiment::parse(g)).collect::<Result<_>>()?;
    let docs = match (&a.src, &a.tgt, a.synthetic) {
        (Some(s), Some(t), _) => read_parallel_documents(s, t, a.clusters.as_deref())?,
        (_, _, Some(n)) => synthetic_documents(&SyntheticSpec {
            documents: n,
            sentences_per_document: 5,
            seed: cli.seed,
        }),
        _ => return Err(Error::InvalidArgument("give --src/--tgt or --synthetic N".into())),
    };
    let data = SuiteData::split(docs)?;
    if a.dry_run {
        for (e, c) in schedule(&experiments, &base, data.train.len()) {
            writeln!(out, "{e}\t{c}").ok();
        }
        return Ok(());
    }
    let suite = SuiteConfig {
        base,
        work_dir: a.work_dir.clone(),
        experiments,
        train: !a.no_train,
        jobs: a.jobs,
        prune_seed: cli.seed,
    };
    let report = run_experiment_suite(&suite, &data)?;
    for e in &suite.experiments {
        write!(out, "# {}\n{}", e.name(), report.table(e.name())).ok();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                write!(out, "{text}").ok();
            } else {
                write!(err, "{text}").ok();
            }
            return code;
        }
    };
    if let Some(dir) = std::env::var_os(WORKDIR_ENV) {
        if let Err(e) = std::env::set_current_dir(&dir) {
            writeln!(err, "error: cannot enter {WORKDIR_ENV}={}: {e}", PathBuf::from(dir).display()).ok();
            return 2;
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&cli, a, out),
        Command::Preprocess(a) => cmd_preprocess(&cli, a, out),
        Command::Train(a) => cmd_train(&cli, a, out),
        Command::Translate(a) => cmd_translate(&cli, a, out),
        Command::Rerank(a) => cmd_rerank(&cli, a, out),
        Command::Evaluate(a) => cmd_evaluate(&cli, a, out),
        Command::Heatmap(a) => cmd_heatmap(&cli, a, out),
        Command::Experiments(a) => cmd_experiments(&cli, a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("coref-mt").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run_capture(&["synth", "--out", "x", "--bogus"]).0, 2);
    }

    #[test]
    fn config_file_beats_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.kv");
        fs::write(&p, "seed = 9\nalpha = 3\n").unwrap();
        let cli = Cli::try_parse_from([
            "coref-mt",
            "--seed",
            "5",
            "--set",
            "alpha=1",
            "--config",
            p.to_str().unwrap(),
            "synth",
            "--out",
            "x",
        ])
        .unwrap();
        let cfg = cli.resolve_config(&[]).unwrap();
        assert_eq!((cfg.seed, cfg.alpha), (9, 3.0));
    }

    #[test]
    fn flags_beat_defaults() {
        let cli = Cli::try_parse_from(["coref-mt", "--seed", "5", "--set", "alpha=1", "synth", "--out", "x"]).unwrap();
        let cfg = cli.resolve_config(&[]).unwrap();
        assert_eq!((cfg.seed, cfg.alpha), (5, 1.0));
    }

    #[test]
    fn defaults() {
        let cli = Cli::try_parse_from(["coref-mt", "preprocess", "--src", "a", "--tgt", "b", "--out", "c"]).unwrap();
        assert_eq!(cli.seed, 1);
        match cli.command {
            Command::Preprocess(a) => assert_eq!(a.m, 4),
            _ => unreachable!(),
        }
    }

    #[test]
    fn bad_config_value_exits_3() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x");
        let (code, _, err) = run_capture(&[
            "--set",
            "d_model=abc",
            "preprocess",
            "--src",
            "a",
            "--tgt",
            "b",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 3, "{err}");
    }
}

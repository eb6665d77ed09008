//! Experiment drivers: context size, corpus size, cluster pruning, α and β
//! sweeps. Every condition gets its own working directory and contributes
//! rows to a line-delimited report keyed by (experiment, condition, metric).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::corpus_bleu;
use super::muc::{muc_counts, MucCounts};
use super::prune::prune_clusters;
use crate::config::{ModelConfig, Variant};
use crate::corpus::{learn_from_documents, preprocess, BpeModel, Document, Sentence, WindowRecord};
use crate::inference::{
    beam_search, eval_tokens, oracle_select, rerank_cached, score_coref, tune_beta, NBestList,
};
use crate::model::{EncodedWindow, Model};
use crate::training::{train, TrainOptions};
use crate::{coref, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub condition: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn push(&mut self, experiment: &str, condition: &str, metric: &str, value: f64) {
        self.rows.push(ReportRow {
            experiment: experiment.into(),
            condition: condition.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn get(&self, experiment: &str, condition: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.experiment == experiment && r.condition == condition && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain struct") + "\n")
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Report> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Report { rows })
    }

    /// Tab-separated table for one experiment: a header of metric names and
    /// one row per condition in first-seen order.
    pub fn table(&self, experiment: &str) -> String {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.experiment == experiment).collect();
        let mut conds: Vec<&str> = Vec::new();
        let mut metrics: Vec<&str> = Vec::new();
        for r in &rows {
            if !conds.contains(&r.condition.as_str()) {
                conds.push(&r.condition);
            }
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
        let mut out = format!("condition\t{}\n", metrics.join("\t"));
        for c in conds {
            let vals: Vec<String> = metrics
                .iter()
                .map(|m| self.get(experiment, c, m).map_or_else(|| "-".into(), |v| v.to_string()))
                .collect();
            out.push_str(&format!("{c}\t{}\n", vals.join("\t")));
        }
        out
    }
}

/// One study in the suite.
#[derive(Clone, Debug, PartialEq)]
pub enum Experiment {
    /// Window sizes m.
    ContextSize(Vec<usize>),
    /// Numbers of training documents, each run with Base Doc and Trans+Coref.
    CorpusSize(Vec<usize>),
    /// Percentages of cluster members removed. With `retrain` the training
    /// clusters are pruned too; otherwise one model is trained and only the
    /// clusters used for reranking are pruned.
    Pruning { percents: Vec<f64>, retrain: bool },
    /// Coreference loss weights.
    Alpha(Vec<f64>),
    /// Fixed reranking weights applied to one model.
    Beta(Vec<f64>),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ContextSize(_) => "context_size",
            Experiment::CorpusSize(_) => "corpus_size",
            Experiment::Pruning { .. } => "pruning",
            Experiment::Alpha(_) => "alpha",
            Experiment::Beta(_) => "beta",
        }
    }

    /// Parses `m=2,3,4`, `alpha=...`, `beta=...`, `size=...`, `prune=...`
    /// or `prune-retrain=...`.
    pub fn parse(spec: &str) -> Result<Experiment> {
        let bad = |m: String| Error::InvalidArgument(m);
        let (key, vals) = spec
            .split_once('=')
            .ok_or_else(|| bad(format!("grid `{spec}` must look like key=v1,v2")))?;
        let floats = || -> Result<Vec<f64>> {
            vals.split(',')
                .map(|v| v.trim().parse().map_err(|_| bad(format!("bad value `{v}` in `{spec}`"))))
                .collect()
        };
        let ints = || -> Result<Vec<usize>> {
            vals.split(',')
                .map(|v| v.trim().parse().map_err(|_| bad(format!("bad value `{v}` in `{spec}`"))))
                .collect()
        };
        Ok(match key.trim() {
            "m" => Experiment::ContextSize(ints()?),
            "size" => Experiment::CorpusSize(ints()?),
            "alpha" => Experiment::Alpha(floats()?),
            "beta" => Experiment::Beta(floats()?),
            "prune" => Experiment::Pruning {
                percents: floats()?,
                retrain: false,
            },
            "prune-retrain" => Experiment::Pruning {
                percents: floats()?,
                retrain: true,
            },
            other => return Err(bad(format!("unknown grid key `{other}`"))),
        })
    }
}

/// Documents split into training, validation and test parts.
#[derive(Clone, Debug)]
pub struct SuiteData {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
}

impl SuiteData {
    /// Last tenth (at least one document) for test, the tenth before it for
    /// validation.
    pub fn split(mut docs: Vec<Document>) -> Result<SuiteData> {
        if docs.len() < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 documents, got {}", docs.len())));
        }
        let k = (docs.len() / 10).max(1);
        let test = docs.split_off(docs.len() - k);
        let valid = docs.split_off(docs.len() - k);
        Ok(SuiteData { train: docs, valid, test })
    }
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub base: ModelConfig,
    pub work_dir: PathBuf,
    pub experiments: Vec<Experiment>,
    /// Train each condition; otherwise load `<dir>/best.ckpt`.
    pub train: bool,
    pub jobs: usize,
    pub prune_seed: u64,
}

/// Metrics for one model on one test set.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Evaluation {
    pub bleu: f64,
    pub bleu_rerank: Option<f64>,
    pub bleu_oracle: f64,
    pub beta: Option<f64>,
    pub muc_f1: Option<f64>,
    pub hyps: Vec<Sentence>,
    pub rerank_hyps: Vec<Sentence>,
    pub refs: Vec<Sentence>,
}

impl Evaluation {
    fn report(&self, report: &mut Report, experiment: &str, condition: &str) {
        report.push(experiment, condition, "bleu", self.bleu);
        report.push(experiment, condition, "bleu_oracle", self.bleu_oracle);
        if let Some(v) = self.bleu_rerank {
            report.push(experiment, condition, "bleu_rerank", v);
        }
        if let Some(v) = self.beta {
            report.push(experiment, condition, "beta", v);
        }
        if let Some(v) = self.muc_f1 {
            report.push(experiment, condition, "muc_f1", v);
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, lines: &[Sentence]| {
            let p = dir.join(name);
            let s: String = lines.iter().map(|l| l.join(" ") + "\n").collect();
            fs::write(&p, s).map_err(|e| Error::io(&p, e))
        };
        write("test.hyp", &self.hyps)?;
        write("test.ref", &self.refs)?;
        if !self.rerank_hyps.is_empty() {
            write("test.rerank.hyp", &self.rerank_hyps)?;
        }
        Ok(())
    }
}

/// Beam N-best lists for every window, with coreference scores when the model
/// has a coreference head.
pub fn decode_windows(model: &Model, windows: &[WindowRecord], beam: usize) -> Result<Vec<NBestList>> {
    windows
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let w = model.encode_record_lossy(r);
            let mut nb = beam_search(model, &w.src, &w.clusters, beam)?;
            nb.window_id = i;
            if model.config.variant.has_coref_head() {
                score_coref(model, &mut nb, &w.src, &w.clusters)?;
            }
            Ok(nb)
        })
        .collect()
}

/// Re-scores cached N-best lists against different source clusters.
pub fn rescore_with_clusters(model: &Model, lists: &[NBestList], windows: &[WindowRecord]) -> Result<Vec<NBestList>> {
    lists
        .par_iter()
        .zip(windows)
        .map(|(l, r)| {
            let w = model.encode_record_lossy(r);
            let mut l = l.clone();
            score_coref(model, &mut l, &w.src, &w.clusters)?;
            Ok(l)
        })
        .collect()
}

/// Corpus-level MUC over windows whose gold has at least one cluster, with
/// the decoder teacher-forced on the reference.
pub fn window_muc(model: &Model, windows: &[EncodedWindow]) -> Result<Option<f64>> {
    let parts: Vec<MucCounts> = windows
        .par_iter()
        .filter(|w| !w.clusters.is_empty())
        .map(|w| Ok(muc_counts(&coref::predict_window(model, w)?, &w.clusters)))
        .collect::<Result<_>>()?;
    let mut total = MucCounts::default();
    for p in &parts {
        total.add(p);
    }
    match total.result() {
        Ok(r) => Ok(Some(r.f1)),
        Err(Error::DegenerateGold) => Ok(None),
        Err(e) => Err(e),
    }
}

fn tops(lists: &[NBestList]) -> Vec<Sentence> {
    lists.iter().map(|l| eval_tokens(&l.best().tokens)).collect()
}

/// Decodes `test`, tunes β on `valid` (when the model has a coreference
/// head) and scores everything.
pub fn evaluate_model(model: &Model, valid: &[WindowRecord], test: &[WindowRecord], beam: usize) -> Result<Evaluation> {
    let test_lists = decode_windows(model, test, beam)?;
    let refs: Vec<Sentence> = test.iter().map(|r| eval_tokens(&r.tgt)).collect();
    let hyps = tops(&test_lists);
    let oracle: Vec<Sentence> = test_lists
        .iter()
        .zip(test)
        .map(|(l, r)| oracle_select(l, &r.tgt).map(|h| eval_tokens(&h.tokens)))
        .collect::<Result<_>>()?;
    let mut ev = Evaluation {
        bleu: corpus_bleu(&hyps, &refs)?,
        bleu_oracle: corpus_bleu(&oracle, &refs)?,
        hyps,
        refs,
        ..Default::default()
    };
    if model.config.variant.has_coref_head() {
        let beta = if valid.is_empty() {
            model.config.beta
        } else {
            let valid_lists = decode_windows(model, valid, beam)?;
            let valid_refs: Vec<Sentence> = valid.iter().map(|r| r.tgt.clone()).collect();
            tune_beta(&valid_lists, &valid_refs)?.beta
        };
        let reranked: Vec<NBestList> = test_lists.iter().map(|l| rerank_cached(l, beta)).collect();
        ev.rerank_hyps = tops(&reranked);
        ev.bleu_rerank = Some(corpus_bleu(&ev.rerank_hyps, &ev.refs)?);
        ev.beta = Some(beta);
        let enc: Vec<EncodedWindow> = test.iter().map(|r| model.encode_record_lossy(r)).collect();
        ev.muc_f1 = window_muc(model, &enc)?;
    }
    Ok(ev)
}

/// Reranked BLEU on `test` after pruning its clusters at each percentage.
/// N-best lists are decoded once; β is fixed.
pub fn pruning_study(
    model: &Model,
    test: &[WindowRecord],
    percents: &[f64],
    beta: f64,
    seed: u64,
    beam: usize,
) -> Result<Vec<(f64, f64)>> {
    let lists = decode_windows(model, test, beam)?;
    let refs: Vec<Sentence> = test.iter().map(|r| eval_tokens(&r.tgt)).collect();
    percents
        .iter()
        .map(|&pct| {
            let pruned: Vec<WindowRecord> = test
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    Ok(WindowRecord {
                        clusters: prune_clusters(&r.clusters, pct / 100.0, seed.wrapping_add(i as u64))?,
                        ..r.clone()
                    })
                })
                .collect::<Result<_>>()?;
            let scored = rescore_with_clusters(model, &lists, &pruned)?;
            let hyps: Vec<Sentence> = scored.iter().map(|l| eval_tokens(&rerank_cached(l, beta).best().tokens)).collect();
            Ok((pct, corpus_bleu(&hyps, &refs)?))
        })
        .collect()
}

struct Condition {
    experiment: &'static str,
    name: String,
    config: ModelConfig,
    train_docs: usize,
    train_prune: Option<f64>,
}

/// Working directory of one condition.
pub fn condition_dir(work: &Path, experiment: &str, name: &str) -> PathBuf {
    let safe: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    work.join(experiment).join(safe)
}

fn windows(docs: &[Document], m: usize, bpe: &BpeModel) -> Result<Vec<WindowRecord>> {
    preprocess(docs, m, bpe)
}

fn prune_docs(docs: &[Document], pct: f64, seed: u64) -> Result<Vec<Document>> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let mut d = d.clone();
            d.clusters = prune_clusters(&d.clusters, pct / 100.0, seed.wrapping_add(i as u64))?;
            Ok(d)
        })
        .collect()
}

/// Trains (or loads) the model for a condition and returns it with its
/// preprocessed validation and test windows.
fn prepare(
    cond: &Condition,
    data: &SuiteData,
    suite: &SuiteConfig,
) -> Result<(Model, Vec<WindowRecord>, Vec<WindowRecord>, PathBuf)> {
    let dir = condition_dir(&suite.work_dir, cond.experiment, &cond.name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut train_docs: Vec<Document> = data.train.iter().take(cond.train_docs).cloned().collect();
    if let Some(p) = cond.train_prune {
        train_docs = prune_docs(&train_docs, p, suite.prune_seed)?;
    }
    let bpe = learn_from_documents(&train_docs, cond.config.num_merges)?;
    bpe.save(&dir.join("bpe.codes"))?;
    let m = cond.config.window;
    let train_w = windows(&train_docs, m, &bpe)?;
    let valid_w = windows(&data.valid, m, &bpe)?;
    let test_w = windows(&data.test, m, &bpe)?;
    let ckpt = dir.join("best.ckpt");
    let model = if suite.train {
        train(
            &cond.config,
            &train_w,
            &valid_w,
            &TrainOptions {
                out_dir: Some(dir.clone()),
            },
        )?;
        Model::load(&ckpt)?
    } else {
        if !ckpt.exists() {
            return Err(Error::MissingCheckpoint {
                condition: format!("{}/{}", cond.experiment, cond.name),
                path: ckpt,
            });
        }
        Model::load_checked(&ckpt, &cond.config)?
    };
    Ok((model, valid_w, test_w, dir))
}

fn conditions(exp: &Experiment, base: &ModelConfig, n_train: usize) -> Vec<Condition> {
    let name = exp.name();
    let with = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let cond = |n: String, config: ModelConfig| Condition {
        experiment: name,
        name: n,
        config,
        train_docs: n_train,
        train_prune: None,
    };
    match exp {
        Experiment::ContextSize(ms) => ms
            .iter()
            .map(|&m| cond(format!("m={m}"), with(&|c| c.window = m)))
            .collect(),
        Experiment::Alpha(alphas) => alphas
            .iter()
            .map(|&a| cond(format!("alpha={a}"), with(&|c| {
                c.alpha = a;
                c.variant = Variant::TransCoref;
            })))
            .collect(),
        Experiment::CorpusSize(sizes) => sizes
            .iter()
            .flat_map(|&n| {
                [Variant::BaseDoc, Variant::TransCoref].map(|v| Condition {
                    train_docs: n.min(n_train),
                    ..cond(format!("{v}/docs={n}"), with(&|c| c.variant = v))
                })
            })
            .collect(),
        Experiment::Pruning { percents, retrain: true } => percents
            .iter()
            .map(|&p| Condition {
                train_prune: Some(p),
                ..cond(format!("prune={p}"), base.clone())
            })
            .collect(),
        Experiment::Pruning { retrain: false, .. } | Experiment::Beta(_) => vec![cond("base".into(), base.clone())],
    }
}

/// `(experiment, condition)` pairs that the suite will train or load, in
/// order.
pub fn schedule(experiments: &[Experiment], base: &ModelConfig, n_train: usize) -> Vec<(String, String)> {
    experiments
        .iter()
        .flat_map(|e| conditions(e, base, n_train))
        .map(|c| (c.experiment.to_string(), c.name))
        .collect()
}

fn run_experiment(exp: &Experiment, data: &SuiteData, suite: &SuiteConfig) -> Result<Report> {
    let mut report = Report::default();
    let conds = conditions(exp, &suite.base, data.train.len());
    let results: Vec<(String, Result<(Model, Vec<WindowRecord>, Vec<WindowRecord>, PathBuf)>)> = conds
        .par_iter()
        .map(|c| (c.name.clone(), prepare(c, data, suite)))
        .collect();
    let beam = suite.base.beam;
    for (name, res) in results {
        let (model, valid, test, dir) = res?;
        match exp {
            Experiment::Pruning { percents, retrain: false } => {
                let ev = evaluate_model(&model, &valid, &test, beam)?;
                ev.report(&mut report, exp.name(), "base");
                let beta = ev.beta.unwrap_or(suite.base.beta);
                for (pct, bleu) in pruning_study(&model, &test, percents, beta, suite.prune_seed, beam)? {
                    let cond = format!("prune={pct}");
                    report.push(exp.name(), &cond, "bleu", ev.bleu);
                    report.push(exp.name(), &cond, "bleu_rerank", bleu);
                }
            }
            Experiment::Beta(betas) => {
                let lists = decode_windows(&model, &test, beam)?;
                let refs: Vec<Sentence> = test.iter().map(|r| eval_tokens(&r.tgt)).collect();
                for &b in betas {
                    let hyps: Vec<Sentence> = lists.iter().map(|l| eval_tokens(&rerank_cached(l, b).best().tokens)).collect();
                    report.push(exp.name(), &format!("beta={b}"), "bleu_rerank", corpus_bleu(&hyps, &refs)?);
                }
            }
            _ => {
                let ev = evaluate_model(&model, &valid, &test, beam)?;
                ev.save(&dir)?;
                ev.report(&mut report, exp.name(), &name);
            }
        }
    }
    Ok(report)
}

/// Runs every configured experiment and writes `<work_dir>/report.jsonl` plus
/// one `<experiment>.tsv` table per experiment.
pub fn run_experiment_suite(suite: &SuiteConfig, data: &SuiteData) -> Result<Report> {
    fs::create_dir_all(&suite.work_dir).map_err(|e| Error::io(&suite.work_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(suite.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut report = Report::default();
    for exp in &suite.experiments {
        let r = pool.install(|| run_experiment(exp, data, suite))?;
        report.rows.extend(r.rows);
    }
    report.write(&suite.work_dir.join("report.jsonl"))?;
    for exp in &suite.experiments {
        let p = suite.work_dir.join(format!("{}.tsv", exp.name()));
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(report.table(exp.name()).as_bytes()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

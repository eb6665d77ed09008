#![allow(dead_code)]

//! Independent oracles and fixtures shared by the integration suites.

use std::collections::HashMap;

use coref_mt::corpus::synthetic::{synthetic_documents, SyntheticSpec};
use coref_mt::corpus::{learn_from_documents, preprocess, CorefClusterSet, Span, WindowRecord};
use coref_mt::training::build_vocab;
use coref_mt::{Model, ModelConfig, Variant};

// ---------------------------------------------------------------------------
// Coreference: enumerate every antecedent assignment, keep the ones whose
// induced clustering equals the gold partition, sum their probabilities.

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    r
}

/// Gold partition over span indices: clusters with at least two retained
/// members, as sorted index lists.
fn gold_partition(spans: &[Span], gold: &CorefClusterSet) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = gold
        .clusters()
        .iter()
        .map(|c| (0..spans.len()).filter(|&i| c.contains(&spans[i])).collect::<Vec<_>>())
        .filter(|c| c.len() >= 2)
        .collect();
    out.sort();
    out
}

fn induced_partition(antecedents: &[usize]) -> Vec<Vec<usize>> {
    let k = antecedents.len();
    let mut parent: Vec<usize> = (0..k).collect();
    for (i, &a) in antecedents.iter().enumerate() {
        if a > 0 {
            let (x, y) = (find(&mut parent, i), find(&mut parent, a - 1));
            parent[x] = y;
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..k {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    out.sort();
    out
}

/// `-log Σ_{derivations consistent with gold} Π_i p(a_i | i)` where
/// `scores[i][0]` is the dummy and `scores[i][j + 1]` the score of span `j`;
/// non-left entries are ignored.
pub fn brute_force_coref_loss(scores: &[Vec<f64>], spans: &[Span], gold: &CorefClusterSet) -> f64 {
    let k = spans.len();
    let probs: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let allowed = &scores[i][..=i];
            let z: f64 = allowed.iter().map(|s| s.exp()).sum();
            allowed.iter().map(|s| s.exp() / z).collect()
        })
        .collect();
    let target = gold_partition(spans, gold);
    let mut assignment = vec![0usize; k];
    let mut total = 0.0;
    loop {
        if induced_partition(&assignment) == target {
            total += (0..k).map(|i| probs[i][assignment[i]]).product::<f64>();
        }
        // odometer: digit i ranges over 0..=i
        let mut i = 0;
        loop {
            if i == k {
                return -total.ln();
            }
            if assignment[i] < i {
                assignment[i] += 1;
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// BLEU, written from the textbook definition with string n-gram keys and
// explicit per-order precision products.

pub fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut matched = [0u64; 4];
    let mut possible = [0u64; 4];
    let (mut c, mut r) = (0u64, 0u64);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len() as u64;
        r += rf.len() as u64;
        for n in 1..=4 {
            let grams = |s: &[String]| {
                let mut m: HashMap<String, u64> = HashMap::new();
                if s.len() >= n {
                    for i in 0..=s.len() - n {
                        *m.entry(s[i..i + n].join("\u{1}")).or_default() += 1;
                    }
                }
                m
            };
            let hg = grams(h);
            let rg = grams(rf);
            for (g, cnt) in &hg {
                matched[n - 1] += (*cnt).min(*rg.get(g).unwrap_or(&0));
                possible[n - 1] += cnt;
            }
        }
    }
    if possible.iter().any(|&p| p == 0) || matched.iter().any(|&m| m == 0) {
        return 0.0;
    }
    let mut prod = 1.0f64;
    for n in 0..4 {
        prod *= matched[n] as f64 / possible[n] as f64;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * prod.powf(0.25)
}

// ---------------------------------------------------------------------------
// MUC by counting the key's spanning-tree links that survive in the
// response graph: a key cluster of size n splits into components under the
// response's pairwise links; recovered links = n - components.

fn recovered_links(key: &CorefClusterSet, response: &CorefClusterSet) -> (usize, usize) {
    let mut got = 0;
    let mut need = 0;
    for cluster in key.clusters() {
        let n = cluster.len();
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in i + 1..n {
                let linked = response
                    .clusters()
                    .iter()
                    .any(|rc| rc.contains(&cluster[i]) && rc.contains(&cluster[j]));
                if linked {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let components = (0..n).filter(|&i| find(&mut parent, i) == i).count();
        got += n - components;
        need += n - 1;
    }
    (got, need)
}

/// `(precision, recall, f1)`; precision is 0 for an empty response.
pub fn oracle_muc(predicted: &CorefClusterSet, gold: &CorefClusterSet) -> (f64, f64, f64) {
    let (rg, rn) = recovered_links(gold, predicted);
    let (pg, pn) = recovered_links(predicted, gold);
    let r = rg as f64 / rn as f64;
    let p = if pn == 0 { 0.0 } else { pg as f64 / pn as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

// ---------------------------------------------------------------------------
// Fixtures

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn spans(pairs: &[(usize, usize)]) -> Vec<Span> {
    pairs.iter().map(|&(a, b)| Span::new(a, b)).collect()
}

/// Small deterministic configuration: 2 layers, d = 16, no dropout.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::desk();
    c.variant = variant;
    c.d_model = 16;
    c.heads = 2;
    c.ffn_dim = 24;
    c.coref_hidden = 12;
    c.dropout_mt = 0.0;
    c.dropout_coref = 0.0;
    c.window = 2;
    c.num_merges = 1000;
    c
}

pub fn synthetic_windows(documents: usize, m: usize, seed: u64) -> Vec<WindowRecord> {
    let docs = synthetic_documents(&SyntheticSpec {
        documents,
        sentences_per_document: 5,
        seed,
    });
    let bpe = learn_from_documents(&docs, 1000).unwrap();
    preprocess(&docs, m, &bpe).unwrap()
}

pub fn tiny_model(variant: Variant, records: &[WindowRecord]) -> Model {
    Model::new(tiny_config(variant), build_vocab(records)).unwrap()
}

/// Settings under which the 2-layer d = 32 model memorises 100 synthetic
/// windows of four sentences within 40 epochs.
pub fn overfit_config() -> ModelConfig {
    let mut c = ModelConfig::desk();
    c.variant = Variant::TransCoref;
    c.window = 4;
    c.epochs = 40;
    c.batch_size = 4;
    c.lr = 5e-3;
    c.warmup_steps = 200;
    c.dropout_mt = 0.0;
    c.dropout_coref = 0.0;
    c.patience = 0;
    c
}

//! Model and training hyperparameters, with a flat `key = value` file format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which system is being trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Plain m-to-m Transformer.
    BaseDoc,
    /// Base Doc with cluster-shared positional embeddings added to the input.
    CEmbedding,
    /// Coreference sub-model on fused encoder and decoder states.
    TransCoref,
    /// Coreference sub-model on an extra encoder layer only.
    TransEnc,
}

impl Variant {
    pub fn has_coref_head(self) -> bool {
        matches!(self, Variant::TransCoref | Variant::TransEnc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BaseDoc => "base-doc",
            Variant::CEmbedding => "c-embedding",
            Variant::TransCoref => "trans-coref",
            Variant::TransEnc => "trans-enc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base-doc" => Ok(Variant::BaseDoc),
            "c-embedding" => Ok(Variant::CEmbedding),
            "trans-coref" => Ok(Variant::TransCoref),
            "trans-enc" => Ok(Variant::TransEnc),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// 0 means "take it from the vocabulary".
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_mt: f64,
    pub label_smoothing: f64,
    pub alpha: f64,
    pub beta: f64,
    pub window: usize,
    pub top_lambda: f64,
    pub max_span_len: usize,
    pub max_clusters: usize,
    pub dropout_coref: f64,
    /// Also apply coreference dropout inside the fused/extra layer.
    pub coref_dropout_fused: bool,
    pub coref_hidden: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub num_merges: usize,
    pub beam: usize,
    pub length_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Small model that trains in seconds on a laptop.
    pub fn desk() -> Self {
        ModelConfig {
            variant: Variant::TransCoref,
            d_model: 32,
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            ffn_dim: 64,
            vocab_size: 0,
            max_len: 128,
            dropout_mt: 0.1,
            label_smoothing: 0.1,
            alpha: 2.0,
            beta: 0.0,
            window: 4,
            top_lambda: 0.4,
            max_span_len: 10,
            max_clusters: 8,
            dropout_coref: 0.3,
            coref_dropout_fused: false,
            coref_hidden: 32,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            warmup_steps: 400,
            epochs: 40,
            batch_size: 32,
            patience: 5,
            seed: 1,
            num_merges: 1000,
            beam: 8,
            length_norm: false,
        }
    }

    /// Published En-Ru setting on a base-size Transformer.
    pub fn wmt_en_ru() -> Self {
        ModelConfig {
            d_model: 512,
            enc_layers: 6,
            dec_layers: 6,
            heads: 8,
            ffn_dim: 2048,
            max_len: 512,
            dropout_mt: 0.1,
            coref_hidden: 512,
            lr: 7e-5,
            warmup_steps: 4000,
            batch_size: 128,
            max_clusters: 8,
            num_merges: 32000,
            ..ModelConfig::desk()
        }
    }

    /// Published En-De setting.
    pub fn wmt_en_de() -> Self {
        ModelConfig {
            batch_size: 32,
            max_clusters: 20,
            ..ModelConfig::wmt_en_ru()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "wmt-en-ru" => Ok(Self::wmt_en_ru()),
            "wmt-en-de" => Ok(Self::wmt_en_de()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if !(self.top_lambda > 0.0 && self.top_lambda <= 1.0) {
            return fail(format!("top_lambda {} must lie in (0, 1]", self.top_lambda));
        }
        for (name, p) in [
            ("dropout_mt", self.dropout_mt),
            ("dropout_coref", self.dropout_coref),
            ("label_smoothing", self.label_smoothing),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} must lie in [0, 1]"));
            }
        }
        if self.dropout_mt >= 1.0 || self.dropout_coref >= 1.0 {
            return fail("dropout must be below 1".into());
        }
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha {} must be non-negative", self.alpha));
        }
        if self.window == 0 {
            return fail("window must be at least 1".into());
        }
        if self.max_span_len == 0 || self.max_len == 0 || self.ffn_dim == 0 || self.coref_hidden == 0 {
            return fail("max_span_len, max_len, ffn_dim and coref_hidden must be positive".into());
        }
        if self.batch_size == 0 || self.beam == 0 {
            return fail("batch_size and beam must be positive".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("lr must be positive and Adam betas in [0, 1)".into());
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "d_model" => self.d_model = p(key, value)?,
            "enc_layers" => self.enc_layers = p(key, value)?,
            "dec_layers" => self.dec_layers = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "ffn_dim" => self.ffn_dim = p(key, value)?,
            "vocab_size" => self.vocab_size = p(key, value)?,
            "max_len" => self.max_len = p(key, value)?,
            "dropout_mt" => self.dropout_mt = p(key, value)?,
            "label_smoothing" => self.label_smoothing = p(key, value)?,
            "alpha" => self.alpha = p(key, value)?,
            "beta" => self.beta = p(key, value)?,
            "window" => self.window = p(key, value)?,
            "top_lambda" => self.top_lambda = p(key, value)?,
            "max_span_len" => self.max_span_len = p(key, value)?,
            "max_clusters" => self.max_clusters = p(key, value)?,
            "dropout_coref" => self.dropout_coref = p(key, value)?,
            "coref_dropout_fused" => self.coref_dropout_fused = p(key, value)?,
            "coref_hidden" => self.coref_hidden = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "adam_beta1" => self.adam_beta1 = p(key, value)?,
            "adam_beta2" => self.adam_beta2 = p(key, value)?,
            "adam_eps" => self.adam_eps = p(key, value)?,
            "warmup_steps" => self.warmup_steps = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "num_merges" => self.num_merges = p(key, value)?,
            "beam" => self.beam = p(key, value)?,
            "length_norm" => self.length_norm = p(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment; a
    /// `preset = <name>` line must come first if present.
    pub fn apply_kv(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                self = ModelConfig::preset(v)?;
            } else {
                self.set(k, v)
                    .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
            }
        }
        Ok(self)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = ModelConfig::desk().apply_kv(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("variant", self.variant.to_string()),
            ("d_model", self.d_model.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_len", self.max_len.to_string()),
            ("dropout_mt", self.dropout_mt.to_string()),
            ("label_smoothing", self.label_smoothing.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("window", self.window.to_string()),
            ("top_lambda", self.top_lambda.to_string()),
            ("max_span_len", self.max_span_len.to_string()),
            ("max_clusters", self.max_clusters.to_string()),
            ("dropout_coref", self.dropout_coref.to_string()),
            ("coref_dropout_fused", self.coref_dropout_fused.to_string()),
            ("coref_hidden", self.coref_hidden.to_string()),
            ("lr", self.lr.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("num_merges", self.num_merges.to_string()),
            ("beam", self.beam.to_string()),
            ("length_norm", self.length_norm.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Architecture fields that must agree between a config and a checkpoint.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        let mut diffs = Vec::new();
        macro_rules! cmp {
            ($($f:ident),*) => {$(
                if self.$f != other.$f {
                    diffs.push(format!("{} {} vs {}", stringify!($f), self.$f, other.$f));
                }
            )*};
        }
        cmp!(variant, d_model, enc_layers, dec_layers, heads, ffn_dim, coref_hidden);
        if self.vocab_size != 0 && other.vocab_size != 0 && self.vocab_size != other.vocab_size {
            diffs.push(format!("vocab_size {} vs {}", self.vocab_size, other.vocab_size));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(diffs.join(", ")))
        }
    }
}

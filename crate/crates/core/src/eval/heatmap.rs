//! Attention heat maps as dense text grids.
//!
//! ```text
//! # size 6 layer enc.1 model trans-coref
//! 0.25 0.1 ...
//! ```

use std::fs;
use std::path::Path;

use crate::corpus::CorefClusterSet;
use crate::model::{EncodedWindow, Model};
use crate::nn::Tensor;
use crate::{coref, Error, Result};

fn mean(heads: &[Tensor]) -> Tensor {
    let mut acc = heads[0].clone();
    for h in &heads[1..] {
        acc.add_assign(h);
    }
    acc.scale_assign(1.0 / heads.len() as f64);
    acc
}

/// Head-averaged self-attention of the last encoder layer, `|x| × |x|`.
pub fn attention_heatmap(model: &Model, src: &[usize], clusters: &CorefClusterSet) -> Result<Tensor> {
    let layers = model.encoder_attention(src, clusters)?;
    let last = layers
        .last()
        .ok_or_else(|| Error::InvalidArgument("model has no encoder layers".into()))?;
    Ok(mean(last))
}

/// Head-averaged self-attention of the coreference layer.
pub fn coref_heatmap(model: &Model, w: &EncodedWindow) -> Result<Tensor> {
    Ok(mean(&coref::coref_attention(model, w)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub layer: String,
    pub model: String,
    pub values: Tensor,
}

pub fn write_heatmap(path: &Path, map: &Heatmap) -> Result<()> {
    let n = map.values.rows();
    let mut out = format!("# size {n} layer {} model {}\n", map.layer, map.model);
    for r in 0..n {
        let row: Vec<String> = map.values.row(r).iter().map(f64::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_heatmap(path: &Path) -> Result<Heatmap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, reason: &str| Error::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| err(1, "missing header"))?.split_whitespace().collect();
    if header.len() != 7 || header[0] != "#" || header[1] != "size" || header[3] != "layer" || header[5] != "model" {
        return Err(err(1, "expected `# size N layer L model M`"));
    }
    let n: usize = header[2].parse().map_err(|_| err(1, "bad size"))?;
    let mut data = Vec::with_capacity(n * n);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(i + 2, "bad number"))?;
        if row.len() != n {
            return Err(err(i + 2, "row length differs from size"));
        }
        data.extend(row);
    }
    if data.len() != n * n {
        return Err(err(n + 1, "wrong number of rows"));
    }
    Ok(Heatmap {
        layer: header[4].to_string(),
        model: header[6].to_string(),
        values: Tensor::from_vec(n, n, data),
    })
}

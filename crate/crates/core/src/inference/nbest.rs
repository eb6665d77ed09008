//! N-best file format: one hypothesis per line,
//! `window_id <TAB> rank <TAB> lp_mt <TAB> lp_coref <TAB> tokens`,
//! with `-` for a missing coreference score. Ranks start at 0 and lines of a
//! window are contiguous.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Hypothesis, NBestList, RankKey};
use crate::{Error, Result};

pub fn write_nbest(path: &Path, lists: &[NBestList]) -> Result<()> {
    let mut s = String::new();
    for l in lists {
        for (rank, h) in l.hypotheses.iter().enumerate() {
            let coref = h.lp_coref.map_or_else(|| "-".to_string(), |c| c.to_string());
            writeln!(s, "{}\t{}\t{}\t{}\t{}", l.window_id, rank, h.lp_mt, coref, h.tokens.join(" ")).unwrap();
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads lists in file order. `beam` is set to the list length.
pub fn read_nbest(path: &Path) -> Result<Vec<NBestList>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, reason: String| Error::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut lists: Vec<NBestList> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.splitn(5, '\t').collect();
        if f.len() != 5 {
            return Err(err(n, format!("expected 5 tab-separated fields, got {}", f.len())));
        }
        let window_id: usize = f[0].parse().map_err(|_| err(n, format!("bad window id `{}`", f[0])))?;
        let rank: usize = f[1].parse().map_err(|_| err(n, format!("bad rank `{}`", f[1])))?;
        let lp_mt: f64 = f[2].parse().map_err(|_| err(n, format!("bad lp_mt `{}`", f[2])))?;
        let lp_coref = match f[3] {
            "-" => None,
            v => Some(v.parse::<f64>().map_err(|_| err(n, format!("bad lp_coref `{v}`")))?),
        };
        let hyp = Hypothesis {
            tokens: f[4].split_whitespace().map(String::from).collect(),
            lp_mt,
            lp_coref,
            joint: lp_mt,
        };
        match lists.last_mut() {
            Some(l) if l.window_id == window_id && rank == l.hypotheses.len() => l.hypotheses.push(hyp),
            _ if rank == 0 => lists.push(NBestList {
                window_id,
                beam: 0,
                key: RankKey::Mt,
                beta: 0.0,
                hypotheses: vec![hyp],
            }),
            _ => return Err(err(n, format!("rank {rank} out of sequence for window {window_id}"))),
        }
    }
    for l in &mut lists {
        l.beam = l.hypotheses.len();
    }
    Ok(lists)
}

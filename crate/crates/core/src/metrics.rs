//! Evaluation against the zero-ablation baseline, plus the Pearson
//! correlation used to relate model scores to benchmark results.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DataItem, ItemSource};
use crate::sae::{reconstruction_loss, zero_baseline, SaeModel};
use crate::{Error, Result};

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_l0: f64,
    pub mean_l1: f64,
    pub mean_recon: f64,
    pub mean_zero_baseline: f64,
    pub token_count: u64,
    pub model_id: String,
    pub shard_ids: Vec<String>,
}

/// Denominator of the reconstruction averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconAveraging {
    /// Sum over each item's tokens, then mean over items.
    #[default]
    PerItem,
    /// Mean over all tokens, for comparing corpora with different item lengths.
    PerToken,
}

#[derive(Debug, Default, Clone, Copy)]
struct ItemStats {
    tokens: u64,
    active: u64,
    l1: f64,
    recon: f64,
    zero: f64,
}

fn item_stats(item: &DataItem, model: &SaeModel<f32>) -> Result<ItemStats> {
    let h = item.hidden_matrix(model.m())?;
    let z = model.encode(h.view())?;
    let h_hat = model.decode(z.view())?;
    Ok(ItemStats {
        tokens: h.nrows() as u64,
        active: z.iter().filter(|&&v| v > 0.0).count() as u64,
        l1: z.iter().map(|&v| v as f64).sum(),
        recon: reconstruction_loss(h.view(), h_hat.view())?,
        zero: zero_baseline(h.view()),
    })
}

/// Streams every item once and averages L0, L1, reconstruction loss and
/// the zero baseline. Items are scored in parallel and reduced in input
/// order, so the result does not depend on the thread count.
pub fn evaluate(
    source: &dyn ItemSource,
    model: &SaeModel<f32>,
    averaging: ReconAveraging,
) -> Result<EvalReport> {
    let mut total = ItemStats::default();
    let mut items = 0u64;
    let mut chunk = Vec::with_capacity(EVAL_CHUNK);
    let mut flush = |chunk: &mut Vec<DataItem>| -> Result<()> {
        let stats: Vec<Result<ItemStats>> =
            chunk.par_iter().map(|it| item_stats(it, model)).collect();
        for s in stats {
            let s = s?;
            total.tokens += s.tokens;
            total.active += s.active;
            total.l1 += s.l1;
            total.recon += s.recon;
            total.zero += s.zero;
            items += 1;
        }
        chunk.clear();
        Ok(())
    };
    for item in source.items()? {
        chunk.push(item?);
        if chunk.len() == EVAL_CHUNK {
            flush(&mut chunk)?;
        }
    }
    flush(&mut chunk)?;

    if total.tokens == 0 {
        return Err(Error::EmptyInput("evaluation corpus has no tokens"));
    }
    let tokens = total.tokens as f64;
    let recon_denominator = match averaging {
        ReconAveraging::PerItem => items as f64,
        ReconAveraging::PerToken => tokens,
    };
    Ok(EvalReport {
        mean_l0: total.active as f64 / tokens,
        mean_l1: total.l1 / tokens,
        mean_recon: total.recon / recon_denominator,
        mean_zero_baseline: total.zero / recon_denominator,
        token_count: total.tokens,
        model_id: model.fingerprint(),
        shard_ids: source.source_ids(),
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dim("pearson inputs", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson needs at least two pairs".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "pearson inputs must be finite".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson input has zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Reads an `id,score` CSV. A first row whose score does not parse is
/// treated as a header.
pub fn read_score_table(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!(
                "{}: row {} has {} columns, expected id,score",
                path.display(),
                i + 1,
                rec.len()
            )));
        }
        match rec[1].parse::<f64>() {
            Ok(v) => rows.push((rec[0].to_string(), v)),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Format(format!(
                    "{}: row {}: score {:?} is not a number",
                    path.display(),
                    i + 1,
                    &rec[1]
                )))
            }
        }
    }
    Ok(rows)
}

/// Pearson correlation of two score tables joined on id, in the order of `xs`.
/// Ids missing from `ys` are skipped.
pub fn correlate_tables(xs: &[(String, f64)], ys: &[(String, f64)]) -> Result<(f64, usize)> {
    let lookup: HashMap<&str, f64> = ys.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let (a, b): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .filter_map(|(id, x)| lookup.get(id.as_str()).map(|y| (*x, *y)))
        .unzip();
    let r = pearson(&a, &b)?;
    Ok((r, a.len()))
}

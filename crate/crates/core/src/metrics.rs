//! Success, diversity and novelty of generated molecules.

use std::io::Write;

use serde::Serialize;

use crate::chemgraph::MolGraph;
use crate::error::{Error, Result};
use crate::fingerprint::{default_fingerprint, tanimoto, BitFingerprint};
use crate::forest::Property;

/// Nearest-neighbour similarity below which a molecule counts as novel.
pub const NOVELTY_CUTOFF: f64 = 0.4;

/// Whether `g` meets every constraint.
pub fn is_positive<P: Property>(g: &MolGraph, props: &[P]) -> bool {
    props.iter().all(|p| p.passes(g))
}

/// Fraction of `samples` meeting every constraint.
pub fn success_rate<P: Property>(samples: &[MolGraph], props: &[P]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let hits = samples.iter().filter(|g| is_positive(g, props)).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// `1 − 2/(n(n−1)) Σ sim(X, Y)` over unordered pairs; `None` below two
/// molecules.
pub fn diversity(fps: &[BitFingerprint]) -> Result<Option<f64>> {
    let n = fps.len();
    if n < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += tanimoto(&fps[i], &fps[j])?;
        }
    }
    Ok(Some(1.0 - 2.0 * total / (n * (n - 1)) as f64))
}

/// Largest similarity of `fp` to any reference fingerprint.
pub fn nearest_similarity(fp: &BitFingerprint, reference: &[BitFingerprint]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for r in reference {
        best = best.max(tanimoto(fp, r)?);
    }
    Ok(best)
}

/// Fraction of `fps` whose nearest reference neighbour has similarity
/// strictly below [`NOVELTY_CUTOFF`].
pub fn novelty(fps: &[BitFingerprint], reference: &[BitFingerprint]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("novelty reference set".into()));
    }
    if fps.is_empty() {
        return Err(Error::Empty("no molecules to score for novelty".into()));
    }
    let mut novel = 0;
    for fp in fps {
        if nearest_similarity(fp, reference)? < NOVELTY_CUTOFF {
            novel += 1;
        }
    }
    Ok(novel as f64 / fps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyRate {
    pub name: String,
    pub rate: f64,
}

/// Batch evaluation. Diversity and novelty are over positive samples; the
/// `_all` variants use every sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub positives: usize,
    pub success: f64,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
    pub property_rates: Vec<PropertyRate>,
    pub diversity_all: Option<f64>,
    pub novelty_all: Option<f64>,
}

pub fn evaluate<P: Property>(
    samples: &[MolGraph],
    props: &[P],
    train_positives: &[BitFingerprint],
) -> Result<EvalReport> {
    let success = success_rate(samples, props)?;
    let fps: Vec<BitFingerprint> = samples.iter().map(default_fingerprint).collect();
    let pos: Vec<BitFingerprint> = samples
        .iter()
        .zip(&fps)
        .filter(|(g, _)| is_positive(g, props))
        .map(|(_, f)| f.clone())
        .collect();
    let nov = |set: &[BitFingerprint]| -> Result<Option<f64>> {
        if set.is_empty() || train_positives.is_empty() {
            Ok(None)
        } else {
            novelty(set, train_positives).map(Some)
        }
    };
    let property_rates = props
        .iter()
        .map(|p| PropertyRate {
            name: p.name().to_string(),
            rate: samples.iter().filter(|g| p.passes(g)).count() as f64 / samples.len() as f64,
        })
        .collect();
    Ok(EvalReport {
        n: samples.len(),
        positives: pos.len(),
        success,
        diversity: diversity(&pos)?,
        novelty: nov(&pos)?,
        property_rates,
        diversity_all: diversity(&fps)?,
        novelty_all: nov(&fps)?,
    })
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl EvalReport {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["n", "positives", "success", "diversity", "novelty"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(
            self.property_rates
                .iter()
                .map(|r| format!("rate_{}", r.name)),
        );
        h.extend(["diversity_all".to_string(), "novelty_all".to_string()]);
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.n.to_string(),
            self.positives.to_string(),
            format!("{:.6}", self.success),
            cell(self.diversity),
            cell(self.novelty),
        ];
        r.extend(self.property_rates.iter().map(|p| format!("{:.6}", p.rate)));
        r.extend([cell(self.diversity_all), cell(self.novelty_all)]);
        r
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())
            .and_then(|_| out.write_record(self.csv_row()))
            .map_err(|e| Error::Format(e.to_string()))?;
        out.flush()?;
        Ok(())
    }

    /// Fixed-width text table.
    pub fn table(&self) -> String {
        let (h, r) = (self.csv_header(), self.csv_row());
        let w = h.iter().map(String::len).max().unwrap_or(0);
        h.iter()
            .zip(&r)
            .map(|(k, v)| format!("{k:<w$}  {}\n", if v.is_empty() { "-" } else { v }))
            .collect()
    }
}

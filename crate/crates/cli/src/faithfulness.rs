//! How well extracted rationales recover a known ground-truth motif.

use ratgen::chemgraph::{canonical_key, subgraph_matches, MatchMode, MolGraph};
use ratgen::rationale::Rationale;
use serde::Serialize;

use crate::error::CliResult;

/// Occurrences of the motif inspected per molecule.
const OCCURRENCE_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRecord {
    pub smiles: String,
    pub rationale: Option<String>,
    pub exact: bool,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaithfulnessReport {
    pub property: String,
    pub motif: String,
    pub molecules: usize,
    pub exact_match: f64,
    pub coverage: f64,
}

/// Exact match is isomorphism with the motif. Coverage is the largest
/// fraction of any motif occurrence in `source` lying inside the
/// rationale's source atoms.
pub fn rationale_match(
    source: &MolGraph,
    rationale: Option<&Rationale>,
    motif: &MolGraph,
) -> CliResult<(bool, f64)> {
    let Some(r) = rationale else {
        return Ok((false, 0.0));
    };
    let exact = canonical_key(r.graph()) == canonical_key(motif);
    let occurrences = subgraph_matches(source, motif, MatchMode::Monomorphism, OCCURRENCE_LIMIT)?;
    let covered = occurrences
        .iter()
        .map(|occ| occ.iter().filter(|a| r.source_atoms.contains(a)).count())
        .max()
        .unwrap_or(0);
    Ok((exact, covered as f64 / motif.atom_count() as f64))
}

pub fn summarize(property: &str, motif: &str, records: &[MatchRecord]) -> FaithfulnessReport {
    let n = records.len().max(1) as f64;
    FaithfulnessReport {
        property: property.to_string(),
        motif: motif.to_string(),
        molecules: records.len(),
        exact_match: records.iter().filter(|r| r.exact).count() as f64 / n,
        coverage: records.iter().map(|r| r.coverage).sum::<f64>() / n,
    }
}

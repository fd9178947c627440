//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratgen::chemgraph::{parse_smiles, MolGraph};
use ratgen::synth::{random_molecule, GrowParams};

pub const DRUGLIKE: &[&str] = &[
    "CC(=O)Nc1ccc(O)cc1",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "O=C(O)c1ccccc1OC(=O)C",
    "CC(=O)Nc1ccc(OCC(=O)NCc2ccccc2)cc1",
];

pub fn druglike() -> Vec<MolGraph> {
    DRUGLIKE.iter().map(|s| parse_smiles(s).unwrap()).collect()
}

/// Reproducible random molecules of 8 to `max_atoms` atoms.
pub fn corpus(n: usize, max_atoms: usize, seed: u64) -> Vec<MolGraph> {
    let params = GrowParams {
        max_atoms,
        ..GrowParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_molecule(&[], &params, &mut rng).unwrap())
        .collect()
}

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratgen::chemgraph::{
    apply_deletion, canonical_key, contains_subgraph, peripheral_deletions, Element, MolGraph,
};
use ratgen::extract::{extract_rationales, ExtractParams, SearchTree};
use ratgen::forest::Property;
use ratgen::hashing::derive_seed;
use ratgen::synth::{random_molecule, GrowParams};

fn molecule(seed: u64, min_atoms: usize, max_atoms: usize) -> MolGraph {
    let params = GrowParams {
        min_atoms,
        max_atoms,
        ..GrowParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_molecule(&[], &params, &mut rng).unwrap()
}

/// Heteroatom fraction plus a small structure-keyed jitter.
struct Hetero;

impl Property for Hetero {
    fn name(&self) -> &str {
        "hetero"
    }
    fn threshold(&self) -> f64 {
        0.3
    }
    fn score(&self, g: &MolGraph) -> f64 {
        let het = g.atoms().iter().filter(|a| a.element != Element::C).count();
        let jitter = derive_seed(0, &[canonical_key(g).len() as u64, g.bond_count() as u64]) % 1000;
        0.9 * het as f64 / g.atom_count() as f64 + 1e-4 * jitter as f64
    }
}

/// Best leaf score over every state reachable by deletion sequences.
fn exhaustive_best<P: Property>(g: &MolGraph, prop: &P, floor: usize) -> f64 {
    let mut seen = BTreeSet::new();
    let mut stack = vec![g.clone()];
    let mut best = f64::NEG_INFINITY;
    while let Some(s) = stack.pop() {
        if !seen.insert(canonical_key(&s)) {
            continue;
        }
        let dels = peripheral_deletions(&s).unwrap();
        if s.atom_count() < floor || dels.is_empty() {
            best = best.max(prop.score(&s));
            continue;
        }
        for d in dels {
            stack.push(apply_deletion(&s, &d).unwrap());
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mcts_reaches_optimum_on_small_molecules(seed in any::<u64>()) {
        let g = molecule(seed, 6, 10);
        let floor = 4;
        let params = ExtractParams { iterations: 200, c_puct: 10.0, max_atoms: 20, rollout_floor: floor };
        let mut tree = SearchTree::new(&g, &Hetero, params).unwrap();
        tree.run().unwrap();
        let found = tree
            .nodes
            .iter()
            .filter(|n| n.graph.atom_count() < floor || n.actions.is_empty())
            .map(|n| n.score)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(found >= exhaustive_best(&g, &Hetero, floor) - 1e-9);
    }

    #[test]
    fn stats_stay_consistent(seed in any::<u64>(), iterations in 1usize..40) {
        let g = molecule(seed, 8, 16);
        let params = ExtractParams { iterations, c_puct: 10.0, max_atoms: 20, rollout_floor: 5 };
        let mut tree = SearchTree::new(&g, &Hetero, params).unwrap();
        tree.run().unwrap();
        for n in &tree.nodes {
            let total: u32 = n.stats.iter().map(|s| s.n).sum();
            prop_assert_eq!(total, n.passes);
        }
        let root_total: u32 = tree.nodes[0].stats.iter().map(|s| s.n).sum();
        let root_leaf = g.atom_count() < 5 || tree.nodes[0].actions.is_empty();
        prop_assert_eq!(root_total as usize, if root_leaf { 0 } else { iterations });
    }

    #[test]
    fn rationales_are_small_connected_positive_subgraphs(seed in any::<u64>()) {
        let g = molecule(seed, 10, 25);
        let params = ExtractParams { max_atoms: 8, rollout_floor: 6, ..ExtractParams::default() };
        let rs = extract_rationales(&g, &Hetero, &params).unwrap();
        let a = extract_rationales(&g, &Hetero, &params).unwrap();
        prop_assert_eq!(
            rs.iter().map(|r| r.key()).collect::<Vec<_>>(),
            a.iter().map(|r| r.key()).collect::<Vec<_>>()
        );
        for r in &rs {
            let s = r.graph();
            prop_assert!(s.is_connected() && s.atom_count() <= 8);
            prop_assert!(Hetero.score(s) >= Hetero.threshold());
            prop_assert_eq!(r.scores.clone(), BTreeMap::from([("hetero".to_string(), Hetero.score(s))]));
            prop_assert!(contains_subgraph(&g, s).unwrap().is_some());
        }
    }
}

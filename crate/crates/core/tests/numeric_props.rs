use proptest::collection::vec;
use proptest::prelude::*;
use ratgen::fingerprint::{tanimoto, BitFingerprint};
use ratgen::metrics::{diversity, novelty, NOVELTY_CUTOFF};
use ratgen::numsub::{ParamStore, Tape, Tensor};
use ratgen::train::closed_form_distribution;

mod common;
use common::*;

fn fps(bits: &[Vec<usize>]) -> Vec<BitFingerprint> {
    bits.iter()
        .map(|b| BitFingerprint::from_bits(64, b).unwrap())
        .collect()
}

fn bitsets() -> impl Strategy<Value = Vec<Vec<usize>>> {
    vec(vec(0usize..64, 1..12), 2..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(xs in vec(-30.0f64..30.0, 1..12), shift in -100.0f64..100.0) {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let n = xs.len();
        let a = tape.constant(Tensor::new(1, n, xs.clone()).unwrap());
        let b = tape.constant(Tensor::new(1, n, xs.iter().map(|x| x + shift).collect()).unwrap());
        let (sa, sb) = (tape.softmax(a), tape.softmax(b));
        prop_assert!((tape.value(sa).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let target = n / 2;
        let ca = tape.cross_entropy(a, &[target]).unwrap();
        let cb = tape.cross_entropy(b, &[target]).unwrap();
        prop_assert!((tape.value(ca).item() - tape.value(cb).item()).abs() < 1e-9);
        prop_assert_eq!(tape.value(a).data(), &xs[..]);
    }

    #[test]
    fn closed_form_maximizes_objective(est in vec(0.0f64..1.0, 3), lambda in 0.2f64..2.0) {
        let p = closed_form_distribution(&est, lambda).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
        let q = simplex_oracle(&est, lambda);
        let tv: f64 = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
        prop_assert!(tv < 1e-3, "tv {}", tv);
    }

    #[test]
    fn diversity_matches_pairwise_mean(bits in bitsets(), rot in 0usize..20) {
        let f = fps(&bits);
        let mut sims = Vec::new();
        for i in 0..f.len() {
            for j in 0..f.len() {
                if i < j {
                    sims.push(tanimoto(&f[i], &f[j]).unwrap());
                }
            }
        }
        let brute = 1.0 - sims.iter().sum::<f64>() / sims.len() as f64;
        let d = diversity(&f).unwrap().unwrap();
        prop_assert!((d - brute).abs() < 1e-12);
        let mut g = f.clone();
        g.rotate_left(rot % f.len());
        g.reverse();
        prop_assert!((diversity(&g).unwrap().unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn novelty_matches_nearest_neighbour_count(bits in bitsets(), refs in bitsets()) {
        let (f, r) = (fps(&bits), fps(&refs));
        let novel = f
            .iter()
            .filter(|x| r.iter().all(|y| tanimoto(x, y).unwrap() < NOVELTY_CUTOFF))
            .count();
        let v = novelty(&f, &r).unwrap();
        prop_assert_eq!(v, novel as f64 / f.len() as f64);
        let mut g = f.clone();
        g.reverse();
        prop_assert_eq!(novelty(&g, &r).unwrap(), v);
    }
}

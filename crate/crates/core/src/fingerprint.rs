//! Morgan (ECFP-style) circular fingerprints and Tanimoto similarity.
//!
//! Round 0 hashes each atom's invariant (element, degree, charge, aromatic
//! flag). Each later round folds the sorted `(bond order, neighbour hash)`
//! list into the atom's previous hash. Every environment hash of every round
//! sets bit `hash mod width`. Subgraph bit-monotonicity does not hold: removing
//! an atom changes its neighbours' degrees and therefore their hashes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chemgraph::MolGraph;
use crate::error::{Error, Result};
use crate::hashing::{mix, mix_all};

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_WIDTH: usize = 2048;
pub const MAX_RADIUS: usize = 4;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitFingerprint {
    width: usize,
    radius: usize,
    words: Vec<u64>,
}

impl fmt::Debug for BitFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BitFingerprint(w={}, r={}, on={:?})",
            self.width,
            self.radius,
            self.on_bits()
        )
    }
}

impl BitFingerprint {
    /// An empty fingerprint; `width` must be a positive power of two.
    pub fn new(width: usize, radius: usize) -> Result<BitFingerprint> {
        if width == 0 || !width.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "fingerprint width {width} is not a power of two"
            )));
        }
        Ok(BitFingerprint {
            width,
            radius,
            words: vec![0; width.div_ceil(64)],
        })
    }

    pub fn from_bits(width: usize, bits: &[usize]) -> Result<BitFingerprint> {
        let mut fp = BitFingerprint::new(width, 0)?;
        for &b in bits {
            if b >= width {
                return Err(Error::InvalidArgument(format!("bit {b} >= width {width}")));
            }
            fp.set(b);
        }
        Ok(fp)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    #[inline]
    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn on_bits(&self) -> Vec<usize> {
        (0..self.width).filter(|&b| self.get(b)).collect()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Lowercase hex, most significant word first.
    pub fn to_hex(&self) -> String {
        self.words
            .iter()
            .rev()
            .map(|w| format!("{w:016x}"))
            .collect()
    }

    pub fn from_hex(hex: &str, width: usize, radius: usize) -> Result<BitFingerprint> {
        let mut fp = BitFingerprint::new(width, radius)?;
        let n = fp.words.len();
        if hex.len() != n * 16 {
            return Err(Error::Format(format!(
                "expected {} hex digits for width {width}, got {}",
                n * 16,
                hex.len()
            )));
        }
        for (k, chunk) in hex.as_bytes().chunks(16).enumerate() {
            let s = std::str::from_utf8(chunk).map_err(|e| Error::Format(e.to_string()))?;
            let w = u64::from_str_radix(s, 16).map_err(|e| Error::Format(e.to_string()))?;
            fp.words[n - 1 - k] = w;
        }
        if width < 64 && fp.words[0] >> width != 0 {
            return Err(Error::Format("bits set beyond width".into()));
        }
        Ok(fp)
    }
}

/// Round-0 environment hash of one atom.
pub fn atom_invariant_hash(g: &MolGraph, atom: usize) -> u64 {
    let a = g.atom(atom);
    mix_all(&[
        a.element.atomic_number() as u64,
        g.degree(atom) as u64,
        (a.charge as i64 + 128) as u64,
        a.aromatic as u64,
    ])
}

/// Environment hashes per round: `out[r][atom]`.
pub fn environment_hashes(g: &MolGraph, radius: usize) -> Vec<Vec<u64>> {
    let n = g.atom_count();
    let mut rounds = Vec::with_capacity(radius + 1);
    rounds.push(
        (0..n)
            .map(|i| atom_invariant_hash(g, i))
            .collect::<Vec<u64>>(),
    );
    for r in 1..=radius {
        let prev = &rounds[r - 1];
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u64, u64)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(v, b)| (g.bond(b).order.code(), prev[v]))
                    .collect();
                nb.sort_unstable();
                let mut acc = mix_all(&[r as u64, prev[i]]);
                for (o, h) in nb {
                    acc = mix(acc ^ mix_all(&[o, h]));
                }
                acc
            })
            .collect();
        rounds.push(next);
    }
    rounds
}

pub fn morgan_fingerprint(g: &MolGraph, radius: usize, width: usize) -> Result<BitFingerprint> {
    if radius > MAX_RADIUS {
        return Err(Error::InvalidArgument(format!(
            "radius {radius} exceeds {MAX_RADIUS}"
        )));
    }
    let mut fp = BitFingerprint::new(width, radius)?;
    for round in environment_hashes(g, radius) {
        for h in round {
            fp.set((h % width as u64) as usize);
        }
    }
    Ok(fp)
}

/// Fingerprint with the defaults used throughout (radius 2, 2048 bits).
pub fn default_fingerprint(g: &MolGraph) -> BitFingerprint {
    morgan_fingerprint(g, DEFAULT_RADIUS, DEFAULT_WIDTH).expect("default parameters are valid")
}

/// `|a ∧ b| / |a ∨ b|`, with 1.0 for two empty fingerprints.
pub fn tanimoto(a: &BitFingerprint, b: &BitFingerprint) -> Result<f64> {
    if a.width != b.width {
        return Err(Error::WidthMismatch(a.width, b.width));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / either as f64)
}

//! Synthetic compound-target datasets with a learnable affinity signal.
//!
//! Compounds are drug-like SMILES assembled from ring scaffolds and
//! substituents; targets are random short sequences. The affinity is a
//! smooth function of simple compound descriptors (heteroatom and aromatic
//! counts) weighted by the target's residue-class composition, plus noise.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InteractionRecord;
use crate::features::AMINO_ACIDS;
use crate::smiles::{parse_smiles, Element};

const SCAFFOLDS: [&str; 10] = [
    "c1cc({0})ccc1{1}",
    "c1cc({0})ncc1{1}",
    "C1CC({0})CCN1{1}",
    "c1ccc2cc({0})ccc2c1{1}",
    "c1cnc2ccc({0})cc2n1",
    "O=C(N{0})c1ccc({1})cc1",
    "c1csc({0})c1{1}",
    "C1CCC({0})CC1{1}",
    "c1ccc(-c2ccncc2)cc1{0}",
    "Nc1ncnc2c1cc({0})n2{1}",
];

const SUBSTITUENTS: [&str; 14] = [
    "", "C", "O", "N", "F", "Cl", "Br", "C(=O)O", "OC", "C#N", "CC", "N(C)C", "S(=O)(=O)N", "c1ccccc1",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub compounds: usize,
    pub targets: usize,
    /// Number of distinct pairs; capped at `compounds * targets`.
    pub pairs: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            compounds: 40,
            targets: 12,
            pairs: 500,
            noise: 0.05,
            seed: 0,
        }
    }
}

fn fill_slot(template: &str, slot: &str, sub: &str) -> String {
    if sub.is_empty() {
        template.replace(&format!("({slot})"), "").replace(slot, "")
    } else {
        template.replace(slot, sub)
    }
}

pub fn random_smiles<R: Rng>(rng: &mut R) -> String {
    let mut s = SCAFFOLDS.choose(rng).expect("non-empty").to_string();
    for slot in ["{0}", "{1}"] {
        let sub = SUBSTITUENTS.choose(rng).expect("non-empty");
        s = fill_slot(&s, slot, sub);
    }
    s
}

pub fn random_sequence<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| *AMINO_ACIDS.choose(rng).expect("non-empty") as char).collect()
}

/// Compound descriptors the affinity depends on.
fn compound_descriptors(smiles: &str) -> [f64; 5] {
    let g = parse_smiles(smiles).expect("generated SMILES parse");
    let mut d = [0.0; 5];
    for a in g.atoms() {
        match a.element {
            Element::N => d[0] += 1.0,
            Element::O => d[1] += 1.0,
            Element::F | Element::Cl | Element::Br | Element::I => d[2] += 1.0,
            _ => {}
        }
        if a.aromatic {
            d[3] += 1.0 / 6.0;
        }
    }
    d[4] = g.atom_count() as f64 / 10.0;
    d
}

/// Residue-class fractions: hydrophobic, charged, polar, aromatic.
fn target_profile(seq: &str) -> [f64; 4] {
    let n = seq.len() as f64;
    let frac = |set: &str| seq.chars().filter(|c| set.contains(*c)).count() as f64 / n;
    [frac("AILMFVW"), frac("DEKR"), frac("STNQ"), frac("FWYH")]
}

/// Noise-free affinity of a compound-target pair.
pub fn affinity(smiles: &str, sequence: &str) -> f64 {
    let c = compound_descriptors(smiles);
    let t = target_profile(sequence);
    let w = [
        2.0 * t[0] - 0.4,
        2.5 * t[1] - 0.5,
        2.0 * t[2] - 0.3,
        3.0 * t[3] - 0.4,
        1.5 * t[0] - 0.2,
    ];
    let interaction: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
    6.0 + 0.6 * interaction + 0.3 * c[4] + 2.0 * (t[0] - 0.35)
}

/// Draws `pairs` distinct compound-target pairs with affinities.
pub fn generate(cfg: &SyntheticConfig) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut smiles_seen = HashSet::new();
    let mut compounds = Vec::with_capacity(cfg.compounds);
    let mut attempts = 0;
    while compounds.len() < cfg.compounds {
        let s = random_smiles(&mut rng);
        attempts += 1;
        if smiles_seen.insert(s.clone()) || attempts > 50 * cfg.compounds {
            compounds.push(s);
        }
    }
    let targets: Vec<String> = (0..cfg.targets)
        .map(|_| {
            let len = rng.gen_range(24..=45);
            random_sequence(&mut rng, len)
        })
        .collect();

    let mut all: Vec<(usize, usize)> = (0..cfg.compounds)
        .flat_map(|c| (0..cfg.targets).map(move |t| (c, t)))
        .collect();
    all.shuffle(&mut rng);
    all.truncate(cfg.pairs);
    all.sort_unstable();
    all.into_iter()
        .map(|(c, t)| {
            let noise = if cfg.noise > 0.0 {
                rng.gen_range(-cfg.noise..cfg.noise)
            } else {
                0.0
            };
            InteractionRecord {
                compound_id: format!("CMPD{c:04}"),
                smiles: compounds[c].clone(),
                target_id: format!("TGT{t:03}"),
                sequence: targets[t].clone(),
                affinity: affinity(&compounds[c], &targets[t]) + noise,
            }
        })
        .collect()
}

//! Shared fixtures for the benchmarks.

use jova_core::model::random_features;
use jova_core::{FeatureSet, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DRUGS: [&str; 6] = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)[C@@H](C)C(=O)O",
    "Cc1cccc(c1)Nc1nccc(-c2cccnc2)n1",
    "COc1cc2ncnc(Nc3ccc(F)c(Cl)c3)c2cc1OCCCN1CCOCC1",
    "CN1CCN(Cc2ccc(cc2)C(=O)Nc2ccc(C)c(Nc3nccc(-c4cccnc4)n3)c2)CC1",
];

pub const SEQUENCE: &str = "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQAPILSRVGDGTQDNLSGAEKAVQVKVKALPDAQFEVVHSLAKWKRQTLGQHDFSAGEGLYTHMKALRPDEDRLSPLHSVYVDQWDWERVMGDGERQFSTLKSTVEAIWAGIKATEAAVSEEFGLAPFLPDQIHFVHSQELLSRYPDLDAKGRERAIAKDLGAVFLVGIGGKLSDGHRHDVRAPDYDDWAIGGNGESFFVEWW";

/// Random feature sets with realistic segment counts: 20-40 atoms and
/// 60-90 sequence windows.
pub fn random_batch(config: &ModelConfig, n: usize, seed: u64) -> Vec<FeatureSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| random_features(config, &mut rng, 20 + i % 21, 60 + i % 31))
        .collect()
}

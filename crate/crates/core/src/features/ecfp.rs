use std::collections::{BTreeSet, HashSet};

use super::{SegmentMatrix, SegmentOrigin, ViewKind};
use crate::hash::Fnv1a32;
use crate::smiles::{canonical_invariants, MolecularGraph};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Environment {
    atoms: Vec<u64>,
    bonds: Vec<u64>,
}

impl Environment {
    fn empty(n_atoms: usize, n_bonds: usize) -> Self {
        Self {
            atoms: vec![0; n_atoms.div_ceil(64)],
            bonds: vec![0; n_bonds.div_ceil(64).max(1)],
        }
    }

    fn set_atom(&mut self, i: usize) {
        self.atoms[i / 64] |= 1 << (i % 64);
    }

    fn set_bond(&mut self, i: usize) {
        self.bonds[i / 64] |= 1 << (i % 64);
    }

    fn union(&mut self, other: &Environment) {
        for (a, b) in self.atoms.iter_mut().zip(&other.atoms) {
            *a |= b;
        }
        for (a, b) in self.bonds.iter_mut().zip(&other.bonds) {
            *a |= b;
        }
    }
}

/// Surviving Morgan identifiers of `graph` up to `radius`, sorted and unique.
///
/// Identifiers whose environment (covered atoms and bonds) repeats one seen
/// at an earlier radius are dropped; within a radius, identical environments
/// keep only the smallest identifier.
pub fn ecfp_bits(graph: &MolecularGraph, radius: usize) -> Vec<u32> {
    let n = graph.atom_count();
    let nb = graph.bonds().len();
    let mut ids = canonical_invariants(graph);
    let mut envs: Vec<Environment> = (0..n)
        .map(|i| {
            let mut e = Environment::empty(n, nb);
            e.set_atom(i);
            e
        })
        .collect();

    let mut seen: HashSet<Environment> = envs.iter().cloned().collect();
    let mut out: BTreeSet<u32> = ids.iter().copied().collect();

    for round in 1..=radius {
        let mut next_ids = Vec::with_capacity(n);
        let mut next_envs = Vec::with_capacity(n);
        for atom in 0..n {
            let mut pairs: Vec<(u8, u32)> = graph
                .incident(atom)
                .iter()
                .map(|&(nbr, bi)| (graph.bonds()[bi].order.code(), ids[nbr]))
                .collect();
            pairs.sort_unstable();

            let mut h = Fnv1a32::new();
            h.write_u32(round as u32).write_u32(ids[atom]);
            for (code, id) in &pairs {
                h.write(&[*code]).write_u32(*id);
            }
            next_ids.push(h.finish());

            let mut env = envs[atom].clone();
            for &(nbr, bi) in graph.incident(atom) {
                env.union(&envs[nbr]);
                env.set_bond(bi);
            }
            next_envs.push(env);
        }

        let mut candidates: Vec<(&Environment, u32)> =
            next_envs.iter().zip(next_ids.iter().copied()).collect();
        candidates.sort_unstable();
        candidates.dedup_by(|b, a| a.0 == b.0);
        for (env, id) in candidates {
            if seen.insert(env.clone()) {
                out.insert(id);
            }
        }

        ids = next_ids;
        envs = next_envs;
    }
    out.into_iter().collect()
}

/// Folded circular fingerprint as a `1 x nbits` binary view.
pub fn ecfp(graph: &MolecularGraph, radius: usize, nbits: usize) -> SegmentMatrix {
    let mut data = vec![0.0f64; nbits];
    for id in ecfp_bits(graph, radius) {
        data[id as usize % nbits] = 1.0;
    }
    SegmentMatrix::new(
        ViewKind::CompoundFingerprint,
        1,
        nbits,
        data,
        vec![SegmentOrigin::Whole],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn set_bits(smiles: &str, radius: usize, nbits: usize) -> usize {
        let fp = ecfp(&parse_smiles(smiles).unwrap(), radius, nbits);
        fp.data.iter().filter(|&&b| b == 1.0).count()
    }

    #[test]
    fn ethanol_radius_zero_has_three_environments() {
        assert_eq!(set_bits("CCO", 0, 2048), 3);
    }

    #[test]
    fn methane_has_one_environment_at_every_radius() {
        assert_eq!(set_bits("C", 4, 1024), 1);
        assert_eq!(ecfp_bits(&parse_smiles("C").unwrap(), 4).len(), 1);
    }

    #[test]
    fn ethanol_identifier_enumeration() {
        // radius 0: CH3, CH2, OH
        // radius 1: C-C, C(-C)-O, O-C; the middle one already spans the
        //           whole molecule
        // radius 2+: every environment repeats the middle radius-1 one
        let ids = ecfp_bits(&parse_smiles("CCO").unwrap(), 4);
        assert_eq!(ids.len(), 3 + 3);
    }

    #[test]
    fn respelling_gives_identical_bits() {
        let a = ecfp(&parse_smiles("CCO").unwrap(), 4, 2048);
        let b = ecfp(&parse_smiles("OCC").unwrap(), 4, 2048);
        assert_eq!(a, b);
        let a = ecfp(&parse_smiles("c1ccccc1O").unwrap(), 4, 2048);
        let b = ecfp(&parse_smiles("Oc1ccccc1").unwrap(), 4, 2048);
        assert_eq!(a, b);
    }

    #[test]
    fn folding_is_binary() {
        let fp = ecfp(&parse_smiles("CC(=O)Nc1ccc(O)cc1").unwrap(), 4, 64);
        assert!(fp.data.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(fp.rows, 1);
        assert_eq!(fp.origins, vec![SegmentOrigin::Whole]);
    }
}

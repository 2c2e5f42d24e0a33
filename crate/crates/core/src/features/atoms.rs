use super::{SegmentMatrix, SegmentOrigin, ViewKind};
use crate::smiles::{Element, MolecularGraph};

const DEGREE_SLOTS: usize = 6;
const HYDROGEN_SLOTS: usize = 5;

/// Element one-hot, degree one-hot (0-5), hydrogen one-hot (0-4), aromatic
/// flag, formal charge.
pub const ATOM_FEATURE_DIM: usize = Element::ALL.len() + DEGREE_SLOTS + HYDROGEN_SLOTS + 2;

/// Per-atom feature rows; row `i` describes atom `i`. The bond list is kept
/// as row edges for message passing.
pub fn atom_features(graph: &MolecularGraph) -> SegmentMatrix {
    let n = graph.atom_count();
    let mut data = vec![0.0f64; n * ATOM_FEATURE_DIM];
    for (i, atom) in graph.atoms().iter().enumerate() {
        let row = &mut data[i * ATOM_FEATURE_DIM..(i + 1) * ATOM_FEATURE_DIM];
        let mut offset = 0;
        row[offset + atom.element.index()] = 1.0;
        offset += Element::ALL.len();
        row[offset + usize::from(atom.degree).min(DEGREE_SLOTS - 1)] = 1.0;
        offset += DEGREE_SLOTS;
        row[offset + usize::from(atom.implicit_h).min(HYDROGEN_SLOTS - 1)] = 1.0;
        offset += HYDROGEN_SLOTS;
        row[offset] = f64::from(u8::from(atom.aromatic));
        row[offset + 1] = f64::from(atom.formal_charge);
    }
    let mut m = SegmentMatrix::new(
        ViewKind::CompoundGraph,
        n,
        ATOM_FEATURE_DIM,
        data,
        (0..n).map(SegmentOrigin::Atom).collect(),
    );
    m.edges = graph
        .bonds()
        .iter()
        .map(|b| (b.a as u32, b.b as u32))
        .collect();
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    const AROMATIC: usize = 10 + 6 + 5;

    #[test]
    fn ethanol_rows() {
        let m = atom_features(&parse_smiles("CCO").unwrap());
        assert_eq!(m.rows, 3);
        assert_eq!(m.dim, 23);
        let o = m.row(2);
        assert_eq!(o[Element::O.index()], 1.0);
        assert_eq!(o[AROMATIC], 0.0);
        assert_eq!(m.origins[2], SegmentOrigin::Atom(2));
    }

    #[test]
    fn benzene_rows_are_identical() {
        let m = atom_features(&parse_smiles("c1ccccc1").unwrap());
        assert_eq!(m.rows, 6);
        for i in 1..6 {
            assert_eq!(m.row(i), m.row(0));
        }
        assert_eq!(m.row(0)[AROMATIC], 1.0);
    }

    #[test]
    fn benzene_and_cyclohexane_differ_in_aromaticity_and_hydrogens() {
        let a = atom_features(&parse_smiles("c1ccccc1").unwrap());
        let b = atom_features(&parse_smiles("C1CCCCC1").unwrap());
        let hydrogen = 10 + 6..10 + 6 + 5;
        let differing: Vec<usize> = (0..a.dim).filter(|&k| a.row(0)[k] != b.row(0)[k]).collect();
        assert!(!differing.is_empty());
        assert!(differing
            .iter()
            .all(|k| *k == AROMATIC || hydrogen.contains(k)));
        // benzene CH, cyclohexane CH2
        assert_eq!(a.row(0)[10 + 6 + 1], 1.0);
        assert_eq!(b.row(0)[10 + 6 + 2], 1.0);
    }

    #[test]
    fn one_hot_blocks_have_one_entry() {
        let m = atom_features(&parse_smiles("CC(=O)Nc1ccc(O)cc1[N+](=O)[O-]").unwrap());
        for i in 0..m.rows {
            let r = m.row(i);
            for block in [0..10, 10..16, 16..21] {
                assert_eq!(r[block].iter().sum::<f64>(), 1.0);
            }
        }
    }
}

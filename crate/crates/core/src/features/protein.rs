use super::{FeatureError, SegmentMatrix, SegmentOrigin, ViewKind};

/// The 20 standard residues in alphabetical one-letter order; a residue's
/// position here is its integer code.
pub const AMINO_ACIDS: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

/// 20 + 20^2 + 20^3 composition slots.
pub const PSC_DIM: usize = 20 + 400 + 8000;

pub fn residue_code(residue: u8) -> Option<usize> {
    AMINO_ACIDS.iter().position(|&a| a == residue)
}

fn encode(seq: &str) -> Result<Vec<usize>, FeatureError> {
    seq.chars()
        .enumerate()
        .map(|(position, residue)| {
            u8::try_from(residue)
                .ok()
                .and_then(residue_code)
                .ok_or(FeatureError::InvalidResidue { residue, position })
        })
        .collect()
}

/// Protein sequence composition: normalized 1-, 2- and 3-mer counts in
/// lexicographic slot order. Each block sums to one.
pub fn psc(seq: &str) -> Result<SegmentMatrix, FeatureError> {
    let codes = encode(seq)?;
    if codes.len() < 3 {
        return Err(FeatureError::SequenceTooShort {
            len: codes.len(),
            min: 3,
        });
    }
    let mut counts = vec![0u32; PSC_DIM];
    for (i, &c) in codes.iter().enumerate() {
        counts[c] += 1;
        if i + 1 < codes.len() {
            counts[20 + c * 20 + codes[i + 1]] += 1;
        }
        if i + 2 < codes.len() {
            counts[420 + c * 400 + codes[i + 1] * 20 + codes[i + 2]] += 1;
        }
    }
    let n = codes.len();
    let mut data = vec![0.0f64; PSC_DIM];
    for (range, total) in [(0..20, n), (20..420, n - 1), (420..PSC_DIM, n - 2)] {
        let total = total as f64;
        for k in range {
            data[k] = f64::from(counts[k]) / total;
        }
    }
    Ok(SegmentMatrix::new(
        ViewKind::TargetComposition,
        1,
        PSC_DIM,
        data,
        vec![SegmentOrigin::Whole],
    ))
}

/// Integer-coded residue windows of length `n`. Windows start every
/// `stride` residues; when the stride does not tile the sequence the final
/// window is right-aligned to the sequence end. The stride may not exceed
/// `n`, otherwise residues between windows would be dropped.
pub fn ngram_segments(seq: &str, n: usize, stride: usize) -> Result<SegmentMatrix, FeatureError> {
    if n == 0 || stride == 0 || stride > n {
        return Err(FeatureError::InvalidSetting(format!(
            "n-gram stride {stride} must be in 1..={n}"
        )));
    }
    let codes = encode(seq)?;
    let len = codes.len();
    if len < n {
        return Err(FeatureError::SequenceTooShort { len, min: n });
    }
    let rows = (len - n).div_ceil(stride) + 1;
    let mut data = Vec::with_capacity(rows * n);
    let mut origins = Vec::with_capacity(rows);
    for r in 0..rows {
        let start = (r * stride).min(len - n);
        data.extend(codes[start..start + n].iter().map(|&c| c as f64));
        origins.push(SegmentOrigin::Residues {
            start,
            end: start + n,
        });
    }
    Ok(SegmentMatrix::new(ViewKind::TargetNgram, rows, n, data, origins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slot2(a: u8, b: u8) -> usize {
        20 + residue_code(a).unwrap() * 20 + residue_code(b).unwrap()
    }

    #[test]
    fn psc_dimension() {
        assert_eq!(PSC_DIM, 8420);
        assert_eq!(psc("ACDEFGH").unwrap().dim, 8420);
    }

    #[test]
    fn psc_single_kmer() {
        let m = psc("AAA").unwrap();
        assert_eq!(m.data[0], 1.0);
        assert_eq!(m.data[20], 1.0);
        assert_eq!(m.data[420], 1.0);
        assert_eq!(m.data.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn psc_hand_count() {
        let m = psc("ACA").unwrap();
        assert!((m.data[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.data[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.data[slot2(b'A', b'C')], 0.5);
        assert_eq!(m.data[slot2(b'C', b'A')], 0.5);
        // ACA is the only 3-mer
        assert_eq!(m.data[420 + 20], 1.0);
    }

    #[test]
    fn psc_errors() {
        assert!(matches!(
            psc("AXA"),
            Err(FeatureError::InvalidResidue { residue: 'X', position: 1 })
        ));
        assert!(matches!(
            psc("AC"),
            Err(FeatureError::SequenceTooShort { len: 2, min: 3 })
        ));
    }

    #[test]
    fn ngram_exact_tiling() {
        let m = ngram_segments("ACDEFGHIK", 3, 3).unwrap();
        assert_eq!(m.rows, 3);
        let ranges: Vec<_> = m.origins.clone();
        assert_eq!(
            ranges,
            vec![
                SegmentOrigin::Residues { start: 0, end: 3 },
                SegmentOrigin::Residues { start: 3, end: 6 },
                SegmentOrigin::Residues { start: 6, end: 9 },
            ]
        );
    }

    #[test]
    fn ngram_right_aligned_remainder() {
        let m = ngram_segments("ACDEFGHIKL", 3, 3).unwrap();
        assert_eq!(m.rows, 4);
        assert_eq!(m.origins[3], SegmentOrigin::Residues { start: 7, end: 10 });
    }

    #[test]
    fn ngram_single_window_codes() {
        let m = ngram_segments("ACD", 3, 3).unwrap();
        assert_eq!(m.rows, 1);
        assert_eq!(m.data, vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            ngram_segments("AC", 3, 3),
            Err(FeatureError::SequenceTooShort { .. })
        ));
        assert!(matches!(
            ngram_segments("ACDEFG", 2, 3),
            Err(FeatureError::InvalidSetting(_))
        ));
    }

    fn sequence() -> impl Strategy<Value = String> {
        proptest::collection::vec(0usize..20, 3..120)
            .prop_map(|v| v.into_iter().map(|i| AMINO_ACIDS[i] as char).collect())
    }

    proptest! {
        #[test]
        fn psc_blocks_sum_to_one(seq in sequence()) {
            let m = psc(&seq).unwrap();
            for block in [0..20, 20..420, 420..PSC_DIM] {
                let s: f64 = m.data[block].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            prop_assert!(m.data.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn ngram_windows_cover_sequence(seq in sequence(), n in 1usize..6, s in 0usize..6) {
            prop_assume!(seq.len() >= n);
            let stride = s % n + 1;
            let m = ngram_segments(&seq, n, stride).unwrap();
            let mut covered = vec![false; seq.len()];
            for origin in &m.origins {
                let SegmentOrigin::Residues { start, end } = *origin else { panic!() };
                prop_assert_eq!(end - start, n);
                covered[start..end].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
            prop_assert_eq!(m.rows, (seq.len() - n).div_ceil(stride) + 1);
        }
    }
}

use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::{SegmentOrigin, ViewKind};

/// Norm used to score segment vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    L2,
    L1,
}

impl FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(NormKind::L2),
            "l1" => Ok(NormKind::L1),
            other => Err(format!("unknown norm `{other}`")),
        }
    }
}

pub fn segment_norm(row: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::L1 => row.iter().map(|v| v.abs()).sum(),
    }
}

/// Indices of the `k` largest norms, largest first; equal norms keep the
/// lower index first. `k` is clamped to the number of rows.
pub fn rank_by_norm(norms: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..norms.len()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSegment {
    pub view: ViewKind,
    /// Row index within the view.
    pub segment: usize,
    pub origin: SegmentOrigin,
    pub norm: f64,
    /// 1-based.
    pub rank: usize,
}

/// Top segments of the compound and of the target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentExplanation {
    pub compound: Vec<RankedSegment>,
    pub target: Vec<RankedSegment>,
}

/// Ranks one sample's updated segments per entity. `rows` holds the sample's
/// real segment rows, `spans` the view ranges inside them and `origins` the
/// provenance of every row of each view (same order as `spans`).
pub fn explain_segments(
    rows: &[Vec<f64>],
    spans: &[(ViewKind, Range<usize>)],
    origins: &[&[SegmentOrigin]],
    k: usize,
    kind: NormKind,
) -> SegmentExplanation {
    let rank_entity = |compound: bool| {
        let mut cands: Vec<(ViewKind, usize, SegmentOrigin, f64)> = Vec::new();
        for ((view, range), origin) in spans.iter().zip(origins) {
            if view.is_compound() != compound {
                continue;
            }
            for (i, r) in range.clone().enumerate() {
                let o = origin.get(i).copied().unwrap_or(SegmentOrigin::Whole);
                cands.push((*view, i, o, segment_norm(&rows[r], kind)));
            }
        }
        let norms: Vec<f64> = cands.iter().map(|c| c.3).collect();
        rank_by_norm(&norms, k)
            .into_iter()
            .enumerate()
            .map(|(rank, i)| {
                let (view, segment, origin, norm) = cands[i];
                RankedSegment {
                    view,
                    segment,
                    origin,
                    norm,
                    rank: rank + 1,
                }
            })
            .collect()
    };
    SegmentExplanation {
        compound: rank_entity(true),
        target: rank_entity(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_by_descending_norm() {
        assert_eq!(rank_by_norm(&[3.0, 1.0, 2.0], 2), vec![0, 2]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(rank_by_norm(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn k_is_clamped() {
        assert_eq!(rank_by_norm(&[1.0, 2.0], 10), vec![1, 0]);
    }

    #[test]
    fn norms() {
        assert_eq!(segment_norm(&[3.0, -4.0], NormKind::L2), 5.0);
        assert_eq!(segment_norm(&[3.0, -4.0], NormKind::L1), 7.0);
        assert_eq!("L1".parse::<NormKind>().unwrap(), NormKind::L1);
    }

    #[test]
    fn entities_are_ranked_separately() {
        let rows = vec![vec![1.0], vec![5.0], vec![3.0], vec![9.0], vec![2.0]];
        let spans = vec![
            (ViewKind::CompoundGraph, 0..3),
            (ViewKind::TargetComposition, 3..4),
            (ViewKind::TargetNgram, 4..5),
        ];
        let atoms: Vec<_> = (0..3).map(SegmentOrigin::Atom).collect();
        let whole = [SegmentOrigin::Whole];
        let win = [SegmentOrigin::Residues { start: 0, end: 3 }];
        let e = explain_segments(&rows, &spans, &[&atoms, &whole, &win], 2, NormKind::L2);
        let atoms_ranked: Vec<_> = e.compound.iter().map(|s| s.origin).collect();
        assert_eq!(atoms_ranked, vec![SegmentOrigin::Atom(1), SegmentOrigin::Atom(2)]);
        assert_eq!(e.target[0].view, ViewKind::TargetComposition);
        assert_eq!(e.target[1].origin, SegmentOrigin::Residues { start: 0, end: 3 });
        assert_eq!(e.target.iter().map(|s| s.rank).collect::<Vec<_>>(), vec![1, 2]);
    }
}

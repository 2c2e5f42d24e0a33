//! Unimodal views of compounds and targets.
//!
//! Every view produces a [`SegmentMatrix`]: one row per segment (an atom, a
//! residue window, or the whole entity for vector views) plus provenance for
//! each row so that attention-updated segments can be traced back.

mod atoms;
mod ecfp;
mod protein;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{parse_smiles, MolecularGraph, SmilesError};

pub use atoms::{atom_features, ATOM_FEATURE_DIM};
pub use ecfp::{ecfp, ecfp_bits};
pub use protein::{ngram_segments, psc, residue_code, AMINO_ACIDS, PSC_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    CompoundFingerprint,
    CompoundGraph,
    TargetComposition,
    TargetNgram,
}

impl ViewKind {
    pub const ALL: [ViewKind; 4] = [
        ViewKind::CompoundFingerprint,
        ViewKind::CompoundGraph,
        ViewKind::TargetComposition,
        ViewKind::TargetNgram,
    ];

    pub fn is_compound(self) -> bool {
        matches!(self, ViewKind::CompoundFingerprint | ViewKind::CompoundGraph)
    }

    pub fn is_target(self) -> bool {
        !self.is_compound()
    }

    /// Short name used in manifests and parameter paths.
    pub fn name(self) -> &'static str {
        match self {
            ViewKind::CompoundFingerprint => "fingerprint",
            ViewKind::CompoundGraph => "graph",
            ViewKind::TargetComposition => "psc",
            ViewKind::TargetNgram => "ngram",
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ViewKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViewKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown view `{s}`"))
    }
}

/// Where a segment row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentOrigin {
    /// The row summarises the whole entity.
    Whole,
    Atom(usize),
    /// Half-open residue range `[start, end)`.
    Residues { start: usize, end: usize },
}

/// One view of one entity: `rows x dim` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatrix {
    pub view: ViewKind,
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub origins: Vec<SegmentOrigin>,
    /// Undirected edges between rows; only the graph view carries any.
    pub edges: Vec<(u32, u32)>,
}

impl SegmentMatrix {
    pub fn new(
        view: ViewKind,
        rows: usize,
        dim: usize,
        data: Vec<f64>,
        origins: Vec<SegmentOrigin>,
    ) -> Self {
        debug_assert_eq!(data.len(), rows * dim);
        debug_assert_eq!(origins.len(), rows);
        Self {
            view,
            rows,
            dim,
            data,
            origins,
            edges: Vec::new(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Per-row neighbour lists built from `edges`.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.rows];
        for &(a, b) in &self.edges {
            adj[a as usize].push(b as usize);
            adj[b as usize].push(a as usize);
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error("invalid residue `{residue}` at position {position}")]
    InvalidResidue { residue: char, position: usize },
    #[error("sequence of length {len} is shorter than the required {min}")]
    SequenceTooShort { len: usize, min: usize },
    #[error("invalid featurizer setting: {0}")]
    InvalidSetting(String),
}

/// Settings shared by featurization and the model input layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturizerConfig {
    pub ecfp_radius: usize,
    pub ecfp_bits: usize,
    pub ngram_len: usize,
    pub ngram_stride: usize,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            ecfp_radius: 4,
            ecfp_bits: 2048,
            ngram_len: 3,
            ngram_stride: 3,
        }
    }
}

impl FeaturizerConfig {
    /// Input width each view presents to the model.
    pub fn view_dim(&self, kind: ViewKind) -> usize {
        match kind {
            ViewKind::CompoundFingerprint => self.ecfp_bits,
            ViewKind::CompoundGraph => ATOM_FEATURE_DIM,
            ViewKind::TargetComposition => PSC_DIM,
            ViewKind::TargetNgram => self.ngram_len,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !self.ecfp_bits.is_power_of_two() {
            return Err(FeatureError::InvalidSetting(format!(
                "fingerprint length {} is not a power of two",
                self.ecfp_bits
            )));
        }
        if self.ngram_len == 0 || self.ngram_stride == 0 || self.ngram_stride > self.ngram_len {
            return Err(FeatureError::InvalidSetting(format!(
                "n-gram stride {} must be in 1..={}",
                self.ngram_stride, self.ngram_len
            )));
        }
        Ok(())
    }

    /// Featurizes one compound-target pair into the requested views.
    pub fn featurize(
        &self,
        smiles: &str,
        sequence: &str,
        views: &[ViewKind],
    ) -> Result<FeatureSet, FeatureError> {
        let compound = self.featurize_compound(smiles, views)?;
        let target = self.featurize_target(sequence, views)?;
        Ok(FeatureSet::assemble(views, compound, target))
    }

    /// The compound views among `views`, in order.
    pub fn featurize_compound(
        &self,
        smiles: &str,
        views: &[ViewKind],
    ) -> Result<Vec<SegmentMatrix>, FeatureError> {
        self.validate()?;
        if !views.iter().any(|v| v.is_compound()) {
            return Ok(Vec::new());
        }
        let graph = parse_smiles(smiles)?;
        Ok(views
            .iter()
            .filter(|v| v.is_compound())
            .map(|&v| self.compound_view(v, &graph))
            .collect())
    }

    /// The target views among `views`, in order.
    pub fn featurize_target(
        &self,
        sequence: &str,
        views: &[ViewKind],
    ) -> Result<Vec<SegmentMatrix>, FeatureError> {
        self.validate()?;
        views
            .iter()
            .filter(|v| v.is_target())
            .map(|&v| match v {
                ViewKind::TargetComposition => psc(sequence),
                _ => ngram_segments(sequence, self.ngram_len, self.ngram_stride),
            })
            .collect()
    }

    fn compound_view(&self, view: ViewKind, graph: &MolecularGraph) -> SegmentMatrix {
        match view {
            ViewKind::CompoundFingerprint => ecfp(graph, self.ecfp_radius, self.ecfp_bits),
            _ => atom_features(graph),
        }
    }
}

/// All views of one compound-target pair, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub views: Vec<SegmentMatrix>,
}

impl FeatureSet {
    /// Interleaves per-entity view lists back into `views` order.
    pub fn assemble(views: &[ViewKind], compound: Vec<SegmentMatrix>, target: Vec<SegmentMatrix>) -> Self {
        let mut c = compound.into_iter();
        let mut t = target.into_iter();
        let views = views
            .iter()
            .filter_map(|v| if v.is_compound() { c.next() } else { t.next() })
            .collect();
        Self { views }
    }

    pub fn get(&self, kind: ViewKind) -> Option<&SegmentMatrix> {
        self.views.iter().find(|v| v.view == kind)
    }

    /// Total number of segments over all views.
    pub fn segment_count(&self) -> usize {
        self.views.iter().map(|v| v.rows).sum()
    }
}

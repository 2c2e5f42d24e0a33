//! Interaction datasets, entity-count filtering, cross-validation splits and
//! the on-disk feature cache.

mod cache;
mod split;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheEntry, FeatureCache, RecordError, FEATURE_CACHE_MAGIC};
pub use split::{make_folds, make_folds_with, Fold, FoldSplit, Role, SplitScheme, NUM_FOLDS, VALIDATION_FRACTION};

pub const DATASET_HEADER: [&str; 5] = ["compound_id", "smiles", "target_id", "sequence", "affinity"];

/// One `<compound, target, affinity>` observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub compound_id: String,
    pub smiles: String,
    pub target_id: String,
    pub sequence: String,
    pub affinity: f64,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("expected header `{}`, found `{found}`", DATASET_HEADER.join(","))]
    BadHeader { found: String },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate pair ({compound_id}, {target_id}) at line {line}")]
    DuplicatePair {
        compound_id: String,
        target_id: String,
        line: u64,
    },
    #[error("no records left after filtering with threshold {threshold}")]
    EmptyAfterFilter { threshold: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(
        "warm split infeasible: these entities cannot appear in both training and test folds \
         (compounds: [{}], targets: [{}])",
        compounds.join(", "),
        targets.join(", ")
    )]
    InfeasibleWarmSplit {
        compounds: Vec<String>,
        targets: Vec<String>,
    },
    #[error("{scheme} split needs at least {needed} distinct {entity} ids, found {found}")]
    TooFewEntities {
        scheme: SplitScheme,
        entity: &'static str,
        found: usize,
        needed: usize,
    },
    #[error("malformed {what} file at line {line}: {reason}")]
    BadFile {
        what: &'static str,
        line: usize,
        reason: String,
    },
}

type Result<T> = std::result::Result<T, DataError>;

/// Optional transform applied to affinities while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AffinityTransform {
    #[default]
    Identity,
    /// `y' = -log10(y / 1e9)`, for dissociation constants given in nM.
    NegLog10Molar,
}

impl AffinityTransform {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            AffinityTransform::Identity => y,
            AffinityTransform::NegLog10Molar => -(y / 1e9).log10(),
        }
    }
}

impl FromStr for AffinityTransform {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" | "identity" => Ok(Self::Identity),
            "neglog10" | "pkd" => Ok(Self::NegLog10Molar),
            other => Err(format!("unknown affinity transform `{other}`")),
        }
    }
}

pub fn load_dataset(path: &Path, transform: AffinityTransform) -> Result<Vec<InteractionRecord>> {
    read_dataset(File::open(path)?, transform)
}

/// Parses dataset CSV. Every row must have five fields, a finite numeric
/// affinity and a `(compound_id, target_id)` pair not seen before.
pub fn read_dataset<R: Read>(reader: R, transform: AffinityTransform) -> Result<Vec<InteractionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(DataError::BadHeader { found: String::new() }),
    };
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != DATASET_HEADER {
        return Err(DataError::BadHeader { found: found.join(",") });
    }

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != DATASET_HEADER.len() {
            return Err(malformed(line, format!("expected 5 columns, found {}", row.len())));
        }
        let field = |i: usize| row[i].trim().to_string();
        let (compound_id, target_id) = (field(0), field(2));
        if compound_id.is_empty() || target_id.is_empty() {
            return Err(malformed(line, "empty id".into()));
        }
        let raw = field(4);
        let affinity = raw
            .parse::<f64>()
            .map(|y| transform.apply(y))
            .ok()
            .filter(|y| y.is_finite())
            .ok_or_else(|| malformed(line, format!("affinity `{raw}` is not a finite number")))?;
        if !seen.insert((compound_id.clone(), target_id.clone())) {
            return Err(DataError::DuplicatePair {
                compound_id,
                target_id,
                line,
            });
        }
        out.push(InteractionRecord {
            compound_id,
            smiles: field(1),
            target_id,
            sequence: field(3),
            affinity,
        });
    }
    Ok(out)
}

fn malformed(line: u64, reason: String) -> DataError {
    DataError::MalformedRow { line, reason }
}

pub fn write_dataset<W: Write>(writer: W, records: &[InteractionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| DataError::Io(io::Error::other(e));
    w.write_record(DATASET_HEADER).map_err(io_err)?;
    for r in records {
        w.write_record([
            r.compound_id.as_str(),
            &r.smiles,
            &r.target_id,
            &r.sequence,
            &r.affinity.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Repeatedly drops every compound and every target with at most
/// `threshold` records until no more records are removed.
pub fn filter_by_threshold(records: &[InteractionRecord], threshold: usize) -> Result<Vec<InteractionRecord>> {
    let mut current: Vec<InteractionRecord> = records.to_vec();
    loop {
        let mut compounds: HashMap<&str, usize> = HashMap::new();
        let mut targets: HashMap<&str, usize> = HashMap::new();
        for r in &current {
            *compounds.entry(&r.compound_id).or_default() += 1;
            *targets.entry(&r.target_id).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|r| compounds[r.compound_id.as_str()] > threshold && targets[r.target_id.as_str()] > threshold)
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut it = keep.into_iter();
        current.retain(|_| it.next().unwrap_or(false));
    }
    if current.is_empty() {
        return Err(DataError::EmptyAfterFilter { threshold });
    }
    Ok(current)
}

/// Distinct ids in first-appearance order.
pub(crate) fn distinct<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    ids.filter(|id| seen.insert(*id)).collect()
}

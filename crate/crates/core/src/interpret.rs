//! Segment-level explanations and ranked virtual screens.

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureSet, SegmentOrigin};
use crate::model::{explain_segments, Inference, JovaModel, ModelError, NormKind, RankedSegment};
use crate::tensor::Real;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("target could not be featurized: {0}")]
    Target(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sample {index} is outside a batch of {len}")]
    SampleOutOfRange { index: usize, len: usize },
    #[error("explanation line {line}: {source}")]
    BadRecord { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, InterpretError>;

/// Most influential compound and target segments for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub compound_id: String,
    pub target_id: String,
    pub predicted_affinity: f64,
    pub compound_topk: Vec<RankedSegment>,
    pub target_topk: Vec<RankedSegment>,
}

/// Builds the explanation of sample `index` of an inference over `batch`.
pub fn explanation_from_inference(
    inference: &Inference,
    batch: &[&FeatureSet],
    index: usize,
    ids: (&str, &str),
    k: usize,
    norm: NormKind,
) -> Result<Explanation> {
    let len = inference.predictions.len();
    if index >= len || index >= batch.len() {
        return Err(InterpretError::SampleOutOfRange { index, len });
    }
    let spans = &inference.view_spans[index];
    let origins: Vec<&[SegmentOrigin]> = spans
        .iter()
        .map(|(view, _)| batch[index].get(*view).map_or(&[][..], |m| m.origins.as_slice()))
        .collect();
    let ranked = explain_segments(&inference.segments[index], spans, &origins, k, norm);
    Ok(Explanation {
        compound_id: ids.0.to_string(),
        target_id: ids.1.to_string(),
        predicted_affinity: inference.predictions[index],
        compound_topk: ranked.compound,
        target_topk: ranked.target,
    })
}

/// Runs the model on one pair and ranks its top `k` segments per entity.
pub fn build_explanation<T: Real>(
    model: &JovaModel<T>,
    features: &FeatureSet,
    ids: (&str, &str),
    k: usize,
    norm: NormKind,
) -> Result<Explanation> {
    let inference = model.infer(&[features])?;
    explanation_from_inference(&inference, &[features], 0, ids, k, norm)
}

/// One JSON object per line.
pub fn write_explanations<W: Write>(mut w: W, explanations: &[Explanation]) -> io::Result<()> {
    for e in explanations {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_explanations<R: BufRead>(r: R) -> Result<Vec<Explanation>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|source| InterpretError::BadRecord { line: i + 1, source })?;
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScreenCompound {
    pub id: String,
    pub smiles: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenHit {
    /// 1-based.
    pub rank: usize,
    pub compound_id: String,
    pub score: f64,
    /// Score at or below the interaction threshold.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCompound {
    pub compound_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenReport {
    pub target_id: String,
    pub threshold: Option<f64>,
    pub hits: Vec<ScreenHit>,
    pub skipped: Vec<SkippedCompound>,
}

pub const SCREEN_HEADER: &str = "rank,compound_id,score,flag";

impl ScreenReport {
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(SCREEN_HEADER.split(','))?;
        for h in &self.hits {
            w.serialize((h.rank, &h.compound_id, h.score, h.flag))?;
        }
        w.flush()
    }
}

/// Scores every compound against one target and ranks them by ascending
/// score, lower meaning stronger binding. Compounds that fail to featurize
/// or predict are skipped and logged; equal scores keep input order.
pub fn screen<T: Real>(
    model: &JovaModel<T>,
    compounds: &[ScreenCompound],
    target: (&str, &str),
    threshold: Option<f64>,
) -> Result<ScreenReport> {
    let (target_id, sequence) = target;
    let cfg = model.config();
    let target_views = cfg.featurizer.featurize_target(sequence, &cfg.views)?;

    let scored: Vec<std::result::Result<f64, String>> = compounds
        .par_iter()
        .map(|c| {
            let compound = cfg
                .featurizer
                .featurize_compound(&c.smiles, &cfg.views)
                .map_err(|e| e.to_string())?;
            let set = FeatureSet::assemble(&cfg.views, compound, target_views.clone());
            model
                .predict(&[&set])
                .map(|p| p[0])
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (c, s) in compounds.iter().zip(scored) {
        match s {
            Ok(score) => ok.push((c.id.clone(), score)),
            Err(reason) => {
                log::warn!("skipping compound {}: {reason}", c.id);
                skipped.push(SkippedCompound {
                    compound_id: c.id.clone(),
                    reason,
                });
            }
        }
    }
    ok.sort_by(|a, b| a.1.total_cmp(&b.1));
    let hits = ok
        .into_iter()
        .enumerate()
        .map(|(i, (compound_id, score))| ScreenHit {
            rank: i + 1,
            compound_id,
            score,
            flag: threshold.is_some_and(|t| score <= t),
        })
        .collect();
    Ok(ScreenReport {
        target_id: target_id.to_string(),
        threshold,
        hits,
        skipped,
    })
}

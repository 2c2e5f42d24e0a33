//! `JOVA-FEAT v1`: featurized records in the same manifest-plus-arrays layout
//! as checkpoints. Entity views are stored once per compound or target id;
//! `record` lines tie pairs back to them.
//!
//! ```text
//! JOVA-FEAT v1
//! meta ecfp_bits=2048
//! entity kind=compound id=c1 views=2
//! view kind=fingerprint rows=1 dim=2048 dtype=f64 offset=0 origins=w edges=-
//! record compound=c1 target=t1
//! end
//! <little-endian f64 data>
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use rayon::prelude::*;

use super::{distinct, DataError, InteractionRecord};
use crate::features::{FeatureError, FeatureSet, FeaturizerConfig, SegmentMatrix, SegmentOrigin, ViewKind};
use crate::tensor::{escape, parse_fields, unescape};

pub const FEATURE_CACHE_MAGIC: &str = "JOVA-FEAT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub compound_id: String,
    pub target_id: String,
    pub features: FeatureSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub config: FeaturizerConfig,
    pub views: Vec<ViewKind>,
    pub entries: Vec<CacheEntry>,
}

/// Featurization failure of one record.
#[derive(Debug)]
pub struct RecordError {
    pub index: usize,
    pub id: String,
    pub error: FeatureError,
}

impl FeatureCache {
    /// Featurizes every distinct compound and target once (in parallel) and
    /// assembles per-record feature sets. Records whose compound or target
    /// cannot be featurized are returned separately.
    pub fn build(
        records: &[InteractionRecord],
        config: FeaturizerConfig,
        views: &[ViewKind],
    ) -> (Self, Vec<RecordError>) {
        let compounds: Vec<(&str, &str)> = {
            let ids = distinct(records.iter().map(|r| r.compound_id.as_str()));
            let smiles: HashMap<&str, &str> =
                records.iter().rev().map(|r| (r.compound_id.as_str(), r.smiles.as_str())).collect();
            ids.into_iter().map(|id| (id, smiles[id])).collect()
        };
        let targets: Vec<(&str, &str)> = {
            let ids = distinct(records.iter().map(|r| r.target_id.as_str()));
            let seqs: HashMap<&str, &str> =
                records.iter().rev().map(|r| (r.target_id.as_str(), r.sequence.as_str())).collect();
            ids.into_iter().map(|id| (id, seqs[id])).collect()
        };
        let c_feats: HashMap<&str, Result<Vec<SegmentMatrix>, FeatureError>> = compounds
            .par_iter()
            .map(|&(id, smi)| (id, config.featurize_compound(smi, views)))
            .collect();
        let t_feats: HashMap<&str, Result<Vec<SegmentMatrix>, FeatureError>> = targets
            .par_iter()
            .map(|&(id, seq)| (id, config.featurize_target(seq, views)))
            .collect();

        let mut entries = Vec::with_capacity(records.len());
        let mut errors = Vec::new();
        for (index, r) in records.iter().enumerate() {
            match (&c_feats[r.compound_id.as_str()], &t_feats[r.target_id.as_str()]) {
                (Ok(c), Ok(t)) => entries.push(CacheEntry {
                    compound_id: r.compound_id.clone(),
                    target_id: r.target_id.clone(),
                    features: FeatureSet::assemble(views, c.clone(), t.clone()),
                }),
                (Err(e), _) => errors.push(RecordError {
                    index,
                    id: r.compound_id.clone(),
                    error: e.clone(),
                }),
                (_, Err(e)) => errors.push(RecordError {
                    index,
                    id: r.target_id.clone(),
                    error: e.clone(),
                }),
            }
        }
        (
            Self {
                config,
                views: views.to_vec(),
                entries,
            },
            errors,
        )
    }

    /// Feature sets in record order.
    pub fn feature_sets(&self) -> Vec<&FeatureSet> {
        self.entries.iter().map(|e| &e.features).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::from(FEATURE_CACHE_MAGIC);
        head.push('\n');
        let c = &self.config;
        let views: Vec<&str> = self.views.iter().map(|v| v.name()).collect();
        for (k, v) in [
            ("ecfp_radius", c.ecfp_radius.to_string()),
            ("ecfp_bits", c.ecfp_bits.to_string()),
            ("ngram_len", c.ngram_len.to_string()),
            ("ngram_stride", c.ngram_stride.to_string()),
            ("views", views.join(",")),
        ] {
            head.push_str(&format!("meta {k}={v}\n"));
        }

        let mut data: Vec<u8> = Vec::new();
        let mut write_entity = |head: &mut String, kind: &str, id: &str, mats: Vec<&SegmentMatrix>| {
            head.push_str(&format!("entity kind={kind} id={} views={}\n", escape(id), mats.len()));
            for m in mats {
                head.push_str(&format!(
                    "view kind={} rows={} dim={} dtype=f64 offset={} origins={} edges={}\n",
                    m.view,
                    m.rows,
                    m.dim,
                    data.len(),
                    format_origins(&m.origins),
                    format_edges(&m.edges)
                ));
                for v in &m.data {
                    data.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        let mut done_c = HashMap::new();
        let mut done_t = HashMap::new();
        for e in &self.entries {
            if done_c.insert(e.compound_id.as_str(), ()).is_none() {
                let mats = e.features.views.iter().filter(|m| m.view.is_compound()).collect();
                write_entity(&mut head, "compound", &e.compound_id, mats);
            }
            if done_t.insert(e.target_id.as_str(), ()).is_none() {
                let mats = e.features.views.iter().filter(|m| m.view.is_target()).collect();
                write_entity(&mut head, "target", &e.target_id, mats);
            }
        }
        for e in &self.entries {
            head.push_str(&format!(
                "record compound={} target={}\n",
                escape(&e.compound_id),
                escape(&e.target_id)
            ));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let bad = |line: usize, reason: &str| DataError::BadFile {
            what: "feature cache",
            line,
            reason: reason.to_string(),
        };
        let mut cur = Cursor::new(bytes);
        let mut line = String::new();
        cur.read_line(&mut line)?;
        if line.trim_end() != FEATURE_CACHE_MAGIC {
            return Err(bad(1, "missing JOVA-FEAT v1 header"));
        }

        struct ViewSpec {
            kind: ViewKind,
            rows: usize,
            dim: usize,
            offset: usize,
            origins: Vec<SegmentOrigin>,
            edges: Vec<(u32, u32)>,
        }
        let mut meta = BTreeMap::new();
        // (is_compound, id) -> view specs
        let mut entities: HashMap<(bool, String), Vec<ViewSpec>> = HashMap::new();
        let mut current: Option<(bool, String)> = None;
        let mut records = Vec::new();
        let mut lineno = 1;
        loop {
            line.clear();
            lineno += 1;
            if cur.read_line(&mut line)? == 0 {
                return Err(bad(lineno, "missing end line"));
            }
            let l = line.trim_end_matches('\n');
            if l == "end" {
                break;
            }
            let (tag, rest) = l.split_once(' ').ok_or_else(|| bad(lineno, "unknown record"))?;
            let f = parse_fields(rest);
            let get = |k: &str| f.get(k).map(String::as_str).ok_or_else(|| bad(lineno, &format!("missing `{k}`")));
            let num = |k: &str| -> Result<usize, DataError> {
                get(k)?.parse().map_err(|_| bad(lineno, &format!("bad `{k}`")))
            };
            match tag {
                "meta" => {
                    let (k, v) = rest.split_once('=').ok_or_else(|| bad(lineno, "meta needs key=value"))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                "entity" => {
                    let compound = match get("kind")? {
                        "compound" => true,
                        "target" => false,
                        _ => return Err(bad(lineno, "entity kind must be compound or target")),
                    };
                    let key = (compound, unescape(get("id")?));
                    entities.insert(key.clone(), Vec::new());
                    current = Some(key);
                }
                "view" => {
                    let key = current.as_ref().ok_or_else(|| bad(lineno, "view outside entity"))?;
                    if get("dtype")? != "f64" {
                        return Err(bad(lineno, "only dtype=f64 is supported"));
                    }
                    let spec = ViewSpec {
                        kind: get("kind")?.parse().map_err(|e: String| bad(lineno, &e))?,
                        rows: num("rows")?,
                        dim: num("dim")?,
                        offset: num("offset")?,
                        origins: parse_origins(get("origins")?).ok_or_else(|| bad(lineno, "bad origins"))?,
                        edges: parse_edges(get("edges")?).ok_or_else(|| bad(lineno, "bad edges"))?,
                    };
                    if spec.origins.len() != spec.rows {
                        return Err(bad(lineno, "origin count does not match rows"));
                    }
                    entities.get_mut(key).unwrap().push(spec);
                }
                "record" => records.push((unescape(get("compound")?), unescape(get("target")?), lineno)),
                _ => return Err(bad(lineno, "unknown record")),
            }
        }
        let mut data = Vec::new();
        cur.read_to_end(&mut data)?;

        let meta_num = |k: &str| -> Result<usize, DataError> {
            meta.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(1, &format!("missing meta `{k}`")))
        };
        let config = FeaturizerConfig {
            ecfp_radius: meta_num("ecfp_radius")?,
            ecfp_bits: meta_num("ecfp_bits")?,
            ngram_len: meta_num("ngram_len")?,
            ngram_stride: meta_num("ngram_stride")?,
        };
        let views: Vec<ViewKind> = meta
            .get("views")
            .map(String::as_str)
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e: String| bad(1, &e)))
            .collect::<Result<_, _>>()?;

        let mut decoded: HashMap<(bool, String), Vec<SegmentMatrix>> = HashMap::new();
        for (key, specs) in entities {
            let mut mats = Vec::with_capacity(specs.len());
            for s in specs {
                let n = s.rows * s.dim;
                let raw = data
                    .get(s.offset..s.offset + n * 8)
                    .ok_or_else(|| bad(lineno, "array data is truncated"))?;
                let values = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                let mut m = SegmentMatrix::new(s.kind, s.rows, s.dim, values, s.origins);
                m.edges = s.edges;
                mats.push(m);
            }
            decoded.insert(key, mats);
        }
        let mut entries = Vec::with_capacity(records.len());
        for (compound_id, target_id, ln) in records {
            let c = decoded
                .get(&(true, compound_id.clone()))
                .ok_or_else(|| bad(ln, "record names an unknown compound"))?;
            let t = decoded
                .get(&(false, target_id.clone()))
                .ok_or_else(|| bad(ln, "record names an unknown target"))?;
            entries.push(CacheEntry {
                compound_id,
                target_id,
                features: FeatureSet::assemble(&views, c.clone(), t.clone()),
            });
        }
        Ok(Self { config, views, entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn format_origins(origins: &[SegmentOrigin]) -> String {
    origins
        .iter()
        .map(|o| match o {
            SegmentOrigin::Whole => "w".to_string(),
            SegmentOrigin::Atom(i) => format!("a{i}"),
            SegmentOrigin::Residues { start, end } => format!("r{start}-{end}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_origins(s: &str) -> Option<Vec<SegmentOrigin>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',')
        .map(|o| {
            if o == "w" {
                Some(SegmentOrigin::Whole)
            } else if let Some(i) = o.strip_prefix('a') {
                i.parse().ok().map(SegmentOrigin::Atom)
            } else {
                let (a, b) = o.strip_prefix('r')?.split_once('-')?;
                Some(SegmentOrigin::Residues {
                    start: a.parse().ok()?,
                    end: b.parse().ok()?,
                })
            }
        })
        .collect()
}

fn format_edges(edges: &[(u32, u32)]) -> String {
    if edges.is_empty() {
        return "-".into();
    }
    edges.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(",")
}

fn parse_edges(s: &str) -> Option<Vec<(u32, u32)>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split(',')
        .map(|e| {
            let (a, b) = e.split_once('-')?;
            Some((a.parse().ok()?, b.parse().ok()?))
        })
        .collect()
}

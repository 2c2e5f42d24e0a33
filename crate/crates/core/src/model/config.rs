use std::collections::BTreeMap;

use super::ModelError;
use crate::features::{FeaturizerConfig, ViewKind};

/// Architecture hyperparameters. The view list fixes both the input views and
/// their order in the joint representation and the combined input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub views: Vec<ViewKind>,
    pub featurizer: FeaturizerConfig,
    /// Shared latent width `l` of every projected segment.
    pub latent_dim: usize,
    pub num_heads: usize,
    /// Hidden width of the segment-wise feed-forward sub-layer.
    pub ffn_dim: usize,
    pub num_blocks: usize,
    pub head_hidden: Vec<usize>,
    /// Message-passing rounds of the graph encoder.
    pub graph_depth: usize,
    pub graph_hidden: usize,
    pub ngram_embed_dim: usize,
    pub rnn_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::jova1()
    }
}

impl ModelConfig {
    /// Fingerprint, graph, n-gram recurrence and composition views.
    pub fn jova1() -> Self {
        Self {
            views: vec![
                ViewKind::CompoundFingerprint,
                ViewKind::CompoundGraph,
                ViewKind::TargetNgram,
                ViewKind::TargetComposition,
            ],
            featurizer: FeaturizerConfig::default(),
            latent_dim: 64,
            num_heads: 4,
            ffn_dim: 256,
            num_blocks: 1,
            head_hidden: vec![128, 64],
            graph_depth: 2,
            graph_hidden: 64,
            ngram_embed_dim: 8,
            rnn_hidden: 32,
            seed: 0,
        }
    }

    /// Fingerprint, a deeper graph encoder and composition views.
    pub fn jova2() -> Self {
        Self {
            views: vec![
                ViewKind::CompoundFingerprint,
                ViewKind::CompoundGraph,
                ViewKind::TargetComposition,
            ],
            graph_depth: 3,
            ..Self::jova1()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "jova1" => Some(Self::jova1()),
            "jova2" => Some(Self::jova2()),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim / self.num_heads.max(1)
    }

    /// Width of the combined input vector, `J * l`.
    pub fn civ_dim(&self) -> usize {
        self.views.len() * self.latent_dim
    }

    pub fn view_dim(&self, view: ViewKind) -> usize {
        self.featurizer.view_dim(view)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.views.is_empty() {
            return bad("no views configured".into());
        }
        for (i, v) in self.views.iter().enumerate() {
            if self.views[..i].contains(v) {
                return bad(format!("view `{v}` listed twice"));
            }
        }
        if !self.views.iter().any(|v| v.is_compound()) {
            return bad("at least one compound view is required".into());
        }
        if !self.views.iter().any(|v| v.is_target()) {
            return bad("at least one target view is required".into());
        }
        if self.latent_dim == 0 || self.num_heads == 0 {
            return bad("latent_dim and num_heads must be positive".into());
        }
        if !self.latent_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "latent_dim {} is not divisible by num_heads {}",
                self.latent_dim, self.num_heads
            ));
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be positive".into());
        }
        let widths = [
            ("ffn_dim", self.ffn_dim),
            ("graph_hidden", self.graph_hidden),
            ("ngram_embed_dim", self.ngram_embed_dim),
            ("rnn_hidden", self.rnn_hidden),
        ];
        for (name, w) in widths {
            if w == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.head_hidden.contains(&0) {
            return bad("head_hidden widths must be positive".into());
        }
        self.featurizer
            .validate()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }

    /// Flat `key -> value` form, used for checkpoint metadata and config files.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let f = &self.featurizer;
        [
            ("views", self.views.iter().map(|v| v.name()).collect::<Vec<_>>().join(",")),
            ("latent_dim", self.latent_dim.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("num_blocks", self.num_blocks.to_string()),
            ("head_hidden", list(&self.head_hidden)),
            ("graph_depth", self.graph_depth.to_string()),
            ("graph_hidden", self.graph_hidden.to_string()),
            ("ngram_embed_dim", self.ngram_embed_dim.to_string()),
            ("rnn_hidden", self.rnn_hidden.to_string()),
            ("seed", self.seed.to_string()),
            ("ecfp_radius", f.ecfp_radius.to_string()),
            ("ecfp_bits", f.ecfp_bits.to_string()),
            ("ngram_len", f.ngram_len.to_string()),
            ("ngram_stride", f.ngram_stride.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Overrides fields of `self` with any recognised keys in `pairs`;
    /// unknown keys are returned so callers can route them elsewhere.
    pub fn apply_pairs<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Vec<&'a str>, ModelError> {
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            let num = || -> Result<usize, ModelError> {
                v.trim()
                    .parse()
                    .map_err(|_| ModelError::InvalidConfig(format!("`{k}` expects an integer, got `{v}`")))
            };
            match k {
                "views" => {
                    self.views = split_list(v)
                        .map(|s| s.parse().map_err(ModelError::InvalidConfig))
                        .collect::<Result<_, _>>()?;
                }
                "latent_dim" => self.latent_dim = num()?,
                "num_heads" => self.num_heads = num()?,
                "ffn_dim" => self.ffn_dim = num()?,
                "num_blocks" => self.num_blocks = num()?,
                "head_hidden" => {
                    self.head_hidden = split_list(v)
                        .map(|s| {
                            s.parse().map_err(|_| {
                                ModelError::InvalidConfig(format!("bad head width `{s}`"))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                }
                "graph_depth" => self.graph_depth = num()?,
                "graph_hidden" => self.graph_hidden = num()?,
                "ngram_embed_dim" => self.ngram_embed_dim = num()?,
                "rnn_hidden" => self.rnn_hidden = num()?,
                "seed" => self.seed = num()? as u64,
                "ecfp_radius" => self.featurizer.ecfp_radius = num()?,
                "ecfp_bits" => self.featurizer.ecfp_bits = num()?,
                "ngram_len" => self.featurizer.ngram_len = num()?,
                "ngram_stride" => self.featurizer.ngram_stride = num()?,
                other => unknown.push(other),
            }
        }
        Ok(unknown)
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ModelError> {
        let mut cfg = Self::jova1();
        cfg.apply_pairs(pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::jova1().validate().unwrap();
        ModelConfig::jova2().validate().unwrap();
        assert_eq!(ModelConfig::jova1().head_dim(), 16);
        assert_eq!(ModelConfig::jova2().civ_dim(), 3 * 64);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            latent_dim: 10,
            num_heads: 4,
            ..ModelConfig::jova1()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_single_entity_views() {
        let cfg = ModelConfig {
            views: vec![ViewKind::CompoundGraph, ViewKind::CompoundFingerprint],
            ..ModelConfig::jova1()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig::jova2();
        cfg.head_hidden = vec![7];
        cfg.seed = 99;
        let pairs = cfg.to_pairs();
        let back = ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
    }
}

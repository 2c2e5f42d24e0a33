//! Run configuration from a flat `key = value` file plus flag overrides.

use std::path::{Path, PathBuf};

use jova_core::data::AffinityTransform;
use jova_core::{ModelConfig, SplitScheme, TrainConfig};

use crate::error::{CliError, Result};

pub type Pairs = Vec<(String, String)>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Pairs> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Pairs> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_pairs(&text)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub schemes: Vec<SplitScheme>,
    pub seeds: Vec<u64>,
    pub threshold: Option<usize>,
    pub transform: AffinityTransform,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value `{v}` for `{key}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

impl RunConfig {
    /// Layers `flags` over `file` over the defaults. The `preset` key picks
    /// the base model before any other key is applied.
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        let mut merged: Vec<(String, String)> = Vec::new();
        for (k, v) in file.iter().chain(flags) {
            merged.retain(|(mk, _)| mk != k);
            merged.push((k.clone(), v.clone()));
        }
        let preset = merged
            .iter()
            .find(|(k, _)| k == "preset")
            .map_or("jova1", |(_, v)| v.as_str());
        let model = ModelConfig::preset(preset)
            .ok_or_else(|| CliError::Usage(format!("unknown preset `{preset}` (expected jova1 or jova2)")))?;

        let mut cfg = RunConfig {
            data: None,
            cache: None,
            schemes: vec![SplitScheme::Warm],
            seeds: vec![1],
            threshold: None,
            transform: AffinityTransform::Identity,
            model,
            train: TrainConfig::default(),
            out: PathBuf::from("runs"),
        };
        let rest = cfg
            .model
            .apply_pairs(merged.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for k in rest {
            let v = merged.iter().find(|(mk, _)| mk == k).map(|(_, v)| v.as_str()).unwrap_or_default();
            match k {
                "preset" => {}
                "data" => cfg.data = Some(PathBuf::from(v)),
                "cache" => cfg.cache = Some(PathBuf::from(v)),
                "out" => cfg.out = PathBuf::from(v),
                "scheme" => {
                    cfg.schemes = if v == "all" {
                        SplitScheme::ALL.to_vec()
                    } else {
                        v.split(',')
                            .map(|s| s.trim().parse().map_err(CliError::Usage))
                            .collect::<Result<_>>()?
                    }
                }
                "seeds" => cfg.seeds = list(k, v)?,
                "threshold" => cfg.threshold = if v == "none" { None } else { Some(parse(k, v)?) },
                "transform" => cfg.transform = v.parse().map_err(CliError::Usage)?,
                "lr" => cfg.train.adam.lr = parse(k, v)?,
                "beta1" => cfg.train.adam.beta1 = parse(k, v)?,
                "beta2" => cfg.train.adam.beta2 = parse(k, v)?,
                "eps" => cfg.train.adam.eps = parse(k, v)?,
                "batch_size" => cfg.train.batch_size = parse(k, v)?,
                "max_steps" => cfg.train.max_steps = parse(k, v)?,
                "patience" => cfg.train.patience = parse(k, v)?,
                "eval_every" => cfg.train.eval_every = parse(k, v)?,
                other => return Err(CliError::Usage(format!("unknown config key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        if self.schemes.is_empty() {
            return Err(CliError::Usage("at least one split scheme is required".into()));
        }
        if self.train.batch_size == 0 {
            return Err(CliError::Usage("batch_size must be positive".into()));
        }
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        match (&self.data, &self.cache) {
            (None, _) => Err(CliError::Usage("no dataset given (set `data` or pass --data)".into())),
            (Some(d), _) if !d.exists() => Err(CliError::Data(format!("dataset {} does not exist", d.display()))),
            (_, Some(c)) if !c.exists() => Err(CliError::Data(format!("feature cache {} does not exist", c.display()))),
            _ => Ok(()),
        }
    }

    /// Every effective setting, in the same format the file parser reads.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        if let Some(d) = &self.data {
            lines.push(format!("data = {}", d.display()));
        }
        if let Some(c) = &self.cache {
            lines.push(format!("cache = {}", c.display()));
        }
        let schemes: Vec<&str> = self.schemes.iter().map(|s| s.name()).collect();
        lines.push(format!("scheme = {}", schemes.join(",")));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        lines.push(format!("seeds = {}", seeds.join(",")));
        lines.push(format!(
            "threshold = {}",
            self.threshold.map_or("none".to_string(), |t| t.to_string())
        ));
        let transform = match self.transform {
            AffinityTransform::Identity => "none",
            AffinityTransform::NegLog10Molar => "neglog10",
        };
        lines.push(format!("transform = {transform}"));
        let t = &self.train;
        lines.push(format!("lr = {}", t.adam.lr));
        lines.push(format!("beta1 = {}", t.adam.beta1));
        lines.push(format!("beta2 = {}", t.adam.beta2));
        lines.push(format!("eps = {}", t.adam.eps));
        lines.push(format!("batch_size = {}", t.batch_size));
        lines.push(format!("max_steps = {}", t.max_steps));
        lines.push(format!("patience = {}", t.patience));
        lines.push(format!("eval_every = {}", t.eval_every));
        for (k, v) in self.model.to_pairs() {
            lines.push(format!("{k} = {v}"));
        }
        lines.push(format!("out = {}", self.out.display()));
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Pairs {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn with_data(mut p: Pairs) -> Pairs {
        p.insert(0, ("data".into(), "Cargo.toml".into()));
        p
    }

    #[test]
    fn comments_and_blank_lines() {
        let p = parse_pairs("# header\n\nlr = 0.01  # step size\nseeds=1,2\n").unwrap();
        assert_eq!(p, pairs(&[("lr", "0.01"), ("seeds", "1,2")]));
        assert!(matches!(parse_pairs("lr 0.01"), Err(CliError::Usage(_))));
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = with_data(pairs(&[("lr", "0.01"), ("latent_dim", "32"), ("max_steps", "7")]));
        let flags = pairs(&[("lr", "0.05")]);
        let cfg = RunConfig::resolve(&file, &flags).unwrap();
        assert_eq!(cfg.train.adam.lr, 0.05);
        assert_eq!(cfg.model.latent_dim, 32);
        assert_eq!(cfg.train.max_steps, 7);
        assert_eq!(cfg.train.patience, TrainConfig::default().patience);
    }

    #[test]
    fn preset_applies_before_overrides() {
        let file = with_data(pairs(&[("graph_depth", "5"), ("preset", "jova2")]));
        let cfg = RunConfig::resolve(&file, &[]).unwrap();
        assert_eq!(cfg.model.views, ModelConfig::jova2().views);
        assert_eq!(cfg.model.graph_depth, 5);
    }

    #[test]
    fn rejects_unknown_keys_and_empty_seeds() {
        let bad = with_data(pairs(&[("learning_rate", "0.1")]));
        assert!(matches!(RunConfig::resolve(&bad, &[]), Err(CliError::Usage(_))));
        let empty = with_data(pairs(&[("seeds", "")]));
        assert!(matches!(RunConfig::resolve(&empty, &[]), Err(CliError::Usage(_))));
    }

    #[test]
    fn text_form_round_trips() {
        let file = with_data(pairs(&[("scheme", "all"), ("seeds", "3,4"), ("threshold", "2"), ("preset", "jova2")]));
        let cfg = RunConfig::resolve(&file, &[]).unwrap();
        let again = RunConfig::resolve(&parse_pairs(&cfg.to_text()).unwrap(), &[]).unwrap();
        assert_eq!(again.to_text(), cfg.to_text());
        assert_eq!(again.model, cfg.model);
        assert_eq!(again.schemes, SplitScheme::ALL.to_vec());
    }
}

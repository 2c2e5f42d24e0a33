use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use jova_core::data::{self, AffinityTransform, Fold, RecordError};
use jova_core::interpret::{self, ScreenCompound};
use jova_core::metrics::{pearson, MetricsReport, MetricsRow};
use jova_core::tensor::write_checkpoint;
use jova_core::train::run_fold;
use jova_core::{Checkpoint, FeatureCache, FoldSplit, InteractionRecord, JovaModel, ModelConfig, NormKind, SplitScheme};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{read_pairs, Pairs, RunConfig};
use crate::error::{CliError, Result};
use crate::report::{self, PredictionRow};
use crate::DataArgs;

pub struct DataSource {
    pub path: PathBuf,
    pub transform: String,
    pub threshold: Option<usize>,
}

impl From<DataArgs> for DataSource {
    fn from(a: DataArgs) -> Self {
        Self {
            path: a.data,
            transform: a.transform,
            threshold: a.threshold,
        }
    }
}

impl DataSource {
    fn load(&self) -> Result<Vec<InteractionRecord>> {
        let transform: AffinityTransform = self.transform.parse().map_err(CliError::Usage)?;
        load_records(&self.path, transform, self.threshold)
    }
}

fn load_records(path: &Path, transform: AffinityTransform, threshold: Option<usize>) -> Result<Vec<InteractionRecord>> {
    let records = data::load_dataset(path, transform).map_err(|e| match e {
        data::DataError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })?;
    let records = match threshold {
        Some(t) => data::filter_by_threshold(&records, t)?,
        None => records,
    };
    info!("loaded {} records from {}", records.len(), path.display());
    Ok(records)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

/// File at `path`, or stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_model(path: &Path) -> Result<JovaModel<f32>> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    Ok(JovaModel::from_checkpoint(&ck)?)
}

fn warn_skipped(errors: &[RecordError]) {
    for e in errors {
        warn!("skipping record {} ({}): {}", e.index + 1, e.id, e.error);
    }
}

/// Featurizes `records` for `model`, dropping records that fail.
fn featurize_records(records: Vec<InteractionRecord>, model: &ModelConfig) -> Result<(Vec<InteractionRecord>, FeatureCache)> {
    let (cache, errors) = FeatureCache::build(&records, model.featurizer, &model.views);
    warn_skipped(&errors);
    let bad: HashSet<usize> = errors.iter().map(|e| e.index).collect();
    let kept: Vec<InteractionRecord> = records
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !bad.contains(i))
        .map(|(_, r)| r)
        .collect();
    if kept.is_empty() {
        return Err(CliError::Data("no record could be featurized".into()));
    }
    Ok((kept, cache))
}

/// Aligns a cache built earlier with the dataset; records the cache skipped
/// are dropped.
fn align_cache(records: Vec<InteractionRecord>, cache: FeatureCache, model: &ModelConfig) -> Result<(Vec<InteractionRecord>, FeatureCache)> {
    if cache.config != model.featurizer || cache.views != model.views {
        return Err(CliError::Data(
            "feature cache was built with different views or featurizer settings".into(),
        ));
    }
    let mut entries = cache.entries.iter().peekable();
    let mut kept = Vec::with_capacity(cache.entries.len());
    for r in records {
        if entries
            .peek()
            .is_some_and(|e| e.compound_id == r.compound_id && e.target_id == r.target_id)
        {
            entries.next();
            kept.push(r);
        }
    }
    if entries.next().is_some() || kept.is_empty() {
        return Err(CliError::Data("feature cache does not match the dataset".into()));
    }
    Ok((kept, cache))
}

pub fn featurize(src: &DataSource, out: &Path, config: Option<&Path>, preset: Option<&str>) -> Result<()> {
    let file = config.map(read_pairs).transpose()?.unwrap_or_default();
    let mut flags: Pairs = vec![("data".into(), src.path.display().to_string())];
    if let Some(p) = preset {
        flags.push(("preset".into(), p.into()));
    }
    let cfg = RunConfig::resolve(&file, &flags)?;
    let records = src.load()?;
    let (kept, cache) = featurize_records(records, &cfg.model)?;
    cache.write(out)?;
    info!("wrote {} feature sets to {}", kept.len(), out.display());
    Ok(())
}

pub fn split(src: &DataSource, scheme: &str, seed: u64, out: Option<&Path>) -> Result<()> {
    let scheme: SplitScheme = scheme.parse().map_err(CliError::Usage)?;
    let records = src.load()?;
    let split = data::make_folds(&records, scheme, seed)?;
    let mut w = sink(out)?;
    let path = out.unwrap_or(Path::new("stdout"));
    w.write_all(split.to_manifest().as_bytes())
        .and_then(|_| w.flush())
        .map_err(CliError::io(path))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    /// Feature cache built by `featurize` with the same settings
    #[arg(long)]
    cache: Option<String>,
    /// warm, cold_drug, cold_target, a comma list, or all
    #[arg(long)]
    scheme: Option<String>,
    /// Comma-separated split seeds
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// jova1 or jova2
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    max_steps: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    /// Any other config key as KEY=VALUE; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainArgs {
    fn flag_pairs(&self) -> Result<Pairs> {
        let named = [
            ("data", &self.data),
            ("cache", &self.cache),
            ("scheme", &self.scheme),
            ("seeds", &self.seeds),
            ("threshold", &self.threshold),
            ("transform", &self.transform),
            ("out", &self.out),
            ("preset", &self.preset),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("max_steps", &self.max_steps),
            ("patience", &self.patience),
            ("eval_every", &self.eval_every),
        ];
        let mut out: Pairs = named
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

/// Outcome of one `(scheme, seed, fold)` run.
struct FoldRun {
    row: MetricsRow,
    predictions: Vec<PredictionRow>,
    failure: Option<String>,
}

fn fold_seed(base: u64, seed: u64, fold: usize) -> u64 {
    base.wrapping_add(seed.wrapping_mul(1000)).wrapping_add(fold as u64)
}

fn train_fold(
    cfg: &RunConfig,
    records: &[InteractionRecord],
    cache: &FeatureCache,
    split: &FoldSplit,
    k: usize,
    dir: &Path,
) -> Result<FoldRun> {
    let (scheme, seed) = (split.scheme, split.seed);
    let fold: &Fold = &split.folds[k];
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = fold_seed(cfg.model.seed, seed, k);
    let mut train_cfg = cfg.train;
    train_cfg.seed = model_cfg.seed;
    let features = cache.feature_sets();
    let affinities: Vec<f64> = records.iter().map(|r| r.affinity).collect();

    let outcome = match run_fold::<f32>(&model_cfg, &train_cfg, &features, &affinities, fold) {
        Ok(o) => o,
        Err(e) => {
            let err = jova_core::Error::from(e);
            if !err.is_numerical() {
                return Err(err.into());
            }
            warn!("{scheme} seed {seed} fold {k}: {err}");
            return Ok(FoldRun {
                row: MetricsRow {
                    scheme: scheme.name().into(),
                    fold: k,
                    seed,
                    rmse: f64::NAN,
                    ci: f64::NAN,
                    r2: f64::NAN,
                },
                predictions: Vec::new(),
                failure: Some(format!("{scheme} seed {seed} fold {k}: {err}")),
            });
        }
    };
    let s = &outcome.summary;
    info!(
        "{scheme} seed {seed} fold {k}: {} steps, kept step {}, train rmse {:.4}, validation rmse {}",
        s.steps,
        s.best_step,
        s.train_rmse,
        s.best_validation_rmse.map_or("n/a".into(), |v| format!("{v:.4}"))
    );

    let fold_dir = dir.join(format!("fold{k}"));
    std::fs::create_dir_all(&fold_dir).map_err(CliError::io(&fold_dir))?;
    let mut ck = outcome.model.to_checkpoint();
    ck.meta.insert("run.scheme".into(), scheme.name().into());
    ck.meta.insert("run.seed".into(), seed.to_string());
    ck.meta.insert("run.fold".into(), k.to_string());
    ck.meta.insert("run.steps".into(), s.steps.to_string());
    write_checkpoint(&fold_dir.join("model.ckpt"), &ck)?;

    let row = MetricsRow::score(scheme.name(), k, seed, &outcome.test_predictions, &outcome.test_truth)?;
    let predictions = fold
        .test
        .iter()
        .zip(&outcome.test_predictions)
        .map(|(&i, &p)| PredictionRow {
            scheme: scheme.name().into(),
            seed,
            fold: k,
            compound_id: records[i].compound_id.clone(),
            target_id: records[i].target_id.clone(),
            truth: records[i].affinity,
            prediction: p,
        })
        .collect();
    Ok(FoldRun {
        row,
        predictions,
        failure: None,
    })
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let file = args.config.as_deref().map(read_pairs).transpose()?.unwrap_or_default();
    let cfg = RunConfig::resolve(&file, &args.flag_pairs()?)?;
    let data_path = cfg.data.as_deref().expect("validated");
    let records = load_records(data_path, cfg.transform, cfg.threshold)?;
    let (records, cache) = match &cfg.cache {
        Some(path) => align_cache(records, FeatureCache::read(path)?, &cfg.model)?,
        None => featurize_records(records, &cfg.model)?,
    };

    std::fs::create_dir_all(&cfg.out).map_err(CliError::io(&cfg.out))?;
    let conf_path = cfg.out.join("run.conf");
    std::fs::write(&conf_path, cfg.to_text()).map_err(CliError::io(&conf_path))?;

    let mut metrics = MetricsReport::default();
    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    for &scheme in &cfg.schemes {
        for &seed in &cfg.seeds {
            let split = data::make_folds(&records, scheme, seed)?;
            let dir = cfg.out.join(scheme.name()).join(format!("seed{seed}"));
            std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
            let manifest = dir.join("split.txt");
            std::fs::write(&manifest, split.to_manifest()).map_err(CliError::io(&manifest))?;

            let runs: Vec<FoldRun> = (0..split.folds.len())
                .into_par_iter()
                .map(|k| train_fold(&cfg, &records, &cache, &split, k, &dir))
                .collect::<Result<_>>()?;
            for run in runs {
                metrics.push(run.row);
                predictions.extend(run.predictions);
                failures.extend(run.failure);
            }
        }
    }

    let metrics_path = cfg.out.join(report::METRICS_FILE);
    metrics
        .write_csv(create(&metrics_path)?)
        .map_err(CliError::io(&metrics_path))?;
    report::write_predictions(&cfg.out.join(report::PREDICTIONS_FILE), &predictions)?;
    let table = report::write_report(&cfg.out, &metrics, &predictions)?;
    print!("{table}");

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "{} fold(s) failed numerically: {}",
            failures.len(),
            failures.join("; ")
        )))
    }
}

pub fn evaluate(checkpoint: &Path, src: &DataSource, split: Option<(&Path, usize)>, out: Option<&Path>) -> Result<()> {
    let model = load_model(checkpoint)?;
    let mut records = src.load()?;
    let (scheme, seed, fold) = match split {
        Some((path, k)) => {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            let split = FoldSplit::from_manifest(&text)?;
            if split.n_records != records.len() {
                return Err(CliError::Data(format!(
                    "split manifest covers {} records, the dataset has {}",
                    split.n_records,
                    records.len()
                )));
            }
            let test = &split
                .folds
                .get(k)
                .ok_or_else(|| CliError::Usage(format!("fold {k} is not in the manifest")))?
                .test;
            records = test.iter().map(|&i| records[i].clone()).collect();
            (split.scheme.name().to_string(), split.seed, k)
        }
        None => ("all".to_string(), 0, 0),
    };
    let (records, cache) = featurize_records(records, model.config())?;
    let pred = jova_core::train::predict_all(&model, &cache.feature_sets(), 64)?;
    let truth: Vec<f64> = records.iter().map(|r| r.affinity).collect();
    let row = MetricsRow::score(&scheme, fold, seed, &pred, &truth)?;
    println!("records {}", records.len());
    println!("rmse {:.6}", row.rmse);
    println!("ci {:.6}", row.ci);
    println!("r2 {:.6}", row.r2);
    println!("pearson {:.6}", pearson(&pred, &truth).unwrap_or(f64::NAN));
    if let Some(path) = out {
        let rows: Vec<PredictionRow> = records
            .iter()
            .zip(pred)
            .map(|(r, p)| PredictionRow {
                scheme: scheme.clone(),
                seed,
                fold,
                compound_id: r.compound_id.clone(),
                target_id: r.target_id.clone(),
                truth: r.affinity,
                prediction: p,
            })
            .collect();
        report::write_predictions(path, &rows)?;
    }
    Ok(())
}

pub fn predict(checkpoint: &Path, smiles: &str, sequence: &str) -> Result<()> {
    let model = load_model(checkpoint)?;
    let cfg = model.config();
    let features = cfg.featurizer.featurize(smiles, sequence, &cfg.views)?;
    let p = model.predict(&[&features])?;
    println!("{}", p[0]);
    Ok(())
}

fn parse_pair(s: &str) -> Result<(&str, &str)> {
    s.split_once(',')
        .or_else(|| s.split_once(':'))
        .map(|(c, t)| (c.trim(), t.trim()))
        .filter(|(c, t)| !c.is_empty() && !t.is_empty())
        .ok_or_else(|| CliError::Usage(format!("--pair expects compound_id,target_id, got `{s}`")))
}

pub fn explain(checkpoint: &Path, src: &DataSource, pairs: &[String], k: usize, norm: &str, out: Option<&Path>) -> Result<()> {
    let norm: NormKind = norm.parse().map_err(CliError::Usage)?;
    let model = load_model(checkpoint)?;
    let cfg = model.config();
    let records = src.load()?;
    let mut explanations = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (cid, tid) = parse_pair(p)?;
        let r = records
            .iter()
            .find(|r| r.compound_id == cid && r.target_id == tid)
            .ok_or_else(|| CliError::Data(format!("pair ({cid}, {tid}) is not in the dataset")))?;
        let features = cfg.featurizer.featurize(&r.smiles, &r.sequence, &cfg.views)?;
        explanations.push(interpret::build_explanation(&model, &features, (cid, tid), k, norm)?);
    }
    let path = out.unwrap_or(Path::new("stdout"));
    interpret::write_explanations(sink(out)?, &explanations).map_err(CliError::io(path))
}

/// Reads `compound_id` (or `id`) and `smiles` columns; repeated ids keep
/// their first row.
fn read_compounds(path: &Path) -> Result<Vec<ScreenCompound>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let bad = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let headers = rdr.headers().map_err(bad)?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let (id_col, smiles_col) = match (col(&["compound_id", "id"]), col(&["smiles"])) {
        (Some(i), Some(s)) => (i, s),
        _ => {
            return Err(CliError::Data(format!(
                "{}: expected `compound_id` and `smiles` columns",
                path.display()
            )))
        }
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(bad)?;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        if seen.insert(id.clone()) {
            out.push(ScreenCompound {
                id,
                smiles: rec.get(smiles_col).unwrap_or("").trim().to_string(),
            });
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn screen(
    checkpoint: &Path,
    compounds: &Path,
    target: &str,
    sequence: Option<&str>,
    data: Option<&Path>,
    threshold: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    let sequence = match (sequence, data) {
        (Some(s), _) => s.to_string(),
        (None, Some(d)) => load_records(d, AffinityTransform::Identity, None)?
            .into_iter()
            .find(|r| r.target_id == target)
            .map(|r| r.sequence)
            .ok_or_else(|| CliError::Data(format!("target {target} is not in {}", d.display())))?,
        (None, None) => return Err(CliError::Usage("screen needs --sequence or --data".into())),
    };
    let library = read_compounds(compounds)?;
    let report = interpret::screen(&model, &library, (target, &sequence), threshold)?;
    info!(
        "screened {} compounds against {target}, {} skipped",
        report.hits.len(),
        report.skipped.len()
    );
    let path = out.unwrap_or(Path::new("stdout"));
    report.write_csv(sink(out)?).map_err(CliError::io(path))
}

pub fn report(input: &Path, out: &Path) -> Result<()> {
    if !input.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", input.display())));
    }
    let mut predictions = Vec::new();
    for p in report::find_files(input, report::PREDICTIONS_FILE)? {
        predictions.extend(report::read_predictions(&p)?);
    }
    let metric_files = report::find_files(input, report::METRICS_FILE)?;
    let metrics = if metric_files.is_empty() {
        report::metrics_from_predictions(&predictions)?
    } else {
        let mut all = MetricsReport::default();
        for p in metric_files {
            let file = File::open(&p).map_err(CliError::io(&p))?;
            all.rows.extend(MetricsReport::read_csv(file)?.rows);
        }
        all
    };
    if metrics.rows.is_empty() {
        return Err(CliError::Data(format!(
            "no {} or {} files under {}",
            report::METRICS_FILE,
            report::PREDICTIONS_FILE,
            input.display()
        )));
    }
    print!("{}", report::write_report(out, &metrics, &predictions)?);
    Ok(())
}

pub fn synth(out: &Path, cfg: data::synthetic::SyntheticConfig) -> Result<()> {
    let records = data::synthetic::generate(&cfg);
    data::write_dataset(create(out)?, &records)?;
    info!("wrote {} synthetic records to {}", records.len(), out.display());
    Ok(())
}

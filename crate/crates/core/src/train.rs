//! Mini-batch training with Adam and early stopping on validation RMSE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureSet;
use crate::metrics::rmse;
use crate::data::Fold;
use crate::model::{JovaModel, ModelConfig, ModelError};
use crate::tensor::{Adam, AdamConfig, Graph, Real, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Validation is scored every this many steps.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Stop once the running training RMSE drops below this value.
    pub target_train_rmse: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_steps: 2000,
            eval_every: 10,
            patience: 50,
            target_train_rmse: None,
            seed: 0,
        }
    }
}

/// One labelled subset.
#[derive(Debug, Clone, Copy)]
pub struct Labelled<'a> {
    pub features: &'a [&'a FeatureSet],
    pub affinities: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub best_validation_rmse: Option<f64>,
    /// RMSE over the whole training set with the kept parameters.
    pub train_rmse: f64,
    pub stopped_early: bool,
    /// `(step, validation rmse)` at each evaluation.
    pub history: Vec<(usize, f64)>,
}

fn overflow(what: &str) -> ModelError {
    TensorError::NumericalOverflow(what.to_string()).into()
}

/// Predictions for every sample, `batch_size` at a time.
pub fn predict_all<T: Real>(model: &JovaModel<T>, features: &[&FeatureSet], batch_size: usize) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(batch_size.max(1)) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}

pub fn evaluate_rmse<T: Real>(model: &JovaModel<T>, data: Labelled<'_>, batch_size: usize) -> Result<f64, ModelError> {
    let pred = predict_all(model, data.features, batch_size)?;
    rmse(&pred, data.affinities).map_err(|_| ModelError::EmptyBatch)
}

/// Trains `model` in place. The output bias starts at the mean training
/// affinity. With a validation set, the parameters with the lowest
/// validation RMSE are restored at the end.
pub fn train<T: Real>(
    model: &mut JovaModel<T>,
    train: Labelled<'_>,
    validation: Option<Labelled<'_>>,
    cfg: &TrainConfig,
) -> Result<TrainSummary, ModelError> {
    let n = train.features.len();
    if n == 0 || n != train.affinities.len() {
        return Err(ModelError::EmptyBatch);
    }
    let validation = validation.filter(|v| !v.features.is_empty());
    let mean = train.affinities.iter().sum::<f64>() / n as f64;
    model.set_output_bias(mean);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam, &model.params);
    let batch_size = cfg.batch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<_>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut steps = 0;
    // running mean of batch losses over the current epoch
    let (mut epoch_sse, mut epoch_count) = (0.0, 0usize);

    while steps < cfg.max_steps {
        if cursor >= n {
            if let Some(target) = cfg.target_train_rmse {
                if epoch_count == n && (epoch_sse / n as f64).sqrt() < target {
                    stopped_early = true;
                    break;
                }
            }
            order.shuffle(&mut rng);
            cursor = 0;
            epoch_sse = 0.0;
            epoch_count = 0;
        }
        let end = (cursor + batch_size).min(n);
        let idx = &order[cursor..end];
        cursor = end;

        let batch: Vec<&FeatureSet> = idx.iter().map(|&i| train.features[i]).collect();
        let target: Vec<T> = idx.iter().map(|&i| T::lit(train.affinities[i])).collect();
        let grads = {
            let mut g = Graph::new(&model.params);
            let pass = model.net.forward(&mut g, &batch, None)?;
            let loss = g.mse_loss(pass.prediction, &target)?;
            epoch_sse += g.value(loss).data()[0].as_f64() * idx.len() as f64;
            epoch_count += idx.len();
            g.backward(loss)?
        };
        grads.write_to(&mut model.params);
        opt.step(&mut model.params);
        steps += 1;
        if model.params.iter().any(|(_, p)| !p.value.all_finite()) {
            return Err(overflow("parameters diverged"));
        }

        if let Some(val) = validation {
            if steps % cfg.eval_every.max(1) == 0 || steps == cfg.max_steps {
                let score = evaluate_rmse(model, val, batch_size.max(32))?;
                history.push((steps, score));
                if best.as_ref().is_none_or(|b| score < b.0) {
                    best = Some((score, steps, model.params.snapshot()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
    }

    let (best_validation_rmse, best_step) = match best {
        Some((score, step, snapshot)) => {
            model.params.restore(snapshot);
            (Some(score), step)
        }
        None => (None, steps),
    };
    let train_rmse = evaluate_rmse(model, train, batch_size.max(32))?;
    if !train_rmse.is_finite() {
        return Err(overflow("training rmse is not finite"));
    }
    Ok(TrainSummary {
        steps,
        best_step,
        best_validation_rmse,
        train_rmse,
        stopped_early,
        history,
    })
}

/// Result of training and testing on one cross-validation fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome<T: Real> {
    pub model: JovaModel<T>,
    pub summary: TrainSummary,
    pub test_predictions: Vec<f64>,
    pub test_truth: Vec<f64>,
}

/// Builds a fresh model, trains it on the fold's training records with
/// early stopping on its validation records, and predicts its test records.
pub fn run_fold<T: Real>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    features: &[&FeatureSet],
    affinities: &[f64],
    fold: &Fold,
) -> Result<FoldOutcome<T>, ModelError> {
    let pick = |idx: &[usize]| -> (Vec<&FeatureSet>, Vec<f64>) {
        (idx.iter().map(|&i| features[i]).collect(), idx.iter().map(|&i| affinities[i]).collect())
    };
    let (tr_x, tr_y) = pick(&fold.train);
    let (va_x, va_y) = pick(&fold.validation);
    let (te_x, te_y) = pick(&fold.test);
    let mut model = JovaModel::<T>::new(model_config.clone())?;
    let summary = train(
        &mut model,
        Labelled {
            features: &tr_x,
            affinities: &tr_y,
        },
        Some(Labelled {
            features: &va_x,
            affinities: &va_y,
        }),
        train_config,
    )?;
    let test_predictions = predict_all(&model, &te_x, 64)?;
    Ok(FoldOutcome {
        model,
        summary,
        test_predictions,
        test_truth: te_y,
    })
}

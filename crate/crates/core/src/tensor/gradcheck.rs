use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, TensorError, Var};

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)` seen.
    pub max_rel_error: f64,
    /// `parameter[index]` where the largest error occurred.
    pub worst: String,
    pub entries_checked: usize,
}

/// Options for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Parameters with more entries than this are spot-checked: a random
    /// sample plus the entry with the largest analytic gradient.
    pub max_entries_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries_per_param: 24,
            seed: 0,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `loss` against central differences
/// for the parameters in `params`.
pub fn check_gradients<F>(
    params: &mut ParamStore<f64>,
    loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, TensorError>,
{
    let eval = |p: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut g = Graph::new(p);
        let l = loss(&mut g)?;
        Ok(g.value(l).data()[0])
    };

    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(&*params);
        let l = loss(&mut g)?;
        let grads = g.backward(l)?;
        params
            .iter()
            .map(|(id, p)| {
                grads
                    .param(id)
                    .map(|t| t.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; p.value.len()])
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        entries_checked: 0,
    };
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let n = grad.len();
        let entries: Vec<usize> = if n <= opts.max_entries_per_param {
            (0..n).collect()
        } else {
            let mut e = sample(&mut rng, n, opts.max_entries_per_param - 1).into_vec();
            let top = (0..n)
                .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
                .unwrap_or(0);
            if !e.contains(&top) {
                e.push(top);
            }
            e.sort_unstable();
            e
        };
        for i in entries {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + opts.step;
            let up = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig - opts.step;
            let down = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * opts.step);
            let err = relative_error(grad[i], fd);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = format!(
                        "{}[{i}] analytic={:e} numeric={fd:e}",
                        params.get(id).name,
                        grad[i]
                    );
                }
            }
        }
    }
    Ok(report)
}

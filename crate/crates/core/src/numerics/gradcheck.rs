//! Finite-difference verification of tape gradients.
//!
//! The checker runs entirely in double precision: single-precision noise
//! would drown the O(h^2) truncation error of the central difference and
//! make the tolerances meaningless.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::params::ModelParams;

/// Outcome of a gradient check, with enough detail to report which
/// parameter disagreed worst.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all sampled coordinates.
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate index of the worst error.
    pub worst: Option<(String, usize)>,
    /// Relative error per parameter tensor, in insertion order.
    pub per_param: Vec<(String, f64)>,
    /// Total number of coordinates compared.
    pub coords_checked: usize,
}

/// Compares the gradients produced by `f` against central finite
/// differences and returns the worst relative error.
///
/// `f` must evaluate the scalar objective for the current parameter
/// values and leave d(objective)/d(param) in each parameter's `grad`
/// (typically by running a tape forward and backward). The checker calls
/// `f` once for the analytic gradients and then twice per sampled
/// coordinate for the differences `(f(p+h) - f(p-h)) / 2h`.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`
/// so near-zero gradients do not produce spurious blowups. A parameter
/// set with no coordinates returns 0 by convention.
pub fn grad_check<F>(f: F, params: &mut ModelParams<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&mut ModelParams<f64>) -> Result<f64>,
{
    grad_check_sampled(f, params, h, 32, 0).map(|r| r.max_rel_err)
}

/// [`grad_check`] with explicit control over how many coordinates are
/// sampled per parameter tensor and the sampling seed.
pub fn grad_check_sampled<F>(
    mut f: F,
    params: &mut ModelParams<f64>,
    h: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ModelParams<f64>) -> Result<f64>,
{
    if !(1e-5..=1e-3).contains(&h) {
        return Err(Error::contract(format!(
            "finite-difference step {h} outside [1e-5, 1e-3]"
        )));
    }
    if max_coords_per_param == 0 {
        return Err(Error::contract(
            "max_coords_per_param must be positive".to_string(),
        ));
    }
    if params.num_values() == 0 {
        return Ok(GradCheckReport {
            max_rel_err: 0.0,
            worst: None,
            per_param: Vec::new(),
            coords_checked: 0,
        });
    }

    params.zero_grads();
    let base = f(params)?;
    if !base.is_finite() {
        return Err(Error::numeric(format!(
            "objective evaluated to non-finite value {base}"
        )));
    }

    // Snapshot the analytic gradients before finite differences clobber
    // anything.
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .map(|(name, t)| {
            let g = t.grad().ok_or_else(|| {
                Error::contract(format!("objective left no gradient on \"{name}\""))
            })?;
            Ok((name.to_owned(), g.to_vec()))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.names().map(str::to_owned).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        per_param: Vec::new(),
        coords_checked: 0,
    };

    for (pi, name) in names.iter().enumerate() {
        let len = params.require(name)?.len();
        let coords: Vec<usize> = if len <= max_coords_per_param {
            (0..len).collect()
        } else {
            let mut picked =
                rand::seq::index::sample(&mut rng, len, max_coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };

        let mut param_worst = 0.0f64;
        for &i in &coords {
            let orig = params.require(name)?.data()[i];

            params.require_mut(name)?.data_mut()[i] = orig + h;
            let plus = f(params)?;
            params.require_mut(name)?.data_mut()[i] = orig - h;
            let minus = f(params)?;
            params.require_mut(name)?.data_mut()[i] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!(
                    "objective non-finite while perturbing \"{name}\"[{i}]"
                )));
            }

            let numeric = (plus - minus) / (2.0 * h);
            let grad = analytic[pi].1[i];
            let rel = (grad - numeric).abs() / grad.abs().max(numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > param_worst {
                param_worst = rel;
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i));
            }
        }
        report.per_param.push((name.clone(), param_worst));
    }

    // The finite-difference calls left stale gradients behind; clear them
    // so callers see the same state as before the check.
    params.zero_grads();
    Ok(report)
}

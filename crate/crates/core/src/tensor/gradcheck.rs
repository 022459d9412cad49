use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per parameter tensor.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// A coordinate is treated as straddling a kink (ReLU, `|x|`) and skipped when its
    /// one-sided slopes disagree by more than this fraction of their magnitude.
    pub kink_tolerance: f64,
    /// Fault-injection hook: compare against the negated analytic gradient.
    pub negate_analytic: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_param: None,
            seed: 0,
            kink_tolerance: 1e-2,
            negate_analytic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub compared: usize,
    pub skipped: usize,
}

/// Resolution limit of a central difference: rounding in `f(p +- eps)` divided by `2 eps`.
fn roundoff_floor(plus: f64, minus: f64, eps: f64) -> f64 {
    16.0 * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * eps)
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` records the function on a fresh tape given one variable per entry of `params`.
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, 1e-8)`, where the
/// discrepancy `|a - n|` is first reduced by the rounding resolution of the difference
/// quotient so that coordinates whose true gradient is zero are not judged on noise.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::NonScalarRoot(tape.value(out).shape().to_vec()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.variable(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let base = tape
        .value(root)
        .item()
        .ok_or_else(|| Error::NonScalarRoot(tape.value(root).shape().to_vec()))?;
    let grads = tape.backward(root)?;
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        compared: 0,
        skipped: 0,
    };
    let sign = if opts.negate_analytic { -1.0 } else { 1.0 };

    for (pi, var) in vars.iter().enumerate() {
        let len = params[pi].len();
        let zeros = Tensor::zeros(params[pi].shape().to_vec());
        let analytic = grads.get(*var).unwrap_or(&zeros);
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < len => {
                let mut c = sample(&mut rng, len, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for i in coords {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + opts.eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[i] = orig - opts.eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[i] = orig;

            let right = (plus - base) / opts.eps;
            let left = (base - minus) / opts.eps;
            let scale = right.abs().max(left.abs()).max(1e-8);
            if (right - left).abs() > opts.kink_tolerance * scale {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = sign * analytic.data()[i];
            let excess = ((a - numeric).abs() - roundoff_floor(plus, minus, opts.eps)).max(0.0);
            let rel = excess / a.abs().max(numeric.abs()).max(1e-8);
            report.compared += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, i));
            }
        }
    }
    Ok(report)
}

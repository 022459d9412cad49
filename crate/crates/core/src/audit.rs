//! Finite-difference audit of every differentiable component in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curve::apply_curves_graph;
use crate::error::Result;
use crate::losses::{
    color_constancy_on, exposure_control_on, illumination_smoothness_on, spatial_consistency_on, total_loss_on,
    LossConfig,
};
use crate::net::{Model, NetConfig};
use crate::tensor::{grad_check, GradCheckOptions, GradCheckReport, Tensor};

/// Relative-error bound every component must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Loss settings scaled to 8x8 inputs: 2x2 contrast regions, 4x4 exposure regions.
pub fn small_loss_config() -> LossConfig {
    LossConfig {
        spatial_region: 2,
        exposure_region: 4,
        ..LossConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct ComponentCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE && self.report.compared > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub seed: u64,
    /// Spatial size of the random inputs.
    pub size: usize,
    /// Coordinates sampled per network parameter tensor.
    pub coords_per_tensor: usize,
    /// Test hook: compare against negated analytic gradients.
    pub negate_analytic: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 8,
            coords_per_tensor: 6,
            negate_analytic: false,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Runs the full suite: each loss, the curve iteration (both map layouts), and the
/// composite objective for both network variants and a downsampled pipeline.
pub fn gradient_audit(opts: &AuditOptions) -> Result<Vec<ComponentCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let s = opts.size;
    let img = uniform(&mut rng, vec![1, 3, s, s], 0.02, 0.98);
    let other = uniform(&mut rng, vec![1, 3, s, s], 0.02, 0.98);
    let maps = uniform(&mut rng, vec![1, 24, s, s], -0.9, 0.9);
    let weights = uniform(&mut rng, vec![1, 3, s, s], -1.0, 1.0);
    let loss = small_loss_config();
    let base = GradCheckOptions {
        seed: opts.seed,
        negate_analytic: opts.negate_analytic,
        ..GradCheckOptions::default()
    };
    let mut out = Vec::new();
    let mut push = |name: &'static str, report: GradCheckReport| out.push(ComponentCheck { name, report });

    push(
        "spatial_consistency",
        grad_check(
            |t, v| spatial_consistency_on(t, v[0], v[1], loss.spatial_region),
            &[img.clone(), other.clone()],
            &base,
        )?,
    );
    push(
        "exposure_control",
        grad_check(
            |t, v| exposure_control_on(t, v[0], loss.exposure_level, loss.exposure_region),
            &[other.clone()],
            &base,
        )?,
    );
    push(
        "color_constancy",
        grad_check(|t, v| color_constancy_on(t, v[0]), &[other.clone()], &base)?,
    );
    push(
        "illumination_smoothness",
        grad_check(|t, v| illumination_smoothness_on(t, v[0]), &[maps.clone()], &base)?,
    );
    for (name, shared) in [("curves_per_iteration", false), ("curves_shared", true)] {
        let m = if shared {
            crate::tensor::ops::slice_channels(&maps, 0, 3)?
        } else {
            maps.clone()
        };
        push(
            name,
            grad_check(
                |t, v| {
                    let y = apply_curves_graph(t, &v[0], &v[1], 8, shared)?;
                    let w = t.constant(weights.clone());
                    let p = t.mul(y, w)?;
                    Ok(t.sum(p))
                },
                &[img.clone(), m],
                &base,
            )?,
        );
    }

    // A ReLU crossing inside the difference window biases the central difference by at
    // most half the gap between the one-sided slopes, so filtering kinks at the
    // comparison tolerance removes every crossing that could fake a failure.
    let sampled = GradCheckOptions {
        eps: 1e-7,
        kink_tolerance: GRADCHECK_TOLERANCE,
        max_coords_per_param: Some(opts.coords_per_tensor),
        ..base.clone()
    };
    let composites = [
        ("composite_plain", NetConfig::plain(), 1),
        ("composite_dsc", NetConfig::separable(), 1),
        ("composite_dsc_downsampled", NetConfig::separable(), 2),
    ];
    for (name, cfg, d) in composites {
        // wide enough initialisation that gradients sit well above rounding noise
        let model = Model::<f64>::build_with_std(cfg, opts.seed.wrapping_add(17), 0.15)?;
        let x = img.clone();
        let report = grad_check(
            |t, v| {
                let xv = t.constant(x.clone());
                let (enhanced, maps) = model.enhance_graph(t, v, &xv, d)?;
                Ok(total_loss_on(t, xv, enhanced, maps, &loss)?.total)
            },
            model.params(),
            &sampled,
        )?;
        push(name, report);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let checks = gradient_audit(&AuditOptions::default()).unwrap();
        assert_eq!(checks.len(), 9);
        for c in &checks {
            assert!(c.passed(), "{}: {:?}", c.name, c.report);
        }
    }

    #[test]
    fn negated_gradients_fail() {
        let checks = gradient_audit(&AuditOptions {
            negate_analytic: true,
            ..Default::default()
        })
        .unwrap();
        assert!(checks.iter().all(|c| !c.passed()));
    }
}

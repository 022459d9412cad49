//! Light-enhancement curves.
//!
//! A single step maps each channel value `x` to `x + a * x * (1 - x)` with a per-pixel,
//! per-channel `a` in `[-1, 1]`. For `x` in `[0, 1]` the result stays in `[0, 1]`, is
//! non-decreasing in `x`, and leaves 0 and 1 fixed. Enhancement repeats the step `n`
//! times, either with a fresh map per iteration or with one shared map.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Eager, Graph, Real, Tape, Tensor, Var};

/// Curve parameters predicted for a batch of images.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveParamMaps<T> {
    maps: Tensor<T>,
    iterations: usize,
    shared: bool,
}

impl<T: Real> CurveParamMaps<T> {
    /// `maps` is `[n, 3 * iterations, h, w]`, or `[n, 3, h, w]` when `shared`.
    pub fn new(maps: Tensor<T>, iterations: usize, shared: bool) -> Result<Self> {
        let (_, c, _, _) = maps.dims4()?;
        if iterations == 0 {
            return Err(Error::invalid("curve maps", "at least one iteration is required"));
        }
        let expected = if shared { 3 } else { 3 * iterations };
        if c != expected {
            return Err(Error::shape(
                "curve maps",
                format!("{c} channels for {iterations} iterations (shared: {shared}), expected {expected}"),
            ));
        }
        if let Some(bad) = maps.data().iter().find(|v| !(v.abs() <= T::one())) {
            return Err(Error::OutOfRange {
                op: "curve maps",
                detail: format!("parameter {bad} outside [-1, 1]"),
            });
        }
        Ok(Self {
            maps,
            iterations,
            shared,
        })
    }

    pub fn maps(&self) -> &Tensor<T> {
        &self.maps
    }

    pub fn into_maps(self) -> Tensor<T> {
        self.maps
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    /// Number of distinct 3-channel map groups (1 when shared).
    pub fn groups(&self) -> usize {
        if self.shared {
            1
        } else {
            self.iterations
        }
    }

    /// The 3-channel map used at iteration `k` (0-based).
    pub fn iteration_map(&self, k: usize) -> Result<Tensor<T>> {
        if k >= self.iterations {
            return Err(Error::invalid("curve maps", format!("iteration {k} of {}", self.iterations)));
        }
        let group = if self.shared { 0 } else { k };
        crate::tensor::ops::slice_channels(&self.maps, 3 * group, 3)
    }

    /// Expands a shared map into one copy per iteration.
    pub fn tiled(&self) -> Result<Self> {
        if !self.shared {
            return Ok(self.clone());
        }
        let mut maps = self.maps.clone();
        for _ in 1..self.iterations {
            maps = crate::tensor::ops::concat_channels(&maps, &self.maps)?;
        }
        Self::new(maps, self.iterations, false)
    }
}

fn check_unit_interval<T: Real>(op: &'static str, img: &Tensor<T>) -> Result<()> {
    let tol = T::epsilon() * T::from_f64(16.0).unwrap();
    if let Some(bad) = img
        .data()
        .iter()
        .find(|&&v| !(v >= -tol && v <= T::one() + tol))
    {
        return Err(Error::OutOfRange {
            op,
            detail: format!("pixel value {bad} outside [0, 1]"),
        });
    }
    Ok(())
}

/// One curve step: `img + alpha * img * (1 - img)`, elementwise.
///
/// Debug builds reject pixel values outside `[0, 1]`.
pub fn le_step<T: Real>(img: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    img.expect_same_shape(alpha, "le_step")?;
    if cfg!(debug_assertions) {
        check_unit_interval("le_step", img)?;
    }
    img.zip_map(alpha, |x, a| x + a * x * (T::one() - x))
}

/// `(d out / d img, d out / d alpha)` of [`le_step`].
pub fn curve_partials<T: Real>(img: &Tensor<T>, alpha: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    img.expect_same_shape(alpha, "curve_partials")?;
    let two = T::one() + T::one();
    let d_img = img.zip_map(alpha, |x, a| T::one() + a * (T::one() - two * x))?;
    let d_alpha = img.map(|x| x * (T::one() - x));
    Ok((d_img, d_alpha))
}

/// Iterates [`le_step`] with map group `k` at iteration `k`.
pub fn apply_curves<T: Real>(img: &Tensor<T>, maps: &CurveParamMaps<T>) -> Result<Tensor<T>> {
    if maps.shared {
        return Err(Error::invalid(
            "apply_curves",
            "expected per-iteration maps; use apply_curves_shared for a shared map",
        ));
    }
    iterate(img, maps)
}

/// Iterates [`le_step`] reusing one 3-channel map for every iteration.
pub fn apply_curves_shared<T: Real>(img: &Tensor<T>, map: &CurveParamMaps<T>) -> Result<Tensor<T>> {
    if !map.shared {
        return Err(Error::invalid(
            "apply_curves_shared",
            "expected a single shared 3-channel map",
        ));
    }
    iterate(img, map)
}

/// Applies either kind of map.
pub fn enhance_with<T: Real>(img: &Tensor<T>, maps: &CurveParamMaps<T>) -> Result<Tensor<T>> {
    iterate(img, maps)
}

fn iterate<T: Real>(img: &Tensor<T>, maps: &CurveParamMaps<T>) -> Result<Tensor<T>> {
    let mut g = Eager;
    let x = g.constant(img.clone());
    let m = g.constant(maps.maps.clone());
    let out = apply_curves_graph(&mut g, &x, &m, maps.iterations, maps.shared)?;
    Ok(Arc::try_unwrap(out).unwrap_or_else(|a| (*a).clone()))
}

/// Graphs that can evaluate a curve step.
pub trait CurveGraph<T: Real>: Graph<T> {
    fn curve_step(&mut self, img: &Self::Value, alpha: &Self::Value) -> Result<Self::Value>;
}

impl<T: Real> CurveGraph<T> for Eager {
    fn curve_step(&mut self, img: &Self::Value, alpha: &Self::Value) -> Result<Self::Value> {
        le_step(img, alpha).map(Arc::new)
    }
}

impl<T: Real> CurveGraph<T> for Tape<T> {
    fn curve_step(&mut self, img: &Var, alpha: &Var) -> Result<Var> {
        let out = le_step(self.value(*img), self.value(*alpha))?;
        Ok(self.record(
            "curve_step",
            out,
            &[*img, *alpha],
            Box::new(|ctx| {
                let (d_img, d_alpha) = curve_partials(ctx.inputs[0], ctx.inputs[1])?;
                let g_img = ctx.needs_grad[0]
                    .then(|| d_img.zip_map(ctx.grad, |d, g| d * g))
                    .transpose()?;
                let g_alpha = ctx.needs_grad[1]
                    .then(|| d_alpha.zip_map(ctx.grad, |d, g| d * g))
                    .transpose()?;
                Ok(vec![g_img, g_alpha])
            }),
        ))
    }
}

/// Curve iteration on any graph; on a tape, gradients for a shared map sum over steps.
pub fn apply_curves_graph<T: Real, G: CurveGraph<T>>(
    g: &mut G,
    img: &G::Value,
    maps: &G::Value,
    iterations: usize,
    shared: bool,
) -> Result<G::Value> {
    let channels = g.tensor(maps).shape().get(1).copied().unwrap_or(0);
    let expected = if shared { 3 } else { 3 * iterations };
    if channels != expected {
        return Err(Error::shape(
            "apply_curves",
            format!("{channels} map channels, expected {expected}"),
        ));
    }
    let mut x = img.clone();
    for k in 0..iterations {
        let alpha = if shared {
            maps.clone()
        } else {
            g.slice_channels(maps, 3 * k, 3)?
        };
        x = g.curve_step(&x, &alpha)?;
    }
    Ok(x)
}

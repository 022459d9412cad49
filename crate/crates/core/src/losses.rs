//! Non-reference training losses.
//!
//! None of these needs a ground-truth image: they score the enhanced image against the
//! input (spatial consistency), a target exposure, the gray-world prior, and the
//! smoothness of the curve maps. Every loss averages over the batch, and spatial terms
//! are means rather than sums so the default weights hold at any training resolution.
//!
//! Region intensity is the unweighted mean over RGB and over a non-overlapping square
//! window; partial windows at the right/bottom border are ignored.

use crate::curve::CurveParamMaps;
use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Target mean intensity of well-exposed regions.
    pub exposure_level: f64,
    pub color_weight: f64,
    pub smoothness_weight: f64,
    pub spatial_region: usize,
    pub exposure_region: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            exposure_level: 0.6,
            color_weight: 0.5,
            smoothness_weight: 20.0,
            spatial_region: 4,
            exposure_region: 16,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_level > 0.0 && self.exposure_level < 1.0) {
            return Err(Error::Config(format!(
                "exposure level {} must lie in (0, 1)",
                self.exposure_level
            )));
        }
        if !(self.color_weight >= 0.0 && self.smoothness_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.spatial_region == 0 || self.exposure_region == 0 {
            return Err(Error::Config("region sizes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Component values of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub spatial: f64,
    pub exposure: f64,
    pub color: f64,
    pub smoothness: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.spatial, self.exposure, self.color, self.smoothness, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Componentwise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.spatial += b.spatial;
            acc.exposure += b.exposure;
            acc.color += b.color;
            acc.smoothness += b.smoothness;
            acc.total += b.total;
        }
        LossBreakdown {
            spatial: acc.spatial / n,
            exposure: acc.exposure / n,
            color: acc.color / n,
            smoothness: acc.smoothness / n,
            total: acc.total / n,
        }
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "L_spa={} L_exp={} L_col={} L_tv={} total={}",
            self.spatial, self.exposure, self.color, self.smoothness, self.total
        )
    }
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Region mean intensity grid, `[n][gh * gw]`.
struct RegionGrid<T> {
    n: usize,
    gh: usize,
    gw: usize,
    values: Vec<T>,
}

fn region_intensity<T: Real>(x: &Tensor<T>, k: usize, op: &'static str) -> Result<RegionGrid<T>> {
    let (n, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(Error::shape(op, format!("expected 3 channels, got {c}")));
    }
    if k == 0 {
        return Err(Error::invalid(op, "region size must be positive"));
    }
    let (gh, gw) = (h / k, w / k);
    if gh == 0 || gw == 0 {
        return Err(Error::invalid(
            op,
            format!("image {h}x{w} is smaller than the {k}x{k} region"),
        ));
    }
    let inv = T::one() / T::from_usize(3 * k * k).unwrap();
    let mut values = vec![T::zero(); n * gh * gw];
    for s in 0..n {
        for gy in 0..gh {
            for gx in 0..gw {
                // accumulate offsets from the first sample so uniform regions are exact
                let origin = x.plane(s, 0)[gy * k * w + gx * k];
                let mut acc = T::zero();
                for ch in 0..3 {
                    let plane = x.plane(s, ch);
                    for y in gy * k..(gy + 1) * k {
                        acc = acc
                            + plane[y * w + gx * k..y * w + (gx + 1) * k]
                                .iter()
                                .map(|&v| v - origin)
                                .sum::<T>();
                    }
                }
                values[(s * gh + gy) * gw + gx] = origin + acc * inv;
            }
        }
    }
    Ok(RegionGrid { n, gh, gw, values })
}

/// Spreads per-region gradients back to the pixels of an image of `shape`.
fn scatter_regions<T: Real>(shape: &[usize], k: usize, grid_grad: &[T], gh: usize, gw: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(shape.to_vec());
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let inv = T::one() / T::from_usize(3 * k * k).unwrap();
    let hw = h * w;
    for s in 0..n {
        for ch in 0..c {
            let plane = &mut out.data_mut()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            for gy in 0..gh {
                for gx in 0..gw {
                    let v = grid_grad[(s * gh + gy) * gw + gx] * inv;
                    for y in gy * k..(gy + 1) * k {
                        plane[y * w + gx * k..y * w + (gx + 1) * k].fill(v);
                    }
                }
            }
        }
    }
    out
}

/// Value and gradients `(loss, d/d input, d/d enhanced)` of the spatial consistency loss.
pub fn spatial_consistency_grad<T: Real>(
    input: &Tensor<T>,
    enhanced: &Tensor<T>,
    region: usize,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    input.expect_same_shape(enhanced, "spatial_consistency")?;
    let gi = region_intensity(input, region, "spatial_consistency")?;
    let ge = region_intensity(enhanced, region, "spatial_consistency")?;
    let (n, gh, gw) = (gi.n, gi.gh, gi.gw);
    let ordered_pairs = 2 * (gh * (gw - 1) + (gh - 1) * gw);
    let mut d_in = vec![T::zero(); n * gh * gw];
    let mut d_en = vec![T::zero(); n * gh * gw];
    let mut total = T::zero();
    if ordered_pairs > 0 {
        let norm = T::from_usize(ordered_pairs * n).unwrap();
        let two = lit::<T>(2.0);
        let four = lit::<T>(4.0);
        for s in 0..n {
            let base = s * gh * gw;
            let mut sum = T::zero();
            let mut visit = |i: usize, j: usize, sum: &mut T| {
                let dy = ge.values[base + i] - ge.values[base + j];
                let di = gi.values[base + i] - gi.values[base + j];
                let d = dy.abs() - di.abs();
                // both orderings (i, j) and (j, i) contribute the same term
                *sum = *sum + two * d * d;
                let gy = four * d * sign(dy) / norm;
                let gx = four * d * sign(di) / norm;
                d_en[base + i] = d_en[base + i] + gy;
                d_en[base + j] = d_en[base + j] - gy;
                d_in[base + i] = d_in[base + i] - gx;
                d_in[base + j] = d_in[base + j] + gx;
            };
            for y in 0..gh {
                for x in 0..gw {
                    let i = y * gw + x;
                    if x + 1 < gw {
                        visit(i, i + 1, &mut sum);
                    }
                    if y + 1 < gh {
                        visit(i, i + gw, &mut sum);
                    }
                }
            }
            total = total + sum;
        }
        total = total / norm;
    }
    Ok((
        total,
        scatter_regions(input.shape(), region, &d_in, gh, gw),
        scatter_regions(enhanced.shape(), region, &d_en, gh, gw),
    ))
}

/// Mean over all in-bounds ordered 4-neighbour region pairs of
/// `(|Y_i - Y_j| - |I_i - I_j|)^2`, averaged over the batch.
pub fn spatial_consistency<T: Real>(input: &Tensor<T>, enhanced: &Tensor<T>, region: usize) -> Result<T> {
    spatial_consistency_grad(input, enhanced, region).map(|r| r.0)
}

pub fn exposure_control_grad<T: Real>(enhanced: &Tensor<T>, level: f64, region: usize) -> Result<(T, Tensor<T>)> {
    let g = region_intensity(enhanced, region, "exposure_control")?;
    let e = lit::<T>(level);
    let count = T::from_usize(g.values.len()).unwrap();
    let value = g.values.iter().map(|&y| (y - e).abs()).sum::<T>() / count;
    let grads: Vec<T> = g.values.iter().map(|&y| sign(y - e) / count).collect();
    Ok((value, scatter_regions(enhanced.shape(), region, &grads, g.gh, g.gw)))
}

/// Mean distance of region intensities from the exposure level.
pub fn exposure_control<T: Real>(enhanced: &Tensor<T>, level: f64, region: usize) -> Result<T> {
    exposure_control_grad(enhanced, level, region).map(|r| r.0)
}

pub fn color_constancy_grad<T: Real>(enhanced: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (n, c, h, w) = enhanced.dims4()?;
    if c != 3 {
        return Err(Error::shape("color_constancy", format!("expected 3 channels, got {c}")));
    }
    let hw = T::from_usize(h * w).unwrap();
    let nn = T::from_usize(n).unwrap();
    let two = lit::<T>(2.0);
    let mut grad = Tensor::zeros(enhanced.shape().to_vec());
    let mut total = T::zero();
    for s in 0..n {
        let j: Vec<T> = (0..3)
            .map(|ch| enhanced.plane(s, ch).iter().copied().sum::<T>() / hw)
            .collect();
        let (rg, rb, gb) = (j[0] - j[1], j[0] - j[2], j[1] - j[2]);
        total = total + rg * rg + rb * rb + gb * gb;
        let dj = [two * (rg + rb), two * (gb - rg), -two * (rb + gb)];
        for (ch, d) in dj.iter().enumerate() {
            let v = *d / (nn * hw);
            let start = (s * 3 + ch) * h * w;
            grad.data_mut()[start..start + h * w].fill(v);
        }
    }
    Ok((total / nn, grad))
}

/// Sum over channel pairs (R,G), (R,B), (G,B) of squared differences of channel means.
pub fn color_constancy<T: Real>(enhanced: &Tensor<T>) -> Result<T> {
    color_constancy_grad(enhanced).map(|r| r.0)
}

/// Value and gradient of the smoothness loss on raw `[n, 3 * groups, h, w]` maps.
pub fn illumination_smoothness_grad<T: Real>(maps: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (n, c, h, w) = maps.dims4()?;
    if c == 0 || c % 3 != 0 {
        return Err(Error::shape(
            "illumination_smoothness",
            format!("{c} channels is not a multiple of 3"),
        ));
    }
    let groups = c / 3;
    let hw = h * w;
    let mut grad = Tensor::zeros(maps.shape().to_vec());
    let mut total = T::zero();
    let x_count = h * w.saturating_sub(1);
    let y_count = h.saturating_sub(1) * w;
    let scale = T::one() / T::from_usize(groups * n).unwrap();
    let two = lit::<T>(2.0);
    for p in 0..n * c {
        let a = &maps.data()[p * hw..(p + 1) * hw];
        let mut mx = T::zero();
        let mut my = T::zero();
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    mx = mx + (a[y * w + x + 1] - a[y * w + x]).abs();
                }
                if y + 1 < h {
                    my = my + (a[(y + 1) * w + x] - a[y * w + x]).abs();
                }
            }
        }
        let ix = if x_count > 0 { T::one() / T::from_usize(x_count).unwrap() } else { T::zero() };
        let iy = if y_count > 0 { T::one() / T::from_usize(y_count).unwrap() } else { T::zero() };
        let m = mx * ix + my * iy;
        total = total + m * m;
        let outer = two * m * scale;
        let g = &mut grad.data_mut()[p * hw..(p + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    let s = outer * ix * sign(a[y * w + x + 1] - a[y * w + x]);
                    g[y * w + x + 1] = g[y * w + x + 1] + s;
                    g[y * w + x] = g[y * w + x] - s;
                }
                if y + 1 < h {
                    let s = outer * iy * sign(a[(y + 1) * w + x] - a[y * w + x]);
                    g[(y + 1) * w + x] = g[(y + 1) * w + x] + s;
                    g[y * w + x] = g[y * w + x] - s;
                }
            }
        }
    }
    Ok((total * scale, grad))
}

/// For each map group and channel, `(mean |dx| + mean |dy|)^2` with forward differences;
/// summed over channels and averaged over groups.
pub fn illumination_smoothness<T: Real>(maps: &CurveParamMaps<T>) -> Result<T> {
    illumination_smoothness_grad(maps.maps()).map(|r| r.0)
}

/// Weighted total of the four losses.
pub fn total_loss<T: Real>(
    input: &Tensor<T>,
    enhanced: &Tensor<T>,
    maps: &CurveParamMaps<T>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let f = |v: T| v.to_f64().unwrap();
    let spatial = f(spatial_consistency(input, enhanced, cfg.spatial_region)?);
    let exposure = f(exposure_control(enhanced, cfg.exposure_level, cfg.exposure_region)?);
    let color = f(color_constancy(enhanced)?);
    let smoothness = f(illumination_smoothness(maps)?);
    Ok(combine(spatial, exposure, color, smoothness, cfg))
}

pub(crate) fn combine(spatial: f64, exposure: f64, color: f64, smoothness: f64, cfg: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        spatial,
        exposure,
        color,
        smoothness,
        total: spatial + exposure + cfg.color_weight * color + cfg.smoothness_weight * smoothness,
    }
}

pub fn spatial_consistency_on<T: Real>(tape: &mut Tape<T>, input: Var, enhanced: Var, region: usize) -> Result<Var> {
    let value = spatial_consistency(tape.value(input), tape.value(enhanced), region)?;
    Ok(tape.record(
        "spatial_consistency",
        Tensor::scalar(value),
        &[input, enhanced],
        Box::new(move |ctx| {
            let (_, mut gi, mut ge) = spatial_consistency_grad(ctx.inputs[0], ctx.inputs[1], region)?;
            let g = ctx.grad.data()[0];
            gi.scale(g);
            ge.scale(g);
            Ok(vec![Some(gi), Some(ge)])
        }),
    ))
}

pub fn exposure_control_on<T: Real>(tape: &mut Tape<T>, enhanced: Var, level: f64, region: usize) -> Result<Var> {
    let value = exposure_control(tape.value(enhanced), level, region)?;
    Ok(tape.record(
        "exposure_control",
        Tensor::scalar(value),
        &[enhanced],
        Box::new(move |ctx| {
            let (_, mut g) = exposure_control_grad(ctx.inputs[0], level, region)?;
            g.scale(ctx.grad.data()[0]);
            Ok(vec![Some(g)])
        }),
    ))
}

pub fn color_constancy_on<T: Real>(tape: &mut Tape<T>, enhanced: Var) -> Result<Var> {
    let value = color_constancy(tape.value(enhanced))?;
    Ok(tape.record(
        "color_constancy",
        Tensor::scalar(value),
        &[enhanced],
        Box::new(|ctx| {
            let (_, mut g) = color_constancy_grad(ctx.inputs[0])?;
            g.scale(ctx.grad.data()[0]);
            Ok(vec![Some(g)])
        }),
    ))
}

pub fn illumination_smoothness_on<T: Real>(tape: &mut Tape<T>, maps: Var) -> Result<Var> {
    let (value, _) = illumination_smoothness_grad(tape.value(maps))?;
    Ok(tape.record(
        "illumination_smoothness",
        Tensor::scalar(value),
        &[maps],
        Box::new(|ctx| {
            let (_, mut g) = illumination_smoothness_grad(ctx.inputs[0])?;
            g.scale(ctx.grad.data()[0]);
            Ok(vec![Some(g)])
        }),
    ))
}

/// Tape handles of every loss component.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub spatial: Var,
    pub exposure: Var,
    pub color: Var,
    pub smoothness: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, tape: &Tape<T>, cfg: &LossConfig) -> LossBreakdown {
        let f = |v: Var| tape.value(v).data()[0].to_f64().unwrap();
        let mut b = combine(f(self.spatial), f(self.exposure), f(self.color), f(self.smoothness), cfg);
        b.total = f(self.total);
        b
    }
}

pub fn total_loss_on<T: Real>(
    tape: &mut Tape<T>,
    input: Var,
    enhanced: Var,
    maps: Var,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let spatial = spatial_consistency_on(tape, input, enhanced, cfg.spatial_region)?;
    let exposure = exposure_control_on(tape, enhanced, cfg.exposure_level, cfg.exposure_region)?;
    let color = color_constancy_on(tape, enhanced)?;
    let smoothness = illumination_smoothness_on(tape, maps)?;
    let total = tape.weighted_sum(&[
        (spatial, T::one()),
        (exposure, T::one()),
        (color, lit(cfg.color_weight)),
        (smoothness, lit(cfg.smoothness_weight)),
    ])?;
    Ok(LossVars {
        spatial,
        exposure,
        color,
        smoothness,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(super) fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![1, 3, h, w], |_| rng.random_range(0.0..1.0))
    }

    /// Image whose `k x k` regions have the given intensities (same value in every channel).
    fn from_grid(grid: &[&[f64]], k: usize) -> Tensor<f64> {
        let (gh, gw) = (grid.len(), grid[0].len());
        let (h, w) = (gh * k, gw * k);
        Tensor::from_fn(vec![1, 3, h, w], |i| {
            let p = i % (h * w);
            grid[p / w / k][p % w / k]
        })
    }

    #[test]
    fn spatial_fixed_points_and_hand_value() {
        let x = random_image(8, 12, 1);
        assert_eq!(spatial_consistency(&x, &x, 4).unwrap(), 0.0);
        let a = Tensor::full(vec![1, 3, 8, 8], 0.2);
        let b = Tensor::full(vec![1, 3, 8, 8], 0.7);
        assert_eq!(spatial_consistency(&a, &b, 4).unwrap(), 0.0);
        let input = from_grid(&[&[0.0, 0.0], &[0.0, 0.0]], 4);
        let enhanced = from_grid(&[&[0.0, 1.0], &[0.0, 0.0]], 4);
        assert_eq!(spatial_consistency(&input, &enhanced, 4).unwrap(), 0.5);
    }

    /// Independent enumeration of every region and each of its in-bounds neighbours.
    fn spatial_by_enumeration(y: &[Vec<f64>], i: &[Vec<f64>]) -> f64 {
        let (gh, gw) = (y.len() as isize, y[0].len() as isize);
        let (mut sum, mut count) = (0.0, 0);
        for r in 0..gh {
            for c in 0..gw {
                for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= gh || nc >= gw {
                        continue;
                    }
                    let (r, c, nr, nc) = (r as usize, c as usize, nr as usize, nc as usize);
                    let t = (y[r][c] - y[nr][nc]).abs() - (i[r][c] - i[nr][nc]).abs();
                    sum += t * t;
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    #[test]
    fn spatial_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let yg: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random()).collect()).collect();
        let ig: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random()).collect()).collect();
        let yr: Vec<&[f64]> = yg.iter().map(|r| r.as_slice()).collect();
        let ir: Vec<&[f64]> = ig.iter().map(|r| r.as_slice()).collect();
        let got = spatial_consistency(&from_grid(&ir, 4), &from_grid(&yr, 4), 4).unwrap();
        assert!((got - spatial_by_enumeration(&yg, &ig)).abs() < 1e-12);
    }

    #[test]
    fn spatial_is_symmetric() {
        let a = random_image(8, 8, 3);
        let b = random_image(8, 8, 4);
        let ab = spatial_consistency(&a, &b, 2).unwrap();
        let ba = spatial_consistency(&b, &a, 2).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert!(spatial_consistency(&a, &random_image(8, 4, 5), 2).is_err());
    }

    #[test]
    fn exposure_values() {
        assert_eq!(exposure_control(&Tensor::full(vec![1, 3, 32, 32], 0.6), 0.6, 16).unwrap(), 0.0);
        let v: f64 = exposure_control(&Tensor::full(vec![1, 3, 32, 48], 0.1), 0.6, 16).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!(exposure_control(&Tensor::full(vec![1, 3, 15, 32], 0.1), 0.6, 16).is_err());
    }

    #[test]
    fn exposure_is_piecewise_linear_in_a_constant_level() {
        for v in [0.0, 0.2, 0.55, 0.6, 0.7, 1.0] {
            let got = exposure_control(&Tensor::full(vec![1, 3, 16, 16], v), 0.6, 16).unwrap();
            assert!((got - (v - 0.6f64).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn color_values() {
        let gray = Tensor::from_fn(vec![1, 3, 4, 4], |i| (i % 16) as f64 / 16.0);
        assert_eq!(color_constancy(&gray).unwrap(), 0.0);
        let mut x = Tensor::<f64>::zeros(vec![1, 3, 2, 2]);
        for (ch, v) in [0.5, 0.3, 0.1].iter().enumerate() {
            x.data_mut()[ch * 4..ch * 4 + 4].fill(*v);
        }
        assert!((color_constancy(&x).unwrap() - 0.24).abs() < 1e-12);
        assert!(color_constancy(&Tensor::<f64>::zeros(vec![1, 4, 2, 2])).is_err());
    }

    #[test]
    fn smoothness_values() {
        let c = CurveParamMaps::new(Tensor::full(vec![1, 24, 5, 5], 0.3), 8, false).unwrap();
        assert_eq!(illumination_smoothness(&c).unwrap(), 0.0);
        let mut m = Tensor::zeros(vec![1, 3, 2, 2]);
        m.data_mut()[..4].copy_from_slice(&[0.0, 1.0, 0.0, 1.0]);
        let maps = CurveParamMaps::new(m, 8, true).unwrap();
        assert_eq!(illumination_smoothness(&maps).unwrap(), 1.0);
        let single = CurveParamMaps::new(Tensor::full(vec![1, 3, 1, 1], 0.5), 1, true).unwrap();
        assert_eq!(illumination_smoothness(&single).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_ignores_constant_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = Tensor::from_fn(vec![1, 6, 4, 4], |_| rng.random_range(-0.5..0.5));
        let shifted = m.map(|v| v + 0.25);
        let a: f64 = illumination_smoothness_grad(&m).unwrap().0;
        let b = illumination_smoothness_grad(&shifted).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn total_is_linear_combination() {
        let input = random_image(16, 16, 7);
        let enhanced = random_image(16, 16, 8);
        let maps = CurveParamMaps::new(
            random_image(16, 16, 9).map(|v| v * 2.0 - 1.0),
            1,
            false,
        )
        .unwrap();
        let cfg = LossConfig::default();
        let b = total_loss(&input, &enhanced, &maps, &cfg).unwrap();
        let want = b.spatial + b.exposure + 0.5 * b.color + 20.0 * b.smoothness;
        assert!((b.total - want).abs() < 1e-12);
        assert!(b.spatial >= 0.0 && b.exposure >= 0.0 && b.color >= 0.0 && b.smoothness >= 0.0);
    }

    #[test]
    fn batch_reduction_is_a_mean() {
        let a = random_image(8, 8, 10);
        let b = random_image(8, 8, 11);
        let batch = Tensor::new(vec![2, 3, 8, 8], [a.data(), b.data()].concat()).unwrap();
        let joint = color_constancy(&batch).unwrap();
        let separate = (color_constancy(&a).unwrap() + color_constancy(&b).unwrap()) / 2.0;
        assert!((joint - separate).abs() < 1e-15);
        let joint = exposure_control(&batch, 0.6, 4).unwrap();
        let separate = (exposure_control(&a, 0.6, 4).unwrap() + exposure_control(&b, 0.6, 4).unwrap()) / 2.0;
        assert!((joint - separate).abs() < 1e-15);
    }

    #[test]
    fn each_loss_matches_finite_differences() {
        let input = random_image(8, 8, 12);
        let enhanced = random_image(8, 8, 13);
        let maps = random_image(8, 8, 14).map(|v| v * 1.6 - 0.8);
        let opts = GradCheckOptions::default();
        let checks: Vec<(&str, f64)> = vec![
            (
                "spatial",
                grad_check(|t, v| spatial_consistency_on(t, v[0], v[1], 2), &[input.clone(), enhanced.clone()], &opts)
                    .unwrap()
                    .max_rel_error,
            ),
            (
                "exposure",
                grad_check(|t, v| exposure_control_on(t, v[0], 0.6, 4), &[enhanced.clone()], &opts)
                    .unwrap()
                    .max_rel_error,
            ),
            (
                "color",
                grad_check(|t, v| color_constancy_on(t, v[0]), &[enhanced.clone()], &opts)
                    .unwrap()
                    .max_rel_error,
            ),
            (
                "smoothness",
                grad_check(|t, v| illumination_smoothness_on(t, v[0]), &[maps.clone()], &opts)
                    .unwrap()
                    .max_rel_error,
            ),
        ];
        for (name, err) in checks {
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}

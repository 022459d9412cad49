//! Full-reference quality metrics. PSNR and MAE use the 8-bit scale; SSIM works on `[0, 1]`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image_io::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// Mean squared error on the 8-bit scale.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape("mse", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x as f64 - y as f64) * 255.0).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(255^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / m).log10()
    })
}

/// Mean absolute error on the 8-bit scale.
pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    same_shape("mae", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(255.0 * sum / a.data().len() as f64)
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data().chunks_exact(3).map(|px| px[c] as f64).collect()
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), averaged over every
/// fully overlapping window position and over the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("{w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &taps));
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2);
            acc += num / den;
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

pub fn score(pred: &Image, truth: &Image) -> Result<Scores> {
    Ok(Scores {
        psnr: psnr(pred, truth)?,
        ssim: ssim(pred, truth)?,
        mae: mae(pred, truth)?,
    })
}

/// Per-image scores plus their arithmetic means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, Scores)>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, scores: Scores) {
        self.rows.push((name.into(), scores));
    }

    pub fn mean(&self) -> Option<Scores> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let sum = |f: fn(&Scores) -> f64| self.rows.iter().map(|(_, s)| f(s)).sum::<f64>() / n;
        Some(Scores {
            psnr: sum(|s| s.psnr),
            ssim: sum(|s| s.ssim),
            mae: sum(|s| s.mae),
        })
    }

    /// `filename,psnr,ssim,mae` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filename,psnr,ssim,mae\n");
        let mut line = |name: &str, s: &Scores| {
            let _ = writeln!(out, "{name},{},{},{}", s.psnr, s.ssim, s.mae);
        };
        for (name, s) in &self.rows {
            line(name, s);
        }
        if let Some(m) = self.mean() {
            line("mean", &m);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn psnr_closed_form() {
        let a = Image::from_fn(4, 4, |_, _, _| 0.2).unwrap();
        let b = Image::from_fn(4, 4, |_, _, _| 0.2 + 1.0 / 255.0).unwrap();
        assert!((psnr(&a, &b).unwrap() - 10.0 * 65025f64.log10()).abs() < 1e-4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mae_closed_form() {
        let a = Image::from_fn(4, 4, |_, _, _| 0.25).unwrap();
        let b = Image::from_fn(4, 4, |_, _, _| 0.75).unwrap();
        assert_eq!(mae(&a, &b).unwrap(), 127.5);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise(20, 16, 1);
        let b = noise(20, 16, 2);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&noise(10, 10, 1), &noise(10, 10, 2)).is_err());
    }

    #[test]
    fn report_mean_row() {
        let mut r = MetricReport::default();
        r.push("a.png", Scores { psnr: 10.0, ssim: 0.5, mae: 2.0 });
        r.push("b.png", Scores { psnr: 20.0, ssim: 0.7, mae: 4.0 });
        let csv = r.to_csv();
        assert_eq!(csv.lines().last().unwrap(), "mean,15,0.6,3");
        assert_eq!(csv.lines().count(), 4);
    }
}

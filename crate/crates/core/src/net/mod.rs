//! Curve-estimation networks.
//!
//! Both variants are plain stacks of 3x3 layers at full operating resolution, with
//! symmetric skip concatenations in the second half and a tanh head. The plain variant
//! uses ordinary convolutions and predicts one 3-channel map per iteration; the
//! separable variant uses depthwise + pointwise layers and predicts one shared map.

mod checkpoint;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::curve::{apply_curves_graph, CurveGraph, CurveParamMaps};
use crate::error::{Error, Result};
use crate::tensor::{Eager, Graph, Real, Tensor};

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint, CHECKPOINT_VERSION};

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Ordinary 3x3 convolutions, per-iteration maps.
    Plain,
    /// Depthwise-separable convolutions, one map shared by all iterations.
    Separable,
}

impl Variant {
    pub fn tag(self) -> u8 {
        match self {
            Variant::Plain => 0,
            Variant::Separable => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Variant::Plain),
            1 => Some(Variant::Separable),
            _ => None,
        }
    }

    pub fn shares_maps(self) -> bool {
        self == Variant::Separable
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Separable => "dsc",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain" => Ok(Variant::Plain),
            "dsc" | "separable" => Ok(Variant::Separable),
            other => Err(Error::Config(format!("unknown variant {other:?} (expected plain or dsc)"))),
        }
    }
}

/// Architecture knobs: `layers` convolutional layers of `features` channels and
/// `iterations` curve steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub variant: Variant,
    pub layers: usize,
    pub features: usize,
    pub iterations: usize,
    /// The network runs on the input shrunk by this factor; curves are applied at full size.
    pub downsample: usize,
}

impl NetConfig {
    pub fn plain() -> Self {
        Self {
            variant: Variant::Plain,
            layers: 7,
            features: 32,
            iterations: 8,
            downsample: 1,
        }
    }

    pub fn separable() -> Self {
        Self {
            variant: Variant::Separable,
            downsample: 12,
            ..Self::plain()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Plain => Self::plain(),
            Variant::Separable => Self::separable(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.layers % 2 == 0 {
            return bad(format!(
                "layers must be odd so skips pair up symmetrically, got {}",
                self.layers
            ));
        }
        if self.features == 0 {
            return bad("features must be positive".into());
        }
        if self.iterations == 0 || self.iterations > u8::MAX as usize {
            return bad(format!("iterations must be in 1..=255, got {}", self.iterations));
        }
        if self.downsample == 0 || self.downsample > u16::MAX as usize {
            return bad(format!("downsample must be in 1..=65535, got {}", self.downsample));
        }
        Ok(())
    }

    /// Number of output maps: `3 * iterations`, or 3 when maps are shared.
    pub fn output_channels(&self) -> usize {
        if self.variant.shares_maps() {
            3
        } else {
            3 * self.iterations
        }
    }

    /// Last layer of the plain feed-forward half; later layers take a skip input.
    fn chain_end(&self) -> usize {
        (self.layers - 1) / 2
    }

    /// `(in, out)` channels of every layer.
    pub fn channel_plan(&self) -> Vec<(usize, usize)> {
        let f = self.features;
        (0..self.layers)
            .map(|i| {
                let cin = if i == 0 {
                    3
                } else if i <= self.chain_end() {
                    f
                } else {
                    2 * f
                };
                let cout = if i + 1 == self.layers { self.output_channels() } else { f };
                (cin, cout)
            })
            .collect()
    }

    /// For layer `i`, the index of the earlier layer whose output is concatenated on.
    pub fn skip_source(&self, i: usize) -> Option<usize> {
        (i > self.chain_end() && i < self.layers).then(|| self.layers - 1 - i)
    }

    /// Shapes of all parameter tensors in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for (cin, cout) in self.channel_plan() {
            match self.variant {
                Variant::Plain => {
                    shapes.push(vec![cout, cin, 3, 3]);
                    shapes.push(vec![cout]);
                }
                Variant::Separable => {
                    shapes.push(vec![cin, 1, 3, 3]);
                    shapes.push(vec![cin]);
                    shapes.push(vec![cout, cin, 1, 1]);
                    shapes.push(vec![cout]);
                }
            }
        }
        shapes
    }

    /// Operating resolution of the network for an `h x w` input.
    pub fn operating_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let d = self.downsample;
        if h < d || w < d || h == 0 || w == 0 {
            return Err(Error::InputTooSmall {
                height: h,
                width: w,
                factor: d,
            });
        }
        Ok((h / d, w / d))
    }

    /// Multiply-accumulates for one `h x w` image: convolutions at the operating
    /// resolution (biases excluded) plus two per pixel, channel and curve iteration
    /// at full resolution.
    pub fn flops(&self, h: usize, w: usize) -> Result<u64> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("flops", format!("dimensions must be positive, got {w}x{h}")));
        }
        let (oh, ow) = self.operating_size(h, w)?;
        let per_pixel: u64 = self
            .channel_plan()
            .iter()
            .map(|&(cin, cout)| {
                let (cin, cout) = (cin as u64, cout as u64);
                match self.variant {
                    Variant::Plain => 9 * cin * cout,
                    Variant::Separable => 9 * cin + cin * cout,
                }
            })
            .sum();
        let network = per_pixel * (oh * ow) as u64;
        let curves = 2 * 3 * self.iterations as u64 * (h * w) as u64;
        Ok(network + curves)
    }
}

/// Result of [`Model::enhance_with_maps`].
#[derive(Debug, Clone)]
pub struct Enhanced<T> {
    pub image: Tensor<T>,
    /// Maps at the network's operating resolution.
    pub maps: CurveParamMaps<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: NetConfig,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Model<T> {
    /// Gaussian weights with the standard deviation [`INIT_STD`], zero biases.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        Self::build_with_std(config, seed, INIT_STD)
    }

    pub fn build_with_std(config: NetConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid("build", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.param_shapes();
        let params = shapes
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    Tensor::from_fn(shape, |_| T::from_f64(normal.sample(&mut rng)).unwrap())
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Wraps existing parameter tensors, checking them against `config`.
    pub fn from_params(config: NetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::shape(
                "model",
                format!("{} parameter tensors, expected {}", params.len(), shapes.len()),
            ));
        }
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(Error::shape(
                    "model",
                    format!("parameter {i} has shape {:?}, expected {s:?}", p.shape()),
                ));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn iterations(&self) -> usize {
        self.config.iterations
    }

    pub fn downsample(&self) -> usize {
        self.config.downsample
    }

    pub fn set_downsample(&mut self, d: usize) -> Result<()> {
        let cfg = NetConfig {
            downsample: d,
            ..self.config
        };
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flops(&self, h: usize, w: usize) -> Result<u64> {
        self.config.flops(h, w)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Zeroes the head so every map is 0 and enhancement is the identity.
    pub fn zero_head(&mut self) {
        let per_layer = self.params.len() / self.config.layers;
        let start = self.params.len() - per_layer;
        for p in &mut self.params[start..] {
            p.data_mut().fill(T::zero());
        }
    }

    /// Registers every parameter with `g`.
    pub fn bind<G: Graph<T>>(&self, g: &mut G) -> Vec<G::Value> {
        self.params.iter().map(|p| g.parameter(p)).collect()
    }

    /// Raw curve maps `[N, out, h, w]` in `(-1, 1)` for `img` at its own resolution.
    pub fn forward_graph<G: Graph<T>>(&self, g: &mut G, params: &[G::Value], img: &G::Value) -> Result<G::Value> {
        let c = g.tensor(img).dims4()?.1;
        if c != 3 {
            return Err(Error::shape("forward", format!("input has {c} channels, expected 3")));
        }
        let per_layer = match self.config.variant {
            Variant::Plain => 2,
            Variant::Separable => 4,
        };
        let mut outs: Vec<G::Value> = Vec::with_capacity(self.config.layers);
        for i in 0..self.config.layers {
            let x = match (i, self.config.skip_source(i)) {
                (0, _) => img.clone(),
                (_, None) => outs[i - 1].clone(),
                (_, Some(j)) => g.concat_channels(&outs[i - 1], &outs[j])?,
            };
            let p = &params[i * per_layer..(i + 1) * per_layer];
            let y = match self.config.variant {
                Variant::Plain => g.conv2d(&x, &p[0], &p[1])?,
                Variant::Separable => {
                    let d = g.depthwise_conv2d(&x, &p[0], &p[1])?;
                    g.pointwise_conv2d(&d, &p[2], &p[3])?
                }
            };
            let y = if i + 1 == self.config.layers { g.tanh(&y)? } else { g.relu(&y)? };
            outs.push(y);
        }
        Ok(outs.pop().expect("at least one layer"))
    }

    /// Runs the network at `img`'s resolution.
    pub fn forward(&self, img: &Tensor<T>) -> Result<CurveParamMaps<T>> {
        let mut g = Eager;
        let params = self.bind(&mut g);
        let x = g.constant(img.clone());
        let maps = self.forward_graph(&mut g, &params, &x)?;
        drop(params);
        CurveParamMaps::new(unwrap_arc(maps), self.config.iterations, self.config.variant.shares_maps())
    }

    /// Full pipeline on any graph: shrink, estimate, stretch maps back, apply curves.
    /// Returns the enhanced image and the maps at operating resolution.
    pub fn enhance_graph<G: CurveGraph<T>>(
        &self,
        g: &mut G,
        params: &[G::Value],
        img: &G::Value,
        downsample: usize,
    ) -> Result<(G::Value, G::Value)> {
        let (_, _, h, w) = g.tensor(img).dims4()?;
        let cfg = NetConfig {
            downsample,
            ..self.config
        };
        cfg.validate()?;
        let (oh, ow) = cfg.operating_size(h, w)?;
        let shared = self.config.variant.shares_maps();
        if downsample == 1 {
            let maps = self.forward_graph(g, params, img)?;
            let out = apply_curves_graph(g, img, &maps, self.config.iterations, shared)?;
            Ok((out, maps))
        } else {
            let small = g.resize_bilinear(img, oh, ow)?;
            let maps = self.forward_graph(g, params, &small)?;
            let full = g.resize_bilinear(&maps, h, w)?;
            let out = apply_curves_graph(g, img, &full, self.config.iterations, shared)?;
            Ok((out, maps))
        }
    }

    /// Enhances with the model's own downsample factor.
    pub fn enhance(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.enhance_with_maps(img, self.config.downsample)?.image)
    }

    pub fn enhance_with_maps(&self, img: &Tensor<T>, downsample: usize) -> Result<Enhanced<T>> {
        let mut g = Eager;
        let params = self.bind(&mut g);
        let x = g.constant(img.clone());
        let (out, maps) = self.enhance_graph(&mut g, &params, &x, downsample)?;
        drop((params, x));
        Ok(Enhanced {
            image: unwrap_arc(out),
            maps: CurveParamMaps::new(unwrap_arc(maps), self.config.iterations, self.config.variant.shares_maps())?,
        })
    }
}

fn unwrap_arc<T: Clone>(a: Arc<T>) -> T {
    Arc::try_unwrap(a).unwrap_or_else(|a| (*a).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckOptions, Tape};

    fn rand_img(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![n, 3, h, w], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn parameter_counts() {
        let plain = Model::<f32>::build(NetConfig::plain(), 0).unwrap();
        let dsc = Model::<f32>::build(NetConfig::separable(), 0).unwrap();
        assert_eq!(plain.param_count(), 79_416);
        assert_eq!(dsc.param_count(), 10_561);
    }

    #[test]
    fn per_layer_audit() {
        let per_layer: Vec<usize> = NetConfig::plain()
            .channel_plan()
            .iter()
            .map(|&(cin, cout)| cout * cin * 9 + cout)
            .collect();
        assert_eq!(per_layer, [896, 9248, 9248, 9248, 18_464, 18_464, 13_848]);
    }

    #[test]
    fn skip_topology() {
        let cfg = NetConfig::plain();
        let skips: Vec<_> = (0..7).map(|i| cfg.skip_source(i)).collect();
        assert_eq!(skips, [None, None, None, None, Some(2), Some(1), Some(0)]);
        assert!(NetConfig { layers: 6, ..cfg }.validate().is_err());
    }

    #[test]
    fn build_is_seeded() {
        let a = Model::<f32>::build(NetConfig::plain(), 42).unwrap();
        let b = Model::<f32>::build(NetConfig::plain(), 42).unwrap();
        let c = Model::<f32>::build(NetConfig::plain(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for p in a.params() {
            if p.shape().len() == 1 {
                assert!(p.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_statistics() {
        let m = Model::<f64>::build(NetConfig::plain(), 7).unwrap();
        let w: Vec<f64> = m
            .params()
            .iter()
            .filter(|p| p.shape().len() == 4)
            .flat_map(|p| p.data().iter().copied())
            .collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!(mean.abs() < 1e-3, "{mean}");
        assert!((std - 0.02).abs() < 5e-4, "{std}");
    }

    #[test]
    fn forward_shapes_and_range() {
        for cfg in [NetConfig::plain(), NetConfig::separable()] {
            let m = Model::<f64>::build_with_std(cfg, 1, 0.1).unwrap();
            let maps = m.forward(&rand_img(2, 9, 13, 3).cast()).unwrap();
            assert_eq!(maps.maps().shape(), [2, cfg.output_channels(), 9, 13]);
            assert!(maps.maps().data().iter().all(|v| v.abs() < 1.0));
            // saturated heads round to +-1 in single precision but never beyond
            let m = Model::<f32>::build_with_std(cfg, 1, 0.5).unwrap();
            let maps = m.forward(&rand_img(1, 9, 13, 3)).unwrap();
            assert!(maps.maps().data().iter().all(|v| v.abs() <= 1.0));
        }
        let m = Model::<f32>::build(NetConfig::plain(), 1).unwrap();
        assert!(m.forward(&Tensor::zeros(vec![1, 4, 8, 8])).is_err());
    }

    #[test]
    fn zero_head_is_identity() {
        for cfg in [NetConfig::plain(), NetConfig::separable()] {
            let mut m = Model::<f32>::build(cfg, 5).unwrap();
            m.zero_head();
            let x = rand_img(1, 24, 36, 9);
            assert_eq!(m.enhance(&x).unwrap(), x);
        }
    }

    #[test]
    fn enhance_stays_in_range_and_downsamples() {
        let m = Model::<f32>::build_with_std(NetConfig::separable(), 2, 0.5).unwrap();
        let x = rand_img(1, 36, 48, 4);
        let out = m.enhance_with_maps(&x, 12).unwrap();
        assert_eq!(out.maps.maps().shape(), [1, 3, 3, 4]);
        assert_eq!(out.image.shape(), x.shape());
        assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(matches!(
            m.enhance(&rand_img(1, 11, 40, 1)),
            Err(Error::InputTooSmall { factor: 12, .. })
        ));
    }

    #[test]
    fn flop_audit() {
        let plain = NetConfig::plain().flops(900, 1200).unwrap() as f64;
        let dsc = NetConfig::separable().flops(900, 1200).unwrap() as f64;
        assert!((plain / 84.99e9 - 1.0).abs() < 0.10, "{plain}");
        assert!((dsc / 0.115e9 - 1.0).abs() < 0.15, "{dsc}");
        assert_eq!(dsc as u64, 10_075 * 7_500 + 48 * 1_080_000);
        assert!(NetConfig::plain().flops(0, 0).is_err());
    }

    #[test]
    fn tape_and_eager_agree() {
        let m = Model::<f32>::build_with_std(NetConfig::separable(), 3, 0.3).unwrap();
        let x = rand_img(1, 24, 24, 2);
        let eager = m.enhance_with_maps(&x, 4).unwrap().image;
        let mut tape = Tape::new();
        let params = m.bind(&mut tape);
        let xv = tape.constant(x);
        let (out, _) = m.enhance_graph(&mut tape, &params, &xv, 4).unwrap();
        assert_eq!(tape.value(out), &eager);
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        for cfg in [NetConfig::plain(), NetConfig::separable()] {
            let cfg = NetConfig { features: 4, downsample: 1, ..cfg };
            let m = Model::<f64>::build_with_std(cfg, 11, 0.4).unwrap();
            let x = rand_img(1, 6, 6, 8).cast::<f64>();
            let weights = rand_img(1, 6, 6, 9).cast::<f64>();
            let report = grad_check(
                |t, v| {
                    let xv = t.constant(x.clone());
                    let (out, _) = m.enhance_graph(t, v, &xv, 1)?;
                    let w = t.constant(weights.clone());
                    let p = t.mul(out, w)?;
                    Ok(t.sum(p))
                },
                m.params(),
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{cfg:?}: {report:?}");
            assert!(report.compared > report.skipped * 10, "{report:?}");
        }
    }
}

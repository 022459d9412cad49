//! Zero-reference training: no target images, only the four non-reference losses.
//!
//! Train on a mix of under- and over-exposed images. With dark images alone the model
//! learns to brighten everything and over-enhances regions that were already well lit.

mod adam;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::error::{Error, Result};
use crate::image_io::{self, batch_tensor, Image};
use crate::losses::{total_loss, total_loss_on, LossBreakdown, LossConfig};
use crate::net::{self, Model, NetConfig};
use crate::parallel::map_ordered;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    /// Images are resized to `train_size x train_size`.
    pub train_size: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub val_fraction: f64,
    /// Downsample factor used inside the training pipeline (the model's own factor
    /// applies at inference).
    pub downsample: usize,
    /// Rescale the global gradient norm to at most this value.
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many epochs into `checkpoint_dir`.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            train_size: 512,
            batch: 8,
            lr: 1e-4,
            epochs: 100,
            max_iterations: None,
            seed: 0,
            net: NetConfig::plain(),
            loss: LossConfig::default(),
            val_fraction: 0.2,
            downsample: 1,
            grad_clip: None,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if self.train_size == 0 {
            return bad("train_size must be positive".into());
        }
        if self.downsample == 0 || self.train_size < self.downsample {
            return bad(format!(
                "training downsample {} does not fit {}x{} images",
                self.downsample, self.train_size, self.train_size
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        self.net.validate()?;
        self.loss.validate()
    }
}

/// Images decoded from a directory, in file-name order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Image>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Decodes every PNG/PPM in `dir` and resizes it to `size x size`.
///
/// Undecodable files are logged and skipped; an empty result is an error.
pub fn load_dataset(dir: &Path, size: usize) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && image_io::is_supported(p))
        .collect();
    paths.sort();
    let decoded = map_ordered(&paths, |p| image_io::load(p).and_then(|img| img.resize(size, size)));
    let mut out = Dataset {
        names: Vec::new(),
        images: Vec::new(),
        skipped: Vec::new(),
    };
    for (path, result) in paths.into_iter().zip(decoded) {
        match result {
            Ok(img) => {
                out.names.push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
                out.images.push(img);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                out.skipped.push((path, e.to_string()));
            }
        }
    }
    if out.images.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    Ok(out)
}

/// Seeded `(train, validation)` index split with `round(n * val_fraction)` held out,
/// always leaving at least one training image. Both lists are sorted.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Per-iteration component losses and per-epoch validation totals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub iterations: Vec<(usize, LossBreakdown)>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Iteration count when the epoch finished.
    pub last_iteration: usize,
    pub val_total: f64,
}

impl TrainLog {
    pub fn iteration_line(iteration: usize, b: &LossBreakdown) -> String {
        format!(
            "iter,{iteration},L_spa,{},L_exp,{},L_col,{},L_tv,{},total,{}",
            b.spatial, b.exposure, b.color, b.smoothness, b.total
        )
    }

    pub fn epoch_line(epoch: usize, val_total: f64) -> String {
        format!("epoch,{epoch},val_total,{val_total}")
    }

    /// Trailing moving average of the total loss; entry `i` averages iterations
    /// `i + 1 - window ..= i` (fewer at the start).
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let totals: Vec<f64> = self.iterations.iter().map(|(_, b)| b.total).collect();
        (0..totals.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(window.max(1));
                totals[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }

    /// The log as written during training.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut epochs = self.epochs.iter().peekable();
        for (i, b) in &self.iterations {
            let _ = writeln!(out, "{}", Self::iteration_line(*i, b));
            while let Some(e) = epochs.next_if(|e| e.last_iteration <= *i) {
                let _ = writeln!(out, "{}", Self::epoch_line(e.epoch, e.val_total));
            }
        }
        for e in epochs {
            let _ = writeln!(out, "{}", Self::epoch_line(e.epoch, e.val_total));
        }
        out
    }
}

/// Mean losses of `model` over `images`, without touching its weights.
pub fn validate(model: &Model<f32>, images: &[Image], loss: &LossConfig, downsample: usize) -> Result<LossBreakdown> {
    if images.is_empty() {
        return Err(Error::invalid("validate", "validation set is empty"));
    }
    let parts = map_ordered(images, |img| -> Result<LossBreakdown> {
        let x = img.to_tensor();
        let out = model.enhance_with_maps(&x, downsample)?;
        total_loss(&x, &out.image, &out.maps, loss)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&parts))
}

/// Owns the model and optimiser state for the duration of training.
#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    adam: AdamState<f32>,
    iteration: usize,
    epoch: usize,
    shuffle: ChaCha8Rng,
    log: TrainLog,
    nan_gradient_at: Option<usize>,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: Model<f32>) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params());
        let shuffle = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
        Ok(Self {
            config,
            model,
            adam,
            iteration: 0,
            epoch: 0,
            shuffle,
            log: TrainLog::default(),
            nan_gradient_at: None,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Fault injection: poison the gradient computed at `iteration` (1-based).
    #[doc(hidden)]
    pub fn inject_nan_gradient_at(&mut self, iteration: usize) {
        self.nan_gradient_at = Some(iteration);
    }

    /// Loss and parameter gradients of one image.
    fn sample_gradients(&self, img: &Image) -> Result<(LossBreakdown, Vec<Tensor<f32>>)> {
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape);
        let x = tape.constant(batch_tensor(&[img])?);
        let (out, maps) = self.model.enhance_graph(&mut tape, &params, &x, self.config.downsample)?;
        let vars = total_loss_on(&mut tape, x, out, maps, &self.config.loss)?;
        let breakdown = vars.breakdown(&tape, &self.config.loss);
        if !breakdown.is_finite() {
            return Ok((breakdown, Vec::new()));
        }
        let mut grads = tape.backward(vars.total)?;
        let grads = params
            .iter()
            .zip(self.model.params())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect();
        Ok((breakdown, grads))
    }

    /// One optimiser update on `batch`; all losses are batch means.
    pub fn step(&mut self, batch: &[&Image]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::invalid("train step", "empty batch"));
        }
        let iteration = self.iteration + 1;
        let results = map_ordered(batch, |img| self.sample_gradients(img));
        let mut losses = Vec::with_capacity(batch.len());
        let mut total: Option<Vec<Tensor<f32>>> = None;
        let scale = 1.0 / batch.len() as f32;
        for r in results {
            let (b, grads) = r?;
            losses.push(b);
            if grads.is_empty() {
                continue;
            }
            match &mut total {
                None => {
                    total = Some(
                        grads
                            .into_iter()
                            .map(|mut g| {
                                g.scale(scale);
                                g
                            })
                            .collect(),
                    )
                }
                Some(acc) => {
                    for (a, mut g) in acc.iter_mut().zip(grads) {
                        g.scale(scale);
                        a.add_assign(&g)?;
                    }
                }
            }
        }
        let breakdown = LossBreakdown::mean(&losses);
        if !breakdown.is_finite() || losses.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration,
                breakdown: breakdown.to_string(),
            });
        }
        let mut grads = total.expect("finite losses produce gradients");
        if self.nan_gradient_at == Some(iteration) {
            grads[0].data_mut()[0] = f32::NAN;
        }
        if let Some(tensor) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::NonFiniteGradient { iteration, tensor });
        }
        if let Some(clip) = self.config.grad_clip {
            let norm = grads
                .iter()
                .flat_map(|g| g.data().iter())
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let s = (clip / norm) as f32;
                grads.iter_mut().for_each(|g| g.scale(s));
            }
        }
        adam_step(self.model.params_mut(), &grads, &mut self.adam, self.config.lr)?;
        if let Some(bad) = self.model.params().iter().position(|p| !p.all_finite()) {
            return Err(Error::NonFiniteGradient { iteration, tensor: bad });
        }
        self.iteration = iteration;
        self.log.iterations.push((iteration, breakdown));
        Ok(breakdown)
    }

    fn done(&self) -> bool {
        self.epoch >= self.config.epochs || self.config.max_iterations.is_some_and(|m| self.iteration >= m)
    }

    /// Runs epochs of seeded shuffled batches until the epoch or iteration budget is
    /// spent. Each log line is passed to `sink` as it is produced.
    pub fn fit(&mut self, train: &[Image], validation: &[Image], sink: &mut dyn FnMut(&str)) -> Result<()> {
        if train.is_empty() {
            return Err(Error::invalid("train", "training set is empty"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        while !self.done() {
            order.shuffle(&mut self.shuffle);
            for chunk in order.chunks(self.config.batch) {
                if self.done() {
                    break;
                }
                let batch: Vec<&Image> = chunk.iter().map(|&i| &train[i]).collect();
                let b = self.step(&batch)?;
                sink(&TrainLog::iteration_line(self.iteration, &b));
            }
            self.epoch += 1;
            if !validation.is_empty() {
                let v = validate(&self.model, validation, &self.config.loss, self.config.downsample)?;
                self.log.epochs.push(EpochRecord {
                    epoch: self.epoch,
                    last_iteration: self.iteration,
                    val_total: v.total,
                });
                sink(&TrainLog::epoch_line(self.epoch, v.total));
            }
            if let (Some(every), Some(dir)) = (self.config.checkpoint_every, &self.config.checkpoint_dir) {
                if self.epoch % every == 0 {
                    std::fs::create_dir_all(dir)?;
                    net::save(&self.model, dir.join(format!("epoch_{:04}.zdce", self.epoch)))?;
                }
            }
        }
        Ok(())
    }
}

/// Everything a training run produces.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: TrainLog,
    pub dataset: Dataset,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Loads `cfg.data_dir`, builds a model from `cfg.seed` and trains it.
pub fn train(cfg: &TrainConfig, sink: &mut dyn FnMut(&str)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.data_dir, cfg.train_size)?;
    train_on(cfg, dataset, sink)
}

/// [`train`] on images already in memory.
pub fn train_on(cfg: &TrainConfig, dataset: Dataset, sink: &mut dyn FnMut(&str)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_indices(dataset.images.len(), cfg.val_fraction, cfg.seed);
    let pick = |idx: &[usize]| -> Vec<Image> { idx.iter().map(|&i| dataset.images[i].clone()).collect() };
    let (train_set, val_set) = (pick(&train_idx), pick(&val_idx));
    let model = Model::build(cfg.net, cfg.seed)?;
    let mut trainer = Trainer::new(cfg.clone(), model)?;
    trainer.fit(&train_set, &val_set, sink)?;
    let log = trainer.log().clone();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
        dataset,
        train_indices: train_idx,
        validation_indices: val_idx,
    })
}

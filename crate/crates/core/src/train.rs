//! Prompt-regime dataset mixing, loss, schedule, optimizer and the
//! training loop.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use candle_core::{backprop::GradStore, DType, Device, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{ClassMask, DatasetManifest, SampleRecord, TEST, TRAIN};
use crate::error::{Error, Result};
use crate::eval::{run_eval, EvalOptions};
use crate::metrics::MetricsReport;
use crate::model::ops::log_softmax_last;
use crate::model::{load_matching, save_checkpoint, Segmenter};
use crate::pipeline::{PreparedSample, SampleCache};
use crate::prompt::PromptKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluate on the test split after every epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 0.001,
            adam: AdamConfig::default(),
            seed: 0,
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixRegime {
    SinglePrompt,
    PromptVsNoneRatio,
    FourWayMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub regime: MixRegime,
    pub prompt_kind: Option<PromptKind>,
    pub prompted_fraction: f64,
    pub per_kind_fractions: BTreeMap<PromptKind, f64>,
}

impl MixSpec {
    /// Every sample carries `kind` (which may be `None`).
    pub fn single(kind: PromptKind) -> Self {
        Self {
            regime: MixRegime::SinglePrompt,
            prompt_kind: Some(kind),
            prompted_fraction: if kind == PromptKind::None { 0.0 } else { 1.0 },
            per_kind_fractions: BTreeMap::new(),
        }
    }

    /// `prompted_fraction` of samples carry `kind`, the rest none.
    pub fn ratio(kind: PromptKind, prompted_fraction: f64) -> Self {
        Self {
            regime: MixRegime::PromptVsNoneRatio,
            prompt_kind: Some(kind),
            prompted_fraction,
            per_kind_fractions: BTreeMap::new(),
        }
    }

    /// Long scribble, short scribble, box and none at 25% each.
    pub fn four_way() -> Self {
        let per_kind_fractions = [
            PromptKind::None,
            PromptKind::ShortScribble,
            PromptKind::LongScribble,
            PromptKind::Bbox,
        ]
        .into_iter()
        .map(|k| (k, 0.25))
        .collect();
        Self {
            regime: MixRegime::FourWayMix,
            prompt_kind: None,
            prompted_fraction: 0.75,
            per_kind_fractions,
        }
    }

    /// Resolved kind fractions, validated to sum to one.
    pub fn fractions(&self) -> Result<BTreeMap<PromptKind, f64>> {
        let map: BTreeMap<PromptKind, f64> = match self.regime {
            MixRegime::SinglePrompt => {
                let kind = self
                    .prompt_kind
                    .ok_or_else(|| Error::InvalidConfig("single_prompt needs prompt_kind".into()))?;
                BTreeMap::from([(kind, 1.0)])
            }
            MixRegime::PromptVsNoneRatio => {
                let kind = self
                    .prompt_kind
                    .filter(|&k| k != PromptKind::None)
                    .ok_or_else(|| Error::InvalidConfig("ratio regime needs a prompted kind".into()))?;
                let p = self.prompted_fraction;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidConfig(format!("prompted_fraction {p} outside [0, 1]")));
                }
                BTreeMap::from([(kind, p), (PromptKind::None, 1.0 - p)])
            }
            MixRegime::FourWayMix => self.per_kind_fractions.clone(),
        };
        if map.values().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::InvalidConfig("fractions must lie in [0, 1]".into()));
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("fractions sum to {total}, not 1")));
        }
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        self.fractions().map(|_| ())
    }

    /// Kinds with a positive share, in kind order.
    pub fn kinds(&self) -> Result<Vec<PromptKind>> {
        Ok(self
            .fractions()?
            .into_iter()
            .filter(|&(_, f)| f > 0.0)
            .map(|(k, _)| k)
            .collect())
    }
}

/// Largest-remainder apportionment of `n` items; leftover items go to the
/// largest remainders, ties in kind order.
pub fn apportion(fractions: &BTreeMap<PromptKind, f64>, n: usize) -> BTreeMap<PromptKind, usize> {
    let mut counts: BTreeMap<PromptKind, usize> = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&k, &f) in fractions {
        let exact = f * n as f64;
        let floor = exact.floor() as usize;
        counts.insert(k, floor);
        remainders.push((exact - floor as f64, k));
    }
    let assigned: usize = counts.values().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, k) in remainders.into_iter().take(n.saturating_sub(assigned)) {
        *counts.get_mut(&k).expect("present") += 1;
    }
    counts
}

/// Assigns a prompt kind to every training sample. Counts follow
/// [`apportion`]; which sample gets which kind is a seeded shuffle.
pub fn build_mixed_dataset(
    manifest: &DatasetManifest,
    mix: &MixSpec,
    seed: u64,
) -> Result<Vec<(SampleRecord, PromptKind)>> {
    let samples = manifest.split_samples(TRAIN);
    let counts = apportion(&mix.fractions()?, samples.len());
    let mut kinds: Vec<PromptKind> = counts
        .iter()
        .flat_map(|(&k, &c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(samples.into_iter().cloned().zip(kinds).collect())
}

pub fn realized_counts(items: &[(SampleRecord, PromptKind)]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (_, k) in items {
        *out.entry(k.as_str().to_string()).or_insert(0) += 1;
    }
    out
}

/// `base * (1 + cos(pi * t / T)) / 2`.
pub fn cosine_lr(step: usize, total: usize, base: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::OutOfRange(format!("step {step} of {total}")));
    }
    Ok(base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()) / 2.0)
}

/// `(B, H, W, classes)` one-hot targets.
pub fn one_hot(masks: &[ClassMask], classes: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let (h, w) = masks
        .first()
        .map(|m| (m.height(), m.width()))
        .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let mut data = vec![0f32; masks.len() * h * w * classes];
    for (b, m) in masks.iter().enumerate() {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::ShapeMismatch("masks in a batch differ in size".into()));
        }
        for (i, &l) in m.labels().iter().enumerate() {
            data[(b * h * w + i) * classes + l as usize] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (masks.len(), h, w, classes), device)?.to_dtype(dtype)?)
}

/// Mean per-pixel cross-entropy between logits and one-hot targets, both
/// `(B, H, W, classes)`.
pub fn ce_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if logits.dims() != targets.dims() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs targets {:?}",
            logits.dims(),
            targets.dims()
        )));
    }
    let classes = *logits.dims().last().expect("rank 4");
    let pixels = logits.elem_count() / classes;
    let picked = (log_softmax_last(logits)? * targets)?.sum_all()?;
    Ok(picked.affine(-1.0 / pixels as f64, 0.0)?)
}

/// Adam with bias correction, applied to detached copies of the gradients.
pub struct Adam {
    cfg: AdamConfig,
    state: Vec<(Var, Tensor, Tensor)>,
    t: i32,
}

impl Adam {
    pub fn new(vars: Vec<Var>, cfg: AdamConfig) -> Result<Self> {
        let state = vars
            .into_iter()
            .map(|v| {
                let z = v.as_tensor().zeros_like()?;
                Ok((v, z.clone(), z))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, state, t: 0 })
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (var, m, v) in self.state.iter_mut() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            *m = ((&*m * beta1)? + (&g * (1.0 - beta1))?)?;
            *v = ((&*v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let denom = ((&*v / c2)?.sqrt()? + eps)?;
            let update = ((&*m / c1)? / denom)?;
            var.set(&(var.as_detached_tensor() - (update * lr)?)?)?;
        }
        Ok(())
    }
}

/// Owns the model during training.
pub struct Trainer {
    pub model: Segmenter,
    adam: Adam,
    cfg: TrainConfig,
    step: usize,
    total_steps: usize,
}

impl Trainer {
    pub fn new(model: Segmenter, cfg: TrainConfig, total_steps: usize) -> Result<Self> {
        cfg.validate()?;
        if total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be at least 1".into()));
        }
        let vars = model.trainable_vars().into_iter().map(|(_, v)| v).collect();
        let adam = Adam::new(vars, cfg.adam.clone())?;
        Ok(Self {
            model,
            adam,
            cfg,
            step: 0,
            total_steps,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.step.min(self.total_steps), self.total_steps, self.cfg.learning_rate)
    }

    /// One optimizer update on a batch; returns the batch loss.
    pub fn train_step(&mut self, batch: &[&PreparedSample]) -> Result<f64> {
        let images: Vec<_> = batch.iter().map(|s| s.image.clone()).collect();
        let masks: Vec<_> = batch.iter().map(|s| s.mask.clone()).collect();
        let x = self.model.images_to_tensor(&images)?;
        let y = one_hot(&masks, self.model.config.decoder.num_classes, self.model.dtype(), self.model.device())?;
        self.step_tensors(&x, &y)
    }

    pub fn step_tensors(&mut self, images: &Tensor, targets: &Tensor) -> Result<f64> {
        let lr = self.current_lr()?;
        let loss = ce_loss(&self.model.forward(images)?, targets)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                loss: value,
            });
        }
        let grads = loss.backward()?;
        self.adam.step(&grads, lr)?;
        self.step += 1;
        Ok(value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub validation: Vec<MetricsReport>,
    /// Mean over validated prompt kinds of the mean IoU.
    pub validation_mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub n_train: usize,
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub realized_mix: BTreeMap<String, usize>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_mean_iou: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
    pub wall_clock_s: f64,
}

/// Full training run: mixing, `epochs * ceil(N / batch)` steps, per-epoch
/// validation on the test split for every prompt kind in the mix, and
/// checkpoint output when the experiment names a path.
pub fn run_training(
    manifest: &DatasetManifest,
    experiment: &ExperimentConfig,
    cache: &SampleCache,
) -> Result<(Segmenter, RunReport)> {
    experiment.validate()?;
    let started = Instant::now();
    let cfg = &experiment.train;
    let items = build_mixed_dataset(manifest, &experiment.mix, cfg.seed)?;
    let n = items.len();
    let steps_per_epoch = cfg.steps_per_epoch(n);
    let total = cfg.epochs * steps_per_epoch;
    let mut model = Segmenter::new(experiment.model_config(), cfg.seed)?;
    if let Some(path) = &experiment.paths.pretrained {
        if load_matching(&mut model, path, "encoder.")? == 0 {
            return Err(Error::Checkpoint(format!("{} holds no encoder tensors", path.display())));
        }
    }
    let mut trainer = Trainer::new(model, cfg.clone(), total.max(1))?;
    let size = experiment.encoder.image_size;
    let records: Vec<(SampleRecord, PromptKind)> = items
        .iter()
        .map(|(r, k)| (manifest.resolved(r), *k))
        .collect();
    let val_kinds = experiment.mix.kinds()?;
    let has_test = !manifest.split_samples(TEST).is_empty();
    let mut report = RunReport {
        config_hash: experiment.hash()?,
        n_train: n,
        steps: 0,
        steps_per_epoch,
        realized_mix: realized_counts(&items),
        epochs: Vec::new(),
        best_epoch: None,
        best_mean_iou: None,
        checkpoint: experiment.paths.checkpoint.clone(),
        best_checkpoint: None,
        wall_clock_s: 0.0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9)));
        let lr = trainer.current_lr()?;
        let mut losses = Vec::with_capacity(steps_per_epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| cache.get(&records[i].0, records[i].1, size))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PreparedSample> = batch.iter().map(|s| s.as_ref()).collect();
            losses.push(trainer.train_step(&refs)?);
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let mut log = EpochLog {
            epoch: epoch + 1,
            mean_loss,
            learning_rate: lr,
            validation: Vec::new(),
            validation_mean_iou: None,
        };
        if cfg.validate && has_test {
            for &kind in &val_kinds {
                let opts = EvalOptions {
                    split: TEST.to_string(),
                    prompt_kind: kind,
                    corruption: None,
                    batch_size: cfg.batch_size,
                };
                log.validation.push(run_eval(&trainer.model, manifest, &opts, cache)?);
            }
            let scores: Vec<f64> = log.validation.iter().filter_map(|r| r.mean_iou).collect();
            if !scores.is_empty() {
                let m = scores.iter().sum::<f64>() / scores.len() as f64;
                log.validation_mean_iou = Some(m);
                if report.best_mean_iou.is_none_or(|b| m > b) {
                    report.best_mean_iou = Some(m);
                    report.best_epoch = Some(epoch + 1);
                    if let Some(path) = &experiment.paths.checkpoint {
                        let best = path.with_extension("best.safetensors");
                        save_checkpoint(&trainer.model, &best)?;
                        report.best_checkpoint = Some(best);
                    }
                }
            }
        }
        tracing::info!(
            epoch = epoch + 1,
            loss = mean_loss,
            lr,
            val_miou = log.validation_mean_iou,
            "epoch finished"
        );
        report.epochs.push(log);
    }
    report.steps = trainer.steps_taken();
    if let Some(path) = &experiment.paths.checkpoint {
        save_checkpoint(&trainer.model, path)?;
    }
    report.wall_clock_s = started.elapsed().as_secs_f64();
    Ok((trainer.model, report))
}

//! Adversarial objectives, the per-subject training loop, prediction and
//! dataset evaluation.
//!
//! One training step runs the generator (and, when enabled, the memory
//! controller and gate projection) once on a tape, updates the
//! discriminator on real versus detached fake maps, then updates the
//! generator side against the freshly updated discriminator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{order_for_training, parse_key_values, Dataset, Example};
use crate::error::{Error, Result};
use crate::memory::{MemoryController, MemoryState, DEFAULT_SLOTS, EMBED_GRID};
use crate::metrics::{SaliencyMap, Scores};
use crate::networks::{apply_memory_gate, condition_input, from_unit, to_unit, Discriminator, GateProjection, Generator};
use crate::nn::Mode;
use crate::tensor::{AdamState, Module, Scalar, Tape, Tensor, Var};

/// Smoothing inside the adversarial logarithms.
pub const LOG_EPS: f64 = 1e-8;
/// Image channels fed to the networks before label planes.
pub const IMAGE_CHANNELS: usize = 3;

/// Training hyper-parameters and model geometry, stored as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of the L1 content term in the generator loss.
    pub content_weight: f64,
    pub memory_enabled: bool,
    pub conditional_enabled: bool,
    pub seed: u64,
    pub image_size: usize,
    /// Memory slots per subject.
    pub slots: usize,
    /// Channel width of the first network stage; later stages scale from it.
    pub base_width: usize,
    /// Stop after this many optimizer steps in total; 0 means no limit.
    pub max_steps: usize,
    /// Whether evaluation and prediction advance subject memories.
    pub test_memory_updates: bool,
    /// Learning-rate factor for the memory controller and gate projection
    /// relative to the generator.
    pub memory_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-5,
            epochs: 10,
            content_weight: 0.0,
            memory_enabled: true,
            conditional_enabled: true,
            seed: 0,
            image_size: 64,
            slots: DEFAULT_SLOTS,
            base_width: 64,
            max_steps: 0,
            test_memory_updates: true,
            memory_lr_scale: 1.0,
        }
    }
}

/// Keys accepted in a config file, in the order they are written.
pub const CONFIG_KEYS: [&str; 13] = [
    "batch_size",
    "learning_rate",
    "epochs",
    "content_weight",
    "memory_enabled",
    "conditional_enabled",
    "seed",
    "image_size",
    "slots",
    "base_width",
    "max_steps",
    "test_memory_updates",
    "memory_lr_scale",
];

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects on/off, got {value:?}"))),
    }
}

fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value.parse().map_err(|_| Error::Config(format!("`{key}` has invalid value {value:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.content_weight >= 0.0) || !self.content_weight.is_finite() {
            return Err(Error::Config(format!("content_weight must be >= 0, got {}", self.content_weight)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.memory_lr_scale > 0.0) || !self.memory_lr_scale.is_finite() {
            return Err(Error::Config(format!("memory_lr_scale must be positive, got {}", self.memory_lr_scale)));
        }
        if self.slots == 0 || self.base_width == 0 {
            return Err(Error::Config("slots and base_width must be positive".into()));
        }
        if !self.image_size.is_power_of_two() || self.image_size < 8 {
            return Err(Error::Config(format!("image_size must be a power of two >= 8, got {}", self.image_size)));
        }
        if self.memory_enabled && self.image_size < EMBED_GRID {
            return Err(Error::Config(format!("memory needs image_size >= {EMBED_GRID}")));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "content_weight" => self.content_weight = parse_num(key, v)?,
            "memory_enabled" => self.memory_enabled = parse_flag(key, v)?,
            "conditional_enabled" => self.conditional_enabled = parse_flag(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "image_size" => self.image_size = parse_num(key, v)?,
            "slots" => self.slots = parse_num(key, v)?,
            "base_width" => self.base_width = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_num(key, v)?,
            "test_memory_updates" => self.test_memory_updates = parse_flag(key, v)?,
            "memory_lr_scale" => self.memory_lr_scale = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by the pairs in `text`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text, origin)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    /// Canonical text: every key in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let flag = |b: bool| if b { "on" } else { "off" };
        for key in CONFIG_KEYS {
            let value = match key {
                "batch_size" => self.batch_size.to_string(),
                "learning_rate" => format!("{:e}", self.learning_rate),
                "epochs" => self.epochs.to_string(),
                "content_weight" => format!("{}", self.content_weight),
                "memory_enabled" => flag(self.memory_enabled).into(),
                "conditional_enabled" => flag(self.conditional_enabled).into(),
                "seed" => self.seed.to_string(),
                "image_size" => self.image_size.to_string(),
                "slots" => self.slots.to_string(),
                "base_width" => self.base_width.to_string(),
                "max_steps" => self.max_steps.to_string(),
                "test_memory_updates" => flag(self.test_memory_updates).into(),
                "memory_lr_scale" => format!("{}", self.memory_lr_scale),
                _ => unreachable!("every key is listed"),
            };
            writeln!(s, "{key}={value}").expect("writing to a string");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// `-mean[ln(D(real) + eps) + ln(1 - D(fake) + eps)]` over scores `[N]`.
pub fn d_loss<'t, T: Scalar>(d_real: Var<'t, T>, d_fake: Var<'t, T>) -> Result<Var<'t, T>> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::shape("d_loss", &d_real.shape(), &d_fake.shape()));
    }
    let eps = T::of(LOG_EPS);
    let real = d_real.add_scalar(eps).ln();
    let fake = d_fake.scale(-T::one()).add_scalar(T::one() + eps).ln();
    Ok(real.add(fake)?.mean().scale(-T::one()))
}

/// `-mean ln(D(fake) + eps) + weight * mean|fake - real|`; the content term
/// is omitted entirely when `weight` is zero.
pub fn g_loss<'t, T: Scalar>(d_fake: Var<'t, T>, fake: Var<'t, T>, real: Var<'t, T>, weight: f64) -> Result<Var<'t, T>> {
    if fake.shape() != real.shape() {
        return Err(Error::shape("g_loss", &fake.shape(), &real.shape()));
    }
    let adversarial = d_fake.add_scalar(T::of(LOG_EPS)).ln().mean().scale(-T::one());
    if weight == 0.0 {
        return Ok(adversarial);
    }
    adversarial.add(fake.sub(real)?.abs().mean().scale(T::of(weight)))
}

/// Loss values of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Generator, discriminator, optional memory and gate, per-subject memory
/// states, optimizer states and the dropout generator.
#[derive(Debug, Clone)]
pub struct McGan<T: Scalar> {
    pub config: TrainConfig,
    pub n_tasks: usize,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub memory: Option<MemoryController<T>>,
    pub gate: Option<GateProjection<T>>,
    /// Memory state per subject id.
    pub states: BTreeMap<String, MemoryState<T>>,
    pub g_opt: AdamState<T>,
    pub d_opt: AdamState<T>,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed training epochs.
    pub epoch: u64,
    pub rng: ChaCha8Rng,
    next_ordinal: BTreeMap<String, usize>,
}

impl<T: Scalar> McGan<T> {
    /// Fresh networks for `n_tasks` task labels, initialized from `config.seed`.
    pub fn new(config: TrainConfig, n_tasks: usize) -> Result<Self> {
        config.validate()?;
        if n_tasks == 0 {
            return Err(Error::Config("at least one task label is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cond = Self::condition_channels(&config, n_tasks);
        let size = config.image_size;
        let generator = Generator::with_width(size, cond, config.base_width, &mut rng)?;
        let discriminator = Discriminator::with_width(size, cond + 1, config.base_width, &mut rng)?;
        let (memory, gate) = if config.memory_enabled {
            (Some(MemoryController::new("memory", &mut rng)), Some(GateProjection::new(size, &mut rng)))
        } else {
            (None, None)
        };
        Ok(Self {
            g_opt: AdamState::new(config.learning_rate),
            d_opt: AdamState::new(config.learning_rate),
            config,
            n_tasks,
            generator,
            discriminator,
            memory,
            gate,
            states: BTreeMap::new(),
            step: 0,
            epoch: 0,
            rng,
            next_ordinal: BTreeMap::new(),
        })
    }

    fn condition_channels(config: &TrainConfig, n_tasks: usize) -> usize {
        IMAGE_CHANNELS + if config.conditional_enabled { n_tasks } else { 0 }
    }

    /// Zeroes every subject memory and restarts ordinal tracking.
    pub fn reset_streams(&mut self) {
        self.states.values_mut().for_each(MemoryState::reset);
        self.next_ordinal.clear();
    }

    /// Network input `[N, C, H, W]` for images (channel-major `[3 * H * W]`
    /// planes) and their task labels.
    pub fn network_input(&self, images: &[&[f64]], tasks: &[usize]) -> Result<Tensor<T>> {
        let s = self.config.image_size;
        let plane = IMAGE_CHANNELS * s * s;
        let mut data = Vec::with_capacity(images.len() * plane);
        for img in images {
            if img.len() != plane {
                return Err(Error::shape("network input", &[img.len()], &[IMAGE_CHANNELS, s, s]));
            }
            data.extend(img.iter().map(|&v| T::of(v)));
        }
        let x = Tensor::from_vec(&[images.len(), IMAGE_CHANNELS, s, s], data)?;
        if let Some(&bad) = tasks.iter().find(|&&t| t >= self.n_tasks) {
            return Err(Error::Contract(format!("task label {bad} outside [0, {})", self.n_tasks)));
        }
        if self.config.conditional_enabled {
            condition_input(&x, tasks, self.n_tasks)
        } else {
            Ok(x)
        }
    }

    fn target(&self, maps: &[&SaliencyMap]) -> Result<Tensor<T>> {
        let s = self.config.image_size;
        let mut data = Vec::with_capacity(maps.len() * s * s);
        for m in maps {
            if (m.width(), m.height()) != (s, s) {
                return Err(Error::shape("target map", &[m.height(), m.width()], &[s, s]));
            }
            data.extend(m.values().iter().map(|&v| from_unit(T::of(v))));
        }
        Tensor::from_vec(&[maps.len(), 1, s, s], data)
    }

    /// One discriminator update followed by one generator update on a batch
    /// of examples from distinct subjects, each the next example of its
    /// subject stream.
    pub fn train_step(&mut self, batch: &[&Example], images: &BTreeMap<String, Vec<f64>>) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::contract("empty training batch"));
        }
        for (i, e) in batch.iter().enumerate() {
            if batch[..i].iter().any(|o| o.subject_id == e.subject_id) {
                return Err(Error::Contract(format!("subject {} appears twice in one batch", e.subject_id)));
            }
            let expected = self.next_ordinal.get(&e.subject_id).copied().unwrap_or(0);
            if e.ordinal != expected {
                return Err(Error::Contract(format!(
                    "subject {}: example {} presented before example {expected}",
                    e.subject_id, e.ordinal
                )));
            }
        }
        let pixels: Vec<&[f64]> = batch
            .iter()
            .map(|e| {
                images
                    .get(&e.image_id)
                    .map(Vec::as_slice)
                    .ok_or_else(|| Error::Contract(format!("image {} missing", e.image_id)))
            })
            .collect::<Result<_>>()?;
        // A lone stream head runs as a duplicated pair so batchnorm statistics
        // stay defined; its memory still advances once.
        let copies = if batch.len() == 1 { 2 } else { 1 };
        let rows: Vec<&Example> = batch.iter().flat_map(|e| std::iter::repeat_n(*e, copies)).collect();
        let pixels: Vec<&[f64]> = pixels.iter().flat_map(|p| std::iter::repeat_n(*p, copies)).collect();
        let tasks: Vec<usize> = rows.iter().map(|e| e.task).collect();
        let x = self.network_input(&pixels, &tasks)?;
        let y = self.target(&rows.iter().map(|e| &e.gt).collect::<Vec<_>>())?;

        let tape = Tape::new();
        let x = tape.constant(&x);
        let y = tape.constant(&y);
        let o = self.generator.forward(&tape, x, Mode::Train, Some(&mut self.rng))?;
        let mut next_states = Vec::new();
        let fake = match (&self.memory, &self.gate) {
            (Some(controller), Some(gate)) => {
                let mut gates = Vec::with_capacity(batch.len());
                for (i, e) in batch.iter().enumerate() {
                    let state = self
                        .states
                        .entry(e.subject_id.clone())
                        .or_insert_with(|| MemoryState::new(e.subject_id.clone(), self.config.slots));
                    let (readout, next) =
                        controller.step(&tape, state.on_tape(&tape), o.slice(0, i * copies, 1)?)?;
                    gates.extend(std::iter::repeat_n(readout.gate, copies));
                    next_states.push(next);
                }
                apply_memory_gate(&tape, o, Var::concat(&gates, 0)?, gate)?
            }
            _ => o,
        };

        let d_real = self.discriminator.forward(&tape, x, y, Mode::Train)?;
        let d_fake = self.discriminator.forward(&tape, x, fake.detach(), Mode::Train)?;
        let d = d_loss(d_real, d_fake)?;
        let grads = tape.backward(d)?;
        self.discriminator.accumulate_grads(&grads)?;
        self.d_opt.step(&mut [&mut self.discriminator])?;

        let d_fake = self.discriminator.forward(&tape, x, fake, Mode::Train)?;
        let g = g_loss(d_fake, fake, y, self.config.content_weight)?;
        let grads = tape.backward(g)?;
        self.generator.accumulate_grads(&grads)?;
        self.memory.accumulate_grads(&grads)?;
        self.gate.accumulate_grads(&grads)?;
        let scale = self.config.memory_lr_scale;
        self.g_opt.step_groups(&mut [(&mut self.generator, 1.0), (&mut self.memory, scale), (&mut self.gate, scale)])?;
        self.discriminator.zero_grads();

        for (e, next) in batch.iter().zip(&next_states) {
            self.states.get_mut(&e.subject_id).expect("state created above").assign(next);
        }
        for e in batch {
            self.next_ordinal.insert(e.subject_id.clone(), e.ordinal + 1);
        }
        self.step += 1;
        let losses = StepLosses { d_loss: d.item().as_f64(), g_loss: g.item().as_f64() };
        if !losses.d_loss.is_finite() || !losses.g_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {}: {losses:?}", self.step)));
        }
        Ok(losses)
    }

    /// Gated output in generator space `[1, 1, H, W]` for one image in eval
    /// mode. With memory enabled, `state` (or a fresh state when `None`)
    /// supplies the gate and is advanced when `advance` is set.
    pub fn predict_raw(
        &mut self,
        image: &[f64],
        task: usize,
        state: Option<&mut MemoryState<T>>,
        advance: bool,
    ) -> Result<Tensor<T>> {
        let x = self.network_input(&[image], &[task])?;
        let tape = Tape::new();
        let o = self.generator.forward(&tape, tape.constant(&x), Mode::Eval, None)?;
        let (Some(controller), Some(gate)) = (&self.memory, &self.gate) else {
            return Ok(o.value());
        };
        let mut fresh;
        let state = match state {
            Some(s) => s,
            None => {
                fresh = MemoryState::new("", self.config.slots);
                &mut fresh
            }
        };
        let o_value = o.value();
        let gates = if advance { controller.advance(state, &o_value)? } else { controller.peek(state, &o_value)? };
        Ok(apply_memory_gate(&tape, o, tape.constant(&gates), gate)?.value())
    }

    /// Predicted saliency in `[0, 1]` for one image.
    pub fn predict(
        &mut self,
        image: &[f64],
        task: usize,
        state: Option<&mut MemoryState<T>>,
        advance: bool,
    ) -> Result<SaliencyMap> {
        let raw = self.predict_raw(image, task, state, advance)?;
        let s = self.config.image_size;
        let values = raw.data().iter().map(|&v| to_unit(v).as_f64().clamp(0.0, 1.0)).collect();
        SaliencyMap::new(s, s, values)
    }

    /// Stored memory for `subject`, or a fresh one.
    pub fn state_for(&self, subject: &str) -> MemoryState<T> {
        self.states.get(subject).cloned().unwrap_or_else(|| MemoryState::new(subject, self.config.slots))
    }
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport<T: Scalar> {
    pub model: McGan<T>,
    pub losses: Vec<LossRow>,
    pub epochs: Vec<EpochSummary>,
    /// `(subject, ordinal)` in presentation order.
    pub presented: Vec<(String, usize)>,
}

/// Splits `n_heads` stream heads into `ceil(n / batch_size)` contiguous
/// batches whose sizes differ by at most one.
pub fn chunk_heads(n_heads: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    if n_heads == 0 {
        return Vec::new();
    }
    let k = n_heads.div_ceil(batch_size.max(1));
    let (base, extra) = (n_heads / k, n_heads % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            start += len;
            start - len..start
        })
        .collect()
}

/// Trains a fresh model on `dataset`. See [`continue_training`].
pub fn run_training<T: Scalar>(
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainReport<T>> {
    if dataset.size != config.image_size {
        return Err(Error::Config(format!(
            "dataset size {} differs from image_size {}",
            dataset.size, config.image_size
        )));
    }
    let model = McGan::new(config.clone(), dataset.n_tasks)?;
    continue_training(model, dataset, out_dir, on_epoch)
}

/// Runs the remaining epochs of `model.config`. Each epoch resets every
/// subject memory, then presents subject streams in lockstep: batch `t`
/// holds the `t`-th example of each stream long enough to have one.
/// With `out_dir`, writes `losses.csv` (keeping earlier rows when resuming)
/// and saves `checkpoint/` after every epoch.
pub fn continue_training<T: Scalar>(
    mut model: McGan<T>,
    dataset: &Dataset,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainReport<T>> {
    if dataset.examples.is_empty() {
        return Err(Error::Config("training dataset has no examples".into()));
    }
    if dataset.size != model.config.image_size || dataset.n_tasks != model.n_tasks {
        return Err(Error::Config("dataset geometry does not match the model".into()));
    }
    let streams = order_for_training(dataset.examples.clone())?;
    let longest = streams.iter().map(|s| s.examples.len()).max().unwrap_or(0);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut log = match out_dir {
        Some(dir) => {
            let path = dir.join("losses.csv");
            // Rows logged after the checkpoint being resumed are dropped.
            let mut kept = Vec::new();
            if model.step > 0 && path.exists() {
                for record in csv::Reader::from_path(&path)?.records() {
                    let record = record?;
                    let step: u64 = record.get(0).and_then(|v| v.parse().ok()).unwrap_or(u64::MAX);
                    if step <= model.step {
                        kept.push(record);
                    }
                }
            }
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["step", "d_loss", "g_loss"])?;
            for record in &kept {
                w.write_record(record)?;
            }
            Some(w)
        }
        None => None,
    };
    let mut report = TrainReport { model: model.clone(), losses: Vec::new(), epochs: Vec::new(), presented: Vec::new() };
    let limit = model.config.max_steps as u64;
    'epochs: while model.epoch < model.config.epochs as u64 {
        model.reset_streams();
        let (mut d_sum, mut g_sum, mut steps) = (0.0, 0.0, 0usize);
        for t in 0..longest {
            let heads: Vec<&Example> = streams.iter().filter_map(|s| s.examples.get(t)).collect();
            for range in chunk_heads(heads.len(), model.config.batch_size) {
                if limit > 0 && model.step >= limit {
                    break 'epochs;
                }
                let batch = &heads[range];
                let losses = model.train_step(batch, &dataset.images)?;
                report.presented.extend(batch.iter().map(|e| (e.subject_id.clone(), e.ordinal)));
                let row = LossRow { step: model.step, d_loss: losses.d_loss, g_loss: losses.g_loss };
                if let Some(w) = &mut log {
                    w.write_record([row.step.to_string(), row.d_loss.to_string(), row.g_loss.to_string()])?;
                }
                report.losses.push(row);
                d_sum += losses.d_loss;
                g_sum += losses.g_loss;
                steps += 1;
            }
        }
        model.epoch += 1;
        let summary = EpochSummary {
            epoch: model.epoch,
            steps,
            d_loss: d_sum / steps.max(1) as f64,
            g_loss: g_sum / steps.max(1) as f64,
        };
        log::info!("epoch {}: {} steps, d_loss {:.6}, g_loss {:.6}", summary.epoch, steps, summary.d_loss, summary.g_loss);
        on_epoch(&summary);
        report.epochs.push(summary);
        if let Some(w) = &mut log {
            w.flush()?;
        }
        if let Some(dir) = out_dir {
            crate::checkpoint::save_checkpoint(&model, &dir.join("checkpoint"))?;
        }
    }
    if let Some(w) = &mut log {
        w.flush()?;
    }
    report.model = model;
    Ok(report)
}

/// Metrics of one (image, task) pair, averaged over the subjects that viewed it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub task: usize,
    pub scores: Scores,
}

/// Per-row metrics, per-task means and the number of skipped examples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Per task: mean of its rows and the row count.
    pub summary: BTreeMap<usize, (Scores, usize)>,
    /// Examples skipped because their ground truth or prediction was degenerate.
    pub skipped: usize,
}

pub const EVAL_HEADER: [&str; 7] = ["image_id", "task", "auc", "nss", "cc", "kl", "sm"];

impl EvalReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(EVAL_HEADER)?;
        for r in &self.rows {
            let s = &r.scores;
            w.write_record([
                r.image_id.clone(),
                r.task.to_string(),
                s.auc.to_string(),
                s.nss.to_string(),
                s.cc.to_string(),
                s.kl.to_string(),
                s.sm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-task means with columns `task, count, auc, nss, cc, kl, sm`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["task", "count", "auc", "nss", "cc", "kl", "sm"])?;
        for (task, (s, n)) in &self.summary {
            w.write_record([
                task.to_string(),
                n.to_string(),
                s.auc.to_string(),
                s.nss.to_string(),
                s.cc.to_string(),
                s.kl.to_string(),
                s.sm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores predictions for every example whose task is in `tasks` (all
/// tasks when empty). `predict` receives examples stream by stream in
/// ordinal order. Rows are ordered by image id, then task.
pub fn evaluate_predictions(
    dataset: &Dataset,
    tasks: &[usize],
    seed: u64,
    mut predict: impl FnMut(&Example) -> Result<SaliencyMap>,
) -> Result<EvalReport> {
    let streams = order_for_training(dataset.examples.clone())?;
    let mut per_pair: BTreeMap<(String, usize), Vec<Scores>> = BTreeMap::new();
    let mut skipped = 0;
    for stream in &streams {
        for e in &stream.examples {
            if !tasks.is_empty() && !tasks.contains(&e.task) {
                continue;
            }
            let pred = predict(e)?;
            match Scores::compute(&pred, &e.gt, &e.fixations, seed) {
                Ok(s) => per_pair.entry((e.image_id.clone(), e.task)).or_default().push(s),
                Err(Error::DegenerateMap(why)) => {
                    log::warn!("skipping {} / {} / task {}: {why}", e.subject_id, e.image_id, e.task);
                    skipped += 1;
                }
                Err(other) => return Err(other),
            }
        }
    }
    let rows: Vec<EvalRow> = per_pair
        .into_iter()
        .map(|((image_id, task), scores)| EvalRow { image_id, task, scores: Scores::mean(&scores).expect("pair has scores") })
        .collect();
    let mut by_task: BTreeMap<usize, Vec<Scores>> = BTreeMap::new();
    for r in &rows {
        by_task.entry(r.task).or_default().push(r.scores);
    }
    let summary = by_task.into_iter().map(|(t, s)| (t, (Scores::mean(&s).expect("task has rows"), s.len()))).collect();
    Ok(EvalReport { rows, summary, skipped })
}

/// Evaluates `model` on `dataset`. Each subject starts from its stored
/// memory (fresh if unknown); memories advance example by example when the
/// config enables test-time updates. The model's stored states are left
/// untouched.
pub fn evaluate_dataset<T: Scalar>(model: &mut McGan<T>, dataset: &Dataset, tasks: &[usize], seed: u64) -> Result<EvalReport> {
    if dataset.size != model.config.image_size {
        return Err(Error::Config(format!(
            "dataset size {} differs from model size {}",
            dataset.size, model.config.image_size
        )));
    }
    let mut states: BTreeMap<String, MemoryState<T>> = BTreeMap::new();
    let advance = model.config.test_memory_updates;
    evaluate_predictions(dataset, tasks, seed, |e| {
        let image = dataset
            .images
            .get(&e.image_id)
            .ok_or_else(|| Error::Contract(format!("image {} missing", e.image_id)))?;
        let state = states.entry(e.subject_id.clone()).or_insert_with(|| model.state_for(&e.subject_id));
        model.predict(image, e.task, Some(state), advance)
    })
}

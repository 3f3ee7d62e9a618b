//! Adversarial training with a dynamic-capacity discriminator.
//!
//! Each iteration: apply the schedule's capacity event (grow, or draw a fresh
//! filter mask), take one discriminator step, then one generator step through
//! the same discriminator selection.

use crate::container::{Container, ContainerError};
use crate::data::{self, DataError, Dataset, DatasetKind, DatasetSpec};
use crate::layers::{sample_mask, LayerError};
use crate::metrics::{self, GaussianFit, MetricError, MetricReport, Pca};
use crate::nets::{DiscriminatorNet, GeneratorNet};
use crate::optim::{adam_update, AdamConfig, Moments, OptimError};
use crate::schedule::{CapacityEvent, CapacitySchedule, ScheduleError, ScheduleMode, SchedulePreset};
use crate::tensor::{Graph, Result as TensorResult, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("training diverged at step {step}: loss_d={}, loss_g={}", .record.loss_d, .record.loss_g)]
    Divergence { step: u64, record: Box<IterationRecord> },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Layer(e.into())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// `-mean(log sigmoid(real)) - mean(log(1 - sigmoid(fake)))`, via
/// `log sigmoid(t) = -softplus(-t)` and `log(1 - sigmoid(t)) = -softplus(t)`.
pub fn d_loss(g: &mut Graph, logits_real: Var, logits_fake: Var) -> TensorResult<Var> {
    if g.shape(logits_real) != g.shape(logits_fake) {
        return Err(TensorError::ShapeMismatch {
            op: "d_loss",
            lhs: g.shape(logits_real).to_vec(),
            rhs: g.shape(logits_fake).to_vec(),
        });
    }
    let neg = g.scale(logits_real, -1.0);
    let sp_real = g.softplus(neg);
    let real_term = g.mean(sp_real);
    let sp_fake = g.softplus(logits_fake);
    let fake_term = g.mean(sp_fake);
    g.add(real_term, fake_term)
}

/// Non-saturating generator loss `-mean(log sigmoid(fake))`.
pub fn g_loss(g: &mut Graph, logits_fake: Var) -> Var {
    let neg = g.scale(logits_fake, -1.0);
    let sp = g.softplus(neg);
    g.mean(sp)
}

/// Schedule fields as they appear in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub coeff_start: f64,
    pub coeff_end: f64,
    pub update_interval: u64,
    /// Ramp length. `None` ends the ramp on the last iteration, so the final
    /// step trains at the end coefficient.
    pub total_steps: Option<u64>,
    pub excluded: BTreeSet<usize>,
}

impl ScheduleSpec {
    pub fn from_preset(preset: SchedulePreset, excluded: BTreeSet<usize>) -> Self {
        let (mode, coeff_start, coeff_end) = match preset {
            SchedulePreset::FixedFull => (ScheduleMode::Fixed, 0.0, 0.0),
            SchedulePreset::FixedHalf => (ScheduleMode::Fixed, -0.5, -0.5),
            SchedulePreset::DynamicIncrease => (ScheduleMode::Increase, -0.5, 0.0),
            SchedulePreset::DynamicDecrease => (ScheduleMode::Decrease, 1.0, 0.5),
        };
        let excluded = if mode == ScheduleMode::Decrease { excluded } else { BTreeSet::new() };
        Self {
            mode,
            coeff_start,
            coeff_end,
            update_interval: 1,
            total_steps: None,
            excluded,
        }
    }

    pub fn build(&self, base_widths: Vec<usize>, iterations: u64) -> std::result::Result<CapacitySchedule, ScheduleError> {
        CapacitySchedule::new(
            self.mode,
            self.coeff_start,
            self.coeff_end,
            self.total_steps.unwrap_or(iterations.saturating_sub(1).max(1)),
            self.update_interval,
            self.excluded.clone(),
            base_widths,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub g_hidden: Vec<usize>,
    /// Discriminator base widths (hidden layers).
    pub d_base: Vec<usize>,
    pub slope: f64,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    pub iterations: u64,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    pub eval_every: u64,
    /// Generated (and reference) samples per evaluation.
    pub eval_samples: usize,
    /// Whether the generator step sees the iteration's mask or the unmasked
    /// discriminator.
    pub g_sees_mask: bool,
}

/// Layers excluded from masking by default: the two low-level conv layers of
/// the image discriminator, or the first layer of the point discriminator.
pub fn default_excluded(kind: DatasetKind) -> BTreeSet<usize> {
    if kind.is_image() {
        [0, 1].into()
    } else {
        [0].into()
    }
}

pub const FULL_EVAL_SAMPLES: usize = 50_000;
pub const FAST_EVAL_SAMPLES: usize = 8192;

impl TrainConfig {
    /// Defaults for the point-data path under `preset`.
    pub fn new(dataset: DatasetSpec, preset: SchedulePreset, seed: u64) -> Self {
        let image = dataset.kind.is_image();
        Self {
            dataset,
            batch_size: 32,
            latent_dim: 16,
            g_hidden: vec![64, 64, 64],
            d_base: if image { vec![16, 32, 64, 128] } else { vec![64, 64, 64] },
            slope: 0.2,
            adam_g: AdamConfig::default(),
            adam_d: AdamConfig::default(),
            iterations: 2000,
            schedule: ScheduleSpec::from_preset(preset, default_excluded(dataset.kind)),
            seed,
            eval_every: 500,
            eval_samples: FULL_EVAL_SAMPLES,
            g_sees_mask: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.dataset.n_samples < 2 * self.batch_size {
            return bad(format!(
                "dataset of {} samples is too small for batch size {} (need 2x)",
                self.dataset.n_samples, self.batch_size
            ));
        }
        for (name, h) in [("G", &self.adam_g), ("D", &self.adam_d)] {
            if !(h.lr > 0.0 && (0.0..1.0).contains(&h.beta1) && (0.0..1.0).contains(&h.beta2) && h.eps > 0.0) {
                return bad(format!("bad optimizer settings for {name}: {h:?}"));
            }
        }
        if self.iterations == 0 || self.eval_every == 0 || self.latent_dim == 0 {
            return bad("iterations, eval_every and latent_dim must be positive".into());
        }
        if self.eval_samples < 1024 {
            return bad(format!("eval_samples must be at least 1024, got {}", self.eval_samples));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return bad(format!("slope {} outside [0, 1)", self.slope));
        }
        if self.dataset.kind.is_image() && self.d_base.len() != 4 {
            return bad("image discriminator needs four base widths".into());
        }
        if self.d_base.is_empty() || self.d_base.contains(&0) {
            return bad("discriminator base widths must be positive".into());
        }
        self.schedule.build(self.d_base.clone(), self.iterations)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Latent = 2,
    Mask = 3,
    Eval = 4,
}

/// Independent ChaCha stream of the run seed.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generator_seed(seed: u64) -> u64 {
    mix(seed, 0x47)
}

pub fn discriminator_seed(seed: u64) -> u64 {
    mix(seed, 0x44)
}

/// Seed of the weights drawn by a grow event at `step`.
pub fn growth_seed(seed: u64, step: u64) -> u64 {
    mix(mix(seed, 0x67726f77), step)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub coeff: f64,
    pub active_params: u64,
    /// Multiply-adds of one single-sample discriminator forward pass.
    pub active_flops: u64,
}

type LayerMoments = Vec<(Moments, Moments)>;

fn zero_moments(layers: &[crate::layers::DynLayer]) -> LayerMoments {
    layers
        .iter()
        .map(|l| (Moments::zeros(l.weight().len()), Moments::zeros(l.bias().len())))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub seed: u64,
    pub gen: GeneratorNet,
    pub disc: DiscriminatorNet,
    pub g_moments: LayerMoments,
    pub d_moments: LayerMoments,
    pub rng_data: ChaCha8Rng,
    pub rng_latent: ChaCha8Rng,
    pub rng_mask: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig, schedule: &CapacitySchedule) -> Result<Self> {
        let seed = config.seed;
        let gen = if config.dataset.kind.is_image() {
            GeneratorNet::upconv(config.latent_dim, config.slope, generator_seed(seed))?
        } else {
            let out = config.dataset.kind.sample_shape()[0];
            GeneratorNet::mlp(config.latent_dim, &config.g_hidden, out, config.slope, generator_seed(seed))?
        };
        // Masked modes start from the full store; slicing modes from widths_at(0).
        let initial = match schedule.mode() {
            ScheduleMode::Decrease => config.d_base.clone(),
            _ => schedule.widths_at(0),
        };
        let disc = if config.dataset.kind.is_image() {
            DiscriminatorNet::conv(&config.d_base, &initial, config.slope, discriminator_seed(seed))?
        } else {
            let in_dim = config.dataset.kind.sample_shape()[0];
            DiscriminatorNet::mlp(in_dim, &config.d_base, &initial, config.slope, discriminator_seed(seed))?
        };
        Ok(Self {
            step: 0,
            seed,
            g_moments: zero_moments(gen.layers()),
            d_moments: zero_moments(disc.stack().layers()),
            gen,
            disc,
            rng_data: stream_rng(seed, Stream::Data),
            rng_latent: stream_rng(seed, Stream::Latent),
            rng_mask: stream_rng(seed, Stream::Mask),
        })
    }

    /// Saves weights, optimizer moments, active widths and RNG positions.
    pub fn to_container(&self) -> Container {
        let mut c = Container {
            step: self.step,
            widths: self
                .disc
                .stack()
                .layers()
                .iter()
                .map(|l| (l.active_out() as u32, l.active_in() as u32))
                .collect(),
            ..Default::default()
        };
        c.push_meta("seed", self.seed);
        for (name, rng) in [("data", &self.rng_data), ("latent", &self.rng_latent), ("mask", &self.rng_mask)] {
            let key = rng.get_seed();
            for (i, chunk) in key.chunks(8).enumerate() {
                c.push_meta(format!("rng.{name}.key{i}"), u64::from_le_bytes(chunk.try_into().unwrap()));
            }
            c.push_meta(format!("rng.{name}.stream"), rng.get_stream());
            let pos = rng.get_word_pos();
            c.push_meta(format!("rng.{name}.pos_hi"), (pos >> 64) as u64);
            c.push_meta(format!("rng.{name}.pos_lo"), pos as u64);
        }
        let nets: [(&str, &[crate::layers::DynLayer], &LayerMoments); 2] = [
            ("g", self.gen.layers(), &self.g_moments),
            ("d", self.disc.stack().layers(), &self.d_moments),
        ];
        for (net, layers, moments) in nets {
            for (l, (layer, (mw, mb))) in layers.iter().zip(moments).enumerate() {
                for (part, t, m) in [("w", layer.weight(), mw), ("b", layer.bias(), mb)] {
                    let base = format!("{net}.{l}.{part}");
                    c.push_array(base.clone(), t.shape(), t.data().to_vec());
                    c.push_array(format!("{base}.m"), &[m.len()], m.m.clone());
                    c.push_array(format!("{base}.v"), &[m.len()], m.v.clone());
                    c.push_array(format!("{base}.t"), &[m.len()], m.steps.iter().map(|&s| s as f64).collect());
                }
            }
        }
        c
    }

    /// Rebuilds a state for `config` and overwrites it from `c`.
    pub fn from_container(config: &TrainConfig, schedule: &CapacitySchedule, c: &Container) -> Result<Self> {
        let mut s = Self::new(config, schedule)?;
        s.step = c.step;
        let restore = |name: &str| -> Result<ChaCha8Rng> {
            let mut key = [0u8; 32];
            for i in 0..4 {
                key[i * 8..(i + 1) * 8].copy_from_slice(&c.meta(&format!("rng.{name}.key{i}"))?.to_le_bytes());
            }
            let mut rng = ChaCha8Rng::from_seed(key);
            rng.set_stream(c.meta(&format!("rng.{name}.stream"))?);
            let pos = ((c.meta(&format!("rng.{name}.pos_hi"))? as u128) << 64) | c.meta(&format!("rng.{name}.pos_lo"))? as u128;
            rng.set_word_pos(pos);
            Ok(rng)
        };
        s.rng_data = restore("data")?;
        s.rng_latent = restore("latent")?;
        s.rng_mask = restore("mask")?;

        if c.widths.len() != s.disc.stack().layers().len() {
            return Err(TrainError::Config("checkpoint does not match discriminator depth".into()));
        }
        for (layer, &(o, i)) in s.disc.stack_mut().layers_mut().iter_mut().zip(&c.widths) {
            layer.set_active(o as usize, i as usize)?;
        }
        let load = |net: &str, layers: &mut [crate::layers::DynLayer], moments: &mut LayerMoments| -> Result<()> {
            for (l, (layer, (mw, mb))) in layers.iter_mut().zip(moments.iter_mut()).enumerate() {
                for (part, m) in [("w", mw), ("b", mb)] {
                    let base = format!("{net}.{l}.{part}");
                    let values = &c.array(&base)?.data;
                    let target = if part == "w" { layer.weight_mut() } else { layer.bias_mut() };
                    if values.len() != target.len() {
                        return Err(TrainError::Config(format!("checkpoint array `{base}` has wrong size")));
                    }
                    target.data_mut().copy_from_slice(values);
                    m.m = c.array(&format!("{base}.m"))?.data.clone();
                    m.v = c.array(&format!("{base}.v"))?.data.clone();
                    m.steps = c.array(&format!("{base}.t"))?.data.iter().map(|&t| t as u32).collect();
                }
            }
            Ok(())
        };
        let mut g_moments = std::mem::take(&mut s.g_moments);
        load("g", s.gen.layers_mut(), &mut g_moments)?;
        s.g_moments = g_moments;
        let mut d_moments = std::mem::take(&mut s.d_moments);
        load("d", s.disc.stack_mut().layers_mut(), &mut d_moments)?;
        s.d_moments = d_moments;
        Ok(s)
    }
}

fn mean_sigmoid(values: &[f64]) -> f64 {
    values.iter().map(|&v| crate::tensor::sigmoid_scalar(v)).sum::<f64>() / values.len() as f64
}

fn latents(state: &mut TrainState, batch: usize) -> Tensor {
    Tensor::randn(&[batch, state.gen.latent_dim()], 1.0, &mut state.rng_latent)
}

/// One adversarial iteration on `real_batch`.
pub fn train_step(
    state: &mut TrainState,
    real_batch: &Tensor,
    schedule: &CapacitySchedule,
    config: &TrainConfig,
) -> Result<IterationRecord> {
    let step = state.step;
    let batch = real_batch.shape()[0];

    // (1) capacity
    let mask = match schedule.capacity_event_at(step) {
        Some(CapacityEvent::Grow(widths)) => {
            state.disc.stack_mut().grow_to(&widths, growth_seed(state.seed, step))?;
            state.disc.stack().sliced_mask()
        }
        Some(CapacityEvent::Resample { beta }) => {
            sample_mask(state.disc.stack(), beta, schedule.excluded(), &mut state.rng_mask)?
        }
        None => state.disc.stack().sliced_mask(),
    };

    // (2) discriminator
    let z = latents(state, batch);
    let fake = state.gen.sample(&z)?;
    let mut g = Graph::new();
    let dp = state.disc.bind(&mut g, true);
    let real_in = g.constant(real_batch.clone());
    let fake_in = g.constant(fake);
    let real_logits = state.disc.forward(&mut g, &dp, real_in, &mask)?;
    let fake_logits = state.disc.forward(&mut g, &dp, fake_in, &mask)?;
    let loss = d_loss(&mut g, real_logits, fake_logits)?;
    let loss_d = g.value(loss).item();
    let d_real_mean = mean_sigmoid(g.value(real_logits).data());
    let d_fake_mean = mean_sigmoid(g.value(fake_logits).data());
    let mut record = IterationRecord {
        step,
        loss_d,
        loss_g: f64::NAN,
        d_real_mean,
        d_fake_mean,
        coeff: schedule.coefficient_at(step),
        active_params: state.disc.param_count(&mask),
        active_flops: state.disc.flops_per_sample(&mask),
    };
    if !loss_d.is_finite() {
        return Err(TrainError::Divergence {
            step,
            record: Box::new(record),
        });
    }
    g.backward(loss)?;
    let active = state.disc.stack().active_masks(&mask);
    for (l, layer) in state.disc.stack_mut().layers_mut().iter_mut().enumerate() {
        let gw = g.take_grad(dp.0[l].weight).unwrap_or_else(|| vec![0.0; layer.weight().len()]);
        let gb = g.take_grad(dp.0[l].bias).unwrap_or_else(|| vec![0.0; layer.bias().len()]);
        let (mw, mb) = &mut state.d_moments[l];
        adam_update(layer.weight_mut().data_mut(), &gw, mw, Some(&active[l].0), &config.adam_d)?;
        adam_update(layer.bias_mut().data_mut(), &gb, mb, Some(&active[l].1), &config.adam_d)?;
    }

    // (3) generator, through the same discriminator selection
    let g_mask = if config.g_sees_mask {
        mask
    } else {
        state.disc.stack().sliced_mask()
    };
    let z = latents(state, batch);
    let mut g = Graph::new();
    let gp = state.gen.bind(&mut g, true);
    let dp = state.disc.bind(&mut g, false);
    let zi = g.constant(z);
    let fake = state.gen.forward(&mut g, &gp, zi)?;
    let logits = state.disc.forward(&mut g, &dp, fake, &g_mask)?;
    let loss = g_loss(&mut g, logits);
    record.loss_g = g.value(loss).item();
    if !record.loss_g.is_finite() {
        return Err(TrainError::Divergence {
            step,
            record: Box::new(record),
        });
    }
    g.backward(loss)?;
    for (l, layer) in state.gen.layers_mut().iter_mut().enumerate() {
        let gw = g.take_grad(gp[l].weight).unwrap_or_else(|| vec![0.0; layer.weight().len()]);
        let gb = g.take_grad(gp[l].bias).unwrap_or_else(|| vec![0.0; layer.bias().len()]);
        let (mw, mb) = &mut state.g_moments[l];
        adam_update(layer.weight_mut().data_mut(), &gw, mw, None, &config.adam_g)?;
        adam_update(layer.bias_mut().data_mut(), &gb, mb, None, &config.adam_g)?;
    }

    // (4)
    state.step += 1;
    Ok(record)
}

/// Fixed statistics every evaluation compares against.
#[derive(Debug, Clone)]
struct EvalReference {
    fit: GaussianFit,
    pca: Option<Pca>,
    /// Normalized fresh draws, disjoint from the training set.
    held_out: Tensor,
    /// Normalized training samples probed for the over-fit gap.
    train_probe: Tensor,
}

const HELD_OUT_SAMPLES: usize = 1024;
const TRAIN_PROBE_CAP: usize = 8192;
const PCA_DIMS: usize = 16;

impl EvalReference {
    fn new(config: &TrainConfig, dataset: &Dataset) -> Result<Self> {
        let spec = &config.dataset;
        let reference = data::population_sample(spec.kind, spec.noise, config.eval_samples, mix(spec.seed, 0x7265_66));
        let (fit, pca) = if spec.kind.is_image() {
            let flat = reference.clone().reshape(&[config.eval_samples, 256])?;
            let pca = Pca::fit(&flat, PCA_DIMS)?;
            (metrics::fit_gaussian(&pca.project(&flat))?, Some(pca))
        } else {
            (metrics::fit_gaussian(&reference)?, None)
        };
        let held_raw = data::population_sample(spec.kind, spec.noise, HELD_OUT_SAMPLES, mix(spec.seed, 0x686f_6c64));
        let held_out = Tensor::new(
            held_raw.shape(),
            held_raw.data().iter().map(|v| v / dataset.scale).collect(),
        )?;
        let probe: Vec<usize> = dataset.train.iter().copied().take(TRAIN_PROBE_CAP).collect();
        Ok(Self {
            fit,
            pca,
            held_out,
            train_probe: dataset.samples.gather_rows(&probe),
        })
    }
}

/// A configured run: dataset, schedule, state and evaluation reference.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub dataset: Dataset,
    pub schedule: CapacitySchedule,
    pub state: TrainState,
    reference: EvalReference,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: TrainState,
    pub records: Vec<IterationRecord>,
    pub reports: Vec<MetricReport>,
}

impl RunOutput {
    pub fn final_report(&self) -> Option<&MetricReport> {
        self.reports.last()
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let dataset = data::generate(&config.dataset)?;
        let schedule = config.schedule.build(config.d_base.clone(), config.iterations)?;
        let state = TrainState::new(&config, &schedule)?;
        let reference = EvalReference::new(&config, &dataset)?;
        Ok(Self {
            config,
            dataset,
            schedule,
            state,
            reference,
        })
    }

    /// Resumes from a checkpoint written by [`TrainState::to_container`].
    pub fn resume(config: TrainConfig, checkpoint: &Container) -> Result<Self> {
        let mut t = Self::new(config)?;
        t.state = TrainState::from_container(&t.config, &t.schedule, checkpoint)?;
        Ok(t)
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.config.iterations
    }

    /// Draws a real batch and runs one iteration.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let real = self.dataset.sample_batch(&mut self.state.rng_data, self.config.batch_size)?;
        train_step(&mut self.state, &real, &self.schedule, &self.config)
    }

    /// Whether an evaluation is due after the iteration that just finished.
    pub fn eval_due(&self) -> bool {
        let s = self.state.step;
        s > 0 && (s % self.config.eval_every == 0 || s == self.config.iterations)
    }

    /// Generated samples in raw coordinates, from a dedicated stream so that
    /// evaluation never perturbs training.
    pub fn generate_raw(&self, n: usize) -> Result<Tensor> {
        let mut rng = stream_rng(mix(self.config.seed, self.state.step), Stream::Eval);
        let z = Tensor::randn(&[n, self.state.gen.latent_dim()], 1.0, &mut rng);
        let s = self.state.gen.sample(&z)?;
        let scale = self.dataset.scale;
        Ok(Tensor::new(s.shape(), s.data().iter().map(|v| v * scale).collect())?)
    }

    pub fn evaluate(&self) -> Result<MetricReport> {
        let n = self.config.eval_samples;
        let generated = self.generate_raw(n)?;
        let fit = match &self.reference.pca {
            Some(pca) => metrics::fit_gaussian(&pca.project(&generated.clone().reshape(&[n, 256])?))?,
            None => metrics::fit_gaussian(&generated)?,
        };
        let toy_frechet = metrics::frechet_distance(&fit, &self.reference.fit)?;
        let gap = metrics::overfit_gap(&self.state.disc, &self.reference.train_probe, &self.reference.held_out)?;
        let modes_covered = match self.config.dataset.kind {
            DatasetKind::Ring8 => metrics::mode_coverage(
                &generated,
                &data::ring8_centers(),
                3.0 * if self.config.dataset.noise > 0.0 { self.config.dataset.noise } else { data::RING_NOISE },
            ),
            _ => 0,
        };
        Ok(MetricReport {
            step: self.state.step,
            toy_frechet,
            overfit_gap: gap,
            modes_covered,
            generated_samples: n,
            reference_samples: n,
        })
    }

    /// Runs to completion, evaluating on the configured cadence.
    pub fn run(mut self) -> Result<RunOutput> {
        let mut records = Vec::with_capacity(self.config.iterations as usize);
        let mut reports = Vec::new();
        while !self.is_done() {
            records.push(self.step()?);
            if self.eval_due() {
                reports.push(self.evaluate()?);
            }
        }
        Ok(RunOutput {
            state: self.state,
            records,
            reports,
        })
    }
}

/// Runs `config` start to finish.
pub fn run(config: TrainConfig) -> Result<RunOutput> {
    Trainer::new(config)?.run()
}

//! Layers whose active width changes during training.
//!
//! Each [`DynLayer`] owns a full-capacity weight store allocated up front.
//! Training only ever touches a selection of it: either the leading
//! `active_out x active_in` block (sliced) or an arbitrary sorted subset of
//! output filters (masked). The selected block is gathered inside the graph,
//! so gradients land on the full store and are exactly zero elsewhere.

mod mask;
mod stack;

pub use mask::{sample_mask, FilterMask};
pub use stack::{DynStack, StackParams};

use crate::tensor::{Graph, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("grow cannot shrink layer {layer}: {from_out}x{from_in} -> {to_out}x{to_in}")]
    ShrinkViaGrow {
        layer: usize,
        from_out: usize,
        from_in: usize,
        to_out: usize,
        to_in: usize,
    },
    #[error("layer {layer}: width {out}x{inp} exceeds store {max_out}x{max_in}")]
    ExceedsStore {
        layer: usize,
        out: usize,
        inp: usize,
        max_out: usize,
        max_in: usize,
    },
    #[error("layer {layer}: filter index {index} out of range for store of {extent}")]
    IndexOutOfRange { layer: usize, index: usize, extent: usize },
    #[error("layer {layer}: mask indices must be nonempty and strictly increasing")]
    BadMask { layer: usize },
    #[error("layer {layer}: input has {got} channels but the previous selection produced {expected}")]
    CrossLayer { layer: usize, expected: usize, got: usize },
    #[error("mask covers {got} layers, network has {expected}")]
    MaskDepth { expected: usize, got: usize },
    #[error("shrinking coefficient {0} outside (0, 1]")]
    BadBeta(f64),
    #[error("layer {layer}: cannot flatten spatial map {h}x{w} into a dense layer")]
    Flatten { layer: usize, h: usize, w: usize },
}

pub type Result<T> = std::result::Result<T, LayerError>;

/// `max(1, round_half_up(coeff * base))`.
///
/// A 1e-9 nudge absorbs representation error so that products landing on
/// exact halves in decimal round up everywhere.
pub fn scaled_width(coeff: f64, base: usize) -> usize {
    let w = (coeff * base as f64 + 0.5 + 1e-9).floor();
    (w.max(1.0)) as usize
}

/// Fan-in scaled normal initialization for newly exposed weights.
///
/// Standard deviation is `gain / sqrt(fan_in)` with the leaky-ReLU gain
/// `sqrt(2 / (1 + slope^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthInit {
    pub gain: f64,
    pub seed: u64,
}

impl GrowthInit {
    pub fn leaky(slope: f64, seed: u64) -> Self {
        Self {
            gain: (2.0 / (1.0 + slope * slope)).sqrt(),
            seed,
        }
    }

    pub fn std(&self, fan_in: usize) -> f64 {
        self.gain / (fan_in as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv { kernel: usize, stride: usize, pad: usize },
}

impl LayerKind {
    fn taps(self) -> usize {
        match self {
            LayerKind::Dense => 1,
            LayerKind::Conv { kernel, .. } => kernel * kernel,
        }
    }
}

/// Graph handles of one layer's full stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub weight: Var,
    pub bias: Var,
}

/// Dense (`[O_max, I_max]`) or convolutional (`[O_max, I_max, k, k]`) layer
/// with an active-width view over its stores.
#[derive(Debug, Clone, PartialEq)]
pub struct DynLayer {
    kind: LayerKind,
    weight: Tensor,
    bias: Tensor,
    active_out: usize,
    active_in: usize,
    index: usize,
    low_level: bool,
}

impl DynLayer {
    pub fn dense(index: usize, max_out: usize, max_in: usize) -> Self {
        Self::with_kind(LayerKind::Dense, index, max_out, max_in)
    }

    pub fn conv(index: usize, max_out: usize, max_in: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self::with_kind(LayerKind::Conv { kernel, stride, pad }, index, max_out, max_in)
    }

    fn with_kind(kind: LayerKind, index: usize, max_out: usize, max_in: usize) -> Self {
        let shape = match kind {
            LayerKind::Dense => vec![max_out, max_in],
            LayerKind::Conv { kernel, .. } => vec![max_out, max_in, kernel, kernel],
        };
        Self {
            kind,
            weight: Tensor::zeros(&shape),
            bias: Tensor::zeros(&[max_out]),
            active_out: 0,
            active_in: 0,
            index,
            low_level: false,
        }
    }

    /// Initializes the leading `out x in` block; the rest of the store stays
    /// zero until a later grow exposes it.
    pub fn initialized(mut self, out: usize, inp: usize, init: &GrowthInit) -> Result<Self> {
        self.grow(out, inp, init)?;
        Ok(self)
    }

    pub fn with_low_level(mut self, low_level: bool) -> Self {
        self.low_level = low_level;
        self
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_low_level(&self) -> bool {
        self.low_level
    }

    pub fn max_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn max_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn active_out(&self) -> usize {
        self.active_out
    }

    pub fn active_in(&self) -> usize {
        self.active_in
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// Restores active bounds, e.g. from a checkpoint header.
    pub fn set_active(&mut self, out: usize, inp: usize) -> Result<()> {
        self.check_bounds(out, inp)?;
        self.active_out = out;
        self.active_in = inp;
        Ok(())
    }

    fn check_bounds(&self, out: usize, inp: usize) -> Result<()> {
        if out == 0 || inp == 0 || out > self.max_out() || inp > self.max_in() {
            return Err(LayerError::ExceedsStore {
                layer: self.index,
                out,
                inp,
                max_out: self.max_out(),
                max_in: self.max_in(),
            });
        }
        Ok(())
    }

    /// Inserts both stores into `g`; as trainable leaves iff `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LayerParams {
        if trainable {
            LayerParams {
                weight: g.param(self.weight.clone()),
                bias: g.param(self.bias.clone()),
            }
        } else {
            LayerParams {
                weight: g.constant(self.weight.clone()),
                bias: g.constant(self.bias.clone()),
            }
        }
    }

    /// Forward through the leading `active_out x active_in` block.
    pub fn forward_sliced(
        &self,
        g: &mut Graph,
        params: LayerParams,
        input: Var,
        active_out: usize,
        active_in: usize,
    ) -> Result<Var> {
        self.check_bounds(active_out, active_in)?;
        let out: Vec<usize> = (0..active_out).collect();
        let inp: Vec<usize> = (0..active_in).collect();
        self.forward_select(g, params, input, &out, &inp)
    }

    /// Forward through the filters `out_idx`, reading input channels
    /// `in_idx` of the store (the previous layer's selection).
    pub fn forward_select(
        &self,
        g: &mut Graph,
        params: LayerParams,
        input: Var,
        out_idx: &[usize],
        in_idx: &[usize],
    ) -> Result<Var> {
        self.check_indices(out_idx, self.max_out())?;
        self.check_indices(in_idx, self.max_in())?;
        let channels = g.shape(input).get(1).copied().unwrap_or(0);
        if channels != in_idx.len() {
            return Err(LayerError::CrossLayer {
                layer: self.index,
                expected: in_idx.len(),
                got: channels,
            });
        }
        let w = g.select(params.weight, out_idx, Some(in_idx))?;
        let b = g.select(params.bias, out_idx, None)?;
        let y = match self.kind {
            LayerKind::Dense => {
                let wt = g.transpose(w)?;
                let xw = g.matmul(input, wt)?;
                g.add(xw, b)?
            }
            LayerKind::Conv { stride, pad, .. } => g.conv2d(input, w, b, stride, pad)?,
        };
        Ok(y)
    }

    fn check_indices(&self, idx: &[usize], extent: usize) -> Result<()> {
        if idx.is_empty() || idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LayerError::BadMask { layer: self.index });
        }
        if let Some(&last) = idx.last() {
            if last >= extent {
                return Err(LayerError::IndexOutOfRange {
                    layer: self.index,
                    index: last,
                    extent,
                });
            }
        }
        Ok(())
    }

    /// Widens the active region to `new_out x new_in`. Every newly exposed
    /// weight (new rows, and new input columns of existing rows) is drawn
    /// from `init`; new biases start at zero. Existing entries are untouched.
    pub fn grow(&mut self, new_out: usize, new_in: usize, init: &GrowthInit) -> Result<()> {
        if new_out < self.active_out || new_in < self.active_in {
            return Err(LayerError::ShrinkViaGrow {
                layer: self.index,
                from_out: self.active_out,
                from_in: self.active_in,
                to_out: new_out,
                to_in: new_in,
            });
        }
        self.check_bounds(new_out, new_in)?;
        if new_out == self.active_out && new_in == self.active_in {
            return Ok(());
        }
        let taps = self.kind.taps();
        let normal = Normal::new(0.0, init.std(new_in * taps)).expect("finite std");
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let row = self.max_in() * taps;
        let data = self.weight.data_mut();
        for o in 0..new_out {
            for i in 0..new_in {
                if o < self.active_out && i < self.active_in {
                    continue;
                }
                let at = o * row + i * taps;
                for v in &mut data[at..at + taps] {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        let bias = self.bias.data_mut();
        for b in &mut bias[self.active_out..new_out] {
            *b = 0.0;
        }
        self.active_out = new_out;
        self.active_in = new_in;
        Ok(())
    }

    /// Weights plus biases touched by a forward pass at `out x in`.
    pub fn param_count(&self, out: usize, inp: usize) -> u64 {
        (out * inp * self.kind.taps() + out) as u64
    }

    /// Output spatial extent for an input of `h x w` (dense: `1 x 1`).
    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense => (1, 1),
            LayerKind::Conv { kernel, stride, pad } => (
                (h + 2 * pad - kernel) / stride + 1,
                (w + 2 * pad - kernel) / stride + 1,
            ),
        }
    }

    /// Multiply-adds for one sample at `out x in` on an `h x w` input.
    pub fn macs(&self, out: usize, inp: usize, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_spatial(h, w);
        (out * inp * self.kind.taps() * oh * ow) as u64
    }

    /// Marks which store entries belong to the `out_idx x in_idx` block.
    pub fn active_mask(&self, out_idx: &[usize], in_idx: &[usize]) -> (Vec<bool>, Vec<bool>) {
        let taps = self.kind.taps();
        let row = self.max_in() * taps;
        let mut w = vec![false; self.weight.len()];
        let mut b = vec![false; self.bias.len()];
        for &o in out_idx {
            b[o] = true;
            for &i in in_idx {
                let at = o * row + i * taps;
                w[at..at + taps].iter_mut().for_each(|v| *v = true);
            }
        }
        (w, b)
    }

    /// Ordinary (non-dynamic) copy holding exactly the selected weights.
    pub fn materialize(&self, out_idx: &[usize], in_idx: &[usize]) -> (Tensor, Tensor) {
        let taps = self.kind.taps();
        let row = self.max_in() * taps;
        let src = self.weight.data();
        let mut data = Vec::with_capacity(out_idx.len() * in_idx.len() * taps);
        for &o in out_idx {
            for &i in in_idx {
                let at = o * row + i * taps;
                data.extend_from_slice(&src[at..at + taps]);
            }
        }
        let mut shape = self.weight.shape().to_vec();
        shape[0] = out_idx.len();
        shape[1] = in_idx.len();
        let bias = out_idx.iter().map(|&o| self.bias.data()[o]).collect();
        (
            Tensor::new(&shape, data).unwrap(),
            Tensor::new(&[out_idx.len()], bias).unwrap(),
        )
    }
}

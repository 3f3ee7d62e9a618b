use super::{DynLayer, FilterMask, GrowthInit, LayerError, LayerKind, LayerParams, Result};
use crate::tensor::{Graph, Var};

/// Ordered chain of dynamic layers ending in a single-output head, with
/// leaky-ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DynStack {
    layers: Vec<DynLayer>,
    data_channels: Vec<usize>,
    slope: f64,
}

/// Graph handles of every layer of a stack, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackParams(pub Vec<LayerParams>);

/// Per-layer seed for growth draws.
fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl DynStack {
    pub fn new(layers: Vec<DynLayer>, slope: f64) -> Self {
        let data_channels = (0..layers[0].max_in()).collect();
        Self {
            layers,
            data_channels,
            slope,
        }
    }

    pub fn layers(&self) -> &[DynLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DynLayer] {
        &mut self.layers
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn data_channels(&self) -> usize {
        self.data_channels.len()
    }

    /// Output widths of the hidden layers (head excluded).
    pub fn hidden_widths(&self) -> Vec<usize> {
        let n = self.layers.len() - 1;
        self.layers[..n].iter().map(DynLayer::active_out).collect()
    }

    /// Full-store widths of the hidden layers.
    pub fn base_widths(&self) -> Vec<usize> {
        let n = self.layers.len() - 1;
        self.layers[..n].iter().map(DynLayer::max_out).collect()
    }

    /// Selection of the leading active block of every layer.
    pub fn sliced_mask(&self) -> FilterMask {
        FilterMask::leading(&self.layers.iter().map(DynLayer::active_out).collect::<Vec<_>>())
    }

    /// Leading selection with the given hidden widths and the full head.
    pub fn leading_mask(&self, hidden: &[usize]) -> FilterMask {
        let mut widths = hidden.to_vec();
        widths.push(self.layers[self.layers.len() - 1].active_out());
        FilterMask::leading(&widths)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> StackParams {
        StackParams(self.layers.iter().map(|l| l.bind(g, trainable)).collect())
    }

    /// Forward through the selection `mask`; returns `[B, 1]` logits.
    pub fn forward(&self, g: &mut Graph, params: &StackParams, input: Var, mask: &FilterMask) -> Result<Var> {
        mask.validate(self)?;
        let mut h = input;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.kind() == LayerKind::Dense && g.shape(h).len() == 4 {
                let s = g.shape(h).to_vec();
                if s[2] != 1 || s[3] != 1 {
                    return Err(LayerError::Flatten { layer: l, h: s[2], w: s[3] });
                }
                h = g.reshape(h, &[s[0], s[1]])?;
            }
            let inputs = mask.inputs(l, &self.data_channels);
            h = layer.forward_select(g, params.0[l], h, &mask.outputs[l], inputs)?;
            if l != last {
                h = g.leaky_relu(h, self.slope)?;
            }
        }
        Ok(h)
    }

    /// Grows every hidden layer to `widths` and rewires the inputs of the
    /// following layer. The data input and the head output never change.
    pub fn grow_to(&mut self, widths: &[usize], seed: u64) -> Result<()> {
        let n = self.layers.len();
        assert_eq!(widths.len(), n - 1, "one width per hidden layer");
        for l in 0..n {
            let out = if l + 1 == n { self.layers[l].active_out() } else { widths[l] };
            let inp = if l == 0 { self.data_channels.len() } else { widths[l - 1] };
            let init = GrowthInit::leaky(self.slope, layer_seed(seed, l));
            self.layers[l].grow(out, inp, &init)?;
        }
        Ok(())
    }

    /// Learnable values read by a forward pass under `mask`.
    pub fn param_count(&self, mask: &FilterMask) -> u64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let inp = mask.inputs(l, &self.data_channels).len();
                layer.param_count(mask.outputs[l].len(), inp)
            })
            .sum()
    }

    /// Multiply-adds of one forward pass under `mask` for an input batch of
    /// shape `[B, C]` or `[B, C, H, W]`.
    pub fn flops(&self, mask: &FilterMask, input_shape: &[usize]) -> u64 {
        let batch = input_shape[0] as u64;
        let (mut h, mut w) = match input_shape.len() {
            4 => (input_shape[2], input_shape[3]),
            _ => (1, 1),
        };
        let mut total = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let inp = mask.inputs(l, &self.data_channels).len();
            total += layer.macs(mask.outputs[l].len(), inp, h, w);
            (h, w) = layer.out_spatial(h, w);
        }
        total * batch
    }

    /// Per-layer `(weight, bias)` masks of store entries read under `mask`.
    pub fn active_masks(&self, mask: &FilterMask) -> Vec<(Vec<bool>, Vec<bool>)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| layer.active_mask(&mask.outputs[l], mask.inputs(l, &self.data_channels)))
            .collect()
    }
}

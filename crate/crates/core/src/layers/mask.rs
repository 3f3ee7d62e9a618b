use super::{scaled_width, DynStack, LayerError, Result};
use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

/// Per-layer sorted output-filter selections. Layer `l` reads exactly the
/// channels selected for layer `l - 1`; the first layer reads all data
/// channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    pub outputs: Vec<Vec<usize>>,
    /// Seed of the draw that produced this mask (0 for sliced selections).
    pub seed: u64,
}

impl FilterMask {
    /// The leading `widths[l]` filters of every layer.
    pub fn leading(widths: &[usize]) -> Self {
        Self {
            outputs: widths.iter().map(|&w| (0..w).collect()).collect(),
            seed: 0,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.outputs.iter().map(Vec::len).collect()
    }

    /// Input selection seen by layer `layer`.
    pub fn inputs<'a>(&'a self, layer: usize, data_channels: &'a [usize]) -> &'a [usize] {
        if layer == 0 {
            data_channels
        } else {
            &self.outputs[layer - 1]
        }
    }

    pub fn validate(&self, stack: &DynStack) -> Result<()> {
        if self.outputs.len() != stack.layers().len() {
            return Err(LayerError::MaskDepth {
                expected: stack.layers().len(),
                got: self.outputs.len(),
            });
        }
        for (l, (idx, layer)) in self.outputs.iter().zip(stack.layers()).enumerate() {
            if idx.is_empty() || idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LayerError::BadMask { layer: l });
            }
            let last = *idx.last().unwrap();
            if last >= layer.max_out() {
                return Err(LayerError::IndexOutOfRange {
                    layer: l,
                    index: last,
                    extent: layer.max_out(),
                });
            }
        }
        Ok(())
    }
}

/// Draws a weight-level dropout mask: every non-excluded hidden layer keeps a
/// uniform random subset of `round_half_up(beta * O_base)` filters (at least
/// one); excluded layers and the scalar head keep all filters.
pub fn sample_mask<R: RngCore + ?Sized>(
    stack: &DynStack,
    beta: f64,
    excluded: &BTreeSet<usize>,
    rng: &mut R,
) -> Result<FilterMask> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LayerError::BadBeta(beta));
    }
    let seed = rng.next_u64();
    let mut local = ChaCha8Rng::seed_from_u64(seed);
    let head = stack.layers().len() - 1;
    let outputs = stack
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let base = layer.max_out();
            if l == head || excluded.contains(&l) {
                return (0..base).collect();
            }
            let keep = scaled_width(beta, base).min(base);
            let mut picked = index::sample(&mut local, base, keep).into_vec();
            picked.sort_unstable();
            picked
        })
        .collect();
    Ok(FilterMask { outputs, seed })
}

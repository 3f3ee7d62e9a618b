//! Helpers shared by several integration-test targets.
#![allow(dead_code)]

use dyncap::layers::{DynLayer, LayerKind};
use dyncap::tensor::{Graph, Tensor};
use rand::seq::index;
use rand::Rng;

/// A dense or conv layer with its whole store filled uniformly in [-2, 2].
pub fn random_layer<R: Rng>(rng: &mut R) -> DynLayer {
    let max_out = rng.gen_range(1..=6);
    let max_in = rng.gen_range(1..=5);
    let mut layer = if rng.gen_bool(0.5) {
        DynLayer::dense(0, max_out, max_in)
    } else {
        let (k, s, p) = [(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0)][rng.gen_range(0..4)];
        DynLayer::conv(0, max_out, max_in, k, s, p)
    };
    for v in layer.weight_mut().data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    for v in layer.bias_mut().data_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    layer.set_active(max_out, max_in).unwrap();
    layer
}

/// Sorted random subset of `0..n` of size `1..=n`.
pub fn random_subset<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let k = rng.gen_range(1..=n);
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

pub fn random_input<R: Rng>(rng: &mut R, layer: &DynLayer, channels: usize) -> Tensor {
    let batch = rng.gen_range(1..=3);
    let shape = match layer.kind() {
        LayerKind::Dense => vec![batch, channels],
        LayerKind::Conv { .. } => vec![batch, channels, 5, 5],
    };
    Tensor::uniform(&shape, -2.0, 2.0, rng)
}

/// An ordinary fixed-size layer: `x W^T + b`, or a plain convolution.
pub fn plain_forward(kind: LayerKind, w: &Tensor, b: &Tensor, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (wv, bv, xv) = (g.constant(w.clone()), g.constant(b.clone()), g.constant(x.clone()));
    let y = match kind {
        LayerKind::Dense => {
            let wt = g.transpose(wv).unwrap();
            let xw = g.matmul(xv, wt).unwrap();
            g.add(xw, bv).unwrap()
        }
        LayerKind::Conv { stride, pad, .. } => g.conv2d(xv, wv, bv, stride, pad).unwrap(),
    };
    g.value(y).clone()
}

pub fn dyn_forward(layer: &DynLayer, x: &Tensor, out_idx: &[usize], in_idx: &[usize]) -> Tensor {
    let mut g = Graph::new();
    let p = layer.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = layer.forward_select(&mut g, p, xv, out_idx, in_idx).unwrap();
    g.value(y).clone()
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// One random (layer, selection) pair: alternately a leading slice and a
/// random mask. True iff the dynamic forward equals the materialized
/// layer's forward bit for bit.
pub fn materialization_pair<R: Rng>(rng: &mut R, sliced: bool) -> bool {
    let layer = random_layer(rng);
    let (out_idx, in_idx) = if sliced {
        let o = rng.gen_range(1..=layer.max_out());
        let i = rng.gen_range(1..=layer.max_in());
        ((0..o).collect::<Vec<_>>(), (0..i).collect::<Vec<_>>())
    } else {
        (random_subset(rng, layer.max_out()), random_subset(rng, layer.max_in()))
    };
    let x = random_input(rng, &layer, in_idx.len());
    let got = if sliced {
        let mut g = Graph::new();
        let p = layer.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = layer.forward_sliced(&mut g, p, xv, out_idx.len(), in_idx.len()).unwrap();
        g.value(y).clone()
    } else {
        dyn_forward(&layer, &x, &out_idx, &in_idx)
    };
    let (w, b) = layer.materialize(&out_idx, &in_idx);
    let want = plain_forward(layer.kind(), &w, &b, &x);
    got.shape() == want.shape() && bits(&got) == bits(&want)
}

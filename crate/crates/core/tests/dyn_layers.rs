mod common;

use common::*;
use dyncap::layers::{sample_mask, DynLayer, FilterMask, GrowthInit, LayerKind};
use dyncap::nets::DiscriminatorNet;
use dyncap::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn sliced_and_masked_forward_equal_materialized_layers() {
    let mut r = rng(1);
    for i in 0..400 {
        assert!(materialization_pair(&mut r, i % 2 == 0), "pair {i}");
    }
}

#[test]
fn full_mask_equals_full_forward() {
    let mut r = rng(2);
    for _ in 0..20 {
        let layer = random_layer(&mut r);
        let x = random_input(&mut r, &layer, layer.max_in());
        let all_out: Vec<usize> = (0..layer.max_out()).collect();
        let all_in: Vec<usize> = (0..layer.max_in()).collect();
        let y = dyn_forward(&layer, &x, &all_out, &all_in);
        let want = plain_forward(layer.kind(), layer.weight(), layer.bias(), &x);
        assert_eq!(bits(&y), bits(&want));
    }
}

#[test]
fn single_index_mask_is_that_filters_response() {
    let mut r = rng(3);
    let mut layer = DynLayer::conv(0, 4, 2, 3, 1, 1);
    for v in layer.weight_mut().data_mut() {
        *v = r.gen_range(-1.0..1.0);
    }
    layer.set_active(4, 2).unwrap();
    let x = Tensor::uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut r);
    let one = dyn_forward(&layer, &x, &[0], &[0, 1]);
    let all = dyn_forward(&layer, &x, &[0, 1, 2, 3], &[0, 1]);
    assert_eq!(one.shape(), &[2, 1, 5, 5]);
    for b in 0..2 {
        assert_eq!(&one.data()[b * 25..(b + 1) * 25], &all.data()[b * 100..b * 100 + 25]);
    }
}

/// Moves the selected filters (and input columns) to the front of the store.
fn permuted(layer: &DynLayer, out_idx: &[usize], in_idx: &[usize]) -> DynLayer {
    let order = |sel: &[usize], n: usize| -> Vec<usize> {
        let mut v = sel.to_vec();
        v.extend((0..n).filter(|i| !sel.contains(i)));
        v
    };
    let (oo, io) = (order(out_idx, layer.max_out()), order(in_idx, layer.max_in()));
    let (w, b) = layer.materialize(&oo, &io);
    let mut p = layer.clone();
    p.weight_mut().data_mut().copy_from_slice(w.data());
    p.bias_mut().data_mut().copy_from_slice(b.data());
    p
}

#[test]
fn masked_forward_equals_sliced_forward_of_permuted_store() {
    let mut r = rng(4);
    for _ in 0..100 {
        let layer = random_layer(&mut r);
        let out_idx = random_subset(&mut r, layer.max_out());
        let in_idx = random_subset(&mut r, layer.max_in());
        let x = random_input(&mut r, &layer, in_idx.len());
        let masked = dyn_forward(&layer, &x, &out_idx, &in_idx);
        let p = permuted(&layer, &out_idx, &in_idx);
        let mut g = Graph::new();
        let params = p.bind(&mut g, false);
        let xv = g.constant(x);
        let y = p.forward_sliced(&mut g, params, xv, out_idx.len(), in_idx.len()).unwrap();
        assert_eq!(bits(&masked), bits(g.value(y)));
    }
}

#[test]
fn grow_keeps_old_slice_output() {
    let mut r = rng(5);
    for trial in 0..50 {
        let conv = trial % 2 == 0;
        let (mo, mi) = (6, 5);
        let init = GrowthInit::leaky(0.2, trial);
        let base = if conv { DynLayer::conv(0, mo, mi, 3, 1, 1) } else { DynLayer::dense(0, mo, mi) };
        let (o0, i0) = (r.gen_range(1..=mo), r.gen_range(1..=mi));
        let mut layer = base.initialized(o0, i0, &init).unwrap();
        let x = Tensor::uniform(&if conv { vec![2, i0, 4, 4] } else { vec![2, i0] }, -1.0, 1.0, &mut r);
        let before = dyn_forward(&layer, &x, &(0..o0).collect::<Vec<_>>(), &(0..i0).collect::<Vec<_>>());
        let snapshot = layer.clone();
        let (o1, i1) = (r.gen_range(o0..=mo), r.gen_range(i0..=mi));
        layer.grow(o1, i1, &GrowthInit::leaky(0.2, 1000 + trial)).unwrap();
        let old: (Vec<usize>, Vec<usize>) = ((0..o0).collect(), (0..i0).collect());
        let after = dyn_forward(&layer, &x, &old.0, &old.1);
        assert_eq!(bits(&before), bits(&after));
        assert_eq!(bits(&snapshot.materialize(&old.0, &old.1).0), bits(&layer.materialize(&old.0, &old.1).0));
        assert_eq!((layer.active_out(), layer.active_in()), (o1, i1));
    }
}

#[test]
fn first_layer_growth_adds_filters_over_data_channels() {
    let init = GrowthInit::leaky(0.2, 9);
    let mut layer = DynLayer::conv(0, 6, 3, 3, 1, 1).initialized(4, 3, &init).unwrap();
    let before = layer.weight().data()[..4 * 27].to_vec();
    layer.grow(6, 3, &GrowthInit::leaky(0.2, 10)).unwrap();
    assert_eq!(&layer.weight().data()[..4 * 27], &before[..]);
    assert!(layer.weight().data()[4 * 27..].iter().all(|&v| v != 0.0));
    assert_eq!(layer.active_in(), 3);
}

#[test]
fn beta_one_and_half_masks() {
    let d = DiscriminatorNet::mlp(2, &[8, 8, 8], &[8, 8, 8], 0.2, 1).unwrap();
    let m = sample_mask(d.stack(), 1.0, &BTreeSet::new(), &mut rng(6)).unwrap();
    assert_eq!(m.outputs, FilterMask::leading(&[8, 8, 8, 1]).outputs);
    let m = sample_mask(d.stack(), 0.5, &BTreeSet::from([0]), &mut rng(6)).unwrap();
    assert_eq!(m.sizes(), vec![8, 4, 4, 1]);
    assert!(sample_mask(d.stack(), 0.0, &BTreeSet::new(), &mut rng(6)).is_err());
    assert!(sample_mask(d.stack(), 1.5, &BTreeSet::new(), &mut rng(6)).is_err());
}

#[test]
fn mask_selection_is_uniform() {
    let d = DiscriminatorNet::mlp(2, &[8, 8], &[8, 8], 0.2, 1).unwrap();
    let mut r = rng(7);
    let draws = 10_000;
    let mut counts = [[0usize; 8]; 2];
    for _ in 0..draws {
        let m = sample_mask(d.stack(), 0.5, &BTreeSet::new(), &mut r).unwrap();
        for l in 0..2 {
            assert_eq!(m.outputs[l].len(), 4);
            for &i in &m.outputs[l] {
                counts[l][i] += 1;
            }
        }
    }
    for layer in counts {
        for c in layer {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() <= 0.02, "{f}");
        }
    }
}

#[test]
fn masked_weights_get_exactly_zero_gradient() {
    for seed in 0..10 {
        let d = DiscriminatorNet::mlp(2, &[8, 8, 8], &[8, 8, 8], 0.2, seed).unwrap();
        let mask = sample_mask(d.stack(), 0.5, &BTreeSet::new(), &mut rng(seed)).unwrap();
        let mut g = Graph::new();
        let p = d.bind(&mut g, true);
        let x = g.constant(Tensor::uniform(&[5, 2], -1.0, 1.0, &mut rng(seed + 50)));
        let y = d.forward(&mut g, &p, x, &mask).unwrap();
        let l = g.mean(y);
        g.backward(l).unwrap();
        let active = d.stack().active_masks(&mask);
        for (lp, (aw, ab)) in p.0.iter().zip(&active) {
            let gw = g.grad(lp.weight).unwrap();
            let gb = g.grad(lp.bias).unwrap();
            for (v, a) in gw.iter().zip(aw).chain(gb.iter().zip(ab)) {
                if !a {
                    assert_eq!(v.to_bits(), 0.0f64.to_bits());
                }
            }
            assert!(gw.iter().zip(aw).any(|(v, a)| *a && *v != 0.0));
        }
    }
}

#[test]
fn parameter_counts() {
    let d = DynLayer::dense(0, 4, 3);
    assert_eq!(d.param_count(4, 3), 16);
    let c = DynLayer::conv(0, 2, 3, 3, 1, 1);
    assert_eq!(c.param_count(2, 3), 56);
    assert!(matches!(c.kind(), LayerKind::Conv { .. }));
}

#[test]
fn conv_stack_masks_skip_low_level_layers() {
    let d = DiscriminatorNet::conv(&[16, 32, 64, 128], &[16, 32, 64, 128], 0.2, 3).unwrap();
    let m = sample_mask(d.stack(), 0.5, &BTreeSet::from([0, 1]), &mut rng(8)).unwrap();
    assert_eq!(m.sizes(), vec![16, 32, 32, 64, 1]);
    let mut g = Graph::new();
    let p = d.bind(&mut g, false);
    let x = g.constant(Tensor::uniform(&[2, 1, 16, 16], -1.0, 1.0, &mut rng(9)));
    let y = d.forward(&mut g, &p, x, &m).unwrap();
    assert_eq!(g.shape(y), &[2, 1]);
}

#[test]
fn inconsistent_wiring_is_rejected() {
    let layer = DynLayer::dense(1, 4, 4).initialized(4, 4, &GrowthInit::leaky(0.2, 1)).unwrap();
    let mut g = Graph::new();
    let p = layer.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(&[1, 3]));
    assert!(layer.forward_select(&mut g, p, x, &[0, 1], &[0, 1]).is_err());
    assert!(layer.forward_select(&mut g, p, x, &[0, 9], &[0, 1, 2]).is_err());
    assert!(layer.forward_select(&mut g, p, x, &[1, 0], &[0, 1, 2]).is_err());
}

proptest! {
    #[test]
    fn mask_invariants(
        base in prop::collection::vec(1usize..20, 1..5),
        beta in 0.05f64..=1.0,
        seed in any::<u64>(),
        excl in prop::collection::btree_set(0usize..5, 0..3),
    ) {
        let d = DiscriminatorNet::mlp(2, &base, &base, 0.2, 1).unwrap();
        let m = sample_mask(d.stack(), beta, &excl, &mut rng(seed)).unwrap();
        let again = sample_mask(d.stack(), beta, &excl, &mut rng(seed)).unwrap();
        prop_assert_eq!(&m, &again);
        prop_assert!(m.validate(d.stack()).is_ok());
        for (l, idx) in m.outputs.iter().enumerate() {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            if l == base.len() {
                prop_assert_eq!(idx.len(), 1);
            } else if excl.contains(&l) {
                prop_assert_eq!(idx.len(), base[l]);
            } else {
                let want = ((beta * base[l] as f64 + 0.5 + 1e-9).floor() as usize).clamp(1, base[l]);
                prop_assert_eq!(idx.len(), want);
            }
        }
    }

    #[test]
    fn materialization_holds(seed in any::<u64>(), sliced in any::<bool>()) {
        prop_assert!(materialization_pair(&mut rng(seed), sliced));
    }

    #[test]
    fn growth_is_reproducible(seed in any::<u64>(), o in 1usize..6, i in 1usize..6) {
        let a = DynLayer::dense(0, 6, 6).initialized(o, i, &GrowthInit::leaky(0.2, seed)).unwrap();
        let b = DynLayer::dense(0, 6, 6).initialized(o, i, &GrowthInit::leaky(0.2, seed)).unwrap();
        prop_assert_eq!(bits(a.weight()), bits(b.weight()));
    }
}

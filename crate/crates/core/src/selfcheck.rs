//! Finite-difference self-check over every primitive and both layer kinds.
//!
//! Each case checks a vector-Jacobian product against central differences of
//! `<r, f(x)>` for a random cotangent `r`, so a case only exercises the ops it
//! names and a planted fault is attributed to the right op.

use crate::layers::{DynLayer, GrowthInit, LayerError, LayerParams};
use crate::tensor::gradcheck::check_vjp;
use crate::tensor::{Graph, OpKind, Tensor, TensorError, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_SEEDS: u64 = 20;
/// Large enough that round-off stays well below the bar for the mostly
/// linear ops; curvature error is O(EPS^2).
const EPS: f64 = 1e-4;

type CaseFn = Arc<dyn Fn(&mut Graph, Var) -> Result<Var, TensorError>>;

struct Case {
    /// Report group: an op name, `dense-layer` or `conv-layer`.
    group: &'static str,
    name: String,
    point: Tensor,
    f: CaseFn,
}

fn layer_err(e: LayerError) -> TensorError {
    match e {
        LayerError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "layer",
            msg: other.to_string(),
        },
    }
}

fn arc<F: Fn(&mut Graph, Var) -> Result<Var, TensorError> + 'static>(f: F) -> CaseFn {
    Arc::new(f)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Values bounded away from the leaky-relu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.05..2.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn sorted_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    let mut push = |group, name: &str, point, f| {
        cases.push(Case {
            group,
            name: name.to_string(),
            point,
            f,
        })
    };

    type Bin = fn(&mut Graph, Var, Var) -> Result<Var, TensorError>;
    let binaries: [(&'static str, Bin); 3] = [("add", Graph::add), ("sub", Graph::sub), ("mul", Graph::mul)];
    for (name, op) in binaries {
        let c = randn(rng, &[4]);
        push(name, &format!("{name}/lhs"), randn(rng, &[3, 4]), arc(move |g, x| {
            let c = g.constant(c.clone());
            op(g, x, c)
        }));
        let c = randn(rng, &[3, 4]);
        push(name, &format!("{name}/rhs-broadcast"), randn(rng, &[4]), arc(move |g, x| {
            let c = g.constant(c.clone());
            op(g, c, x)
        }));
    }
    push("mul", "mul/square", randn(rng, &[5]), arc(|g, x| g.mul(x, x)));
    let c: f64 = rng.gen_range(-2.0..2.0);
    push("scale", "scale", randn(rng, &[2, 3]), arc(move |g, x| Ok(g.scale(x, c))));

    let b = randn(rng, &[4, 5]);
    push("matmul", "matmul/lhs", randn(rng, &[3, 4]), arc(move |g, x| {
        let b = g.constant(b.clone());
        g.matmul(x, b)
    }));
    let a = randn(rng, &[3, 4]);
    push("matmul", "matmul/rhs", randn(rng, &[4, 5]), arc(move |g, x| {
        let a = g.constant(a.clone());
        g.matmul(a, x)
    }));
    push("transpose", "transpose", randn(rng, &[3, 5]), arc(|g, x| g.transpose(x)));

    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let k = randn(rng, &[4, 3, 3, 3]);
        let bias = randn(rng, &[4]);
        push("conv2d", &format!("conv2d/input s{stride}p{pad}"), randn(rng, &[2, 3, 5, 5]), arc(move |g, x| {
            let (k, bias) = (g.constant(k.clone()), g.constant(bias.clone()));
            g.conv2d(x, k, bias, stride, pad)
        }));
        let input = randn(rng, &[2, 3, 5, 5]);
        let bias = randn(rng, &[4]);
        push("conv2d", &format!("conv2d/kernel s{stride}p{pad}"), randn(rng, &[4, 3, 3, 3]), arc(move |g, x| {
            let (input, bias) = (g.constant(input.clone()), g.constant(bias.clone()));
            g.conv2d(input, x, bias, stride, pad)
        }));
        let input = randn(rng, &[2, 3, 5, 5]);
        let k = randn(rng, &[4, 3, 3, 3]);
        push("conv2d", &format!("conv2d/bias s{stride}p{pad}"), randn(rng, &[4]), arc(move |g, x| {
            let (input, k) = (g.constant(input.clone()), g.constant(k.clone()));
            g.conv2d(input, k, x, stride, pad)
        }));
    }

    push("leaky_relu", "leaky_relu", away_from_zero(rng, &[3, 4]), arc(|g, x| g.leaky_relu(x, 0.2)));
    push("sigmoid", "sigmoid", Tensor::uniform(&[3, 4], -3.0, 3.0, rng), arc(|g, x| Ok(g.sigmoid(x))));
    push("softplus", "softplus", Tensor::uniform(&[3, 4], -3.0, 3.0, rng), arc(|g, x| Ok(g.softplus(x))));
    push("tanh", "tanh", Tensor::uniform(&[3, 4], -3.0, 3.0, rng), arc(|g, x| Ok(g.tanh(x))));
    push("mean", "mean", randn(rng, &[3, 4]), arc(|g, x| Ok(g.mean(x))));
    push("sum", "sum", randn(rng, &[3, 4]), arc(|g, x| Ok(g.sum(x))));
    push("reshape", "reshape", randn(rng, &[3, 4]), arc(|g, x| g.reshape(x, &[2, 6])));

    let rows = sorted_subset(rng, 5, 3);
    push("select", "select/rows", randn(rng, &[5, 4]), arc(move |g, x| g.select(x, &rows, None)));
    let rows = sorted_subset(rng, 5, 2);
    let cols = sorted_subset(rng, 4, 3);
    push("select", "select/rows+cols", randn(rng, &[5, 4, 2, 2]), arc(move |g, x| {
        g.select(x, &rows, Some(&cols))
    }));
    push("upsample2x", "upsample2x", randn(rng, &[2, 3, 2, 3]), arc(|g, x| g.upsample2x(x)));
    cases
}

fn layer_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    let init = GrowthInit::leaky(0.2, rng.gen());
    let (max_out, max_in) = (6, 5);
    let layers = [
        ("dense-layer", DynLayer::dense(0, max_out, max_in)),
        ("conv-layer", DynLayer::conv(0, max_out, max_in, 3, 2, 1)),
    ];
    for (group, layer) in layers {
        let layer = layer.initialized(max_out, max_in, &init).unwrap();
        let (out, inp) = (rng.gen_range(1..=max_out), rng.gen_range(1..=max_in));
        let k_out = rng.gen_range(1..=max_out);
        let k_in = rng.gen_range(1..=max_in);
        let selections = [
            ("sliced", (0..out).collect::<Vec<_>>(), (0..inp).collect::<Vec<_>>()),
            ("masked", sorted_subset(rng, max_out, k_out), sorted_subset(rng, max_in, k_in)),
        ];
        for (how, out_idx, in_idx) in selections {
            let input_shape = if group == "dense-layer" {
                vec![3, in_idx.len()]
            } else {
                vec![2, in_idx.len(), 5, 5]
            };
            let input = randn(rng, &input_shape);
            let layer = Arc::new(layer.clone());

            let (l, o, i, w, b) = (layer.clone(), out_idx.clone(), in_idx.clone(), layer.weight().clone(), layer.bias().clone());
            cases.push(Case {
                group,
                name: format!("{group}/{how}/input"),
                point: input.clone(),
                f: arc(move |g, x| {
                    let params = LayerParams {
                        weight: g.constant(w.clone()),
                        bias: g.constant(b.clone()),
                    };
                    l.forward_select(g, params, x, &o, &i).map_err(layer_err)
                }),
            });
            let (l, o, i, b, inp_t) = (layer.clone(), out_idx.clone(), in_idx.clone(), layer.bias().clone(), input.clone());
            cases.push(Case {
                group,
                name: format!("{group}/{how}/weight"),
                point: layer.weight().clone(),
                f: arc(move |g, x| {
                    let params = LayerParams {
                        weight: x,
                        bias: g.constant(b.clone()),
                    };
                    let xin = g.constant(inp_t.clone());
                    l.forward_select(g, params, xin, &o, &i).map_err(layer_err)
                }),
            });
            let (l, o, i, w, inp_t) = (layer.clone(), out_idx, in_idx, layer.weight().clone(), input);
            cases.push(Case {
                group,
                name: format!("{group}/{how}/bias"),
                point: layer.bias().clone(),
                f: arc(move |g, x| {
                    let params = LayerParams {
                        weight: g.constant(w.clone()),
                        bias: x,
                    };
                    let xin = g.constant(inp_t.clone());
                    l.forward_select(g, params, xin, &o, &i).map_err(layer_err)
                }),
            });
        }
    }
    cases
}

/// Worst result seen for one report group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub group: String,
    pub max_rel_error: f64,
    pub worst_case: String,
    pub worst_seed: u64,
    pub worst_index: usize,
    pub checks: usize,
}

impl GroupResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
    pub seeds: u64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupResult::passed)
    }

    pub fn failing(&self) -> Vec<&GroupResult> {
        self.groups.iter().filter(|g| !g.passed()).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    /// One line per group plus a verdict line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            s.push_str(&format!(
                "{:<12} {:>5} checks  worst rel err {:.3e}  ({} seed {} coord {})  {}\n",
                g.group,
                g.checks,
                g.max_rel_error,
                g.worst_case,
                g.worst_seed,
                g.worst_index,
                if g.passed() { "ok" } else { "FAIL" }
            ));
        }
        let failing: Vec<_> = self.failing().iter().map(|g| g.group.clone()).collect();
        if failing.is_empty() {
            s.push_str(&format!("gradcheck passed: {} seeds, bar {GRADCHECK_TOLERANCE:e}\n", self.seeds));
        } else {
            s.push_str(&format!("gradcheck FAILED for: {}\n", failing.join(", ")));
        }
        s
    }
}

/// Runs every case for `seeds` seeds. With `fault`, every graph doubles the
/// backward contribution of that op.
pub fn run_gradcheck(seeds: u64, fault: Option<OpKind>) -> Result<GradcheckReport, TensorError> {
    let mut groups: BTreeMap<&'static str, GroupResult> = BTreeMap::new();
    for kind in OpKind::PRIMITIVES {
        groups.insert(kind.name(), GroupResult::empty(kind.name()));
    }
    for name in ["dense-layer", "conv-layer"] {
        groups.insert(name, GroupResult::empty(name));
    }
    let make_graph = || fault.map_or_else(Graph::new, Graph::with_fault);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cases = primitive_cases(&mut rng);
        cases.extend(layer_cases(&mut rng));
        for case in cases {
            let out_len = {
                let mut g = Graph::new();
                let x = g.constant(case.point.clone());
                let y = (case.f)(&mut g, x)?;
                g.value(y).len()
            };
            let cotangent: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = case.f.clone();
            let check = check_vjp(make_graph, move |g, x| f(g, x), &case.point, &cotangent, EPS)?;
            let entry = groups.get_mut(case.group).expect("every case group is registered");
            entry.checks += 1;
            if entry.checks == 1 || check.max_rel_error > entry.max_rel_error {
                entry.max_rel_error = check.max_rel_error;
                entry.worst_case = case.name;
                entry.worst_seed = seed;
                entry.worst_index = check.worst_index;
            }
        }
    }
    Ok(GradcheckReport {
        groups: groups.into_values().collect(),
        seeds,
    })
}

impl GroupResult {
    fn empty(group: &str) -> Self {
        Self {
            group: group.to_string(),
            max_rel_error: 0.0,
            worst_case: String::new(),
            worst_seed: 0,
            worst_index: 0,
            checks: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_suite_passes() {
        let r = run_gradcheck(2, None).unwrap();
        assert!(r.passed(), "{}", r.render());
        assert!(r.groups.iter().all(|g| g.checks > 0));
        assert_eq!(r.groups.len(), OpKind::PRIMITIVES.len() + 2);
    }

    #[test]
    fn planted_fault_is_attributed() {
        let r = run_gradcheck(1, Some(OpKind::Tanh)).unwrap();
        let failing: Vec<_> = r.failing().iter().map(|g| g.group.as_str()).collect();
        assert_eq!(failing, vec!["tanh"]);
        let r = run_gradcheck(1, Some(OpKind::Matmul)).unwrap();
        let failing: Vec<_> = r.failing().iter().map(|g| g.group.as_str()).collect();
        assert_eq!(failing, vec!["dense-layer", "matmul"]);
    }
}

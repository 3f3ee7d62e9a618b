//! Central finite-difference verification of analytic gradients.

use super::{Graph, Result, Tensor, TensorError, Var};

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest coordinate-wise relative error between `f`'s analytic gradient at
/// `point` and its central-difference estimate with step `eps`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_gradient(Graph::new, f, point, eps).map(|c| c.max_rel_error)
}

/// Like [`finite_diff_check`] but with a caller-supplied graph factory (used
/// for fault injection) and the full comparison returned.
pub fn check_gradient<G, F>(make_graph: G, f: F, point: &Tensor, eps: f64) -> Result<GradCheck>
where
    G: Fn() -> Graph,
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Invalid {
            op: "finite_diff_check",
            msg: format!("eps must be positive, got {eps}"),
        });
    }

    let mut g = make_graph();
    let x = g.param(point.clone());
    let out = f(&mut g, x)?;
    if !g.value(out).is_scalar() {
        return Err(TensorError::NonScalarLoss(g.value(out).shape().to_vec()));
    }
    g.backward(out)?;
    let analytic = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; point.len()]);

    let eval = |p: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let out = f(&mut g, x)?;
        Ok(g.value(out).item())
    };

    compare(analytic, point, eps, eval)
}

/// Checks the vector-Jacobian product of a non-scalar `f` against central
/// differences of `<cotangent, f(x)>`, so no reduction op enters the graph.
pub fn check_vjp<G, F>(make_graph: G, f: F, point: &Tensor, cotangent: &[f64], eps: f64) -> Result<GradCheck>
where
    G: Fn() -> Graph,
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Invalid {
            op: "check_vjp",
            msg: format!("eps must be positive, got {eps}"),
        });
    }
    let mut g = make_graph();
    let x = g.param(point.clone());
    let out = f(&mut g, x)?;
    g.backward_with(out, cotangent)?;
    let analytic = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; point.len()]);

    let eval = |p: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let out = f(&mut g, x)?;
        Ok(g.value(out).data().iter().zip(cotangent).map(|(a, b)| a * b).sum())
    };
    compare(analytic, point, eps, eval)
}

fn compare(analytic: Vec<f64>, point: &Tensor, eps: f64, eval: impl Fn(Tensor) -> Result<f64>) -> Result<GradCheck> {
    let mut numeric = Vec::with_capacity(point.len());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = relative_error(analytic[i], fd);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
        numeric.push(fd);
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

//! Evaluation statistics: toy Fréchet distance, over-fit gap, mode coverage.

use crate::tensor::Tensor;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("need at least {need} samples for a {dim}-dimensional fit, got {got}")]
    TooFewSamples { need: usize, got: usize, dim: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("empty sample split")]
    EmptySplit,
    #[error("discriminator failed: {0}")]
    Critic(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Added to every fitted covariance diagonal.
pub const COV_REGULARIZER: f64 = 1e-8;
/// Share of samples a center must attract to count as covered.
pub const COVERAGE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub cov: Vec<f64>,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

/// Sample mean and unbiased covariance (plus `1e-8 * I`) of `[n, ...]`
/// samples, each flattened to a vector.
pub fn fit_gaussian(samples: &Tensor) -> Result<GaussianFit> {
    let n = samples.shape()[0];
    let d = samples.len() / n;
    if n < d + 1 || n < 2 {
        return Err(MetricError::TooFewSamples {
            need: d + 1,
            got: n,
            dim: d,
        });
    }
    let data = samples.data();
    let mut mean = vec![0.0; d];
    for row in data.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in data.chunks(d) {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[i * d + j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
        cov[i * d + i] += COV_REGULARIZER;
    }
    Ok(GaussianFit { mean, cov })
}

/// Eigen-decomposition of the symmetrized matrix.
fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

fn check_psd(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Result<()> {
    match eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min) {
        lo if lo < -1e-10 => Err(MetricError::NotPsd(lo)),
        _ => Ok(()),
    }
}

/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let (sa, sb) = (a.cov_matrix(), b.cov_matrix());
    let ea = sym_eigen(&sa);
    check_psd(&ea)?;
    check_psd(&sym_eigen(&sb))?;

    let root: DVector<f64> = ea.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&root) * ea.eigenvectors.transpose();
    let inner = &sqrt_a * &sb * &sqrt_a;
    let cross: f64 = sym_eigen(&inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();

    let d2 = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

/// Anything that scores a batch of samples with one logit each.
pub trait Critic {
    fn logits(&self, samples: &Tensor) -> std::result::Result<Vec<f64>, String>;
}

/// Mean logit on training samples minus mean logit on held-out samples.
pub fn overfit_gap<C: Critic + ?Sized>(critic: &C, train: &Tensor, val: &Tensor) -> Result<f64> {
    let mean = |t: &Tensor| -> Result<f64> {
        let l = critic.logits(t).map_err(MetricError::Critic)?;
        if l.is_empty() {
            return Err(MetricError::EmptySplit);
        }
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    };
    Ok(mean(train)? - mean(val)?)
}

/// Number of `centers` that attract at least `threshold` of the samples
/// within `radius`. Samples are raw `[n, 2]` points.
pub fn mode_coverage_with(samples: &Tensor, centers: &[[f64; 2]], radius: f64, threshold: f64) -> usize {
    let n = samples.shape()[0];
    let mut counts = vec![0usize; centers.len()];
    for p in samples.data().chunks(2) {
        for (c, count) in centers.iter().zip(counts.iter_mut()) {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d2 <= radius * radius {
                *count += 1;
            }
        }
    }
    counts.iter().filter(|&&c| c as f64 >= threshold * n as f64).count()
}

pub fn mode_coverage(samples: &Tensor, centers: &[[f64; 2]], radius: f64) -> usize {
    mode_coverage_with(samples, centers, radius, COVERAGE_THRESHOLD)
}

/// Principal-component projection, used to reduce images before fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    /// `k x d`, rows ordered by decreasing variance.
    components: Vec<f64>,
    k: usize,
}

impl Pca {
    pub fn fit(samples: &Tensor, k: usize) -> Result<Self> {
        let fit = fit_gaussian(samples)?;
        let d = fit.dim();
        let eig = sym_eigen(&fit.cov_matrix());
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let k = k.min(d);
        let mut components = Vec::with_capacity(k * d);
        for &c in &order[..k] {
            components.extend(eig.eigenvectors.column(c).iter());
        }
        Ok(Self {
            mean: fit.mean,
            components,
            k,
        })
    }

    pub fn project(&self, samples: &Tensor) -> Tensor {
        let n = samples.shape()[0];
        let d = self.mean.len();
        let mut out = Vec::with_capacity(n * self.k);
        for row in samples.data().chunks(d) {
            for comp in self.components.chunks(d) {
                out.push(row.iter().zip(&self.mean).zip(comp).map(|((x, m), c)| (x - m) * c).sum());
            }
        }
        Tensor::new(&[n, self.k], out).unwrap()
    }
}

/// One evaluation snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub step: u64,
    pub toy_frechet: f64,
    pub overfit_gap: f64,
    pub modes_covered: usize,
    pub generated_samples: usize,
    pub reference_samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(mean: &[f64], cov: &[f64]) -> GaussianFit {
        GaussianFit {
            mean: mean.to_vec(),
            cov: cov.to_vec(),
        }
    }

    #[test]
    fn identical_fits_are_zero() {
        let a = fit(&[0.3, -1.0], &[2.0, 0.4, 0.4, 1.0]);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-9);
    }

    #[test]
    fn shifted_identity_is_25() {
        let a = fit(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let b = fit(&[3.0, 4.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = fit(&[0.0], &[1.0]);
        let b = fit(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &b), Err(MetricError::DimensionMismatch(1, 2))));
        let bad = fit(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(frechet_distance(&b, &bad), Err(MetricError::NotPsd(_))));
        let t = Tensor::zeros(&[2, 2]);
        assert!(matches!(fit_gaussian(&t), Err(MetricError::TooFewSamples { .. })));
    }

    #[test]
    fn constant_samples_fit_regularizer() {
        let t = Tensor::filled(&[10, 3], 0.7);
        let f = fit_gaussian(&t).unwrap();
        assert!(f.mean.iter().all(|m| (m - 0.7).abs() < 1e-15));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { COV_REGULARIZER } else { 0.0 };
                assert!((f.cov[i * 3 + j] - want).abs() < 1e-20);
            }
        }
    }

    #[test]
    fn coverage_cases() {
        let centers = crate::data::ring8_centers();
        let all: Vec<f64> = centers.iter().flat_map(|c| c.to_vec()).collect();
        let t = Tensor::new(&[8, 2], all).unwrap();
        assert_eq!(mode_coverage(&t, &centers, 0.45), 8);
        let one = Tensor::new(&[4, 2], [2.0, 0.0].repeat(4)).unwrap();
        assert_eq!(mode_coverage(&one, &centers, 0.45), 1);
    }

    struct Lookup(Tensor);
    impl Critic for Lookup {
        fn logits(&self, s: &Tensor) -> std::result::Result<Vec<f64>, String> {
            Ok(s.data()
                .chunks(2)
                .map(|p| if self.0.data().chunks(2).any(|q| q == p) { 5.0 } else { -5.0 })
                .collect())
        }
    }

    #[test]
    fn memorizing_critic_has_large_gap() {
        let train = Tensor::new(&[3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let val = Tensor::new(&[2, 2], vec![9.0, 9.0, 8.0, 8.0]).unwrap();
        let gap = overfit_gap(&Lookup(train.clone()), &train, &val).unwrap();
        assert!(gap > 1.0);
        let shuffled = train.gather_rows(&[2, 0, 1]);
        assert_eq!(overfit_gap(&Lookup(train), &shuffled, &val).unwrap(), gap);
    }

    #[test]
    fn pca_keeps_dominant_axis() {
        let data: Vec<f64> = (0..50).flat_map(|i| {
            let t = i as f64 / 10.0;
            vec![t, 0.01 * (i % 3) as f64, -t]
        }).collect();
        let t = Tensor::new(&[50, 3], data).unwrap();
        let p = Pca::fit(&t, 1).unwrap();
        let proj = p.project(&t);
        assert_eq!(proj.shape(), &[50, 1]);
        let f = fit_gaussian(&proj).unwrap();
        // all of the variance of x and -x lies on the first component
        let total = fit_gaussian(&t).unwrap();
        let along = (total.cov[0] + total.cov[8] - 2.0 * total.cov[2]) / 2.0;
        assert!((f.cov[0] - along).abs() / along < 1e-3, "{} vs {along}", f.cov[0]);
    }
}

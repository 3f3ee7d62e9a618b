//! Deterministic synthetic datasets.
//!
//! Samples are stored normalized to `[-1, 1]`; `Dataset::scale` maps them
//! back to raw coordinates (`raw = sample * scale`). For the point sets the
//! scale is a power of two, so the round trip is exact.

use crate::container::Container;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("unknown dataset kind `{0}`")]
    UnknownKind(String),
    #[error("unknown regime `{0}`")]
    UnknownRegime(String),
    #[error("dataset needs at least {min} samples, got {got}")]
    TooSmall { min: usize, got: usize },
    #[error("batch of {batch} exceeds the {train} training samples")]
    BatchTooLarge { batch: usize, train: usize },
    #[error("noise scale must be finite and nonnegative, got {0}")]
    BadNoise(f64),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Radius of the ring of Gaussian blobs in raw coordinates.
pub const RING_RADIUS: f64 = 2.0;
pub const RING_NOISE: f64 = 0.15;
const POINT_SCALE: f64 = 4.0;

/// The eight blob centers, counter-clockwise from `(2, 0)`.
pub fn ring8_centers() -> [[f64; 2]; 8] {
    // RING_RADIUS at 45 degrees
    let d = SQRT_2;
    [
        [RING_RADIUS, 0.0],
        [d, d],
        [0.0, RING_RADIUS],
        [-d, d],
        [-RING_RADIUS, 0.0],
        [-d, -d],
        [0.0, -RING_RADIUS],
        [d, -d],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Ring8,
    TwoMoons,
    Sprites16,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Ring8 => "ring8",
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::Sprites16 => "sprites16",
        }
    }

    /// Per-sample shape (without the batch extent).
    pub fn sample_shape(self) -> Vec<usize> {
        match self {
            DatasetKind::Ring8 | DatasetKind::TwoMoons => vec![2],
            DatasetKind::Sprites16 => vec![1, 16, 16],
        }
    }

    pub fn is_image(self) -> bool {
        self == DatasetKind::Sprites16
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring8" => Ok(DatasetKind::Ring8),
            "two_moons" => Ok(DatasetKind::TwoMoons),
            "sprites16" => Ok(DatasetKind::Sprites16),
            other => Err(DataError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn ring8(n_samples: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Ring8,
            n_samples,
            noise: RING_NOISE,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    /// `[n, 2]` points or `[n, 1, 16, 16]` images, in `[-1, 1]`.
    pub samples: Tensor,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub scale: f64,
}

/// Draws `n` raw samples of `spec`'s distribution (unnormalized for points).
fn draw<R: Rng>(kind: DatasetKind, n: usize, noise: f64, rng: &mut R) -> Vec<f64> {
    let gauss = |rng: &mut R| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * noise
    };
    match kind {
        DatasetKind::Ring8 => {
            let centers = ring8_centers();
            let mut out = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let c = centers[rng.gen_range(0..8)];
                out.push(c[0] + gauss(rng));
                out.push(c[1] + gauss(rng));
            }
            out
        }
        DatasetKind::TwoMoons => {
            // Two interleaved half circles, centred on the origin.
            let mut out = Vec::with_capacity(2 * n);
            for i in 0..n {
                let t = rng.gen_range(0.0..PI);
                let (x, y) = if i % 2 == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                out.push(x - 0.5 + gauss(rng));
                out.push(y - 0.25 + gauss(rng));
            }
            out
        }
        DatasetKind::Sprites16 => {
            let mut out = Vec::with_capacity(256 * n);
            for _ in 0..n {
                out.extend(sprite(rng));
            }
            out
        }
    }
}

/// One 16x16 image: 1-3 rectangles or discs over a dark background, edges
/// antialiased by 4x4 supersampling.
fn sprite<R: Rng>(rng: &mut R) -> Vec<f64> {
    let mut img = vec![0.0f64; 256];
    let shapes = rng.gen_range(1..=3);
    for _ in 0..shapes {
        let intensity: f64 = rng.gen_range(0.3..1.0);
        let disc = rng.gen_bool(0.5);
        let (cx, cy): (f64, f64) = (rng.gen_range(3.0..13.0), rng.gen_range(3.0..13.0));
        let (rx, ry): (f64, f64) = (rng.gen_range(1.5..5.0), rng.gen_range(1.5..5.0));
        for py in 0..16 {
            for px in 0..16 {
                let mut hits = 0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let x = px as f64 + (sx as f64 + 0.5) / 4.0;
                        let y = py as f64 + (sy as f64 + 0.5) / 4.0;
                        let inside = if disc {
                            let r = rx.min(ry);
                            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
                        } else {
                            (x - cx).abs() <= rx && (y - cy).abs() <= ry
                        };
                        hits += inside as u32;
                    }
                }
                let v = intensity * hits as f64 / 16.0;
                let p = &mut img[py * 16 + px];
                *p = p.max(v);
            }
        }
    }
    img.into_iter().map(|v| 2.0 * v - 1.0).collect()
}

fn scale_for(kind: DatasetKind) -> f64 {
    match kind {
        DatasetKind::Ring8 | DatasetKind::TwoMoons => POINT_SCALE,
        DatasetKind::Sprites16 => 1.0,
    }
}

/// Normalizes raw values into `[-1, 1]`.
fn normalize(kind: DatasetKind, raw: Vec<f64>) -> Vec<f64> {
    let s = scale_for(kind);
    raw.into_iter().map(|v| (v / s).clamp(-1.0, 1.0)).collect()
}

/// Raw-coordinate draw of `n` fresh samples from `spec`'s distribution with
/// its own seed; used for reference statistics and held-out probes.
pub fn population_sample(kind: DatasetKind, noise: f64, n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = draw(kind, n, noise, &mut rng);
    let s = scale_for(kind);
    let data = normalize(kind, raw).into_iter().map(|v| v * s).collect();
    let mut shape = vec![n];
    shape.extend(kind.sample_shape());
    Tensor::new(&shape, data).unwrap()
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_samples < 2 {
        return Err(DataError::TooSmall {
            min: 2,
            got: spec.n_samples,
        });
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(DataError::BadNoise(spec.noise));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw = draw(spec.kind, spec.n_samples, spec.noise, &mut rng);
    let mut shape = vec![spec.n_samples];
    shape.extend(spec.kind.sample_shape());
    let samples = Tensor::new(&shape, normalize(spec.kind, raw)).unwrap();

    let mut order: Vec<usize> = (0..spec.n_samples).collect();
    order.shuffle(&mut rng);
    let n_val = (spec.n_samples / 10).max(1);
    let mut val = order.split_off(spec.n_samples - n_val);
    let mut train = order;
    train.sort_unstable();
    val.sort_unstable();
    Ok(Dataset {
        spec: *spec,
        samples,
        train,
        val,
        scale: scale_for(spec.kind),
    })
}

impl Dataset {
    pub fn train_samples(&self) -> Tensor {
        self.samples.gather_rows(&self.train)
    }

    pub fn val_samples(&self) -> Tensor {
        self.samples.gather_rows(&self.val)
    }

    /// Uniform draw with replacement from the training split.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Tensor> {
        if batch == 0 || batch > self.train.len() {
            return Err(DataError::BatchTooLarge {
                batch,
                train: self.train.len(),
            });
        }
        let idx: Vec<usize> = (0..batch).map(|_| self.train[rng.gen_range(0..self.train.len())]).collect();
        Ok(self.samples.gather_rows(&idx))
    }

    /// Dump for inspection in the binary container format.
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push_meta("seed", self.spec.seed);
        c.push_meta("n_samples", self.spec.n_samples as u64);
        c.push_array("samples", self.samples.shape(), self.samples.data().to_vec());
        c.push_array("train", &[self.train.len()], self.train.iter().map(|&i| i as f64).collect());
        c.push_array("val", &[self.val.len()], self.val.iter().map(|&i| i as f64).collect());
        c
    }
}

/// Named training-set sizes: a tiny and a small limited-data regime and a
/// sufficient one, 64x larger than `limited`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    LimitedTiny,
    Limited,
    Sufficient,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::LimitedTiny, Regime::Limited, Regime::Sufficient];

    pub fn name(self) -> &'static str {
        match self {
            Regime::LimitedTiny => "limited-tiny",
            Regime::Limited => "limited",
            Regime::Sufficient => "sufficient",
        }
    }

    pub fn n_samples(self) -> usize {
        match self {
            Regime::LimitedTiny => 64,
            Regime::Limited => 1024,
            Regime::Sufficient => 65536,
        }
    }

    pub fn spec(self, seed: u64) -> DatasetSpec {
        DatasetSpec::ring8(self.n_samples(), seed)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| DataError::UnknownRegime(s.to_string()))
    }
}

pub fn regime_presets() -> Vec<(&'static str, DatasetSpec)> {
    Regime::ALL.iter().map(|r| (r.name(), r.spec(0))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_without_noise_hits_centers() {
        let d = generate(&DatasetSpec {
            noise: 0.0,
            ..DatasetSpec::ring8(500, 3)
        })
        .unwrap();
        let centers = ring8_centers();
        for p in d.samples.data().chunks(2) {
            let raw = [p[0] * d.scale, p[1] * d.scale];
            assert!(centers.contains(&raw), "{raw:?}");
        }
    }

    #[test]
    fn centers_are_on_the_ring() {
        let c = ring8_centers();
        assert_eq!(c[0], [2.0, 0.0]);
        assert_eq!(c[1], [SQRT_2, SQRT_2]);
        assert_eq!(c[2], [0.0, 2.0]);
    }

    #[test]
    fn generation_is_pure_and_bounded() {
        for kind in [DatasetKind::Ring8, DatasetKind::TwoMoons, DatasetKind::Sprites16] {
            let spec = DatasetSpec {
                kind,
                n_samples: 200,
                noise: 0.15,
                seed: 9,
            };
            let a = generate(&spec).unwrap();
            assert_eq!(a, generate(&spec).unwrap());
            assert!(a.samples.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn splits_partition() {
        let d = generate(&DatasetSpec::ring8(64, 1)).unwrap();
        assert_eq!(d.train.len(), 58);
        assert_eq!(d.val.len(), 6);
        let mut all: Vec<usize> = d.train.iter().chain(&d.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn batches_come_from_train_only() {
        let d = generate(&DatasetSpec::ring8(40, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = d.train_samples();
        for _ in 0..50 {
            let b = d.sample_batch(&mut rng, d.train.len()).unwrap();
            for row in b.data().chunks(2) {
                assert!(train.data().chunks(2).any(|t| t == row));
            }
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(d.sample_batch(&mut r1, 8).unwrap(), d.sample_batch(&mut r2, 8).unwrap());
        assert!(matches!(
            d.sample_batch(&mut rng, d.train.len() + 1),
            Err(DataError::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn presets() {
        let p = regime_presets();
        assert_eq!(p[0].1.n_samples, 64);
        assert_eq!(p[2].1.n_samples, 65536);
        assert_eq!(p[2].1.n_samples / p[1].1.n_samples, 64);
        assert!("unknown".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn dump_round_trips() {
        let d = generate(&DatasetSpec::ring8(32, 4)).unwrap();
        let mut buf = Vec::new();
        d.to_container().write_to(&mut buf).unwrap();
        let c = Container::read_from(buf.as_slice()).unwrap();
        assert_eq!(c.array("samples").unwrap().data, d.samples.data());
    }
}

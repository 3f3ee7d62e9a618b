//! Generator and discriminator networks.

use crate::layers::{DynLayer, DynStack, FilterMask, GrowthInit, LayerError, LayerParams, StackParams};
use crate::metrics::Critic;
use crate::tensor::{Graph, Tensor, Var};

type Result<T> = std::result::Result<T, LayerError>;

/// Rows per forward pass when scoring or sampling large sets.
const EVAL_CHUNK: usize = 2048;

fn init_seed(seed: u64, layer: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorArch {
    /// Dense stack with a linear output, for point data.
    Mlp,
    /// Dense projection to `64 x 4 x 4`, then two upsample+conv stages and a
    /// tanh output, for 16x16 images.
    Upconv,
}

/// Fixed-capacity generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    arch: GeneratorArch,
    latent_dim: usize,
    layers: Vec<DynLayer>,
    slope: f64,
    sample_shape: Vec<usize>,
}

impl GeneratorNet {
    pub fn mlp(latent_dim: usize, hidden: &[usize], out_dim: usize, slope: f64, seed: u64) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = latent_dim;
        for (l, &w) in hidden.iter().chain(std::iter::once(&out_dim)).enumerate() {
            let init = GrowthInit::leaky(slope, init_seed(seed, l));
            layers.push(DynLayer::dense(l, w, prev).initialized(w, prev, &init)?);
            prev = w;
        }
        Ok(Self {
            arch: GeneratorArch::Mlp,
            latent_dim,
            layers,
            slope,
            sample_shape: vec![out_dim],
        })
    }

    pub fn upconv(latent_dim: usize, slope: f64, seed: u64) -> Result<Self> {
        let init = |l| GrowthInit::leaky(slope, init_seed(seed, l));
        let layers = vec![
            DynLayer::dense(0, 64 * 16, latent_dim).initialized(64 * 16, latent_dim, &init(0))?,
            DynLayer::conv(1, 32, 64, 3, 1, 1).initialized(32, 64, &init(1))?,
            DynLayer::conv(2, 16, 32, 3, 1, 1).initialized(16, 32, &init(2))?,
            DynLayer::conv(3, 1, 16, 3, 1, 1).initialized(1, 16, &init(3))?,
        ];
        Ok(Self {
            arch: GeneratorArch::Upconv,
            latent_dim,
            layers,
            slope,
            sample_shape: vec![1, 16, 16],
        })
    }

    pub fn arch(&self) -> GeneratorArch {
        self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn layers(&self) -> &[DynLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DynLayer] {
        &mut self.layers
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|l| l.param_count(l.active_out(), l.active_in())).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<LayerParams> {
        self.layers.iter().map(|l| l.bind(g, trainable)).collect()
    }

    /// Maps latents `[B, latent_dim]` to samples `[B, ...sample_shape]`.
    pub fn forward(&self, g: &mut Graph, params: &[LayerParams], z: Var) -> Result<Var> {
        let full = |g: &mut Graph, l: usize, h: Var| {
            let layer = &self.layers[l];
            layer.forward_sliced(g, params[l], h, layer.active_out(), layer.active_in())
        };
        match self.arch {
            GeneratorArch::Mlp => {
                let mut h = z;
                let last = self.layers.len() - 1;
                for l in 0..=last {
                    h = full(g, l, h)?;
                    if l != last {
                        h = g.leaky_relu(h, self.slope)?;
                    }
                }
                Ok(h)
            }
            GeneratorArch::Upconv => {
                let batch = g.shape(z)[0];
                let h = full(g, 0, z)?;
                let h = g.reshape(h, &[batch, 64, 4, 4])?;
                let h = g.leaky_relu(h, self.slope)?;
                let h = g.upsample2x(h)?;
                let h = full(g, 1, h)?;
                let h = g.leaky_relu(h, self.slope)?;
                let h = g.upsample2x(h)?;
                let h = full(g, 2, h)?;
                let h = g.leaky_relu(h, self.slope)?;
                let h = full(g, 3, h)?;
                Ok(g.tanh(h))
            }
        }
    }

    /// Gradient-free sampling, evaluated in chunks.
    pub fn sample(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.shape()[0];
        let mut data = Vec::with_capacity(n * self.sample_shape.iter().product::<usize>());
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let zi = g.constant(z.rows(start, end));
            let out = self.forward(&mut g, &p, zi)?;
            data.extend_from_slice(g.value(out).data());
            start = end;
        }
        let mut shape = vec![n];
        shape.extend(&self.sample_shape);
        Ok(Tensor::new(&shape, data)?)
    }
}

/// Dynamic-capacity discriminator emitting one logit per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    stack: DynStack,
    sample_shape: Vec<usize>,
}

impl DiscriminatorNet {
    /// Dense stack over `in_dim` features with hidden stores `base` and
    /// initial active widths `initial`.
    pub fn mlp(in_dim: usize, base: &[usize], initial: &[usize], slope: f64, seed: u64) -> Result<Self> {
        assert_eq!(base.len(), initial.len());
        let mut layers = Vec::new();
        let (mut prev_max, mut prev_active) = (in_dim, in_dim);
        for (l, (&b, &a)) in base.iter().zip(initial).enumerate() {
            let init = GrowthInit::leaky(slope, init_seed(seed, l));
            layers.push(DynLayer::dense(l, b, prev_max).initialized(a, prev_active, &init)?);
            (prev_max, prev_active) = (b, a);
        }
        let head = base.len();
        let init = GrowthInit::leaky(slope, init_seed(seed, head));
        layers.push(DynLayer::dense(head, 1, prev_max).initialized(1, prev_active, &init)?);
        Ok(Self {
            stack: DynStack::new(layers, slope),
            sample_shape: vec![in_dim],
        })
    }

    /// Stride-2 3x3 convolutions over `1 x 16 x 16` images down to `1 x 1`,
    /// then a dense head. The first two layers are flagged low-level.
    pub fn conv(base: &[usize], initial: &[usize], slope: f64, seed: u64) -> Result<Self> {
        assert_eq!(base.len(), initial.len());
        assert_eq!(base.len(), 4, "16x16 input needs four stride-2 layers");
        let mut layers = Vec::new();
        let (mut prev_max, mut prev_active) = (1, 1);
        for (l, (&b, &a)) in base.iter().zip(initial).enumerate() {
            let init = GrowthInit::leaky(slope, init_seed(seed, l));
            layers.push(
                DynLayer::conv(l, b, prev_max, 3, 2, 1)
                    .initialized(a, prev_active, &init)?
                    .with_low_level(l < 2),
            );
            (prev_max, prev_active) = (b, a);
        }
        let head = base.len();
        let init = GrowthInit::leaky(slope, init_seed(seed, head));
        layers.push(DynLayer::dense(head, 1, prev_max).initialized(1, prev_active, &init)?);
        Ok(Self {
            stack: DynStack::new(layers, slope),
            sample_shape: vec![1, 16, 16],
        })
    }

    pub fn stack(&self) -> &DynStack {
        &self.stack
    }

    pub fn stack_mut(&mut self) -> &mut DynStack {
        &mut self.stack
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> StackParams {
        self.stack.bind(g, trainable)
    }

    pub fn forward(&self, g: &mut Graph, params: &StackParams, x: Var, mask: &FilterMask) -> Result<Var> {
        self.stack.forward(g, params, x, mask)
    }

    /// Active parameters under `mask`.
    pub fn param_count(&self, mask: &FilterMask) -> u64 {
        self.stack.param_count(mask)
    }

    /// Multiply-adds of a single-sample forward pass under `mask`.
    pub fn flops_per_sample(&self, mask: &FilterMask) -> u64 {
        let mut shape = vec![1];
        shape.extend(&self.sample_shape);
        self.stack.flops(mask, &shape)
    }

    /// Logits at the current unmasked capacity.
    pub fn logits_unmasked(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mask = self.stack.sliced_mask();
        let n = x.shape()[0];
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let xi = g.constant(x.rows(start, end));
            let y = self.forward(&mut g, &p, xi, &mask)?;
            out.extend_from_slice(g.value(y).data());
            start = end;
        }
        Ok(out)
    }
}

impl Critic for DiscriminatorNet {
    fn logits(&self, samples: &Tensor) -> std::result::Result<Vec<f64>, String> {
        self.logits_unmasked(samples).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generator_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GeneratorNet::mlp(16, &[64, 64, 64], 2, 0.2, 1).unwrap();
        let z = Tensor::randn(&[5, 16], 1.0, &mut rng);
        assert_eq!(g.sample(&z).unwrap().shape(), &[5, 2]);
        let g = GeneratorNet::upconv(16, 0.2, 1).unwrap();
        let s = g.sample(&z).unwrap();
        assert_eq!(s.shape(), &[5, 1, 16, 16]);
        assert!(s.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn discriminators_emit_one_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = DiscriminatorNet::mlp(2, &[8, 8, 8], &[4, 4, 4], 0.2, 3).unwrap();
        let x = Tensor::randn(&[7, 2], 1.0, &mut rng);
        assert_eq!(d.logits_unmasked(&x).unwrap().len(), 7);
        let d = DiscriminatorNet::conv(&[16, 32, 64, 128], &[8, 16, 32, 64], 0.2, 3).unwrap();
        let x = Tensor::randn(&[3, 1, 16, 16], 1.0, &mut rng);
        assert_eq!(d.logits_unmasked(&x).unwrap().len(), 3);
        assert!(d.stack().layers()[1].is_low_level());
        assert!(!d.stack().layers()[2].is_low_level());
    }

    #[test]
    fn chunked_sampling_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GeneratorNet::mlp(4, &[8], 2, 0.2, 9).unwrap();
        let z = Tensor::randn(&[EVAL_CHUNK + 10, 4], 1.0, &mut rng);
        let all = g.sample(&z).unwrap();
        let tail = g.sample(&z.rows(EVAL_CHUNK, EVAL_CHUNK + 10)).unwrap();
        assert_eq!(&all.data()[EVAL_CHUNK * 2..], tail.data());
    }
}

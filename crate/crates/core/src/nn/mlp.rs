use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Layer widths from input to output. Hidden layers use ReLU, the output is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
}

impl MlpConfig {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(Self { layer_sizes })
    }

    /// `input -> hidden... -> output`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Σ (fan_in + 1) · fan_out.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Offset of layer `l`'s weight block; its biases follow the `fan_out × fan_in` weights.
    fn layer_offset(&self, l: usize) -> usize {
        self.layer_sizes[..=l]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }
}

/// Flat parameter vector. Layer `l` stores a row-major `fan_out × fan_in` weight
/// matrix followed by `fan_out` biases.
///
/// Every mutation assigns a new version so forward caches taken before the
/// change are rejected by [`MlpParams::backward`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    config: MlpConfig,
    flat: Vec<f64>,
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.flat.len() == other.flat.len()
            && self
                .flat
                .iter()
                .zip(&other.flat)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Activations recorded by [`MlpParams::forward`]: the input followed by every
/// layer's post-activation output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds the input at least")
    }
}

impl MlpParams {
    pub fn zeros(config: MlpConfig) -> Self {
        let n = config.param_count();
        Self {
            config,
            flat: vec![0.0; n],
            version: fresh_version(),
        }
    }

    /// Glorot-uniform weights in ±√(6 / (fan_in + fan_out)), zero biases.
    pub fn glorot<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        for l in 0..p.config.num_layers() {
            let (fan_in, fan_out) = (p.config.layer_sizes[l], p.config.layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = p.config.layer_offset(l);
            for w in &mut p.flat[off..off + fan_in * fan_out] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        p
    }

    pub fn from_flat(config: MlpConfig, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != config.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: config.param_count(),
                got: flat.len(),
            });
        }
        crate::nn::ensure_finite(&flat, "parameters")?;
        Ok(Self {
            config,
            flat,
            version: fresh_version(),
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to the flat vector; invalidates outstanding caches.
    pub fn flat_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.flat
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.config.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn layer_apply(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (fan_in, fan_out) = (self.config.layer_sizes[l], self.config.layer_sizes[l + 1]);
        let off = self.config.layer_offset(l);
        let weights = &self.flat[off..off + fan_in * fan_out];
        let biases = &self.flat[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
        let hidden = l + 1 < self.config.num_layers();
        out.clear();
        out.extend(weights.chunks_exact(fan_in).zip(biases).map(|(row, b)| {
            let z = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            if hidden {
                z.max(0.0)
            } else {
                z
            }
        }));
    }

    /// Output only, no cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in 0..self.config.num_layers() {
            self.layer_apply(l, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.config.layer_sizes.len());
        activations.push(input.to_vec());
        for l in 0..self.config.num_layers() {
            let mut out = Vec::with_capacity(self.config.layer_sizes[l + 1]);
            self.layer_apply(l, &activations[l], &mut out);
            activations.push(out);
        }
        let output = activations.last().cloned().expect("at least one layer");
        Ok((
            output,
            ForwardCache {
                version: self.version,
                activations,
            },
        ))
    }

    /// Gradient of `⟨output, output_grad⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.flat.len()];
        self.backward_accumulate(cache, output_grad, &mut grad)?;
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but adds into `grad`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        if cache.version != self.version || cache.activations.len() != self.config.layer_sizes.len()
        {
            return Err(Error::StaleCache);
        }
        if output_grad.len() != self.config.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: self.config.output_dim(),
                got: output_grad.len(),
            });
        }
        if grad.len() != self.flat.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient buffer",
                expected: self.flat.len(),
                got: grad.len(),
            });
        }
        // delta = dL/d(pre-activation) of the current layer
        let mut delta = output_grad.to_vec();
        let mut below = Vec::new();
        for l in (0..self.config.num_layers()).rev() {
            let (fan_in, fan_out) = (self.config.layer_sizes[l], self.config.layer_sizes[l + 1]);
            let off = self.config.layer_offset(l);
            let x = &cache.activations[l];
            let (gw, gb) = grad[off..off + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            for ((grow, gbo), &d) in gw.chunks_exact_mut(fan_in).zip(gb.iter_mut()).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                *gbo += d;
                for (g, xi) in grow.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.flat[off..off + fan_in * fan_out];
            below.clear();
            below.resize(fan_in, 0.0);
            for (row, &d) in weights.chunks_exact(fan_in).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (b, w) in below.iter_mut().zip(row) {
                    *b += w * d;
                }
            }
            // ReLU': the post-activation is positive exactly where the pre-activation is.
            for (b, a) in below.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *b = 0.0;
                }
            }
            std::mem::swap(&mut delta, &mut below);
        }
        Ok(())
    }
}

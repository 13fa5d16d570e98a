//! Framewise multilayer perceptron producing L2-normalized embeddings.
//!
//! Each timestep is embedded independently from itself and its `context`
//! neighbours on either side (indices clamped at the sequence ends). All
//! parameters live in one flat buffer so the optimizer and checkpoints can
//! treat them uniformly; each dense layer stores a row-major `out x in` weight
//! matrix followed by its bias.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{l2_normalize, FeatureSequence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Observed feature dimension per timestep.
    pub input_dim: usize,
    /// Neighbours stacked on each side of a timestep.
    pub context: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            context: 1,
            hidden: vec![64, 64],
            output_dim: 32,
        }
    }

    pub fn stacked_dim(&self) -> usize {
        self.input_dim * (2 * self.context + 1)
    }

    /// `(fan_out, fan_in)` of every dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.stacked_dim()];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for [`EmbeddingModel::backward`].
pub struct ForwardCache {
    /// Input to each layer; the last entry is the final hidden activation.
    inputs: Vec<Array2<f64>>,
}

impl EmbeddingModel {
    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init<R: Rng>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(spec.param_count());
        for (out, inp) in spec.layer_shapes() {
            let bound = 1.0 / (inp as f64).sqrt();
            params.extend((0..out * inp).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, out));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        Ok(Self { spec, params })
    }

    fn layers(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let mut off = 0;
        self.spec
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let w = ArrayView2::from_shape((out, inp), &self.params[off..off + out * inp])
                    .expect("layer layout");
                off += out * inp;
                let b = ArrayView1::from(&self.params[off..off + out]);
                off += out;
                (w, b)
            })
            .collect()
    }

    /// Stack each selected timestep with its clamped neighbours into one column.
    pub fn stack_context(&self, observed: &FeatureSequence, frames: &[usize]) -> Result<Array2<f64>> {
        let f = self.spec.input_dim;
        if observed.dim() != f {
            return Err(Error::invalid(format!(
                "model expects {f} input features, sequence has {}",
                observed.dim()
            )));
        }
        let len = observed.len();
        if let Some(&bad) = frames.iter().find(|&&t| t >= len) {
            return Err(Error::invalid(format!("frame {bad} out of range for length {len}")));
        }
        let r = self.spec.context as isize;
        let mut out = Array2::zeros((self.spec.stacked_dim(), frames.len()));
        for (c, &t) in frames.iter().enumerate() {
            for (k, dt) in (-r..=r).enumerate() {
                let src = (t as isize + dt).clamp(0, len as isize - 1) as usize;
                out.slice_mut(ndarray::s![k * f..(k + 1) * f, c])
                    .assign(&observed.column(src));
            }
        }
        Ok(out)
    }

    /// Pre-normalization outputs for stacked inputs, plus the cache for backprop.
    pub fn forward(&self, stacked: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut h = stacked.clone();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = w.dot(&h);
            z += &b.view().insert_axis(Axis(1));
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(std::mem::replace(&mut h, z));
        }
        (h, ForwardCache { inputs })
    }

    /// Parameter gradient given `dL/d(output)` for the batch in `cache`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Vec<f64> {
        let layers = self.layers();
        let shapes = self.spec.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for (out, inp) in &shapes {
            offsets.push(off);
            off += out * inp + out;
        }
        let mut grad = vec![0.0; off];
        let mut delta = d_out.clone();
        for l in (0..layers.len()).rev() {
            let (out, inp) = shapes[l];
            let x = &cache.inputs[l];
            let dw = delta.dot(&x.t());
            let o = offsets[l];
            for (g, v) in grad[o..o + out * inp].iter_mut().zip(dw.iter()) {
                *g = *v;
            }
            for (g, row) in grad[o + out * inp..o + out * inp + out]
                .iter_mut()
                .zip(delta.rows())
            {
                *g = row.sum();
            }
            if l > 0 {
                let mut dh = layers[l].0.t().dot(&delta);
                // x is tanh(z) of the previous layer.
                dh.zip_mut_with(x, |d, &a| *d *= 1.0 - a * a);
                delta = dh;
            }
        }
        grad
    }

    /// Normalized embedding of every timestep.
    pub fn embed(&self, observed: &FeatureSequence) -> Result<FeatureSequence> {
        let frames: Vec<usize> = (0..observed.len()).collect();
        self.embed_frames(observed, &frames)
    }

    /// Normalized embedding of the selected timesteps.
    pub fn embed_frames(&self, observed: &FeatureSequence, frames: &[usize]) -> Result<FeatureSequence> {
        let stacked = self.stack_context(observed, frames)?;
        let (out, _) = self.forward(&stacked);
        l2_normalize(&FeatureSequence::new(out)?)
    }
}

//! Small fully connected networks with hand-written reverse mode.
//!
//! Parameters live in one flat buffer, layer by layer: the weight matrix
//! (`out × in`, row-major) followed by the bias vector. Gradients use the same
//! layout, so optimizers and serializers can treat a net as a plain slice.

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, gemm_slice, DenseMatrix, DenseVector, Mat};
use super::rng::RngStream;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        if let Activation::Tanh = self {
            for v in x {
                *v = v.tanh();
            }
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        if let Activation::Tanh = self {
            for (g, a) in grad.iter_mut().zip(out) {
                *g *= 1.0 - a * a;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn n_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Intermediate activations of one batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchTape {
    /// `acts[0]` is the input batch, `acts[i + 1]` the output of layer `i`.
    acts: Vec<DenseMatrix>,
}

impl BatchTape {
    pub fn output(&self) -> &DenseMatrix {
        self.acts.last().expect("tape holds at least the input")
    }

    pub fn input(&self) -> &DenseMatrix {
        &self.acts[0]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    #[serde(skip)]
    cache: Option<BatchTape>,
}

impl PartialEq for FeedForwardNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

impl FeedForwardNet {
    /// Builds a net with all parameters zero.
    pub fn zeros(layers: Vec<LayerShape>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("a net needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_dim("FeedForwardNet layer chain", pair[0].output, pair[1].input)?;
        }
        let n = layers.iter().map(LayerShape::n_params).sum();
        Ok(FeedForwardNet {
            layers,
            params: vec![0.0; n],
            cache: None,
        })
    }

    /// `input → hidden… → output` with tanh hidden layers and a linear output.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                input: w[0],
                output: w[1],
                activation: if i == last {
                    Activation::Linear
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        Self::zeros(layers)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot(&mut self, rng: &mut RngStream) {
        let mut offset = 0;
        for shape in &self.layers {
            let limit = (6.0 / (shape.input + shape.output) as f64).sqrt();
            let nw = shape.input * shape.output;
            for w in &mut self.params[offset..offset + nw] {
                *w = rng.uniform_range(-limit, limit);
            }
            for b in &mut self.params[offset + nw..offset + shape.n_params()] {
                *b = 0.0;
            }
            offset += shape.n_params();
        }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("FeedForwardNet::set_params", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        self.cache = None;
        Ok(())
    }

    fn layer_slices(&self, idx: usize, offset: usize) -> (&[f64], &[f64]) {
        let s = self.layers[idx];
        let nw = s.input * s.output;
        (
            &self.params[offset..offset + nw],
            &self.params[offset + nw..offset + nw + s.output],
        )
    }

    /// Forward pass over a batch (one input per row), recording a tape.
    pub fn forward_batch(&self, x: &DenseMatrix) -> Result<BatchTape> {
        check_dim("FeedForwardNet::forward_batch", self.input_dim(), x.cols())?;
        if !x.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let mut offset = 0;
        for (i, shape) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_slices(i, offset);
            let prev = &acts[i];
            let mut out = DenseMatrix::zeros(prev.rows(), shape.output);
            for r in 0..out.rows() {
                out.row_mut(r).copy_from_slice(b);
            }
            gemm(
                Mat::plain(prev),
                Mat::new(w, shape.output, shape.input).t(),
                &mut out,
                1.0,
                1.0,
            );
            shape.activation.apply(out.as_mut_slice());
            acts.push(out);
            offset += shape.n_params();
        }
        Ok(BatchTape { acts })
    }

    /// Reverse pass for the scalar `Σ upstream ⊙ output`.
    ///
    /// When `param_grads` is given, parameter gradients are *added* to it
    /// (same flat layout as [`params`](Self::params)). Returns the gradient
    /// with respect to the input batch.
    pub fn backward_batch(
        &self,
        tape: &BatchTape,
        upstream: &DenseMatrix,
        mut param_grads: Option<&mut [f64]>,
    ) -> Result<DenseMatrix> {
        let out = tape.output();
        check_dim("backward upstream rows", out.rows(), upstream.rows())?;
        check_dim("backward upstream cols", out.cols(), upstream.cols())?;
        if let Some(g) = param_grads.as_deref() {
            check_dim("backward param grads", self.params.len(), g.len())?;
        }
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.n_params();
                Some(o)
            })
            .collect();

        let mut grad = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let shape = self.layers[i];
            shape
                .activation
                .backprop(tape.acts[i + 1].as_slice(), grad.as_mut_slice());
            let prev = &tape.acts[i];
            let (w, _) = self.layer_slices(i, offsets[i]);
            if let Some(g) = param_grads.as_deref_mut() {
                let nw = shape.input * shape.output;
                let (gw, rest) = g[offsets[i]..].split_at_mut(nw);
                gemm_slice(Mat::plain(&grad).t(), Mat::plain(prev), gw, shape.input, 1.0, 1.0);
                let gb = &mut rest[..shape.output];
                for r in 0..grad.rows() {
                    for (b, d) in gb.iter_mut().zip(grad.row(r)) {
                        *b += d;
                    }
                }
            }
            let mut next = DenseMatrix::zeros(grad.rows(), shape.input);
            gemm(
                Mat::plain(&grad),
                Mat::new(w, shape.output, shape.input),
                &mut next,
                1.0,
                0.0,
            );
            grad = next;
        }
        Ok(grad)
    }

    /// Single-vector forward pass; keeps the tape for a later [`backward`](Self::backward).
    pub fn forward(&mut self, x: &DenseVector) -> Result<DenseVector> {
        check_dim("FeedForwardNet::forward", self.input_dim(), x.dim())?;
        let batch = DenseMatrix::from_row_major(1, x.dim(), x.as_slice().to_vec())?;
        let tape = self.forward_batch(&batch)?;
        let y = DenseVector::from(tape.output().row(0));
        self.cache = Some(tape);
        Ok(y)
    }

    /// Gradients of `upstream · output` for the most recent [`forward`](Self::forward).
    pub fn backward(&self, upstream: &DenseVector) -> Result<(Vec<f64>, DenseVector)> {
        let tape = self
            .cache
            .as_ref()
            .ok_or(Error::Usage("backward called before forward"))?;
        check_dim("FeedForwardNet::backward", self.output_dim(), upstream.dim())?;
        let up = DenseMatrix::from_row_major(1, upstream.dim(), upstream.as_slice().to_vec())?;
        let mut grads = vec![0.0; self.params.len()];
        let gx = self.backward_batch(tape, &up, Some(&mut grads))?;
        Ok((grads, DenseVector::from(gx.row(0))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer() -> FeedForwardNet {
        let mut net = FeedForwardNet::zeros(vec![LayerShape {
            input: 2,
            output: 2,
            activation: Activation::Linear,
        }])
        .unwrap();
        net.set_params(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        net
    }

    #[test]
    fn identity_forward() {
        let mut net = identity_layer();
        let y = net.forward(&DenseVector::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut net = identity_layer();
        net.set_params(&[0.0, 0.0, 0.0, 0.0, 3.0, 3.0]).unwrap();
        let y = net.forward(&DenseVector::new(vec![5.0, 5.0]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn identity_backward() {
        let mut net = identity_layer();
        net.forward(&DenseVector::new(vec![0.3, -0.7]).unwrap()).unwrap();
        let (_, gx) = net.backward(&DenseVector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(gx.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn backward_requires_forward() {
        let net = identity_layer();
        let err = net.backward(&DenseVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut net = FeedForwardNet::mlp(3, &[5, 4], 2).unwrap();
        net.init_glorot(&mut RngStream::new(3));
        net.forward(&DenseVector::new(vec![0.1, 0.2, -0.4]).unwrap()).unwrap();
        let (g, gx) = net.backward(&DenseVector::zeros(2)).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(gx.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn input_dimension_checked() {
        let mut net = identity_layer();
        assert!(matches!(
            net.forward(&DenseVector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn layer_chain_checked() {
        let bad = vec![
            LayerShape {
                input: 2,
                output: 3,
                activation: Activation::Tanh,
            },
            LayerShape {
                input: 4,
                output: 1,
                activation: Activation::Linear,
            },
        ];
        assert!(FeedForwardNet::zeros(bad).is_err());
    }
}

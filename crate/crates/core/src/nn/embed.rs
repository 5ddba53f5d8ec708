use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{dense, dense_backward};
use crate::error::{check_dim, Error, Result};
use crate::params::{LayerShape, ParamBlock};

/// Multi-layer perceptron producing the embedding; ReLU between layers, none
/// after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    dims: Vec<usize>,
    params: ParamBlock,
}

/// Inputs of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    inputs: Vec<Array2<f64>>,
}

impl EmbeddingNet {
    /// Zero-initialised network over `dims = [input, hidden..., embedding]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "embedding network needs at least two positive layer sizes, got {dims:?}"
            )));
        }
        let layers = dims.windows(2).map(|w| LayerShape::dense(w[0], w[1])).collect();
        Ok(Self {
            dims: dims.to_vec(),
            params: ParamBlock::zeros(layers),
        })
    }

    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        net.params.init_glorot(rng);
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &ParamBlock {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamBlock {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamBlock) -> Result<()> {
        if !params.same_shape(&self.params) {
            return Err(Error::Dimension {
                context: "embedding parameters",
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, EmbedTrace)> {
        check_dim("embedding input", self.input_dim(), x.ncols())?;
        if x.nrows() == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let n_layers = self.dims.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut h = x.to_owned();
        for layer in 0..n_layers {
            let mut out = dense(h.view(), self.params.weight(layer), self.params.bias(layer));
            if layer + 1 < n_layers {
                out.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = out;
        }
        Ok((h, EmbedTrace { inputs }))
    }

    /// Forward pass without keeping a trace.
    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(x).map(|(v, _)| v)
    }

    /// Parameter gradient given the gradient of the loss w.r.t. the output.
    pub fn backward(&self, trace: &EmbedTrace, dout: ArrayView2<f64>) -> Result<ParamBlock> {
        let n_layers = self.dims.len() - 1;
        check_dim("embedding trace depth", n_layers, trace.inputs.len())?;
        check_dim("embedding output gradient", self.output_dim(), dout.ncols())?;
        let mut grads = self.params.zeros_like();
        let mut dy = dout.to_owned();
        for layer in (0..n_layers).rev() {
            let x = &trace.inputs[layer];
            let (dw, db, dx) = dense_backward(x.view(), self.params.weight(layer), dy.view());
            let (mut gw, mut gb) = grads.layer_mut(layer);
            gw.assign(&dw);
            gb.assign(&db);
            if layer > 0 {
                // x is the ReLU output of the previous layer.
                dy = dx;
                ndarray::Zip::from(&mut dy).and(x).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_parameters_give_zero_features() {
        let net = EmbeddingNet::zeros(&[3, 5, 2]).unwrap();
        let out = net.embed(array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(out.dim(), (2, 2));
    }

    #[test]
    fn identity_layer() {
        let mut net = EmbeddingNet::zeros(&[2, 2]).unwrap();
        net.params_mut().values_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let out = net.embed(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[1.0, 2.0]]);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = EmbeddingNet::zeros(&[3, 2]).unwrap();
        let err = net.embed(array![[1.0, 2.0]].view()).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 3, found: 2, .. }));
    }
}

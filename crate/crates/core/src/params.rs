//! Flat parameter storage.
//!
//! A [`ParamBlock`] keeps every layer of a network in one contiguous `f64`
//! buffer (weights row-major, then bias, layer after layer). Gradients use
//! the same type, which makes averaging, noise injection and serialisation
//! plain vector operations.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;

use crate::error::{check_dim, Result};

/// Shape of one layer: a `rows x cols` weight matrix followed by `bias` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub bias: usize,
}

impl LayerShape {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self {
            rows: outputs,
            cols: inputs,
            bias: outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.bias
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    values: Vec<f64>,
    layers: Vec<LayerShape>,
}

impl ParamBlock {
    pub fn zeros(layers: Vec<LayerShape>) -> Self {
        let len = layers.iter().map(LayerShape::len).sum();
        Self {
            values: vec![0.0; len],
            layers,
        }
    }

    pub fn from_values(layers: Vec<LayerShape>, values: Vec<f64>) -> Result<Self> {
        let len = layers.iter().map(LayerShape::len).sum();
        check_dim("parameter block length", len, values.len())?;
        Ok(Self { values, layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layers.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ParamBlock) -> bool {
        self.layers == other.layers
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn offset(&self, layer: usize) -> usize {
        self.layers[..layer].iter().map(LayerShape::len).sum()
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.layers[layer];
        let o = self.offset(layer);
        ArrayView2::from_shape((s.rows, s.cols), &self.values[o..o + s.rows * s.cols])
            .expect("layer shape matches buffer")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let s = self.layers[layer];
        let o = self.offset(layer) + s.rows * s.cols;
        ArrayView1::from(&self.values[o..o + s.bias])
    }

    pub fn layer_mut(&mut self, layer: usize) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        let s = self.layers[layer];
        let o = self.offset(layer);
        let (w, b) = self.values[o..o + s.len()].split_at_mut(s.rows * s.cols);
        (
            ArrayViewMut2::from_shape((s.rows, s.cols), w).expect("layer shape matches buffer"),
            ArrayViewMut1::from(b),
        )
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamBlock) -> Result<()> {
        check_dim("axpy operand", self.len(), other.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in 0..self.layers.len() {
            let s = self.layers[layer];
            let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
            let (mut w, mut b) = self.layer_mut(layer);
            w.iter_mut().for_each(|v| *v = rng.random_range(-a..=a));
            b.fill(0.0);
        }
    }

    /// Coordinate-wise arithmetic mean of equally shaped blocks.
    pub fn mean<'a, I>(blocks: I) -> Result<ParamBlock>
    where
        I: IntoIterator<Item = &'a ParamBlock>,
    {
        let mut iter = blocks.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| crate::Error::Input("mean of zero parameter blocks".into()))?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for block in iter {
            if !block.same_shape(first) {
                return Err(crate::Error::Input(
                    "cannot average parameter blocks of different architecture".into(),
                ));
            }
            for (a, b) in acc.values.iter_mut().zip(&block.values) {
                *a += b;
            }
            count += 1;
        }
        if count > 1 {
            let n = count as f64;
            acc.values.iter_mut().for_each(|v| *v /= n);
        }
        Ok(acc)
    }
}

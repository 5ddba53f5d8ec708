use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};

use super::{EmbedTrace, EmbeddingNet, MapTrace, MappingConfig, MappingNet, Mode};
use crate::error::{Error, Result};
use crate::losses;
use crate::params::ParamBlock;

/// Embedding network plus classifier head.
#[derive(Debug, Clone)]
pub struct Network {
    pub embed: EmbeddingNet,
    pub head: MappingNet,
    cache: Option<NetworkTrace>,
}

#[derive(Debug, Clone)]
pub struct NetworkTrace {
    embed: EmbedTrace,
    head: MapTrace,
}

impl NetworkTrace {
    pub fn head(&self) -> &MapTrace {
        &self.head
    }
}

/// Gradients for both parameter groups of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: ParamBlock,
    pub head: ParamBlock,
}

impl Gradients {
    pub fn scale(&mut self, alpha: f64) {
        self.embed.scale(alpha);
        self.head.scale(alpha);
    }
}

impl Network {
    pub fn new(embed: EmbeddingNet, head: MappingNet) -> Result<Self> {
        if embed.output_dim() != head.config().input {
            return Err(Error::Dimension {
                context: "head input vs embedding output",
                expected: embed.output_dim(),
                found: head.config().input,
            });
        }
        Ok(Self {
            embed,
            head,
            cache: None,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        embed_dims: &[usize],
        head_cfg: MappingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = EmbeddingNet::init(embed_dims, rng)?;
        let head = MappingNet::init(head_cfg, rng)?;
        Self::new(embed, head)
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Array2<f64>, NetworkTrace)> {
        let (features, embed) = self.embed.forward(x)?;
        let (logits, head) = self.head.forward(features.view(), mode, rng)?;
        Ok((logits, NetworkTrace { embed, head }))
    }

    pub fn backward(&self, trace: &NetworkTrace, dlogits: ArrayView2<f64>) -> Result<Gradients> {
        let (head, dfeatures) = self.head.backward(&trace.head, dlogits)?;
        let embed = self.embed.backward(&trace.embed, dfeatures.view())?;
        Ok(Gradients { embed, head })
    }

    /// Forward pass that keeps its trace for [`Network::backward_cached`].
    pub fn forward_cached(
        &mut self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Array2<f64>> {
        let (logits, trace) = self.forward(x, mode, rng)?;
        self.cache = Some(trace);
        Ok(logits)
    }

    /// Consumes the trace stored by the last [`Network::forward_cached`] and
    /// folds its batch-norm statistics into the running statistics.
    pub fn backward_cached(&mut self, dlogits: ArrayView2<f64>) -> Result<Gradients> {
        let trace = self.cache.take().ok_or(Error::MissingForwardCache)?;
        let grads = self.backward(&trace, dlogits)?;
        self.head.update_running_stats(&trace.head);
        Ok(grads)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Mean cross-entropy of the batch and its exact gradient.
    pub fn cross_entropy_gradients(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Gradients)> {
        let (logits, trace) = self.forward(x, mode, rng)?;
        let loss = losses::cross_entropy(logits.view(), labels)?;
        let dlogits = losses::cross_entropy_grad(logits.view(), labels)?;
        Ok((loss, self.backward(&trace, dlogits.view())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn backward_without_forward_is_a_usage_error() {
        let mut net = Network::init(&[2, 3], MappingConfig::plain(3, 3, 2), &mut rng::seeded(0)).unwrap();
        let err = net.backward_cached(array![[0.0, 0.0]].view()).unwrap_err();
        assert!(matches!(err, Error::MissingForwardCache));
        net.forward_cached(array![[1.0, 2.0]].view(), Mode::Eval, None).unwrap();
        assert!(net.backward_cached(array![[0.1, -0.1]].view()).is_ok());
        assert!(net.backward_cached(array![[0.1, -0.1]].view()).is_err());
    }

    #[test]
    fn scaled_loss_scales_gradients() {
        let net = Network::init(&[3, 4, 2], MappingConfig::plain(2, 5, 3), &mut rng::seeded(3)).unwrap();
        let x = array![[0.2, -0.4, 1.0], [1.5, 0.3, -0.7]];
        let (logits, trace) = net.forward(x.view(), Mode::Eval, None).unwrap();
        let d = losses::cross_entropy_grad(logits.view(), &[0, 2]).unwrap();
        let g1 = net.backward(&trace, d.view()).unwrap();
        let g2 = net.backward(&trace, (&d * 0.25).view()).unwrap();
        for (a, b) in g1.embed.values().iter().zip(g2.embed.values()) {
            assert_eq!(a * 0.25, *b);
        }
        for (a, b) in g1.head.values().iter().zip(g2.head.values()) {
            assert_eq!(a * 0.25, *b);
        }
    }
}

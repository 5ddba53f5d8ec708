//! The minibatch update shared by federated clients and the baselines.

use rand::seq::index;
use rand::RngCore;

use super::FederationConfig;
use crate::data::{augment_batch, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossSpec};
use crate::nn::{Gradients, Mode, Network, OptimizerState, SgdConfig};
use crate::params::ParamBlock;
use crate::rng::Rng;

/// Momentum buffers for the embedding and head parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptimizer {
    pub embed: OptimizerState,
    pub head: OptimizerState,
}

impl ModelOptimizer {
    pub fn for_network(net: &Network, sgd: SgdConfig) -> Self {
        Self {
            embed: OptimizerState::new(sgd, net.embed.params().len()),
            head: OptimizerState::new(sgd, net.head.params().len()),
        }
    }

    pub fn reset(&mut self) {
        self.embed.reset();
        self.head.reset();
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr_embed: f64, lr_head: f64) -> Result<()> {
        self.embed.step(net.embed.params_mut(), &grads.embed, lr_embed)?;
        self.head.step(net.head.params_mut(), &grads.head, lr_head)
    }
}

/// Learning rates of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRates {
    pub embed: f64,
    pub head: f64,
}

impl StepRates {
    pub fn at(cfg: &FederationConfig, epoch: usize) -> Self {
        Self {
            embed: cfg.lr_embed.at(epoch),
            head: cfg.lr_head.at(epoch),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub losses: LossBreakdown,
    /// Raw loss gradient of the client embedding (without weight decay).
    pub embed_grad: ParamBlock,
}

/// One minibatch step.
///
/// Random draws happen in a fixed order: batch indices, client augmentation,
/// expert augmentation, client dropout, expert dropout.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Network,
    opt: &mut ModelOptimizer,
    mut expert: Option<(&mut Network, &mut ModelOptimizer)>,
    ds: &DomainDataset,
    cfg: &FederationConfig,
    spec: &LossSpec,
    rates: StepRates,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    if ds.is_empty() {
        return Err(Error::Config(format!("dataset of domain {} is empty", ds.domain_id)));
    }
    if spec.needs_expert() && expert.is_none() {
        return Err(Error::Config("loss requires an expert model".into()));
    }
    let batch = cfg.batch_size.min(ds.len());
    let idx = index::sample(rng, ds.len(), batch).into_vec();
    let x = ds.rows(&idx);
    let labels = ds.labels_at(&idx);
    let x_client = augment_batch(x.view(), &cfg.augment, rng);
    let x_expert = expert
        .as_ref()
        .map(|_| augment_batch(x.view(), &cfg.augment, rng));

    let client_logits = model.forward_cached(x_client.view(), Mode::Train, Some(rng as &mut dyn RngCore))?;
    let expert_logits = match (&mut expert, &x_expert) {
        (Some((net, _)), Some(xe)) => Some(net.forward_cached(xe.view(), Mode::Train, Some(rng as &mut dyn RngCore))?),
        _ => None,
    };
    let obj = losses::client_loss(client_logits.view(), expert_logits.as_ref().map(|e| e.view()), &labels, spec)?;

    let grads = model.backward_cached(obj.client_grad.view())?;
    opt.step(model, &grads, rates.embed, rates.head)?;
    if let Some((net, eopt)) = expert {
        match &obj.expert_grad {
            Some(g) => {
                let eg = net.backward_cached(g.view())?;
                eopt.step(net, &eg, rates.embed, rates.head)?;
            }
            None => net.clear_cache(),
        }
    }
    Ok(StepOutcome {
        losses: obj.losses,
        embed_grad: grads.embed,
    })
}

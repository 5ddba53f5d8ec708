use std::sync::Arc;

use super::train::{train_step, ModelOptimizer, StepRates};
use super::{Broadcast, FederationConfig, HeadState, ModelUpdate};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::nn::{EmbeddingNet, MappingNet, Network};
use crate::params::ParamBlock;
use crate::rng::{self, Rng, Stream};

/// What a local round reports besides the update itself.
#[derive(Debug, Clone)]
pub struct RoundReport {
    /// Mean loss terms over the local steps.
    pub losses: LossBreakdown,
    /// Sum over the local steps of the raw embedding gradients.
    pub embed_grad_sum: ParamBlock,
    pub steps: usize,
}

/// One client: private data, client model, local expert and random stream.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    dataset: Arc<DomainDataset>,
    pub model: Network,
    pub expert: Option<Network>,
    optimizer: ModelOptimizer,
    expert_optimizer: Option<ModelOptimizer>,
    rng: Rng,
    /// Embedding replaced by the most recent broadcast.
    pre_broadcast_embed: Option<ParamBlock>,
    decoupled: bool,
}

impl ClientState {
    /// `global_embed` is the shared initial embedding. `head_classes` is the
    /// client's identity count for decoupled heads, or the padded class count
    /// for full-model averaging.
    pub fn new(
        id: usize,
        dataset: Arc<DomainDataset>,
        config: &FederationConfig,
        global_embed: &ParamBlock,
        head_classes: usize,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Config(format!("client {id} has an empty dataset")));
        }
        if config.strategy.decoupled_heads() && head_classes != dataset.identities {
            return Err(Error::Config(format!(
                "client {id}: head has {head_classes} classes but the dataset has {} identities",
                dataset.identities
            )));
        }
        if head_classes < dataset.identities {
            return Err(Error::Config(format!(
                "client {id}: {head_classes} head classes cannot cover {} identities",
                dataset.identities
            )));
        }
        let mut embed = EmbeddingNet::zeros(&config.model.embed_dims(dataset.feature_dim()))?;
        embed.set_params(global_embed.clone())?;
        let head = MappingNet::init(
            config.model.head(head_classes),
            &mut rng::stream(config.seed, Stream::ClientInit(id)),
        )?;
        let model = Network::new(embed, head)?;
        let optimizer = ModelOptimizer::for_network(&model, config.sgd);
        let (expert, expert_optimizer) = if config.strategy.uses_expert() {
            (Some(model.clone()), Some(optimizer.clone()))
        } else {
            (None, None)
        };
        Ok(Self {
            id,
            dataset,
            model,
            expert,
            optimizer,
            expert_optimizer,
            rng: rng::stream(config.seed, Stream::Client(id)),
            pre_broadcast_embed: None,
            decoupled: config.strategy.decoupled_heads(),
        })
    }

    pub fn dataset(&self) -> &DomainDataset {
        &self.dataset
    }

    pub fn head_state(&self) -> HeadState {
        HeadState::of(&self.model.head)
    }

    /// Installs the server's parameters. Decoupled strategies replace only
    /// the embedding and keep the head; full averaging replaces both.
    pub fn broadcast(&mut self, msg: &Broadcast) -> Result<()> {
        if !msg.embed.same_shape(self.model.embed.params()) {
            return Err(Error::Protocol(format!(
                "client {}: broadcast embedding has {} parameters, expected {}",
                self.id,
                msg.embed.len(),
                self.model.embed.params().len()
            )));
        }
        match (&msg.head, self.decoupled) {
            (Some(_), true) => {
                return Err(Error::Protocol(format!(
                    "client {}: decoupled head must not be overwritten by a broadcast",
                    self.id
                )))
            }
            (None, false) => {
                return Err(Error::Protocol(format!(
                    "client {}: full-model broadcast is missing the head",
                    self.id
                )))
            }
            (Some(head), false) => head.install(&mut self.model.head).map_err(|e| {
                Error::Protocol(format!("client {}: broadcast head rejected: {e}", self.id))
            })?,
            (None, true) => {}
        }
        let previous = std::mem::replace(self.model.embed.params_mut(), msg.embed.clone());
        self.pre_broadcast_embed = Some(previous);
        Ok(())
    }

    /// Resets the expert to the client parameters that were in place before
    /// the last broadcast. No-op when the strategy has no expert.
    pub fn init_expert(&mut self) {
        let Some(expert) = self.expert.as_mut() else {
            return;
        };
        let embed = self
            .pre_broadcast_embed
            .clone()
            .unwrap_or_else(|| self.model.embed.params().clone());
        expert.embed.set_params(embed).expect("expert shares the client architecture");
        expert.head = self.model.head.clone();
        expert.clear_cache();
        if let Some(opt) = self.expert_optimizer.as_mut() {
            opt.reset();
        }
    }

    /// Runs the local steps of global epoch `epoch` and returns the update
    /// to upload.
    pub fn local_round(&mut self, config: &FederationConfig, epoch: usize) -> Result<(ModelUpdate, RoundReport)> {
        if config.reset_optimizer {
            self.optimizer.reset();
            if let Some(opt) = self.expert_optimizer.as_mut() {
                opt.reset();
            }
        }
        let spec = config.loss_spec();
        let rates = StepRates::at(config, epoch);
        let steps = config.effective_local_steps();
        let mut grad_sum = self.model.embed.params().zeros_like();
        let mut losses = LossBreakdown::default();
        for _ in 0..steps {
            let expert = match (self.expert.as_mut(), self.expert_optimizer.as_mut()) {
                (Some(e), Some(o)) => Some((e, o)),
                _ => None,
            };
            let out = train_step(
                &mut self.model,
                &mut self.optimizer,
                expert,
                &self.dataset,
                config,
                &spec,
                rates,
                &mut self.rng,
            )?;
            grad_sum.axpy(1.0, &out.embed_grad)?;
            losses.classification += out.losses.classification;
            losses.expert += out.losses.expert;
            losses.regularisation += out.losses.regularisation;
        }
        let n = steps as f64;
        losses.classification /= n;
        losses.expert /= n;
        losses.regularisation /= n;
        let update = ModelUpdate {
            client_id: self.id,
            embed: self.model.embed.params().clone(),
            head: (!config.strategy.decoupled_heads()).then(|| self.head_state()),
        };
        Ok((
            update,
            RoundReport {
                losses,
                embed_grad_sum: grad_sum,
                steps,
            },
        ))
    }
}

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{protocol, Broadcast, FederationConfig, GlobalModel, HeadState, ModelUpdate, NoisePlacement};
use crate::error::{Error, Result};
use crate::nn::{EmbeddingNet, MappingNet};
use crate::params::ParamBlock;
use crate::rng::{self, Rng, Stream};

/// Result of one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub global: GlobalModel,
    /// Standard-normal draw; the embedding received `beta` times this.
    pub noise: Option<Vec<f64>>,
}

/// `ceil(fraction * n)` distinct client ids drawn uniformly without
/// replacement, in ascending order.
pub fn select_clients(n: usize, fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Config("cannot select from zero clients".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "client fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let m = super::selected_count(n, fraction);
    let mut ids = index::sample(rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

fn standard_normal(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// `block += beta * noise`. Skipped for `beta == 0` so that a zero scale
/// leaves every bit (including signed zeros) untouched; the draw itself
/// still happens so the stream stays aligned across scales.
fn add_scaled(block: &mut ParamBlock, beta: f64, noise: &[f64]) {
    if beta != 0.0 {
        for (v, z) in block.values_mut().iter_mut().zip(noise) {
            *v += beta * z;
        }
    }
}

/// Coordinate-wise mean of the uploads, plus `beta * N(0, 1)` on the
/// embedding when a noise placement is configured. Heads are averaged only
/// under full-model strategies.
pub fn aggregate(updates: &[ModelUpdate], config: &FederationConfig, rng: &mut Rng) -> Result<Aggregation> {
    let first = updates.first().ok_or_else(|| protocol("aggregation over zero updates"))?;
    if let Some(bad) = updates.iter().find(|u| !u.embed.same_shape(&first.embed)) {
        return Err(protocol(format!(
            "update of client {} has {} embedding parameters, expected {}",
            bad.client_id,
            bad.embed.len(),
            first.embed.len()
        )));
    }
    let mut embed = ParamBlock::mean(updates.iter().map(|u| &u.embed))?;
    let head = if config.strategy.decoupled_heads() {
        if let Some(u) = updates.iter().find(|u| u.head.is_some()) {
            return Err(protocol(format!(
                "client {} uploaded a head under a decoupled strategy",
                u.client_id
            )));
        }
        None
    } else {
        let heads = updates
            .iter()
            .map(|u| {
                u.head
                    .as_ref()
                    .ok_or_else(|| protocol(format!("client {} did not upload its head", u.client_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(HeadState::mean(heads.iter().copied()).map_err(|e| protocol(e.to_string()))?)
    };
    let noise = (config.noise != NoisePlacement::None).then(|| {
        let n = standard_normal(embed.len(), rng);
        add_scaled(&mut embed, config.beta, &n);
        n
    });
    Ok(Aggregation {
        global: GlobalModel { embed, head },
        noise,
    })
}

/// The coordinator. Holds global parameters and its random streams, never
/// any samples or private heads.
#[derive(Debug, Clone)]
pub struct ServerState {
    config: FederationConfig,
    embed_dims: Vec<usize>,
    epoch: usize,
    global: GlobalModel,
    selection_rng: Rng,
    noise_rng: Rng,
}

impl ServerState {
    /// Initialises the global model from the master seed. `head_classes` is
    /// the padded class count under full-model averaging and ignored
    /// otherwise.
    pub fn new(config: &FederationConfig, input_dim: usize, head_classes: usize) -> Result<Self> {
        config.validate()?;
        let embed_dims = config.model.embed_dims(input_dim);
        let mut init = rng::stream(config.seed, Stream::GlobalInit);
        let embed = EmbeddingNet::init(&embed_dims, &mut init)?;
        let head = if config.strategy.decoupled_heads() {
            None
        } else {
            let head = MappingNet::init(config.model.head(head_classes), &mut init)?;
            Some(HeadState::of(&head))
        };
        Ok(Self {
            config: config.clone(),
            embed_dims,
            epoch: 0,
            global: GlobalModel {
                embed: embed.params().clone(),
                head,
            },
            selection_rng: rng::stream(config.seed, Stream::ServerSelection),
            noise_rng: rng::stream(config.seed, Stream::ServerNoise),
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    /// Index of the epoch about to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn global(&self) -> &GlobalModel {
        &self.global
    }

    pub fn embedding_net(&self) -> EmbeddingNet {
        let mut net = EmbeddingNet::zeros(&self.embed_dims).expect("validated dims");
        net.set_params(self.global.embed.clone()).expect("matching shape");
        net
    }

    pub fn select(&mut self) -> Result<Vec<usize>> {
        select_clients(self.config.clients, self.config.effective_fraction(), &mut self.selection_rng)
    }

    /// Parameters for one client at the start of the current epoch. Under
    /// double noise placement, broadcasts after the first aggregation carry
    /// their own noise draw.
    pub fn broadcast(&mut self) -> Broadcast {
        let mut embed = self.global.embed.clone();
        let noise = (self.config.noise == NoisePlacement::Double && self.epoch > 0).then(|| {
            let n = standard_normal(embed.len(), &mut self.noise_rng);
            add_scaled(&mut embed, self.config.beta, &n);
            n
        });
        Broadcast {
            epoch: self.epoch,
            embed,
            head: self.global.head.clone(),
            noise,
        }
    }

    /// Aggregates the uploads of the selected clients and advances the epoch.
    pub fn aggregate(&mut self, updates: &[ModelUpdate]) -> Result<Aggregation> {
        if updates.len() != self.config.selected_count() {
            return Err(protocol(format!(
                "expected {} updates, received {}",
                self.config.selected_count(),
                updates.len()
            )));
        }
        let agg = aggregate(updates, &self.config, &mut self.noise_rng)?;
        self.global = agg.global.clone();
        self.epoch += 1;
        Ok(agg)
    }
}

//! In-process driver: one server and `N` clients in the same address space.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use super::{Aggregation, ClientState, FederationConfig, ModelUpdate, RoundReport, ServerState};
use crate::data::{DomainDataset, QueryGallerySplit};
use crate::error::{check_dim, Error, Result};
use crate::eval::{evaluate_retrieval, RetrievalResult};
use crate::exec;
use crate::losses::LossBreakdown;
use crate::nn::EmbeddingNet;

/// Retrieval metrics of the global embedding after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub rank1: f64,
    pub map: f64,
}

impl From<&RetrievalResult> for EpochMetrics {
    fn from(r: &RetrievalResult) -> Self {
        Self {
            rank1: r.rank1,
            map: r.map,
        }
    }
}

/// One row per epoch of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean local losses of every client, indexed by client id.
    pub losses: Vec<LossBreakdown>,
    pub selected: Vec<usize>,
    pub metrics: Option<EpochMetrics>,
    pub wall_ms: u64,
}

/// Everything one epoch produced, for inspection in tests and tooling.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub record: EpochRecord,
    /// Every client's upload and report, including unselected clients.
    pub rounds: Vec<(ModelUpdate, RoundReport)>,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone)]
pub struct Federation {
    config: FederationConfig,
    server: ServerState,
    clients: Vec<ClientState>,
}

/// Head width under full-model averaging: the largest identity count.
pub(crate) fn padded_classes(datasets: &[DomainDataset]) -> usize {
    datasets.iter().map(|d| d.identities).max().unwrap_or(0)
}

impl Federation {
    /// Builds the server and one client per dataset; client `i` owns
    /// `datasets[i]`.
    pub fn new(config: &FederationConfig, datasets: Vec<DomainDataset>) -> Result<Self> {
        config.validate()?;
        if datasets.len() != config.clients {
            return Err(Error::Config(format!(
                "{} clients configured but {} datasets supplied",
                config.clients,
                datasets.len()
            )));
        }
        let mut seen = HashSet::new();
        for ds in &datasets {
            if !seen.insert(ds.domain_id) {
                return Err(Error::Config(format!(
                    "domain {} is assigned to more than one client",
                    ds.domain_id
                )));
            }
        }
        let dim = datasets[0].feature_dim();
        for ds in &datasets {
            check_dim("client feature dimension", dim, ds.feature_dim())?;
        }
        let padded = padded_classes(&datasets);
        let server = ServerState::new(config, dim, padded)?;
        let clients = datasets
            .into_iter()
            .enumerate()
            .map(|(i, ds)| {
                let classes = if config.strategy.decoupled_heads() {
                    ds.identities
                } else {
                    padded
                };
                ClientState::new(i, Arc::new(ds), config, &server.global().embed, classes)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            server,
            clients,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [ClientState] {
        &mut self.clients
    }

    pub fn epoch(&self) -> usize {
        self.server.epoch()
    }

    pub fn global_embedding(&self) -> EmbeddingNet {
        self.server.embedding_net()
    }

    /// Runs one global epoch and returns all intermediate results.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let epoch = self.server.epoch();
        let start = Instant::now();
        for client in &mut self.clients {
            let msg = self.server.broadcast();
            client
                .broadcast(&msg)
                .map_err(|e| e.in_epoch(epoch, Some(client.id)))?;
            client.init_expert();
        }
        let config = &self.config;
        let rounds = exec::map_mut(config.exec, &mut self.clients, |c| {
            c.local_round(config, epoch).map_err(|e| e.in_epoch(epoch, Some(c.id)))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let selected = self.server.select()?;
        let updates: Vec<ModelUpdate> = selected.iter().map(|&i| rounds[i].0.clone()).collect();
        let aggregation = self
            .server
            .aggregate(&updates)
            .map_err(|e| e.in_epoch(epoch, None))?;
        let record = EpochRecord {
            epoch,
            losses: rounds.iter().map(|(_, r)| r.losses).collect(),
            selected,
            metrics: None,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        Ok(RoundOutput {
            record,
            rounds,
            aggregation,
        })
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        Ok(self.step()?.record)
    }

    /// Runs the remaining configured epochs. When `eval` is given, the
    /// global embedding is evaluated every `every` epochs and after the last.
    pub fn run(&mut self, eval: Option<(&DomainDataset, &QueryGallerySplit)>, every: usize) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::with_capacity(self.config.epochs);
        while self.server.epoch() < self.config.epochs {
            let mut record = self.run_epoch()?;
            if let Some((ds, split)) = eval {
                let last = record.epoch + 1 == self.config.epochs;
                if last || (every > 0 && (record.epoch + 1) % every == 0) {
                    let r = evaluate_retrieval(&self.global_embedding(), ds, split)?;
                    record.metrics = Some(EpochMetrics::from(&r));
                }
            }
            history.push(record);
        }
        Ok(history)
    }
}

/// Trains a fresh federation for `config.epochs` and returns the final
/// global embedding with its history.
pub fn run_federation(config: &FederationConfig, datasets: Vec<DomainDataset>) -> Result<(EmbeddingNet, Vec<EpochRecord>)> {
    let mut fed = Federation::new(config, datasets)?;
    let history = fed.run(None, 0)?;
    Ok((fed.global_embedding(), history))
}

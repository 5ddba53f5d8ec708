//! Client/server federation protocol.
//!
//! One global epoch `k` runs
//!
//! 1. broadcast: every client receives the global embedding (decoupled
//!    strategies keep their private head, full averaging also receives the
//!    head), optionally masked with noise;
//! 2. expert initialisation: the expert takes the client parameters from
//!    before the broadcast;
//! 3. local rounds on every client (in parallel when enabled);
//! 4. selection of `ceil(S * N)` clients;
//! 5. aggregation: coordinate-wise mean of the selected uploads plus
//!    optional white noise.
//!
//! [`ServerState`] and [`ClientState`] expose these steps individually so
//! the same state machines drive both the in-process simulator
//! ([`Federation`]) and the networked mode.

mod client;
mod config;
mod server;
mod simulate;
mod train;

pub use client::{ClientState, RoundReport};
pub use config::{selected_count, FederationConfig, ModelConfig, NoisePlacement, Strategy};
pub use server::{aggregate, select_clients, Aggregation, ServerState};
pub use simulate::{run_federation, EpochMetrics, EpochRecord, Federation, RoundOutput};
pub use train::{train_step, ModelOptimizer, StepOutcome, StepRates};

use crate::error::{check_dim, Error, Result};
use crate::nn::MappingNet;
use crate::params::ParamBlock;

/// Head parameters together with batch-norm running statistics, which
/// travel with the head whenever heads are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    pub params: ParamBlock,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl HeadState {
    pub fn of(head: &MappingNet) -> Self {
        let (m, v) = head.running_stats();
        Self {
            params: head.params().clone(),
            running_mean: m.to_vec(),
            running_var: v.to_vec(),
        }
    }

    pub fn install(&self, head: &mut MappingNet) -> Result<()> {
        head.set_params(self.params.clone())?;
        head.set_running_stats(self.running_mean.clone(), self.running_var.clone())
    }

    fn mean<'a>(heads: impl IntoIterator<Item = &'a HeadState> + Clone) -> Result<HeadState> {
        let params = ParamBlock::mean(heads.clone().into_iter().map(|h| &h.params))?;
        let mut count = 0usize;
        let mut running_mean = vec![0.0; 0];
        let mut running_var = vec![0.0; 0];
        for h in heads {
            if count == 0 {
                running_mean = h.running_mean.clone();
                running_var = h.running_var.clone();
            } else {
                check_dim("running statistics", running_mean.len(), h.running_mean.len())?;
                running_mean.iter_mut().zip(&h.running_mean).for_each(|(a, b)| *a += b);
                running_var.iter_mut().zip(&h.running_var).for_each(|(a, b)| *a += b);
            }
            count += 1;
        }
        if count > 1 {
            let n = count as f64;
            running_mean.iter_mut().for_each(|v| *v /= n);
            running_var.iter_mut().for_each(|v| *v /= n);
        }
        Ok(HeadState {
            params,
            running_mean,
            running_var,
        })
    }
}

/// Parameters the server holds: the embedding always, the head only under
/// full-model averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub embed: ParamBlock,
    pub head: Option<HeadState>,
}

/// Server-to-client parameters for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub epoch: usize,
    pub embed: ParamBlock,
    pub head: Option<HeadState>,
    /// Standard-normal draw added (scaled by beta) to the embedding, if any.
    pub noise: Option<Vec<f64>>,
}

/// Client-to-server upload after a local round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub client_id: usize,
    pub embed: ParamBlock,
    pub head: Option<HeadState>,
}

pub(crate) fn protocol(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

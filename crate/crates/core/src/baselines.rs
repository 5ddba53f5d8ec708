//! Non-federated reference models: per-domain individuals, centralised joint
//! training on pooled data, and two ensembles of individuals.

use ndarray::{concatenate, Array2, Axis};

use crate::data::{DomainDataset, QueryGallerySplit};
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, extract_embeddings, RetrievalResult};
use crate::exec;
use crate::federation::{train_step, FederationConfig, ModelOptimizer, StepRates};
use crate::losses::LossSpec;
use crate::nn::{EmbeddingNet, Network};
use crate::params::ParamBlock;
use crate::rng::{self, Rng, Stream};

fn train_local(
    mut net: Network,
    ds: &DomainDataset,
    config: &FederationConfig,
    steps_per_epoch: usize,
    rng: &mut Rng,
) -> Result<Network> {
    let spec = LossSpec::classification_only();
    let mut opt = ModelOptimizer::for_network(&net, config.sgd);
    for epoch in 0..config.epochs {
        if config.reset_optimizer {
            opt.reset();
        }
        let rates = StepRates::at(config, epoch);
        for _ in 0..steps_per_epoch {
            train_step(&mut net, &mut opt, None, ds, config, &spec, rates, rng)
                .map_err(|e| e.in_epoch(epoch, None))?;
        }
    }
    Ok(net)
}

/// Model trained on one client's data alone, with the same local step count
/// per epoch as a federated client. Initialised from the client's own
/// stream, so individuals are independent of each other.
pub fn train_individual(config: &FederationConfig, client_id: usize, ds: &DomainDataset) -> Result<Network> {
    config.validate()?;
    let net = Network::init(
        &config.model.embed_dims(ds.feature_dim()),
        config.model.head(ds.identities),
        &mut rng::stream(config.seed, Stream::ClientInit(client_id)),
    )?;
    let mut rng = rng::stream(config.seed, Stream::Client(client_id));
    train_local(net, ds, config, config.effective_local_steps(), &mut rng)
}

/// One individual per dataset; client `i` trains on `datasets[i]`.
pub fn train_individuals(config: &FederationConfig, datasets: &[DomainDataset]) -> Result<Vec<Network>> {
    let ids: Vec<usize> = (0..datasets.len()).collect();
    exec::map(config.exec, &ids, |&i| train_individual(config, i, &datasets[i]))
        .into_iter()
        .collect()
}

/// Joint model on the pooled data (labels kept disjoint across domains).
/// Uses the global initialisation stream and `N * t_max` steps per epoch so
/// it sees as many minibatches as the whole federation.
pub fn train_centralised(config: &FederationConfig, datasets: &[DomainDataset]) -> Result<Network> {
    config.validate()?;
    let pooled = DomainDataset::pooled(datasets)?;
    let net = Network::init(
        &config.model.embed_dims(pooled.feature_dim()),
        config.model.head(pooled.identities),
        &mut rng::stream(config.seed, Stream::GlobalInit),
    )?;
    let mut rng = rng::stream(config.seed, Stream::Client(0));
    let steps = datasets.len() * config.effective_local_steps();
    train_local(net, &pooled, config, steps, &mut rng)
}

/// Embedding whose parameters are the coordinate-wise mean of the inputs.
pub fn ensemble_param_average(nets: &[EmbeddingNet]) -> Result<EmbeddingNet> {
    let first = nets
        .first()
        .ok_or_else(|| Error::Input("parameter average of zero models".into()))?;
    let params = ParamBlock::mean(nets.iter().map(EmbeddingNet::params))?;
    let mut out = first.clone();
    out.set_params(params)?;
    Ok(out)
}

/// Row-wise concatenation of every model's embedding of `ds`.
pub fn concat_embeddings(nets: &[EmbeddingNet], ds: &DomainDataset) -> Result<Array2<f64>> {
    if nets.is_empty() {
        return Err(Error::Input("feature concatenation of zero models".into()));
    }
    let parts = nets
        .iter()
        .map(|n| extract_embeddings(n, ds))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("equal row counts"))
}

/// Retrieval with concatenated embeddings from every model.
pub fn evaluate_feature_concat(
    nets: &[EmbeddingNet],
    ds: &DomainDataset,
    split: &QueryGallerySplit,
) -> Result<RetrievalResult> {
    let emb = concat_embeddings(nets, ds)?;
    evaluate_embeddings(emb.view(), ds, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn param_average_of_two() {
        let a = EmbeddingNet::init(&[3, 2], &mut seeded(1)).unwrap();
        let b = EmbeddingNet::init(&[3, 2], &mut seeded(2)).unwrap();
        let avg = ensemble_param_average(&[a.clone(), b.clone()]).unwrap();
        for ((m, x), y) in avg.params().values().iter().zip(a.params().values()).zip(b.params().values()) {
            assert_eq!(*m, (x + y) / 2.0);
        }
        assert!(ensemble_param_average(&[]).is_err());
    }
}

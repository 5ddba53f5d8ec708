use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use fedembed::baselines::{
    ensemble_param_average, evaluate_feature_concat, train_centralised, train_individuals,
};
use fedembed::checkpoint::Checkpoint;
use fedembed::data::{load_dataset, make_query_gallery_split, save_dataset, DomainDataset, QueryGallerySplit};
use fedembed::eval::{evaluate_retrieval, RetrievalResult};
use fedembed::federation::{EpochMetrics, EpochRecord, Federation, FederationConfig, Strategy};
use fedembed::nn::EmbeddingNet;
use fedembed::rng::{self, Stream};
use fedembed_wire::{run_client, serve, ClientOptions, ServerOptions, DEFAULT_MAX_FRAME};

use crate::config::{ExperimentConfig, Mode};
use crate::report;

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const INDIVIDUALS_FILE: &str = "individuals.csv";
pub const EVAL_FILE: &str = "eval.csv";

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn load(path: &Path) -> Result<DomainDataset> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

/// Training datasets (one per client) and the held-out dataset, read from
/// the configured files or generated from the master seed.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Vec<DomainDataset>, DomainDataset)> {
    let seed = cfg.federation.seed;
    let generated = if cfg.train_data.is_empty() || cfg.test_data.is_none() {
        Some(cfg.suite.generate(seed).context("generating synthetic domains")?)
    } else {
        None
    };
    let train = if cfg.train_data.is_empty() {
        let mut t = generated.as_ref().expect("generated").0.clone();
        t.truncate(cfg.federation.clients);
        t
    } else {
        cfg.train_data.iter().map(|p| load(p)).collect::<Result<_>>()?
    };
    let unseen = match &cfg.test_data {
        Some(p) => load(p)?,
        None => generated.expect("generated").1,
    };
    Ok((train, unseen))
}

fn eval_split(cfg: &ExperimentConfig, ds: &DomainDataset) -> Result<QueryGallerySplit> {
    Ok(make_query_gallery_split(ds, &mut rng::stream(cfg.federation.seed, Stream::Evaluation))?)
}

/// Writes one file per generated domain and returns their paths (training
/// domains first, the held-out domain last).
pub fn gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = out_dir(cfg)?.join("data");
    std::fs::create_dir_all(&dir)?;
    let (train, unseen) = cfg.suite.generate(cfg.federation.seed)?;
    let mut paths = Vec::new();
    for ds in &train {
        let p = dir.join(format!("train_{}.fds", ds.domain_id));
        save_dataset(ds, &p).with_context(|| format!("writing {}", p.display()))?;
        paths.push(p);
    }
    let p = dir.join("unseen.fds");
    save_dataset(&unseen, &p).with_context(|| format!("writing {}", p.display()))?;
    paths.push(p);
    Ok(paths)
}

fn finish_training(
    cfg: &ExperimentConfig,
    history: &[EpochRecord],
    net: &EmbeddingNet,
    final_metrics: &RetrievalResult,
) -> Result<()> {
    let dir = out_dir(cfg)?;
    report::write(&dir.join(HISTORY_FILE), &report::history_csv(history, cfg.wall_clock))?;
    report::write(&dir.join(METRICS_FILE), &report::eval_csv(final_metrics))?;
    report::write(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    Checkpoint {
        epoch: history.len() as u32,
        embed: net.clone(),
    }
    .save(dir.join(CHECKPOINT_FILE))
    .context("writing checkpoint")?;
    Ok(())
}

/// Runs training in the configured mode and returns the final held-out
/// metrics (`None` for a client, which holds no global model).
pub fn train(cfg: &ExperimentConfig) -> Result<Option<RetrievalResult>> {
    match cfg.mode {
        Mode::Simulate => simulate(cfg).map(Some),
        Mode::Serve => serve_federation(cfg).map(Some),
        Mode::Client => client(cfg).map(|_| None),
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<RetrievalResult> {
    let (train, unseen) = datasets(cfg)?;
    let split = eval_split(cfg, &unseen)?;
    let mut fed = Federation::new(&cfg.federation, train)?;
    let history = fed.run(Some((&unseen, &split)), cfg.eval_every)?;
    let net = fed.global_embedding();
    let metrics = evaluate_retrieval(&net, &unseen, &split)?;
    finish_training(cfg, &history, &net, &metrics)?;
    Ok(metrics)
}

fn serve_federation(cfg: &ExperimentConfig) -> Result<RetrievalResult> {
    let (_, unseen) = datasets(&ExperimentConfig {
        train_data: Vec::new(),
        ..cfg.clone()
    })?;
    let split = eval_split(cfg, &unseen)?;
    let listener = TcpListener::bind(&cfg.endpoint).with_context(|| format!("binding {}", cfg.endpoint))?;
    eprintln!("listening on {} for {} clients", listener.local_addr()?, cfg.federation.clients);
    let opts = ServerOptions {
        timeout: Duration::from_secs(cfg.timeout_secs),
        max_frame: DEFAULT_MAX_FRAME,
    };
    let served = serve(&listener, &cfg.federation, &opts)?;
    let mut net = served.embedding.clone();
    let epochs = cfg.federation.epochs;
    let mut history = Vec::with_capacity(served.epochs.len());
    for ep in served.epochs {
        let last = ep.epoch + 1 == epochs;
        let metrics = if last || (cfg.eval_every > 0 && (ep.epoch + 1) % cfg.eval_every == 0) {
            net.set_params(ep.global_embed.clone())?;
            Some(EpochMetrics::from(&evaluate_retrieval(&net, &unseen, &split)?))
        } else {
            None
        };
        history.push(EpochRecord {
            epoch: ep.epoch,
            losses: ep.losses,
            selected: ep.selected,
            metrics,
            wall_ms: ep.wall_ms,
        });
    }
    let metrics = evaluate_retrieval(&served.embedding, &unseen, &split)?;
    finish_training(cfg, &history, &served.embedding, &metrics)?;
    Ok(metrics)
}

fn client(cfg: &ExperimentConfig) -> Result<()> {
    let id = cfg.client_id;
    let ds = match cfg.train_data.len() {
        0 => cfg
            .suite
            .generate(cfg.federation.seed)?
            .0
            .into_iter()
            .nth(id)
            .with_context(|| format!("the generator has no domain {id}"))?,
        1 => load(&cfg.train_data[0])?,
        _ => load(
            cfg.train_data
                .get(id)
                .with_context(|| format!("no training file for client {id}"))?,
        )?,
    };
    let opts = ClientOptions {
        timeout: Duration::from_secs(cfg.timeout_secs),
        max_frame: DEFAULT_MAX_FRAME,
    };
    let done = run_client(cfg.endpoint.as_str(), id as u16, ds, &opts)?;
    eprintln!("client {id}: completed {} epochs", done.losses.len());
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<RetrievalResult> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (_, unseen) = datasets(&ExperimentConfig {
        train_data: Vec::new(),
        ..cfg.clone()
    })?;
    let split = eval_split(cfg, &unseen)?;
    let r = evaluate_retrieval(&ck.embed, &unseen, &split)?;
    report::write(&out_dir(cfg)?.join(EVAL_FILE), &report::eval_csv(&r))?;
    Ok(r)
}

fn mean_result(rs: &[RetrievalResult]) -> RetrievalResult {
    let n = rs.len() as f64;
    let avg = |f: fn(&RetrievalResult) -> f64| rs.iter().map(f).sum::<f64>() / n;
    RetrievalResult {
        rank1: avg(|r| r.rank1),
        rank5: avg(|r| r.rank5),
        rank10: avg(|r| r.rank10),
        map: avg(|r| r.map),
        average_precision: Vec::new(),
    }
}

/// Held-out results of every method on one configuration, in report order.
pub struct Comparison {
    pub rows: Vec<(String, RetrievalResult)>,
    pub individuals: Vec<RetrievalResult>,
}

pub fn run_comparison(cfg: &ExperimentConfig) -> Result<Comparison> {
    let (train, unseen) = datasets(cfg)?;
    if train.len() < 2 {
        bail!("the comparison needs at least two clients");
    }
    let split = eval_split(cfg, &unseen)?;
    let base = &cfg.federation;
    let mut rows = Vec::new();
    for (name, strategy) in [
        ("fedreid", Strategy::FedReid),
        ("fedavg", Strategy::FedAvg),
        ("fedsgd", Strategy::FedSgd),
    ] {
        let c = FederationConfig {
            strategy,
            ..base.clone()
        };
        let mut fed = Federation::new(&c, train.clone())?;
        fed.run(None, 0)?;
        rows.push((name.to_string(), evaluate_retrieval(&fed.global_embedding(), &unseen, &split)?));
    }
    let nets: Vec<EmbeddingNet> = train_individuals(base, &train)?.into_iter().map(|n| n.embed).collect();
    let individuals = nets
        .iter()
        .map(|n| evaluate_retrieval(n, &unseen, &split))
        .collect::<fedembed::Result<Vec<_>>>()?;
    rows.push(("individual-mean".into(), mean_result(&individuals)));
    let joint = train_centralised(base, &train)?;
    rows.push(("centralised-joint".into(), evaluate_retrieval(&joint.embed, &unseen, &split)?));
    let averaged = ensemble_param_average(&nets)?;
    rows.push(("parameter-average".into(), evaluate_retrieval(&averaged, &unseen, &split)?));
    rows.push(("feature-concat".into(), evaluate_feature_concat(&nets, &unseen, &split)?));
    Ok(Comparison { rows, individuals })
}

pub fn compare(cfg: &ExperimentConfig) -> Result<Comparison> {
    let cmp = run_comparison(cfg)?;
    let dir = out_dir(cfg)?;
    report::write(&dir.join(COMPARISON_FILE), &report::comparison_csv(&cmp.rows))?;
    let per_client: Vec<(String, RetrievalResult)> = cmp
        .individuals
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("client-{i}"), r.clone()))
        .collect();
    report::write(&dir.join(INDIVIDUALS_FILE), &report::comparison_csv(&per_client))?;
    Ok(cmp)
}

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use fedembed::federation::Strategy;
use fedembed_cli::commands;
use fedembed_cli::report;
use fedembed_cli::{ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "fedembed", version, about = "Federated embedding learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training domains and the held-out domain.
    GenData(Common),
    /// Train in the configured mode (simulate by default).
    Train(Common),
    /// Evaluate a checkpoint on the held-out domain.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate [default: <out>/model.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare federated strategies, individual clients and ensembles.
    Compare(Common),
    /// Coordinate a federation of remote clients.
    Serve(Common),
    /// Join a remote federation as one client.
    Client {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        client_id: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// host:port of the server.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    local_steps: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    /// Any configuration key, as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self, extra: &[(&str, String)]) -> Result<ExperimentConfig> {
        let mut over: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                over.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("endpoint", self.endpoint.clone());
        put("strategy", self.strategy.map(|s| s.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("fraction", self.fraction.map(|v| v.to_string()));
        put("local_steps", self.local_steps.map(|v| v.to_string()));
        put("clients", self.clients.map(|v| v.to_string()));
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got '{s}'"))?;
            over.push((k.trim().to_string(), v.trim().to_string()));
        }
        over.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &over)?,
            None => ExperimentConfig::parse("", &over)?,
        };
        Ok(cfg)
    }
}

fn print_metrics(label: &str, r: &fedembed::eval::RetrievalResult) {
    println!(
        "{label}: rank-1 {:.2}%  rank-5 {:.2}%  rank-10 {:.2}%  mAP {:.2}%",
        100.0 * r.rank1,
        100.0 * r.rank5,
        100.0 * r.rank10,
        100.0 * r.map
    );
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(c) => {
            for p in commands::gen_data(&c.load(&[])?)? {
                println!("{}", p.display());
            }
        }
        Command::Train(c) => {
            if let Some(r) = commands::train(&c.load(&[])?)? {
                print_metrics("held-out", &r);
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load(&[])?;
            let path = checkpoint.unwrap_or_else(|| cfg.out.join(commands::CHECKPOINT_FILE));
            print_metrics("held-out", &commands::eval(&cfg, &path)?);
        }
        Command::Compare(c) => {
            let cmp = commands::compare(&c.load(&[])?)?;
            print!("{}", report::comparison_table(&cmp.rows));
        }
        Command::Serve(c) => {
            let cfg = c.load(&[("mode", Mode::Serve.to_string())])?;
            if let Some(r) = commands::train(&cfg)? {
                print_metrics("held-out", &r);
            }
        }
        Command::Client { common, client_id } => {
            let mut extra = vec![("mode", Mode::Client.to_string())];
            if let Some(id) = client_id {
                extra.push(("client_id", id.to_string()));
            }
            commands::train(&common.load(&extra)?)?;
        }
    }
    Ok(())
}

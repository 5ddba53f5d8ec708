use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use fedembed::data::DomainDataset;
use fedembed::federation::{Broadcast, ClientState, FederationConfig};
use fedembed::losses::LossBreakdown;
use fedembed::nn::Network;

use crate::error::{protocol, WireError};
use crate::frame::{read_frame, write_frame, DEFAULT_MAX_FRAME};
use crate::message::Message;
use crate::server::HEAD_CLASSES_KEY;
use crate::Result;

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// How long to keep retrying the initial connection, and the longest
    /// wait for any server message.
    pub timeout: Duration,
    pub max_frame: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientReport {
    pub config: FederationConfig,
    /// Mean local losses of each completed epoch.
    pub losses: Vec<LossBreakdown>,
    /// Local model after the last round; `None` if no epoch ran.
    pub model: Option<Network>,
}

fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
    loop {
        let mut last = None;
        for a in &addrs {
            match TcpStream::connect_timeout(a, timeout) {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        if Instant::now() >= deadline {
            return Err(last.map_or_else(|| protocol("no address to connect to"), WireError::Io));
        }
        thread::sleep(Duration::from_millis(50));
    }
}

fn parse_config(text: &str) -> Result<(FederationConfig, usize)> {
    let mut classes = None;
    let mut rest = String::with_capacity(text.len());
    for line in text.lines() {
        match line.split_once('=') {
            Some((k, v)) if k.trim() == HEAD_CLASSES_KEY => {
                classes = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| protocol(format!("invalid {HEAD_CLASSES_KEY} '{}'", v.trim())))?,
                );
            }
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    let classes = classes.ok_or_else(|| protocol(format!("CONFIG lacks {HEAD_CLASSES_KEY}")))?;
    Ok((FederationConfig::from_kv_text(&rest)?, classes))
}

/// Connects to the server as client `id` and trains on `dataset` until the
/// server shuts the federation down.
///
/// The dataset never leaves this function: the client sends its feature
/// width, identity count and domain id once, then only parameters and loss
/// summaries.
pub fn run_client(addr: impl ToSocketAddrs, id: u16, dataset: DomainDataset, opts: &ClientOptions) -> Result<ClientReport> {
    let stream = connect(addr, opts.timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(opts.timeout))?;
    let peer = stream.peer_addr().map(|a| format!("server ({a})")).unwrap_or_else(|_| "server".into());
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut send = |msg: &Message, epoch: u32| -> Result<()> {
        write_frame(&mut writer, &msg.into_frame(epoch, id))?;
        writer.flush()?;
        Ok(())
    };
    let mut recv = || {
        read_frame(&mut reader, opts.max_frame, &peer).map_err(|e| match e {
            WireError::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                WireError::Timeout(opts.timeout, "the server".into())
            }
            other => other,
        })
    };

    send(
        &Message::Hello {
            feature_dim: dataset.feature_dim() as u32,
            identities: dataset.identities as u32,
            domain_id: dataset.domain_id,
        },
        0,
    )?;
    let frame = recv()?;
    let (config, classes) = match Message::from_frame(&frame)? {
        Message::Config(text) => parse_config(&text)?,
        Message::Error(e) => return Err(WireError::Remote(e)),
        other => return Err(protocol(format!("expected CONFIG, got {:?}", other.kind()))),
    };

    let dataset = Arc::new(dataset);
    let mut state: Option<ClientState> = None;
    let mut losses = Vec::new();
    loop {
        let frame = recv()?;
        let epoch = frame.epoch as usize;
        match Message::from_frame(&frame)? {
            Message::GlobalParams { selected, embed, head } => {
                if epoch != losses.len() {
                    return Err(protocol(format!("expected epoch {}, server sent {epoch}", losses.len())));
                }
                // The first broadcast carries the shared initial embedding.
                let client = match state.as_mut() {
                    Some(c) => c,
                    None => state.insert(ClientState::new(id as usize, dataset.clone(), &config, &embed, classes)?),
                };
                client.broadcast(&Broadcast {
                    epoch,
                    embed,
                    head,
                    noise: None,
                })?;
                client.init_expert();
                let (update, report) = client.local_round(&config, epoch)?;
                let reply = if selected {
                    Message::Update {
                        losses: report.losses,
                        embed: update.embed,
                        head: update.head,
                    }
                } else {
                    Message::EpochDone { losses: report.losses }
                };
                send(&reply, frame.epoch)?;
                losses.push(report.losses);
            }
            Message::Shutdown => {
                return Ok(ClientReport {
                    config,
                    losses,
                    model: state.map(|s| s.model),
                })
            }
            Message::Error(e) => return Err(WireError::Remote(e)),
            other => return Err(protocol(format!("unexpected {:?} from the server", other.kind()))),
        }
    }
}

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use fedembed::federation::{FederationConfig, GlobalModel, ModelUpdate, ServerState};
use fedembed::losses::LossBreakdown;
use fedembed::nn::EmbeddingNet;
use fedembed::ParamBlock;

use crate::error::{protocol, WireError};
use crate::frame::{read_frame, write_frame, Frame, DEFAULT_MAX_FRAME};
use crate::message::Message;
use crate::Result;

/// Configuration key carrying the client's head width in the CONFIG text.
pub(crate) const HEAD_CLASSES_KEY: &str = "head_classes";

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Upper bound on any single wait: accepting all clients, a handshake
    /// reply, or a full epoch barrier.
    pub timeout: Duration,
    pub max_frame: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub selected: Vec<usize>,
    /// Mean local losses, indexed by client id.
    pub losses: Vec<LossBreakdown>,
    /// Global embedding after this epoch's aggregation.
    pub global_embed: ParamBlock,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ServeReport {
    pub epochs: Vec<EpochReport>,
    pub global: GlobalModel,
    pub embedding: EmbeddingNet,
}

struct Peer {
    id: usize,
    addr: SocketAddr,
    writer: BufWriter<TcpStream>,
}

impl Peer {
    fn send(&mut self, msg: &Message, epoch: usize) -> Result<()> {
        write_frame(&mut self.writer, &msg.into_frame(epoch as u32, self.id as u16))?;
        self.writer.flush()?;
        Ok(())
    }
}

type Inbox = Receiver<(usize, Result<Frame>)>;

fn accept_before(listener: &TcpListener, deadline: Instant, timeout: Duration) -> Result<(TcpStream, SocketAddr)> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((stream, addr)) => {
                stream.set_nonblocking(false)?;
                return Ok((stream, addr));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(WireError::Timeout(timeout, "clients to connect".into()));
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn remaining(deadline: Instant) -> Duration {
    deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))
}

/// Reads the HELLO of a freshly accepted connection.
fn handshake(stream: &TcpStream, addr: SocketAddr, opts: &ServerOptions, deadline: Instant) -> Result<(usize, usize, usize, u32)> {
    stream.set_read_timeout(Some(remaining(deadline)))?;
    let frame = read_frame(&mut &*stream, opts.max_frame, &addr.to_string()).map_err(|e| match e {
        WireError::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
            WireError::Timeout(opts.timeout, format!("HELLO from {addr}"))
        }
        other => other,
    })?;
    stream.set_read_timeout(None)?;
    match Message::from_frame(&frame)? {
        Message::Hello {
            feature_dim,
            identities,
            domain_id,
        } => Ok((frame.client as usize, feature_dim as usize, identities as usize, domain_id)),
        other => Err(protocol(format!("expected HELLO from {addr}, got {:?}", other.kind()))),
    }
}

fn spawn_reader(id: usize, stream: TcpStream, addr: SocketAddr, max_frame: usize, tx: Sender<(usize, Result<Frame>)>) {
    thread::spawn(move || {
        let mut reader = BufReader::new(stream);
        let peer = format!("client {id} ({addr})");
        loop {
            let frame = read_frame(&mut reader, max_frame, &peer);
            let stop = frame.is_err();
            if tx.send((id, frame)).is_err() || stop {
                break;
            }
        }
    });
}

/// Waits until every client has reported for `epoch`. Selected clients must
/// send UPDATE, the others EPOCH_DONE.
fn barrier(
    inbox: &Inbox,
    epoch: usize,
    selected: &[usize],
    clients: usize,
    opts: &ServerOptions,
) -> Result<(Vec<LossBreakdown>, Vec<ModelUpdate>)> {
    let deadline = Instant::now() + opts.timeout;
    let mut losses = vec![None; clients];
    let mut updates = Vec::with_capacity(selected.len());
    let mut pending = clients;
    while pending > 0 {
        let (id, frame) = match inbox.recv_timeout(remaining(deadline)) {
            Ok(msg) => msg,
            Err(RecvTimeoutError::Timeout) => {
                let missing: Vec<usize> = (0..clients).filter(|&i| losses[i].is_none()).collect();
                return Err(WireError::Timeout(
                    opts.timeout,
                    format!("epoch {epoch} results from clients {missing:?}"),
                ));
            }
            Err(RecvTimeoutError::Disconnected) => return Err(protocol("all client connections closed")),
        };
        let frame = frame?;
        if frame.epoch as usize != epoch || frame.client as usize != id {
            return Err(protocol(format!(
                "client {id} sent a frame tagged epoch {} client {} during epoch {epoch}",
                frame.epoch, frame.client
            )));
        }
        if losses[id].is_some() {
            return Err(protocol(format!("client {id} reported twice in epoch {epoch}")));
        }
        let is_selected = selected.contains(&id);
        let reported = match Message::from_frame(&frame)? {
            Message::Update { losses, embed, head } if is_selected => {
                updates.push(ModelUpdate {
                    client_id: id,
                    embed,
                    head,
                });
                losses
            }
            Message::EpochDone { losses } if !is_selected => losses,
            Message::Error(e) => return Err(WireError::Remote(format!("client {id}: {e}"))),
            other => {
                return Err(protocol(format!(
                    "client {id} ({}) sent {:?} in epoch {epoch}",
                    if is_selected { "selected" } else { "not selected" },
                    other.kind()
                )))
            }
        };
        losses[id] = Some(reported);
        pending -= 1;
    }
    updates.sort_by_key(|u| u.client_id);
    Ok((losses.into_iter().map(Option::unwrap).collect(), updates))
}

fn run(listener: &TcpListener, config: &FederationConfig, opts: &ServerOptions, peers: &mut Vec<Peer>) -> Result<ServeReport> {
    config.validate()?;
    let n = config.clients;
    let (tx, inbox) = mpsc::channel();
    let deadline = Instant::now() + opts.timeout;
    let mut hellos = Vec::with_capacity(n);
    let mut ids = HashSet::new();
    let mut domains = HashSet::new();
    while hellos.len() < n {
        let (stream, addr) = accept_before(listener, deadline, opts.timeout)?;
        stream.set_nodelay(true)?;
        let checked = handshake(&stream, addr, opts, deadline).and_then(|(id, dim, identities, domain)| {
            if id >= n {
                return Err(protocol(format!("{addr} claims client id {id} but only {n} clients are configured")));
            }
            if ids.contains(&id) {
                return Err(protocol(format!("client id {id} connected twice")));
            }
            if domains.contains(&domain) {
                return Err(protocol(format!("domain {domain} is assigned to more than one client")));
            }
            if identities == 0 {
                return Err(protocol(format!("client {id} has no identities")));
            }
            Ok((id, dim, identities, domain))
        });
        let (id, dim, identities, domain) = match checked {
            Ok(h) => h,
            Err(e) => {
                let reply = Message::Error(e.to_string()).into_frame(0, 0);
                let _ = write_frame(&mut &stream, &reply);
                return Err(e);
            }
        };
        ids.insert(id);
        domains.insert(domain);
        peers.push(Peer {
            id,
            addr,
            writer: BufWriter::new(stream.try_clone()?),
        });
        hellos.push((id, dim, identities, stream));
    }
    peers.sort_by_key(|p| p.id);
    hellos.sort_by_key(|h| h.0);

    let dim = hellos[0].1;
    if let Some(h) = hellos.iter().find(|h| h.1 != dim) {
        return Err(protocol(format!(
            "client {} has feature dimension {}, client 0 has {dim}",
            h.0, h.1
        )));
    }
    let padded = hellos.iter().map(|h| h.2).max().unwrap_or(0);
    let mut server = ServerState::new(config, dim, padded)?;
    let base = config.to_kv_text();
    for ((id, _, identities, stream), peer) in hellos.into_iter().zip(peers.iter_mut()) {
        let classes = if config.strategy.decoupled_heads() { identities } else { padded };
        peer.send(&Message::Config(format!("{base}{HEAD_CLASSES_KEY} = {classes}\n")), 0)?;
        spawn_reader(id, stream, peer.addr, opts.max_frame, tx.clone());
    }
    drop(tx);

    let mut epochs = Vec::with_capacity(config.epochs);
    while server.epoch() < config.epochs {
        let epoch = server.epoch();
        let start = Instant::now();
        let selected = server.select()?;
        for peer in peers.iter_mut() {
            let b = server.broadcast();
            peer.send(
                &Message::GlobalParams {
                    selected: selected.contains(&peer.id),
                    embed: b.embed,
                    head: b.head,
                },
                epoch,
            )?;
        }
        let (losses, updates) = barrier(&inbox, epoch, &selected, n, opts)?;
        server.aggregate(&updates)?;
        epochs.push(EpochReport {
            epoch,
            selected,
            losses,
            global_embed: server.global().embed.clone(),
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    for peer in peers.iter_mut() {
        peer.send(&Message::Shutdown, config.epochs)?;
    }
    Ok(ServeReport {
        epochs,
        global: server.global().clone(),
        embedding: server.embedding_net(),
    })
}

/// Runs a federation of `config.clients` remote clients to completion.
///
/// The server holds only global parameters and its random streams. Client
/// selection is drawn before the broadcast so that each client learns
/// whether to upload; the draw comes from its own stream and the results
/// match the in-process simulator bit for bit. On failure every connected
/// client receives an ERROR frame before the error is returned.
pub fn serve(listener: &TcpListener, config: &FederationConfig, opts: &ServerOptions) -> Result<ServeReport> {
    let mut peers = Vec::new();
    let result = run(listener, config, opts, &mut peers);
    if let Err(e) = &result {
        let text = e.to_string();
        for peer in peers.iter_mut() {
            let _ = peer.send(&Message::Error(text.clone()), 0);
        }
    }
    // Also unblocks the reader threads, which hold clones of the sockets.
    for peer in &peers {
        let _ = peer.writer.get_ref().shutdown(Shutdown::Both);
    }
    result
}

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use fedembed::data::{DomainDataset, SyntheticSuite};
use fedembed::federation::{Federation, FederationConfig, NoisePlacement, Strategy};
use fedembed_wire::{
    read_frame, run_client, serve, ClientOptions, Frame, Message, MessageType, ServeReport, ServerOptions,
    WireError, DEFAULT_MAX_FRAME,
};

fn suite() -> SyntheticSuite {
    SyntheticSuite {
        train_domains: 3,
        train_identities: 6,
        train_images: 4,
        test_identities: 5,
        test_images: 3,
        feature_dim: 12,
        signal_dim: 4,
        train_signal_active: 3,
        context_dims: 2,
        context_active: 1,
        nuisance_dims: 2,
        ..SyntheticSuite::default()
    }
}

fn config(strategy: Strategy) -> FederationConfig {
    let mut c = FederationConfig {
        clients: 3,
        epochs: 4,
        local_steps: 2,
        batch_size: 8,
        seed: 11,
        strategy,
        ..FederationConfig::default()
    };
    c.model.embed_hidden = vec![10];
    c.model.embed_dim = 6;
    c.model.head_hidden = 5;
    c
}

fn opts() -> (ServerOptions, ClientOptions) {
    let t = Duration::from_secs(30);
    (
        ServerOptions {
            timeout: t,
            max_frame: DEFAULT_MAX_FRAME,
        },
        ClientOptions {
            timeout: t,
            max_frame: DEFAULT_MAX_FRAME,
        },
    )
}

/// Runs server and clients on loopback; `route` maps the server address to
/// the address clients dial (e.g. through a proxy).
fn run_tcp(
    config: &FederationConfig,
    datasets: Vec<DomainDataset>,
    route: impl Fn(SocketAddr) -> SocketAddr,
) -> ServeReport {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = route(listener.local_addr().unwrap());
    let (sopts, copts) = opts();
    let clients: Vec<_> = datasets
        .into_iter()
        .enumerate()
        .rev()
        .map(|(i, ds)| {
            let copts = copts.clone();
            thread::spawn(move || run_client(addr, i as u16, ds, &copts))
        })
        .collect();
    let report = serve(&listener, config, &sopts).unwrap();
    for c in clients {
        let r = c.join().unwrap().unwrap();
        assert_eq!(r.losses.len(), config.epochs);
    }
    report
}

fn assert_matches_simulation(config: &FederationConfig) {
    let (datasets, _) = suite().generate(3).unwrap();
    let mut fed = Federation::new(config, datasets.clone()).unwrap();
    let report = run_tcp(config, datasets, |a| a);
    assert_eq!(report.epochs.len(), config.epochs);
    for ep in &report.epochs {
        let out = fed.step().unwrap();
        assert_eq!(ep.epoch, out.record.epoch);
        assert_eq!(ep.selected, out.record.selected, "epoch {}", ep.epoch);
        assert_eq!(ep.losses, out.record.losses, "epoch {}", ep.epoch);
        assert_eq!(&ep.global_embed, &out.aggregation.global.embed, "epoch {}", ep.epoch);
    }
    assert_eq!(report.global, fed.server().global().clone());
}

#[test]
fn decoupled_federation_over_tcp_is_bit_identical_to_simulation() {
    let mut c = config(Strategy::FedReid);
    c.fraction = 0.5;
    c.beta = 0.01;
    c.noise = NoisePlacement::Double;
    assert_matches_simulation(&c);
}

#[test]
fn full_model_averaging_over_tcp_is_bit_identical_to_simulation() {
    let mut c = config(Strategy::FedAvg);
    c.beta = 0.001;
    c.noise = NoisePlacement::Single;
    assert_matches_simulation(&c);
}

/// Forwards one connection per accepted socket and records every byte sent
/// by the clients.
fn recording_proxy(target: SocketAddr, connections: usize, log: Arc<Mutex<Vec<Vec<u8>>>>) -> SocketAddr {
    let proxy = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = proxy.local_addr().unwrap();
    thread::spawn(move || {
        for _ in 0..connections {
            let (down, _) = proxy.accept().unwrap();
            let up = TcpStream::connect(target).unwrap();
            let (mut down_r, mut up_w) = (down.try_clone().unwrap(), up.try_clone().unwrap());
            let (mut up_r, mut down_w) = (up, down);
            let log = log.clone();
            thread::spawn(move || {
                let mut captured = Vec::new();
                let mut buf = [0u8; 4096];
                loop {
                    match down_r.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => {
                            captured.extend_from_slice(&buf[..n]);
                            if up_w.write_all(&buf[..n]).is_err() {
                                break;
                            }
                        }
                    }
                }
                let _ = up_w.shutdown(std::net::Shutdown::Write);
                log.lock().unwrap().push(captured);
            });
            thread::spawn(move || {
                let _ = std::io::copy(&mut up_r, &mut down_w);
                let _ = down_w.shutdown(std::net::Shutdown::Write);
            });
        }
    });
    addr
}

#[test]
fn clients_upload_parameters_but_never_samples() {
    let c = config(Strategy::FedReid);
    let (datasets, _) = suite().generate(5).unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let report = run_tcp(&c, datasets.clone(), |server| recording_proxy(server, 3, log.clone()));
    assert_eq!(report.epochs.len(), c.epochs);
    thread::sleep(Duration::from_millis(200));
    let streams = log.lock().unwrap().clone();
    assert_eq!(streams.len(), 3);

    let mut kinds = Vec::new();
    for s in &streams {
        let mut cursor = &s[..];
        while !cursor.is_empty() {
            kinds.push(read_frame(&mut cursor, DEFAULT_MAX_FRAME, "capture").unwrap().kind);
        }
    }
    assert!(kinds
        .iter()
        .all(|k| matches!(k, MessageType::Hello | MessageType::Update | MessageType::EpochDone)));
    assert_eq!(kinds.iter().filter(|k| **k == MessageType::Update).count(), 3 * c.epochs);

    let all: Vec<u8> = streams.concat();
    for ds in &datasets {
        for &v in ds.features().iter() {
            let needle = v.to_le_bytes();
            assert!(
                !all.windows(8).any(|w| w == needle),
                "feature value {v} of domain {} found in client traffic",
                ds.domain_id
            );
        }
    }
}

fn short_server(clients: usize) -> (TcpListener, SocketAddr, FederationConfig, ServerOptions) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let mut c = config(Strategy::FedReid);
    c.clients = clients;
    let opts = ServerOptions {
        timeout: Duration::from_secs(3),
        max_frame: 1 << 20,
    };
    (listener, addr, c, opts)
}

fn hello(id: u16, domain: u32) -> Vec<u8> {
    Message::Hello {
        feature_dim: 12,
        identities: 6,
        domain_id: domain,
    }
    .into_frame(0, id)
    .encode()
}

#[test]
fn client_disconnect_mid_federation_fails_everyone_promptly() {
    let (listener, addr, c, sopts) = short_server(2);
    let (datasets, _) = suite().generate(2).unwrap();
    let ds = datasets[0].clone();
    let real = thread::spawn(move || {
        run_client(
            addr,
            0,
            ds,
            &ClientOptions {
                timeout: Duration::from_secs(10),
                max_frame: DEFAULT_MAX_FRAME,
            },
        )
    });
    let rogue = thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(&hello(1, 1)).unwrap();
        let config = read_frame(&mut s, DEFAULT_MAX_FRAME, "server").unwrap();
        assert_eq!(config.kind, MessageType::Config);
        let params = read_frame(&mut s, DEFAULT_MAX_FRAME, "server").unwrap();
        assert_eq!(params.kind, MessageType::GlobalParams);
        // drop the connection instead of answering
    });
    let start = std::time::Instant::now();
    let err = serve(&listener, &c, &sopts).unwrap_err();
    assert!(matches!(err, WireError::Disconnected { .. }), "{err}");
    assert!(start.elapsed() < Duration::from_secs(3));
    rogue.join().unwrap();
    let client_err = real.join().unwrap().unwrap_err();
    assert!(matches!(client_err, WireError::Remote(_)), "{client_err}");
}

#[test]
fn silent_client_times_out() {
    let (listener, addr, c, mut sopts) = short_server(1);
    sopts.timeout = Duration::from_millis(400);
    let rogue = thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(&hello(0, 0)).unwrap();
        // read CONFIG and GLOBAL_PARAMS, then stay silent until the server gives up
        let mut sink = Vec::new();
        let _ = s.read_to_end(&mut sink);
    });
    let err = serve(&listener, &c, &sopts).unwrap_err();
    assert!(matches!(err, WireError::Timeout(..)), "{err}");
    rogue.join().unwrap();
}

fn serve_against(bytes: Vec<u8>) -> WireError {
    let (listener, addr, c, sopts) = short_server(1);
    let rogue = thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(&bytes).unwrap();
        let mut sink = Vec::new();
        let _ = s.read_to_end(&mut sink);
        sink
    });
    let err = serve(&listener, &c, &sopts).unwrap_err();
    let reply = rogue.join().unwrap();
    // the rogue peer is told why it was dropped
    let frame = Frame::decode(&reply).unwrap();
    assert_eq!(frame.kind, MessageType::Error);
    err
}

#[test]
fn corrupted_checksum_is_rejected() {
    let mut bytes = hello(0, 0);
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    let err = serve_against(bytes);
    assert!(matches!(err, WireError::Format(_)), "{err}");
}

#[test]
fn oversize_length_is_rejected() {
    let mut bytes = (u32::MAX - 3).to_le_bytes().to_vec();
    bytes.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0]);
    let err = serve_against(bytes);
    assert!(matches!(err, WireError::Oversize { .. }), "{err}");
}

#[test]
fn unknown_message_type_is_rejected() {
    let mut frame = Message::Shutdown.into_frame(0, 0);
    frame.payload = vec![];
    let mut bytes = frame.encode();
    bytes[4] = 42;
    // recompute the checksum so only the type is wrong
    let n = bytes.len() - 4;
    let mut w = fedembed::codec::Writer::new();
    w.bytes(&bytes[..n]);
    let bytes = w.finish_with_crc();
    let err = serve_against(bytes);
    assert!(matches!(err, WireError::UnknownType(42)), "{err}");
}

#[test]
fn wrong_first_message_is_a_protocol_error() {
    let err = serve_against(Message::Shutdown.into_frame(0, 0).encode());
    assert!(matches!(err, WireError::Protocol(_)), "{err}");
}

#[test]
fn duplicate_domains_are_rejected() {
    let (listener, addr, c, sopts) = short_server(2);
    let rogues: Vec<_> = (0..2u16)
        .map(|id| {
            thread::spawn(move || {
                let mut s = TcpStream::connect(addr).unwrap();
                s.write_all(&hello(id, 7)).unwrap();
                let mut sink = Vec::new();
                let _ = s.read_to_end(&mut sink);
            })
        })
        .collect();
    let err = serve(&listener, &c, &sopts).unwrap_err();
    assert!(matches!(err, WireError::Protocol(ref m) if m.contains("domain 7")), "{err}");
    for r in rogues {
        r.join().unwrap();
    }
}

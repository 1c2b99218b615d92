mod common;

use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use fedsim_core::data_synth::{generate_federation, ClientDataset};
use fedsim_core::orchestrator::{run_with_clients, ExperimentConfig, LocalSession};
use fedsim_core::strategies::StrategyKind;
use fedsim_core::transport::{
    decode, encode, read_message, run_client, serve, write_message, Payload, WireMessage,
    HEADER_LEN,
};
use fedsim_core::Error;
use proptest::prelude::*;

fn f32_values(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        any::<f32>().prop_filter("finite", |v| v.is_finite()),
        0..max,
    )
    .prop_map(|v| v.into_iter().map(f64::from).collect())
}

fn session() -> impl Strategy<Value = LocalSession> {
    (
        any::<u64>(),
        1usize..10,
        1usize..512,
        0.0f64..1.0,
        0.0f64..1.0,
        0.0f64..2.0,
        10usize..=20,
        10usize..=20,
    )
        .prop_map(|(seed, epochs, batch, lr, momentum, mu, h1, h2)| {
            let config = ExperimentConfig {
                seed,
                local_epochs: epochs,
                sgd: fedsim_core::nn::SgdConfig {
                    lr,
                    momentum,
                    batch_size: batch,
                },
                mlp: fedsim_core::nn::MlpConfig::new(h1, h2).unwrap(),
                ..ExperimentConfig::default()
            };
            let mut s = config.local_session();
            s.train.proximal_mu = mu;
            s
        })
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        any::<u32>().prop_map(|client_id| Payload::Hello { client_id }),
        session().prop_map(Payload::HelloAck),
        f32_values(400).prop_map(|params| Payload::Broadcast { params }),
        (f32_values(400), any::<u64>()).prop_map(|(delta, num_examples)| Payload::Update {
            delta,
            num_examples
        }),
        Just(Payload::Done),
        Just(Payload::Abort),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_decode_roundtrip(round in any::<u32>(), payload in payload()) {
        let msg = WireMessage::new(round, payload);
        let frame = encode(&msg).unwrap();
        let (back, used) = decode(&frame).unwrap();
        prop_assert_eq!(used, frame.len());
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(encode(&back).unwrap(), frame);
    }
}

proptest! {
    #[test]
    fn every_strict_prefix_is_incomplete(round in any::<u32>(), params in f32_values(20)) {
        let frame = encode(&WireMessage::new(round, Payload::Broadcast { params })).unwrap();
        for cut in 0..frame.len() {
            let is_incomplete = matches!(decode(&frame[..cut]), Err(Error::Incomplete { .. }));
            prop_assert!(is_incomplete, "prefix {}", cut);
        }
    }

    #[test]
    fn frames_decode_back_to_back(a in any::<u32>(), b in f32_values(16)) {
        let first = encode(&WireMessage::new(1, Payload::Hello { client_id: a })).unwrap();
        let second = encode(&WireMessage::new(2, Payload::Broadcast { params: b.clone() })).unwrap();
        let mut buf = first.clone();
        buf.extend_from_slice(&second);
        let (m1, n1) = decode(&buf).unwrap();
        let (m2, n2) = decode(&buf[n1..]).unwrap();
        prop_assert_eq!(m1.payload, Payload::Hello { client_id: a });
        prop_assert_eq!(m2.payload, Payload::Broadcast { params: b });
        prop_assert_eq!(n1 + n2, buf.len());
    }
}

#[test]
fn corrupted_magic_and_unknown_kind_are_protocol_errors() {
    let mut frame = encode(&WireMessage::new(4, Payload::Done)).unwrap();
    frame[0] = b'X';
    assert!(matches!(decode(&frame), Err(Error::Protocol(_))));
    let mut frame = encode(&WireMessage::new(4, Payload::Done)).unwrap();
    frame[4] = 42;
    assert!(matches!(decode(&frame), Err(Error::Protocol(_))));
    let mut long = encode(&WireMessage::new(1, Payload::Hello { client_id: 1 })).unwrap();
    long[9..13].copy_from_slice(&100u32.to_le_bytes());
    assert!(matches!(decode(&long), Err(Error::Incomplete { .. })));
    assert_eq!(HEADER_LEN, 13);
}

fn spawn_clients(
    addr: std::net::SocketAddr,
    clients: &[ClientDataset],
) -> Vec<thread::JoinHandle<fedsim_core::Result<fedsim_core::transport::ClientSummary>>> {
    clients
        .iter()
        .cloned()
        .map(|c| {
            thread::spawn(move || {
                let mut stream = TcpStream::connect(addr)?;
                run_client(&mut stream, c.client_id, &c)
            })
        })
        .collect()
}

#[test]
fn loopback_matches_in_process_run() {
    let mut config = common::small_config(StrategyKind::FedAvg, 2, 150, 31);
    config.first_round_participants = 1;
    config.later_round_participants = 2;
    let clients = generate_federation(&config.data).unwrap();
    let local = run_with_clients(&config, &clients).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let handles = spawn_clients(listener.local_addr().unwrap(), &clients);
    let remote = serve(&listener, &config, &clients).unwrap();
    for h in handles {
        let summary = h.join().unwrap().unwrap();
        assert_eq!(summary.final_round, config.rounds);
    }

    let diff = common::max_abs_diff(&remote.final_weights, &local.final_weights);
    assert!(diff < 1e-6, "max weight difference {diff}");
    assert!((remote.final_accuracy() - local.final_accuracy()).abs() <= 0.005);
    for (a, b) in remote.rounds.iter().zip(&local.rounds) {
        assert_eq!(a.participants, b.participants);
    }
}

#[test]
fn fedprox_and_fedadam_sessions_complete() {
    for kind in [StrategyKind::FedProx, StrategyKind::FedAdam] {
        let mut config = common::small_config(kind, 3, 120, 3);
        config.rounds = 3;
        let clients = generate_federation(&config.data).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let handles = spawn_clients(listener.local_addr().unwrap(), &clients);
        let remote = serve(&listener, &config, &clients).unwrap();
        let local = run_with_clients(&config, &clients).unwrap();
        assert!((remote.final_accuracy() - local.final_accuracy()).abs() <= 0.005);
        for h in handles {
            h.join().unwrap().unwrap();
        }
    }
}

/// Scripted client: Hello, then answers the first broadcast by sending
/// `copies` updates after `delay`. Returns what the server sent next.
fn scripted_client(
    addr: std::net::SocketAddr,
    id: u32,
    copies: usize,
    delay: Duration,
    update_round: Option<u32>,
) -> thread::JoinHandle<Option<Payload>> {
    thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        write_message(
            &mut s,
            &WireMessage::new(0, Payload::Hello { client_id: id }),
        )
        .unwrap();
        let Some(WireMessage {
            payload: Payload::HelloAck(session),
            ..
        }) = read_message(&mut s).unwrap()
        else {
            panic!("no HelloAck");
        };
        let broadcast = read_message(&mut s).unwrap().unwrap();
        let Payload::Broadcast { params } = broadcast.payload else {
            return Some(broadcast.payload);
        };
        assert_eq!(params.len(), session.mlp.num_params());
        thread::sleep(delay);
        let update = WireMessage::new(
            update_round.unwrap_or(broadcast.round),
            Payload::Update {
                delta: vec![0.0; params.len()],
                num_examples: 10,
            },
        );
        for _ in 0..copies {
            if write_message(&mut s, &update).is_err() {
                break;
            }
        }
        read_message(&mut s).ok().flatten().map(|m| m.payload)
    })
}

fn two_client_setup() -> (ExperimentConfig, Vec<ClientDataset>, TcpListener) {
    let config = common::small_config(StrategyKind::FedAvg, 2, 50, 2);
    let clients = generate_federation(&config.data).unwrap();
    (config, clients, TcpListener::bind("127.0.0.1:0").unwrap())
}

#[test]
fn duplicate_update_is_rejected() {
    let (config, clients, listener) = two_client_setup();
    let addr = listener.local_addr().unwrap();
    let a = scripted_client(addr, 0, 2, Duration::ZERO, None);
    let b = scripted_client(addr, 1, 1, Duration::from_millis(300), None);
    let err = serve(&listener, &config, &clients).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(a.join().unwrap(), Some(Payload::Abort));
    b.join().unwrap();
}

#[test]
fn update_for_wrong_round_is_rejected() {
    let (config, clients, listener) = two_client_setup();
    let addr = listener.local_addr().unwrap();
    let a = scripted_client(addr, 0, 1, Duration::ZERO, Some(5));
    let b = scripted_client(addr, 1, 1, Duration::from_millis(300), None);
    let err = serve(&listener, &config, &clients).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(a.join().unwrap(), Some(Payload::Abort));
    b.join().unwrap();
}

#[test]
fn disconnect_mid_round_aborts_everyone() {
    let (config, clients, listener) = two_client_setup();
    let addr = listener.local_addr().unwrap();
    let quitter = thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        write_message(
            &mut s,
            &WireMessage::new(0, Payload::Hello { client_id: 0 }),
        )
        .unwrap();
        read_message(&mut s).unwrap();
        read_message(&mut s).unwrap();
    });
    let stayer = scripted_client(addr, 1, 1, Duration::from_millis(300), None);
    let err = serve(&listener, &config, &clients).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err}");
    quitter.join().unwrap();
    assert_eq!(stayer.join().unwrap(), Some(Payload::Abort));
}

#[test]
fn client_rejects_foreign_peer() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        read_message(&mut s).unwrap();
        std::io::Write::write_all(&mut s, b"XLP1\x02\0\0\0\0\0\0\0\0").unwrap();
    });
    let data = generate_federation(&common::small_config(StrategyKind::FedAvg, 1, 10, 1).data)
        .unwrap()
        .remove(0);
    let mut stream = TcpStream::connect(addr).unwrap();
    let err = run_client(&mut stream, 0, &data).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    server.join().unwrap();
}

#[test]
fn client_exits_cleanly_on_done() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        read_message(&mut s).unwrap();
        let ack = WireMessage::new(
            0,
            Payload::HelloAck(ExperimentConfig::default().local_session()),
        );
        write_message(&mut s, &ack).unwrap();
        write_message(&mut s, &WireMessage::new(8, Payload::Done)).unwrap();
    });
    let data = generate_federation(&common::small_config(StrategyKind::FedAvg, 1, 10, 1).data)
        .unwrap()
        .remove(0);
    let mut stream = TcpStream::connect(addr).unwrap();
    let summary = run_client(&mut stream, 0, &data).unwrap();
    assert_eq!(summary.final_round, 8);
    assert!(summary.rounds_trained.is_empty());
    server.join().unwrap();
}

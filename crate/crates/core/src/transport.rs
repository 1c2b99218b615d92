//! Multi-process mode: a length-prefixed binary protocol between one
//! server and its clients over a reliable byte stream.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! "FLP1" | kind: u8 | round: u32 | payload_len: u32 | payload
//! ```
//!
//! Parameter vectors travel as `count: u32` followed by `count` binary32
//! values. Clients keep their data; only weights, deltas and example
//! counts cross the wire.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;

use crate::data_synth::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{LocalTrainSpec, MlpConfig, SgdConfig};
use crate::orchestrator::{
    self, ExperimentConfig, ExperimentResult, LocalSession, RANDOM_BASELINE_ACCURACY,
};
use crate::params::ParamVector;
use crate::strategies::{ClientUpdate, ServerState};

pub const MAGIC: [u8; 4] = *b"FLP1";
pub const HEADER_LEN: usize = 13;
/// Largest payload a reader will allocate for.
pub const MAX_PAYLOAD: usize = 1 << 28;
const SESSION_LEN: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    HelloAck = 2,
    Broadcast = 3,
    Update = 4,
    Done = 5,
    Abort = 6,
}

impl MessageKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => MessageKind::Hello,
            2 => MessageKind::HelloAck,
            3 => MessageKind::Broadcast,
            4 => MessageKind::Update,
            5 => MessageKind::Done,
            6 => MessageKind::Abort,
            other => return Err(Error::Protocol(format!("unknown message kind {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Hello {
        client_id: u32,
    },
    /// Local training settings for the session.
    HelloAck(LocalSession),
    Broadcast {
        params: Vec<f64>,
    },
    Update {
        delta: Vec<f64>,
        num_examples: u64,
    },
    Done,
    Abort,
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Hello { .. } => MessageKind::Hello,
            Payload::HelloAck(_) => MessageKind::HelloAck,
            Payload::Broadcast { .. } => MessageKind::Broadcast,
            Payload::Update { .. } => MessageKind::Update,
            Payload::Done => MessageKind::Done,
            Payload::Abort => MessageKind::Abort,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireMessage {
    pub round: u32,
    pub payload: Payload,
}

impl WireMessage {
    pub fn new(round: u32, payload: Payload) -> Self {
        Self { round, payload }
    }
}

fn put_params(out: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    let count = u32::try_from(values.len())
        .map_err(|_| Error::Encode(format!("{} parameters exceed u32", values.len())))?;
    out.extend_from_slice(&count.to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    match &msg.payload {
        Payload::Hello { client_id } => payload.extend_from_slice(&client_id.to_le_bytes()),
        Payload::HelloAck(s) => {
            let narrow = |v: usize, what: &str| {
                u32::try_from(v).map_err(|_| Error::Encode(format!("{what} {v} exceeds u32")))
            };
            payload.extend_from_slice(&s.seed.to_le_bytes());
            payload.extend_from_slice(&narrow(s.train.epochs, "epochs")?.to_le_bytes());
            payload.extend_from_slice(&narrow(s.sgd.batch_size, "batch size")?.to_le_bytes());
            payload.extend_from_slice(&s.sgd.lr.to_le_bytes());
            payload.extend_from_slice(&s.sgd.momentum.to_le_bytes());
            payload.extend_from_slice(&s.train.proximal_mu.to_le_bytes());
            for h in s.mlp.hidden() {
                payload.extend_from_slice(&narrow(h, "hidden width")?.to_le_bytes());
            }
        }
        Payload::Broadcast { params } => put_params(&mut payload, params)?,
        Payload::Update {
            delta,
            num_examples,
        } => {
            put_params(&mut payload, delta)?;
            payload.extend_from_slice(&num_examples.to_le_bytes());
        }
        Payload::Done | Payload::Abort => {}
    }
    let len = u32::try_from(payload.len())
        .map_err(|_| Error::Encode(format!("payload of {} bytes exceeds u32", payload.len())))?;

    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(msg.payload.kind() as u8);
    frame.extend_from_slice(&msg.round.to_le_bytes());
    frame.extend_from_slice(&len.to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Bounds-checked little-endian reader over a payload.
struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Protocol("payload shorter than its contents".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn params(&mut self) -> Result<Vec<f64>> {
        let count = self.u32()? as usize;
        let bytes = self.take(count.saturating_mul(4))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "{} trailing payload bytes",
                self.buf.len()
            )))
        }
    }
}

struct Header {
    kind: MessageKind,
    round: u32,
    payload_len: usize,
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    let prefix = buf.len().min(MAGIC.len());
    if buf[..prefix] != MAGIC[..prefix] {
        return Err(Error::Protocol(format!("bad magic {:?}", &buf[..prefix])));
    }
    if buf.len() < HEADER_LEN {
        return Err(Error::Incomplete {
            needed: HEADER_LEN - buf.len(),
        });
    }
    let kind = MessageKind::from_byte(buf[4])?;
    let round = u32::from_le_bytes(buf[5..9].try_into().unwrap());
    let payload_len = u32::from_le_bytes(buf[9..13].try_into().unwrap()) as usize;
    Ok(Header {
        kind,
        round,
        payload_len,
    })
}

fn decode_payload(kind: MessageKind, bytes: &[u8]) -> Result<Payload> {
    let mut c = Cursor { buf: bytes };
    let payload = match kind {
        MessageKind::Hello => Payload::Hello {
            client_id: c.u32()?,
        },
        MessageKind::HelloAck => {
            if bytes.len() != SESSION_LEN {
                return Err(Error::Protocol(format!(
                    "HelloAck payload is {} bytes, expected {SESSION_LEN}",
                    bytes.len()
                )));
            }
            let seed = c.u64()?;
            let epochs = c.u32()? as usize;
            let batch_size = c.u32()? as usize;
            let lr = c.f64()?;
            let momentum = c.f64()?;
            let proximal_mu = c.f64()?;
            let mlp = MlpConfig::new(c.u32()? as usize, c.u32()? as usize)
                .map_err(|e| Error::Protocol(e.to_string()))?;
            Payload::HelloAck(LocalSession {
                seed,
                mlp,
                sgd: SgdConfig {
                    lr,
                    momentum,
                    batch_size,
                },
                train: LocalTrainSpec {
                    epochs,
                    proximal_mu,
                },
            })
        }
        MessageKind::Broadcast => Payload::Broadcast {
            params: c.params()?,
        },
        MessageKind::Update => Payload::Update {
            delta: c.params()?,
            num_examples: c.u64()?,
        },
        MessageKind::Done => Payload::Done,
        MessageKind::Abort => Payload::Abort,
    };
    c.finish()?;
    Ok(payload)
}

/// Decodes one frame from the front of `buf`, returning the message and
/// the number of bytes consumed. [`Error::Incomplete`] means more bytes
/// are needed.
pub fn decode(buf: &[u8]) -> Result<(WireMessage, usize)> {
    let header = parse_header(buf)?;
    let total = HEADER_LEN + header.payload_len;
    if buf.len() < total {
        return Err(Error::Incomplete {
            needed: total - buf.len(),
        });
    }
    let payload = decode_payload(header.kind, &buf[HEADER_LEN..total])?;
    Ok((WireMessage::new(header.round, payload), total))
}

pub fn write_message<W: Write>(out: &mut W, msg: &WireMessage) -> Result<()> {
    out.write_all(&encode(msg)?)?;
    out.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` is a clean end of stream between frames.
pub fn read_message<R: Read>(input: &mut R) -> Result<Option<WireMessage>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match input.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Transport("connection closed mid-frame".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
        // fail fast on a foreign peer
        if let Err(e @ Error::Protocol(_)) = parse_header(&header[..filled]) {
            return Err(e);
        }
    }
    let h = parse_header(&header)?;
    if h.payload_len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload of {} bytes too large",
            h.payload_len
        )));
    }
    let mut payload = vec![0u8; h.payload_len];
    input.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Transport("connection closed mid-frame".into()),
        _ => e.into(),
    })?;
    Ok(Some(WireMessage::new(
        h.round,
        decode_payload(h.kind, &payload)?,
    )))
}

/// Event forwarded from a per-connection reader thread.
type Inbound = (u32, Result<Option<WireMessage>>);

fn expect_hello(stream: &mut TcpStream) -> Result<u32> {
    match read_message(stream)? {
        Some(WireMessage {
            payload: Payload::Hello { client_id },
            ..
        }) => Ok(client_id),
        Some(other) => Err(Error::Protocol(format!(
            "expected Hello, got {:?}",
            other.payload.kind()
        ))),
        None => Err(Error::Transport("client closed before Hello".into())),
    }
}

struct Connections {
    streams: BTreeMap<u32, TcpStream>,
}

impl Connections {
    fn send(&mut self, id: u32, msg: &WireMessage) -> Result<()> {
        let stream = self
            .streams
            .get_mut(&id)
            .ok_or_else(|| Error::Transport(format!("client {id} is not connected")))?;
        write_message(stream, msg)
    }

    /// Best effort: peers may already be gone.
    fn broadcast_and_close(&mut self, msg: &WireMessage) {
        for stream in self.streams.values_mut() {
            let _ = write_message(stream, msg);
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

/// Runs a whole experiment as the server. Accepts one connection per
/// client in `clients`, which the server uses only to evaluate the global
/// model on each client's test split. Any client failure aborts the run
/// and every client is sent `Abort`.
pub fn serve(
    listener: &TcpListener,
    config: &ExperimentConfig,
    clients: &[ClientDataset],
) -> Result<ExperimentResult> {
    config.validate(clients.len())?;
    let ids: Vec<u32> = clients.iter().map(|c| c.client_id).collect();

    let mut conns = Connections {
        streams: BTreeMap::new(),
    };
    while conns.streams.len() < ids.len() {
        let (mut stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        let id = match expect_hello(&mut stream) {
            Ok(id) => id,
            Err(e) => {
                conns.broadcast_and_close(&WireMessage::new(0, Payload::Abort));
                return Err(e);
            }
        };
        if !ids.contains(&id) || conns.streams.contains_key(&id) {
            let _ = write_message(&mut stream, &WireMessage::new(0, Payload::Abort));
            conns.broadcast_and_close(&WireMessage::new(0, Payload::Abort));
            return Err(Error::Protocol(format!(
                "unexpected or duplicate client id {id}"
            )));
        }
        conns.streams.insert(id, stream);
    }

    let (tx, rx) = mpsc::channel::<Inbound>();
    let ack = WireMessage::new(0, Payload::HelloAck(config.local_session()));
    for (&id, stream) in conns.streams.iter_mut() {
        write_message(stream, &ack)?;
        let mut reader = stream.try_clone()?;
        let tx = tx.clone();
        thread::spawn(move || loop {
            let event = read_message(&mut reader);
            let stop = !matches!(event, Ok(Some(_)));
            if tx.send((id, event)).is_err() || stop {
                break;
            }
        });
    }
    drop(tx);

    match run_rounds(&mut conns, &rx, config, clients, &ids) {
        Ok(result) => {
            conns.broadcast_and_close(&WireMessage::new(config.rounds, Payload::Done));
            Ok(result)
        }
        Err((round, e)) => {
            conns.broadcast_and_close(&WireMessage::new(round, Payload::Abort));
            Err(e)
        }
    }
}

fn run_rounds(
    conns: &mut Connections,
    rx: &mpsc::Receiver<Inbound>,
    config: &ExperimentConfig,
    clients: &[ClientDataset],
    ids: &[u32],
) -> std::result::Result<ExperimentResult, (u32, Error)> {
    let initial = orchestrator::initial_weights(config);
    let shapes = initial.shapes().to_vec();
    let mut state = ServerState::new(initial, config.strategy.kind);
    let mut rounds = Vec::with_capacity(config.rounds as usize);

    for round in 1..=config.rounds {
        let fail = |e| (round, e);
        let participants =
            orchestrator::participants_for_round(config, round, ids).map_err(fail)?;
        let broadcast = WireMessage::new(
            round,
            Payload::Broadcast {
                params: state.weights.values().to_vec(),
            },
        );
        for &id in &participants {
            conns.send(id, &broadcast).map_err(fail)?;
        }

        let mut updates: BTreeMap<u32, ClientUpdate> = BTreeMap::new();
        while updates.len() < participants.len() {
            let (id, event) = rx
                .recv()
                .map_err(|_| fail(Error::Transport("all client connections closed".into())))?;
            let msg = match event {
                Ok(Some(msg)) => msg,
                Ok(None) => {
                    return Err(fail(Error::Transport(format!("client {id} disconnected"))))
                }
                Err(e) => return Err(fail(e)),
            };
            let Payload::Update {
                delta,
                num_examples,
            } = msg.payload
            else {
                return Err(fail(Error::Protocol(format!(
                    "client {id} sent {:?} during round {round}",
                    msg.payload.kind()
                ))));
            };
            if msg.round != round {
                return Err(fail(Error::Protocol(format!(
                    "client {id} sent an update for round {} during round {round}",
                    msg.round
                ))));
            }
            if !participants.contains(&id) || updates.contains_key(&id) {
                return Err(fail(Error::Protocol(format!(
                    "unexpected or duplicate update from client {id}"
                ))));
            }
            let delta = ParamVector::new(delta, shapes.clone())
                .map_err(|e| fail(Error::Protocol(e.to_string())))?;
            updates.insert(
                id,
                ClientUpdate {
                    client_id: id,
                    delta,
                    num_examples,
                },
            );
        }

        let metrics = orchestrator::finish_round(
            &mut state,
            updates.into_values().collect(),
            clients,
            config,
            round,
        )
        .map_err(fail)?;
        rounds.push(metrics);
    }

    Ok(ExperimentResult {
        strategy: config.strategy.kind,
        dataset_mode: config.data.regime_label(),
        rounds,
        final_weights: state.weights,
        baseline_accuracy: RANDOM_BASELINE_ACCURACY,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSummary {
    pub rounds_trained: Vec<u32>,
    pub final_round: u32,
}

/// Client state machine: Hello, then (Broadcast, Update)* until Done.
/// An Abort from the server is reported as a transport error.
pub fn run_client<S: Read + Write>(
    stream: &mut S,
    client_id: u32,
    data: &ClientDataset,
) -> Result<ClientSummary> {
    write_message(stream, &WireMessage::new(0, Payload::Hello { client_id }))?;
    let session = match read_message(stream)? {
        Some(WireMessage {
            payload: Payload::HelloAck(s),
            ..
        }) => s,
        Some(WireMessage {
            payload: Payload::Abort,
            ..
        }) => return Err(Error::Transport("server refused the session".into())),
        Some(other) => {
            return Err(Error::Protocol(format!(
                "expected HelloAck, got {:?}",
                other.payload.kind()
            )))
        }
        None => return Err(Error::Transport("server closed before HelloAck".into())),
    };

    let shapes = session.mlp.shapes();
    let mut trained = Vec::new();
    loop {
        let msg = read_message(stream)?
            .ok_or_else(|| Error::Transport("server closed the connection".into()))?;
        match msg.payload {
            Payload::Broadcast { params } => {
                if trained.last().is_some_and(|&r| msg.round <= r) {
                    return Err(Error::Protocol(format!(
                        "broadcast for stale round {}",
                        msg.round
                    )));
                }
                let global = ParamVector::new(params, shapes.clone())
                    .map_err(|e| Error::Protocol(e.to_string()))?;
                let update = session.client_update(&global, &data.train, client_id, msg.round)?;
                write_message(
                    stream,
                    &WireMessage::new(
                        msg.round,
                        Payload::Update {
                            delta: update.delta.into_values(),
                            num_examples: update.num_examples,
                        },
                    ),
                )?;
                trained.push(msg.round);
            }
            Payload::Done => {
                return Ok(ClientSummary {
                    rounds_trained: trained,
                    final_round: msg.round,
                })
            }
            Payload::Abort => {
                return Err(Error::Transport(format!(
                    "server aborted during round {}",
                    msg.round
                )))
            }
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected {:?} from server",
                    other.kind()
                )))
            }
        }
    }
}

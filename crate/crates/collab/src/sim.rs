//! A simulated network for exercising a [`Hub`] with several clients.
//! Server-to-client delivery goes through a transport that reorders and
//! duplicates messages; each client puts the stream back together with a
//! [`Reassembler`] and keeps a [`Replica`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use layerloom_core::ir::{IrModel, LayerType};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::event::{EventKind, Payload};
use crate::hub::{Hub, SessionId};
use crate::protocol::{ClientMessage, ServerMessage, ServerMessageType};
use crate::session::{Reassembler, Replica};
use crate::CollabError;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub clients: usize,
    /// Client actions to submit, reverts included.
    pub events: usize,
    pub seed: u64,
    /// Chance that the transport delivers a message twice.
    pub duplicate_rate: f64,
    /// Most messages delivered between two submissions.
    pub max_burst: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { clients: 5, events: 1000, seed: 0, duplicate_rate: 0.1, max_burst: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct ClientReport {
    pub user: String,
    pub version: u64,
    /// Canonical JSON of the client's model.
    pub model_json: String,
    /// Messages the server handed to the transport for this client.
    pub sent: u64,
    /// Messages released in order by the reassembler.
    pub delivered: u64,
    pub duplicates_dropped: u64,
    /// Logged event ids in the order the client applied them.
    pub applied_ids: Vec<u64>,
    pub highlights_seen: u64,
    pub errors: u64,
    pub stale: bool,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub clients: Vec<ClientReport>,
    /// Actions submitted per kind.
    pub submitted: BTreeMap<EventKind, usize>,
    /// Submissions the server turned down, counted from the error
    /// replies the clients received.
    pub rejected: usize,
    pub server_version: u64,
    pub server_json: String,
}

struct Client {
    user: String,
    session: SessionId,
    inbox: Arc<Mutex<Vec<ServerMessage>>>,
    sent: Arc<Mutex<u64>>,
    reassembler: Reassembler,
    replica: Replica,
    applied_ids: Vec<u64>,
    highlights_seen: u64,
    errors: u64,
    counter: usize,
}

impl Client {
    /// Takes one in-flight message at random, possibly leaving a copy.
    fn deliver_one(&mut self, rng: &mut ChaCha8Rng, duplicate_rate: f64) -> Result<bool, CollabError> {
        let message = {
            let mut inbox = self.inbox.lock().unwrap();
            if inbox.is_empty() {
                return Ok(false);
            }
            let i = rng.random_range(0..inbox.len());
            if rng.random_bool(duplicate_rate) {
                inbox[i].clone()
            } else {
                inbox.swap_remove(i)
            }
        };
        for m in self.reassembler.accept(message) {
            match m.kind {
                ServerMessageType::Error => self.errors += 1,
                ServerMessageType::Event if m.payload.get("event_id").is_none() => self.highlights_seen += 1,
                ServerMessageType::Event => {
                    self.replica.receive(&m)?;
                    self.applied_ids.push(m.version);
                }
                _ => {
                    self.replica.receive(&m)?;
                }
            }
        }
        Ok(true)
    }

    fn next_action(&mut self, rng: &mut ChaCha8Rng) -> Option<ClientMessage> {
        let model = self.replica.model()?;
        let version = self.replica.version();
        let layers: Vec<_> = model.layers().collect();
        let any = layers.choose(rng)?;
        self.counter += 1;
        let submit = |payload| Some(ClientMessage::Submit { payload, base_version: version });
        let roll = rng.random_range(0..100);
        if roll < 40 {
            let (key, value) = match any.layer_type {
                LayerType::ReLU => ("negative_slope", json!(rng.random_range(0..10) as f64 / 100.0)),
                LayerType::Dropout => ("ratio", json!(rng.random_range(1..10) as f64 / 10.0)),
                LayerType::InnerProduct | LayerType::Convolution => ("num_output", json!(rng.random_range(1..64))),
                _ if rng.random_bool(0.5) => ("name", json!(format!("{} {}", self.user, self.counter))),
                _ => ("position", json!([rng.random_range(0..800) as f64, rng.random_range(0..800) as f64 / 4.0])),
            };
            return submit(Payload::ParamUpdate { layer_id: any.id.clone(), key: key.into(), value });
        }
        if roll < 65 {
            let id = format!("{}_{}", self.user, self.counter);
            let layer = match rng.random_range(0..3) {
                0 => layerloom_core::ir::IrLayer::new(id, LayerType::ReLU),
                1 => layerloom_core::ir::IrLayer::new(id, LayerType::Dropout),
                _ => layerloom_core::ir::IrLayer::new(id, LayerType::InnerProduct)
                    .with("num_output", rng.random_range(1..32) as f64),
            };
            return submit(Payload::LayerAdd { layer, connections: None });
        }
        if roll < 75 {
            let leaves: Vec<_> = layers
                .iter()
                .filter(|l| l.layer_type != LayerType::Input && model.children(&l.id).is_empty())
                .collect();
            if let Some(leaf) = leaves.choose(rng) {
                return submit(Payload::LayerDelete { layer_id: leaf.id.clone() });
            }
        }
        if roll < 95 || version == 0 {
            return submit(Payload::LayerHighlight { layer_id: any.id.clone(), active: rng.random_bool(0.8) });
        }
        Some(ClientMessage::Revert { to_version: rng.random_range(version.saturating_sub(25)..version) })
    }

    fn report(&self) -> ClientReport {
        ClientReport {
            user: self.user.clone(),
            version: self.replica.version(),
            model_json: self.replica.model().map(IrModel::to_json).unwrap_or_default(),
            sent: *self.sent.lock().unwrap(),
            delivered: self.reassembler.delivered(),
            duplicates_dropped: self.reassembler.duplicates_dropped(),
            applied_ids: self.applied_ids.clone(),
            highlights_seen: self.highlights_seen,
            errors: self.errors,
            stale: self.replica.is_stale(),
        }
    }
}

fn kind_of(message: &ClientMessage) -> Option<EventKind> {
    match message {
        ClientMessage::Submit { payload, .. } => Some(payload.kind()),
        ClientMessage::Revert { .. } => Some(EventKind::Revert),
        _ => None,
    }
}

/// Joins `config.clients` sessions to an existing model, lets them edit
/// concurrently, then drains the transport.
pub fn run(hub: &Hub, model_id: &str, config: &SimConfig) -> Result<SimReport, CollabError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clients = Vec::with_capacity(config.clients);
    for i in 0..config.clients {
        let inbox = Arc::new(Mutex::new(Vec::new()));
        let sent = Arc::new(Mutex::new(0u64));
        let (tx, count) = (inbox.clone(), sent.clone());
        let user = format!("user{i}");
        let session = hub.join(
            model_id,
            &user,
            Box::new(move |m| {
                *count.lock().unwrap() += 1;
                tx.lock().unwrap().push(m);
                true
            }),
        )?;
        clients.push(Client {
            user,
            session,
            inbox,
            sent,
            reassembler: Reassembler::new(),
            replica: Replica::new(),
            applied_ids: Vec::new(),
            highlights_seen: 0,
            errors: 0,
            counter: 0,
        });
    }

    let mut submitted = BTreeMap::new();
    let mut done = 0;
    while done < config.events {
        let c = rng.random_range(0..clients.len());
        if clients[c].replica.is_stale() {
            hub.handle(model_id, clients[c].session, ClientMessage::ReplayRequest { upto_version: None });
        }
        match clients[c].next_action(&mut rng) {
            Some(action) => {
                *submitted.entry(kind_of(&action).expect("edit action")).or_insert(0) += 1;
                hub.handle(model_id, clients[c].session, action);
                done += 1;
            }
            None => {
                clients[c].deliver_one(&mut rng, config.duplicate_rate)?;
            }
        }
        for _ in 0..rng.random_range(0..=config.max_burst) {
            let k = rng.random_range(0..clients.len());
            clients[k].deliver_one(&mut rng, config.duplicate_rate)?;
        }
    }
    // Drain: keep delivering until every transport is empty.
    loop {
        let busy: Vec<usize> = (0..clients.len()).filter(|&i| !clients[i].inbox.lock().unwrap().is_empty()).collect();
        let Some(&k) = busy.choose(&mut rng) else { break };
        clients[k].deliver_one(&mut rng, config.duplicate_rate)?;
    }
    let (model, server_version) = hub.snapshot(model_id)?;
    Ok(SimReport {
        clients: clients.iter().map(Client::report).collect(),
        submitted,
        rejected: clients.iter().map(|c| c.errors as usize).sum(),
        server_version,
        server_json: model.to_json(),
    })
}

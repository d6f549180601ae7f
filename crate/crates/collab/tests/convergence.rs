#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::Utc;
use layerloom_collab::sim::{self, SimConfig, SimReport};
use layerloom_collab::{
    apply, EventDraft, EventKind, Hub, MemoryStore, ModelRecord, ModelStore, Payload, ServerMessage, UpdateEvent,
    WHOLE_MODEL,
};
use layerloom_core::frontends::import;
use layerloom_core::ir::{count_parameters, declared_input_shapes, infer_shapes, IrModel};
use layerloom_core::zoo;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn seed_model() -> IrModel {
    let entry = zoo::get("mnist_cnn").unwrap();
    import(entry.text, entry.framework).unwrap().model
}

fn new_hub(store: Arc<dyn ModelStore>, initial: &IrModel) -> Hub {
    let hub = Hub::new(store);
    let record = ModelRecord { model_id: "m".into(), source: None, created_at: Utc::now() };
    hub.create(record, initial.clone()).unwrap();
    hub
}

fn simulate(seed: u64) -> (Hub, IrModel, SimReport) {
    let initial = seed_model();
    let hub = new_hub(Arc::new(MemoryStore::new()), &initial);
    let report = sim::run(&hub, "m", &SimConfig { seed, ..SimConfig::default() }).unwrap();
    (hub, initial, report)
}

/// State after every version, built by re-applying the log from scratch;
/// a revert copies the state it names.
fn fold_oracle(initial: &IrModel, log: &[UpdateEvent]) -> Vec<IrModel> {
    let mut states = vec![initial.clone()];
    for (i, event) in log.iter().enumerate() {
        assert_eq!(event.event_id, Some(i as u64 + 1));
        let next = match &event.payload {
            Payload::Revert { to_version } => states[*to_version as usize].clone(),
            payload => {
                let mut m = states[i].clone();
                apply(&mut m, payload).unwrap();
                m
            }
        };
        states.push(next);
    }
    states
}

#[test]
fn five_clients_converge_over_a_reordering_duplicating_transport() {
    let start = Instant::now();
    let (hub, _, report) = simulate(1);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");

    let total: usize = report.submitted.values().sum();
    assert_eq!(total, 1000);
    for kind in [
        EventKind::ParamUpdate,
        EventKind::LayerAdd,
        EventKind::LayerDelete,
        EventKind::LayerHighlight,
        EventKind::Revert,
    ] {
        assert!(report.submitted.get(&kind).copied().unwrap_or(0) >= 10, "too few {kind:?}: {:?}", report.submitted);
    }
    let log = hub.log("m").unwrap();
    assert_eq!(log.len() as u64, report.server_version);
    assert!(report.server_version > 500, "a checkpoint should be crossed");

    let expected_ids: Vec<u64> = (1..=report.server_version).collect();
    for c in &report.clients {
        assert!(!c.stale, "{} went stale", c.user);
        assert_eq!(c.version, report.server_version, "{}", c.user);
        assert_eq!(c.model_json, report.server_json, "{} diverged", c.user);
        assert_eq!(c.delivered, c.sent, "{} lost or gained messages", c.user);
        assert_eq!(c.applied_ids, expected_ids, "{} saw events out of order", c.user);
        assert!(c.duplicates_dropped > 0);
        assert!(c.highlights_seen > 0);
    }
}

#[test]
fn rejected_submissions_only_reach_their_author() {
    let (hub, _, report) = simulate(2);
    let highlights = report.submitted[&EventKind::LayerHighlight];
    let logged = hub.log("m").unwrap().len();
    let accepted_highlights = report.clients[0].highlights_seen as usize;
    assert_eq!(logged + accepted_highlights + report.rejected, 1000);
    assert!(accepted_highlights <= highlights);
    for c in &report.clients {
        assert_eq!(c.highlights_seen as usize, accepted_highlights);
    }
}

#[test]
fn replay_matches_the_fold_oracle_at_random_versions() {
    let (hub, initial, report) = simulate(3);
    let states = fold_oracle(&initial, &hub.log("m").unwrap());
    assert_eq!(states.last().unwrap().to_json(), report.server_json);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ks: Vec<u64> = (0..50).map(|_| rng.random_range(0..=report.server_version)).collect();
    ks.extend([0, 499, 500, 501, report.server_version]);
    for k in ks {
        assert_eq!(hub.replay("m", k).unwrap(), states[k as usize], "replay({k})");
    }
}

#[test]
fn revert_lands_on_the_replayed_state() {
    let (hub, initial, report) = simulate(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let (_, version) = hub.snapshot("m").unwrap();
        let k = rng.random_range(0..version);
        let expected = hub.replay("m", k).unwrap();
        let event = hub.revert("m", "auditor", k).unwrap();
        assert_eq!(event.event_id, Some(version + 1));
        assert_eq!(hub.snapshot("m").unwrap(), (expected, version + 1));
    }
    let states = fold_oracle(&initial, &hub.log("m").unwrap());
    assert_eq!(&states[states.len() - 1], &hub.snapshot("m").unwrap().0);
    assert!(hub.log("m").unwrap().len() as u64 == report.server_version + 10);
}

#[test]
fn highlights_never_change_replay() {
    let (hub, initial, _) = simulate(5);
    let log = hub.log("m").unwrap();
    let states = fold_oracle(&initial, &log);

    let noisy = new_hub(Arc::new(MemoryStore::new()), &initial);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for event in &log {
        for _ in 0..rng.random_range(0..3) {
            let current = noisy.snapshot("m").unwrap().0;
            let ids: Vec<String> = current.layers().map(|l| l.id.clone()).collect();
            let layer_id = ids[rng.random_range(0..ids.len())].clone();
            let hl = noisy
                .submit(
                    "m",
                    EventDraft {
                        payload: Payload::LayerHighlight { layer_id, active: true },
                        author: "x".into(),
                        base_version: 0,
                    },
                )
                .unwrap();
            assert_eq!(hl.event_id, None);
        }
        noisy
            .submit(
                "m",
                EventDraft {
                    payload: event.payload.clone(),
                    author: event.author.clone(),
                    base_version: event.base_version,
                },
            )
            .unwrap();
    }
    for (v, state) in states.iter().enumerate() {
        assert_eq!(&noisy.replay("m", v as u64).unwrap(), state, "version {v}");
    }
}

#[test]
fn parameter_count_tracks_every_version() {
    let (hub, initial, _) = simulate(6);
    let states = fold_oracle(&initial, &hub.log("m").unwrap());
    let mut checked = 0;
    for (v, state) in states.iter().enumerate() {
        // Deletes made from a stale view can orphan a layer; those
        // versions have no shapes to count against.
        let Ok(shapes) = infer_shapes(state, &declared_input_shapes(state)) else { continue };
        let count = count_parameters(state, &shapes).unwrap();
        assert_eq!(count, common::param_oracle(state), "version {v}");
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} of {} versions had shapes", states.len());
}

fn recorder() -> (Arc<Mutex<Vec<ServerMessage>>>, layerloom_collab::Outbox) {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let tx = seen.clone();
    (
        seen,
        Box::new(move |m| {
            tx.lock().unwrap().push(m);
            true
        }),
    )
}

#[test]
fn stale_edit_on_a_deleted_layer_is_rejected_to_its_author() {
    let initial = seed_model();
    let hub = new_hub(Arc::new(MemoryStore::new()), &initial);
    let (a_seen, a_box) = recorder();
    let (b_seen, b_box) = recorder();
    let a = hub.join("m", "ana", a_box).unwrap();
    let b = hub.join("m", "bo", b_box).unwrap();
    let target = initial.layers().last().unwrap().id.clone();

    hub.handle(
        "m",
        a,
        serde_json::from_value(json!({"action": "submit", "kind": "layer_delete", "layer_id": target})).unwrap(),
    );
    hub.handle(
        "m",
        b,
        serde_json::from_value(json!({"action": "submit", "kind": "param_update", "layer_id": target, "key": "name", "value": "x", "base_version": 0}))
            .unwrap(),
    );
    let a_types: Vec<String> = a_seen
        .lock()
        .unwrap()
        .iter()
        .map(|m| serde_json::to_value(m).unwrap()["type"].as_str().unwrap().to_string())
        .collect();
    let b_msgs = b_seen.lock().unwrap().clone();
    assert_eq!(a_types, ["snapshot", "event"]);
    assert_eq!(b_msgs.len(), 3);
    assert_eq!(b_msgs[2].payload["code"], "NotFound");
    assert_eq!(b_msgs.iter().map(|m| m.seq).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(hub.snapshot("m").unwrap().1, 1);
}

#[test]
fn disjoint_updates_commute() {
    let initial = seed_model();
    let ids: Vec<String> = initial.layers().map(|l| l.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let i = rng.random_range(0..ids.len());
        let j = (i + rng.random_range(1..ids.len())) % ids.len();
        let first = Payload::ParamUpdate {
            layer_id: ids[i].clone(),
            key: "name".into(),
            value: json!(format!("n{}", rng.random::<u16>())),
        };
        let second = Payload::ParamUpdate {
            layer_id: ids[j].clone(),
            key: "position".into(),
            value: json!([rng.random_range(0..500), 7]),
        };
        let run = |order: [&Payload; 2]| {
            let hub = new_hub(Arc::new(MemoryStore::new()), &initial);
            let versions: Vec<_> = order
                .iter()
                .map(|p| {
                    hub.submit("m", EventDraft { payload: (*p).clone(), author: "u".into(), base_version: 0 })
                        .unwrap()
                        .event_id
                })
                .collect();
            assert_eq!(versions, [Some(1), Some(2)]);
            hub.snapshot("m").unwrap().0.to_json()
        };
        assert_eq!(run([&first, &second]), run([&second, &first]));
    }
}

#[test]
fn comments_are_broadcast_and_orphaned_when_their_layer_goes() {
    let initial = seed_model();
    let hub = new_hub(Arc::new(MemoryStore::new()), &initial);
    let (seen, outbox) = recorder();
    hub.join("m", "ana", outbox).unwrap();
    let leaf = initial.layers().last().unwrap().id.clone();

    let c = hub.add_comment("m", "ana", &leaf, "too wide").unwrap();
    assert_eq!(c.comment_id, 1);
    hub.add_comment("m", "bo", WHOLE_MODEL, "nice").unwrap();
    let err = hub.add_comment("m", "bo", "no_such_layer", "?").unwrap_err();
    assert_eq!(err.code(), "NotFound");
    assert_eq!(
        seen.lock().unwrap().iter().filter(|m| serde_json::to_value(m).unwrap()["type"] == "comment").count(),
        2
    );
    assert_eq!(hub.snapshot("m").unwrap().1, 0, "comments are not versioned");

    hub.submit(
        "m",
        EventDraft { payload: Payload::LayerDelete { layer_id: leaf }, author: "bo".into(), base_version: 0 },
    )
    .unwrap();
    let flags: Vec<bool> = hub.comments("m").unwrap().iter().map(|c| c.orphaned).collect();
    assert_eq!(flags, [true, false]);
}

#[test]
fn history_lists_logged_events_with_authors() {
    let initial = seed_model();
    let hub = new_hub(Arc::new(MemoryStore::new()), &initial);
    assert!(hub.history("m").unwrap().is_empty());
    let first = initial.layers().next().unwrap().id.clone();
    for (author, payload) in [
        ("ana", Payload::ParamUpdate { layer_id: first.clone(), key: "name".into(), value: json!("in") }),
        ("bo", Payload::LayerHighlight { layer_id: first.clone(), active: true }),
        ("cy", Payload::ParamUpdate { layer_id: first.clone(), key: "position".into(), value: json!([1, 2]) }),
        (
            "di",
            Payload::ParamUpdate { layer_id: first.clone(), key: "position".into(), value: serde_json::Value::Null },
        ),
    ] {
        hub.submit("m", EventDraft { payload, author: author.into(), base_version: 0 }).unwrap();
    }
    let h = hub.history("m").unwrap();
    assert_eq!(h.iter().map(|e| e.event_id).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(h.iter().map(|e| e.author.as_str()).collect::<Vec<_>>(), ["ana", "cy", "di"]);
}

#[test]
fn a_fresh_hub_recovers_from_the_store() {
    let initial = seed_model();
    let store: Arc<dyn ModelStore> = Arc::new(MemoryStore::new());
    let hub = new_hub(store.clone(), &initial);
    sim::run(&hub, "m", &SimConfig { events: 900, seed: 8, ..SimConfig::default() }).unwrap();
    hub.add_comment("m", "ana", WHOLE_MODEL, "keep").unwrap();
    let before = hub.snapshot("m").unwrap();
    drop(hub);

    let restarted = Hub::new(store.clone());
    assert_eq!(restarted.snapshot("m").unwrap(), before);
    assert!(!store.load("m").unwrap().unwrap().checkpoints.is_empty());
    let c = restarted.add_comment("m", "bo", WHOLE_MODEL, "next").unwrap();
    assert_eq!(c.comment_id, 2);
}

mod support;

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use support::memory_server;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn connect(addr: std::net::SocketAddr, id: &str, token: &str, user: &str) -> Socket {
    let url = format!("ws://{addr}/ws/models/{id}?token={token}&user={user}");
    connect_async(url).await.expect("connect").0
}

async fn next(ws: &mut Socket) -> Value {
    loop {
        let frame =
            tokio::time::timeout(Duration::from_secs(10), ws.next()).await.expect("timed out").unwrap().unwrap();
        if let Message::Text(t) = frame {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn send(ws: &mut Socket, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

fn client_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

// The server runs on its own runtime; blocking HTTP calls from the
// client side are fine here.
#[test]
fn sessions_share_edits_highlights_comments_and_job_pushes() {
    let s = memory_server();
    let id = s.import("keras", layerloom_core::zoo::get("mnist_cnn").unwrap().text);
    let token = s.post(&format!("/api/models/{id}/share"), &json!({})).json()["token"].as_str().unwrap().to_string();
    client_runtime().block_on(async {
    let mut ana = connect(s.addr, &id, &token, "ana").await;
    let mut bo = connect(s.addr, &id, &token, "bo").await;
    for ws in [&mut ana, &mut bo] {
        let hello = next(ws).await;
        assert_eq!((hello["type"].as_str(), hello["version"].as_u64(), hello["seq"].as_u64()), (Some("snapshot"), Some(0), Some(1)));
        assert!(hello["payload"]["model"]["layers"].is_array());
    }
    let first_layer = s.app.hub.snapshot(&id).unwrap().0.layers().next().unwrap().id.clone();

    send(&mut ana, json!({"action": "submit", "kind": "param_update", "layer_id": first_layer, "key": "name", "value": "pixels", "base_version": 0})).await;
    for ws in [&mut ana, &mut bo] {
        let m = next(ws).await;
        assert_eq!(m["type"], "event");
        assert_eq!(m["version"], 1);
        assert_eq!(m["payload"]["author"], "ana");
        assert_eq!(m["payload"]["event_id"], 1);
    }

    send(&mut bo, json!({"action": "submit", "kind": "layer_highlight", "layer_id": first_layer})).await;
    for ws in [&mut ana, &mut bo] {
        let m = next(ws).await;
        assert_eq!((m["type"].as_str(), m["version"].as_u64()), (Some("event"), Some(1)));
        assert_eq!(m["payload"]["author"], "bo");
        assert!(m["payload"].get("event_id").is_none());
    }

    send(&mut bo, json!({"action": "submit", "kind": "layer_delete", "layer_id": "ghost"})).await;
    let err = next(&mut bo).await;
    assert_eq!((err["type"].as_str(), err["payload"]["code"].as_str()), (Some("error"), Some("NotFound")));

    send(&mut ana, json!({"action": "comment", "anchor": "whole-model", "text": "looks good"})).await;
    for ws in [&mut ana, &mut bo] {
        let m = next(ws).await;
        assert_eq!(m["type"], "comment");
        assert_eq!(m["payload"]["text"], "looks good");
    }

    send(&mut bo, json!({"action": "replay_request", "upto_version": 0})).await;
    let past = next(&mut bo).await;
    assert_eq!((past["type"].as_str(), past["version"].as_u64(), past["payload"]["live"].as_bool()), (Some("snapshot"), Some(0), Some(false)));

    send(&mut ana, json!({"action": "revert", "to_version": 0})).await;
    for ws in [&mut ana, &mut bo] {
        let m = next(ws).await;
        assert_eq!(m["version"], 2);
        assert_eq!(m["payload"]["kind"], "revert");
        assert!(m["payload"]["state"]["layers"].is_array());
    }

    let job_id = s.post(&format!("/api/models/{id}/export"), &json!({"target": "caffe"})).json()["job_id"].as_str().unwrap().to_string();
    for ws in [&mut ana, &mut bo] {
        let m = next(ws).await;
        assert_eq!(m["type"], "job");
        assert_eq!(m["payload"]["job_id"], job_id.as_str());
        assert_eq!(m["payload"]["state"], "done");
    }

    send(&mut ana, json!({"action": "dance"})).await;
    assert_eq!(next(&mut ana).await["payload"]["code"], "InvalidPayload");

    });
    let history = s.get(&format!("/api/models/{id}/history")).json();
    let kinds: Vec<&str> = history.as_array().unwrap().iter().map(|h| h["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["param_update", "revert"]);
}

#[test]
fn a_token_only_opens_its_own_model() {
    let s = memory_server();
    let text = layerloom_core::zoo::get("mnist_cnn").unwrap().text;
    let a = s.import("keras", text);
    let b = s.import("keras", text);
    let token_a = s.post(&format!("/api/models/{a}/share"), &json!({})).json()["token"].as_str().unwrap().to_string();
    client_runtime().block_on(async {
        let denied = connect_async(format!("ws://{}/ws/models/{b}?token={token_a}", s.addr)).await;
        assert!(denied.is_err());
        let denied = connect_async(format!("ws://{}/ws/models/{a}?token=nope", s.addr)).await;
        assert!(denied.is_err());
        let mut ok = connect(s.addr, &a, &token_a, "").await;
        assert_eq!(next(&mut ok).await["type"], "snapshot");
    });
}

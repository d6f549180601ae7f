//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS or FAIL line per criterion; exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use common::{overlapping_pairs, param_oracle, segment_hits_box, Box4};
use futures::{SinkExt, StreamExt};
use layerloom_collab::sim::{self, SimConfig};
use layerloom_collab::{apply, Hub, MemoryStore, ModelRecord, Payload, UpdateEvent};
use layerloom_core::frontends::padding::{conv_output_size, resolve_padding, PaddingError, PaddingMode};
use layerloom_core::frontends::{convert, export, import, ExportOptions, FrontendError, Phase};
use layerloom_core::ir::{total_parameters, Framework, IrModel, LayerType, ShapeMap};
use layerloom_core::layout::{layout_model, Layout, LayoutConfig};
use layerloom_core::{synth, zoo};
use rand::Rng;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

fn fixture(name: &str) -> IrModel {
    let e = zoo::get(name).unwrap();
    import(e.text, e.framework).unwrap().model
}

fn fixtures() -> Vec<(&'static str, IrModel)> {
    zoo::entries().iter().map(|e| (e.name, fixture(e.name))).collect()
}

fn conversion_matrix() -> String {
    let start = Instant::now();
    let mut cells = Vec::new();
    for (name, custom) in [("vgg16", false), ("alexnet", true), ("inception_v3", false), ("resnet50", false)] {
        let opts = if custom { ExportOptions::with_custom_layers() } else { ExportOptions::default() };
        let keras = convert(zoo::get(name).unwrap().text, Framework::Caffe, Framework::Keras, &opts)
            .unwrap_or_else(|e| panic!("{name} caffe->keras: {e}"));
        let back = convert(&keras.text, Framework::Keras, Framework::Caffe, &opts)
            .unwrap_or_else(|e| panic!("{name} keras->caffe: {e}"));
        let n = import(&back.text, Framework::Caffe).unwrap().model.len();
        assert_eq!(n, fixture(name).len(), "{name}: layer count after both directions");
        cells.push(format!("{name} ok"));
    }
    for name in ["googlenet", "squeezenet"] {
        let err = convert(zoo::get(name).unwrap().text, Framework::Caffe, Framework::Keras, &ExportOptions::default())
            .expect_err(name);
        assert_eq!(err.phase, Phase::Export, "{name}");
        let FrontendError::UnsupportedLayer { layer_type, .. } = err.error else { panic!("{name}: {err}") };
        assert!(
            layer_type == LayerType::LRN || !layer_type.spec().available_in(Framework::Keras),
            "{name}: {layer_type}"
        );
        cells.push(format!("{name} UnsupportedLayer({layer_type})"));
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    format!("{}; {:.0} ms", cells.join(", "), elapsed.as_secs_f64() * 1e3)
}

fn round_trip() -> String {
    let mut checked = 0;
    for e in zoo::entries() {
        let m = fixture(e.name);
        let text = export(&m, e.framework, &ExportOptions::default()).unwrap();
        common::assert_isomorphic(&m, &import(&text, e.framework).unwrap().model, e.name);
        checked += 1;
    }
    for framework in [Framework::Caffe, Framework::Keras] {
        for seed in 0..200 {
            let m = synth::random_model(&mut synth::rng(seed), framework, 60);
            assert!(m.len() <= 60);
            let text = export(&m, framework, &ExportOptions::default()).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            let back = import(&text, framework).unwrap_or_else(|e| panic!("seed {seed}: {e}")).model;
            common::assert_isomorphic(&m, &back, &format!("{framework} seed {seed}"));
            checked += 1;
        }
    }
    format!("{checked} models isomorphic after export and import")
}

fn parameter_count() -> String {
    let vgg = fixture("vgg16");
    assert_eq!(param_oracle(&vgg), 138_357_544, "oracle");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vgg16.prototxt");
    std::fs::write(&path, zoo::get("vgg16").unwrap().text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_layerloom"))
        .args(["params", "--in", path.to_str().unwrap(), "--input-shape", "3,224,224"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(printed.trim(), "138357544");
    let mut rng = synth::rng(77);
    for i in 0..100 {
        let framework = if i % 2 == 0 { Framework::Caffe } else { Framework::Keras };
        let m = synth::random_model(&mut rng, framework, 60);
        assert_eq!(total_parameters(&m, &ShapeMap::new()).unwrap(), param_oracle(&m), "random model {i}");
    }
    format!("cli printed {}; 100 random models equal the oracle", printed.trim())
}

fn padding() -> String {
    let (mut same, mut asymmetric) = (0, 0);
    for input in 1..=64i64 {
        for k in 1..=input {
            for s in 1..=8i64 {
                match resolve_padding(&PaddingMode::Same, &[input as usize], &[k], &[s]) {
                    Ok(p) => {
                        let want = (input + s - 1) / s;
                        assert_eq!(conv_output_size(input, k, s, p[0]), Some(want), "in {input} k {k} s {s}");
                        same += 1;
                    }
                    Err(PaddingError::AsymmetricPadding { .. }) => asymmetric += 1,
                    Err(e) => panic!("in {input} k {k} s {s}: {e}"),
                }
                assert_eq!(resolve_padding(&PaddingMode::Valid, &[input as usize], &[k], &[s]), Ok(vec![0]));
            }
        }
    }
    format!("{same} same-padded cases give ceil(in/s), {asymmetric} need asymmetric padding")
}

fn boxes(layout: &Layout, c: &LayoutConfig) -> Vec<(String, Box4)> {
    layout.positions.iter().map(|(id, &(x, y))| (id.clone(), (x, y, x + c.layer_width, y + c.layer_height))).collect()
}

fn check_placement(model: &IrModel, layout: &Layout, c: &LayoutConfig, context: &str) {
    assert_eq!(layout.positions.len(), model.len(), "{context}");
    assert!(overlapping_pairs(&boxes(layout, c)).is_empty(), "{context}: overlap");
    for conn in model.connections() {
        assert!(
            layout.positions[&conn.to].1 > layout.positions[&conn.from].1,
            "{context}: {} -> {}",
            conn.from,
            conn.to
        );
    }
    let mut sole: HashMap<&str, f64> = HashMap::new();
    for l in model.layers() {
        if let [p] = model.parents(&l.id)[..] {
            let row = layout.positions[&l.id].1;
            assert_eq!(*sole.entry(p).or_insert(row), row, "{context}: children of {p}");
        }
    }
}

fn best_time(m: &IrModel, c: &LayoutConfig) -> Duration {
    (0..5)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(layout_model(m, c));
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn layout_invariants() -> String {
    let c = LayoutConfig::default();
    for (name, m) in fixtures() {
        let layout = layout_model(&m, &c);
        check_placement(&m, &layout, &c, name);
        assert_eq!(layout.to_json(), layout_model(&m, &c).to_json(), "{name}");
    }
    let mut rng = synth::rng(42);
    for i in 0..500 {
        let n = rng.random_range(1..=500);
        let m = synth::random_dag(&mut rng, n);
        let layout = layout_model(&m, &c);
        check_placement(&m, &layout, &c, &format!("dag {i}"));
        assert_eq!(layout.to_json(), layout_model(&m, &c).to_json(), "dag {i}");
    }
    let (t1, t2) = (best_time(&synth::chain(1000), &c), best_time(&synth::chain(2000), &c));
    assert!(t1 < Duration::from_secs(1) && t2 < Duration::from_secs(1), "{t1:?} {t2:?}");
    let ratio = t2.as_secs_f64() / t1.as_secs_f64();
    assert!(ratio <= 4.0, "2000/1000 chain ratio {ratio:.2}");
    format!("fixtures and 500 DAGs clean; chain 1000 {t1:?}, 2000 {t2:?}, ratio {ratio:.2}")
}

fn routing() -> String {
    let c = LayoutConfig::default();
    let mut segments = 0;
    for (name, m) in fixtures() {
        let layout = layout_model(&m, &c);
        assert_eq!(layout.paths.len(), m.connections().len(), "{name}");
        let rects = boxes(&layout, &c);
        for path in &layout.paths {
            for w in path.points.windows(2) {
                segments += 1;
                for (id, r) in &rects {
                    if *id != path.from && *id != path.to {
                        assert!(!segment_hits_box(w[0], w[1], *r), "{name}: {}->{} crosses {id}", path.from, path.to);
                    }
                }
            }
        }
    }
    format!("{segments} segments across {} fixtures, none crossing", zoo::entries().len())
}

fn fold_oracle(initial: &IrModel, log: &[UpdateEvent]) -> Vec<IrModel> {
    let mut states = vec![initial.clone()];
    for (i, event) in log.iter().enumerate() {
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

fn convergence() -> String {
    let start = Instant::now();
    let initial = fixture("mnist_cnn");
    let hub = Hub::new(Arc::new(MemoryStore::new()));
    hub.create(ModelRecord { model_id: "m".into(), source: None, created_at: Utc::now() }, initial.clone()).unwrap();
    let report = sim::run(&hub, "m", &SimConfig { seed: 2024, ..SimConfig::default() }).unwrap();
    assert_eq!(report.clients.len(), 5);
    assert_eq!(report.submitted.values().sum::<usize>(), 1000);
    assert_eq!(report.submitted.len(), 5, "every event kind plus reverts: {:?}", report.submitted);
    for c in &report.clients {
        assert!(!c.stale, "{} went stale", c.user);
        assert_eq!(c.version, report.server_version, "{}", c.user);
        assert_eq!(c.model_json, report.server_json, "{} diverged", c.user);
    }
    let log = hub.log("m").unwrap();
    let states = fold_oracle(&initial, &log);
    let mut rng = synth::rng(5);
    for _ in 0..50 {
        let k = rng.random_range(0..=report.server_version);
        assert_eq!(hub.replay("m", k).unwrap(), states[k as usize], "replay({k})");
    }
    let reverts: Vec<u64> = (0..5).map(|_| rng.random_range(0..=report.server_version)).collect();
    for &k in &reverts {
        let wanted = hub.replay("m", k).unwrap();
        hub.revert("m", "auditor", k).unwrap();
        assert_eq!(hub.snapshot("m").unwrap().0, wanted, "revert({k})");
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    format!(
        "5 clients identical at version {}, {} duplicates dropped; 50 replays and {} reverts match; {:.1} s",
        report.server_version,
        report.clients.iter().map(|c| c.duplicates_dropped).sum::<u64>(),
        reverts.len(),
        elapsed.as_secs_f64()
    )
}

/// A `layerloom serve` process on an ephemeral port.
struct Served {
    child: Child,
    base: String,
}

impl Served {
    fn start(store: &std::path::Path) -> Served {
        let mut child = Command::new(env!("CARGO_BIN_EXE_layerloom"))
            .args(["serve", "--bind", "127.0.0.1:0", "--workers", "2", "--store", store.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().rsplit(' ').next().unwrap().to_string();
        assert!(base.starts_with("http://"), "unexpected banner {line:?}");
        Served { child, base }
    }

    fn get(&self, path: &str) -> Value {
        agent().get(format!("{}{path}", self.base)).call().unwrap().body_mut().read_json().unwrap()
    }

    fn post(&self, path: &str, body: &Value) -> Value {
        agent().post(format!("{}{path}", self.base)).send_json(body).unwrap().body_mut().read_json().unwrap()
    }

    fn import(&self, format: &str, text: &str) -> String {
        let r = self.post("/api/models", &json!({ "format": format, "source": { "text": text } }));
        r["model_id"].as_str().unwrap_or_else(|| panic!("import failed: {r}")).to_string()
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn async_export() -> String {
    let dir = tempfile::tempdir().unwrap();
    let server = Served::start(dir.path());
    let opts = ExportOptions::default();
    let small = server.import("caffe", &export(&synth::chain(10), Framework::Caffe, &opts).unwrap());
    let large = server.import("caffe", &export(&synth::chain(1000), Framework::Caffe, &opts).unwrap());
    let (mut submit, mut complete) = (HashMap::new(), HashMap::new());
    for round in 0..25 {
        let order = if round % 2 == 0 { [&small, &large] } else { [&large, &small] };
        for id in order {
            let t = Instant::now();
            let job = server.post(&format!("/api/models/{id}/export"), &json!({ "target": "keras" }));
            let latency = t.elapsed().as_secs_f64();
            let job_id = job["job_id"].as_str().unwrap_or_else(|| panic!("{job}")).to_string();
            let deadline = Instant::now() + Duration::from_secs(30);
            let done = loop {
                let j = server.get(&format!("/api/jobs/{job_id}"));
                if j["state"] == "done" {
                    break j;
                }
                assert_ne!(j["state"], "failed", "{j}");
                assert!(Instant::now() < deadline, "job stuck: {j}");
                std::thread::sleep(Duration::from_millis(2));
            };
            // The first round warms connections and caches.
            if round > 0 {
                let at = |k: &str| done[k].as_str().unwrap().parse::<DateTime<Utc>>().unwrap();
                let took = (at("finished_at") - at("created_at")).num_microseconds().unwrap() as f64 / 1e6;
                submit.entry(id.clone()).or_insert_with(Vec::new).push(latency);
                complete.entry(id.clone()).or_insert_with(Vec::new).push(took);
            }
        }
    }
    let s = |id: &String| median(submit[id].clone());
    let c = |id: &String| median(complete[id].clone());
    let submit_ratio = s(&large) / s(&small);
    let complete_ratio = c(&large) / c(&small);
    let msg = format!(
        "submit {:.2} ms vs {:.2} ms (x{submit_ratio:.2}); completion {:.2} ms vs {:.2} ms (x{complete_ratio:.1})",
        s(&large) * 1e3,
        s(&small) * 1e3,
        c(&large) * 1e3,
        c(&small) * 1e3
    );
    assert!(submit_ratio <= 2.0, "{msg}");
    assert!(complete_ratio >= 5.0, "{msg}");
    msg
}

fn store_recovery() -> String {
    let dir = tempfile::tempdir().unwrap();
    let server = Served::start(dir.path());
    let id = server.import("keras", zoo::get("mnist_cnn").unwrap().text);
    let token = server.post(&format!("/api/models/{id}/share"), &json!({}))["token"].as_str().unwrap().to_string();
    let layers: Vec<String> = fixture("mnist_cnn").layers().map(|l| l.id.clone()).collect();
    let ws_url = format!("{}/ws/models/{id}?token={token}&user=ana", server.base.replacen("http", "ws", 1));

    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let acked = runtime.block_on(async {
        let (mut ws, _) = tokio_tungstenite::connect_async(ws_url).await.unwrap();
        let mut acked = 0;
        let mut rng = synth::rng(9);
        for i in 0..620u64 {
            let msg = match i % 31 {
                30 => json!({ "action": "revert", "to_version": rng.random_range(0..=acked) }),
                _ => json!({
                    "action": "submit", "kind": "param_update", "base_version": acked,
                    "layer_id": layers[rng.random_range(0..layers.len())], "key": "name", "value": format!("v{i}"),
                }),
            };
            ws.send(Message::Text(msg.to_string().into())).await.unwrap();
            loop {
                let frame = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
                let Message::Text(text) = frame else { continue };
                let v: Value = serde_json::from_str(&text).unwrap();
                if v["type"] == "event" {
                    acked = v["version"].as_u64().unwrap();
                    break;
                }
                assert_ne!(v["type"], "error", "{v}");
            }
        }
        acked
    });
    let before = server.get(&format!("/api/models/{id}"));
    assert_eq!(before["version"], acked);
    drop(server);

    let restarted = Served::start(dir.path());
    let after = restarted.get(&format!("/api/models/{id}"));
    assert_eq!(after["version"], acked, "version after restart");
    assert_eq!(after["model"], before["model"], "model after restart");
    assert_eq!(restarted.get(&format!("/api/models/{id}/history")).as_array().unwrap().len() as u64, acked);
    let shared = restarted.get(&format!("/s/{token}"));
    assert_eq!(shared["model_id"], id.as_str());
    format!("killed at acknowledged version {acked}; restart reproduces it and the share token")
}

fn main() {
    type Check = fn() -> String;
    let criteria: [(&str, Check); 9] = [
        ("conversion matrix", conversion_matrix),
        ("round trip", round_trip),
        ("parameter count", parameter_count),
        ("padding", padding),
        ("layout invariants", layout_invariants),
        ("routing", routing),
        ("collaboration convergence", convergence),
        ("async export", async_export),
        ("store recovery", store_recovery),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS {}. {name}: {detail}", n + 1),
            Err(e) => {
                failed += 1;
                let why = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {}. {name}: {why}", n + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

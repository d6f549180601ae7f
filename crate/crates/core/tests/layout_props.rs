mod common;

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use common::{overlapping_pairs, segment_hits_box, Box4};
use layerloom_core::frontends::import;
use layerloom_core::ir::IrModel;
use layerloom_core::layout::{layout_model, Layout, LayoutConfig};
use layerloom_core::{synth, zoo};
use rand::Rng;

fn boxes(layout: &Layout, c: &LayoutConfig) -> Vec<(String, Box4)> {
    layout.positions.iter().map(|(id, &(x, y))| (id.clone(), (x, y, x + c.layer_width, y + c.layer_height))).collect()
}

/// Checks every placement invariant on an acyclic model.
fn check_placement(model: &IrModel, layout: &Layout, c: &LayoutConfig, context: &str) {
    assert_eq!(layout.positions.len(), model.len(), "{context}");
    assert_eq!(overlapping_pairs(&boxes(layout, c)), Vec::<(String, String)>::new(), "{context}");
    for conn in model.connections() {
        assert!(
            layout.positions[&conn.to].1 > layout.positions[&conn.from].1,
            "{context}: {} -> {}",
            conn.from,
            conn.to
        );
    }
    let mut sole_children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for l in model.layers() {
        if let [p] = model.parents(&l.id)[..] {
            sole_children.entry(p).or_default().push(&l.id);
        }
    }
    for (p, kids) in sole_children {
        let rows: Vec<f64> = kids.iter().map(|k| layout.positions[*k].1).collect();
        assert!(rows.windows(2).all(|w| w[0] == w[1]), "{context}: children of {p} at rows {rows:?}");
    }
}

fn check_routing(model: &IrModel, layout: &Layout, c: &LayoutConfig, context: &str) {
    let rects: HashMap<&str, Box4> =
        boxes(layout, c).into_iter().map(|(id, b)| (model.layer(&id).unwrap().id.as_str(), b)).collect();
    assert_eq!(layout.paths.len(), model.connections().len(), "{context}");
    for path in &layout.paths {
        assert!(path.points.len() >= 2);
        for w in path.points.windows(2) {
            for (id, r) in &rects {
                if *id == path.from || *id == path.to {
                    continue;
                }
                assert!(!segment_hits_box(w[0], w[1], *r), "{context}: {}->{} crosses {id}", path.from, path.to);
            }
        }
    }
}

fn fixtures() -> Vec<(&'static str, IrModel)> {
    zoo::entries().iter().map(|e| (e.name, import(e.text, e.framework).unwrap().model)).collect()
}

#[test]
fn fixtures_satisfy_placement_and_routing() {
    let c = LayoutConfig::default();
    for (name, m) in fixtures() {
        let layout = layout_model(&m, &c);
        check_placement(&m, &layout, &c, name);
        check_routing(&m, &layout, &c, name);
        assert_eq!(layout.to_json(), layout_model(&m, &c).to_json(), "{name}");
    }
}

#[test]
fn random_dags_satisfy_placement() {
    let c = LayoutConfig::default();
    let mut rng = synth::rng(42);
    for i in 0..500 {
        let n = rng.random_range(1..=500);
        let m = synth::random_dag(&mut rng, n);
        let layout = layout_model(&m, &c);
        check_placement(&m, &layout, &c, &format!("dag {i}"));
        if i % 10 == 0 {
            check_routing(&m, &layout, &c, &format!("dag {i}"));
            assert_eq!(layout.to_json(), layout_model(&m, &c).to_json());
        }
    }
}

#[test]
fn other_configs_still_route_cleanly() {
    let c = LayoutConfig { layer_width: 90.0, layer_height: 30.0, hgap: 25.0, vgap: 17.0, overlap_step: 13.0 };
    let mut rng = synth::rng(9);
    for i in 0..40 {
        let n = rng.random_range(2..=120);
        let m = synth::random_dag(&mut rng, n);
        let layout = layout_model(&m, &c);
        check_placement(&m, &layout, &c, &format!("dag {i}"));
        check_routing(&m, &layout, &c, &format!("dag {i}"));
    }
}

#[test]
fn cyclic_model_lays_out_with_margin_back_edge() {
    let m = IrModel::from_json(
        r#"{"format_version":1,"name":"loop","layers":[
            {"id":"a","type":"Input","params":{"shape":[3,8,8]}},
            {"id":"b","type":"Concat","params":{}},
            {"id":"c","type":"ReLU","params":{}}],
          "connections":[["a","b"],["b","c"],["c","b"]]}"#,
    )
    .unwrap();
    let c = LayoutConfig::default();
    let layout = layout_model(&m, &c);
    let back = layout.paths.iter().find(|p| p.from == "c").unwrap();
    let min_x = layout.positions.values().map(|p| p.0).fold(f64::INFINITY, f64::min);
    assert!(back.points.iter().any(|p| p.0 < min_x));
    check_routing(&m, &layout, &c, "loop");
}

fn best_time(m: &IrModel) -> Duration {
    let c = LayoutConfig::default();
    (0..5)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(layout_model(m, &c));
            t.elapsed()
        })
        .min()
        .unwrap()
}

#[test]
fn layout_time_grows_linearly() {
    let (small, large) = (synth::chain(1000), synth::chain(2000));
    let (t1, t2) = (best_time(&small), best_time(&large));
    assert!(t1 < Duration::from_secs(1) && t2 < Duration::from_secs(1), "{t1:?} {t2:?}");
    assert!(t2.as_secs_f64() <= 4.0 * t1.as_secs_f64(), "{t1:?} {t2:?}");
}

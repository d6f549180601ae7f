use std::io::Write;
use std::process::{Command, Output, Stdio};

use layerloom_core::frontends::import;
use layerloom_core::ir::Framework;
use layerloom_core::zoo;
use serde_json::Value;

fn run(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_layerloom"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture_file(dir: &tempfile::TempDir, name: &str) -> String {
    let e = zoo::get(name).unwrap();
    let path = dir.path().join(e.file_name);
    std::fs::write(&path, e.text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn vgg16_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let vgg = fixture_file(&dir, "vgg16");
    let o = run(&["params", "--in", &vgg, "--input-shape", "3,224,224"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "138357544");

    let o = run(&["--json", "params", "--in", &vgg], None);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["parameters"], 138357544u64);
}

#[test]
fn a_different_input_shape_changes_the_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let vgg = fixture_file(&dir, "vgg16");
    let o = run(&["params", "--in", &vgg, "--input-shape", "data=3,32,32"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let n: u64 = stdout(&o).trim().parse().unwrap();
    // fc6 sees 512x1x1 instead of 512x7x7.
    assert_eq!(138_357_544 - n, 512 * 48 * 4096);
}

#[test]
fn params_without_any_input_shape_fails_with_missing_shape() {
    let model = r#"{"format_version":1,"name":"m","layers":[
        {"id":"c","type":"Convolution","params":{"num_output":4,"kernel":[3,3]}}],"connections":[]}"#;
    let o = run(&["--json", "params"], Some(model));
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stderr(&o)).unwrap();
    assert_eq!(v["error"]["code"], "MissingShape");

    let o = run(&["params", "--input-shape", "2,5,5"], Some(model));
    assert_eq!(stdout(&o).trim(), (4 * 2 * 9 + 4).to_string());
}

#[test]
fn convert_reads_stdin_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vgg.json");
    let o = run(
        &["convert", "--from", "caffe", "--to", "keras", "--out", out.to_str().unwrap()],
        Some(zoo::get("vgg16").unwrap().text),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let back = import(&text, Framework::Keras).unwrap().model;
    assert_eq!(back.len(), import(zoo::get("vgg16").unwrap().text, Framework::Caffe).unwrap().model.len());
}

#[test]
fn convert_failure_names_the_phase_and_layer() {
    let o = run(&["--json", "convert", "--from", "caffe", "--to", "keras"], Some(zoo::get("googlenet").unwrap().text));
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&stderr(&o)).unwrap();
    assert_eq!(v["error"]["code"], "UnsupportedLayer");
    assert_eq!(v["error"]["phase"], "export");
    assert!(v["error"]["layer_id"].is_string());

    let o = run(
        &["convert", "--from", "caffe", "--to", "keras", "--enable-custom-layers"],
        Some(zoo::get("alexnet").unwrap().text),
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn syntax_errors_carry_a_span() {
    let o = run(&["--json", "validate", "--from", "caffe"], Some("layer { name: \"x\" "));
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&stderr(&o)).unwrap();
    let expected = import("layer { name: \"x\" ", Framework::Caffe).unwrap_err();
    assert_eq!(v["error"]["code"], expected.code());
    assert!(v["error"]["span"]["line"].is_number());
}

#[test]
fn validate_guesses_the_format() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["vgg16", "mnist_cnn"] {
        let path = fixture_file(&dir, name);
        let o = run(&["--json", "validate", "--in", &path], None);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["ok"], true, "{name}");
    }
    let ir = import(zoo::get("mnist_cnn").unwrap().text, Framework::Keras).unwrap().model.to_json();
    let o = run(&["validate"], Some(&ir));
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn validate_reports_errors_with_exit_one() {
    let model = r#"{"format_version":1,"name":"m","layers":[
        {"id":"a","type":"Input","params":{"shape":[3,8,8]}},
        {"id":"b","type":"Concat","params":{}}],"connections":[["a","b"],["b","a"]]}"#;
    let o = run(&["--json", "validate", "--from", "ir"], Some(model));
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ok"], false);
    assert!(!v["diagnostics"].as_array().unwrap().is_empty());
}

#[test]
fn layout_writes_svg_and_json() {
    let text = zoo::get("resnet50").unwrap().text;
    let o = run(&["layout", "--from", "caffe"], Some(text));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("<svg"));

    let o = run(&["layout", "--from", "caffe", "--format", "json"], Some(text));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let model = import(text, Framework::Caffe).unwrap().model;
    assert_eq!(v["positions"].as_object().unwrap().len(), model.len());
    assert_eq!(v["paths"].as_array().unwrap().len(), model.connections().len());
}

#[test]
fn zoo_lists_and_fetches() {
    let o = run(&["--json", "zoo", "list"], None);
    let list: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(list.as_array().unwrap().len(), zoo::entries().len());
    let o = run(&["zoo", "fetch", "mnist_cnn"], None);
    assert_eq!(stdout(&o), zoo::get("mnist_cnn").unwrap().text);
    let o = run(&["zoo", "fetch", "lenet9000"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["convert", "--from", "torch", "--to", "keras"], None).status.code(), Some(2));
    assert_eq!(run(&["params", "--input-shape", "3,x"], Some("{}")).status.code(), Some(2));
    assert_eq!(run(&[], None).status.code(), Some(2));
}

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::time::{Duration, Instant};

use layerloom_service::{router, App, ServiceConfig};
use serde_json::Value;

pub struct Server {
    pub base: String,
    pub addr: SocketAddr,
    pub app: Arc<App>,
    _runtime: tokio::runtime::Runtime,
}

pub fn start(config: ServiceConfig) -> Server {
    let app = App::new(config).unwrap();
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let service = router(app.clone());
    runtime.spawn(async move { axum::serve(listener, service).await.unwrap() });
    Server { base: format!("http://{addr}"), addr, app, _runtime: runtime }
}

pub fn memory_server() -> Server {
    start(ServiceConfig { workers: 2, ..ServiceConfig::default() })
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text))
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

fn reply(mut r: ureq::http::Response<ureq::Body>) -> Reply {
    let headers = r.headers().iter().map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string())).collect();
    Reply {
        status: r.status().as_u16(),
        headers,
        text: r.body_mut().with_config().limit(64 << 20).read_to_string().unwrap(),
    }
}

impl Server {
    pub fn get(&self, path: &str) -> Reply {
        reply(agent().get(format!("{}{path}", self.base)).call().unwrap())
    }

    pub fn post(&self, path: &str, body: &Value) -> Reply {
        reply(
            agent()
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .send(serde_json::to_string(body).unwrap())
                .unwrap(),
        )
    }

    pub fn import(&self, format: &str, text: &str) -> String {
        let r = self.post("/api/models", &serde_json::json!({ "format": format, "source": { "text": text } }));
        assert_eq!(r.status, 200, "{}", r.text);
        r.json()["model_id"].as_str().unwrap().to_string()
    }

    /// Polls a job until it leaves pending/running.
    pub fn wait_job(&self, job_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            let job = self.get(&format!("/api/jobs/{job_id}")).json();
            if job["state"] == "done" || job["state"] == "failed" {
                return job;
            }
            assert!(Instant::now() < deadline, "job {job_id} stuck: {job}");
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

/// Serves `body` to a single request on a fresh port.
pub fn serve_bytes_once(body: String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut buf = [0u8; 4096];
        let _ = s.read(&mut buf);
        let head = format!("HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n", body.len());
        s.write_all(head.as_bytes()).unwrap();
        s.write_all(body.as_bytes()).unwrap();
    });
    format!("http://{addr}/vgg16.prototxt")
}

use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("only http and https URLs can be imported: {0}")]
    BadUrl(String),
    #[error("the document is larger than the {0}-byte limit")]
    TooLarge(u64),
    #[error("could not fetch {url}: {reason}")]
    Unreachable { url: String, reason: String },
}

/// Downloads a model source with a plain GET, refusing bodies over
/// `limit` bytes.
pub fn fetch_text(url: &str, limit: u64, timeout: Duration) -> Result<String, FetchError> {
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Err(FetchError::BadUrl(url.to_string()));
    }
    let agent: ureq::Agent =
        ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(true).build().into();
    let unreachable = |e: ureq::Error| FetchError::Unreachable { url: url.to_string(), reason: e.to_string() };
    let mut response = agent.get(url).call().map_err(unreachable)?;
    response.body_mut().with_config().limit(limit).read_to_string().map_err(|e| match e {
        ureq::Error::BodyExceedsLimit(_) => FetchError::TooLarge(limit),
        other => unreachable(other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn serve_once(body: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = [0u8; 2048];
            let _ = s.read(&mut buf);
            let reply = format!("HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}", body.len());
            s.write_all(reply.as_bytes()).unwrap();
        });
        format!("http://{addr}/model.prototxt")
    }

    #[test]
    fn fetches_within_limit() {
        let url = serve_once("name: \"x\"");
        assert_eq!(fetch_text(&url, 100, Duration::from_secs(5)).unwrap(), "name: \"x\"");
    }

    #[test]
    fn rejects_oversize_and_bad_urls() {
        let url = serve_once("0123456789");
        assert_eq!(fetch_text(&url, 4, Duration::from_secs(5)), Err(FetchError::TooLarge(4)));
        assert!(matches!(fetch_text("file:///etc/passwd", 4, Duration::from_secs(1)), Err(FetchError::BadUrl(_))));
        let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let err = fetch_text(&format!("http://{closed}/x"), 4, Duration::from_secs(2)).unwrap_err();
        assert!(matches!(err, FetchError::Unreachable { .. }), "{err:?}");
    }
}

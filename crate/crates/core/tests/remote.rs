//! Remote embedding and rewriting clients against an in-process mock service.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use exrw_core::embedding::{EmbeddingProvider, FallbackEmbedder, RemoteProvider};
use exrw_core::rewrite::{RemoteRewriter, RemoteRewriterConfig, RewriteRequest, RewriteSource, Rewriter};
use exrw_core::Error;
use serde_json::{json, Value};

type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    fn start(handler: impl Fn(&str, &Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let handler = handler.clone();
                let counter = counter.clone();
                thread::spawn(move || serve(stream, &*handler, &counter));
            }
        });
        MockServer { url, hits }
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &Handler, hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    hits.fetch_add(1, Ordering::SeqCst);
    let parsed: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, payload) = handler(&path, &parsed);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

/// Stand-in embedding service: hashed bag-of-words vectors, scaled so the
/// client has to normalize them.
fn embed_handler(dim: usize) -> impl Fn(&str, &Value) -> (u16, String) + Send + Sync {
    let embedder = FallbackEmbedder::new(dim).unwrap();
    move |path, body| {
        assert_eq!(path, "/embed");
        let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap();
        if texts.is_empty() {
            return (400, json!({"error": "empty batch"}).to_string());
        }
        let vectors: Vec<Vec<f64>> = texts
            .iter()
            .map(|t| embedder.embed_one(t).values().iter().map(|x| 3.0 * x).collect())
            .collect();
        (200, json!({"dim": dim, "vectors": vectors}).to_string())
    }
}

fn rewriter(url: &str, backoff_ms: u64) -> RemoteRewriter {
    RemoteRewriter::new(&RemoteRewriterConfig {
        endpoint: url.to_string(),
        timeout_ms: 5_000,
        initial_backoff_ms: backoff_ms,
        ..RemoteRewriterConfig::default()
    })
    .unwrap()
}

fn request(sentences: &[&str]) -> RewriteRequest {
    RewriteRequest::new(sentences.iter().map(|s| s.to_string()).collect())
}

#[test]
fn embed_dims_normalization_and_determinism() {
    let server = MockServer::start(embed_handler(16));
    let provider = RemoteProvider::new(&server.url, 16, Duration::from_secs(5));
    let texts: Vec<String> = ["Rain fell all day.", "Markets rallied.", "Rain fell all day."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let vectors = provider.embed(&texts).unwrap();
    assert_eq!(vectors.len(), 3);
    for v in &vectors {
        assert_eq!(v.dim(), 16);
        assert!((v.norm() - 1.0).abs() < 1e-4);
    }
    assert_eq!(vectors[0], vectors[2]);
    assert_eq!(provider.embed(&texts[..1]).unwrap()[0], vectors[0]);
}

#[test]
fn embed_splits_large_batches() {
    let server = MockServer::start(embed_handler(8));
    let provider = RemoteProvider::new(&server.url, 8, Duration::from_secs(5)).with_batch_size(2);
    let texts: Vec<String> = (0..5).map(|i| format!("Sentence {i}.")).collect();
    assert_eq!(provider.embed(&texts).unwrap().len(), 5);
    assert_eq!(server.hits(), 3);
}

#[test]
fn embed_rejects_wrong_dimension() {
    let server = MockServer::start(embed_handler(8));
    let provider = RemoteProvider::new(&server.url, 16, Duration::from_secs(5));
    let err = provider.embed(&["Hello.".to_string()]).unwrap_err();
    assert!(matches!(err, Error::DimMismatch { expected: 16, found: 8 }), "{err}");
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _| (400, json!({"error": "batch too large"}).to_string()));
    let provider = RemoteProvider::with_backoff(&server.url, 8, Duration::from_secs(5), Duration::from_millis(1));
    let err = provider.embed(&["x".to_string()]).unwrap_err();
    assert!(matches!(err, Error::Http { status: 400, .. }), "{err}");
    assert!(err.to_string().contains("batch too large"));
    assert_eq!(server.hits(), 1);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let server = MockServer::start(|_, _| (503, json!({"error": "loading"}).to_string()));
    let provider = RemoteProvider::with_backoff(&server.url, 8, Duration::from_secs(5), Duration::from_millis(1));
    let err = provider.embed(&["x".to_string()]).unwrap_err();
    assert!(matches!(err, Error::Http { status: 503, .. }), "{err}");
    assert_eq!(server.hits(), 4);
}

#[test]
fn rewrite_sends_prompt_and_sentences() {
    let server = MockServer::start(|path, body| {
        assert_eq!(path, "/rewrite");
        assert_eq!(body["prompt"], "re-write");
        let joined = body["sentences"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        (200, json!({ "text": format!("rewritten: {joined}") }).to_string())
    });
    let r = rewriter(&server.url, 1);
    let out = r.rewrite(&request(&["Storm hits.", "Power out."])).unwrap();
    assert_eq!(out.text, "rewritten: Storm hits. Power out.");
    assert_eq!(out.source, RewriteSource::Remote);
    let again = r.rewrite(&request(&["Storm hits.", "Power out."])).unwrap();
    assert_eq!(again.text, out.text);
}

#[test]
fn empty_rewrite_is_an_error() {
    let server = MockServer::start(|_, _| (200, json!({"text": "  "}).to_string()));
    let err = rewriter(&server.url, 1).rewrite(&request(&["A."])).unwrap_err();
    assert!(matches!(err, Error::EmptyRewrite));
    assert_eq!(err.to_string(), "empty rewrite");
}

#[test]
fn transient_failure_recovers() {
    let calls = AtomicUsize::new(0);
    let server = MockServer::start(move |_, _| {
        if calls.fetch_add(1, Ordering::SeqCst) < 2 {
            (500, json!({"error": "boom"}).to_string())
        } else {
            (200, json!({"text": "ok"}).to_string())
        }
    });
    let out = rewriter(&server.url, 1).rewrite(&request(&["A."])).unwrap();
    assert_eq!(out.text, "ok");
    assert_eq!(server.hits(), 3);
}

#[test]
fn service_down_fails_after_backoff() {
    // bind then drop to get a port with nothing listening
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let r = rewriter(&format!("http://127.0.0.1:{port}"), 20);
    let start = Instant::now();
    let err = r.rewrite(&request(&["A."])).unwrap_err();
    let elapsed = start.elapsed();
    match &err {
        Error::Transport { attempts, .. } => assert_eq!(*attempts, 4),
        other => panic!("unexpected error {other}"),
    }
    // 20 + 40 + 80 ms of backoff
    assert!(elapsed >= Duration::from_millis(140), "{elapsed:?}");
    assert!(elapsed < Duration::from_secs(5), "{elapsed:?}");
}

#[test]
fn inflight_requests_are_capped() {
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (c, p) = (current.clone(), peak.clone());
    let server = MockServer::start(move |_, _| {
        let now = c.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(50));
        c.fetch_sub(1, Ordering::SeqCst);
        (200, json!({"text": "ok"}).to_string())
    });
    let r = Arc::new(
        RemoteRewriter::new(&RemoteRewriterConfig {
            endpoint: server.url.clone(),
            max_inflight: 2,
            ..RemoteRewriterConfig::default()
        })
        .unwrap(),
    );
    let workers: Vec<_> = (0..8)
        .map(|_| {
            let r = r.clone();
            thread::spawn(move || r.rewrite(&request(&["A."])).unwrap())
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    assert_eq!(server.hits(), 8);
    assert!(peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn summarize_end_to_end_over_the_wire() {
    let embed = embed_handler(16);
    let server = MockServer::start(move |path, body| match path {
        "/embed" => embed(path, body),
        _ => {
            let n = body["sentences"].as_array().unwrap().len();
            (200, json!({ "text": format!("Summary of {n} sentences.") }).to_string())
        }
    });
    let out = tempfile::tempdir().unwrap();
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/clusters.jsonl");
    let run = std::process::Command::new(env!("CARGO_BIN_EXE_exrw"))
        .args(["summarize", "--embedder", "remote", "--rewriter", "remote", "--dim", "16", "--data", fixture])
        .arg("--out")
        .arg(out.path())
        .env("EXRW_ENDPOINT", &server.url)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout.lines().all(|l| l.contains("Summary of")));
}

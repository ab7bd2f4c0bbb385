use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sentiment_harness::gateway::{
    GatewayError, GenerationParams, ModelGateway, OpenAiProvider, ProviderError, ResponseCache,
};

struct Captured {
    request_line: String,
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Serves the scripted `(status, body)` replies, one connection each, and
/// records every request.
fn scripted_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            sink.lock().unwrap().push(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "id": "c1",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
    })
    .to_string()
}

fn gateway(url: &str, key: Option<&str>) -> (ModelGateway, Arc<Mutex<Vec<Duration>>>) {
    let provider = OpenAiProvider::new(url, key.map(String::from), Duration::from_secs(5));
    let delays = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&delays);
    let gw = ModelGateway::new(Box::new(provider), ResponseCache::in_memory(), 2)
        .with_sleeper(move |d| sink.lock().unwrap().push(d));
    (gw, delays)
}

#[test]
fn rate_limit_is_retried_with_backoff() {
    let (url, seen) = scripted_server(vec![
        (429, r#"{"error":"slow down"}"#.to_string()),
        (200, ok_body("Step 1. Final answer: Positive")),
    ]);
    let (gw, delays) = gateway(&url, Some("sk-test"));
    let mut params = GenerationParams::new("llama-3-8b");
    params.seed = Some(7);
    let rec = gw.complete("Classify this.", &params, 0).unwrap();
    assert_eq!(rec.completion_text, "Step 1. Final answer: Positive");
    assert_eq!(*delays.lock().unwrap(), vec![Duration::from_secs(1)]);
    assert_eq!(gw.stats().provider_calls, 2);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(seen[1].headers.iter().any(|h| h == "authorization: Bearer sk-test" || h == "Authorization: Bearer sk-test"));
    let body = &seen[1].body;
    assert_eq!(body["model"], "llama-3-8b");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "Classify this.");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 256);
    assert_eq!(body["seed"], 7);
    assert!(body.get("top_p").is_none());

    // Served from cache: no third request reaches the server.
    drop(seen);
    gw.complete("Classify this.", &params, 0).unwrap();
    assert_eq!(gw.stats().provider_calls, 2);
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, seen) = scripted_server(vec![(401, r#"{"error":"bad key"}"#.to_string())]);
    let (gw, delays) = gateway(&url, None);
    let err = gw.complete("x", &GenerationParams::new("m"), 0).unwrap_err();
    assert!(matches!(err, GatewayError::Provider(ProviderError::Auth(_))), "{err}");
    assert!(delays.lock().unwrap().is_empty());
    assert_eq!(seen.lock().unwrap().len(), 1);
    assert!(!seen.lock().unwrap()[0].headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn server_errors_exhaust_retries() {
    let replies = (0..5).map(|_| (503, "{}".to_string())).collect();
    let (url, _) = scripted_server(replies);
    let (gw, delays) = gateway(&url, None);
    let err = gw.complete("x", &GenerationParams::new("m"), 0).unwrap_err();
    assert!(matches!(err, GatewayError::RetriesExhausted { attempts: 5, .. }));
    let secs: Vec<u64> = delays.lock().unwrap().iter().map(Duration::as_secs).collect();
    assert_eq!(secs, vec![1, 2, 4, 8]);
}

#[test]
fn malformed_success_body_is_reported() {
    let (url, _) = scripted_server(vec![(200, r#"{"choices":[]}"#.to_string())]);
    let (gw, _) = gateway(&url, None);
    let err = gw.complete("x", &GenerationParams::new("m"), 0).unwrap_err();
    assert!(matches!(err, GatewayError::Provider(ProviderError::Malformed(_))));
}

#[test]
fn unreachable_host_is_transient() {
    // Bind then drop to get a port with no listener.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let (gw, delays) = gateway(&format!("http://127.0.0.1:{port}"), None);
    let err = gw.complete("x", &GenerationParams::new("m"), 0).unwrap_err();
    assert!(matches!(err, GatewayError::RetriesExhausted { .. }), "{err}");
    assert_eq!(delays.lock().unwrap().len(), 4);
}

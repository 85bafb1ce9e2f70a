//! HttpBackend against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use zsl_kep_core::llm_gateway::{
    Backend, ChatRequest, Gateway, GatewayConfig, GatewayErrorKind, HttpBackend,
};

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k == "content-length")
                .map_or(0, |(_, v)| v.parse().unwrap());
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]})
        .to_string()
}

fn request() -> ChatRequest {
    ChatRequest::new("system text".into(), "user text".into(), 512).with_sampling(0.0, 0.8)
}

fn backend(base: &str) -> HttpBackend {
    HttpBackend::new(base, "test-model", Some("secret".into()), Duration::from_secs(5))
}

#[test]
fn sends_openai_compatible_request() {
    let (base, rx) = serve(vec![(200, completion("VERDICT: Supported"))]);
    let resp = backend(&base).send(0, &request()).unwrap();
    assert_eq!(resp.text, "VERDICT: Supported");

    let c = rx.recv().unwrap();
    assert_eq!(c.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(c.headers.contains(&("authorization".into(), "Bearer secret".into())));
    assert_eq!(c.body["model"], "test-model");
    assert_eq!(c.body["temperature"], 0.0);
    assert_eq!(c.body["top_p"], 0.8);
    assert_eq!(c.body["max_tokens"], 512);
    assert_eq!(c.body["messages"][0]["role"], "system");
    assert_eq!(c.body["messages"][1]["content"], "user text");
}

#[test]
fn rate_limit_is_retried_by_gateway() {
    let (base, rx) = serve(vec![
        (429, r#"{"error":"rate limit exceeded"}"#.into()),
        (200, completion("ok")),
    ]);
    let gw = Gateway::new(
        backend(&base),
        GatewayConfig {
            backoff_base: Duration::from_millis(1),
            ..GatewayConfig::default()
        },
    );
    assert_eq!(gw.complete(0, &request()).unwrap().text, "ok");
    assert_eq!(gw.rate_limit_retries(), 1);
    assert_eq!(rx.iter().count(), 2);
}

#[test]
fn context_errors_are_not_retried() {
    let (base, rx) = serve(vec![(
        400,
        r#"{"error":{"message":"This model's maximum context length is 8192 tokens"}}"#.into(),
    )]);
    let gw = Gateway::new(backend(&base), GatewayConfig::default());
    let err = gw.complete(0, &request()).unwrap_err();
    assert_eq!(err.kind, GatewayErrorKind::ContextOverflow);
    assert_eq!(rx.iter().count(), 1);
}

#[test]
fn server_errors_and_bad_bodies() {
    let (base, _rx) = serve(vec![(503, "unavailable".into()), (200, "not json".into())]);
    let b = backend(&base);
    assert_eq!(b.send(0, &request()).unwrap_err().kind, GatewayErrorKind::Transport);
    assert_eq!(b.send(0, &request()).unwrap_err().kind, GatewayErrorKind::Malformed);
}

#[test]
fn unreachable_server_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = backend(&format!("http://127.0.0.1:{port}"));
    assert_eq!(b.send(0, &request()).unwrap_err().kind, GatewayErrorKind::Transport);
}

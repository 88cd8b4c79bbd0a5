use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use installamatic::llm::{
    BackendError, ChatBackend, Message, OpenAiBackend, OpenAiConfig, RetryPolicy, ToolSchema,
};

/// Serves one canned `(status, body)` per connection and records request bodies.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn backend(endpoint: String) -> OpenAiBackend {
    let config = OpenAiConfig {
        endpoint,
        retry: RetryPolicy {
            max_attempts: 3,
            backoff: vec![Duration::from_millis(10), Duration::from_millis(40)],
        },
        request_timeout: Duration::from_secs(10),
        ..OpenAiConfig::default()
    };
    OpenAiBackend::with_key(config, "test-key".into()).unwrap()
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Looking at the README first."}}],"usage":{"prompt_tokens":10,"completion_tokens":5}}"#;

fn msgs() -> Vec<Message> {
    vec![Message::system("sys"), Message::user("go")]
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, seen) = serve(vec![
        (401, r#"{"error":{"message":"bad key"}}"#.into()),
        (200, OK.into()),
    ]);
    let err = backend(url).send(&msgs(), &[], true).unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 401, .. }),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn server_error_then_success_is_retried() {
    let (url, seen) = serve(vec![(500, "{}".into()), (200, OK.into())]);
    let reply = backend(url).send(&msgs(), &[], true).unwrap();
    assert_eq!(reply.text, "Looking at the README first.");
    assert_eq!(reply.usage.total(), 15);
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn rate_limit_retried_until_attempts_run_out() {
    let (url, seen) = serve(vec![
        (429, "{}".into()),
        (503, "{}".into()),
        (429, "{}".into()),
        (200, OK.into()),
    ]);
    let err = backend(url).send(&msgs(), &[], true).unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 429, .. }));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn request_body_reflects_query_kind() {
    let (url, seen) = serve(vec![(200, OK.into())]);
    let tools = [ToolSchema::new("check_presence", "d", &[("file", "path")])];
    backend(url).send(&msgs(), &tools, false).unwrap();
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(body["tool_choice"], "none");
    assert_eq!(body["model"], "gpt-4o-mini-2024-07-18");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["tools"][0]["function"]["name"], "check_presence");
    assert_eq!(body["messages"][0]["role"], "system");
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let err = backend(url).send(&msgs(), &[], true).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)));
}

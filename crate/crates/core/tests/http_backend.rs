//! Hermetic tests of the chat-completions HTTP adapter against a local
//! single-threaded mock server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;
use std::time::Duration;

use reactod_core::{
    ChatMessage, CompletionBackend, CompletionRequest, HttpBackend, HttpBackendConfig,
};

struct CapturedRequest {
    headers: String,
    body: serde_json::Value,
}

/// Serves the given (status, body) responses one connection at a time and
/// returns every captured request.
fn serve(responses: Vec<(u16, String)>) -> (String, JoinHandle<Vec<CapturedRequest>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
    let base = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut captured = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().expect("accept");
            stream
                .set_read_timeout(Some(Duration::from_secs(5)))
                .unwrap();
            let mut raw = Vec::new();
            let mut buf = [0u8; 4096];
            let header_end = loop {
                let n = stream.read(&mut buf).expect("read request");
                raw.extend_from_slice(&buf[..n]);
                if let Some(pos) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
            };
            let headers = String::from_utf8_lossy(&raw[..header_end]).to_string();
            let content_length: usize = headers
                .lines()
                .find_map(|l| {
                    l.to_ascii_lowercase()
                        .strip_prefix("content-length:")
                        .map(|v| v.trim().parse().unwrap())
                })
                .unwrap_or(0);
            while raw.len() < header_end + content_length {
                let n = stream.read(&mut buf).expect("read body");
                raw.extend_from_slice(&buf[..n]);
            }
            let body_bytes = &raw[header_end..header_end + content_length];
            captured.push(CapturedRequest {
                headers,
                body: serde_json::from_slice(body_bytes).expect("json request body"),
            });
            let response = format!(
                "HTTP/1.1 {status} MOCK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream
                .write_all(response.as_bytes())
                .expect("write response");
        }
        captured
    });
    (base, handle)
}

fn config(base: &str) -> HttpBackendConfig {
    HttpBackendConfig {
        api_base: base.to_string(),
        api_key: Some("test-key".into()),
        model: "test-model".into(),
        native_tools: false,
        max_retries: 2,
        timeout: Duration::from_secs(5),
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        messages: vec![
            ChatMessage::system("you are a tracker"),
            ChatMessage::user("state: (empty)\nuser: hi"),
        ],
        tool_signatures: Some(reactod_core::tools::native_signatures()),
        temperature: 0.0,
        max_output_tokens: 256,
    }
}

fn ok_body(content: &str, tokens: u64) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"completion_tokens": tokens}
    })
    .to_string()
}

#[test]
fn sends_chat_completions_payload_with_auth() {
    let (base, server) = serve(vec![(
        200,
        ok_body("Thought: hi\nAction: x\nAction Input: {}", 11),
    )]);
    let backend = HttpBackend::new(config(&base));
    let result = backend.complete(&request()).unwrap();
    assert_eq!(result.output_tokens, 11);
    assert!(!result.tokens_estimated);

    let captured = server.join().unwrap();
    assert_eq!(captured.len(), 1);
    let req = &captured[0];
    assert!(req.headers.contains("Authorization: Bearer test-key"));
    assert!(req.headers.starts_with("POST /chat/completions"));
    assert_eq!(req.body["model"], "test-model");
    assert_eq!(req.body["temperature"], 0.0);
    assert_eq!(req.body["messages"][0]["role"], "system");
    // text path: no tool signatures on the wire
    assert!(req.body.get("tools").is_none());
}

#[test]
fn native_tools_flag_advertises_signatures() {
    let (base, server) = serve(vec![(
        200,
        serde_json::json!({
            "choices": [{"message": {
                "content": null,
                "tool_calls": [{"type": "function", "function": {
                    "name": "intent_classify",
                    "arguments": "{\"intent\": \"hotel\"}"
                }}]
            }}],
            "usage": {"completion_tokens": 7}
        })
        .to_string(),
    )]);
    let mut cfg = config(&base);
    cfg.native_tools = true;
    let backend = HttpBackend::new(cfg);
    let result = backend.complete(&request()).unwrap();
    let calls = result.native_calls.expect("native calls parsed");
    assert_eq!(calls[0].name, "intent_classify");
    assert_eq!(calls[0].arguments["intent"], "hotel");

    let captured = server.join().unwrap();
    let tools = captured[0].body["tools"].as_array().unwrap();
    assert_eq!(tools.len(), 3);
    assert_eq!(tools[0]["function"]["name"], "intent_classify");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (base, server) = serve(vec![
        (500, "{\"error\": \"boom\"}".to_string()),
        (200, ok_body("Thought: ok\nAction: y\nAction Input: {}", 5)),
    ]);
    let backend = HttpBackend::new(config(&base));
    let result = backend.complete(&request()).unwrap();
    assert_eq!(result.output_tokens, 5);
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn client_errors_fail_without_retry() {
    let (base, server) = serve(vec![(404, "{\"error\": \"no such model\"}".to_string())]);
    let backend = HttpBackend::new(config(&base));
    let err = backend.complete(&request()).unwrap_err();
    assert!(matches!(err, reactod_core::BackendError::Contract(_)));
    // exactly one request: 4xx is not retryable
    assert_eq!(server.join().unwrap().len(), 1);
}

mod common;

use std::time::Duration;

use ecolink_core::http::RetryPolicy;
use ecolink_core::{
    EmbedError, EmbeddingBackend, LlmBackend, LlmError, RemoteChat, RemoteEmbedder,
};
use serde_json::{json, Value};

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff: Duration::from_millis(5),
    }
}

fn chat_reply(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

/// Embeds each input as [len, 1].
fn embed_reply(body: &Value) -> (u16, String) {
    let data: Vec<Value> = body["input"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "embedding": [t.as_str().unwrap().len() as f64, 1.0]}))
        .collect();
    (200, json!({"data": data}).to_string())
}

#[test]
fn chat_sends_temperature_zero_seed_and_key() {
    let server = common::serve(vec![], |_| {
        (200, chat_reply("Activity name: x\nActivity information: y"))
    });
    let chat =
        RemoteChat::with_retry(&server.url, "m1", Some("secret".into()), fast_retry()).unwrap();
    let out = chat.complete("hello").unwrap();
    assert!(out.starts_with("Activity name: x"));
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].body["temperature"], json!(0.0));
    assert_eq!(reqs[0].body["seed"], json!(42));
    assert_eq!(reqs[0].body["model"], json!("m1"));
    assert_eq!(reqs[0].body["messages"][0]["content"], json!("hello"));
    assert_eq!(reqs[0].header("authorization"), Some("Bearer secret"));
}

#[test]
fn chat_retries_transient_status_then_succeeds() {
    let server = common::serve(vec![(503, "{}".into()), (429, "{}".into())], |_| {
        (200, chat_reply("ok"))
    });
    let chat = RemoteChat::with_retry(&server.url, "m", None, fast_retry()).unwrap();
    assert_eq!(chat.complete("p").unwrap(), "ok");
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn chat_gives_up_after_max_attempts() {
    let server = common::serve(vec![], |_| (500, "{}".into()));
    let chat = RemoteChat::with_retry(&server.url, "m", None, fast_retry()).unwrap();
    match chat.complete("p") {
        Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn chat_does_not_retry_client_errors() {
    let server = common::serve(vec![], |_| (400, "{}".into()));
    let chat = RemoteChat::with_retry(&server.url, "m", None, fast_retry()).unwrap();
    assert!(chat.complete("p").is_err());
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn chat_empty_content_is_protocol_error() {
    let server = common::serve(vec![], |_| (200, chat_reply("  ")));
    let chat = RemoteChat::with_retry(&server.url, "m", None, fast_retry()).unwrap();
    assert!(matches!(chat.complete("p"), Err(LlmError::Protocol(_))));
}

#[test]
fn embedder_normalizes_batches_and_memoizes() {
    let server = common::serve(vec![], embed_reply);
    let emb = RemoteEmbedder::<f64>::with_retry(&server.url, "gte", None, fast_retry())
        .unwrap()
        .with_batch_size(2);
    assert_eq!(emb.fingerprint(), "remote:gte");
    let out = emb.embed(&["abc", "a", "abcd"]).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.iter().all(|e| e.is_normalized()));
    let v = out[0].values();
    assert!((v[0] - 3.0 / 10f64.sqrt()).abs() < 1e-12);
    assert_eq!(server.requests.lock().unwrap().len(), 2);

    let again = emb.embed(&["abcd", "abc"]).unwrap();
    assert_eq!(again[0], out[2]);
    assert_eq!(again[1], out[0]);
    assert_eq!(server.requests.lock().unwrap().len(), 2);
    assert_eq!(emb.cached_len(), 3);
}

#[test]
fn embedder_retries_then_reports_attempts() {
    let server = common::serve(vec![(502, "{}".into())], embed_reply);
    let emb = RemoteEmbedder::<f32>::with_retry(&server.url, "gte", None, fast_retry()).unwrap();
    assert_eq!(emb.embed_one("steel").unwrap().dim(), 2);
    assert_eq!(server.requests.lock().unwrap().len(), 2);

    let down = common::serve(vec![], |_| (503, "{}".into()));
    let emb = RemoteEmbedder::<f32>::with_retry(&down.url, "gte", None, fast_retry()).unwrap();
    match emb.embed_one("steel") {
        Err(EmbedError::Remote { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn embedder_rejects_short_reply() {
    let server = common::serve(vec![], |_| (200, json!({"data": []}).to_string()));
    let emb = RemoteEmbedder::<f32>::with_retry(&server.url, "gte", None, fast_retry()).unwrap();
    assert!(matches!(
        emb.embed_one("x y z"),
        Err(EmbedError::Protocol(_))
    ));
}

#[test]
fn unreachable_endpoint_is_transport_failure() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let chat = RemoteChat::with_retry(&url, "m", None, fast_retry()).unwrap();
    match chat.complete("p") {
        Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}

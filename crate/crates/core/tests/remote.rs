//! The remote backend against a local stand-in for a chat-completions endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use remac::reasoning::{
    Backend, BackendError, EpisodeTag, Recorder, ReasonerRequest, ReasonerResponse, RemoteBackend, RemoteConfig,
    ReplayBackend,
};
use serde_json::{json, Value};

struct Seen {
    authorization: Option<String>,
    body: Value,
}

/// Serves one canned reply per connection, in order, and reports what it received.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, content) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    authorization = Some(line["authorization:".len()..].trim().to_owned());
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            tx.send(Seen { authorization, body: serde_json::from_slice(&body).unwrap() }).unwrap();
            let payload = if status == 200 {
                json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
            } else {
                content
            };
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn backend(url: &str) -> RemoteBackend {
    RemoteBackend::new(RemoteConfig {
        base_url: url.to_owned(),
        model: "test-model".into(),
        api_key: Some("sk-test".into()),
        timeout_secs: 5,
        max_reprompts: 1,
    })
    .unwrap()
}

const ITEMS: &str = "Sure.\n```json\n{\"items\": [\"microwave\", \"vegetable\"]}\n```\n";

#[test]
fn well_formed_reply_is_parsed() {
    let (url, seen) = serve(vec![(200, ITEMS.into())]);
    let mut b = backend(&url);
    let reply = b.call(&ReasonerRequest::propose_items("heat the vegetables")).unwrap();
    assert_eq!(reply, ReasonerResponse::Items { items: vec!["microwave".into(), "vegetable".into()] });

    let req = seen.recv().unwrap();
    assert_eq!(req.authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(req.body["model"], "test-model");
    assert_eq!(req.body["temperature"], 0);
    let messages = req.body["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "system");
    assert!(messages[1]["content"].as_str().unwrap().contains("heat the vegetables"));
    assert!(b.template_hash().is_some());
}

#[test]
fn malformed_reply_is_reprompted_once() {
    let (url, seen) = serve(vec![(200, "no json here".into()), (200, ITEMS.into())]);
    let mut b = backend(&url);
    assert!(b.call(&ReasonerRequest::propose_items("heat the vegetables")).is_ok());
    let _first = seen.recv().unwrap();
    let second = seen.recv().unwrap();
    let messages = second.body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 4);
    assert_eq!(messages[2]["content"], "no json here");
}

#[test]
fn persistent_garbage_is_a_parse_error() {
    let extra_field = "```json\n{\"items\": [\"sink\"], \"note\": 1}\n```";
    let (url, _seen) = serve(vec![(200, "```json\n{}\n```".into()), (200, extra_field.into())]);
    let err = backend(&url).call(&ReasonerRequest::propose_items("defrost the fish")).unwrap_err();
    assert!(matches!(err, BackendError::Parse { .. }), "{err}");
    assert!(!err.is_retriable());
}

#[test]
fn http_errors_are_transport_failures() {
    let (url, _seen) = serve(vec![(500, "{\"error\": \"down\"}".into())]);
    let err = backend(&url).call(&ReasonerRequest::propose_items("defrost the fish")).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err}");
    assert!(err.is_retriable());
}

#[test]
fn unreachable_endpoint_is_a_transport_failure() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = backend(&format!("http://127.0.0.1:{port}")).call(&ReasonerRequest::propose_items("x y")).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err}");
}

#[test]
fn recorded_remote_calls_replay_offline() {
    let (url, _seen) = serve(vec![(200, ITEMS.into())]);
    let tag = EpisodeTag {
        task: "OpenMicrowavePnP".into(),
        setting: "CC".into(),
        seed: 0,
        max_retries: 2,
        max_iterations: 1,
        success_prob: None,
        robot_count: 1,
    };
    let mut rec = Recorder::new(backend(&url), tag);
    let req = ReasonerRequest::propose_items("heat the vegetables");
    let live = rec.call(&req).unwrap();
    let transcript = rec.into_transcript();
    assert_eq!(transcript.entries[0].backend, "remote");
    assert!(transcript.entries[0].template_hash.is_some());
    let text = transcript.to_jsonl();
    assert!(!text.contains("sk-test"), "API keys never reach transcripts");

    let mut replay = ReplayBackend::new(remac::reasoning::Transcript::from_jsonl(&text).unwrap());
    assert_eq!(replay.id(), "remote");
    assert_eq!(replay.call(&req).unwrap(), live);
}

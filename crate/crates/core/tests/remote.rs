//! The HTTP backend against a local one-request-per-connection server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use mmg_core::oracle::{
    Backend, Gateway, OracleError, ProbeLabel, RemoteBackend, RemoteConfig, RoleContext, Sampling, UnitPrices,
};

struct Seen {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves `responses` in order, one per connection, then stops.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}"), seen, handle)
}

fn config(base_url: String) -> RemoteConfig {
    RemoteConfig {
        base_url,
        chat_model: "chat-test".into(),
        embedding_model: "embed-test".into(),
        retries: 2,
        backoff_ms: 1,
        timeout_secs: 5,
    }
}

fn gateway(base_url: String) -> Gateway {
    let backend = RemoteBackend::with_api_key(config(base_url), Some("sk-test".into())).unwrap();
    Gateway::new(Arc::new(backend)).with_prices(UnitPrices {
        input_per_1k: 1.0,
        output_per_1k: 2.0,
    })
}

fn sampling() -> Sampling {
    Sampling {
        temperature: 0.7,
        max_tokens: 64,
    }
}

#[test]
fn completion_sends_messages_and_records_usage() {
    let reply = r#"{"choices": [{"message": {"content": "I was in the study."}}], "usage": {"prompt_tokens": 1000, "completion_tokens": 500}}"#;
    let (url, seen, h) = serve(vec![(200, reply.into())]);
    let gw = gateway(url);
    let vars = mmg_core::oracle::templates::vars([("previous_prompt", "Answer briefly.")]);
    let req = gw
        .request("json_retry", vars, RoleContext::Civilian, Some("You are Alice.".into()), sampling())
        .unwrap();
    let c = gw.complete(&req).unwrap();
    h.join().unwrap();
    assert_eq!(c.text, "I was in the study.");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[0].body["model"], "chat-test");
    assert_eq!(seen[0].body["messages"][0]["role"], "system");
    assert_eq!(seen[0].body["messages"][1]["content"], req.rendered_prompt);
    assert_eq!(seen[0].body["temperature"], 0.7);
    let ledger = gw.ledger();
    assert_eq!(ledger.len(), 1);
    let r = &ledger.records()[0];
    assert_eq!((r.prompt_tokens, r.completion_tokens), (1000, 500));
    assert!((r.dollars - 2.0).abs() < 1e-12);
}

#[test]
fn probe_reads_first_token_logprob() {
    let lp = 0.8f64.ln();
    let reply = format!(
        r#"{{"choices": [{{"message": {{"content": "Yes"}}, "logprobs": {{"content": [{{"token": "Yes", "logprob": {lp}}}]}}}}], "usage": {{"prompt_tokens": 3, "completion_tokens": 1}}}}"#
    );
    let (url, seen, h) = serve(vec![(200, reply)]);
    let gw = gateway(url);
    let vars = mmg_core::oracle::templates::vars([("previous_prompt", "Is it informative?")]);
    let req = gw.request("json_retry", vars, RoleContext::Neutral, None, sampling()).unwrap();
    let p = gw.probe_binary(&req).unwrap();
    h.join().unwrap();
    assert_eq!(p.label, ProbeLabel::Yes);
    assert!((p.probability - 0.8).abs() < 1e-12);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body["logprobs"], true);
    assert_eq!(seen[0].body["max_tokens"], 1);
}

#[test]
fn embeddings_parse_vector() {
    let reply = r#"{"data": [{"embedding": [0.6, 0.8]}], "usage": {"prompt_tokens": 4}}"#;
    let (url, seen, h) = serve(vec![(200, reply.into())]);
    let gw = gateway(url);
    assert_eq!(gw.embed("the orangery").unwrap(), vec![0.6, 0.8]);
    h.join().unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"], "the orangery");
}

#[test]
fn server_errors_retry_then_fail_as_unavailable() {
    let (url, seen, h) = serve(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
    let backend = RemoteBackend::with_api_key(config(url), None).unwrap();
    let err = backend.embed("x").unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, OracleError::BackendUnavailable(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert!(seen.lock().unwrap()[0].auth.is_none());
}

#[test]
fn transient_error_then_success() {
    let ok = r#"{"data": [{"embedding": [1.0]}]}"#;
    let (url, seen, h) = serve(vec![(429, "{}".into()), (200, ok.into())]);
    let backend = RemoteBackend::with_api_key(config(url), None).unwrap();
    assert_eq!(backend.embed("x").unwrap().vector, vec![1.0]);
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_do_not_retry() {
    let (url, seen, h) = serve(vec![(400, r#"{"error": "bad"}"#.into())]);
    let backend = RemoteBackend::with_api_key(config(url), None).unwrap();
    let err = backend.embed("x").unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, OracleError::Protocol(_)));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_host_is_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let backend = RemoteBackend::with_api_key(config(url), None).unwrap();
    assert!(matches!(backend.embed("x"), Err(OracleError::BackendUnavailable(_))));
}

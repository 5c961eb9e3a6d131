use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use rerank_core::backends::{Backend, BackendError, HttpBackend, HttpConfig, RequestContext};
use rerank_core::budget::{Ledger, Pricing};
use rerank_core::prompts::{render_binary, Templates};
use rerank_core::strategies::Stage;
use rerank_core::RankingTask;
use serde_json::{json, Value};

/// Serves one canned `(status, body)` per connection, in order, and records
/// each request body it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock()
                .unwrap()
                .push(serde_json::from_slice(&buf).unwrap_or(Value::Null));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn ok_body(content: &str, usage: Option<(u64, u64)>) -> String {
    let mut v = json!({"choices": [{"message": {"content": content}}]});
    if let Some((p, c)) = usage {
        v["usage"] = json!({"prompt_tokens": p, "completion_tokens": c});
    }
    v.to_string()
}

fn backend(url: String, retries: usize, bills_failures: bool) -> HttpBackend {
    let cfg = HttpConfig {
        url,
        model: "m1".into(),
        max_retries: retries,
        backoff_ms: 1,
        timeout_ms: 5_000,
        bills_failures,
        ..HttpConfig::default()
    };
    HttpBackend::new("http", Pricing::per_token(1.0).unwrap(), cfg).unwrap()
}

fn task() -> RankingTask {
    RankingTask::new(
        "q1",
        "what is rust",
        [("d1".to_string(), "rust is a language".to_string(), None)],
        Vec::<String>::new(),
    )
    .unwrap()
}

fn ctx(t: &RankingTask) -> RequestContext<'_> {
    RequestContext {
        query_id: &t.query_id,
        query_text: &t.query_text,
        ordinal: 0,
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, ok_body("Yes", Some((21, 1)))),
    ]);
    let t = task();
    let b = backend(url, 2, false);
    let prompt = render_binary(&Templates::default(), &t.query_text, &t.passages()[0]);
    let c = b.complete(&ctx(&t), &prompt).unwrap();
    assert_eq!(c.output, "Yes");
    assert_eq!((c.prompt_tokens, c.output_tokens), (21, 1));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0]["model"], "m1");
    assert_eq!(seen[0]["max_tokens"], 1);
    assert_eq!(seen[0]["messages"][0]["content"], prompt.text.as_str());
}

#[test]
fn gives_up_after_retry_budget() {
    let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let t = task();
    let b = backend(url, 1, false);
    let prompt = render_binary(&Templates::default(), &t.query_text, &t.passages()[0]);
    match b.complete(&ctx(&t), &prompt) {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "{}".into()), (200, ok_body("Yes", None))]);
    let t = task();
    let b = backend(url, 2, false);
    let prompt = render_binary(&Templates::default(), &t.query_text, &t.passages()[0]);
    match b.complete(&ctx(&t), &prompt) {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 1),
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn missing_usage_falls_back_to_local_counts() {
    let (url, _) = serve(vec![(200, ok_body("No thanks", None))]);
    let t = task();
    let b = backend(url, 0, false);
    let prompt = render_binary(&Templates::default(), &t.query_text, &t.passages()[0]);
    let c = b.complete(&ctx(&t), &prompt).unwrap();
    assert_eq!(c.prompt_tokens, prompt.prompt_tokens);
    assert_eq!(c.output_tokens, 2);
}

#[test]
fn malformed_body_is_an_invalid_response() {
    let (url, _) = serve(vec![(200, r#"{"choices": []}"#.into())]);
    let t = task();
    let b = backend(url, 0, false);
    let prompt = render_binary(&Templates::default(), &t.query_text, &t.passages()[0]);
    assert!(matches!(
        b.complete(&ctx(&t), &prompt),
        Err(BackendError::InvalidResponse { .. })
    ));
}

#[test]
fn failed_calls_billed_only_when_configured() {
    let t = task();
    let templates = Templates::default();
    for bills in [false, true] {
        let (url, _) = serve(vec![(500, "{}".into())]);
        let b = backend(url, 0, bills);
        let mut ledger = Ledger::new(1e6);
        let out = Stage::new(&t, &b, &templates).binary(&t.initial_ranking(), &mut ledger, &Default::default());
        assert!(out.is_ok());
        let prompt = render_binary(&templates, &t.query_text, &t.passages()[0]);
        let expected = if bills { prompt.prompt_tokens as f64 } else { 0.0 };
        assert_eq!(ledger.spent(), expected);
    }
}

#[test]
fn missing_api_key_env_is_a_config_error() {
    let cfg = HttpConfig {
        api_key_env: Some("RERANK_TEST_SURELY_UNSET_KEY".into()),
        ..HttpConfig::default()
    };
    assert!(HttpBackend::new("h", Pricing::per_token(1.0).unwrap(), cfg).is_err());
}

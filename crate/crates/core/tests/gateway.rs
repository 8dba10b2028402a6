use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use persuasion_core::gateway::{
    vars, ChatPrompt, Gateway, GatewayError, MockProvider, ProviderConfig, ProviderKind, RetryPolicy, ScriptRule,
};
use persuasion_core::Setting;

fn prompt(gw: &Gateway, text: &str) -> ChatPrompt {
    gw.catalog()
        .render("mt_en2ru", None, &vars([("text", text.to_string())]))
        .unwrap()
}

fn fast_retry(mut cfg: ProviderConfig, attempts: u32) -> ProviderConfig {
    cfg.retry = RetryPolicy {
        max_attempts: attempts,
        backoff_base_ms: 1,
    };
    cfg
}

#[test]
fn inflight_never_exceeds_limit() {
    let mock = Arc::new(MockProvider::new(3).with_jitter_ms(5));
    let mut cfg = ProviderConfig::mock(3);
    cfg.max_inflight = 3;
    let gw = Gateway::with_provider(cfg, mock.clone()).unwrap();
    let prompts: Vec<ChatPrompt> = (0..60).map(|i| prompt(&gw, &format!("sentence {i}"))).collect();
    let out = gw.batch_complete(&prompts);
    assert_eq!(out.len(), 60);
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap().response_text, format!("[mock-ru] sentence {i}"));
    }
    assert!(mock.peak_inflight() <= 3, "peak {}", mock.peak_inflight());
    assert!(mock.peak_inflight() >= 2, "limit never exercised");
}

#[test]
fn map_bounded_keeps_input_order() {
    let cfg = ProviderConfig {
        max_inflight: 4,
        ..ProviderConfig::mock(1)
    };
    let gw = Gateway::with_provider(cfg, Arc::new(MockProvider::new(1).with_jitter_ms(3))).unwrap();
    let items: Vec<usize> = (0..40).collect();
    let out = gw.map_bounded(&items, |i| i * 2);
    assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
}

#[test]
fn disk_cache_makes_second_run_free() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ProviderConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..ProviderConfig::mock(5)
    };
    let first = Arc::new(MockProvider::new(5));
    let gw = Gateway::with_provider(cfg.clone(), first.clone()).unwrap();
    let a = gw.complete(&prompt(&gw, "hello")).unwrap();
    assert!(!a.retrieved_from_cache);
    assert_eq!(first.calls(), 1);

    let second = Arc::new(MockProvider::new(5));
    let gw2 = Gateway::with_provider(cfg, second.clone()).unwrap();
    let b = gw2.complete(&prompt(&gw2, "hello")).unwrap();
    assert!(b.retrieved_from_cache);
    assert_eq!(b.response_text, a.response_text);
    assert_eq!(b.cache_key, a.cache_key);
    assert_eq!(second.calls(), 0);
}

#[test]
fn cache_key_ignores_bookkeeping_fields() {
    let gw = Gateway::with_provider(ProviderConfig::mock(1), Arc::new(MockProvider::new(1))).unwrap();
    let p = prompt(&gw, "x");
    let mut q = p.clone();
    q.template = "renamed".into();
    assert_eq!(gw.key_for(&p), gw.key_for(&q));
    let mut r = p.clone();
    r.final_user.push(' ');
    assert_ne!(gw.key_for(&p), gw.key_for(&r));
}

#[test]
fn scripted_500_exhausts_retries() {
    let mock = Arc::new(MockProvider::new(1).with_rule(ScriptRule::fail(None, Some("boom"), 500)));
    let gw = Gateway::with_provider(fast_retry(ProviderConfig::mock(1), 3), mock.clone()).unwrap();
    match gw.complete(&prompt(&gw, "boom")) {
        Err(GatewayError::Exhausted { attempts, status, .. }) => {
            assert_eq!(attempts, 3);
            assert_eq!(status, Some(500));
        }
        other => panic!("expected Exhausted, got {other:?}"),
    }
    assert_eq!(mock.calls(), 3);
    assert_eq!(gw.stats().failures, 1);
    // A fine prompt still goes through.
    assert!(gw.complete(&prompt(&gw, "fine")).is_ok());
}

#[test]
fn client_error_is_not_retried() {
    let mock = Arc::new(MockProvider::new(1).with_rule(ScriptRule::fail(None, None, 400)));
    let gw = Gateway::with_provider(fast_retry(ProviderConfig::mock(1), 4), mock.clone()).unwrap();
    assert!(matches!(gw.complete(&prompt(&gw, "x")), Err(GatewayError::Exhausted { attempts: 1, .. })));
    assert_eq!(mock.calls(), 1);
}

#[test]
fn failures_are_not_cached() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_retry(
        ProviderConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..ProviderConfig::mock(1)
        },
        2,
    );
    let failing = Arc::new(MockProvider::new(1).with_rule(ScriptRule::fail(None, None, 503)));
    let gw = Gateway::with_provider(cfg.clone(), failing).unwrap();
    assert!(gw.complete(&prompt(&gw, "x")).is_err());
    let ok = Arc::new(MockProvider::new(1));
    let gw2 = Gateway::with_provider(cfg, ok.clone()).unwrap();
    let rec = gw2.complete(&prompt(&gw2, "x")).unwrap();
    assert!(!rec.retrieved_from_cache);
    assert_eq!(ok.calls(), 1);
}

#[test]
fn missing_credential_fails_before_any_request() {
    let cfg = ProviderConfig {
        kind: ProviderKind::RemoteChat,
        api_key_env: "PERSUASION_TEST_SURELY_UNSET_KEY".into(),
        ..ProviderConfig::default()
    };
    match Gateway::new(cfg) {
        Err(GatewayError::Config(msg)) => assert!(msg.contains("PERSUASION_TEST_SURELY_UNSET_KEY")),
        other => panic!("expected Config error, got {:?}", other.map(|_| ())),
    }
}

/// Minimal HTTP server answering every request with the given status and
/// body; returns the endpoint and a request counter.
fn serve(status: u16, body: &'static str, expected: usize) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming().take(expected) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), hits)
}

fn remote(endpoint: String, attempts: u32) -> Gateway {
    std::env::set_var("PERSUASION_TEST_REMOTE_KEY", "sk-test");
    let cfg = fast_retry(
        ProviderConfig {
            kind: ProviderKind::RemoteChat,
            endpoint,
            api_key_env: "PERSUASION_TEST_REMOTE_KEY".into(),
            request_timeout_s: 5,
            ..ProviderConfig::default()
        },
        attempts,
    );
    Gateway::new(cfg).unwrap()
}

#[test]
fn remote_500_is_retried_then_reported() {
    let (endpoint, hits) = serve(500, "{\"error\":\"down\"}", 3);
    let gw = remote(endpoint, 3);
    match gw.complete(&prompt(&gw, "x")) {
        Err(GatewayError::Exhausted { attempts, status, .. }) => {
            assert_eq!(attempts, 3);
            assert_eq!(status, Some(500));
        }
        other => panic!("expected Exhausted, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn remote_success_parses_choice() {
    let (endpoint, _) = serve(200, r#"{"choices":[{"message":{"role":"assistant","content":"Привет"}}]}"#, 1);
    let gw = remote(endpoint, 1);
    assert_eq!(gw.translate_paragraph("Hello", Setting::En2Ru).unwrap(), "Привет");
}

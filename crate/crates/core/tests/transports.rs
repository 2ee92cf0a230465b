mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use factorlens_core::factor::FactorConfiguration;
use factorlens_core::oracle::{
    placeholder_factor_set, random_ground_truth, OracleBackend, OracleClient, RemoteConfig,
    ReplayTransport, SyntheticOracleSpec,
};
use factorlens_core::probing::{collect_dataset, plan_configurations, CollectOptions};
use factorlens_core::verbal::{canonical_map, VerbalLevel};
use factorlens_core::Error;

use common::clock;

#[test]
fn replay_reproduces_a_recorded_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let truth = random_ground_truth(4, 2.0, 2, 8).unwrap();
    let fs = placeholder_factor_set(4).unwrap();
    let mut spec = SyntheticOracleSpec::new(truth, canonical_map(), 8);
    spec.label_noise = 0.3;
    let live = OracleClient::from_backend(&OracleBackend::Synthetic(spec), clock())
        .unwrap()
        .recording_to(&cache);
    let plan = plan_configurations(4, 256, 0).unwrap();
    let opts = || CollectOptions {
        clock: clock(),
        ..Default::default()
    };
    let recorded = collect_dataset(&live, &fs, &plan, opts()).unwrap();

    let backend = OracleBackend::Replay {
        cache_path: cache.clone(),
    };
    let replay = OracleClient::from_backend(&backend, clock()).unwrap();
    let mut replayed = collect_dataset(&replay, &fs, &plan, opts()).unwrap();
    assert_eq!(replayed.observations, recorded.observations);
    replayed.provenance.backend = recorded.provenance.backend;
    assert_eq!(replayed, recorded);

    let a = live.transcripts();
    let b = replay.transcripts();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.parsed, y.parsed);
        assert_eq!(x.response, y.response);
    }
    assert_eq!(ReplayTransport::open(&cache).unwrap().len(), 16);

    // a prompt that was never recorded is a miss, not a live call
    let other = placeholder_factor_set(5).unwrap();
    let c = FactorConfiguration::zeros(5).unwrap();
    assert!(matches!(replay.elicit_verbal(&other, &c), Err(Error::Backend(_))));
}

#[test]
fn replay_requires_an_existing_cache() {
    let backend = OracleBackend::Replay {
        cache_path: "/nonexistent/cache.jsonl".into(),
    };
    assert!(matches!(
        OracleClient::from_backend(&backend, clock()),
        Err(Error::Backend(_))
    ));
}

struct Exchange {
    head: String,
    body: serde_json::Value,
}

/// Serves one canned reply per connection and records what it received.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Exchange>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, content) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
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
                head.push_str(&line);
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Exchange {
                head,
                body: serde_json::from_slice(&body).unwrap(),
            });
            let payload = if status == 200 {
                serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                    .to_string()
            } else {
                content
            };
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn remote(base_url: String, auth_env: &str, retries: u32) -> OracleClient {
    let cfg = RemoteConfig {
        base_url,
        model: "probe-model".into(),
        auth_env: auth_env.into(),
        timeout_secs: 5,
        retries,
    };
    OracleClient::from_backend(&OracleBackend::Remote(cfg), clock()).unwrap()
}

#[test]
fn remote_reprompts_once_and_sends_the_token() {
    std::env::set_var("FACTORLENS_TEST_TOKEN_A", "s3cret");
    let (url, seen) = serve(vec![
        (200, "I would say fairly likely".into()),
        (200, "  Likely \n".into()),
    ]);
    let o = remote(url, "FACTORLENS_TEST_TOKEN_A", 0);
    let fs = placeholder_factor_set(3).unwrap();
    let c: FactorConfiguration = "101".parse().unwrap();
    assert_eq!(o.elicit_verbal(&fs, &c).unwrap(), VerbalLevel::Likely);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen[0].head.starts_with("POST /v1/chat/completions"));
    assert!(seen[0].head.contains("Bearer s3cret"));
    assert_eq!(seen[0].body["model"], "probe-model");
    assert_eq!(seen[0].body["temperature"], 0.0);
    let t = o.transcripts();
    assert_eq!(t.len(), 2);
    assert_eq!(t[0].parsed, None);
    assert!(t[1].prompt.starts_with(&t[0].prompt));
    // the token never reaches the audit trail
    assert!(!format!("{t:?}").contains("s3cret"));
}

#[test]
fn remote_protocol_error_keeps_the_raw_text() {
    let (url, _) = serve(vec![(200, "no idea".into()), (200, "still no idea".into())]);
    let o = remote(url, "FACTORLENS_TEST_TOKEN_UNSET", 0);
    let fs = placeholder_factor_set(2).unwrap();
    let c = FactorConfiguration::zeros(2).unwrap();
    match o.elicit_verbal(&fs, &c) {
        Err(Error::Protocol { raw, .. }) => assert_eq!(raw, "still no idea"),
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn remote_transport_failure_after_retries() {
    let (url, seen) = serve(vec![
        (500, "{\"error\":\"boom\"}".into()),
        (500, "{\"error\":\"boom\"}".into()),
    ]);
    let o = remote(url, "FACTORLENS_TEST_TOKEN_UNSET", 1);
    let fs = placeholder_factor_set(2).unwrap();
    let c = FactorConfiguration::zeros(2).unwrap();
    assert!(matches!(o.elicit_verbal(&fs, &c), Err(Error::Backend(_))));
    assert_eq!(seen.lock().unwrap().len(), 2);
    assert!(seen.lock().unwrap()[0].head.to_ascii_lowercase().find("authorization").is_none());
}

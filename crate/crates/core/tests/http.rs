use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tempver_core::corpus::SentenceRef;
use tempver_core::encoder::{EmbeddingProvider, EncoderError, HttpEmbeddingProvider};
use tempver_core::events::{extract_events_fallback, EventSource};
use tempver_core::relevance::ScoredSentence;
use tempver_core::verdict::{HttpLlmClient, LlmClient, Verdict, Verifier, VerdictError};

#[derive(Debug, Clone)]
struct Request {
    path: String,
    headers: Vec<(String, String)>,
    body: String,
}

/// `None` drops the connection without answering.
type Reply = Option<(u16, String)>;

struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Request>>>,
    handle: JoinHandle<()>,
}

fn serve(replies: Vec<Reply>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for reply in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut headers = Vec::new();
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len = headers.iter().find(|(k, _)| k == "content-length").map_or(0, |(_, v)| v.parse().unwrap());
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Request { path, headers, body: String::from_utf8(body).unwrap() });
            if let Some((status, body)) = reply {
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        }
    });
    Server { url, seen, handle }
}

impl Server {
    fn finish(self) -> Vec<Request> {
        self.handle.join().unwrap();
        Arc::try_unwrap(self.seen).unwrap().into_inner().unwrap()
    }
}

fn tokens(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

#[test]
fn embedding_round_trip() {
    let server = serve(vec![Some((200, r#"{"vectors": [[1.0, 0.0], [0.5, -0.5]], "dim": 2}"#.into()))]);
    let p = HttpEmbeddingProvider::new(&format!("{}/", server.url), 2, Duration::from_secs(5), 0).unwrap();
    let m = p.embed(&tokens(&["Tezuka", "died"])).unwrap();
    assert_eq!(m.shape(), (2, 2));
    assert_eq!(m.row(1), &[0.5, -0.5]);
    let seen = server.finish();
    assert_eq!(seen[0].path, "/embed");
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["tokens"], serde_json::json!(["Tezuka", "died"]));
}

#[test]
fn embedding_dimension_is_checked() {
    let server = serve(vec![
        Some((200, r#"{"vectors": [[1.0, 0.0, 0.0]], "dim": 3}"#.into())),
        Some((200, r#"{"vectors": [[1.0, 0.0]], "dim": 2}"#.into())),
        Some((200, r#"{"vectors": [[1.0]], "dim": 2}"#.into())),
    ]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, Duration::from_secs(5), 0).unwrap();
    let one = tokens(&["a"]);
    assert!(matches!(p.embed(&one), Err(EncoderError::DimensionMismatch { expected: 2, found: 3 })));
    assert!(matches!(p.embed(&tokens(&["a", "b"])), Err(EncoderError::DimensionMismatch { expected: 2, found: 1 })));
    assert!(matches!(p.embed(&one), Err(EncoderError::DimensionMismatch { expected: 2, found: 1 })));
    server.finish();
}

#[test]
fn embedding_retries_dropped_connections_but_not_errors() {
    let server = serve(vec![None, None, Some((200, r#"{"vectors": [[0.0, 1.0]], "dim": 2}"#.into()))]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, Duration::from_secs(5), 2).unwrap();
    assert_eq!(p.embed(&tokens(&["x"])).unwrap().row(0), &[0.0, 1.0]);
    assert_eq!(server.finish().len(), 3);

    let server = serve(vec![Some((500, "{}".into()))]);
    let p = HttpEmbeddingProvider::new(&server.url, 2, Duration::from_secs(5), 2).unwrap();
    assert!(matches!(p.embed(&tokens(&["x"])), Err(EncoderError::Provider(_))));
    assert_eq!(server.finish().len(), 1);
}

#[test]
fn llm_client_sends_prompt_and_key() {
    let server = serve(vec![Some((200, r#"{"text": "{\"PREDICTED_LABEL\": \"REFUTES\"}"}"#.into()))]);
    let client = HttpLlmClient::new(&format!("{}/complete", server.url), Some("k3y".into()), Duration::from_secs(5), 0)
        .unwrap()
        .with_max_tokens(32);
    let claim = extract_events_fallback(&EventSource::Claim { claim_id: "c01".into() }, "Osamu Tezuka drew manga in 2000.").remove(0);
    let evidence = vec![ScoredSentence {
        reference: SentenceRef::new("osamu_tezuka", 1),
        text: "Tezuka died of stomach cancer in 1989.".into(),
        score: 1.0,
    }];
    let v = Verifier::Llm(&client).verify(&claim, &evidence).unwrap();
    assert_eq!(v.label, Verdict::Refutes);
    let seen = server.finish();
    assert_eq!(seen[0].path, "/complete");
    assert!(seen[0].headers.contains(&("authorization".into(), "Bearer k3y".into())));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["max_tokens"], 32);
    assert!(body["prompt"].as_str().unwrap().contains("1. Tezuka died of stomach cancer in 1989."));
}

#[test]
fn llm_failures_surface() {
    let server = serve(vec![Some((200, r#"{"text": "I cannot say."}"#.into())), Some((503, "{}".into()))]);
    let client = HttpLlmClient::new(&server.url, None, Duration::from_secs(5), 1).unwrap();
    let claim = extract_events_fallback(&EventSource::Claim { claim_id: "c".into() }, "X opened in 1900.").remove(0);
    let evidence = vec![ScoredSentence { reference: SentenceRef::new("d", 0), text: "X opened in 1900.".into(), score: 0.0 }];
    assert!(matches!(Verifier::Llm(&client).verify(&claim, &evidence), Err(VerdictError::UnparseableResponse(_))));
    assert!(matches!(client.complete("p"), Err(VerdictError::Transport(_))));
    let seen = server.finish();
    assert_eq!(seen.len(), 2);
    assert!(seen.iter().all(|r| r.headers.iter().all(|(k, _)| k != "authorization")));
}

#[test]
fn no_evidence_skips_the_model() {
    let client = HttpLlmClient::new("http://127.0.0.1:9", None, Duration::from_millis(200), 0).unwrap();
    let claim = extract_events_fallback(&EventSource::Claim { claim_id: "c".into() }, "X opened in 1900.").remove(0);
    let v = Verifier::Llm(&client).verify(&claim, &[]).unwrap();
    assert_eq!((v.label, v.raw.as_str()), (Verdict::Nei, ""));
}

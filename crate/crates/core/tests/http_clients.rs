use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use vidmod_core::data_gen::{gen_ad_qa, AdSummary, HttpSummarizer, QaKind, SummarizerClient};
use vidmod_core::similarity::{EmbeddingProvider, HttpEmbedder, ReferenceEmbedder};

/// Serves `replies` in order, one connection each, and forwards request bodies.
fn stub(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0; len];
            reader.read_exact(&mut req).unwrap();
            tx.send(String::from_utf8(req).unwrap()).ok();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    url
}

#[test]
fn embedder_uses_remote_vector_and_normalizes() {
    let fallback = ReferenceEmbedder::new(4, 0);
    let (url, rx) = stub(vec![(200, r#"{"vector": [3.0, 0.0, 4.0, 0.0]}"#.into())]);
    let e = HttpEmbedder::new(url, Duration::from_secs(5), fallback).embed("blood on screen");
    assert_eq!(e.vector, vec![0.6, 0.0, 0.8, 0.0]);
    assert!(!e.degenerate);
    let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
    assert_eq!(sent["text"], "blood on screen");
}

#[test]
fn embedder_falls_back_on_bad_replies_and_dead_hosts() {
    let fallback = ReferenceEmbedder::new(4, 0);
    let expected = fallback.embed("stunt jump");
    let (url, _rx) = stub(vec![
        (200, r#"{"vector": [1.0, 2.0]}"#.into()),
        (500, r#"{"error": "boom"}"#.into()),
        (200, "not json".into()),
    ]);
    let remote = HttpEmbedder::new(url, Duration::from_secs(5), fallback);
    for _ in 0..3 {
        assert_eq!(remote.embed("stunt jump"), expected);
    }
    let dead = HttpEmbedder::new(dead_url(), Duration::from_millis(500), fallback);
    assert_eq!(dead.embed("stunt jump"), expected);
}

#[test]
fn summarizer_round_trip_and_template_fallback() {
    let (url, rx) = stub(vec![(
        200,
        r#"{"summary": "an ad", "qa": [{"question": "What is sold?", "answer": "Tea."}, {"question": " ", "answer": "x"}]}"#
            .into(),
    )]);
    let client = HttpSummarizer::new(url, Duration::from_secs(5));
    let summary = AdSummary {
        product_kind: Some("energy drink".into()),
        product_name: Some("Zap".into()),
        audience: None,
    };
    let qa = gen_ad_qa("vid-1", &summary, Some(&client as &dyn SummarizerClient));
    assert_eq!(qa.len(), 1);
    assert_eq!(qa[0].answer, "Tea.");
    assert_eq!(qa[0].kind, QaKind::AdKnowledge);
    let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
    assert_eq!(sent["video_id"], "vid-1");

    let dead = HttpSummarizer::new(dead_url(), Duration::from_millis(500));
    let qa = gen_ad_qa("vid-1", &summary, Some(&dead as &dyn SummarizerClient));
    assert_eq!(qa, gen_ad_qa("vid-1", &summary, None));
    assert!(qa[0].answer.contains("an energy drink named Zap"));
}

#![allow(dead_code)]

use evoforge_core::action::{Action, ActionType, Direction, Payload, Point, RewardFamily};
use evoforge_core::action::BBox;
use proptest::prelude::*;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn arb_action(max_coord: u32) -> impl Strategy<Value = Action> {
    let kind = proptest::sample::select(ActionType::ALL.to_vec());
    (
        kind,
        0..=max_coord,
        0..=max_coord,
        0..=max_coord,
        0..=max_coord,
        "[a-zA-Z0-9 '\\\\]{0,10}",
        proptest::sample::select(vec!["ctrl+s", "enter", "alt+f4", "ctrl+shift+t", "a"]),
        proptest::sample::select(Direction::ALL.to_vec()),
    )
        .prop_map(|(kind, a, b, c, d, text, keys, dir)| {
            let payload = match kind.family() {
                RewardFamily::Point => Payload::Point(Point { x: a, y: b }),
                RewardFamily::Box => Payload::Box(BBox::new(a.min(c), b.min(d), a.max(c) + 1, b.max(d) + 1).unwrap()),
                RewardFamily::Text => Payload::Text(text),
                RewardFamily::Keys => Payload::Keys(keys.to_string()),
                RewardFamily::Direction => Payload::Direction(dir),
                RewardFamily::Fixed => Payload::None,
            };
            Action::new(kind, payload).unwrap()
        })
}

/// Minimal HTTP/1.1 server answering every request with the next canned
/// `(status, body)`; the last one repeats.
pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(responses: Vec<(u16, String)>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0; length];
                let _ = reader.read_exact(&mut body);
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, body) = &responses[n.min(responses.len() - 1)];
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        MockServer { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Chat-completion response body whose message content is `content`.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

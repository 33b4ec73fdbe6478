//! Wire-format tests for the HTTP clients against a minimal in-process
//! HTTP/1.1 server: chat-completion extraction (including the repair
//! round-trip and timeout paths) and the text/image embedding endpoints.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use cachexia::cohort::{ClinicalNote, NoteType, NotesBundle};
use cachexia::embedding::{
    embed_image_series, embed_text, EmbedError, HttpImageEmbedder, HttpTextEmbedder, TextEmbedder,
};
use cachexia::notes::{
    default_battery, extract_answers, Answer, ChatEndpoint, ChatRequest, ClientConfig,
    HttpChatEndpoint, NotesError,
};

/// One-thread HTTP server answering each request with the next canned body.
/// Request bodies are recorded for wire-format assertions.
struct TestServer {
    port: u16,
    requests: Arc<Mutex<Vec<String>>>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    fn start(responses: Vec<String>, delay: Option<Duration>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
        let port = listener.local_addr().unwrap().port();
        let requests: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                if i >= responses.len() {
                    break;
                }
                let Ok(mut stream) = stream else { break };
                let body = read_request_body(&mut stream);
                seen.lock().unwrap().push(body);
                if let Some(delay) = delay {
                    std::thread::sleep(delay);
                }
                let payload = &responses[i];
                let response = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        Self {
            port,
            requests,
            handle: Some(handle),
        }
    }

    fn url(&self) -> String {
        format!("http://127.0.0.1:{}/v1/chat", self.port)
    }

    fn recorded(&self) -> Vec<String> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        // Unblock the accept loop if it is still waiting.
        let _ = TcpStream::connect(("127.0.0.1", self.port));
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn read_request_body(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return String::new();
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            break;
        }
        if let Some(value) = trimmed
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
        {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap_or(());
    String::from_utf8_lossy(&body).to_string()
}

fn bundle() -> NotesBundle {
    NotesBundle {
        notes: vec![ClinicalNote {
            note_type: NoteType::ProgressNote,
            text: "Patient reports early satiety and fatigue.".to_string(),
            date: Some("2024-04-01".to_string()),
        }],
    }
}

fn answers_json(battery_len: usize) -> String {
    let entries: Vec<serde_json::Value> = (1..=battery_len)
        .map(|i| {
            serde_json::json!({
                "id": format!("q{i:02}"),
                "answer": if i % 2 == 0 { "no" } else { "yes" },
                "reasoning": format!("reason {i}"),
                "reference": "early satiety",
            })
        })
        .collect();
    serde_json::to_string(&entries).unwrap()
}

#[test]
fn chat_endpoint_speaks_the_wire_format() {
    let battery = default_battery();
    let chat_body = serde_json::json!({ "text": answers_json(battery.len()) }).to_string();
    let server = TestServer::start(vec![chat_body], None);
    let cfg = ClientConfig {
        base_url: server.url(),
        model: "test-model".to_string(),
        timeout_s: 10,
        max_inflight: 1,
        temperature: 0.0,
    };
    let endpoint = HttpChatEndpoint::new(&cfg).unwrap();
    let result = extract_answers("P1", Some(&bundle()), &battery, &endpoint, &cfg).unwrap();
    assert_eq!(result.answers.len(), 26);
    assert_eq!(result.answers[0].answer, Answer::Yes);
    assert_eq!(result.answers[1].answer, Answer::No);

    // POST body carries model name, message list, and temperature.
    let requests = server.recorded();
    assert_eq!(requests.len(), 1);
    let sent: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["temperature"], 0.0);
    let messages = sent["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "user");
    assert!(messages[0]["content"]
        .as_str()
        .unwrap()
        .contains("early satiety"));
}

#[test]
fn chat_endpoint_repair_round_trip() {
    let battery = default_battery();
    let first = serde_json::json!({ "text": "sorry, no JSON here" }).to_string();
    let second = serde_json::json!({ "text": answers_json(battery.len()) }).to_string();
    let server = TestServer::start(vec![first, second], None);
    let cfg = ClientConfig {
        base_url: server.url(),
        model: "test-model".to_string(),
        timeout_s: 10,
        max_inflight: 1,
        temperature: 0.0,
    };
    let endpoint = HttpChatEndpoint::new(&cfg).unwrap();
    let result = extract_answers("P1", Some(&bundle()), &battery, &endpoint, &cfg).unwrap();
    assert_eq!(result.answers.len(), 26);

    let requests = server.recorded();
    assert_eq!(requests.len(), 2);
    // The repair request replays the conversation plus the parse error.
    let repair: serde_json::Value = serde_json::from_str(&requests[1]).unwrap();
    let messages = repair["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 3);
    assert_eq!(messages[1]["role"], "assistant");
    assert!(messages[2]["content"]
        .as_str()
        .unwrap()
        .contains("could not be parsed"));
}

#[test]
fn chat_endpoint_times_out() {
    let battery = default_battery();
    let server = TestServer::start(
        vec![serde_json::json!({ "text": "late" }).to_string()],
        Some(Duration::from_secs(3)),
    );
    let cfg = ClientConfig {
        base_url: server.url(),
        model: "m".to_string(),
        timeout_s: 1,
        max_inflight: 1,
        temperature: 0.0,
    };
    let endpoint = HttpChatEndpoint::new(&cfg).unwrap();
    let err = extract_answers("P1", Some(&bundle()), &battery, &endpoint, &cfg).unwrap_err();
    assert!(matches!(err, NotesError::Timeout(1)), "got {err:?}");
}

#[test]
fn chat_endpoint_unreachable() {
    // Bind-then-drop to get a port with no listener.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let cfg = ClientConfig {
        base_url: format!("http://127.0.0.1:{port}/v1/chat"),
        model: "m".to_string(),
        timeout_s: 1,
        max_inflight: 1,
        temperature: 0.0,
    };
    let endpoint = HttpChatEndpoint::new(&cfg).unwrap();
    let err = endpoint
        .complete(&ChatRequest {
            model: "m".to_string(),
            messages: vec![],
            temperature: 0.0,
        })
        .unwrap_err();
    assert!(matches!(err, NotesError::EndpointUnreachable(_)), "got {err:?}");
}

#[test]
fn http_text_embedder_chunks_and_pools() {
    // Two chunks (limit 4 tokens over 6 tokens) -> two requests.
    let e1 = serde_json::json!({ "embedding": [1.0, 3.0] }).to_string();
    let e2 = serde_json::json!({ "embedding": [3.0, 5.0] }).to_string();
    let server = TestServer::start(vec![e1, e2], None);
    let provider = HttpTextEmbedder::new(&server.url(), 2, 4, 10).unwrap();
    let vector = embed_text("a b c d e f", &provider).unwrap();
    assert_eq!(vector, vec![2.0, 4.0]);

    let requests = server.recorded();
    assert_eq!(requests.len(), 2);
    let first: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(first["text"], "a b c d");
    let second: serde_json::Value = serde_json::from_str(&requests[1]).unwrap();
    assert_eq!(second["text"], "e f");
}

#[test]
fn http_text_embedder_rejects_wrong_dimension() {
    let server = TestServer::start(
        vec![serde_json::json!({ "embedding": [1.0, 2.0, 3.0] }).to_string()],
        None,
    );
    let provider = HttpTextEmbedder::new(&server.url(), 2, 64, 10).unwrap();
    let tokens = provider.tokenize("hello world");
    let err = provider.embed_chunk(&tokens).unwrap_err();
    assert!(matches!(err, EmbedError::DimensionMismatch { expected: 2, got: 3 }));
}

#[test]
fn http_image_embedder_posts_refs() {
    let e1 = serde_json::json!({ "embedding": [0.0, 2.0] }).to_string();
    let e2 = serde_json::json!({ "embedding": [4.0, 6.0] }).to_string();
    let server = TestServer::start(vec![e1, e2], None);
    let provider = HttpImageEmbedder::new(&server.url(), 2, 10).unwrap();
    let refs = vec!["ct/P1/l3/0".to_string(), "ct/P1/l3/1".to_string()];
    let vector = embed_image_series(&refs, &provider).unwrap();
    assert_eq!(vector, vec![2.0, 4.0]);
    let requests = server.recorded();
    let first: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(first["ref"], "ct/P1/l3/0");
}

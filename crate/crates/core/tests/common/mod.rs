//! Minimal scripted chat-completion endpoint over a raw TcpListener.
//! Counts requests and replies per a scripted responder; used to test the
//! remote judge without any network dependency.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

pub enum MockReply {
    /// 200 with a well-formed chat-completion body carrying this content.
    Content(String),
    /// 200 with an arbitrary raw JSON body.
    RawJson(String),
    /// An HTTP error status with empty body.
    Status(u16),
}

type Responder = Box<dyn FnMut(&serde_json::Value) -> MockReply + Send>;

pub struct MockChatServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    last_authorization: Arc<Mutex<Option<String>>>,
    handle: Option<JoinHandle<()>>,
}

impl MockChatServer {
    pub fn start(responder: impl FnMut(&serde_json::Value) -> MockReply + Send + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let last_authorization = Arc::new(Mutex::new(None));

        let requests_thread = Arc::clone(&requests);
        let shutdown_thread = Arc::clone(&shutdown);
        let auth_thread = Arc::clone(&last_authorization);
        let responder: Arc<Mutex<Responder>> = Arc::new(Mutex::new(Box::new(responder)));
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shutdown_thread.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let requests = Arc::clone(&requests_thread);
                let responder = Arc::clone(&responder);
                // Handle each connection inline: tests issue requests
                // sequentially, and the client limits in-flight calls.
                if let Err(err) = handle_connection(stream, &requests, &responder, &auth_thread) {
                    eprintln!("mock server connection error: {err}");
                }
            }
        });

        Self {
            addr,
            requests,
            shutdown,
            last_authorization,
            handle: Some(handle),
        }
    }

    /// Authorization header of the most recent request, if any.
    pub fn last_authorization(&self) -> Option<String> {
        self.last_authorization.lock().unwrap().clone()
    }

    /// Mock endpoint that always answers with the letter for "first shown".
    pub fn always_first() -> Self {
        Self::start(|_| MockReply::Content("A".to_string()))
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockChatServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    requests: &AtomicUsize,
    responder: &Mutex<Responder>,
    last_authorization: &Mutex<Option<String>>,
) -> std::io::Result<()> {
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(()); // shutdown poke or client went away
        }
        buffer.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buffer) {
            break pos;
        }
        if buffer.len() > 1 << 20 {
            return Ok(());
        }
    };

    let headers = String::from_utf8_lossy(&buffer[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let authorization = headers.lines().find_map(|line| {
        let (name, value) = line.split_once(':')?;
        name.eq_ignore_ascii_case("authorization")
            .then(|| value.trim().to_string())
    });
    *last_authorization.lock().unwrap() = authorization;

    let body_start = header_end + 4;
    while buffer.len() < body_start + content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        buffer.extend_from_slice(&chunk[..n]);
    }
    let body: serde_json::Value =
        serde_json::from_slice(&buffer[body_start..body_start + content_length])
            .unwrap_or(serde_json::Value::Null);

    requests.fetch_add(1, Ordering::SeqCst);
    let reply = responder.lock().unwrap()(&body);
    let (status, payload) = match reply {
        MockReply::Content(content) => (
            200,
            serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": content}}]
            })
            .to_string(),
        ),
        MockReply::RawJson(raw) => (200, raw),
        MockReply::Status(code) => (code, String::new()),
    };
    let response = format!(
        "HTTP/1.1 {status} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        if status == 200 { "OK" } else { "Error" },
        payload.len(),
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()?;
    Ok(())
}

fn find_header_end(buffer: &[u8]) -> Option<usize> {
    buffer.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Extract the user prompt from a captured chat-completion request body.
pub fn prompt_of(body: &serde_json::Value) -> String {
    body.pointer("/messages/0/content")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string()
}

/// Write the three default-style template files into a directory and return
/// their paths.
pub fn write_templates(dir: &std::path::Path) -> (String, String, String) {
    let pairwise = dir.join("pairwise.txt");
    let relevance = dir.join("relevance.txt");
    let generation = dir.join("generation.txt");
    std::fs::write(
        &pairwise,
        "Which response expresses a greater degree of {attribute}?\n\nResponse A:\n{response_a}\n\nResponse B:\n{response_b}\n\nReply with a single letter: A or B.\n",
    )
    .unwrap();
    std::fs::write(
        &relevance,
        "Query:\n{query}\n\nResponse:\n{response}\n\nDoes the response address the query? Reply 1 for relevant or 0 for not.\n",
    )
    .unwrap();
    std::fs::write(
        &generation,
        "Answer the query in a way that is {degree_description}.\n\nQuery:\n{query}\n",
    )
    .unwrap();
    (
        pairwise.to_string_lossy().into_owned(),
        relevance.to_string_lossy().into_owned(),
        generation.to_string_lossy().into_owned(),
    )
}

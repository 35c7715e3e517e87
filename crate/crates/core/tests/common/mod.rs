#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use genpriv::corpus::{Dataset, DatasetKind, TextSample};

pub struct StubResponse {
    pub status: u16,
    pub body: Vec<u8>,
    pub delay: Duration,
}

impl StubResponse {
    pub fn status(status: u16) -> Self {
        Self { status, body: Vec::new(), delay: Duration::ZERO }
    }

    pub fn png(width: u32, height: u32) -> Self {
        let img = image::RgbImage::from_pixel(width, height, image::Rgb([10, 20, 30]));
        let mut body = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut body), image::ImageFormat::Png).unwrap();
        Self { status: 200, body, delay: Duration::ZERO }
    }
}

type Script = dyn Fn(usize, &serde_json::Value) -> StubResponse + Send + Sync;

/// Minimal HTTP/1.1 server answering each request through `script`, which
/// receives the 0-based request number and the parsed JSON body.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<serde_json::Value>>>,
    count: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start(script: impl Fn(usize, &serde_json::Value) -> StubResponse + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let count = Arc::new(AtomicUsize::new(0));
        let script: Arc<Script> = Arc::new(script);
        let (reqs, cnt) = (requests.clone(), count.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (script, reqs, cnt) = (script.clone(), reqs.clone(), cnt.clone());
                thread::spawn(move || {
                    let _ = serve(stream, &*script, &reqs, &cnt);
                });
            }
        });
        Self { url, requests, count }
    }

    pub fn request_count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

fn serve(
    stream: TcpStream,
    script: &Script,
    reqs: &Mutex<Vec<serde_json::Value>>,
    count: &AtomicUsize,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if !line.starts_with("POST ") {
        return Ok(());
    }
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    let n = count.fetch_add(1, Ordering::SeqCst);
    reqs.lock().unwrap().push(json.clone());
    let resp = script(n, &json);
    thread::sleep(resp.delay);
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} Stub\r\ncontent-type: image/png\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        resp.status,
        resp.body.len()
    )?;
    out.write_all(&resp.body)?;
    out.flush()
}

pub fn sample(id: &str, text: &str, label: usize) -> TextSample {
    TextSample {
        id: id.into(),
        raw_text: text.into(),
        clean_text: text.into(),
        prompt_text: text.into(),
        label,
        target_span: None,
        prompt_truncated: false,
    }
}

/// Five-sample binary dataset (3 train, 1 val, 1 test).
pub fn five_sample_dataset() -> Dataset {
    Dataset {
        name: "tiny".into(),
        kind: DatasetKind::Generic,
        k: 2,
        class_names: vec!["neg".into(), "pos".into()],
        train: vec![
            sample("t0", "a dull grey film", 0),
            sample("t1", "a bright sunny film", 1),
            sample("t2", "a dark rainy night", 0),
        ],
        val: vec![sample("v0", "a happy dog", 1)],
        test: vec![sample("x0", "a sad cat", 0)],
    }
}

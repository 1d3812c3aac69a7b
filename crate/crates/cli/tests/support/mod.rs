#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

pub const GOLDEN_FEED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/golden/feed_seed42.jsonl");

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    /// Temp dir holding a desk-scale config (finality depth 100) that points
    /// the log inside the dir.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ws = Self { dir };
        std::fs::write(
            ws.path("config.toml"),
            format!(
                "[scoring]\nfinality_depth = 100\n\n[paths]\nlog = {:?}\n",
                ws.path("state.log")
            ),
        )
        .unwrap();
        ws
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> String {
        self.path("config.toml").display().to_string()
    }

    pub fn log(&self) -> String {
        self.path("state.log").display().to_string()
    }

    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_reliablocks"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("RELIABLOCKS_CONFIG")
            .output()
            .unwrap()
    }

    pub fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    pub fn replay_golden(&self) -> String {
        self.run_ok(&["replay", "--events", GOLDEN_FEED, "--config", &self.config()])
    }

    pub fn write(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, body).unwrap();
        p
    }
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// A running `reliablocks serve` bound to an ephemeral port.
pub struct Server {
    child: Child,
    pub addr: String,
}

impl Server {
    pub fn start(ws: &Workspace) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_reliablocks"))
            .args(["serve", "--addr", "127.0.0.1:0", "--config", &ws.config()])
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).expect("listening line");
        let addr = v["listening"].as_str().unwrap().to_string();
        Self { child, addr }
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        http_request(&self.addr, "GET", path, "")
    }

    pub fn post(&self, path: &str, body: &str) -> (u16, String) {
        http_request(&self.addr, "POST", path, body)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn http_request(addr: &str, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").expect("header terminator");
    let status: u16 = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let chunked = head.to_ascii_lowercase().contains("transfer-encoding: chunked");
    let body = if chunked { dechunk(rest) } else { rest.to_string() };
    (status, body)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

pub fn exists(p: &Path) -> bool {
    p.exists()
}

//! Shared fixtures: a local attestation service, throwaway projects and
//! the CLI binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;

use tempfile::TempDir;
use veritas::bundle;
use veritas::client::HttpKeySource;
use veritas::service::{self, RunningService, Service};
use veritas::session_dir::SessionDir;
use veritas::verifier;
use veritas_core::verify::{BundleEntries, Verdict};

pub const PASSPHRASE: &[u8] = b"correct horse battery staple";

/// Two metrics, exits 0.
pub const TWO_METRICS: &str = "print('loss: 0.4213')\nprint('val_accuracy: 0.9132')\n";

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_veritas")
}

pub struct TestService {
    pub running: RunningService,
    pub dir: TempDir,
}

impl TestService {
    pub fn start() -> Self {
        let dir = TempDir::new().unwrap();
        let svc = Service::open(&dir.path().join("keystore.json"), "test-service", PASSPHRASE).unwrap();
        let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let running = service::spawn(Arc::new(svc), addr).unwrap();
        Self { running, dir }
    }

    pub fn url(&self) -> String {
        self.running.url()
    }

    pub fn service(&self) -> &Service {
        &self.running.service
    }

    pub fn keystore_path(&self) -> PathBuf {
        self.dir.path().join("keystore.json")
    }
}

/// One service per test binary; keygen dominates start-up.
pub fn shared_service() -> &'static TestService {
    static SVC: OnceLock<TestService> = OnceLock::new();
    SVC.get_or_init(TestService::start)
}

/// A scratch directory holding `project/` (the session) and room for
/// bundles next to it.
pub struct Project {
    pub tmp: TempDir,
}

impl Project {
    pub fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        fs::create_dir(tmp.path().join("project")).unwrap();
        Self { tmp }
    }

    pub fn path(&self) -> PathBuf {
        self.tmp.path().join("project")
    }

    pub fn outside(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> PathBuf {
        let p = self.path().join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).unwrap();
        }
        fs::write(&p, contents).unwrap();
        p
    }

    pub fn dir(&self) -> SessionDir {
        SessionDir::at(self.path())
    }

    pub fn command(&self, args: &[&str]) -> Command {
        let mut c = Command::new(bin());
        c.args(args)
            .current_dir(self.path())
            .env_remove("VERITAS_SERVICE")
            .env_remove("VERITAS_KEY_SERVICE")
            .stdin(Stdio::null());
        c
    }

    pub fn veritas(&self, args: &[&str]) -> Output {
        self.command(args).output().unwrap()
    }

    /// Runs the CLI and panics with its output unless it exits 0.
    pub fn ok(&self, args: &[&str]) -> Output {
        let out = self.veritas(args);
        assert!(
            out.status.success(),
            "veritas {args:?} failed: {:?}\nstdout: {}\nstderr: {}",
            out.status,
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    pub fn init(&self, extra: &[&str]) {
        let mut args = vec!["init"];
        args.extend_from_slice(extra);
        self.ok(&args);
    }

    pub fn append_config(&self, lines: &str) {
        let p = self.dir().config_path();
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str(lines);
        fs::write(p, text).unwrap();
    }

    pub fn run(&self, cmd: &[&str]) -> Output {
        let mut args = vec!["run", "--"];
        args.extend_from_slice(cmd);
        self.veritas(&args)
    }

    pub fn run_python(&self, script: &str) -> Output {
        self.run(&["python3", script])
    }

    pub fn seal(&self, url: &str, name: &str) -> PathBuf {
        let out = self.outside(name);
        self.ok(&["seal", "--service", url, "--output", out.to_str().unwrap()]);
        out
    }
}

/// Initializes, runs `train.py` (holding `script`) once and seals.
pub fn sealed_bundle(svc: &TestService, script: &str) -> (Project, Vec<u8>) {
    let p = Project::new();
    p.init(&[]);
    p.write("train.py", script);
    assert!(p.run_python("train.py").status.success());
    let path = p.seal(&svc.url(), "session.bundle");
    let bytes = fs::read(path).unwrap();
    (p, bytes)
}

pub fn verify(bytes: &[u8], svc: &TestService) -> Verdict {
    verifier::verify_bundle_bytes(bytes, &HttpKeySource::new(svc.url())).unwrap()
}

pub fn entries(bytes: &[u8]) -> BundleEntries {
    bundle::read_bundle(bytes).unwrap()
}

/// Rewrites a bundle after `edit`, keeping the canonical container layout.
pub fn rezip(bytes: &[u8], edit: impl FnOnce(&mut BTreeMap<String, Vec<u8>>)) -> Vec<u8> {
    let mut e = entries(bytes);
    edit(&mut e);
    bundle::write_bundle(&e).unwrap()
}

pub fn replace_once(data: &[u8], from: &str, to: &str) -> Vec<u8> {
    let text = String::from_utf8(data.to_vec()).unwrap();
    assert_eq!(text.matches(from).count(), 1, "`{from}` must occur exactly once");
    text.replacen(from, to, 1).into_bytes()
}

pub fn codes(v: &Verdict) -> Vec<String> {
    v.failures.iter().map(|f| f.code.to_string()).collect()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

pub fn walk_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let t = e.file_type().unwrap();
            if t.is_dir() {
                stack.push(e.path());
            } else if t.is_file() {
                out.push(e.path());
            }
        }
    }
    out.sort();
    out
}

/// Forwards connections to `upstream`, recording what clients send.
pub fn recording_proxy(upstream: SocketAddr) -> (String, Arc<Mutex<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let rec = log.clone();
    thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(mut client) = conn else { break };
            let mut server = TcpStream::connect(upstream).unwrap();
            let (mut c2, mut s2) = (client.try_clone().unwrap(), server.try_clone().unwrap());
            let rec = rec.clone();
            thread::spawn(move || {
                let mut buf = [0u8; 8192];
                loop {
                    match client.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => {
                            rec.lock().unwrap().extend_from_slice(&buf[..n]);
                            if server.write_all(&buf[..n]).is_err() {
                                break;
                            }
                        }
                    }
                }
                let _ = server.shutdown(Shutdown::Write);
            });
            thread::spawn(move || {
                let _ = std::io::copy(&mut s2, &mut c2);
                let _ = c2.shutdown(Shutdown::Write);
            });
        }
    });
    (url, log)
}

/// Splits captured HTTP/1.1 traffic into (request line, body) pairs.
pub fn requests(mut raw: &[u8]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    while !raw.is_empty() {
        let end = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("complete header") + 4;
        let head = String::from_utf8(raw[..end].to_vec()).unwrap();
        let line = head.lines().next().unwrap().to_string();
        let lower = head.to_ascii_lowercase();
        assert!(!lower.contains("transfer-encoding"), "{head}");
        let len: usize = lower
            .lines()
            .find_map(|l| l.strip_prefix("content-length:"))
            .map(|v| v.trim().parse().unwrap())
            .unwrap_or(0);
        out.push((line, raw[end..end + len].to_vec()));
        raw = &raw[end + len..];
    }
    out
}

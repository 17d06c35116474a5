//! Running the `wordica` binary and talking to `wordica serve`.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use serde_json::Value;
use wordica::embedding_io::write_text_embeddings;

use super::FeatureFixture;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_wordica")
}

/// Runs the binary and returns its output whatever the exit status.
pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn wordica")
}

/// Runs the binary, failing unless it exits 0.
pub fn wordica(args: &[&str]) -> Result<Output, String> {
    let out = run(args);
    if !out.status.success() {
        return Err(format!(
            "wordica {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub const FIXTURE_WORDS: usize = 1000;
pub const FIXTURE_FEATURES: usize = 10;

/// Small feature fixture written as a word2vec text file.
pub fn write_fixture(dir: &Path) -> PathBuf {
    let fixture = FeatureFixture::build(FIXTURE_WORDS, FIXTURE_FEATURES, 16, 0.05, 8);
    let path = dir.join("toy.vec");
    write_text_embeddings(&path, &fixture.vocab, &fixture.embeddings).unwrap();
    path
}

pub struct Server {
    child: Child,
    pub base: String,
}

impl Server {
    pub fn start(model: &Path, items: &Path, store: &Path) -> Result<Self, String> {
        Self::start_with(&[
            "serve", "--model", p(model), "--items", p(items), "--store", p(store), "--port", "0",
        ])
    }

    pub fn start_with(args: &[&str]) -> Result<Self, String> {
        let mut child = Command::new(bin())
            .args(args)
            .stderr(Stdio::piped())
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let stderr = child.stderr.take().unwrap();
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let mut tx = Some(tx);
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                if let Some(addr) = line.strip_prefix("listening on ") {
                    if let Some(tx) = tx.take() {
                        let _ = tx.send(addr.to_string());
                    }
                }
            }
        });
        match rx.recv_timeout(Duration::from_secs(30)) {
            Ok(base) => Ok(Server { child, base }),
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err("service did not report its address".into())
            }
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// SIGKILL, no graceful shutdown.
    pub fn kill(self) {}
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn http() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .unwrap()
}

pub fn get_json(client: &reqwest::blocking::Client, url: &str) -> Result<Value, String> {
    client
        .get(url)
        .send()
        .and_then(|r| r.error_for_status())
        .and_then(|r| r.json())
        .map_err(|e| format!("GET {url}: {e}"))
}

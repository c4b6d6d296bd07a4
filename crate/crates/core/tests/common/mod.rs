#![allow(dead_code)]

use std::fs;
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

pub const EFSD: &str = env!("CARGO_BIN_EXE_efsd");
pub const EFS: &str = env!("CARGO_BIN_EXE_efs");

/// A daemon process on a private socket. Killed on drop.
pub struct DaemonProcess {
    pub child: Child,
    pub endpoint: PathBuf,
    pub log: PathBuf,
}

impl DaemonProcess {
    pub fn start(dir: &Path, envs: &[(&str, &str)]) -> Self {
        let endpoint = dir.join("efsd.sock");
        let log = dir.join(format!("efsd-{:x}.log", rand_suffix()));
        let mut cmd = Command::new(EFSD);
        cmd.env_remove("EFS_ENDPOINT")
            .arg("--endpoint")
            .arg(&endpoint)
            .env("RUST_LOG", "debug")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(fs::File::create(&log).unwrap());
        for (k, v) in envs {
            cmd.env(k, v);
        }
        let child = cmd.spawn().expect("spawn efsd");
        let deadline = Instant::now() + Duration::from_secs(10);
        while UnixStream::connect(&endpoint).is_err() {
            assert!(Instant::now() < deadline, "efsd did not come up");
            thread::sleep(Duration::from_millis(10));
        }
        DaemonProcess { child, endpoint, log }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    pub fn log_text(&self) -> Vec<u8> {
        fs::read(&self.log).unwrap_or_default()
    }
}

fn rand_suffix() -> u128 {
    use rand::Rng;
    rand::thread_rng().gen()
}

impl Drop for DaemonProcess {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Returns true if `needle` occurs anywhere in `haystack`.
pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

mod common;

use std::fs;
use std::io::Write;
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use common::{contains, DaemonProcess, EFS};

const KEY: &str = "This is Encrypted File System";

fn efs_as(bin: &str, endpoint: &Path, args: &[&str], stdin: &[u8], uid: Option<u32>) -> Output {
    let mut cmd = Command::new(bin);
    cmd.env_remove("EFS_ENDPOINT")
        .arg("--endpoint")
        .arg(endpoint)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(uid) = uid {
        cmd.uid(uid).gid(uid);
    }
    let mut child = cmd.spawn().unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn efs(endpoint: &Path, args: &[&str], stdin: &[u8]) -> Output {
    efs_as(EFS, endpoint, args, stdin, None)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn emkdir(endpoint: &Path, dir: &Path, first: &str, second: &str) -> Output {
    efs(endpoint, &["emkdir", dir.to_str().unwrap(), "--passphrase-fd", "0"], format!("{first}\n{second}\n").as_bytes())
}

fn attach(endpoint: &Path, dir: &Path, name: &str, key: &str, extra: &[&str]) -> Output {
    let mut args = vec!["attach", dir.to_str().unwrap(), name, "--passphrase-fd", "0"];
    args.extend_from_slice(extra);
    efs(endpoint, &args, format!("{key}\n").as_bytes())
}

struct Env {
    tmp: tempfile::TempDir,
    daemon: DaemonProcess,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o755)).unwrap();
        let daemon = DaemonProcess::start(tmp.path(), &[]);
        Env { tmp, daemon }
    }

    fn ep(&self) -> &Path {
        &self.daemon.endpoint
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }
}

#[test]
fn emkdir_rules() {
    let env = Env::new();
    let dir = env.path("efs");

    let o = emkdir(env.ep(), &dir, KEY, "This is Encrypted File Systen");
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("do not match"));
    assert!(!dir.exists());

    let o = emkdir(env.ep(), &dir, "fifteen chars!!", "fifteen chars!!");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 16"));
    assert!(!dir.exists());

    let o = emkdir(env.ep(), &dir, "sixteen chars!!!", "sixteen chars!!!");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let entries: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec!["=efs-validator="]);

    let busy = env.path("busy");
    fs::create_dir(&busy).unwrap();
    fs::write(busy.join("keep"), b"keep me").unwrap();
    let o = emkdir(env.ep(), &busy, KEY, KEY);
    assert_ne!(o.status.code(), Some(0));
    assert_eq!(fs::read_dir(&busy).unwrap().count(), 1);

    let o = efs(env.ep(), &["emkdir", env.path("x").to_str().unwrap(), "--passphrase-fd", "0"], format!("{KEY}\n").as_bytes());
    assert_eq!(o.status.code(), Some(1), "one line is not enough for emkdir");
}

#[test]
fn attach_and_detach() {
    let env = Env::new();
    let dir = env.path("efs");
    assert!(emkdir(env.ep(), &dir, KEY, KEY).status.success());

    let o = attach(env.ep(), &dir, "aks", "This is Encrypted File Systen", &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("incorrect key"));

    let o = attach(env.ep(), &dir, "aks", KEY, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = attach(env.ep(), &dir, "aks", KEY, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EXIST"));

    let o = efs(env.ep(), &["list"], b"");
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "aks\n");

    assert_eq!(efs(env.ep(), &["detach", "aks"], b"").status.code(), Some(0));
    let o = efs(env.ep(), &["detach", "aks"], b"");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NOENT"));
}

#[test]
fn relative_backing_path_is_resolved_by_the_client() {
    let env = Env::new();
    assert!(emkdir(env.ep(), &env.path("rel"), KEY, KEY).status.success());
    let o = Command::new(EFS)
        .current_dir(env.tmp.path())
        .args(["--endpoint", env.ep().to_str().unwrap(), "attach", "rel", "r", "--passphrase-fd", "0"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .and_then(|mut c| {
            c.stdin.take().unwrap().write_all(format!("{KEY}\n").as_bytes())?;
            c.wait_with_output()
        })
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn file_commands_roundtrip() {
    let env = Env::new();
    let dir = env.path("efs");
    assert!(emkdir(env.ep(), &dir, KEY, KEY).status.success());
    assert!(attach(env.ep(), &dir, "aks", KEY, &[]).status.success());

    assert!(efs(env.ep(), &["mkdir", "aks/src"], b"").status.success());
    let body = b"int main() { return 0; }\n".repeat(50);
    let o = efs(env.ep(), &["put", "aks/src/main.c"], &body);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(efs(env.ep(), &["cat", "aks/src/main.c"], b"").stdout, body);
    assert_eq!(String::from_utf8(efs(env.ep(), &["ls", "aks"], b"").stdout).unwrap(), "src/\n");
    assert_eq!(String::from_utf8(efs(env.ep(), &["ls", "aks/src"], b"").stdout).unwrap(), "main.c\n");

    let o = efs(env.ep(), &["rm", "aks/src"], b"");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NOTEMPTY"));
    assert!(efs(env.ep(), &["rm", "aks/src/main.c"], b"").status.success());
    assert!(efs(env.ep(), &["rm", "aks/src"], b"").status.success());
    assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
}

#[test]
fn passphrase_never_leaks() {
    let env = Env::new();
    let dir = env.path("efs");
    let outputs = vec![emkdir(env.ep(), &dir, KEY, KEY), attach(env.ep(), &dir, "aks", KEY, &[]), attach(env.ep(), &dir, "bad", "wrong wrong wrong wrong", &[])];
    for o in &outputs {
        assert!(!contains(&o.stdout, KEY.as_bytes()));
        assert!(!contains(&o.stderr, KEY.as_bytes()));
    }
    // Make sure the daemon has flushed its log lines for the attaches.
    efs(env.ep(), &["list"], b"");
    let log = env.daemon.log_text();
    assert!(contains(&log, b"attached"), "daemon log is empty?");
    assert!(!contains(&log, KEY.as_bytes()));
    assert!(!contains(&log, b"wrong wrong"));
}

#[test]
fn other_users_cannot_detach() {
    if !efs::daemon::Caller::current().is_root() {
        eprintln!("skipped: needs root to act as a second user");
        return;
    }
    let env = Env::new();
    let dir = env.path("efs");
    assert!(emkdir(env.ep(), &dir, KEY, KEY).status.success());
    assert!(attach(env.ep(), &dir, "aks", KEY, &[]).status.success());
    assert!(attach(env.ep(), &env.path("efs"), "hidden", KEY, &["--obscure"]).status.success());

    // A copy the unprivileged user can execute.
    let bin = env.path("efs-bin");
    fs::copy(EFS, &bin).unwrap();
    fs::set_permissions(&bin, fs::Permissions::from_mode(0o755)).unwrap();
    let bin = bin.to_str().unwrap();

    let o = efs_as(bin, env.ep(), &["detach", "aks"], b"", Some(65534));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("ACCES"));
    let o = efs_as(bin, env.ep(), &["list"], b"", Some(65534));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "aks\n");
    let o = efs_as(bin, env.ep(), &["ls", "aks"], b"", Some(65534));
    assert!(stderr(&o).contains("ACCES"));
    let o = efs_as(bin, env.ep(), &["ls", "hidden"], b"", Some(65534));
    assert!(stderr(&o).contains("NOENT"));
    assert_eq!(String::from_utf8(efs(env.ep(), &["list"], b"").stdout).unwrap(), "aks\nhidden\n");
}

#[test]
fn unreachable_daemon_is_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = efs(&tmp.path().join("nobody-home.sock"), &["list"], b"");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot reach daemon"));
}

#[test]
fn bench_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ep = tmp.path().join("unused.sock");
    let o = efs(&ep, &["bench", "space"], b"");
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("size_in,size_out,ratio\n0,32,\n1,48,48.0000\n909,944,"), "{csv}");

    let o = efs(&ep, &["bench", "space", "--mode", "ascii", "--sizes", "909", "--json"], b"");
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json[0]["size_out"], 1248);

    let o = efs(&ep, &["bench", "time", "--reps", "3", "--sizes", "16,4096"], b"");
    let csv = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "size_in,median_ns,ns_per_byte,baseline_ns");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("4096,"));
}

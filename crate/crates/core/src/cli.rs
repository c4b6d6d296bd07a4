//! The `efs` command-line tool.
//!
//! Key material is read either from a no-echo terminal prompt or, with
//! `--passphrase-fd N`, from an inherited file descriptor holding one
//! passphrase per line. It is never accepted as an argument.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Read, Write};
use std::os::unix::ffi::OsStrExt;
use std::os::unix::io::FromRawFd;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use zeroize::Zeroizing;

use crate::bench::{self, Mode, REFERENCE_RATIO, REFERENCE_SIZES};
use crate::client::{Client, ClientError};
use crate::daemon::{DaemonConfig, FileKind};
use crate::server;
use crate::validator::{self, InitError};
use crate::wire::{Passphrase, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DAEMON: i32 = 2;
pub const EXIT_BAD_KEY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "efs", version, about = "Manage encrypted directories served by efsd")]
struct Cli {
    /// Daemon socket (default: $EFS_ENDPOINT or /tmp/efsd.sock)
    #[arg(long, global = true)]
    endpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct KeySource {
    /// Read the passphrase from this inherited file descriptor, one per line
    #[arg(long, value_name = "FD")]
    passphrase_fd: Option<i32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create a new encrypted directory (asks for the passphrase twice)
    Emkdir {
        dir: PathBuf,
        #[command(flatten)]
        key: KeySource,
    },
    /// Attach an encrypted directory under the daemon's virtual root
    Attach {
        backing_dir: PathBuf,
        name: OsString,
        /// Hide the attach from other users' listings
        #[arg(long)]
        obscure: bool,
        #[command(flatten)]
        key: KeySource,
    },
    /// Remove an attach
    Detach { name: OsString },
    /// List visible attaches
    List,
    /// List a directory, e.g. `ls name/sub`
    Ls { path: OsString },
    /// Print a file
    Cat { path: OsString },
    /// Store standard input as a new file
    Put { path: OsString },
    /// Create a directory
    Mkdir { path: OsString },
    /// Remove a file or empty directory
    Rm { path: OsString },
    /// Measure storage expansion or write time
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Stored size versus input size
    Space {
        #[arg(long, value_enum, default_value_t = BenchMode::Binary)]
        mode: BenchMode,
        /// Comma-separated input sizes in bytes
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u64>>,
        #[arg(long)]
        json: bool,
    },
    /// Median write time versus input size
    Time {
        #[arg(long, default_value_t = 501)]
        reps: usize,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u64>>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BenchMode {
    Binary,
    Ascii,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
    fn daemon(message: impl Into<String>) -> Self {
        Failure { code: EXIT_DAEMON, message: message.into() }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e.status() {
            Some(Status::BadKey) => Failure { code: EXIT_BAD_KEY, message: "incorrect key".into() },
            Some(status) => Failure::daemon(status_message(status)),
            None => Failure::daemon(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::daemon(e.to_string())
    }
}

fn status_message(status: Status) -> String {
    let text = match status {
        Status::Ok => "success",
        Status::NoEnt => "no such file, directory or attach",
        Status::Acces => "permission denied",
        Status::BadKey => "incorrect key",
        Status::Stale => "stale file handle",
        Status::Io => "I/O error in the daemon",
        Status::Exist => "already exists",
        Status::NotDir => "not a directory (or not an encrypted directory)",
        Status::IsDir => "is a directory",
        Status::NameTooLong => "name too long",
        Status::NotEmpty => "directory not empty",
        Status::CrossAttach => "cannot move between attaches",
        Status::BadMsg => "invalid request",
    };
    format!("{text} ({status})")
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("efs: {}", f.message);
            f.code
        }
    }
}

fn read_passphrases(source: KeySource, prompts: &[&str]) -> Result<Vec<Zeroizing<Vec<u8>>>, Failure> {
    match source.passphrase_fd {
        Some(fd) => {
            if fd < 0 {
                return Err(Failure::usage("--passphrase-fd must be a file descriptor number"));
            }
            // SAFETY: the caller handed us this descriptor for exactly this
            // purpose; nothing else in the process uses it.
            let mut file = unsafe { File::from_raw_fd(fd) };
            let mut raw = Zeroizing::new(Vec::new());
            file.read_to_end(&mut raw).map_err(|e| Failure::usage(format!("cannot read passphrase from fd {fd}: {e}")))?;
            let text = raw.strip_suffix(b"\n").unwrap_or(&raw);
            let lines: Vec<&[u8]> = if raw.is_empty() { Vec::new() } else { text.split(|&b| b == b'\n').collect() };
            if lines.len() < prompts.len() {
                return Err(Failure::usage(format!("expected {} passphrase line(s) on fd {fd}", prompts.len())));
            }
            let out = lines[..prompts.len()]
                .iter()
                .map(|line| Zeroizing::new(line.strip_suffix(b"\r").unwrap_or(line).to_vec()))
                .collect();
            Ok(out)
        }
        None => prompts
            .iter()
            .map(|p| {
                rpassword::prompt_password(p)
                    .map(|s| Zeroizing::new(s.into_bytes()))
                    .map_err(|e| Failure::usage(format!("cannot read passphrase: {e}")))
            })
            .collect(),
    }
}

fn connect(endpoint: &Path) -> Result<Client, Failure> {
    Client::connect(endpoint).map_err(|e| Failure::daemon(format!("cannot reach daemon at {}: {e}", endpoint.display())))
}

fn split_parent(path: &[u8]) -> Result<(&[u8], &[u8]), Failure> {
    let trimmed = path.strip_suffix(b"/").unwrap_or(path);
    match trimmed.iter().rposition(|&b| b == b'/') {
        Some(i) if !trimmed[i + 1..].is_empty() => Ok((&trimmed[..i], &trimmed[i + 1..])),
        _ => Err(Failure::usage("path must be <attach>/<name>")),
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let endpoint = cli.endpoint.unwrap_or_else(server::endpoint_from_env);
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Emkdir { dir, key } => {
            let config = DaemonConfig::from_env().map_err(Failure::usage)?;
            let phrases = read_passphrases(key, &["Key: ", "Again: "])?;
            if phrases[0] != phrases[1] {
                return Err(Failure::usage("passphrases do not match"));
            }
            validator::create_encrypted_dir(&dir, &phrases[0], config.kdf_iterations, config.mask_blocks).map_err(|e| match e {
                InitError::PassphraseTooShort => Failure::usage(e.to_string()),
                _ => Failure::daemon(e.to_string()),
            })?;
        }
        Command::Attach { backing_dir, name, obscure, key } => {
            let backing = std::path::absolute(&backing_dir)?;
            let mut phrase = read_passphrases(key, &["Key: "])?;
            let passphrase = Passphrase::new(std::mem::take(&mut *phrase[0]));
            let mut client = connect(&endpoint)?;
            client.attach(backing.as_os_str().as_bytes(), name.as_bytes(), passphrase, obscure)?;
        }
        Command::Detach { name } => connect(&endpoint)?.detach(name.as_bytes())?,
        Command::List => {
            for name in connect(&endpoint)?.list_attaches()? {
                out.write_all(&name)?;
                out.write_all(b"\n")?;
            }
        }
        Command::Ls { path } => {
            let mut client = connect(&endpoint)?;
            let (dir, _) = client.walk(path.as_bytes())?;
            for entry in client.readdir_all(&dir)? {
                let suffix: &[u8] = match entry.kind {
                    FileKind::Dir => b"/",
                    FileKind::Symlink => b"@",
                    FileKind::File => b"",
                };
                out.write_all(&entry.name)?;
                out.write_all(suffix)?;
                out.write_all(b"\n")?;
            }
        }
        Command::Cat { path } => {
            let mut client = connect(&endpoint)?;
            let (h, _) = client.walk(path.as_bytes())?;
            out.write_all(&client.read_to_end(&h, 0)?)?;
        }
        Command::Put { path } => {
            let (parent, name) = split_parent(path.as_bytes())?;
            let mut data = Vec::new();
            io::stdin().read_to_end(&mut data)?;
            let mut client = connect(&endpoint)?;
            let (dir, _) = client.walk(parent)?;
            let h = client.create(&dir, name, 0o644)?;
            client.write_all(&h, 0, &data)?;
        }
        Command::Mkdir { path } => {
            let (parent, name) = split_parent(path.as_bytes())?;
            let mut client = connect(&endpoint)?;
            let (dir, _) = client.walk(parent)?;
            client.mkdir(&dir, name, 0o755)?;
        }
        Command::Rm { path } => {
            let (parent, name) = split_parent(path.as_bytes())?;
            let mut client = connect(&endpoint)?;
            let (dir, _) = client.walk(parent)?;
            client.remove(&dir, name)?;
        }
        Command::Bench { which } => run_bench(which, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn run_bench(which: BenchCommand, out: &mut impl Write) -> Result<(), Failure> {
    match which {
        BenchCommand::Space { mode, sizes, json } => {
            let mode = match mode {
                BenchMode::Binary => Mode::Binary,
                BenchMode::Ascii => Mode::Ascii,
            };
            let sizes = sizes.unwrap_or_else(|| {
                let mut v = vec![0, 1];
                v.extend(REFERENCE_SIZES);
                v
            });
            let rows = bench::run_space_bench(&sizes, mode)?;
            if json {
                writeln!(out, "{}", bench::to_json(&rows))?;
            } else {
                write!(out, "{}", bench::space_csv(&rows))?;
            }
            eprintln!("note: a historical measurement of this scheme reported about {REFERENCE_RATIO}x expansion; neither storage mode reproduces it");
        }
        BenchCommand::Time { reps, sizes, json } => {
            let sizes = sizes.unwrap_or_else(|| REFERENCE_SIZES.to_vec());
            let rows = bench::run_time_bench(&sizes, reps)?;
            if json {
                writeln!(out, "{}", bench::to_json(&rows))?;
            } else {
                write!(out, "{}", bench::time_csv(&rows))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["efs"]), EXIT_USAGE);
        assert_eq!(run(["efs", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["efs", "attach", "/tmp"]), EXIT_USAGE);
    }

    #[test]
    fn no_passphrase_argument_exists() {
        assert_eq!(run(["efs", "emkdir", "/tmp/x", "--passphrase", "0123456789abcdef"]), EXIT_USAGE);
    }

    #[test]
    fn status_maps_to_exit_code() {
        assert_eq!(Failure::from(ClientError::Status(Status::BadKey)).code, EXIT_BAD_KEY);
        let f = Failure::from(ClientError::Status(Status::Exist));
        assert_eq!(f.code, EXIT_DAEMON);
        assert!(f.message.contains("EXIST"));
    }

    #[test]
    fn split_parent_paths() {
        assert_eq!(split_parent(b"a/b").ok(), Some((&b"a"[..], &b"b"[..])));
        assert_eq!(split_parent(b"a/b/c/").ok(), Some((&b"a/b"[..], &b"c"[..])));
        assert!(split_parent(b"a").is_err());
    }
}

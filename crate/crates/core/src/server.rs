//! Local endpoint for the daemon: a Unix socket whose peers are identified
//! by the kernel-reported credentials of the connecting process.

use std::ffi::OsStr;
use std::fs;
use std::io::{self, ErrorKind, Read, Write};
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::{FileTypeExt, PermissionsExt};
use std::os::unix::io::AsRawFd;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use zeroize::Zeroizing;

use crate::daemon::{Caller, Daemon, FsError};
use crate::wire::{self, Reply, Request, Status, MAX_FRAME_LEN, MAX_IO_LEN};

pub const DEFAULT_ENDPOINT: &str = "/tmp/efsd.sock";

/// `EFS_ENDPOINT` if set, otherwise [`DEFAULT_ENDPOINT`].
pub fn endpoint_from_env() -> PathBuf {
    std::env::var_os("EFS_ENDPOINT").map(PathBuf::from).unwrap_or_else(|| DEFAULT_ENDPOINT.into())
}

/// Runs one decoded request against the daemon.
pub fn dispatch(daemon: &Daemon, caller: Caller, request: Request) -> Result<Reply, FsError> {
    Ok(match request {
        Request::Attach { backing_dir, name, passphrase, obscure } => {
            let path = Path::new(OsStr::from_bytes(&backing_dir));
            Reply::Handle(daemon.attach(path, &name, passphrase.as_bytes(), obscure, caller)?)
        }
        Request::Detach { name } => {
            daemon.detach(&name, caller)?;
            Reply::Empty
        }
        Request::Lookup { dir, name } => {
            let (h, attrs) = daemon.lookup(&dir, &name, caller)?;
            Reply::Entry(h, attrs)
        }
        Request::GetAttr { handle } => Reply::Attrs(daemon.getattr(&handle, caller)?),
        Request::Read { handle, offset, count } => {
            Reply::Data(daemon.read(&handle, offset, count.min(MAX_IO_LEN as u64), caller)?)
        }
        Request::Write { handle, offset, data } => Reply::Count(daemon.write(&handle, offset, &data, caller)?),
        Request::Create { dir, name, mode } => Reply::Handle(daemon.create(&dir, &name, mode, caller)?),
        Request::Mkdir { dir, name, mode } => Reply::Handle(daemon.mkdir(&dir, &name, mode, caller)?),
        Request::Remove { dir, name } => {
            daemon.remove_entry(&dir, &name, caller)?;
            Reply::Empty
        }
        Request::Rename { src_dir, src_name, dst_dir, dst_name } => {
            daemon.rename_entry(&src_dir, &src_name, &dst_dir, &dst_name, caller)?;
            Reply::Empty
        }
        Request::ReadDir { dir, cursor, max_entries } => {
            let max = (max_entries as usize).clamp(1, 4096);
            Reply::DirPage(daemon.readdir(&dir, cursor, max, caller)?)
        }
        Request::Symlink { dir, name, target } => Reply::Handle(daemon.symlink(&dir, &name, &target, caller)?),
        Request::ReadLink { handle } => Reply::Target(daemon.readlink(&handle, caller)?),
        Request::ListAttaches => Reply::Names(daemon.list_attaches(caller)),
    })
}

/// Decodes and answers one frame body (the bytes after `frame_len`).
pub fn answer_frame(daemon: &Daemon, caller: Caller, body: &[u8]) -> Vec<u8> {
    match wire::decode_request_body(body) {
        Ok(frame) => {
            let op = frame.request.opcode();
            match dispatch(daemon, caller, frame.request) {
                Ok(reply) => wire::encode_response(frame.xid, Status::Ok, &reply.encode()),
                Err(e) => {
                    log::debug!("xid {} {op:?}: {e}", frame.xid);
                    wire::encode_response(frame.xid, Status::from(&e), &[])
                }
            }
        }
        Err(e) => {
            log::debug!("malformed request: {e}");
            wire::encode_response(wire::body_xid(body).unwrap_or(0), Status::BadMsg, &[])
        }
    }
}

/// Serves frames from `input` until end of stream. A frame whose length
/// field is out of range cannot be resynchronized, so it gets one BADMSG
/// reply (xid 0) and the stream is closed.
pub fn process_stream<R: Read, W: Write>(daemon: &Daemon, caller: Caller, mut input: R, mut output: W) -> io::Result<()> {
    loop {
        let mut len = [0u8; 4];
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        }
        let len = u32::from_be_bytes(len);
        if (len as usize) < wire::FRAME_HEADER_LEN || len > MAX_FRAME_LEN {
            output.write_all(&wire::encode_response(0, Status::BadMsg, &[]))?;
            output.flush()?;
            return Ok(());
        }
        // ATTACH bodies carry passphrases.
        let mut body = Zeroizing::new(vec![0u8; len as usize]);
        match input.read_exact(&mut body) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        }
        output.write_all(&answer_frame(daemon, caller, &body))?;
        output.flush()?;
    }
}

/// Uid of the process on the other end of `stream`.
pub fn peer_uid(stream: &UnixStream) -> io::Result<u32> {
    let mut cred = libc::ucred { pid: 0, uid: 0, gid: 0 };
    let mut len = std::mem::size_of::<libc::ucred>() as libc::socklen_t;
    // SAFETY: `cred` and `len` are valid for writes and sized for SO_PEERCRED.
    let rc = unsafe {
        libc::getsockopt(
            stream.as_raw_fd(),
            libc::SOL_SOCKET,
            libc::SO_PEERCRED,
            &mut cred as *mut libc::ucred as *mut libc::c_void,
            &mut len,
        )
    };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(cred.uid)
}

pub struct Server {
    listener: UnixListener,
    path: PathBuf,
}

impl Server {
    /// Binds `path`, replacing a leftover socket from a previous run. Any
    /// local user may connect; callers are told apart by peer credentials.
    pub fn bind(path: &Path) -> io::Result<Self> {
        if let Ok(meta) = fs::symlink_metadata(path) {
            if !meta.file_type().is_socket() {
                return Err(io::Error::new(ErrorKind::AlreadyExists, format!("{} exists and is not a socket", path.display())));
            }
            if UnixStream::connect(path).is_ok() {
                return Err(io::Error::new(ErrorKind::AddrInUse, format!("a daemon is already listening on {}", path.display())));
            }
            fs::remove_file(path)?;
        }
        let listener = UnixListener::bind(path)?;
        fs::set_permissions(path, fs::Permissions::from_mode(0o666))?;
        Ok(Server { listener, path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Accepts connections forever, one thread each.
    pub fn serve(&self, daemon: Arc<Daemon>) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let uid = match peer_uid(&stream) {
                Ok(uid) => uid,
                Err(e) => {
                    log::warn!("dropping connection without credentials: {e}");
                    continue;
                }
            };
            let daemon = Arc::clone(&daemon);
            thread::spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(r) => io::BufReader::new(r),
                    Err(e) => {
                        log::warn!("{e}");
                        return;
                    }
                };
                let writer = io::BufWriter::new(stream);
                if let Err(e) = process_stream(&daemon, Caller(uid), reader, writer) {
                    log::debug!("connection from uid {uid} ended: {e}");
                }
            });
        }
        Ok(())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

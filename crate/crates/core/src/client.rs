//! Blocking client for the daemon endpoint, used by the command-line tool
//! and the integration tests.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;

use thiserror::Error;

use crate::daemon::{Attributes, DirEntry, FileHandle, ReadDirPage};
use crate::wire::{self, Passphrase, Reply, Request, Status, WireError, MAX_FRAME_LEN, MAX_IO_LEN};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{0}")]
    Status(Status),
    #[error("protocol error: {0}")]
    Wire(#[from] WireError),
    #[error("response xid {got} does not match request xid {want}")]
    XidMismatch { want: u32, got: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<Status> {
        match self {
            ClientError::Status(s) => Some(*s),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    reader: BufReader<UnixStream>,
    writer: BufWriter<UnixStream>,
    next_xid: u32,
}

impl Client {
    pub fn connect(endpoint: &Path) -> io::Result<Self> {
        let stream = UnixStream::connect(endpoint)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_xid: 1,
        })
    }

    /// Sends one pre-encoded frame and returns the raw response frame.
    pub fn roundtrip_raw(&mut self, frame: &[u8]) -> io::Result<Vec<u8>> {
        self.writer.write_all(frame)?;
        self.writer.flush()?;
        self.read_frame()
    }

    fn read_frame(&mut self) -> io::Result<Vec<u8>> {
        let mut len = [0u8; 4];
        self.reader.read_exact(&mut len)?;
        let n = u32::from_be_bytes(len);
        if n > MAX_FRAME_LEN {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "oversized response frame"));
        }
        let mut frame = vec![0u8; 4 + n as usize];
        frame[..4].copy_from_slice(&len);
        self.reader.read_exact(&mut frame[4..])?;
        Ok(frame)
    }

    pub fn call(&mut self, request: Request) -> Result<Reply> {
        let xid = self.next_xid;
        self.next_xid = self.next_xid.wrapping_add(1);
        let op = request.opcode();
        let frame = zeroize::Zeroizing::new(wire::encode_request(xid, &request));
        drop(request);
        let resp = wire::decode_response(&self.roundtrip_raw(&frame)?)?;
        if resp.xid != xid {
            return Err(ClientError::XidMismatch { want: xid, got: resp.xid });
        }
        if resp.status != Status::Ok {
            return Err(ClientError::Status(resp.status));
        }
        Ok(Reply::decode(op, &resp.payload)?)
    }

    // `Reply::decode` already picks the shape from the opcode, so this only
    // fires on a bug.
    fn unexpected<T>() -> Result<T> {
        Err(WireError::Malformed("unexpected reply shape").into())
    }

    fn handle(&mut self, request: Request) -> Result<FileHandle> {
        match self.call(request)? {
            Reply::Handle(h) => Ok(h),
            _ => Self::unexpected(),
        }
    }

    fn empty(&mut self, request: Request) -> Result<()> {
        match self.call(request)? {
            Reply::Empty => Ok(()),
            _ => Self::unexpected(),
        }
    }

    pub fn attach(&mut self, backing_dir: &[u8], name: &[u8], passphrase: Passphrase, obscure: bool) -> Result<FileHandle> {
        self.handle(Request::Attach { backing_dir: backing_dir.to_vec(), name: name.to_vec(), passphrase, obscure })
    }

    pub fn detach(&mut self, name: &[u8]) -> Result<()> {
        self.empty(Request::Detach { name: name.to_vec() })
    }

    pub fn lookup(&mut self, dir: &FileHandle, name: &[u8]) -> Result<(FileHandle, Attributes)> {
        match self.call(Request::Lookup { dir: *dir, name: name.to_vec() })? {
            Reply::Entry(h, a) => Ok((h, a)),
            _ => Self::unexpected(),
        }
    }

    pub fn getattr(&mut self, handle: &FileHandle) -> Result<Attributes> {
        match self.call(Request::GetAttr { handle: *handle })? {
            Reply::Attrs(a) => Ok(a),
            _ => Self::unexpected(),
        }
    }

    pub fn read(&mut self, handle: &FileHandle, offset: u64, count: u64) -> Result<Vec<u8>> {
        match self.call(Request::Read { handle: *handle, offset, count })? {
            Reply::Data(d) => Ok(d),
            _ => Self::unexpected(),
        }
    }

    pub fn write(&mut self, handle: &FileHandle, offset: u64, data: &[u8]) -> Result<u64> {
        match self.call(Request::Write { handle: *handle, offset, data: data.to_vec() })? {
            Reply::Count(n) => Ok(n),
            _ => Self::unexpected(),
        }
    }

    pub fn create(&mut self, dir: &FileHandle, name: &[u8], mode: u32) -> Result<FileHandle> {
        self.handle(Request::Create { dir: *dir, name: name.to_vec(), mode })
    }

    pub fn mkdir(&mut self, dir: &FileHandle, name: &[u8], mode: u32) -> Result<FileHandle> {
        self.handle(Request::Mkdir { dir: *dir, name: name.to_vec(), mode })
    }

    pub fn remove(&mut self, dir: &FileHandle, name: &[u8]) -> Result<()> {
        self.empty(Request::Remove { dir: *dir, name: name.to_vec() })
    }

    pub fn rename(&mut self, src_dir: &FileHandle, src_name: &[u8], dst_dir: &FileHandle, dst_name: &[u8]) -> Result<()> {
        self.empty(Request::Rename {
            src_dir: *src_dir,
            src_name: src_name.to_vec(),
            dst_dir: *dst_dir,
            dst_name: dst_name.to_vec(),
        })
    }

    pub fn readdir(&mut self, dir: &FileHandle, cursor: u64, max_entries: u32) -> Result<ReadDirPage> {
        match self.call(Request::ReadDir { dir: *dir, cursor, max_entries })? {
            Reply::DirPage(p) => Ok(p),
            _ => Self::unexpected(),
        }
    }

    pub fn symlink(&mut self, dir: &FileHandle, name: &[u8], target: &[u8]) -> Result<FileHandle> {
        self.handle(Request::Symlink { dir: *dir, name: name.to_vec(), target: target.to_vec() })
    }

    pub fn readlink(&mut self, handle: &FileHandle) -> Result<Vec<u8>> {
        match self.call(Request::ReadLink { handle: *handle })? {
            Reply::Target(t) => Ok(t),
            _ => Self::unexpected(),
        }
    }

    pub fn list_attaches(&mut self) -> Result<Vec<Vec<u8>>> {
        match self.call(Request::ListAttaches)? {
            Reply::Names(n) => Ok(n),
            _ => Self::unexpected(),
        }
    }

    /// Every entry of `dir`, dot entries excluded.
    pub fn readdir_all(&mut self, dir: &FileHandle) -> Result<Vec<DirEntry>> {
        let mut out = Vec::new();
        let mut cursor = 0;
        loop {
            let page = self.readdir(dir, cursor, 256)?;
            out.extend(page.entries.into_iter().filter(|e| e.name != b"." && e.name != b".."));
            if page.eof {
                return Ok(out);
            }
            cursor = page.next_cursor;
        }
    }

    /// Writes all of `data` at `offset`, split into frame-sized pieces.
    pub fn write_all(&mut self, handle: &FileHandle, offset: u64, data: &[u8]) -> Result<()> {
        let mut done = 0usize;
        for chunk in data.chunks(MAX_IO_LEN) {
            let n = self.write(handle, offset + done as u64, chunk)?;
            if n != chunk.len() as u64 {
                return Err(io::Error::new(io::ErrorKind::WriteZero, "short write").into());
            }
            done += chunk.len();
        }
        Ok(())
    }

    /// Reads from `offset` to end of file.
    pub fn read_to_end(&mut self, handle: &FileHandle, offset: u64) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        loop {
            let piece = self.read(handle, offset + out.len() as u64, MAX_IO_LEN as u64)?;
            if piece.is_empty() {
                return Ok(out);
            }
            out.extend_from_slice(&piece);
        }
    }

    /// Resolves a `/`-separated path under the virtual root, whose first
    /// component is an attach name.
    pub fn walk(&mut self, path: &[u8]) -> Result<(FileHandle, Option<Attributes>)> {
        let mut handle = FileHandle::VIRTUAL_ROOT;
        let mut attrs = None;
        for part in path.split(|&b| b == b'/').filter(|p| !p.is_empty()) {
            let (h, a) = self.lookup(&handle, part)?;
            handle = h;
            attrs = Some(a);
        }
        Ok((handle, attrs))
    }
}

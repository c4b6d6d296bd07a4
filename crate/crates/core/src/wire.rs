//! Request/response framing for the daemon's local endpoint.
//!
//! Request frame:
//!
//! ```text
//! frame_len u32 | xid u32 | opcode u16 | version u16 | payload
//! ```
//!
//! Response frame:
//!
//! ```text
//! frame_len u32 | xid u32 | status u16 | version u16 | payload
//! ```
//!
//! `frame_len` counts the bytes after itself, so it is always
//! `8 + payload.len()`. Integers are big-endian. Strings and byte strings are
//! prefixed with a u16 length, bulk data with a u32 length, handles are a
//! fixed 32 bytes and offsets and counts are u64.

use std::fmt;

use thiserror::Error;
use zeroize::Zeroizing;

use crate::daemon::{Attributes, DirEntry, FileHandle, FileKind, ReadDirPage, Timestamp, HANDLE_LEN};

pub const PROTOCOL_VERSION: u16 = 1;
pub const FRAME_HEADER_LEN: usize = 8;
/// Largest READ count or WRITE payload carried in one frame.
pub const MAX_IO_LEN: usize = 1 << 20;
/// Largest accepted `frame_len`.
pub const MAX_FRAME_LEN: u32 = (MAX_IO_LEN + 4096) as u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated frame")]
    Truncated,
    #[error("frame length {0} out of range")]
    BadLength(u32),
    #[error("unsupported protocol version {0}")]
    BadVersion(u16),
    #[error("unknown opcode {0}")]
    UnknownOpcode(u16),
    #[error("unknown status {0}")]
    UnknownStatus(u16),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("trailing bytes after payload")]
    TrailingBytes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum Opcode {
    Attach = 1,
    Detach = 2,
    Lookup = 3,
    GetAttr = 4,
    Read = 5,
    Write = 6,
    Create = 7,
    Mkdir = 8,
    Remove = 9,
    Rename = 10,
    ReadDir = 11,
    Symlink = 12,
    ReadLink = 13,
    ListAttaches = 14,
}

impl Opcode {
    pub fn from_u16(v: u16) -> Option<Self> {
        use Opcode::*;
        Some(match v {
            1 => Attach,
            2 => Detach,
            3 => Lookup,
            4 => GetAttr,
            5 => Read,
            6 => Write,
            7 => Create,
            8 => Mkdir,
            9 => Remove,
            10 => Rename,
            11 => ReadDir,
            12 => Symlink,
            13 => ReadLink,
            14 => ListAttaches,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum Status {
    Ok = 0,
    NoEnt = 1,
    Acces = 2,
    BadKey = 3,
    Stale = 4,
    Io = 5,
    Exist = 6,
    NotDir = 7,
    IsDir = 8,
    NameTooLong = 9,
    NotEmpty = 10,
    CrossAttach = 11,
    BadMsg = 12,
}

impl Status {
    pub fn from_u16(v: u16) -> Option<Self> {
        use Status::*;
        Some(match v {
            0 => Ok,
            1 => NoEnt,
            2 => Acces,
            3 => BadKey,
            4 => Stale,
            5 => Io,
            6 => Exist,
            7 => NotDir,
            8 => IsDir,
            9 => NameTooLong,
            10 => NotEmpty,
            11 => CrossAttach,
            12 => BadMsg,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use Status::*;
        match self {
            Ok => "OK",
            NoEnt => "NOENT",
            Acces => "ACCES",
            BadKey => "BADKEY",
            Stale => "STALE",
            Io => "IO",
            Exist => "EXIST",
            NotDir => "NOTDIR",
            IsDir => "ISDIR",
            NameTooLong => "NAMETOOLONG",
            NotEmpty => "NOTEMPTY",
            CrossAttach => "CROSSATTACH",
            BadMsg => "BADMSG",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<&crate::daemon::FsError> for Status {
    fn from(e: &crate::daemon::FsError) -> Self {
        use crate::daemon::FsError::*;
        match e {
            NoEntry => Status::NoEnt,
            Access => Status::Acces,
            BadKey => Status::BadKey,
            Stale => Status::Stale,
            Exists => Status::Exist,
            NotDir | NotAnEfsDirectory => Status::NotDir,
            IsDir => Status::IsDir,
            NameTooLong => Status::NameTooLong,
            InvalidName => Status::BadMsg,
            NotEmpty => Status::NotEmpty,
            CrossAttach => Status::CrossAttach,
            CorruptHeader(_) | Io(_) => Status::Io,
        }
    }
}

/// Key material carried by ATTACH. Wiped on drop and never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct Passphrase(Zeroizing<Vec<u8>>);

impl Passphrase {
    pub fn new(bytes: Vec<u8>) -> Self {
        Passphrase(Zeroizing::new(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Passphrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Passphrase(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Attach { backing_dir: Vec<u8>, name: Vec<u8>, passphrase: Passphrase, obscure: bool },
    Detach { name: Vec<u8> },
    Lookup { dir: FileHandle, name: Vec<u8> },
    GetAttr { handle: FileHandle },
    Read { handle: FileHandle, offset: u64, count: u64 },
    Write { handle: FileHandle, offset: u64, data: Vec<u8> },
    Create { dir: FileHandle, name: Vec<u8>, mode: u32 },
    Mkdir { dir: FileHandle, name: Vec<u8>, mode: u32 },
    Remove { dir: FileHandle, name: Vec<u8> },
    Rename { src_dir: FileHandle, src_name: Vec<u8>, dst_dir: FileHandle, dst_name: Vec<u8> },
    ReadDir { dir: FileHandle, cursor: u64, max_entries: u32 },
    Symlink { dir: FileHandle, name: Vec<u8>, target: Vec<u8> },
    ReadLink { handle: FileHandle },
    ListAttaches,
}

impl Request {
    pub fn opcode(&self) -> Opcode {
        match self {
            Request::Attach { .. } => Opcode::Attach,
            Request::Detach { .. } => Opcode::Detach,
            Request::Lookup { .. } => Opcode::Lookup,
            Request::GetAttr { .. } => Opcode::GetAttr,
            Request::Read { .. } => Opcode::Read,
            Request::Write { .. } => Opcode::Write,
            Request::Create { .. } => Opcode::Create,
            Request::Mkdir { .. } => Opcode::Mkdir,
            Request::Remove { .. } => Opcode::Remove,
            Request::Rename { .. } => Opcode::Rename,
            Request::ReadDir { .. } => Opcode::ReadDir,
            Request::Symlink { .. } => Opcode::Symlink,
            Request::ReadLink { .. } => Opcode::ReadLink,
            Request::ListAttaches => Opcode::ListAttaches,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestFrame {
    pub xid: u32,
    pub request: Request,
}

/// Successful reply payloads, one shape per opcode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    Empty,
    Handle(FileHandle),
    Entry(FileHandle, Attributes),
    Attrs(Attributes),
    Data(Vec<u8>),
    Count(u64),
    DirPage(ReadDirPage),
    Target(Vec<u8>),
    Names(Vec<Vec<u8>>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseFrame {
    pub xid: u32,
    pub status: Status,
    pub payload: Vec<u8>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn frame(xid: u32, code: u16) -> Self {
        let mut v = Vec::with_capacity(64);
        v.extend_from_slice(&[0; 4]);
        v.extend_from_slice(&xid.to_be_bytes());
        v.extend_from_slice(&code.to_be_bytes());
        v.extend_from_slice(&PROTOCOL_VERSION.to_be_bytes());
        Writer(v)
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn handle(&mut self, h: &FileHandle) {
        self.0.extend_from_slice(h.as_bytes());
    }
    fn str16(&mut self, s: &[u8]) {
        assert!(s.len() <= u16::MAX as usize, "string field longer than 65535 bytes");
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s);
    }
    fn bytes32(&mut self, s: &[u8]) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s);
    }
    fn attrs(&mut self, a: &Attributes) {
        self.u8(a.kind as u8);
        self.u32(a.mode);
        self.u64(a.size);
        for t in [a.atime, a.mtime, a.ctime] {
            self.i64(t.secs);
            self.u32(t.nanos);
        }
    }
    fn finish(mut self) -> Vec<u8> {
        let len = (self.0.len() - 4) as u32;
        self.0[..4].copy_from_slice(&len.to_be_bytes());
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(WireError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn handle(&mut self) -> Result<FileHandle, WireError> {
        Ok(FileHandle::from_bytes(self.take(HANDLE_LEN)?.try_into().unwrap()))
    }
    fn str16(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.u16()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn bytes32(&mut self, max: usize) -> Result<Vec<u8>, WireError> {
        let n = self.u32()? as usize;
        if n > max {
            return Err(WireError::Malformed("data too long"));
        }
        Ok(self.take(n)?.to_vec())
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Malformed("bad boolean")),
        }
    }
    fn attrs(&mut self) -> Result<Attributes, WireError> {
        let kind = FileKind::from_u8(self.u8()?).ok_or(WireError::Malformed("bad file kind"))?;
        let mode = self.u32()?;
        let size = self.u64()?;
        let mut times = [Timestamp::default(); 3];
        for t in &mut times {
            t.secs = self.i64()?;
            t.nanos = self.u32()?;
        }
        Ok(Attributes { kind, mode, size, atime: times[0], mtime: times[1], ctime: times[2] })
    }
    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::TrailingBytes)
        }
    }
}

/// Serializes a complete request frame, length prefix included.
pub fn encode_request(xid: u32, request: &Request) -> Vec<u8> {
    let mut w = Writer::frame(xid, request.opcode() as u16);
    match request {
        Request::Attach { backing_dir, name, passphrase, obscure } => {
            w.str16(backing_dir);
            w.str16(name);
            w.str16(passphrase.as_bytes());
            w.u8(*obscure as u8);
        }
        Request::Detach { name } => w.str16(name),
        Request::Lookup { dir, name } | Request::Remove { dir, name } => {
            w.handle(dir);
            w.str16(name);
        }
        Request::GetAttr { handle } | Request::ReadLink { handle } => w.handle(handle),
        Request::Read { handle, offset, count } => {
            w.handle(handle);
            w.u64(*offset);
            w.u64(*count);
        }
        Request::Write { handle, offset, data } => {
            w.handle(handle);
            w.u64(*offset);
            w.bytes32(data);
        }
        Request::Create { dir, name, mode } | Request::Mkdir { dir, name, mode } => {
            w.handle(dir);
            w.str16(name);
            w.u32(*mode);
        }
        Request::Rename { src_dir, src_name, dst_dir, dst_name } => {
            w.handle(src_dir);
            w.str16(src_name);
            w.handle(dst_dir);
            w.str16(dst_name);
        }
        Request::ReadDir { dir, cursor, max_entries } => {
            w.handle(dir);
            w.u64(*cursor);
            w.u32(*max_entries);
        }
        Request::Symlink { dir, name, target } => {
            w.handle(dir);
            w.str16(name);
            w.str16(target);
        }
        Request::ListAttaches => {}
    }
    w.finish()
}

fn check_frame_len(buf: &[u8]) -> Result<&[u8], WireError> {
    if buf.len() < 4 {
        return Err(WireError::Truncated);
    }
    let len = u32::from_be_bytes(buf[..4].try_into().unwrap());
    if (len as usize) < FRAME_HEADER_LEN || len > MAX_FRAME_LEN {
        return Err(WireError::BadLength(len));
    }
    let body = &buf[4..];
    if body.len() < len as usize {
        return Err(WireError::Truncated);
    }
    if body.len() > len as usize {
        return Err(WireError::TrailingBytes);
    }
    Ok(body)
}

/// Parses a complete request frame, length prefix included.
pub fn decode_request(frame: &[u8]) -> Result<RequestFrame, WireError> {
    decode_request_body(check_frame_len(frame)?)
}

/// Peeks at the xid of a frame body so even a malformed request can be
/// answered under the right xid.
pub fn body_xid(body: &[u8]) -> Option<u32> {
    body.get(..4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Parses the bytes that follow `frame_len`.
pub fn decode_request_body(body: &[u8]) -> Result<RequestFrame, WireError> {
    let mut r = Reader::new(body);
    let xid = r.u32()?;
    let opcode = r.u16()?;
    let version = r.u16()?;
    if version != PROTOCOL_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let op = Opcode::from_u16(opcode).ok_or(WireError::UnknownOpcode(opcode))?;
    let request = match op {
        Opcode::Attach => Request::Attach {
            backing_dir: r.str16()?,
            name: r.str16()?,
            passphrase: Passphrase::new(r.str16()?),
            obscure: r.bool()?,
        },
        Opcode::Detach => Request::Detach { name: r.str16()? },
        Opcode::Lookup => Request::Lookup { dir: r.handle()?, name: r.str16()? },
        Opcode::GetAttr => Request::GetAttr { handle: r.handle()? },
        Opcode::Read => Request::Read { handle: r.handle()?, offset: r.u64()?, count: r.u64()? },
        Opcode::Write => Request::Write { handle: r.handle()?, offset: r.u64()?, data: r.bytes32(MAX_IO_LEN)? },
        Opcode::Create => Request::Create { dir: r.handle()?, name: r.str16()?, mode: r.u32()? },
        Opcode::Mkdir => Request::Mkdir { dir: r.handle()?, name: r.str16()?, mode: r.u32()? },
        Opcode::Remove => Request::Remove { dir: r.handle()?, name: r.str16()? },
        Opcode::Rename => Request::Rename {
            src_dir: r.handle()?,
            src_name: r.str16()?,
            dst_dir: r.handle()?,
            dst_name: r.str16()?,
        },
        Opcode::ReadDir => Request::ReadDir { dir: r.handle()?, cursor: r.u64()?, max_entries: r.u32()? },
        Opcode::Symlink => Request::Symlink { dir: r.handle()?, name: r.str16()?, target: r.str16()? },
        Opcode::ReadLink => Request::ReadLink { handle: r.handle()? },
        Opcode::ListAttaches => Request::ListAttaches,
    };
    r.finish()?;
    Ok(RequestFrame { xid, request })
}

pub fn encode_response(xid: u32, status: Status, payload: &[u8]) -> Vec<u8> {
    let mut w = Writer::frame(xid, status as u16);
    w.0.extend_from_slice(payload);
    w.finish()
}

/// Parses a complete response frame, length prefix included.
pub fn decode_response(frame: &[u8]) -> Result<ResponseFrame, WireError> {
    decode_response_body(check_frame_len(frame)?)
}

pub fn decode_response_body(body: &[u8]) -> Result<ResponseFrame, WireError> {
    let mut r = Reader::new(body);
    let xid = r.u32()?;
    let code = r.u16()?;
    let version = r.u16()?;
    if version != PROTOCOL_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let status = Status::from_u16(code).ok_or(WireError::UnknownStatus(code))?;
    Ok(ResponseFrame { xid, status, payload: body[FRAME_HEADER_LEN..].to_vec() })
}

impl Reply {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        match self {
            Reply::Empty => {}
            Reply::Handle(h) => w.handle(h),
            Reply::Entry(h, a) => {
                w.handle(h);
                w.attrs(a);
            }
            Reply::Attrs(a) => w.attrs(a),
            Reply::Data(d) => w.bytes32(d),
            Reply::Count(n) => w.u64(*n),
            Reply::DirPage(page) => {
                w.u64(page.next_cursor);
                w.u8(page.eof as u8);
                w.u32(page.entries.len() as u32);
                for e in &page.entries {
                    w.str16(&e.name);
                    w.u8(e.kind as u8);
                }
            }
            Reply::Target(t) => w.str16(t),
            Reply::Names(names) => {
                w.u32(names.len() as u32);
                for n in names {
                    w.str16(n);
                }
            }
        }
        w.0
    }

    /// Parses an OK payload for a request with opcode `op`.
    pub fn decode(op: Opcode, payload: &[u8]) -> Result<Reply, WireError> {
        let mut r = Reader::new(payload);
        let reply = match op {
            Opcode::Detach | Opcode::Remove | Opcode::Rename => Reply::Empty,
            Opcode::Attach | Opcode::Create | Opcode::Mkdir | Opcode::Symlink => Reply::Handle(r.handle()?),
            Opcode::Lookup => Reply::Entry(r.handle()?, r.attrs()?),
            Opcode::GetAttr => Reply::Attrs(r.attrs()?),
            Opcode::Read => Reply::Data(r.bytes32(MAX_IO_LEN)?),
            Opcode::Write => Reply::Count(r.u64()?),
            Opcode::ReadDir => {
                let next_cursor = r.u64()?;
                let eof = r.bool()?;
                let n = r.u32()? as usize;
                let mut entries = Vec::with_capacity(n.min(4096));
                for _ in 0..n {
                    let name = r.str16()?;
                    let kind = FileKind::from_u8(r.u8()?).ok_or(WireError::Malformed("bad file kind"))?;
                    entries.push(DirEntry { name, kind });
                }
                Reply::DirPage(ReadDirPage { entries, next_cursor, eof })
            }
            Opcode::ReadLink => Reply::Target(r.str16()?),
            Opcode::ListAttaches => {
                let n = r.u32()? as usize;
                let mut names = Vec::with_capacity(n.min(4096));
                for _ in 0..n {
                    names.push(r.str16()?);
                }
                Reply::Names(names)
            }
        };
        r.finish()?;
        Ok(reply)
    }
}

//! The file-service daemon: attach points, handle resolution and the
//! translation of cleartext file operations into encrypted operations on
//! ordinary backing directories.
//!
//! Every request is self-contained. The handle tables and the open-file
//! cache only speed things up; losing them (restart, detach) turns old
//! handles into `Stale` errors but never changes what a fresh walk from an
//! attach root observes.

mod cache;
mod handle;

use std::collections::HashMap;
use std::fs::{self, File, Metadata, OpenOptions};
use std::hash::{Hash, Hasher};
use std::io;
use std::os::unix::fs::{DirBuilderExt, MetadataExt, OpenOptionsExt};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::RngCore;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::crypto::{self, CryptoError, Keyring, DEFAULT_KDF_ITERATIONS, DEFAULT_MASK_BLOCKS, FLAG_ASCII_ARMOR};
use crate::names::{self, NameError};
use crate::validator;

pub use cache::{CachedFile, LruCache};
pub use handle::{EncPath, FileHandle, HandleTable, HANDLE_LEN, TAG_LEN};

pub const DEFAULT_CACHE_CAPACITY: usize = 16;
pub const DEFAULT_READDIR_PAGE: usize = 128;
const LOCK_STRIPES: usize = 64;

/// Identity of the process on the other end of a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Caller(pub u32);

impl Caller {
    pub fn current() -> Self {
        // SAFETY: geteuid has no preconditions and cannot fail.
        Caller(unsafe { libc::geteuid() })
    }

    pub fn is_root(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Error)]
pub enum FsError {
    #[error("no such entry")]
    NoEntry,
    #[error("permission denied")]
    Access,
    #[error("incorrect key")]
    BadKey,
    #[error("stale file handle")]
    Stale,
    #[error("entry exists")]
    Exists,
    #[error("not a directory")]
    NotDir,
    #[error("is a directory")]
    IsDir,
    #[error("name too long")]
    NameTooLong,
    #[error("invalid name")]
    InvalidName,
    #[error("directory not empty")]
    NotEmpty,
    #[error("source and destination are in different attaches")]
    CrossAttach,
    #[error("directory has no validator file")]
    NotAnEfsDirectory,
    #[error("corrupt file header: {0}")]
    CorruptHeader(&'static str),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl From<CryptoError> for FsError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::CorruptHeader(what) => FsError::CorruptHeader(what),
            CryptoError::PassphraseTooShort => FsError::BadKey,
            CryptoError::OutOfRange => FsError::Io(io::Error::new(io::ErrorKind::InvalidInput, "range too large")),
            CryptoError::Io(e) => FsError::Io(e),
        }
    }
}

impl From<NameError> for FsError {
    fn from(e: NameError) -> Self {
        match e {
            NameError::NameTooLong => FsError::NameTooLong,
            _ => FsError::InvalidName,
        }
    }
}

pub type Result<T> = std::result::Result<T, FsError>;

fn errno(e: &io::Error) -> Option<i32> {
    e.raw_os_error()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FileKind {
    File = 1,
    Dir = 2,
    Symlink = 3,
}

impl FileKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(FileKind::File),
            2 => Some(FileKind::Dir),
            3 => Some(FileKind::Symlink),
            _ => None,
        }
    }

    fn of(ft: fs::FileType) -> Option<Self> {
        if ft.is_file() {
            Some(FileKind::File)
        } else if ft.is_dir() {
            Some(FileKind::Dir)
        } else if ft.is_symlink() {
            Some(FileKind::Symlink)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Timestamp {
    pub secs: i64,
    pub nanos: u32,
}

/// Attributes as seen through an attach. `size` is the cleartext length for
/// regular files and passes through unchanged for everything else.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attributes {
    pub kind: FileKind,
    pub mode: u32,
    pub size: u64,
    pub atime: Timestamp,
    pub mtime: Timestamp,
    pub ctime: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirEntry {
    pub name: Vec<u8>,
    pub kind: FileKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadDirPage {
    pub entries: Vec<DirEntry>,
    pub next_cursor: u64,
    pub eof: bool,
}

#[derive(Clone, Debug)]
pub struct DaemonConfig {
    pub mask_blocks: usize,
    pub cache_capacity: usize,
    pub kdf_iterations: u32,
    /// New files store their payload in the filename alphabet. Only the
    /// benchmark harness turns this on.
    pub armor_new_files: bool,
}

impl Default for DaemonConfig {
    fn default() -> Self {
        DaemonConfig {
            mask_blocks: DEFAULT_MASK_BLOCKS,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            kdf_iterations: DEFAULT_KDF_ITERATIONS,
            armor_new_files: false,
        }
    }
}

impl DaemonConfig {
    /// Reads `EFS_CACHE_CAP`, `EFS_MASK_BLOCKS` and `EFS_KDF_ITERATIONS`,
    /// falling back to defaults for unset variables.
    pub fn from_env() -> std::result::Result<Self, String> {
        fn var<T: std::str::FromStr>(key: &str, default: T) -> std::result::Result<T, String> {
            match std::env::var(key) {
                Ok(v) => v.trim().parse().map_err(|_| format!("{key}: cannot parse {v:?}")),
                Err(_) => Ok(default),
            }
        }
        let d = DaemonConfig::default();
        let config = DaemonConfig {
            mask_blocks: var("EFS_MASK_BLOCKS", d.mask_blocks)?,
            cache_capacity: var("EFS_CACHE_CAP", d.cache_capacity)?,
            kdf_iterations: var("EFS_KDF_ITERATIONS", d.kdf_iterations)?,
            armor_new_files: false,
        };
        if config.mask_blocks == 0 {
            return Err("EFS_MASK_BLOCKS must be at least 1".into());
        }
        if config.kdf_iterations == 0 {
            return Err("EFS_KDF_ITERATIONS must be at least 1".into());
        }
        Ok(config)
    }
}

/// A live binding of a backing directory to a name under the virtual root.
pub struct AttachPoint {
    id: u64,
    name: Vec<u8>,
    backing_dir: PathBuf,
    owner: Caller,
    obscure: bool,
    secret: Zeroizing<[u8; 16]>,
    keys: Keyring,
    handles: HandleTable,
    locks: Vec<RwLock<()>>,
}

impl AttachPoint {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn name(&self) -> &[u8] {
        &self.name
    }

    pub fn backing_dir(&self) -> &Path {
        &self.backing_dir
    }

    pub fn owner(&self) -> Caller {
        self.owner
    }

    pub fn is_obscure(&self) -> bool {
        self.obscure
    }

    pub fn keys(&self) -> &Keyring {
        &self.keys
    }

    fn check_owner(&self, caller: Caller) -> Result<()> {
        if caller == self.owner {
            Ok(())
        } else {
            Err(FsError::Access)
        }
    }

    fn handle_for(&self, path: &EncPath) -> FileHandle {
        let h = FileHandle::derive(self.id, &self.secret[..], path);
        self.handles.insert(h, path.clone());
        h
    }

    fn full_path(&self, path: &EncPath) -> PathBuf {
        if path.is_root() {
            self.backing_dir.clone()
        } else {
            self.backing_dir.join(path.as_str())
        }
    }

    fn lock_for(&self, path: &EncPath) -> &RwLock<()> {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        path.hash(&mut h);
        &self.locks[h.finish() as usize % LOCK_STRIPES]
    }

    /// Metadata of an entry named by a handle; a vanished entry makes the
    /// handle stale.
    fn handle_meta(&self, handle: &FileHandle, path: &EncPath) -> Result<Metadata> {
        match fs::symlink_metadata(self.full_path(path)) {
            Ok(m) => Ok(m),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                self.handles.remove(handle);
                Err(FsError::Stale)
            }
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Default)]
struct Registry {
    by_id: HashMap<u64, Arc<AttachPoint>>,
    by_name: HashMap<Vec<u8>, u64>,
}

enum Target {
    VirtualRoot,
    Entry(Arc<AttachPoint>, EncPath),
}

pub struct Daemon {
    config: DaemonConfig,
    registry: RwLock<Registry>,
    next_id: AtomicU64,
    cache: Mutex<LruCache<FileHandle, CachedFile>>,
}

impl Daemon {
    pub fn new(config: DaemonConfig) -> Self {
        let cache = Mutex::new(LruCache::new(config.cache_capacity));
        Daemon {
            config,
            registry: RwLock::new(Registry::default()),
            next_id: AtomicU64::new(1),
            cache,
        }
    }

    pub fn config(&self) -> &DaemonConfig {
        &self.config
    }

    pub fn cached_files(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn attach_by_id(&self, id: u64) -> Option<Arc<AttachPoint>> {
        self.registry.read().unwrap().by_id.get(&id).cloned()
    }

    fn resolve(&self, handle: &FileHandle, caller: Caller) -> Result<Target> {
        if *handle == FileHandle::VIRTUAL_ROOT {
            return Ok(Target::VirtualRoot);
        }
        let ap = self.attach_by_id(handle.attach_id()).ok_or(FsError::Stale)?;
        let path = ap.handles.get(handle).ok_or(FsError::Stale)?;
        ap.check_owner(caller)?;
        Ok(Target::Entry(ap, path))
    }

    /// Resolves a handle that must name something inside an attach.
    fn resolve_entry(&self, handle: &FileHandle, caller: Caller, on_root: FsError) -> Result<(Arc<AttachPoint>, EncPath)> {
        match self.resolve(handle, caller)? {
            Target::VirtualRoot => Err(on_root),
            Target::Entry(ap, path) => Ok((ap, path)),
        }
    }

    fn resolve_dir(&self, handle: &FileHandle, caller: Caller) -> Result<(Arc<AttachPoint>, EncPath)> {
        let (ap, path) = self.resolve_entry(handle, caller, FsError::Access)?;
        if !ap.handle_meta(handle, &path)?.is_dir() {
            return Err(FsError::NotDir);
        }
        Ok((ap, path))
    }

    /// Backing path an attach maps a handle to. Diagnostics and tests only.
    pub fn backing_path(&self, handle: &FileHandle) -> Option<PathBuf> {
        let ap = self.attach_by_id(handle.attach_id())?;
        let path = ap.handles.get(handle)?;
        Some(ap.full_path(&path))
    }

    pub fn attach(
        &self,
        backing_dir: &Path,
        attach_name: &[u8],
        passphrase: &[u8],
        obscure: bool,
        caller: Caller,
    ) -> Result<FileHandle> {
        names::validate_name(attach_name)?;
        if self.registry.read().unwrap().by_name.contains_key(attach_name) {
            return Err(FsError::Exists);
        }
        let backing = fs::canonicalize(backing_dir).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => FsError::NoEntry,
            _ => FsError::Io(e),
        })?;
        let meta = fs::metadata(&backing)?;
        if !meta.is_dir() {
            return Err(FsError::NotDir);
        }
        if !caller.is_root() && meta.uid() != caller.0 {
            return Err(FsError::Access);
        }
        if !validator::has_validator(&backing) {
            return Err(FsError::NotAnEfsDirectory);
        }
        let keys = Keyring::from_passphrase(passphrase, self.config.kdf_iterations, self.config.mask_blocks)?;
        if !validator::check_validator(&backing, &keys)? {
            return Err(FsError::BadKey);
        }
        let mut secret = Zeroizing::new([0u8; 16]);
        rand::rngs::OsRng.fill_bytes(&mut secret[..]);

        let mut reg = self.registry.write().unwrap();
        if reg.by_name.contains_key(attach_name) {
            return Err(FsError::Exists);
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let ap = Arc::new(AttachPoint {
            id,
            name: attach_name.to_vec(),
            backing_dir: backing,
            owner: caller,
            obscure,
            secret,
            keys,
            handles: HandleTable::default(),
            locks: (0..LOCK_STRIPES).map(|_| RwLock::new(())).collect(),
        });
        let root = ap.handle_for(&EncPath::root());
        reg.by_name.insert(attach_name.to_vec(), id);
        reg.by_id.insert(id, ap);
        log::info!("attached {} as {:?} (id {id})", String::from_utf8_lossy(attach_name), root);
        Ok(root)
    }

    pub fn detach(&self, attach_name: &[u8], caller: Caller) -> Result<()> {
        let mut reg = self.registry.write().unwrap();
        let id = *reg.by_name.get(attach_name).ok_or(FsError::NoEntry)?;
        reg.by_id[&id].check_owner(caller)?;
        reg.by_name.remove(attach_name);
        reg.by_id.remove(&id);
        drop(reg);
        self.cache.lock().unwrap().retain(|h| h.attach_id() != id);
        log::info!("detached {}", String::from_utf8_lossy(attach_name));
        Ok(())
    }

    /// Attach names visible to `caller`: its own plus everyone's non-obscure ones.
    pub fn list_attaches(&self, caller: Caller) -> Vec<Vec<u8>> {
        let reg = self.registry.read().unwrap();
        let mut names: Vec<Vec<u8>> = reg
            .by_id
            .values()
            .filter(|ap| ap.owner == caller || !ap.obscure)
            .map(|ap| ap.name.clone())
            .collect();
        names.sort();
        names
    }

    pub fn lookup(&self, dir: &FileHandle, name: &[u8], caller: Caller) -> Result<(FileHandle, Attributes)> {
        let (ap, dir_path) = match self.resolve(dir, caller)? {
            Target::VirtualRoot => return self.lookup_attach(name, caller),
            Target::Entry(ap, path) => (ap, path),
        };
        if !ap.handle_meta(dir, &dir_path)?.is_dir() {
            return Err(FsError::NotDir);
        }
        let child = match name {
            b"." => dir_path,
            b".." => dir_path.parent(),
            _ => dir_path.join(&names::seal_name(name, &ap.keys)?),
        };
        let meta = fs::symlink_metadata(ap.full_path(&child)).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => FsError::NoEntry,
            _ => FsError::Io(e),
        })?;
        let attrs = self.attributes(&ap, &child, &meta)?;
        Ok((ap.handle_for(&child), attrs))
    }

    fn lookup_attach(&self, name: &[u8], caller: Caller) -> Result<(FileHandle, Attributes)> {
        if name == b"." || name == b".." {
            return Ok((FileHandle::VIRTUAL_ROOT, virtual_root_attrs()));
        }
        let ap = {
            let reg = self.registry.read().unwrap();
            let id = reg.by_name.get(name).ok_or(FsError::NoEntry)?;
            reg.by_id[id].clone()
        };
        if ap.owner != caller {
            // Others must not learn that an obscure attach exists.
            return Err(if ap.obscure { FsError::NoEntry } else { FsError::Access });
        }
        let root = EncPath::root();
        let meta = fs::symlink_metadata(&ap.backing_dir)?;
        let attrs = self.attributes(&ap, &root, &meta)?;
        Ok((ap.handle_for(&root), attrs))
    }

    fn attributes(&self, ap: &AttachPoint, path: &EncPath, meta: &Metadata) -> Result<Attributes> {
        let kind = FileKind::of(meta.file_type())
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "unsupported file type"))?;
        let size = if kind == FileKind::File {
            let file = open_nofollow(&ap.full_path(path), false)?;
            crypto::read_header(&file)?.map_or(0, |h| h.plaintext_length)
        } else {
            meta.len()
        };
        Ok(Attributes {
            kind,
            mode: meta.mode() & 0o7777,
            size,
            atime: Timestamp { secs: meta.atime(), nanos: meta.atime_nsec() as u32 },
            mtime: Timestamp { secs: meta.mtime(), nanos: meta.mtime_nsec() as u32 },
            ctime: Timestamp { secs: meta.ctime(), nanos: meta.ctime_nsec() as u32 },
        })
    }

    pub fn getattr(&self, handle: &FileHandle, caller: Caller) -> Result<Attributes> {
        match self.resolve(handle, caller)? {
            Target::VirtualRoot => Ok(virtual_root_attrs()),
            Target::Entry(ap, path) => {
                let meta = ap.handle_meta(handle, &path)?;
                self.attributes(&ap, &path, &meta)
            }
        }
    }

    /// Open backing file for a regular-file handle, via the cache.
    fn open_file(&self, ap: &AttachPoint, handle: &FileHandle, path: &EncPath) -> Result<Arc<File>> {
        let meta = ap.handle_meta(handle, path)?;
        if meta.is_dir() {
            return Err(FsError::IsDir);
        }
        if !meta.is_file() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "not a regular file").into());
        }
        if let Some(hit) = self.cache.lock().unwrap().get(handle) {
            // The entry may have been replaced behind our back.
            if hit.dev == meta.dev() && hit.ino == meta.ino() {
                return Ok(hit.file);
            }
        }
        let full = ap.full_path(path);
        let file = match open_nofollow(&full, true) {
            Err(FsError::Io(e)) if e.kind() == io::ErrorKind::PermissionDenied => open_nofollow(&full, false)?,
            other => other?,
        };
        let opened = file.metadata()?;
        let file = Arc::new(file);
        let entry = CachedFile { file: file.clone(), dev: opened.dev(), ino: opened.ino() };
        let evicted = self.cache.lock().unwrap().insert(*handle, entry);
        drop(evicted);
        Ok(file)
    }

    pub fn read(&self, handle: &FileHandle, offset: u64, count: u64, caller: Caller) -> Result<Vec<u8>> {
        let (ap, path) = self.resolve_entry(handle, caller, FsError::IsDir)?;
        let _guard = ap.lock_for(&path).read().unwrap();
        let file = self.open_file(&ap, handle, &path)?;
        Ok(crypto::read_range(&file, offset, count, &ap.keys)?)
    }

    pub fn write(&self, handle: &FileHandle, offset: u64, data: &[u8], caller: Caller) -> Result<u64> {
        let (ap, path) = self.resolve_entry(handle, caller, FsError::IsDir)?;
        let _guard = ap.lock_for(&path).write().unwrap();
        let file = self.open_file(&ap, handle, &path)?;
        Ok(crypto::write_range(&file, offset, data, &ap.keys)? as u64)
    }

    /// Truncates or zero-extends a regular file.
    pub fn set_size(&self, handle: &FileHandle, size: u64, caller: Caller) -> Result<()> {
        let (ap, path) = self.resolve_entry(handle, caller, FsError::IsDir)?;
        let _guard = ap.lock_for(&path).write().unwrap();
        let file = self.open_file(&ap, handle, &path)?;
        Ok(crypto::set_len(&file, size, &ap.keys)?)
    }

    fn child_of(&self, dir: &FileHandle, name: &[u8], caller: Caller) -> Result<(Arc<AttachPoint>, EncPath)> {
        let (ap, dir_path) = self.resolve_dir(dir, caller)?;
        if name == b"." || name == b".." {
            return Err(FsError::Exists);
        }
        let child = dir_path.join(&names::seal_name(name, &ap.keys)?);
        Ok((ap, child))
    }

    pub fn create(&self, dir: &FileHandle, name: &[u8], mode: u32, caller: Caller) -> Result<FileHandle> {
        let (ap, child) = self.child_of(dir, name, caller)?;
        let _guard = ap.lock_for(&child).write().unwrap();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .mode((mode & 0o777) | 0o600)
            .custom_flags(libc::O_NOFOLLOW)
            .open(ap.full_path(&child))
            .map_err(exists_or_io)?;
        let flags = if self.config.armor_new_files { FLAG_ASCII_ARMOR } else { 0 };
        crypto::init_file(&file, flags)?;
        Ok(ap.handle_for(&child))
    }

    pub fn mkdir(&self, dir: &FileHandle, name: &[u8], mode: u32, caller: Caller) -> Result<FileHandle> {
        let (ap, child) = self.child_of(dir, name, caller)?;
        fs::DirBuilder::new()
            .mode((mode & 0o777) | 0o700)
            .create(ap.full_path(&child))
            .map_err(exists_or_io)?;
        Ok(ap.handle_for(&child))
    }

    pub fn symlink(&self, dir: &FileHandle, name: &[u8], target: &[u8], caller: Caller) -> Result<FileHandle> {
        let (ap, child) = self.child_of(dir, name, caller)?;
        let sealed = names::seal_link_target(target, &ap.keys)?;
        std::os::unix::fs::symlink(sealed.as_str(), ap.full_path(&child)).map_err(exists_or_io)?;
        Ok(ap.handle_for(&child))
    }

    pub fn readlink(&self, handle: &FileHandle, caller: Caller) -> Result<Vec<u8>> {
        let (ap, path) = self.resolve_entry(handle, caller, FsError::Io(invalid("not a symlink")))?;
        if !ap.handle_meta(handle, &path)?.file_type().is_symlink() {
            return Err(FsError::Io(invalid("not a symlink")));
        }
        let stored = fs::read_link(ap.full_path(&path))?;
        let stored = stored.to_str().ok_or_else(|| invalid("link target is not an encrypted name"))?;
        names::open_link_target(stored, &ap.keys).map_err(|e| FsError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))
    }

    /// Forgets handles and cached files at or below `path`.
    fn invalidate(&self, ap: &AttachPoint, path: &EncPath) {
        let gone = ap.handles.remove_subtree(path);
        if !gone.is_empty() {
            let mut cache = self.cache.lock().unwrap();
            for h in &gone {
                cache.remove(h);
            }
        }
    }

    pub fn remove_entry(&self, dir: &FileHandle, name: &[u8], caller: Caller) -> Result<()> {
        let (ap, child) = self.child_of(dir, name, caller).map_err(|e| match e {
            FsError::Exists => FsError::InvalidName,
            e => e,
        })?;
        let _guard = ap.lock_for(&child).write().unwrap();
        let full = ap.full_path(&child);
        let meta = fs::symlink_metadata(&full).map_err(noent_or_io)?;
        if meta.is_dir() {
            fs::remove_dir(&full).map_err(|e| match errno(&e) {
                Some(libc::ENOTEMPTY) | Some(libc::EEXIST) => FsError::NotEmpty,
                _ => noent_or_io(e),
            })?;
        } else {
            fs::remove_file(&full).map_err(noent_or_io)?;
        }
        self.invalidate(&ap, &child);
        Ok(())
    }

    pub fn rename_entry(
        &self,
        src_dir: &FileHandle,
        src_name: &[u8],
        dst_dir: &FileHandle,
        dst_name: &[u8],
        caller: Caller,
    ) -> Result<()> {
        if src_dir.attach_id() != dst_dir.attach_id() {
            // Still surface stale/foreign handles before the cross-attach check.
            self.resolve_dir(src_dir, caller)?;
            self.resolve_dir(dst_dir, caller)?;
            return Err(FsError::CrossAttach);
        }
        let (ap, src) = self.child_of(src_dir, src_name, caller).map_err(dot_is_invalid)?;
        let (_, dst) = self.child_of(dst_dir, dst_name, caller).map_err(dot_is_invalid)?;
        if dst.is_within(&src) && dst != src {
            return Err(FsError::Io(invalid("cannot move a directory into itself")));
        }
        fs::rename(ap.full_path(&src), ap.full_path(&dst)).map_err(|e| match errno(&e) {
            Some(libc::ENOENT) => FsError::NoEntry,
            Some(libc::ENOTEMPTY) | Some(libc::EEXIST) => FsError::NotEmpty,
            Some(libc::EISDIR) => FsError::IsDir,
            Some(libc::ENOTDIR) => FsError::NotDir,
            _ => FsError::Io(e),
        })?;
        self.invalidate(&ap, &src);
        self.invalidate(&ap, &dst);
        Ok(())
    }

    /// One page of a directory listing, `cursor` entries in. Entries are
    /// ordered by stored name so cursors stay valid across calls while the
    /// directory is unchanged.
    pub fn readdir(&self, dir: &FileHandle, cursor: u64, max_entries: usize, caller: Caller) -> Result<ReadDirPage> {
        let mut all = vec![
            DirEntry { name: b".".to_vec(), kind: FileKind::Dir },
            DirEntry { name: b"..".to_vec(), kind: FileKind::Dir },
        ];
        match self.resolve(dir, caller)? {
            Target::VirtualRoot => {
                all.extend(self.list_attaches(caller).into_iter().map(|name| DirEntry { name, kind: FileKind::Dir }));
            }
            Target::Entry(ap, path) => {
                if !ap.handle_meta(dir, &path)?.is_dir() {
                    return Err(FsError::NotDir);
                }
                let mut found = Vec::new();
                for entry in fs::read_dir(ap.full_path(&path))? {
                    let entry = entry?;
                    let stored = entry.file_name();
                    let Some(stored) = stored.to_str() else { continue };
                    if stored == validator::VALIDATOR_NAME {
                        continue;
                    }
                    // Foreign or undecryptable entries are not ours to show.
                    let Ok(name) = names::open_name(stored, &ap.keys) else { continue };
                    let Some(kind) = FileKind::of(entry.file_type()?) else { continue };
                    found.push((stored.to_owned(), DirEntry { name, kind }));
                }
                found.sort_by(|a, b| a.0.cmp(&b.0));
                all.extend(found.into_iter().map(|(_, e)| e));
            }
        }
        let max = if max_entries == 0 { DEFAULT_READDIR_PAGE } else { max_entries };
        let total = all.len();
        let start = usize::try_from(cursor).unwrap_or(usize::MAX).min(total);
        let end = start.saturating_add(max).min(total);
        Ok(ReadDirPage {
            entries: all.drain(start..end).collect(),
            next_cursor: end as u64,
            eof: end == total,
        })
    }

    /// Every entry of a directory, following cursors to the end.
    pub fn readdir_all(&self, dir: &FileHandle, caller: Caller) -> Result<Vec<DirEntry>> {
        let mut out = Vec::new();
        let mut cursor = 0;
        loop {
            let page = self.readdir(dir, cursor, 0, caller)?;
            out.extend(page.entries);
            if page.eof {
                return Ok(out);
            }
            cursor = page.next_cursor;
        }
    }
}

fn virtual_root_attrs() -> Attributes {
    Attributes {
        kind: FileKind::Dir,
        mode: 0o555,
        size: 0,
        atime: Timestamp::default(),
        mtime: Timestamp::default(),
        ctime: Timestamp::default(),
    }
}

fn open_nofollow(path: &Path, write: bool) -> Result<File> {
    OpenOptions::new()
        .read(true)
        .write(write)
        .custom_flags(libc::O_NOFOLLOW)
        .open(path)
        .map_err(FsError::Io)
}

fn invalid(msg: &'static str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidInput, msg)
}

fn exists_or_io(e: io::Error) -> FsError {
    if e.kind() == io::ErrorKind::AlreadyExists {
        FsError::Exists
    } else {
        FsError::Io(e)
    }
}

fn noent_or_io(e: io::Error) -> FsError {
    if e.kind() == io::ErrorKind::NotFound {
        FsError::NoEntry
    } else {
        FsError::Io(e)
    }
}

fn dot_is_invalid(e: FsError) -> FsError {
    match e {
        FsError::Exists => FsError::InvalidName,
        e => e,
    }
}

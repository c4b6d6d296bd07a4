//! File handles and the per-attach handle table.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::names::EncodedName;

pub const HANDLE_LEN: usize = 32;
pub const TAG_LEN: usize = 24;
const TAG_DOMAIN: &[u8] = b"EFS-handle";

/// Opaque 32-byte token: `attach_id` (u64, big-endian) followed by a 24-byte
/// keyed-hash tag over the encrypted relative path.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FileHandle([u8; HANDLE_LEN]);

impl FileHandle {
    /// Handle of the virtual root that lists attach points.
    pub const VIRTUAL_ROOT: FileHandle = FileHandle([0; HANDLE_LEN]);

    pub fn from_bytes(bytes: [u8; HANDLE_LEN]) -> Self {
        FileHandle(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; HANDLE_LEN] {
        &self.0
    }

    pub fn attach_id(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }

    pub fn tag(&self) -> &[u8] {
        &self.0[8..]
    }

    pub fn derive(attach_id: u64, secret: &[u8], path: &EncPath) -> Self {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(secret).expect("hmac accepts any key length");
        mac.update(TAG_DOMAIN);
        mac.update(path.as_str().as_bytes());
        let digest = mac.finalize().into_bytes();
        let mut out = [0u8; HANDLE_LEN];
        out[..8].copy_from_slice(&attach_id.to_be_bytes());
        out[8..].copy_from_slice(&digest[..TAG_LEN]);
        FileHandle(out)
    }
}

impl fmt::Debug for FileHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FileHandle({}:", self.attach_id())?;
        for b in &self.0[8..14] {
            write!(f, "{b:02x}")?;
        }
        f.write_str("..)")
    }
}

/// Path relative to the backing directory, made only of encoded components
/// joined by `/`. The empty path is the attach root.
#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct EncPath(String);

impl EncPath {
    pub fn root() -> Self {
        EncPath(String::new())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self, component: &EncodedName) -> Self {
        if self.0.is_empty() {
            EncPath(component.as_str().to_owned())
        } else {
            EncPath(format!("{}/{}", self.0, component.as_str()))
        }
    }

    /// Parent path; the root is its own parent.
    pub fn parent(&self) -> Self {
        match self.0.rsplit_once('/') {
            Some((head, _)) => EncPath(head.to_owned()),
            None => EncPath::root(),
        }
    }

    pub fn is_within(&self, ancestor: &EncPath) -> bool {
        ancestor.is_root()
            || self.0 == ancestor.0
            || (self.0.starts_with(&ancestor.0) && self.0.as_bytes()[ancestor.0.len()] == b'/')
    }
}

/// Reverse map from handles to encrypted paths. A cache: anything missing is
/// reported as stale and can be re-learned by walking from the root.
#[derive(Default)]
pub struct HandleTable {
    map: Mutex<HashMap<FileHandle, EncPath>>,
}

impl HandleTable {
    pub fn insert(&self, handle: FileHandle, path: EncPath) {
        self.map.lock().unwrap().insert(handle, path);
    }

    pub fn get(&self, handle: &FileHandle) -> Option<EncPath> {
        self.map.lock().unwrap().get(handle).cloned()
    }

    pub fn remove(&self, handle: &FileHandle) {
        self.map.lock().unwrap().remove(handle);
    }

    /// Drops `path` and everything below it, returning the dropped handles.
    pub fn remove_subtree(&self, path: &EncPath) -> Vec<FileHandle> {
        let mut map = self.map.lock().unwrap();
        let gone: Vec<FileHandle> = map
            .iter()
            .filter(|(_, p)| p.is_within(path))
            .map(|(h, _)| *h)
            .collect();
        for h in &gone {
            map.remove(h);
        }
        gone
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

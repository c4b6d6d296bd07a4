//! Deterministic encryption of path components and symlink targets.
//!
//! A name is laid out as a record
//!
//! ```text
//! checksum u16 (big-endian) | name bytes | zero padding to a multiple of 16
//! ```
//!
//! where the checksum is the byte sum of the name mod 65536. Record block `j`
//! is whitened with mask block `S[j]` (no IV, so the same name always maps to
//! the same stored name) and encrypted with the block key. The ciphertext is
//! written in an unpadded base-64 alphabet that is safe in file names.
//! Opening a record under the wrong key almost always fails the checksum.

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use thiserror::Error;

use crate::crypto::{Keyring, BLOCK_LEN};

pub const MAX_NAME_LEN: usize = 174;
pub const MAX_LINK_TARGET_LEN: usize = 1024;
const CHECKSUM_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("empty name")]
    EmptyName,
    #[error("name too long")]
    NameTooLong,
    #[error("invalid name")]
    InvalidName,
    #[error("invalid encoding")]
    InvalidEncoding,
    #[error("not an encrypted name")]
    NotAnEfsName,
    #[error("name checksum mismatch")]
    ChecksumMismatch,
}

pub type Result<T> = std::result::Result<T, NameError>;

/// A name in the stored alphabet `A-Z a-z 0-9 - _`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EncodedName(String);

impl EncodedName {
    /// Accepts only strings over the stored alphabet.
    pub fn parse(text: &str) -> Result<Self> {
        if text.is_empty() || !text.bytes().all(is_alphabet) {
            return Err(NameError::InvalidEncoding);
        }
        Ok(EncodedName(text.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Debug for EncodedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncodedName({})", self.0)
    }
}

impl fmt::Display for EncodedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for EncodedName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn is_alphabet(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'-' || b == b'_'
}

pub fn encode_component(raw: &[u8]) -> EncodedName {
    EncodedName(URL_SAFE_NO_PAD.encode(raw))
}

pub fn decode_component(text: &str) -> Result<Vec<u8>> {
    if !text.bytes().all(is_alphabet) {
        return Err(NameError::InvalidEncoding);
    }
    URL_SAFE_NO_PAD
        .decode(text)
        .map_err(|_| NameError::InvalidEncoding)
}

/// Byte sum mod 65536.
pub fn name_checksum(name: &[u8]) -> Result<u16> {
    if name.is_empty() {
        return Err(NameError::EmptyName);
    }
    if name.len() > MAX_NAME_LEN {
        return Err(NameError::NameTooLong);
    }
    Ok(byte_sum(name))
}

fn byte_sum(bytes: &[u8]) -> u16 {
    bytes.iter().fold(0u16, |acc, &b| acc.wrapping_add(b as u16))
}

/// Checks a cleartext path component.
pub fn validate_name(name: &[u8]) -> Result<()> {
    if name.is_empty() {
        return Err(NameError::EmptyName);
    }
    if name.len() > MAX_NAME_LEN {
        return Err(NameError::NameTooLong);
    }
    if name == b"." || name == b".." || name.iter().any(|&b| b == 0 || b == b'/') {
        return Err(NameError::InvalidName);
    }
    Ok(())
}

fn validate_target(target: &[u8]) -> Result<()> {
    if target.is_empty() {
        return Err(NameError::EmptyName);
    }
    if target.len() > MAX_LINK_TARGET_LEN {
        return Err(NameError::NameTooLong);
    }
    if target.contains(&0) {
        return Err(NameError::InvalidName);
    }
    Ok(())
}

fn seal_record(payload: &[u8], keys: &Keyring) -> EncodedName {
    let mut record = Vec::with_capacity(CHECKSUM_LEN + payload.len() + BLOCK_LEN);
    record.extend_from_slice(&byte_sum(payload).to_be_bytes());
    record.extend_from_slice(payload);
    record.resize(record.len().div_ceil(BLOCK_LEN) * BLOCK_LEN, 0);
    keys.seal_in_place(0, &[0; BLOCK_LEN], &mut record);
    encode_component(&record)
}

fn open_record(enc: &str, keys: &Keyring, max_len: usize) -> Result<Vec<u8>> {
    let mut record = decode_component(enc).map_err(|_| NameError::NotAnEfsName)?;
    let max_record = (CHECKSUM_LEN + max_len).div_ceil(BLOCK_LEN) * BLOCK_LEN;
    if record.is_empty() || record.len() % BLOCK_LEN != 0 || record.len() > max_record {
        return Err(NameError::NotAnEfsName);
    }
    keys.open_in_place(0, &[0; BLOCK_LEN], &mut record);
    let used = record.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
    if used <= CHECKSUM_LEN || used > CHECKSUM_LEN + max_len {
        return Err(NameError::ChecksumMismatch);
    }
    // All padding must sit in the final block.
    if record.len() - used >= BLOCK_LEN {
        return Err(NameError::ChecksumMismatch);
    }
    let stored = u16::from_be_bytes([record[0], record[1]]);
    let payload = &record[CHECKSUM_LEN..used];
    if stored != byte_sum(payload) || payload.contains(&0) {
        return Err(NameError::ChecksumMismatch);
    }
    Ok(payload.to_vec())
}

pub fn seal_name(name: &[u8], keys: &Keyring) -> Result<EncodedName> {
    validate_name(name)?;
    Ok(seal_record(name, keys))
}

pub fn open_name(enc: &str, keys: &Keyring) -> Result<Vec<u8>> {
    let name = open_record(enc, keys, MAX_NAME_LEN)?;
    if name == b"." || name == b".." || name.contains(&b'/') {
        return Err(NameError::ChecksumMismatch);
    }
    Ok(name)
}

pub fn seal_link_target(target: &[u8], keys: &Keyring) -> Result<EncodedName> {
    validate_target(target)?;
    Ok(seal_record(target, keys))
}

pub fn open_link_target(enc: &str, keys: &Keyring) -> Result<Vec<u8>> {
    open_record(enc, keys, MAX_LINK_TARGET_LEN)
}

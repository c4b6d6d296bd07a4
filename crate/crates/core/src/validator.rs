//! The known-plaintext validator file that lets `attach` tell a right
//! passphrase from a wrong one, and creation of new encrypted directories.

use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::{DirBuilderExt, OpenOptionsExt};
use std::path::Path;

use thiserror::Error;

use crate::crypto::{self, CryptoError, Keyring};

/// Stored in the clear; `=` is outside the encoded-name alphabet so it can
/// never collide with an encrypted entry.
pub const VALIDATOR_NAME: &str = "=efs-validator=";
pub const VALIDATOR_MAGIC: &[u8; 32] = b"EFS-VALIDATOR-MAGIC-0123456789AB";
const VALIDATOR_LEN: usize = 48;

// magic | mask period (u64 BE) | zero pad. Embedding the period means a
// directory opened with a different period fails validation instead of
// silently decrypting files past the first wrap to garbage.
fn validator_plaintext(keys: &Keyring) -> [u8; VALIDATOR_LEN] {
    let mut out = [0u8; VALIDATOR_LEN];
    out[..32].copy_from_slice(VALIDATOR_MAGIC);
    out[32..40].copy_from_slice(&(keys.mask().period_blocks() as u64).to_be_bytes());
    out
}

pub fn write_validator(dir: &Path, keys: &Keyring) -> crypto::Result<()> {
    let file = OpenOptions::new()
        .read(true)
        .write(true)
        .create_new(true)
        .mode(0o600)
        .open(dir.join(VALIDATOR_NAME))?;
    crypto::init_file(&file, 0)?;
    crypto::write_range(&file, 0, &validator_plaintext(keys), keys)?;
    file.sync_all()?;
    Ok(())
}

/// `Ok(false)` means the validator decrypted to something else: wrong key.
pub fn check_validator(dir: &Path, keys: &Keyring) -> crypto::Result<bool> {
    let file = File::open(dir.join(VALIDATOR_NAME))?;
    let plain = crypto::read_range(&file, 0, VALIDATOR_LEN as u64 + 1, keys)?;
    Ok(plain[..] == validator_plaintext(keys)[..])
}

pub fn has_validator(dir: &Path) -> bool {
    fs::symlink_metadata(dir.join(VALIDATOR_NAME)).is_ok_and(|m| m.is_file())
}

#[derive(Debug, Error)]
pub enum InitError {
    #[error("passphrase must be at least {} bytes", crypto::MIN_PASSPHRASE_LEN)]
    PassphraseTooShort,
    #[error("{0} exists and is not an empty directory")]
    NotEmpty(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Crypto(CryptoError),
}

impl From<CryptoError> for InitError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::PassphraseTooShort => InitError::PassphraseTooShort,
            CryptoError::Io(io) => InitError::Io(io),
            other => InitError::Crypto(other),
        }
    }
}

/// Creates `path` (or adopts it if it is an empty directory) as a new
/// encrypted directory keyed by `passphrase`. On failure nothing is left
/// behind that was not there before.
pub fn create_encrypted_dir(
    path: &Path,
    passphrase: &[u8],
    kdf_iterations: u32,
    mask_blocks: usize,
) -> Result<(), InitError> {
    let keys = Keyring::from_passphrase(passphrase, kdf_iterations, mask_blocks)?;
    let created = match fs::symlink_metadata(path) {
        Ok(meta) => {
            if !meta.is_dir() || fs::read_dir(path)?.next().is_some() {
                return Err(InitError::NotEmpty(path.display().to_string()));
            }
            false
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            fs::DirBuilder::new().mode(0o700).create(path)?;
            true
        }
        Err(e) => return Err(e.into()),
    };
    if let Err(e) = write_validator(path, &keys) {
        let _ = fs::remove_file(path.join(VALIDATOR_NAME));
        if created {
            let _ = fs::remove_dir(path);
        }
        return Err(e.into());
    }
    Ok(())
}

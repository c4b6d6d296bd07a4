//! Content cryptography for encrypted backing files.
//!
//! A passphrase is stretched into two independent 128-bit subkeys. The mask
//! key drives AES in OFB mode from an all-zero seed to produce a fixed-length
//! whitening stream `S[0..M)`. Every cleartext block `p` at block index `i`
//! of a file whose header carries `iv` is stored as
//!
//! ```text
//! E_k2(p ^ S[i mod M] ^ iv)
//! ```
//!
//! Blocks never depend on each other, so any byte range can be read or
//! rewritten in place without touching the rest of the file.
//!
//! On disk a file is a 32-byte [`FileHeader`] followed by
//! `ceil(plaintext_length / 16)` ciphertext blocks.

use std::fmt;
use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::names;

pub const BLOCK_LEN: usize = 16;
pub type Block = [u8; BLOCK_LEN];

pub const MIN_PASSPHRASE_LEN: usize = 16;
pub const DEFAULT_KDF_ITERATIONS: u32 = 10_000;
pub const DEFAULT_MASK_BLOCKS: usize = 4096;

/// PBKDF2 salt for the mask-generation key.
pub const MASK_KEY_SALT: &[u8] = b"EFS-mask";
/// PBKDF2 salt for the block-encryption key.
pub const BLOCK_KEY_SALT: &[u8] = b"EFS-block";

pub const HEADER_LEN: usize = 32;
pub const HEADER_MAGIC: [u8; 4] = *b"EFS1";
pub const FORMAT_VERSION: u16 = 1;
/// Payload is stored in the filename alphabet instead of raw binary.
pub const FLAG_ASCII_ARMOR: u16 = 0x0001;

/// Largest byte offset (exclusive) a write may reach.
pub const MAX_FILE_LEN: u64 = 1 << 63;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("passphrase must be at least {MIN_PASSPHRASE_LEN} bytes")]
    PassphraseTooShort,
    #[error("corrupt file header: {0}")]
    CorruptHeader(&'static str),
    #[error("byte range exceeds the maximum file size")]
    OutOfRange,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CryptoError>;

/// The two subkeys derived from one passphrase.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct SubKeyPair {
    mask_key: Block,
    block_key: Block,
}

impl SubKeyPair {
    pub fn from_raw(mask_key: Block, block_key: Block) -> Self {
        SubKeyPair {
            mask_key,
            block_key,
        }
    }

    pub fn mask_key(&self) -> &Block {
        &self.mask_key
    }

    pub fn block_key(&self) -> &Block {
        &self.block_key
    }
}

impl fmt::Debug for SubKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SubKeyPair { .. }")
    }
}

/// Derives the subkey pair with the default iteration count.
pub fn derive_subkeys(passphrase: &[u8]) -> Result<SubKeyPair> {
    derive_subkeys_with(passphrase, DEFAULT_KDF_ITERATIONS)
}

/// PBKDF2-HMAC-SHA256 with a fixed salt per subkey. The salts differ, so the
/// two outputs are independent pseudorandom values for every passphrase.
pub fn derive_subkeys_with(passphrase: &[u8], iterations: u32) -> Result<SubKeyPair> {
    if passphrase.len() < MIN_PASSPHRASE_LEN {
        return Err(CryptoError::PassphraseTooShort);
    }
    let mut pair = SubKeyPair::from_raw([0; BLOCK_LEN], [0; BLOCK_LEN]);
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase, MASK_KEY_SALT, iterations, &mut pair.mask_key);
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase, BLOCK_KEY_SALT, iterations, &mut pair.block_key);
    debug_assert_ne!(pair.mask_key, pair.block_key);
    Ok(pair)
}

/// Precomputed whitening blocks `S[0..M)`.
///
/// `S[0] = E_k1(0^128)` and `S[j+1] = E_k1(S[j])`.
pub struct MaskStream {
    blocks: Vec<Block>,
}

impl MaskStream {
    pub fn generate(mask_key: &Block, period_blocks: usize) -> Self {
        assert!(period_blocks >= 1, "mask period must be at least one block");
        let cipher = Aes128::new(GenericArray::from_slice(mask_key));
        let mut state = GenericArray::from([0u8; BLOCK_LEN]);
        let blocks = (0..period_blocks)
            .map(|_| {
                cipher.encrypt_block(&mut state);
                let mut out = [0u8; BLOCK_LEN];
                out.copy_from_slice(&state);
                out
            })
            .collect();
        state.zeroize();
        MaskStream { blocks }
    }

    pub fn period_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Whitening block for block index `index` (wraps at the period).
    pub fn block(&self, index: u64) -> &Block {
        &self.blocks[(index % self.blocks.len() as u64) as usize]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }
}

impl Drop for MaskStream {
    fn drop(&mut self) {
        self.blocks.zeroize();
    }
}

impl fmt::Debug for MaskStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaskStream")
            .field("period_blocks", &self.blocks.len())
            .finish_non_exhaustive()
    }
}

/// Position of a 16-byte block inside a cleartext file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockIndex(u64);

impl BlockIndex {
    pub const MAX: u64 = u64::MAX / BLOCK_LEN as u64;

    pub fn new(index: u64) -> Option<Self> {
        (index <= Self::MAX).then_some(BlockIndex(index))
    }

    /// The block containing byte `offset`.
    pub fn containing(offset: u64) -> Self {
        BlockIndex(offset / BLOCK_LEN as u64)
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn byte_offset(self) -> u64 {
        self.0 * BLOCK_LEN as u64
    }
}

/// Everything needed to transform blocks for one passphrase: the expanded
/// block-key schedule and the mask stream. Immutable and shareable.
pub struct Keyring {
    block_cipher: Aes128,
    mask: MaskStream,
}

const PAR_BLOCKS: usize = 8;

impl Keyring {
    pub fn new(keys: &SubKeyPair, period_blocks: usize) -> Self {
        Keyring {
            block_cipher: Aes128::new(GenericArray::from_slice(keys.block_key())),
            mask: MaskStream::generate(keys.mask_key(), period_blocks),
        }
    }

    pub fn from_passphrase(passphrase: &[u8], iterations: u32, period_blocks: usize) -> Result<Self> {
        let keys = derive_subkeys_with(passphrase, iterations)?;
        Ok(Keyring::new(&keys, period_blocks))
    }

    pub fn mask(&self) -> &MaskStream {
        &self.mask
    }

    /// `E_k2(plain ^ S[i mod M] ^ iv)`.
    pub fn seal_block(&self, index: BlockIndex, iv: &Block, plain: &Block) -> Block {
        let mut block = *plain;
        xor_into(&mut block, self.mask.block(index.get()));
        xor_into(&mut block, iv);
        let ga = GenericArray::from_mut_slice(&mut block);
        self.block_cipher.encrypt_block(ga);
        block
    }

    /// Inverse of [`Keyring::seal_block`].
    pub fn open_block(&self, index: BlockIndex, iv: &Block, cipher: &Block) -> Block {
        let mut block = *cipher;
        let ga = GenericArray::from_mut_slice(&mut block);
        self.block_cipher.decrypt_block(ga);
        xor_into(&mut block, self.mask.block(index.get()));
        xor_into(&mut block, iv);
        block
    }

    /// Seals whole blocks in place; `buf` starts at block `first`.
    pub fn seal_in_place(&self, first: u64, iv: &Block, buf: &mut [u8]) {
        debug_assert_eq!(buf.len() % BLOCK_LEN, 0);
        for (j, chunk) in buf.chunks_exact_mut(BLOCK_LEN).enumerate() {
            xor_into(chunk, self.mask.block(first + j as u64));
            xor_into(chunk, iv);
        }
        self.ecb(buf, true);
    }

    /// Opens whole blocks in place; `buf` starts at block `first`.
    pub fn open_in_place(&self, first: u64, iv: &Block, buf: &mut [u8]) {
        debug_assert_eq!(buf.len() % BLOCK_LEN, 0);
        self.ecb(buf, false);
        for (j, chunk) in buf.chunks_exact_mut(BLOCK_LEN).enumerate() {
            xor_into(chunk, self.mask.block(first + j as u64));
            xor_into(chunk, iv);
        }
    }

    fn ecb(&self, buf: &mut [u8], encrypt: bool) {
        let mut batch = [GenericArray::from([0u8; BLOCK_LEN]); PAR_BLOCKS];
        for chunk in buf.chunks_mut(BLOCK_LEN * PAR_BLOCKS) {
            let n = chunk.len() / BLOCK_LEN;
            for (slot, src) in batch.iter_mut().zip(chunk.chunks_exact(BLOCK_LEN)) {
                slot.copy_from_slice(src);
            }
            if encrypt {
                self.block_cipher.encrypt_blocks(&mut batch[..n]);
            } else {
                self.block_cipher.decrypt_blocks(&mut batch[..n]);
            }
            for (dst, slot) in chunk.chunks_exact_mut(BLOCK_LEN).zip(batch.iter()) {
                dst.copy_from_slice(slot);
            }
        }
        for slot in batch.iter_mut() {
            slot.as_mut_slice().zeroize();
        }
    }
}

impl fmt::Debug for Keyring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keyring")
            .field("mask", &self.mask)
            .finish_non_exhaustive()
    }
}

fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

pub fn random_iv() -> Block {
    let mut iv = [0u8; BLOCK_LEN];
    rand::rngs::OsRng.fill_bytes(&mut iv);
    iv
}

/// Per-file preamble. Serialized as
/// `magic[4] | version u16 | flags u16 | plaintext_length u64 | iv[16]`,
/// all integers big-endian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FileHeader {
    pub flags: u16,
    pub plaintext_length: u64,
    pub iv: Block,
}

impl FileHeader {
    pub fn new(plaintext_length: u64, iv: Block, flags: u16) -> Self {
        FileHeader {
            flags,
            plaintext_length,
            iv,
        }
    }

    pub fn fresh(flags: u16) -> Self {
        FileHeader::new(0, random_iv(), flags)
    }

    pub fn is_ascii_armored(&self) -> bool {
        self.flags & FLAG_ASCII_ARMOR != 0
    }

    pub fn build(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&HEADER_MAGIC);
        out[4..6].copy_from_slice(&FORMAT_VERSION.to_be_bytes());
        out[6..8].copy_from_slice(&self.flags.to_be_bytes());
        out[8..16].copy_from_slice(&self.plaintext_length.to_be_bytes());
        out[16..32].copy_from_slice(&self.iv);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(CryptoError::CorruptHeader("truncated header"));
        }
        if bytes[0..4] != HEADER_MAGIC {
            return Err(CryptoError::CorruptHeader("bad magic"));
        }
        if u16::from_be_bytes([bytes[4], bytes[5]]) != FORMAT_VERSION {
            return Err(CryptoError::CorruptHeader("unsupported version"));
        }
        let flags = u16::from_be_bytes([bytes[6], bytes[7]]);
        if flags & !FLAG_ASCII_ARMOR != 0 {
            return Err(CryptoError::CorruptHeader("reserved flag bits set"));
        }
        let plaintext_length = u64::from_be_bytes(bytes[8..16].try_into().unwrap());
        if plaintext_length >= MAX_FILE_LEN {
            return Err(CryptoError::CorruptHeader("length out of range"));
        }
        let mut iv = [0u8; BLOCK_LEN];
        iv.copy_from_slice(&bytes[16..32]);
        Ok(FileHeader {
            flags,
            plaintext_length,
            iv,
        })
    }

    /// Number of ciphertext bytes before any armoring.
    pub fn padded_len(&self) -> u64 {
        padded_len(self.plaintext_length)
    }

    /// Number of payload bytes stored after the header.
    pub fn stored_payload_len(&self) -> u64 {
        let padded = self.padded_len();
        if self.is_ascii_armored() {
            armored_len(padded)
        } else {
            padded
        }
    }
}

pub fn build_header(plaintext_length: u64, iv: &Block, flags: u16) -> [u8; HEADER_LEN] {
    FileHeader::new(plaintext_length, *iv, flags).build()
}

pub fn parse_header(bytes: &[u8]) -> Result<FileHeader> {
    FileHeader::parse(bytes)
}

pub fn padded_len(n: u64) -> u64 {
    n.div_ceil(BLOCK_LEN as u64) * BLOCK_LEN as u64
}

/// Length of `n` bytes in the unpadded base-64 filename alphabet.
pub fn armored_len(n: u64) -> u64 {
    (n * 4).div_ceil(3)
}

fn read_full_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<usize> {
    let mut done = 0;
    while done < buf.len() {
        match file.read_at(&mut buf[done..], offset + done as u64) {
            Ok(0) => break,
            Ok(n) => done += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(done)
}

fn read_exact_payload(file: &File, buf: &mut [u8], offset: u64) -> Result<()> {
    if read_full_at(file, buf, offset)? != buf.len() {
        return Err(CryptoError::CorruptHeader("payload shorter than plaintext length"));
    }
    Ok(())
}

/// Reads the header of an encrypted file. An empty file has no header yet.
pub fn read_header(file: &File) -> Result<Option<FileHeader>> {
    let mut buf = [0u8; HEADER_LEN];
    match read_full_at(file, &mut buf, 0)? {
        0 => Ok(None),
        HEADER_LEN => FileHeader::parse(&buf).map(Some),
        _ => Err(CryptoError::CorruptHeader("truncated header")),
    }
}

fn write_header(file: &File, header: &FileHeader) -> Result<()> {
    file.write_all_at(&header.build(), 0)?;
    Ok(())
}

/// Turns `file` into an empty encrypted file with a fresh IV.
pub fn init_file(file: &File, flags: u16) -> Result<FileHeader> {
    let header = FileHeader::fresh(flags);
    file.set_len(0)?;
    write_header(file, &header)?;
    Ok(header)
}

fn header_or_init(file: &File) -> Result<FileHeader> {
    match read_header(file)? {
        Some(h) => Ok(h),
        None => init_file(file, 0),
    }
}

/// Writes `data` at cleartext byte `offset`, merging partial blocks and
/// zero-filling any gap past the old end of file. Returns `data.len()`.
pub fn write_range(file: &File, offset: u64, data: &[u8], keys: &Keyring) -> Result<usize> {
    let mut header = header_or_init(file)?;
    if data.is_empty() {
        return Ok(0);
    }
    let end = offset
        .checked_add(data.len() as u64)
        .filter(|&e| e < MAX_FILE_LEN)
        .ok_or(CryptoError::OutOfRange)?;
    if header.is_ascii_armored() {
        return write_armored(file, header, offset, data, keys);
    }

    let bl = BLOCK_LEN as u64;
    let old_len = header.plaintext_length;
    let stored_end = padded_len(old_len);
    let region_start = offset.min(old_len) / bl * bl;
    let region_end = padded_len(end);
    let mut buf = vec![0u8; (region_end - region_start) as usize];

    // Only the edge blocks can hold cleartext that survives this write.
    let mut edges = vec![region_start];
    if region_end - bl != region_start {
        edges.push(region_end - bl);
    }
    for blk in edges {
        let covered = offset <= blk && end >= blk + bl;
        if covered || blk >= stored_end {
            continue;
        }
        let rel = (blk - region_start) as usize;
        let slot = &mut buf[rel..rel + BLOCK_LEN];
        read_exact_payload(file, slot, HEADER_LEN as u64 + blk)?;
        keys.open_in_place(blk / bl, &header.iv, slot);
    }
    // Stale padding past the old end must read back as zeros.
    if old_len > region_start {
        let keep = ((old_len - region_start) as usize).min(buf.len());
        buf[keep..].fill(0);
    } else {
        buf.fill(0);
    }
    let rel = (offset - region_start) as usize;
    buf[rel..rel + data.len()].copy_from_slice(data);

    keys.seal_in_place(region_start / bl, &header.iv, &mut buf);
    file.write_all_at(&buf, HEADER_LEN as u64 + region_start)?;
    if end > old_len {
        header.plaintext_length = end;
        write_header(file, &header)?;
    }
    Ok(data.len())
}

/// Returns up to `count` cleartext bytes starting at `offset`.
pub fn read_range(file: &File, offset: u64, count: u64, keys: &Keyring) -> Result<Vec<u8>> {
    let header = match read_header(file)? {
        Some(h) => h,
        None => return Ok(Vec::new()),
    };
    let len = header.plaintext_length;
    if offset >= len || count == 0 {
        return Ok(Vec::new());
    }
    let n = count.min(len - offset);
    if header.is_ascii_armored() {
        let plain = read_armored(file, &header, keys)?;
        return Ok(plain[offset as usize..(offset + n) as usize].to_vec());
    }
    let bl = BLOCK_LEN as u64;
    let start = offset / bl * bl;
    let stop = padded_len(offset + n);
    let mut buf = vec![0u8; (stop - start) as usize];
    read_exact_payload(file, &mut buf, HEADER_LEN as u64 + start)?;
    keys.open_in_place(start / bl, &header.iv, &mut buf);
    let rel = (offset - start) as usize;
    buf.truncate(rel + n as usize);
    buf.drain(..rel);
    Ok(buf)
}

/// Truncates or zero-extends the cleartext to `new_len` bytes. Truncating
/// to zero starts over with a fresh IV.
pub fn set_len(file: &File, new_len: u64, keys: &Keyring) -> Result<()> {
    if new_len >= MAX_FILE_LEN {
        return Err(CryptoError::OutOfRange);
    }
    let mut header = header_or_init(file)?;
    let old_len = header.plaintext_length;
    if new_len == 0 {
        init_file(file, header.flags)?;
        return Ok(());
    }
    if new_len > old_len {
        write_range(file, new_len - 1, &[0], keys)?;
        return Ok(());
    }
    if new_len == old_len {
        return Ok(());
    }
    if header.is_ascii_armored() {
        let mut plain = read_armored(file, &header, keys)?;
        plain.truncate(new_len as usize);
        return store_armored(file, header, &plain, keys);
    }
    header.plaintext_length = new_len;
    write_header(file, &header)?;
    file.set_len(HEADER_LEN as u64 + padded_len(new_len))?;
    Ok(())
}

fn read_armored(file: &File, header: &FileHeader, keys: &Keyring) -> Result<Vec<u8>> {
    let mut text = vec![0u8; header.stored_payload_len() as usize];
    read_exact_payload(file, &mut text, HEADER_LEN as u64)?;
    let text = std::str::from_utf8(&text).map_err(|_| CryptoError::CorruptHeader("armored payload is not ASCII"))?;
    let mut buf = names::decode_component(text).map_err(|_| CryptoError::CorruptHeader("bad armored payload"))?;
    if buf.len() as u64 != header.padded_len() {
        return Err(CryptoError::CorruptHeader("armored payload length mismatch"));
    }
    keys.open_in_place(0, &header.iv, &mut buf);
    buf.truncate(header.plaintext_length as usize);
    Ok(buf)
}

fn store_armored(file: &File, mut header: FileHeader, plain: &[u8], keys: &Keyring) -> Result<()> {
    let mut buf = plain.to_vec();
    buf.resize(padded_len(plain.len() as u64) as usize, 0);
    keys.seal_in_place(0, &header.iv, &mut buf);
    let text = names::encode_component(&buf);
    file.write_all_at(text.as_str().as_bytes(), HEADER_LEN as u64)?;
    file.set_len(HEADER_LEN as u64 + text.as_str().len() as u64)?;
    header.plaintext_length = plain.len() as u64;
    write_header(file, &header)
}

// Armored payloads do not align to blocks, so they are rewritten whole.
fn write_armored(file: &File, header: FileHeader, offset: u64, data: &[u8], keys: &Keyring) -> Result<usize> {
    let mut plain = read_armored(file, &header, keys)?;
    let end = offset as usize + data.len();
    if plain.len() < end {
        plain.resize(end, 0);
    }
    plain[offset as usize..end].copy_from_slice(data);
    store_armored(file, header, &plain, keys)?;
    Ok(data.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hex(s: &str) -> Vec<u8> {
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    fn block(s: &str) -> Block {
        hex(s).try_into().unwrap()
    }

    fn test_keys(period: usize) -> Keyring {
        Keyring::new(&SubKeyPair::from_raw([7; 16], [9; 16]), period)
    }

    // Whole-file oracle: pad, whiten with S[i mod M] ^ iv, encrypt each block
    // with a freshly keyed reference cipher. Shares nothing with Keyring.
    fn oracle_encrypt(mask_key: &Block, block_key: &Block, period: usize, iv: &Block, plain: &[u8]) -> Vec<u8> {
        let ofb = Aes128::new(GenericArray::from_slice(mask_key));
        let ecb = Aes128::new(GenericArray::from_slice(block_key));
        let mut s = Vec::new();
        let mut state = [0u8; 16];
        for _ in 0..period {
            let mut g = GenericArray::from(state);
            ofb.encrypt_block(&mut g);
            state.copy_from_slice(&g);
            s.push(state);
        }
        let mut padded = plain.to_vec();
        while !padded.len().is_multiple_of(16) {
            padded.push(0);
        }
        let mut out = Vec::new();
        for (i, chunk) in padded.chunks(16).enumerate() {
            let mut b = [0u8; 16];
            for k in 0..16 {
                b[k] = chunk[k] ^ s[i % period][k] ^ iv[k];
            }
            let mut g = GenericArray::from(b);
            ecb.encrypt_block(&mut g);
            out.extend_from_slice(&g);
        }
        out
    }

    #[test]
    fn short_passphrase_rejected() {
        assert!(matches!(derive_subkeys(b"short"), Err(CryptoError::PassphraseTooShort)));
        assert!(matches!(derive_subkeys(&[b'x'; 15]), Err(CryptoError::PassphraseTooShort)));
        assert!(derive_subkeys(&[b'x'; 16]).is_ok());
    }

    #[test]
    fn example_passphrase_gives_distinct_subkeys() {
        let pair = derive_subkeys(b"This is Encrypted File System").unwrap();
        assert_ne!(pair.mask_key(), pair.block_key());
        assert_eq!(pair, derive_subkeys(b"This is Encrypted File System").unwrap());
    }

    #[test]
    fn subkey_golden_vector() {
        // PBKDF2-HMAC-SHA256, 10000 iterations, 16-byte output, computed with
        // an independent implementation.
        let pair = derive_subkeys(b"0123456789abcdef").unwrap();
        assert_eq!(pair.mask_key(), &block("1478cd43353afaae67be94cb190d86c6"));
        assert_eq!(pair.block_key(), &block("82babde1d3216ec85eb0b3908a4ec24d"));
    }

    #[test]
    fn zero_key_mask_starts_with_aes_of_zero() {
        let mask = MaskStream::generate(&[0; 16], 2);
        assert_eq!(mask.block(0), &block("66e94bd4ef8a2c3b884cfa59ca342b2e"));
        assert_eq!(mask.block(2), mask.block(0));
    }

    #[test]
    fn mask_is_deterministic_and_key_sensitive() {
        let a = MaskStream::generate(&[3; 16], 64);
        let b = MaskStream::generate(&[3; 16], 64);
        assert_eq!(a.blocks(), b.blocks());
        let mut k = [3u8; 16];
        k[15] ^= 1;
        let c = MaskStream::generate(&k, 64);
        assert_ne!(a.block(0), c.block(0));
    }

    #[test]
    fn seal_block_golden_vector() {
        let pair = derive_subkeys(b"0123456789abcdef").unwrap();
        let keys = Keyring::new(&pair, DEFAULT_MASK_BLOCKS);
        assert_eq!(keys.mask().block(5), &block("fdf806c3d4f43ce4b8783798a90ab73b"));
        let iv: Block = core::array::from_fn(|k| 0x10 + k as u8);
        let plain: Block = *b"EFS block vector";
        let sealed = keys.seal_block(BlockIndex::new(5).unwrap(), &iv, &plain);
        assert_eq!(sealed, block("e830f009c958a50f2e79e7c359778fc9"));
        assert_eq!(keys.open_block(BlockIndex::new(5).unwrap(), &iv, &sealed), plain);
    }

    #[test]
    fn equal_blocks_at_distinct_positions_differ() {
        let keys = test_keys(64);
        let iv = [1; 16];
        let p = [0xAB; 16];
        let a = keys.seal_block(BlockIndex::new(3).unwrap(), &iv, &p);
        let b = keys.seal_block(BlockIndex::new(4).unwrap(), &iv, &p);
        assert_ne!(a, b);
        // Known leak: positions a full period apart collide.
        let c = keys.seal_block(BlockIndex::new(3 + 64).unwrap(), &iv, &p);
        assert_eq!(a, c);
    }

    #[test]
    fn wrong_iv_does_not_decrypt() {
        let keys = test_keys(16);
        let i = BlockIndex::new(1).unwrap();
        let sealed = keys.seal_block(i, &[1; 16], b"sixteen byte msg");
        assert_ne!(&keys.open_block(i, &[2; 16], &sealed), b"sixteen byte msg");
    }

    #[test]
    fn header_golden_bytes() {
        let bytes = build_header(0, &[0; 16], 0);
        let mut expected = hex("45465331000100000000000000000000");
        expected.extend_from_slice(&[0; 16]);
        assert_eq!(bytes.to_vec(), expected);
    }

    #[test]
    fn header_rejects_bad_input() {
        let mut bytes = build_header(10, &[5; 16], 0);
        assert!(parse_header(&bytes[..31]).is_err());
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(parse_header(&bytes), Err(CryptoError::CorruptHeader(_))));
        let mut v2 = build_header(10, &[5; 16], 0);
        v2[5] = 2;
        assert!(matches!(parse_header(&v2), Err(CryptoError::CorruptHeader(_))));
        let mut flags = build_header(10, &[5; 16], 0);
        flags[6] = 0x80;
        assert!(matches!(parse_header(&flags), Err(CryptoError::CorruptHeader(_))));
    }

    #[test]
    fn one_byte_write_layout() {
        let keys = test_keys(16);
        let f = tempfile::tempfile().unwrap();
        assert_eq!(write_range(&f, 0, b"x", &keys).unwrap(), 1);
        assert_eq!(f.metadata().unwrap().len(), 48);
        assert_eq!(read_header(&f).unwrap().unwrap().plaintext_length, 1);
        assert_eq!(read_range(&f, 0, 100, &keys).unwrap(), b"x");
    }

    #[test]
    fn write_past_eof_zero_fills() {
        let keys = test_keys(16);
        let f = tempfile::tempfile().unwrap();
        write_range(&f, 40, b"tail", &keys).unwrap();
        assert_eq!(f.metadata().unwrap().len(), 32 + 48);
        let all = read_range(&f, 0, 1000, &keys).unwrap();
        assert_eq!(all.len(), 44);
        assert!(all[..40].iter().all(|&b| b == 0));
        assert_eq!(&all[40..], b"tail");
    }

    #[test]
    fn read_at_eof_is_empty() {
        let keys = test_keys(16);
        let f = tempfile::tempfile().unwrap();
        write_range(&f, 0, b"hello world", &keys).unwrap();
        assert!(read_range(&f, 11, 5, &keys).unwrap().is_empty());
        assert!(read_range(&f, 500, 5, &keys).unwrap().is_empty());
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let keys = test_keys(16);
        let f = tempfile::tempfile().unwrap();
        write_range(&f, 0, &[1; 40], &keys).unwrap();
        f.set_len(32 + 16).unwrap();
        assert!(matches!(read_range(&f, 0, 40, &keys), Err(CryptoError::CorruptHeader(_))));
        f.set_len(20).unwrap();
        assert!(matches!(read_header(&f), Err(CryptoError::CorruptHeader(_))));
    }

    #[test]
    fn shrinking_then_growing_exposes_zeros() {
        let keys = test_keys(16);
        let f = tempfile::tempfile().unwrap();
        write_range(&f, 0, &[0xEE; 40], &keys).unwrap();
        set_len(&f, 5, &keys).unwrap();
        assert_eq!(read_range(&f, 0, 100, &keys).unwrap(), vec![0xEE; 5]);
        write_range(&f, 30, b"z", &keys).unwrap();
        let all = read_range(&f, 0, 100, &keys).unwrap();
        assert_eq!(&all[..5], &[0xEE; 5]);
        assert!(all[5..30].iter().all(|&b| b == 0));
        assert_eq!(all[30], b'z');
    }

    #[test]
    fn truncate_to_zero_rerandomizes_iv() {
        let keys = test_keys(16);
        let f = tempfile::tempfile().unwrap();
        write_range(&f, 0, b"abc", &keys).unwrap();
        let before = read_header(&f).unwrap().unwrap().iv;
        set_len(&f, 0, &keys).unwrap();
        let after = read_header(&f).unwrap().unwrap();
        assert_eq!(after.plaintext_length, 0);
        assert_ne!(before, after.iv);
        assert_eq!(f.metadata().unwrap().len(), 32);
    }

    #[test]
    fn ciphertext_matches_oracle() {
        let mk = [0x11; 16];
        let bk = [0x22; 16];
        let keys = Keyring::new(&SubKeyPair::from_raw(mk, bk), 8);
        let f = tempfile::tempfile().unwrap();
        let data: Vec<u8> = (0..300u32).map(|i| (i * 7 + 3) as u8).collect();
        write_range(&f, 0, &data[..100], &keys).unwrap();
        write_range(&f, 100, &data[100..], &keys).unwrap();
        let header = read_header(&f).unwrap().unwrap();
        let mut stored = vec![0u8; f.metadata().unwrap().len() as usize - HEADER_LEN];
        f.read_exact_at(&mut stored, HEADER_LEN as u64).unwrap();
        assert_eq!(stored, oracle_encrypt(&mk, &bk, 8, &header.iv, &data));
    }

    #[test]
    fn armored_roundtrip_and_size() {
        let keys = test_keys(16);
        let f = tempfile::tempfile().unwrap();
        init_file(&f, FLAG_ASCII_ARMOR).unwrap();
        let data = vec![0x5A; 909];
        write_range(&f, 0, &data[..500], &keys).unwrap();
        write_range(&f, 500, &data[500..], &keys).unwrap();
        assert_eq!(f.metadata().unwrap().len(), 32 + 1216);
        assert_eq!(read_range(&f, 0, 2000, &keys).unwrap(), data);
        assert_eq!(read_range(&f, 900, 20, &keys).unwrap(), vec![0x5A; 9]);
    }

    proptest! {
        #[test]
        fn open_inverts_seal(index in 0..BlockIndex::MAX, iv in any::<[u8; 16]>(), plain in any::<[u8; 16]>()) {
            let keys = test_keys(32);
            let i = BlockIndex::new(index).unwrap();
            let sealed = keys.seal_block(i, &iv, &plain);
            prop_assert_eq!(keys.open_block(i, &iv, &sealed), plain);
        }

        #[test]
        fn header_roundtrip(len in 0..MAX_FILE_LEN, iv in any::<[u8; 16]>(), armored in any::<bool>()) {
            let h = FileHeader::new(len, iv, if armored { FLAG_ASCII_ARMOR } else { 0 });
            prop_assert_eq!(parse_header(&h.build()).unwrap(), h);
        }

        #[test]
        fn writes_match_shadow_buffer(
            writes in proptest::collection::vec((0u64..3000, proptest::collection::vec(any::<u8>(), 0..600)), 1..12)
        ) {
            let keys = test_keys(8);
            let f = tempfile::tempfile().unwrap();
            let mut shadow: Vec<u8> = Vec::new();
            for (off, data) in &writes {
                write_range(&f, *off, data, &keys).unwrap();
                if !data.is_empty() {
                    let end = *off as usize + data.len();
                    if shadow.len() < end {
                        shadow.resize(end, 0);
                    }
                    shadow[*off as usize..end].copy_from_slice(data);
                }
            }
            prop_assert_eq!(read_range(&f, 0, u64::MAX, &keys).unwrap(), shadow.clone());
            for blk in 0..shadow.len().div_ceil(16) {
                let got = read_range(&f, blk as u64 * 16, 16, &keys).unwrap();
                let end = (blk * 16 + 16).min(shadow.len());
                prop_assert_eq!(&got[..], &shadow[blk * 16..end]);
            }
        }
    }
}

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CedError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CedError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

//! The bundle container: a zip archive with stored (uncompressed) entries in
//! sorted order, every timestamp at the DOS epoch and fixed permissions.
//! The layout is a pure function of the entries, so a verifier rebuilds
//! the archive and compares bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use thiserror::Error;
use veritas_core::verify::BundleEntries;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("not a bundle archive: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("entry {0}: {1}")]
    Entry(String, std::io::Error),
    #[error("duplicate entry {0}")]
    Duplicate(String),
    #[error("entry {0} is not a stored file")]
    NotStored(String),
}

fn options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644)
        .large_file(false)
}

pub fn write_bundle(entries: &BundleEntries) -> Result<Vec<u8>, BundleError> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    for (name, data) in entries {
        zip.start_file(name.as_str(), options())?;
        zip.write_all(data).map_err(|e| BundleError::Entry(name.clone(), e))?;
    }
    Ok(zip.finish()?.into_inner())
}

pub fn read_bundle(bytes: &[u8]) -> Result<BundleEntries, BundleError> {
    let mut archive = ZipArchive::new(Cursor::new(bytes))?;
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut f = archive.by_index(i)?;
        let name = f.name().to_string();
        if f.is_dir() || f.compression() != CompressionMethod::Stored {
            return Err(BundleError::NotStored(name));
        }
        let mut data = Vec::with_capacity(f.size() as usize);
        f.read_to_end(&mut data).map_err(|e| BundleError::Entry(name.clone(), e))?;
        if out.insert(name.clone(), data).is_some() {
            return Err(BundleError::Duplicate(name));
        }
    }
    Ok(out)
}

/// True when `bytes` is exactly the archive [`write_bundle`] produces for
/// its own entries.
pub fn is_canonical(bytes: &[u8], entries: &BundleEntries) -> bool {
    write_bundle(entries).is_ok_and(|b| b == bytes)
}

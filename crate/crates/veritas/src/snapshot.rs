//! Source snapshots: recursive, filtered, sorted, hashed.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use globset::{Glob, GlobBuilder, GlobSet, GlobSetBuilder};
use veritas_core::digest::{Digest, StreamHasher};
use veritas_core::model::{check_relative_path, EntryKind, FileDigest, SourceSnapshot};
use walkdir::WalkDir;

#[derive(Debug, Clone)]
pub struct SourceFilter {
    include: GlobSet,
    exclude: GlobSet,
    max_file_bytes: u64,
}

fn glob(p: &str) -> Result<Glob, globset::Error> {
    GlobBuilder::new(p).literal_separator(true).backslash_escape(true).build()
}

impl SourceFilter {
    pub fn new(include: &[String], exclude: &[String], max_file_bytes: u64) -> Result<Self, globset::Error> {
        let mut inc = GlobSetBuilder::new();
        for p in include {
            inc.add(glob(p)?);
        }
        let mut exc = GlobSetBuilder::new();
        for p in exclude {
            exc.add(glob(p)?);
        }
        Ok(Self { include: inc.build()?, exclude: exc.build()?, max_file_bytes })
    }

    /// Everything under the root, nothing excluded.
    pub fn all() -> Self {
        Self::new(&["**".into()], &[], u64::MAX).expect("static patterns")
    }
}

/// Content-addressed copies of snapshotted files, so the bundle carries the
/// bytes that were present at execution time.
#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: PathBuf,
}

impl BlobStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, d: &Digest) -> PathBuf {
        self.dir.join(d.hex())
    }

    pub fn get(&self, d: &Digest) -> io::Result<Vec<u8>> {
        let data = fs::read(self.path(d))?;
        if Digest::of(&data) != *d {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("blob {} is corrupt", d.hex())));
        }
        Ok(data)
    }

    fn put_bytes(&self, data: &[u8]) -> io::Result<Digest> {
        let d = Digest::of(data);
        let target = self.path(&d);
        if !target.exists() {
            fs::create_dir_all(&self.dir)?;
            let tmp = self.dir.join(format!(".tmp-{}", rand::random::<u64>()));
            fs::write(&tmp, data)?;
            fs::rename(&tmp, &target)?;
        }
        Ok(d)
    }
}

/// Hashes a file, copying it into `store` on the way if one is given.
fn hash_file(path: &Path, store: Option<&BlobStore>) -> io::Result<(Digest, u64)> {
    let mut f = File::open(path)?;
    let mut hasher = StreamHasher::new();
    let mut buf = vec![0u8; 256 * 1024];
    let mut tmp = match store {
        Some(s) => {
            fs::create_dir_all(&s.dir)?;
            let p = s.dir.join(format!(".tmp-{}", rand::random::<u64>()));
            Some((File::create(&p)?, p))
        }
        None => None,
    };
    let result = (|| {
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            if let Some((t, _)) = tmp.as_mut() {
                t.write_all(&buf[..n])?;
            }
        }
        Ok(hasher.finish())
    })();
    if let (Some((t, p)), Some(store)) = (tmp, store) {
        drop(t);
        match &result {
            Ok((d, _)) if !store.path(d).exists() => fs::rename(&p, store.path(d))?,
            _ => {
                let _ = fs::remove_file(&p);
            }
        }
    }
    result
}

fn relative(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let mut parts = Vec::new();
    for c in rel.components() {
        parts.push(c.as_os_str().to_str()?);
    }
    Some(parts.join("/"))
}

/// Snapshots `root`. `root_label` is the relative path recorded in the
/// snapshot. Unreadable files become error entries; the snapshot itself
/// only fails when `root` cannot be read at all.
pub fn snapshot_sources(
    root: &Path,
    root_label: &str,
    filter: &SourceFilter,
    store: Option<&BlobStore>,
) -> io::Result<SourceSnapshot> {
    fs::read_dir(root)?;
    let mut files = Vec::new();
    let walker = WalkDir::new(root).follow_links(false).sort_by_file_name().into_iter().filter_entry(|e| {
        if e.depth() == 0 {
            return true;
        }
        match relative(root, e.path()) {
            Some(rel) => !filter.exclude.is_match(&rel),
            None => true,
        }
    });

    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                // An unreadable directory: record it so the gap is visible.
                if let Some(rel) = e.path().and_then(|p| relative(root, p)).filter(|r| !r.is_empty()) {
                    if check_relative_path(&rel).is_ok() {
                        files.push(FileDigest {
                            path: rel,
                            kind: EntryKind::File,
                            size_bytes: 0,
                            digest: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
                continue;
            }
        };
        let ft = entry.file_type();
        if ft.is_dir() {
            continue;
        }
        let Some(rel) = relative(root, entry.path()) else {
            eprintln!("veritas: skipping non-UTF-8 path {}", entry.path().display());
            continue;
        };
        if !filter.include.is_match(&rel) || filter.exclude.is_match(&rel) {
            continue;
        }
        if check_relative_path(&rel).is_err() {
            eprintln!("veritas: skipping unrepresentable path {rel:?}");
            continue;
        }
        files.push(describe(entry.path(), rel, ft, filter, store));
    }
    SourceSnapshot::new(root_label, files).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

fn describe(path: &Path, rel: String, ft: fs::FileType, filter: &SourceFilter, store: Option<&BlobStore>) -> FileDigest {
    let mut fd = FileDigest { path: rel, kind: EntryKind::File, size_bytes: 0, digest: None, error: None };
    if ft.is_symlink() {
        fd.kind = EntryKind::Symlink;
        match fs::read_link(path) {
            Ok(target) => {
                let target = target.to_string_lossy().into_owned();
                fd.size_bytes = target.len() as u64;
                let stored = match store {
                    Some(s) => s.put_bytes(target.as_bytes()),
                    None => Ok(Digest::of(target.as_bytes())),
                };
                match stored {
                    Ok(d) => fd.digest = Some(d),
                    Err(e) => fd.error = Some(e.to_string()),
                }
            }
            Err(e) => fd.error = Some(e.to_string()),
        }
        return fd;
    }
    if !ft.is_file() {
        fd.error = Some("not a regular file; contents not read".into());
        return fd;
    }
    let size = match fs::symlink_metadata(path) {
        Ok(m) => m.len(),
        Err(e) => {
            fd.error = Some(e.to_string());
            return fd;
        }
    };
    fd.size_bytes = size;
    if size > filter.max_file_bytes {
        fd.error = Some(format!("larger than {} bytes; contents not read", filter.max_file_bytes));
        return fd;
    }
    match hash_file(path, store) {
        Ok((d, n)) => {
            fd.digest = Some(d);
            fd.size_bytes = n;
        }
        Err(e) => fd.error = Some(e.to_string()),
    }
    fd
}

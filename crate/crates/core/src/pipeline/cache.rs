//! Content-addressed store for inference artifacts.
//!
//! Layout: `{root}/{stage}/{first two hex digits}/{digest}.{png|json}` with a
//! sidecar `{digest}.meta.json` next to each payload. The digest is SHA-256
//! over the canonical descriptor string, the stage input identity and the
//! seed. Entries are write-once: a second writer of an existing key checks
//! that its payload matches instead of overwriting. Reads re-hash the payload
//! and re-derive the key from the sidecar, so a corrupted entry is never served.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Stage};
use crate::model::ContentHash;

pub const META_SUFFIX: &str = ".meta.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub stage: Stage,
    pub digest: ContentHash,
}

impl CacheKey {
    pub fn derive(stage: Stage, descriptor: &str, input_identity: &str, seed: u64) -> Self {
        let mut h = Sha256::new();
        for part in [stage.as_str(), descriptor, input_identity] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update(seed.to_le_bytes());
        CacheKey { stage, digest: ContentHash(h.finalize().into()) }
    }

    pub fn extension(&self) -> &'static str {
        match self.stage {
            Stage::Generation => "png",
            Stage::Caption | Stage::Embedding => "json",
        }
    }
}

/// What produced an entry; stored in the sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyInputs {
    pub descriptor: String,
    pub input_identity: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub digest: ContentHash,
    pub stage: Stage,
    #[serde(flatten)]
    pub inputs: KeyInputs,
    /// Identities this entry was computed from (`image:<hash>`, `text:<hash>`).
    pub input_refs: Vec<String>,
    /// Identity of the artifact this entry holds, when it is itself an input elsewhere.
    pub output_ref: Option<String>,
    pub payload_sha256: ContentHash,
    pub payload_bytes: u64,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct CacheHit {
    pub payload: Vec<u8>,
    pub meta: EntryMeta,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub stage: Stage,
    pub digest: String,
    pub bytes: u64,
    pub last_access: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub stage: Option<Stage>,
    pub digest: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GcReport {
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub evicted: Vec<String>,
    pub pinned_kept: usize,
}

pub fn text_ref(text: &str) -> String {
    format!("text:{}", ContentHash::of_bytes(text.as_bytes()))
}

pub fn image_ref(hash: &ContentHash) -> String {
    format!("image:{hash}")
}

#[derive(Debug, Clone)]
pub struct CacheStore {
    root: PathBuf,
}

fn integrity(digest: &ContentHash, reason: impl Into<String>) -> Error {
    Error::CacheIntegrity { digest: digest.to_hex(), reason: reason.into() }
}

impl CacheStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(CacheStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn payload_path(&self, key: &CacheKey) -> PathBuf {
        let hex = key.digest.to_hex();
        self.root.join(key.stage.as_str()).join(&hex[..2]).join(format!("{hex}.{}", key.extension()))
    }

    pub fn meta_path(&self, key: &CacheKey) -> PathBuf {
        let hex = key.digest.to_hex();
        self.root.join(key.stage.as_str()).join(&hex[..2]).join(format!("{hex}{META_SUFFIX}"))
    }

    fn check_meta(key: &CacheKey, meta: &EntryMeta, payload: &[u8]) -> Result<()> {
        if meta.digest != key.digest || meta.stage != key.stage {
            return Err(integrity(&key.digest, "sidecar names a different key"));
        }
        let rederived = CacheKey::derive(meta.stage, &meta.inputs.descriptor, &meta.inputs.input_identity, meta.inputs.seed);
        if rederived != *key {
            return Err(integrity(&key.digest, "sidecar inputs do not hash to the key"));
        }
        if meta.payload_bytes != payload.len() as u64 || ContentHash::of_bytes(payload) != meta.payload_sha256 {
            return Err(integrity(&key.digest, "payload does not match its recorded digest"));
        }
        Ok(())
    }

    fn read_meta(&self, key: &CacheKey) -> Result<Option<EntryMeta>> {
        let path = self.meta_path(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| integrity(&key.digest, format!("unreadable sidecar: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Verified read. `None` on a miss; an integrity error if the entry
    /// exists but does not check out or was produced by different inputs.
    pub fn get(&self, key: &CacheKey, inputs: &KeyInputs) -> Result<Option<CacheHit>> {
        let Some(meta) = self.read_meta(key)? else {
            return Ok(None);
        };
        let path = self.payload_path(key);
        let payload = match fs::read(&path) {
            Ok(p) => p,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(integrity(&key.digest, "sidecar present but payload missing"))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Self::check_meta(key, &meta, &payload)?;
        if meta.inputs != *inputs {
            return Err(integrity(&key.digest, "entry was produced by different inputs"));
        }
        // LRU bookkeeping for gc; failure to touch is harmless.
        if let Ok(f) = fs::File::options().append(true).open(&path) {
            let _ = f.set_modified(SystemTime::now());
        }
        Ok(Some(CacheHit { payload, meta, path }))
    }

    fn write_new(path: &Path, bytes: &[u8]) -> Result<bool> {
        let dir = path.parent().expect("cache paths have a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(bytes).map_err(|e| Error::io(&tmp.0, e))?;
        tmp.1.sync_all().map_err(|e| Error::io(&tmp.0, e))?;
        drop(tmp.1);
        // hard_link refuses to replace an existing file, which gives write-once semantics.
        let linked = match fs::hard_link(&tmp.0, path) {
            Ok(()) => true,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => false,
            Err(e) => {
                let _ = fs::remove_file(&tmp.0);
                return Err(Error::io(path, e));
            }
        };
        let _ = fs::remove_file(&tmp.0);
        Ok(linked)
    }

    /// Write-once insert. If the key already exists, the stored payload must
    /// equal `payload` unless `deterministic` is false, in which case the
    /// first writer wins. Returns the entry as stored.
    pub fn put(
        &self,
        key: &CacheKey,
        inputs: KeyInputs,
        payload: &[u8],
        input_refs: Vec<String>,
        output_ref: Option<String>,
        deterministic: bool,
    ) -> Result<CacheHit> {
        let path = self.payload_path(key);
        let fresh = Self::write_new(&path, payload)?;
        if !fresh {
            let existing = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if existing != payload {
                if deterministic {
                    return Err(integrity(&key.digest, "existing payload differs from a deterministic rewrite"));
                }
                if let Some(meta) = self.read_meta(key)? {
                    Self::check_meta(key, &meta, &existing)?;
                    return Ok(CacheHit { payload: existing, meta, path });
                }
                return Err(integrity(&key.digest, "payload present without sidecar"));
            }
            if let Some(meta) = self.read_meta(key)? {
                Self::check_meta(key, &meta, &existing)?;
                return Ok(CacheHit { payload: existing, meta, path });
            }
        }
        let meta = EntryMeta {
            digest: key.digest,
            stage: key.stage,
            inputs,
            input_refs,
            output_ref,
            payload_sha256: ContentHash::of_bytes(payload),
            payload_bytes: payload.len() as u64,
            created_at: Utc::now(),
        };
        let meta_bytes = serde_json::to_vec_pretty(&meta)?;
        let meta_path = self.meta_path(key);
        if !Self::write_new(&meta_path, &meta_bytes)? {
            // Lost a race with another writer of the same key; use theirs.
            if let Some(theirs) = self.read_meta(key)? {
                Self::check_meta(key, &theirs, payload)?;
                return Ok(CacheHit { payload: payload.to_vec(), meta: theirs, path });
            }
        }
        Ok(CacheHit { payload: payload.to_vec(), meta, path })
    }

    fn sidecars(&self) -> Result<Vec<(Stage, PathBuf)>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let dir = self.root.join(stage.as_str());
            if !dir.is_dir() {
                continue;
            }
            for shard in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let shard = shard.map_err(|e| Error::io(&dir, e))?.path();
                if !shard.is_dir() {
                    continue;
                }
                for file in fs::read_dir(&shard).map_err(|e| Error::io(&shard, e))? {
                    let p = file.map_err(|e| Error::io(&shard, e))?.path();
                    out.push((stage, p));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn key_of(stage: Stage, path: &Path) -> Option<(CacheKey, bool)> {
        let name = path.file_name()?.to_str()?;
        let (hex, is_meta) = match name.strip_suffix(META_SUFFIX) {
            Some(h) => (h, true),
            None => (name.rsplit_once('.')?.0, false),
        };
        let digest = ContentHash::from_hex(hex).ok()?;
        Some((CacheKey { stage, digest }, is_meta))
    }

    /// Entries with their combined payload + sidecar size, sorted by digest.
    pub fn list(&self) -> Result<Vec<EntryInfo>> {
        let mut out = Vec::new();
        for (stage, path) in self.sidecars()? {
            let Some((key, true)) = Self::key_of(stage, &path) else { continue };
            let payload = self.payload_path(&key);
            let meta_len = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
            let (payload_len, accessed) = match fs::metadata(&payload) {
                Ok(m) => (m.len(), m.modified().unwrap_or(SystemTime::UNIX_EPOCH)),
                Err(_) => (0, SystemTime::UNIX_EPOCH),
            };
            out.push(EntryInfo {
                stage,
                digest: key.digest.to_hex(),
                bytes: payload_len + meta_len,
                last_access: accessed.into(),
            });
        }
        Ok(out)
    }

    /// Re-hashes every entry. Orphaned payloads and stray files are reported too.
    pub fn verify(&self) -> Result<Vec<Corruption>> {
        let mut problems = Vec::new();
        let mut with_meta = HashSet::new();
        let files = self.sidecars()?;
        for (stage, path) in &files {
            let Some((key, true)) = Self::key_of(*stage, path) else { continue };
            with_meta.insert(key.clone());
            let check = || -> Result<()> {
                let meta = self.read_meta(&key)?.ok_or_else(|| integrity(&key.digest, "sidecar vanished"))?;
                let payload_path = self.payload_path(&key);
                let payload =
                    fs::read(&payload_path).map_err(|_| integrity(&key.digest, "sidecar present but payload missing"))?;
                Self::check_meta(&key, &meta, &payload)
            };
            if let Err(e) = check() {
                let reason = match e {
                    Error::CacheIntegrity { reason, .. } => reason,
                    other => other.to_string(),
                };
                problems.push(Corruption { stage: Some(*stage), digest: key.digest.to_hex(), reason });
            }
        }
        for (stage, path) in &files {
            match Self::key_of(*stage, path) {
                Some((key, false)) if !with_meta.contains(&key) => problems.push(Corruption {
                    stage: Some(*stage),
                    digest: key.digest.to_hex(),
                    reason: "payload without sidecar".into(),
                }),
                None if !path.to_string_lossy().contains(".tmp") => problems.push(Corruption {
                    stage: Some(*stage),
                    digest: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                    reason: "unrecognized file in cache".into(),
                }),
                _ => {}
            }
        }
        Ok(problems)
    }

    /// Digests pinned by a set of seed identities, closed under
    /// "an entry computed from a pinned identity pins its output identity".
    pub fn pinned_digests(&self, seeds: &HashSet<String>) -> Result<HashSet<String>> {
        let mut metas = Vec::new();
        for (stage, path) in self.sidecars()? {
            if let Some((key, true)) = Self::key_of(stage, &path) {
                if let Ok(Some(meta)) = self.read_meta(&key) {
                    metas.push(meta);
                }
            }
        }
        let mut refs = seeds.clone();
        let mut pinned = HashSet::new();
        loop {
            let mut changed = false;
            for meta in &metas {
                let hex = meta.digest.to_hex();
                if pinned.contains(&hex) || !meta.input_refs.iter().any(|r| refs.contains(r)) {
                    continue;
                }
                pinned.insert(hex);
                if let Some(out) = &meta.output_ref {
                    refs.insert(out.clone());
                }
                changed = true;
            }
            if !changed {
                return Ok(pinned);
            }
        }
    }

    /// Evicts least-recently-used entries until the cache fits in `max_bytes`.
    /// Entries in `pinned` are never evicted.
    pub fn gc(&self, max_bytes: u64, pinned: &HashSet<String>) -> Result<GcReport> {
        let mut entries = self.list()?;
        let before: u64 = entries.iter().map(|e| e.bytes).sum();
        entries.sort_by(|a, b| a.last_access.cmp(&b.last_access).then(a.digest.cmp(&b.digest)));
        let mut report = GcReport { bytes_before: before, bytes_after: before, ..Default::default() };
        for entry in &entries {
            if pinned.contains(&entry.digest) {
                report.pinned_kept += 1;
                continue;
            }
            if report.bytes_after <= max_bytes {
                continue;
            }
            let key = CacheKey { stage: entry.stage, digest: ContentHash::from_hex(&entry.digest)? };
            for path in [self.meta_path(&key), self.payload_path(&key)] {
                match fs::remove_file(&path) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(Error::io(path, e)),
                }
            }
            report.bytes_after -= entry.bytes;
            report.evicted.push(entry.digest.clone());
        }
        Ok(report)
    }
}

fn tempfile_in(dir: &Path) -> Result<(PathBuf, fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    loop {
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        match fs::File::options().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(path, e)),
        }
    }
}

/// Exclusive lock over a cache directory, released on drop.
#[derive(Debug)]
pub struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(LOCK_FILE);
        for _ in 0..2 {
            match fs::File::options().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(CacheLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let pid: Option<u32> = holder.trim().parse().ok();
                    if pid.is_some_and(process_alive) {
                        return Err(Error::Configuration(format!(
                            "cache {} is locked by running process {}",
                            root.display(),
                            holder.trim()
                        )));
                    }
                    log::warn!("removing stale cache lock {}", path.display());
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::Configuration(format!("could not lock cache {}", root.display())))
    }
}

fn process_alive(pid: u32) -> bool {
    if pid == std::process::id() {
        return true;
    }
    let proc_root = Path::new("/proc");
    if proc_root.is_dir() {
        proc_root.join(pid.to_string()).exists()
    } else {
        // Without procfs, assume the holder is alive.
        true
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(id: &str) -> KeyInputs {
        KeyInputs { descriptor: "{\"d\":1}".into(), input_identity: id.into(), seed: 0 }
    }

    fn key(id: &str) -> CacheKey {
        CacheKey::derive(Stage::Embedding, "{\"d\":1}", id, 0)
    }

    #[test]
    fn key_changes_with_every_input() {
        let base = CacheKey::derive(Stage::Generation, "d", "text:x", 0);
        assert_eq!(base, CacheKey::derive(Stage::Generation, "d", "text:x", 0));
        assert_ne!(base, CacheKey::derive(Stage::Generation, "d2", "text:x", 0));
        assert_ne!(base, CacheKey::derive(Stage::Generation, "d", "text:y", 0));
        assert_ne!(base, CacheKey::derive(Stage::Generation, "d", "text:x", 1));
        assert_ne!(base.digest, CacheKey::derive(Stage::Embedding, "d", "text:x", 0).digest);
        // Length prefixes keep field boundaries unambiguous.
        assert_ne!(CacheKey::derive(Stage::Caption, "ab", "c", 0), CacheKey::derive(Stage::Caption, "a", "bc", 0));
    }

    #[test]
    fn put_get_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let k = key("image:aa");
        assert!(store.get(&k, &inputs("image:aa")).unwrap().is_none());
        store.put(&k, inputs("image:aa"), b"[1,2]", vec!["image:aa".into()], None, true).unwrap();
        let hit = store.get(&k, &inputs("image:aa")).unwrap().unwrap();
        assert_eq!(hit.payload, b"[1,2]");
        let hex = k.digest.to_hex();
        assert_eq!(hit.path, dir.path().join("embedding").join(&hex[..2]).join(format!("{hex}.json")));
        assert!(store.meta_path(&k).is_file());
    }

    #[test]
    fn second_writer_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let k = key("x");
        let first = store.put(&k, inputs("x"), b"one", vec![], None, true).unwrap();
        let again = store.put(&k, inputs("x"), b"one", vec![], None, true).unwrap();
        assert_eq!(first.meta, again.meta);
        let err = store.put(&k, inputs("x"), b"two", vec![], None, true).unwrap_err();
        assert!(err.is_cache_integrity());
        let kept = store.put(&k, inputs("x"), b"two", vec![], None, false).unwrap();
        assert_eq!(kept.payload, b"one");
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let k = key("x");
        store.put(&k, inputs("x"), b"payload", vec![], None, true).unwrap();
        let path = store.payload_path(&k);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0x01;
        fs::remove_file(&path).unwrap();
        fs::write(&path, bytes).unwrap();
        assert!(store.get(&k, &inputs("x")).unwrap_err().is_cache_integrity());
        let problems = store.verify().unwrap();
        assert_eq!(problems.len(), 1);
        assert_eq!(problems[0].digest, k.digest.to_hex());
    }

    #[test]
    fn gc_evicts_lru_and_respects_pins() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let gen = CacheKey::derive(Stage::Generation, "g", "text:t", 0);
        store
            .put(
                &gen,
                KeyInputs { descriptor: "g".into(), input_identity: "text:t".into(), seed: 0 },
                b"png",
                vec![text_ref("t")],
                Some("image:out".into()),
                true,
            )
            .unwrap();
        let emb = key("image:out");
        store.put(&emb, inputs("image:out"), b"[1]", vec!["image:out".into()], None, true).unwrap();
        let other = key("image:zz");
        store.put(&other, inputs("image:zz"), b"[2]", vec!["image:zz".into()], None, true).unwrap();

        let seeds: HashSet<String> = [text_ref("t")].into_iter().collect();
        let pinned = store.pinned_digests(&seeds).unwrap();
        assert_eq!(pinned.len(), 2);
        assert!(pinned.contains(&gen.digest.to_hex()) && pinned.contains(&emb.digest.to_hex()));

        let report = store.gc(0, &pinned).unwrap();
        assert_eq!(report.evicted, vec![other.digest.to_hex()]);
        assert_eq!(report.pinned_kept, 2);
        assert_eq!(store.list().unwrap().len(), 2);
        assert!(store.verify().unwrap().is_empty());

        let report = store.gc(0, &HashSet::new()).unwrap();
        assert_eq!(report.evicted.len(), 2);
        assert_eq!(report.bytes_after, 0);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = CacheLock::acquire(dir.path()).unwrap();
        assert!(CacheLock::acquire(dir.path()).is_err());
        drop(lock);
        let _again = CacheLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn stale_lock_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOCK_FILE), "4294967294\n").unwrap();
        assert!(CacheLock::acquire(dir.path()).is_ok());
    }
}

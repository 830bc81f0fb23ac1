use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attestation::{Attestation, AttestationStore, GraphSnapshot, Revocation, Schema};
use crate::codec::{canonical_decode, sha256, Canonical, CodecError, Digest, Fixed, Value};
use crate::IdentityId;

use super::StoreError;

pub const WORKSPACE_FORMAT: &str = "gov-workspace/1";
const MANIFEST: &str = "manifest.json";
const LOCK: &str = "gov.lock";

/// One mutation of the attestation store, in the order it was applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JournalEntry {
    Schema(Schema),
    Attest(Attestation),
    Revoke(Revocation),
    Balance { id: IdentityId, amount: Fixed, at: u64 },
    Snapshot { at: u64 },
}

impl Canonical for JournalEntry {
    fn to_value(&self) -> Value {
        match self {
            JournalEntry::Schema(s) => Value::map([("op", Value::str("schema")), ("record", s.to_value())]),
            JournalEntry::Attest(a) => Value::map([("op", Value::str("attest")), ("record", a.to_value())]),
            JournalEntry::Revoke(r) => Value::map([("op", Value::str("revoke")), ("record", r.to_value())]),
            JournalEntry::Balance { id, amount, at } => Value::map([
                ("op", Value::str("balance")),
                ("id", id.to_value()),
                ("amount", Value::Fixed(*amount)),
                ("at", at.to_value()),
            ]),
            JournalEntry::Snapshot { at } => Value::map([("op", Value::str("snapshot")), ("at", at.to_value())]),
        }
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        Ok(match v.field("op")?.as_str()? {
            "schema" => JournalEntry::Schema(Schema::from_value(v.field("record")?)?),
            "attest" => JournalEntry::Attest(Attestation::from_value(v.field("record")?)?),
            "revoke" => JournalEntry::Revoke(Revocation::from_value(v.field("record")?)?),
            "balance" => JournalEntry::Balance {
                id: IdentityId::from_value(v.field("id")?)?,
                amount: v.field("amount")?.as_fixed()?,
                at: v.field("at")?.as_u64()?,
            },
            "snapshot" => JournalEntry::Snapshot { at: v.field("at")?.as_u64()? },
            op => return Err(CodecError::Shape(format!("unknown journal op {op:?}"))),
        })
    }
}

/// One manifest line. `prev` chains each entry to the one before it, so an
/// edited or dropped entry breaks every later link.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seq: u64,
    pub kind: String,
    pub path: String,
    pub digest: Digest,
    pub prev: Digest,
}

impl ManifestEntry {
    fn link(&self) -> Digest {
        sha256(format!("{}\n{}\n{}\n{}\n{}", self.seq, self.kind, self.path, self.digest, self.prev).as_bytes())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceManifest {
    pub format: String,
    pub entries: Vec<ManifestEntry>,
}

impl WorkspaceManifest {
    pub fn head(&self) -> Digest {
        self.entries.last().map_or(Digest([0; 32]), ManifestEntry::link)
    }

    pub fn latest(&self, kind: &str) -> Option<&ManifestEntry> {
        self.entries.iter().rev().find(|e| e.kind == kind)
    }
}

/// Directory of plain files plus a hash-chained manifest. Attestation state
/// is a journal replayed on open.
pub struct Workspace {
    root: PathBuf,
    manifest: WorkspaceManifest,
    store: AttestationStore,
    lock: Option<PathBuf>,
}

impl Workspace {
    pub fn init(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let path = root.join(MANIFEST);
        if path.exists() {
            return Err(StoreError::Workspace(format!("{} already initialised", root.display())));
        }
        let manifest = WorkspaceManifest {
            format: WORKSPACE_FORMAT.into(),
            entries: Vec::new(),
        };
        fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("serialisable"))?;
        Self::open(root)
    }

    /// Read-only open: checks the manifest chain and every file digest.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let text = fs::read(root.join(MANIFEST))
            .map_err(|e| StoreError::Workspace(format!("{}: {e}", root.join(MANIFEST).display())))?;
        let manifest: WorkspaceManifest =
            serde_json::from_slice(&text).map_err(|e| StoreError::Workspace(format!("manifest: {e}")))?;
        if manifest.format != WORKSPACE_FORMAT {
            return Err(StoreError::Workspace(format!("unsupported format {:?}", manifest.format)));
        }
        let mut prev = Digest([0; 32]);
        let mut store = AttestationStore::new();
        for (i, e) in manifest.entries.iter().enumerate() {
            if e.seq != i as u64 || e.prev != prev {
                return Err(StoreError::Workspace(format!("manifest chain broken at entry {i}")));
            }
            prev = e.link();
            let bytes = fs::read(root.join(&e.path))?;
            if sha256(&bytes) != e.digest {
                return Err(StoreError::DigestMismatch(e.path.clone()));
            }
            if e.kind == "journal" {
                apply(&mut store, canonical_decode(&bytes)?)?;
            }
        }
        Ok(Workspace {
            root,
            manifest,
            store,
            lock: None,
        })
    }

    /// Opens for writing; fails while another writer holds the lock.
    pub fn open_locked(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let lock = root.as_ref().join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(StoreError::Locked(lock)),
            Err(e) => return Err(e.into()),
        }
        match Self::open(&root) {
            Ok(mut ws) => {
                ws.lock = Some(lock);
                Ok(ws)
            }
            Err(e) => {
                let _ = fs::remove_file(&lock);
                Err(e)
            }
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &WorkspaceManifest {
        &self.manifest
    }

    pub fn store(&self) -> &AttestationStore {
        &self.store
    }

    /// Applies `entry` to the store and journals it only if it succeeded.
    pub fn apply(&mut self, entry: JournalEntry) -> Result<Option<GraphSnapshot>, StoreError> {
        let snapshot = apply(&mut self.store, entry.clone())?;
        let bytes = entry.canonical_bytes();
        let path = format!("journal/{:06}.bin", self.manifest.entries.len());
        self.append("journal", &path, &bytes)?;
        if let Some(s) = &snapshot {
            self.append("snapshot", &format!("snapshots/{}.bin", s.at), &s.canonical_bytes())?;
        }
        Ok(snapshot)
    }

    /// Writes `bytes` under `path` and appends a manifest entry for it.
    pub fn append(&mut self, kind: &str, path: &str, bytes: &[u8]) -> Result<Digest, StoreError> {
        if self.lock.is_none() {
            return Err(StoreError::Workspace("workspace opened read-only".into()));
        }
        if path.split('/').any(|p| p == ".." || p.is_empty()) {
            return Err(StoreError::Workspace(format!("bad artifact path {path:?}")));
        }
        let full = self.root.join(path);
        if let Some(dir) = full.parent() {
            fs::create_dir_all(dir)?;
        }
        let digest = sha256(bytes);
        match fs::read(&full) {
            Ok(existing) if existing != bytes => {
                return Err(StoreError::Workspace(format!("{path} exists with different content")));
            }
            Ok(_) => {}
            Err(_) => {
                let mut f = File::create(&full)?;
                f.write_all(bytes)?;
                f.sync_all()?;
            }
        }
        let entry = ManifestEntry {
            seq: self.manifest.entries.len() as u64,
            kind: kind.into(),
            path: path.into(),
            digest,
            prev: self.manifest.head(),
        };
        self.manifest.entries.push(entry);
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&self.manifest).expect("serialisable"))?;
        fs::rename(&tmp, self.root.join(MANIFEST))?;
        Ok(digest)
    }

    /// Bytes of a manifest-listed file, re-checked against its digest.
    pub fn read(&self, path: &str) -> Result<Vec<u8>, StoreError> {
        let e = self
            .manifest
            .entries
            .iter()
            .rev()
            .find(|e| e.path == path)
            .ok_or_else(|| StoreError::Workspace(format!("{path} is not in the manifest")))?;
        let bytes = fs::read(self.root.join(path))?;
        if sha256(&bytes) != e.digest {
            return Err(StoreError::DigestMismatch(path.into()));
        }
        Ok(bytes)
    }

    pub fn latest_snapshot(&self) -> Result<GraphSnapshot, StoreError> {
        let e = self
            .manifest
            .latest("snapshot")
            .ok_or_else(|| StoreError::Workspace("no snapshot taken yet".into()))?;
        Ok(canonical_decode(&self.read(&e.path.clone())?)?)
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        if let Some(lock) = self.lock.take() {
            let _ = fs::remove_file(lock);
        }
    }
}

fn apply(store: &mut AttestationStore, entry: JournalEntry) -> Result<Option<GraphSnapshot>, StoreError> {
    match entry {
        JournalEntry::Schema(s) => store.register_schema(s)?,
        JournalEntry::Attest(a) => {
            store.submit_attestation(a)?;
        }
        JournalEntry::Revoke(r) => store.revoke(r)?,
        JournalEntry::Balance { id, amount, at } => store.set_balance(id, amount, at)?,
        JournalEntry::Snapshot { at } => return Ok(Some(store.take_snapshot(at)?)),
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Keypair;

    #[test]
    fn journal_replays_and_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        let alice = Keypair::from_seed("alice");
        let bob = Keypair::from_seed("bob");
        let snap = {
            Workspace::init(dir.path()).unwrap();
            let mut ws = Workspace::open_locked(dir.path()).unwrap();
            assert!(matches!(Workspace::open_locked(dir.path()), Err(StoreError::Locked(_))));
            ws.apply(JournalEntry::Schema(Schema::new("endorse", true))).unwrap();
            ws.apply(JournalEntry::Balance {
                id: alice.id(),
                amount: Fixed::ONE,
                at: 1,
            })
            .unwrap();
            let a = Attestation::issue(&alice, "endorse", bob.id(), Fixed::ONE, Default::default(), 1, None);
            ws.apply(JournalEntry::Attest(a)).unwrap();
            let stray = Attestation::issue(&alice, "unknown", bob.id(), Fixed::ONE, Default::default(), 1, None);
            assert!(ws.apply(JournalEntry::Attest(stray)).is_err());
            ws.apply(JournalEntry::Snapshot { at: 1 }).unwrap().unwrap()
        };
        let ws = Workspace::open(dir.path()).unwrap();
        assert_eq!(ws.latest_snapshot().unwrap(), snap);
        assert_eq!(ws.manifest().entries.len(), 5);
        drop(ws);

        let j = dir.path().join("journal/000001.bin");
        let mut bytes = fs::read(&j).unwrap();
        bytes[3] ^= 1;
        fs::write(&j, bytes).unwrap();
        assert!(matches!(Workspace::open(dir.path()), Err(StoreError::DigestMismatch(p)) if p == "journal/000001.bin"));
    }
}

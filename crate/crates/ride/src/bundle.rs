//! On-disk bundles: a directory holding `manifest.json` and one chunk file
//! per instance under `chunks/`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ride_core::trace::{TraceError, SCHEMA_VERSION};
use ride_core::{InstanceTraces, TraceBundle, TraceManifest};

use crate::format::{decode_chunk, encode_chunk, FormatError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHUNK_DIR: &str = "chunks";
pub const CHUNK_EXT: &str = "ride";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("incomplete shard: no chunk for instance `{0}`")]
    IncompleteShard(String),
    #[error("corrupt chunk for instance `{id}`: {source}")]
    Chunk { id: String, source: FormatError },
    #[error("chunk for `{expected}` holds instance `{found}`")]
    IdMismatch { expected: String, found: String },
    #[error("instance id `{0}` cannot be used as a file name")]
    InvalidInstanceId(String),
    #[error("instance `{0}` has traces but is not in the manifest")]
    Unlisted(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl BundleError {
    fn io(path: &Path, source: io::Error) -> Self {
        BundleError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Ids become file names, so only `[A-Za-z0-9._-]` is allowed and a leading
/// dot is refused.
pub fn is_safe_instance_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

pub fn chunk_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(CHUNK_DIR).join(format!("{id}.{CHUNK_EXT}"))
}

pub fn manifest_to_json(manifest: &TraceManifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BundleError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| BundleError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| BundleError::io(path, e))
}

pub fn write_bundle(bundle: &TraceBundle, dir: &Path) -> Result<(), BundleError> {
    let chunks = dir.join(CHUNK_DIR);
    fs::create_dir_all(&chunks).map_err(|e| BundleError::io(&chunks, e))?;
    for (id, inst) in &bundle.instances {
        if !is_safe_instance_id(id) {
            return Err(BundleError::InvalidInstanceId(id.clone()));
        }
        if bundle.manifest.instance(id).is_none() {
            return Err(BundleError::Unlisted(id.clone()));
        }
        write_atomic(&chunk_path(dir, id), &encode_chunk(inst))?;
    }
    let mut manifest = bundle.manifest.clone();
    manifest.instances.sort_by(|a, b| a.id.cmp(&b.id));
    write_atomic(
        &dir.join(MANIFEST_FILE),
        manifest_to_json(&manifest).as_bytes(),
    )
}

pub fn read_manifest(dir: &Path) -> Result<TraceManifest, BundleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| BundleError::io(&path, e))?;
    let manifest: TraceManifest =
        serde_json::from_str(&text).map_err(|source| BundleError::Manifest {
            path: path.clone(),
            source,
        })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(BundleError::UnsupportedVersion(manifest.schema_version));
    }
    Ok(manifest)
}

pub fn read_instance(dir: &Path, id: &str) -> Result<InstanceTraces, BundleError> {
    if !is_safe_instance_id(id) {
        return Err(BundleError::InvalidInstanceId(id.to_string()));
    }
    let path = chunk_path(dir, id);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(BundleError::IncompleteShard(id.to_string()))
        }
        Err(e) => return Err(BundleError::io(&path, e)),
    };
    let inst = decode_chunk(&bytes).map_err(|source| match source {
        FormatError::UnsupportedVersion(v) => BundleError::UnsupportedVersion(v),
        source => BundleError::Chunk {
            id: id.to_string(),
            source,
        },
    })?;
    if inst.instance_id != id {
        return Err(BundleError::IdMismatch {
            expected: id.to_string(),
            found: inst.instance_id,
        });
    }
    Ok(inst)
}

/// Reads every instance listed in the manifest.
pub fn read_trace_bundle(dir: &Path) -> Result<TraceBundle, BundleError> {
    let manifest = read_manifest(dir)?;
    read_listed(dir, manifest)
}

/// Reads only the instances the manifest assigns to `shard`.
pub fn read_shard(dir: &Path, shard: u32) -> Result<TraceBundle, BundleError> {
    let mut manifest = read_manifest(dir)?;
    manifest.instances.retain(|e| e.shard == shard);
    read_listed(dir, manifest)
}

fn read_listed(dir: &Path, manifest: TraceManifest) -> Result<TraceBundle, BundleError> {
    let mut instances = Vec::with_capacity(manifest.instances.len());
    for entry in &manifest.instances {
        instances.push(read_instance(dir, &entry.id)?);
    }
    Ok(TraceBundle::new(manifest, instances))
}

/// Reads each shard directory and merges them. Fails on header mismatch
/// or a duplicated instance id.
pub fn merge_shards<P: AsRef<Path>>(paths: &[P]) -> Result<TraceBundle, BundleError> {
    let mut manifests = Vec::with_capacity(paths.len());
    for p in paths {
        manifests.push(read_manifest(p.as_ref())?);
    }
    // Header and duplicate checks before any chunk is read.
    let header_only: Vec<TraceBundle> = manifests
        .iter()
        .map(|m| TraceBundle::new(m.clone(), Vec::new()))
        .collect();
    TraceBundle::merge(header_only)?;

    let mut shards = Vec::with_capacity(paths.len());
    for (p, m) in paths.iter().zip(manifests) {
        shards.push(read_listed(p.as_ref(), m)?);
    }
    Ok(TraceBundle::merge(shards)?)
}

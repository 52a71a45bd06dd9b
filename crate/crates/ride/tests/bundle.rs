mod common;

use std::fs;

use ride::bundle::{
    chunk_path, merge_shards, read_manifest, read_shard, read_trace_bundle, write_bundle,
    BundleError, MANIFEST_FILE,
};
use ride::synth::generate;
use ride_core::TraceBundle;

use common::{read_tree, tiny_spec};

fn sharded(n: usize, shards: u32) -> TraceBundle {
    let mut spec = tiny_spec(n, 3);
    spec.shards = shards;
    generate(&spec).unwrap()
}

#[test]
fn write_then_read_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = sharded(6, 1);
    write_bundle(&bundle, dir.path()).unwrap();
    assert_eq!(read_trace_bundle(dir.path()).unwrap(), bundle);
}

#[test]
fn missing_chunk_is_an_incomplete_shard() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = sharded(4, 1);
    write_bundle(&bundle, dir.path()).unwrap();
    fs::remove_file(chunk_path(dir.path(), "syn-0002")).unwrap();
    let err = read_trace_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, BundleError::IncompleteShard(ref id) if id == "syn-0002"));
    assert!(err.to_string().contains("incomplete shard"), "{err}");
}

#[test]
fn newer_schema_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&sharded(2, 1), dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();
    fs::write(
        &path,
        text.replace("\"schema_version\": 1", "\"schema_version\": 2"),
    )
    .unwrap();
    let err = read_manifest(dir.path()).unwrap_err();
    assert!(matches!(err, BundleError::UnsupportedVersion(2)));
    assert!(err.to_string().contains("unsupported version"));
}

#[test]
fn flipped_byte_is_a_corrupt_chunk() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&sharded(2, 1), dir.path()).unwrap();
    let path = chunk_path(dir.path(), "syn-0001");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&path, bytes).unwrap();
    let err = read_trace_bundle(dir.path()).unwrap_err();
    assert!(err.to_string().contains("corrupt chunk"), "{err}");
}

#[test]
fn chunk_under_wrong_name_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&sharded(2, 1), dir.path()).unwrap();
    fs::copy(
        chunk_path(dir.path(), "syn-0000"),
        chunk_path(dir.path(), "syn-0001"),
    )
    .unwrap();
    assert!(matches!(
        read_trace_bundle(dir.path()),
        Err(BundleError::IdMismatch { .. })
    ));
}

#[test]
fn merging_one_shard_copies_it_byte_for_byte() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    write_bundle(&sharded(5, 1), src.path()).unwrap();
    let merged = merge_shards(&[src.path()]).unwrap();
    write_bundle(&merged, dst.path()).unwrap();
    assert_eq!(read_tree(src.path()), read_tree(dst.path()));
}

#[test]
fn merging_shards_restores_the_whole() {
    let whole = sharded(9, 3);
    let root = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for s in [2, 0, 1] {
        let d = root.path().join(format!("shard-{s}"));
        write_bundle(&whole.shard(s), &d).unwrap();
        assert_eq!(read_shard(&d, s).unwrap(), whole.shard(s));
        dirs.push(d);
    }
    assert_eq!(merge_shards(&dirs).unwrap(), whole);
}

#[test]
fn duplicate_instance_across_shards() {
    let root = tempfile::tempdir().unwrap();
    let b = sharded(3, 1);
    let a_dir = root.path().join("a");
    let b_dir = root.path().join("b");
    write_bundle(&b, &a_dir).unwrap();
    write_bundle(&b, &b_dir).unwrap();
    let err = merge_shards(&[&a_dir, &b_dir]).unwrap_err();
    assert!(err.to_string().contains("duplicate instance"), "{err}");
}

#[test]
fn incompatible_headers() {
    let root = tempfile::tempdir().unwrap();
    let whole = sharded(4, 2);
    let mut other = whole.shard(1);
    other.manifest.num_layers += 1;
    let a = root.path().join("a");
    let b = root.path().join("b");
    write_bundle(&whole.shard(0), &a).unwrap();
    write_bundle(&other, &b).unwrap();
    let err = merge_shards(&[&a, &b]).unwrap_err();
    assert!(err.to_string().contains("incompatible shards"), "{err}");
    assert!(err.to_string().contains("num_layers"), "{err}");
}

#[test]
fn unsafe_ids_are_refused_on_write() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = sharded(1, 1);
    let mut inst = b.instances.remove("syn-0000").unwrap();
    inst.instance_id = "../escape".into();
    b.manifest.instances[0].id = "../escape".into();
    b.instances.insert(inst.instance_id.clone(), inst);
    assert!(matches!(
        write_bundle(&b, dir.path()),
        Err(BundleError::InvalidInstanceId(_))
    ));
}

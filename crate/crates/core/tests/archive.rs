mod common;

use common::{rand_tensor, tiny_config};
use fastvit_core::archive::{self, decode, encode, load_tensor, load_weights, model_to_bytes, save_tensor, save_weights, NamedTensor};
use fastvit_core::{build_variant, Error};
use std::path::Path;

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = build_variant(tiny_config(), 3).unwrap();
    m.randomize_statistics(4);
    for model in [m.clone(), m.reparameterize().unwrap()] {
        let p1 = dir.path().join("a.fvwt");
        let p2 = dir.path().join("b.fvwt");
        save_weights(&model, &p1).unwrap();
        let loaded = load_weights(&p1).unwrap();
        assert_eq!(loaded, model);
        save_weights(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}

#[test]
fn fused_archive_is_smaller() {
    let m = build_variant(tiny_config(), 3).unwrap();
    assert!(model_to_bytes(&m.reparameterize().unwrap()).len() < model_to_bytes(&m).len());
}

fn rewrite(bytes: &[u8], f: impl FnOnce(&mut Vec<NamedTensor>)) -> Vec<u8> {
    let (doc, mut tensors) = decode(bytes, Path::new("mem")).unwrap();
    f(&mut tensors);
    encode(&doc, &tensors)
}

#[test]
fn renamed_tensor_is_reported_by_name() {
    let m = build_variant(tiny_config(), 0).unwrap();
    let bytes = rewrite(&model_to_bytes(&m), |t| t[5].name = "stages.9.bogus".into());
    let err = archive::model_from_bytes(&bytes, Path::new("x.fvwt")).unwrap_err().to_string();
    assert!(err.contains("stages.9.bogus"), "{err}");
    assert!(err.contains("missing tensors"), "{err}");
}

#[test]
fn reshaped_and_missing_tensors_are_errors() {
    let m = build_variant(tiny_config(), 0).unwrap();
    let bytes = rewrite(&model_to_bytes(&m), |t| {
        t[0].dims.push(1);
    });
    assert!(archive::model_from_bytes(&bytes, Path::new("x")).unwrap_err().to_string().contains("wrong dims"));
    let bytes = rewrite(&model_to_bytes(&m), |t| {
        t.pop();
    });
    let err = archive::model_from_bytes(&bytes, Path::new("x")).unwrap_err().to_string();
    assert!(err.contains("head.bias"), "{err}");
}

#[test]
fn truncated_and_foreign_files() {
    let bytes = model_to_bytes(&build_variant(tiny_config(), 0).unwrap());
    for cut in [3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = archive::model_from_bytes(&bytes[..cut], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Archive { .. }), "{err}");
    }
    let mut v = bytes.clone();
    v[4..6].copy_from_slice(&2u16.to_le_bytes());
    assert!(archive::model_from_bytes(&v, Path::new("x")).unwrap_err().to_string().contains("version"));
    let mut v = bytes;
    v[0] = b'X';
    assert!(archive::model_from_bytes(&v, Path::new("x")).unwrap_err().to_string().contains("magic"));
}

#[test]
fn duplicate_names_are_rejected() {
    let t = NamedTensor { name: "a".into(), dims: vec![1], data: vec![0.0] };
    let bytes = encode(&serde_json::json!({}), &[t.clone(), t]);
    assert!(decode(&bytes, Path::new("x")).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn tensor_archive_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.fvwt");
    let x = rand_tensor(1, [2, 3, 4, 5]);
    save_tensor(&p, "input", &x).unwrap();
    let (name, back) = load_tensor(&p).unwrap();
    assert_eq!(name, "input");
    assert_eq!(back, x);
    assert!(load_weights(&p).is_err(), "a tensor archive is not a model");
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_weights(Path::new("/nonexistent/m.fvwt")), Err(Error::Io { .. })));
}

//! Random and magic-prefixed byte strings fed to every on-disk decoder: each
//! call either returns a typed error or a value whose invariants hold.

use std::fs;

use clipmontage::corpusio::{
    decode_embedding_payload, decode_montage_payload, decode_volume, load_manifest, load_montage,
    parse_manifest, read_embeddings, sidecar_path, EMB_MAGIC, MNT_HEADER_LEN, MNT_MAGIC, RVF_MAGIC,
};
use clipmontage::encoder::{init_params, EncoderDims, EncoderParams, CHECKPOINT_MAGIC};
use clipmontage::textprep::Vocabulary;
use clipmontage::trainer::{AdamWState, OPTIMIZER_MAGIC};
use clipmontage::Error;
use proptest::collection::vec;
use proptest::prelude::*;

const ONE_MIB: usize = 1 << 20;

fn error_is_typed(e: &Error) {
    assert!(!e.to_string().is_empty());
    assert!(matches!(e.exit_code(), 2..=4), "{e:?}");
}

fn check_all(bytes: &[u8]) {
    match decode_volume(bytes) {
        Ok(v) => {
            let [d, h, w] = v.dims();
            assert_eq!(v.voxels().len(), d * h * w);
            assert!(d > 0 && h > 0 && w > 0);
            assert!(v.spacing().iter().all(|s| s.is_finite() && *s > 0.0));
        }
        Err(e) => error_is_typed(&e),
    }
    match decode_montage_payload(bytes) {
        Ok((side, px)) => {
            assert_eq!(px.len(), side * side);
            assert!(px.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        Err(e) => error_is_typed(&e),
    }
    match decode_embedding_payload(bytes) {
        Ok((dim, rows)) => assert!(dim > 0 && rows.iter().all(|r| r.len() == dim)),
        Err(e) => error_is_typed(&e),
    }
    match EncoderParams::from_checkpoint_bytes(bytes) {
        Ok(p) => {
            assert!(p.is_finite());
            assert_eq!(bytes.len(), 20 + 8 * p.num_values());
        }
        Err(e) => error_is_typed(&e),
    }
    let params = init_params(0, EncoderDims { patch: 2, hidden: 2, embed: 2, vocab: 6 });
    match AdamWState::from_bytes(bytes, &params) {
        Ok(s) => {
            assert_eq!(s.m.num_values(), params.num_values());
            assert!(s.v.groups().iter().all(|g| g.iter().all(|&x| x >= 0.0)));
        }
        Err(e) => error_is_typed(&e),
    }
    let text = String::from_utf8_lossy(bytes);
    match Vocabulary::from_json(&text) {
        Ok(v) => {
            for id in 0..v.len() as u32 {
                assert_eq!(v.id(v.token(id).unwrap()), Some(id));
            }
        }
        Err(e) => error_is_typed(&e),
    }
    match parse_manifest(&text, 5) {
        Ok(m) => m.validate(5).unwrap(),
        Err(e) => error_is_typed(&e),
    }
}

fn magic() -> impl Strategy<Value = &'static [u8; 4]> {
    prop_oneof![
        Just(RVF_MAGIC),
        Just(MNT_MAGIC),
        Just(EMB_MAGIC),
        Just(CHECKPOINT_MAGIC),
        Just(OPTIMIZER_MAGIC),
    ]
}

/// A header whose size fields describe a small payload, so that decoding
/// gets past the length checks and into value validation.
fn plausible(magic: &[u8; 4], a: u32, b: u32, tail: &[u8]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out.extend_from_slice(tail);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn random_bytes(bytes in vec(any::<u8>(), 0..4096)) {
        check_all(&bytes);
    }

    #[test]
    fn magic_prefixed(m in magic(), tail in vec(any::<u8>(), 0..2048)) {
        let mut bytes = m.to_vec();
        bytes.extend_from_slice(&tail);
        check_all(&bytes);
    }

    #[test]
    fn consistent_headers(m in magic(), a in 0u32..6, b in 0u32..6, words in vec(any::<u32>(), 0..64)) {
        let tail: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        check_all(&plausible(m, a, b, &tail));
    }

    #[test]
    fn json_like_text(s in r#"\{("(entries|classes|min_freq|token_to_id|patient_id)": ?(\[|\{|"[a-z<>]*"|[0-9]+|null),? ?){0,6}(\]|\})*\}?"#) {
        check_all(s.as_bytes());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn near_one_mebibyte(seed in any::<u64>(), m in magic()) {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut bytes = vec![0u8; ONE_MIB - 1];
        rng.fill_bytes(&mut bytes);
        check_all(&bytes);
        bytes[..4].copy_from_slice(m);
        check_all(&bytes);
    }
}

#[test]
fn file_loaders_reject_random_files() {
    use rand::{RngCore, SeedableRng};
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for len in [0usize, 3, 12, 64, 1000, ONE_MIB - 1] {
        let mut bytes = vec![0u8; len];
        rng.fill_bytes(&mut bytes);
        let path = dir.path().join(format!("f{len}"));
        fs::write(&path, &bytes).unwrap();
        fs::write(sidecar_path(&path), &bytes).unwrap();
        for r in [
            load_montage(&path).map(drop),
            read_embeddings(&path).map(drop),
            load_manifest(&path, 5).map(drop),
            clipmontage::corpusio::load_volume(&path).map(drop),
            EncoderParams::load(&path).map(drop),
            Vocabulary::load(&path).map(drop),
        ] {
            let e = r.expect_err("random file decoded");
            error_is_typed(&e);
        }
    }
}

#[test]
fn valid_headers_with_random_sidecars_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let mnt = dir.path().join("m.mnt");
    let mut bytes = plausible(MNT_MAGIC, 1, 0, &[]);
    bytes.truncate(MNT_HEADER_LEN);
    bytes.extend_from_slice(&0.5f32.to_le_bytes());
    fs::write(&mnt, &bytes).unwrap();
    for side in [
        "",
        "{}",
        "[1,2]",
        r#"{"patient_id":"p","repeat_index":0,"slice_indices":[],"seed":1,"x":2}"#,
        r#"{"patient_id":"p","repeat_index":0,"slice_indices":[3,3],"seed":1}"#,
    ] {
        fs::write(sidecar_path(&mnt), side).unwrap();
        error_is_typed(&load_montage(&mnt).unwrap_err());
    }
    fs::write(
        sidecar_path(&mnt),
        r#"{"patient_id":"p","repeat_index":0,"slice_indices":[0,2],"seed":1}"#,
    )
    .unwrap();
    assert_eq!(load_montage(&mnt).unwrap().pixels(), &[0.5]);

    let emb = dir.path().join("e.emb");
    let mut bytes = plausible(EMB_MAGIC, 1, 1, &[]);
    bytes.extend_from_slice(&1.0f32.to_le_bytes());
    fs::write(&emb, &bytes).unwrap();
    for side in ["", r#"{"ids":[]}"#, r#"{"ids":["a","b"]}"#, r#"{"ids":3}"#] {
        fs::write(sidecar_path(&emb), side).unwrap();
        error_is_typed(&read_embeddings(&emb).unwrap_err());
    }
    fs::write(sidecar_path(&emb), r#"{"ids":["a"]}"#).unwrap();
    assert_eq!(read_embeddings(&emb).unwrap()[0].vector, vec![1.0]);
}

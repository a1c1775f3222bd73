use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use coattn::data::{ScoreScale, Vocabulary};
use coattn::model::{CoAttentionModel, ModelConfig, ModelParams};
use coattn::training::{save_checkpoint, TrainedModel};
use coattn_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = coattn_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { coattn_string_free(p) };
    s
}

fn zero_checkpoint(path: &Path) {
    let config = ModelConfig {
        embed_dim: 4,
        conv_kernel: 2,
        conv_filters: 3,
        lstm_hidden: 3,
        modeling_hidden: 3,
        vocab_size: 40,
        max_sentences: 8,
        max_tokens: 10,
        ..Default::default()
    };
    let trained = TrainedModel {
        model: CoAttentionModel::new(config.clone(), ModelParams::<f64>::zeros(&config)).unwrap(),
        vocab: Vocabulary::build(["Water is far away. Kids get sick."], 40).unwrap(),
        scale: ScoreScale::new(0, 3).unwrap(),
    };
    save_checkpoint(&trained, path).unwrap();
}

fn load(path: &Path) -> *mut CoattnModel {
    let mut model = ptr::null_mut();
    let status = unsafe { coattn_model_load(c(path.to_str().unwrap()).as_ptr(), &mut model) };
    assert_eq!(status, CoattnStatus::Ok);
    assert!(!model.is_null());
    model
}

#[test]
fn score_and_attention_through_the_handle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.ckpt");
    zero_checkpoint(&path);
    let model = load(&path);
    let (essay, article) = (c("Kids get sick. Water is far away. The end."), c("Water is far away."));

    let mut score = -1;
    assert_eq!(
        unsafe { coattn_score(model, essay.as_ptr(), article.as_ptr(), &mut score) },
        CoattnStatus::Ok
    );
    assert_eq!(score, 2);

    let (mut lo, mut hi) = (0, 0);
    assert_eq!(
        unsafe { coattn_model_score_range(model, &mut lo, &mut hi) },
        CoattnStatus::Ok
    );
    assert_eq!((lo, hi), (0, 3));

    let mut len = 0;
    let status = unsafe { coattn_attention(model, essay.as_ptr(), article.as_ptr(), ptr::null_mut(), 0, &mut len) };
    assert_eq!(status, CoattnStatus::BufferTooSmall);
    assert_eq!(len, 3);
    let mut weights = vec![0.0; len];
    let status = unsafe {
        coattn_attention(
            model,
            essay.as_ptr(),
            article.as_ptr(),
            weights.as_mut_ptr(),
            weights.len(),
            &mut len,
        )
    };
    assert_eq!(status, CoattnStatus::Ok);
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    unsafe { coattn_model_free(model) };
}

#[test]
fn failures_set_status_and_message() {
    let mut model = ptr::null_mut();
    let status = unsafe { coattn_model_load(c("/no/such/model.ckpt").as_ptr(), &mut model) };
    assert_eq!(status, CoattnStatus::DataError);
    assert!(model.is_null());
    assert!(last_error().contains("/no/such/model.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, "coattn-checkpoint 99\n").unwrap();
    let status = unsafe { coattn_model_load(c(bad.to_str().unwrap()).as_ptr(), &mut model) };
    assert_eq!(status, CoattnStatus::ConfigError);
    assert!(last_error().contains("version"));

    let status = unsafe { coattn_model_load(ptr::null(), &mut model) };
    assert_eq!(status, CoattnStatus::NullArgument);

    let mut score = 0;
    let status = unsafe { coattn_score(ptr::null(), c("a.").as_ptr(), c("b.").as_ptr(), &mut score) };
    assert_eq!(status, CoattnStatus::NullArgument);

    let path = dir.path().join("zero.ckpt");
    zero_checkpoint(&path);
    let model = load(&path);
    let invalid = [0xffu8, 0xfe, 0];
    let status = unsafe { coattn_score(model, invalid.as_ptr().cast(), c("b.").as_ptr(), &mut score) };
    assert_eq!(status, CoattnStatus::InvalidUtf8);
    let status = unsafe { coattn_score(model, c("   ").as_ptr(), c("Water.").as_ptr(), &mut score) };
    assert_eq!(status, CoattnStatus::DataError);
    unsafe { coattn_model_free(model) };
    unsafe { coattn_model_free(ptr::null_mut()) };
}

#[test]
fn qwk_matches_hand_cases() {
    let mut out = 0.0;
    let (gold, pred) = ([1i64, 2, 3], [3i64, 2, 1]);
    assert_eq!(
        unsafe { coattn_qwk(gold.as_ptr(), pred.as_ptr(), 3, 1, 3, &mut out) },
        CoattnStatus::Ok
    );
    assert_eq!(out, -1.0);
    let (gold, pred) = ([0i64, 0, 1, 1], [0i64, 1, 0, 1]);
    assert_eq!(
        unsafe { coattn_qwk(gold.as_ptr(), pred.as_ptr(), 4, 0, 1, &mut out) },
        CoattnStatus::Ok
    );
    assert_eq!(out, 0.0);
    assert_eq!(
        unsafe { coattn_qwk(gold.as_ptr(), pred.as_ptr(), 0, 0, 1, &mut out) },
        CoattnStatus::DataError
    );
    assert_eq!(
        unsafe { coattn_qwk(ptr::null(), pred.as_ptr(), 4, 0, 1, &mut out) },
        CoattnStatus::NullArgument
    );
}

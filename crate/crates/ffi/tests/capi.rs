use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use coref_mt::corpus::synthetic::{synthetic_documents, SyntheticSpec};
use coref_mt::corpus::{learn_from_documents, preprocess};
use coref_mt::training::build_vocab;
use coref_mt::{Model, ModelConfig, Variant};
use coref_mt_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = cmt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn saved_model(dir: &std::path::Path) -> (std::path::PathBuf, Vec<String>) {
    let docs = synthetic_documents(&SyntheticSpec {
        documents: 3,
        sentences_per_document: 3,
        seed: 2,
    });
    let bpe = learn_from_documents(&docs, 1000).unwrap();
    let recs = preprocess(&docs, 2, &bpe).unwrap();
    let mut cfg = ModelConfig::desk();
    cfg.variant = Variant::TransCoref;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.coref_hidden = 12;
    let model = Model::new(cfg, build_vocab(&recs)).unwrap();
    let p = dir.join("m.ckpt");
    model.save(&p).unwrap();
    (p, recs[1].src.clone())
}

#[test]
fn load_translate_score_free() {
    let dir = tempfile::tempdir().unwrap();
    let (path, src) = saved_model(dir.path());
    let path = c(path.to_str().unwrap());
    let mut m: *mut CmtModel = ptr::null_mut();
    assert_eq!(unsafe { cmt_model_load(path.as_ptr(), &mut m) }, CmtStatus::Ok);
    assert!(!m.is_null());

    let source = c(&src.join(" "));
    let mut json: *mut std::ffi::c_char = ptr::null_mut();
    let st = unsafe { cmt_translate(m, source.as_ptr(), ptr::null(), 3, 0.5, &mut json) };
    assert_eq!(st, CmtStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { cmt_string_free(json) };
    let list: serde_json::Value = serde_json::from_str(&text).unwrap();
    let hyps = list["hypotheses"].as_array().unwrap();
    assert_eq!(hyps.len(), 3);
    let joints: Vec<f64> = hyps.iter().map(|h| h["joint"].as_f64().unwrap()).collect();
    assert!(joints.windows(2).all(|w| w[0] >= w[1]));

    let target = c(hyps[0]["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect::<Vec<_>>().join(" ").as_str());
    let clusters = c(r#"[[{"start":1,"end":1},{"start":3,"end":3}]]"#);
    let mut lp = 0.0;
    let st = unsafe { cmt_coref_log_prob(m, source.as_ptr(), target.as_ptr(), clusters.as_ptr(), &mut lp) };
    assert_eq!(st, CmtStatus::Ok);
    assert!(lp.is_finite() && lp <= 0.0);

    let st = unsafe { cmt_translate(m, source.as_ptr(), ptr::null(), 0, 0.0, &mut json) };
    assert_eq!(st, CmtStatus::InvalidArgument);
    assert!(json.is_null());
    assert!(last_error().contains("beam"));
    unsafe { cmt_model_free(m) };
    unsafe { cmt_model_free(ptr::null_mut()) };
}

#[test]
fn missing_checkpoint_and_null_arguments() {
    let mut m: *mut CmtModel = ptr::null_mut();
    let p = c("/nonexistent/m.ckpt");
    assert_eq!(unsafe { cmt_model_load(p.as_ptr(), &mut m) }, CmtStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("nonexistent"));
    assert_eq!(unsafe { cmt_model_load(ptr::null(), &mut m) }, CmtStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { cmt_corpus_bleu(ptr::null(), ptr::null(), &mut v) }, CmtStatus::NullPointer);
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { cmt_corpus_bleu(bad.as_ptr().cast(), bad.as_ptr().cast(), &mut v) },
        CmtStatus::InvalidUtf8
    );
}

#[test]
fn metrics_through_the_c_interface() {
    let refs = c("the cat sat on the mat\nit was very happy today");
    let mut v = 0.0;
    assert_eq!(unsafe { cmt_corpus_bleu(refs.as_ptr(), refs.as_ptr(), &mut v) }, CmtStatus::Ok);
    assert_eq!(v, 100.0);
    let short = c("the cat");
    assert_eq!(unsafe { cmt_corpus_bleu(short.as_ptr(), refs.as_ptr(), &mut v) }, CmtStatus::InvalidArgument);

    let gold = c(r#"[[{"start":1,"end":1},{"start":2,"end":2},{"start":3,"end":3}]]"#);
    let pred = c(r#"[[{"start":1,"end":1},{"start":2,"end":2}]]"#);
    let mut muc = CmtMuc::default();
    assert_eq!(unsafe { cmt_muc_score(pred.as_ptr(), gold.as_ptr(), &mut muc) }, CmtStatus::Ok);
    assert_eq!(muc.precision, 1.0);
    assert_eq!(muc.recall, 0.5);
    assert!((muc.f1 - 2.0 / 3.0).abs() < 1e-12);
    let broken = c("[[{\"start\":1}]]");
    assert_eq!(unsafe { cmt_muc_score(broken.as_ptr(), gold.as_ptr(), &mut muc) }, CmtStatus::InvalidArgument);
}

#[test]
fn nbest_json_matches_the_rust_type() {
    let dir = tempfile::tempdir().unwrap();
    let (path, src) = saved_model(dir.path());
    let path = c(path.to_str().unwrap());
    let mut m: *mut CmtModel = ptr::null_mut();
    unsafe { cmt_model_load(path.as_ptr(), &mut m) };
    let source = c(&src.join(" "));
    let mut json: *mut std::ffi::c_char = ptr::null_mut();
    unsafe { cmt_translate(m, source.as_ptr(), ptr::null(), 2, 0.0, &mut json) };
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { cmt_string_free(json) };
    unsafe { cmt_model_free(m) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["beam"], 2);
    assert_eq!(v["hypotheses"].as_array().unwrap().len(), 2);
    assert!(v["hypotheses"][0]["lp_coref"].is_f64());
}

#[test]
fn header_declares_the_interface_and_compiles() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let header = std::fs::read_to_string(format!("{dir}/coref_mt.h")).unwrap();
    for name in [
        "cmt_model_load",
        "cmt_model_free",
        "cmt_translate",
        "cmt_coref_log_prob",
        "cmt_corpus_bleu",
        "cmt_muc_score",
        "cmt_last_error",
        "cmt_string_free",
        "CMT_STATUS_CHECKPOINT_MISMATCH",
        "typedef struct CmtModel CmtModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let probe = tmp.path().join("probe.c");
    std::fs::write(
        &probe,
        "#include \"coref_mt.h\"\nint main(void) { CmtMuc m; return cmt_muc_score(0, 0, &m) == CMT_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    match Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-I", dir]).arg(&probe).status() {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("no C compiler available, skipping compile check: {e}"),
    }
}

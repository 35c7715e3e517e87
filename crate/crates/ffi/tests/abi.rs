use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use genpriv::genimage::{mock_generate, ImageSize};
use genpriv::harness::{Pipeline, RunConfig};
use genpriv_ffi::*;

fn last_error() -> String {
    let p = genpriv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn losses_match_hand_arithmetic() {
    let target = [0.0, 1.0];
    let pred = [0.25, 0.75];
    let mut out = 0.0;
    let st = unsafe { genpriv_cross_entropy(target.as_ptr(), pred.as_ptr(), 2, &mut out) };
    assert_eq!(st, GenprivStatus::Ok);
    assert!((out - (-(0.75f64).ln())).abs() < 1e-12);

    let logits = [0.0, (3.0f64).ln() * 2.0];
    let mut soft = [0.0; 2];
    let st = unsafe { genpriv_soften(logits.as_ptr(), 2, 2.0, soft.as_mut_ptr()) };
    assert_eq!(st, GenprivStatus::Ok);
    assert!((soft[0] - 0.25).abs() < 1e-12 && (soft[1] - 0.75).abs() < 1e-12);

    let (t, s) = ([1.0, 2.0, 3.0], [1.0, 0.0, 0.0]);
    let st = unsafe { genpriv_embedding_sqdist(t.as_ptr(), s.as_ptr(), 3, true, &mut out) };
    assert_eq!(st, GenprivStatus::Ok);
    assert!((out - 13.0 / 3.0).abs() < 1e-12);
}

#[test]
fn kd_loss_with_zero_weights_is_plain_ce() {
    let cfg = GenprivDistillConfig { alpha: 0.0, beta: 0.0, ..genpriv_distill_config_default() };
    let target = [1.0, 0.0, 0.0];
    let (tl, sl) = ([2.0, 0.5, -1.0], [0.1, 0.2, 0.3]);
    let (te, se) = ([1.0, 1.0], [0.0, 0.5]);
    let mut out = GenprivLossBreakdown::default();
    let mut g = [0.0; 3];
    let mut ge = [9.0; 2];
    let st = unsafe {
        genpriv_kd_loss(
            target.as_ptr(), tl.as_ptr(), sl.as_ptr(), 3, te.as_ptr(), se.as_ptr(), 2, &cfg, &mut out,
            g.as_mut_ptr(), ge.as_mut_ptr(),
        )
    };
    assert_eq!(st, GenprivStatus::Ok);
    let z: f64 = sl.iter().map(|v| v.exp()).sum();
    assert!((out.total - (z.ln() - 0.1)).abs() < 1e-12);
    assert_eq!(out.total, out.ce_hard);
    assert!((g[0] - (0.1f64.exp() / z - 1.0)).abs() < 1e-12);
    assert_eq!(ge, [0.0, 0.0]);
}

#[test]
fn errors_are_reported_with_messages() {
    let mut out = 0.0;
    let st = unsafe { genpriv_cross_entropy(ptr::null(), [1.0].as_ptr(), 1, &mut out) };
    assert_eq!(st, GenprivStatus::NullPointer);
    assert!(last_error().contains("target"));

    let bad = [0.5, 0.2];
    let st = unsafe { genpriv_cross_entropy(bad.as_ptr(), bad.as_ptr(), 2, &mut out) };
    assert_eq!(st, GenprivStatus::LossError);
    assert!(last_error().contains("sums to"));

    let mut soft = [0.0; 2];
    let st = unsafe { genpriv_soften([1.0, 2.0].as_ptr(), 2, 0.0, soft.as_mut_ptr()) };
    assert_eq!(st, GenprivStatus::LossError);

    // a success clears the message
    let st = unsafe { genpriv_soften([1.0, 2.0].as_ptr(), 2, 1.0, soft.as_mut_ptr()) };
    assert_eq!(st, GenprivStatus::Ok);
    assert!(genpriv_last_error().is_null());
}

#[test]
fn mock_generate_matches_core() {
    let prompt = CString::new("a red car").unwrap();
    let mut buf = vec![0u8; 32 * 32 * 3];
    let st = unsafe { genpriv_mock_generate(prompt.as_ptr(), 1, 32, 32, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(st, GenprivStatus::Ok);
    let core = mock_generate("a red car", 1, ImageSize::square(32)).unwrap();
    assert_eq!(buf, core.pixels.into_raw());

    let st = unsafe { genpriv_mock_generate(prompt.as_ptr(), 1, 32, 32, buf.as_mut_ptr(), 10) };
    assert_eq!(st, GenprivStatus::BufferTooSmall);
    let empty = CString::new("").unwrap();
    let st = unsafe { genpriv_mock_generate(empty.as_ptr(), 1, 32, 32, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(st, GenprivStatus::GenerateError);
}

#[test]
fn model_handle_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(
        "seeds = [3]\nimage_only = false\n[dataset]\nsource = \"synthetic\"\nn_train = 24\nn_val = 8\nn_test = 8\n[train]\nepochs = 1\n",
    )
    .unwrap();
    let ckpt = {
        let p = Pipeline::open(cfg, dir.path()).unwrap();
        p.train_baseline(3).unwrap();
        p.checkpoint_path(3, "baseline")
    };
    let path = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { genpriv_model_load(path.as_ptr(), &mut handle) }, GenprivStatus::Ok);
    assert!(!handle.is_null());
    let k = unsafe { genpriv_model_num_classes(handle) };
    assert_eq!(k, 4);
    let text = CString::new("w001 w005 w009").unwrap();
    let mut probs = vec![0.0; k];
    let mut label = usize::MAX;
    let st = unsafe { genpriv_model_predict(handle, text.as_ptr(), probs.as_mut_ptr(), k, &mut label) };
    assert_eq!(st, GenprivStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(label < k);
    let st = unsafe { genpriv_model_predict(handle, text.as_ptr(), probs.as_mut_ptr(), k + 1, &mut label) };
    assert_eq!(st, GenprivStatus::InvalidArgument);
    unsafe { genpriv_model_free(handle) };
    unsafe { genpriv_model_free(ptr::null_mut()) };

    let missing = CString::new(dir.path().join("nope.ckpt").to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { genpriv_model_load(missing.as_ptr(), &mut handle) }, GenprivStatus::ModelError);
    assert!(handle.is_null());
    assert_eq!(unsafe { genpriv_model_num_classes(handle) }, 0);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(genpriv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/genpriv.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["genpriv_kd_loss", "genpriv_model_load", "genpriv_model_free", "GENPRIV_STATUS_OK", "GenprivModel"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"genpriv.h\"\nint main(void) {\n  GenprivModel *m = 0;\n  GenprivDistillConfig c = genpriv_distill_config_default();\n  (void)c;\n  return genpriv_model_load(\"x\", &m) == GENPRIV_STATUS_OK;\n}\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-std=c99", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; skipping compile check");
        return;
    };
    assert!(status.success());
}

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use roomtse::audio::{StftConfig, Waveform, SAMPLE_RATE};
use roomtse::dataset::{ClueSet, QueryClue};
use roomtse::model::{save_checkpoint, ModelConfig, TrainingMeta, TseModel};
use roomtse_ffi::*;

fn checkpoint(dir: &Path, clue_set: ClueSet) -> (PathBuf, TseModel) {
    let mut cfg = ModelConfig::tiny(4, 4, StftConfig::from_samples(64, 32, 64, SAMPLE_RATE));
    cfg.clue_set = clue_set;
    let model = TseModel::new(cfg, 5).unwrap();
    let path = dir.join("m.ckpt");
    save_checkpoint(&path, &model, &TrainingMeta::default(), None).unwrap();
    (path, model)
}

fn load(path: &Path) -> (RtseStatus, *mut RtseModel) {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { rtse_model_load(c.as_ptr(), &mut handle) };
    (status, handle)
}

fn last_error() -> Option<String> {
    let p = rtse_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn mixture(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.2 * (i as f64 * 0.05).sin() + 0.05 * (i as f64 * 0.31).cos()).collect()
}

#[test]
fn extract_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = checkpoint(dir.path(), ClueSet::DisDimRt);
    let (status, handle) = load(&path);
    assert_eq!(status, RtseStatus::Ok);
    assert!(last_error().is_none());
    unsafe {
        assert_eq!(rtse_model_num_params(handle), model.num_params());
        assert_eq!(rtse_model_clue_mask(handle), RTSE_CLUE_DIM | RTSE_CLUE_RT);
    }
    let y = mixture(700);
    let clue = RtseClue {
        d_q: 1.5,
        dis_mw: [1.0, 2.0, 3.0, 4.0, 1.0, 2.0],
        rt60: 0.3,
    };
    let mut out = vec![0.0; y.len()];
    let status = unsafe { rtse_extract(handle, y.as_ptr(), y.len(), SAMPLE_RATE, &clue, out.as_mut_ptr()) };
    assert_eq!(status, RtseStatus::Ok);
    let q = QueryClue::new(1.5, clue.dis_mw, 0.3, ClueSet::DisDimRt).unwrap();
    let expected = model.forward(&Waveform::new(y, SAMPLE_RATE).unwrap(), &q).unwrap();
    assert_eq!(out, expected.samples());
    unsafe { rtse_model_free(handle) };
}

#[test]
fn errors_set_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (status, handle) = load(&dir.path().join("absent.ckpt"));
    assert_eq!(status, RtseStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().unwrap().contains("absent.ckpt"));

    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let (status, _) = load(&dir.path().join("junk.ckpt"));
    assert_eq!(status, RtseStatus::Checkpoint);

    assert_eq!(unsafe { rtse_model_load(ptr::null(), &mut ptr::null_mut()) }, RtseStatus::NullPointer);

    let (path, _) = checkpoint(dir.path(), ClueSet::DisRt);
    let (status, handle) = load(&path);
    assert_eq!(status, RtseStatus::Ok);
    assert_eq!(unsafe { rtse_model_clue_mask(handle) }, RTSE_CLUE_RT);
    let y = mixture(300);
    let mut out = vec![0.0; y.len()];
    let missing_rt = RtseClue {
        d_q: 2.0,
        dis_mw: [f64::NAN; 6],
        rt60: f64::NAN,
    };
    let status = unsafe { rtse_extract(handle, y.as_ptr(), y.len(), SAMPLE_RATE, &missing_rt, out.as_mut_ptr()) };
    assert_eq!(status, RtseStatus::MissingClue);
    assert!(last_error().unwrap().contains("rt60"));

    // dis_mw is unused by this clue set, so NaN there is fine
    let ok = RtseClue { rt60: 0.4, ..missing_rt };
    let status = unsafe { rtse_extract(handle, y.as_ptr(), y.len(), SAMPLE_RATE, &ok, out.as_mut_ptr()) };
    assert_eq!(status, RtseStatus::Ok);
    assert!(last_error().is_none());

    let status = unsafe { rtse_extract(handle, y.as_ptr(), y.len(), 8_000, &ok, out.as_mut_ptr()) };
    assert_eq!(status, RtseStatus::InvalidArgument);
    let status = unsafe { rtse_extract(ptr::null(), y.as_ptr(), y.len(), SAMPLE_RATE, &ok, out.as_mut_ptr()) };
    assert_eq!(status, RtseStatus::NullPointer);
    unsafe {
        rtse_model_free(handle);
        rtse_model_free(ptr::null_mut());
        assert_eq!(rtse_model_num_params(ptr::null()), 0);
    }
    assert!(!unsafe { CStr::from_ptr(rtse_version()) }.to_bytes().is_empty());
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "roomtse.h"

int main(int argc, char **argv) {
    RtseModel *m = NULL;
    if (rtse_model_load("/nonexistent/x.ckpt", &m) != RTSE_STATUS_IO || m != NULL) return 10;
    if (rtse_last_error() == NULL) return 11;
    if (rtse_model_load(argv[1], &m) != RTSE_STATUS_OK) return 12;
    double y[256], x[256];
    for (int i = 0; i < 256; i++) y[i] = 0.1 * sin(0.07 * i);
    RtseClue clue = {1.5, {1, 2, 3, 4, 1, 2}, 0.3};
    if (rtse_extract(m, y, 256, 16000, &clue, x) != RTSE_STATUS_OK) return 13;
    for (int i = 0; i < 256; i++) if (!isfinite(x[i])) return 14;
    printf("%zu\n", rtse_model_num_params(m));
    rtse_model_free(m);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let Ok(exe) = std::env::current_exe() else { return };
    let target = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    let lib = target.join("libroomtse_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (path, model) = checkpoint(dir.path(), ClueSet::DisDimRt);
    let run = Command::new(&bin).arg(&path).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), model.num_params().to_string());
}

//! Compiles a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

use gkp_repeater::{analytic_rate, AmplificationStrategy, RepeaterConfig};

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/gkp_repeater.h")).unwrap();
    for name in [
        "typedef struct GkpConfig GkpConfig;",
        "gkp_config_new",
        "gkp_config_free",
        "gkp_analytic_rate",
        "gkp_simulate",
        "gkp_optimize_n",
        "gkp_last_error",
        "GKP_STATUS_NO_CROSSING",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn c_program_links_and_runs() {
    // cargo test refreshes deps/ but only cargo build uplifts the archive
    let dir = target_dir();
    let lib = [
        dir.join("deps/libgkp_repeater_ffi.a"),
        dir.join("libgkp_repeater_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.exists())
    .unwrap_or_else(|| dir.join("libgkp_repeater_ffi.a"));
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());

    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[0], env!("CARGO_PKG_VERSION"));
    let cfg = RepeaterConfig::new(100.0, 4, 0.7, 0.05, 10.0).with_strategy(AmplificationStrategy::CcAmplification);
    let s: f64 = fields[1].parse().unwrap();
    assert_eq!(s, analytic_rate(&cfg).unwrap().s);
}

//! End-to-end check of the C ABI: compile a real C program against the
//! generated header and the static library, run it, and verify its output.

use std::path::PathBuf;
use std::process::Command;

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "collide_pbe.h"

int main(void) {
    const char *config =
        "grid.cells = 24\n"
        "grid.n = 10\n"
        "time.t_end = 0.1\n";
    CpbeSim *sim = NULL;
    if (cpbe_sim_new(config, &sim) != CPBE_STATUS_OK) return 1;
    if (cpbe_sim_run(sim) != CPBE_STATUS_OK) return 2;

    size_t rows = cpbe_sim_moment_count(sim);
    if (rows < 2) return 3;
    CpbeMomentRow last;
    if (cpbe_sim_moment_row(sim, rows - 1, &last) != CPBE_STATUS_OK) return 4;
    if (last.m1 <= 0.0) return 5;
    if (last.mass_drift > 1e-6 || last.mass_drift < -1e-6) return 6;

    size_t cells = cpbe_sim_cell_count(sim);
    if (cells != 24) return 7;
    double pivots[24];
    double densities[24];
    size_t written = 0;
    if (cpbe_sim_density(sim, pivots, densities, cells, &written) != CPBE_STATUS_OK) return 8;
    if (written != cells) return 9;

    /* Error path: nu outside the supported range. */
    CpbeSim *bad = NULL;
    if (cpbe_sim_new("breakup.nu = -1.5\n", &bad) != CPBE_STATUS_INVALID_CONFIG) return 10;
    char msg[256];
    cpbe_last_error(msg, sizeof msg);
    if (strstr(msg, "unsupported regime") == NULL) return 11;

    /* Assumption audit through the ABI. */
    char report[4096];
    if (cpbe_audit("breakup.nu = 0\n", report, sizeof report, NULL) != CPBE_STATUS_OK) return 12;
    if (strstr(report, "gamma2_ok: true") == NULL) return 13;

    cpbe_sim_free(sim);
    printf("m0=%.12f m1=%.12f\n", last.m0, last.m1);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include_dir = manifest.join("include");
    assert!(
        include_dir.join("collide_pbe.h").exists(),
        "header should be generated by the build script"
    );

    // Pick the newest static library produced for this crate; `cargo test`
    // refreshes the hashed copy under deps/, while `cargo build` also
    // uplifts an unhashed one next to it.
    let mut lib_dir = std::env::current_exe().unwrap();
    lib_dir.pop(); // test binary name
    let mut candidates: Vec<PathBuf> = Vec::new();
    for dir in [lib_dir.clone(), lib_dir.join(".."), lib_dir.join("../..")] {
        if let Ok(entries) = std::fs::read_dir(&dir) {
            for entry in entries.flatten() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.starts_with("libcollide_pbe_ffi") && name.ends_with(".a") {
                    candidates.push(entry.path());
                }
            }
        }
    }
    let static_lib = candidates
        .into_iter()
        .max_by_key(|p| std::fs::metadata(p).and_then(|m| m.modified()).ok())
        .expect("static library not found near the test binary");

    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    std::fs::create_dir_all(&tmp).unwrap();
    let c_path = tmp.join("smoke.c");
    let bin_path = tmp.join("smoke");
    std::fs::write(&c_path, C_PROGRAM).unwrap();

    let compile = Command::new("cc")
        .arg(&c_path)
        .arg("-I")
        .arg(&include_dir)
        .arg(&static_lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin_path)
        .output()
        .expect("invoke cc");
    assert!(
        compile.status.success(),
        "cc failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&bin_path).output().expect("run smoke binary");
    assert!(
        run.status.success(),
        "smoke binary exited with {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stdout)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("m1="), "unexpected output: {stdout}");
}

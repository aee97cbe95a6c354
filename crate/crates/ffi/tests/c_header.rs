use std::process::Command;

const PROGRAM: &str = r#"
#include "invface.h"
#include <stdio.h>

int main(void) {
    InvfaceModel *model = NULL;
    InvfaceStatus s = invface_model_generate(4, 3, 2, 24, 24, 7, &model);
    if (s != INVFACE_STATUS_OK) {
        fprintf(stderr, "%s\n", invface_last_error());
        return 1;
    }
    InvfaceCamera cam = invface_camera_default();
    size_t m = invface_model_param_count(model);
    float params[64] = {0};
    unsigned char rgb[128 * 128 * 3];
    s = invface_render(model, cam, params, m, rgb, NULL);
    invface_model_free(model);
    return s == INVFACE_STATUS_OK ? 0 : 2;
}
"#;

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-c", "-I", include])
        .arg(&src)
        .arg("-o")
        .arg(dir.path().join("main.o"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}

fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("VOLTERRA_CONTROL_H".to_string()),
        cpp_compat: true,
        documentation: true,
        ..Default::default()
    };
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen header generation")
        .write_to_file(std::path::Path::new(&crate_dir).join("include/volterra_control.h"));
    println!("cargo:rerun-if-changed=src/lib.rs");
}

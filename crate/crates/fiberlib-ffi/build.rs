fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("cargo sets this");
    let mut config = cbindgen::Config::default();
    config.language = cbindgen::Language::C;
    config.cpp_compat = true;
    config.include_guard = Some("FIBERLIB_H".into());
    config.documentation = true;
    config.enumeration.prefix_with_name = true;
    let bindings = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("header generation");
    bindings.write_to_file(format!("{crate_dir}/include/fiberlib.h"));
    println!("cargo:rerun-if-changed=src/lib.rs");
}

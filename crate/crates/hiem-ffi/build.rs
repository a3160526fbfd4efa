fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let config_path = std::path::Path::new(&crate_dir).join("cbindgen.toml");
    let out_path = std::path::Path::new(&crate_dir).join("include/hiem.h");

    let config = cbindgen::Config::from_file(&config_path).unwrap_or_default();
    match cbindgen::Builder::new()
        .with_config(config)
        .with_crate(&crate_dir)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(out_path);
        }
        Err(e) => {
            // Header generation failures must not break `cargo check` of the
            // workspace; the committed header stays in place.
            println!("cargo:warning=cbindgen failed: {e}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}

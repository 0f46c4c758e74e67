//! Home of the `acceptance` test target; see `tests/acceptance.rs`.

/// Directory holding the shipped data tables.
pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

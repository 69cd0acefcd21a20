//! Runs an experiment config through the library, as the `geoctrl` binary
//! does, and prints the summary.
//!
//! Run with
//! `cargo run --release --example run_config -- crates/core/examples/configs/three_link_decoupling.toml`.

use std::path::PathBuf;

use geoctrl::experiments;

fn main() -> geoctrl::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/flat_rest.toml")
        });
    let out = std::env::temp_dir().join("geoctrl-example");
    let outcome = experiments::run_file(&path, Some(&out))?;
    println!(
        "wrote {:?} to {}",
        outcome.artifacts,
        outcome.output_dir.display()
    );
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    Ok(())
}

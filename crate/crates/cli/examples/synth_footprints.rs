//! Writes the bundled synthetic fixtures into a directory:
//!
//! ```text
//! cargo run -p floodlens-cli --example synth_footprints -- data/
//! ```
//!
//! produces `region.geojson`, `footprints.geojson` and `codebook.json`.

use std::path::PathBuf;

use floodlens_core::codebook::Codebook;
use floodlens_core::{geo, synth};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("region.geojson"), synth::QUITO_REGION_GEOJSON)?;
    let footprints = synth::quito_footprints();
    std::fs::write(dir.join("footprints.geojson"), geo::write_footprints(&footprints))?;
    std::fs::write(dir.join("codebook.json"), Codebook::quito().to_json())?;
    eprintln!("{} footprints written to {}", footprints.len(), dir.display());
    Ok(())
}

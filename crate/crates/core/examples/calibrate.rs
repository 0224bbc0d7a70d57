//! Regenerates `data/calibrated_params.json` from the reference parameters.
//!
//!     cargo run -p star-core --example calibrate > crates/core/data/calibrated_params.json

use star_core::costmodel::{calibrate, CostParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fitted = calibrate(&CostParams::reference())?;
    println!("{}", serde_json::to_string_pretty(&fitted)?);
    Ok(())
}

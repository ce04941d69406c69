//! Runs the three diagnostic presets and prints every record.
//!
//! cargo run --release --example checks

use branchrl::diagnostics::{run_preset, Preset};

fn main() -> branchrl::Result<()> {
    for preset in [Preset::TinyExact, Preset::PaperMc, Preset::RelaxedWitness] {
        let records = run_preset(preset, 200_000, 0)?;
        let failed = records.iter().filter(|r| !r.pass).count();
        println!("{preset:?}: {} checks, {failed} failed", records.len());
        for r in records.iter().filter(|r| !r.name.contains('[') || !r.pass) {
            println!("  {r}");
        }
    }
    Ok(())
}

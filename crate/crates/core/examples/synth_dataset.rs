//! Writes a synthetic dataset with ground-truth flows to a directory.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [subjects]

use invreg::synth::{write_dataset, DatasetConfig};

fn main() -> invreg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic".into());
    let subjects = args.next().map_or(10, |s| s.parse().expect("subject count"));
    let cfg = DatasetConfig { subjects, ..DatasetConfig::default() };
    write_dataset(&out, &cfg)?;
    println!(
        "{} subjects of {}, {} bumps each, max displacement {} voxels, written to {out}",
        cfg.subjects, cfg.shape, cfg.bumps, cfg.max_displacement
    );
    Ok(())
}

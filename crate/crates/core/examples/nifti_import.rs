//! Imports a NIfTI-1 volume and converts it to IVR. Without an argument a
//! small scaled int16 volume is written first and imported instead.
//!
//! cargo run --release --example nifti_import -- [file.nii]

use std::path::PathBuf;

use invreg::volume::import_nifti_image;

/// Little-endian single-file header for an int16 volume, data at byte 352.
fn int16_nifti(dims: [i16; 3], slope: f32, inter: f32, values: &[i16]) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    h[40..42].copy_from_slice(&3i16.to_le_bytes());
    for (i, d) in dims.iter().enumerate() {
        h[42 + 2 * i..44 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&4i16.to_le_bytes());
    h[72..74].copy_from_slice(&16i16.to_le_bytes());
    for i in 0..4 {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&1.0f32.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
    h[112..116].copy_from_slice(&slope.to_le_bytes());
    h[116..120].copy_from_slice(&inter.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend(values.iter().flat_map(|v| v.to_le_bytes()));
    h
}

fn main() -> invreg::Result<()> {
    let input = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("invreg_example.nii");
            let values: Vec<i16> = (0..8 * 8 * 8).map(|i| (i % 100) as i16 - 50).collect();
            std::fs::write(&p, int16_nifti([8, 8, 8], 0.5, 10.0, &values)).expect("write example file");
            p
        }
    };
    let image = import_nifti_image(&input)?;
    let (lo, hi) = image.min_max();
    println!("{}: shape {} intensity range [{lo}, {hi}]", input.display(), image.shape());
    let out = input.with_extension("ivr");
    image.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

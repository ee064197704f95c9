//! Warps a volume and its labels with a constant flow, then undoes it.

use invreg::grid::Shape3;
use invreg::synth::{label_centroid, make_phantom};
use invreg::warp::{nearest_warp, sequential_warp, trilinear_warp};
use invreg::FlowField3;

fn main() -> invreg::Result<()> {
    let shape = Shape3::cube(32);
    let phantom = make_phantom(shape, 1)?;
    // pull-style: out(p) = in(p + d), so content moves by -d
    let forward = FlowField3::constant(shape, [-2.0, 0.0, 1.5]);
    let inverse = FlowField3::constant(shape, [2.0, 0.0, -1.5]);

    let moved = trilinear_warp(&phantom.image, &forward)?;
    let labels = nearest_warp(&phantom.labels, &forward)?;
    for s in &phantom.spheres {
        let before = label_centroid(&phantom.labels, s.label).unwrap();
        let after = label_centroid(&labels, s.label).unwrap();
        println!(
            "label {}: centroid ({:.2}, {:.2}, {:.2}) -> ({:.2}, {:.2}, {:.2})",
            s.label, before[0], before[1], before[2], after[0], after[1], after[2]
        );
    }

    let back = sequential_warp(&phantom.image, &forward, &inverse)?;
    // voxels within 3 of the border see clamped samples
    let mut err = 0.0f64;
    for i in 0..shape.voxels() {
        let p = shape.coords(i);
        if p.iter().all(|&c| (3..29).contains(&c)) {
            err = err.max((back.data()[i] - phantom.image.data()[i]).abs());
        }
    }
    println!("mean intensity after shift {:.5}", moved.data().iter().sum::<f64>() / moved.data().len() as f64);
    println!("max interior round-trip error {err:.3e}");
    Ok(())
}

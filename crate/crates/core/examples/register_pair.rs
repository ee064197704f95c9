//! Trains a tiny model, then registers one pair in both directions from a
//! single forward pass each.

use invreg::grid::Shape3;
use invreg::loss::local_cc;
use invreg::synth::{make_subjects, DatasetConfig};
use invreg::train::{train, AdamConfig, TrainConfig};
use invreg::warp::{sequential_warp, trilinear_warp};

fn main() -> invreg::Result<()> {
    let data = DatasetConfig { subjects: 4, shape: Shape3::cube(16), ..DatasetConfig::default() };
    let subjects = make_subjects(&data)?;
    let images: Vec<_> = subjects.iter().map(|s| s.image.clone()).collect();
    let cfg = TrainConfig {
        levels: 2,
        base_channels: 4,
        epochs: 10,
        window: 5,
        adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let net = train(&images, &cfg, None, |epoch, rows| {
        let mean = rows.iter().map(|r| r.report.total).sum::<f64>() / rows.len() as f64;
        println!("epoch {epoch}: mean loss {mean:.4}");
    })?
    .net;

    let (a, b) = (&images[0], &images[1]);
    let (flow_ab, flow_ba, _) = net.forward(a, b)?;
    println!("CC(A, B) unregistered      {:.4}", local_cc(a, b, 5)?);
    println!("CC(A o forward, B)         {:.4}", local_cc(&trilinear_warp(a, &flow_ab)?, b, 5)?);
    println!("CC(B o backward, A)        {:.4}", local_cc(&trilinear_warp(b, &flow_ba)?, a, 5)?);
    let round = sequential_warp(a, &flow_ab, &flow_ba)?;
    let residual = round.data().iter().zip(a.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64;
    println!("round-trip residual on A   {residual:.5}");
    println!("largest displacement       {:.3} voxels", flow_ab.max_norm());
    Ok(())
}

//! Trains a small network on ten synthetic subjects and scores it on ten
//! held-out ones. Pass `ablate` to drop the backward decoder.
//!
//! cargo run --release --example train_synthetic -- [size] [epochs] [lr] [full|ablate] [seed]

use invreg::grid::Shape3;
use invreg::metrics::mean_foreground_dice;
use invreg::synth::{make_subjects, DatasetConfig};
use invreg::train::{epoch_means, train, AdamConfig, TrainConfig};
use invreg::warp::nearest_warp;

fn main() -> invreg::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).map_or(24, |s| s.parse().unwrap());
    let epochs: usize = args.get(2).map_or(5, |s| s.parse().unwrap());
    let lr: f64 = args.get(3).map_or(1e-3, |s| s.parse().unwrap());
    let ablate = args.get(4).is_some_and(|s| s == "ablate");
    let seed: u64 = args.get(5).map_or(0, |s| s.parse().unwrap());
    let data = DatasetConfig { subjects: 20, shape: Shape3::cube(size), ..DatasetConfig::default() };
    let all = make_subjects(&data)?;
    let (train_set, held_out) = all.split_at(10);
    let images: Vec<_> = train_set.iter().map(|s| s.image.clone()).collect();
    let cfg = TrainConfig {
        levels: 3,
        base_channels: 8,
        epochs,
        ablate_backward: ablate,
        seed,
        adam: AdamConfig { learning_rate: lr, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let out = train(&images, &cfg, None, |epoch, rows| {
        let n = rows.len() as f64;
        let total = rows.iter().map(|r| r.report.total).sum::<f64>() / n;
        let cycle = rows.iter().map(|r| r.report.cycle).sum::<f64>() / n;
        println!("epoch {epoch:>2}  total {total:.5}  cycle {cycle:.6}  ({:.0} s)", start.elapsed().as_secs_f64());
    })?;
    let totals = epoch_means(&out.log, |r| r.total);
    println!("epoch means: {totals:?}");
    let (mut before, mut after) = (0.0, 0.0);
    for k in 0..held_out.len() {
        let (a, b) = (&held_out[k], &held_out[(k + 1) % held_out.len()]);
        let (flow_st, _, _) = out.net.forward(&a.image, &b.image)?;
        before += mean_foreground_dice(&b.labels, &a.labels)?;
        after += mean_foreground_dice(&b.labels, &nearest_warp(&a.labels, &flow_st)?)?;
    }
    let n = held_out.len() as f64;
    println!("held-out Dice {:.4} -> {:.4}", before / n, after / n);
    let mad = |a: &invreg::Volume3, b: &invreg::Volume3| {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
    };
    let (mut own, mut swap) = (0.0, 0.0);
    for k in 0..held_out.len() {
        let (a, b) = (&held_out[k].image, &held_out[(k + 1) % held_out.len()].image);
        let (st, ts, _) = out.net.forward(a, b)?;
        let (st_swap, _, _) = out.net.forward(b, a)?;
        own += mad(&invreg::warp::sequential_warp(a, &st, &ts)?, a);
        swap += mad(&invreg::warp::sequential_warp(a, &st, &st_swap)?, a);
    }
    println!("round trip residual: own inverse {:.5}, swap-run inverse {:.5}", own / n, swap / n);
    Ok(())
}

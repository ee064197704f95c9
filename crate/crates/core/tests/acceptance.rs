//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line per criterion and exits nonzero if any required criterion fails.
//!
//! `cargo test --test acceptance -- 3 7` runs only criteria 3 and 7.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use invreg::fieldopt::{optimize_fields, FieldOptConfig};
use invreg::gradcheck::{run_audit, TOLERANCE};
use invreg::grid::Shape3;
use invreg::loss::local_cc;
use invreg::metrics::{bir, dice_per_label, mean_foreground_dice};
use invreg::net::{save_checkpoint, Branch, CheckpointInfo, LayerKind};
use invreg::synth::{gaussian_flow, make_pair, make_phantom, make_subjects, random_bumps, DatasetConfig, Subject};
use invreg::train::{epoch_means, train, AdamConfig, TrainConfig, TrainOutcome};
use invreg::volume::{import_nifti_image, load_ivr, save_ivr, RawData};
use invreg::warp::{nearest_warp, sequential_warp, trilinear_warp};
use invreg::{FlowField3, LabelVolume3, Network, NetworkConfig, Volume3, VolumeHeader};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::Nifti;

type Check = Result<String, String>;

fn require(cond: bool, msg: String) -> Check {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn mean_abs_diff(a: &Volume3, b: &Volume3) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

// ---------------------------------------------------------------------------
// 1

fn gradient_audit() -> Check {
    let start = Instant::now();
    let report = run_audit(&[1, 2, 3]).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<String> = report.results.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
    let msg = format!(
        "{} checks over 3 seeds, worst rel err {:.2e} (< {TOLERANCE:e}), {secs:.1} s",
        report.results.len(),
        report.worst()
    );
    if !failing.is_empty() {
        return Err(format!("{msg}; failing: {}", failing.join("; ")));
    }
    require(secs < 120.0, msg)
}

// ---------------------------------------------------------------------------
// 2

fn brute_dice(a: &[u16], b: &[u16]) -> BTreeMap<u16, f64> {
    let mut labels: Vec<u16> = a.iter().chain(b).copied().filter(|&l| l != 0).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut out = BTreeMap::new();
    for l in labels {
        let in_a = a.iter().filter(|&&x| x == l).count();
        let in_b = b.iter().filter(|&&x| x == l).count();
        let both = a.iter().zip(b).filter(|&(&x, &y)| x == l && y == l).count();
        out.insert(l, 2.0 * both as f64 / (in_a + in_b) as f64);
    }
    out
}

fn brute_bir(target: &[u16], warped: &[u16]) -> f64 {
    let mut support = 0usize;
    let mut diff = 0usize;
    for i in 0..target.len() {
        if target[i] > 0 {
            support += 1;
        }
        if target[i] != warped[i] {
            diff += 1;
        }
    }
    1.0 - diff as f64 / support as f64
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let shape = Shape3::cube(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..100 {
        let max_label = rng.gen_range(1..8u16);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u16> {
            (0..shape.voxels()).map(|_| rng.gen_range(0..=max_label)).collect()
        };
        let mut a = draw(&mut rng);
        let b = draw(&mut rng);
        // guarantee a nonzero target support
        a[0] = 1;
        let (va, vb) = (LabelVolume3::new(shape, a.clone()).unwrap(), LabelVolume3::new(shape, b.clone()).unwrap());
        let d = dice_per_label(&va, &vb).map_err(|e| e.to_string())?;
        if d != brute_dice(&a, &b) {
            return Err(format!("Dice differs from voxel counting on pair {k}"));
        }
        let got = bir(&va, &vb).map_err(|e| e.to_string())?;
        if got != brute_bir(&a, &b) {
            return Err(format!("BIR {got} differs from voxel counting on pair {k}"));
        }
        if bir(&va, &va).unwrap() != 1.0 {
            return Err(format!("bir(x, x) != 1 on pair {k}"));
        }
    }
    // hand examples on a 14-voxel strip
    let strip = Shape3::new(14, 1, 1);
    let t = LabelVolume3::new(strip, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 0, 0, 0, 0]).unwrap();
    let w = LabelVolume3::new(strip, vec![1, 1, 0, 2, 1, 2, 3, 2, 0, 2, 0, 4, 4, 0]).unwrap();
    let b = bir(&t, &w).unwrap();
    let a5 = LabelVolume3::new(Shape3::new(5, 1, 1), vec![1, 1, 1, 0, 0]).unwrap();
    let b5 = LabelVolume3::new(Shape3::new(5, 1, 1), vec![0, 1, 1, 1, 0]).unwrap();
    let dice = dice_per_label(&a5, &b5).unwrap()[&1];
    let secs = start.elapsed().as_secs_f64();
    require(
        (b - 0.4).abs() < 1e-15 && (dice - 2.0 / 3.0).abs() < 1e-15 && hand_dice_06() && secs < 10.0,
        format!("100 random 8^3 pairs exact; BIR example {b}, Dice examples reproduce; {secs:.2} s"),
    )
}

/// Label 1 covers 5 voxels in one map and 5 in the other, 3 shared: 0.6.
fn hand_dice_06() -> bool {
    let s = Shape3::new(7, 1, 1);
    let a = LabelVolume3::new(s, vec![1, 1, 1, 1, 1, 0, 0]).unwrap();
    let b = LabelVolume3::new(s, vec![0, 0, 1, 1, 1, 1, 1]).unwrap();
    dice_per_label(&a, &b).unwrap()[&1] == 0.6
}

// ---------------------------------------------------------------------------
// 3

fn fieldopt_recovery() -> Check {
    let start = Instant::now();
    let shape = Shape3::cube(32);
    let phantom = make_phantom(shape, 0).map_err(|e| e.to_string())?;
    let bumps = random_bumps(shape, 3, 3.0, 100).map_err(|e| e.to_string())?;
    let flow_gt = gaussian_flow(shape, &bumps).map_err(|e| e.to_string())?;
    let (s, t, sl, tl) = make_pair(&phantom, &flow_gt).map_err(|e| e.to_string())?;
    let r = optimize_fields(&s, &t, &FieldOptConfig::default()).map_err(|e| e.to_string())?;
    let before = mean_foreground_dice(&tl, &sl).unwrap();
    let after = mean_foreground_dice(&tl, &nearest_warp(&sl, &r.flow_st).unwrap()).unwrap();
    let round = 0.5
        * (mean_abs_diff(&sequential_warp(&s, &r.flow_st, &r.flow_ts).unwrap(), &s)
            + mean_abs_diff(&sequential_warp(&t, &r.flow_ts, &r.flow_st).unwrap(), &t));
    // round trip with the optimized forward flow and the inverse left at its
    // zero initialization
    let baseline = 0.5
        * (mean_abs_diff(&trilinear_warp(&s, &r.flow_st).unwrap(), &s)
            + mean_abs_diff(&trilinear_warp(&t, &r.flow_ts).unwrap(), &t));
    let secs = start.elapsed().as_secs_f64();
    require(
        after - before >= 0.15 && round <= 0.5 * baseline && secs < 300.0,
        format!(
            "max |flow_gt| {:.2}; Dice {before:.4} -> {after:.4} (+{:.4}); round trip {round:.5} vs {baseline:.5} ({:.1}%); {secs:.1} s",
            flow_gt.max_norm(),
            after - before,
            100.0 * round / baseline
        ),
    )
}

// ---------------------------------------------------------------------------
// 4 and 5

const TRAIN_SIZE: usize = 24;
const TRAIN_EPOCHS: usize = 20;
const TRAIN_LR: f64 = 1e-3;

fn dataset() -> Vec<Subject> {
    let cfg = DatasetConfig {
        subjects: 20,
        shape: Shape3::cube(TRAIN_SIZE),
        ..DatasetConfig::default()
    };
    make_subjects(&cfg).expect("synthetic dataset")
}

fn train_run(subjects: &[Subject], seed: u64, ablate: bool) -> TrainOutcome {
    let images: Vec<Volume3> = subjects[..10].iter().map(|s| s.image.clone()).collect();
    let cfg = TrainConfig {
        levels: 3,
        base_channels: 8,
        epochs: TRAIN_EPOCHS,
        seed,
        ablate_backward: ablate,
        adam: AdamConfig {
            learning_rate: TRAIN_LR,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    train(&images, &cfg, None, |_, _| {}).expect("training runs")
}

/// Ten held-out ordered pairs among subjects 10..20.
fn held_out(subjects: &[Subject]) -> Vec<(&Subject, &Subject)> {
    let rest = &subjects[10..];
    (0..rest.len()).map(|k| (&rest[k], &rest[(k + 1) % rest.len()])).collect()
}

fn end_to_end(subjects: &[Subject], full: &TrainOutcome, secs: f64) -> Check {
    let totals = epoch_means(&full.log, |r| r.total);
    let cycles = epoch_means(&full.log, |r| r.cycle);
    let (t0, tn) = (totals[0], totals[totals.len() - 1]);
    let (c0, cn) = (cycles[0], cycles[cycles.len() - 1]);
    let (mut before, mut after) = (0.0, 0.0);
    let pairs = held_out(subjects);
    for (a, b) in &pairs {
        let (flow_st, _, _) = full.net.forward(&a.image, &b.image).unwrap();
        before += mean_foreground_dice(&b.labels, &a.labels).unwrap();
        after += mean_foreground_dice(&b.labels, &nearest_warp(&a.labels, &flow_st).unwrap()).unwrap();
    }
    before /= pairs.len() as f64;
    after /= pairs.len() as f64;
    let a = tn < t0;
    let b = after - before >= 0.10;
    let c = cn <= 0.5 * c0;
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    require(
        a && b && c && secs < 1800.0,
        format!(
            "(a) total {t0:.4} -> {tn:.4} {}; (b) held-out Dice {before:.4} -> {after:.4} {}; (c) cycle {c0:.5} -> {cn:.5} ({:.0}% of epoch 0) {}; {secs:.0} s",
            mark(a),
            mark(b),
            100.0 * cn / c0,
            mark(c)
        ),
    )
}

/// Mean held-out round-trip residual `|(A o st) o inv - A|` where `inv` is
/// either the network's own backward flow or the forward flow of the swapped run.
fn residual(net: &Network, pairs: &[(&Subject, &Subject)], own_inverse: bool) -> f64 {
    let mut acc = 0.0;
    for (a, b) in pairs {
        let (st, ts, _) = net.forward(&a.image, &b.image).unwrap();
        let inverse = if own_inverse { ts } else { net.forward(&b.image, &a.image).unwrap().0 };
        acc += mean_abs_diff(&sequential_warp(&a.image, &st, &inverse).unwrap(), &a.image);
    }
    acc / pairs.len() as f64
}

fn ablation(subjects: &[Subject], full_seed0: &TrainOutcome) -> (Check, String) {
    let pairs = held_out(subjects);
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let full_owned;
        let full = if seed == 0 {
            full_seed0
        } else {
            full_owned = train_run(subjects, seed, false);
            &full_owned
        };
        let ablated = train_run(subjects, seed, true);
        let rf = residual(&full.net, &pairs, true);
        let ra = residual(&ablated.net, &pairs, false);
        if rf <= ra {
            wins += 1;
        }
        lines.push(format!("seed {seed}: full {rf:.5} vs ablated {ra:.5}"));
    }
    let msg = format!("{wins}/3 seeds with full <= ablated ({})", lines.join(", "));
    (require(wins >= 2, msg.clone()), msg)
}

// ---------------------------------------------------------------------------
// 6

fn bidirectional_contract() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let cfg = DatasetConfig {
        subjects: 4,
        shape: Shape3::cube(16),
        seed: 6,
        ..DatasetConfig::default()
    };
    let subjects = make_subjects(&cfg).map_err(|e| e.to_string())?;
    let images: Vec<Volume3> = subjects.iter().map(|s| s.image.clone()).collect();
    let tcfg = TrainConfig {
        levels: 2,
        base_channels: 4,
        epochs: 10,
        window: 5,
        seed: 6,
        adam: AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&images, &tcfg, None, |_, _| {}).map_err(|e| e.to_string())?;
    save_checkpoint(&out.net, &CheckpointInfo::default(), d.join("model.ckpt")).map_err(|e| e.to_string())?;
    images[0].save(d.join("a.ivr")).map_err(|e| e.to_string())?;
    images[1].save(d.join("b.ivr")).map_err(|e| e.to_string())?;

    // one forward pass yields both flows
    let (_, _, tape) = out.net.forward(&images[0], &images[1]).map_err(|e| e.to_string())?;
    if !tape.ran_backward_decoder() {
        return Err("forward pass did not run the backward decoder".into());
    }

    let register = |moving: &str, fixed: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_invreg"))
            .args(["register", "--checkpoint", "model.ckpt", "--moving", moving, "--fixed", fixed, "--out", out])
            .current_dir(d)
            .output()
            .expect("binary runs")
    };
    for (m, f, o) in [("a.ivr", "b.ivr", "ab"), ("b.ivr", "a.ivr", "ba")] {
        let r = register(m, f, o);
        if !r.status.success() {
            return Err(String::from_utf8_lossy(&r.stderr).into_owned());
        }
        let n = std::fs::read_dir(d.join(o)).unwrap().filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ivr")
        });
        if n.count() != 4 {
            return Err(format!("{o}: expected exactly 4 IVR outputs"));
        }
    }
    let flow = |p: &str| FlowField3::load(d.join(p)).unwrap();
    let (a, b) = (&images[0], &images[1]);
    // run 1's forward flow and run 2's backward flow both pull A onto B
    let w = 5;
    let base_ab = local_cc(&trilinear_warp(a, &FlowField3::zeros(a.shape())).unwrap(), b, w).unwrap();
    let cc1 = local_cc(&trilinear_warp(a, &flow("ab/flow_st.ivr")).unwrap(), b, w).unwrap();
    let cc2 = local_cc(&trilinear_warp(a, &flow("ba/flow_ts.ivr")).unwrap(), b, w).unwrap();
    let base_ba = local_cc(b, a, w).unwrap();
    let cc3 = local_cc(&trilinear_warp(b, &flow("ab/flow_ts.ivr")).unwrap(), a, w).unwrap();
    let cc4 = local_cc(&trilinear_warp(b, &flow("ba/flow_st.ivr")).unwrap(), a, w).unwrap();

    // structural mirror: sub-skips flipped to add-skips and forward-decoder
    // parameters copied make the two decoders agree bitwise
    let mut mirror = out.net.clone();
    for l in mirror.decoder_bwd.iter_mut() {
        if l.kind == LayerKind::SubSkip {
            l.kind = LayerKind::AddSkip;
        }
    }
    let fwd = mirror.decoder_param_range(Branch::Forward);
    let bwd = mirror.decoder_param_range(Branch::Backward);
    let copy = mirror.params()[fwd].to_vec();
    mirror.params_mut()[bwd].copy_from_slice(&copy);
    let (m1, m2, _) = mirror.forward(a, b).unwrap();
    let mirrored = m1.data() == m2.data();

    require(
        cc1 > base_ab && cc2 > base_ab && cc3 > base_ba && cc4 > base_ba && mirrored,
        format!(
            "4 files per run; A->B: CC {base_ab:.5} -> {cc1:.5} (run 1 forward) / {cc2:.5} (run 2 backward); B->A: {base_ba:.5} -> {cc3:.5} / {cc4:.5}; mirrored decoders bitwise equal: {mirrored}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn run_pipeline(d: &Path, threads: Option<&str>) -> Result<(), String> {
    let run = |args: &[&str]| -> Result<(), String> {
        let mut full: Vec<&str> = Vec::new();
        if let Some(t) = threads {
            full.extend(["--threads", t]);
        }
        full.extend_from_slice(args);
        let out = Command::new(env!("CARGO_BIN_EXE_invreg"))
            .args(&full)
            .current_dir(d)
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    run(&["synth", "--out", "ds", "--subjects", "3", "--size", "16", "--seed", "3"])?;
    run(&[
        "train", "--data", "ds", "--out", "run", "--epochs", "2", "--seed", "7", "--levels", "2", "--base-channels", "3",
        "--window", "5", "--lr", "1e-3",
    ])?;
    run(&[
        "register", "--checkpoint", "run/model.ckpt", "--moving", "ds/subjects/00_image.ivr", "--fixed",
        "ds/subjects/01_image.ivr", "--out", "reg",
    ])?;
    run(&[
        "fieldopt", "--source", "ds/subjects/00_image.ivr", "--target", "ds/subjects/01_image.ivr", "--out", "fo",
        "--steps", "10", "--window", "5",
    ])?;
    let mut manifest = String::from("pair_src,pair_dst,target_labels,warped_labels\n");
    for (s, t) in [(0, 1), (1, 2), (2, 0)] {
        manifest += &format!("{s},{t},ds/subjects/{t:02}_labels.ivr,ds/subjects/{s:02}_labels.ivr\n");
    }
    std::fs::write(d.join("manifest.csv"), manifest).map_err(|e| e.to_string())?;
    run(&["eval", "--manifest", "manifest.csv", "--out", "eval"])
}

const DETERMINISM_FILES: &[&str] = &[
    "run/model.ckpt",
    "run/epoch_0000.ckpt",
    "run/epoch_0001.ckpt",
    "run/train_log.csv",
    "reg/flow_st.ivr",
    "reg/flow_ts.ivr",
    "reg/warped_moving.ivr",
    "reg/warped_fixed.ivr",
    "fo/flow_st.ivr",
    "fo/flow_ts.ivr",
    "fo/trace.csv",
    "eval/dice.csv",
    "eval/bir.csv",
    "eval/summary.csv",
    "eval/boxplot.csv",
];

fn summary(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect()
}

fn determinism() -> Check {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    run_pipeline(dirs[0].path(), Some("1"))?;
    run_pipeline(dirs[1].path(), Some("1"))?;
    run_pipeline(dirs[2].path(), None)?;
    for f in DETERMINISM_FILES {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            return Err(format!("{f} differs between two --threads 1 runs"));
        }
    }
    let s1 = summary(&dirs[0].path().join("eval/summary.csv"));
    let s3 = summary(&dirs[2].path().join("eval/summary.csv"));
    let worst = s1.iter().zip(&s3).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let trained_same = std::fs::read(dirs[0].path().join("run/model.ckpt")).unwrap()
        == std::fs::read(dirs[2].path().join("run/model.ckpt")).unwrap();
    require(
        s1.len() == s3.len() && worst <= 1e-6,
        format!(
            "{} outputs bitwise identical with --threads 1; default threading: summary max diff {worst:e}, checkpoint identical: {trained_same}",
            DETERMINISM_FILES.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

fn format_round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("v.ivr");
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for k in 0..1000 {
        let shape = Shape3::new(rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..9));
        let n = shape.voxels();
        let vs = [rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0)];
        let (header, data) = if k % 2 == 0 {
            let c = rng.gen_range(1..4);
            let h = VolumeHeader::image(shape, c).with_voxel_size(vs);
            // arbitrary finite bit patterns
            (h, RawData::F32((0..c * n).map(|_| f32::from_bits(rng.gen::<u32>() & 0xbf7f_ffff)).collect()))
        } else {
            (VolumeHeader::labels(shape).with_voxel_size(vs), RawData::U16((0..n).map(|_| rng.gen()).collect()))
        };
        save_ivr(&path, &header, &data).map_err(|e| e.to_string())?;
        let first = std::fs::read(&path).unwrap();
        let (h2, d2) = load_ivr(&path).map_err(|e| e.to_string())?;
        let same = match (&data, &d2) {
            (RawData::F32(a), RawData::F32(b)) => a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (a, b) => a == b,
        };
        save_ivr(&path, &h2, &d2).map_err(|e| e.to_string())?;
        if h2 != header || !same || std::fs::read(&path).unwrap() != first {
            return Err(format!("IVR volume {k} did not round-trip"));
        }
    }

    let net = Network::build(NetworkConfig::new(3, 8, Shape3::cube(16)), 4).map_err(|e| e.to_string())?;
    let info = CheckpointInfo { window: 9, cycle_weight: 1.0, seed: 4, epoch: 0 };
    let (c1, c2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&net, &info, &c1).map_err(|e| e.to_string())?;
    let (loaded, info2) = invreg::net::load_checkpoint(&c1).map_err(|e| e.to_string())?;
    save_checkpoint(&loaded, &info2, &c2).map_err(|e| e.to_string())?;
    if std::fs::read(&c1).unwrap() != std::fs::read(&c2).unwrap() {
        return Err("checkpoint save/load/save changed bytes".into());
    }

    let values: Vec<f32> = (0..4 * 5 * 6).map(|i| (i as f32) * 0.125 - 7.0).collect();
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let nii = dir.path().join("x.nii");
    std::fs::write(&nii, Nifti::new(&[4, 5, 6], 16, 32).bytes(&payload)).unwrap();
    let v = import_nifti_image(&nii).map_err(|e| e.to_string())?;
    let exact = v.shape() == Shape3::new(4, 5, 6) && v.data().iter().zip(&values).all(|(a, &b)| *a == b as f64);
    require(exact, "1000 IVR volumes bitwise; checkpoint bytes stable; NIfTI values exact".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut failed = Vec::new();
    let mut report = |n: u32, name: &str, r: Check| {
        match &r {
            Ok(m) => println!("criterion {n} PASS  {name}: {m}"),
            Err(m) => {
                println!("criterion {n} FAIL  {name}: {m}");
                failed.push(n);
            }
        }
    };
    if want(1) {
        report(1, "gradient audit", gradient_audit());
    }
    if want(2) {
        report(2, "metric oracles", metric_oracles());
    }
    if want(3) {
        report(3, "field-optimization recovery", fieldopt_recovery());
    }
    if want(4) || want(5) {
        let subjects = dataset();
        let start = Instant::now();
        let full = train_run(&subjects, 0, false);
        let secs = start.elapsed().as_secs_f64();
        if want(4) {
            report(4, "end-to-end training", end_to_end(&subjects, &full, secs));
        }
        if want(5) {
            let (check, _) = ablation(&subjects, &full);
            report(5, "ablation direction", check);
        }
    }
    if want(6) {
        report(6, "bidirectional single run", bidirectional_contract());
    }
    if want(7) {
        report(7, "determinism", determinism());
    }
    if want(8) {
        report(8, "format round trips", format_round_trips());
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

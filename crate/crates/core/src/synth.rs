//! Synthetic phantoms and smooth analytic deformations with known truth.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{box_sum, Shape3};
use crate::volume::{FlowField3, LabelVolume3, Volume3};
use crate::warp::{nearest_warp, trilinear_warp};

/// One Gaussian displacement bump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 3],
    pub amplitude: [f64; 3],
    pub sigma: f64,
}

impl Bump {
    fn amplitude_norm(&self) -> f64 {
        self.amplitude.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// `flow(p) = sum_b amplitude_b * exp(-|p - center_b|^2 / (2 sigma_b^2))`.
/// Every bump must satisfy `|amplitude| < sigma`.
pub fn gaussian_flow(shape: Shape3, bumps: &[Bump]) -> Result<FlowField3> {
    for (i, b) in bumps.iter().enumerate() {
        if !(b.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("bump {i}: sigma must be > 0")));
        }
        if !(b.amplitude_norm() < b.sigma) {
            return Err(Error::InvalidArgument(format!(
                "bump {i}: |amplitude| {} must be below sigma {}",
                b.amplitude_norm(),
                b.sigma
            )));
        }
    }
    let v = shape.voxels();
    let mut data = vec![0.0; 3 * v];
    for i in 0..v {
        let p = shape.coords(i);
        for b in bumps {
            let d2: f64 = (0..3).map(|k| (p[k] as f64 - b.center[k]).powi(2)).sum();
            let g = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            for k in 0..3 {
                data[k * v + i] += b.amplitude[k] * g;
            }
        }
    }
    FlowField3::new(shape, data)
}

/// Random bumps inside the central region, rescaled so the resulting field's
/// largest displacement is exactly `max_displacement`.
pub fn random_bumps(shape: Shape3, count: usize, max_displacement: f64, seed: u64) -> Result<Vec<Bump>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_dim = shape.0.iter().copied().min().unwrap_or(1) as f64;
    let mut bumps: Vec<Bump> = (0..count)
        .map(|_| {
            let center = [0, 1, 2].map(|k| {
                let n = shape.0[k] as f64;
                rng.gen_range(0.25 * n..0.75 * n)
            });
            let sigma = rng.gen_range(0.18 * min_dim..0.28 * min_dim).max(1.0);
            let dir = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
            Bump {
                center,
                amplitude: dir,
                sigma,
            }
        })
        .collect();
    if count == 0 || max_displacement == 0.0 {
        bumps.iter_mut().for_each(|b| b.amplitude = [0.0; 3]);
        return Ok(bumps);
    }
    // rescale, widening any bump whose amplitude ends up at or above sigma
    for _ in 0..50 {
        let scale = max_displacement / gaussian_flow_unchecked(shape, &bumps).max_norm();
        for b in bumps.iter_mut() {
            b.amplitude = b.amplitude.map(|a| a * scale);
        }
        let mut widened = false;
        for b in bumps.iter_mut() {
            if b.amplitude_norm() >= b.sigma {
                b.sigma = 1.25 * b.amplitude_norm();
                widened = true;
            }
        }
        if !widened {
            return Ok(bumps);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no valid bump field with max displacement {max_displacement} in {shape}"
    )))
}

fn gaussian_flow_unchecked(shape: Shape3, bumps: &[Bump]) -> FlowField3 {
    let v = shape.voxels();
    let mut data = vec![0.0; 3 * v];
    for i in 0..v {
        let p = shape.coords(i);
        for b in bumps {
            let d2: f64 = (0..3).map(|k| (p[k] as f64 - b.center[k]).powi(2)).sum();
            let g = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            for k in 0..3 {
                data[k * v + i] += b.amplitude[k] * g;
            }
        }
    }
    FlowField3::new(shape, data).expect("finite bump field")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub label: u16,
    pub intensity: f64,
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub image: Volume3,
    pub labels: LabelVolume3,
    pub spheres: Vec<Sphere>,
}

pub const DEFAULT_SPHERES: usize = 6;

/// Phantom with [`DEFAULT_SPHERES`] labelled spheres.
pub fn make_phantom(shape: Shape3, seed: u64) -> Result<Phantom> {
    make_phantom_with(shape, DEFAULT_SPHERES, seed)
}

/// Soft-edged ellipsoidal "brain" with a smooth uniform texture and
/// `spheres` non-overlapping soft spheres of distinct intensity. Labels
/// `1..=spheres` mark the voxels inside each sphere radius.
pub fn make_phantom_with(shape: Shape3, spheres: usize, seed: u64) -> Result<Phantom> {
    if shape.0.iter().any(|&d| d < 16) {
        return Err(Error::InvalidArgument(format!("phantom needs at least 16^3, got {shape}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = shape.0.map(|d| d as f64);
    let mid = dims.map(|d| (d - 1.0) / 2.0);
    let semi = dims.map(|d| 0.42 * d);
    let min_dim = dims.iter().copied().fold(f64::INFINITY, f64::min);

    let mut placed: Vec<Sphere> = Vec::with_capacity(spheres);
    let mut attempts = 0;
    while placed.len() < spheres {
        attempts += 1;
        // shrink the size range if the volume is crowded
        let shrink = 1.0 / (1.0 + attempts as f64 / 2000.0);
        let radius = rng.gen_range(0.11 * min_dim..0.17 * min_dim) * shrink;
        let center = [0, 1, 2].map(|k| rng.gen_range(mid[k] - semi[k]..mid[k] + semi[k]));
        let ell: f64 = (0..3)
            .map(|k| ((center[k] - mid[k]) / (semi[k] - radius - 1.0).max(1.0)).powi(2))
            .sum();
        let clear = placed.iter().all(|s| {
            let d: f64 = (0..3).map(|k| (s.center[k] - center[k]).powi(2)).sum::<f64>().sqrt();
            d > s.radius + radius + 1.5
        });
        if ell <= 1.0 && clear {
            let label = placed.len() as u16 + 1;
            placed.push(Sphere {
                center,
                radius,
                label,
                intensity: 0.0,
            });
        }
        if attempts > 200_000 {
            return Err(Error::InvalidArgument(format!(
                "could not place {spheres} spheres in {shape}"
            )));
        }
    }
    // distinct, well separated intensities in a shuffled order
    let mut levels: Vec<f64> = (0..spheres)
        .map(|k| 0.45 + 0.55 * (k as f64 + 1.0) / spheres as f64)
        .collect();
    for i in (1..levels.len()).rev() {
        levels.swap(i, rng.gen_range(0..=i));
    }
    for (s, l) in placed.iter_mut().zip(levels) {
        s.intensity = l;
    }

    let noise: Vec<f64> = (0..shape.voxels()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let smooth = box_sum(&box_sum(&noise, shape, 1), shape, 1);
    let (lo, hi) = smooth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let soft = |d: f64, w: f64| 1.0 / (1.0 + (d / w).exp());

    let mut image = Vec::with_capacity(shape.voxels());
    let mut labels = Vec::with_capacity(shape.voxels());
    for i in 0..shape.voxels() {
        let p = shape.coords(i).map(|c| c as f64);
        let r_ell: f64 = (0..3).map(|k| ((p[k] - mid[k]) / semi[k]).powi(2)).sum::<f64>().sqrt();
        // signed distance proxy to the brain boundary, in voxels
        let brain = soft((r_ell - 1.0) * semi.iter().copied().fold(f64::INFINITY, f64::min), 0.8);
        let texture = (smooth[i] - lo) / (hi - lo).max(1e-12);
        let mut value = brain * (0.25 + 0.15 * texture);
        let mut label = 0u16;
        for s in &placed {
            let d: f64 = (0..3).map(|k| (p[k] - s.center[k]).powi(2)).sum::<f64>().sqrt();
            value += (s.intensity - 0.25) * soft(d - s.radius, 0.6);
            if d <= s.radius {
                label = s.label;
            }
        }
        image.push(value);
        labels.push(label);
    }
    Ok(Phantom {
        image: Volume3::new(shape, 1, image)?,
        labels: LabelVolume3::new(shape, labels)?,
        spheres: placed,
    })
}

/// Source is the phantom itself; the target is the phantom pulled through
/// `flow_gt`. Returns `(S, T, S_labels, T_labels)`.
pub fn make_pair(
    phantom: &Phantom,
    flow_gt: &FlowField3,
) -> Result<(Volume3, Volume3, LabelVolume3, LabelVolume3)> {
    let target = trilinear_warp(&phantom.image, flow_gt)?;
    let target_labels = nearest_warp(&phantom.labels, flow_gt)?;
    Ok((phantom.image.clone(), target, phantom.labels.clone(), target_labels))
}

/// Centroid of one label, or `None` if absent.
pub fn label_centroid(labels: &LabelVolume3, label: u16) -> Option<[f64; 3]> {
    let shape = labels.shape();
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for (i, &l) in labels.data().iter().enumerate() {
        if l == label {
            let p = shape.coords(i);
            for k in 0..3 {
                acc[k] += p[k] as f64;
            }
            n += 1;
        }
    }
    (n > 0).then(|| acc.map(|a| a / n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub subjects: usize,
    pub shape: Shape3,
    pub spheres: usize,
    pub bumps: usize,
    pub max_displacement: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            subjects: 10,
            shape: Shape3::cube(32),
            spheres: DEFAULT_SPHERES,
            bumps: 3,
            max_displacement: 3.0,
            seed: 0,
        }
    }
}

/// One synthetic subject: the shared phantom pulled through its own flow.
#[derive(Clone, Debug)]
pub struct Subject {
    pub image: Volume3,
    pub labels: LabelVolume3,
    pub flow: FlowField3,
}

/// Subjects that share one phantom and differ by smooth random deformations.
pub fn make_subjects(cfg: &DatasetConfig) -> Result<Vec<Subject>> {
    let phantom = make_phantom_with(cfg.shape, cfg.spheres, cfg.seed)?;
    (0..cfg.subjects)
        .map(|k| {
            let sub_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64 + 1);
            let bumps = random_bumps(cfg.shape, cfg.bumps, cfg.max_displacement, sub_seed)?;
            let flow = gaussian_flow(cfg.shape, &bumps)?;
            let (_, image, _, labels) = make_pair(&phantom, &flow)?;
            Ok(Subject { image, labels, flow })
        })
        .collect()
}

pub fn subject_paths(dir: &Path, k: usize) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join("subjects").join(format!("{k:02}_image.ivr")),
        dir.join("subjects").join(format!("{k:02}_labels.ivr")),
        dir.join("truth").join(format!("{k:02}_flow.ivr")),
    )
}

/// Writes `subjects/NN_image.ivr`, `subjects/NN_labels.ivr` and
/// `truth/NN_flow.ivr` for every subject.
pub fn write_dataset(dir: impl AsRef<Path>, cfg: &DatasetConfig) -> Result<Vec<Subject>> {
    let dir = dir.as_ref();
    for sub in ["subjects", "truth"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let subjects = make_subjects(cfg)?;
    for (k, s) in subjects.iter().enumerate() {
        let (img, lab, flow) = subject_paths(dir, k);
        s.image.save(img)?;
        s.labels.save(lab)?;
        s.flow.save(flow)?;
    }
    Ok(subjects)
}

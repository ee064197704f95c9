//! Squared local normalized cross-correlation, the L1 round-trip penalty and
//! their sum, each with an exact adjoint.
//!
//! The similarity term for a pair is
//! `-cc(S o flow_st, T) - cc(T o flow_ts, S)` and the round-trip term is
//! `|(T o flow_ts) o flow_st - T|_1 + |(S o flow_st) o flow_ts - S|_1`,
//! normalized per voxel by default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{box_count, box_sum, Shape3};
use crate::volume::{FlowField3, Volume3};
use crate::warp::{warp_raw, warp_raw_grad_flow, warp_raw_grad_img};

pub const DEFAULT_WINDOW: usize = 9;
pub const CC_EPS: f64 = 1e-5;

/// Normalization of the L1 round-trip penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleNorm {
    /// Divide each L1 norm by the voxel count.
    #[default]
    Mean,
    /// Raw sum over voxels.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub window: usize,
    pub eps: f64,
    pub cycle_weight: f64,
    pub cycle_norm: CycleNorm,
    /// When false only the forward similarity term is active (single-decoder
    /// ablation): the backward similarity and round-trip terms are reported
    /// as zero and produce no gradient.
    pub bidirectional: bool,
    /// Extension, off by default: weight of a mean squared finite-difference
    /// penalty on both flows.
    pub smoothness_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            window: DEFAULT_WINDOW,
            eps: CC_EPS,
            cycle_weight: 1.0,
            cycle_norm: CycleNorm::Mean,
            bidirectional: true,
            smoothness_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "window must be odd and positive, got {}",
                self.window
            )));
        }
        if !(self.cycle_weight >= 0.0 && self.cycle_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cycle weight must be >= 0, got {}",
                self.cycle_weight
            )));
        }
        // eps = 0 is allowed but divides by zero on constant windows
        if !(self.eps >= 0.0 && self.eps.is_finite()) || !(self.smoothness_weight >= 0.0) {
            return Err(Error::InvalidArgument("eps and smoothness weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-pair loss breakdown.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub similarity_forward: f64,
    pub similarity_backward: f64,
    pub cycle: f64,
    pub cycle_weight: f64,
    /// Always zero unless the smoothness extension is enabled.
    pub smoothness: f64,
    pub smoothness_weight: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(
        similarity_forward: f64,
        similarity_backward: f64,
        cycle: f64,
        cycle_weight: f64,
    ) -> Self {
        Self::with_smoothness(similarity_forward, similarity_backward, cycle, cycle_weight, 0.0, 0.0)
    }

    fn with_smoothness(
        similarity_forward: f64,
        similarity_backward: f64,
        cycle: f64,
        cycle_weight: f64,
        smoothness: f64,
        smoothness_weight: f64,
    ) -> Self {
        let mut total = similarity_forward + similarity_backward + cycle_weight * cycle;
        if smoothness_weight != 0.0 {
            total += smoothness_weight * smoothness;
        }
        LossReport {
            similarity_forward,
            similarity_backward,
            cycle,
            cycle_weight,
            smoothness,
            smoothness_weight,
            total,
        }
    }

    pub fn similarity(&self) -> f64 {
        self.similarity_forward + self.similarity_backward
    }
}

fn check_window(window: usize) -> Result<usize> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and positive, got {window}"
        )));
    }
    Ok(window / 2)
}

struct WindowStats {
    n: Vec<f64>,
    sa: Vec<f64>,
    sb: Vec<f64>,
    cross: Vec<f64>,
    va: Vec<f64>,
    vb: Vec<f64>,
}

fn window_stats(a: &[f64], b: &[f64], shape: Shape3, radius: usize) -> WindowStats {
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let n = box_count(shape, radius);
    let sa = box_sum(a, shape, radius);
    let sb = box_sum(b, shape, radius);
    let saa = box_sum(&sq(a, a), shape, radius);
    let sbb = box_sum(&sq(b, b), shape, radius);
    let sab = box_sum(&sq(a, b), shape, radius);
    let len = a.len();
    let mut cross = Vec::with_capacity(len);
    let mut va = Vec::with_capacity(len);
    let mut vb = Vec::with_capacity(len);
    for i in 0..len {
        cross.push(sab[i] - sa[i] * sb[i] / n[i]);
        va.push(saa[i] - sa[i] * sa[i] / n[i]);
        vb.push(sbb[i] - sb[i] * sb[i] / n[i]);
    }
    WindowStats {
        n,
        sa,
        sb,
        cross,
        va,
        vb,
    }
}

/// Mean over voxels of the squared windowed NCC of two single-channel buffers.
pub fn local_cc_raw(a: &[f64], b: &[f64], shape: Shape3, window: usize, eps: f64) -> f64 {
    let st = window_stats(a, b, shape, window / 2);
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += st.cross[i] * st.cross[i] / ((st.va[i] + eps) * (st.vb[i] + eps));
    }
    acc / a.len() as f64
}

/// Adjoint of [`local_cc_raw`] scaled by `upstream`; returns `(grad_a, grad_b)`.
pub fn local_cc_raw_grad(
    a: &[f64],
    b: &[f64],
    shape: Shape3,
    window: usize,
    eps: f64,
    upstream: f64,
) -> (Vec<f64>, Vec<f64>) {
    let radius = window / 2;
    let len = a.len();
    if upstream == 0.0 {
        return (vec![0.0; len], vec![0.0; len]);
    }
    let st = window_stats(a, b, shape, radius);
    let scale = upstream / len as f64;
    let mut g_sa = vec![0.0; len];
    let mut g_sb = vec![0.0; len];
    let mut g_saa = vec![0.0; len];
    let mut g_sbb = vec![0.0; len];
    let mut g_sab = vec![0.0; len];
    for i in 0..len {
        let da = st.va[i] + eps;
        let db = st.vb[i] + eps;
        let c = st.cross[i];
        let d_cross = scale * 2.0 * c / (da * db);
        let d_va = -scale * c * c / (da * da * db);
        let d_vb = -scale * c * c / (da * db * db);
        let n = st.n[i];
        g_sab[i] = d_cross;
        g_saa[i] = d_va;
        g_sbb[i] = d_vb;
        g_sa[i] = -d_cross * st.sb[i] / n - 2.0 * d_va * st.sa[i] / n;
        g_sb[i] = -d_cross * st.sa[i] / n - 2.0 * d_vb * st.sb[i] / n;
    }
    // the truncated box sum is symmetric, so it scatters window adjoints back
    let b_sa = box_sum(&g_sa, shape, radius);
    let b_sb = box_sum(&g_sb, shape, radius);
    let b_saa = box_sum(&g_saa, shape, radius);
    let b_sbb = box_sum(&g_sbb, shape, radius);
    let b_sab = box_sum(&g_sab, shape, radius);
    let mut ga = Vec::with_capacity(len);
    let mut gb = Vec::with_capacity(len);
    for i in 0..len {
        ga.push(b_sa[i] + 2.0 * a[i] * b_saa[i] + b[i] * b_sab[i]);
        gb.push(b_sb[i] + 2.0 * b[i] * b_sbb[i] + a[i] * b_sab[i]);
    }
    (ga, gb)
}

fn single_channel_pair(a: &Volume3, b: &Volume3) -> Result<()> {
    if a.shape() != b.shape() || a.channels() != 1 || b.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "local cc needs two single-channel volumes of equal shape, got {}x{} and {}x{}",
            a.shape(),
            a.channels(),
            b.shape(),
            b.channels()
        )));
    }
    Ok(())
}

/// Squared local NCC in `[0, 1]`, windows truncated at the grid boundary.
pub fn local_cc(a: &Volume3, b: &Volume3, window: usize) -> Result<f64> {
    single_channel_pair(a, b)?;
    check_window(window)?;
    Ok(local_cc_raw(a.data(), b.data(), a.shape(), window, CC_EPS))
}

pub fn local_cc_grad(
    a: &Volume3,
    b: &Volume3,
    window: usize,
    upstream: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    single_channel_pair(a, b)?;
    check_window(window)?;
    Ok(local_cc_raw_grad(a.data(), b.data(), a.shape(), window, CC_EPS, upstream))
}

/// Source, target and both flows of one pair, as validated raw buffers.
#[derive(Clone, Copy)]
pub struct PairView<'a> {
    pub shape: Shape3,
    pub source: &'a [f64],
    pub target: &'a [f64],
    pub flow_st: &'a [f64],
    pub flow_ts: &'a [f64],
}

impl<'a> PairView<'a> {
    pub fn new(
        source: &'a Volume3,
        target: &'a Volume3,
        flow_st: &'a FlowField3,
        flow_ts: &'a FlowField3,
    ) -> Result<Self> {
        single_channel_pair(source, target)?;
        let shape = source.shape();
        if flow_st.shape() != shape || flow_ts.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "flows {} / {} vs images {shape}",
                flow_st.shape(),
                flow_ts.shape()
            )));
        }
        Ok(PairView {
            shape,
            source: source.data(),
            target: target.data(),
            flow_st: flow_st.data(),
            flow_ts: flow_ts.data(),
        })
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn smoothness_raw(flow: &[f64], shape: Shape3) -> (f64, Vec<f64>) {
    // mean over voxels and axes of squared forward differences, per component
    let v = shape.voxels();
    let mut value = 0.0;
    let mut grad = vec![0.0; flow.len()];
    let norm = (3 * v) as f64;
    for c in 0..3 {
        let f = &flow[c * v..(c + 1) * v];
        let g = &mut grad[c * v..(c + 1) * v];
        for i in 0..v {
            let [x, y, z] = shape.coords(i);
            let nbrs = [
                (x + 1 < shape.x()).then(|| shape.index(x + 1, y, z)),
                (y + 1 < shape.y()).then(|| shape.index(x, y + 1, z)),
                (z + 1 < shape.z()).then(|| shape.index(x, y, z + 1)),
            ];
            for j in nbrs.into_iter().flatten() {
                let d = f[j] - f[i];
                value += d * d / norm;
                g[j] += 2.0 * d / norm;
                g[i] -= 2.0 * d / norm;
            }
        }
    }
    (value, grad)
}

/// Evaluates the full objective and, when `want_grad`, its gradient with
/// respect to both flows.
pub fn evaluate(
    pair: PairView<'_>,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossReport, Option<(Vec<f64>, Vec<f64>)>)> {
    cfg.validate()?;
    let PairView {
        shape,
        source,
        target,
        flow_st,
        flow_ts,
    } = pair;
    let v = shape.voxels();
    let (w, eps) = (cfg.window, cfg.eps);
    let norm = match cfg.cycle_norm {
        CycleNorm::Mean => 1.0 / v as f64,
        CycleNorm::Sum => 1.0,
    };

    let warped_s = warp_raw(source, 1, shape, flow_st);
    let sim_fwd = -local_cc_raw(&warped_s, target, shape, w, eps);
    let mut g_st = vec![0.0; 3 * v];
    let mut g_ts = vec![0.0; 3 * v];
    if want_grad {
        let (ga, _) = local_cc_raw_grad(&warped_s, target, shape, w, eps, -1.0);
        g_st = warp_raw_grad_flow(source, 1, shape, flow_st, &ga);
    }

    let (mut sim_bwd, mut cycle) = (0.0, 0.0);
    if cfg.bidirectional {
        let warped_t = warp_raw(target, 1, shape, flow_ts);
        sim_bwd = -local_cc_raw(&warped_t, source, shape, w, eps);
        // (T o ts) o st and (S o st) o ts
        let round_t = warp_raw(&warped_t, 1, shape, flow_st);
        let round_s = warp_raw(&warped_s, 1, shape, flow_ts);
        cycle = norm * (l1(&round_t, target) + l1(&round_s, source));

        if want_grad {
            let (gb, _) = local_cc_raw_grad(&warped_t, source, shape, w, eps, -1.0);
            add_into(&mut g_ts, &warp_raw_grad_flow(target, 1, shape, flow_ts, &gb));

            let cw = cfg.cycle_weight;
            if cw != 0.0 {
                let up_t: Vec<f64> = round_t
                    .iter()
                    .zip(target)
                    .map(|(r, t)| cw * norm * sign(r - t))
                    .collect();
                add_into(&mut g_st, &warp_raw_grad_flow(&warped_t, 1, shape, flow_st, &up_t));
                let inner_t = warp_raw_grad_img(1, shape, flow_st, &up_t);
                add_into(&mut g_ts, &warp_raw_grad_flow(target, 1, shape, flow_ts, &inner_t));

                let up_s: Vec<f64> = round_s
                    .iter()
                    .zip(source)
                    .map(|(r, s)| cw * norm * sign(r - s))
                    .collect();
                add_into(&mut g_ts, &warp_raw_grad_flow(&warped_s, 1, shape, flow_ts, &up_s));
                let inner_s = warp_raw_grad_img(1, shape, flow_ts, &up_s);
                add_into(&mut g_st, &warp_raw_grad_flow(source, 1, shape, flow_st, &inner_s));
            }
        }
    }

    let mut smooth = 0.0;
    if cfg.smoothness_weight > 0.0 {
        let (s1, gs1) = smoothness_raw(flow_st, shape);
        smooth += s1;
        if want_grad {
            add_scaled(&mut g_st, &gs1, cfg.smoothness_weight);
        }
        if cfg.bidirectional {
            let (s2, gs2) = smoothness_raw(flow_ts, shape);
            smooth += s2;
            if want_grad {
                add_scaled(&mut g_ts, &gs2, cfg.smoothness_weight);
            }
        }
    }

    let report = LossReport::with_smoothness(
        sim_fwd,
        sim_bwd,
        cycle,
        cfg.cycle_weight,
        smooth,
        cfg.smoothness_weight,
    );
    Ok((report, want_grad.then_some((g_st, g_ts))))
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn add_scaled(acc: &mut [f64], x: &[f64], s: f64) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += s * b;
    }
}

/// `-cc(S o flow_st, T) - cc(T o flow_ts, S)`, in `[-2, 0]`.
pub fn similarity_loss(
    source: &Volume3,
    target: &Volume3,
    flow_st: &FlowField3,
    flow_ts: &FlowField3,
    window: usize,
) -> Result<f64> {
    let cfg = LossConfig {
        window,
        cycle_weight: 0.0,
        ..LossConfig::default()
    };
    let (r, _) = evaluate(PairView::new(source, target, flow_st, flow_ts)?, &cfg, false)?;
    Ok(r.similarity())
}

/// Per-voxel mean L1 round-trip residual of both images.
pub fn cycle_loss(
    source: &Volume3,
    target: &Volume3,
    flow_st: &FlowField3,
    flow_ts: &FlowField3,
) -> Result<f64> {
    cycle_loss_with(source, target, flow_st, flow_ts, CycleNorm::Mean)
}

pub fn cycle_loss_with(
    source: &Volume3,
    target: &Volume3,
    flow_st: &FlowField3,
    flow_ts: &FlowField3,
    norm: CycleNorm,
) -> Result<f64> {
    let pair = PairView::new(source, target, flow_st, flow_ts)?;
    let v = pair.shape.voxels();
    let scale = match norm {
        CycleNorm::Mean => 1.0 / v as f64,
        CycleNorm::Sum => 1.0,
    };
    let round_t = warp_raw(&warp_raw(pair.target, 1, pair.shape, pair.flow_ts), 1, pair.shape, pair.flow_st);
    let round_s = warp_raw(&warp_raw(pair.source, 1, pair.shape, pair.flow_st), 1, pair.shape, pair.flow_ts);
    Ok(scale * (l1(&round_t, pair.target) + l1(&round_s, pair.source)))
}

pub fn total_loss(
    source: &Volume3,
    target: &Volume3,
    flow_st: &FlowField3,
    flow_ts: &FlowField3,
    cfg: &LossConfig,
) -> Result<LossReport> {
    Ok(evaluate(PairView::new(source, target, flow_st, flow_ts)?, cfg, false)?.0)
}

/// Gradient of the total loss with respect to `(flow_st, flow_ts)`; the L1
/// subgradient at zero is zero.
pub fn total_loss_grad(
    source: &Volume3,
    target: &Volume3,
    flow_st: &FlowField3,
    flow_ts: &FlowField3,
    cfg: &LossConfig,
) -> Result<(LossReport, Vec<f64>, Vec<f64>)> {
    let (r, g) = evaluate(PairView::new(source, target, flow_st, flow_ts)?, cfg, true)?;
    let (gs, gt) = g.expect("gradient requested");
    Ok((r, gs, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-window evaluation with explicit loops.
    fn brute_cc(a: &[f64], b: &[f64], shape: Shape3, window: usize, eps: f64) -> f64 {
        let r = window / 2;
        let mut total = 0.0;
        for i in 0..a.len() {
            let [x, y, z] = shape.coords(i);
            let mut idx = Vec::new();
            for zz in z.saturating_sub(r)..=(z + r).min(shape.z() - 1) {
                for yy in y.saturating_sub(r)..=(y + r).min(shape.y() - 1) {
                    for xx in x.saturating_sub(r)..=(x + r).min(shape.x() - 1) {
                        idx.push(shape.index(xx, yy, zz));
                    }
                }
            }
            let n = idx.len() as f64;
            let ma = idx.iter().map(|&j| a[j]).sum::<f64>() / n;
            let mb = idx.iter().map(|&j| b[j]).sum::<f64>() / n;
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for &j in &idx {
                ab += (a[j] - ma) * (b[j] - mb);
                aa += (a[j] - ma) * (a[j] - ma);
                bb += (b[j] - mb) * (b[j] - mb);
            }
            total += ab * ab / ((aa + eps) * (bb + eps));
        }
        total / a.len() as f64
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn cc_matches_brute_force() {
        let shape = Shape3::cube(5);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_vec(&mut rng, 125, 0.0, 1.0);
            let b = rand_vec(&mut rng, 125, 0.0, 1.0);
            for w in [1, 3, 5, 9] {
                let fast = local_cc_raw(&a, &b, shape, w, CC_EPS);
                let slow = brute_cc(&a, &b, shape, w, CC_EPS);
                assert!((fast - slow).abs() < 1e-6, "w={w}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn self_and_negated_correlation() {
        let shape = Shape3::cube(6);
        let v = Volume3::from_fn(shape, |x, y, z| ((x * 7 + y * 3 + z * 5) % 11) as f64 / 10.0);
        let neg = Volume3::new(shape, 1, v.data().iter().map(|x| -x).collect()).unwrap();
        let cc = local_cc(&v, &v, 3).unwrap();
        assert!(cc > 1.0 - 1e-3 && cc <= 1.0, "{cc}");
        assert!((local_cc(&v, &neg, 3).unwrap() - cc).abs() < 1e-12);
        assert!(local_cc(&v, &v, 4).is_err());
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut p = x.to_vec();
                p[k] += h;
                let mut m = x.to_vec();
                m[k] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    #[test]
    fn cc_gradient_matches_finite_differences() {
        let shape = Shape3::cube(5);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = rand_vec(&mut rng, 125, 0.0, 1.0);
            let b = rand_vec(&mut rng, 125, 0.0, 1.0);
            let (ga, gb) = local_cc_raw_grad(&a, &b, shape, 3, CC_EPS, 1.0);
            let fa = fd_grad(|x| local_cc_raw(x, &b, shape, 3, CC_EPS), &a, 1e-4);
            let fb = fd_grad(|x| local_cc_raw(&a, x, shape, 3, CC_EPS), &b, 1e-4);
            assert!(max_rel(&ga, &fa, 1e-6) < 1e-5);
            assert!(max_rel(&gb, &fb, 1e-6) < 1e-5);
        }
    }

    #[test]
    fn cc_gradient_flat_and_zero_upstream() {
        let shape = Shape3::cube(7);
        // constant everywhere except one corner voxel, window 3: voxels farther
        // than 2 from that corner only see constant windows
        let mut a = vec![0.5; shape.voxels()];
        let mut b = vec![0.25; shape.voxels()];
        a[0] = 1.0;
        b[0] = 0.0;
        let (ga, gb) = local_cc_raw_grad(&a, &b, shape, 3, CC_EPS, 1.0);
        let far = shape.index(5, 5, 5);
        assert_eq!(ga[far], 0.0);
        assert_eq!(gb[far], 0.0);
        let (za, zb) = local_cc_raw_grad(&a, &b, shape, 3, CC_EPS, 0.0);
        assert!(za.iter().chain(&zb).all(|&g| g == 0.0));
    }

    fn random_pair(seed: u64, shape: Shape3, amp: f64) -> (Volume3, Volume3, FlowField3, FlowField3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = shape.voxels();
        let s = Volume3::new(shape, 1, rand_vec(&mut rng, v, 0.0, 1.0)).unwrap();
        let t = Volume3::new(shape, 1, rand_vec(&mut rng, v, 0.0, 1.0)).unwrap();
        let f1 = FlowField3::new(shape, rand_vec(&mut rng, 3 * v, -amp, amp)).unwrap();
        let f2 = FlowField3::new(shape, rand_vec(&mut rng, 3 * v, -amp, amp)).unwrap();
        (s, t, f1, f2)
    }

    #[test]
    fn similarity_identities() {
        let shape = Shape3::cube(6);
        let s = Volume3::from_fn(shape, |x, y, z| ((x * 7 + y * 3 + z * 5) % 11) as f64 / 10.0);
        let z = FlowField3::zeros(shape);
        let l = similarity_loss(&s, &s, &z, &z, 3).unwrap();
        assert!((l + 2.0).abs() < 1e-3);
        let c = Volume3::from_fn(shape, |_, _, _| 0.3);
        let l = similarity_loss(&s, &c, &z, &z, 3).unwrap();
        assert!(l.abs() < 1e-9, "{l}");
    }

    #[test]
    fn similarity_matches_composed_oracle() {
        let shape = Shape3::new(5, 4, 6);
        let (s, t, f1, f2) = random_pair(3, shape, 2.0);
        let ws = warp_raw(s.data(), 1, shape, f1.data());
        let wt = warp_raw(t.data(), 1, shape, f2.data());
        let expect = -brute_cc(&ws, t.data(), shape, 3, CC_EPS) - brute_cc(&wt, s.data(), shape, 3, CC_EPS);
        let got = similarity_loss(&s, &t, &f1, &f2, 3).unwrap();
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn cycle_examples() {
        let shape = Shape3::cube(8);
        let z = FlowField3::zeros(shape);
        let blob = Volume3::from_fn(shape, |x, y, z| {
            if (3..=4).contains(&x) && (3..=4).contains(&y) && (3..=4).contains(&z) {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(cycle_loss(&blob, &blob, &z, &z).unwrap(), 0.0);
        let plus = FlowField3::constant(shape, [1.0, 0.0, 0.0]);
        let minus = FlowField3::constant(shape, [-1.0, 0.0, 0.0]);
        assert!(cycle_loss(&blob, &blob, &plus, &minus).unwrap() < 1e-12);
    }

    #[test]
    fn cycle_matches_direct_oracle() {
        let shape = Shape3::new(4, 5, 3);
        let (s, t, f1, f2) = random_pair(11, shape, 1.5);
        // warp via the hat-function definition, then Eq-level L1 with the mean
        let twice = |img: &Volume3, a: &FlowField3, b: &FlowField3| {
            crate::warp::sequential_warp(img, a, b).unwrap()
        };
        let rt = twice(&t, &f2, &f1);
        let rs = twice(&s, &f1, &f2);
        let v = shape.voxels() as f64;
        let expect = l1(rt.data(), t.data()) / v + l1(rs.data(), s.data()) / v;
        assert!((cycle_loss(&s, &t, &f1, &f2).unwrap() - expect).abs() < 1e-12);
        let sum = cycle_loss_with(&s, &t, &f1, &f2, CycleNorm::Sum).unwrap();
        assert!((sum - expect * v).abs() < 1e-9);
    }

    #[test]
    fn report_additivity() {
        let r = LossReport::new(-1.0, -0.5, 0.2, 1.0);
        assert!((r.total - -1.3).abs() < 1e-15);
        let r = LossReport::new(-1.0, -0.5, 0.2, 0.0);
        assert_eq!(r.total, -1.5);
    }

    #[test]
    fn total_grad_matches_finite_differences() {
        let shape = Shape3::cube(5);
        for seed in 0..10 {
            let (s, t, f1, f2) = random_pair(40 + seed, shape, 1.2);
            for cfg in [
                LossConfig { window: 3, ..LossConfig::default() },
                LossConfig { window: 3, cycle_weight: 0.7, smoothness_weight: 0.3, ..LossConfig::default() },
            ] {
                let (_, g1, g2) = total_loss_grad(&s, &t, &f1, &f2, &cfg).unwrap();
                let obj1 = |x: &[f64]| {
                    let f = FlowField3::new(shape, x.to_vec()).unwrap();
                    total_loss(&s, &t, &f, &f2, &cfg).unwrap().total
                };
                let obj2 = |x: &[f64]| {
                    let f = FlowField3::new(shape, x.to_vec()).unwrap();
                    total_loss(&s, &t, &f1, &f, &cfg).unwrap().total
                };
                let e1 = max_rel(&g1, &fd_grad(obj1, f1.data(), 1e-5), 1e-4);
                let e2 = max_rel(&g2, &fd_grad(obj2, f2.data(), 1e-5), 1e-4);
                assert!(e1 < 1e-5 && e2 < 1e-5, "seed {seed}: {e1} {e2}");
            }
        }
    }

    #[test]
    fn cycle_gradient_vanishes_at_identity() {
        let shape = Shape3::cube(6);
        let s = Volume3::from_fn(shape, |x, y, z| ((x * 7 + y * 3 + z * 5) % 11) as f64 / 10.0);
        let z = FlowField3::zeros(shape);
        let with = LossConfig { window: 3, ..LossConfig::default() };
        let without = LossConfig { cycle_weight: 0.0, ..with.clone() };
        let (_, a1, a2) = total_loss_grad(&s, &s, &z, &z, &with).unwrap();
        let (_, b1, b2) = total_loss_grad(&s, &s, &z, &z, &without).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
    }

    #[test]
    fn swap_symmetry() {
        let shape = Shape3::new(5, 4, 6);
        for seed in 0..5 {
            let (s, t, f1, f2) = random_pair(seed, shape, 2.0);
            let a = similarity_loss(&s, &t, &f1, &f2, 3).unwrap();
            let b = similarity_loss(&t, &s, &f2, &f1, 3).unwrap();
            assert!((a - b).abs() <= 1e-6 * a.abs());
            assert!((-2.0..=0.0).contains(&a));
            let c1 = cycle_loss(&s, &t, &f1, &f2).unwrap();
            let c2 = cycle_loss(&t, &s, &f2, &f1).unwrap();
            assert!((c1 - c2).abs() <= 1e-12 && c1 >= 0.0);
        }
    }
}

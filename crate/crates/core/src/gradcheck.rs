//! Finite-difference audit of every analytic gradient in the crate.
//!
//! Each check builds a small random instance, contracts the operator output
//! with a random weight so the objective is scalar, and compares the adjoint
//! against central differences on sampled coordinates.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::Shape3;
use crate::loss::{evaluate, local_cc_raw, local_cc_raw_grad, LossConfig, PairView};
use crate::net::layers::*;
use crate::net::{Network, NetworkConfig};
use crate::volume::Volume3;
use crate::warp::{warp_raw, warp_raw_grad_flow, warp_raw_grad_img};

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-4;
const SAMPLES: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub samples: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} seed {:<3} max rel err {:.3e}  {}",
            self.name,
            self.seed,
            self.max_rel_err,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub results: Vec<CheckResult>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn worst(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    /// Worst error per check name, in first-seen order.
    pub fn by_check(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for r in &self.results {
            match out.iter_mut().find(|(n, _)| *n == r.name) {
                Some((_, e)) => *e = e.max(r.max_rel_err),
                None => out.push((r.name.clone(), r.max_rel_err)),
            }
        }
        out
    }
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(FLOOR)
}

/// Central differences of `f` at `x` on `samples` random coordinates.
fn compare(
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..SAMPLES {
        let k = rng.gen_range(0..x.len());
        let orig = x[k];
        x[k] = orig + STEP;
        let up = f(x);
        x[k] = orig - STEP;
        let down = f(x);
        x[k] = orig;
        worst = worst.max(rel_err((up - down) / (2.0 * STEP), analytic[k]));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs every check for each seed.
pub fn run_audit(seeds: &[u64]) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    for &seed in seeds {
        report.results.extend(audit_seed(seed)?);
    }
    Ok(report)
}

pub fn audit_seed(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| {
        out.push(CheckResult {
            name: name.to_string(),
            seed,
            samples: SAMPLES,
            max_rel_err: err,
        })
    };

    // trilinear warp, two channels so channel offsets are exercised
    {
        let shape = Shape3::new(7, 6, 5);
        let ch = 2;
        let mut img = uniform(&mut rng, ch * shape.voxels(), 0.0, 1.0);
        let mut flow = uniform(&mut rng, 3 * shape.voxels(), -2.5, 2.5);
        let u = uniform(&mut rng, ch * shape.voxels(), -1.0, 1.0);
        let g_flow = warp_raw_grad_flow(&img, ch, shape, &flow, &u);
        let g_img = warp_raw_grad_img(ch, shape, &flow, &u);
        let fixed_img = img.clone();
        let e = compare(&mut rng, &mut flow, &g_flow, |fl| dot(&u, &warp_raw(&fixed_img, ch, shape, fl)));
        push("warp/flow", e);
        let fixed_flow = flow.clone();
        let e = compare(&mut rng, &mut img, &g_img, |im| dot(&u, &warp_raw(im, ch, shape, &fixed_flow)));
        push("warp/image", e);
    }

    // squared local NCC
    {
        let shape = Shape3::new(8, 7, 6);
        let mut a = uniform(&mut rng, shape.voxels(), 0.0, 1.0);
        let mut b = uniform(&mut rng, shape.voxels(), 0.0, 1.0);
        for window in [3, 5] {
            let (ga, gb) = local_cc_raw_grad(&a, &b, shape, window, crate::loss::CC_EPS, 1.0);
            let bb = b.clone();
            let e1 = compare(&mut rng, &mut a, &ga, |x| local_cc_raw(x, &bb, shape, window, crate::loss::CC_EPS));
            let aa = a.clone();
            let e2 = compare(&mut rng, &mut b, &gb, |x| local_cc_raw(&aa, x, shape, window, crate::loss::CC_EPS));
            push(&format!("local_cc/w{window}"), e1.max(e2));
        }
    }

    // cycle term alone (gradient difference between weight 1 and weight 0)
    // and the full objective
    {
        let shape = Shape3::cube(8);
        let s = uniform(&mut rng, shape.voxels(), 0.0, 1.0);
        let t = uniform(&mut rng, shape.voxels(), 0.0, 1.0);
        let n = 3 * shape.voxels();
        let mut flows = uniform(&mut rng, 2 * n, -1.5, 1.5);
        let with = LossConfig { window: 5, ..LossConfig::default() };
        let without = LossConfig { cycle_weight: 0.0, ..with.clone() };
        let grad = |cfg: &LossConfig, fl: &[f64]| -> Result<Vec<f64>> {
            let pair = PairView { shape, source: &s, target: &t, flow_st: &fl[..n], flow_ts: &fl[n..] };
            let (_, g) = evaluate(pair, cfg, true)?;
            let (a, b) = g.expect("gradient requested");
            Ok([a, b].concat())
        };
        let value = |fl: &[f64]| {
            let pair = PairView { shape, source: &s, target: &t, flow_st: &fl[..n], flow_ts: &fl[n..] };
            evaluate(pair, &with, false).expect("valid config").0
        };
        let full = grad(&with, &flows)?;
        let sim_only = grad(&without, &flows)?;
        let cycle: Vec<f64> = full.iter().zip(&sim_only).map(|(a, b)| a - b).collect();
        let e = compare(&mut rng, &mut flows, &cycle, |fl| value(fl).cycle);
        push("cycle_loss", e);
        let e = compare(&mut rng, &mut flows, &full, |fl| value(fl).total);
        push("total_loss", e);
    }

    // convolutions, both strides, parameters and inputs
    for stride in [1, 2] {
        let shape = Shape3::new(6, 5, 4);
        let (cin, cout) = (2, 3);
        let mut input = uniform(&mut rng, cin * shape.voxels(), -1.0, 1.0);
        let mut params = uniform(&mut rng, cout * (cin * 27 + 1), -0.5, 0.5);
        let out_shape = conv_out_shape(shape, stride);
        let u = Tensor::from_data(cout, out_shape, uniform(&mut rng, cout * out_shape.voxels(), -1.0, 1.0));
        let x = Tensor::from_data(cin, shape, input.clone());
        let mut gp = vec![0.0; params.len()];
        let gx = conv3_backward(&x, &params, cout, stride, &u, &mut gp, true).expect("input gradient");
        let p0 = params.clone();
        let e1 = compare(&mut rng, &mut input, &gx.data, |v| {
            dot(&u.data, &conv3_forward(&Tensor::from_data(cin, shape, v.to_vec()), &p0, cout, stride).data)
        });
        let e2 = compare(&mut rng, &mut params, &gp, |p| dot(&u.data, &conv3_forward(&x, p, cout, stride).data));
        push(&format!("conv3/stride{stride}"), e1.max(e2));
    }

    // leaky relu, away from the kink
    {
        let shape = Shape3::new(5, 4, 3);
        let mut v: Vec<f64> = uniform(&mut rng, 2 * shape.voxels(), -1.0, 1.0)
            .into_iter()
            .map(|x| if x.abs() < 0.05 { x + 0.1f64.copysign(x) } else { x })
            .collect();
        let u = Tensor::from_data(2, shape, uniform(&mut rng, 2 * shape.voxels(), -1.0, 1.0));
        let g = leaky_relu_backward(&Tensor::from_data(2, shape, v.clone()), &u);
        let e = compare(&mut rng, &mut v, &g.data, |x| {
            dot(&u.data, &leaky_relu_forward(&Tensor::from_data(2, shape, x.to_vec())).data)
        });
        push("leaky_relu", e);
    }

    for (mode, name) in [(UpsampleMode::Nearest, "upsample/nearest"), (UpsampleMode::Trilinear, "upsample/trilinear")] {
        let shape = Shape3::new(4, 3, 3);
        let big = shape.doubled();
        let mut v = uniform(&mut rng, 2 * shape.voxels(), -1.0, 1.0);
        let u = Tensor::from_data(2, big, uniform(&mut rng, 2 * big.voxels(), -1.0, 1.0));
        let g = upsample_backward(&u, shape, mode);
        let e = compare(&mut rng, &mut v, &g.data, |x| {
            dot(&u.data, &upsample_forward(&Tensor::from_data(2, shape, x.to_vec()), mode).data)
        });
        push(name, e);
    }

    // skip combinations and concatenation; their adjoints are the identity,
    // a sign flip and a channel split
    {
        let shape = Shape3::new(4, 4, 3);
        let n = 2 * shape.voxels();
        let mut both = uniform(&mut rng, 2 * n, -1.0, 1.0);
        let u = Tensor::from_data(2, shape, uniform(&mut rng, n, -1.0, 1.0));
        for (subtract, name) in [(false, "skip/add"), (true, "skip/sub")] {
            let sign = if subtract { -1.0 } else { 1.0 };
            let analytic: Vec<f64> = u.data.iter().copied().chain(u.data.iter().map(|g| sign * g)).collect();
            let e = compare(&mut rng, &mut both, &analytic, |x| {
                let enc = Tensor::from_data(2, shape, x[..n].to_vec());
                let dec = Tensor::from_data(2, shape, x[n..].to_vec());
                dot(&u.data, &combine_forward(&enc, &dec, subtract).data)
            });
            push(name, e);
        }
        let uc = Tensor::from_data(4, shape, uniform(&mut rng, 2 * n, -1.0, 1.0));
        let (ga, gb) = concat_backward(&uc, 2);
        let analytic = [ga.data, gb.data].concat();
        let e = compare(&mut rng, &mut both, &analytic, |x| {
            let a = Tensor::from_data(2, shape, x[..n].to_vec());
            let b = Tensor::from_data(2, shape, x[n..].to_vec());
            dot(&uc.data, &concat_forward(&a, &b).data)
        });
        push("concat", e);
    }

    for mode in [UpsampleMode::Nearest, UpsampleMode::Trilinear] {
        let e = pipeline(&mut rng, seed, mode)?;
        push(
            match mode {
                UpsampleMode::Nearest => "network/nearest",
                UpsampleMode::Trilinear => "network/trilinear",
            },
            e,
        );
    }
    Ok(out)
}

/// Parameters of a small randomized network through both flows, the warp and
/// the full loss.
fn pipeline(rng: &mut ChaCha8Rng, seed: u64, mode: UpsampleMode) -> Result<f64> {
    let shape = Shape3::cube(8);
    let mut cfg = NetworkConfig::new(2, 3, shape);
    cfg.upsample = mode;
    let mut net = Network::build(cfg, seed)?;
    // the default init zeroes the flow heads; randomize so every path carries signal
    for p in net.params_mut() {
        *p = rng.gen_range(-0.25..0.25);
    }
    let s = Volume3::new(shape, 1, uniform(rng, shape.voxels(), 0.0, 1.0))?;
    let t = Volume3::new(shape, 1, uniform(rng, shape.voxels(), 0.0, 1.0))?;
    let lc = LossConfig { window: 3, ..LossConfig::default() };

    let (f, b, tape) = net.forward(&s, &t)?;
    let (_, g) = evaluate(PairView::new(&s, &t, &f, &b)?, &lc, true)?;
    let (gf, gb) = g.expect("gradient requested");
    net.zero_grads();
    net.backward(&tape, &gf, Some(&gb))?;
    let analytic = net.grads().to_vec();

    let mut params = net.params().to_vec();
    let mut probe = net.clone();
    let err = compare(rng, &mut params, &analytic, |p| {
        probe.params_mut().copy_from_slice(p);
        let (f, b, _) = probe.forward(&s, &t).expect("same shapes");
        let pair = PairView::new(&s, &t, &f, &b).expect("same shapes");
        evaluate(pair, &lc, false).expect("valid config").0.total
    });
    Ok(err)
}

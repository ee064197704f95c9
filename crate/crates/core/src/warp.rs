//! Spatial transformer: trilinear and nearest-neighbour resampling under a
//! pull-style displacement field, plus the exact adjoint of the trilinear
//! warp. Sample coordinates are clamped to `[0, n - 1]` on every axis.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Shape3;
use crate::volume::{FlowField3, LabelVolume3, Volume3};

/// Interpolation support along one axis.
#[derive(Clone, Copy, Debug)]
struct Axis {
    i0: usize,
    i1: usize,
    t: f64,
    /// false when the raw coordinate was clamped, so it carries no gradient
    active: bool,
}

#[inline]
fn axis(coord: f64, n: usize) -> Axis {
    if n == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            t: 0.0,
            active: false,
        };
    }
    let hi = (n - 1) as f64;
    let active = (0.0..=hi).contains(&coord);
    let c = coord.clamp(0.0, hi);
    let i0 = (c.floor() as usize).min(n - 2);
    Axis {
        i0,
        i1: i0 + 1,
        t: c - i0 as f64,
        active,
    }
}

#[inline]
fn taps(shape: Shape3, flow: &[f64], i: usize) -> [Axis; 3] {
    let v = shape.voxels();
    let [x, y, z] = shape.coords(i);
    [
        axis(x as f64 + flow[i], shape.x()),
        axis(y as f64 + flow[v + i], shape.y()),
        axis(z as f64 + flow[2 * v + i], shape.z()),
    ]
}

#[inline]
fn corner_index(shape: Shape3, a: &[Axis; 3], c: usize) -> usize {
    let x = if c & 1 == 0 { a[0].i0 } else { a[0].i1 };
    let y = if c & 2 == 0 { a[1].i0 } else { a[1].i1 };
    let z = if c & 4 == 0 { a[2].i0 } else { a[2].i1 };
    shape.index(x, y, z)
}

#[inline]
fn corner_weights(a: &[Axis; 3]) -> [f64; 8] {
    let wx = [1.0 - a[0].t, a[0].t];
    let wy = [1.0 - a[1].t, a[1].t];
    let wz = [1.0 - a[2].t, a[2].t];
    std::array::from_fn(|c| wx[c & 1] * wy[(c >> 1) & 1] * wz[(c >> 2) & 1])
}

fn check_shapes(img_len: usize, channels: usize, shape: Shape3, flow: &[f64]) -> Result<()> {
    if img_len != shape.voxels() * channels || flow.len() != shape.voxels() * 3 {
        return Err(Error::ShapeMismatch(format!(
            "image of {img_len} values ({channels} channels) and flow of {} values on grid {shape}",
            flow.len()
        )));
    }
    Ok(())
}

/// Trilinear pull warp of a `channels`-channel buffer.
pub fn warp_raw(img: &[f64], channels: usize, shape: Shape3, flow: &[f64]) -> Vec<f64> {
    let v = shape.voxels();
    let mut out = vec![0.0; v * channels];
    let plane = shape.x() * shape.y();
    for c in 0..channels {
        let src = &img[c * v..(c + 1) * v];
        out[c * v..(c + 1) * v]
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(z, row)| {
                for (j, o) in row.iter_mut().enumerate() {
                    let i = z * plane + j;
                    let a = taps(shape, flow, i);
                    let w = corner_weights(&a);
                    let mut acc = 0.0;
                    for (k, wk) in w.iter().enumerate() {
                        acc += wk * src[corner_index(shape, &a, k)];
                    }
                    *o = acc;
                }
            });
    }
    out
}

/// Adjoint of [`warp_raw`]: returns `(grad_img, grad_flow)` for an upstream
/// gradient on the warped output.
pub fn warp_raw_grad(
    img: &[f64],
    channels: usize,
    shape: Shape3,
    flow: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let grad_img = warp_raw_grad_img(channels, shape, flow, upstream);
    (grad_img, warp_raw_grad_flow(img, channels, shape, flow, upstream))
}

/// Image half of [`warp_raw_grad`]; does not depend on the image values.
pub fn warp_raw_grad_img(channels: usize, shape: Shape3, flow: &[f64], upstream: &[f64]) -> Vec<f64> {
    let v = shape.voxels();
    let mut grad_img = vec![0.0; v * channels];
    // scatter: serial so the accumulation order is fixed
    for c in 0..channels {
        let up = &upstream[c * v..(c + 1) * v];
        let g = &mut grad_img[c * v..(c + 1) * v];
        for i in 0..v {
            if up[i] == 0.0 {
                continue;
            }
            let a = taps(shape, flow, i);
            let w = corner_weights(&a);
            for (k, wk) in w.iter().enumerate() {
                g[corner_index(shape, &a, k)] += wk * up[i];
            }
        }
    }
    grad_img
}

/// Flow half of [`warp_raw_grad`].
pub fn warp_raw_grad_flow(
    img: &[f64],
    channels: usize,
    shape: Shape3,
    flow: &[f64],
    upstream: &[f64],
) -> Vec<f64> {
    let v = shape.voxels();
    let mut grad_flow = vec![0.0; 3 * v];
    let per_voxel: Vec<[f64; 3]> = (0..v)
        .into_par_iter()
        .map(|i| {
            let a = taps(shape, flow, i);
            let wx = [1.0 - a[0].t, a[0].t];
            let wy = [1.0 - a[1].t, a[1].t];
            let wz = [1.0 - a[2].t, a[2].t];
            let mut d = [0.0; 3];
            for c in 0..channels {
                let u = upstream[c * v + i];
                if u == 0.0 {
                    continue;
                }
                let src = &img[c * v..(c + 1) * v];
                let val = |k: usize| src[corner_index(shape, &a, k)];
                let mut dx = 0.0;
                let mut dy = 0.0;
                let mut dz = 0.0;
                for k in 0..8 {
                    let (bx, by, bz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
                    let sx = if bx == 1 { 1.0 } else { -1.0 };
                    let sy = if by == 1 { 1.0 } else { -1.0 };
                    let sz = if bz == 1 { 1.0 } else { -1.0 };
                    let f = val(k);
                    dx += sx * wy[by] * wz[bz] * f;
                    dy += sy * wx[bx] * wz[bz] * f;
                    dz += sz * wx[bx] * wy[by] * f;
                }
                d[0] += u * dx;
                d[1] += u * dy;
                d[2] += u * dz;
            }
            for (k, ax) in a.iter().enumerate() {
                if !ax.active {
                    d[k] = 0.0;
                }
            }
            d
        })
        .collect();
    for (i, d) in per_voxel.into_iter().enumerate() {
        grad_flow[i] = d[0];
        grad_flow[v + i] = d[1];
        grad_flow[2 * v + i] = d[2];
    }
    grad_flow
}

fn check_pair(img_shape: Shape3, flow: &FlowField3) -> Result<()> {
    if img_shape != flow.shape() {
        return Err(Error::ShapeMismatch(format!(
            "image {img_shape} vs flow {}",
            flow.shape()
        )));
    }
    Ok(())
}

/// `out(p) = img(p + flow(p))` with trilinear interpolation.
pub fn trilinear_warp(img: &Volume3, flow: &FlowField3) -> Result<Volume3> {
    check_pair(img.shape(), flow)?;
    check_shapes(img.data().len(), img.channels(), img.shape(), flow.data())?;
    let data = warp_raw(img.data(), img.channels(), img.shape(), flow.data());
    Volume3::from_header(img.header().clone(), data)
}

/// Gradients of `<upstream, trilinear_warp(img, flow)>` with respect to the
/// image values and the flow components.
pub fn trilinear_warp_grad(
    img: &Volume3,
    flow: &FlowField3,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(img.shape(), flow)?;
    if upstream.len() != img.data().len() {
        return Err(Error::ShapeMismatch(format!(
            "upstream has {} values, image has {}",
            upstream.len(),
            img.data().len()
        )));
    }
    Ok(warp_raw_grad(
        img.data(),
        img.channels(),
        img.shape(),
        flow.data(),
        upstream,
    ))
}

/// Nearest-neighbour pull warp for label maps; ties round up.
pub fn nearest_warp(labels: &LabelVolume3, flow: &FlowField3) -> Result<LabelVolume3> {
    let shape = labels.shape();
    check_pair(shape, flow)?;
    let v = shape.voxels();
    let f = flow.data();
    let src = labels.data();
    let pick = |coord: f64, n: usize| -> usize {
        let r = (coord + 0.5).floor();
        r.clamp(0.0, (n - 1) as f64) as usize
    };
    let data: Vec<u16> = (0..v)
        .into_par_iter()
        .map(|i| {
            let [x, y, z] = shape.coords(i);
            let sx = pick(x as f64 + f[i], shape.x());
            let sy = pick(y as f64 + f[v + i], shape.y());
            let sz = pick(z as f64 + f[2 * v + i], shape.z());
            src[shape.index(sx, sy, sz)]
        })
        .collect();
    LabelVolume3::from_header(labels.header().clone(), data)
}

/// Resample twice: first under `first`, then the result under `second`.
pub fn sequential_warp(img: &Volume3, first: &FlowField3, second: &FlowField3) -> Result<Volume3> {
    trilinear_warp(&trilinear_warp(img, first)?, second)
}

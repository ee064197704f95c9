//! Feature tensors and the per-layer kernels with their adjoints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Shape3;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Multi-channel feature map, channel-major with `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub shape: Shape3,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, shape: Shape3) -> Self {
        Tensor {
            channels,
            shape,
            data: vec![0.0; channels * shape.voxels()],
        }
    }

    pub fn from_data(channels: usize, shape: Shape3, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * shape.voxels(), "tensor length");
        Tensor {
            channels,
            shape,
            data,
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let v = self.shape.voxels();
        &self.data[c * v..(c + 1) * v]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Trilinear,
}

pub fn conv_out_shape(input: Shape3, stride: usize) -> Shape3 {
    if stride == 1 {
        input
    } else {
        input.halved(1)
    }
}

/// Valid output index range along one axis for kernel tap `k` (0..3):
/// input index `stride * o + k - 1` must lie in `[0, n_in)`.
#[inline]
fn tap_range(n_in: usize, n_out: usize, stride: usize, k: usize) -> (usize, usize) {
    // o >= ceil((1 - k) / stride) and stride * o + k - 1 <= n_in - 1
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    let max_num = n_in as isize - k as isize; // stride*o <= n_in - k
    if max_num < 0 {
        return (0, 0);
    }
    let hi = ((max_num as usize) / stride + 1).min(n_out);
    (lo.min(hi), hi)
}

/// 3x3x3 convolution with zero padding 1. `weights` holds
/// `[out][in][kz][ky][kx]` followed by `out` biases.
pub fn conv3_forward(input: &Tensor, params: &[f64], out_channels: usize, stride: usize) -> Tensor {
    let cin = input.channels;
    let si = input.shape;
    let so = conv_out_shape(si, stride);
    let vo = so.voxels();
    let (w, b) = params.split_at(out_channels * cin * 27);
    let mut out = vec![0.0; out_channels * vo];
    out.par_chunks_mut(vo).enumerate().for_each(|(o, plane)| {
        plane.fill(b[o]);
        for ci in 0..cin {
            let src = input.channel(ci);
            for kz in 0..3 {
                let (z0, z1) = tap_range(si.z(), so.z(), stride, kz);
                for ky in 0..3 {
                    let (y0, y1) = tap_range(si.y(), so.y(), stride, ky);
                    for kx in 0..3 {
                        let (x0, x1) = tap_range(si.x(), so.x(), stride, kx);
                        let wv = w[((o * cin + ci) * 3 + kz) * 9 + ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for z in z0..z1 {
                            let zi = stride * z + kz - 1;
                            for y in y0..y1 {
                                let yi = stride * y + ky - 1;
                                let orow = so.index(0, y, z);
                                let irow = si.index(0, yi, zi);
                                if stride == 1 {
                                    let dst = &mut plane[orow + x0..orow + x1];
                                    let s = &src[irow + x0 + kx - 1..irow + x1 + kx - 1];
                                    for (d, v) in dst.iter_mut().zip(s) {
                                        *d += wv * v;
                                    }
                                } else {
                                    for x in x0..x1 {
                                        plane[orow + x] += wv * src[irow + stride * x + kx - 1];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_data(out_channels, so, out)
}

/// Adjoint of [`conv3_forward`]. Returns the input gradient and writes the
/// parameter gradient (same layout as the parameters) into `grad_params`.
pub fn conv3_backward(
    input: &Tensor,
    params: &[f64],
    out_channels: usize,
    stride: usize,
    grad_out: &Tensor,
    grad_params: &mut [f64],
    want_input_grad: bool,
) -> Option<Tensor> {
    let cin = input.channels;
    let si = input.shape;
    let so = grad_out.shape;
    let vi = si.voxels();
    let nw = out_channels * cin * 27;
    let (w, _) = params.split_at(nw);
    let (gw, gb) = grad_params.split_at_mut(nw);

    gw.par_chunks_mut(cin * 27)
        .zip(gb.par_iter_mut())
        .enumerate()
        .for_each(|(o, (gwo, gbo))| {
            let g = grad_out.channel(o);
            *gbo += g.iter().sum::<f64>();
            for ci in 0..cin {
                let src = input.channel(ci);
                for kz in 0..3 {
                    let (z0, z1) = tap_range(si.z(), so.z(), stride, kz);
                    for ky in 0..3 {
                        let (y0, y1) = tap_range(si.y(), so.y(), stride, ky);
                        for kx in 0..3 {
                            let (x0, x1) = tap_range(si.x(), so.x(), stride, kx);
                            let mut acc = 0.0;
                            for z in z0..z1 {
                                let zi = stride * z + kz - 1;
                                for y in y0..y1 {
                                    let yi = stride * y + ky - 1;
                                    let orow = so.index(0, y, z);
                                    let irow = si.index(0, yi, zi);
                                    for x in x0..x1 {
                                        acc += g[orow + x] * src[irow + stride * x + kx - 1];
                                    }
                                }
                            }
                            gwo[(ci * 3 + kz) * 9 + ky * 3 + kx] += acc;
                        }
                    }
                }
            }
        });

    if !want_input_grad {
        return None;
    }
    let mut gin = vec![0.0; cin * vi];
    gin.par_chunks_mut(vi).enumerate().for_each(|(ci, plane)| {
        for o in 0..out_channels {
            let g = grad_out.channel(o);
            for kz in 0..3 {
                let (z0, z1) = tap_range(si.z(), so.z(), stride, kz);
                for ky in 0..3 {
                    let (y0, y1) = tap_range(si.y(), so.y(), stride, ky);
                    for kx in 0..3 {
                        let (x0, x1) = tap_range(si.x(), so.x(), stride, kx);
                        let wv = w[((o * cin + ci) * 3 + kz) * 9 + ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for z in z0..z1 {
                            let zi = stride * z + kz - 1;
                            for y in y0..y1 {
                                let yi = stride * y + ky - 1;
                                let orow = so.index(0, y, z);
                                let irow = si.index(0, yi, zi);
                                for x in x0..x1 {
                                    plane[irow + stride * x + kx - 1] += wv * g[orow + x];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Some(Tensor::from_data(cin, si, gin))
}

pub fn leaky_relu_forward(input: &Tensor) -> Tensor {
    let data = input
        .data
        .iter()
        .map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
        .collect();
    Tensor::from_data(input.channels, input.shape, data)
}

pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { LEAKY_SLOPE * g })
        .collect();
    Tensor::from_data(input.channels, input.shape, data)
}

/// Linear x2 upsampling along one axis with half-voxel alignment and edge
/// clamping: `out[2m] = .25 in[m-1] + .75 in[m]`, `out[2m+1] = .75 in[m] + .25 in[m+1]`.
fn linear_up_axis(data: &[f64], channels: usize, shape: Shape3, axis: usize, adjoint: bool) -> Vec<f64> {
    // forward: shape is the input shape; adjoint: shape is the input shape of
    // the forward map and `data` lives on the doubled grid
    let mut out_shape = shape;
    out_shape.0[axis] *= 2;
    let (src_shape, dst_shape) = if adjoint { (out_shape, shape) } else { (shape, out_shape) };
    let n = shape.0[axis];
    let mut out = vec![0.0; channels * dst_shape.voxels()];
    let (sv, dv) = (src_shape.voxels(), dst_shape.voxels());
    for c in 0..channels {
        let src = &data[c * sv..(c + 1) * sv];
        let dst = &mut out[c * dv..(c + 1) * dv];
        for i in 0..out_shape.voxels() {
            let mut p = out_shape.coords(i);
            let j = p[axis];
            let m = j / 2;
            let (near, far) = if j % 2 == 0 {
                (m, m.saturating_sub(1))
            } else {
                (m, (m + 1).min(n - 1))
            };
            p[axis] = near;
            let near_i = shape.index(p[0], p[1], p[2]);
            p[axis] = far;
            let far_i = shape.index(p[0], p[1], p[2]);
            if adjoint {
                dst[near_i] += 0.75 * src[i];
                dst[far_i] += 0.25 * src[i];
            } else {
                dst[i] = 0.75 * src[near_i] + 0.25 * src[far_i];
            }
        }
    }
    out
}

pub fn upsample_forward(input: &Tensor, mode: UpsampleMode) -> Tensor {
    let si = input.shape;
    let so = si.doubled();
    match mode {
        UpsampleMode::Nearest => {
            let vo = so.voxels();
            let mut out = vec![0.0; input.channels * vo];
            out.par_chunks_mut(vo).enumerate().for_each(|(c, plane)| {
                let src = input.channel(c);
                for z in 0..so.z() {
                    for y in 0..so.y() {
                        let irow = si.index(0, y / 2, z / 2);
                        let orow = so.index(0, y, z);
                        for x in 0..so.x() {
                            plane[orow + x] = src[irow + x / 2];
                        }
                    }
                }
            });
            Tensor::from_data(input.channels, so, out)
        }
        UpsampleMode::Trilinear => {
            let mut data = input.data.clone();
            let mut shape = si;
            for axis in 0..3 {
                data = linear_up_axis(&data, input.channels, shape, axis, false);
                shape.0[axis] *= 2;
            }
            Tensor::from_data(input.channels, so, data)
        }
    }
}

/// Adjoint of [`upsample_forward`]; `input_shape` is the pre-upsampling extent.
pub fn upsample_backward(grad_out: &Tensor, input_shape: Shape3, mode: UpsampleMode) -> Tensor {
    let so = grad_out.shape;
    let si = input_shape;
    match mode {
        UpsampleMode::Nearest => {
            let vi = si.voxels();
            let mut out = vec![0.0; grad_out.channels * vi];
            out.par_chunks_mut(vi).enumerate().for_each(|(c, plane)| {
                let g = grad_out.channel(c);
                for z in 0..so.z() {
                    for y in 0..so.y() {
                        let irow = si.index(0, y / 2, z / 2);
                        let orow = so.index(0, y, z);
                        for x in 0..so.x() {
                            plane[irow + x / 2] += g[orow + x];
                        }
                    }
                }
            });
            Tensor::from_data(grad_out.channels, si, out)
        }
        UpsampleMode::Trilinear => {
            let mut data = grad_out.data.clone();
            // undo axes in reverse order; `shape` is the forward input shape of each step
            let mut shapes = Vec::new();
            let mut shape = si;
            for axis in 0..3 {
                shapes.push(shape);
                shape.0[axis] *= 2;
            }
            for axis in (0..3).rev() {
                data = linear_up_axis(&data, grad_out.channels, shapes[axis], axis, true);
            }
            Tensor::from_data(grad_out.channels, si, data)
        }
    }
}

/// `encoder + decoder` (`subtract = false`) or `encoder - decoder`.
pub fn combine_forward(encoder: &Tensor, decoder: &Tensor, subtract: bool) -> Tensor {
    debug_assert_eq!(encoder.data.len(), decoder.data.len());
    let data = encoder
        .data
        .iter()
        .zip(&decoder.data)
        .map(|(e, d)| if subtract { e - d } else { e + d })
        .collect();
    Tensor::from_data(decoder.channels, decoder.shape, data)
}

/// Channel concatenation `[first, second]`.
pub fn concat_forward(first: &Tensor, second: &Tensor) -> Tensor {
    debug_assert_eq!(first.shape, second.shape);
    let mut data = Vec::with_capacity(first.data.len() + second.data.len());
    data.extend_from_slice(&first.data);
    data.extend_from_slice(&second.data);
    Tensor::from_data(first.channels + second.channels, first.shape, data)
}

pub fn concat_backward(grad_out: &Tensor, first_channels: usize) -> (Tensor, Tensor) {
    let split = first_channels * grad_out.shape.voxels();
    let (a, b) = grad_out.data.split_at(split);
    (
        Tensor::from_data(first_channels, grad_out.shape, a.to_vec()),
        Tensor::from_data(grad_out.channels - first_channels, grad_out.shape, b.to_vec()),
    )
}

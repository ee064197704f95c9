//! Shape arithmetic and separable box filters shared by the kernels.

use serde::{Deserialize, Serialize};

/// Spatial extent `(X, Y, Z)` of a voxel grid. Linear index is
/// `x + X * (y + Y * (z + Z * c))` with `x` fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape3(pub [usize; 3]);

impl Shape3 {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Shape3([x, y, z])
    }

    pub fn cube(n: usize) -> Self {
        Shape3([n, n, n])
    }

    #[inline]
    pub fn voxels(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2]
    }

    #[inline]
    pub fn x(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn y(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn z(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.0[0];
        let r = i / self.0[0];
        [x, r % self.0[1], r / self.0[1]]
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&d| d >= 1)
    }

    /// Extent after `k` stride-2 convolutions with padding 1: `ceil(n / 2)` per step.
    pub fn halved(&self, k: u32) -> Shape3 {
        let mut s = self.0;
        for _ in 0..k {
            for d in s.iter_mut() {
                *d = d.div_ceil(2);
            }
        }
        Shape3(s)
    }

    pub fn doubled(&self) -> Shape3 {
        Shape3([self.0[0] * 2, self.0[1] * 2, self.0[2] * 2])
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

/// Sum over the cube of half-width `radius` around each voxel, truncated at
/// the grid boundary. The operator is symmetric, so it is its own adjoint.
pub fn box_sum(data: &[f64], shape: Shape3, radius: usize) -> Vec<f64> {
    debug_assert_eq!(data.len(), shape.voxels());
    let mut out = data.to_vec();
    let mut line = Vec::new();
    let mut prefix = Vec::new();
    for axis in 0..3 {
        let n = shape.0[axis];
        if n == 1 || radius == 0 {
            continue;
        }
        let stride = match axis {
            0 => 1,
            1 => shape.x(),
            _ => shape.x() * shape.y(),
        };
        let others = shape.voxels() / n;
        for o in 0..others {
            // base offset of the line with axis coordinate 0
            let base = match axis {
                0 => o * n,
                1 => (o % shape.x()) + (o / shape.x()) * shape.x() * n,
                _ => o,
            };
            line.clear();
            line.extend((0..n).map(|i| out[base + i * stride]));
            prefix.clear();
            prefix.push(0.0);
            let mut acc = 0.0;
            for &v in &line {
                acc += v;
                prefix.push(acc);
            }
            for i in 0..n {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(n - 1);
                out[base + i * stride] = prefix[hi + 1] - prefix[lo];
            }
        }
    }
    out
}

/// Number of in-grid voxels covered by each truncated window.
pub fn box_count(shape: Shape3, radius: usize) -> Vec<f64> {
    let per_axis: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            let n = shape.0[a];
            (0..n)
                .map(|i| {
                    let lo = i.saturating_sub(radius);
                    let hi = (i + radius).min(n - 1);
                    (hi - lo + 1) as f64
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(shape.voxels());
    for z in 0..shape.z() {
        for y in 0..shape.y() {
            for x in 0..shape.x() {
                out.push(per_axis[0][x] * per_axis[1][y] * per_axis[2][z]);
            }
        }
    }
    out
}

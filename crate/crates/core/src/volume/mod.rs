//! Dense volume containers, the IVR on-disk format and NIfTI-1 import.

mod ivr;
mod nifti;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Shape3;

pub use ivr::{load_ivr, save_ivr, RawData, IVR_MAGIC};
pub use nifti::{import_nifti, import_nifti_image, import_nifti_labels};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Image,
    Labels,
    Flow,
}

/// Header shared by every IVR file. Field order is the on-disk JSON key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub shape: Shape3,
    pub channels: usize,
    pub dtype: Dtype,
    pub voxel_size_mm: [f64; 3],
    pub intent: Intent,
}

impl VolumeHeader {
    pub fn image(shape: Shape3, channels: usize) -> Self {
        VolumeHeader {
            shape,
            channels,
            dtype: Dtype::F32,
            voxel_size_mm: [1.0; 3],
            intent: Intent::Image,
        }
    }

    pub fn labels(shape: Shape3) -> Self {
        VolumeHeader {
            shape,
            channels: 1,
            dtype: Dtype::U16,
            voxel_size_mm: [1.0; 3],
            intent: Intent::Labels,
        }
    }

    pub fn flow(shape: Shape3) -> Self {
        VolumeHeader {
            shape,
            channels: 3,
            dtype: Dtype::F32,
            voxel_size_mm: [1.0; 3],
            intent: Intent::Flow,
        }
    }

    pub fn with_voxel_size(mut self, voxel_size_mm: [f64; 3]) -> Self {
        self.voxel_size_mm = voxel_size_mm;
        self
    }

    /// Number of scalar elements in the payload.
    pub fn len(&self) -> usize {
        self.shape.voxels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.shape.is_valid() {
            return Err(Error::MalformedHeader(format!("shape {} has a zero extent", self.shape)));
        }
        if self.channels == 0 {
            return Err(Error::MalformedHeader("channels must be >= 1".into()));
        }
        if self.voxel_size_mm.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::MalformedHeader(format!(
                "voxel sizes must be positive, got {:?}",
                self.voxel_size_mm
            )));
        }
        match self.intent {
            Intent::Labels if self.dtype != Dtype::U16 || self.channels != 1 => Err(
                Error::MalformedHeader("labels must be single-channel u16".into()),
            ),
            Intent::Flow if self.dtype != Dtype::F32 || self.channels != 3 => Err(
                Error::MalformedHeader("flow must be three-channel f32".into()),
            ),
            Intent::Image if self.dtype != Dtype::F32 => {
                Err(Error::MalformedHeader("images must be f32".into()))
            }
            _ => Ok(()),
        }
    }
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Intensity image. Values are held as `f64` and rounded to `f32` on save.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3 {
    header: VolumeHeader,
    data: Vec<f64>,
}

impl Volume3 {
    pub fn new(shape: Shape3, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_header(VolumeHeader::image(shape, channels), data)
    }

    pub fn from_header(header: VolumeHeader, data: Vec<f64>) -> Result<Self> {
        header.validate()?;
        if header.intent != Intent::Image {
            return Err(Error::MalformedHeader(format!(
                "expected image intent, got {:?}",
                header.intent
            )));
        }
        if data.len() != header.len() {
            return Err(Error::LengthMismatch {
                expected: header.len(),
                found: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Volume3 { header, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Volume3 {
            header: VolumeHeader::image(shape, 1),
            data: vec![0.0; shape.voxels()],
        }
    }

    /// Single-channel volume filled from `f(x, y, z)`.
    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.voxels());
        for z in 0..shape.z() {
            for y in 0..shape.y() {
                for x in 0..shape.x() {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3::new(shape, 1, data).expect("from_fn produced a non-finite value")
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn shape(&self) -> Shape3 {
        self.header.shape
    }

    pub fn channels(&self) -> usize {
        self.header.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.header.shape.index(x, y, z)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let v = self.header.shape.voxels();
        &self.data[c * v..(c + 1) * v]
    }

    pub fn with_voxel_size(mut self, voxel_size_mm: [f64; 3]) -> Self {
        self.header.voxel_size_mm = voxel_size_mm;
        self
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_raw(&self) -> RawData {
        RawData::F32(self.data.iter().map(|&v| v as f32).collect())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_ivr(path, &self.header, &self.to_raw())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (header, raw) = load_ivr(path)?;
        match raw {
            RawData::F32(v) => Volume3::from_header(header, v.into_iter().map(f64::from).collect()),
            RawData::U16(_) => Err(Error::MalformedHeader("expected an f32 image".into())),
        }
    }
}

/// Integer region labels; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume3 {
    header: VolumeHeader,
    data: Vec<u16>,
}

impl LabelVolume3 {
    pub fn new(shape: Shape3, data: Vec<u16>) -> Result<Self> {
        Self::from_header(VolumeHeader::labels(shape), data)
    }

    pub fn from_header(header: VolumeHeader, data: Vec<u16>) -> Result<Self> {
        header.validate()?;
        if header.intent != Intent::Labels {
            return Err(Error::MalformedHeader(format!(
                "expected labels intent, got {:?}",
                header.intent
            )));
        }
        if data.len() != header.len() {
            return Err(Error::LengthMismatch {
                expected: header.len(),
                found: data.len(),
            });
        }
        Ok(LabelVolume3 { header, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        LabelVolume3 {
            header: VolumeHeader::labels(shape),
            data: vec![0; shape.voxels()],
        }
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn shape(&self) -> Shape3 {
        self.header.shape
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.data[self.header.shape.index(x, y, z)]
    }

    pub fn with_voxel_size(mut self, voxel_size_mm: [f64; 3]) -> Self {
        self.header.voxel_size_mm = voxel_size_mm;
        self
    }

    /// Sorted distinct nonzero labels.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        seen.extend(self.data.iter().copied().filter(|&l| l != 0));
        seen.into_iter().collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_ivr(path, &self.header, &RawData::U16(self.data.clone()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (header, raw) = load_ivr(path)?;
        match raw {
            RawData::U16(v) => LabelVolume3::from_header(header, v),
            RawData::F32(_) => Err(Error::MalformedHeader("expected a u16 label volume".into())),
        }
    }
}

/// Pull-style displacement field in voxel units: `out(p) = in(p + flow(p))`.
/// Channel order is `(dx, dy, dz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField3 {
    header: VolumeHeader,
    data: Vec<f64>,
}

impl FlowField3 {
    pub fn new(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        Self::from_header(VolumeHeader::flow(shape), data)
    }

    pub fn from_header(header: VolumeHeader, data: Vec<f64>) -> Result<Self> {
        header.validate()?;
        if header.intent != Intent::Flow {
            return Err(Error::MalformedHeader(format!(
                "expected flow intent, got {:?}",
                header.intent
            )));
        }
        if data.len() != header.len() {
            return Err(Error::LengthMismatch {
                expected: header.len(),
                found: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(FlowField3 { header, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        FlowField3 {
            header: VolumeHeader::flow(shape),
            data: vec![0.0; shape.voxels() * 3],
        }
    }

    /// The same displacement at every voxel.
    pub fn constant(shape: Shape3, d: [f64; 3]) -> Self {
        let v = shape.voxels();
        let mut data = Vec::with_capacity(3 * v);
        for c in d {
            data.extend(std::iter::repeat(c).take(v));
        }
        FlowField3 {
            header: VolumeHeader::flow(shape),
            data,
        }
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn shape(&self) -> Shape3 {
        self.header.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let v = self.header.shape.voxels();
        &self.data[c * v..(c + 1) * v]
    }

    pub fn at(&self, i: usize) -> [f64; 3] {
        let v = self.header.shape.voxels();
        [self.data[i], self.data[v + i], self.data[2 * v + i]]
    }

    /// Largest displacement magnitude over the grid.
    pub fn max_norm(&self) -> f64 {
        (0..self.header.shape.voxels())
            .map(|i| {
                let d = self.at(i);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_ivr(
            path,
            &self.header,
            &RawData::F32(self.data.iter().map(|&v| v as f32).collect()),
        )
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (header, raw) = load_ivr(path)?;
        match raw {
            RawData::F32(v) => FlowField3::from_header(header, v.into_iter().map(f64::from).collect()),
            RawData::U16(_) => Err(Error::MalformedHeader("expected an f32 flow".into())),
        }
    }
}

/// Center crop and/or zero pad each axis to `target`. When the difference is
/// odd the extra voxel goes on the high side.
fn pad_crop_plane<T: Copy + Default>(
    data: &[T],
    shape: Shape3,
    channels: usize,
    target: Shape3,
) -> Vec<T> {
    // offset maps a target coordinate to a source coordinate: src = dst + off
    let off: Vec<isize> = (0..3)
        .map(|a| {
            let (n, m) = (shape.0[a] as isize, target.0[a] as isize);
            if m <= n {
                (n - m) / 2
            } else {
                -((m - n) / 2)
            }
        })
        .collect();
    let mut out = vec![T::default(); target.voxels() * channels];
    let sv = shape.voxels();
    let tv = target.voxels();
    for c in 0..channels {
        for z in 0..target.z() {
            let sz = z as isize + off[2];
            if sz < 0 || sz >= shape.z() as isize {
                continue;
            }
            for y in 0..target.y() {
                let sy = y as isize + off[1];
                if sy < 0 || sy >= shape.y() as isize {
                    continue;
                }
                for x in 0..target.x() {
                    let sx = x as isize + off[0];
                    if sx < 0 || sx >= shape.x() as isize {
                        continue;
                    }
                    out[c * tv + target.index(x, y, z)] =
                        data[c * sv + shape.index(sx as usize, sy as usize, sz as usize)];
                }
            }
        }
    }
    out
}

/// Either kind of volume that [`pad_crop_to_shape`] accepts.
pub trait PadCrop: Sized {
    fn pad_crop_to_shape(&self, target: Shape3) -> Self;
}

impl PadCrop for Volume3 {
    fn pad_crop_to_shape(&self, target: Shape3) -> Self {
        let mut header = self.header.clone();
        header.shape = target;
        Volume3 {
            data: pad_crop_plane(&self.data, self.shape(), self.channels(), target),
            header,
        }
    }
}

impl PadCrop for LabelVolume3 {
    fn pad_crop_to_shape(&self, target: Shape3) -> Self {
        let mut header = self.header.clone();
        header.shape = target;
        LabelVolume3 {
            data: pad_crop_plane(&self.data, self.shape(), 1, target),
            header,
        }
    }
}

pub fn pad_crop_to_shape<V: PadCrop>(v: &V, target: Shape3) -> Result<V> {
    if !target.is_valid() {
        return Err(Error::InvalidArgument(format!("target shape {target} has a zero extent")));
    }
    Ok(v.pad_crop_to_shape(target))
}

/// Linear min-max map onto `[0, 1]`; a constant volume maps to zeros.
pub fn normalize_intensity(v: &Volume3) -> Volume3 {
    let (lo, hi) = v.min_max();
    let range = hi - lo;
    let data = if range > 0.0 {
        v.data.iter().map(|&x| ((x - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; v.data.len()]
    };
    Volume3 {
        header: v.header.clone(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_invariants() {
        let mut h = VolumeHeader::labels(Shape3::cube(2));
        h.channels = 2;
        assert!(h.validate().is_err());
        let mut h = VolumeHeader::flow(Shape3::cube(2));
        h.dtype = Dtype::U16;
        assert!(h.validate().is_err());
        assert!(VolumeHeader::image(Shape3::new(0, 1, 1), 1).validate().is_err());
        assert!(VolumeHeader::image(Shape3::new(192, 224, 192), 2).validate().is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let r = Volume3::new(Shape3::cube(1), 1, vec![f64::NAN]);
        assert!(matches!(r, Err(Error::NonFinite(0))));
    }

    #[test]
    fn pad_crop_identity() {
        let v = Volume3::from_fn(Shape3::cube(4), |x, y, z| (x + 4 * y + 16 * z) as f64);
        assert_eq!(pad_crop_to_shape(&v, Shape3::cube(4)).unwrap(), v);
    }

    #[test]
    fn pad_ones_into_shell() {
        let v = Volume3::from_fn(Shape3::cube(3), |_, _, _| 1.0);
        let p = pad_crop_to_shape(&v, Shape3::cube(5)).unwrap();
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let inner = [x, y, z].iter().all(|&c| (1..=3).contains(&c));
                    assert_eq!(p.get(x, y, z), if inner { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn crop_ramp_to_center() {
        let ramp = |x: usize, y: usize, z: usize| (x + 5 * y + 25 * z) as f64;
        let v = Volume3::from_fn(Shape3::cube(5), ramp);
        let c = pad_crop_to_shape(&v, Shape3::cube(3)).unwrap();
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(c.get(x, y, z), ramp(x + 1, y + 1, z + 1));
                }
            }
        }
    }

    #[test]
    fn odd_padding_goes_high() {
        let v = Volume3::from_fn(Shape3::new(1, 1, 1), |_, _, _| 7.0);
        let p = pad_crop_to_shape(&v, Shape3::new(2, 1, 1)).unwrap();
        assert_eq!(p.data(), &[7.0, 0.0]);
        let l = LabelVolume3::new(Shape3::new(4, 1, 1), vec![1, 2, 3, 4]).unwrap();
        let c = pad_crop_to_shape(&l, Shape3::new(1, 1, 1)).unwrap();
        assert_eq!(c.data(), &[2]);
    }

    #[test]
    fn normalize_examples() {
        let v = Volume3::new(Shape3::new(3, 1, 1), 1, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize_intensity(&v).data(), &[0.0, 0.5, 1.0]);
        let c = Volume3::new(Shape3::new(3, 1, 1), 1, vec![5.0; 3]).unwrap();
        assert_eq!(normalize_intensity(&c).data(), &[0.0; 3]);
    }

    proptest! {
        #[test]
        fn pad_then_crop_restores(
            dims in prop::array::uniform3(1usize..6),
            extra in prop::array::uniform3(0usize..4),
            seed in any::<u64>(),
        ) {
            let shape = Shape3(dims);
            let mut s = seed;
            let v = Volume3::from_fn(shape, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 33) as f64
            });
            let big = Shape3([dims[0] + extra[0], dims[1] + extra[1], dims[2] + extra[2]]);
            let round = pad_crop_to_shape(&pad_crop_to_shape(&v, big).unwrap(), shape).unwrap();
            prop_assert_eq!(round, v);
        }

        #[test]
        fn normalize_is_idempotent(vals in prop::collection::vec(-1e3f64..1e3, 8)) {
            let v = Volume3::new(Shape3::new(2, 2, 2), 1, vals).unwrap();
            let once = normalize_intensity(&v);
            let twice = normalize_intensity(&once);
            let (lo, hi) = once.min_max();
            prop_assert!(lo == 0.0 && (hi == 1.0 || hi == 0.0));
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}

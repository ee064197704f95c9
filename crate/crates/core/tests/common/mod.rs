#![allow(dead_code)]

/// Minimal NIfTI-1 single-file writer for test inputs.
pub struct Nifti {
    pub dims: Vec<i16>,
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 3],
    pub slope: f32,
    pub inter: f32,
    pub big_endian: bool,
}

impl Nifti {
    pub fn new(dims: &[i16], datatype: i16, bitpix: i16) -> Self {
        Nifti {
            dims: dims.to_vec(),
            datatype,
            bitpix,
            pixdim: [1.0; 3],
            slope: 0.0,
            inter: 0.0,
            big_endian: false,
        }
    }

    pub fn bytes(&self, payload: &[u8]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        let be = self.big_endian;
        let put_i32 = |h: &mut Vec<u8>, o: usize, v: i32| {
            let b = if be { v.to_be_bytes() } else { v.to_le_bytes() };
            h[o..o + 4].copy_from_slice(&b);
        };
        let put_i16 = |h: &mut Vec<u8>, o: usize, v: i16| {
            let b = if be { v.to_be_bytes() } else { v.to_le_bytes() };
            h[o..o + 2].copy_from_slice(&b);
        };
        let put_f32 = |h: &mut Vec<u8>, o: usize, v: f32| {
            let b = if be { v.to_be_bytes() } else { v.to_le_bytes() };
            h[o..o + 4].copy_from_slice(&b);
        };
        put_i32(&mut h, 0, 348);
        put_i16(&mut h, 40, self.dims.len() as i16);
        for (i, &d) in self.dims.iter().enumerate() {
            put_i16(&mut h, 42 + 2 * i, d);
        }
        put_i16(&mut h, 70, self.datatype);
        put_i16(&mut h, 72, self.bitpix);
        put_f32(&mut h, 76, 1.0);
        for i in 0..3 {
            put_f32(&mut h, 80 + 4 * i, self.pixdim[i]);
        }
        put_f32(&mut h, 108, 352.0);
        put_f32(&mut h, 112, self.slope);
        put_f32(&mut h, 116, self.inter);
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(payload);
        h
    }
}


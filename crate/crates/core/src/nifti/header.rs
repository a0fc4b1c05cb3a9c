//! Raw NIfTI-1 header (348 bytes) encoding and decoding.

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use nalgebra::{Matrix3, Matrix4};

use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const NIFTI2_HEADER_SIZE: i32 = 540;

pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Header fields needed to decode the data section and rebuild geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub intent_code: i16,
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub descrip: [u8; 80],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
    pub endian: Endian,
}

impl Default for VolumeHeader {
    fn default() -> Self {
        Self {
            sizeof_hdr: HEADER_SIZE as i32,
            dim: [0; 8],
            intent_code: 0,
            datatype: 0,
            bitpix: 0,
            pixdim: [0.0; 8],
            vox_offset: 352.0,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            descrip: [0; 80],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
            magic: MAGIC_SINGLE,
            endian: Endian::Little,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => LittleEndian::read_i16(&self.buf[off..]),
            Endian::Big => BigEndian::read_i16(&self.buf[off..]),
        }
    }
    fn i32(&self, off: usize) -> i32 {
        match self.endian {
            Endian::Little => LittleEndian::read_i32(&self.buf[off..]),
            Endian::Big => BigEndian::read_i32(&self.buf[off..]),
        }
    }
    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => LittleEndian::read_f32(&self.buf[off..]),
            Endian::Big => BigEndian::read_f32(&self.buf[off..]),
        }
    }
}

impl VolumeHeader {
    pub fn parse(buf: &[u8]) -> Result<Self> {
        if buf.len() < 4 {
            return Err(Error::Format(format!("file too small ({} bytes)", buf.len())));
        }
        let le = LittleEndian::read_i32(buf);
        let be = BigEndian::read_i32(buf);
        let endian = if le == HEADER_SIZE as i32 {
            Endian::Little
        } else if be == HEADER_SIZE as i32 {
            Endian::Big
        } else if le == NIFTI2_HEADER_SIZE || be == NIFTI2_HEADER_SIZE {
            return Err(Error::Format("NIfTI-2 files are not supported".into()));
        } else {
            return Err(Error::Format(format!("bad sizeof_hdr {le}")));
        };
        if buf.len() < HEADER_SIZE {
            return Err(Error::Format(format!(
                "header truncated ({} of {HEADER_SIZE} bytes)",
                buf.len()
            )));
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&buf[344..348]);
        if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
            return Err(Error::Format(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&magic[..3])
            )));
        }
        let r = Reader { buf, endian };
        let mut dim = [0i16; 8];
        for (n, d) in dim.iter_mut().enumerate() {
            *d = r.i16(40 + 2 * n);
        }
        let mut pixdim = [0f32; 8];
        for (n, p) in pixdim.iter_mut().enumerate() {
            *p = r.f32(76 + 4 * n);
        }
        let mut srow = [[0f32; 4]; 3];
        for (row, vals) in srow.iter_mut().enumerate() {
            for (c, v) in vals.iter_mut().enumerate() {
                *v = r.f32(280 + 16 * row + 4 * c);
            }
        }
        let mut descrip = [0u8; 80];
        descrip.copy_from_slice(&buf[148..228]);
        Ok(Self {
            sizeof_hdr: r.i32(0),
            dim,
            intent_code: r.i16(68),
            datatype: r.i16(70),
            bitpix: r.i16(72),
            pixdim,
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
            xyzt_units: buf[123],
            descrip,
            qform_code: r.i16(252),
            sform_code: r.i16(254),
            quatern: [r.f32(256), r.f32(260), r.f32(264)],
            qoffset: [r.f32(268), r.f32(272), r.f32(276)],
            srow,
            magic,
            endian,
        })
    }

    /// Little-endian encoding of the header. Fields not modelled here are zero.
    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        LittleEndian::write_i32(&mut b[0..], HEADER_SIZE as i32);
        b[38] = b'r';
        for (n, d) in self.dim.iter().enumerate() {
            LittleEndian::write_i16(&mut b[40 + 2 * n..], *d);
        }
        LittleEndian::write_i16(&mut b[68..], self.intent_code);
        LittleEndian::write_i16(&mut b[70..], self.datatype);
        LittleEndian::write_i16(&mut b[72..], self.bitpix);
        for (n, p) in self.pixdim.iter().enumerate() {
            LittleEndian::write_f32(&mut b[76 + 4 * n..], *p);
        }
        LittleEndian::write_f32(&mut b[108..], self.vox_offset);
        LittleEndian::write_f32(&mut b[112..], self.scl_slope);
        LittleEndian::write_f32(&mut b[116..], self.scl_inter);
        b[123] = self.xyzt_units;
        b[148..228].copy_from_slice(&self.descrip);
        LittleEndian::write_i16(&mut b[252..], self.qform_code);
        LittleEndian::write_i16(&mut b[254..], self.sform_code);
        for n in 0..3 {
            LittleEndian::write_f32(&mut b[256 + 4 * n..], self.quatern[n]);
            LittleEndian::write_f32(&mut b[268 + 4 * n..], self.qoffset[n]);
        }
        for (row, vals) in self.srow.iter().enumerate() {
            for (c, v) in vals.iter().enumerate() {
                LittleEndian::write_f32(&mut b[280 + 16 * row + 4 * c..], *v);
            }
        }
        b[344..348].copy_from_slice(&self.magic);
        b
    }

    pub fn sform_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = self.srow[r][c] as f64;
            }
        }
        m
    }

    /// Affine rebuilt from the quaternion representation.
    pub fn qform_matrix(&self) -> Matrix4<f64> {
        let [b, c, d] = self.quatern.map(|v| v as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        );
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [
            self.pixdim[1].abs() as f64,
            self.pixdim[2].abs() as f64,
            qfac * self.pixdim[3].abs() as f64,
        ];
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for col in 0..3 {
                m[(r, col)] = rot[(r, col)] * scale[col];
            }
            m[(r, 3)] = self.qoffset[r] as f64;
        }
        m
    }

    /// Fills the quaternion fields from an orthonormal direction matrix.
    /// Returns `false` if `dir` is not close enough to orthonormal.
    pub fn set_qform(&mut self, dir: &Matrix3<f64>, offset: [f64; 3]) -> bool {
        let mut r = *dir;
        let qfac = if r.determinant() < 0.0 {
            r.column_mut(2).neg_mut();
            -1.0f32
        } else {
            1.0
        };
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-4 {
            return false;
        }
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let (a, b, c, d);
        if trace > 0.0 {
            let s = 0.5 / (trace + 1.0).sqrt();
            a = 0.25 / s;
            b = (r[(2, 1)] - r[(1, 2)]) * s;
            c = (r[(0, 2)] - r[(2, 0)]) * s;
            d = (r[(1, 0)] - r[(0, 1)]) * s;
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            a = (r[(2, 1)] - r[(1, 2)]) / s;
            b = 0.25 * s;
            c = (r[(0, 1)] + r[(1, 0)]) / s;
            d = (r[(0, 2)] + r[(2, 0)]) / s;
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
            a = (r[(0, 2)] - r[(2, 0)]) / s;
            b = (r[(0, 1)] + r[(1, 0)]) / s;
            c = 0.25 * s;
            d = (r[(1, 2)] + r[(2, 1)]) / s;
        } else {
            let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
            a = (r[(1, 0)] - r[(0, 1)]) / s;
            b = (r[(0, 2)] + r[(2, 0)]) / s;
            c = (r[(1, 2)] + r[(2, 1)]) / s;
            d = 0.25 * s;
        }
        let sign = if a < 0.0 { -1.0 } else { 1.0 };
        self.quatern = [(sign * b) as f32, (sign * c) as f32, (sign * d) as f32];
        self.qoffset = offset.map(|v| v as f32);
        self.pixdim[0] = qfac;
        self.qform_code = 1;
        true
    }
}

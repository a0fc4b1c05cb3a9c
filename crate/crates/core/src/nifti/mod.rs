//! NIfTI-1 reading and writing (`.nii`, `.nii.gz`, and `.hdr`/`.img` pairs on read).

mod header;
mod volume;

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::Matrix4;

pub use header::{Endian, VolumeHeader, HEADER_SIZE, MAGIC_PAIR, MAGIC_SINGLE};
pub use volume::{DType, Geometry, Volume, INTENT_LABEL, SPACING_REL_TOL};

use crate::error::{Error, Result};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(Error::io_at(path))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::with_capacity(raw.len() * 4);
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Locates the image file of a `.hdr`/`.img` pair.
fn pair_image_path(path: &Path) -> Result<PathBuf> {
    let name = path.to_string_lossy();
    for (hdr, img) in [(".hdr.gz", ".img.gz"), (".hdr", ".img")] {
        if let Some(stem) = name.strip_suffix(hdr) {
            let candidate = PathBuf::from(format!("{stem}{img}"));
            if candidate.exists() || hdr == ".hdr" {
                return Ok(candidate);
            }
        }
    }
    Err(Error::Format(format!(
        "{}: header says `ni1` but the file is not a .hdr",
        path.display()
    )))
}

/// Reads a NIfTI-1 volume. Gzip is detected from the stream, not the name.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    // A pair can be addressed through its .img as well.
    let path_buf;
    let path = match path.to_string_lossy().strip_suffix(".img") {
        Some(stem) if Path::new(&format!("{stem}.hdr")).exists() => {
            path_buf = PathBuf::from(format!("{stem}.hdr"));
            path_buf.as_path()
        }
        _ => path,
    };
    let bytes = read_maybe_gz(path)?;
    let hdr = VolumeHeader::parse(&bytes)?;
    let (data_bytes, extensions) = if hdr.magic == MAGIC_PAIR {
        let img = read_maybe_gz(&pair_image_path(path)?)?;
        let start = hdr.vox_offset.max(0.0) as usize;
        (img.get(start..).unwrap_or(&[]).to_vec(), Vec::new())
    } else {
        let start = (hdr.vox_offset as usize).max(HEADER_SIZE);
        if bytes.len() < start {
            return Err(Error::Truncated { expected: start, found: bytes.len() });
        }
        let ext = if bytes.len() >= 352 && bytes[348] != 0 && start > 352 {
            bytes[352..start].to_vec()
        } else {
            Vec::new()
        };
        (bytes[start..].to_vec(), ext)
    };
    decode(&hdr, &data_bytes, extensions)
}

/// Builds a [`Volume`] from a parsed header and its raw data section.
pub fn decode(hdr: &VolumeHeader, data: &[u8], extensions: Vec<u8>) -> Result<Volume> {
    let ndim = hdr.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
    }
    let ndim = ndim as usize;
    let mut dims = [1usize; 3];
    for a in 0..ndim.min(3) {
        let d = hdr.dim[a + 1];
        if d <= 0 {
            return Err(Error::Format(format!("dim[{}] = {d} must be positive", a + 1)));
        }
        dims[a] = d as usize;
    }
    if let Some(extra) = (4..=ndim).find(|&a| hdr.dim[a] > 1) {
        return Err(Error::Format(format!(
            "only single-channel 3D volumes are supported (dim[{extra}] = {})",
            hdr.dim[extra]
        )));
    }
    let dtype = DType::from_code(hdr.datatype)?;
    let n: usize = dims.iter().product();
    let expected = n * dtype.size_of();
    if data.len() < expected {
        return Err(Error::Truncated { expected, found: data.len() });
    }
    let mut values = decode_values(&data[..expected], dtype, hdr.endian);

    let slope = hdr.scl_slope as f64;
    let inter = hdr.scl_inter as f64;
    let mut out_dtype = dtype;
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && (slope != 1.0 || inter != 0.0) {
        values.iter_mut().for_each(|v| *v = *v * slope + inter);
        // Scaled values no longer fit the stored integer type.
        if dtype.is_integer() {
            out_dtype = DType::Float64;
        }
    }

    let affine = if hdr.sform_code > 0 {
        hdr.sform_matrix()
    } else if hdr.qform_code > 0 {
        hdr.qform_matrix()
    } else {
        let mut m = Matrix4::identity();
        for a in 0..3 {
            m[(a, a)] = pixdim_or_one(hdr.pixdim[a + 1]);
        }
        m
    };
    let mut spacing = [0.0; 3];
    for a in 0..3 {
        let norm = affine.fixed_view::<3, 1>(0, a).norm();
        let pd = hdr.pixdim[a + 1].abs() as f64;
        spacing[a] = if pd > 0.0 && ((norm - pd) / pd).abs() <= SPACING_REL_TOL {
            pd
        } else {
            if a < ndim {
                log::warn!("pixdim[{}] = {pd} disagrees with affine column norm {norm}; using the norm", a + 1);
            }
            norm
        };
    }
    let geometry = Geometry::new(dims, spacing, affine)?;
    if geometry.orthogonality_error() > 1e-4 {
        log::warn!("affine has non-orthogonal direction columns; resampling and registration will reject it");
    }
    let mut vol = Volume::new(geometry, values, out_dtype)?;
    vol.intent_code = hdr.intent_code;
    vol.extensions = extensions;
    Ok(vol)
}

fn pixdim_or_one(p: f32) -> f64 {
    if p.is_finite() && p != 0.0 {
        p.abs() as f64
    } else {
        1.0
    }
}

fn decode_values(buf: &[u8], dtype: DType, endian: Endian) -> Vec<f64> {
    macro_rules! conv {
        ($size:expr, $read:ident) => {
            match endian {
                Endian::Little => buf.chunks_exact($size).map(|c| LittleEndian::$read(c) as f64).collect(),
                Endian::Big => buf.chunks_exact($size).map(|c| BigEndian::$read(c) as f64).collect(),
            }
        };
    }
    match dtype {
        DType::UInt8 => buf.iter().map(|&b| b as f64).collect(),
        DType::Int16 => conv!(2, read_i16),
        DType::Int32 => conv!(4, read_i32),
        DType::Float32 => conv!(4, read_f32),
        DType::Float64 => conv!(8, read_f64),
    }
}

fn encode_values(values: &[f64], dtype: DType, out: &mut Vec<u8>) {
    out.reserve(values.len() * dtype.size_of());
    let mut scratch = [0u8; 8];
    for &v in values {
        let v = dtype.cast(v);
        match dtype {
            DType::UInt8 => out.push(v as u8),
            DType::Int16 => {
                LittleEndian::write_i16(&mut scratch, v as i16);
                out.extend_from_slice(&scratch[..2]);
            }
            DType::Int32 => {
                LittleEndian::write_i32(&mut scratch, v as i32);
                out.extend_from_slice(&scratch[..4]);
            }
            DType::Float32 => {
                LittleEndian::write_f32(&mut scratch, v as f32);
                out.extend_from_slice(&scratch[..4]);
            }
            DType::Float64 => {
                LittleEndian::write_f64(&mut scratch, v);
                out.extend_from_slice(&scratch[..8]);
            }
        }
    }
}

/// Header describing `vol` as a single-file NIfTI-1 with sform code 1 and
/// identity intensity scaling.
pub fn header_for(vol: &Volume) -> VolumeHeader {
    let mut hdr = VolumeHeader::default();
    let dims = vol.dims();
    hdr.dim = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    hdr.datatype = vol.dtype().code();
    hdr.bitpix = (vol.dtype().size_of() * 8) as i16;
    hdr.intent_code = vol.intent_code;
    let spacing = vol.spacing();
    hdr.pixdim = [1.0, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    hdr.vox_offset = (352 + vol.extensions.len()) as f32;
    hdr.scl_slope = 1.0;
    hdr.scl_inter = 0.0;
    let affine = vol.affine();
    for r in 0..3 {
        for c in 0..4 {
            hdr.srow[r][c] = affine[(r, c)] as f32;
        }
    }
    hdr.sform_code = 1;
    let mut dir = vol.geometry().linear();
    for a in 0..3 {
        dir.column_mut(a).scale_mut(1.0 / spacing[a]);
    }
    let offset = [affine[(0, 3)], affine[(1, 3)], affine[(2, 3)]];
    if !hdr.set_qform(&dir, offset) {
        hdr.qform_code = 0;
    }
    let mut descrip = [0u8; 80];
    let tag = b"neuropipe";
    descrip[..tag.len()].copy_from_slice(tag);
    hdr.descrip = descrip;
    hdr
}

/// Serializes `vol` as single-file NIfTI-1 bytes (uncompressed).
pub fn encode(vol: &Volume) -> Vec<u8> {
    let hdr = header_for(vol);
    let mut out = Vec::with_capacity(352 + vol.extensions.len() + vol.data().len() * vol.dtype().size_of());
    out.extend_from_slice(&hdr.to_bytes());
    let has_ext = !vol.extensions.is_empty();
    out.extend_from_slice(&[has_ext as u8, 0, 0, 0]);
    out.extend_from_slice(&vol.extensions);
    encode_values(vol.data(), vol.dtype(), &mut out);
    out
}

/// Writes `vol` to `path`, gzip-wrapped when `compress` is set.
pub fn write_volume(vol: &Volume, path: impl AsRef<Path>, compress: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(vol);
    let file = fs::File::create(path).map_err(Error::io_at(path))?;
    let mut w = std::io::BufWriter::new(file);
    if compress {
        let mut gz = GzEncoder::new(w, Compression::fast());
        gz.write_all(&bytes).map_err(Error::io_at(path))?;
        gz.finish().map_err(Error::io_at(path))?.flush().map_err(Error::io_at(path))?;
    } else {
        w.write_all(&bytes).map_err(Error::io_at(path))?;
        w.flush().map_err(Error::io_at(path))?;
    }
    Ok(())
}

/// Compress when the file name ends in `.gz`.
pub fn write_volume_auto(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let compress = path.as_ref().to_string_lossy().ends_with(".gz");
    write_volume(vol, path, compress)
}

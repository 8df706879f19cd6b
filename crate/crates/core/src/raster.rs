//! Multi-band raster grids, pixel/patch geometry, and file formats.
//!
//! Three on-disk formats are supported: `band_float` (the canonical
//! multi-band container: ASCII header + band-sequential float32 payload),
//! binary PGM (P5) and binary PPM (P6). Integer formats are scaled to
//! [0,1] floats at load; label maps are stored as P5 with class ids as
//! raw gray values (no scaling).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Multi-band image grid. Samples are stored band-sequential, each band
/// row-major: `samples[band * width * height + y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub samples: Vec<f32>,
    pub band_names: Vec<String>,
}

impl Raster {
    pub fn new(width: usize, height: usize, bands: usize, band_names: Vec<String>) -> Self {
        Raster {
            width,
            height,
            bands,
            samples: vec![0.0; width * height * bands],
            band_names,
        }
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, band: usize, x: usize, y: usize) -> f32 {
        self.samples[band * self.width * self.height + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, band: usize, x: usize, y: usize, value: f32) {
        self.samples[band * self.width * self.height + y * self.width + x] = value;
    }

    /// Value of `band` at row-major pixel index.
    #[inline]
    pub fn at_index(&self, band: usize, pixel: usize) -> f32 {
        self.samples[band * self.width * self.height + pixel]
    }

    /// Per-band values of one pixel.
    pub fn pixel(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, x, y) as f64).collect()
    }

    fn check_finite(&self, header_len: u64) -> Result<()> {
        let plane = self.width * self.height;
        for (i, v) in self.samples.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteSample {
                    band: i / plane,
                    pixel: i % plane,
                    offset: header_len + (i as u64) * 4,
                });
            }
        }
        Ok(())
    }
}

/// Geometric correspondence between one coarse pixel and its square
/// fine-image patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchMapping {
    pub scale_factor: usize,
    pub coarse_width: usize,
    pub coarse_height: usize,
}

/// Rectangle of fine-image pixels, half-open bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PatchMapping {
    /// Build the mapping, rejecting fine rasters that are not an exact
    /// integer multiple of the coarse grid. Misregistered pairs are
    /// rejected, not resampled.
    pub fn new(coarse: &Raster, fine: &Raster) -> Result<Self> {
        if coarse.width == 0 || coarse.height == 0 {
            return Err(Error::EmptyInput("coarse raster"));
        }
        if !fine.width.is_multiple_of(coarse.width) || !fine.height.is_multiple_of(coarse.height) {
            return Err(Error::DimensionMismatch(format!(
                "fine {}x{} is not an integer multiple of coarse {}x{}",
                fine.width, fine.height, coarse.width, coarse.height
            )));
        }
        let sx = fine.width / coarse.width;
        let sy = fine.height / coarse.height;
        if sx != sy || sx == 0 {
            return Err(Error::DimensionMismatch(format!(
                "anisotropic or zero scale factor: x={sx}, y={sy}"
            )));
        }
        Ok(PatchMapping {
            scale_factor: sx,
            coarse_width: coarse.width,
            coarse_height: coarse.height,
        })
    }

    pub fn with_scale(scale_factor: usize, coarse_width: usize, coarse_height: usize) -> Self {
        PatchMapping {
            scale_factor,
            coarse_width,
            coarse_height,
        }
    }
}

/// Fine-image pixel bounds of the patch under one coarse pixel.
pub fn patch_of(mapping: &PatchMapping, coarse_x: usize, coarse_y: usize) -> Result<PatchRect> {
    if coarse_x >= mapping.coarse_width || coarse_y >= mapping.coarse_height {
        return Err(Error::OutOfBounds {
            x: coarse_x,
            y: coarse_y,
            width: mapping.coarse_width,
            height: mapping.coarse_height,
        });
    }
    let s = mapping.scale_factor;
    Ok(PatchRect {
        x0: coarse_x * s,
        y0: coarse_y * s,
        x1: (coarse_x + 1) * s,
        y1: (coarse_y + 1) * s,
    })
}

/// Per-pixel class ids on the coarse grid; 0 = unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, class: u16) {
        self.labels[y * self.width + x] = class;
    }

    /// Distinct nonzero class ids, ascending.
    pub fn classes(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.labels {
            if l != 0 {
                seen.insert(l);
            }
        }
        seen.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    BandFloat,
    Ppm,
    Pgm,
}

pub fn load_raster(path: &Path, format: RasterFormat) -> Result<Raster> {
    let mut reader = BufReader::new(File::open(path)?);
    match format {
        RasterFormat::BandFloat => load_band_float(&mut reader),
        RasterFormat::Pgm => load_netpbm(&mut reader, b'5'),
        RasterFormat::Ppm => load_netpbm(&mut reader, b'6'),
    }
}

pub fn write_raster(raster: &Raster, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_band_float(raster, &mut w)
}

fn load_band_float<R: Read>(reader: &mut R) -> Result<Raster> {
    let header = read_header_line(reader, "band_float")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "BFLOAT" {
        return Err(Error::MalformedHeader {
            format: "band_float",
            detail: format!("expected 'BFLOAT <w> <h> <bands>', got '{header}'"),
        });
    }
    let width = parse_dim(parts[1], "band_float")?;
    let height = parse_dim(parts[2], "band_float")?;
    let bands = parse_dim(parts[3], "band_float")?;
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::MalformedHeader {
            format: "band_float",
            detail: format!("zero dimension in '{header}'"),
        });
    }
    let n = width * height * bands;
    let mut payload = vec![0u8; n * 4];
    reader
        .read_exact(&mut payload)
        .map_err(|e| Error::MalformedHeader {
            format: "band_float",
            detail: format!("payload shorter than {} samples: {e}", n),
        })?;
    let samples: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let raster = Raster {
        width,
        height,
        bands,
        samples,
        band_names: (0..bands).map(|b| format!("band{b}")).collect(),
    };
    raster.check_finite(header.len() as u64 + 1)?;
    Ok(raster)
}

fn write_band_float<W: Write>(raster: &Raster, w: &mut W) -> Result<()> {
    writeln!(
        w,
        "BFLOAT {} {} {}",
        raster.width, raster.height, raster.bands
    )?;
    for v in &raster.samples {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Binary PGM/PPM. `digit` is b'5' or b'6'. Integer values are scaled
/// to [0,1] by maxval; maxval > 255 means two-byte big-endian samples.
fn load_netpbm<R: Read>(reader: &mut R, digit: u8) -> Result<Raster> {
    let format: &'static str = if digit == b'5' { "pgm" } else { "ppm" };
    let mut magic = [0u8; 2];
    reader
        .read_exact(&mut magic)
        .map_err(|e| Error::MalformedHeader {
            format,
            detail: format!("missing magic: {e}"),
        })?;
    if magic[0] != b'P' || magic[1] != digit {
        return Err(Error::MalformedHeader {
            format,
            detail: format!("bad magic {:?}", String::from_utf8_lossy(&magic)),
        });
    }
    let width = read_netpbm_int(reader, format)?;
    let height = read_netpbm_int(reader, format)?;
    let maxval = read_netpbm_int(reader, format)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader {
            format,
            detail: format!("bad dimensions {width}x{height} maxval {maxval}"),
        });
    }
    let bands = if digit == b'5' { 1 } else { 3 };
    let values = read_netpbm_samples(reader, width * height * bands, maxval, format)?;
    // Interleaved on disk for PPM; convert to band-sequential.
    let plane = width * height;
    let mut samples = vec![0f32; plane * bands];
    for (i, &v) in values.iter().enumerate() {
        let band = i % bands;
        let pixel = i / bands;
        samples[band * plane + pixel] = v as f32 / maxval as f32;
    }
    let band_names = if bands == 1 {
        vec!["gray".to_string()]
    } else {
        vec!["r".to_string(), "g".to_string(), "b".to_string()]
    };
    Ok(Raster {
        width,
        height,
        bands,
        samples,
        band_names,
    })
}

fn read_netpbm_samples<R: Read>(
    reader: &mut R,
    count: usize,
    maxval: usize,
    format: &'static str,
) -> Result<Vec<u16>> {
    let wide = maxval > 255;
    let mut raw = vec![0u8; count * if wide { 2 } else { 1 }];
    reader
        .read_exact(&mut raw)
        .map_err(|e| Error::MalformedFile {
            format,
            detail: format!("payload shorter than {count} samples: {e}"),
        })?;
    let values = if wide {
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raw.iter().map(|&b| b as u16).collect()
    };
    Ok(values)
}

/// Load a P5 PGM as a label map: gray values are class ids, no scaling.
pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 2];
    reader.read_exact(&mut magic)?;
    if &magic != b"P5" {
        return Err(Error::MalformedHeader {
            format: "pgm",
            detail: "label map must be binary P5".to_string(),
        });
    }
    let width = read_netpbm_int(&mut reader, "pgm")?;
    let height = read_netpbm_int(&mut reader, "pgm")?;
    let maxval = read_netpbm_int(&mut reader, "pgm")?;
    let labels = read_netpbm_samples(&mut reader, width * height, maxval, "pgm")?;
    Ok(LabelMap {
        width,
        height,
        labels,
    })
}

/// Store a label map as P5 with class ids as gray values.
pub fn write_label_map(labels: &LabelMap, path: &Path) -> Result<()> {
    let maxval = labels.labels.iter().copied().max().unwrap_or(0).max(1);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n{}\n", labels.width, labels.height, maxval)?;
    if maxval > 255 {
        for &l in &labels.labels {
            w.write_all(&l.to_be_bytes())?;
        }
    } else {
        for &l in &labels.labels {
            w.write_all(&[l as u8])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Render a label map to binary PPM, one pixel per coarse cell.
/// Label 0 is black; every other label must have a palette entry.
pub fn write_class_map(
    labels: &LabelMap,
    palette: &std::collections::BTreeMap<u16, [u8; 3]>,
    path: &Path,
) -> Result<()> {
    for &l in &labels.labels {
        if l != 0 && !palette.contains_key(&l) {
            return Err(Error::MissingPaletteEntry(l));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", labels.width, labels.height)?;
    for &l in &labels.labels {
        let rgb = if l == 0 { [0, 0, 0] } else { palette[&l] };
        w.write_all(&rgb)?;
    }
    w.flush()?;
    Ok(())
}

fn read_header_line<R: Read>(reader: &mut R, format: &'static str) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader
            .read_exact(&mut byte)
            .map_err(|e| Error::MalformedHeader {
                format,
                detail: format!("truncated header: {e}"),
            })?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 256 {
            return Err(Error::MalformedHeader {
                format,
                detail: "header line too long".into(),
            });
        }
    }
    String::from_utf8(line).map_err(|_| Error::MalformedHeader {
        format,
        detail: "header is not ASCII".into(),
    })
}

/// Read one whitespace-delimited integer token, skipping `#` comments.
fn read_netpbm_int<R: Read>(reader: &mut R, format: &'static str) -> Result<usize> {
    let mut byte = [0u8; 1];
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        reader
            .read_exact(&mut byte)
            .map_err(|e| Error::MalformedHeader {
                format,
                detail: format!("truncated header: {e}"),
            })?;
        let c = byte[0];
        if in_comment {
            if c == b'\n' {
                in_comment = false;
            }
            continue;
        }
        if c == b'#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                break;
            }
            continue;
        }
        if !c.is_ascii_digit() {
            return Err(Error::MalformedHeader {
                format,
                detail: format!("unexpected byte {c:#x} in header"),
            });
        }
        tok.push(c as char);
    }
    tok.parse().map_err(|_| Error::MalformedHeader {
        format,
        detail: format!("bad integer '{tok}'"),
    })
}

fn parse_dim(tok: &str, format: &'static str) -> Result<usize> {
    tok.parse().map_err(|_| Error::MalformedHeader {
        format,
        detail: format!("bad integer '{tok}'"),
    })
}

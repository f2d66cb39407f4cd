//! Gray-level co-occurrence (GLCM) entropy of images.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexistats::csv_err;

pub const DEFAULT_LEVELS: u16 = 64;
pub const DEFAULT_OFFSETS: [(i32, i32); 2] = [(1, 0), (0, 1)];

/// Row-major image quantized to `levels` gray levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    levels: u16,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, levels: u16, pixels: Vec<u16>) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParameter("levels must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|&&p| p >= levels) {
            return Err(Error::InvalidParameter(format!("gray level {p} outside [0, {levels})")));
        }
        Ok(GrayImage {
            width,
            height,
            levels,
            pixels,
        })
    }

    /// Converts interleaved 8-bit RGB with luma 0.2126R + 0.7152G + 0.0722B,
    /// then quantizes uniformly to `levels`.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8], levels: u16) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::InvalidParameter(format!(
                "{} bytes for a {width}x{height} RGB image",
                rgb.len()
            )));
        }
        if levels == 0 {
            return Err(Error::InvalidParameter("levels must be positive".into()));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| {
                let y = 0.2126 * f64::from(p[0]) + 0.7152 * f64::from(p[1]) + 0.0722 * f64::from(p[2]);
                ((y * f64::from(levels) / 256.0) as u16).min(levels - 1)
            })
            .collect();
        Ok(GrayImage {
            width,
            height,
            levels,
            pixels,
        })
    }

    /// Decodes a PNG or PPM file.
    pub fn load(path: &Path, levels: u16) -> Result<Self> {
        let err = |message: String| Error::Image {
            path: path.to_path_buf(),
            message,
        };
        let reader = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?;
        match reader.format() {
            Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
            other => return Err(err(format!("unsupported format {other:?}; expected PNG or PPM"))),
        }
        let rgb = reader.decode().map_err(|e| err(e.to_string()))?.to_rgb8();
        let (w, h) = rgb.dimensions();
        GrayImage::from_rgb(w as usize, h as usize, rgb.as_raw(), levels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> u16 {
        self.levels
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }
}

/// Co-occurrence counts for one offset, `levels × levels` row-major.
pub fn glcm(img: &GrayImage, (dx, dy): (i32, i32), symmetric: bool) -> Vec<u64> {
    let g = img.levels as usize;
    let mut counts = vec![0u64; g * g];
    let (w, h) = (img.width as i64, img.height as i64);
    let (dx, dy) = (i64::from(dx), i64::from(dy));
    let x0 = (-dx).max(0);
    let x1 = (w - dx).min(w);
    let y0 = (-dy).max(0);
    let y1 = (h - dy).min(h);
    if x0 >= x1 || y0 >= y1 {
        return counts;
    }
    for y in y0..y1 {
        let row = &img.pixels[(y * w) as usize..((y + 1) * w) as usize];
        let other = &img.pixels[((y + dy) * w) as usize..((y + dy + 1) * w) as usize];
        for x in x0..x1 {
            let a = row[x as usize] as usize;
            let b = other[(x + dx) as usize] as usize;
            counts[a * g + b] += 1;
            if symmetric {
                counts[b * g + a] += 1;
            }
        }
    }
    counts
}

fn entropy_bits(counts: &[u64]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let t = total as f64;
    Some(
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / t;
                p * p.log2()
            })
            .sum::<f64>()
            + 0.0,
    )
}

/// Shannon entropy (bits) of the normalized GLCM, averaged over `offsets`.
pub fn glcm_entropy(img: &GrayImage, offsets: &[(i32, i32)], symmetric: bool) -> Result<f64> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::InvalidParameter(format!(
            "image is {}x{}; need at least 2x2",
            img.width, img.height
        )));
    }
    if offsets.is_empty() {
        return Err(Error::InvalidParameter("no offsets".into()));
    }
    let mut sum = 0.0;
    for &off in offsets {
        if off == (0, 0) {
            return Err(Error::InvalidParameter("offset (0, 0)".into()));
        }
        sum += entropy_bits(&glcm(img, off, symmetric))
            .ok_or_else(|| Error::Degenerate(format!("offset {off:?} leaves no pixel pairs inside the image")))?;
    }
    Ok(sum / offsets.len() as f64)
}

/// Entropy of every image, in parallel.
pub fn glcm_entropy_batch(images: &[GrayImage], offsets: &[(i32, i32)], symmetric: bool) -> Vec<Result<f64>> {
    images.par_iter().map(|img| glcm_entropy(img, offsets, symmetric)).collect()
}

/// PNG and PPM files directly inside `dir`, sorted by file name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin includes its upper edge.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// CSV `bin_start,bin_end,count`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["bin_start", "bin_end", "count"]).map_err(csv_err)?;
        for (i, c) in self.counts.iter().enumerate() {
            wtr.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("csv", e))
    }
}

/// Equal-width histogram over `range`, or over the data range when `None`
/// (widened by 0.5 on each side if all values are equal). Values outside
/// an explicit range are not counted.
pub fn entropy_histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite value".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) if lo < hi && lo.is_finite() && hi.is_finite() => (lo, hi),
        Some((lo, hi)) => return Err(Error::InvalidParameter(format!("invalid range [{lo}, {hi}]"))),
        None => {
            if values.is_empty() {
                return Err(Error::InsufficientData("no values".into()));
            }
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

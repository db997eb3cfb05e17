//! Output artifacts: CSV tables, grayscale heatmaps, JSON manifests.
//!
//! Every file lands through [`atomic_write`], so a reader never observes a
//! partially written artifact.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file, syncs it, then renames it
/// over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// An in-memory CSV table with a header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Appends a row of numbers.
    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| fmt_f64(x)).collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    /// Parses a table written by [`CsvTable::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let header = r
            .headers()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Io(std::io::Error::other(e)))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }
}

/// 8-bit grayscale image of a nonnegative field given row-major on an
/// `nx x ny` grid with `j = 0` at the bottom; the brightest pixel is the
/// field maximum and the first output row is the top of the domain.
pub fn heatmap_pixels(values: &[f64], nx: usize, ny: usize) -> Vec<u8> {
    assert_eq!(values.len(), nx * ny);
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let mut px = Vec::with_capacity(nx * ny);
    for j in (0..ny).rev() {
        for i in 0..nx {
            let v = values[j * nx + i];
            let level = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            px.push((level * 255.0).round() as u8);
        }
    }
    px
}

/// Binary PGM (`P5`, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    atomic_write(path, &bytes)
}

fn encode_png<P: image::Pixel<Subpixel = u8> + image::PixelWithColorType>(
    img: ImageBuffer<P, Vec<u8>>,
) -> Result<Vec<u8>>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(out.into_inner())
}

pub fn write_png_gray(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, pixels.to_vec())
            .ok_or_else(|| Error::InvalidArgument("pixel buffer size mismatch".into()))?;
    atomic_write(path, &encode_png(img)?)
}

/// Grayscale heatmap with the pixels where `overlay` is set tinted blue.
/// `overlay` uses the same top-row-first layout as `pixels`.
pub fn write_png_overlay(
    path: &Path,
    width: usize,
    height: usize,
    pixels: &[u8],
    overlay: &[bool],
) -> Result<()> {
    assert_eq!(pixels.len(), overlay.len());
    let mut rgb = Vec::with_capacity(3 * pixels.len());
    for (&p, &o) in pixels.iter().zip(overlay) {
        if o {
            rgb.extend_from_slice(&[p / 2, p / 2, 128 + p / 2]);
        } else {
            rgb.extend_from_slice(&[p, p, p]);
        }
    }
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::InvalidArgument("pixel buffer size mismatch".into()))?;
    atomic_write(path, &encode_png(img)?)
}

/// Flips a row-major `j = 0`-at-bottom mask into image row order.
pub fn image_rows<T: Copy>(values: &[T], nx: usize, ny: usize) -> Vec<T> {
    (0..ny)
        .rev()
        .flat_map(|j| values[j * nx..(j + 1) * nx].iter().copied())
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn csv_round_trip_and_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = CsvTable::new(&["name", "value"]);
        t.push(vec!["a,b".into(), fmt_f64(1.5)]);
        t.push(vec!["say \"hi\"".into(), fmt_f64(-2.0)]);
        t.write(&path).unwrap();
        let raw = fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"a,b\""));
        assert!(raw.contains("\r\n"));
        assert_eq!(CsvTable::read(&path).unwrap(), t);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("x.bin");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn pgm_header_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        // bottom row dark, top row bright
        let px = heatmap_pixels(&[0.0, 0.0, 1.0, 2.0], 2, 2);
        assert_eq!(px, vec![128, 255, 0, 0]);
        write_pgm(&path, 2, 2, &px).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &px[..]);
    }

    #[test]
    fn png_files_decode() {
        let dir = tempfile::tempdir().unwrap();
        let px = heatmap_pixels(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 3, 2);
        let gray = dir.path().join("g.png");
        let over = dir.path().join("o.png");
        write_png_gray(&gray, 3, 2, &px).unwrap();
        write_png_overlay(&over, 3, 2, &px, &[true, false, false, false, false, true]).unwrap();
        let g = image::open(&gray).unwrap();
        assert_eq!((g.width(), g.height()), (3, 2));
        let o = image::open(&over).unwrap().to_rgb8();
        assert_eq!(o.get_pixel(1, 0).0, [px[1]; 3]);
        assert!(o.get_pixel(0, 0).0[2] > o.get_pixel(0, 0).0[0]);
    }
}

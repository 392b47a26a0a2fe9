//! CSV and scatter-image emission for embedding analyses.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::{EmbedError, EmbeddingRecord};

const DOMAIN_COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],  // blue
    [44, 160, 44],   // green
    [214, 39, 40],   // red
    [255, 127, 14],  // orange
    [148, 103, 189], // purple
    [140, 86, 75],   // brown
];

/// Writes `<stem>.csv` (columns `x,y,domain,split,epoch`) and a
/// `<stem>.bmp` scatter image. Domains get distinct colors; validation
/// points draw with a larger glyph than training points. Returns the two
/// paths.
pub fn emit_artifacts(
    coords: &[[f64; 2]],
    records: &[EmbeddingRecord],
    out_dir: &Path,
    stem: &str,
    image_size: usize,
) -> Result<(PathBuf, PathBuf), EmbedError> {
    if coords.len() != records.len() {
        return Err(EmbedError::CoordsRecordMismatch {
            coords: coords.len(),
            records: records.len(),
        });
    }
    std::fs::create_dir_all(out_dir)?;

    let csv_path = out_dir.join(format!("{stem}.csv"));
    let mut csv = std::fs::File::create(&csv_path)?;
    writeln!(csv, "x,y,domain,split,epoch")?;
    for (c, r) in coords.iter().zip(records) {
        writeln!(csv, "{},{},{},{},{}", c[0], c[1], r.domain, r.split.as_str(), r.epoch)?;
    }

    let bmp_path = out_dir.join(format!("{stem}.bmp"));
    let pixels = render_scatter(coords, records, image_size);
    write_bmp(&bmp_path, image_size, image_size, &pixels)?;
    Ok((csv_path, bmp_path))
}

fn render_scatter(coords: &[[f64; 2]], records: &[EmbeddingRecord], size: usize) -> Vec<u8> {
    let mut pixels = vec![255u8; size * size * 3]; // white background
    if coords.is_empty() {
        return pixels;
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in coords {
        min_x = min_x.min(c[0]);
        max_x = max_x.max(c[0]);
        min_y = min_y.min(c[1]);
        max_y = max_y.max(c[1]);
    }
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);
    let margin = 8.0;
    let scale = size as f64 - 2.0 * margin;

    for (c, r) in coords.iter().zip(records) {
        let px = margin + (c[0] - min_x) / span_x * scale;
        let py = margin + (c[1] - min_y) / span_y * scale;
        let color = DOMAIN_COLORS[r.domain % DOMAIN_COLORS.len()];
        // validation points are drawn bigger than training points
        let radius: i64 = match r.split {
            super::Split::Train => 1,
            super::Split::Val => 3,
        };
        let (cx, cy) = (px.round() as i64, py.round() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= size as i64 || y >= size as i64 {
                    continue;
                }
                let idx = (y as usize * size + x as usize) * 3;
                pixels[idx..idx + 3].copy_from_slice(&color);
            }
        }
    }
    pixels
}

/// Minimal uncompressed 24-bit BMP writer (`pixels` is row-major RGB,
/// top-down).
pub fn write_bmp(path: &Path, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), width * height * 3);
    let row_size = (width * 3 + 3) / 4 * 4;
    let data_size = row_size * height;
    let file_size = 54 + data_size;

    let mut out = Vec::with_capacity(file_size);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&(file_size as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&54u32.to_le_bytes());
    // BITMAPINFOHEADER
    out.extend_from_slice(&40u32.to_le_bytes());
    out.extend_from_slice(&(width as i32).to_le_bytes());
    out.extend_from_slice(&(height as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // BI_RGB
    out.extend_from_slice(&(data_size as u32).to_le_bytes());
    out.extend_from_slice(&2835u32.to_le_bytes()); // 72 dpi
    out.extend_from_slice(&2835u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    // pixel rows, bottom-up, BGR, padded to 4 bytes
    for y in (0..height).rev() {
        for x in 0..width {
            let idx = (y * width + x) * 3;
            out.push(pixels[idx + 2]);
            out.push(pixels[idx + 1]);
            out.push(pixels[idx]);
        }
        for _ in width * 3..row_size {
            out.push(0);
        }
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Split;

    fn records_and_coords() -> (Vec<[f64; 2]>, Vec<EmbeddingRecord>) {
        let coords = vec![[0.0, 0.0], [1.0, 1.0], [-1.0, 2.0], [3.0, -1.0]];
        let records = (0..4)
            .map(|i| EmbeddingRecord {
                z: vec![i as f64],
                domain: i % 2,
                split: if i < 2 { Split::Train } else { Split::Val },
                epoch: 30,
            })
            .collect();
        (coords, records)
    }

    #[test]
    fn csv_has_one_row_per_record_and_reruns_identically() {
        let (coords, records) = records_and_coords();
        let dir = tempfile::tempdir().unwrap();
        let (csv1, _) = emit_artifacts(&coords, &records, dir.path(), "epoch_030", 64).unwrap();
        let body1 = std::fs::read(&csv1).unwrap();
        let lines = String::from_utf8(body1.clone()).unwrap().lines().count();
        assert_eq!(lines, 1 + records.len());

        let (csv2, _) = emit_artifacts(&coords, &records, dir.path(), "epoch_030", 64).unwrap();
        let body2 = std::fs::read(&csv2).unwrap();
        assert_eq!(body1, body2);
    }

    #[test]
    fn bmp_has_configured_dimensions() {
        let (coords, records) = records_and_coords();
        let dir = tempfile::tempdir().unwrap();
        let (_, bmp) = emit_artifacts(&coords, &records, dir.path(), "img", 48).unwrap();
        let bytes = std::fs::read(&bmp).unwrap();
        assert_eq!(&bytes[..2], b"BM");
        let width = i32::from_le_bytes([bytes[18], bytes[19], bytes[20], bytes[21]]);
        let height = i32::from_le_bytes([bytes[22], bytes[23], bytes[24], bytes[25]]);
        assert_eq!(width, 48);
        assert_eq!(height, 48);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let (coords, mut records) = records_and_coords();
        records.pop();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_artifacts(&coords, &records, dir.path(), "x", 32).unwrap_err(),
            EmbedError::CoordsRecordMismatch { .. }
        ));
    }
}

//! Frame, mask and box-list files.
//!
//! Frames are read from 8-bit PGM (P5), PPM (P6) or RGB PNG. Masks are
//! written as binary PGM with values 0/255. Box lists are CSV.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::eval::GroundTruthEntry;
use crate::imaging::{BinaryMask, ColorFrame, GrayFrame, PixelBox};

const FRAME_EXTENSIONS: [&str; 3] = ["pgm", "ppm", "png"];

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Reads any supported frame as RGB; grayscale inputs are replicated into all channels.
pub fn read_color_frame(path: &Path) -> Result<ColorFrame> {
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    ColorFrame::new(w as usize, h as usize, rgb.into_raw())
}

pub fn read_gray_frame(path: &Path) -> Result<GrayFrame> {
    let luma = decode(path)?.to_luma8();
    let (w, h) = luma.dimensions();
    GrayFrame::new(w as usize, h as usize, luma.into_raw())
}

/// Reads a mask image: every nonzero pixel is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let gray = read_gray_frame(path)?;
    BinaryMask::from_bits(gray.width(), gray.height(), gray.data().iter().map(|&v| v != 0).collect())
}

fn write_pnm(path: &Path, data: &[u8], width: usize, height: usize, subtype: PnmSubtype, color: ExtendedColorType) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(data, width as u32, height as u32, color)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::io(path, source),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pnm(
        path,
        &data,
        mask.width(),
        mask.height(),
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
    )
}

pub fn write_gray_pgm(path: &Path, frame: &GrayFrame) -> Result<()> {
    write_pnm(
        path,
        frame.data(),
        frame.width(),
        frame.height(),
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
    )
}

pub fn write_color_ppm(path: &Path, frame: &ColorFrame) -> Result<()> {
    write_pnm(
        path,
        frame.data(),
        frame.width(),
        frame.height(),
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        ExtendedColorType::Rgb8,
    )
}

/// Frame files of a directory (`.pgm`, `.ppm`, `.png`), sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_frame = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_frame && path.is_file() {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Iterates CSV records, skipping a header row (first row whose first field is not a number).
fn records(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv_reader(path)?;
    let mut rows = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let first = record.get(0).unwrap_or("");
        if rows.is_empty() && index == 0 && first.parse::<i64>().is_err() {
            continue;
        }
        rows.push((line, record));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, record: &csv::StringRecord, index: usize, name: &str) -> Result<T> {
    let raw = record
        .get(index)
        .ok_or_else(|| parse_err(path, line, format!("missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("invalid `{name}` value `{raw}`")))
}

fn box_fields(path: &Path, line: u64, record: &csv::StringRecord) -> Result<PixelBox> {
    let x: u32 = field(path, line, record, 2, "x")?;
    let y: u32 = field(path, line, record, 3, "y")?;
    let w: u32 = field(path, line, record, 4, "w")?;
    let h: u32 = field(path, line, record, 5, "h")?;
    if w == 0 || h == 0 {
        return Err(parse_err(path, line, "box width and height must be positive"));
    }
    Ok(PixelBox::new(x, y, w, h))
}

/// Reads `frame,id,x,y,w,h[,label]` (ground truth and track files share this schema).
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthEntry>> {
    records(path)?
        .into_iter()
        .map(|(line, record)| {
            if record.len() < 6 || record.len() > 7 {
                return Err(parse_err(path, line, format!("expected 6 or 7 columns, found {}", record.len())));
            }
            Ok(GroundTruthEntry {
                frame_index: field(path, line, &record, 0, "frame")?,
                object_id: field(path, line, &record, 1, "id")?,
                bbox: box_fields(path, line, &record)?,
                class_label: record.get(6).unwrap_or("").to_string(),
            })
        })
        .collect()
}

/// Reads a detection list `frame,<id or source>,x,y,w,h`; the second column is ignored.
pub fn read_detections(path: &Path) -> Result<Vec<(u64, PixelBox)>> {
    records(path)?
        .into_iter()
        .map(|(line, record)| {
            if record.len() < 6 {
                return Err(parse_err(path, line, format!("expected at least 6 columns, found {}", record.len())));
            }
            Ok((field(path, line, &record, 0, "frame")?, box_fields(path, line, &record)?))
        })
        .collect()
}

pub fn write_ground_truth(path: &Path, entries: &[GroundTruthEntry]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, ["frame", "id", "x", "y", "w", "h", "label"])?;
    for e in entries {
        write_row(
            path,
            &mut w,
            &[
                e.frame_index.to_string(),
                e.object_id.to_string(),
                e.bbox.x.to_string(),
                e.bbox.y.to_string(),
                e.bbox.w.to_string(),
                e.bbox.h.to_string(),
                e.class_label.clone(),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

pub(crate) fn write_row<I, T>(path: &Path, writer: &mut csv::Writer<fs::File>, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    writer.write_record(row).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip_checkerboard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = BinaryMask::from_fn(7, 5, |x, y| (x + y) % 2 == 0);
        write_mask_pgm(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5"));
    }

    #[test]
    fn color_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        let frame = ColorFrame::new(2, 1, vec![1, 2, 3, 250, 251, 252]).unwrap();
        write_color_ppm(&path, &frame).unwrap();
        assert_eq!(read_color_frame(&path).unwrap(), frame);
    }

    #[test]
    fn gt_parse_with_header_and_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        fs::write(&path, "frame,id,x,y,w,h,label\n0,1,2,3,4,5,car\n1,1,3,3,4,5\n").unwrap();
        let gt = read_ground_truth(&path).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt[0].bbox, PixelBox::new(2, 3, 4, 5));
        assert_eq!(gt[0].class_label, "car");
        assert_eq!(gt[1].class_label, "");
    }

    #[test]
    fn gt_parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        fs::write(&path, "0,1,2,3,4,5\n1,1,x,3,4,5\n").unwrap();
        match read_ground_truth(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_mask(Path::new("/nonexistent/000000.pgm")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}

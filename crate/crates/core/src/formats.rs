//! Text formats for annotations, detections and images.
//!
//! Annotation line: `x1 y1 x2 y2 x3 y3 x4 y4 class difficulty`.
//! Detection line: `image_id score x1 y1 x2 y2 x3 y3 x4 y4 class`.
//! Coordinates are written with six decimals. Images are 8-bit PGM.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::encoding::Heatmap;
use crate::geometry::{GeometryError, Point2, QuadBox};
use crate::grid::Plane;
use crate::postprocess::Detection;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class id {0} is not in the class list")]
    UnknownClassId(usize),
    #[error("invalid box geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("malformed {what} at line {line}: {message}")]
    Malformed {
        what: &'static str,
        line: usize,
        message: String,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub coords: [f64; 8],
    pub class_name: String,
    pub difficulty: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub score: f64,
    pub coords: [f64; 8],
    pub class_name: String,
}

/// A line that could not be parsed. Line numbers start at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub warnings: Vec<ParseWarning>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Ordered class names; a class id is an index into this list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassList {
    names: Vec<String>,
}

impl ClassList {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    /// Synthetic class names `class0`, `class1`, ...
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("class{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Result<usize, FormatError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| FormatError::UnknownClass(name.to_string()))
    }

    pub fn name(&self, id: usize) -> Result<&str, FormatError> {
        self.names
            .get(id)
            .map(String::as_str)
            .ok_or(FormatError::UnknownClassId(id))
    }

    /// One name per line; blank lines ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }
}

fn parse_coord(token: &str) -> Option<f64> {
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_coords(tokens: &[&str]) -> Option<[f64; 8]> {
    let mut out = [0.0; 8];
    for (o, t) in out.iter_mut().zip(tokens) {
        *o = parse_coord(t)?;
    }
    Some(out)
}

/// Header lines such as `imagesource:GoogleEarth` or `gsd:0.1`.
fn is_metadata(line: &str) -> bool {
    let first = line.split_whitespace().next().unwrap_or("");
    first.contains(':') && parse_coord(first).is_none()
}

/// Parses oriented annotations. Metadata headers and blank lines are skipped;
/// malformed lines become warnings. A missing difficulty reads as 0.
pub fn parse_annotations(text: &str) -> Parsed<AnnotationRecord> {
    let mut parsed = Parsed::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || is_metadata(line) {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let warn = |message: String| ParseWarning {
            line: i + 1,
            message,
        };
        if tokens.len() < 9 || tokens.len() > 10 {
            parsed.warnings.push(warn(format!(
                "expected 9 or 10 fields, found {}",
                tokens.len()
            )));
            continue;
        }
        let Some(coords) = parse_coords(&tokens[..8]) else {
            parsed
                .warnings
                .push(warn("coordinates must be eight finite numbers".into()));
            continue;
        };
        let difficulty = match tokens.get(9) {
            None => 0,
            Some(t) => match t.parse::<i32>() {
                Ok(d) => d,
                Err(_) => {
                    parsed.warnings.push(warn(format!("bad difficulty {t:?}")));
                    continue;
                }
            },
        };
        parsed.records.push(AnnotationRecord {
            coords,
            class_name: tokens[8].to_string(),
            difficulty,
        });
    }
    parsed
}

/// Reads a whole stream and parses it. Invalid UTF-8 is replaced rather than
/// rejected, so only read failures are errors.
pub fn read_annotations(mut reader: impl Read) -> Result<Parsed<AnnotationRecord>, FormatError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    Ok(parse_annotations(&String::from_utf8_lossy(&bytes)))
}

/// Parses horizontal boxes `xmin ymin xmax ymax class [difficulty]`, also
/// accepting the `(x1,y1),(x2,y2),class` style. Boxes are expanded to four
/// corners starting at the top-left.
pub fn parse_horizontal_annotations(text: &str) -> Parsed<AnnotationRecord> {
    let mut parsed = Parsed::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || is_metadata(line) {
            continue;
        }
        let cleaned: String = line
            .chars()
            .map(|c| if matches!(c, '(' | ')' | ',') { ' ' } else { c })
            .collect();
        let tokens: Vec<&str> = cleaned.split_whitespace().collect();
        let warn = |message: String| ParseWarning {
            line: i + 1,
            message,
        };
        if tokens.len() < 5 || tokens.len() > 6 {
            parsed.warnings.push(warn(format!(
                "expected 5 or 6 fields, found {}",
                tokens.len()
            )));
            continue;
        }
        let nums: Option<Vec<f64>> = tokens[..4].iter().map(|t| parse_coord(t)).collect();
        let Some(n) = nums else {
            parsed
                .warnings
                .push(warn("box must be four finite numbers".into()));
            continue;
        };
        let (x0, y0, x1, y1) = (
            n[0].min(n[2]),
            n[1].min(n[3]),
            n[0].max(n[2]),
            n[1].max(n[3]),
        );
        let difficulty = tokens.get(5).and_then(|t| t.parse().ok()).unwrap_or(0);
        parsed.records.push(AnnotationRecord {
            coords: [x0, y0, x1, y0, x1, y1, x0, y1],
            class_name: tokens[4].to_string(),
            difficulty,
        });
    }
    parsed
}

pub fn parse_detections(text: &str) -> Parsed<DetectionRecord> {
    let mut parsed = Parsed::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let warn = |message: String| ParseWarning {
            line: i + 1,
            message,
        };
        if tokens.len() != 11 {
            parsed
                .warnings
                .push(warn(format!("expected 11 fields, found {}", tokens.len())));
            continue;
        }
        let score = match parse_coord(tokens[1]) {
            Some(s) if (0.0..=1.0).contains(&s) => s,
            _ => {
                parsed
                    .warnings
                    .push(warn(format!("score {:?} not in [0, 1]", tokens[1])));
                continue;
            }
        };
        let Some(coords) = parse_coords(&tokens[2..10]) else {
            parsed
                .warnings
                .push(warn("coordinates must be eight finite numbers".into()));
            continue;
        };
        parsed.records.push(DetectionRecord {
            image_id: tokens[0].to_string(),
            score,
            coords,
            class_name: tokens[10].to_string(),
        });
    }
    parsed
}

fn write_coords(out: &mut String, coords: &[f64; 8]) {
    for c in coords {
        let _ = write!(out, " {c:.6}");
    }
}

pub fn format_annotation(rec: &AnnotationRecord) -> String {
    let mut s = String::new();
    write_coords(&mut s, &rec.coords);
    format!("{} {} {}", s.trim_start(), rec.class_name, rec.difficulty)
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    records
        .iter()
        .map(|r| format_annotation(r) + "\n")
        .collect()
}

pub fn format_detection(rec: &DetectionRecord) -> String {
    let mut s = format!("{} {:.6}", rec.image_id, rec.score);
    write_coords(&mut s, &rec.coords);
    format!("{s} {}", rec.class_name)
}

pub fn format_detections(records: &[DetectionRecord]) -> String {
    records.iter().map(|r| format_detection(r) + "\n").collect()
}

fn corners_from(coords: &[f64; 8]) -> [Point2; 4] {
    [0, 1, 2, 3].map(|i| Point2::new(coords[2 * i], coords[2 * i + 1]))
}

fn coords_from(q: &QuadBox) -> [f64; 8] {
    let mut c = [0.0; 8];
    for (i, p) in q.corners.iter().enumerate() {
        c[2 * i] = p.x;
        c[2 * i + 1] = p.y;
    }
    c
}

/// Validated quad for an annotation. Clockwise corners are reordered.
pub fn quad_from_record(
    rec: &AnnotationRecord,
    classes: &ClassList,
) -> Result<QuadBox, FormatError> {
    let class_id = classes.id(&rec.class_name)?;
    Ok(QuadBox::new(corners_from(&rec.coords), class_id)?)
}

pub fn record_from_quad(
    quad: &QuadBox,
    classes: &ClassList,
) -> Result<AnnotationRecord, FormatError> {
    Ok(AnnotationRecord {
        coords: coords_from(quad),
        class_name: classes.name(quad.class_id)?.to_string(),
        difficulty: 0,
    })
}

pub fn record_from_detection(
    image_id: &str,
    det: &Detection,
    classes: &ClassList,
) -> Result<DetectionRecord, FormatError> {
    Ok(DetectionRecord {
        image_id: image_id.to_string(),
        score: det.score,
        coords: coords_from(&det.quad),
        class_name: classes.name(det.class_id)?.to_string(),
    })
}

pub fn detection_from_record(
    rec: &DetectionRecord,
    classes: &ClassList,
) -> Result<Detection, FormatError> {
    let class_id = classes.id(&rec.class_name)?;
    let quad = QuadBox::new(corners_from(&rec.coords), class_id)?;
    Ok(Detection {
        quad,
        class_id,
        score: rec.score,
    })
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Intensities in `[0, 1]`.
    pub fn intensities(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), FormatError> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("pixel buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Pnm)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, FormatError> {
    let img = image::open(path)?.into_luma8();
    Ok(GrayImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

/// Heatmap as CSV: each channel is a `channel,<c>` line followed by one
/// comma-separated line per grid row.
pub fn format_heatmap_csv(heatmap: &Heatmap) -> String {
    let mut s = String::new();
    for (c, plane) in heatmap.channels.iter().enumerate() {
        let _ = writeln!(s, "channel,{c}");
        for row in plane.as_slice().chunks(plane.width()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
    }
    s
}

pub fn parse_heatmap_csv(text: &str) -> Result<Heatmap, FormatError> {
    let bad = |line: usize, message: String| FormatError::Malformed {
        what: "heatmap",
        line,
        message,
    };
    let mut channels: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("channel,") {
            let c: usize = rest
                .trim()
                .parse()
                .map_err(|_| bad(i + 1, "bad channel index".into()))?;
            if c != channels.len() {
                return Err(bad(i + 1, format!("expected channel {}", channels.len())));
            }
            channels.push((i + 1, Vec::new()));
            continue;
        }
        let Some((_, rows)) = channels.last_mut() else {
            return Err(bad(i + 1, "values before the first channel header".into()));
        };
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad(i + 1, "cells must be finite numbers".into()))?;
        rows.push(row);
    }
    let Some((_, first)) = channels.first() else {
        return Err(bad(1, "no channels".into()));
    };
    let (h, w) = (first.len(), first.first().map_or(0, Vec::len));
    if h == 0 || w == 0 {
        return Err(bad(1, "empty channel".into()));
    }
    let mut heatmap = Heatmap {
        channels: Vec::with_capacity(channels.len()),
    };
    for (line, rows) in channels {
        if rows.len() != h || rows.iter().any(|r| r.len() != w) {
            return Err(bad(line, format!("channel is not {w}x{h}")));
        }
        heatmap.channels.push(Plane::from_vec(w, h, rows.concat()));
    }
    Ok(heatmap)
}

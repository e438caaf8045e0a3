//! Readers and writers for the on-disk formats.
//!
//! * Labels: one box per line, `class_id cx cy w h`, normalized coordinates.
//! * Detections: `class_id confidence cx cy w h`.
//! * Tensors: JSON object with `s`, `b`, `num_classes` and a flat `values`.
//! * Images: binary P6 pixmaps with maxval 255.
//! * Manifests: JSON with `class_names` and `items`.
//!
//! Text lines are single-space separated. Blank lines and lines starting
//! with `#` are skipped. Canonical output writes numbers with 6 decimals.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::ImageBuffer;
use crate::error::{Error, Location, ParseError, ParseErrorKind, Result};
use crate::geometry::{BoundingBox, Detection, GridShape, GridTensor, GroundTruthBox};

/// Coordinates may overshoot `[0, 1]` by this much and are clamped.
pub const COORD_TOLERANCE: f64 = 1e-9;

pub fn decode_utf8(bytes: &[u8]) -> Result<&str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| {
        ParseError::new(
            Location::Offset(e.valid_up_to()),
            ParseErrorKind::InvalidUtf8,
        )
    })
}

/// Yields `(1-based line number, fields)` for every non-blank, non-comment line.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.split('\n').enumerate().filter_map(|(i, line)| {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split(' ').collect()))
        }
    })
}

fn field_count(line: usize, fields: &[&str], expected: usize) -> Result<(), ParseError> {
    if fields.len() != expected {
        return Err(ParseError::at_line(
            line,
            ParseErrorKind::FieldCount {
                expected,
                found: fields.len(),
            },
        ));
    }
    Ok(())
}

fn parse_class(line: usize, s: &str, num_classes: Option<usize>) -> Result<usize, ParseError> {
    let digits = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    let class_id = digits
        .then(|| s.parse::<usize>().ok())
        .flatten()
        .ok_or_else(|| {
            ParseError::at_line(line, ParseErrorKind::InvalidNumber { field: "class_id" })
        })?;
    if let Some(n) = num_classes {
        if class_id >= n {
            return Err(ParseError::at_line(
                line,
                ParseErrorKind::ClassOutOfRange {
                    class_id,
                    num_classes: n,
                },
            ));
        }
    }
    Ok(class_id)
}

/// Parses a value that must lie in `[0, 1]` up to the tolerance.
fn parse_unit(line: usize, s: &str, field: &'static str) -> Result<f64, ParseError> {
    let v: f64 = s
        .parse()
        .map_err(|_| ParseError::at_line(line, ParseErrorKind::InvalidNumber { field }))?;
    if !(-COORD_TOLERANCE..=1.0 + COORD_TOLERANCE).contains(&v) {
        return Err(ParseError::at_line(
            line,
            ParseErrorKind::OutOfRange { field },
        ));
    }
    // `+ 0.0` folds -0.0 into 0.0.
    Ok(v.clamp(0.0, 1.0) + 0.0)
}

fn parse_box(line: usize, f: &[&str]) -> Result<BoundingBox, ParseError> {
    Ok(BoundingBox {
        cx: parse_unit(line, f[0], "cx")?,
        cy: parse_unit(line, f[1], "cy")?,
        w: parse_unit(line, f[2], "w")?,
        h: parse_unit(line, f[3], "h")?,
    })
}

/// Parses `class_id cx cy w h` lines. `num_classes`, when given, bounds the
/// class ids.
pub fn parse_labels(
    text: &str,
    num_classes: Option<usize>,
) -> Result<Vec<GroundTruthBox>, ParseError> {
    data_lines(text)
        .map(|(line, f)| {
            field_count(line, &f, 5)?;
            Ok(GroundTruthBox {
                class_id: parse_class(line, f[0], num_classes)?,
                bbox: parse_box(line, &f[1..])?,
            })
        })
        .collect()
}

/// Parses `class_id confidence cx cy w h` lines.
pub fn parse_detections(
    text: &str,
    num_classes: Option<usize>,
) -> Result<Vec<Detection>, ParseError> {
    data_lines(text)
        .map(|(line, f)| {
            field_count(line, &f, 6)?;
            let class_id = parse_class(line, f[0], num_classes)?;
            let confidence = parse_unit(line, f[1], "confidence")?;
            Ok(Detection {
                class_id,
                bbox: parse_box(line, &f[2..])?,
                confidence,
            })
        })
        .collect()
}

pub fn write_labels(boxes: &[GroundTruthBox]) -> String {
    boxes
        .iter()
        .map(|g| {
            let b = g.bbox;
            format!(
                "{} {:.6} {:.6} {:.6} {:.6}\n",
                g.class_id, b.cx, b.cy, b.w, b.h
            )
        })
        .collect()
}

pub fn write_detections(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| {
            let b = d.bbox;
            format!(
                "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
                d.class_id, d.confidence, b.cx, b.cy, b.w, b.h
            )
        })
        .collect()
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError::new(Location::Offset(self.pos), kind)
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<u64, ParseError> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut v: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos).filter(|b| b.is_ascii_digit()) {
            v = v
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as u64))
                .ok_or_else(|| self.err(ParseErrorKind::Header("number too large")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(if self.pos >= self.bytes.len() {
                self.err(ParseErrorKind::Header("unexpected end of header"))
            } else {
                self.err(ParseErrorKind::Header("expected a decimal number"))
            });
        }
        Ok(v)
    }
}

/// Reads a binary P6 pixmap (maxval 255) into a 3-channel image.
pub fn read_ppm(bytes: &[u8]) -> Result<ImageBuffer, ParseError> {
    let magic = bytes
        .get(..2)
        .ok_or_else(|| ParseError::new(Location::Offset(0), ParseErrorKind::BadMagic))?;
    match magic {
        b"P6" => {}
        [b'P', d @ b'1'..=b'7'] => {
            return Err(ParseError::new(
                Location::Offset(0),
                ParseErrorKind::UnsupportedFormat(format!("P{}", *d as char)),
            ))
        }
        _ => {
            return Err(ParseError::new(
                Location::Offset(0),
                ParseErrorKind::BadMagic,
            ))
        }
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if !cur
        .bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(cur.err(ParseErrorKind::Header("missing separator after magic")));
    }
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval_at = cur.pos;
    let maxval = cur.number()?;
    if width == 0 || height == 0 {
        return Err(cur.err(ParseErrorKind::Header("zero image dimension")));
    }
    if maxval != 255 {
        return Err(ParseError::new(
            Location::Offset(maxval_at),
            ParseErrorKind::UnsupportedMaxval(maxval),
        ));
    }
    if !bytes.get(cur.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(cur.err(ParseErrorKind::Header(
            "missing whitespace before pixel data",
        )));
    }
    let data_start = cur.pos + 1;
    let expected = usize::try_from(width)
        .ok()
        .zip(usize::try_from(height).ok())
        .and_then(|(w, h)| w.checked_mul(h)?.checked_mul(3))
        .ok_or_else(|| cur.err(ParseErrorKind::Header("image dimensions overflow")))?;
    let payload = &bytes[data_start..];
    if payload.len() < expected {
        return Err(ParseError::new(
            Location::Offset(bytes.len()),
            ParseErrorKind::Truncated {
                expected,
                found: payload.len(),
            },
        ));
    }
    let pixels = payload[..expected]
        .iter()
        .map(|&v| v as f64 / 255.0)
        .collect();
    Ok(ImageBuffer::new(width as usize, height as usize, 3, pixels).expect("validated dimensions"))
}

/// Encodes as P6. Single-channel images are written as gray RGB.
pub fn write_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    let to_byte = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    match img.channels() {
        3 => out.extend(img.pixels().iter().map(|&v| to_byte(v))),
        _ => {
            for &v in img.pixels() {
                out.extend([to_byte(v); 3]);
            }
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    s: usize,
    b: usize,
    num_classes: usize,
    values: Vec<f64>,
}

fn json_error(e: &serde_json::Error) -> ParseError {
    ParseError::new(
        Location::LineColumn(e.line(), e.column()),
        ParseErrorKind::Structure(e.to_string()),
    )
}

/// Location of `"key"` in a JSON document, for semantic errors.
fn key_location(text: &str, key: &str) -> Location {
    Location::Offset(text.find(&format!("\"{key}\"")).unwrap_or(0))
}

pub fn read_tensor(text: &str) -> Result<GridTensor, ParseError> {
    let doc: TensorDoc = serde_json::from_str(text).map_err(|e| json_error(&e))?;
    let shape = GridShape::new(doc.s, doc.b, doc.num_classes).map_err(|e| {
        ParseError::new(
            key_location(text, "s"),
            ParseErrorKind::Structure(e.to_string()),
        )
    })?;
    let at = key_location(text, "values");
    if doc.values.len() != shape.len() {
        return Err(ParseError::new(
            at,
            ParseErrorKind::Length {
                expected: shape.len(),
                found: doc.values.len(),
            },
        ));
    }
    GridTensor::new(shape, doc.values)
        .map_err(|e| ParseError::new(at, ParseErrorKind::Structure(e.to_string())))
}

pub fn write_tensor(t: &GridTensor) -> String {
    let shape = t.shape();
    let values: Vec<String> = t.values().iter().map(|v| format!("{v:.6}")).collect();
    format!(
        "{{\n  \"s\": {},\n  \"b\": {},\n  \"num_classes\": {},\n  \"values\": [{}]\n}}\n",
        shape.s,
        shape.b,
        shape.num_classes,
        values.join(", ")
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub image: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
}

/// Class names plus per-image file paths. Relative paths resolve against
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, ParseError> {
    let m: DatasetManifest = serde_json::from_str(text).map_err(|e| json_error(&e))?;
    if m.class_names.is_empty() {
        return Err(ParseError::new(
            key_location(text, "class_names"),
            ParseErrorKind::Structure("at least one class name is required".into()),
        ));
    }
    let empty_path = m.items.iter().position(|it| {
        it.image.as_os_str().is_empty()
            || it.labels.as_os_str().is_empty()
            || it
                .detections
                .as_ref()
                .is_some_and(|d| d.as_os_str().is_empty())
    });
    if let Some(i) = empty_path {
        return Err(ParseError::new(
            key_location(text, "items"),
            ParseErrorKind::Structure(format!("item {i} has an empty path")),
        ));
    }
    Ok(m)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    let text = decode_utf8(&bytes).map_err(|e| Error::in_file(path, e.into()))?;
    Ok(text.to_owned())
}

/// Reads a manifest and returns it with the directory its paths are
/// relative to.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let text = read_text(path)?;
    let m = parse_manifest(&text).map_err(|e| Error::in_file(path, e.into()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

pub fn load_labels(path: &Path, num_classes: Option<usize>) -> Result<Vec<GroundTruthBox>> {
    parse_labels(&read_text(path)?, num_classes).map_err(|e| Error::in_file(path, e.into()))
}

pub fn load_detections(path: &Path, num_classes: Option<usize>) -> Result<Vec<Detection>> {
    parse_detections(&read_text(path)?, num_classes).map_err(|e| Error::in_file(path, e.into()))
}

pub fn load_ppm(path: &Path) -> Result<ImageBuffer> {
    read_ppm(&read_file(path)?).map_err(|e| Error::in_file(path, e.into()))
}

pub fn load_tensor(path: &Path) -> Result<GridTensor> {
    read_tensor(&read_text(path)?).map_err(|e| Error::in_file(path, e.into()))
}

//! Binary masks in raster and run-length form, plus the pixel set arithmetic
//! everything else is built on.
//!
//! Run-length encoding scans the raster row-major and alternates
//! background/foreground runs, always starting with a background run that may
//! be zero. Only that leading run may be zero; every later run is at least one
//! pixel long, so each mask has exactly one encoding.
//!
//! Text form: `<width>x<height>:<run>,<run>,...`
//! JSON form: `{"w":<width>,"h":<height>,"runs":[<run>,...]}`

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ConfusionCounts;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("raster holds {actual} pixels but {width}x{height} needs {expected}")]
    BitCount {
        width: u32,
        height: u32,
        expected: u64,
        actual: u64,
    },
    #[error("runs sum to {actual} but {width}x{height} needs {expected}")]
    RunSumMismatch {
        width: u32,
        height: u32,
        expected: u64,
        actual: u64,
    },
    #[error(
        "zero-length run at position {position}; only the leading background run may be empty"
    )]
    NonCanonical { position: usize },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("malformed RLE text: {0}")]
    Syntax(String),
}

fn check_dims(width: u32, height: u32) -> Result<u64, MaskError> {
    if width == 0 || height == 0 {
        return Err(MaskError::EmptyDimensions { width, height });
    }
    Ok(u64::from(width) * u64::from(height))
}

/// Row-major boolean raster; `true` is foreground.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MaskRaster {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl fmt::Debug for MaskRaster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MaskRaster {}x{}", self.width, self.height)?;
        for row in self.bits.chunks(self.width as usize) {
            let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

impl MaskRaster {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = check_dims(width, height)?;
        if bits.len() as u64 != expected {
            return Err(MaskError::BitCount {
                width,
                height,
                expected,
                actual: bits.len() as u64,
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, MaskError> {
        Self::filled(width, height, false)
    }

    pub fn full(width: u32, height: u32) -> Result<Self, MaskError> {
        Self::filled(width, height, true)
    }

    fn filled(width: u32, height: u32, value: bool) -> Result<Self, MaskError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![value; n as usize],
        })
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> u64 {
        self.bits.len() as u64
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let idx = y as usize * self.width as usize + x as usize;
        self.bits[idx] = value;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a && b)
    }

    fn zip_with(&self, other: &Self, op: impl Fn(bool, bool) -> bool) -> Result<Self, MaskError> {
        self.ensure_same_dims(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    pub fn to_rle(&self) -> RleMask {
        rle_encode(self)
    }
}

/// Canonical run-length encoded mask. Construction always validates, so a
/// value of this type is decodable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RleJson", try_from = "RleJson")]
pub struct RleMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

/// Wire shape of an RLE mask. Not validated; convert with `RleMask::try_from`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleJson {
    pub w: u32,
    pub h: u32,
    pub runs: Vec<u32>,
}

impl From<RleMask> for RleJson {
    fn from(m: RleMask) -> Self {
        Self {
            w: m.width,
            h: m.height,
            runs: m.runs,
        }
    }
}

impl TryFrom<RleJson> for RleMask {
    type Error = MaskError;

    fn try_from(j: RleJson) -> Result<Self, Self::Error> {
        RleMask::new(j.w, j.h, j.runs)
    }
}

impl RleMask {
    pub fn new(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, MaskError> {
        let expected = check_dims(width, height)?;
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(MaskError::NonCanonical { position: pos + 1 });
        }
        let actual: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if actual != expected {
            return Err(MaskError::RunSumMismatch {
                width,
                height,
                expected,
                actual,
            });
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Foreground pixel count, read straight off the odd-indexed runs.
    pub fn area(&self) -> u64 {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| u64::from(r))
            .sum()
    }

    pub fn decode(&self) -> MaskRaster {
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut value = false;
        for &run in &self.runs {
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        MaskRaster {
            width: self.width,
            height: self.height,
            bits,
        }
    }
}

impl fmt::Display for RleMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}:", self.width, self.height)?;
        for (i, run) in self.runs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{run}")?;
        }
        Ok(())
    }
}

impl FromStr for RleMask {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = |msg: &str| MaskError::Syntax(format!("{msg} in {s:?}"));
        let (dims, runs) = s.split_once(':').ok_or_else(|| syntax("missing ':'"))?;
        let (w, h) = dims.split_once('x').ok_or_else(|| syntax("missing 'x'"))?;
        let parse = |t: &str| -> Result<u32, MaskError> {
            if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
                return Err(syntax("expected a decimal integer"));
            }
            t.parse().map_err(|_| syntax("integer out of range"))
        };
        let width = parse(w)?;
        let height = parse(h)?;
        let runs = runs.split(',').map(parse).collect::<Result<Vec<_>, _>>()?;
        RleMask::new(width, height, runs)
    }
}

pub fn rle_encode(m: &MaskRaster) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len: u32 = 0;
    for &b in &m.bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    RleMask {
        width: m.width,
        height: m.height,
        runs,
    }
}

pub fn rle_decode(r: &RleMask) -> MaskRaster {
    r.decode()
}

pub fn area(m: &MaskRaster) -> u64 {
    m.area()
}

/// Intersection over union. Two empty masks count as perfect agreement (1.0).
pub fn iou(a: &MaskRaster, b: &MaskRaster) -> Result<f64, MaskError> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Per-pixel contingency table of `pred` against `gt`.
pub fn confusion(pred: &MaskRaster, gt: &MaskRaster) -> Result<ConfusionCounts, MaskError> {
    pred.ensure_same_dims(gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

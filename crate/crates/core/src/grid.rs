//! Dyadic piecewise-constant model of `L1([0,1])` with Lebesgue measure.
//!
//! A [`GridFunction`] of level `k` holds one value per dyadic cell
//! `[i 2^-k, (i+1) 2^-k)`. Binary operations refine both operands to the finer
//! level first, so sequences at mixed resolutions (peaks of growing height)
//! can be compared directly.
//!
//! Convergence in measure is metrized by the Ky Fan distance
//! `d(f, g) = ∫ min(|f - g|, 1) dμ`, which is exact on the grid.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{FptError, Result};

/// Finest level accepted by the constructors (`2^24` cells).
pub const MAX_LEVEL: u32 = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridFunction {
    level: u32,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    level: u32,
    values: Vec<f64>,
}

impl TryFrom<RawGrid> for GridFunction {
    type Error = FptError;

    fn try_from(raw: RawGrid) -> Result<Self> {
        GridFunction::new(raw.level, raw.values)
    }
}

impl GridFunction {
    pub fn new(level: u32, values: Vec<f64>) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(FptError::InvalidGrid(format!(
                "level {level} exceeds the maximum {MAX_LEVEL}"
            )));
        }
        let cells = 1usize << level;
        if values.len() != cells {
            return Err(FptError::InvalidGrid(format!(
                "level {level} needs {cells} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FptError::InvalidGrid(format!("value at cell {i} is not finite")));
        }
        Ok(Self { level, values })
    }

    pub fn zeros(level: u32) -> Result<Self> {
        Self::constant(level, 0.0)
    }

    pub fn constant(level: u32, c: f64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(FptError::InvalidGrid(format!(
                "level {level} exceeds the maximum {MAX_LEVEL}"
            )));
        }
        Self::new(level, vec![c; 1usize << level])
    }

    /// `height` on the cells whose midpoints fall in `[lo, hi)`, zero elsewhere.
    pub fn indicator(level: u32, lo: f64, hi: f64, height: f64) -> Result<Self> {
        let mut f = Self::zeros(level)?;
        let w = f.cell_width();
        for (i, v) in f.values.iter_mut().enumerate() {
            let mid = (i as f64 + 0.5) * w;
            if mid >= lo && mid < hi {
                *v = height;
            }
        }
        Ok(f)
    }

    pub(crate) fn from_parts_unchecked(level: u32, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), 1usize << level);
        Self { level, values }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_width()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_width()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Duplicates every cell `2^(new_level - level)` times.
    pub fn refine(&self, new_level: u32) -> Result<Self> {
        if new_level < self.level {
            return Err(FptError::Coarsen { from: self.level, to: new_level });
        }
        if new_level > MAX_LEVEL {
            return Err(FptError::InvalidGrid(format!(
                "level {new_level} exceeds the maximum {MAX_LEVEL}"
            )));
        }
        if new_level == self.level {
            return Ok(self.clone());
        }
        let rep = 1usize << (new_level - self.level);
        let values = self
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, rep))
            .collect();
        Ok(Self { level: new_level, values })
    }

    fn at_level(&self, level: u32) -> Cow<'_, Self> {
        if self.level == level {
            Cow::Borrowed(self)
        } else {
            // Levels of valid functions never exceed MAX_LEVEL, so this cannot fail.
            Cow::Owned(self.refine(level).expect("refinement to a valid finer level"))
        }
    }

    /// Both operands at their common (finer) level.
    pub fn align<'a>(&'a self, other: &'a Self) -> (Cow<'a, Self>, Cow<'a, Self>) {
        let level = self.level.max(other.level);
        (self.at_level(level), other.at_level(level))
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Self {
        let (a, b) = self.align(other);
        let values = a.values.iter().zip(&b.values).map(|(&x, &y)| op(x, y)).collect();
        Self { level: a.level, values }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { level: self.level, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn add_constant(&self, c: f64) -> Self {
        Self { level: self.level, values: self.values.iter().map(|v| v + c).collect() }
    }

    /// `lambda * self + (1 - lambda) * other`.
    pub fn combine(&self, lambda: f64, other: &Self) -> Self {
        self.zip_with(other, |x, y| lambda * x + (1.0 - lambda) * y)
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        let (a, b) = self.align(other);
        a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.cell_width()
    }

    pub fn ky_fan_distance(&self, other: &Self) -> f64 {
        let (a, b) = self.align(other);
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs().min(1.0))
            .sum::<f64>()
            * a.cell_width()
    }

    /// Cellwise median of a nonempty family, at the finest level present.
    pub fn cellwise_median(family: &[&Self]) -> Result<Self> {
        let level = family.iter().map(|f| f.level).max().ok_or(FptError::EmptySequence)?;
        let aligned: Vec<Cow<'_, Self>> = family.iter().map(|f| f.at_level(level)).collect();
        let mut column = Vec::with_capacity(aligned.len());
        let values = (0..1usize << level)
            .map(|i| {
                column.clear();
                column.extend(aligned.iter().map(|f| f.values[i]));
                median(&mut column)
            })
            .collect();
        Ok(Self { level, values })
    }
}

pub(crate) fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// The mass-one peak `n χ_[0,1/n)`; `n` must be a power of two dividing `2^level`.
pub fn peak(n: u64, level: u32) -> Result<GridFunction> {
    if n == 0 || !n.is_power_of_two() {
        return Err(FptError::InvalidArgument(format!("peak height {n} is not a power of two")));
    }
    let k = n.trailing_zeros();
    if k > level {
        return Err(FptError::InvalidArgument(format!(
            "peak of height {n} is finer than level {level}"
        )));
    }
    let mut f = GridFunction::zeros(level)?;
    let width = 1usize << (level - k);
    f.values[..width].fill(n as f64);
    Ok(f)
}

/// Rademacher function `r_n`: `+1` on the first block of width `2^-n`, then alternating.
pub fn rademacher(n: u32, level: u32) -> Result<GridFunction> {
    if n == 0 {
        return Err(FptError::InvalidArgument("rademacher index starts at 1".into()));
    }
    if level < n {
        return Err(FptError::InvalidArgument(format!(
            "rademacher r_{n} needs level >= {n}, got {level}"
        )));
    }
    let mut f = GridFunction::zeros(level)?;
    let block = 1usize << (level - n);
    for (i, v) in f.values.iter_mut().enumerate() {
        *v = if (i / block).is_multiple_of(2) { 1.0 } else { -1.0 };
    }
    Ok(f)
}

/// Finite stand-in for `limsup_n` / `liminf_n`: extremes over the trailing
/// `⌈window_fraction · N⌉` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSequenceWindow {
    terms: Vec<f64>,
    window_fraction: f64,
}

pub const DEFAULT_WINDOW: f64 = 0.5;

impl RealSequenceWindow {
    pub fn new(terms: Vec<f64>, window_fraction: f64) -> Result<Self> {
        if !(window_fraction > 0.0 && window_fraction <= 1.0) {
            return Err(FptError::InvalidArgument(format!(
                "window fraction {window_fraction} not in (0, 1]"
            )));
        }
        Ok(Self { terms, window_fraction })
    }

    pub fn terms(&self) -> &[f64] {
        &self.terms
    }

    pub fn tail(&self) -> Result<&[f64]> {
        let n = self.terms.len();
        if n == 0 {
            return Err(FptError::EmptySequence);
        }
        let keep = ((self.window_fraction * n as f64).ceil() as usize).clamp(1, n);
        Ok(&self.terms[n - keep..])
    }

    pub fn limsup_tail(&self) -> Result<f64> {
        Ok(self.tail()?.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn liminf_tail(&self) -> Result<f64> {
        Ok(self.tail()?.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

pub fn limsup_tail(terms: &[f64], window_fraction: f64) -> Result<f64> {
    RealSequenceWindow::new(terms.to_vec(), window_fraction)?.limsup_tail()
}

pub fn liminf_tail(terms: &[f64], window_fraction: f64) -> Result<f64> {
    RealSequenceWindow::new(terms.to_vec(), window_fraction)?.liminf_tail()
}

/// One row per term: `index, l1_norm, ky_fan_to_limit`.
pub fn write_sequence_csv<W: std::io::Write>(
    out: W,
    seq: &[GridFunction],
    limit: &GridFunction,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "l1_norm", "ky_fan_to_limit"])?;
    for (i, f) in seq.iter().enumerate() {
        w.write_record([
            i.to_string(),
            f.l1_norm().to_string(),
            f.ky_fan_distance(limit).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

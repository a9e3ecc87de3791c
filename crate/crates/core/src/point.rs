//! Points of the two ambient spaces: grid functions on `[0,1]`, and
//! coordinate vectors in a disjoint-support basis `(g_n)`.

use serde::{Deserialize, Serialize};

use crate::error::{FptError, Result};
use crate::grid::{median, GridFunction};

/// Coordinates `(s_1, ..., s_M)` of `s_1 (t-1) g_1 + Σ_{n≥2} s_n g_n`, where the
/// `g_n` are normalized with pairwise disjoint supports.
///
/// For the in-measure metric the basis is realized as
/// `g_n = 2^n χ_[2^-n, 2^(1-n))`, so coordinate `n` contributes
/// `min(w_n |Δs_n|, 2^-n)` to the Ky Fan distance (`w_1 = t-1`, `w_n = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoord")]
pub struct CoordPoint {
    t: f64,
    coeffs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoord {
    t: f64,
    coeffs: Vec<f64>,
}

impl TryFrom<RawCoord> for CoordPoint {
    type Error = FptError;

    fn try_from(raw: RawCoord) -> Result<Self> {
        CoordPoint::new(raw.t, raw.coeffs)
    }
}

impl CoordPoint {
    pub fn new(t: f64, coeffs: Vec<f64>) -> Result<Self> {
        if !(t > 1.0 && t < 2.0) {
            return Err(FptError::InvalidArgument(format!("t = {t} not in (1, 2)")));
        }
        if coeffs.len() < 2 {
            return Err(FptError::InvalidArgument("truncation length must be >= 2".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(FptError::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(Self { t, coeffs })
    }

    /// The vertex `e_n` (1-based), i.e. `(t-1) g_1` for `n = 1` and `g_n` otherwise.
    pub fn vertex(t: f64, m: usize, n: usize) -> Result<Self> {
        if n == 0 || n > m {
            return Err(FptError::InvalidArgument(format!("vertex {n} outside 1..={m}")));
        }
        let mut coeffs = vec![0.0; m];
        coeffs[n - 1] = 1.0;
        Self::new(t, coeffs)
    }

    pub fn zeros(t: f64, m: usize) -> Result<Self> {
        Self::new(t, vec![0.0; m])
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 {
            self.t - 1.0
        } else {
            1.0
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    /// L1 norm of the represented function.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().enumerate().map(|(i, s)| self.weight(i) * s.abs()).sum()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.t != other.t || self.coeffs.len() != other.coeffs.len() {
            return Err(FptError::PointMismatch(format!(
                "coordinate spaces differ: (t={}, M={}) vs (t={}, M={})",
                self.t,
                self.coeffs.len(),
                other.t,
                other.coeffs.len()
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_compatible(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| op(a, b)).collect();
        Ok(Self { t: self.t, coeffs })
    }

    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (a, b))| self.weight(i) * (a - b).abs())
            .sum())
    }

    pub fn ky_fan_distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (a, b))| (self.weight(i) * (a - b).abs()).min((-(i as f64 + 1.0)).exp2()))
            .sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Point {
    Grid(GridFunction),
    Coord(CoordPoint),
}

impl From<GridFunction> for Point {
    fn from(f: GridFunction) -> Self {
        Point::Grid(f)
    }
}

impl From<CoordPoint> for Point {
    fn from(c: CoordPoint) -> Self {
        Point::Coord(c)
    }
}

fn mismatch() -> FptError {
    FptError::PointMismatch("grid function combined with coordinate point".into())
}

impl Point {
    pub fn as_grid(&self) -> Option<&GridFunction> {
        match self {
            Point::Grid(f) => Some(f),
            Point::Coord(_) => None,
        }
    }

    pub fn as_coord(&self) -> Option<&CoordPoint> {
        match self {
            Point::Coord(c) => Some(c),
            Point::Grid(_) => None,
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            Point::Grid(f) => f.l1_norm(),
            Point::Coord(c) => c.norm(),
        }
    }

    pub fn distance(&self, other: &Point) -> Result<f64> {
        match (self, other) {
            (Point::Grid(a), Point::Grid(b)) => Ok(a.l1_distance(b)),
            (Point::Coord(a), Point::Coord(b)) => a.distance(b),
            _ => Err(mismatch()),
        }
    }

    pub fn ky_fan_distance(&self, other: &Point) -> Result<f64> {
        match (self, other) {
            (Point::Grid(a), Point::Grid(b)) => Ok(a.ky_fan_distance(b)),
            (Point::Coord(a), Point::Coord(b)) => a.ky_fan_distance(b),
            _ => Err(mismatch()),
        }
    }

    /// `lambda * self + (1 - lambda) * other`.
    pub fn combine(&self, lambda: f64, other: &Point) -> Result<Point> {
        match (self, other) {
            (Point::Grid(a), Point::Grid(b)) => Ok(Point::Grid(a.combine(lambda, b))),
            (Point::Coord(a), Point::Coord(b)) => {
                Ok(Point::Coord(a.zip_with(b, |x, y| lambda * x + (1.0 - lambda) * y)?))
            }
            _ => Err(mismatch()),
        }
    }

    pub fn sub(&self, other: &Point) -> Result<Point> {
        match (self, other) {
            (Point::Grid(a), Point::Grid(b)) => Ok(Point::Grid(a.sub(b))),
            (Point::Coord(a), Point::Coord(b)) => Ok(Point::Coord(a.zip_with(b, |x, y| x - y)?)),
            _ => Err(mismatch()),
        }
    }

    pub fn scale(&self, c: f64) -> Point {
        match self {
            Point::Grid(f) => Point::Grid(f.scale(c)),
            Point::Coord(p) => {
                Point::Coord(CoordPoint { t: p.t, coeffs: p.coeffs.iter().map(|v| c * v).collect() })
            }
        }
    }

    /// The origin of the same space.
    pub fn zero_like(&self) -> Point {
        self.scale(0.0)
    }

    /// In-place running mean: `self <- ((s-1) self + x) / s` for `s >= 1`.
    pub fn mean_update(&mut self, x: &Point, s: usize) -> Result<()> {
        let w = 1.0 / s as f64;
        match (self, x) {
            (Point::Grid(a), Point::Grid(b)) if a.level() == b.level() => {
                for (u, v) in a.values_mut().iter_mut().zip(b.values()) {
                    *u += (v - *u) * w;
                }
                Ok(())
            }
            (Point::Grid(a), Point::Grid(b)) => {
                *a = b.combine(w, a);
                Ok(())
            }
            (Point::Coord(a), Point::Coord(b)) => {
                a.check_compatible(b)?;
                for (u, v) in a.coeffs.iter_mut().zip(&b.coeffs) {
                    *u += (v - *u) * w;
                }
                Ok(())
            }
            _ => Err(mismatch()),
        }
    }

    /// Componentwise median (cellwise for grids, coordinatewise otherwise).
    pub fn componentwise_median(family: &[&Point]) -> Result<Point> {
        match family.first() {
            None => Err(FptError::EmptySequence),
            Some(Point::Grid(_)) => {
                let grids = family
                    .iter()
                    .map(|p| p.as_grid().ok_or_else(mismatch))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Point::Grid(GridFunction::cellwise_median(&grids)?))
            }
            Some(Point::Coord(first)) => {
                let coords = family
                    .iter()
                    .map(|p| {
                        let c = p.as_coord().ok_or_else(mismatch)?;
                        first.check_compatible(c)?;
                        Ok(c)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut column = Vec::with_capacity(coords.len());
                let coeffs = (0..first.coeffs.len())
                    .map(|i| {
                        column.clear();
                        column.extend(coords.iter().map(|c| c.coeffs[i]));
                        median(&mut column)
                    })
                    .collect();
                Ok(Point::Coord(CoordPoint { t: first.t, coeffs }))
            }
        }
    }

    /// Integral of a grid point, total coordinate mass otherwise.
    pub fn mass(&self) -> f64 {
        match self {
            Point::Grid(f) => f.integral(),
            Point::Coord(c) => c.total_mass(),
        }
    }
}

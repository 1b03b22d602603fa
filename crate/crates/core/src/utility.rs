//! Piecewise-linear utility curves, concave envelopes, and gap intervals.
//!
//! A curve is stored as strictly increasing `knots` starting at 0, the value
//! attained AT each knot, one slope per interval, and a `tail_slope` used
//! beyond the last knot. The value at a knot is the right limit, so an upward
//! jump at `knots[i]` shows up as `values[i]` exceeding the left limit
//! `values[i-1] + slopes[i-1] * (knots[i] - knots[i-1])`. For non-decreasing
//! functions this right-continuous normal form is exactly upper
//! semicontinuity, which is all the downstream constructions need.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Envelope and curve values closer than this count as touching.
pub const TOUCH_TOL: f64 = 1e-10;

/// Tolerance on monotonicity checks over tabulated gap endpoints.
pub const TABLE_TOL: f64 = 1e-12;

/// Cap level meaning "no cap": the raw curve is used as its own capped form.
pub const NO_CAP: f64 = f64::INFINITY;

/// Shared representation of both curve kinds.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Piecewise {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub tail_slope: f64,
}

impl Piecewise {
    /// Caller guarantees x ≥ 0.
    pub(crate) fn evaluate(&self, x: f64) -> f64 {
        let last = self.knots.len() - 1;
        if x >= self.knots[last] {
            return self.values[last] + self.tail_slope * (x - self.knots[last]);
        }
        // First index whose knot exceeds x, minus one: at a knot this picks
        // the segment starting there, which is what right-continuity wants.
        let i = self.knots.partition_point(|k| *k <= x) - 1;
        self.values[i] + self.slopes[i] * (x - self.knots[i])
    }

    fn cap(&self, k: f64) -> Piecewise {
        let last = self.knots.len() - 1;
        if k >= self.knots[last] && self.tail_slope == 0.0 {
            return self.clone();
        }
        // Knots strictly below k survive; k itself becomes the final knot.
        let cut = self.knots.partition_point(|kn| *kn < k);
        let mut knots = Vec::with_capacity(cut + 1);
        let mut values = Vec::with_capacity(cut + 1);
        let mut slopes = Vec::with_capacity(cut);
        knots.extend_from_slice(&self.knots[..cut]);
        values.extend_from_slice(&self.values[..cut]);
        if cut > 1 {
            slopes.extend_from_slice(&self.slopes[..cut - 1]);
        }
        knots.push(k);
        values.push(self.evaluate(k));
        slopes.push(if cut - 1 < self.slopes.len() {
            self.slopes[cut - 1]
        } else {
            self.tail_slope
        });
        Piecewise {
            knots,
            values,
            slopes,
            tail_slope: 0.0,
        }
    }
}

/// Common evaluation surface for [`UtilityCurve`] and [`ConcaveCurve`].
pub trait Curve: Sized {
    /// Value at `x ≥ 0`, honoring right-continuity at jumps.
    fn evaluate(&self, x: f64) -> Result<f64>;
    /// The capped curve `x ↦ self(x ∧ k)`.
    fn cap(&self, k: f64) -> Result<Self>;
    /// Last knot; the curve is linear with `tail_slope` beyond it.
    fn domain_end(&self) -> f64;
}

fn check_x(x: f64) -> Result<()> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("evaluation point {x} is negative")));
    }
    Ok(())
}

fn check_cap_level(k: f64) -> Result<()> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("cap level {k} is not positive")));
    }
    Ok(())
}

/// Non-decreasing, right-continuous piecewise-linear utility.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityCurve {
    pl: Piecewise,
}

impl UtilityCurve {
    /// Builds a curve and validates the normal form. `knots` must start at 0
    /// and increase strictly, `slopes` has one entry per interval, jumps may
    /// only go upward, and `tail_slope` must be ≥ 0.
    pub fn new(
        knots: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
        tail_slope: f64,
    ) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Invalid("curve needs at least one knot".into()));
        }
        if values.len() != knots.len() {
            return Err(Error::Invalid(format!(
                "{} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if slopes.len() + 1 != knots.len() {
            return Err(Error::Invalid(format!(
                "{} knots need {} slopes, got {}",
                knots.len(),
                knots.len() - 1,
                slopes.len()
            )));
        }
        if knots[0] != 0.0 {
            return Err(Error::Invalid(format!(
                "knot 0 must sit at 0, got {}",
                knots[0]
            )));
        }
        for (i, w) in knots.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Invalid(format!(
                    "knot {} ({}) does not exceed knot {} ({})",
                    i + 1,
                    w[1],
                    i,
                    w[0]
                )));
            }
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("value at knot {i} is not finite")));
            }
        }
        for (i, s) in slopes.iter().enumerate() {
            if !(*s >= 0.0) || !s.is_finite() {
                return Err(Error::Invalid(format!(
                    "slope {s} on interval {i} is negative or not finite"
                )));
            }
        }
        if !(tail_slope >= 0.0) || !tail_slope.is_finite() {
            return Err(Error::Invalid(format!(
                "tail slope {tail_slope} is negative or not finite"
            )));
        }
        for i in 0..slopes.len() {
            let left_limit = values[i] + slopes[i] * (knots[i + 1] - knots[i]);
            if values[i + 1] < left_limit {
                return Err(Error::Invalid(format!(
                    "downward jump at knot {}: value {} below left limit {}",
                    i + 1,
                    values[i + 1],
                    left_limit
                )));
            }
        }
        Ok(UtilityCurve {
            pl: Piecewise {
                knots,
                values,
                slopes,
                tail_slope,
            },
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.pl.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.pl.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.pl.slopes
    }

    pub fn tail_slope(&self) -> f64 {
        self.pl.tail_slope
    }

    pub(crate) fn piecewise(&self) -> &Piecewise {
        &self.pl
    }
}

impl Curve for UtilityCurve {
    fn evaluate(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.pl.evaluate(x))
    }

    fn cap(&self, k: f64) -> Result<Self> {
        check_cap_level(k)?;
        Ok(UtilityCurve { pl: self.pl.cap(k) })
    }

    fn domain_end(&self) -> f64 {
        *self.pl.knots.last().unwrap()
    }
}

/// Continuous non-decreasing concave piecewise-linear curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcaveCurve {
    pl: Piecewise,
}

impl ConcaveCurve {
    /// Builds a concave curve from knot/value pairs; slopes are derived.
    /// Slopes must be non-negative and non-increasing (tolerance 1e-12 for
    /// rounding in the divisions), and `tail_slope` must not exceed the last
    /// interior slope.
    pub fn new(knots: Vec<f64>, values: Vec<f64>, tail_slope: f64) -> Result<Self> {
        if knots.is_empty() || values.len() != knots.len() {
            return Err(Error::Invalid("knot/value lengths differ or empty".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::Invalid(format!(
                "knot 0 must sit at 0, got {}",
                knots[0]
            )));
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Invalid("knots not strictly increasing".into()));
            }
        }
        let mut slopes = Vec::with_capacity(knots.len() - 1);
        for i in 0..knots.len() - 1 {
            slopes.push((values[i + 1] - values[i]) / (knots[i + 1] - knots[i]));
        }
        for (i, s) in slopes.iter().enumerate() {
            if !(*s >= 0.0) || !s.is_finite() {
                return Err(Error::Invalid(format!(
                    "derived slope {s} on interval {i} is negative or not finite"
                )));
            }
        }
        for (i, w) in slopes.windows(2).enumerate() {
            if w[1] > w[0] + TABLE_TOL {
                return Err(Error::Invalid(format!(
                    "slopes increase across knot {}: {} then {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        if !(tail_slope >= 0.0) || !tail_slope.is_finite() {
            return Err(Error::Invalid("tail slope negative or not finite".into()));
        }
        if let Some(last) = slopes.last() {
            if tail_slope > *last + TABLE_TOL {
                return Err(Error::Invalid(format!(
                    "tail slope {tail_slope} exceeds final slope {last}"
                )));
            }
        }
        Ok(ConcaveCurve {
            pl: Piecewise {
                knots,
                values,
                slopes,
                tail_slope,
            },
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.pl.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.pl.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.pl.slopes
    }

    pub fn tail_slope(&self) -> f64 {
        self.pl.tail_slope
    }

    pub(crate) fn piecewise(&self) -> &Piecewise {
        &self.pl
    }

    /// Reinterprets the hull as a (trivially valid) utility curve.
    pub fn as_utility(&self) -> UtilityCurve {
        UtilityCurve {
            pl: self.pl.clone(),
        }
    }
}

impl Curve for ConcaveCurve {
    fn evaluate(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.pl.evaluate(x))
    }

    fn cap(&self, k: f64) -> Result<Self> {
        check_cap_level(k)?;
        // self(x ∧ k) = min(self(x), self(k)) stays concave and flat past k.
        Ok(ConcaveCurve { pl: self.pl.cap(k) })
    }

    fn domain_end(&self) -> f64 {
        *self.pl.knots.last().unwrap()
    }
}

/// Smallest concave curve dominating `curve` on its domain.
///
/// The envelope is the upper convex hull of the knot points: segments between
/// knots lie below the chord of their endpoints, and jump left-limits are
/// dominated by the knot value above them, so knot points carry all the
/// information. Collinear hull points are retained so that every touching
/// knot is a hull vertex; `gap_interval` relies on that.
pub fn concavify(curve: &UtilityCurve) -> ConcaveCurve {
    let pl = &curve.pl;
    let n = pl.knots.len();
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for p in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Pop b only when strictly below the chord a→p, i.e. when the
            // slope rises across b. Equality keeps touching knots.
            let lhs = (pl.values[b] - pl.values[a]) * (pl.knots[p] - pl.knots[b]);
            let rhs = (pl.values[p] - pl.values[b]) * (pl.knots[b] - pl.knots[a]);
            if lhs < rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    // A positive source tail acts like a point at infinity with that slope.
    while hull.len() >= 2 {
        let a = hull[hull.len() - 2];
        let b = hull[hull.len() - 1];
        let seg = (pl.values[b] - pl.values[a]) / (pl.knots[b] - pl.knots[a]);
        if seg < pl.tail_slope {
            hull.pop();
        } else {
            break;
        }
    }
    let knots: Vec<f64> = hull.iter().map(|&i| pl.knots[i]).collect();
    let values: Vec<f64> = hull.iter().map(|&i| pl.values[i]).collect();
    let mut slopes = Vec::with_capacity(knots.len().saturating_sub(1));
    for i in 0..knots.len() - 1 {
        slopes.push((values[i + 1] - values[i]) / (knots[i + 1] - knots[i]));
    }
    ConcaveCurve {
        pl: Piecewise {
            knots,
            values,
            slopes,
            tail_slope: pl.tail_slope,
        },
    }
}

/// Capped curve `x ↦ curve(x ∧ k)`; see [`Curve::cap`].
pub fn cap(curve: &UtilityCurve, k: f64) -> Result<UtilityCurve> {
    curve.cap(k)
}

/// Maximal interval around a query point where the capped envelope strictly
/// exceeds the capped curve, together with the mixing weight that recovers
/// the query point from the endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct GapInterval {
    /// Cap level ([`NO_CAP`] when the raw curve was used).
    pub v: f64,
    /// Query point.
    pub y: f64,
    /// Left endpoint; `a = y` when curve and envelope agree at `y`.
    pub a: f64,
    /// Right endpoint.
    pub b: f64,
    /// Weight on `a`: `y = lambda·a + (1−lambda)·b`; 1 when `a = b`.
    pub lambda: f64,
    /// Envelope (equivalently curve) value at `a`.
    pub alpha_value: f64,
    /// Envelope (equivalently curve) value at `b`.
    pub beta_value: f64,
}

impl GapInterval {
    pub fn is_degenerate(&self) -> bool {
        self.a == self.b
    }
}

/// Computes the gap interval of `curve` capped at `v` around `y`.
///
/// Pass [`NO_CAP`] to use the raw curve; then `y` must not exceed the last
/// knot. Endpoints come from hull-knot inspection: envelope-touching points
/// of piecewise-linear data are always hull vertices, so no floating search
/// is involved.
pub fn gap_interval(curve: &UtilityCurve, v: f64, y: f64) -> Result<GapInterval> {
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("query point {y} is negative")));
    }
    let capped = if v == NO_CAP {
        if y > curve.domain_end() {
            return Err(Error::Domain(format!(
                "query point {y} beyond last knot {} with no cap",
                curve.domain_end()
            )));
        }
        curve.clone()
    } else {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("cap level {v} is not positive")));
        }
        if y > v {
            return Err(Error::Domain(format!("query point {y} above cap {v}")));
        }
        curve.cap(v)?
    };
    let env = concavify(&capped);
    Ok(gap_against_envelope(&capped, &env, v, y))
}

/// Gap lookup against a precomputed capped curve and its envelope. The
/// caller guarantees `0 ≤ y` and `y` inside the capped domain.
pub(crate) fn gap_against_envelope(
    capped: &UtilityCurve,
    env: &ConcaveCurve,
    v: f64,
    y: f64,
) -> GapInterval {
    let cv = capped.pl.evaluate(y);
    let ev = env.pl.evaluate(y);
    if ev - cv <= TOUCH_TOL {
        return GapInterval {
            v,
            y,
            a: y,
            b: y,
            lambda: 1.0,
            alpha_value: cv,
            beta_value: cv,
        };
    }
    // Strict gap: y sits strictly between two consecutive hull vertices, or
    // past the last vertex when a positive tail slope keeps the envelope
    // strictly above the curve from there on. The latter region has no right
    // endpoint; report b = ∞ with the λ = 1 limit convention.
    let hk = env.knots();
    let last = hk.len() - 1;
    if y >= hk[last] {
        return GapInterval {
            v,
            y,
            a: hk[last],
            b: f64::INFINITY,
            lambda: 1.0,
            alpha_value: capped.pl.evaluate(hk[last]),
            beta_value: f64::INFINITY,
        };
    }
    let i = hk.partition_point(|k| *k <= y) - 1;
    let (a, b) = (hk[i], hk[i + 1]);
    let lambda = (b - y) / (b - a);
    GapInterval {
        v,
        y,
        a,
        b,
        lambda,
        alpha_value: capped.pl.evaluate(a),
        beta_value: capped.pl.evaluate(b),
    }
}

/// One monotonicity defect found in a [`GapTable`].
#[derive(Clone, Debug, PartialEq)]
pub struct TableViolation {
    pub kind: TableViolationKind,
    pub v_index: usize,
    pub y_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableViolationKind {
    /// a(v, ·) decreased between consecutive grid points.
    ANotMonotoneInY,
    /// a(·, y) increased between consecutive cap levels.
    ANotAntitoneInV,
    /// a(v, y + δ) differs from a(v, y) with no curve knot in between.
    ANotRightContinuous,
}

/// Tabulated gap endpoints over a grid of cap levels and query points.
///
/// Cells where the query point exceeds a finite cap level hold NaN and are
/// skipped by the checks.
#[derive(Clone, Debug)]
pub struct GapTable {
    pub v_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    /// Row-major `[v][y]` left endpoints.
    pub a: Vec<f64>,
    /// Row-major `[v][y]` right endpoints.
    pub b: Vec<f64>,
    /// Left endpoints re-evaluated at `y + delta`, for the continuity check.
    pub a_shifted: Vec<f64>,
    pub delta: f64,
}

impl GapTable {
    pub fn a_at(&self, vi: usize, yi: usize) -> f64 {
        self.a[vi * self.y_grid.len() + yi]
    }

    pub fn b_at(&self, vi: usize, yi: usize) -> f64 {
        self.b[vi * self.y_grid.len() + yi]
    }

    /// Checks the monotone structure used by the measurability argument:
    /// a(v,·) non-decreasing and right-continuous in y, a(·,y) non-increasing
    /// in v. Returns every violated cell pair.
    pub fn violations(&self, curve: &UtilityCurve) -> Vec<TableViolation> {
        let ny = self.y_grid.len();
        let mut out = Vec::new();
        for vi in 0..self.v_grid.len() {
            for yi in 0..ny {
                let cur = self.a[vi * ny + yi];
                if !cur.is_finite() {
                    continue;
                }
                if yi + 1 < ny {
                    let next = self.a[vi * ny + yi + 1];
                    if next.is_finite() && next < cur - TABLE_TOL {
                        out.push(TableViolation {
                            kind: TableViolationKind::ANotMonotoneInY,
                            v_index: vi,
                            y_index: yi,
                        });
                    }
                }
                if vi + 1 < self.v_grid.len() {
                    let larger_v = self.a[(vi + 1) * ny + yi];
                    if larger_v.is_finite() && larger_v > cur + TABLE_TOL {
                        out.push(TableViolation {
                            kind: TableViolationKind::ANotAntitoneInV,
                            v_index: vi,
                            y_index: yi,
                        });
                    }
                }
                // On touch cells a(v, y) = y, so moving y by δ legitimately
                // moves the endpoint by δ; only larger jumps are defects.
                let shifted = self.a_shifted[vi * ny + yi];
                if shifted.is_finite() && (shifted - cur).abs() > self.delta + TABLE_TOL {
                    // A knot inside (y, y+δ] legitimately moves the endpoint.
                    let y = self.y_grid[yi];
                    let crossed = curve.knots().iter().any(|k| *k > y && *k <= y + self.delta);
                    if !crossed {
                        out.push(TableViolation {
                            kind: TableViolationKind::ANotRightContinuous,
                            v_index: vi,
                            y_index: yi,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Tabulates gap endpoints over the given grids (strictly increasing; cap
/// levels may end with [`NO_CAP`]).
pub fn envelope_gap_endpoints_table(
    curve: &UtilityCurve,
    v_grid: &[f64],
    y_grid: &[f64],
) -> Result<GapTable> {
    for g in [v_grid, y_grid] {
        for w in g.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Invalid("grid not strictly increasing".into()));
            }
        }
    }
    let delta = 1e-9;
    let ny = y_grid.len();
    let mut a = Vec::with_capacity(v_grid.len() * ny);
    let mut b = Vec::with_capacity(v_grid.len() * ny);
    let mut a_shifted = Vec::with_capacity(v_grid.len() * ny);
    for &v in v_grid {
        for &y in y_grid {
            let in_domain = if v == NO_CAP {
                y <= curve.domain_end()
            } else {
                y <= v
            };
            if !in_domain {
                a.push(f64::NAN);
                b.push(f64::NAN);
                a_shifted.push(f64::NAN);
                continue;
            }
            let gap = gap_interval(curve, v, y)?;
            a.push(gap.a);
            b.push(gap.b);
            let ys = y + delta;
            let shifted_ok = if v == NO_CAP {
                ys <= curve.domain_end()
            } else {
                ys <= v
            };
            a_shifted.push(if shifted_ok {
                gap_interval(curve, v, ys)?.a
            } else {
                f64::NAN
            });
        }
    }
    Ok(GapTable {
        v_grid: v_grid.to_vec(),
        y_grid: y_grid.to_vec(),
        a,
        b,
        a_shifted,
        delta,
    })
}

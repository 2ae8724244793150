//! Piecewise-constant layout of a cohort for risk-set sums.
//!
//! A piece is a maximal interval of one subject's follow-up on which `Z`,
//! `Ω` and `W` are all constant. Every risk-set sum is a sum over pieces of a
//! constant times an index range (of event times or grid cells), so it can be
//! accumulated in a difference array and recovered with one suffix sum.
//! Ranges are closed at the end of follow-up: each piece adds at its last
//! index and subtracts just before its first, so time-fixed subjects are
//! never subtracted and the suffix sums run over positive terms only.

use crate::data::{Cohort, Subject};
use crate::error::Result;
use crate::path::merged_breakpoints;

pub(crate) struct Pieces {
    dim: usize,
    pub subject: Vec<usize>,
    pub start: Vec<f64>,
    /// Next breakpoint, or `Y` for the last piece.
    pub end: Vec<f64>,
    /// Whether the piece is the subject's last, which also covers `t = Y`.
    pub last: Vec<bool>,
    z: Vec<f64>,
    pub omega: Vec<f64>,
    pub w: Vec<f64>,
}

impl Pieces {
    /// Pieces of every observed subject accepted by `keep`.
    pub fn new(cohort: &Cohort, keep: impl Fn(&Subject) -> bool) -> Result<Self> {
        let mut p = Self {
            dim: cohort.dim(),
            subject: Vec::new(),
            start: Vec::new(),
            end: Vec::new(),
            last: Vec::new(),
            z: Vec::new(),
            omega: Vec::new(),
            w: Vec::new(),
        };
        for (i, s) in cohort.subjects().iter().enumerate() {
            if !s.observed() || !keep(s) {
                continue;
            }
            let z = s.z();
            let cuts: Vec<f64> = merged_breakpoints(&[z, &s.omega, &s.w])
                .into_iter()
                .filter(|&b| b <= s.y)
                .collect();
            for (k, &start) in cuts.iter().enumerate() {
                let is_last = k + 1 == cuts.len();
                p.subject.push(i);
                p.start.push(start);
                p.end.push(if is_last { s.y } else { cuts[k + 1] });
                p.last.push(is_last);
                p.z.extend_from_slice(z.eval(start)?);
                p.omega.push(s.omega.eval_scalar(start)?);
                p.w.push(s.w.eval_scalar(start)?);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.subject.len()
    }

    pub fn z(&self, p: usize) -> &[f64] {
        &self.z[p * self.dim..(p + 1) * self.dim]
    }

    /// Indices `lo..hi` of the sorted `times` at which piece `p` is in force
    /// and its subject is still at risk.
    pub fn time_range(&self, p: usize, times: &[f64]) -> (usize, usize) {
        let lo = times.partition_point(|&t| t < self.start[p]);
        let hi = if self.last[p] {
            times.partition_point(|&t| t <= self.end[p])
        } else {
            times.partition_point(|&t| t < self.end[p])
        };
        (lo, hi.max(lo))
    }

    /// Cells `lo..hi` of `grid` spanned by piece `p`. The grid must contain
    /// every piece boundary.
    pub fn cell_range(&self, p: usize, grid: &[f64]) -> (usize, usize) {
        let lo = grid.partition_point(|&g| g < self.start[p]);
        let hi = grid.partition_point(|&g| g < self.end[p]);
        (lo, hi.max(lo))
    }
}

/// Adds `values` to rows `lo..hi` of a difference array with row width
/// `values.len()`.
#[inline]
pub(crate) fn add_range(diff: &mut [f64], lo: usize, hi: usize, values: &[f64]) {
    if lo >= hi {
        return;
    }
    let w = values.len();
    for (a, v) in diff[(hi - 1) * w..hi * w].iter_mut().zip(values) {
        *a += v;
    }
    if lo > 0 {
        for (a, v) in diff[(lo - 1) * w..lo * w].iter_mut().zip(values) {
            *a -= v;
        }
    }
}

#[inline]
pub(crate) fn count_range(diff: &mut [i64], lo: usize, hi: usize) {
    if lo >= hi {
        return;
    }
    diff[hi - 1] += 1;
    if lo > 0 {
        diff[lo - 1] -= 1;
    }
}

/// Turns a difference array into range sums, in place.
pub(crate) fn suffix_sum<T: Copy + std::ops::AddAssign>(diff: &mut [T], width: usize) {
    if width == 0 {
        return;
    }
    let rows = diff.len() / width;
    for k in (0..rows.saturating_sub(1)).rev() {
        for j in 0..width {
            let next = diff[(k + 1) * width + j];
            diff[k * width + j] += next;
        }
    }
}

/// `out[k] = Σ_{j<k} rows[j]`, with `rows.len() / width + 1` rows.
pub(crate) fn prefix_sum(rows: &[f64], width: usize) -> Vec<f64> {
    let n = rows.len() / width.max(1);
    let mut out = vec![0.0; (n + 1) * width];
    for k in 0..n {
        for j in 0..width {
            out[(k + 1) * width + j] = out[k * width + j] + rows[k * width + j];
        }
    }
    out
}

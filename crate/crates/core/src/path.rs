//! Right-continuous step functions of time.
//!
//! Covariate trajectories `Z(t)` and weight processes `Ω(t)`, `W(t)` are all
//! represented as [`CovariatePath`]s: finitely many segments `[t_k, t_{k+1})`
//! with a constant vector value on each, the last segment extending to
//! infinity. Bounded variation holds by construction, and every time integral
//! of such paths is an exact finite sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPath", into = "RawPath")]
pub struct CovariatePath {
    breakpoints: Vec<f64>,
    /// Row-major, one row of length `dim` per segment.
    values: Vec<f64>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct RawPath {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawPath> for CovariatePath {
    type Error = Error;

    fn try_from(raw: RawPath) -> Result<Self> {
        CovariatePath::new(raw.breakpoints, raw.values)
    }
}

impl From<CovariatePath> for RawPath {
    fn from(path: CovariatePath) -> Self {
        RawPath {
            values: (0..path.segments()).map(|k| path.segment(k).to_vec()).collect(),
            breakpoints: path.breakpoints,
        }
    }
}

impl CovariatePath {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let dim = values.first().map(Vec::len).unwrap_or(0);
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidPath("segments have differing dimensions".into()));
        }
        Self::from_flat(breakpoints, values.concat(), dim)
    }

    /// Builds a path from a row-major value buffer.
    pub fn from_flat(breakpoints: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be positive".into()));
        }
        if breakpoints.is_empty() {
            return Err(Error::InvalidPath("at least one segment is required".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidPath(format!(
                "first breakpoint must be 0, got {}",
                breakpoints[0]
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPath("breakpoints must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPath("breakpoints must be strictly increasing".into()));
        }
        if values.len() != breakpoints.len() * dim {
            return Err(Error::InvalidPath(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("values must be finite".into()));
        }
        Ok(Self {
            breakpoints,
            values,
            dim,
        })
    }

    /// A path that takes `value` at every time.
    pub fn constant(value: Vec<f64>) -> Result<Self> {
        let dim = value.len();
        Self::from_flat(vec![0.0], value, dim)
    }

    /// One-dimensional constant path; used for weights.
    pub fn scalar(value: f64) -> Self {
        Self::constant(vec![value]).expect("finite scalar")
    }

    /// One-dimensional step path.
    pub fn scalar_steps(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::from_flat(breakpoints, values, 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segment(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the segment containing `t >= 0`.
    pub fn segment_index(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
    }

    /// Like [`segment_index`](Self::segment_index) but scanning forward from a
    /// known earlier segment; amortized O(1) for increasing query times.
    #[inline]
    pub(crate) fn seek(&self, t: f64, from: usize) -> usize {
        let mut k = from;
        while k + 1 < self.breakpoints.len() && self.breakpoints[k + 1] <= t {
            k += 1;
        }
        k
    }

    pub fn eval(&self, t: f64) -> Result<&[f64]> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("cannot evaluate a path at t = {t}")));
        }
        Ok(self.segment(self.segment_index(t)))
    }

    /// Value of a one-dimensional path at `t`.
    pub fn eval_scalar(&self, t: f64) -> Result<f64> {
        debug_assert_eq!(self.dim, 1);
        self.eval(t).map(|v| v[0])
    }

    /// Exact integral of the path over `[a, b]`, optionally multiplied
    /// pointwise by a one-dimensional `weight` path.
    pub fn integrate(&self, a: f64, b: f64, weight: Option<&CovariatePath>) -> Result<Vec<f64>> {
        if a.is_nan() || b.is_nan() || a < 0.0 {
            return Err(Error::Domain(format!("invalid integration bounds [{a}, {b}]")));
        }
        if a > b {
            return Err(Error::Domain(format!("lower bound {a} exceeds upper bound {b}")));
        }
        if let Some(w) = weight {
            if w.dim != 1 {
                return Err(Error::Domain("weight path must be one-dimensional".into()));
            }
        }
        let mut total = vec![0.0; self.dim];
        if a == b {
            return Ok(total);
        }
        let mut cuts: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(weight.map(|w| w.breakpoints.as_slice()).unwrap_or(&[]))
            .copied()
            .filter(|&t| t > a && t < b)
            .collect();
        cuts.push(a);
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for span in cuts.windows(2) {
            let len = span[1] - span[0];
            let scale = match weight {
                Some(w) => w.segment(w.segment_index(span[0]))[0] * len,
                None => len,
            };
            for (acc, v) in total.iter_mut().zip(self.segment(self.segment_index(span[0]))) {
                *acc += v * scale;
            }
        }
        Ok(total)
    }

    /// The same function with an additional (redundant) breakpoint at `t`.
    pub fn split_at(&self, t: f64) -> Result<Self> {
        if t.is_nan() || t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("cannot split a path at t = {t}")));
        }
        let k = self.segment_index(t);
        if self.breakpoints[k] == t {
            return Ok(self.clone());
        }
        let mut breakpoints = self.breakpoints.clone();
        breakpoints.insert(k + 1, t);
        let mut values = self.values.clone();
        let row = self.segment(k).to_vec();
        let at = (k + 1) * self.dim;
        values.splice(at..at, row);
        Self::from_flat(breakpoints, values, self.dim)
    }

    /// Drops breakpoints whose segment repeats the previous value.
    pub fn simplified(&self) -> Self {
        let mut breakpoints = vec![self.breakpoints[0]];
        let mut values = self.segment(0).to_vec();
        for k in 1..self.segments() {
            if self.segment(k) != &values[values.len() - self.dim..] {
                breakpoints.push(self.breakpoints[k]);
                values.extend_from_slice(self.segment(k));
            }
        }
        Self {
            breakpoints,
            values,
            dim: self.dim,
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Pointwise product with a scalar.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_flat(
            self.breakpoints.clone(),
            self.values.iter().map(|v| v * c).collect(),
            self.dim,
        )
    }

    /// Adds `shift` to every value (location shift of a covariate).
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::Domain("shift has the wrong dimension".into()));
        }
        let values = self
            .values
            .chunks(self.dim)
            .flat_map(|row| row.iter().zip(shift).map(|(v, s)| v + s))
            .collect();
        Self::from_flat(self.breakpoints.clone(), values, self.dim)
    }
}

/// Sorted union of the breakpoints of several paths.
pub fn merged_breakpoints(paths: &[&CovariatePath]) -> Vec<f64> {
    let mut all: Vec<f64> = paths.iter().flat_map(|p| p.breakpoints.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_step() -> CovariatePath {
        CovariatePath::scalar_steps(vec![0.0, 2.0], vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn eval_inside_and_at_breakpoints() {
        let p = two_step();
        assert_eq!(p.eval(1.5).unwrap(), &[1.0]);
        assert_eq!(p.eval(2.0).unwrap(), &[2.0]);
        assert_eq!(p.eval(0.0).unwrap(), &[1.0]);
        assert_eq!(p.eval(1e9).unwrap(), &[2.0]);
    }

    #[test]
    fn constant_extends_forever() {
        let p = CovariatePath::scalar(3.0);
        assert_eq!(p.eval(7.0).unwrap(), &[3.0]);
    }

    #[test]
    fn negative_time_is_a_domain_error() {
        assert!(matches!(two_step().eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn integrate_hand_sums() {
        let p = two_step();
        assert_eq!(p.integrate(0.0, 3.0, None).unwrap(), vec![4.0]);
        assert_eq!(p.integrate(1.3, 1.3, None).unwrap(), vec![0.0]);
        let w = CovariatePath::scalar(2.0);
        let one = CovariatePath::scalar(1.0);
        assert_eq!(one.integrate(0.0, 1.0, Some(&w)).unwrap(), vec![2.0]);
        // weight switching mid-segment: 1*1 + 2*(1*0.5) + 2*(2*1.5)
        let w2 = CovariatePath::scalar_steps(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(p.integrate(0.0, 3.5, Some(&w2)).unwrap(), vec![1.0 + 2.0 + 6.0]);
    }

    #[test]
    fn reversed_interval_is_a_domain_error() {
        assert!(matches!(two_step().integrate(2.0, 1.0, None), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(CovariatePath::scalar_steps(vec![0.5], vec![1.0]).is_err());
        assert!(CovariatePath::scalar_steps(vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(CovariatePath::scalar_steps(vec![0.0], vec![f64::NAN]).is_err());
        assert!(CovariatePath::scalar_steps(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn json_shape() {
        let p = CovariatePath::new(vec![0.0, 1.5], vec![vec![1.0, 0.0], vec![2.0, 1.0]]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"breakpoints":[0.0,1.5],"values":[[1.0,0.0],[2.0,1.0]]}"#);
        let back: CovariatePath = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<CovariatePath>(r#"{"breakpoints":[1.0],"values":[[1.0]]}"#).is_err());
    }

    #[test]
    fn simplify_merges_equal_segments() {
        let p = CovariatePath::scalar_steps(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 3.0]).unwrap();
        let s = p.simplified();
        assert_eq!(s.breakpoints(), &[0.0, 2.0]);
        assert_eq!(s.eval(1.5).unwrap(), &[1.0]);
    }

    fn arb_path() -> impl Strategy<Value = CovariatePath> {
        (1usize..6, 1usize..3).prop_flat_map(|(segs, dim)| {
            (
                proptest::collection::vec(0.01f64..2.0, segs - 1),
                proptest::collection::vec(-5.0f64..5.0, segs * dim),
            )
                .prop_map(move |(gaps, vals)| {
                    let mut bps = vec![0.0];
                    for g in gaps {
                        let last = *bps.last().unwrap();
                        bps.push(last + g);
                    }
                    CovariatePath::from_flat(bps, vals, dim).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn integral_is_additive(p in arb_path(), a in 0.0f64..4.0, l1 in 0.0f64..4.0, l2 in 0.0f64..4.0) {
            let b = a + l1;
            let c = b + l2;
            let whole = p.integrate(a, c, None).unwrap();
            let left = p.integrate(a, b, None).unwrap();
            let right = p.integrate(b, c, None).unwrap();
            for k in 0..p.dim() {
                let scale = 1.0 + whole[k].abs();
                prop_assert!((whole[k] - left[k] - right[k]).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn redundant_breakpoint_preserves_values(p in arb_path(), split in 0.0f64..10.0, probes in proptest::collection::vec(0.0f64..12.0, 20)) {
            let q = p.split_at(split).unwrap();
            for t in probes.into_iter().chain([split, 0.0]) {
                prop_assert_eq!(p.eval(t).unwrap(), q.eval(t).unwrap());
            }
            prop_assert_eq!(q.simplified(), p.simplified());
        }
    }
}

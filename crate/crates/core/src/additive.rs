//! Weighted additive-hazards estimator for case-cohort data.
//!
//! Under `λ(t | Z) = λ₀(t) + θ'Z(t)` the weighted estimating function
//!
//! ```text
//! Ψₙ(θ) = (1/n) Σᵢ [ Ωᵢ(Yᵢ){Zᵢ(Yᵢ) − η̃(Yᵢ)}Δᵢ − ∫₀^{Yᵢ} Ωᵢ(t){Zᵢ(t) − η̃(t)} θ'Zᵢ(t) dt ],
//! η̃(t) = Σⱼ Wⱼ(t) Zⱼ(t) 1(Yⱼ ≥ t) / Σⱼ Wⱼ(t) 1(Yⱼ ≥ t),
//! ```
//!
//! is affine in θ, so the estimate is the solution of one linear system.
//!
//! Between consecutive points of the grid formed by all follow-up times and
//! all covariate and weight breakpoints, every integrand is constant; the
//! time integrals are therefore exact sums over grid cells. The risk set of
//! cell `[g_m, g_{m+1})` is `{j : Yⱼ ≥ g_{m+1}}`, which agrees with
//! `1(Yⱼ ≥ t)` everywhere on the cell except its left endpoint. Cell sums are
//! accumulated piece by piece over ranges of cells; the estimating function
//! itself is evaluated subject by subject, independently of those sums.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cox::Sandwich;
use crate::data::{Cohort, Subject};
use crate::error::{Error, Result};
use crate::linalg::{self, check_nonsingular, dot, matrix_rows, outer_sum};
use crate::sweep::{add_range, count_range, prefix_sum, suffix_sum, Pieces};

const SINGULAR_TOL: f64 = 1e-10;

/// Cumulative baseline `Λ̂₀` split into jumps at event times and a drift that
/// is linear on each grid cell. Increments may be negative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdditiveBaseline {
    pub event_times: Vec<f64>,
    pub jumps: Vec<f64>,
    /// Cell boundaries `g_0 = 0 < … < g_M`.
    pub grid: Vec<f64>,
    /// Drift rate `−θ̂'η̃` on each of the `M` cells.
    pub drift_rate: Vec<f64>,
}

impl AdditiveBaseline {
    pub fn cumulative(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&s| s <= t);
        let jumps: f64 = self.jumps[..k].iter().sum();
        let drift: f64 = self
            .drift_rate
            .iter()
            .enumerate()
            .take_while(|&(m, _)| self.grid[m] < t)
            .map(|(m, rate)| rate * (self.grid[m + 1].min(t) - self.grid[m]))
            .sum();
        jumps + drift
    }

    pub fn jump_at(&self, t: f64) -> f64 {
        match self.event_times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => self.jumps[k],
            Err(_) => 0.0,
        }
    }

    /// Drift rate in force at `t` (zero outside the grid).
    pub fn drift_at(&self, t: f64) -> f64 {
        let m = self.grid.partition_point(|&g| g <= t);
        if m == 0 || m > self.drift_rate.len() {
            0.0
        } else {
            self.drift_rate[m - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFitResult {
    pub theta_hat: Vec<f64>,
    pub se: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub cov: DMatrix<f64>,
    #[serde(rename = "A", with = "matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "matrix_rows")]
    pub b: DMatrix<f64>,
    pub baseline: AdditiveBaseline,
}

struct Member {
    index: usize,
    /// Cells `0..cells` lie inside the subject's risk interval.
    cells: usize,
    /// Event times `t_0..t_events` are `≤ Y`.
    events: usize,
}

/// θ-free layout of a cohort for the additive model: the grid, η̃ on every
/// cell and at every event time, the event term and the slope matrix.
pub struct AdditiveProblem<'a> {
    cohort: &'a Cohort,
    dim: usize,
    n: f64,
    members: Vec<Member>,
    pieces: Pieces,
    cell_ranges: Vec<(usize, usize)>,
    event_ranges: Vec<(usize, usize)>,
    grid: Vec<f64>,
    cell_eta: Vec<f64>,
    cell_has_risk: Vec<bool>,
    times: Vec<f64>,
    event_eta: Vec<f64>,
    event_wsum: Vec<f64>,
    jump_num: Vec<f64>,
    /// `(subject, event index)` of failures with `Ωᵢ(Yᵢ) > 0`.
    failures: Vec<(usize, usize)>,
    /// `Σᵢ Ωᵢ(Yᵢ){Zᵢ(Yᵢ) − η̃(Yᵢ)}Δᵢ`, not divided by n.
    event_term: Vec<f64>,
    /// `(1/n) Σᵢ ∫ Ωᵢ{Zᵢ − η̃}Zᵢ' 1(Yᵢ ≥ t) dt`.
    slope: DMatrix<f64>,
    scale: f64,
}

impl<'a> AdditiveProblem<'a> {
    pub fn new(cohort: &'a Cohort) -> Result<Self> {
        let dim = cohort.dim();
        let subjects = cohort.subjects();
        let active: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].contributes()).collect();

        let mut grid = vec![0.0];
        for &i in &active {
            let s = &subjects[i];
            grid.push(s.y);
            for path in [s.z(), &s.omega, &s.w] {
                grid.extend(path.breakpoints().iter().copied().filter(|&b| b > 0.0 && b < s.y));
            }
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();

        let mut times = Vec::new();
        for &i in &active {
            let s = &subjects[i];
            if s.delta && (s.omega.eval_scalar(s.y)? > 0.0 || s.w.eval_scalar(s.y)? > 0.0) {
                times.push(s.y);
            }
        }
        times.sort_by(f64::total_cmp);
        times.dedup();

        let members: Vec<Member> = active
            .iter()
            .map(|&i| {
                let y = subjects[i].y;
                Member {
                    index: i,
                    cells: grid.partition_point(|&g| g < y),
                    events: times.partition_point(|&t| t <= y),
                }
            })
            .collect();

        let pieces = Pieces::new(cohort, Subject::contributes)?;
        let cell_ranges = (0..pieces.len()).map(|p| pieces.cell_range(p, &grid)).collect();
        let event_ranges = (0..pieces.len()).map(|p| pieces.time_range(p, &times)).collect();
        let mut problem = Self {
            cohort,
            dim,
            n: cohort.len() as f64,
            members,
            pieces,
            cell_ranges,
            event_ranges,
            cell_eta: Vec::new(),
            cell_has_risk: Vec::new(),
            event_eta: Vec::new(),
            event_wsum: Vec::new(),
            jump_num: Vec::new(),
            failures: Vec::new(),
            event_term: vec![0.0; dim],
            slope: DMatrix::zeros(dim, dim),
            scale: 0.0,
            grid,
            times,
        };
        problem.compute_cell_eta()?;
        problem.compute_event_terms()?;
        Ok(problem)
    }

    fn subject(&self, m: &Member) -> &'a Subject {
        &self.cohort.subjects()[m.index]
    }

    /// Calls `f(cell, length, z, omega, w)` on each cell of the subject's
    /// risk interval.
    #[inline]
    fn visit_cells<F: FnMut(usize, f64, &[f64], f64, f64)>(&self, s: &Subject, cells: usize, mut f: F) {
        let z = s.z();
        let (mut zk, mut ok, mut wk) = (0usize, 0usize, 0usize);
        for m in 0..cells {
            let t = self.grid[m];
            zk = z.seek(t, zk);
            ok = s.omega.seek(t, ok);
            wk = s.w.seek(t, wk);
            f(m, self.grid[m + 1] - t, z.segment(zk), s.omega.segment(ok)[0], s.w.segment(wk)[0]);
        }
    }

    /// η̃ on every cell, together with the slope matrix and its scale.
    fn compute_cell_eta(&mut self) -> Result<()> {
        let (d, cells) = (self.dim, self.grid.len() - 1);
        let mut wsum = vec![0.0; cells];
        let mut wz = vec![0.0; cells * d];
        let mut oz = vec![0.0; cells * d];
        let mut ozz = vec![0.0; cells * d * d];
        let mut wcount = vec![0i64; cells];
        let mut ocount = vec![0i64; cells];
        let mut buf = vec![0.0; d * d];
        for (p, &(lo, hi)) in self.cell_ranges.iter().enumerate() {
            if lo == hi {
                continue;
            }
            let z = self.pieces.z(p);
            let (w, omega) = (self.pieces.w[p], self.pieces.omega[p]);
            if w > 0.0 {
                add_range(&mut wsum, lo, hi, &[w]);
                count_range(&mut wcount, lo, hi);
                for (b, zv) in buf[..d].iter_mut().zip(z) {
                    *b = w * zv;
                }
                add_range(&mut wz, lo, hi, &buf[..d]);
            }
            if omega > 0.0 {
                count_range(&mut ocount, lo, hi);
                for (b, zv) in buf[..d].iter_mut().zip(z) {
                    *b = omega * zv;
                }
                add_range(&mut oz, lo, hi, &buf[..d]);
                for r in 0..d {
                    for c in 0..d {
                        buf[r * d + c] = omega * z[r] * z[c];
                    }
                }
                add_range(&mut ozz, lo, hi, &buf);
            }
        }
        suffix_sum(&mut wcount, 1);
        suffix_sum(&mut ocount, 1);
        suffix_sum(&mut wsum, 1);
        suffix_sum(&mut wz, d);
        suffix_sum(&mut oz, d);
        suffix_sum(&mut ozz, d * d);

        let mut slope = DMatrix::zeros(d, d);
        let mut scale = 0.0;
        for m in 0..cells {
            if wcount[m] > 0 {
                for v in &mut wz[m * d..(m + 1) * d] {
                    *v /= wsum[m];
                }
            } else if ocount[m] > 0 {
                return Err(Error::EmptyRiskSet { t: self.grid[m] });
            } else {
                wz[m * d..(m + 1) * d].fill(0.0);
                continue;
            }
            if ocount[m] == 0 {
                continue;
            }
            let len = self.grid[m + 1] - self.grid[m];
            let eta = &wz[m * d..(m + 1) * d];
            for r in 0..d {
                for c in 0..d {
                    slope[(r, c)] += len * (ozz[m * d * d + r * d + c] - eta[r] * oz[m * d + c]);
                }
                scale += len * ozz[m * d * d + r * d + r];
            }
        }
        self.cell_has_risk = wcount.iter().map(|&c| c > 0).collect();
        self.cell_eta = wz;
        self.slope = slope / self.n;
        self.scale = scale / self.n;
        Ok(())
    }

    fn compute_event_terms(&mut self) -> Result<()> {
        let (d, kk) = (self.dim, self.times.len());
        let mut wsum = vec![0.0; kk];
        let mut wz = vec![0.0; kk * d];
        let mut wcount = vec![0i64; kk];
        let mut buf = vec![0.0; d];
        for (p, &(lo, hi)) in self.event_ranges.iter().enumerate() {
            let w = self.pieces.w[p];
            if lo == hi || w == 0.0 {
                continue;
            }
            add_range(&mut wsum, lo, hi, &[w]);
            count_range(&mut wcount, lo, hi);
            for (b, zv) in buf.iter_mut().zip(self.pieces.z(p)) {
                *b = w * zv;
            }
            add_range(&mut wz, lo, hi, &buf);
        }
        suffix_sum(&mut wcount, 1);
        suffix_sum(&mut wsum, 1);
        suffix_sum(&mut wz, d);
        for k in 0..kk {
            if wcount[k] > 0 {
                for v in &mut wz[k * d..(k + 1) * d] {
                    *v /= wsum[k];
                }
            } else {
                wsum[k] = 0.0;
                wz[k * d..(k + 1) * d].fill(0.0);
            }
        }

        let mut jump_num = vec![0.0; kk];
        let mut failures = Vec::new();
        for mem in &self.members {
            let s = self.subject(mem);
            if s.delta && mem.events > 0 && self.times[mem.events - 1] == s.y {
                let k = mem.events - 1;
                jump_num[k] += s.w.eval_scalar(s.y)?;
                if s.omega.eval_scalar(s.y)? > 0.0 {
                    failures.push((mem.index, k));
                }
            }
        }
        let mut event_term = vec![0.0; d];
        for &(i, k) in &failures {
            if wcount[k] == 0 {
                return Err(Error::EmptyRiskSet { t: self.times[k] });
            }
            let s = &self.cohort.subjects()[i];
            let omega = s.omega.eval_scalar(s.y)?;
            for ((acc, z), eta) in event_term.iter_mut().zip(s.z().eval(s.y)?).zip(&wz[k * d..(k + 1) * d]) {
                *acc += omega * (z - eta);
            }
        }
        self.event_eta = wz;
        self.event_wsum = wsum;
        self.jump_num = jump_num;
        self.failures = failures;
        self.event_term = event_term;
        Ok(())
    }

    pub fn event_times(&self) -> &[f64] {
        &self.times
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `η̃` on the cell containing `t`, or `None` outside the grid or where
    /// the weighted risk set is empty.
    pub fn cell_eta_at(&self, t: f64) -> Option<&[f64]> {
        let m = self.grid.partition_point(|&g| g <= t);
        if m == 0 || m >= self.grid.len() || !self.cell_has_risk[m - 1] {
            return None;
        }
        Some(&self.cell_eta[(m - 1) * self.dim..m * self.dim])
    }

    pub fn slope(&self) -> &DMatrix<f64> {
        &self.slope
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain(format!(
                "theta must be a finite vector of length {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Evaluates the estimating function directly (not through the slope
    /// matrix).
    pub fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let d = self.dim;
        let mut integral = vec![0.0; d];
        for mem in &self.members {
            self.visit_cells(self.subject(mem), mem.cells, |m, len, z, omega, _| {
                if omega == 0.0 {
                    return;
                }
                let eta = &self.cell_eta[m * d..(m + 1) * d];
                let c = len * omega * dot(theta, z);
                for ((acc, zv), e) in integral.iter_mut().zip(z).zip(eta) {
                    *acc += c * (zv - e);
                }
            });
        }
        Ok(self
            .event_term
            .iter()
            .zip(&integral)
            .map(|(e, i)| (e - i) / self.n)
            .collect())
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        check_nonsingular(&self.slope, self.scale, SINGULAR_TOL, "slope matrix")?;
        let rhs: Vec<f64> = self.event_term.iter().map(|v| v / self.n).collect();
        linalg::solve(&self.slope, &rhs, "slope matrix")
    }

    pub fn baseline(&self, theta: &[f64]) -> Result<AdditiveBaseline> {
        self.check_theta(theta)?;
        let d = self.dim;
        let jumps = self
            .jump_num
            .iter()
            .zip(&self.event_wsum)
            .map(|(&num, &den)| if num > 0.0 { num / den } else { 0.0 })
            .collect();
        let drift_rate = (0..self.grid.len() - 1)
            .map(|m| {
                if self.cell_has_risk[m] {
                    -dot(theta, &self.cell_eta[m * d..(m + 1) * d])
                } else {
                    0.0
                }
            })
            .collect();
        Ok(AdditiveBaseline {
            event_times: self.times.clone(),
            jumps,
            grid: self.grid.clone(),
            drift_rate,
        })
    }

    pub fn sandwich(&self, theta: &[f64], baseline: &AdditiveBaseline) -> Result<Sandwich> {
        self.check_theta(theta)?;
        let d = self.dim;
        let a = self.slope.clone();
        check_nonsingular(&a, self.scale, SINGULAR_TOL, "slope matrix")?;
        let drift: Vec<f64> = self.grid[..self.grid.len() - 1].iter().map(|&g| baseline.drift_at(g)).collect();
        let jumps: Vec<f64> = self.times.iter().map(|&t| baseline.jump_at(t)).collect();

        let cells = self.grid.len() - 1;
        let len: Vec<f64> = self.grid.windows(2).map(|g| g[1] - g[0]).collect();
        // range sums of len, len·η̃, len·drift, len·drift·η̃, jump, jump·η̃
        let mut by_cell = Vec::with_capacity(cells * 2);
        let mut eta_by_cell = Vec::with_capacity(cells * 2 * d);
        for m in 0..cells {
            let eta = &self.cell_eta[m * d..(m + 1) * d];
            by_cell.extend([len[m], len[m] * drift[m]]);
            eta_by_cell.extend(eta.iter().map(|e| len[m] * e));
            eta_by_cell.extend(eta.iter().map(|e| len[m] * drift[m] * e));
        }
        let cell_sums = prefix_sum(&by_cell, 2);
        let cell_eta_sums = prefix_sum(&eta_by_cell, 2 * d);
        let jump_sums = prefix_sum(&jumps, 1);
        let weighted: Vec<f64> = (0..self.times.len())
            .flat_map(|k| {
                let j = jumps[k];
                self.event_eta[k * d..(k + 1) * d].iter().map(move |e| e * j)
            })
            .collect();
        let jump_eta_sums = prefix_sum(&weighted, d);

        let mut psi = vec![vec![0.0; d]; self.cohort.len()];
        for &(i, k) in &self.failures {
            let s = &self.cohort.subjects()[i];
            let omega = s.omega.eval_scalar(s.y)?;
            let eta = &self.event_eta[k * d..(k + 1) * d];
            for ((p, z), e) in psi[i].iter_mut().zip(s.z().eval(s.y)?).zip(eta) {
                *p += omega * (z - e);
            }
        }
        for p in 0..self.pieces.len() {
            let z = self.pieces.z(p);
            let (omega, w) = (self.pieces.omega[p], self.pieces.w[p]);
            let out = &mut psi[self.pieces.subject[p]];
            let (lo, hi) = self.cell_ranges[p];
            if lo < hi {
                let l = cell_sums[hi * 2] - cell_sums[lo * 2];
                let dr = cell_sums[hi * 2 + 1] - cell_sums[lo * 2 + 1];
                let lin = omega * dot(theta, z);
                for (j, o) in out.iter_mut().enumerate() {
                    let h = cell_eta_sums[hi * 2 * d + j] - cell_eta_sums[lo * 2 * d + j];
                    let g = cell_eta_sums[hi * 2 * d + d + j] - cell_eta_sums[lo * 2 * d + d + j];
                    *o -= lin * (z[j] * l - h) + w * (z[j] * dr - g);
                }
            }
            let (lo, hi) = self.event_ranges[p];
            if lo < hi && w != 0.0 {
                let mass = jump_sums[hi] - jump_sums[lo];
                for (j, o) in out.iter_mut().enumerate() {
                    *o -= w * (z[j] * mass - (jump_eta_sums[hi * d + j] - jump_eta_sums[lo * d + j]));
                }
            }
        }
        let mut b = DMatrix::zeros(d, d);
        for p in &psi {
            outer_sum(&mut b, p);
        }
        b /= self.n;
        let cov = linalg::sandwich(&a, &b, self.n)?;
        Ok(Sandwich { a, b, cov })
    }
}

/// `η̃(t) = Σⱼ Wⱼ(t)Zⱼ(t)1(Yⱼ ≥ t) / Σⱼ Wⱼ(t)1(Yⱼ ≥ t)`, evaluated directly.
pub fn eta_tilde(cohort: &Cohort, t: f64) -> Result<Vec<f64>> {
    crate::cox::eta_hat(cohort, &vec![0.0; cohort.dim()], t)
}

/// Closed-form estimate; the returned value is the exact root of
/// [`additive_score`] up to rounding.
pub fn solve_closed_form(cohort: &Cohort) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let problem = AdditiveProblem::new(cohort)?;
    Ok((problem.solve()?, problem.slope.clone()))
}

pub fn additive_score(cohort: &Cohort, theta: &[f64]) -> Result<Vec<f64>> {
    AdditiveProblem::new(cohort)?.score(theta)
}

/// Jump-plus-drift baseline: `dΛ̂₀(t) = ΣW Δ 1(Y = t) / ΣW 1(Y ≥ t) − θ̂'η̃(t) dt`.
pub fn additive_baseline(cohort: &Cohort, theta_hat: &[f64]) -> Result<AdditiveBaseline> {
    AdditiveProblem::new(cohort)?.baseline(theta_hat)
}

pub fn additive_sandwich(cohort: &Cohort, theta_hat: &[f64], baseline: &AdditiveBaseline) -> Result<Sandwich> {
    AdditiveProblem::new(cohort)?.sandwich(theta_hat, baseline)
}

pub fn fit_additive(cohort: &Cohort) -> Result<AdditiveFitResult> {
    if cohort.events() == 0 {
        return Err(Error::InvalidCohort("no observed failures".into()));
    }
    let problem = AdditiveProblem::new(cohort)?;
    let theta_hat = problem.solve()?;
    let baseline = problem.baseline(&theta_hat)?;
    let sandwich = problem.sandwich(&theta_hat, &baseline)?;
    Ok(AdditiveFitResult {
        se: sandwich.se(),
        theta_hat,
        cov: sandwich.cov,
        a: sandwich.a,
        b: sandwich.b,
        baseline,
    })
}

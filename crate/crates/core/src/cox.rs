//! Weighted Cox estimating equation for case-cohort data.
//!
//! The estimating function is
//!
//! ```text
//! Ψₙ(θ) = (1/n) Σᵢ Ωᵢ(Yᵢ) {Zᵢ(Yᵢ) − η̂(Yᵢ; θ)} Δᵢ,
//! η̂(t; θ) = Σⱼ Wⱼ(t) Zⱼ(t) e^{θ'Zⱼ(t)} 1(Yⱼ ≥ t) / Σⱼ Wⱼ(t) e^{θ'Zⱼ(t)} 1(Yⱼ ≥ t),
//! ```
//!
//! solved by damped Newton iteration. The sandwich covariance plugs the
//! Breslow-type baseline into the per-subject influence terms
//!
//! ```text
//! ψ̂ᵢ = Ωᵢ(Yᵢ){Zᵢ(Yᵢ) − η̂(Yᵢ)}Δᵢ − Σₖ Wᵢ(tₖ){Zᵢ(tₖ) − η̂(tₖ)} e^{θ̂'Zᵢ(tₖ)} 1(Yᵢ ≥ tₖ) dΛ̂₀(tₖ).
//! ```
//!
//! Risk-set aggregates are only ever needed at the distinct event times
//! `t₁ < … < t_K`. Each piece of a subject's follow-up on which its
//! covariates and weight are constant contributes one constant to a range of
//! event times, so the aggregates cost O(pieces + K) per evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::linalg::{self, check_nonsingular, dot, inf_norm, matrix_rows, outer_sum, two_norm};
use crate::sweep::{add_range, count_range, prefix_sum, suffix_sum, Pieces};

/// Relative singular-value threshold for the slope matrix of a fitted model.
const SINGULAR_TOL: f64 = 1e-10;
/// Looser threshold used while iterating; only exact degeneracy stops Newton.
const NEWTON_SINGULAR_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Convergence threshold on `‖Ψₙ(θ)‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// `‖θ‖∞` beyond which the iteration is declared divergent.
    pub divergence_bound: f64,
    /// Step halvings allowed per iteration.
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            divergence_bound: 50.0,
            max_halvings: 30,
        }
    }
}

/// Right-continuous cumulative step function with jumps at `times`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
}

impl StepFunction {
    pub fn cumulative(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        self.increments[..k].iter().sum()
    }

    pub fn increment_at(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => self.increments[k],
            Err(_) => 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    #[serde(with = "matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub cov: DMatrix<f64>,
}

impl Sandwich {
    pub fn se(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOutcome {
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// `‖Ψₙ(θ)‖∞` at the returned estimate.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFitResult {
    pub theta_hat: Vec<f64>,
    pub se: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub cov: DMatrix<f64>,
    #[serde(rename = "A", with = "matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "matrix_rows")]
    pub b: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub baseline: StepFunction,
}

/// Risk-set sums at every event time for one value of θ. All sums are raw
/// (not divided by n).
struct Aggregates {
    s0: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

/// Precomputed, θ-independent layout of a cohort for the Cox estimating
/// equation.
pub struct CoxProblem<'a> {
    cohort: &'a Cohort,
    dim: usize,
    n: f64,
    /// Distinct event times, ascending.
    times: Vec<f64>,
    /// `Σ Ωᵢ(Yᵢ)` over the failures at each event time.
    event_mass: Vec<f64>,
    /// `Σᵢ Ωᵢ(Yᵢ) Zᵢ(Yᵢ) Δᵢ`.
    event_sum: Vec<f64>,
    /// Pieces with positive weight, and the event times each one covers.
    pieces: Pieces,
    ranges: Vec<(usize, usize)>,
    /// `(subject, event index)` for every failure carrying weight.
    failures: Vec<(usize, usize)>,
}

impl<'a> CoxProblem<'a> {
    pub fn new(cohort: &'a Cohort) -> Result<Self> {
        let dim = cohort.dim();
        let mut failures_raw = Vec::new();
        for (i, s) in cohort.subjects().iter().enumerate() {
            if s.delta && s.observed() && s.omega.eval_scalar(s.y)? > 0.0 {
                failures_raw.push(i);
            }
        }
        let mut times: Vec<f64> = failures_raw.iter().map(|&i| cohort.subjects()[i].y).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();

        let mut event_mass = vec![0.0; times.len()];
        let mut event_sum = vec![0.0; dim];
        let mut failures = Vec::with_capacity(failures_raw.len());
        for i in failures_raw {
            let s = &cohort.subjects()[i];
            let k = times.partition_point(|&t| t < s.y);
            let omega = s.omega.eval_scalar(s.y)?;
            event_mass[k] += omega;
            for (acc, z) in event_sum.iter_mut().zip(s.z().eval(s.y)?) {
                *acc += omega * z;
            }
            failures.push((i, k));
        }

        let pieces = Pieces::new(cohort, |s| !s.w.is_zero())?;
        let ranges = (0..pieces.len())
            .map(|p| {
                if pieces.w[p] > 0.0 {
                    pieces.time_range(p, &times)
                } else {
                    (0, 0)
                }
            })
            .collect();

        Ok(Self {
            cohort,
            dim,
            n: cohort.len() as f64,
            times,
            event_mass,
            event_sum,
            pieces,
            ranges,
            failures,
        })
    }

    pub fn event_times(&self) -> &[f64] {
        &self.times
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Domain(format!(
                "theta has length {}, covariates have dimension {}",
                theta.len(),
                self.dim
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("theta must be finite".into()));
        }
        Ok(())
    }

    fn aggregates(&self, theta: &[f64], second: bool) -> Result<Aggregates> {
        let (d, kk) = (self.dim, self.times.len());
        let mut s0 = vec![0.0; kk];
        let mut s1 = vec![0.0; kk * d];
        let mut s2 = if second { vec![0.0; kk * d * d] } else { Vec::new() };
        let mut count = vec![0i64; kk];
        let mut buf = vec![0.0; d * d];
        for (p, &(lo, hi)) in self.ranges.iter().enumerate() {
            if lo == hi {
                continue;
            }
            let z = self.pieces.z(p);
            let we = self.pieces.w[p] * dot(theta, z).exp();
            add_range(&mut s0, lo, hi, &[we]);
            count_range(&mut count, lo, hi);
            for (b, zv) in buf[..d].iter_mut().zip(z) {
                *b = we * zv;
            }
            add_range(&mut s1, lo, hi, &buf[..d]);
            if second {
                for r in 0..d {
                    for c in 0..d {
                        buf[r * d + c] = we * z[r] * z[c];
                    }
                }
                add_range(&mut s2, lo, hi, &buf);
            }
        }
        suffix_sum(&mut count, 1);
        if let Some(k) = count.iter().position(|&c| c == 0) {
            return Err(Error::EmptyRiskSet { t: self.times[k] });
        }
        suffix_sum(&mut s0, 1);
        suffix_sum(&mut s1, d);
        if second {
            suffix_sum(&mut s2, d * d);
        }
        Ok(Aggregates { s0, s1, s2 })
    }

    fn eta_at(&self, agg: &Aggregates, k: usize) -> Vec<f64> {
        let d = self.dim;
        agg.s1[k * d..(k + 1) * d].iter().map(|v| v / agg.s0[k]).collect()
    }

    fn score_from(&self, agg: &Aggregates) -> Vec<f64> {
        let mut out = self.event_sum.clone();
        for k in 0..self.times.len() {
            for (o, eta) in out.iter_mut().zip(self.eta_at(agg, k)) {
                *o -= self.event_mass[k] * eta;
            }
        }
        out.iter().map(|v| v / self.n).collect()
    }

    /// Jacobian and the magnitude of the uncentered second moment, used as
    /// the scale for singularity checks.
    fn jacobian_from(&self, agg: &Aggregates) -> (DMatrix<f64>, f64) {
        let d = self.dim;
        let mut jac = DMatrix::zeros(d, d);
        let mut scale = 0.0;
        for k in 0..self.times.len() {
            let eta = self.eta_at(agg, k);
            let m = self.event_mass[k];
            for r in 0..d {
                for c in 0..d {
                    let second = agg.s2[k * d * d + r * d + c] / agg.s0[k];
                    jac[(r, c)] -= m * (second - eta[r] * eta[c]);
                    if r == c {
                        scale += m * second.abs();
                    }
                }
            }
        }
        (jac / self.n, scale / self.n)
    }

    pub fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(self.score_from(&self.aggregates(theta, false)?))
    }

    pub fn jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(self.jacobian_from(&self.aggregates(theta, true)?).0)
    }

    pub fn newton(&self, theta_init: &[f64], opts: &FitOptions) -> Result<NewtonOutcome> {
        self.check_theta(theta_init)?;
        if !(opts.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", opts.tol)));
        }
        if self.times.is_empty() {
            return Err(Error::InvalidCohort("no observed failures".into()));
        }
        let mut theta = theta_init.to_vec();
        for iter in 0..opts.max_iter {
            let agg = self.aggregates(&theta, true)?;
            let score = self.score_from(&agg);
            let (jac, scale) = self.jacobian_from(&agg);
            check_nonsingular(&jac, scale, NEWTON_SINGULAR_TOL, "score Jacobian")?;
            let step: Vec<f64> = linalg::solve(&jac, &score, "score Jacobian")?
                .into_iter()
                .map(|v| -v)
                .collect();
            let residual = inf_norm(&score);

            if residual <= opts.tol {
                // A vanishing score with a non-vanishing Newton step means the
                // score only decays towards zero as θ grows: no finite root.
                if inf_norm(&step) > 1e-4 * (1.0 + inf_norm(&theta)) {
                    return Err(Error::Divergence {
                        iterations: iter,
                        theta,
                    });
                }
                let polished: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
                let polished_residual = inf_norm(&self.score(&polished)?);
                return Ok(if polished_residual <= residual {
                    NewtonOutcome {
                        theta: polished,
                        iterations: iter + 1,
                        residual: polished_residual,
                    }
                } else {
                    NewtonOutcome {
                        theta,
                        iterations: iter,
                        residual,
                    }
                });
            }

            let merit = two_norm(&score);
            let mut scale_step = 1.0;
            let mut candidate = theta.clone();
            for _ in 0..=opts.max_halvings {
                candidate = theta.iter().zip(&step).map(|(t, s)| t + scale_step * s).collect();
                if inf_norm(&candidate) > opts.divergence_bound {
                    scale_step *= 0.5;
                    continue;
                }
                if two_norm(&self.score(&candidate)?) < merit {
                    break;
                }
                scale_step *= 0.5;
            }
            theta = candidate;
            if inf_norm(&theta) > opts.divergence_bound {
                return Err(Error::Divergence {
                    iterations: iter + 1,
                    theta,
                });
            }
        }
        let residual = inf_norm(&self.score(&theta)?);
        if residual <= opts.tol {
            return Ok(NewtonOutcome {
                theta,
                iterations: opts.max_iter,
                residual,
            });
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            theta,
            residual,
        })
    }

    pub fn breslow(&self, theta: &[f64]) -> Result<StepFunction> {
        self.check_theta(theta)?;
        let agg = self.aggregates(theta, false)?;
        Ok(StepFunction {
            times: self.times.clone(),
            increments: self.event_mass.iter().zip(&agg.s0).map(|(m, s0)| m / s0).collect(),
        })
    }

    pub fn sandwich(&self, theta: &[f64], baseline: &StepFunction) -> Result<Sandwich> {
        self.check_theta(theta)?;
        let d = self.dim;
        let agg = self.aggregates(theta, true)?;
        let (jac, scale) = self.jacobian_from(&agg);
        let a = -jac;
        check_nonsingular(&a, scale, SINGULAR_TOL, "A")?;

        let etas: Vec<Vec<f64>> = (0..self.times.len()).map(|k| self.eta_at(&agg, k)).collect();
        let jumps: Vec<f64> = self.times.iter().map(|&t| baseline.increment_at(t)).collect();

        let mut psi = vec![vec![0.0; d]; self.cohort.len()];
        for &(i, k) in &self.failures {
            let s = &self.cohort.subjects()[i];
            let omega = s.omega.eval_scalar(s.y)?;
            for ((p, z), eta) in psi[i].iter_mut().zip(s.z().eval(s.y)?).zip(&etas[k]) {
                *p += omega * (z - eta);
            }
        }
        // Σₖ dΛ̂ₖ and Σₖ η̂ₖ dΛ̂ₖ over any range of event times
        let jump_sum = prefix_sum(&jumps, 1);
        let weighted: Vec<f64> = etas
            .iter()
            .zip(&jumps)
            .flat_map(|(eta, j)| eta.iter().map(move |e| e * j))
            .collect();
        let eta_sum = prefix_sum(&weighted, d);
        for (p, &(lo, hi)) in self.ranges.iter().enumerate() {
            if lo == hi {
                continue;
            }
            let z = self.pieces.z(p);
            let c = self.pieces.w[p] * dot(theta, z).exp();
            let mass = jump_sum[hi] - jump_sum[lo];
            for (j, pv) in psi[self.pieces.subject[p]].iter_mut().enumerate() {
                *pv -= c * (z[j] * mass - (eta_sum[hi * d + j] - eta_sum[lo * d + j]));
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

/// Weighted risk-set average `η̂(t; θ) = D1(t, θ) / D0(t, θ)`.
pub fn eta_hat(cohort: &Cohort, theta: &[f64], t: f64) -> Result<Vec<f64>> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("negative time {t}")));
    }
    let mut num = vec![0.0; cohort.dim()];
    let mut den = 0.0;
    for s in cohort.subjects().iter().filter(|s| s.observed() && s.y >= t) {
        let w = s.w.eval_scalar(t)?;
        if w == 0.0 {
            continue;
        }
        let z = s.z().eval(t)?;
        let we = w * dot(theta, z).exp();
        den += we;
        for (n, zv) in num.iter_mut().zip(z) {
            *n += we * zv;
        }
    }
    if !(den > 0.0) {
        return Err(Error::EmptyRiskSet { t });
    }
    Ok(num.into_iter().map(|v| v / den).collect())
}

pub fn score(cohort: &Cohort, theta: &[f64]) -> Result<Vec<f64>> {
    CoxProblem::new(cohort)?.score(theta)
}

/// Analytic `∂Ψₙ/∂θ = −(1/n) Σᵢ ΩᵢΔᵢ [D2/D0 − (D1/D0)(D1/D0)'](Yᵢ, θ)`.
pub fn score_jacobian(cohort: &Cohort, theta: &[f64]) -> Result<DMatrix<f64>> {
    CoxProblem::new(cohort)?.jacobian(theta)
}

pub fn newton_solve(cohort: &Cohort, theta_init: &[f64], opts: &FitOptions) -> Result<NewtonOutcome> {
    CoxProblem::new(cohort)?.newton(theta_init, opts)
}

/// `dΛ̂₀(tₖ) = Σⱼ Ωⱼ Δⱼ 1(Yⱼ = tₖ) / Σⱼ Wⱼ(tₖ) e^{θ̂'Zⱼ(tₖ)} 1(Yⱼ ≥ tₖ)`.
pub fn breslow_baseline(cohort: &Cohort, theta_hat: &[f64]) -> Result<StepFunction> {
    CoxProblem::new(cohort)?.breslow(theta_hat)
}

pub fn sandwich_variance(cohort: &Cohort, theta_hat: &[f64], baseline: &StepFunction) -> Result<Sandwich> {
    CoxProblem::new(cohort)?.sandwich(theta_hat, baseline)
}

/// Point estimate, Breslow baseline and sandwich covariance in one call.
pub fn fit_cox(cohort: &Cohort, opts: &FitOptions) -> Result<CoxFitResult> {
    let problem = CoxProblem::new(cohort)?;
    let outcome = problem.newton(&vec![0.0; cohort.dim()], opts)?;
    let baseline = problem.breslow(&outcome.theta)?;
    let sandwich = problem.sandwich(&outcome.theta, &baseline)?;
    Ok(CoxFitResult {
        se: sandwich.se(),
        theta_hat: outcome.theta,
        cov: sandwich.cov,
        a: sandwich.a,
        b: sandwich.b,
        iterations: outcome.iterations,
        converged: true,
        residual: outcome.residual,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::{fixed_cohort, random_cohort};
    use crate::data::{Subject, DEFAULT_PI_FLOOR};
    use crate::design::{build_weights, sample_subcohort, SamplingPlan, WeightScheme};
    use crate::path::CovariatePath;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    /// Full-cohort partial-likelihood score, one risk set at a time.
    fn partial_likelihood_score(cohort: &Cohort, theta: &[f64]) -> Vec<f64> {
        let d = cohort.dim();
        let mut total = vec![0.0; d];
        for s in cohort.subjects().iter().filter(|s| s.delta) {
            let t = s.y;
            let mut num = vec![0.0; d];
            let mut den = 0.0;
            for j in cohort.subjects().iter().filter(|j| j.y >= t) {
                let z = j.z().eval(t).unwrap();
                let e = dot(theta, z).exp();
                den += e;
                for (n, zv) in num.iter_mut().zip(z) {
                    *n += e * zv;
                }
            }
            for ((acc, z), n) in total.iter_mut().zip(s.z().eval(t).unwrap()).zip(&num) {
                *acc += z - n / den;
            }
        }
        total.iter().map(|v| v / cohort.len() as f64).collect()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let mut flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if (fm > 0.0) == (flo > 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn analytic_cohort() -> Cohort {
        fixed_cohort(&[(1.0, true, 0.0), (2.0, true, 1.0), (3.0, false, 0.0), (3.0, false, 1.0)])
    }

    #[test]
    fn eta_hat_examples() {
        let c = fixed_cohort(&[(2.0, true, 0.0), (3.0, true, 1.0), (1.0, true, 1.0)]);
        assert_eq!(eta_hat(&c, &[0.0], 1.5).unwrap(), vec![0.5]);
        assert!((eta_hat(&c, &[0.0], 0.5).unwrap()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eta_hat(&c, &[0.0], 2.5).unwrap(), vec![1.0]);
        assert!(matches!(eta_hat(&c, &[0.0], 3.5), Err(Error::EmptyRiskSet { .. })));
        assert!(matches!(eta_hat(&c, &[0.0], -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn score_example() {
        let c = fixed_cohort(&[(1.0, true, 1.0), (2.0, true, 0.0), (3.0, false, 1.0)]);
        assert!((score(&c, &[0.0]).unwrap()[0] + 1.0 / 18.0).abs() < 1e-15);
        let same = fixed_cohort(&[(1.0, true, 0.5), (2.0, true, 0.5), (3.0, false, 0.5)]);
        assert_eq!(score(&same, &[0.7]).unwrap(), vec![0.0]);
        assert_eq!(score_jacobian(&same, &[0.7]).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn newton_finds_analytic_root() {
        let c = analytic_cohort();
        let out = newton_solve(&c, &[0.0], &FitOptions::default()).unwrap();
        assert!((out.theta[0] + 0.5 * LN_2).abs() < 1e-12);
        assert!(out.residual <= 1e-10);
        let f = |t: f64| score(&c, &[t]).unwrap()[0];
        assert!((bisect(f, -5.0, 5.0) - out.theta[0]).abs() < 1e-8);
    }

    #[test]
    fn separated_data_diverge() {
        let c = fixed_cohort(&[(1.0, true, 1.0), (2.0, true, 0.0)]);
        let err = newton_solve(&c, &[0.0], &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn no_events_is_rejected() {
        let c = fixed_cohort(&[(1.0, false, 1.0), (2.0, false, 0.0)]);
        assert!(fit_cox(&c, &FitOptions::default()).is_err());
        assert!(breslow_baseline(&c, &[0.0]).unwrap().is_empty());
    }

    #[test]
    fn breslow_examples() {
        let c = fixed_cohort(&[(1.0, true, 0.0), (2.0, false, 1.0), (3.0, false, 0.0)]);
        let b = breslow_baseline(&c, &[0.0]).unwrap();
        assert_eq!(b.times, vec![1.0]);
        assert!((b.increments[0] - 1.0 / 3.0).abs() < 1e-15);

        let rows: Vec<(f64, bool, f64)> = (0..12).map(|i| (0.3 + i as f64 * 0.25, i % 3 != 0, 0.0)).collect();
        let c = fixed_cohort(&rows);
        let b = breslow_baseline(&c, &[0.0]).unwrap();
        // Nelson–Aalen: events over number at risk, accumulated
        let mut na = 0.0;
        for &(y, d, _) in &rows {
            if d {
                na += 1.0 / rows.iter().filter(|r| r.0 >= y).count() as f64;
            }
            assert!((b.cumulative(y) - na).abs() < 1e-14);
        }
    }

    #[test]
    fn sandwich_is_positive() {
        let c = random_cohort(3, 60, 1, true);
        let fit = fit_cox(&c, &FitOptions::default()).unwrap();
        assert!(fit.cov[(0, 0)] > 0.0);
        assert!((fit.se[0] - fit.cov[(0, 0)].sqrt()).abs() < 1e-15);
        assert!(fit.b[(0, 0)] >= 0.0);
        assert!(fit.converged);
    }

    #[test]
    fn fit_json_has_contract_fields() {
        let fit = fit_cox(&analytic_cohort(), &FitOptions::default()).unwrap();
        let v = serde_json::to_value(&fit).unwrap();
        for key in ["theta_hat", "se", "cov", "A", "B", "iterations", "converged", "baseline"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: CoxFitResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn ipw_with_unit_pi_equals_full_data() {
        let c = random_cohort(11, 40, 2, true);
        let sampled = sample_subcohort(&c, &SamplingPlan::simple(1.0, 5), DEFAULT_PI_FLOOR).unwrap();
        let ipw = build_weights(&sampled, &WeightScheme::IpwKl, DEFAULT_PI_FLOOR).unwrap();
        let full = build_weights(&c, &WeightScheme::FullData, DEFAULT_PI_FLOOR).unwrap();
        let opts = FitOptions::default();
        assert_eq!(fit_cox(&ipw, &opts).unwrap(), fit_cox(&full, &opts).unwrap());
    }

    #[test]
    fn masked_subjects_are_never_read() {
        let c = random_cohort(5, 80, 1, false);
        let sampled = sample_subcohort(&c, &SamplingPlan::simple(0.3, 9), DEFAULT_PI_FLOOR).unwrap();
        let ipw = build_weights(&sampled, &WeightScheme::IpwKl, DEFAULT_PI_FLOOR).unwrap();
        assert!(ipw.subjects().iter().any(|s| !s.observed()));
        fit_cox(&ipw, &FitOptions::default()).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn matches_partial_likelihood(seed in any::<u64>(), n in 5usize..30, d in 1usize..4, theta in -1.0f64..1.0) {
            let c = random_cohort(seed, n, d, true);
            let th = vec![theta; d];
            let fast = score(&c, &th).unwrap();
            let direct = partial_likelihood_score(&c, &th);
            for (a, b) in fast.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }

        #[test]
        fn jacobian_matches_finite_differences(seed in any::<u64>(), n in 5usize..50, d in 1usize..4, theta in -1.0f64..1.0) {
            let c = random_cohort(seed, n, d, true);
            let th: Vec<f64> = (0..d).map(|j| theta * (j as f64 + 1.0) / d as f64).collect();
            let jac = score_jacobian(&c, &th).unwrap();
            let h = 1e-5;
            for col in 0..d {
                let mut up = th.clone();
                let mut down = th.clone();
                up[col] += h;
                down[col] -= h;
                let su = score(&c, &up).unwrap();
                let sd = score(&c, &down).unwrap();
                for row in 0..d {
                    let fd = (su[row] - sd[row]) / (2.0 * h);
                    prop_assert!((jac[(row, col)] - fd).abs() <= 1e-6);
                }
            }
            // weighted covariance form: symmetric and negative semidefinite
            prop_assert!((&jac - jac.transpose()).amax() <= 1e-14);
            prop_assert!(jac.clone().symmetric_eigenvalues().iter().all(|&l| l <= 1e-12));
        }

        #[test]
        fn location_shift_leaves_estimate(seed in 0u64..1000, c0 in -2.0f64..2.0) {
            let c = random_cohort(seed, 40, 1, true);
            let opts = FitOptions::default();
            let Ok(fit) = fit_cox(&c, &opts) else { return Ok(()); };
            let shifted = c.map_subjects(|s| {
                let z = s.z().shifted(&[c0])?;
                Ok(Subject::new(s.id, s.y, s.delta, z))
            }).unwrap();
            let refit = fit_cox(&shifted, &opts).unwrap();
            prop_assert!((fit.theta_hat[0] - refit.theta_hat[0]).abs() <= 1e-9);
            let t = c.subjects()[0].y;
            let e = eta_hat(&c, &fit.theta_hat, t).unwrap()[0];
            let es = eta_hat(&shifted, &fit.theta_hat, t).unwrap()[0];
            prop_assert!((es - e - c0).abs() <= 1e-12);
        }

        #[test]
        fn self_prentice_scale_invariance(seed in 0u64..1000, k in 0.1f64..10.0) {
            let c = random_cohort(seed, 60, 1, false);
            let sampled = sample_subcohort(&c, &SamplingPlan::simple(0.5, seed), DEFAULT_PI_FLOOR).unwrap();
            let sp = build_weights(&sampled, &WeightScheme::SelfPrentice, DEFAULT_PI_FLOOR).unwrap();
            let scaled = sp.map_subjects(|s| {
                let w = s.w.scaled(k)?;
                Ok(s.clone().with_weights(s.omega.clone(), w))
            }).unwrap();
            let th = [0.3];
            let a = score(&sp, &th);
            let b = score(&scaled, &th);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a[0] - b[0]).abs() <= 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "scaling changed feasibility"),
            }
            let t = sp.subjects().iter().filter(|s| s.r).map(|s| s.y).fold(f64::INFINITY, f64::min);
            if t.is_finite() {
                let ea = eta_hat(&sp, &th, t).unwrap()[0];
                let eb = eta_hat(&scaled, &th, t).unwrap()[0];
                prop_assert!((ea - eb).abs() <= 1e-12);
            }
        }

        #[test]
        fn converged_fit_zeroes_score(seed in any::<u64>(), d in 1usize..3) {
            let c = random_cohort(seed, 40, d, true);
            if let Ok(out) = newton_solve(&c, &vec![0.0; d], &FitOptions::default()) {
                prop_assert!(inf_norm(&score(&c, &out.theta).unwrap()) <= 1e-10);
            }
        }
    }

    #[test]
    fn constant_weight_path_changes_nothing() {
        let c = random_cohort(2, 30, 1, true);
        let split = c
            .map_subjects(|s| {
                let w = CovariatePath::scalar_steps(vec![0.0, s.y / 2.0], vec![1.0, 1.0])?;
                Ok(s.clone().with_weights(s.omega.clone(), w))
            })
            .unwrap();
        let a = score(&c, &[0.4]).unwrap()[0];
        let b = score(&split, &[0.4]).unwrap()[0];
        assert!((a - b).abs() < 1e-15);
    }
}

//! Synthetic cohorts under the Cox or additive hazards model.
//!
//! Covariate paths and baseline hazards are step functions, so the cumulative
//! hazard `H(t)` is piecewise linear on their merged breakpoints and event
//! times are obtained by inverting it exactly, segment by segment.

use rand::distr::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Subject};
use crate::error::{Error, Result};
use crate::path::{merged_breakpoints, CovariatePath};
use crate::rng::{derive_seed, substream, DOMAIN_SIMULATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `λ(t) = λ₀(t) exp(θ'Z(t))`
    Cox,
    /// `λ(t) = λ₀(t) + θ'Z(t)`
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub theta0: Vec<f64>,
    /// Baseline hazard `λ₀(t)`, one-dimensional.
    pub baseline: CovariatePath,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CensoringSpec {
    /// Rate zero means no censoring before the horizon.
    Exponential { rate: f64 },
    Uniform { upper: f64 },
}

fn unit_levels() -> [f64; 2] {
    [0.0, 1.0]
}

/// Law of each covariate coordinate; coordinates are drawn independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateGenerator {
    /// `levels[1]` with probability `p`, else `levels[0]`, constant in time.
    FixedBinary {
        p: f64,
        #[serde(default = "unit_levels")]
        levels: [f64; 2],
    },
    /// Normal(mean, sd) conditioned on `|z - mean| <= bound`, constant in time.
    FixedGaussianTruncated { mean: f64, sd: f64, bound: f64 },
    /// Starts at `levels[1]` with probability `p` (else `levels[0]`) and
    /// switches to the other level at an Exp(`rate`) time.
    PiecewiseSwitch {
        p: f64,
        rate: f64,
        #[serde(default = "unit_levels")]
        levels: [f64; 2],
    },
}

impl CovariateGenerator {
    /// Closed interval containing every value the generator can produce.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::FixedBinary { levels, .. } | Self::PiecewiseSwitch { levels, .. } => {
                (levels[0].min(levels[1]), levels[0].max(levels[1]))
            }
            Self::FixedGaussianTruncated { mean, bound, .. } => (mean - bound, mean + bound),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::FixedBinary { p, levels } => (0.0..=1.0).contains(p) && levels.iter().all(|l| l.is_finite()),
            Self::FixedGaussianTruncated { mean, sd, bound } => {
                mean.is_finite() && *sd > 0.0 && sd.is_finite() && *bound > 0.0 && bound.is_finite()
            }
            Self::PiecewiseSwitch { p, rate, levels } => {
                (0.0..=1.0).contains(p)
                    && *rate >= 0.0
                    && rate.is_finite()
                    && levels.iter().all(|l| l.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid covariate generator {self:?}")))
        }
    }

    /// Returns `(breakpoints, values)` for one coordinate.
    fn draw_coordinate(&self, rng: &mut ChaCha8Rng, tau: f64) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Self::FixedBinary { p, levels } => {
                let hi = rng.random::<f64>() < p;
                (vec![0.0], vec![levels[hi as usize]])
            }
            Self::FixedGaussianTruncated { mean, sd, bound } => {
                let normal = Normal::new(mean, sd).expect("validated");
                loop {
                    let z = normal.sample(rng);
                    if (z - mean).abs() <= bound {
                        return (vec![0.0], vec![z]);
                    }
                }
            }
            Self::PiecewiseSwitch { p, rate, levels } => {
                let hi = rng.random::<f64>() < p;
                let start = levels[hi as usize];
                let switch = if rate > 0.0 {
                    Exp::new(rate).expect("validated").sample(rng)
                } else {
                    f64::INFINITY
                };
                if switch > 0.0 && switch < tau && levels[0] != levels[1] {
                    (vec![0.0, switch], vec![start, levels[!hi as usize]])
                } else {
                    (vec![0.0], vec![start])
                }
            }
        }
    }

    /// Stratum label (the auxiliary variable Z*) for a path drawn by this
    /// generator: the initial level of the first coordinate for discrete
    /// generators, a single stratum otherwise.
    fn stratum(&self, z: &CovariatePath) -> String {
        match self {
            Self::FixedBinary { .. } | Self::PiecewiseSwitch { .. } => format!("{}", z.segment(0)[0]),
            Self::FixedGaussianTruncated { .. } => "all".into(),
        }
    }

    pub fn generate(&self, rng: &mut ChaCha8Rng, dim: usize, tau: f64) -> Result<CovariatePath> {
        let coords: Vec<(Vec<f64>, Vec<f64>)> = (0..dim).map(|_| self.draw_coordinate(rng, tau)).collect();
        if coords.iter().all(|c| c.0.len() == 1) {
            return CovariatePath::constant(coords.iter().map(|c| c.1[0]).collect());
        }
        let mut grid: Vec<f64> = coords.iter().flat_map(|c| c.0.iter().copied()).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &t in &grid {
            for (bps, vals) in &coords {
                values.push(vals[bps.partition_point(|&b| b <= t) - 1]);
            }
        }
        CovariatePath::from_flat(grid, values, dim)
    }
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    /// Checks the model against the covariate generator's support; for the
    /// additive family the hazard must stay nonnegative for every reachable
    /// covariate value.
    pub fn validate(&self, covgen: &CovariateGenerator) -> Result<()> {
        if self.theta0.is_empty() || self.theta0.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("theta0 must be a nonempty finite vector".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.tau)));
        }
        if self.baseline.dim() != 1 {
            return Err(Error::Config("baseline hazard must be one-dimensional".into()));
        }
        if self.baseline.min_value() < 0.0 {
            return Err(Error::ModelViolation("baseline hazard is negative".into()));
        }
        covgen.validate()?;
        if self.family == Family::Additive {
            let (lo, hi) = covgen.support();
            let worst: f64 = self.theta0.iter().map(|t| (t * lo).min(t * hi)).sum();
            if self.baseline.min_value() + worst < 0.0 {
                return Err(Error::ModelViolation(format!(
                    "additive hazard can reach {} < 0 on the covariate support",
                    self.baseline.min_value() + worst
                )));
            }
        }
        Ok(())
    }

    fn rate(&self, lambda0: f64, z: &[f64]) -> Result<f64> {
        let lp: f64 = self.theta0.iter().zip(z).map(|(t, z)| t * z).sum();
        match self.family {
            Family::Cox => Ok(lambda0 * lp.exp()),
            Family::Additive => {
                let r = lambda0 + lp;
                if r < 0.0 {
                    Err(Error::ModelViolation(format!("additive hazard {r} < 0")))
                } else {
                    Ok(r)
                }
            }
        }
    }

    /// `(start, end, hazard)` for each constant-hazard piece of `[0, ∞)`.
    fn hazard_pieces(&self, z: &CovariatePath) -> Result<Vec<(f64, f64, f64)>> {
        if z.dim() != self.dim() {
            return Err(Error::Domain(format!(
                "covariate dimension {} does not match theta0 length {}",
                z.dim(),
                self.dim()
            )));
        }
        let grid = merged_breakpoints(&[z, &self.baseline]);
        let mut pieces = Vec::with_capacity(grid.len());
        for (k, &start) in grid.iter().enumerate() {
            let end = grid.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let rate = self.rate(self.baseline.eval_scalar(start)?, z.eval(start)?)?;
            pieces.push((start, end, rate));
        }
        Ok(pieces)
    }
}

/// Cumulative hazard `H(t) = ∫₀ᵗ λ(s | z) ds`, exact.
pub fn cumulative_hazard(z: &CovariatePath, spec: &ModelSpec, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("negative time {t}")));
    }
    let mut h = 0.0;
    for (start, end, rate) in spec.hazard_pieces(z)? {
        if start >= t {
            break;
        }
        h += rate * (end.min(t) - start);
    }
    Ok(h)
}

/// Event time `T` with `H(T) = -ln u`, or `+∞` when the subject survives past
/// the horizon.
pub fn draw_event_time(z: &CovariatePath, spec: &ModelSpec, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("uniform variate {u} outside (0, 1)")));
    }
    let target = -u.ln();
    let mut h = 0.0;
    for (start, end, rate) in spec.hazard_pieces(z)? {
        if start >= spec.tau {
            break;
        }
        let end = end.min(spec.tau);
        let mass = rate * (end - start);
        if rate > 0.0 && h + mass >= target {
            return Ok(start + (target - h) / rate);
        }
        h += mass;
    }
    Ok(f64::INFINITY)
}

/// Censoring time by inversion, truncated at the administrative horizon `tau`.
pub fn draw_censoring(spec: &CensoringSpec, tau: f64, u: f64) -> f64 {
    let c = match *spec {
        CensoringSpec::Exponential { rate } if rate > 0.0 => -u.ln() / rate,
        CensoringSpec::Exponential { .. } => f64::INFINITY,
        CensoringSpec::Uniform { upper } => u * upper,
    };
    c.min(tau)
}

fn validate_censoring(spec: &CensoringSpec, tau: f64) -> Result<()> {
    match *spec {
        CensoringSpec::Exponential { rate } if rate >= 0.0 && rate.is_finite() => Ok(()),
        CensoringSpec::Uniform { upper } if upper > tau && upper.is_finite() => Ok(()),
        _ => Err(Error::Config(format!(
            "censoring {spec:?} must leave positive probability of follow-up to tau = {tau}"
        ))),
    }
}

/// `n` independent, fully observed subjects. Subject `i` draws from substream
/// `i` of the simulation key, in the order: event uniform, censoring uniform,
/// covariate path.
pub fn simulate_cohort(
    n: usize,
    model: &ModelSpec,
    cens: &CensoringSpec,
    covgen: &CovariateGenerator,
    seed: u64,
) -> Result<Cohort> {
    if n == 0 {
        return Err(Error::Config("cohort size must be at least 1".into()));
    }
    model.validate(covgen)?;
    validate_censoring(cens, model.tau)?;
    let key = derive_seed(seed, DOMAIN_SIMULATE);
    let dim = model.dim();
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let mut rng = substream(key, i);
        let u_event: f64 = rng.sample(Open01);
        let u_cens: f64 = rng.sample(Open01);
        let z = covgen.generate(&mut rng, dim, model.tau)?;
        let t = draw_event_time(&z, model, u_event)?;
        let c = draw_censoring(cens, model.tau, u_cens);
        let delta = t <= c;
        let y = if delta { t } else { c };
        // observed history Z̄(Y) only
        let keep = z.breakpoints().partition_point(|&b| b <= y);
        let z = CovariatePath::from_flat(
            z.breakpoints()[..keep].to_vec(),
            (0..keep).flat_map(|k| z.segment(k).to_vec()).collect(),
            dim,
        )?;
        let stratum = covgen.stratum(&z);
        subjects.push(Subject::new(i, y, delta, z).with_stratum(stratum));
    }
    Cohort::new(subjects, model.tau, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_cohort, DEFAULT_PI_FLOOR};
    use proptest::prelude::*;
    use std::f64::consts::{E, LN_2};

    fn model(family: Family, theta: f64, tau: f64) -> ModelSpec {
        ModelSpec {
            family,
            theta0: vec![theta],
            baseline: CovariatePath::scalar(1.0),
            tau,
        }
    }

    #[test]
    fn exponential_inversion() {
        let t = draw_event_time(&CovariatePath::scalar(0.0), &model(Family::Cox, 0.0, 10.0), E.recip()).unwrap();
        assert!((t - 1.0).abs() < 1e-15);
    }

    #[test]
    fn switching_covariate_inversion() {
        let z = CovariatePath::scalar_steps(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let t = draw_event_time(&z, &model(Family::Cox, LN_2, 10.0), (-2.0f64).exp()).unwrap();
        assert!((t - 1.5).abs() < 1e-14, "{t}");
    }

    #[test]
    fn additive_inversion() {
        let t = draw_event_time(&CovariatePath::scalar(1.0), &model(Family::Additive, 0.5, 10.0), (-3.0f64).exp())
            .unwrap();
        assert!((t - 2.0).abs() < 1e-14);
    }

    #[test]
    fn survivors_get_infinite_sentinel() {
        let t = draw_event_time(&CovariatePath::scalar(0.0), &model(Family::Cox, 0.0, 0.5), E.recip()).unwrap();
        assert!(t.is_infinite());
    }

    #[test]
    fn negative_additive_hazard_is_a_model_violation() {
        let err = draw_event_time(&CovariatePath::scalar(-3.0), &model(Family::Additive, 0.5, 10.0), 0.5);
        assert!(matches!(err, Err(Error::ModelViolation(_))));
        let gen = CovariateGenerator::FixedBinary { p: 0.5, levels: [-3.0, 1.0] };
        assert!(matches!(
            simulate_cohort(10, &model(Family::Additive, 0.5, 10.0), &CensoringSpec::Exponential { rate: 1.0 }, &gen, 1),
            Err(Error::ModelViolation(_))
        ));
    }

    #[test]
    fn censoring_inversion_and_cutoff() {
        let exp1 = CensoringSpec::Exponential { rate: 1.0 };
        assert!((draw_censoring(&exp1, 10.0, E.recip()) - 1.0).abs() < 1e-15);
        assert_eq!(draw_censoring(&exp1, 0.5, E.recip()), 0.5);
        assert_eq!(draw_censoring(&CensoringSpec::Uniform { upper: 2.0 }, 10.0, 0.5), 1.0);
        assert_eq!(draw_censoring(&CensoringSpec::Uniform { upper: 20.0 }, 3.0, 0.9), 3.0);
    }

    #[test]
    fn empty_cohort_is_rejected() {
        let gen = CovariateGenerator::FixedBinary { p: 0.5, levels: [0.0, 1.0] };
        assert!(simulate_cohort(0, &model(Family::Cox, 0.0, 1.0), &CensoringSpec::Exponential { rate: 0.0 }, &gen, 1).is_err());
    }

    #[test]
    fn uncensored_exponential_mean() {
        let gen = CovariateGenerator::FixedBinary { p: 0.5, levels: [0.0, 1.0] };
        let c = simulate_cohort(1000, &model(Family::Cox, 0.0, 10.0), &CensoringSpec::Exponential { rate: 0.0 }, &gen, 42)
            .unwrap();
        let mean = c.subjects().iter().map(|s| s.y).sum::<f64>() / 1000.0;
        assert!((0.9..=1.1).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn additive_and_cox_agree_without_covariate_effect() {
        let gen = CovariateGenerator::PiecewiseSwitch { p: 0.5, rate: 1.0, levels: [0.0, 1.0] };
        let cens = CensoringSpec::Exponential { rate: 0.0 };
        let mean = |fam| {
            let c = simulate_cohort(4000, &model(fam, 0.0, 50.0), &cens, &gen, 9).unwrap();
            c.subjects().iter().map(|s| s.y).sum::<f64>() / 4000.0
        };
        let (a, b) = (mean(Family::Cox), mean(Family::Additive));
        // same seeds and a baseline-only hazard: identical draws
        assert_eq!(a, b);
        assert!((a - 1.0).abs() < 3.0 / 4000f64.sqrt() * 1.5);
    }

    #[test]
    fn event_fraction_matches_quadrature_oracle() {
        // Binary covariate, rate λ = exp(θ z), exponential censoring c, horizon τ.
        let (theta, c_rate, tau, p) = (0.7, 0.8, 2.0, 0.4);
        let gen = CovariateGenerator::FixedBinary { p, levels: [0.0, 1.0] };
        let n = 500;
        let cohort = simulate_cohort(n, &model(Family::Cox, theta, tau), &CensoringSpec::Exponential { rate: c_rate }, &gen, 2024)
            .unwrap();
        // P(T <= min(C, τ)) = Σ_z P(z) ∫₀^τ λ e^{-λ t} e^{-c t} dt, by composite Simpson.
        let simpson = |f: &dyn Fn(f64) -> f64| {
            let m = 2000;
            let h = tau / m as f64;
            let mut s = f(0.0) + f(tau);
            for k in 1..m {
                s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let prob: f64 = [(1.0 - p, 0.0), (p, 1.0)]
            .iter()
            .map(|&(w, z)| {
                let lambda = (theta * z).exp();
                w * simpson(&|t| lambda * (-lambda * t).exp() * (-c_rate * t).exp())
            })
            .sum();
        let observed = cohort.events() as f64 / n as f64;
        let sigma = (prob * (1.0 - prob) / n as f64).sqrt();
        assert!((observed - prob).abs() <= 3.0 * sigma, "observed {observed} vs {prob}");
    }

    #[test]
    fn simulated_cohorts_validate_and_are_deterministic() {
        let gen = CovariateGenerator::PiecewiseSwitch { p: 0.5, rate: 0.5, levels: [0.0, 1.0] };
        let m = ModelSpec { theta0: vec![0.3, -0.2], ..model(Family::Cox, 0.0, 3.0) };
        let cens = CensoringSpec::Uniform { upper: 5.0 };
        let a = simulate_cohort(200, &m, &cens, &gen, 5).unwrap();
        let b = simulate_cohort(200, &m, &cens, &gen, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 2);
        assert!(validate_cohort(&a, DEFAULT_PI_FLOOR).is_valid());
        for s in a.subjects() {
            assert!(s.y <= 3.0 && s.y > 0.0);
            assert!(s.z().breakpoints().iter().all(|&b| b <= s.y));
            if !s.delta && s.y < 3.0 {
                // censored before the horizon
                assert!(s.y < 5.0);
            }
        }
    }

    #[test]
    fn uniform_censoring_must_reach_horizon() {
        let gen = CovariateGenerator::FixedBinary { p: 0.5, levels: [0.0, 1.0] };
        assert!(simulate_cohort(5, &model(Family::Cox, 0.0, 3.0), &CensoringSpec::Uniform { upper: 2.0 }, &gen, 1).is_err());
    }

    proptest! {
        #[test]
        fn inversion_reproduces_target(u in 1e-6f64..0.999_999, theta in -1.0f64..1.0, s1 in 0.05f64..2.0, s2 in 0.05f64..2.0, lvl in -1.0f64..1.0) {
            let z = CovariatePath::scalar_steps(vec![0.0, s1, s1 + s2], vec![0.0, lvl, 1.0]).unwrap();
            let spec = ModelSpec {
                family: Family::Cox,
                theta0: vec![theta],
                baseline: CovariatePath::scalar_steps(vec![0.0, 0.7], vec![0.5, 1.5]).unwrap(),
                tau: 1e6,
            };
            let t = draw_event_time(&z, &spec, u).unwrap();
            let h = cumulative_hazard(&z, &spec, t).unwrap();
            prop_assert!((h - (-u.ln())).abs() <= 1e-12 * (-u.ln()));
        }
    }
}

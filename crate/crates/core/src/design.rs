//! Subcohort selection and weight construction.
//!
//! [`sample_subcohort`] flips an independent coin for every subject;
//! [`build_weights`] turns the resulting `(R, π)` into the weight processes
//! `Ω(t)` (applied to each subject's own score term) and `W(t)` (applied in
//! the risk-set averages), masking the covariates of subjects the scheme does
//! not observe.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Subject};
use crate::error::{Error, Result};
use crate::path::CovariatePath;
use crate::rng::{derive_seed, substream, DOMAIN_SAMPLE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sampling {
    SimpleBernoulli { pi: f64 },
    StratifiedBernoulli { pi_by_stratum: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    #[serde(flatten)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
}

impl SamplingPlan {
    pub fn simple(pi: f64, seed: u64) -> Self {
        Self {
            sampling: Sampling::SimpleBernoulli { pi },
            seed,
        }
    }

    pub fn stratified(pi_by_stratum: BTreeMap<String, f64>, seed: u64) -> Self {
        Self {
            sampling: Sampling::StratifiedBernoulli { pi_by_stratum },
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            sampling: self.sampling.clone(),
            seed,
        }
    }

    pub fn pi_for(&self, stratum: &str) -> Result<f64> {
        match &self.sampling {
            Sampling::SimpleBernoulli { pi } => Ok(*pi),
            Sampling::StratifiedBernoulli { pi_by_stratum } => {
                pi_by_stratum.get(stratum).copied().ok_or_else(|| {
                    Error::Config(format!("no selection probability for stratum {stratum:?}"))
                })
            }
        }
    }

    pub fn validate(&self, pi_floor: f64) -> Result<()> {
        let probabilities: Vec<f64> = match &self.sampling {
            Sampling::SimpleBernoulli { pi } => vec![*pi],
            Sampling::StratifiedBernoulli { pi_by_stratum } => {
                if pi_by_stratum.is_empty() {
                    return Err(Error::Config("stratified plan lists no strata".into()));
                }
                pi_by_stratum.values().copied().collect()
            }
        };
        for pi in probabilities {
            if !(pi >= pi_floor && pi <= 1.0) {
                return Err(Error::Config(format!(
                    "selection probability {pi} outside [{pi_floor}, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Which subjects count as having complete data in a two-phase design.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompleteData {
    /// `R* = R ∨ Δ`: every failure is measured, so `π* = 1` for failures.
    #[default]
    SubcohortOrFailure,
    /// `R* = R`: failures outside the subcohort are missing too, `π* = π`.
    SubcohortOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightScheme {
    /// `Ω = W = 1`: the full-cohort partial likelihood.
    FullData,
    /// `Ω = 1`, `W = R/π`: risk sets drawn from the subcohort only.
    SelfPrentice,
    /// `Ω = W = Δ + (R/π)(1 − Δ)`.
    IpwKl,
    /// `Ω = W = R*/π*`.
    TwoPhase {
        #[serde(default)]
        complete: CompleteData,
    },
    /// Weights already attached to the cohort, checked and passed through.
    Custom,
}

impl WeightScheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FullData => "full-data",
            Self::SelfPrentice => "self-prentice",
            Self::IpwKl => "ipw-kl",
            Self::TwoPhase { .. } => "two-phase",
            Self::Custom => "custom",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TwoPhase {
                complete: CompleteData::SubcohortOnly,
            } => f.write_str("two-phase(subcohort-only)"),
            other => f.write_str(other.name()),
        }
    }
}

/// The `design` block of a study or fit configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<SamplingPlan>,
    pub scheme: WeightScheme,
}

/// Draws `R_i ~ Bernoulli(π_{stratum(i)})` independently, each subject from
/// its own substream keyed by id.
pub fn sample_subcohort(cohort: &Cohort, plan: &SamplingPlan, pi_floor: f64) -> Result<Cohort> {
    plan.validate(pi_floor)?;
    let key = derive_seed(plan.seed, DOMAIN_SAMPLE);
    cohort.map_subjects(|s| {
        if !s.observed() {
            return Err(Error::Config(format!(
                "subject {} is already masked; sampling needs a fully observed cohort",
                s.id
            )));
        }
        let pi = plan.pi_for(&s.stratum)?;
        let u: f64 = substream(key, s.id).random();
        let mut out = s.clone();
        out.r = u < pi;
        out.pi = pi;
        Ok(out)
    })
}

fn constant_weights(s: &Subject, omega: f64, w: f64) -> Subject {
    s.clone()
        .with_weights(CovariatePath::scalar(omega), CovariatePath::scalar(w))
}

fn require_covariates(s: &Subject, scheme: &WeightScheme) -> Result<()> {
    if s.observed() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "scheme {scheme} needs the covariates of subject {}, which are missing",
            s.id
        )))
    }
}

fn check_pi(s: &Subject, pi_floor: f64) -> Result<()> {
    if s.pi.is_nan() || s.pi < pi_floor || s.pi > 1.0 {
        Err(Error::Config(format!(
            "subject {} has selection probability {} outside [{pi_floor}, 1]",
            s.id, s.pi
        )))
    } else {
        Ok(())
    }
}

/// Attaches `Ω` and `W` according to `scheme` and masks subjects whose
/// covariates the design does not collect.
pub fn build_weights(cohort: &Cohort, scheme: &WeightScheme, pi_floor: f64) -> Result<Cohort> {
    let cap = 1.0 / pi_floor;
    cohort.map_subjects(|s| {
        // (observed under the design, Ω, W)
        let (observed, omega, w) = match scheme {
            WeightScheme::FullData => (true, 1.0, 1.0),
            WeightScheme::SelfPrentice => {
                check_pi(s, pi_floor)?;
                let w = if s.r { 1.0 / s.pi } else { 0.0 };
                (s.r || s.delta, 1.0, w)
            }
            WeightScheme::IpwKl => {
                check_pi(s, pi_floor)?;
                let w = if s.delta {
                    1.0
                } else if s.r {
                    1.0 / s.pi
                } else {
                    0.0
                };
                (s.r || s.delta, w, w)
            }
            WeightScheme::TwoPhase { complete } => {
                check_pi(s, pi_floor)?;
                let (complete_data, pi_star) = match complete {
                    CompleteData::SubcohortOrFailure if s.delta => (true, 1.0),
                    CompleteData::SubcohortOrFailure | CompleteData::SubcohortOnly => (s.r, s.pi),
                };
                let w = if complete_data { 1.0 / pi_star } else { 0.0 };
                (complete_data, w, w)
            }
            WeightScheme::Custom => {
                for path in [&s.omega, &s.w] {
                    if path.min_value() < 0.0 {
                        return Err(Error::Config(format!("subject {} has a negative weight", s.id)));
                    }
                    if path.max_value() > cap {
                        return Err(Error::Config(format!(
                            "subject {} has a weight above 1/floor = {cap}",
                            s.id
                        )));
                    }
                    if !s.observed() && !path.is_zero() {
                        return Err(Error::Config(format!(
                            "masked subject {} carries a nonzero weight",
                            s.id
                        )));
                    }
                }
                return Ok(s.clone());
            }
        };
        if observed {
            require_covariates(s, scheme)?;
            Ok(constant_weights(s, omega, w))
        } else {
            let mut out = s.clone();
            out.mask();
            Ok(out)
        }
    })
}

/// Samples (when a plan is given) and then weights.
pub fn apply_design(cohort: &Cohort, design: &DesignConfig, pi_floor: f64) -> Result<Cohort> {
    match &design.plan {
        Some(plan) => build_weights(&sample_subcohort(cohort, plan, pi_floor)?, &design.scheme, pi_floor),
        None => build_weights(cohort, &design.scheme, pi_floor),
    }
}

/// Per-subject mean, across sampling replicates of one cohort, of the
/// time-averaged weight `(1/Y) ∫₀^Y W(t) dt`. Values near one confirm that
/// the weights are conditionally unbiased.
pub fn check_weight_calibration(replicates: &[Cohort]) -> Result<Vec<f64>> {
    let first = replicates
        .first()
        .ok_or_else(|| Error::Config("no replicates given".into()))?;
    let mut sums = vec![0.0; first.len()];
    for rep in replicates {
        if rep.len() != first.len() {
            return Err(Error::Config("replicates differ in size".into()));
        }
        for ((acc, s), base) in sums.iter_mut().zip(rep.subjects()).zip(first.subjects()) {
            if s.id != base.id {
                return Err(Error::Config(format!(
                    "replicates disagree on subject order ({} vs {})",
                    s.id, base.id
                )));
            }
            *acc += s.w.integrate(0.0, s.y, None)?[0] / s.y;
        }
    }
    let m = replicates.len() as f64;
    Ok(sums.into_iter().map(|s| s / m).collect())
}

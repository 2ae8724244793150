//! Subjects, cohorts and the validation report.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::CovariatePath;

/// Default lower bound σ₃ on selection probabilities.
pub const DEFAULT_PI_FLOOR: f64 = 1e-6;

/// One observation `(Y, Δ, Z̄(Y), Z*)` together with its sampling indicator,
/// selection probability and weight processes.
///
/// The covariate path of a masked subject (not in the subcohort and not a
/// failure) is discarded; reading it is a logic error and panics.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: u64,
    pub y: f64,
    pub delta: bool,
    pub stratum: String,
    pub r: bool,
    pub pi: f64,
    pub omega: CovariatePath,
    pub w: CovariatePath,
    z: Option<CovariatePath>,
}

impl Subject {
    /// A fully observed subject with unit weights, `r = 1` and `π = 1`.
    pub fn new(id: u64, y: f64, delta: bool, z: CovariatePath) -> Self {
        Self {
            id,
            y,
            delta,
            stratum: String::from("all"),
            r: true,
            pi: 1.0,
            omega: CovariatePath::scalar(1.0),
            w: CovariatePath::scalar(1.0),
            z: Some(z),
        }
    }

    /// A subject whose covariates were never collected.
    pub fn masked(id: u64, y: f64, delta: bool, stratum: String, r: bool, pi: f64) -> Self {
        Self {
            id,
            y,
            delta,
            stratum,
            r,
            pi,
            omega: CovariatePath::scalar(0.0),
            w: CovariatePath::scalar(0.0),
            z: None,
        }
    }

    pub fn with_stratum(mut self, stratum: impl Into<String>) -> Self {
        self.stratum = stratum.into();
        self
    }

    pub fn with_weights(mut self, omega: CovariatePath, w: CovariatePath) -> Self {
        self.omega = omega;
        self.w = w;
        self
    }

    pub fn observed(&self) -> bool {
        self.z.is_some()
    }

    /// Covariate path. Panics on a masked subject.
    pub fn z(&self) -> &CovariatePath {
        self.z
            .as_ref()
            .unwrap_or_else(|| panic!("covariates of masked subject {} were read", self.id))
    }

    pub fn try_z(&self) -> Option<&CovariatePath> {
        self.z.as_ref()
    }

    /// Drops the covariates and zeroes both weights.
    pub fn mask(&mut self) {
        self.z = None;
        self.omega = CovariatePath::scalar(0.0);
        self.w = CovariatePath::scalar(0.0);
    }

    /// Whether the subject can contribute anything to a weighted fit.
    pub(crate) fn contributes(&self) -> bool {
        self.observed() && !(self.omega.is_zero() && self.w.is_zero())
    }
}

/// A validated collection of subjects sharing a covariate dimension, observed
/// on `[0, τ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    tau: f64,
    dim: usize,
}

impl Cohort {
    /// Checks the structural invariants needed by every operation (positive
    /// horizon, common dimension, scalar weights). Statistical conditions are
    /// reported by [`validate_cohort`] instead.
    pub fn new(subjects: Vec<Subject>, tau: f64, dim: usize) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidCohort(format!("horizon must be positive, got {tau}")));
        }
        if dim == 0 {
            return Err(Error::InvalidCohort("covariate dimension must be positive".into()));
        }
        for s in &subjects {
            if let Some(z) = s.try_z() {
                if z.dim() != dim {
                    return Err(Error::InvalidCohort(format!(
                        "subject {} has covariate dimension {}, expected {dim}",
                        s.id,
                        z.dim()
                    )));
                }
            }
            if s.omega.dim() != 1 || s.w.dim() != 1 {
                return Err(Error::InvalidCohort(format!(
                    "subject {} has non-scalar weights",
                    s.id
                )));
            }
        }
        Ok(Self { subjects, tau, dim })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn into_subjects(self) -> Vec<Subject> {
        self.subjects
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn events(&self) -> usize {
        self.subjects.iter().filter(|s| s.delta).count()
    }

    /// Rebuilds the cohort with each subject transformed by `f`.
    pub fn map_subjects(&self, f: impl FnMut(&Subject) -> Result<Subject>) -> Result<Self> {
        let subjects = self.subjects.iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(subjects, self.tau, self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    FollowUpOutOfRange,
    SelectionProbabilityBelowFloor,
    SelectionProbabilityAboveOne,
    NegativeWeight,
    UnboundedWeight,
    WeightOnMaskedSubject,
    DuplicateId,
    NoObservedFailures,
    EmptyCohort,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            Self::FollowUpOutOfRange => "follow-up time outside (0, tau]",
            Self::SelectionProbabilityBelowFloor => "selection probability below floor",
            Self::SelectionProbabilityAboveOne => "selection probability above one",
            Self::NegativeWeight => "negative weight",
            Self::UnboundedWeight => "weight exceeds 1/floor",
            Self::WeightOnMaskedSubject => "nonzero weight on masked subject",
            Self::DuplicateId => "duplicate subject id",
            Self::NoObservedFailures => "no observed failures",
            Self::EmptyCohort => "cohort has no subjects",
        };
        f.write_str(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: Option<u64>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subject {
            Some(id) => write!(f, "subject {id}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: &ViolationKind) -> bool {
        self.violations.iter().any(|v| &v.kind == kind)
    }
}

/// Lists every violated regularity condition; an empty report means the cohort
/// can be fitted.
pub fn validate_cohort(cohort: &Cohort, pi_floor: f64) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |subject: Option<u64>, kind| violations.push(Violation { subject, kind });
    let weight_cap = 1.0 / pi_floor;
    let mut seen = HashSet::new();

    if cohort.is_empty() {
        push(None, ViolationKind::EmptyCohort);
    }
    for s in cohort.subjects() {
        let id = Some(s.id);
        if !seen.insert(s.id) {
            push(id, ViolationKind::DuplicateId);
        }
        if !(s.y > 0.0 && s.y <= cohort.tau()) {
            push(id, ViolationKind::FollowUpOutOfRange);
        }
        if s.pi.is_nan() || s.pi < pi_floor {
            push(id, ViolationKind::SelectionProbabilityBelowFloor);
        } else if s.pi > 1.0 {
            push(id, ViolationKind::SelectionProbabilityAboveOne);
        }
        for w in [&s.omega, &s.w] {
            if w.min_value() < 0.0 {
                push(id, ViolationKind::NegativeWeight);
            }
            if w.max_value() > weight_cap {
                push(id, ViolationKind::UnboundedWeight);
            }
            if !s.observed() && !w.is_zero() {
                push(id, ViolationKind::WeightOnMaskedSubject);
            }
        }
    }
    if cohort.events() == 0 {
        push(None, ViolationKind::NoObservedFailures);
    }
    ValidationReport { violations }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Time-fixed scalar-covariate cohort from `(y, delta, z)` triples.
    pub(crate) fn fixed_cohort(rows: &[(f64, bool, f64)]) -> Cohort {
        let subjects = rows
            .iter()
            .enumerate()
            .map(|(i, &(y, d, z))| Subject::new(i as u64, y, d, CovariatePath::scalar(z)))
            .collect();
        let tau = rows.iter().map(|r| r.0).fold(0.0, f64::max);
        Cohort::new(subjects, tau, 1).unwrap()
    }

    /// Random cohort with `d` piecewise-constant covariates (up to two jumps
    /// per subject when `time_dependent`), continuous follow-up times on
    /// `(0.1, 3)` and about 70% failures.
    pub(crate) fn random_cohort(seed: u64, n: usize, d: usize, time_dependent: bool) -> Cohort {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let subjects = (0..n as u64)
            .map(|id| {
                let y: f64 = rng.random_range(0.1..3.0);
                let delta = rng.random_bool(0.7);
                let mut breaks = vec![0.0];
                if time_dependent {
                    let mut cuts: Vec<f64> = (0..rng.random_range(0..3)).map(|_| rng.random_range(0.0..y)).collect();
                    cuts.sort_by(f64::total_cmp);
                    breaks.extend(cuts.into_iter().filter(|&c| c > 0.0));
                    breaks.dedup();
                }
                let values = (0..breaks.len() * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                Subject::new(id, y, delta, CovariatePath::from_flat(breaks, values, d).unwrap())
            })
            .collect::<Vec<_>>();
        let tau = subjects.iter().map(|s| s.y).fold(0.0, f64::max);
        Cohort::new(subjects, tau, d).unwrap()
    }

    #[test]
    fn valid_cohort_has_empty_report() {
        let c = fixed_cohort(&[(1.0, true, 0.0), (2.0, false, 1.0), (3.0, true, 1.0)]);
        assert!(validate_cohort(&c, DEFAULT_PI_FLOOR).is_valid());
    }

    #[test]
    fn zero_pi_is_below_floor() {
        let c = fixed_cohort(&[(1.0, true, 0.0), (2.0, false, 1.0)]);
        let mut subjects = c.subjects().to_vec();
        subjects[1].pi = 0.0;
        let c = Cohort::new(subjects, 2.0, 1).unwrap();
        let report = validate_cohort(&c, DEFAULT_PI_FLOOR);
        assert!(report.has(&ViolationKind::SelectionProbabilityBelowFloor));
        assert_eq!(
            report.violations[0].to_string(),
            "subject 1: selection probability below floor"
        );
    }

    #[test]
    fn all_censored_is_reported() {
        let c = fixed_cohort(&[(1.0, false, 0.0), (2.0, false, 1.0)]);
        let report = validate_cohort(&c, DEFAULT_PI_FLOOR);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].to_string(), "no observed failures");
    }

    #[test]
    fn masked_subject_with_weight_is_reported() {
        let c = fixed_cohort(&[(1.0, true, 0.0)]);
        let mut masked = Subject::masked(7, 0.5, false, "all".into(), false, 0.5);
        masked.w = CovariatePath::scalar(2.0);
        let mut subjects = c.into_subjects();
        subjects.push(masked);
        let c = Cohort::new(subjects, 1.0, 1).unwrap();
        assert!(validate_cohort(&c, DEFAULT_PI_FLOOR).has(&ViolationKind::WeightOnMaskedSubject));
    }

    #[test]
    fn follow_up_beyond_horizon_is_reported() {
        let c = fixed_cohort(&[(1.0, true, 0.0)]);
        let c = Cohort::new(c.into_subjects(), 0.5, 1).unwrap();
        assert!(validate_cohort(&c, DEFAULT_PI_FLOOR).has(&ViolationKind::FollowUpOutOfRange));
    }

    #[test]
    #[should_panic(expected = "masked subject")]
    fn reading_masked_covariates_panics() {
        let s = Subject::masked(3, 1.0, false, "all".into(), false, 0.5);
        let _ = s.z();
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Subject::new(0, 1.0, true, CovariatePath::scalar(0.0));
        let b = Subject::new(1, 1.0, true, CovariatePath::constant(vec![0.0, 1.0]).unwrap());
        assert!(Cohort::new(vec![a, b], 2.0, 1).is_err());
    }
}

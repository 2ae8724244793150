//! Monte Carlo studies: replicate simulate → sample → weight → fit and
//! summarize bias, standard-error calibration and Wald coverage.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::additive::fit_additive;
use crate::cox::{fit_cox, FitOptions};
use crate::data::{Cohort, DEFAULT_PI_FLOOR};
use crate::design::{build_weights, sample_subcohort, DesignConfig, WeightScheme};
use crate::error::{Error, Result};
use crate::rng::replicate_seed;
use crate::simulate::{simulate_cohort, CensoringSpec, CovariateGenerator, Family, ModelSpec};

/// Fraction of excluded replicates above which a scenario is unstable.
pub const UNSTABLE_FRACTION: f64 = 0.2;

fn default_confidence() -> f64 {
    0.95
}

fn default_pi_floor() -> f64 {
    DEFAULT_PI_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub replications: usize,
    pub n: usize,
    pub model: ModelSpec,
    pub censoring: CensoringSpec,
    pub covgen: CovariateGenerator,
    /// The plan's own seed is ignored: each replicate samples with its
    /// replicate seed.
    pub design: DesignConfig,
    #[serde(default)]
    pub fit: FitOptions,
    pub seed: u64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_pi_floor")]
    pub pi_floor: f64,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("cohort size must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence level must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if !(self.pi_floor > 0.0 && self.pi_floor <= 1.0) {
            return Err(Error::Config(format!("pi floor must lie in (0, 1], got {}", self.pi_floor)));
        }
        if !(self.fit.tol > 0.0) || self.fit.max_iter == 0 {
            return Err(Error::Config("fit tolerance and iteration limit must be positive".into()));
        }
        self.model.validate(&self.covgen)?;
        if let Some(plan) = &self.design.plan {
            plan.validate(self.pi_floor)?;
        }
        let needs_plan = !matches!(self.design.scheme, WeightScheme::FullData);
        if needs_plan && self.design.plan.is_none() {
            return Err(Error::Config(format!(
                "scheme {} needs a sampling plan",
                self.design.scheme
            )));
        }
        if matches!(self.design.scheme, WeightScheme::Custom) {
            return Err(Error::Config("the custom scheme cannot be simulated".into()));
        }
        Ok(())
    }

    fn with_scheme(&self, scheme: &WeightScheme) -> Self {
        let mut c = self.clone();
        c.design.scheme = scheme.clone();
        c
    }
}

/// Why a replicate was left out of the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    Nonconverged,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ReplicateOutcome {
    Fitted { theta: Vec<f64>, se: Vec<f64> },
    Excluded { reason: Exclusion, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedReplicate {
    pub index: usize,
    pub seed: u64,
    pub reason: Exclusion,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub index: usize,
    pub theta0: f64,
    pub mean: f64,
    pub bias: f64,
    /// `None` with fewer than two usable replicates.
    pub empirical_sd: Option<f64>,
    pub mean_se: f64,
    pub se_ratio: Option<f64>,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scheme: String,
    pub family: Family,
    pub n: usize,
    pub replications: usize,
    pub used: usize,
    pub confidence: f64,
    pub coefficients: Vec<CoefficientSummary>,
    pub nonconverged: usize,
    pub diverged: usize,
    pub failed: usize,
    pub unstable: bool,
    pub excluded: Vec<ExcludedReplicate>,
    pub runtime_secs: f64,
}

impl StudyReport {
    /// Equality of everything except the runtime.
    pub fn same_results(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.runtime_secs = other.runtime_secs;
        &a == other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reports: Vec<StudyReport>,
}

/// Rounds to six significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn classify(err: &Error) -> Exclusion {
    match err {
        Error::NonConvergence { .. } => Exclusion::Nonconverged,
        Error::Divergence { .. } => Exclusion::Diverged,
        _ => Exclusion::Failed,
    }
}

fn fit_one(cohort: &Cohort, family: Family, opts: &FitOptions) -> ReplicateOutcome {
    let fitted = match family {
        Family::Cox => fit_cox(cohort, opts).map(|f| (f.theta_hat, f.se)),
        Family::Additive => fit_additive(cohort).map(|f| (f.theta_hat, f.se)),
    };
    match fitted {
        Ok((theta, se)) => ReplicateOutcome::Fitted { theta, se },
        Err(e) => ReplicateOutcome::Excluded {
            reason: classify(&e),
            message: e.to_string(),
        },
    }
}

/// Simulates replicate `index` and fits it under each scheme, all on the same
/// cohort and the same subcohort draw.
fn replicate(config: &StudyConfig, schemes: &[WeightScheme], index: usize) -> Result<Vec<ReplicateOutcome>> {
    let seed = replicate_seed(config.seed, index as u64);
    let cohort = simulate_cohort(config.n, &config.model, &config.censoring, &config.covgen, seed)?;
    let sampled = match &config.design.plan {
        Some(plan) => sample_subcohort(&cohort, &plan.with_seed(seed), config.pi_floor)?,
        None => cohort,
    };
    schemes
        .iter()
        .map(|scheme| {
            let weighted = build_weights(&sampled, scheme, config.pi_floor)?;
            Ok(fit_one(&weighted, config.model.family, &config.fit))
        })
        .collect()
}

fn run_all(config: &StudyConfig, schemes: &[WeightScheme], parallel: bool) -> Result<Vec<Vec<ReplicateOutcome>>> {
    config.validate()?;
    for scheme in schemes {
        config.with_scheme(scheme).validate()?;
    }
    let per_replicate: Vec<Vec<ReplicateOutcome>> = if parallel {
        (0..config.replications)
            .into_par_iter()
            .map(|r| replicate(config, schemes, r))
            .collect::<Result<_>>()?
    } else {
        (0..config.replications)
            .map(|r| replicate(config, schemes, r))
            .collect::<Result<_>>()?
    };
    // transpose to one outcome list per scheme
    let mut by_scheme = vec![Vec::with_capacity(config.replications); schemes.len()];
    for outcomes in per_replicate {
        for (list, o) in by_scheme.iter_mut().zip(outcomes) {
            list.push(o);
        }
    }
    Ok(by_scheme)
}

/// Raw outcomes of every replicate, in index order, on the current rayon
/// pool.
pub fn run_replicates(config: &StudyConfig) -> Result<Vec<ReplicateOutcome>> {
    Ok(run_all(config, std::slice::from_ref(&config.design.scheme), true)?.remove(0))
}

/// Aggregates outcomes of replicates `0..outcomes.len()` of `config`.
pub fn summarize(config: &StudyConfig, outcomes: &[ReplicateOutcome], runtime_secs: f64) -> StudyReport {
    let d = config.model.dim();
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + config.confidence / 2.0);

    let mut excluded = Vec::new();
    let mut fits: Vec<(&[f64], &[f64])> = Vec::new();
    for (index, o) in outcomes.iter().enumerate() {
        match o {
            ReplicateOutcome::Fitted { theta, se } => fits.push((theta, se)),
            ReplicateOutcome::Excluded { reason, message } => excluded.push(ExcludedReplicate {
                index,
                seed: replicate_seed(config.seed, index as u64),
                reason: *reason,
                message: message.clone(),
            }),
        }
    }
    let count = |r: Exclusion| excluded.iter().filter(|e| e.reason == r).count();
    let m = fits.len();
    let coefficients = if m == 0 {
        Vec::new()
    } else {
        (0..d)
            .map(|j| {
                let theta0 = config.model.theta0[j];
                let mf = m as f64;
                let mean = fits.iter().map(|(t, _)| t[j]).sum::<f64>() / mf;
                let mean_se = fits.iter().map(|(_, s)| s[j]).sum::<f64>() / mf;
                let empirical_sd = (m > 1).then(|| {
                    (fits.iter().map(|(t, _)| (t[j] - mean).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt()
                });
                let covered = fits
                    .iter()
                    .filter(|(t, s)| (t[j] - theta0).abs() <= z * s[j])
                    .count();
                CoefficientSummary {
                    index: j,
                    theta0: round_sig(theta0),
                    mean: round_sig(mean),
                    bias: round_sig(mean - theta0),
                    empirical_sd: empirical_sd.map(round_sig),
                    mean_se: round_sig(mean_se),
                    se_ratio: empirical_sd.map(|sd| round_sig(mean_se / sd)),
                    coverage: round_sig(covered as f64 / mf),
                }
            })
            .collect()
    };
    let total = outcomes.len();
    StudyReport {
        scheme: config.design.scheme.to_string(),
        family: config.model.family,
        n: config.n,
        replications: total,
        used: m,
        confidence: config.confidence,
        coefficients,
        nonconverged: count(Exclusion::Nonconverged),
        diverged: count(Exclusion::Diverged),
        failed: count(Exclusion::Failed),
        unstable: m == 0 || excluded.len() as f64 > UNSTABLE_FRACTION * total as f64,
        excluded,
        runtime_secs: round_sig(runtime_secs),
    }
}

/// Runs the study with replicates spread over the current rayon pool. The
/// report does not depend on the number of threads.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    let start = Instant::now();
    let outcomes = run_replicates(config)?;
    Ok(summarize(config, &outcomes, start.elapsed().as_secs_f64()))
}

pub fn run_study_sequential(config: &StudyConfig) -> Result<StudyReport> {
    let start = Instant::now();
    let outcomes = run_all(config, std::slice::from_ref(&config.design.scheme), false)?.remove(0);
    Ok(summarize(config, &outcomes, start.elapsed().as_secs_f64()))
}

/// One report per scheme, all computed on identical cohorts and subcohort
/// draws so that differences between schemes are paired.
pub fn compare_schemes(config: &StudyConfig, schemes: &[WeightScheme]) -> Result<ComparisonReport> {
    if schemes.is_empty() {
        return Err(Error::Config("no schemes to compare".into()));
    }
    let start = Instant::now();
    let outcomes = run_all(config, schemes, true)?;
    let runtime = start.elapsed().as_secs_f64();
    let reports = schemes
        .iter()
        .zip(&outcomes)
        .map(|(scheme, o)| summarize(&config.with_scheme(scheme), o, runtime))
        .collect();
    Ok(ComparisonReport { reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    #[serde(alias = "markdown")]
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Md),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Column order of the csv and markdown tables.
pub const TABLE_COLUMNS: [&str; 14] = [
    "scheme",
    "family",
    "coefficient",
    "theta0",
    "mean",
    "bias",
    "empirical_sd",
    "mean_se",
    "se_ratio",
    "coverage",
    "used",
    "nonconverged",
    "diverged",
    "unstable",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn table_rows(reports: &[StudyReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in reports {
        for c in &r.coefficients {
            rows.push(vec![
                r.scheme.clone(),
                format!("{:?}", r.family).to_lowercase(),
                (c.index + 1).to_string(),
                c.theta0.to_string(),
                c.mean.to_string(),
                c.bias.to_string(),
                fmt_opt(c.empirical_sd),
                c.mean_se.to_string(),
                fmt_opt(c.se_ratio),
                c.coverage.to_string(),
                r.used.to_string(),
                r.nonconverged.to_string(),
                r.diverged.to_string(),
                r.unstable.to_string(),
            ]);
        }
    }
    rows
}

pub fn render_reports(reports: &[StudyReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = if let [single] = reports {
                serde_json::to_string_pretty(single)?
            } else {
                serde_json::to_string_pretty(&ComparisonReport {
                    reports: reports.to_vec(),
                })?
            };
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TABLE_COLUMNS)?;
            for row in table_rows(reports) {
                w.write_record(&row)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Md => {
            let mut s = String::new();
            let _ = writeln!(s, "| {} |", TABLE_COLUMNS.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
            for row in table_rows(reports) {
                let _ = writeln!(s, "| {} |", row.join(" | "));
            }
            Ok(s)
        }
    }
}

pub fn emit_report(reports: &[StudyReport], format: ReportFormat, out: &Path) -> Result<()> {
    let text = render_reports(reports, format)?;
    let mut file = std::fs::File::create(out)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::SamplingPlan;
    use crate::path::CovariatePath;

    pub(crate) fn small_config(family: Family, replications: usize) -> StudyConfig {
        StudyConfig {
            replications,
            n: 150,
            model: ModelSpec {
                family,
                theta0: vec![0.5],
                baseline: CovariatePath::scalar(1.0),
                tau: 3.0,
            },
            censoring: CensoringSpec::Exponential { rate: 0.5 },
            covgen: CovariateGenerator::PiecewiseSwitch {
                p: 0.5,
                rate: 0.5,
                levels: [0.0, 1.0],
            },
            design: DesignConfig {
                plan: Some(SamplingPlan::simple(0.3, 0)),
                scheme: WeightScheme::IpwKl,
            },
            fit: FitOptions::default(),
            seed: 42,
            confidence: 0.95,
            pi_floor: DEFAULT_PI_FLOOR,
        }
    }

    fn fitted(theta: f64, se: f64) -> ReplicateOutcome {
        ReplicateOutcome::Fitted {
            theta: vec![theta],
            se: vec![se],
        }
    }

    #[test]
    fn summary_formulas() {
        let mut config = small_config(Family::Cox, 3);
        config.model.theta0 = vec![1.0];
        let outcomes = [fitted(1.0, 0.1), fitted(1.1, 0.1), fitted(0.9, 0.01)];
        let r = summarize(&config, &outcomes, 0.0);
        let c = &r.coefficients[0];
        assert_eq!(c.mean, 1.0);
        assert_eq!(c.bias, 0.0);
        assert_eq!(c.empirical_sd, Some(0.1));
        assert_eq!(c.mean_se, 0.07);
        assert!((c.coverage - 2.0 / 3.0).abs() < 1e-6);
        assert!(!r.unstable);
    }

    #[test]
    fn exclusions_are_counted_and_listed() {
        let config = small_config(Family::Cox, 4);
        let excluded = ReplicateOutcome::Excluded {
            reason: Exclusion::Diverged,
            message: "x".into(),
        };
        let outcomes = [fitted(0.5, 0.1), excluded.clone(), fitted(0.6, 0.1), fitted(0.4, 0.1)];
        let r = summarize(&config, &outcomes, 0.0);
        assert_eq!((r.used, r.diverged, r.nonconverged), (3, 1, 0));
        assert_eq!(r.excluded[0].index, 1);
        assert_eq!(r.excluded[0].seed, replicate_seed(42, 1));
        assert!(r.unstable);
        let r = summarize(&config, &[excluded], 0.0);
        assert!(r.unstable && r.coefficients.is_empty());
    }

    #[test]
    fn single_replicate_report() {
        let config = small_config(Family::Cox, 1);
        let r = run_study(&config).unwrap();
        let c = &r.coefficients[0];
        assert_eq!(r.used, 1);
        assert!(c.coverage == 0.0 || c.coverage == 1.0);
        assert_eq!(c.empirical_sd, None);
        let seed = replicate_seed(config.seed, 0);
        let cohort = simulate_cohort(config.n, &config.model, &config.censoring, &config.covgen, seed).unwrap();
        let plan = config.design.plan.as_ref().unwrap().with_seed(seed);
        let sampled = sample_subcohort(&cohort, &plan, config.pi_floor).unwrap();
        let weighted = build_weights(&sampled, &WeightScheme::IpwKl, config.pi_floor).unwrap();
        let fit = fit_cox(&weighted, &config.fit).unwrap();
        assert_eq!(c.mean, round_sig(fit.theta_hat[0]));
        assert_eq!(c.mean_se, round_sig(fit.se[0]));
    }

    #[test]
    fn deterministic_and_thread_independent() {
        for family in [Family::Cox, Family::Additive] {
            let config = small_config(family, 12);
            let a = run_study(&config).unwrap();
            let b = run_study_sequential(&config).unwrap();
            let c = rayon::ThreadPoolBuilder::new()
                .num_threads(3)
                .build()
                .unwrap()
                .install(|| run_study(&config))
                .unwrap();
            assert!(a.same_results(&b) && a.same_results(&c));
        }
    }

    #[test]
    fn unit_pi_comparison_is_identical() {
        let mut config = small_config(Family::Additive, 5);
        config.design.plan = Some(SamplingPlan::simple(1.0, 0));
        let cmp = compare_schemes(&config, &[WeightScheme::FullData, WeightScheme::IpwKl]).unwrap();
        let (a, b) = (&cmp.reports[0], &cmp.reports[1]);
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.excluded, b.excluded);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = small_config(Family::Cox, 0);
        assert!(matches!(run_study(&config), Err(Error::Config(_))));
        config.replications = 2;
        config.design.plan = None;
        assert!(matches!(run_study(&config), Err(Error::Config(_))));
        config.design.scheme = WeightScheme::FullData;
        assert!(run_study(&config).is_ok());
        config.confidence = 1.0;
        assert!(run_study(&config).is_err());
    }

    #[test]
    fn round_sig_keeps_six_digits() {
        assert_eq!(round_sig(0.123456789), 0.123457);
        assert_eq!(round_sig(-98765.4321), -98765.4);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn reports_render_and_round_trip() {
        let config = small_config(Family::Additive, 4);
        let r = run_study(&config).unwrap();
        let json = render_reports(std::slice::from_ref(&r), ReportFormat::Json).unwrap();
        let back: StudyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);

        let cmp = compare_schemes(&config, &[WeightScheme::FullData, WeightScheme::IpwKl]).unwrap();
        let csv = render_reports(&cmp.reports, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TABLE_COLUMNS.join(","));
        assert_eq!(lines.len(), 1 + 2);
        assert!(lines[1].starts_with("full-data,additive,1,"));

        let md = render_reports(&cmp.reports, ReportFormat::Md).unwrap();
        assert!(md.lines().next().unwrap().starts_with("| scheme | family | coefficient | theta0 |"));
        assert_eq!(md.lines().count(), 4);
    }
}

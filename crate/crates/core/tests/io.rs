use std::io::Cursor;

use casecohort::design::CompleteData;
use casecohort::io::{load_cohort, read_cohort_csv, save_cohort, sidecar_path, write_cohort_csv, CohortMeta};
use casecohort::{
    apply_design, simulate_cohort, CensoringSpec, Cohort, CovariateGenerator, CovariatePath, DesignConfig, Error,
    Family, ModelSpec, SamplingPlan, Subject, WeightScheme, DEFAULT_PI_FLOOR,
};

fn simulated() -> Cohort {
    let model = ModelSpec {
        family: Family::Cox,
        theta0: vec![0.5, -0.3],
        baseline: CovariatePath::scalar(1.0),
        tau: 3.0,
    };
    let covgen = CovariateGenerator::PiecewiseSwitch {
        p: 0.5,
        rate: 0.7,
        levels: [0.0, 1.0],
    };
    simulate_cohort(60, &model, &CensoringSpec::Exponential { rate: 0.4 }, &covgen, 11).unwrap()
}

fn same_subjects(a: &Cohort, b: &Cohort) {
    assert_eq!(a.len(), b.len());
    assert_eq!((a.tau(), a.dim()), (b.tau(), b.dim()));
    for (x, y) in a.subjects().iter().zip(b.subjects()) {
        assert_eq!((x.id, x.y, x.delta, x.r, x.pi), (y.id, y.y, y.delta, y.r, y.pi));
        assert_eq!(x.stratum, y.stratum);
        assert_eq!(x.omega.simplified(), y.omega);
        assert_eq!(x.w.simplified(), y.w);
        assert_eq!(x.try_z().map(CovariatePath::simplified), y.try_z().cloned());
    }
}

#[test]
fn full_cohort_round_trips() {
    let c = simulated();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cohort.csv");
    save_cohort(&c, &path).unwrap();
    assert!(sidecar_path(&path).ends_with("cohort.meta.json"));
    same_subjects(&c, &load_cohort(&path).unwrap());
}

#[test]
fn masked_subjects_round_trip() {
    let c = simulated();
    let design = DesignConfig {
        plan: Some(SamplingPlan::simple(0.3, 4)),
        scheme: WeightScheme::TwoPhase {
            complete: CompleteData::SubcohortOrFailure,
        },
    };
    let weighted = apply_design(&c, &design, DEFAULT_PI_FLOOR).unwrap();
    assert!(weighted.subjects().iter().any(|s| !s.observed()));
    let mut buf = Vec::new();
    write_cohort_csv(&weighted, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("id,y,delta,stratum,r,pi,seg_start,z1,z2,omega,w\n"));
    assert!(text.contains(",NA,NA,0,0"));
    let meta = CohortMeta { tau: 3.0, d: 2 };
    same_subjects(&weighted, &read_cohort_csv(Cursor::new(buf), meta).unwrap());
}

#[test]
fn weight_paths_get_their_own_segments() {
    let z = CovariatePath::scalar_steps(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
    let w = CovariatePath::scalar_steps(vec![0.0, 0.5], vec![2.0, 1.0]).unwrap();
    let s = Subject::new(7, 2.0, true, z).with_weights(CovariatePath::scalar(1.0), w);
    let c = Cohort::new(vec![s], 2.0, 1).unwrap();
    let mut buf = Vec::new();
    write_cohort_csv(&c, &mut buf).unwrap();
    let rows: Vec<String> = String::from_utf8(buf).unwrap().lines().map(str::to_string).collect();
    assert_eq!(
        rows[1..],
        ["7,2,1,all,1,1,0,0,1,2", "7,2,1,all,1,1,0.5,0,1,1", "7,2,1,all,1,1,1,1,1,1"]
    );
}

fn parse(text: &str) -> Result<Cohort, Error> {
    read_cohort_csv(Cursor::new(text.as_bytes().to_vec()), CohortMeta { tau: 5.0, d: 1 })
}

#[test]
fn malformed_files_are_rejected() {
    let header = "id,y,delta,stratum,r,pi,seg_start,z1,omega,w\n";
    assert!(parse(header).unwrap().is_empty());
    assert!(matches!(parse("id,y\n1,2\n"), Err(Error::Parse { .. })));
    let unsorted = format!("{header}1,2,1,a,1,1,0.5,0,1,1\n1,2,1,a,1,1,0,1,1,1\n");
    assert!(matches!(parse(&unsorted), Err(Error::Parse { .. })));
    let split = format!("{header}1,2,1,a,1,1,0,0,1,1\n2,2,1,a,1,1,0,0,1,1\n1,2,1,a,1,1,1,1,1,1\n");
    assert!(matches!(parse(&split), Err(Error::Parse { .. })));
    let bad_flag = format!("{header}1,2,yes,a,1,1,0,0,1,1\n");
    assert!(matches!(parse(&bad_flag), Err(Error::Parse { record: 1, .. })));
    let bad_number = format!("{header}1,2,1,a,1,1,0,abc,1,1\n");
    assert!(matches!(parse(&bad_number), Err(Error::Parse { .. })));
    let late_start = format!("{header}1,2,1,a,1,1,0.5,0,1,1\n");
    assert!(parse(&late_start).is_err());
}

#[test]
fn missing_sidecar_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lonely.csv");
    std::fs::write(&path, "id,y,delta,stratum,r,pi,seg_start,z1,omega,w\n").unwrap();
    assert!(matches!(load_cohort(&path), Err(Error::Io(_))));
}

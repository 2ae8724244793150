//! Cohort CSV files.
//!
//! One row per (subject, segment) with columns
//! `id,y,delta,stratum,r,pi,seg_start,z1..zd,omega,w`. Segments of a subject
//! are contiguous and sorted by `seg_start`, and cover the union of the
//! breakpoints of `Z`, `Ω` and `W`. Covariates of masked subjects are written
//! as `NA`. The horizon and dimension live in a JSON sidecar next to the CSV
//! (`cohort.csv` pairs with `cohort.meta.json`).

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Subject};
use crate::error::{Error, Result};
use crate::path::{merged_breakpoints, CovariatePath};

const MISSING: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortMeta {
    pub tau: f64,
    pub d: usize,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.meta.json"))
}

fn header(dim: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["id", "y", "delta", "stratum", "r", "pi", "seg_start"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=dim).map(|j| format!("z{j}")));
    cols.push("omega".into());
    cols.push("w".into());
    cols
}

pub fn write_cohort_csv<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let dim = cohort.dim();
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(header(dim))?;
    for s in cohort.subjects() {
        let starts = match s.try_z() {
            Some(z) => merged_breakpoints(&[z, &s.omega, &s.w]),
            None => merged_breakpoints(&[&s.omega, &s.w]),
        };
        for t in starts {
            let mut row = vec![
                s.id.to_string(),
                s.y.to_string(),
                u8::from(s.delta).to_string(),
                s.stratum.clone(),
                u8::from(s.r).to_string(),
                s.pi.to_string(),
                t.to_string(),
            ];
            match s.try_z() {
                Some(z) => row.extend(z.eval(t)?.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(MISSING.to_string(), dim)),
            }
            row.push(s.omega.eval_scalar(t)?.to_string());
            row.push(s.w.eval_scalar(t)?.to_string());
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

struct Pending {
    id: u64,
    y: f64,
    delta: bool,
    stratum: String,
    r: bool,
    pi: f64,
    masked: bool,
    starts: Vec<f64>,
    z: Vec<f64>,
    omega: Vec<f64>,
    w: Vec<f64>,
}

impl Pending {
    fn finish(self, dim: usize) -> Result<Subject> {
        let omega = CovariatePath::scalar_steps(self.starts.clone(), self.omega)?.simplified();
        let w = CovariatePath::scalar_steps(self.starts.clone(), self.w)?.simplified();
        let subject = if self.masked {
            Subject::masked(self.id, self.y, self.delta, self.stratum, self.r, self.pi)
        } else {
            let z = CovariatePath::from_flat(self.starts, self.z, dim)?.simplified();
            let mut s = Subject::new(self.id, self.y, self.delta, z).with_stratum(self.stratum);
            s.r = self.r;
            s.pi = self.pi;
            s
        };
        Ok(subject.with_weights(omega, w))
    }
}

fn parse_f64(field: &str, record: usize, col: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Parse {
        record,
        msg: format!("column {col}: cannot parse {field:?} as a number"),
    })
}

fn parse_flag(field: &str, record: usize, col: &str) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            record,
            msg: format!("column {col}: expected 0 or 1, got {other:?}"),
        }),
    }
}

pub fn read_cohort_csv<R: Read>(input: R, meta: CohortMeta) -> Result<Cohort> {
    let dim = meta.d;
    let mut reader = csv::Reader::from_reader(input);
    let expected = header(dim);
    let got: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(Error::Parse {
            record: 0,
            msg: format!("expected header {}, got {}", expected.join(","), got.join(",")),
        });
    }

    let mut subjects = Vec::new();
    let mut pending: Option<Pending> = None;
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let record = i + 1;
        let id: u64 = row[0].trim().parse().map_err(|_| Error::Parse {
            record,
            msg: format!("column id: cannot parse {:?}", &row[0]),
        })?;
        let start = parse_f64(&row[6], record, "seg_start")?;
        let z_fields: Vec<&str> = (0..dim).map(|j| row[7 + j].trim()).collect();
        let masked = z_fields.iter().all(|f| *f == MISSING);
        if !masked && z_fields.contains(&MISSING) {
            return Err(Error::Parse {
                record,
                msg: "covariates partially missing".into(),
            });
        }
        let omega = parse_f64(&row[7 + dim], record, "omega")?;
        let w = parse_f64(&row[8 + dim], record, "w")?;

        let continues = pending.as_ref().is_some_and(|p| p.id == id);
        if continues {
            let p = pending.as_mut().expect("pending subject");
            if p.masked != masked {
                return Err(Error::Parse {
                    record,
                    msg: format!("subject {id} mixes observed and missing covariates"),
                });
            }
            if !(start > *p.starts.last().expect("segment")) {
                return Err(Error::Parse {
                    record,
                    msg: format!("segments of subject {id} are not sorted"),
                });
            }
        } else {
            if let Some(done) = pending.take() {
                subjects.push(done.finish(dim)?);
            }
            if !seen.insert(id) {
                return Err(Error::Parse {
                    record,
                    msg: format!("segments of subject {id} are not contiguous"),
                });
            }
            pending = Some(Pending {
                id,
                y: parse_f64(&row[1], record, "y")?,
                delta: parse_flag(&row[2], record, "delta")?,
                stratum: row[3].trim().to_string(),
                r: parse_flag(&row[4], record, "r")?,
                pi: parse_f64(&row[5], record, "pi")?,
                masked,
                starts: Vec::new(),
                z: Vec::new(),
                omega: Vec::new(),
                w: Vec::new(),
            });
        }
        let p = pending.as_mut().expect("pending subject");
        p.starts.push(start);
        if !masked {
            for (j, f) in z_fields.iter().enumerate() {
                p.z.push(parse_f64(f, record, &format!("z{}", j + 1))?);
            }
        }
        p.omega.push(omega);
        p.w.push(w);
    }
    if let Some(done) = pending.take() {
        subjects.push(done.finish(dim)?);
    }
    Cohort::new(subjects, meta.tau, dim)
}

/// Writes the CSV and its sidecar.
pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    write_cohort_csv(cohort, File::create(path)?)?;
    let meta = CohortMeta {
        tau: cohort.tau(),
        d: cohort.dim(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let meta: CohortMeta = serde_json::from_reader(File::open(sidecar_path(path))?)?;
    read_cohort_csv(File::open(path)?, meta)
}

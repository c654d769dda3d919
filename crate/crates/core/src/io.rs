//! Long-format cohort CSV: one row per person-month.
//!
//! ```text
//! id,k,sex,age,smoking,cd4,rna,high_bmi,insti,event
//! ```
//!
//! Rows of a person are consecutive with `k` contiguous from 0. At most one
//! row per person carries `event=1`, and it is the person's last row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cohort::{Baseline, Cohort, CovariateSchema, PersonTrajectory, Record, ScenarioTag};
use crate::error::{Error, Result};

pub const HEADER: &str = "id,k,sex,age,smoking,cd4,rna,high_bmi,insti,event";

/// Writes `cohort` in long format. Floats use the shortest representation
/// that round-trips exactly.
pub fn write_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_cohort_to(cohort, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_cohort_to<W: Write>(cohort: &Cohort, out: &mut W) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for p in &cohort.persons {
        let b = &p.baseline;
        for (k, r) in p.records.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                p.id,
                k,
                b.sex,
                b.age,
                b.smoking,
                r.cd4,
                r.rna,
                r.high_bmi,
                r.insti,
                u8::from(p.event_at(k)),
            )?;
        }
    }
    Ok(())
}

/// Reads a cohort file. The horizon is inferred as the longest follow-up in
/// the file; the scenario tag is [`ScenarioTag::External`].
pub fn read_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    read_cohort_with_horizon(path, None)
}

pub fn read_cohort_with_horizon(path: impl AsRef<Path>, horizon: Option<usize>) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_cohort_from(BufReader::new(file), path, horizon)
}

struct Row {
    line: usize,
    id: u64,
    k: usize,
    baseline: Baseline,
    record: Record,
    event: bool,
}

pub fn read_cohort_from<R: Read>(
    reader: R,
    path: &Path,
    horizon: Option<usize>,
) -> Result<Cohort> {
    let err = |row: usize, msg: String| Error::Parse { path: path.to_path_buf(), row, msg };
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end_matches('\r') != HEADER {
        let missing: Vec<&str> = HEADER
            .split(',')
            .filter(|c| !header.split(',').any(|h| h.trim() == *c))
            .collect();
        let msg = if missing.is_empty() {
            format!("header must be exactly '{HEADER}'")
        } else {
            format!("missing columns: {}", missing.join(", "))
        };
        return Err(err(1, msg));
    }

    let mut persons: Vec<PersonTrajectory> = Vec::new();
    let mut current: Option<(PersonTrajectory, bool)> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row = parse_row(&line, line_no).map_err(|m| err(line_no, m))?;
        match current.as_mut() {
            Some((p, ended)) if p.id == row.id => {
                if *ended {
                    return Err(err(row.line, format!("record after event for person {}", p.id)));
                }
                if row.k != p.records.len() {
                    return Err(err(
                        row.line,
                        format!("non-contiguous k: expected {}, found {}", p.records.len(), row.k),
                    ));
                }
                if row.baseline != p.baseline {
                    return Err(err(row.line, format!("baseline changes within person {}", p.id)));
                }
                p.records.push(row.record);
                if row.event {
                    p.event_time = Some(row.k + 1);
                    *ended = true;
                }
            }
            _ => {
                if let Some((p, _)) = current.take() {
                    persons.push(p);
                }
                if row.k != 0 {
                    return Err(err(
                        row.line,
                        format!("non-contiguous k: person {} starts at k={}", row.id, row.k),
                    ));
                }
                let p = PersonTrajectory {
                    id: row.id,
                    baseline: row.baseline,
                    records: vec![row.record],
                    event_time: row.event.then_some(1),
                };
                current = Some((p, row.event));
            }
        }
    }
    if let Some((p, _)) = current {
        persons.push(p);
    }
    let horizon =
        horizon.unwrap_or_else(|| persons.iter().map(|p| p.records.len()).max().unwrap_or(0));
    Cohort::new(CovariateSchema::new(horizon), persons, ScenarioTag::External)
}

fn parse_row(line: &str, line_no: usize) -> std::result::Result<Row, String> {
    let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    if fields.len() != 10 {
        return Err(format!("expected 10 fields, found {}", fields.len()));
    }
    fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
        s.trim().parse().map_err(|_| format!("invalid {name} '{s}'"))
    }
    fn flag(s: &str, name: &str) -> std::result::Result<u8, String> {
        match s.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(format!("{name} must be 0 or 1, found '{s}'")),
        }
    }
    fn finite(s: &str, name: &str) -> std::result::Result<f64, String> {
        let v: f64 = num(s, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{name} must be finite"))
        }
    }
    let smoking: u8 = num(fields[4], "smoking")?;
    if smoking > 2 {
        return Err(format!("smoking must be 0, 1 or 2, found {smoking}"));
    }
    Ok(Row {
        line: line_no,
        id: num(fields[0], "id")?,
        k: num(fields[1], "k")?,
        baseline: Baseline {
            sex: flag(fields[2], "sex")?,
            age: finite(fields[3], "age")?,
            smoking,
        },
        record: Record {
            cd4: finite(fields[5], "cd4")?,
            rna: finite(fields[6], "rna")?,
            high_bmi: flag(fields[7], "high_bmi")?,
            insti: flag(fields[8], "insti")?,
        },
        event: flag(fields[9], "event")? == 1,
    })
}

//! File formats: JSON documents, JSON-lines trajectories and CSV tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ResultRow;
use crate::mdp::{Action, Step, Trajectory};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// One trajectory per line, each a JSON array of `[s, a, s']` triples.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in trajs {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_trajectories(reader: impl BufRead) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, detail: e.to_string() })?;
        out.push(t);
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    parse_trajectories(BufReader::new(File::open(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionZetaRow {
    s: usize,
    a: usize,
    s_next: usize,
    zeta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureZetaRow {
    feature_index: usize,
    zeta_f: f64,
}

pub fn write_transition_zeta(path: &Path, zeta: &BTreeMap<Step, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (st, z) in zeta {
        w.serialize(TransitionZetaRow { s: st.state, a: st.action.index(), s_next: st.next, zeta: *z })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_feature_zeta(path: &Path, zeta_f: &BTreeMap<usize, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, z) in zeta_f {
        w.serialize(FeatureZetaRow { feature_index: *i, zeta_f: *z })?;
    }
    w.flush()?;
    Ok(())
}

/// Deserializes every record, reporting failures with their 1-based file line.
fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec.map_err(|e: csv::Error| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_transition_zeta(path: &Path) -> Result<BTreeMap<Step, f64>> {
    read_csv::<TransitionZetaRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let action = Action::from_index(r.a).ok_or_else(|| Error::Parse {
                line: i + 2,
                detail: format!("action index {} out of range", r.a),
            })?;
            Ok((Step::new(r.s, action, r.s_next), r.zeta))
        })
        .collect()
}

pub fn read_feature_zeta(path: &Path) -> Result<BTreeMap<usize, f64>> {
    Ok(read_csv::<FeatureZetaRow>(path)?.into_iter().map(|r| (r.feature_index, r.zeta_f)).collect())
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(crate::metrics::RESULT_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample() -> Vec<Trajectory> {
        vec![
            Trajectory::new(vec![Step::new(0, Action::E, 1), Step::new(1, Action::SE, 11)]),
            Trajectory::default(),
        ]
    }

    #[test]
    fn trajectories_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        write_trajectories(&path, &sample()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "[[0,1,1],[1,5,11]]\n[]\n");
        assert_eq!(read_trajectories(&path).unwrap(), sample());
    }

    #[test]
    fn bad_trajectory_line_is_located() {
        let err = parse_trajectories(Cursor::new("[[0,1,1]]\n\n[[0,9,1]]\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn zeta_tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let zeta: BTreeMap<Step, f64> =
            [(Step::new(3, Action::N, 0), 0.25), (Step::new(3, Action::W, 2), 0.75)].into_iter().collect();
        let p = dir.path().join("zeta.csv");
        write_transition_zeta(&p, &zeta).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("s,a,s_next,zeta\n3,0,0,0.25\n"));
        assert_eq!(read_transition_zeta(&p).unwrap(), zeta);

        let zf: BTreeMap<usize, f64> = [(0, 0.1), (91, 0.9)].into_iter().collect();
        let p = dir.path().join("zeta_f.csv");
        write_feature_zeta(&p, &zf).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("feature_index,zeta_f\n"));
        assert_eq!(read_feature_zeta(&p).unwrap(), zf);
    }

    #[test]
    fn results_round_trip_with_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        let rows = vec![ResultRow {
            world_id: 2,
            method: "mdft".into(),
            w_n: Some(0.3),
            norm_len: Some(1.25),
            seed: 7,
            ..Default::default()
        }];
        write_results(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            "world_id,method,w_n,n_demos,chi,fp,fn,kl,js,norm_len,norm_penalty,violations,seed,flag\n"
        ));
        assert_eq!(read_results(&p).unwrap(), rows);

        write_results(&p, &[]).unwrap();
        assert!(read_results(&p).unwrap().is_empty());
    }

    #[test]
    fn malformed_results_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        std::fs::write(
            &p,
            "world_id,method,w_n,n_demos,chi,fp,fn,kl,js,norm_len,norm_penalty,violations,seed,flag\n\
             0,wa,0.5,,,,,,,1.0,1.0,0.0,1,\n\
             x,wa,0.5,,,,,,,1.0,1.0,0.0,1,\n",
        )
        .unwrap();
        assert!(matches!(read_results(&p), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_json(&p, &vec![1.5, 2.0]).unwrap();
        assert_eq!(read_json::<Vec<f64>>(&p).unwrap(), vec![1.5, 2.0]);
        assert!(read_json::<Vec<f64>>(&dir.path().join("missing.json")).is_err());
        let awkward = vec![0.1 + 0.2, 1.0 / 3.0, -17.766_586_280_924_35, 5e-324];
        write_json(&p, &awkward).unwrap();
        assert_eq!(read_json::<Vec<f64>>(&p).unwrap(), awkward);
    }
}

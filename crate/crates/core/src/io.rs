//! Output files. Everything is written to a temporary file next to the
//! target and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::continuation::Branch;
use crate::error::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let name = path.file_name().ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Scalar series of one branch point, as written to `branch.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct PointRecord {
    pub s: f64,
    pub mu: f64,
    pub sup_norm: f64,
    pub sigma1: f64,
    pub morse_index: usize,
}

pub fn point_records(branch: &Branch) -> Vec<PointRecord> {
    branch
        .points
        .iter()
        .map(|p| PointRecord { s: p.s, mu: p.mu, sup_norm: p.sup_norm, sigma1: p.sigma1, morse_index: p.morse_index })
        .collect()
}

pub fn branch_jsonl(branch: &Branch) -> String {
    let mut out = String::new();
    for r in point_records(branch) {
        out.push_str(&serde_json::to_string(&r).expect("plain record"));
        out.push('\n');
    }
    out
}

pub const CSV_HEADER: &str = "s,mu,sup_norm,sigma1,morse_index";

/// Seventeen significant digits, enough to round-trip every `f64`.
pub fn branch_csv(branch: &Branch) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in point_records(branch) {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e},{}\n", r.s, r.mu, r.sup_norm, r.sigma1, r.morse_index));
    }
    out
}

/// Writes `branch.jsonl`, `branch.csv`, `events.json`, `folds.json` and,
/// if asked, every stored solution as `snapshots/point_<index>.json`.
pub fn write_branch(dir: &Path, branch: &Branch, snapshots: bool) -> Result<Vec<PathBuf>> {
    let mut written = vec![dir.join("branch.jsonl"), dir.join("branch.csv"), dir.join("events.json"), dir.join("folds.json")];
    write_atomic(&written[0], branch_jsonl(branch).as_bytes())?;
    write_atomic(&written[1], branch_csv(branch).as_bytes())?;
    write_json(&written[2], &branch.events)?;
    write_json(&written[3], &branch.folds)?;
    if snapshots {
        for (i, p) in branch.points.iter().enumerate() {
            if p.v.is_some() {
                let path = dir.join("snapshots").join(format!("point_{i:05}.json"));
                write_json(&path, p)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Checks that `branch.csv` and `branch.jsonl` in `dir` hold identical
/// scalar series, bit for bit.
pub fn cross_check(dir: &Path) -> Result<usize> {
    let bad = |m: String| Error::Io(format!("self-test: {m}"));
    let jsonl = fs::read_to_string(dir.join("branch.jsonl"))?;
    let csv = fs::read_to_string(dir.join("branch.csv"))?;
    let mut lines = csv.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad("unexpected csv header".into()));
    }
    let from_json: Vec<PointRecord> = jsonl
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| bad(e.to_string())))
        .collect::<Result<_>>()?;
    let from_csv: Vec<PointRecord> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("bad csv row `{l}`")));
            }
            let num = |t: &str| t.parse::<f64>().map_err(|e| bad(e.to_string()));
            Ok(PointRecord {
                s: num(f[0])?,
                mu: num(f[1])?,
                sup_norm: num(f[2])?,
                sigma1: num(f[3])?,
                morse_index: f[4].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            })
        })
        .collect::<Result<_>>()?;
    if from_json.len() != from_csv.len() {
        return Err(bad(format!("{} json rows, {} csv rows", from_json.len(), from_csv.len())));
    }
    for (i, (a, b)) in from_json.iter().zip(&from_csv).enumerate() {
        let same = a.s.to_bits() == b.s.to_bits()
            && a.mu.to_bits() == b.mu.to_bits()
            && a.sup_norm.to_bits() == b.sup_norm.to_bits()
            && a.sigma1.to_bits() == b.sigma1.to_bits()
            && a.morse_index == b.morse_index;
        if !same {
            return Err(bad(format!("row {i} differs")));
        }
    }
    Ok(from_json.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{BranchPoint, Phase};

    fn point(s: f64) -> BranchPoint {
        BranchPoint {
            s,
            mu: s.sin() * 3.0,
            sup_norm: s / 7.0,
            sigma1: 1.0 / (s + 0.1),
            sigma2: 2.0,
            morse_index: 0,
            phase: Phase::Natural,
            newton_history: vec![],
            tangent_mu: 1.0,
            tangent_v: None,
            v: None,
        }
    }

    #[test]
    fn csv_and_jsonl_agree_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let branch = Branch { points: (0..50).map(|i| point(i as f64 * 0.1234567891234)).collect(), ..Branch::default() };
        write_branch(dir.path(), &branch, false).unwrap();
        assert_eq!(cross_check(dir.path()).unwrap(), 50);
        let back: Vec<PointRecord> =
            fs::read_to_string(dir.path().join("branch.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, point_records(&branch));
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(&dir.path().join("a/b.txt"), b"x").unwrap();
        let names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec!["b.txt"]);
    }
}

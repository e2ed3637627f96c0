//! Scalar expectations checked against the results of a run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// `|value − target| ≤ tol + rel_tol·|target|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub name: String,
    pub target: f64,
    #[serde(default)]
    pub tol: f64,
    #[serde(default)]
    pub rel_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub expectations: Vec<Expectation>,
}

impl Expectations {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let e: Expectations =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for x in &e.expectations {
            if !(x.tol >= 0.0 && x.rel_tol >= 0.0) || x.tol + x.rel_tol == 0.0 {
                return Err(CliError::Config(format!("expectation {} needs a positive tolerance", x.name)));
            }
        }
        Ok(e)
    }
}

pub struct Report {
    pub lines: Vec<String>,
    pub passed: usize,
    pub total: usize,
}

/// Errors when a named scalar is absent from the results.
pub fn check(expectations: &Expectations, results: &BTreeMap<String, f64>) -> Result<Report, CliError> {
    let mut lines = Vec::new();
    let mut passed = 0;
    for e in &expectations.expectations {
        let v = *results
            .get(&e.name)
            .ok_or_else(|| CliError::Config(format!("result {} is missing from the run", e.name)))?;
        let allowed = e.tol + e.rel_tol * e.target.abs();
        let ok = (v - e.target).abs() <= allowed;
        passed += ok as usize;
        lines.push(format!(
            "{} {}: value {v:.6e}, target {:.6e}, allowed deviation {allowed:.3e}",
            if ok { "PASS" } else { "FAIL" },
            e.name,
            e.target
        ));
    }
    Ok(Report { lines, passed, total: expectations.expectations.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_and_relative_tolerances() {
        let results = BTreeMap::from([("a".to_string(), 2.0005), ("b".to_string(), 101.0)]);
        let exp = Expectations {
            expectations: vec![
                Expectation { name: "a".into(), target: 2.0, tol: 1e-3, rel_tol: 0.0 },
                Expectation { name: "b".into(), target: 100.0, tol: 0.0, rel_tol: 1e-3 },
            ],
        };
        let r = check(&exp, &results).unwrap();
        assert_eq!((r.passed, r.total), (1, 2));
        assert!(r.lines[0].starts_with("PASS") && r.lines[1].starts_with("FAIL"));
    }

    #[test]
    fn missing_scalar_is_an_error() {
        let exp = Expectations { expectations: vec![Expectation { name: "c".into(), target: 0.0, tol: 1.0, rel_tol: 0.0 }] };
        assert!(check(&exp, &BTreeMap::new()).is_err());
    }
}

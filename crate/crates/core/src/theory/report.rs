use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One checked inequality or identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub fixture: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` for inequalities `lhs <= rhs`; minus the residual for identities.
    pub slack: f64,
    pub pass: bool,
}

impl CheckRecord {
    /// `lhs <= rhs + tol`.
    pub fn at_most(check: &str, fixture: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        CheckRecord {
            check: check.into(),
            fixture: fixture.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            pass: lhs <= rhs + tol,
        }
    }

    /// `|lhs - rhs| <= tol`.
    pub fn equal(check: &str, fixture: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let residual = (lhs - rhs).abs();
        CheckRecord {
            check: check.into(),
            fixture: fixture.into(),
            lhs,
            rhs,
            slack: -residual,
            pass: residual <= tol,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub records: Vec<CheckRecord>,
}

impl Report {
    pub fn new(suite: &str) -> Self {
        Report {
            suite: suite.into(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: CheckRecord) {
        self.records.push(record);
    }

    pub fn extend(&mut self, other: Report) {
        self.records.extend(other.records);
    }

    pub fn pass(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.pass)
    }

    /// Records of one check kind.
    pub fn of<'a>(&'a self, check: &'a str) -> impl Iterator<Item = &'a CheckRecord> + 'a {
        self.records.iter().filter(move |r| r.check == check)
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Per-check counts and worst slack.
    pub fn summary(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.records {
            if !names.contains(&r.check.as_str()) {
                names.push(&r.check);
            }
        }
        let mut out = format!("{:<28} {:>8} {:>8} {:>14}\n", "check", "records", "failed", "worst slack");
        for name in names {
            let rows: Vec<&CheckRecord> = self.of(name).collect();
            let failed = rows.iter().filter(|r| !r.pass).count();
            let worst = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
            let _ = writeln!(out, "{name:<28} {:>8} {failed:>8} {worst:>14.6e}", rows.len());
        }
        let _ = writeln!(
            out,
            "suite {}: {}",
            self.suite,
            if self.pass() { "PASS" } else { "FAIL" }
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_jsonl() {
        let mut report = Report::new("demo");
        assert!(!report.pass());
        report.push(CheckRecord::at_most("bound", "f0", 1.0, 2.0, 0.0));
        report.push(CheckRecord::equal("identity", "f0", 1.0, 1.0 + 1e-9, 1e-6));
        assert!(report.pass());
        report.push(CheckRecord::at_most("bound", "f1", 3.0, 2.0, 1e-9));
        assert!(!report.pass());
        assert_eq!(report.failures().count(), 1);
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let lines: Vec<CheckRecord> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, report.records);
        assert!(report.summary().contains("suite demo: FAIL"));
    }
}

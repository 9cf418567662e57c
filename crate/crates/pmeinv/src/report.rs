//! Run report: resolved config, invariant table, error norms, plot series
//! and the artifact manifest.
//!
//! The report holds only reproducible content. Wall-clock timings go to a
//! separate `timings.json`, so repeated runs give byte-identical reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Stage};
use crate::error::AppError;
use crate::format;

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    /// Counts toward `verify --strict`.
    Check,
    /// Reported only.
    Diagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// Pass when `value <= bound`.
    AtMost,
    /// Pass when `value >= bound`.
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: Kind,
    pub relation: Relation,
    pub bound: f64,
    pub value: Option<f64>,
    pub verdict: Verdict,
    pub detail: String,
}

/// A declared invariant: name, owning stage, kind, relation and bound.
pub struct CheckDef {
    pub name: &'static str,
    pub stage: Stage,
    pub kind: Kind,
    pub relation: Relation,
    pub bound: f64,
    pub what: &'static str,
}

const fn def(name: &'static str, stage: Stage, kind: Kind, relation: Relation, bound: f64, what: &'static str) -> CheckDef {
    CheckDef {
        name,
        stage,
        kind,
        relation,
        bound,
        what,
    }
}

use Kind::{Check as C, Diagnostic as D};
use Relation::{AtLeast as GE, AtMost as LE};

/// Every invariant the stages can report. Each executed stage lists all of
/// its entries exactly once.
pub const CHECKS: &[CheckDef] = &[
    def("forward.exact_error", Stage::Forward, C, LE, 5e-3, "max |u - exact| at the final time"),
    def("forward.nonnegativity", Stage::Forward, C, LE, 1e-9, "-min u"),
    def("forward.k_monotonicity", Stage::Forward, C, LE, 1e-9, "max (u_2k - u_k) over levels"),
    def("transform.time_error", Stage::Transform, D, LE, 1e-2, "relative change of Λ^h under time refinement"),
    def("fit.condition", Stage::Fit, D, LE, 1e6, "condition of the scaled expansion design"),
    def("recon-gamma.asymmetry", Stage::ReconGamma, C, LE, 1e-2, "relative asymmetry of the measured DN pairing"),
    def("recon-gamma.gradient_reduction", Stage::ReconGamma, D, LE, 1e-6, "final / initial projected gradient"),
    def("recon-gamma.basis_ratio", Stage::ReconGamma, D, GE, 0.25, "data count / parameter count"),
    def("recon-eps.effective_rank", Stage::ReconEps, C, GE, 6.0, "effective rank of the moment operator"),
    def("recon-eps.misfit_ratio", Stage::ReconEps, D, LE, 1.5, "moment residual / noise level"),
    def("verify.max_principle", Stage::Verify, C, LE, 1e-9, "max u - max boundary u"),
    def("verify.nonnegativity", Stage::Verify, C, LE, 1e-9, "-min u"),
    def("verify.k_monotonicity", Stage::Verify, C, LE, 1e-9, "max (u_2k - u_k) over levels and data"),
    def("verify.comparison", Stage::Verify, C, LE, 1e-9, "max (u[g] - u[c g]) for c > 1"),
    def("verify.boundary_identity", Stage::Verify, C, LE, 5e-3, "max |V - h² g| / (h² max g) on the boundary"),
    def("verify.dn_symmetry", Stage::Verify, C, LE, 1e-9, "relative asymmetry of the discrete DN matrix"),
    def("verify.holder_bound", Stage::Verify, C, LE, 1e-9, "max (N - ε h^{-1/m} V^{1/m}) relative"),
    def("verify.r1_sign", Stage::Verify, C, LE, 1e-9, "max R1 / h²"),
    def("verify.v1_sign", Stage::Verify, C, LE, 1e-9, "max V1"),
    def("verify.r2_sign", Stage::Verify, C, LE, 1e-9, "max (-R2) / h²"),
    def("verify.r1_slope", Stage::Verify, C, LE, 0.15, "|slope of ‖R1‖∞ - 1/m|"),
    def("verify.r2_slope_gap", Stage::Verify, C, GE, 0.3, "slope ‖R1‖∞ - slope ‖R2‖∞"),
    def("verify.leading_term", Stage::Verify, C, LE, 0.02, "relative boundary L² distance of fitted A from Λ_γ g"),
    def("verify.pairing", Stage::Verify, C, LE, 0.03, "|<B,W> - Γ(1+1/m)∫ε V0^{1/m} W| / Γ(1+1/m)∫|ε V0^{1/m} W|"),
    def("verify.dn_remainder_slope", Stage::Verify, D, LE, 0.2, "slope of ‖Λ^h - A - h^{1/m-2} B‖ with exact A, B, plus M + 2"),
    def("verify.subsolution", Stage::Verify, D, LE, 0.0, "max (w - v) / max v for the cut-off profile w"),
    def("verify.n1_below_n", Stage::Verify, D, LE, 0.0, "max (N1 - N) / max N0"),
];

pub fn check_def(name: &str) -> Option<&'static CheckDef> {
    CHECKS.iter().find(|c| c.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    /// Stages in execution order, prerequisites included.
    pub stages: Vec<String>,
    pub failure: Option<Failure>,
    pub checks: Vec<Check>,
    /// Error norms against the configured truth.
    pub errors: BTreeMap<String, f64>,
    /// Scalar results worth keeping (chosen α, iteration counts, …).
    pub metrics: BTreeMap<String, f64>,
    /// Plot-ready rows keyed by series name.
    pub series: BTreeMap<String, Vec<Vec<f64>>>,
    pub notes: Vec<String>,
    /// Artifact paths relative to the output directory.
    pub manifest: Vec<String>,
}

impl RunReport {
    pub fn new(config: ExperimentConfig) -> RunReport {
        RunReport {
            config,
            stages: Vec::new(),
            failure: None,
            checks: Vec::new(),
            errors: BTreeMap::new(),
            metrics: BTreeMap::new(),
            series: BTreeMap::new(),
            notes: Vec::new(),
            manifest: Vec::new(),
        }
    }

    /// Records a declared check; a second record of the same name replaces
    /// the first.
    pub fn record(&mut self, name: &str, value: f64, detail: impl Into<String>) {
        let d = check_def(name).unwrap_or_else(|| panic!("undeclared check {name}"));
        let pass = value.is_finite()
            && match d.relation {
                Relation::AtMost => value <= d.bound,
                Relation::AtLeast => value >= d.bound,
            };
        let c = Check {
            name: name.to_string(),
            kind: d.kind,
            relation: d.relation,
            bound: d.bound,
            value: value.is_finite().then_some(value),
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            detail: detail.into(),
        };
        match self.checks.iter_mut().find(|x| x.name == name) {
            Some(x) => *x = c,
            None => self.checks.push(c),
        }
    }

    /// Marks every declared check of `stage` that has no verdict as not run.
    pub fn close_stage(&mut self, stage: Stage, reason: &str) {
        for d in CHECKS.iter().filter(|d| d.stage == stage) {
            if !self.checks.iter().any(|c| c.name == d.name) {
                self.checks.push(Check {
                    name: d.name.to_string(),
                    kind: d.kind,
                    relation: d.relation,
                    bound: d.bound,
                    value: None,
                    verdict: Verdict::NotRun,
                    detail: reason.to_string(),
                });
            }
        }
    }

    /// Failed checks of kind [`Kind::Check`].
    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks
            .iter()
            .filter(|c| c.kind == Kind::Check && c.verdict == Verdict::Fail)
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), AppError> {
        format::write_file(&dir.join(REPORT_FILE), &self.to_json())
    }

    pub fn read(path: &Path) -> Result<RunReport, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::MissingArtifact(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AppError::Format {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Human-readable invariant table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let v = c.value.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
            let rel = match c.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            let kind = match c.kind {
                Kind::Check => "",
                Kind::Diagnostic => " (diagnostic)",
            };
            let verdict = match c.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::NotRun => "NOT RUN",
            };
            s.push_str(&format!("{verdict:8} {:32} {v:>11} {rel} {:.1e}{kind}\n", c.name, c.bound));
        }
        s
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
    pub total: f64,
}

impl Timings {
    pub fn write(&self, dir: &Path) -> Result<(), AppError> {
        let mut s = serde_json::to_string_pretty(self).expect("timings serialize");
        s.push('\n');
        format::write_file(&dir.join(TIMINGS_FILE), &s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_are_unique_and_owned_by_their_stage() {
        for (i, a) in CHECKS.iter().enumerate() {
            assert!(CHECKS[i + 1..].iter().all(|b| b.name != a.name), "{}", a.name);
            assert!(a.name.starts_with(a.stage.name()), "{}", a.name);
        }
    }

    #[test]
    fn close_stage_fills_each_declared_check_once() {
        let mut r = RunReport::new(ExperimentConfig::default());
        r.record("verify.r1_sign", -1.0, "");
        r.record("verify.r1_sign", 2.0, "");
        r.close_stage(Stage::Verify, "skipped");
        let n = CHECKS.iter().filter(|d| d.stage == Stage::Verify).count();
        assert_eq!(r.checks.len(), n);
        assert_eq!(r.failed_checks().len(), 1);
        let back: RunReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}

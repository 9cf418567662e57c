//! Plot-ready data files derived from a finished run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pmeinv_core::ScalarField;

use crate::error::AppError;
use crate::format;
use crate::report::{RunReport, REPORT_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// `(log h, log ‖R1‖∞)` per datum.
    Remainder,
    /// Coordinates, truth and estimate per reconstructed coefficient.
    Reconstruction,
    /// `(h, ‖Λ^h - A - h^{1/m-2} B‖)` per datum.
    DnFit,
}

impl Selection {
    pub fn parse(s: &str) -> Option<Selection> {
        match s {
            "remainder" => Some(Selection::Remainder),
            "reconstruction" => Some(Selection::Reconstruction),
            "dn-fit" => Some(Selection::DnFit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    /// Written files relative to the run directory.
    pub files: Vec<String>,
}

pub const PLOT_MANIFEST: &str = "plots/manifest.json";

/// Writes the selected plot files for the run in `dir` and returns their
/// manifest. An empty selection writes an empty manifest.
pub fn emit_plots(dir: &Path, selection: &[Selection]) -> Result<PlotManifest, AppError> {
    let report = RunReport::read(&dir.join(REPORT_FILE))?;
    let mut man = PlotManifest::default();
    for sel in selection {
        match sel {
            Selection::Remainder => series_files(dir, &report, "remainder.", "remainder", "log_h\tlog_r1", true, &mut man)?,
            Selection::DnFit => series_files(dir, &report, "fit.", "dn_fit", "h\tresidual_norm", false, &mut man)?,
            Selection::Reconstruction => reconstruction_files(dir, &report, &mut man)?,
        }
    }
    let mut s = serde_json::to_string_pretty(&man).expect("manifest serializes");
    s.push('\n');
    format::write_file(&dir.join(PLOT_MANIFEST), &s)?;
    Ok(man)
}

fn series_files(
    dir: &Path,
    report: &RunReport,
    prefix: &str,
    stem: &str,
    header: &str,
    logs: bool,
    man: &mut PlotManifest,
) -> Result<(), AppError> {
    let mut found = false;
    for (key, rows) in report.series.iter().filter(|(k, _)| k.starts_with(prefix)) {
        found = true;
        let tag = &key[prefix.len()..];
        let mut s = format!("{header}\n");
        for r in rows {
            let (x, y) = if logs { (r[0].ln(), r[1].ln()) } else { (r[0], r[1]) };
            s.push_str(&format!("{}\t{}\n", format::num(x), format::num(y)));
        }
        let rel = format!("plots/{stem}_{tag}.tsv");
        format::write_file(&dir.join(&rel), &s)?;
        man.files.push(rel);
    }
    if !found {
        let stage = if logs { "verify" } else { "fit" };
        return Err(AppError::MissingArtifact(format!("series `{prefix}*` in {REPORT_FILE}; run the {stage} stage")));
    }
    Ok(())
}

fn reconstruction_files(dir: &Path, report: &RunReport, man: &mut PlotManifest) -> Result<(), AppError> {
    let setup = report.config.validate()?;
    let mut found = false;
    for (name, truth) in [("gamma", setup.gamma.field()), ("eps", setup.eps.field())] {
        let rel = format!("recon/{name}_hat.field");
        if !report.manifest.contains(&rel) {
            continue;
        }
        found = true;
        let est = format::read_scalar_file(&dir.join(&rel))
            .map_err(|e| AppError::MissingArtifact(format!("{rel}: {e}")))?;
        let out = format!("plots/reconstruction_{name}.csv");
        format::write_file(&dir.join(&out), &format::fields_csv(&["truth", "estimate"], &[truth, &est]))?;
        man.files.push(out);
        if let Some(s) = cross_section(truth, &est) {
            let out = format!("plots/cross_section_{name}.csv");
            format::write_file(&dir.join(&out), &s)?;
            man.files.push(out);
        }
    }
    if !found {
        return Err(AppError::MissingArtifact(
            "recon/gamma_hat.field or recon/eps_hat.field; run a reconstruction stage".into(),
        ));
    }
    Ok(())
}

/// Values along the first axis through the middle of the other axes.
fn cross_section(truth: &ScalarField, est: &ScalarField) -> Option<String> {
    let g = truth.grid();
    if g.dim() < 2 {
        return None;
    }
    let mut idx = [0usize; 3];
    for a in 1..g.dim() {
        idx[a] = g.counts()[a] / 2;
    }
    let mut s = String::from("x1,truth,estimate\n");
    for i in 0..g.counts()[0] {
        idx[0] = i;
        let n = g.node(&idx[..g.dim()]);
        s.push_str(&format!(
            "{},{},{}\n",
            format::num(g.point(n)[0]),
            format::num(truth.values()[n]),
            format::num(est.values()[n])
        ));
    }
    Some(s)
}

//! Experiment configuration: TOML file, `PMEINV_*` environment overrides and
//! validation into ready-to-use numerical objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use pmeinv_core::{
    eval_coefficient, BoundaryField, Coefficient, CoefficientSource, CoefficientSpec, Expression, Grid, HSchedule, KSchedule,
    PipelineConfig,
};
use pmeinv_core::laplace::TimeGridSpec;

use crate::error::AppError;
use crate::format;

/// Prefix of environment overrides. `PMEINV_M=3` sets `m`,
/// `PMEINV_INVERSE__DEGREE=2` sets `inverse.degree`.
pub const ENV_PREFIX: &str = "PMEINV_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Pme,
    /// Linear heat equation (`m = 1`) for solver validation only.
    HeatValidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Forward,
    Transform,
    Fit,
    ReconGamma,
    ReconEps,
    Verify,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Forward,
        Stage::Transform,
        Stage::Fit,
        Stage::ReconGamma,
        Stage::ReconEps,
        Stage::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Forward => "forward",
            Stage::Transform => "transform",
            Stage::Fit => "fit",
            Stage::ReconGamma => "recon-gamma",
            Stage::ReconEps => "recon-eps",
            Stage::Verify => "verify",
        }
    }

    pub fn parse(s: &str) -> Option<Vec<Stage>> {
        if s == "all" {
            return Some(Stage::ALL.to_vec());
        }
        Stage::ALL.iter().find(|st| st.name() == s).map(|st| vec![*st])
    }

    fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Fit | Stage::Verify => &[Stage::Transform],
            Stage::ReconEps => &[Stage::ReconGamma],
            _ => &[],
        }
    }
}

/// Stage names (and `all`) to the ordered stage set including prerequisites.
pub fn resolve_stages(names: &[String]) -> Result<Vec<Stage>, AppError> {
    let mut out = Vec::new();
    for n in names {
        let list = Stage::parse(n.trim())
            .ok_or_else(|| AppError::validation("stages", format!("unknown stage `{n}`; expected forward, transform, fit, recon-gamma, recon-eps, verify or all")))?;
        out.extend(list);
    }
    let mut i = 0;
    while i < out.len() {
        for p in out[i].prerequisites() {
            if !out.contains(p) {
                out.push(*p);
            }
        }
        i += 1;
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dim: 2,
            extents: vec![1.0, 1.0],
            counts: vec![17, 17],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientConfig {
    /// Expression in `x1..x3`; ignored when `file` is set.
    pub expr: String,
    /// Scalar field file on the experiment grid.
    pub file: Option<PathBuf>,
    pub lower: f64,
    pub upper: f64,
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        CoefficientConfig {
            expr: "1".into(),
            file: None,
            lower: 0.1,
            upper: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Nonnegative boundary data `g` for the transform, fit and verify stages.
    pub expressions: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            expressions: vec!["1".into(), "1 + 0.5*x1".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceConfig {
    pub h: Vec<f64>,
    /// Forward horizon is `horizon_factor · max h`.
    pub horizon_factor: f64,
    pub tail: bool,
    pub t0: f64,
    pub n0: usize,
    pub ratio: f64,
    pub k0: f64,
    pub k_factor: f64,
    pub k_max: f64,
    pub k_tol: f64,
    pub richardson: bool,
    pub truncation_tol: f64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        LaplaceConfig {
            h: p.schedule.values().to_vec(),
            horizon_factor: p.schedule.horizon_factor,
            tail: p.schedule.tail,
            t0: p.time.t0,
            n0: p.time.n0,
            ratio: p.time.ratio,
            k0: p.k.k0,
            k_factor: p.k.factor,
            k_max: p.k.k_max,
            k_tol: p.k_tol,
            richardson: p.richardson,
            truncation_tol: p.truncation_tol,
        }
    }
}

impl LaplaceConfig {
    pub fn pipeline(&self, h: &[f64]) -> Result<PipelineConfig, AppError> {
        let schedule = HSchedule::new(h.to_vec(), self.horizon_factor, self.tail)
            .map_err(|e| AppError::validation("laplace.h", e.to_string()))?;
        Ok(PipelineConfig {
            schedule,
            time: TimeGridSpec {
                t0: self.t0,
                n0: self.n0,
                ratio: self.ratio,
            },
            k: KSchedule {
                k0: self.k0,
                factor: self.k_factor,
                k_max: self.k_max,
            },
            k_tol: self.k_tol,
            richardson: self.richardson,
            truncation_tol: self.truncation_tol,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    /// Separate grid for the forward stage; the experiment grid when absent.
    pub grid: Option<GridConfig>,
    /// Dirichlet data `φ(t, x)`, zero at `t = 0`.
    pub boundary: String,
    pub source: String,
    pub horizon: f64,
    /// Uniform steps; 0 picks a stability-based count.
    pub steps: usize,
    pub k0: f64,
    pub k_factor: f64,
    pub k_tol: f64,
    /// Solve only the `k0` level instead of the monotone limit.
    pub single_level: bool,
    /// Exact solution in `x1..x3, t` for error reporting.
    pub exact: Option<String>,
    /// Number of evenly spaced frames kept in the checkpoint file.
    pub checkpoints: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            grid: None,
            boundary: "t".into(),
            source: "0".into(),
            horizon: 1.0,
            steps: 0,
            k0: 1e6,
            k_factor: 2.0,
            k_tol: 1e-6,
            single_level: false,
            exact: None,
            checkpoints: 11,
        }
    }
}

/// Tikhonov weight: a number, or `"discrepancy"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Fixed(f64),
    Rule(AlphaRuleName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaRuleName {
    Discrepancy,
}

impl Default for AlphaSetting {
    fn default() -> Self {
        AlphaSetting::Rule(AlphaRuleName::Discrepancy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseConfig {
    /// Coarse γ̂ nodes per axis.
    pub gamma_points: usize,
    pub gamma_lower: f64,
    pub gamma_upper: f64,
    pub gamma_alpha: AlphaSetting,
    pub gamma_tau: f64,
    pub gamma_max_iter: usize,
    pub symmetry_tol: f64,
    /// Polynomial degree of the boundary traces behind the H and W families.
    pub degree: usize,
    /// h schedule of the moment pipelines. One forward solve serves every h,
    /// so a dense schedule costs little and steadies the B fit.
    pub moment_h: Vec<f64>,
    /// `s = s_factor / ‖H‖∞`.
    pub s_factor: f64,
    pub eps_lower: f64,
    pub eps_upper: f64,
    pub eps_alpha: AlphaSetting,
    pub eps_tau: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            gamma_points: 9,
            gamma_lower: 0.1,
            gamma_upper: 10.0,
            gamma_alpha: AlphaSetting::default(),
            gamma_tau: 1.5,
            gamma_max_iter: 40,
            symmetry_tol: 1e-2,
            degree: 3,
            moment_h: vec![1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 16.0],
            s_factor: 0.1,
            eps_lower: 0.01,
            eps_upper: 100.0,
            eps_alpha: AlphaSetting::default(),
            eps_tau: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `Λ ← Λ (1 + σ ξ)` nodewise.
    #[default]
    Multiplicative,
    /// `Λ ← Λ + σ ξ`.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub level: f64,
    pub kind: NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Degree of the polynomial traces lifted to the W family of the pairing check.
    pub pairing_degree: usize,
    /// Horizon of the forward runs behind the scheme-property checks.
    pub forward_horizon: f64,
    /// Data scale of the comparison run (must exceed one).
    pub comparison_scale: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            pairing_degree: 2,
            forward_horizon: 2.0,
            comparison_scale: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub m: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub stages: Vec<String>,
    pub grid: GridConfig,
    pub eps: CoefficientConfig,
    pub gamma: CoefficientConfig,
    pub data: DataConfig,
    pub laplace: LaplaceConfig,
    pub forward: ForwardConfig,
    pub inverse: InverseConfig,
    pub noise: NoiseConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Pme,
            m: 2.0,
            seed: 0,
            output: PathBuf::from("pmeinv-out"),
            stages: vec!["verify".into()],
            grid: GridConfig::default(),
            eps: CoefficientConfig::default(),
            gamma: CoefficientConfig::default(),
            data: DataConfig::default(),
            laplace: LaplaceConfig::default(),
            forward: ForwardConfig::default(),
            inverse: InverseConfig::default(),
            noise: NoiseConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, AppError> {
    text.parse::<toml::Table>()
        .map_err(|e| AppError::validation(origin, e.to_string()))
}

/// Reads a TOML config, or a JSON report whose `config` member is re-used.
pub fn load_table(path: &Path) -> Result<toml::Table, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| AppError::validation("config", e.to_string()))?;
        let v = v.get("config").cloned().unwrap_or(v);
        let c: ExperimentConfig = serde_json::from_value(v).map_err(|e| AppError::validation("config", e.to_string()))?;
        return toml::Table::try_from(&c).map_err(|e| AppError::validation("config", e.to_string()));
    }
    parse_table(&text, "config")
}

/// Applies `PMEINV_SECTION__KEY=value` pairs; values are read as TOML and
/// fall back to plain strings.
pub fn apply_env<I: IntoIterator<Item = (String, String)>>(table: &mut toml::Table, vars: I) -> Result<(), AppError> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|p| p.to_ascii_lowercase()).collect();
        if path.iter().any(String::is_empty) {
            return Err(AppError::validation(&key, "empty path segment"));
        }
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.clone())),
            Err(_) => toml::Value::String(raw.clone()),
        };
        let mut cur = &mut *table;
        for seg in &path[..path.len() - 1] {
            let entry = cur
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| AppError::validation(&key, format!("`{seg}` is not a section")))?;
        }
        cur.insert(path[path.len() - 1].clone(), value);
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<ExperimentConfig, AppError> {
        table
            .try_into()
            .map_err(|e: toml::de::Error| AppError::validation(error_field(&e), e.message().to_string()))
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig, AppError> {
        ExperimentConfig::from_table(parse_table(text, "config")?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn stage_list(&self) -> Result<Vec<Stage>, AppError> {
        resolve_stages(&self.stages)
    }

    /// Checks every field and builds the numerical objects.
    pub fn validate(&self) -> Result<Setup, AppError> {
        match self.mode {
            Mode::Pme => {
                if !(self.m > 1.0) || !self.m.is_finite() {
                    return Err(AppError::validation(
                        "m",
                        format!("must be a finite number > 1, got {} (use mode = \"heat-validation\" for m = 1)", self.m),
                    ));
                }
            }
            Mode::HeatValidation => {
                if self.m != 1.0 {
                    return Err(AppError::validation("m", format!("heat-validation mode requires m = 1, got {}", self.m)));
                }
            }
        }
        let stages = self.stage_list()?;
        if self.mode == Mode::HeatValidation {
            if let Some(s) = stages.iter().find(|s| !matches!(s, Stage::Forward | Stage::Transform)) {
                return Err(AppError::validation(
                    "stages",
                    format!("stage `{}` needs the expansion, which requires m > 1", s.name()),
                ));
            }
        }
        let grid = Arc::new(make_grid(&self.grid, "grid")?);
        let eps = coefficient(&self.eps, &grid, "eps")?;
        let gamma = coefficient(&self.gamma, &grid, "gamma")?;
        let mut data = Vec::new();
        for (i, e) in self.data.expressions.iter().enumerate() {
            let field = format!("data.expressions[{i}]");
            let ex = expression(e, &field, grid.dim())?;
            let g = BoundaryField::from_fn(grid.clone(), |x| ex.eval_space(x));
            if let Some(v) = g.values().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(AppError::validation(field, format!("boundary data must be finite and nonnegative, found {v}")));
            }
            data.push((e.clone(), g));
        }
        if data.is_empty() && stages.iter().any(|s| matches!(s, Stage::Transform | Stage::Verify)) {
            return Err(AppError::validation("data.expressions", "at least one boundary datum is required"));
        }
        let pipeline = self.laplace.pipeline(&self.laplace.h)?;
        let l = &self.laplace;
        positive("laplace.t0", l.t0)?;
        positive("laplace.k_tol", l.k_tol)?;
        positive("laplace.truncation_tol", l.truncation_tol)?;
        if !(l.ratio >= 1.0) {
            return Err(AppError::validation("laplace.ratio", "must be >= 1"));
        }
        if !(l.k0 >= 1.0) || !(l.k_factor > 1.0) || !(l.k_max >= l.k0) {
            return Err(AppError::validation("laplace.k0", "k schedule needs k0 >= 1, k_factor > 1 and k_max >= k0"));
        }
        let moment_pipeline = self
            .laplace
            .pipeline(&self.inverse.moment_h)
            .map_err(|e| match e {
                AppError::Validation { message, .. } => AppError::validation("inverse.moment_h", message),
                other => other,
            })?;
        let inv = &self.inverse;
        if inv.gamma_points < 2 {
            return Err(AppError::validation("inverse.gamma_points", "need at least 2 nodes per axis"));
        }
        positive("inverse.gamma_lower", inv.gamma_lower)?;
        positive("inverse.eps_lower", inv.eps_lower)?;
        if !(inv.gamma_upper > inv.gamma_lower) {
            return Err(AppError::validation("inverse.gamma_upper", "must exceed gamma_lower"));
        }
        if !(inv.eps_upper > inv.eps_lower) {
            return Err(AppError::validation("inverse.eps_upper", "must exceed eps_lower"));
        }
        for (name, a) in [("inverse.gamma_alpha", inv.gamma_alpha), ("inverse.eps_alpha", inv.eps_alpha)] {
            if let AlphaSetting::Fixed(v) = a {
                if !(v >= 0.0) {
                    return Err(AppError::validation(name, "must be nonnegative or \"discrepancy\""));
                }
            }
        }
        positive("inverse.gamma_tau", inv.gamma_tau)?;
        positive("inverse.eps_tau", inv.eps_tau)?;
        if !(inv.s_factor > 0.0 && inv.s_factor < 1.0) {
            return Err(AppError::validation("inverse.s_factor", "must lie in (0, 1) so that 1 - sH stays positive"));
        }
        if !(self.noise.level >= 0.0) {
            return Err(AppError::validation("noise.level", "must be nonnegative"));
        }
        if !(self.verify.comparison_scale > 1.0) {
            return Err(AppError::validation("verify.comparison_scale", "must exceed 1"));
        }
        positive("verify.forward_horizon", self.verify.forward_horizon)?;
        let forward = if stages.contains(&Stage::Forward) {
            Some(self.forward_setup(&grid)?)
        } else {
            None
        };
        Ok(Setup {
            grid,
            eps,
            gamma,
            data,
            pipeline,
            moment_pipeline,
            forward,
            stages,
        })
    }

    fn forward_setup(&self, grid: &Arc<Grid>) -> Result<ForwardSetup, AppError> {
        let f = &self.forward;
        let grid = match &f.grid {
            Some(g) => Arc::new(make_grid(g, "forward.grid")?),
            None => grid.clone(),
        };
        let eps = coefficient(&self.eps, &grid, "eps")?;
        let gamma = coefficient(&self.gamma, &grid, "gamma")?;
        positive("forward.horizon", f.horizon)?;
        positive("forward.k_tol", f.k_tol)?;
        if !(f.k0 >= 1.0) || !(f.k_factor > 1.0) {
            return Err(AppError::validation("forward.k0", "k schedule needs k0 >= 1 and k_factor > 1"));
        }
        let boundary = time_expression(&f.boundary, "forward.boundary", grid.dim())?;
        let source = time_expression(&f.source, "forward.source", grid.dim())?;
        let exact = f
            .exact
            .as_deref()
            .map(|e| time_expression(e, "forward.exact", grid.dim()))
            .transpose()?;
        Ok(ForwardSetup {
            grid,
            eps,
            gamma,
            boundary,
            source,
            exact,
        })
    }
}

fn error_field(e: &toml::de::Error) -> String {
    // the message names the key for unknown fields; the span is not useful here
    let msg = e.message();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "config".into()
}

fn positive(field: &str, v: f64) -> Result<(), AppError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AppError::validation(field, format!("must be positive and finite, got {v}")))
    }
}

pub fn make_grid(g: &GridConfig, field: &str) -> Result<Grid, AppError> {
    Grid::new(g.dim, &g.extents, &g.counts).map_err(|e| AppError::validation(field, e.to_string()))
}

fn expression(src: &str, field: &str, dim: usize) -> Result<Expression, AppError> {
    let e = Expression::parse(src).map_err(|e| AppError::validation(field, e.to_string()))?;
    if e.uses_time() {
        return Err(AppError::validation(field, "expression may not depend on t"));
    }
    if e.spatial_arity() > dim {
        return Err(AppError::validation(field, format!("uses a coordinate beyond dimension {dim}")));
    }
    Ok(e)
}

fn time_expression(src: &str, field: &str, dim: usize) -> Result<Expression, AppError> {
    let e = Expression::parse(src).map_err(|e| AppError::validation(field, e.to_string()))?;
    if e.spatial_arity() > dim {
        return Err(AppError::validation(field, format!("uses a coordinate beyond dimension {dim}")));
    }
    Ok(e)
}

fn coefficient(c: &CoefficientConfig, grid: &Arc<Grid>, field: &str) -> Result<Coefficient, AppError> {
    let source = match &c.file {
        Some(path) => CoefficientSource::Field(format::read_scalar_file(path).map_err(|e| AppError::validation(format!("{field}.file"), e.to_string()))?),
        None => CoefficientSource::Expression(expression(&c.expr, &format!("{field}.expr"), grid.dim())?),
    };
    let spec = CoefficientSpec {
        source,
        lower: c.lower,
        upper: c.upper,
    };
    eval_coefficient(&spec, grid).map_err(|e| AppError::validation(field, e.to_string()))
}

/// Validated numerical objects of an experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Arc<Grid>,
    pub eps: Coefficient,
    pub gamma: Coefficient,
    /// `(label, g)` for the transform, fit and verify stages.
    pub data: Vec<(String, BoundaryField)>,
    pub pipeline: PipelineConfig,
    pub moment_pipeline: PipelineConfig,
    pub forward: Option<ForwardSetup>,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone)]
pub struct ForwardSetup {
    pub grid: Arc<Grid>,
    pub eps: Coefficient,
    pub gamma: Coefficient,
    pub boundary: Expression,
    pub source: Expression,
    pub exact: Option<Expression>,
}

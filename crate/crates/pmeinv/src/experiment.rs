//! Stage execution: forward runs, transform sweeps, expansion fits,
//! reconstructions and the invariant suite.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use pmeinv_core::expansion::{relative_boundary_error, sign_defects, subsolution_check};
use pmeinv_core::inverse::{moment_families, moment_traces};
use pmeinv_core::laplace::{boundary_identity_error, holder_excess, pipeline_problem};
use pmeinv_core::linalg::DenseMatrix;
use pmeinv_core::math::log_log_slope;
use pmeinv_core::pme::{cfl_steps, geometric_times, uniform_times};
use pmeinv_core::{
    build_oracle_with, dn_matrix, dn_samples, epsilon_moment, fit_expansion_with, harmonic_family, pairing_identity_normalized,
    polynomial_traces, recover_epsilon, recover_gamma, relative_l2_error, remainder_norms, remainders, shifted_data, solve_level,
    solve_pme, AlphaRule, BoundaryData, BoundaryField, CoarseBasis, DnSampleSet, EllipticSolver, FitResult, FitWeights,
    GammaInverseProblem, KSchedule, MomentData, MomentSystem, PMEProblem, PathPoint, RegularizationLevel, ScalarField, Source,
    TimeField,
};

use crate::config::{AlphaSetting, ExperimentConfig, NoiseKind, Setup, Stage};
use crate::error::AppError;
use crate::format;
use crate::noise;
use crate::report::{RunReport, Timings};

/// Noise stream offset of the moment pipelines, so they never share a stream
/// with the transform data.
const MOMENT_STREAM: u64 = 1 << 32;

/// Results carried between stages.
pub struct Context {
    pub config: ExperimentConfig,
    pub setup: Setup,
    pub out: PathBuf,
    pub report: RunReport,
    pub samples: Option<Vec<DnSampleSet>>,
    pub fits: Option<Vec<FitResult>>,
    pub moments: Option<Vec<MomentData>>,
    pub gamma_hat: Option<ScalarField>,
    pub eps_hat: Option<ScalarField>,
}

/// Validates `config`, runs its stages and writes the report, the timings
/// and all artifacts under `config.output`. A failing stage still leaves the
/// report (with the failure recorded) and every earlier artifact on disk.
pub fn run(config: &ExperimentConfig) -> Result<Context, AppError> {
    let setup = config.validate()?;
    let out = config.output.clone();
    std::fs::create_dir_all(&out).map_err(|e| AppError::Io(format!("{}: {e}", out.display())))?;
    let mut ctx = Context {
        config: config.clone(),
        report: RunReport::new(config.clone()),
        setup,
        out,
        samples: None,
        fits: None,
        moments: None,
        gamma_hat: None,
        eps_hat: None,
    };
    ctx.report.notes.push(
        "density of products of harmonic functions is used empirically in two dimensions; the uniqueness theory covers n >= 3".into(),
    );
    let mut timings = Timings::default();
    let start = Instant::now();
    let stages = ctx.setup.stages.clone();
    for stage in stages {
        let t = Instant::now();
        ctx.report.stages.push(stage.name().to_string());
        let res = match stage {
            Stage::Forward => forward(&mut ctx),
            Stage::Transform => transform(&mut ctx),
            Stage::Fit => fit(&mut ctx),
            Stage::ReconGamma => recon_gamma(&mut ctx),
            Stage::ReconEps => recon_eps(&mut ctx),
            Stage::Verify => verify(&mut ctx),
        };
        timings.stages.insert(stage.name().to_string(), t.elapsed().as_secs_f64());
        if let Err(e) = res {
            ctx.report.close_stage(stage, "stage failed");
            ctx.report.failure = Some(crate::report::Failure {
                stage: stage.name().to_string(),
                message: e.to_string(),
            });
            ctx.report.manifest.sort();
            ctx.report.write(&ctx.out)?;
            timings.total = start.elapsed().as_secs_f64();
            timings.write(&ctx.out)?;
            return Err(e);
        }
        ctx.report.close_stage(stage, "not applicable to this configuration");
    }
    ctx.report.manifest.sort();
    ctx.report.write(&ctx.out)?;
    timings.total = start.elapsed().as_secs_f64();
    timings.write(&ctx.out)?;
    Ok(ctx)
}

impl Context {
    fn m(&self) -> f64 {
        self.config.m
    }

    fn artifact(&mut self, rel: &str, contents: &str) -> Result<(), AppError> {
        format::write_file(&self.out.join(rel), contents)?;
        self.report.manifest.push(rel.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), AppError> {
        let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
        s.push('\n');
        self.artifact(rel, &s)
    }

    fn metric(&mut self, key: &str, v: f64) {
        if v.is_finite() {
            self.report.metrics.insert(key.to_string(), v);
        }
    }

    fn error_norm(&mut self, key: &str, v: f64) {
        if v.is_finite() {
            self.report.errors.insert(key.to_string(), v);
        }
    }

    fn fit_weights(&self) -> FitWeights {
        match self.config.noise.kind {
            NoiseKind::Multiplicative if self.config.noise.level > 0.0 => FitWeights::NoiseAware {
                relative_noise: self.config.noise.level,
            },
            _ => FitWeights::RemainderOrder,
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(pmeinv_core::Error) -> AppError {
    move |source| AppError::Stage {
        stage: stage.name().to_string(),
        source,
    }
}

fn forward(ctx: &mut Context) -> Result<(), AppError> {
    let err = stage_err(Stage::Forward);
    let fs = ctx.setup.forward.clone().expect("forward setup validated");
    let fc = ctx.config.forward.clone();
    let m = ctx.m();
    let source = if fc.source.trim() == "0" {
        Source::Zero
    } else {
        Source::Expression(fs.source.clone())
    };
    let probe = PMEProblem::new(
        fs.eps.clone(),
        fs.gamma.clone(),
        m,
        BoundaryData::Expression(fs.boundary.clone()),
        source,
        uniform_times(fc.horizon, 1),
    )
    .map_err(&err)?;
    let steps = if fc.steps > 0 {
        fc.steps
    } else {
        cfl_steps(&fs.grid, fs.gamma.max(), m, probe.lambda_max(fc.k0), fc.horizon)
    };
    let p = probe.with_times(uniform_times(fc.horizon, steps)).map_err(&err)?;
    let (u, defect, levels, newton) = if fc.single_level {
        let (u, s) = solve_level(&p, RegularizationLevel::for_problem(&p, fc.k0).map_err(&err)?).map_err(&err)?;
        (u, f64::NAN, 1, s.newton_iterations)
    } else {
        let sched = KSchedule {
            k0: fc.k0,
            factor: fc.k_factor,
            k_max: fc.k0 * fc.k_factor.powi(30),
        };
        let s = solve_pme(&p, fc.k_tol, sched).map_err(&err)?;
        let newton = s.stats.iter().map(|x| x.newton_iterations).sum();
        (s.u, s.monotonicity_defect, s.k_sequence.len(), newton)
    };
    ctx.metric("forward.steps", steps as f64);
    ctx.metric("forward.levels", levels as f64);
    ctx.metric("forward.newton_iterations", newton as f64);
    ctx.report.record("forward.nonnegativity", -u.min(), "");
    if defect.is_finite() {
        ctx.report.record("forward.k_monotonicity", defect.max(0.0), format!("{levels} levels"));
    }
    let last = u.last();
    let t_end = u.final_time();
    let mut columns: Vec<(&str, ScalarField)> = vec![("u", last.clone())];
    if let Some(ex) = &fs.exact {
        let exact = ScalarField::from_fn(fs.grid.clone(), |x| ex.eval(x, t_end));
        let e = last.max_abs_diff(&exact).map_err(&err)?;
        ctx.report.record("forward.exact_error", e, format!("t = {t_end}"));
        ctx.error_norm("forward.linf", e);
        columns.push(("exact", exact));
    }
    let keep = checkpoint_frames(&u, fc.checkpoints);
    ctx.artifact("forward/u.tfield", &format::time_to_string(&keep))?;
    ctx.artifact("forward/u_final.field", &format::scalar_to_string(&last))?;
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    let refs: Vec<&ScalarField> = columns.iter().map(|c| &c.1).collect();
    ctx.artifact("forward/u_final.csv", &format::fields_csv(&names, &refs))?;
    #[derive(Serialize)]
    struct Manifest {
        steps: usize,
        levels: usize,
        newton_iterations: usize,
        monotonicity_defect: Option<f64>,
        final_time: f64,
    }
    let man = Manifest {
        steps,
        levels,
        newton_iterations: newton,
        monotonicity_defect: defect.is_finite().then_some(defect),
        final_time: t_end,
    };
    ctx.json("forward/run.json", &man)
}

fn checkpoint_frames(u: &TimeField, count: usize) -> TimeField {
    let n = u.len();
    let count = count.clamp(2, n);
    let mut idx: Vec<usize> = (0..count).map(|i| (i * (n - 1) + (count - 1) / 2) / (count - 1)).collect();
    idx.dedup();
    let stamps = idx.iter().map(|&i| u.stamps()[i]).collect();
    let frames = idx.iter().map(|&i| u.frame(i).to_vec()).collect();
    TimeField::new(u.grid().clone(), stamps, frames).expect("subset of a valid time field")
}

#[derive(Serialize)]
struct SampleFile {
    label: String,
    h: Vec<f64>,
    /// One boundary-field file per `h`.
    fields: Vec<String>,
    time_error: Vec<f64>,
    consistency: Vec<f64>,
}

fn transform(ctx: &mut Context) -> Result<(), AppError> {
    let err = stage_err(Stage::Transform);
    let (eps, gamma, m, cfg) = (&ctx.setup.eps, &ctx.setup.gamma, ctx.config.m, &ctx.setup.pipeline);
    let sets: Vec<DnSampleSet> = ctx
        .setup
        .data
        .par_iter()
        .map(|(label, g)| dn_samples(eps, gamma, m, g, label, cfg))
        .collect::<Result<_, _>>()
        .map_err(&err)?;
    let mut worst = 0.0f64;
    for (i, set) in sets.iter().enumerate() {
        worst = worst.max(set.tolerance());
        let mut files = Vec::new();
        let mut csv = String::from("h,slot,value\n");
        for r in &set.results {
            let rel = format!("transform/g{i}_h{}.bfield", r.h);
            ctx.artifact(&rel, &format::boundary_to_string(&r.lambda))?;
            files.push(rel);
            for (b, v) in r.lambda.values().iter().enumerate() {
                csv.push_str(&format!("{},{b},{}\n", format::num(r.h), format::num(*v)));
            }
        }
        ctx.artifact(&format!("transform/g{i}.csv"), &csv)?;
        let sf = SampleFile {
            label: set.label.clone(),
            h: set.hs(),
            fields: files,
            time_error: set.results.iter().map(|r| r.time_error).collect(),
            consistency: set.results.iter().map(|r| r.consistency).collect(),
        };
        ctx.json(&format!("transform/g{i}.json"), &sf)?;
        let steps: usize = set.forward.iter().map(|f| f.steps).sum();
        ctx.metric(&format!("transform.g{i}.forward_steps"), steps as f64);
    }
    ctx.report.record("transform.time_error", worst, "max over data and h");
    ctx.samples = Some(sets);
    Ok(())
}

/// Samples of set `i` with the configured noise applied.
fn noisy_lambdas(ctx: &Context, set: &DnSampleSet, stream: u64) -> Vec<BoundaryField> {
    let mut l = set.lambdas();
    noise::perturb(&mut l, &ctx.config.noise, ctx.config.seed, stream);
    l
}

#[derive(Serialize)]
struct FitFile {
    label: String,
    h: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    a_uncertainty: Vec<f64>,
    b_uncertainty: Vec<f64>,
    residual_norms: Vec<f64>,
    remainder_slope: f64,
    condition: f64,
    amplification: f64,
}

fn fit(ctx: &mut Context) -> Result<(), AppError> {
    let err = stage_err(Stage::Fit);
    let sets = ctx.samples.take().expect("transform ran first");
    let mut fits = Vec::new();
    let mut worst_cond = 0.0f64;
    for (i, set) in sets.iter().enumerate() {
        let l = noisy_lambdas(ctx, set, i as u64);
        let f = fit_expansion_with(&set.hs(), &l, ctx.m(), ctx.fit_weights()).map_err(&err)?;
        worst_cond = worst_cond.max(f.condition);
        ctx.artifact(&format!("fit/g{i}_a.bfield"), &format::boundary_to_string(&f.a))?;
        ctx.artifact(&format!("fit/g{i}_b.bfield"), &format::boundary_to_string(&f.b))?;
        let rows: Vec<Vec<f64>> = f.hs.iter().zip(&f.residual_norms).map(|(h, r)| vec![*h, *r]).collect();
        let csv: String = std::iter::once("h,residual_norm\n".to_string())
            .chain(rows.iter().map(|r| format!("{},{}\n", format::num(r[0]), format::num(r[1]))))
            .collect();
        ctx.artifact(&format!("fit/g{i}_residuals.csv"), &csv)?;
        ctx.report.series.insert(format!("fit.g{i}"), rows);
        let ff = FitFile {
            label: set.label.clone(),
            h: f.hs.clone(),
            a: f.a.values().to_vec(),
            b: f.b.values().to_vec(),
            a_uncertainty: f.a_uncertainty.clone(),
            b_uncertainty: f.b_uncertainty.clone(),
            residual_norms: f.residual_norms.clone(),
            remainder_slope: f.remainder_slope,
            condition: f.condition,
            amplification: f.amplification,
        };
        ctx.json(&format!("fit/g{i}.json"), &ff)?;
        fits.push(f);
    }
    ctx.report.record("fit.condition", worst_cond, "");
    ctx.samples = Some(sets);
    ctx.fits = Some(fits);
    Ok(())
}

/// Runs the `1 ± sH` pipelines for every H trace and fits both expansions.
pub fn moment_runs(ctx: &Context) -> Result<Vec<MomentData>, pmeinv_core::Error> {
    let (eps, gamma, m) = (&ctx.setup.eps, &ctx.setup.gamma, ctx.config.m);
    let inv = &ctx.config.inverse;
    let traces = moment_traces(&ctx.setup.grid, inv.degree);
    let mut jobs = Vec::new();
    for (label, t) in &traces {
        let s = inv.s_factor / t.max_abs();
        let (gp, gm) = shifted_data(t, s)?;
        jobs.push((format!("{label}+"), gp));
        jobs.push((format!("{label}-"), gm));
    }
    let cfg = &ctx.setup.moment_pipeline;
    let sets: Vec<DnSampleSet> = jobs
        .par_iter()
        .map(|(label, g)| dn_samples(eps, gamma, m, g, label, cfg))
        .collect::<Result<_, _>>()?;
    traces
        .iter()
        .enumerate()
        .map(|(i, (_, t))| {
            let s = inv.s_factor / t.max_abs();
            let (p, q) = (&sets[2 * i], &sets[2 * i + 1]);
            let lp = noisy_lambdas(ctx, p, MOMENT_STREAM + 2 * i as u64);
            let lq = noisy_lambdas(ctx, q, MOMENT_STREAM + 2 * i as u64 + 1);
            MomentData::from_samples(t, s, &p.hs(), &lp, &lq, m, ctx.fit_weights())
        })
        .collect()
}

fn path_rows(path: &[PathPoint]) -> Vec<Vec<f64>> {
    path.iter().map(|p| vec![p.alpha, p.misfit, p.seminorm]).collect()
}

fn reconstruction_csv(truth: &ScalarField, estimate: &ScalarField) -> String {
    format::fields_csv(&["truth", "estimate"], &[truth, estimate])
}

fn recon_gamma(ctx: &mut Context) -> Result<(), AppError> {
    let err = stage_err(Stage::ReconGamma);
    let mds = moment_runs(ctx).map_err(&err)?;
    let inv = ctx.config.inverse.clone();
    let (data, measured): (Vec<BoundaryField>, Vec<BoundaryField>) = mds.iter().map(MomentData::gamma_datum).unzip();
    let noise = mds.iter().map(|d| d.gamma_datum_noise().powi(2)).sum::<f64>().sqrt();
    let rule = match inv.gamma_alpha {
        AlphaSetting::Fixed(a) => AlphaRule::Fixed(a),
        AlphaSetting::Rule(_) => AlphaRule::Discrepancy {
            noise,
            tau: inv.gamma_tau,
        },
    };
    let basis = CoarseBasis::new(ctx.setup.grid.clone(), inv.gamma_points).map_err(&err)?;
    let mut p = GammaInverseProblem::new(data, measured, basis, rule).map_err(&err)?;
    p.lower = inv.gamma_lower;
    p.upper = inv.gamma_upper;
    p.max_iter = inv.gamma_max_iter;
    p.symmetry_tol = inv.symmetry_tol;
    let asym = p.asymmetry().map_err(&err)?;
    ctx.report.record("recon-gamma.asymmetry", asym, "");
    let r = recover_gamma(&p).map_err(&err)?;
    ctx.report.record(
        "recon-gamma.gradient_reduction",
        r.gradient_norm / r.initial_gradient_norm.max(f64::MIN_POSITIVE),
        format!("{} iterations{}", r.iterations, if r.stagnated { ", stagnated" } else { "" }),
    );
    ctx.report.record("recon-gamma.basis_ratio", r.data_ratio, "");
    ctx.metric("gamma.alpha", r.alpha);
    ctx.metric("gamma.misfit", r.misfit);
    ctx.metric("gamma.noise", noise);
    ctx.metric("gamma.iterations", r.iterations as f64);
    let truth = ctx.setup.gamma.field().clone();
    let e = relative_l2_error(&r.gamma, &truth).map_err(&err)?;
    ctx.error_norm("gamma.relative_l2", e);
    ctx.report.series.insert("gamma.path".into(), path_rows(&r.path));
    ctx.artifact("recon/gamma_hat.field", &format::scalar_to_string(&r.gamma))?;
    ctx.artifact("recon/gamma.csv", &reconstruction_csv(&truth, &r.gamma))?;
    ctx.gamma_hat = Some(r.gamma);
    ctx.moments = Some(mds);
    Ok(())
}

#[derive(Serialize)]
struct MomentFile {
    labels: Vec<String>,
    s_steps: Vec<f64>,
    gamma_factor: f64,
    /// `moments[i][j] ≈ ∫ ε H_i W_j`.
    moments: Vec<Vec<f64>>,
    uncertainty: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
    /// Moments of the true `ε` against the true-`γ` families.
    truth: Vec<Vec<f64>>,
}

fn rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows).map(|i| m.row(i).to_vec()).collect()
}

fn recon_eps(ctx: &mut Context) -> Result<(), AppError> {
    let err = stage_err(Stage::ReconEps);
    let m = ctx.m();
    let inv = ctx.config.inverse.clone();
    let gamma_hat = ctx.gamma_hat.clone().expect("recon-gamma ran first");
    let mds = ctx.moments.take().expect("recon-gamma ran first");
    let fam = moment_families(&gamma_hat, inv.degree).map_err(&err)?;
    let (nh, nw) = (fam.h.len(), fam.w.len());
    let mut mu = DenseMatrix::zeros(nh, nw);
    let mut unc = DenseMatrix::zeros(nh, nw);
    let mut bias = DenseMatrix::zeros(nh, nw);
    for (i, md) in mds.iter().enumerate() {
        for (j, w) in fam.w.iter().enumerate() {
            let e = epsilon_moment(md, m, &w.trace()).map_err(&err)?;
            mu[(i, j)] = e.value;
            unc[(i, j)] = e.uncertainty;
            bias[(i, j)] = e.bias;
        }
    }
    // truth moments for the error report
    let eps = ctx.setup.eps.field().clone();
    let tfam = moment_families(ctx.setup.gamma.field(), inv.degree).map_err(&err)?;
    let mut truth = DenseMatrix::zeros(nh, nw);
    let mut worst = 0.0f64;
    for i in 0..nh {
        for j in 0..nw {
            let ehw = eps.mul(&tfam.h[i]).map_err(&err)?;
            truth[(i, j)] = ehw.mul(&tfam.w[j]).map_err(&err)?.integrate();
            let scale = ehw.mul(&tfam.w[j].map(f64::abs)).map_err(&err)?.integrate();
            worst = worst.max((mu[(i, j)] - truth[(i, j)]).abs() / scale.max(f64::MIN_POSITIVE));
        }
    }
    ctx.error_norm("moments.max_relative", worst);
    let s_steps: Vec<f64> = mds.iter().map(|d| d.s_step).collect();
    let sys = MomentSystem::new(fam.h.clone(), fam.w.clone(), mu.clone(), unc.clone(), s_steps.clone(), m).map_err(&err)?;
    let noise = sys.noise_level();
    let rule = match inv.eps_alpha {
        AlphaSetting::Fixed(a) => AlphaRule::Fixed(a),
        AlphaSetting::Rule(_) => AlphaRule::Discrepancy { noise, tau: inv.eps_tau },
    };
    let mf = MomentFile {
        labels: fam.labels.clone(),
        s_steps,
        gamma_factor: sys.gamma_factor,
        moments: rows(&mu),
        uncertainty: rows(&unc),
        bias: rows(&bias),
        truth: rows(&truth),
    };
    ctx.json("recon/moments.json", &mf)?;
    let r = recover_epsilon(&sys, rule, inv.eps_lower, inv.eps_upper).map_err(&err)?;
    ctx.report.record("recon-eps.effective_rank", r.effective_rank as f64, format!("{} parameters", eps.grid().len()));
    ctx.report.record("recon-eps.misfit_ratio", r.residual / noise.max(f64::MIN_POSITIVE), "");
    ctx.metric("eps.alpha", r.alpha);
    ctx.metric("eps.residual", r.residual);
    ctx.metric("eps.noise", noise);
    ctx.metric("eps.active_bounds", r.active as f64);
    let e = relative_l2_error(&r.eps, &eps).map_err(&err)?;
    ctx.error_norm("eps.relative_l2", e);
    ctx.report.series.insert("eps.path".into(), path_rows(&r.path));
    ctx.artifact("recon/eps_hat.field", &format::scalar_to_string(&r.eps))?;
    ctx.artifact("recon/eps.csv", &reconstruction_csv(&eps, &r.eps))?;
    ctx.eps_hat = Some(r.eps);
    Ok(())
}

fn sup_norm(f: &ScalarField) -> f64 {
    f.max_abs()
}

fn verify(ctx: &mut Context) -> Result<(), AppError> {
    let err = stage_err(Stage::Verify);
    let m = ctx.m();
    let (eps, gamma) = (ctx.setup.eps.clone(), ctx.setup.gamma.clone());
    let sets = ctx.samples.take().expect("transform ran first");
    let vc = ctx.config.verify.clone();
    let lc = ctx.config.laplace.clone();

    // scheme properties on a short horizon at one regularization level
    let g0 = &sets[0].g;
    let times = geometric_times(lc.t0, lc.n0, lc.ratio, vc.forward_horizon).map_err(&err)?;
    let p1 = pipeline_problem(&eps, &gamma, m, g0, times.clone()).map_err(&err)?;
    let p2 = pipeline_problem(&eps, &gamma, m, &g0.scale(vc.comparison_scale), times).map_err(&err)?;
    let level = RegularizationLevel::for_problem(&p2, lc.k0).map_err(&err)?;
    let (r1, r2) = rayon::join(|| solve_level(&p1, level), || solve_level(&p2, level));
    let (u1, u2) = (r1.map_err(&err)?.0, r2.map_err(&err)?.0);
    let grid = ctx.setup.grid.clone();
    let boundary_max = |u: &TimeField| {
        (0..u.len())
            .flat_map(|n| grid.boundary_nodes().iter().map(move |b| u.frame(n)[b.node]))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mp = (u1.max() - boundary_max(&u1)).max(u2.max() - boundary_max(&u2));
    ctx.report.record("verify.max_principle", mp, format!("k = {:e}", level.k));
    ctx.report.record("verify.nonnegativity", -(u1.min().min(u2.min())), "");
    let cmp = u1.max_excess_over(&u2).map_err(&err)?;
    ctx.report.record("verify.comparison", cmp, format!("scale {}", vc.comparison_scale));
    let mono = sets
        .iter()
        .flat_map(|s| s.forward.iter().map(|f| f.monotonicity_defect))
        .fold(f64::NEG_INFINITY, f64::max);
    ctx.report.record("verify.k_monotonicity", mono.max(0.0), "pipeline forward runs");

    // Laplace-domain identities
    let mut bid = 0.0f64;
    let mut hold = f64::NEG_INFINITY;
    for s in &sets {
        for r in &s.results {
            bid = bid.max(boundary_identity_error(r, &s.g).map_err(&err)?);
            hold = hold.max(holder_excess(r, eps.field(), m));
        }
    }
    ctx.report.record("verify.boundary_identity", bid, "");
    ctx.report.record("verify.holder_bound", hold, "");
    let traces: Vec<BoundaryField> = polynomial_traces(&grid, vc.pairing_degree).into_iter().map(|(_, t)| t).collect();
    let d = dn_matrix(gamma.field(), &traces).map_err(&err)?;
    let mut asym = 0.0f64;
    let mut dmax = 0.0f64;
    for i in 0..d.rows {
        for j in 0..d.cols {
            asym = asym.max((d[(i, j)] - d[(j, i)]).abs());
            dmax = dmax.max(d[(i, j)].abs());
        }
    }
    ctx.report.record("verify.dn_symmetry", asym / dmax.max(f64::MIN_POSITIVE), format!("{} traces", traces.len()));
    let mut csv = String::from("row");
    for k in 0..d.cols {
        csv.push_str(&format!(",c{k}"));
    }
    csv.push('\n');
    for (i, t) in polynomial_traces(&grid, vc.pairing_degree).iter().enumerate() {
        csv.push_str(&t.0);
        for j in 0..d.cols {
            csv.push(',');
            csv.push_str(&format::num(d[(i, j)]));
        }
        csv.push('\n');
    }
    ctx.artifact("verify/dn_matrix.csv", &csv)?;

    // expansion structure against the exact V0, V1
    let solver = EllipticSolver::new(gamma.field()).map_err(&err)?;
    let ws = harmonic_family(gamma.field(), &traces).map_err(&err)?;
    let mut signs = [f64::NEG_INFINITY; 3];
    let mut slope_dev = 0.0f64;
    let mut slope_gap = f64::INFINITY;
    let mut lead = 0.0f64;
    let mut lead_used = Vec::new();
    let mut pairing = 0.0f64;
    let mut dn_slope = f64::NEG_INFINITY;
    let mut oracle0 = None;
    for (i, s) in sets.iter().enumerate() {
        let oracle = build_oracle_with(&solver, eps.field(), m, &s.g).map_err(&err)?;
        let hs = s.hs();
        let mut rows = Vec::new();
        for r in &s.results {
            let sd = sign_defects(r, &oracle).map_err(&err)?;
            for k in 0..3 {
                signs[k] = signs[k].max(sd[k]);
            }
            let (r1, r2) = remainders(r, &oracle).map_err(&err)?;
            rows.push(vec![r.h, sup_norm(&r1), sup_norm(&r2)]);
        }
        let r1s: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let r2s: Vec<f64> = rows.iter().map(|r| r[2]).collect();
        let (s1, s2) = (log_log_slope(&hs, &r1s), log_log_slope(&hs, &r2s));
        slope_dev = slope_dev.max((s1 - 1.0 / m).abs());
        slope_gap = slope_gap.min(s1 - s2);
        ctx.metric(&format!("verify.g{i}.r1_slope"), s1);
        ctx.metric(&format!("verify.g{i}.r2_slope"), s2);
        ctx.report.series.insert(format!("remainder.g{i}"), rows);
        let a_exact = oracle.leading_trace(&solver).map_err(&err)?;
        let b_exact = oracle.second_trace(&solver).map_err(&err)?;
        let lambdas = s.lambdas();
        let f = fit_expansion_with(&hs, &lambdas, m, FitWeights::RemainderOrder).map_err(&err)?;
        if a_exact.l2_norm() > 1e-8 * lambdas[0].l2_norm() {
            lead = lead.max(relative_boundary_error(&f.a, &a_exact).map_err(&err)?);
            lead_used.push(format!("g{i}"));
        }
        for w in &ws {
            pairing = pairing.max(pairing_identity_normalized(&f.b, &oracle, w).map_err(&err)?);
        }
        let rn = remainder_norms(&hs, &lambdas, &a_exact, &b_exact, m).map_err(&err)?;
        dn_slope = dn_slope.max(log_log_slope(&hs, &rn));
        if i == 0 {
            oracle0 = Some(oracle);
        }
    }
    ctx.report.record("verify.r1_sign", signs[0], "");
    ctx.report.record("verify.v1_sign", signs[1], "");
    ctx.report.record("verify.r2_sign", signs[2], "");
    ctx.report.record("verify.r1_slope", slope_dev, format!("1/m = {}", 1.0 / m));
    ctx.report.record("verify.r2_slope_gap", slope_gap, "");
    if lead_used.is_empty() {
        ctx.report.notes.push("verify.leading_term: every datum has a vanishing leading term".into());
    } else {
        ctx.report.record("verify.leading_term", lead, format!("data {}", lead_used.join(" ")));
    }
    ctx.report.record("verify.pairing", pairing, format!("{} W functions", ws.len()));
    let order = pmeinv_core::expansion::remainder_exponent(m) + 2.0;
    ctx.report.record("verify.dn_remainder_slope", dn_slope + order, format!("slope {dn_slope:.3}, order -{order}"));
    let oracle = oracle0.expect("at least one datum");
    match subsolution_check(&oracle, &level, &u1, &sets[0].results) {
        Ok(sub) => {
            ctx.report.record("verify.subsolution", sub.w_excess, format!("sigma = {}", sub.sigma));
            let n1 = sub.n1_excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ctx.report.record("verify.n1_below_n", n1, "");
        }
        Err(e) => ctx.report.notes.push(format!("subsolution comparison skipped: {e}")),
    }
    ctx.samples = Some(sets);
    Ok(())
}

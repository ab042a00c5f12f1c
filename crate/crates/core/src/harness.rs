//! Experiment configuration, the iterate -> compatibility -> final step ->
//! Newton pipeline, run manifests and emitted CSV/SVG files.

use crate::checks::{Check, StageOutcome};
use crate::decay_iteration::{
    apply_linear_z, decay_reports, declared_order, enforce_compatibility, f0_leading_coefficients, final_step,
    horizontal_eigenvalues, iterate, linear_step_residual, ma_ratio, metric_closeness, GlueWindow, RadialMetricState,
};
use crate::error::{LabError, Result};
use crate::expr::{poisson_vars, SourceExpr};
use crate::fit::{DecayReport, FIT_FLOOR};
use crate::ma_solver::{newton_solve, phi_decay_report, residual, NewtonConfig};
use crate::model_space::ModelParams;
use crate::par;
use crate::radial::{RadialFunction, RadialGrid};
use crate::report::{log_log_svg, num, write_file, CsvTable};
use crate::spectral_poisson::{laplace_residual, solve_poisson, SpectrumProvider, TensorField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub z_lo: f64,
    pub z_hi: f64,
    pub panels: usize,
    pub order: usize,
}

impl GridSpec {
    pub fn build(&self, n: u32) -> Result<Arc<RadialGrid>> {
        Ok(Arc::new(RadialGrid::panels(n, self.z_lo, self.z_hi, self.panels, self.order)?))
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.z_lo > 0.0 && self.z_hi > self.z_lo && self.z_hi.is_finite()) || self.panels == 0 || self.order < 2 {
            return Err(LabError::Config(format!("{what}: need 0 < z_lo < z_hi, panels >= 1, order >= 2")));
        }
        Ok(())
    }

    fn contains(&self, lo: f64, hi: f64) -> bool {
        lo >= self.z_lo && hi <= self.z_hi && hi > lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSetSpec {
    pub torus_cutoff: i32,
    pub fiber_cutoff: u32,
    /// Number of modes N kept by the Poisson solve.
    pub truncation: usize,
    pub z0: f64,
    pub grid: GridSpec,
    /// Expression in z, x1 .. x_{2n-2}, theta.
    pub source: String,
    /// Declared polynomial order of the source.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSpec {
    /// Number m of linear solves; F_0 .. F_m are reported.
    pub steps: usize,
    pub fit_lo: f64,
    pub fit_hi: f64,
    /// Allowed deviation of every fitted exponent.
    pub slack: f64,
    pub compat_rel_tol: f64,
    pub max_passes: usize,
    /// lambda z added before the compatibility solve; 0 runs the plain pipeline.
    pub lambda_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    /// Wedge ratios c_1 .. c_{n-1}.
    pub c: Vec<f64>,
    pub grid: GridSpec,
    pub modes: ModeSetSpec,
    pub iteration: IterationSpec,
    pub newton: NewtonConfig,
    pub output_dir: String,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelParams::default(),
            c: vec![0.3, 0.05],
            grid: GridSpec { z_lo: 5.0, z_hi: 200.0, panels: 48, order: 16 },
            modes: ModeSetSpec {
                torus_cutoff: 1,
                fiber_cutoff: 2,
                truncation: 64,
                z0: 1.0,
                grid: GridSpec { z_lo: 1.0, z_hi: 20.0, panels: 25, order: 16 },
                source: "z^(-2) * (1.0 + 0.5 * math::cos(x1) + 0.25 * math::sin(theta))".into(),
                delta: -2.0,
            },
            iteration: IterationSpec {
                steps: 3,
                fit_lo: 5.0,
                fit_hi: 200.0,
                slack: 0.2,
                compat_rel_tol: 1e-10,
                max_passes: 4,
                lambda_offset: 0.0,
            },
            newton: NewtonConfig::default(),
            output_dir: "out".into(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let n = self.model.n;
        if self.c.len() != n as usize - 1 || self.c.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Config(format!("c must hold n - 1 = {} finite values", n - 1)));
        }
        horizontal_eigenvalues(n, &self.c)?;
        self.grid.validate("grid")?;
        self.modes.grid.validate("modes.grid")?;
        let it = &self.iteration;
        if !self.grid.contains(it.fit_lo, it.fit_hi) {
            return Err(LabError::Config(format!(
                "fit window [{}, {}] outside the grid [{}, {}]",
                it.fit_lo, it.fit_hi, self.grid.z_lo, self.grid.z_hi
            )));
        }
        if it.steps > n as usize + 2 {
            return Err(LabError::Config(format!("steps must be at most n + 2 = {}", n + 2)));
        }
        if !(it.slack > 0.0 && it.compat_rel_tol > 0.0 && it.lambda_offset.is_finite()) || it.max_passes == 0 {
            return Err(LabError::Config("slack, compat_rel_tol and max_passes must be positive".into()));
        }
        self.newton.validate()?;
        if !self.grid.contains(self.newton.z_min, self.newton.z_max) {
            return Err(LabError::Config(format!(
                "Newton window [{}, {}] outside the grid [{}, {}]",
                self.newton.z_min, self.newton.z_max, self.grid.z_lo, self.grid.z_hi
            )));
        }
        let m = &self.modes;
        if m.grid.z_lo < 1.0 || m.torus_cutoff < 0 || m.truncation == 0 || !(m.z0 > 0.0) || !m.delta.is_finite() {
            return Err(LabError::Config("modes: need grid above z = 1, cutoffs >= 0, truncation >= 1, z0 > 0".into()));
        }
        poisson_source(n, &m.source)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| crate::report::io_error(path, e))?)
    }

    /// SHA-256 of the compact JSON form with the output directory blanked,
    /// so the hash names the computation and not where it was written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        let text = serde_json::to_string(&c).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub stages: Vec<StageOutcome>,
    /// File names of emitted CSVs, relative to the output directory.
    pub csv_paths: Vec<String>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        RunManifest {
            config_hash: config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            stages: Vec::new(),
            csv_paths: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.stages.iter().all(StageOutcome::passed)
    }
}

/// A manifest together with the tables it will emit.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub tables: Vec<(String, CsvTable)>,
}

impl RunOutput {
    pub fn new(config: &ExperimentConfig) -> Self {
        RunOutput { manifest: RunManifest::new(config), tables: Vec::new() }
    }

    pub fn stage(&mut self, s: StageOutcome) {
        self.manifest.stages.push(s);
    }

    pub fn table(&mut self, name: &str, t: CsvTable) {
        self.tables.push((name.into(), t));
    }

    pub fn extend(&mut self, other: RunOutput) {
        self.manifest.stages.extend(other.manifest.stages);
        self.tables.extend(other.tables);
    }
}

/// Write every table, a plot for each decay table, and manifest.json.
pub fn emit_report(run: &mut RunOutput, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::report::io_error(dir, e))?;
    let mut paths = Vec::new();
    run.manifest.csv_paths.clear();
    for (name, t) in &run.tables {
        let file = format!("{name}.csv");
        t.write(&dir.join(&file))?;
        paths.push(dir.join(&file));
        run.manifest.csv_paths.push(file);
    }
    for (name, t) in &run.tables {
        if name == "decay" || name == "final" {
            paths.push(write_file(dir, &format!("{name}.svg"), &log_log_svg(t, "z", &format!("log10 |F| ({name})"))?)?);
        }
    }
    let m = serde_json::to_string_pretty(&run.manifest).map_err(|e| LabError::Io(e.to_string()))?;
    paths.push(write_file(dir, "manifest.json", &(m + "\n"))?);
    Ok(paths)
}

fn fit_or_zero(j: usize, f: &RadialFunction, lo: f64, hi: f64, target: f64) -> Result<Option<DecayReport>> {
    if f.max_abs() <= FIT_FLOOR {
        return Ok(None);
    }
    DecayReport::fit_on(j, f, lo, hi, target).map(Some)
}

fn report_row(t: &mut CsvTable, stage: &str, r: &DecayReport) -> Result<()> {
    t.push(vec![
        stage.into(),
        r.index.to_string(),
        num(r.z_lo),
        num(r.z_hi),
        num(r.exponent),
        num(r.target),
        num(r.residual),
        r.points.to_string(),
    ])
}

fn exponent_text(r: &Option<DecayReport>) -> String {
    match r {
        Some(r) => format!("{:.4}", r.exponent),
        None => "identically zero".into(),
    }
}

/// Tables of the pipeline, with headers fixed by the configuration so a
/// failed stage still leaves header-only files.
fn pipeline_tables(steps: usize) -> Vec<(String, CsvTable)> {
    let mut decay = vec!["z".to_string()];
    decay.extend((0..=steps).map(|j| format!("F_{j}")));
    vec![
        ("decay".into(), CsvTable::new(&decay)),
        (
            "decay_reports".into(),
            CsvTable::new(&["stage", "index", "z_lo", "z_hi", "exponent", "target", "fit_residual", "points"]),
        ),
        (
            "compatibility".into(),
            CsvTable::new(&[
                "lambda_offset",
                "lambda",
                "constant_before",
                "constant_after",
                "tolerance",
                "passes",
                "order_before",
                "order_after",
            ]),
        ),
        ("final".into(), CsvTable::new(&["z", "F_final"])),
        ("newton_trace".into(), CsvTable::new(&["iteration", "residual", "step_norm", "damping"])),
        ("newton_solution".into(), CsvTable::new(&["z", "phi", "residual"])),
    ]
}

/// iterate -> compatibility -> final step -> Newton. Stage failures are
/// recorded and later stages skipped; only an invalid config is an error.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut run = RunOutput::new(config);
    let mut tables = pipeline_tables(config.iteration.steps);
    let n = config.model.n;
    let it = config.iteration;
    let grid = config.grid.build(n)?;
    let names = ["iterate", "compatibility", "final-step", "newton"];
    let state0 = RadialMetricState::new(n, config.c.clone(), grid.clone())?;

    // iterate
    let t0 = Instant::now();
    let state_m = match iterate_stage(&state0, &it, &mut tables, t0) {
        // later stages run on the iterated state even when a rate check failed
        Ok((s, stage)) => {
            run.stage(stage);
            s
        }
        Err(e) => {
            run.stage(StageOutcome::failed(names[0], &e));
            names[1..].iter().for_each(|s| run.stage(StageOutcome::skipped(s, "iterate failed")));
            run.tables = tables;
            return Ok(run);
        }
    };

    // compatibility
    let state_c = match compat_stage(&state_m, config, &mut tables) {
        Ok((s, stage)) => {
            run.stage(stage);
            s
        }
        Err(e) => {
            run.stage(StageOutcome::failed(names[1], &e));
            names[2..].iter().for_each(|s| run.stage(StageOutcome::skipped(s, "compatibility failed")));
            run.tables = tables;
            return Ok(run);
        }
    };

    // final step
    let (state_f, f_order) = match final_stage(&state_c, &it, &mut tables) {
        Ok((s, o, stage)) => {
            run.stage(stage);
            (s, o)
        }
        Err(e) => {
            run.stage(StageOutcome::failed(names[2], &e));
            run.stage(StageOutcome::skipped(names[3], "final step failed"));
            run.tables = tables;
            return Ok(run);
        }
    };

    // Newton
    match newton_stage(&state_f, config, f_order, &mut tables) {
        Ok(stage) => run.stage(stage),
        Err(e) => run.stage(StageOutcome::failed(names[3], &e)),
    }
    run.tables = tables;
    Ok(run)
}

/// The iterate stage alone, with the decay and decay report tables.
pub fn run_iterate(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut run = RunOutput::new(config);
    let mut tables = pipeline_tables(config.iteration.steps);
    tables.truncate(2);
    let state0 = RadialMetricState::new(config.model.n, config.c.clone(), config.grid.build(config.model.n)?)?;
    match iterate_stage(&state0, &config.iteration, &mut tables, Instant::now()) {
        Ok((_, stage)) => run.stage(stage),
        Err(e) => run.stage(StageOutcome::failed("iterate", &e)),
    }
    run.tables = tables;
    Ok(run)
}

fn table<'a>(tables: &'a mut [(String, CsvTable)], name: &str) -> &'a mut CsvTable {
    &mut tables.iter_mut().find(|(n, _)| n == name).expect("pipeline table").1
}

fn iterate_stage(
    state0: &RadialMetricState,
    it: &IterationSpec,
    tables: &mut [(String, CsvTable)],
    t0: Instant,
) -> Result<(RadialMetricState, StageOutcome)> {
    let n = state0.n;
    let res = iterate(state0, it.steps)?;
    let mut stage = StageOutcome::new("iterate");
    let grid = state0.grid().clone();
    {
        let t = table(tables, "decay");
        for (i, &z) in grid.z().iter().enumerate() {
            let mut row = vec![z];
            row.extend(res.f.iter().map(|f| f.values()[i]));
            t.push_numbers(&row)?;
        }
    }
    let zero = res.f.iter().all(|f| f.max_abs() <= FIT_FLOOR);
    let reports: Vec<Option<DecayReport>> = if zero {
        vec![None; res.f.len()]
    } else {
        decay_reports(&res.f, it.fit_lo, it.fit_hi)?.into_iter().map(Some).collect()
    };
    for (j, r) in reports.iter().enumerate() {
        let target = declared_order(j);
        let ok = r.map_or(true, |r| r.within(it.slack));
        if let Some(r) = r {
            report_row(table(tables, "decay_reports"), "iterate", r)?;
        }
        stage.checks.push(Check::gate(
            &format!("F_{j} rate"),
            ok,
            format!("fitted exponent {} on [{}, {}], target {target} +/- {}", exponent_text(r), it.fit_lo, it.fit_hi, it.slack),
        ));
    }
    for j in 0..res.f.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (&reports[j], &reports[j + 1]) {
            stage.checks.push(Check::info(
                &format!("F_{} improves on F_{j}", j + 1),
                b.exponent <= a.exponent - 0.8,
                format!("{:.4} vs {:.4} (need a gain of 0.8)", b.exponent, a.exponent),
            ));
        }
    }
    let mut worst: f64 = 0.0;
    for (j, sol) in res.u.iter().enumerate() {
        worst = worst.max(linear_step_residual(n, sol, &res.f[j])?);
    }
    stage.checks.push(Check::gate("linear solves exact", worst < 1e-8, format!("max relative residual {worst:e} (limit 1e-8)")));
    let (lead_det, lead_display) = f0_leading_coefficients(n, &state0.c);
    stage.checks.push(Check::info(
        "F_0 leading coefficient",
        (lead_det - lead_display).abs() <= 1e-12,
        format!("determinant ratio gives {lead_det:.6}/z, the displayed sum gives {lead_display:.6}/z"),
    ));
    let secs = t0.elapsed().as_secs_f64();
    stage.checks.push(Check::gate("runtime", secs < 60.0, format!("{secs:.3} s (limit 60 s)")));
    let last = res.states.last().cloned().ok_or_else(|| LabError::InvalidParameter("empty iteration".into()))?;
    Ok((last, stage))
}

fn compat_stage(
    state: &RadialMetricState,
    config: &ExperimentConfig,
    tables: &mut [(String, CsvTable)],
) -> Result<(RadialMetricState, StageOutcome)> {
    let it = config.iteration;
    let glue = GlueWindow::default_for(state.grid());
    let start = apply_linear_z(state, it.lambda_offset, glue)?;
    let target = declared_order(it.steps);
    let before = fit_or_zero(it.steps, &ma_ratio(&start)?, it.fit_lo, it.fit_hi, target)?;
    let (next, rep) = enforce_compatibility(&start, &config.model, glue, it.compat_rel_tol, it.max_passes)?;
    let after = fit_or_zero(it.steps, &ma_ratio(&next)?, it.fit_lo, it.fit_hi, target)?;
    let ob = before.map_or(f64::NAN, |r| r.exponent);
    let oa = after.map_or(f64::NAN, |r| r.exponent);
    table(tables, "compatibility").push_numbers(&[
        it.lambda_offset,
        rep.lambda,
        rep.constant_before,
        rep.constant_after,
        rep.tolerance,
        rep.passes as f64,
        ob,
        oa,
    ])?;
    let mut stage = StageOutcome::new("compatibility");
    stage.checks.push(Check::gate(
        "end integral vanishes",
        rep.constant_after.abs() <= 10.0 * rep.tolerance,
        format!(
            "C = {:e} -> {:e} after lambda = {:e} ({} passes), limit 10 x {:e}",
            rep.constant_before, rep.constant_after, rep.lambda, rep.passes, rep.tolerance
        ),
    ));
    let same = match (before, after) {
        (Some(a), Some(b)) => (a.exponent - b.exponent).abs() <= it.slack,
        (None, None) => true,
        _ => false,
    };
    stage.checks.push(Check::gate(
        "F order unchanged",
        same,
        format!("{} before, {} after (limit {})", exponent_text(&before), exponent_text(&after), it.slack),
    ));
    Ok((next, stage))
}

fn final_stage(
    state: &RadialMetricState,
    it: &IterationSpec,
    tables: &mut [(String, CsvTable)],
) -> Result<(RadialMetricState, Option<f64>, StageOutcome)> {
    let n = state.n;
    let mut stage = StageOutcome::new("final-step");
    let (next, f, report) = if ma_ratio(state)?.max_abs() <= FIT_FLOOR {
        (state.clone(), RadialFunction::zeros(state.grid().clone()), None)
    } else {
        let (s, f, r) = final_step(state, it.fit_lo, it.fit_hi)?;
        (s, f, Some(r))
    };
    {
        let t = table(tables, "final");
        for (z, v) in f.z().iter().zip(f.values()) {
            t.push_numbers(&[*z, *v])?;
        }
    }
    if let Some(r) = &report {
        report_row(table(tables, "decay_reports"), "final-step", r)?;
    }
    let limit = -(n as f64 + 2.0) + it.slack;
    stage.checks.push(Check::gate(
        "final F order",
        report.map_or(true, |r| r.at_most(it.slack)),
        format!("fitted exponent {} (limit {limit})", exponent_text(&report)),
    ));
    let closeness = metric_closeness(&next)?;
    let cr = fit_or_zero(0, &closeness, it.fit_lo, it.fit_hi, -1.0)?;
    stage.checks.push(Check::info(
        "metric closeness rate",
        cr.map_or(true, |r| r.within(it.slack)),
        format!("|omega - omega_C| fitted exponent {} (expected -1)", exponent_text(&cr)),
    ));
    Ok((next, report.map(|r| r.exponent), stage))
}

fn newton_stage(
    state: &RadialMetricState,
    config: &ExperimentConfig,
    f_order: Option<f64>,
    tables: &mut [(String, CsvTable)],
) -> Result<StageOutcome> {
    let cfg = config.newton;
    let n = state.n;
    let mut stage = StageOutcome::new("newton");
    let (phi, trace) = newton_solve(state, &cfg)?;
    let res = residual(state, &phi)?;
    {
        let t = table(tables, "newton_trace");
        for (k, r) in trace.residuals.iter().enumerate() {
            let tail = if k == 0 {
                vec![String::new(), String::new()]
            } else {
                vec![num(trace.step_norms[k - 1]), num(trace.damping[k - 1])]
            };
            let mut row = vec![k.to_string(), num(*r)];
            row.extend(tail);
            t.push(row)?;
        }
        let t = table(tables, "newton_solution");
        for ((z, p), r) in phi.z().iter().zip(phi.values()).zip(res.values()) {
            t.push_numbers(&[*z, *p, *r])?;
        }
    }
    let last = *trace.residuals.last().unwrap_or(&f64::INFINITY);
    let steps = trace.residuals.len() - 1;
    stage.checks.push(Check::gate(
        "converged",
        last < cfg.tol && steps <= cfg.max_iter,
        format!("residual {last:e} after {steps} steps (limit {:e}, {} steps)", cfg.tol, cfg.max_iter),
    ));
    let kappa = trace.quadratic_constant(cfg.tol * 1e-3);
    stage.checks.push(Check::gate(
        "quadratic contraction",
        steps == 0 || kappa.is_some_and(f64::is_finite),
        format!("fitted kappa {kappa:?} over residuals {:?}", trace.residuals),
    ));
    let model = RadialMetricState::new(n, vec![0.0; n as usize - 1], state.grid().clone())?;
    let (phi0, _) = newton_solve(&model, &cfg)?;
    stage.checks.push(Check::gate(
        "unperturbed model",
        phi0.max_abs() == 0.0,
        format!("max |phi| = {:e} on the pure model", phi0.max_abs()),
    ));
    let d = phi_decay_report(n, &phi, cfg.z_min, cfg.z_max, -1.0)?;
    if let (Some(dd), Some(fo)) = (d.ddbar, f_order) {
        stage.checks.push(Check::info(
            "i ddbar phi order",
            dd.exponent <= fo + config.iteration.slack,
            format!("fitted {:.4} against final F order {fo:.4}; window energy {:e}", dd.exponent, d.energy),
        ));
    }
    Ok(stage)
}

/// Build the Poisson source from an expression in z, x1 .. x_{2n-2}, theta.
pub fn poisson_source(n: u32, text: &str) -> Result<SourceExpr> {
    let vars = poisson_vars(n);
    let names: Vec<&str> = vars.iter().map(String::as_str).collect();
    let mut probe = vec![0.0; names.len()];
    probe[0] = 1.0;
    SourceExpr::parse(text, &names, &probe)
}

/// Spectral Poisson solve of the configured source: per-slice table and
/// the fitted-order report.
pub fn poisson_stage(config: &ExperimentConfig) -> Result<RunOutput> {
    let n = config.model.n;
    let m = &config.modes;
    let mut run = RunOutput::new(config);
    let mut slices = CsvTable::new(&["z", "sup_u", "sup_centered", "laplace_residual"]);
    let mut rep = CsvTable::new(&[
        "modes_used",
        "modes_dropped",
        "tail_estimate",
        "order_u",
        "order_centered",
        "alias_error",
        "max_relative_residual",
    ]);
    let mut stage = StageOutcome::new("poisson");
    let outcome = (|| -> Result<()> {
        let provider = SpectrumProvider::new(n, m.torus_cutoff, m.fiber_cutoff, m.z0)?;
        let expr = poisson_source(n, &m.source)?;
        let v = TensorField::new(
            move |z, x, th| {
                let mut vals = Vec::with_capacity(x.len() + 2);
                vals.push(z);
                vals.extend_from_slice(x);
                vals.push(th);
                expr.eval_or_nan(&vals)
            },
            m.delta,
        );
        let grid = m.grid.build(n)?;
        let sol = solve_poisson(&provider, &v, grid.clone(), m.truncation, &Default::default())?;
        let lr = laplace_residual(&sol, &v, &provider)?;
        let sups: Vec<(f64, f64)> = par::map_range(grid.len(), |i| {
            let sup = |skip| sol.assemble_slice(&provider, i, skip).iter().fold(0.0f64, |a, b| a.max(b.abs()));
            (sup(false), sup(true))
        });
        for (i, &z) in grid.z().iter().enumerate() {
            slices.push_numbers(&[z, sups[i].0, sups[i].1, lr.per_slice[i]])?;
        }
        let r = &sol.report;
        let ou = r.order_u.map_or(f64::NAN, |d| d.exponent);
        let oc = r.order_centered.map_or(f64::NAN, |d| d.exponent);
        rep.push(vec![
            r.modes_used.to_string(),
            r.modes_dropped.to_string(),
            num(r.tail_estimate),
            num(ou),
            num(oc),
            num(r.alias_error),
            num(lr.max_relative),
        ])?;
        let nf = n as f64;
        let slack = config.iteration.slack;
        stage.checks.push(Check::gate(
            "Laplace residual",
            lr.max_relative < 1e-6,
            format!("max relative |Delta u - v| = {:e} (limit 1e-6)", lr.max_relative),
        ));
        stage.checks.push(Check::gate(
            "centered order",
            r.order_centered.map_or(true, |d| d.exponent <= m.delta + 1.0 + slack),
            format!("|u - u_0| fitted exponent {oc:.4} (limit {})", m.delta + 1.0 + slack),
        ));
        stage.checks.push(Check::info(
            "full order",
            r.order_u.map_or(true, |d| d.exponent <= m.delta + nf + 1.0 + slack),
            format!("|u| fitted exponent {ou:.4} (limit {})", m.delta + nf + 1.0 + slack),
        ));
        Ok(())
    })();
    if let Err(e) = outcome {
        stage.error = Some(e.to_string());
    }
    run.stage(stage);
    run.table("poisson", slices);
    run.table("poisson_report", rep);
    Ok(run)
}

/// Run the pipeline under each thread count and compare the CSV bytes.
pub fn determinism_check(config: &ExperimentConfig, threads: &[usize]) -> Result<StageOutcome> {
    let mut stage = StageOutcome::new("determinism");
    let mut first: Option<(usize, Vec<(String, String)>)> = None;
    for &k in threads {
        let run = par::with_threads(k, || run_pipeline(config))?;
        let csv: Vec<(String, String)> = run.tables.iter().map(|(n, t)| (n.clone(), t.to_csv())).collect();
        match &first {
            None => first = Some((k, csv)),
            Some((k0, c0)) => {
                let same = c0 == &csv;
                let differing: Vec<&str> =
                    c0.iter().zip(&csv).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
                stage.checks.push(Check::gate(
                    &format!("threads {k0} vs {k}"),
                    same,
                    if same { format!("{} CSV files byte-identical", csv.len()) } else { format!("differing: {differing:?}") },
                ));
            }
        }
    }
    Ok(stage)
}

use calabi_core::checks::{
    bound_shape_check, determinant_fuzz, geometry_check, green_oracle_check, mode_solve, specfun_check,
    wronskian_check, StageOutcome,
};
use calabi_core::expr::SourceExpr;
use calabi_core::harness::{
    determinism_check, emit_report, poisson_stage, run_iterate, run_pipeline, ExperimentConfig, RunOutput,
};
use calabi_core::mode_ode::Mode;
use calabi_core::par;
use calabi_core::radial::{RadialFunction, RadialGrid};
use calabi_core::report::{log_log_svg, write_file, CsvTable};
use calabi_core::{LabError, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "calabi-lab", version, about = "Numerical laboratory on the Calabi model space")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON experiment configuration (defaults to the standard n = 3 toy).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed of the randomized checks (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Envelope certification of K_{1/n} and I_{1/n} on [1, 50].
    SpecfunCheck {
        #[arg(long, default_value_t = 50.0)]
        y_max: f64,
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
    /// Green solve of one mode; CSV (z, u, residual).
    ModeSolve {
        #[arg(long, default_value_t = 3)]
        n: u32,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        j: u32,
        /// Expression in z, or a CSV file with columns z and v covering [1, zmax].
        #[arg(long, default_value = "z^(-2)")]
        source: String,
        /// Declared polynomial order of the source.
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long, default_value_t = 10.0)]
        zmax: f64,
    },
    /// Spectral Poisson solve of a source on the surrogate spectrum.
    Poisson {
        #[arg(long)]
        modes: Option<usize>,
        /// z_lo,z_hi[,panels]
        #[arg(long)]
        grid: Option<String>,
        /// Expression in z, x1 .. x_{2n-2}, theta.
        #[arg(long)]
        source: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<f64>,
    },
    /// F_j iteration on the radial toy with decay fits.
    Iterate {
        #[arg(long)]
        n: Option<u32>,
        /// Comma-separated wedge ratios c_1,..,c_{n-1}.
        #[arg(long, allow_hyphen_values = true)]
        c: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// z_lo,z_hi[,panels]
        #[arg(long)]
        grid: Option<String>,
    },
    /// Full pipeline ending in the Newton Monge-Ampere solve.
    MaSolve {
        /// z_min,z_max
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Plots from the CSVs already in the output directory.
    Report,
    /// Every check and the full pipeline.
    All,
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| LabError::Config(format!("{v:?}: {e}"))))
        .collect()
}

/// Apply "z_lo,z_hi[,panels]" to a grid spec.
fn apply_grid(spec: &mut calabi_core::harness::GridSpec, s: &str) -> Result<()> {
    let v = parse_list(s)?;
    if !(2..=3).contains(&v.len()) {
        return Err(LabError::Config(format!("grid {s:?}: expected z_lo,z_hi[,panels]")));
    }
    spec.z_lo = v[0];
    spec.z_hi = v[1];
    if let Some(p) = v.get(2) {
        spec.panels = *p as usize;
    }
    Ok(())
}

fn mode_source(text: &str, n: u32, zmax: f64) -> Result<Box<dyn Fn(f64) -> f64 + Sync>> {
    let path = Path::new(text);
    if text.ends_with(".csv") && path.exists() {
        let t = CsvTable::read(path)?;
        let z = t.column("z")?;
        let v = t.column("v")?;
        if z.first().map_or(true, |a| *a > 1.0) || z.last().map_or(true, |b| *b < zmax) {
            return Err(LabError::Config(format!("{text}: samples must cover [1, {zmax}]")));
        }
        let f = RadialFunction::new(Arc::new(RadialGrid::from_z(n, z)?), v)?;
        return Ok(Box::new(move |x| f.eval(x).unwrap_or(f64::NAN)));
    }
    let e = SourceExpr::parse(text, &["z"], &[1.0])?;
    Ok(Box::new(move |x| e.eval_or_nan(&[x])))
}

fn print_stages(stages: &[StageOutcome]) {
    for s in stages {
        if let Some(e) = &s.error {
            println!("[{}] {}: {e}", if s.skipped { "SKIP" } else { "FAIL" }, s.stage);
        }
        for c in &s.checks {
            let tag = match (c.passed, c.gating) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "NOTE",
            };
            println!("[{tag}] {} / {}: {}", s.stage, c.name, c.detail);
        }
    }
}

fn staged(config: &ExperimentConfig, r: Result<(StageOutcome, CsvTable)>, name: &str, table: &str) -> RunOutput {
    let mut run = RunOutput::new(config);
    match r {
        Ok((s, t)) => {
            run.stage(s);
            run.table(table, t);
        }
        Err(e) => run.stage(StageOutcome::failed(name, &e)),
    }
    run
}

fn report(dir: &Path) -> Result<bool> {
    let mut any = false;
    for name in ["decay", "final"] {
        let p = dir.join(format!("{name}.csv"));
        if p.exists() {
            let t = CsvTable::read(&p)?;
            let svg = log_log_svg(&t, "z", &format!("log10 |F| ({name})"))?;
            println!("wrote {}", write_file(dir, &format!("{name}.svg"), &svg)?.display());
            any = true;
        }
    }
    let p = dir.join("decay_reports.csv");
    if p.exists() {
        let t = CsvTable::read(&p)?;
        let (e, g) = (t.column("exponent")?, t.column("target")?);
        for (k, r) in t.rows.iter().enumerate() {
            println!("{} F_{}: exponent {:.4}, target {}", r[0], r[1], e[k], g[k]);
        }
    }
    if !any {
        return Err(LabError::Io(format!("no decay.csv or final.csv in {}", dir.display())));
    }
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    let mut config = match &cli.global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.global.out {
        config.output_dir = o.to_string_lossy().into_owned();
    }
    if let Some(s) = cli.global.seed {
        config.seed = s;
    }
    let out = PathBuf::from(&config.output_dir);
    let n = config.model.n;
    let mut output = match cli.command {
        Command::SpecfunCheck { y_max, samples } => {
            staged(&config, specfun_check(&[2, 3, 4], 1.0, y_max, samples, 20.0), "specfun-check", "specfun")
        }
        Command::ModeSolve { n, lambda, j, source, delta, zmax } => {
            let mode = Mode::new(lambda, j)?;
            let v = mode_source(&source, n, zmax)?;
            staged(&config, mode_solve(n, &mode, v, delta, zmax, 1e-6), "mode-solve", "mode_solve")
        }
        Command::Poisson { modes, grid, source, delta } => {
            if let Some(m) = modes {
                config.modes.truncation = m;
            }
            if let Some(g) = grid {
                apply_grid(&mut config.modes.grid, &g)?;
            }
            if let Some(s) = source {
                config.modes.source = s;
            }
            if let Some(d) = delta {
                config.modes.delta = d;
            }
            config.validate()?;
            poisson_stage(&config)?
        }
        Command::Iterate { n: nn, c, steps, grid } => {
            if let Some(nn) = nn {
                config.model.n = nn;
                if c.is_none() {
                    config.c = vec![0.0; nn as usize - 1];
                }
            }
            if let Some(c) = c {
                config.c = parse_list(&c)?;
            }
            if let Some(s) = steps {
                config.iteration.steps = s;
            }
            if let Some(g) = grid {
                apply_grid(&mut config.grid, &g)?;
                config.iteration.fit_lo = config.grid.z_lo;
                config.iteration.fit_hi = config.grid.z_hi;
                config.newton.z_min = config.newton.z_min.max(config.grid.z_lo);
                config.newton.z_max = config.newton.z_max.min(config.grid.z_hi);
            }
            run_iterate(&config)?
        }
        Command::MaSolve { window, tol, max_iter } => {
            if let Some(w) = window {
                let v = parse_list(&w)?;
                if v.len() != 2 {
                    return Err(LabError::Config(format!("window {w:?}: expected z_min,z_max")));
                }
                config.newton.z_min = v[0];
                config.newton.z_max = v[1];
            }
            if let Some(t) = tol {
                config.newton.tol = t;
            }
            if let Some(m) = max_iter {
                config.newton.max_iter = m;
            }
            run_pipeline(&config)?
        }
        Command::Report => return report(&out),
        Command::All => {
            let mut all = RunOutput::new(&config);
            all.extend(staged(&config, specfun_check(&[2, 3, 4], 1.0, 50.0, 50, 20.0), "specfun-check", "specfun"));
            all.extend(staged(
                &config,
                wronskian_check(n, &[1.0, 2.0, 4.0], &[0, 1, 2], 1e-5),
                "wronskian",
                "wronskian",
            ));
            all.extend(staged(&config, green_oracle_check(n, 1e-6), "green-oracle", "green_oracle"));
            all.extend(staged(
                &config,
                bound_shape_check(n, &[1.0, 2.0, 4.0, 8.0, 16.0], &[0, 1, 2, 3], -2.0, 0.2),
                "bound-shape",
                "bound_shape",
            ));
            all.extend(poisson_stage(&config)?);
            all.extend(run_pipeline(&config)?);
            match geometry_check(&config.model) {
                Ok(s) => all.stage(s),
                Err(e) => all.stage(StageOutcome::failed("geometry", &e)),
            }
            let threads = [1, cli.global.threads.max(4)];
            match determinism_check(&config, &threads) {
                Ok(s) => all.stage(s),
                Err(e) => all.stage(StageOutcome::failed("determinism", &e)),
            }
            match determinant_fuzz(config.seed, 200, 1e-10) {
                Ok(s) => all.stage(s),
                Err(e) => all.stage(StageOutcome::failed("determinant-fuzz", &e)),
            }
            all
        }
    };
    print_stages(&output.manifest.stages);
    emit_report(&mut output, &out)?;
    let passed = output.manifest.passed();
    println!(
        "{}: {} stages, config hash {}, output in {}",
        if passed { "PASS" } else { "FAIL" },
        output.manifest.stages.len(),
        output.manifest.config_hash,
        out.display()
    );
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.global.threads;
    match par::with_threads(threads, || run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Command line front end: solve, validate, optimize, continue, export,
//! check-conjugacy.
//!
//! Exit codes: 0 success, 1 generic failure, 2 solver non-convergence,
//! 3 resonance detected, 4 proof impossible, 5 unsupported degree for the
//! proof bounds.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};

use parmval::error::Error;
use parmval::geometry;
use parmval::optimize::{self, ContinuationMode, RayWeights};
use parmval::parm::{self, DefectEvaluator, ManifoldProblem, Parameterization};
use parmval::problem::{self, BuildOptions, ProblemFile};
use parmval::series::Scaling;
use parmval::validation::BoundEngine;

#[derive(Parser)]
#[command(
    name = "parmval",
    about = "Validated polynomial parameterizations of local stable/unstable manifolds",
    version
)]
struct Cli {
    /// Worker threads for internal parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem file path, or a bundled fixture name (lorenz, fhn, bridge).
    #[arg(long)]
    problem: String,

    /// Truncation order N (coefficients for |alpha| < N).
    #[arg(long, default_value_t = 30)]
    order: usize,

    /// Defect threshold.
    #[arg(long, default_value_t = 1e-5)]
    eps_max: f64,

    /// Proof (radius) threshold.
    #[arg(long, default_value_t = 1e-5)]
    r_max: f64,

    /// Parameter overrides, e.g. --set beta=1.3 (repeatable).
    #[arg(long = "set", value_parser = parse_override)]
    overrides: Vec<(String, f64)>,
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let value: f64 = value.parse().map_err(|e| format!("bad value in {s:?}: {e}"))?;
    Ok((name.trim().to_string(), value))
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory (default: $PARMVAL_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArgs {
    fn dir(&self) -> anyhow::Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os("PARMVAL_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverKind {
    Homological,
    Newton,
}

#[derive(Clone, Copy, ValueEnum)]
enum ValidateMode {
    Defect,
    Proof,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizeMethod {
    Area,
    Ray,
    Proof,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContinueMode {
    Proof,
    Defect,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Obj,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the homological equations and write the coefficient file.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_enum, default_value_t = SolverKind::Homological)]
        solver: SolverKind,
    },
    /// Evaluate a validity criterion at a given scaling.
    Validate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_enum)]
        mode: ValidateMode,
        /// Scaling entries, comma separated (default: all ones).
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        /// Evaluate the proof bounds with outward-rounded interval arithmetic.
        #[arg(long)]
        interval: bool,
    },
    /// Search for the largest admissible eigenvector scaling.
    Optimize {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_enum)]
        method: OptimizeMethod,
        /// Ray weights for --method ray, comma separated.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// gamma_1 sample count for --method area.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Interval arithmetic for --method proof (default on).
        #[arg(long, default_value_t = true)]
        interval: bool,
    },
    /// Sweep a field parameter; one certified row per value.
    Continue {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        param: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = ContinueMode::Proof)]
        mode: ContinueMode,
        #[arg(long, default_value_t = true)]
        interval: bool,
        /// Ray weights for --mode defect.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Sample the patch and write a mesh.
    Export {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        #[arg(long, default_value_t = 33)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = ExportFormat::Obj)]
        format: ExportFormat,
        /// Output file path.
        #[arg(long)]
        out_file: PathBuf,
        /// Reuse a previously written coefficient file instead of solving.
        #[arg(long)]
        coeffs: Option<PathBuf>,
    },
    /// Compare the flow of the field against the linear model through the chart.
    CheckConjugacy {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0.5)]
        time: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence(_)) => 2,
        Some(Error::ResonanceDetected { .. }) => 3,
        Some(Error::ProofImpossible(_)) => 4,
        Some(Error::UnsupportedDegree(_)) => 5,
        _ => 1,
    }
}

fn load(problem: &ProblemArgs) -> anyhow::Result<(ProblemFile, ManifoldProblem)> {
    let file = problem::load_problem_source(&problem.problem)?;
    let opts = BuildOptions {
        order: problem.order,
        epsilon_max: problem.eps_max,
        r_max: problem.r_max,
        overrides: problem.overrides.clone(),
    };
    let built = problem::build_problem(&file, &opts)?;
    Ok((file, built))
}

fn solve_with(
    problem: &ManifoldProblem,
    solver: SolverKind,
) -> anyhow::Result<Parameterization> {
    Ok(match solver {
        SolverKind::Homological => parm::solve_homological(problem)?,
        SolverKind::Newton => parm::newton_solve(problem, None)?,
    })
}

fn gamma_of(problem: &ManifoldProblem, gamma: &Option<Vec<f64>>) -> anyhow::Result<Scaling<f64>> {
    let m = problem.manifold_dim();
    let scaling = match gamma {
        Some(entries) => {
            anyhow::ensure!(
                entries.len() == m,
                "--gamma needs {m} entries for this manifold"
            );
            Scaling::new(entries.clone())?
        }
        None => Scaling::ones(m),
    };
    scaling.check_pairing(&problem.spectral.pairing)?;
    Ok(scaling)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Solve { problem: pargs, out, solver } => {
            let (_, problem) = load(&pargs)?;
            let dir = out.dir()?;
            let par = solve_with(&problem, solver)?;
            problem::write_coefficients(&dir.join("coefficients.json"), &par)?;
            println!("wrote {}", dir.join("coefficients.json").display());
            write_json(&dir.join("spectral_report.json"), &problem::spectral_report(&problem))?;
            let summary = problem::residual_summary(&problem, &par)?;
            write_json(&dir.join("residual_summary.json"), &summary)?;
            println!(
                "order {} solved: truncated residual {:.3e}, defect at unit scaling {:.6e}",
                problem.order, summary.truncated_norm, summary.defect_at_unit_scaling
            );
            Ok(())
        }

        Command::Validate { problem: pargs, out, mode, gamma, interval } => {
            let (_, problem) = load(&pargs)?;
            let par = parm::solve_homological(&problem)?;
            let scaling = gamma_of(&problem, &gamma)?;
            match mode {
                ValidateMode::Defect => {
                    let ev = DefectEvaluator::new(&problem, &par)?;
                    let d = ev.eval(&scaling);
                    let valid = ev.is_defect_valid(&scaling, problem.epsilon_max);
                    println!(
                        "defect at gamma {:?}: {:.6e} (threshold {:.1e}) -> {}",
                        scaling.entries(),
                        d,
                        problem.epsilon_max,
                        if valid { "defect-valid" } else { "NOT defect-valid" }
                    );
                    Ok(())
                }
                ValidateMode::Proof => {
                    let engine = BoundEngine::new(&problem, &par, interval)?;
                    let report = engine.proof_report(&scaling)?;
                    let dir = out.dir()?;
                    write_json(&dir.join("radii_report.json"), &report)?;
                    println!(
                        "proof at gamma {:?} ({} mode): {}",
                        scaling.entries(),
                        if interval { "interval" } else { "floating" },
                        if report.verdict {
                            format!("proof-valid, r = {:.6e}", report.r_used.unwrap())
                        } else {
                            "NOT proof-valid".to_string()
                        }
                    );
                    Ok(())
                }
            }
        }

        Command::Optimize { problem: pargs, out, method, weights, samples, interval } => {
            let (_, problem) = load(&pargs)?;
            let par = parm::solve_homological(&problem)?;
            let dir = out.dir()?;
            let result = match method {
                OptimizeMethod::Area => {
                    let ev = DefectEvaluator::new(&problem, &par)?;
                    optimize::level_set_method1(&problem, &par, &ev, samples)?
                }
                OptimizeMethod::Ray => {
                    let ev = DefectEvaluator::new(&problem, &par)?;
                    let w = match &weights {
                        Some(w) => RayWeights::new(w.clone(), &problem.spectral.pairing)?,
                        None => RayWeights::uniform(problem.manifold_dim()),
                    };
                    optimize::ray_method2(&problem, &par, &ev, &w)?
                }
                OptimizeMethod::Proof => {
                    let engine = BoundEngine::new(&problem, &par, interval)?;
                    optimize::proof_dichotomy(&problem, &par, &engine)?
                }
            };
            write_json(&dir.join("scaling_result.json"), &result)?;
            write_samples_csv(&dir.join("samples.csv"), &result)?;
            println!(
                "optimum gamma {:?}: metric {:.6e}{}{}",
                result.gamma_opt,
                result.achieved,
                result
                    .area
                    .map(|a| format!(", patch area {a:.6}"))
                    .unwrap_or_default(),
                if result.capped { " (hit the scaling cap)" } else { "" }
            );
            Ok(())
        }

        Command::Continue {
            problem: pargs,
            out,
            param,
            from,
            to,
            steps,
            mode,
            interval,
            weights,
        } => {
            anyhow::ensure!(steps >= 1, "--steps must be at least 1");
            let file = problem::load_problem_source(&pargs.problem)?;
            let values: Vec<f64> = (0..steps)
                .map(|k| {
                    if steps == 1 {
                        from
                    } else {
                        from + (to - from) * k as f64 / (steps - 1) as f64
                    }
                })
                .collect();
            let build = |value: f64| -> parmval::Result<ManifoldProblem> {
                let mut overrides = pargs.overrides.clone();
                overrides.push((param.clone(), value));
                let opts = BuildOptions {
                    order: pargs.order,
                    epsilon_max: pargs.eps_max,
                    r_max: pargs.r_max,
                    overrides,
                };
                problem::build_problem(&file, &opts)
            };
            let cmode = match mode {
                ContinueMode::Proof => ContinuationMode::Proof { interval },
                ContinueMode::Defect => ContinuationMode::Defect { weights: weights.clone() },
            };
            let rows = optimize::continuation(build, &values, &cmode);
            let dir = out.dir()?;
            let path = dir.join("continuation.csv");
            write_continuation_csv(&path, &param, &rows)?;
            let ok = rows.iter().filter(|r| r.status == "ok").count();
            println!("{} of {} rows certified; wrote {}", ok, rows.len(), path.display());
            Ok(())
        }

        Command::Export { problem: pargs, gamma, grid, format, out_file, coeffs } => {
            let (_, problem) = load(&pargs)?;
            let par = match &coeffs {
                Some(path) => problem::read_coefficients(path)?,
                None => parm::solve_homological(&problem)?,
            };
            let scaling = gamma_of(&problem, &gamma)?;
            let scaled = par.rescaled(&scaling)?;
            let m = problem.manifold_dim();
            anyhow::ensure!(
                m <= 2 || matches!(format, ExportFormat::Csv),
                "manifolds with 3+ parameters export as raw point clouds; use --format csv"
            );
            if !problem.spectral.pairing.is_empty() {
                eprintln!(
                    "note: conjugate-paired directions; corners of the square domain reach \
                     complex modulus sqrt(2), slightly outside the certified unit polydisc"
                );
            }
            let domain = vec![(-1.0, 1.0); m];
            let mesh = geometry::sample_surface(
                &scaled.coeffs,
                &problem.spectral.pairing,
                grid,
                &domain,
            )?;
            match format {
                ExportFormat::Obj => geometry::export_obj(&mesh, &out_file)?,
                ExportFormat::Csv => geometry::export_csv(&mesh, &out_file)?,
            }
            println!(
                "wrote {} ({} vertices, {} triangles)",
                out_file.display(),
                mesh.vertices.len(),
                mesh.triangles.len()
            );
            Ok(())
        }

        Command::CheckConjugacy { problem: pargs, gamma, samples, time, seed } => {
            let (_, problem) = load(&pargs)?;
            let par = parm::solve_homological(&problem)?;
            let scaling = gamma_of(&problem, &gamma)?;
            let scaled = par.rescaled(&scaling)?;
            let m = problem.manifold_dim();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut max_err = 0.0f64;
            let mut sum_err = 0.0f64;
            for _ in 0..samples {
                let theta: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let err = geometry::conjugacy_error(
                    &scaled.coeffs,
                    &problem.field,
                    &problem.spectral,
                    &theta,
                    time,
                )?;
                max_err = max_err.max(err);
                sum_err += err;
            }
            println!(
                "conjugacy over {} samples at t = {}: max {:.6e}, mean {:.6e}",
                samples,
                time,
                max_err,
                sum_err / samples as f64
            );
            Ok(())
        }
    }
}

fn write_samples_csv(path: &Path, result: &optimize::ScalingResult) -> anyhow::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = result.gamma_opt.len();
    let mut header: Vec<String> = (1..=m).map(|k| format!("gamma{k}")).collect();
    header.push("metric".into());
    header.push("area".into());
    writeln!(out, "{}", header.join(","))?;
    for s in &result.samples {
        let mut cells: Vec<String> = s.gamma.iter().map(|g| format!("{g:.16e}")).collect();
        cells.push(format!("{:.16e}", s.metric));
        cells.push(s.area.map(|a| format!("{a:.16e}")).unwrap_or_default());
        writeln!(out, "{}", cells.join(","))?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn write_continuation_csv(
    path: &Path,
    param: &str,
    rows: &[optimize::ContinuationRow],
) -> anyhow::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{param},gamma,metric,status")?;
    for r in rows {
        let gamma = r
            .gamma
            .as_ref()
            .map(|g| format!("{:.16e}", g[0]))
            .unwrap_or_default();
        let metric = r.metric.map(|x| format!("{x:.16e}")).unwrap_or_default();
        writeln!(out, "{:.16e},{gamma},{metric},{}", r.param, r.status)?;
    }
    Ok(())
}

//! `otdx` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use ot_dualex::io::{
    emit_plan, emit_solution, emit_trace, format_matrix_csv, format_vector_csv, plan_path_for,
    CostSource, InstanceSpec, MarginalSource, SolutionRecord,
};
use ot_dualex::{
    exact_oracle, run_audit, sinkhorn, solve, AltMinConfig, AuditConfig, ConvergenceTrace, OtError,
    Preset, Problem, SinkhornConfig, SolverConfig, TransportPlan, Variant,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CAP: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "otdx", version, about = "Approximate optimal transport by dual extrapolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance.
    Solve(SolveArgs),
    /// Run several solvers over several seeds and write one CSV.
    Bench(BenchArgs),
    /// Write an instance to CSV files.
    Gen(GenArgs),
    /// Exact solve by the transportation simplex method (n ≤ 16).
    Oracle(OracleArgs),
    /// Probe area-convexity and the block quadratic form.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Dualex,
    Mirrorprox,
    Sinkhorn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Provable,
    Reasonable,
    Optimized,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Provable => Preset::Provable,
            PresetArg::Reasonable => Preset::Reasonable,
            PresetArg::Optimized => Preset::Optimized,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Cost matrix: a CSV file, `manhattan:WxH`, `euclidean:WxH` or `random`.
    #[arg(long)]
    pub cost: Option<String>,
    /// Source marginal CSV (requires --c).
    #[arg(long, requires = "c")]
    pub r: Option<PathBuf>,
    /// Target marginal CSV (requires --r).
    #[arg(long, requires = "r")]
    pub c: Option<PathBuf>,
    /// Two PGM (P2) images giving the marginals.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with_all = ["r", "c"])]
    pub images: Option<Vec<PathBuf>>,
    /// Keep every other pixel of the images in each direction.
    #[arg(long)]
    pub downsample: bool,
    /// Intensity added to every pixel before normalizing.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub noise_floor: f64,
    /// Side length for random instances.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl InstanceArgs {
    pub fn spec(&self, seed: u64) -> anyhow::Result<InstanceSpec> {
        let marginals = match (&self.images, &self.r, &self.c) {
            (Some(imgs), _, _) => MarginalSource::ImagePair {
                a: imgs[0].clone(),
                b: imgs[1].clone(),
                downsample: self.downsample,
            },
            (None, Some(r), Some(c)) => MarginalSource::Files {
                r: r.clone(),
                c: c.clone(),
            },
            _ => MarginalSource::Random,
        };
        let cost = match &self.cost {
            Some(arg) => CostSource::parse(arg)?,
            None => match &marginals {
                MarginalSource::ImagePair { a, downsample, .. } => {
                    let img = ot_dualex::io::parse_pgm(
                        &fs::read(a).with_context(|| format!("reading {}", a.display()))?,
                    )?;
                    let img = if *downsample { img.downsample() } else { img };
                    CostSource::Manhattan {
                        width: img.width,
                        height: img.height,
                    }
                }
                MarginalSource::Files { .. } => bail!("--r/--c need a --cost"),
                MarginalSource::Random => CostSource::Random,
            },
        };
        let n = (cost == CostSource::Random && marginals == MarginalSource::Random).then_some(self.n);
        Ok(InstanceSpec {
            cost,
            marginals,
            n,
            seed,
            noise_floor: self.noise_floor,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Additive accuracy target, in cost units.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub epsilon: f64,
    /// Read --epsilon as a multiple of the largest cost.
    #[arg(long)]
    pub relative_epsilon: bool,
    #[arg(long, value_enum, default_value_t = PresetArg::Provable)]
    pub preset: PresetArg,
    /// Sinkhorn inverse temperature.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub eta: f64,
    /// Cap on outer iterations (default ⌈12Θ/ε⌉ + 1).
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub gap_check_every: usize,
    /// Cap on alternations per proximal step (default: the provable budget).
    #[arg(long)]
    pub max_inner: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub sinkhorn_max_iter: usize,
    /// Sinkhorn stops once the ℓ1 marginal violation is at most this.
    #[arg(long, default_value_t = 1e-9)]
    pub sinkhorn_tol: f64,
    /// Write zero elapsed times so outputs are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long = "solver", value_enum, default_value_t = SolverKind::Dualex)]
    pub solver_kind: SolverKind,
    /// Convergence trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Solution JSON; the plan goes next to it as `<stem>.plan.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Seeds, as a list (`1,2,5`) or an inclusive range (`1..=8`).
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Solver matrix: comma-separated `dualex:<preset>`, `mirrorprox:<preset>`
    /// or `sinkhorn:<eta>` entries.
    #[arg(long, default_value = "dualex:provable,dualex:optimized,sinkhorn:5")]
    pub solvers: String,
    /// Worker threads; each instance runs on one thread.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Combined CSV output (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Directory receiving `cost.csv`, `r.csv` and `c.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Result JSON; the plan goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    /// Comma-separated instance sizes.
    #[arg(long, default_value = "2,5,10")]
    pub sizes: String,
    #[arg(long, default_value_t = 3.0)]
    pub kappa: f64,
    /// Overrides the preset's entropy weight.
    #[arg(long)]
    pub entropy_weight: Option<f64>,
    #[arg(long, value_enum, default_value_t = PresetArg::Provable)]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// One solver configuration of a run or bench matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "solver", rename_all = "kebab-case")]
pub enum Resolved {
    Dualex { preset: String, config: SolverConfig },
    Mirrorprox { preset: String, config: SolverConfig },
    Sinkhorn { config: SinkhornConfig },
}

impl Resolved {
    pub fn name(&self) -> &'static str {
        match self {
            Resolved::Dualex { .. } => "dualex",
            Resolved::Mirrorprox { .. } => "mirrorprox",
            Resolved::Sinkhorn { .. } => "sinkhorn",
        }
    }

    fn preset(&self) -> &str {
        match self {
            Resolved::Dualex { preset, .. } | Resolved::Mirrorprox { preset, .. } => preset,
            Resolved::Sinkhorn { .. } => "",
        }
    }

    fn eta(&self) -> Option<f64> {
        match self {
            Resolved::Sinkhorn { config } => Some(config.eta),
            _ => None,
        }
    }
}

fn preset_name(p: PresetArg) -> String {
    PresetArg::to_possible_value(&p)
        .map(|v| v.get_name().to_string())
        .unwrap_or_default()
}

pub fn resolve(
    kind: SolverKind,
    preset: PresetArg,
    eta: f64,
    args: &SolverArgs,
    p: &Problem,
) -> Resolved {
    let epsilon = if args.relative_epsilon {
        args.epsilon * p.d_max()
    } else {
        args.epsilon
    };
    let mut cfg = SolverConfig::from_preset(preset.into(), epsilon, p.d_max());
    cfg.max_outer = args.max_outer;
    cfg.gap_check_every = args.gap_check_every;
    cfg.record_time = !args.no_timing;
    if let Some(k) = args.max_inner {
        cfg.altmin = AltMinConfig {
            max_inner: k,
            ..cfg.altmin
        };
    }
    if let Ok(altmin) = cfg.resolved_altmin(p) {
        cfg.altmin = altmin;
    }
    if cfg.max_outer.is_none() && cfg.validate().is_ok() {
        cfg.max_outer = Some(cfg.resolved_max_outer(p));
    }
    match kind {
        SolverKind::Dualex => Resolved::Dualex {
            preset: preset_name(preset),
            config: cfg.with_variant(Variant::DualExtrapolation),
        },
        SolverKind::Mirrorprox => Resolved::Mirrorprox {
            preset: preset_name(preset),
            config: cfg.with_variant(Variant::MirrorProx),
        },
        SolverKind::Sinkhorn => Resolved::Sinkhorn {
            config: SinkhornConfig {
                eta,
                max_iter: args.sinkhorn_max_iter,
                marginal_tol: args.sinkhorn_tol,
                record_time: !args.no_timing,
            },
        },
    }
}

/// Outcome of one solver run in a uniform shape.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub plan: TransportPlan,
    pub objective: f64,
    pub gap: f64,
    pub outer_iterations: usize,
    pub matvecs: u64,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub experimental: bool,
}

pub fn run_solver(p: &Problem, resolved: &Resolved) -> Result<RunOutcome, OtError> {
    match resolved {
        Resolved::Dualex { config, .. } | Resolved::Mirrorprox { config, .. } => {
            let sol = match solve(p, config) {
                Ok(sol) => sol,
                Err(OtError::MaxOuterExceeded { best }) => *best,
                Err(e) => return Err(e),
            };
            Ok(RunOutcome {
                plan: sol.plan,
                objective: sol.objective,
                gap: sol.gap,
                outer_iterations: sol.outer_iterations,
                matvecs: sol.matvecs,
                trace: sol.trace,
                converged: sol.converged,
                experimental: sol.experimental,
            })
        }
        Resolved::Sinkhorn { config } => {
            let out = sinkhorn(p, config)?;
            let lower = out.trace.last().map_or(f64::NEG_INFINITY, |r| r.dual);
            Ok(RunOutcome {
                gap: (out.objective - lower).max(0.0),
                plan: out.plan,
                objective: out.objective,
                outer_iterations: out.iterations,
                matvecs: out.matvecs,
                converged: out.marginal_error <= config.marginal_tol,
                trace: out.trace,
                experimental: false,
            })
        }
    }
}

fn print_config(value: &serde_json::Value) {
    println!(
        "resolved config: {}",
        serde_json::to_string(value).unwrap_or_else(|_| "{}".into())
    );
}

fn build_problem(spec: &InstanceSpec) -> anyhow::Result<Problem> {
    spec.build().context("building the instance")
}

pub fn cmd_solve(args: &SolveArgs) -> anyhow::Result<i32> {
    let spec = args.instance.spec(args.instance.seed)?;
    let p = build_problem(&spec)?;
    let resolved = resolve(args.solver_kind, args.solver.preset, args.solver.eta, &args.solver, &p);
    let config = json!({ "instance": spec, "n": p.n(), "d_max": p.d_max(), "run": resolved });
    print_config(&config);

    let out = run_solver(&p, &resolved)?;
    println!(
        "objective {:.12e} gap {:.6e} outer_iterations {} matvecs {} converged {}{}",
        out.objective,
        out.gap,
        out.outer_iterations,
        out.matvecs,
        out.converged,
        if out.experimental { " (experimental)" } else { "" }
    );
    if let Some(path) = &args.trace {
        emit_trace(&out.trace, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.out {
        let plan_file = plan_path_for(path)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "plan.csv".into());
        let record = SolutionRecord {
            objective: out.objective,
            gap: out.gap,
            outer_iterations: out.outer_iterations,
            matvecs: out.matvecs,
            solver: resolved.name().into(),
            config,
            plan_file,
            experimental: out.experimental,
            converged: out.converged,
        };
        emit_solution(&record, &out.plan, path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if out.converged { EXIT_OK } else { EXIT_CAP })
}

pub fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..=") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range `{text}`");
        }
        return Ok((a..=b).collect());
    }
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range `{text}`");
        }
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

/// Parses `dualex:<preset>`, `mirrorprox:<preset>` and `sinkhorn:<eta>`.
pub fn parse_solver_matrix(text: &str) -> anyhow::Result<Vec<(SolverKind, PresetArg, f64)>> {
    text.split(',')
        .map(|entry| {
            let entry = entry.trim();
            let (name, param) = entry.split_once(':').unwrap_or((entry, ""));
            let kind = SolverKind::from_str(name, true).map_err(|e| anyhow::anyhow!(e))?;
            Ok(match kind {
                SolverKind::Sinkhorn => {
                    let eta = if param.is_empty() {
                        5.0
                    } else {
                        param.parse().with_context(|| format!("bad eta in `{entry}`"))?
                    };
                    (kind, PresetArg::Provable, eta)
                }
                _ => {
                    let preset = if param.is_empty() {
                        PresetArg::Provable
                    } else {
                        PresetArg::from_str(param, true).map_err(|e| anyhow::anyhow!(e))?
                    };
                    (kind, preset, 0.0)
                }
            })
        })
        .collect()
}

pub const BENCH_HEADER: &str =
    "seed,solver,preset,eta,n,d_max,epsilon,converged,outer_iterations,matvecs,objective,gap,elapsed_ms";

#[derive(Debug, Clone)]
struct BenchRow {
    line: String,
    cap_hit: bool,
}

fn bench_one(
    args: &BenchArgs,
    seed: u64,
    entry: (SolverKind, PresetArg, f64),
) -> anyhow::Result<BenchRow> {
    let spec = args.instance.spec(seed)?;
    let p = build_problem(&spec)?;
    let resolved = resolve(entry.0, entry.1, entry.2, &args.solver, &p);
    let clock = Instant::now();
    let out = run_solver(&p, &resolved)?;
    let elapsed = if args.solver.no_timing {
        0.0
    } else {
        clock.elapsed().as_secs_f64() * 1e3
    };
    let epsilon = match &resolved {
        Resolved::Dualex { config, .. } | Resolved::Mirrorprox { config, .. } => config.epsilon,
        Resolved::Sinkhorn { .. } => f64::NAN,
    };
    Ok(BenchRow {
        line: format!(
            "{seed},{},{},{},{},{},{},{},{},{},{},{},{elapsed:.3}",
            resolved.name(),
            resolved.preset(),
            resolved.eta().map(|e| e.to_string()).unwrap_or_default(),
            p.n(),
            p.d_max(),
            if epsilon.is_nan() { String::new() } else { epsilon.to_string() },
            out.converged,
            out.outer_iterations,
            out.matvecs,
            out.objective,
            out.gap,
        ),
        cap_hit: !out.converged,
    })
}

pub fn cmd_bench(args: &BenchArgs) -> anyhow::Result<i32> {
    let seeds = parse_seeds(&args.seeds)?;
    let matrix = parse_solver_matrix(&args.solvers)?;
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    print_config(&json!({
        "seeds": seeds,
        "solvers": args.solvers,
        "instance": args.instance.spec(seeds[0])?,
        "epsilon": args.solver.epsilon,
        "relative_epsilon": args.solver.relative_epsilon,
        "max_outer": args.solver.max_outer,
        "gap_check_every": args.solver.gap_check_every,
        "max_inner": args.solver.max_inner,
        "sinkhorn_max_iter": args.solver.sinkhorn_max_iter,
        "sinkhorn_tol": args.solver.sinkhorn_tol,
        "jobs": args.jobs,
    }));

    let tasks: Vec<(u64, (SolverKind, PresetArg, f64))> = seeds
        .iter()
        .flat_map(|&s| matrix.iter().map(move |&e| (s, e)))
        .collect();
    let mut results: Vec<Option<anyhow::Result<BenchRow>>> = (0..tasks.len()).map(|_| None).collect();
    // each worker owns a fixed stride of tasks; rows are written in task order
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..args.jobs.min(tasks.len()))
            .map(|w| {
                let tasks = &tasks;
                scope.spawn(move || {
                    (w..tasks.len())
                        .step_by(args.jobs)
                        .map(|k| (k, bench_one(args, tasks[k].0, tasks[k].1)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (k, row) in h.join().expect("bench worker panicked") {
                results[k] = Some(row);
            }
        }
    });

    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    let mut cap_hit = false;
    for row in results.into_iter().flatten() {
        let row = row?;
        cap_hit |= row.cap_hit;
        csv.push_str(&row.line);
        csv.push('\n');
    }
    match &args.out {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(if cap_hit { EXIT_CAP } else { EXIT_OK })
}

pub fn cmd_gen(args: &GenArgs) -> anyhow::Result<i32> {
    let spec = args.instance.spec(args.instance.seed)?;
    print_config(&json!({ "instance": spec }));
    let p = build_problem(&spec)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let write = |name: &str, text: String| -> anyhow::Result<()> {
        let path = args.out_dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("cost.csv", format_matrix_csv(p.n(), p.cost()))?;
    write("r.csv", format_vector_csv(p.r()))?;
    write("c.csv", format_vector_csv(p.c()))?;
    println!("wrote n = {} instance to {}", p.n(), args.out_dir.display());
    Ok(EXIT_OK)
}

pub fn cmd_oracle(args: &OracleArgs) -> anyhow::Result<i32> {
    let spec = args.instance.spec(args.instance.seed)?;
    print_config(&json!({ "instance": spec }));
    let p = build_problem(&spec)?;
    let res = exact_oracle(&p)?;
    println!("optimum {:.17e} pivots {}", res.optimum, res.pivots);
    if let Some(path) = &args.out {
        let plan_path = plan_path_for(path);
        emit_plan(&res.plan, &plan_path)?;
        let record = json!({
            "optimum": res.optimum,
            "pivots": res.pivots,
            "basis": res.basis,
            "plan_file": plan_path.file_name().map(|s| s.to_string_lossy().into_owned()),
        });
        fs::write(path, serde_json::to_string_pretty(&record)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_audit(args: &AuditArgs) -> anyhow::Result<i32> {
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad size `{s}`")))
        .collect::<anyhow::Result<_>>()?;
    let entropy_weight = args
        .entropy_weight
        .unwrap_or_else(|| Preset::from(args.preset).entropy_weight());
    print_config(&json!({
        "sizes": sizes,
        "kappa": args.kappa,
        "entropy_weight": entropy_weight,
        "samples": args.samples,
        "seed": args.seed,
    }));
    for n in sizes {
        let rep = run_audit(&AuditConfig {
            n,
            kappa: args.kappa,
            entropy_weight,
            samples: args.samples,
            seed: args.seed,
        })?;
        println!(
            "n = {n}: min area residual {:.6e}, min quadratic form {:.6e}",
            rep.min_area_residual, rep.min_quadratic_form
        );
    }
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Audit(a) => cmd_audit(a),
    }
}

/// Runs `otdx` with `args` and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}

/// Path of the plan CSV written next to a solution JSON.
pub fn plan_file_for(json: &Path) -> PathBuf {
    plan_path_for(json)
}

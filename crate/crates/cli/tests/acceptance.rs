//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the test log.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ot_dualex::io::{gen_random_instance, GrayImage, InstanceRng};
use ot_dualex::prox::alternation;
use ot_dualex::regularizer::prox_objective;
use ot_dualex::{
    exact_oracle, round_to_feasible, run_audit, sinkhorn, solve, theta_bound, AuditConfig,
    DualState, ExtragradientRun, Problem, RegularizerConfig, SinkhornConfig, SolverConfig,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn otdx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otdx"))
}

fn run_otdx(args: &[&str]) -> Result<(i32, String), String> {
    let out = otdx().args(args).output().map_err(|e| format!("spawning otdx: {e}"))?;
    let code = out.status.code().unwrap_or(-1);
    if code != 0 && code != 2 {
        return Err(format!(
            "otdx {args:?} exited {code}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok((code, String::from_utf8_lossy(&out.stdout).into_owned()))
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// 50 random instances, n in 3..=8, ε = 0.05, provable preset via the CLI.
fn oracle_equivalence(dir: &Path) -> Outcome {
    let eps = 0.05;
    let clock = Instant::now();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_gap = 0.0f64;
    for k in 0..50u64 {
        let n = 3 + (k % 6) as usize;
        let seed = 1000 + k;
        let out = dir.join(format!("c1_{k}.json"));
        let (code, _) = run_otdx(&[
            "solve", "--n", &n.to_string(), "--seed", &seed.to_string(), "--epsilon", "0.05",
            "--solver", "dualex", "--preset", "provable", "--no-timing", "--out",
            out.to_str().unwrap(),
        ])?;
        let sol = read_json(&out)?;
        let objective = sol["objective"].as_f64().ok_or("missing objective")?;
        let gap = sol["gap"].as_f64().ok_or("missing gap")?;
        let exact = exact_oracle(&gen_random_instance(n, seed).unwrap()).map_err(|e| e.to_string())?;
        worst_excess = worst_excess.max(objective - exact.optimum);
        worst_gap = worst_gap.max(gap);
        if code != 0 || objective > exact.optimum + eps || gap > eps {
            return Err(format!(
                "n {n} seed {seed}: exit {code}, objective {objective} vs optimum {} (+{eps}), gap {gap}",
                exact.optimum
            ));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    check(
        secs < 60.0,
        format!("50 instances, worst excess {worst_excess:.3e}, worst gap {worst_gap:.3e}, {secs:.1} s"),
    )
}

/// 1000 near-feasible matrices with δ log-uniform in [1e-6, 0.5].
fn rounding_guarantee() -> Outcome {
    let mut rng = InstanceRng::new(2);
    let mut worst_marginal = 0.0f64;
    let mut worst_slack = f64::NEG_INFINITY;
    for k in 0..1000 {
        let n = 2 + k % 9;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
        let p = Problem::new(&cost, &rng.dirichlet(n), &rng.dirichlet(n)).unwrap();
        // a feasible start: the rounding of a random matrix
        let q: Vec<f64> = rng.dirichlet(n * n);
        let (feasible, _) = round_to_feasible(&p, &q).map_err(|e| e.to_string())?;
        // δ is linear along the segment from a feasible plan to q
        let noise: Vec<f64> = rng.dirichlet(n * n);
        let delta_noise = {
            let t = feasible.as_slice().iter().zip(&noise).map(|(a, b)| b - a);
            let d: Vec<f64> = t.collect();
            let rows: f64 = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>().abs()).sum();
            let cols: f64 = (0..n).map(|j| (0..n).map(|i| d[i * n + j]).sum::<f64>().abs()).sum();
            rows + cols
        };
        let target = 10f64.powf(-6.0 + (0.5f64.log10() + 6.0) * rng.uniform());
        let t = (target / delta_noise).min(1.0);
        let x: Vec<f64> = feasible
            .as_slice()
            .iter()
            .zip(&noise)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        let mass: f64 = x.iter().sum();
        let x: Vec<f64> = x.iter().map(|v| v / mass).collect();
        let (plan, rep) = round_to_feasible(&p, &x).map_err(|e| e.to_string())?;
        for (a, b) in plan.row_sums().iter().zip(p.r()).chain(plan.col_sums().iter().zip(p.c())) {
            worst_marginal = worst_marginal.max((a - b).abs());
        }
        worst_slack = worst_slack.max(rep.l1_moved - 2.0 * rep.delta_in);
        if worst_marginal > 1e-9 || rep.l1_moved > 2.0 * rep.delta_in + 1e-9 {
            return Err(format!(
                "case {k}: marginal error {worst_marginal:.3e}, moved {} vs 2δ = {}",
                rep.l1_moved,
                2.0 * rep.delta_in
            ));
        }
    }
    Ok(format!(
        "1000 cases, worst marginal error {worst_marginal:.2e}, worst (moved − 2δ) {worst_slack:.2e}"
    ))
}

/// 10⁴ triples and 10⁴ form probes at each n in {2, 5, 10}.
fn area_convexity_audit() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [2, 5, 10] {
        let rep = run_audit(&AuditConfig {
            n,
            kappa: 3.0,
            entropy_weight: 10.0,
            samples: 10_000,
            seed: 3,
        })
        .map_err(|e| e.to_string())?;
        ok &= rep.passes(1e-9);
        lines.push(format!(
            "n={n}: area {:.2e}, form {:.2e}",
            rep.min_area_residual, rep.min_quadratic_form
        ));
    }
    check(ok, lines.join("; "))
}

/// Per-alternation error ratio on 100 prox instances, f* from 500 extra
/// alternations.
fn prox_contraction() -> Outcome {
    let eps = 0.1;
    let mut worst = 0.0f64;
    let mut measured = 0usize;
    for k in 0..100u64 {
        let mut rng = InstanceRng::new(400 + k);
        let n = 2 + (k % 7) as usize;
        let p = gen_random_instance(n, 4000 + k).unwrap();
        let reg = RegularizerConfig::for_problem(&p, 10.0).unwrap();
        let theta = theta_bound(p.d_max(), n);
        let (bx, by) = (6.0 * p.d_max() * theta / eps, 16.0 * p.d_max() * theta / eps);
        let mag = 10f64.powf(-6.0 * rng.uniform());
        let sx: Vec<f64> = (0..p.m()).map(|_| bx * mag * (2.0 * rng.uniform() - 1.0)).collect();
        let mut sy: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let l1: f64 = sy.iter().map(|v| v.abs()).sum();
        sy.iter_mut().for_each(|v| *v *= by * mag / l1);
        let s = DualState { sx, sy };

        let steps = 40;
        let mut z = p.center();
        let mut values = vec![prox_objective(&p, &reg, &s, &z).map_err(|e| e.to_string())?];
        for _ in 0..steps + 500 {
            z = alternation(&p, &reg, 1e-30, &s, &z).map_err(|e| e.to_string())?;
            values.push(prox_objective(&p, &reg, &s, &z).map_err(|e| e.to_string())?);
        }
        let f_star = values.iter().copied().fold(f64::INFINITY, f64::min);
        // below this the estimate of f* dominates the measured error
        let floor = 1e-10 * (1.0 + f_star.abs());
        for t in 0..steps {
            let (e0, e1) = (values[t] - f_star, values[t + 1] - f_star);
            if e0 > floor {
                worst = worst.max(e1 / e0);
                measured += 1;
            }
        }
    }
    check(
        worst <= 23.0 / 24.0 + 1e-6 && measured > 0,
        format!("100 instances, {measured} measured steps, worst ratio {worst:.4} (bound {:.4})", 23.0 / 24.0),
    )
}

fn regret_bound() -> Outcome {
    let eps = 0.1;
    let p = gen_random_instance(16, 2024).unwrap();
    let theta = theta_bound(p.d_max(), p.n());
    let mut run = ExtragradientRun::new(&p, &SolverConfig::new(eps)).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for t in [10, 100, 1000] {
        while run.iterations() < t {
            run.step().map_err(|e| e.to_string())?;
        }
        let gap = p.certificate(&run.averaged().unwrap()).map_err(|e| e.to_string())?.gap;
        let bound = 6.0 * theta / t as f64 + eps / 2.0;
        ok &= gap <= bound;
        parts.push(format!("T={t}: {gap:.4} ≤ {bound:.4}"));
    }
    check(ok, parts.join("; "))
}

fn iteration_scaling() -> Outcome {
    let p = gen_random_instance(16, 2024).unwrap();
    let iters = |eps: f64| -> Result<usize, String> {
        let mut cfg = SolverConfig::new(eps);
        cfg.gap_check_every = 1;
        solve(&p, &cfg).map(|s| s.outer_iterations).map_err(|e| e.to_string())
    };
    let (coarse, fine) = (iters(0.2)?, iters(0.1)?);
    let ratio = fine as f64 / coarse as f64;
    check(
        (1.0..=3.0).contains(&ratio),
        format!("ε=0.2: {coarse} iterations, ε=0.1: {fine}, ratio {ratio:.3}"),
    )
}

/// A 28×28 "digit one": a slanted vertical stroke with a soft profile.
fn synthetic_digit(seed: u64) -> GrayImage {
    let mut rng = InstanceRng::new(seed);
    let slant = 0.5 * (rng.uniform() - 0.5);
    let offset = 13.5 + 3.0 * (rng.uniform() - 0.5);
    let width = 1.0 + 0.6 * rng.uniform();
    let (top, bottom) = (3 + (rng.uniform() * 3.0) as usize, 23 + (rng.uniform() * 3.0) as usize);
    let mut pixels = vec![0.0; 28 * 28];
    for i in top..=bottom {
        let centre = offset + slant * (i as f64 - 14.0);
        for j in 0..28 {
            let d = (j as f64 - centre) / width;
            pixels[i * 28 + j] = (255.0 * (-0.5 * d * d).exp()).floor();
        }
    }
    GrayImage {
        width: 28,
        height: 28,
        pixels,
    }
}

fn write_digits(dir: &Path) -> Result<(PathBuf, PathBuf), String> {
    let a = dir.join("one_a.pgm");
    let b = dir.join("one_b.pgm");
    std::fs::write(&a, synthetic_digit(11).to_pgm(255)).map_err(|e| e.to_string())?;
    std::fs::write(&b, synthetic_digit(12).to_pgm(255)).map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn sinkhorn_sanity(dir: &Path) -> Outcome {
    let r = [0.1, 0.2, 0.3, 0.4];
    let c = [0.25, 0.5, 0.125, 0.125];
    let zero = Problem::new(&[0.0; 16], &r, &c).unwrap();
    let out = sinkhorn(&zero, &SinkhornConfig::new(3.0)).map_err(|e| e.to_string())?;
    let dev = out
        .plan
        .as_slice()
        .iter()
        .zip(zero.product_plan().as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if out.iterations != 1 || dev > 1e-15 {
        return Err(format!("C = 0: {} iterations, max deviation from rc^T {dev:.2e}", out.iterations));
    }

    let mut worst = f64::NEG_INFINITY;
    for k in 0..12u64 {
        let n = 2 + (k % 7) as usize;
        let p = gen_random_instance(n, 700 + k).unwrap();
        let exact = exact_oracle(&p).map_err(|e| e.to_string())?;
        let out = sinkhorn(&p, &SinkhornConfig::new(200.0)).map_err(|e| e.to_string())?;
        worst = worst.max(out.objective - exact.optimum);
        if (out.objective - exact.optimum).abs() > 0.05 {
            return Err(format!("n {n}: η=200 objective {} vs optimum {}", out.objective, exact.optimum));
        }
    }

    let (a, b) = write_digits(dir)?;
    let spec = ot_dualex::io::InstanceSpec {
        cost: ot_dualex::io::CostSource::Manhattan { width: 14, height: 14 },
        marginals: ot_dualex::io::MarginalSource::ImagePair { a, b, downsample: true },
        n: None,
        seed: 0,
        noise_floor: 1.0,
    };
    let grid = spec.build().map_err(|e| e.to_string())?;
    let mut iters = Vec::new();
    for cfg in [SinkhornConfig::theory_like(), SinkhornConfig::practical()] {
        let out = sinkhorn(&grid, &cfg).map_err(|e| format!("η = {}: {e}", cfg.eta))?;
        let finite = out.objective.is_finite()
            && out.plan.as_slice().iter().all(|v| v.is_finite())
            && out.trace.rows.iter().all(|r| r.primal.is_finite() && r.dual.is_finite());
        if !finite {
            return Err(format!("η = {}: non-finite output", cfg.eta));
        }
        iters.push(format!("η={}: {} iterations", cfg.eta, out.iterations));
    }
    Ok(format!(
        "C=0 deviation {dev:.1e} after 1 iteration; η=200 worst excess {worst:.2e}; 14x14 {}",
        iters.join(", ")
    ))
}

fn preset_ordering(dir: &Path) -> Outcome {
    let (a, b) = write_digits(dir)?;
    let csv = dir.join("bench_presets.csv");
    let (code, _) = run_otdx(&[
        "bench",
        "--images", a.to_str().unwrap(), b.to_str().unwrap(),
        "--downsample",
        "--cost", "manhattan:14x14",
        "--solvers", "dualex:provable,dualex:optimized",
        "--epsilon", "0.5", "--relative-epsilon",
        "--no-timing",
        "--out", csv.to_str().unwrap(),
    ])?;
    let text = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty bench CSV")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("no {name} column"));
    let (preset_col, mv_col, conv_col) = (col("preset")?, col("matvecs")?, col("converged")?);
    let mut counts = std::collections::HashMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f[conv_col] != "true" {
            return Err(format!("{} preset did not reach the target (exit {code})", f[preset_col]));
        }
        counts.insert(f[preset_col].to_string(), f[mv_col].parse::<u64>().map_err(|e| e.to_string())?);
    }
    let (prov, opt) = (counts.get("provable").copied(), counts.get("optimized").copied());
    match (prov, opt) {
        (Some(prov), Some(opt)) => check(
            opt < prov,
            format!("matvecs to gap 0.5·d_max: optimized {opt}, provable {prov}"),
        ),
        _ => Err("bench CSV lacks a preset row".into()),
    }
}

fn determinism(dir: &Path) -> Outcome {
    let mut checked = 0;
    for solver in ["dualex", "mirrorprox", "sinkhorn"] {
        let mut files = Vec::new();
        for rep in 0..2 {
            let trace = dir.join(format!("det_{solver}_{rep}.csv"));
            let out = dir.join(format!("det_{solver}_{rep}.json"));
            run_otdx(&[
                "solve", "--n", "7", "--seed", "99", "--epsilon", "0.05", "--solver", solver,
                "--no-timing", "--trace", trace.to_str().unwrap(), "--out", out.to_str().unwrap(),
            ])?;
            let plan = ot_dualex::io::plan_path_for(&out);
            let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
            let mut json = read(&out)?;
            // the two runs name different plan files; compare everything else
            let name = plan.file_name().unwrap().to_string_lossy().into_owned();
            json = String::from_utf8_lossy(&json).replace(&name, "PLAN").into_bytes();
            files.push((read(&trace)?, json, read(&plan)?));
        }
        if files[0] != files[1] {
            return Err(format!("{solver}: outputs differ between identical runs"));
        }
        checked += 3;
    }
    Ok(format!("{checked} file pairs byte-identical across repeated runs"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("1 oracle equivalence", Box::new(|| oracle_equivalence(dir))),
        ("2 rounding guarantee", Box::new(rounding_guarantee)),
        ("3 area-convexity audit", Box::new(area_convexity_audit)),
        ("4 prox contraction", Box::new(prox_contraction)),
        ("5 regret bound", Box::new(regret_bound)),
        ("6 iteration scaling", Box::new(iteration_scaling)),
        ("7 sinkhorn sanity", Box::new(|| sinkhorn_sanity(dir))),
        ("8 preset ordering", Box::new(|| preset_ordering(dir))),
        ("9 determinism", Box::new(|| determinism(dir))),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let clock = Instant::now();
        let outcome = f();
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {name}: PASS ({msg}) [{secs:.1} s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL ({msg}) [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Instance construction and file formats.
//!
//! * cost and marginal files: plain CSV of decimals (one matrix row or one
//!   vector entry per line; commas or whitespace separate entries)
//! * images: plain-text grayscale PGM (`P2`)
//! * traces: CSV `iter,matvecs,primal,dual,gap,elapsed_ms`
//! * plans: CSV, `n` rows of `n` decimals with 17 significant digits
//! * solutions: JSON object

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};
use crate::problem::{Problem, TransportPlan};
use crate::solver::ConvergenceTrace;

/// Largest cost matrix (in entries) the builders will allocate.
pub const MAX_COST_ENTRIES: usize = 1 << 27;

pub const TRACE_HEADER: &str = "iter,matvecs,primal,dual,gap,elapsed_ms";

fn grid_points(w: usize, h: usize) -> Result<Vec<(f64, f64)>> {
    if w == 0 || h == 0 {
        return Err(OtError::InvalidConfig(format!("grid dimensions must be positive, got {w}x{h}")));
    }
    let n = w
        .checked_mul(h)
        .filter(|n| n.checked_mul(*n).is_some_and(|m| m <= MAX_COST_ENTRIES))
        .ok_or_else(|| {
            OtError::InvalidConfig(format!(
                "{w}x{h} grid needs more than {MAX_COST_ENTRIES} cost entries"
            ))
        })?;
    Ok((0..n).map(|k| ((k / w) as f64, (k % w) as f64)).collect())
}

/// Manhattan distances between the pixels of an `w × h` grid (row-major
/// pixel order), as a flat `n × n` matrix with `n = w·h`.
pub fn cost_manhattan(w: usize, h: usize) -> Result<Vec<f64>> {
    let pts = grid_points(w, h)?;
    Ok(pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a.0 - b.0).abs() + (a.1 - b.1).abs()))
        .collect())
}

pub fn cost_euclidean(w: usize, h: usize) -> Result<Vec<f64>> {
    let pts = grid_points(w, h)?;
    Ok(pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1)))
        .collect())
}

/// Parses `WxH` (e.g. `14x14`).
pub fn parse_grid(spec: &str) -> Result<(usize, usize)> {
    let (w, h) = spec
        .split_once(['x', 'X'])
        .ok_or_else(|| OtError::Parse(format!("expected WxH, got `{spec}`")))?;
    let w = w.trim().parse().map_err(|_| OtError::Parse(format!("bad width in `{spec}`")))?;
    let h = h.trim().parse().map_err(|_| OtError::Parse(format!("bad height in `{spec}`")))?;
    Ok((w, h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

/// Reads a plain-text `P2` PGM. `#` starts a comment running to end of line.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let text = std::str::from_utf8(bytes).map_err(|_| OtError::Parse("PGM is not ASCII".into()))?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    match tokens.next() {
        Some("P2") => {}
        other => return Err(OtError::Parse(format!("expected P2 magic, got {other:?}"))),
    }
    let mut header = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| OtError::Parse(format!("PGM header missing {what}")))?
            .parse()
            .map_err(|_| OtError::Parse(format!("PGM header has a bad {what}")))
    };
    let width = header("width")?;
    let height = header("height")?;
    let maxval = header("maxval")?;
    if width == 0 || height == 0 || maxval == 0 {
        return Err(OtError::Parse("PGM dimensions and maxval must be positive".into()));
    }
    let pixels = tokens
        .take(width * height)
        .map(|t| {
            t.parse::<u32>()
                .map(f64::from)
                .map_err(|_| OtError::Parse(format!("bad PGM pixel `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if pixels.len() != width * height {
        return Err(OtError::Parse(format!(
            "PGM has {} pixels, header says {}",
            pixels.len(),
            width * height
        )));
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

impl GrayImage {
    /// Keeps every other pixel in each direction.
    pub fn downsample(&self) -> GrayImage {
        let width = self.width.div_ceil(2);
        let height = self.height.div_ceil(2);
        let mut pixels = Vec::with_capacity(width * height);
        for i in (0..self.height).step_by(2) {
            for j in (0..self.width).step_by(2) {
                pixels.push(self.pixels[i * self.width + j]);
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn to_pgm(&self, maxval: u32) -> String {
        let mut out = format!("P2\n{} {}\n{maxval}\n", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{}", v.round() as u32)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDistribution {
    pub width: usize,
    pub height: usize,
    pub mass: Vec<f64>,
}

/// Pixel intensities plus `noise_floor`, optionally downsampled, normalized
/// to a probability vector in row-major pixel order.
pub fn image_to_distribution(
    pgm_bytes: &[u8],
    noise_floor: f64,
    downsample: bool,
) -> Result<ImageDistribution> {
    if !(noise_floor >= 0.0) {
        return Err(OtError::InvalidConfig("noise_floor must be nonnegative".into()));
    }
    let mut img = parse_pgm(pgm_bytes)?;
    if downsample {
        img = img.downsample();
    }
    let mut mass: Vec<f64> = img.pixels.iter().map(|v| v + noise_floor).collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(OtError::InvalidMarginal {
            name: "image",
            reason: "zero total intensity and no noise floor".into(),
        });
    }
    mass.iter_mut().for_each(|v| *v /= total);
    Ok(ImageDistribution {
        width: img.width,
        height: img.height,
        mass,
    })
}

/// Seeded generator for instances: ChaCha8 seeded with `seed_from_u64`,
/// uniforms built from the top 53 bits of each 64-bit draw.
#[derive(Debug, Clone)]
pub struct InstanceRng(ChaCha8Rng);

impl InstanceRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard exponential variate.
    pub fn exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).ln()
    }

    /// Symmetric Dirichlet(1) sample: normalized exponentials.
    pub fn dirichlet(&mut self, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| self.exponential()).collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter_mut().for_each(|x| *x /= total);
        } else {
            v.fill(1.0 / n as f64);
        }
        v
    }
}

/// Costs i.i.d. uniform on `[0, 1)` rescaled so the largest is exactly 1;
/// marginals are Dirichlet(1). Fully determined by `(n, seed)`.
pub fn gen_random_instance(n: usize, seed: u64) -> Result<Problem> {
    if n == 0 {
        return Err(OtError::InvalidConfig("n must be at least 1".into()));
    }
    let mut rng = InstanceRng::new(seed);
    let mut cost: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
    let peak = cost.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        cost.iter_mut().for_each(|v| *v /= peak);
    }
    let r = rng.dirichlet(n);
    let c = rng.dirichlet(n);
    Problem::new(&cost, &r, &c)
}

fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(k, line)| {
            line.split(|ch: char| ch == ',' || ch.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| OtError::Parse(format!("line {}: bad number `{t}`", k + 1)))
                })
                .collect()
        })
        .collect()
}

/// Square matrix from CSV text, flattened row-major; returns `(n, data)`.
pub fn parse_matrix_csv(text: &str) -> Result<(usize, Vec<f64>)> {
    let rows = parse_rows(text)?;
    let n = rows.len();
    if n == 0 {
        return Err(OtError::Parse("empty matrix".into()));
    }
    if let Some(k) = rows.iter().position(|r| r.len() != n) {
        return Err(OtError::Parse(format!(
            "row {} has {} entries; expected a square {n}x{n} matrix",
            k + 1,
            rows[k].len()
        )));
    }
    Ok((n, rows.into_iter().flatten().collect()))
}

/// Vector from CSV text; entries may be spread over lines or one line.
pub fn parse_vector_csv(text: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = parse_rows(text)?.into_iter().flatten().collect();
    if v.is_empty() {
        return Err(OtError::Parse("empty vector".into()));
    }
    Ok(v)
}

pub fn format_matrix_csv(n: usize, data: &[f64]) -> String {
    let mut out = String::with_capacity(data.len() * 24);
    for row in data.chunks(n.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn format_vector_csv(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}\n")).collect()
}

pub fn format_trace_csv(trace: &ConvergenceTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.iter, r.matvecs, r.primal, r.dual, r.gap, r.elapsed_ms
        );
    }
    out
}

pub fn emit_trace(trace: &ConvergenceTrace, path: &Path) -> Result<()> {
    fs::write(path, format_trace_csv(trace))?;
    Ok(())
}

pub fn emit_plan(plan: &TransportPlan, path: &Path) -> Result<()> {
    fs::write(path, format_matrix_csv(plan.n(), plan.as_slice()))?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<TransportPlan> {
    let (n, data) = parse_matrix_csv(&fs::read_to_string(path)?)?;
    TransportPlan::from_flat(n, data)
}

/// JSON summary of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub objective: f64,
    pub gap: f64,
    pub outer_iterations: usize,
    pub matvecs: u64,
    pub solver: String,
    pub config: serde_json::Value,
    pub plan_file: String,
    #[serde(default)]
    pub experimental: bool,
    #[serde(default)]
    pub converged: bool,
}

/// Plan CSV path derived from the JSON path: `out.json` → `out.plan.csv`.
pub fn plan_path_for(json_path: &Path) -> PathBuf {
    json_path.with_extension("plan.csv")
}

/// Writes `record` to `path` and `plan` next to it.
pub fn emit_solution(record: &SolutionRecord, plan: &TransportPlan, path: &Path) -> Result<()> {
    let plan_path = path
        .parent()
        .map(|d| d.join(&record.plan_file))
        .unwrap_or_else(|| PathBuf::from(&record.plan_file));
    emit_plan(plan, &plan_path)?;
    let mut text = serde_json::to_string_pretty(record)
        .map_err(|e| OtError::Parse(format!("serializing solution: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    Manhattan,
    Euclidean,
    File,
    Random,
}

/// Where the cost matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CostSource {
    /// I.i.d. uniform costs scaled to `d_max = 1`.
    Random,
    Manhattan { width: usize, height: usize },
    Euclidean { width: usize, height: usize },
    File { path: PathBuf },
}

impl CostSource {
    /// Parses `manhattan:WxH`, `euclidean:WxH`, `random`, or a file path.
    pub fn parse(arg: &str) -> Result<Self> {
        if let Some(grid) = arg.strip_prefix("manhattan:") {
            let (width, height) = parse_grid(grid)?;
            Ok(CostSource::Manhattan { width, height })
        } else if let Some(grid) = arg.strip_prefix("euclidean:") {
            let (width, height) = parse_grid(grid)?;
            Ok(CostSource::Euclidean { width, height })
        } else if arg == "random" {
            Ok(CostSource::Random)
        } else {
            Ok(CostSource::File { path: arg.into() })
        }
    }

    pub fn kind(&self) -> CostKind {
        match self {
            CostSource::Random => CostKind::Random,
            CostSource::Manhattan { .. } => CostKind::Manhattan,
            CostSource::Euclidean { .. } => CostKind::Euclidean,
            CostSource::File { .. } => CostKind::File,
        }
    }

    fn grid_side(&self) -> Option<usize> {
        match self {
            CostSource::Manhattan { width, height } | CostSource::Euclidean { width, height } => {
                Some(width * height)
            }
            _ => None,
        }
    }
}

/// Where the marginals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MarginalSource {
    /// Seeded Dirichlet(1) draws.
    Random,
    Files { r: PathBuf, c: PathBuf },
    /// Two PGM images; the pair must have the same size.
    ImagePair { a: PathBuf, b: PathBuf, downsample: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub cost: CostSource,
    pub marginals: MarginalSource,
    /// Side length when neither the cost nor the marginals fix it.
    pub n: Option<usize>,
    pub seed: u64,
    pub noise_floor: f64,
}

impl InstanceSpec {
    pub fn random(n: usize, seed: u64) -> Self {
        Self {
            cost: CostSource::Random,
            marginals: MarginalSource::Random,
            n: Some(n),
            seed,
            noise_floor: 0.0,
        }
    }

    pub fn build(&self) -> Result<Problem> {
        if !(self.noise_floor >= 0.0) {
            return Err(OtError::InvalidConfig("noise_floor must be nonnegative".into()));
        }
        if let (CostSource::Random, MarginalSource::Random) = (&self.cost, &self.marginals) {
            let n = self
                .n
                .ok_or_else(|| OtError::InvalidConfig("random instance needs n".into()))?;
            return gen_random_instance(n, self.seed);
        }

        let mut rng = InstanceRng::new(self.seed);
        let mut image_dims = None;
        let marginals = match &self.marginals {
            MarginalSource::Random => None,
            MarginalSource::Files { r, c } => Some((
                parse_vector_csv(&fs::read_to_string(r)?)?,
                parse_vector_csv(&fs::read_to_string(c)?)?,
            )),
            MarginalSource::ImagePair { a, b, downsample } => {
                let da = image_to_distribution(&fs::read(a)?, self.noise_floor, *downsample)?;
                let db = image_to_distribution(&fs::read(b)?, self.noise_floor, *downsample)?;
                if (da.width, da.height) != (db.width, db.height) {
                    return Err(OtError::InvalidConfig(format!(
                        "image sizes differ: {}x{} vs {}x{}",
                        da.width, da.height, db.width, db.height
                    )));
                }
                image_dims = Some((da.width, da.height));
                Some((da.mass, db.mass))
            }
        };

        let cost = match &self.cost {
            CostSource::Manhattan { width, height } => cost_manhattan(*width, *height)?,
            CostSource::Euclidean { width, height } => cost_euclidean(*width, *height)?,
            CostSource::File { path } => parse_matrix_csv(&fs::read_to_string(path)?)?.1,
            CostSource::Random => {
                let n = marginals
                    .as_ref()
                    .map(|(r, _)| r.len())
                    .or(self.n)
                    .ok_or_else(|| OtError::InvalidConfig("random cost needs n".into()))?;
                let mut cost: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
                let peak = cost.iter().copied().fold(0.0, f64::max);
                if peak > 0.0 {
                    cost.iter_mut().for_each(|v| *v /= peak);
                }
                cost
            }
        };
        if let (Some((w, h)), Some(side)) = (image_dims, self.cost.grid_side()) {
            if w * h != side {
                return Err(OtError::InvalidConfig(format!(
                    "images are {w}x{h} but the cost grid has {side} points"
                )));
            }
        }
        let (r, c) = match marginals {
            Some(rc) => rc,
            None => {
                let n = (cost.len() as f64).sqrt().round() as usize;
                (rng.dirichlet(n), rng.dirichlet(n))
            }
        };
        Problem::new(&cost, &r, &c)
    }
}

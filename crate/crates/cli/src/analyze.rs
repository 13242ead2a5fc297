use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use htbandits::harness::fit_scaling_exponent;
use htbandits::harness::io::{self, MANIFEST_FILE};

use crate::usage;

const SWEEP_FILE: &str = "sweep.csv";

/// One `(x, mean regret)` point with where it came from.
struct Point {
    x: f64,
    mean: f64,
    std: f64,
    source: String,
}

fn from_manifest(path: &Path) -> Result<Point> {
    let m = io::read_manifest(path)?;
    Ok(Point {
        x: m.config.horizon as f64,
        mean: m.stats.mean,
        std: m.stats.std,
        source: path.display().to_string(),
    })
}

fn from_sweep(path: &Path) -> Result<Vec<Point>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["axis_value", "mean_regret", "std"] {
        return Err(usage(format!(
            "{}: header is `{}`, expected `axis_value,mean_regret,std`",
            path.display(),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let field = |k: usize, name: &str| -> Result<f64> {
            row.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| usage(format!("{}: line {}: bad {name}", path.display(), i + 2)))
        };
        out.push(Point {
            x: field(0, "axis_value")?,
            mean: field(1, "mean_regret")?,
            std: field(2, "std")?,
            source: format!("{}:{}", path.display(), i + 2),
        });
    }
    Ok(out)
}

fn collect(path: &PathBuf) -> Result<Vec<Point>> {
    if path.is_dir() {
        if path.join(MANIFEST_FILE).is_file() {
            return Ok(vec![from_manifest(&path.join(MANIFEST_FILE))?]);
        }
        if path.join(SWEEP_FILE).is_file() {
            return from_sweep(&path.join(SWEEP_FILE));
        }
        return Ok(Vec::new());
    }
    match path.file_name().and_then(|n| n.to_str()) {
        Some(MANIFEST_FILE) => Ok(vec![from_manifest(path)?]),
        Some(n) if n.ends_with(".csv") => from_sweep(path),
        _ => Ok(Vec::new()),
    }
}

pub fn analyze(pattern: &str, fit: bool) -> Result<()> {
    let paths = glob::glob(pattern).map_err(|e| usage(format!("bad glob `{pattern}`: {e}")))?;
    let mut points = Vec::new();
    for p in paths {
        let p = p?;
        points.extend(collect(&p)?);
    }
    if points.is_empty() {
        return Err(usage(format!("no results match `{pattern}`")));
    }
    points.sort_by(|a, b| a.x.total_cmp(&b.x));
    println!("x,mean_regret,std,source");
    for p in &points {
        println!("{},{},{},{}", p.x, p.mean, p.std, p.source);
    }
    if fit {
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.mean)).collect();
        let f = fit_scaling_exponent(&xy)?;
        println!("slope {}", f.slope);
        println!("intercept {}", f.intercept);
        println!("r_squared {}", f.r_squared);
    }
    Ok(())
}

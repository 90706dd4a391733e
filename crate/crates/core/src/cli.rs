//! Run configuration, CSV output, rate fitting and SVG plots behind the
//! command-line tool.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::adapt::{fit_loglog, run_afem_with, AfemFailure, AfemOptions, AfemRecord, StopCriteria};
use crate::manufactured::preset_with;
use crate::quadrature::MAX_DEGREE;
use crate::weights::check_alpha;
use crate::{Error, Result};

/// Column order of the output CSV.
pub const CSV_HEADER: &str = "iter,ndof,n_elem,ey,ep,eocp,log_factor,err_y,err_p,err_u,err_total,effectivity";

/// A validated run description. Unset options take the defaults of the
/// preset's dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub theta: f64,
    pub max_ndof: Option<usize>,
    pub max_iter: Option<usize>,
    pub quad_degree: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(preset: &str) -> Self {
        Self {
            preset: preset.to_string(),
            lambda: None,
            alpha: None,
            theta: 0.5,
            max_ndof: None,
            max_iter: None,
            quad_degree: None,
            out: None,
        }
    }

    /// `key = value` lines accepted by [`parse_config`].
    pub fn serialize(&self) -> String {
        let mut s = format!("preset = {}\n", self.preset);
        if let Some(v) = self.lambda {
            let _ = writeln!(s, "lambda = {v:?}");
        }
        if let Some(v) = self.alpha {
            let _ = writeln!(s, "alpha = {v:?}");
        }
        let _ = writeln!(s, "theta = {:?}", self.theta);
        if let Some(v) = self.max_ndof {
            let _ = writeln!(s, "max_ndof = {v}");
        }
        if let Some(v) = self.max_iter {
            let _ = writeln!(s, "max_iter = {v}");
        }
        if let Some(v) = self.quad_degree {
            let _ = writeln!(s, "quad_degree = {v}");
        }
        if let Some(v) = &self.out {
            let _ = writeln!(s, "out = {}", v.display());
        }
        s
    }

    pub fn output_path(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", self.preset)))
    }

    pub fn stop(&self, dim: usize) -> StopCriteria {
        let mut stop = StopCriteria::for_dim(dim);
        if let Some(n) = self.max_ndof {
            stop.max_ndof = n;
        }
        if let Some(n) = self.max_iter {
            stop.max_iter = n;
        }
        stop
    }

    pub fn options(&self, dim: usize) -> AfemOptions {
        let mut opts = AfemOptions::for_dim(dim);
        opts.theta = self.theta;
        if let Some(d) = self.quad_degree {
            opts.estimator_degree = d;
            opts.solver.quad_degree = d;
        }
        opts
    }
}

fn config_error(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| config_error(line, format!("malformed value `{value}` for `{key}`")))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::new("");
    let mut seen_preset = None;
    let mut lines = [0usize; 3]; // lambda, alpha, theta
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(a, b)| (a.trim(), b.trim()))
            .ok_or_else(|| config_error(line, format!("expected `key = value`, found `{content}`")))?;
        match key {
            "preset" => {
                cfg.preset = value.to_string();
                seen_preset = Some(line);
            }
            "lambda" => {
                cfg.lambda = Some(parse_value(line, key, value)?);
                lines[0] = line;
            }
            "alpha" => {
                cfg.alpha = Some(parse_value(line, key, value)?);
                lines[1] = line;
            }
            "theta" => {
                cfg.theta = parse_value(line, key, value)?;
                lines[2] = line;
            }
            "max_ndof" => {
                let v: f64 = parse_value(line, key, value)?;
                if !(v >= 1.0 && v.fract() == 0.0 && v < 1e15) {
                    return Err(config_error(line, "max_ndof must be a positive integer"));
                }
                cfg.max_ndof = Some(v as usize);
            }
            "max_iter" => cfg.max_iter = Some(parse_value(line, key, value)?),
            "quad_degree" => {
                let d: usize = parse_value(line, key, value)?;
                if d == 0 || d > MAX_DEGREE {
                    return Err(config_error(line, format!("quad_degree must lie in 1..={MAX_DEGREE}")));
                }
                cfg.quad_degree = Some(d);
            }
            "out" => cfg.out = Some(PathBuf::from(value)),
            _ => return Err(config_error(line, format!("unknown key `{key}`"))),
        }
    }
    let preset_line = seen_preset.ok_or_else(|| config_error(0, "`preset` is required"))?;
    let preset = preset_with(&cfg.preset, None, None).map_err(|e| config_error(preset_line, e.to_string()))?;
    if let Some(l) = cfg.lambda {
        if !(l > 0.0 && l.is_finite()) {
            return Err(config_error(lines[0], "lambda must be positive"));
        }
    }
    if let Some(a) = cfg.alpha {
        check_alpha(a, preset.dim()).map_err(|e| config_error(lines[1], e.to_string()))?;
    }
    if !(cfg.theta > 0.0 && cfg.theta < 1.0) {
        return Err(config_error(lines[2], "theta must lie in (0, 1)"));
    }
    Ok(cfg)
}

/// Formats one CSV row: 17 significant digits, empty absent fields.
pub fn csv_row(r: &AfemRecord) -> String {
    let num = |v: f64| format!("{v:.16e}");
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let e = r.errors.as_ref();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.iter,
        r.ndof,
        r.n_elem,
        num(r.ey),
        num(r.ep),
        num(r.eocp),
        num(r.log_factor),
        opt(e.map(|e| e.err_y)),
        opt(e.map(|e| e.err_p)),
        opt(e.map(|e| e.err_u)),
        opt(e.map(|e| e.err_total)),
        opt(r.effectivity),
    )
}

/// Failure modes of a run, mapped to process exit codes.
#[derive(Debug)]
pub enum RunError {
    Config(Error),
    Io(io::Error),
    Solver(AfemFailure),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Solver(_) => 2,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o: {e}"),
            RunError::Solver(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

/// Runs the configured experiment, streaming rows to the output CSV; rows
/// written before a solver failure stay on disk.
pub fn cmd_run(config: &RunConfig) -> std::result::Result<Vec<AfemRecord>, RunError> {
    let preset = preset_with(&config.preset, config.lambda, config.alpha).map_err(RunError::Config)?;
    let dim = preset.dim();
    check_alpha(preset.problem.alpha, dim).map_err(RunError::Config)?;
    let seed = preset.seed_mesh().map_err(RunError::Config)?;
    let mut out = BufWriter::new(File::create(config.output_path()).map_err(RunError::Io)?);
    writeln!(out, "{CSV_HEADER}").map_err(RunError::Io)?;
    let mut io_error = None;
    let result = run_afem_with(
        &preset.problem,
        &seed,
        &config.stop(dim),
        preset.case.as_ref(),
        &config.options(dim),
        |r| {
            if io_error.is_none() {
                if let Err(e) = writeln!(out, "{}", csv_row(r)).and_then(|_| out.flush()) {
                    io_error = Some(e);
                }
            }
        },
    );
    out.flush().map_err(RunError::Io)?;
    if let Some(e) = io_error {
        return Err(RunError::Io(e));
    }
    result.map_err(RunError::Solver)
}

/// A parsed output CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    /// Row-major cells; `None` for empty cells.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::InsufficientData("empty CSV".into()))??;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns.len() {
                return Err(Error::InsufficientData(format!("row {} has {} cells, expected {}", k + 1, cells.len(), columns.len())));
            }
            let row = cells
                .iter()
                .map(|c| {
                    let c = c.trim();
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some).map_err(|_| Error::InsufficientData(format!("row {}: bad number `{c}`", k + 1)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    /// All values of a column; errors when it is missing or has gaps.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InsufficientData(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| r[k].ok_or_else(|| Error::InsufficientData(format!("column `{name}` has empty cells"))))
            .collect()
    }
}

/// Fitted log-log slope of `field` against `ndof` over the last `window` rows.
pub fn cmd_rates(csv: &Path, field: &str, window: usize) -> Result<f64> {
    let table = CsvTable::read(csv)?;
    fit_loglog(&table.column("ndof")?, &table.column(field)?, window)
}

const PLOT_SERIES: [(&str, &str); 7] = [
    ("eocp", "#1f77b4"),
    ("ey", "#ff7f0e"),
    ("ep", "#2ca02c"),
    ("err_total", "#d62728"),
    ("err_y", "#9467bd"),
    ("err_p", "#8c564b"),
    ("err_u", "#e377c2"),
];

/// Renders the positive estimator and error columns against ndof as a
/// static log-log SVG with `ndof^(-1/2)` and `ndof^(-1)` guides.
pub fn render_svg(table: &CsvTable) -> Result<String> {
    let ndof = table.column("ndof")?;
    if ndof.is_empty() {
        return Err(Error::InsufficientData("no rows to plot".into()));
    }
    let series: Vec<(&str, &str, Vec<f64>)> = PLOT_SERIES
        .iter()
        .filter_map(|&(name, color)| {
            let v = table.column(name).ok()?;
            v.iter().all(|x| *x > 0.0 && x.is_finite()).then_some((name, color, v))
        })
        .collect();
    let (w, h, margin) = (640.0, 480.0, 60.0);
    let lx: Vec<f64> = ndof.iter().map(|v| v.log10()).collect();
    let (mut x0, mut x1) = bounds(lx.iter().copied());
    let (mut y0, mut y1) = bounds(series.iter().flat_map(|s| s.2.iter().map(|v| v.log10())));
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if !(y1 - y0 >= 1e-9) {
        y0 = if y0.is_finite() { y0 - 0.5 } else { -1.0 };
        y1 = if y1.is_finite() { y1 + 0.5 } else { 1.0 };
    }
    let px = |v: f64| margin + (v - x0) / (x1 - x0) * (w - 2.0 * margin);
    let py = |v: f64| h - margin - (v - y0) / (y1 - y0) * (h - 2.0 * margin);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * margin,
        h - 2.0 * margin
    );
    for d in (x0.ceil() as i32)..=(x1.floor() as i32) {
        let x = px(d as f64);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" font-size="12" text-anchor="middle">1e{d}</text>"#, h - margin + 18.0);
    }
    for d in (y0.ceil() as i32)..=(y1.floor() as i32) {
        let y = py(d as f64);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}" font-size="12" text-anchor="end">1e{d}</text>"#, margin - 6.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">Ndof</text>"#, w / 2.0, h - 15.0);

    // slope guides anchored at the first point of the first series
    if let Some((_, _, v)) = series.first() {
        for (slope, label) in [(-0.5, "Ndof^-1/2"), (-1.0, "Ndof^-1")] {
            let ya = v[0].log10();
            let yb = ya + slope * (x1 - x0);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
                px(x0),
                py(ya),
                px(x1),
                py(yb)
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="gray">{label}</text>"#, px(x1) - 70.0, py(yb) - 4.0);
        }
    }
    let _ = writeln!(s, r#"<g>"#);
    for (k, (name, color, v)) in series.iter().enumerate() {
        let pts: Vec<String> = lx.iter().zip(v).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(y.log10()))).collect();
        if pts.len() > 1 {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        for (x, y) in lx.iter().zip(v) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(*x), py(y.log10()));
        }
        let ly = margin + 16.0 * (k as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{color}">{name}</text>"#, w - margin - 70.0);
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn cmd_plot(csv: &Path, out_svg: &Path) -> Result<()> {
    let svg = render_svg(&CsvTable::read(csv)?)?;
    std::fs::write(out_svg, svg)?;
    Ok(())
}

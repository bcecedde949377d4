//! Scenario configuration files (TOML).
//!
//! ```toml
//! [domain]
//! dimension = 1
//! extents = [1.0]
//! cells = [256]
//!
//! [kernel]
//! family = "homogeneous"      # or "modulated" with `modulation = "1 + 0.5*x"`, `c0`, `C0`
//! alpha = 1.5
//! amplitude = 1e-3
//!
//! [potential]
//! family = "logarithmic"      # or "polynomial" with `coeffs` and `interval`
//! T_abs = 1.0
//! T_crit = 2.0
//!
//! [scheme]
//! dt = 1e-4
//! t_final = 0.2
//!
//! [initial]
//! family = "noise"            # or "expression" / "snapshot"
//! mean = 0.0
//! amplitude = 0.01
//! seed = 1
//!
//! [output]
//! directory = "out"
//! ```
//!
//! Validation collects every violation, each tagged with its line.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use toml::de::{DeTable, DeValue};
use toml::{Table, Value};

use crate::expr::Expr;
use crate::kernel::Kernel;
use crate::operator::{Grid, DEFAULT_REFINEMENT, MAX_DENSE};
use crate::potential::Potential;
use crate::timestepper::{NewtonConfig, RunConfig, SchemeConfig, Splitting};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// 1-based line of the offending key (or of its section when the key is missing).
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} invalid setting(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> Vec<Violation> {
        match self {
            Self::Invalid(v) => v.clone(),
            Self::Parse { line, message, .. } => vec![Violation { line: Some(*line), key: String::new(), message: message.clone() }],
            Self::Io { path, source } => vec![Violation { line: None, key: path.display().to_string(), message: source.to_string() }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitialData {
    /// `mean + amplitude·U(-1, 1)` per cell, projected back to `mean`.
    Noise { amplitude: f64, seed: u64 },
    /// Expression in the cell-centre coordinates, shifted to `mean`.
    Expression { source: String },
    Snapshot { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialConfig {
    pub data: InitialData,
    pub mean: f64,
    /// Apply the heat-kernel mollifier tied to `theta_reg`.
    pub mollify: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Snapshot every this many nominal steps; 0 keeps only the first and last.
    pub snapshot_every: usize,
    pub diagnostics_every: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub grid: Grid,
    pub kernel: Kernel,
    pub refinement: usize,
    pub potential: Potential,
    pub scheme: SchemeConfig,
    pub run: RunConfig,
    pub initial: InitialConfig,
    pub output: OutputConfig,
    /// The effective document after command-line overrides.
    pub document: Table,
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    load_config_with(path, &[])
}

/// As [`load_config`], with `section.key` overrides applied before validation.
pub fn load_config_with(path: &Path, overrides: &[(&str, Value)]) -> Result<ScenarioConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&src, overrides)?;
    // snapshot paths are relative to the config file
    if let InitialData::Snapshot { path: p } = &mut cfg.initial.data {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(cfg)
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, column)
}

struct Locator<'a> {
    src: &'a str,
    doc: Option<DeTable<'a>>,
}

impl Locator<'_> {
    fn span(&self, section: &str, key: Option<&str>) -> Option<Range<usize>> {
        let doc = self.doc.as_ref()?;
        let (skey, sval) = doc.iter().find(|(k, _)| k.get_ref().as_ref() == section)?;
        let Some(key) = key else {
            return Some(skey.span());
        };
        let mut table = match sval.get_ref() {
            DeValue::Table(t) => t,
            _ => return None,
        };
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            let (k, v) = table.iter().find(|(k, _)| k.get_ref().as_ref() == part)?;
            if parts.peek().is_none() {
                return Some(k.span());
            }
            table = match v.get_ref() {
                DeValue::Table(t) => t,
                _ => return None,
            };
        }
        None
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.span(section, Some(key))
            .or_else(|| {
                let parent = key.rsplit_once('.').map(|(p, _)| p);
                parent.and_then(|p| self.span(section, Some(p)))
            })
            .or_else(|| self.span(section, None))
            .map(|r| line_col(self.src, r.start).0)
    }
}

struct Checker<'a> {
    loc: Locator<'a>,
    violations: Vec<Violation>,
}

impl Checker<'_> {
    fn fail(&mut self, section: &str, key: &str, message: impl Into<String>) {
        let line = self.loc.line(section, key);
        let key = if key.is_empty() { section.to_string() } else { format!("{section}.{key}") };
        self.violations.push(Violation { line, key, message: message.into() });
    }
}

/// Typed access to one section.
struct Section<'t> {
    name: &'static str,
    table: Option<&'t Table>,
}

impl<'t> Section<'t> {
    fn get(&self, key: &str) -> Option<&'t Value> {
        let mut t = self.table?;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            let v = t.get(part)?;
            if parts.peek().is_none() {
                return Some(v);
            }
            t = v.as_table()?;
        }
        None
    }

    fn float(&self, c: &mut Checker, key: &str) -> Option<f64> {
        match self.get(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                c.fail(self.name, key, format!("expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn required_float(&self, c: &mut Checker, key: &str) -> Option<f64> {
        if self.get(key).is_none() {
            c.fail(self.name, key, "missing required number");
            return None;
        }
        self.float(c, key)
    }

    fn uint(&self, c: &mut Checker, key: &str) -> Option<u64> {
        match self.get(key)? {
            Value::Integer(v) if *v >= 0 => Some(*v as u64),
            other => {
                c.fail(self.name, key, format!("expected a nonnegative integer, got {other}"));
                None
            }
        }
    }

    fn string(&self, c: &mut Checker, key: &str) -> Option<&'t str> {
        match self.get(key)? {
            Value::String(s) => Some(s.as_str()),
            other => {
                c.fail(self.name, key, format!("expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn boolean(&self, c: &mut Checker, key: &str) -> Option<bool> {
        match self.get(key)? {
            Value::Boolean(b) => Some(*b),
            other => {
                c.fail(self.name, key, format!("expected true or false, got {}", other.type_str()));
                None
            }
        }
    }

    fn floats(&self, c: &mut Checker, key: &str) -> Option<Vec<f64>> {
        let arr = match self.get(key)? {
            Value::Array(a) => a,
            other => {
                c.fail(self.name, key, format!("expected an array of numbers, got {}", other.type_str()));
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for v in arr {
            match v {
                Value::Float(f) => out.push(*f),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    c.fail(self.name, key, format!("expected numbers, found {}", other.type_str()));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn unknown_keys(&self, c: &mut Checker, known: &[&str]) {
        let Some(t) = self.table else { return };
        for (k, v) in t {
            if let (Some(sub), true) = (v.as_table(), known.iter().any(|n| n.starts_with(&format!("{k}.")))) {
                for sk in sub.keys() {
                    let full = format!("{k}.{sk}");
                    if !known.contains(&full.as_str()) {
                        c.fail(self.name, &full, "unknown key");
                    }
                }
            } else if !known.contains(&k.as_str()) {
                c.fail(self.name, k, "unknown key");
            }
        }
    }
}

fn set_override(doc: &mut Table, path: &str, value: Value) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().unwrap_or_default();
    let mut t = doc;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        t = entry.as_table_mut().unwrap();
    }
    t.insert(last.to_string(), value);
}

/// Parses and validates configuration text.
pub fn parse_config(src: &str, overrides: &[(&str, Value)]) -> Result<ScenarioConfig, ConfigError> {
    let mut document: Table = toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(src, s.start)).unwrap_or((0, 0));
        ConfigError::Parse { line, column, message: e.message().trim().to_string() }
    })?;
    for (path, value) in overrides {
        set_override(&mut document, path, value.clone());
    }
    let loc = Locator { src, doc: DeTable::parse(src).ok().map(|d| d.into_inner()) };
    let mut c = Checker { loc, violations: Vec::new() };

    for key in document.keys() {
        if !["domain", "kernel", "potential", "scheme", "initial", "output"].contains(&key.as_str()) {
            c.fail(key, "", "unknown section");
        }
    }
    let section = |name: &'static str, c: &mut Checker| {
        let table = match document.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                c.fail(name, "", "must be a table");
                None
            }
            None => None,
        };
        Section { name, table }
    };
    let domain = section("domain", &mut c);
    let kernel = section("kernel", &mut c);
    let potential = section("potential", &mut c);
    let scheme = section("scheme", &mut c);
    let initial = section("initial", &mut c);
    let output = section("output", &mut c);
    for (s, required) in [(&domain, true), (&kernel, true), (&potential, true), (&scheme, true), (&initial, false), (&output, false)] {
        if required && s.table.is_none() {
            c.violations.push(Violation { line: None, key: s.name.into(), message: "missing required section".into() });
        }
    }

    let grid = parse_domain(&domain, &mut c);
    let (kernel_v, refinement) = parse_kernel(&kernel, &mut c, grid.as_ref());
    let potential_v = parse_potential(&potential, &mut c);
    let interval = potential_v.as_ref().map(|p| p.interval());
    let (scheme_v, run_v) = parse_scheme(&scheme, &mut c, interval);
    let initial_v = parse_initial(&initial, &mut c, interval);
    let output_v = parse_output(&output, &mut c);

    if !c.violations.is_empty() {
        return Err(ConfigError::Invalid(c.violations));
    }
    match (grid, kernel_v, potential_v, scheme_v, run_v, initial_v) {
        (Some(grid), Some(kernel), Some(potential), Some(scheme), Some(run), Some(initial)) => {
            Ok(ScenarioConfig { grid, kernel, refinement, potential, scheme, run, initial, output: output_v, document })
        }
        _ => Err(ConfigError::Invalid(vec![Violation { line: None, key: String::new(), message: "incomplete configuration".into() }])),
    }
}

fn parse_domain(s: &Section, c: &mut Checker) -> Option<Grid> {
    s.table?;
    s.unknown_keys(c, &["dimension", "extents", "cells"]);
    let dim = match s.uint(c, "dimension") {
        Some(d @ 1..=2) => d as usize,
        Some(d) => {
            c.fail(s.name, "dimension", format!("must be 1 or 2, got {d}"));
            return None;
        }
        None if s.get("dimension").is_none() => {
            c.fail(s.name, "dimension", "missing required integer");
            return None;
        }
        None => return None,
    };
    let extents = s.floats(c, "extents").unwrap_or_else(|| vec![1.0; dim]);
    let cells: Option<Vec<usize>> = match s.get("cells") {
        Some(Value::Array(a)) => a
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 2 => Some(*i as usize),
                _ => None,
            })
            .collect(),
        Some(_) => None,
        None => {
            c.fail(s.name, "cells", "missing required array of cell counts");
            return None;
        }
    };
    let Some(cells) = cells else {
        c.fail(s.name, "cells", "must be an array of integers >= 2");
        return None;
    };
    let mut ok = true;
    if extents.len() != dim {
        c.fail(s.name, "extents", format!("needs {dim} entries, got {}", extents.len()));
        ok = false;
    } else if extents.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        c.fail(s.name, "extents", "entries must be positive");
        ok = false;
    }
    if cells.len() != dim {
        c.fail(s.name, "cells", format!("needs {dim} entries, got {}", cells.len()));
        ok = false;
    } else if cells.iter().product::<usize>() > MAX_DENSE {
        c.fail(s.name, "cells", format!("at most {MAX_DENSE} cells are supported, got {}", cells.iter().product::<usize>()));
        ok = false;
    }
    if !ok {
        return None;
    }
    match Grid::new(&extents, &cells) {
        Ok(g) => Some(g),
        Err(e) => {
            c.fail(s.name, "cells", e.to_string());
            None
        }
    }
}

fn parse_kernel(s: &Section, c: &mut Checker, grid: Option<&Grid>) -> (Option<Kernel>, usize) {
    let refinement = match s.uint(c, "refinement") {
        Some(m @ 1..=16) => m as usize,
        Some(m) => {
            c.fail(s.name, "refinement", format!("must lie in 1..=16, got {m}"));
            DEFAULT_REFINEMENT
        }
        None => DEFAULT_REFINEMENT,
    };
    if s.table.is_none() {
        return (None, refinement);
    }
    s.unknown_keys(c, &["family", "alpha", "amplitude", "modulation", "c0", "C0", "refinement", "symmetrize"]);
    let alpha = s.required_float(c, "alpha");
    if let Some(a) = alpha {
        if !(a > 1.0 && a < 2.0) {
            c.fail(s.name, "alpha", format!("the order must lie in the open interval (1, 2), got {a}"));
        }
    }
    let amplitude = s.float(c, "amplitude").unwrap_or(1.0);
    if !(amplitude.is_finite() && amplitude > 0.0) {
        c.fail(s.name, "amplitude", format!("must be positive, got {amplitude}"));
    }
    let symmetrize = s.boolean(c, "symmetrize").unwrap_or(false);
    let family = s.string(c, "family").unwrap_or("homogeneous");
    let alpha = match alpha {
        Some(a) if a > 1.0 && a < 2.0 => a,
        _ => return (None, refinement),
    };
    let kernel = match family {
        "homogeneous" => {
            for k in ["modulation", "c0", "C0"] {
                if s.get(k).is_some() {
                    c.fail(s.name, k, "only used by the modulated family");
                }
            }
            Kernel::homogeneous(alpha, amplitude).ok()
        }
        "modulated" => {
            let Some(src) = s.string(c, "modulation") else {
                if s.get("modulation").is_none() {
                    c.fail(s.name, "modulation", "the modulated family needs a modulation expression");
                }
                return (None, refinement);
            };
            let expr = match Expr::parse(src) {
                Ok(e) => e,
                Err(e) => {
                    c.fail(s.name, "modulation", e.to_string());
                    return (None, refinement);
                }
            };
            let (lo, hi) = (s.required_float(c, "c0"), s.required_float(c, "C0"));
            let (Some(lo), Some(hi)) = (lo, hi) else { return (None, refinement) };
            match Kernel::modulated(alpha, amplitude, expr, lo, hi) {
                Ok(k) => Some(k),
                Err(e) => {
                    c.fail(s.name, "C0", e.to_string());
                    None
                }
            }
        }
        "custom" => {
            c.fail(s.name, "family", "custom kernels are only available through the library");
            None
        }
        other => {
            c.fail(s.name, "family", format!("unknown family '{other}' (homogeneous, modulated)"));
            None
        }
    };
    let kernel = kernel.map(|k| if symmetrize { k.symmetrize() } else { k });
    if let (Some(k), Some(g)) = (&kernel, grid) {
        if !matches!(k.family(), crate::kernel::KernelFamily::Homogeneous) {
            let report = k.verify_bounds(g, 256, 0);
            if let Some(v) = report.violations.first() {
                c.fail(
                    s.name,
                    "modulation",
                    format!("{} of 256 samples violate c0 <= k|z|^(n+alpha) <= C0 (e.g. ratio {} at x={:?}, y={:?})", report.violations.len(), v.ratio, v.x, v.y),
                );
            }
        }
    }
    (kernel, refinement)
}

fn parse_potential(s: &Section, c: &mut Checker) -> Option<Potential> {
    s.table?;
    s.unknown_keys(c, &["family", "T_abs", "T_crit", "coeffs", "interval", "d_override"]);
    let family = s.string(c, "family").unwrap_or("logarithmic");
    let d_override = s.float(c, "d_override");
    let p = match family {
        "logarithmic" => {
            let (t, tc) = (s.required_float(c, "T_abs"), s.required_float(c, "T_crit"));
            for (k, v) in [("T_abs", t), ("T_crit", tc)] {
                if let Some(v) = v {
                    if !(v.is_finite() && v > 0.0) {
                        c.fail(s.name, k, format!("must be positive, got {v}"));
                    }
                }
            }
            Potential::logarithmic(t?, tc?).ok()
        }
        "polynomial" => {
            let coeffs = s.floats(c, "coeffs");
            if s.get("coeffs").is_none() {
                c.fail(s.name, "coeffs", "the polynomial family needs coefficients");
            }
            let interval = s.floats(c, "interval");
            let iv = match interval.as_deref() {
                Some([a, b]) if *a < 0.0 && *b > 0.0 => Some((*a, *b)),
                Some(_) => {
                    c.fail(s.name, "interval", "must be [a, b] with a < 0 < b");
                    None
                }
                None => {
                    if s.get("interval").is_none() {
                        c.fail(s.name, "interval", "the polynomial family needs interval = [a, b]");
                    }
                    None
                }
            };
            let (coeffs, (a, b)) = (coeffs?, iv?);
            match Potential::polynomial(coeffs, a, b) {
                Ok(p) => Some(p),
                Err(e) => {
                    c.fail(s.name, "coeffs", e.to_string());
                    None
                }
            }
        }
        other => {
            c.fail(s.name, "family", format!("unknown family '{other}' (logarithmic, polynomial)"));
            None
        }
    }?;
    match d_override {
        Some(d) => match p.with_split_constant(d) {
            Ok(p) => Some(p),
            Err(e) => {
                c.fail(s.name, "d_override", e.to_string());
                None
            }
        },
        None => Some(p),
    }
}

fn parse_scheme(s: &Section, c: &mut Checker, interval: Option<(f64, f64)>) -> (Option<SchemeConfig>, Option<RunConfig>) {
    if s.table.is_none() {
        return (None, None);
    }
    s.unknown_keys(
        c,
        &[
            "dt",
            "theta_reg",
            "splitting",
            "t_final",
            "max_halvings",
            "newton.tol",
            "newton.max_iter",
            "newton.backtrack_factor",
            "newton.feasibility_margin",
        ],
    );
    let dt = s.required_float(c, "dt");
    let t_final = s.required_float(c, "t_final");
    let theta_reg = s.float(c, "theta_reg").unwrap_or(0.0);
    let splitting = match s.string(c, "splitting").unwrap_or("convex_split") {
        "convex_split" => Splitting::ConvexSplit,
        "fully_implicit" => Splitting::FullyImplicit,
        other => {
            c.fail(s.name, "splitting", format!("unknown splitting '{other}' (convex_split, fully_implicit)"));
            Splitting::ConvexSplit
        }
    };
    let defaults = NewtonConfig::default();
    let newton = NewtonConfig {
        tol: s.float(c, "newton.tol").unwrap_or(defaults.tol),
        max_iter: s.uint(c, "newton.max_iter").map(|v| v as usize).unwrap_or(defaults.max_iter),
        backtrack_factor: s.float(c, "newton.backtrack_factor").unwrap_or(defaults.backtrack_factor),
        feasibility_margin: s.float(c, "newton.feasibility_margin"),
    };
    let max_halvings = s.uint(c, "max_halvings").map(|v| v as usize).unwrap_or(20);
    if let Some(t) = t_final {
        if !(t.is_finite() && t > 0.0) {
            c.fail(s.name, "t_final", format!("must be positive, got {t}"));
        }
    }
    let Some(dt) = dt else { return (None, None) };
    let cfg = SchemeConfig { dt, theta_reg, newton, splitting };
    for msg in cfg.validate(interval.unwrap_or((-1.0, 1.0))) {
        let key = msg.split_whitespace().next().unwrap_or("dt").to_string();
        c.fail(s.name, &key, msg);
    }
    (Some(cfg), t_final.map(|t| RunConfig { t_final: t, sample_every: 1, max_halvings }))
}

fn parse_initial(s: &Section, c: &mut Checker, interval: Option<(f64, f64)>) -> Option<InitialConfig> {
    s.unknown_keys(c, &["family", "mean", "amplitude", "seed", "expression", "path", "mollify"]);
    let mean = s.float(c, "mean").unwrap_or(0.0);
    let mollify = s.boolean(c, "mollify").unwrap_or(false);
    if let Some((a, b)) = interval {
        if !(mean > a && mean < b) {
            c.fail(s.name, "mean", format!("the mean must lie strictly inside ({a}, {b}), got {mean}"));
        }
    }
    let data = match s.string(c, "family").unwrap_or("noise") {
        "noise" => {
            let amplitude = s.float(c, "amplitude").unwrap_or(0.01);
            let seed = s.uint(c, "seed").unwrap_or(0);
            if !(amplitude.is_finite() && amplitude >= 0.0) {
                c.fail(s.name, "amplitude", format!("must be nonnegative, got {amplitude}"));
            } else if let Some((a, b)) = interval {
                // projection can shift values by up to one amplitude
                if mean - 2.0 * amplitude <= a || mean + 2.0 * amplitude >= b {
                    c.fail(s.name, "amplitude", format!("mean +- 2*amplitude must stay inside ({a}, {b})"));
                }
            }
            InitialData::Noise { amplitude, seed }
        }
        "expression" => {
            let Some(src) = s.string(c, "expression") else {
                if s.get("expression").is_none() {
                    c.fail(s.name, "expression", "the expression family needs an expression");
                }
                return None;
            };
            if let Err(e) = Expr::parse(src) {
                c.fail(s.name, "expression", e.to_string());
            }
            InitialData::Expression { source: src.to_string() }
        }
        "snapshot" => {
            let Some(p) = s.string(c, "path") else {
                if s.get("path").is_none() {
                    c.fail(s.name, "path", "the snapshot family needs a path");
                }
                return None;
            };
            InitialData::Snapshot { path: PathBuf::from(p) }
        }
        other => {
            c.fail(s.name, "family", format!("unknown family '{other}' (noise, expression, snapshot)"));
            return None;
        }
    };
    Some(InitialConfig { data, mean, mollify })
}

fn parse_output(s: &Section, c: &mut Checker) -> OutputConfig {
    s.unknown_keys(c, &["directory", "snapshot_every", "diagnostics_every"]);
    let directory = PathBuf::from(s.string(c, "directory").unwrap_or("out"));
    let snapshot_every = s.uint(c, "snapshot_every").unwrap_or(0) as usize;
    let diagnostics_every = match s.uint(c, "diagnostics_every") {
        Some(0) => {
            c.fail(s.name, "diagnostics_every", "must be at least 1");
            1
        }
        Some(v) => v as usize,
        None => 1,
    };
    OutputConfig { directory, snapshot_every, diagnostics_every }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[domain]
dimension = 1
cells = [64]

[kernel]
alpha = 1.5

[potential]
family = "logarithmic"
T_abs = 1.0
T_crit = 2.0

[scheme]
dt = 1e-4
t_final = 0.01
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.refinement, 4);
        assert_eq!(cfg.scheme.margin(cfg.potential.interval()), 1e-9 * 2.0);
        assert_eq!(cfg.grid.extents(), &[1.0]);
        assert_eq!(cfg.kernel.amplitude(), 1.0);
        assert_eq!(cfg.initial.mean, 0.0);
        assert_eq!(cfg.output.diagnostics_every, 1);
        assert_eq!(cfg.scheme.splitting, Splitting::ConvexSplit);
    }

    #[test]
    fn alpha_outside_range_is_rejected_with_line() {
        let src = MINIMAL.replace("alpha = 1.5", "alpha = 2.5");
        let err = parse_config(&src, &[]).unwrap_err();
        let v = err.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "kernel.alpha");
        assert_eq!(v[0].line, Some(7));
        assert!(v[0].message.contains("(1, 2)"));
    }

    #[test]
    fn mean_outside_interval_is_rejected() {
        let src = format!("{MINIMAL}\n[initial]\nmean = 1.5\n");
        let v = parse_config(&src, &[]).unwrap_err().violations();
        assert!(v.iter().any(|v| v.key == "initial.mean"));
    }

    #[test]
    fn all_violations_are_reported() {
        let src = MINIMAL.replace("alpha = 1.5", "alpha = 0.5\nbogus = 1").replace("dt = 1e-4", "dt = -1.0");
        let v = parse_config(&src, &[]).unwrap_err().violations();
        let keys: Vec<&str> = v.iter().map(|v| v.key.as_str()).collect();
        assert!(keys.contains(&"kernel.alpha"), "{keys:?}");
        assert!(keys.contains(&"kernel.bogus"), "{keys:?}");
        assert!(keys.contains(&"scheme.dt"), "{keys:?}");
        assert!(v.iter().all(|v| v.line.is_some()));
    }

    #[test]
    fn syntax_errors_carry_a_location() {
        match parse_config("[domain]\ndimension = = 1\n", &[]) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_replace_values() {
        let cfg = parse_config(MINIMAL, &[("initial.seed", Value::Integer(9)), ("scheme.dt", Value::Float(2e-4))]).unwrap();
        assert_eq!(cfg.scheme.dt, 2e-4);
        assert_eq!(cfg.initial.data, InitialData::Noise { amplitude: 0.01, seed: 9 });
    }

    #[test]
    fn modulated_kernel_bounds_are_audited() {
        let src = MINIMAL.replace("alpha = 1.5", "alpha = 1.5\nfamily = \"modulated\"\nmodulation = \"1 + x\"\nc0 = 0.5\nC0 = 1.5");
        let v = parse_config(&src, &[]).unwrap_err().violations();
        assert!(v.iter().any(|v| v.key == "kernel.modulation" && v.message.contains("violate")), "{v:?}");
        let ok = src.replace("C0 = 1.5", "C0 = 3.0");
        assert!(parse_config(&ok, &[]).is_ok());
    }

    #[test]
    fn malformed_input_never_panics() {
        for src in ["", "[domain]", "domain = 3", "[domain]\ncells = \"x\"\ndimension = 5", "[kernel]\nalpha = \"a\"", "[potential]\nfamily = \"polynomial\"\ninterval = [1, 2]"] {
            assert!(parse_config(src, &[]).is_err());
        }
    }
}

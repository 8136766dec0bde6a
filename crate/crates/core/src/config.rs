//! Scenario configuration: `[section]` headers and `key = value` lines,
//! `#` comments. Vectors are comma separated, Strichartz pairs are written
//! `p:q` with `inf` allowed.

use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{ConfigIssue, Error, Result};
use crate::evolution::{AdmissiblePair, Frame};
use crate::field::Grid;
use crate::model::{Nonlinearity, Potential, ScenarioParams, NONLINEARITY_PRESETS, POTENTIAL_PRESETS};

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub potential: Potential,
    pub nonlinearity: Nonlinearity,
}

/// Localized packet `a e^{iθ} e^{ik·x} exp(-|x - c|²/(2s²))` added to the
/// initial data; `θ` is drawn from the config seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiationSeed {
    pub amplitude: f64,
    pub width: f64,
    pub center: Vec<f64>,
    pub momentum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBlock {
    pub soliton: bool,
    pub omega1: f64,
    pub soliton_center: Vec<f64>,
    pub soliton_velocity: Vec<f64>,
    pub velocity: Vec<f64>,
    pub y0: Vec<f64>,
    pub eps1: f64,
    pub w0: [f64; 2],
    pub radiation: RadiationSeed,
    pub t_final: f64,
    pub dt: f64,
    pub cadence: f64,
    pub checkpoint_every: f64,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub decompose: bool,
    pub sigma: f64,
    pub pairs: Vec<AdmissiblePair>,
    pub internal_modes: usize,
    pub overlap_threshold: f64,
    /// Steps between momentum-flux samples.
    pub flux_stride: usize,
    pub max_gate_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub scenario: ScenarioBlock,
    pub diagnostics: DiagnosticsConfig,
}

impl ScenarioConfig {
    pub fn params(&self) -> Result<ScenarioParams> {
        ScenarioParams::new(self.scenario.velocity.clone(), self.scenario.y0.clone(), self.scenario.eps1, self.scenario.omega1)
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dim, self.grid.n, self.grid.l)
    }

    pub fn steps_per_sample(&self) -> usize {
        (self.scenario.cadence / self.scenario.dt).round() as usize
    }

    pub fn sample_count(&self) -> usize {
        (self.scenario.t_final / self.scenario.cadence).round() as usize
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serialize_config(self).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

const SECTIONS: &[&str] = &["grid", "model", "scenario", "diagnostics"];
const REQUIRED: &[&str] = &["grid", "model", "scenario"];

fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "" => &["seed"],
        "grid" => &["dim", "n", "l"],
        "model" => &["potential", "depth", "width", "radii", "values", "nonlinearity", "g"],
        "scenario" => &[
            "soliton",
            "omega1",
            "soliton_center",
            "soliton_velocity",
            "velocity",
            "y0",
            "eps1",
            "w0",
            "radiation_amplitude",
            "radiation_width",
            "radiation_center",
            "radiation_momentum",
            "t_final",
            "dt",
            "cadence",
            "checkpoint_every",
            "frame",
        ],
        "diagnostics" => &[
            "decompose",
            "sigma",
            "pairs",
            "internal_modes",
            "overlap_threshold",
            "flux_stride",
            "max_gate_failures",
        ],
        _ => &[],
    }
}

struct Entries {
    values: HashMap<(String, String), (usize, String)>,
    issues: Vec<ConfigIssue>,
    end_line: usize,
}

impl Entries {
    fn issue(&mut self, line: usize, message: impl Into<String>) {
        self.issues.push(ConfigIssue { line, message: message.into() });
    }

    fn raw(&self, section: &str, key: &str) -> Option<(usize, String)> {
        self.values.get(&(section.to_string(), key.to_string())).cloned()
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.raw(section, key).map_or(0, |(l, _)| l)
    }

    fn get<T>(&mut self, section: &str, key: &str, default: T, kind: &str, parse: impl Fn(&str) -> Option<T>) -> T {
        match self.raw(section, key) {
            None => default,
            Some((line, text)) => match parse(&text) {
                Some(v) => v,
                None => {
                    self.issue(line, format!("[{section}] {key}: expected {kind}, got '{text}'"));
                    default
                }
            },
        }
    }

    fn f64(&mut self, section: &str, key: &str, default: f64) -> f64 {
        self.get(section, key, default, "a number", parse_f64)
    }

    fn usize(&mut self, section: &str, key: &str, default: usize) -> usize {
        self.get(section, key, default, "a nonnegative integer", |s| s.parse().ok())
    }

    fn bool(&mut self, section: &str, key: &str, default: bool) -> bool {
        self.get(section, key, default, "true or false", |s| s.parse().ok())
    }

    fn vec(&mut self, section: &str, key: &str, default: Vec<f64>) -> Vec<f64> {
        self.get(section, key, default, "a comma-separated list of numbers", parse_vec)
    }

    fn name(&mut self, section: &str, key: &str, default: &str) -> (usize, String) {
        self.raw(section, key).unwrap_or((0, default.to_string()))
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| !v.is_nan())
}

fn parse_vec(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|p| parse_f64(p.trim())).collect()
}

fn parse_pairs(s: &str) -> Option<Vec<(f64, f64)>> {
    if s.trim().is_empty() {
        return Some(vec![]);
    }
    s.split(',')
        .map(|p| {
            let (a, b) = p.trim().split_once(':')?;
            Some((parse_f64(a.trim())?, parse_f64(b.trim())?))
        })
        .collect()
}

fn tokenize(text: &str) -> Entries {
    let mut out = Entries { values: HashMap::new(), issues: vec![], end_line: text.lines().count() };
    let mut section = String::new();
    let mut seen = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                out.issue(line, format!("malformed section header '{body}'"));
                continue;
            };
            let name = name.trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                out.issue(line, format!("unknown section [{name}]; expected one of {}", SECTIONS.join(", ")));
            }
            if seen.contains(&name) {
                out.issue(line, format!("section [{name}] appears twice"));
            }
            seen.push(name.clone());
            section = name;
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            out.issue(line, format!("expected 'key = value', got '{body}'"));
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if !SECTIONS.contains(&section.as_str()) && !section.is_empty() {
            continue;
        }
        if !known_keys(&section).contains(&key.as_str()) {
            let place = if section.is_empty() { "top level".to_string() } else { format!("[{section}]") };
            out.issue(line, format!("unknown key '{key}' in {place}"));
            continue;
        }
        if out.values.insert((section.clone(), key.clone()), (line, value)).is_some() {
            out.issue(line, format!("duplicate key '{key}'"));
        }
    }
    for req in REQUIRED {
        if !seen.iter().any(|s| s == req) {
            let end = out.end_line;
            out.issue(end, format!("missing required section [{req}]"));
        }
    }
    out
}

/// Parses and validates a scenario config, reporting every problem found.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut e = tokenize(text);

    let seed = e.get("", "seed", 0u64, "a nonnegative integer", |s| s.parse().ok());
    let dim = e.usize("grid", "dim", 1);
    let n = e.usize("grid", "n", 1024);
    let l = e.f64("grid", "l", 40.0);
    if !(1..=3).contains(&dim) {
        let line = e.line_of("grid", "dim");
        e.issue(line, "[grid] dim must be 1, 2 or 3");
    } else if let Err(err) = Grid::new(dim, n, l) {
        let line = e.line_of("grid", "n").max(e.line_of("grid", "l"));
        e.issue(line, format!("[grid] {err}"));
    }
    let d = dim.clamp(1, 3);

    let potential = parse_potential(&mut e);
    let nonlinearity = parse_nonlinearity(&mut e);

    let zeros = vec![0.0; d];
    let soliton = e.bool("scenario", "soliton", true);
    let omega1 = e.f64("scenario", "omega1", 1.0);
    let soliton_center = e.vec("scenario", "soliton_center", zeros.clone());
    let soliton_velocity = e.vec("scenario", "soliton_velocity", zeros.clone());
    let mut v_default = zeros.clone();
    v_default[0] = 10.0;
    let velocity = e.vec("scenario", "velocity", v_default);
    let mut y_default = zeros.clone();
    y_default[0] = -20.0;
    let y0 = e.vec("scenario", "y0", y_default);
    let eps1 = e.f64("scenario", "eps1", 0.5);
    let w0v = e.vec("scenario", "w0", vec![0.0, 0.0]);
    let radiation = RadiationSeed {
        amplitude: e.f64("scenario", "radiation_amplitude", 0.0),
        width: e.f64("scenario", "radiation_width", 1.0),
        center: e.vec("scenario", "radiation_center", zeros.clone()),
        momentum: e.vec("scenario", "radiation_momentum", zeros.clone()),
    };
    let t_final = e.f64("scenario", "t_final", 10.0);
    let dt = e.f64("scenario", "dt", 1e-3);
    let cadence = e.f64("scenario", "cadence", 0.1);
    let checkpoint_every = e.f64("scenario", "checkpoint_every", 5.0);
    let (frame_line, frame_name) = e.name("scenario", "frame", "lab");
    let frame = match frame_name.as_str() {
        "lab" => Frame::Lab,
        "boosted" => Frame::Boosted,
        other => {
            e.issue(frame_line, format!("[scenario] frame: unknown frame '{other}'; available: lab, boosted"));
            Frame::Lab
        }
    };

    for (key, v) in [
        ("soliton_center", &soliton_center),
        ("soliton_velocity", &soliton_velocity),
        ("velocity", &velocity),
        ("y0", &y0),
        ("radiation_center", &radiation.center),
        ("radiation_momentum", &radiation.momentum),
    ] {
        if v.len() != d {
            let line = e.line_of("scenario", key);
            e.issue(line, format!("[scenario] {key} must have {d} components"));
        }
    }
    if w0v.len() != 2 {
        let line = e.line_of("scenario", "w0");
        e.issue(line, "[scenario] w0 must be 're, im'");
    }
    let positive = [("t_final", t_final), ("dt", dt), ("cadence", cadence), ("checkpoint_every", checkpoint_every)];
    for (key, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            let line = e.line_of("scenario", key);
            e.issue(line, format!("[scenario] {key} = {v} violates {key} > 0"));
        }
    }
    if dt > 0.0 && cadence > 0.0 && !is_multiple(cadence, dt) {
        let line = e.line_of("scenario", "cadence");
        e.issue(line, "[scenario] cadence must be a positive multiple of dt");
    }
    if cadence > 0.0 && checkpoint_every > 0.0 && !is_multiple(checkpoint_every, cadence) {
        let line = e.line_of("scenario", "checkpoint_every");
        e.issue(line, "[scenario] checkpoint_every must be a multiple of cadence");
    }
    if cadence > 0.0 && t_final > 0.0 && !is_multiple(t_final, cadence) {
        let line = e.line_of("scenario", "t_final");
        e.issue(line, "[scenario] t_final must be a multiple of cadence");
    }
    if velocity.len() == d && velocity.iter().all(|c| *c == 0.0) {
        let line = e.line_of("scenario", "velocity");
        e.issue(line, "[scenario] velocity must be nonzero");
    }
    if !(eps1 > 0.0 && eps1 < 1.0) {
        let line = e.line_of("scenario", "eps1");
        e.issue(line, "[scenario] eps1 must lie in (0, 1)");
    }
    if soliton {
        if let Err(err) = nonlinearity.check_omega(omega1) {
            let line = e.line_of("scenario", "omega1");
            e.issue(line, format!("[scenario] {err}"));
        }
    }
    if !(radiation.amplitude >= 0.0 && radiation.width > 0.0) {
        let line = e.line_of("scenario", "radiation_amplitude").max(e.line_of("scenario", "radiation_width"));
        e.issue(line, "[scenario] radiation needs amplitude >= 0 and width > 0");
    }

    let decompose = e.bool("diagnostics", "decompose", true);
    let sigma = e.f64("diagnostics", "sigma", 1.0);
    let raw_pairs = e.get("diagnostics", "pairs", vec![(f64::INFINITY, 2.0)], "a list of p:q pairs", parse_pairs);
    let mut pairs = Vec::new();
    for (p, q) in raw_pairs {
        match AdmissiblePair::new(p, q, d) {
            Ok(pair) => pairs.push(pair),
            Err(err) => {
                let line = e.line_of("diagnostics", "pairs");
                e.issue(line, format!("[diagnostics] pairs: {err}"));
            }
        }
    }
    let internal_modes = e.usize("diagnostics", "internal_modes", 0);
    let overlap_threshold = e.f64("diagnostics", "overlap_threshold", 1e-3);
    let flux_stride = e.usize("diagnostics", "flux_stride", 10);
    let max_gate_failures = e.usize("diagnostics", "max_gate_failures", 5);
    if !(sigma > 0.0) {
        let line = e.line_of("diagnostics", "sigma");
        e.issue(line, "[diagnostics] sigma must be > 0");
    }
    if !(overlap_threshold > 0.0) {
        let line = e.line_of("diagnostics", "overlap_threshold");
        e.issue(line, "[diagnostics] overlap_threshold must be > 0");
    }
    if flux_stride == 0 {
        let line = e.line_of("diagnostics", "flux_stride");
        e.issue(line, "[diagnostics] flux_stride must be >= 1");
    }

    if !e.issues.is_empty() {
        e.issues.sort_by_key(|i| i.line);
        return Err(Error::Config(e.issues));
    }
    Ok(ScenarioConfig {
        seed,
        grid: GridConfig { dim, n, l },
        model: ModelConfig { potential, nonlinearity },
        scenario: ScenarioBlock {
            soliton,
            omega1,
            soliton_center,
            soliton_velocity,
            velocity,
            y0,
            eps1,
            w0: [w0v[0], w0v[1]],
            radiation,
            t_final,
            dt,
            cadence,
            checkpoint_every,
            frame,
        },
        diagnostics: DiagnosticsConfig { decompose, sigma, pairs, internal_modes, overlap_threshold, flux_stride, max_gate_failures },
    })
}

fn is_multiple(a: f64, b: f64) -> bool {
    let r = a / b;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() < 1e-6
}

fn parse_potential(e: &mut Entries) -> Potential {
    let (line, name) = e.name("model", "potential", "gaussian_well");
    let p = match name.as_str() {
        "none" => Potential::None,
        "gaussian_well" => Potential::GaussianWell { depth: e.f64("model", "depth", 1.0), width: e.f64("model", "width", 1.0) },
        "poschl_teller" => Potential::PoschlTeller { depth: e.f64("model", "depth", 1.0) },
        "table" => Potential::Table { radii: e.vec("model", "radii", vec![]), values: e.vec("model", "values", vec![]) },
        other => {
            e.issue(line, format!("[model] unknown potential '{other}'; available presets: {}", POTENTIAL_PRESETS.join(", ")));
            Potential::None
        }
    };
    if let Err(err) = p.validate() {
        e.issue(line, format!("[model] {err}"));
    }
    p
}

fn parse_nonlinearity(e: &mut Entries) -> Nonlinearity {
    let (line, name) = e.name("model", "nonlinearity", "cubic");
    match name.as_str() {
        "linear" => Nonlinearity::Linear,
        "cubic" => Nonlinearity::Cubic,
        "cubic_quintic" => Nonlinearity::CubicQuintic { g: e.f64("model", "g", -2.0) },
        other => {
            e.issue(line, format!("[model] unknown nonlinearity '{other}'; available presets: {}", NONLINEARITY_PRESETS.join(", ")));
            Nonlinearity::Cubic
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
}

/// Canonical text form; `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(c: &ScenarioConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed = {}", c.seed);
    let _ = writeln!(s, "\n[grid]\ndim = {}\nn = {}\nl = {}", c.grid.dim, c.grid.n, c.grid.l);
    s.push_str("\n[model]\n");
    match &c.model.potential {
        Potential::None => s.push_str("potential = none\n"),
        Potential::GaussianWell { depth, width } => {
            let _ = writeln!(s, "potential = gaussian_well\ndepth = {depth}\nwidth = {width}");
        }
        Potential::PoschlTeller { depth } => {
            let _ = writeln!(s, "potential = poschl_teller\ndepth = {depth}");
        }
        Potential::Table { radii, values } => {
            let _ = writeln!(s, "potential = table\nradii = {}\nvalues = {}", fmt_vec(radii), fmt_vec(values));
        }
    }
    match c.model.nonlinearity {
        Nonlinearity::Linear => s.push_str("nonlinearity = linear\n"),
        Nonlinearity::Cubic => s.push_str("nonlinearity = cubic\n"),
        Nonlinearity::CubicQuintic { g } => {
            let _ = writeln!(s, "nonlinearity = cubic_quintic\ng = {g}");
        }
    }
    let sc = &c.scenario;
    s.push_str("\n[scenario]\n");
    let _ = writeln!(s, "soliton = {}", sc.soliton);
    let _ = writeln!(s, "omega1 = {}", sc.omega1);
    let _ = writeln!(s, "soliton_center = {}", fmt_vec(&sc.soliton_center));
    let _ = writeln!(s, "soliton_velocity = {}", fmt_vec(&sc.soliton_velocity));
    let _ = writeln!(s, "velocity = {}", fmt_vec(&sc.velocity));
    let _ = writeln!(s, "y0 = {}", fmt_vec(&sc.y0));
    let _ = writeln!(s, "eps1 = {}", sc.eps1);
    let _ = writeln!(s, "w0 = {}", fmt_vec(&sc.w0));
    let _ = writeln!(s, "radiation_amplitude = {}", sc.radiation.amplitude);
    let _ = writeln!(s, "radiation_width = {}", sc.radiation.width);
    let _ = writeln!(s, "radiation_center = {}", fmt_vec(&sc.radiation.center));
    let _ = writeln!(s, "radiation_momentum = {}", fmt_vec(&sc.radiation.momentum));
    let _ = writeln!(s, "t_final = {}", sc.t_final);
    let _ = writeln!(s, "dt = {}", sc.dt);
    let _ = writeln!(s, "cadence = {}", sc.cadence);
    let _ = writeln!(s, "checkpoint_every = {}", sc.checkpoint_every);
    let _ = writeln!(s, "frame = {}", if sc.frame == Frame::Lab { "lab" } else { "boosted" });
    let dg = &c.diagnostics;
    s.push_str("\n[diagnostics]\n");
    let _ = writeln!(s, "decompose = {}", dg.decompose);
    let _ = writeln!(s, "sigma = {}", dg.sigma);
    let pairs: Vec<String> = dg.pairs.iter().map(|p| format!("{}:{}", p.p, p.q)).collect();
    let _ = writeln!(s, "pairs = {}", pairs.join(", "));
    let _ = writeln!(s, "internal_modes = {}", dg.internal_modes);
    let _ = writeln!(s, "overlap_threshold = {}", dg.overlap_threshold);
    let _ = writeln!(s, "flux_stride = {}", dg.flux_stride);
    let _ = writeln!(s, "max_gate_failures = {}", dg.max_gate_failures);
    s
}

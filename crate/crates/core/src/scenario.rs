//! Scenario runs: initial data, the stepping loop, decompositions at a fixed
//! cadence, checkpoints and the on-disk run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, serialize_config, ScenarioConfig};
use crate::error::{Error, ErrorClass, Result};
use crate::evolution::{strichartz_accumulator, FlowModel, Frame, Propagator};
use crate::field::{galilean_boost, translate, weighted_l2, ComplexField, Grid};
use crate::groundstates::{solve_linear_eigenpair, SmallBoundBranch, SolitonFamily};
use crate::linops::{assemble_linearization, discrete_spectrum, projections, SpectralFrame};
use crate::model::{charge_momenta, energy_components, ScenarioParams};
use crate::modulation::{decompose, split_r_zf, trapped_pullback, trapped_transport, Decomposition, DecompositionModel};
use crate::snapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: String,
    pub message: String,
}

/// Decomposition columns of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRow {
    pub shift: Vec<f64>,
    pub minus_theta: f64,
    pub omega: f64,
    pub v: Vec<f64>,
    pub w: [f64; 2],
    pub energy_w: f64,
    pub max_residual: f64,
    pub overlap: f64,
    pub jacobian_defect: f64,
    pub contraction_ratio: f64,
    pub rtilde_h1: f64,
    pub f_l2: f64,
    /// Weighted local norm of `R̃` around the well center.
    pub decay_well: f64,
    /// Weighted local norm of `R̃` around the soliton center.
    pub decay_soliton: f64,
    /// Minimum-image distance between well and soliton centers.
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub t: f64,
    /// `Π_1..Π_dim, Π_{dim+1}`.
    pub momenta: Vec<f64>,
    pub e0: f64,
    pub ep: f64,
    pub ev: f64,
    pub dec: Option<DecompositionRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxRow {
    pub t: f64,
    pub momenta: Vec<f64>,
    /// `-½⟨∂_aV(· + 𝐯t + y₀)u, u⟩`.
    pub flux: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub index: usize,
    pub t: f64,
    pub file: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrichartzEntry {
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    pub value: f64,
}

/// Lebesgue exponents as JSON numbers, with `"inf"` for `∞`.
mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*x)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad exponent {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub start_unix: f64,
    pub end_unix: f64,
    pub first_sample: usize,
    pub last_sample: usize,
    pub checkpoints: Vec<CheckpointEntry>,
    pub events: Vec<Event>,
    pub strichartz: Vec<StrichartzEntry>,
    pub completed: bool,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct ScenarioState {
    pub config: ScenarioConfig,
    pub samples: Vec<SampleRow>,
    pub decompositions: Vec<Decomposition>,
    pub flux: Vec<FluxRow>,
    pub events: Vec<Event>,
    pub checkpoints: Vec<CheckpointEntry>,
    pub strichartz: Vec<StrichartzEntry>,
    pub final_t: f64,
    pub final_field: ComplexField,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub verbose: bool,
}

/// Objects shared by the initial-data assembly, the run and the
/// decomposition.
pub struct ScenarioSetup {
    pub grid: Grid,
    pub params: ScenarioParams,
    pub flow: FlowModel,
    pub family: Option<Arc<SolitonFamily>>,
    pub branch: Option<Arc<SmallBoundBranch>>,
    pub frame: Option<SpectralFrame>,
}

impl ScenarioSetup {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let grid = cfg.build_grid()?;
        let params = cfg.params()?;
        let model = &cfg.model;
        let flow = FlowModel::new(model.potential.clone(), model.nonlinearity, params.clone());
        let family = cfg.scenario.soliton.then(|| Arc::new(SolitonFamily::new(model.nonlinearity, &grid)));
        let wants_branch = cfg.scenario.w0 != [0.0, 0.0] || cfg.diagnostics.decompose;
        let branch = if model.potential.is_none() || !wants_branch {
            None
        } else {
            match solve_linear_eigenpair(&model.potential, &grid) {
                Ok(lb) => Some(Arc::new(SmallBoundBranch::new(lb, &model.potential, model.nonlinearity))),
                Err(e) if cfg.scenario.w0 != [0.0, 0.0] => return Err(e),
                Err(_) => None,
            }
        };
        if cfg.scenario.w0 != [0.0, 0.0] && branch.is_none() {
            return Err(Error::invalid("w0 is nonzero but the potential has no bound state"));
        }
        let frame = match (&family, cfg.diagnostics.decompose) {
            (Some(fam), true) if cfg.diagnostics.internal_modes > 0 => {
                let op = assemble_linearization(cfg.scenario.omega1, fam)?;
                Some(discrete_spectrum(&op, Some(cfg.diagnostics.internal_modes))?)
            }
            (Some(_), true) => Some(SpectralFrame::empty(cfg.scenario.omega1)),
            _ => None,
        };
        Ok(ScenarioSetup { grid, params, flow, family, branch, frame })
    }

    pub fn decomposition_model(&self, cfg: &ScenarioConfig) -> Option<DecompositionModel> {
        if !cfg.diagnostics.decompose || (self.family.is_none() && self.branch.is_none()) {
            return None;
        }
        let mut m = DecompositionModel::new(self.family.clone(), self.branch.clone(), self.params.clone()).ok()?;
        m.overlap_threshold = cfg.diagnostics.overlap_threshold;
        Some(m)
    }

    /// Lab-frame initial data: soliton at `ω₁`, `B₀Q_{w₀}` and the
    /// radiation packet.
    pub fn initial_data(&self, cfg: &ScenarioConfig) -> Result<ComplexField> {
        let sc = &cfg.scenario;
        let mut u = ComplexField::zeros(&self.grid);
        if let Some(fam) = &self.family {
            let phi = fam.phi(sc.omega1)?;
            u = u.add(&translate(&galilean_boost(&phi, &sc.soliton_velocity), &sc.soliton_center));
        }
        if let Some(branch) = &self.branch {
            let w = Complex64::new(sc.w0[0], sc.w0[1]);
            if w.norm() > 0.0 {
                let q = branch.solve(w)?;
                u = u.add(&trapped_transport(&q.q_full, 0.0, &self.params));
            }
        }
        let rad = &sc.radiation;
        if rad.amplitude > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            let dim = self.grid.dim();
            let grid = &self.grid;
            let packet = ComplexField::from_fn(grid, |x| {
                let mut r2 = 0.0;
                let mut phase = theta;
                for a in 0..dim {
                    let d = grid.min_image(x[a] - rad.center[a]);
                    r2 += d * d;
                    phase += rad.momentum[a] * d;
                }
                Complex64::from_polar(rad.amplitude * (-r2 / (2.0 * rad.width * rad.width)).exp(), phase)
            });
            u = u.add(&packet);
        }
        Ok(u)
    }

    fn flux_at(&self, u: &ComplexField, t: f64) -> Vec<f64> {
        let grid = u.grid();
        let rho = u.modulus_sq();
        (0..grid.dim())
            .map(|a| {
                let g = self.flow.potential.sample_gradient(grid, &self.params.offset(t), a);
                -0.5 * grid.cell_volume() * rho.iter().zip(&g).map(|(r, g)| r * g).sum::<f64>()
            })
            .collect()
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioState> {
    run_scenario_with(cfg, &RunOptions::default())
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn checkpoint_name(index: usize) -> String {
    format!("checkpoint_{index:06}.bin")
}

/// Sample index encoded in a checkpoint file name.
pub fn checkpoint_index(path: &Path) -> Result<usize> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("checkpoint_"))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::invalid(format!("{} is not a checkpoint file", path.display())))
}

fn extrapolated_guess(history: &[Decomposition], t: f64) -> Option<Decomposition> {
    let last = history.last()?;
    let mut g = last.clone();
    if history.len() >= 2 {
        let prev = &history[history.len() - 2];
        let s = (t - last.t) / (last.t - prev.t);
        let lin = |a: f64, b: f64| b + s * (b - a);
        for (k, d) in g.tau.shift.iter_mut().enumerate() {
            *d = lin(prev.tau.shift[k], last.tau.shift[k]);
        }
        g.tau.minus_theta = lin(prev.tau.minus_theta, last.tau.minus_theta);
        for (k, p) in g.p.iter_mut().enumerate() {
            *p = lin(prev.p[k], last.p[k]);
        }
        g.w = Complex64::new(lin(prev.w.re, last.w.re), lin(prev.w.im, last.w.im));
    }
    Some(g)
}

struct Sampler<'a> {
    cfg: &'a ScenarioConfig,
    setup: &'a ScenarioSetup,
    dmodel: Option<DecompositionModel>,
    history: Vec<Decomposition>,
    failures: usize,
}

impl Sampler<'_> {
    fn sample(&mut self, u: &ComplexField, t: f64, events: &mut Vec<Event>) -> Result<SampleRow> {
        let e = energy_components(u, &self.setup.flow.potential, &self.setup.flow.beta, t, &self.setup.params);
        let mut row = SampleRow { t, momenta: charge_momenta(u), e0: e.e0, ep: e.ep, ev: e.ev, dec: None };
        let Some(dm) = &self.dmodel else {
            return Ok(row);
        };
        let guess = extrapolated_guess(&self.history, t);
        let first = decompose(dm, u, t, guess.as_ref());
        match first.or_else(|e| match guess {
            Some(_) if e.class() != ErrorClass::Config => decompose(dm, u, t, None),
            _ => Err(e),
        }) {
            Ok(mut d) => {
                self.failures = 0;
                row.dec = Some(self.describe(&mut d)?);
                self.history.push(d);
            }
            Err(err) if err.class() == ErrorClass::Config => return Err(err),
            Err(err) => {
                self.failures += 1;
                events.push(Event { t, kind: "decomposition_failed".into(), message: err.to_string() });
                if self.failures > self.cfg.diagnostics.max_gate_failures {
                    events.push(Event { t, kind: "aborted".into(), message: "too many consecutive decomposition failures".into() });
                    return Err(err);
                }
            }
        }
        Ok(row)
    }

    fn describe(&self, d: &mut Decomposition) -> Result<DecompositionRow> {
        let sigma = self.cfg.diagnostics.sigma;
        let dim = self.setup.grid.dim();
        let well = self.setup.params.well_center(d.t);
        let has_soliton = self.setup.family.is_some();
        if let (Some(fam), Some(frame)) = (&self.setup.family, &self.setup.frame) {
            let point = crate::groundstates::manifold_point(fam, d.omega, &d.v)?;
            let proj = projections(fam, &point, &frame.boosted(&d.v))?;
            let (z, f, _) = split_r_zf(d, &proj);
            d.z = z;
            d.f = Some(f);
        }
        let decay_soliton = if has_soliton { weighted_l2(&d.rtilde, sigma, &d.tau.shift)? } else { 0.0 };
        let separation = if has_soliton {
            (0..dim).map(|a| self.setup.grid.min_image(well[a] - d.tau.shift[a]).powi(2)).sum::<f64>().sqrt()
        } else {
            0.0
        };
        let rec = d.record();
        Ok(DecompositionRow {
            shift: rec.shift,
            minus_theta: rec.minus_theta,
            omega: rec.omega,
            v: rec.v,
            w: rec.w,
            energy_w: rec.energy_w,
            max_residual: rec.max_residual,
            overlap: rec.overlap,
            jacobian_defect: rec.jacobian_defect,
            contraction_ratio: rec.contraction_ratio,
            rtilde_h1: rec.rtilde_h1,
            f_l2: rec.f_l2.unwrap_or(d.rtilde.norm_l2()),
            decay_well: weighted_l2(&d.rtilde, sigma, &well)?,
            decay_soliton,
            separation,
        })
    }
}

/// Runs a scenario, writing the run directory when `out_dir` is set and
/// restarting from a checkpoint when `resume` is set.
pub fn run_scenario_with(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioState> {
    let started = Instant::now();
    let start_unix = unix_now();
    let setup = ScenarioSetup::new(cfg)?;
    let prop = Propagator::new(&setup.grid, cfg.scenario.dt, cfg.scenario.frame)?;
    let steps_per_sample = cfg.steps_per_sample();
    let n_samples = cfg.sample_count();
    let checkpoint_stride = ((cfg.scenario.checkpoint_every / cfg.scenario.cadence).round() as usize).max(1);
    let flux_stride = match cfg.diagnostics.flux_stride.min(steps_per_sample).max(1) {
        s if steps_per_sample % s == 0 => s,
        _ => 1,
    };

    let (first, mut u_lab) = match &opts.resume {
        Some(path) => {
            let index = checkpoint_index(path)?;
            let u = snapshot::load(path)?;
            u.check_grid(&ComplexField::zeros(&setup.grid))?;
            if index > n_samples {
                return Err(Error::invalid("checkpoint lies beyond t_final"));
            }
            (index, u)
        }
        None => (0, setup.initial_data(cfg)?),
    };
    let to_internal = |u: &ComplexField, t: f64| match cfg.scenario.frame {
        Frame::Lab => u.clone(),
        Frame::Boosted => trapped_pullback(u, t, &setup.params),
    };
    let to_lab = |u: &ComplexField, t: f64| match cfg.scenario.frame {
        Frame::Lab => u.clone(),
        Frame::Boosted => trapped_transport(u, t, &setup.params),
    };
    let t_of = |k: usize| k as f64 * cfg.scenario.cadence;

    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::write(dir.join("config.cfg"), serialize_config(cfg))?;
    }

    let mut sampler = Sampler { cfg, setup: &setup, dmodel: setup.decomposition_model(cfg), history: vec![], failures: 0 };
    let mut events = Vec::new();
    if opts.resume.is_some() {
        events.push(Event { t: t_of(first), kind: "resumed".into(), message: format!("resumed at sample {first}") });
    }
    let mut samples = Vec::new();
    let mut flux = Vec::new();
    let mut checkpoints = Vec::new();
    let mut u = to_internal(&u_lab, t_of(first));
    let mut abort = None;

    for k in first..=n_samples {
        let t = t_of(k);
        u_lab = to_lab(&u, t);
        match sampler.sample(&u_lab, t, &mut events) {
            Ok(row) => samples.push(row),
            Err(e) => {
                abort = Some(e);
                break;
            }
        }
        if k % checkpoint_stride == 0 {
            if let Some(dir) = &opts.out_dir {
                let file = checkpoint_name(k);
                snapshot::save(&dir.join("checkpoints").join(&file), &u_lab)?;
                checkpoints.push(CheckpointEntry { index: k, t, file, wall_seconds: started.elapsed().as_secs_f64() });
            }
        }
        if opts.verbose {
            eprintln!("t = {t:.4}  Π = {:?}", samples.last().map(|r| &r.momenta));
        }
        if k == n_samples {
            break;
        }
        let mut done = 0;
        while done < steps_per_sample {
            let tt = t + done as f64 * cfg.scenario.dt;
            if done % flux_stride == 0 {
                let lab = to_lab(&u, tt);
                flux.push(FluxRow { t: tt, momenta: charge_momenta(&lab), flux: setup.flux_at(&lab, tt) });
            }
            let n = flux_stride.min(steps_per_sample - done);
            u = match prop.evolve(&u, tt, n, &setup.flow) {
                Ok(next) => next,
                Err(e) => {
                    events.push(Event { t: tt, kind: "non_finite".into(), message: e.to_string() });
                    if let Some(dir) = &opts.out_dir {
                        snapshot::save(&dir.join("checkpoints").join("last_finite.bin"), &to_lab(&u, tt))?;
                    }
                    abort = Some(e);
                    break;
                }
            };
            done += n;
        }
        if abort.is_some() {
            break;
        }
    }
    if abort.is_none() {
        let t = t_of(n_samples);
        let lab = to_lab(&u, t);
        flux.push(FluxRow { t, momenta: charge_momenta(&lab), flux: setup.flux_at(&lab, t) });
    }

    let mut strichartz = Vec::new();
    if !sampler.history.is_empty() {
        let times: Vec<f64> = sampler.history.iter().map(|d| d.t).collect();
        let fields: Vec<&ComplexField> = sampler.history.iter().map(|d| d.f.as_ref().unwrap_or(&d.rtilde)).collect();
        for pair in &cfg.diagnostics.pairs {
            let value = strichartz_accumulator(&times, &fields, *pair)?;
            strichartz.push(StrichartzEntry { p: pair.p, q: pair.q, value });
        }
    }
    let final_t = samples.last().map_or(t_of(first), |r| r.t);
    let state = ScenarioState {
        config: cfg.clone(),
        samples,
        decompositions: sampler.history,
        flux,
        events,
        checkpoints,
        strichartz,
        final_t,
        final_field: u_lab,
    };
    if let Some(dir) = &opts.out_dir {
        write_series(dir, &state)?;
        let manifest = RunManifest {
            config_hash: cfg.hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            start_unix,
            end_unix: unix_now(),
            first_sample: first,
            last_sample: first + state.samples.len().saturating_sub(1),
            checkpoints: state.checkpoints.clone(),
            events: state.events.clone(),
            strichartz: state.strichartz.clone(),
            completed: abort.is_none(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    }
    match abort {
        Some(e) => Err(e),
        None => Ok(state),
    }
}

fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn series_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dim).map(|a| format!("pi_{a}")));
    h.extend(["pi_charge", "e0", "ep", "ev", "decomposed"].map(String::from));
    h.extend((1..=dim).map(|a| format!("shift_{a}")));
    h.extend(["minus_theta", "omega"].map(String::from));
    h.extend((1..=dim).map(|a| format!("v_{a}")));
    h.extend(
        [
            "w_re",
            "w_im",
            "energy_w",
            "max_residual",
            "overlap",
            "jacobian_defect",
            "contraction_ratio",
            "rtilde_h1",
            "f_l2",
            "decay_well",
            "decay_soliton",
            "separation",
        ]
        .map(String::from),
    );
    h
}

fn flux_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dim).map(|a| format!("pi_{a}")));
    h.push("pi_charge".into());
    h.extend((1..=dim).map(|a| format!("flux_{a}")));
    h
}

/// Writes `series.csv` and `flux.csv`.
pub fn write_series(dir: &Path, state: &ScenarioState) -> Result<()> {
    let dim = state.config.grid.dim;
    let mut w = csv::Writer::from_path(dir.join("series.csv"))?;
    w.write_record(series_header(dim))?;
    for r in &state.samples {
        let mut rec: Vec<String> = vec![num(r.t)];
        rec.extend(r.momenta.iter().map(|x| num(*x)));
        rec.extend([num(r.e0), num(r.ep), num(r.ev)]);
        match &r.dec {
            Some(d) => {
                rec.push("1".into());
                rec.extend(d.shift.iter().map(|x| num(*x)));
                rec.extend([num(d.minus_theta), num(d.omega)]);
                rec.extend(d.v.iter().map(|x| num(*x)));
                rec.extend(
                    [
                        d.w[0],
                        d.w[1],
                        d.energy_w,
                        d.max_residual,
                        d.overlap,
                        d.jacobian_defect,
                        d.contraction_ratio,
                        d.rtilde_h1,
                        d.f_l2,
                        d.decay_well,
                        d.decay_soliton,
                        d.separation,
                    ]
                    .map(num),
                );
            }
            None => {
                rec.push("0".into());
                rec.extend(std::iter::repeat_n(String::new(), 2 * dim + 14));
            }
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("flux.csv"))?;
    w.write_record(flux_header(dim))?;
    for r in &state.flux {
        let mut rec = vec![num(r.t)];
        rec.extend(r.momenta.iter().chain(&r.flux).map(|x| num(*x)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Format(format!("not a number: '{s}'")))
}

/// Reads a run directory back: config, sample rows, flux rows and manifest.
pub fn read_run(dir: &Path) -> Result<(ScenarioConfig, Vec<SampleRow>, Vec<FluxRow>, RunManifest)> {
    let cfg_path = dir.join("config.cfg");
    if !cfg_path.is_file() {
        return Err(Error::invalid(format!("{} is not a run directory (no config.cfg)", dir.display())));
    }
    let cfg = parse_config(&fs::read_to_string(cfg_path)?)?;
    let dim = cfg.grid.dim;
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut samples = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("series.csv"))?;
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| parse_num(&rec[i]);
        let fv = |a: usize, n: usize| (a..a + n).map(|i| parse_num(&rec[i])).collect::<Result<Vec<f64>>>();
        let momenta = fv(1, dim + 1)?;
        let base = dim + 2;
        let dec = if &rec[base + 3] == "1" {
            let o = base + 4;
            let shift = fv(o, dim)?;
            let o2 = o + dim;
            let v = fv(o2 + 2, dim)?;
            let o3 = o2 + 2 + dim;
            let x = fv(o3, 12)?;
            Some(DecompositionRow {
                shift,
                minus_theta: f(o2)?,
                omega: f(o2 + 1)?,
                v,
                w: [x[0], x[1]],
                energy_w: x[2],
                max_residual: x[3],
                overlap: x[4],
                jacobian_defect: x[5],
                contraction_ratio: x[6],
                rtilde_h1: x[7],
                f_l2: x[8],
                decay_well: x[9],
                decay_soliton: x[10],
                separation: x[11],
            })
        } else {
            None
        };
        samples.push(SampleRow { t: f(0)?, momenta, e0: f(base)?, ep: f(base + 1)?, ev: f(base + 2)?, dec });
    }
    let mut flux = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("flux.csv"))?;
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec.iter().map(parse_num).collect::<Result<_>>()?;
        flux.push(FluxRow { t: vals[0], momenta: vals[1..dim + 2].to_vec(), flux: vals[dim + 2..].to_vec() });
    }
    Ok((cfg, samples, flux, manifest))
}

//! Run metrics computed from sample and flux series, either in memory or
//! read back from a run directory.

use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::evolution::{fit_decay_exponent, w_drift};
use crate::model::flux_from_momenta;
use crate::scenario::{read_run, FluxRow, SampleRow, ScenarioState, StrichartzEntry};

/// Separation (in length units) after which the bubbles count as apart.
pub const SEPARATION_DISTANCE: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct DriftSummary {
    pub samples: usize,
    pub sup: f64,
    pub integral: f64,
    pub w0_abs: f64,
    /// `integral / |w₀|²`.
    pub constant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecaySummary {
    pub t_separation: f64,
    pub exponent: Option<f64>,
    /// Largest relative rise above the running minimum after separation.
    pub ripple: f64,
    pub first: f64,
    pub last: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub t_final: f64,
    pub samples: usize,
    pub decomposed: usize,
    pub gate_failures: usize,
    /// `max_t |Π₄(t) - Π₄(0)| / (Π₄(0) T)`.
    pub charge_drift_rate: f64,
    pub energy_drift_rate: Option<f64>,
    /// Momentum drift normalized by `max(|Π_a(0)|, Π₄(0))`.
    pub momentum_drift_rate: Option<f64>,
    pub flux_mismatch: Option<f64>,
    pub flux_max: Option<f64>,
    pub w_drift: Option<DriftSummary>,
    pub max_w_ratio: Option<f64>,
    pub omega_final_quarter_variation: Option<f64>,
    pub omega_relative_change: Option<f64>,
    pub decay_soliton: Option<DecaySummary>,
    pub decay_well_exponent: Option<f64>,
    pub max_decomposition_residual: Option<f64>,
    pub max_contraction_ratio: Option<f64>,
    pub max_jacobian_defect: Option<f64>,
    pub max_overlap: Option<f64>,
    pub strichartz: Vec<StrichartzEntry>,
}

fn drift_rate(values: &[f64], scale: f64, span: f64) -> f64 {
    let v0 = values[0];
    let dev = values.iter().fold(0.0_f64, |m, v| m.max((v - v0).abs()));
    if span > 0.0 && scale > 0.0 {
        dev / (scale * span)
    } else {
        0.0
    }
}

fn fold_max(it: impl Iterator<Item = f64>) -> Option<f64> {
    it.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}

/// Longest run of consecutive decomposed samples.
fn longest_decomposed_run(samples: &[SampleRow]) -> &[SampleRow] {
    let (mut best, mut start) = ((0, 0), 0);
    for (i, s) in samples.iter().enumerate() {
        if s.dec.is_none() {
            start = i + 1;
        } else if i + 1 - start > best.1 - best.0 {
            best = (start, i + 1);
        }
    }
    &samples[best.0..best.1]
}

pub fn compute_metrics(
    cfg: &ScenarioConfig,
    samples: &[SampleRow],
    flux: &[FluxRow],
    gate_failures: usize,
    strichartz: Vec<StrichartzEntry>,
) -> Result<RunMetrics> {
    if samples.is_empty() {
        return Err(Error::invalid("run has no samples"));
    }
    let dim = cfg.grid.dim;
    let t0 = samples[0].t;
    let span = samples.last().unwrap().t - t0;
    let charge: Vec<f64> = samples.iter().map(|s| s.momenta[dim]).collect();
    let charge_drift_rate = drift_rate(&charge, charge[0].abs(), span);
    let free = cfg.model.potential.is_none();
    let (energy_drift_rate, momentum_drift_rate) = if free {
        let e: Vec<f64> = samples.iter().map(|s| s.e0).collect();
        let mom = (0..dim)
            .map(|a| {
                let p: Vec<f64> = samples.iter().map(|s| s.momenta[a]).collect();
                drift_rate(&p, p[0].abs().max(charge[0].abs()), span)
            })
            .fold(0.0, f64::max);
        (Some(drift_rate(&e, e[0].abs(), span)), Some(mom))
    } else {
        (None, None)
    };
    let (flux_mismatch, flux_max) = if !free && flux.len() >= 3 {
        let times: Vec<f64> = flux.iter().map(|r| r.t).collect();
        let momenta: Vec<Vec<f64>> = flux.iter().map(|r| r.momenta.clone()).collect();
        let rep = flux_from_momenta(&times, &momenta, |k| flux[k].flux.clone())?;
        (Some(rep.max_mismatch), Some(rep.max_flux))
    } else {
        (None, None)
    };

    let decs: Vec<(f64, &crate::scenario::DecompositionRow)> = samples.iter().filter_map(|s| s.dec.as_ref().map(|d| (s.t, d))).collect();
    let w0 = Complex64::new(cfg.scenario.w0[0], cfg.scenario.w0[1]);
    let has_branch = !free && decs.iter().any(|(_, d)| d.w != [0.0, 0.0]);
    let w_drift_summary = if has_branch && w0.norm() > 0.0 {
        let run = longest_decomposed_run(samples);
        if run.len() >= 5 {
            let times: Vec<f64> = run.iter().map(|s| s.t).collect();
            let w: Vec<Complex64> = run.iter().map(|s| s.dec.as_ref().map(|d| Complex64::new(d.w[0], d.w[1])).unwrap()).collect();
            let e: Vec<f64> = run.iter().map(|s| s.dec.as_ref().unwrap().energy_w).collect();
            let d = w_drift(&times, &w, &e)?;
            Some(DriftSummary { samples: times.len(), sup: d.sup, integral: d.integral, w0_abs: w0.norm(), constant: d.integral / w0.norm_sqr() })
        } else {
            None
        }
    } else {
        None
    };
    let max_w_ratio = (has_branch && w0.norm() > 0.0).then(|| decs.iter().map(|(_, d)| d.w[0].hypot(d.w[1]) / w0.norm()).fold(0.0, f64::max));

    let soliton = cfg.scenario.soliton && !decs.is_empty();
    let (omega_final_quarter_variation, omega_relative_change) = if soliton {
        let t_end = samples.last().unwrap().t;
        let tail: Vec<f64> = decs.iter().filter(|(t, _)| *t >= t0 + 0.75 * (t_end - t0)).map(|(_, d)| d.omega).collect();
        let var = (!tail.is_empty()).then(|| {
            let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
            let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
            (hi - lo) / cfg.scenario.omega1
        });
        let last = decs.last().unwrap().1.omega;
        (var, Some((last - cfg.scenario.omega1).abs() / cfg.scenario.omega1))
    } else {
        (None, None)
    };

    let decay_soliton = if soliton && !free {
        let imin = decs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.separation.total_cmp(&b.1 .1.separation))
            .map(|(i, _)| i)
            .unwrap();
        decs[imin..].iter().position(|(_, d)| d.separation >= SEPARATION_DISTANCE).map(|j| {
            let after = &decs[imin + j..];
            let times: Vec<f64> = after.iter().map(|(t, _)| *t).collect();
            let vals: Vec<f64> = after.iter().map(|(_, d)| d.decay_soliton).collect();
            let mut running = f64::INFINITY;
            let mut ripple: f64 = 0.0;
            for &v in &vals {
                running = running.min(v);
                if running > 0.0 {
                    ripple = ripple.max(v / running - 1.0);
                }
            }
            let ts = times[0];
            let shifted: Vec<f64> = times.iter().map(|t| t - ts + 1.0).collect();
            DecaySummary {
                t_separation: ts,
                exponent: fit_decay_exponent(&shifted, &vals, 1.0, f64::INFINITY),
                ripple,
                first: vals[0],
                last: *vals.last().unwrap(),
            }
        })
    } else {
        None
    };
    let decay_well_exponent = if has_branch {
        let times: Vec<f64> = decs.iter().map(|(t, _)| *t).collect();
        let vals: Vec<f64> = decs.iter().map(|(_, d)| d.decay_well).collect();
        let t_end = times.last().cloned().unwrap_or(0.0);
        fit_decay_exponent(&times, &vals, 0.5 * t_end, t_end)
    } else {
        None
    };

    Ok(RunMetrics {
        config_hash: cfg.hash(),
        t_final: samples.last().unwrap().t,
        samples: samples.len(),
        decomposed: decs.len(),
        gate_failures,
        charge_drift_rate,
        energy_drift_rate,
        momentum_drift_rate,
        flux_mismatch,
        flux_max,
        w_drift: w_drift_summary,
        max_w_ratio,
        omega_final_quarter_variation,
        omega_relative_change,
        decay_soliton,
        decay_well_exponent,
        max_decomposition_residual: fold_max(decs.iter().map(|(_, d)| d.max_residual)),
        max_contraction_ratio: fold_max(decs.iter().map(|(_, d)| d.contraction_ratio)),
        max_jacobian_defect: fold_max(decs.iter().map(|(_, d)| d.jacobian_defect)),
        max_overlap: fold_max(decs.iter().map(|(_, d)| d.overlap)),
        strichartz,
    })
}

impl ScenarioState {
    pub fn metrics(&self) -> Result<RunMetrics> {
        let failures = self.events.iter().filter(|e| e.kind == "decomposition_failed").count();
        compute_metrics(&self.config, &self.samples, &self.flux, failures, self.strichartz.clone())
    }
}

/// Metrics of a run directory written by a `simulate` run.
pub fn summarize_run(dir: &Path) -> Result<RunMetrics> {
    let (cfg, samples, flux, manifest) = read_run(dir)?;
    let failures = manifest.events.iter().filter(|e| e.kind == "decomposition_failed").count();
    compute_metrics(&cfg, &samples, &flux, failures, manifest.strichartz)
}

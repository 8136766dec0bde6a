//! Stand-alone reports: stationary states, the internal-mode spectrum,
//! resonance tables, Fermi-golden-rule ladders and one-off decompositions.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::field::{pairing_unchecked, sigma_norm, ComplexField};
use crate::groundstates::{manifold_point, solve_linear_eigenpair, SmallBoundBranch, SolitonFamily};
use crate::linops::{
    assemble_linearization, continue_frame, discrete_spectrum, fgr_ladder, frame_residuals, projections, random_zeta,
    resonance_scan, same_classification, synthetic_fgr_terms, LinearizedOperator, ResonanceTable, SpectralFrame,
    ETA_LADDER,
};
use crate::model::{charge_momenta, free_energy};
use crate::modulation::{decompose, split_r_zf, DecompositionRecord};
use crate::scenario::ScenarioSetup;

/// Relative `ω` offset at which resonance classes are re-checked.
pub const RESONANCE_STABILITY_SHIFT: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct SolitonSummary {
    pub omega: f64,
    pub charge: f64,
    pub energy: f64,
    /// `‖-Δφ + ωφ + β(φ²)φ‖`.
    pub residual: f64,
    /// `d/dω ½‖φ_ω‖²`.
    pub charge_slope: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub e0: f64,
    pub linear_residual: f64,
    pub w: [f64; 2],
    pub energy: f64,
    pub residual: f64,
    pub q_sigma1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundStateReport {
    pub soliton: Option<SolitonSummary>,
    pub branch: Option<BranchSummary>,
}

/// Fields behind a [`GroundStateReport`].
#[derive(Debug, Clone)]
pub struct GroundStates {
    pub report: GroundStateReport,
    pub phi: Option<ComplexField>,
    pub q: Option<ComplexField>,
}

pub fn ground_states(cfg: &ScenarioConfig) -> Result<GroundStates> {
    let grid = cfg.build_grid()?;
    let beta = cfg.model.nonlinearity;
    let (soliton, phi) = if cfg.scenario.soliton {
        let omega = cfg.scenario.omega1;
        let family = SolitonFamily::new(beta, &grid);
        let phi = family.phi(omega)?;
        let s: Vec<f64> = phi.modulus_sq().iter().map(|&s| omega + beta.beta(s)).collect();
        let residual = phi.laplacian().scaled(-1.0).add(&phi.mul_real(&s)).norm_l2();
        let summary = SolitonSummary {
            omega,
            charge: charge_momenta(&phi)[grid.dim()],
            energy: free_energy(&phi, &beta),
            residual,
            charge_slope: family.charge_slope(omega)?,
            peak: phi.max_abs(),
        };
        (Some(summary), Some((*phi).clone()))
    } else {
        (None, None)
    };
    let (branch, q) = if cfg.model.potential.is_none() {
        (None, None)
    } else {
        let linear = solve_linear_eigenpair(&cfg.model.potential, &grid)?;
        let b = SmallBoundBranch::new(linear, &cfg.model.potential, beta);
        let w = Complex64::new(cfg.scenario.w0[0], cfg.scenario.w0[1]);
        let p = b.solve(w)?;
        let summary = BranchSummary {
            e0: b.linear.e0,
            linear_residual: b.linear.residual,
            w: cfg.scenario.w0,
            energy: p.energy,
            residual: p.residual,
            q_sigma1: sigma_norm(&p.q, 1)?,
        };
        let q = if w.norm() > 0.0 { p.q_full } else { b.phi0().clone() };
        (Some(summary), Some(q))
    };
    Ok(GroundStates { report: GroundStateReport { soliton, branch }, phi, q })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroModeResiduals {
    /// `‖L_ω ∂_{x_a}φ‖` per axis.
    pub translation: Vec<f64>,
    /// `‖L_ω Jφ‖`.
    pub phase: f64,
    /// `‖L_ω ∂_ωφ - cJφ‖` with the best constant `c`.
    pub generalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub omega: f64,
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub n: usize,
    pub eigen_residuals: Vec<f64>,
    /// `[-i⟨J⁻¹ξ_j, ξ̄_k⟩]` as `[re, im]` pairs.
    pub krein_matrix: Vec<Vec<[f64; 2]>>,
    /// `[⟨J⁻¹ξ_j, ξ_k⟩]` as `[re, im]` pairs.
    pub symplectic_matrix: Vec<Vec<[f64; 2]>>,
    pub zero_modes: ZeroModeResiduals,
}

/// Linearization and frame at `ω₁`, kept for follow-up computations.
pub struct Spectrum {
    pub report: SpectrumReport,
    pub family: Arc<SolitonFamily>,
    pub op: LinearizedOperator,
    pub frame: SpectralFrame,
}

fn pairs(m: Vec<Vec<Complex64>>) -> Vec<Vec<[f64; 2]>> {
    m.into_iter().map(|row| row.into_iter().map(|c| [c.re, c.im]).collect()).collect()
}

pub fn spectrum(cfg: &ScenarioConfig) -> Result<Spectrum> {
    if !cfg.scenario.soliton {
        return Err(Error::invalid("the linearized spectrum needs a soliton ([scenario] soliton = true)"));
    }
    let grid = cfg.build_grid()?;
    let omega = cfg.scenario.omega1;
    let family = Arc::new(SolitonFamily::new(cfg.model.nonlinearity, &grid));
    let op = assemble_linearization(omega, &family)?;
    let expected = (cfg.diagnostics.internal_modes > 0).then_some(cfg.diagnostics.internal_modes);
    let frame = discrete_spectrum(&op, expected)?;
    let phi = family.phi(omega)?;
    let translation = (0..grid.dim())
        .map(|a| op.apply_l(&phi.derivative(a)).norm_l2())
        .collect();
    let jphi = phi.apply_j();
    let phase = op.apply_l(&jphi).norm_l2();
    let lw = op.apply_l(&*family.d_omega_phi(omega)?);
    let c = pairing_unchecked(&lw, &jphi) / jphi.norm_sq();
    let generalized = lw.axpy(-c, &jphi).norm_l2();
    let (h, s) = frame.normalization_matrices();
    let report = SpectrumReport {
        omega,
        eigenvalues: frame.eigenvalues.clone(),
        multiplicities: frame.multiplicities.clone(),
        n: frame.n(),
        eigen_residuals: frame_residuals(&op, &frame),
        krein_matrix: pairs(h),
        symplectic_matrix: pairs(s),
        zero_modes: ZeroModeResiduals { translation, phase, generalized },
    };
    Ok(Spectrum { report, family, op, frame })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonanceReport {
    pub table: ResonanceTable,
    /// Eigenvalues at `ω(1 - δ)` and `ω(1 + δ)`.
    pub shifted_eigenvalues: [Vec<f64>; 2],
    /// Classification unchanged at both shifted frequencies.
    pub stable: bool,
}

pub fn resonances(cfg: &ScenarioConfig) -> Result<ResonanceReport> {
    let sp = spectrum(cfg)?;
    let omega = sp.op.omega;
    let n = sp.frame.n();
    let table = resonance_scan(&sp.frame.eigenvalues, omega, n);
    let mut shifted: [Vec<f64>; 2] = [vec![], vec![]];
    let mut stable = true;
    for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
        let om = omega * (1.0 + sign * RESONANCE_STABILITY_SHIFT);
        let op = assemble_linearization(om, &sp.family)?;
        let frame = if sp.frame.is_empty() { SpectralFrame::empty(om) } else { continue_frame(&op, &sp.frame, 16)? };
        stable &= same_classification(&table, &resonance_scan(&frame.eigenvalues, om, n));
        shifted[k] = frame.eigenvalues;
    }
    Ok(ResonanceReport { table, shifted_eigenvalues: shifted, stable })
}

#[derive(Debug, Clone, Serialize)]
pub struct FgrSample {
    pub zeta: Vec<[f64; 2]>,
    pub lambdas: Vec<f64>,
    /// `Σ_α |ζ^α|²`.
    pub weight: f64,
    pub gammas: Vec<f64>,
    pub extrapolated: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FgrReport {
    pub omega: f64,
    pub etas: Vec<f64>,
    pub samples: Vec<FgrSample>,
    /// Smallest `Γ` over all samples and rungs.
    pub min_gamma: f64,
    /// Per sample, `max(0, -Γ)` does not grow as `η` decreases.
    pub negative_part_nonincreasing: bool,
    /// `min Γ(η_min) / Σ|ζ^α|²` over the samples.
    pub gamma_hat: f64,
}

/// Γ ladders for `count` random `(ζ, G)` draws seeded from the config.
pub fn fgr(cfg: &ScenarioConfig, count: usize) -> Result<FgrReport> {
    let sp = spectrum(cfg)?;
    let omega = sp.op.omega;
    let dim = sp.family.grid().dim();
    let point = manifold_point(&sp.family, omega, &vec![0.0; dim])?;
    let proj = projections(&sp.family, &point, &sp.frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let terms = synthetic_fgr_terms(&proj, &mut rng)?;
        let zeta = random_zeta(sp.frame.len(), &mut rng);
        let ladder = fgr_ladder(&sp.op, &terms, &zeta)?;
        let weight = terms
            .iter()
            .map(|t| t.alpha.iter().zip(&zeta).map(|(&k, z)| z.norm().powi(k as i32)).product::<f64>().powi(2))
            .sum();
        samples.push(FgrSample {
            zeta: zeta.iter().map(|z| [z.re, z.im]).collect(),
            lambdas: terms.iter().map(|t| t.lambda).collect(),
            weight,
            gammas: ladder.gammas,
            extrapolated: ladder.extrapolated,
        });
    }
    let min_gamma = samples.iter().flat_map(|s| s.gammas.iter().copied()).fold(f64::INFINITY, f64::min);
    let negative_part_nonincreasing = samples.iter().all(|s| {
        let neg: Vec<f64> = s.gammas.iter().map(|g| (-g).max(0.0)).collect();
        neg.windows(2).all(|w| w[1] <= w[0])
    });
    let gamma_hat = samples
        .iter()
        .filter(|s| s.weight > 0.0)
        .map(|s| s.gammas.last().unwrap() / s.weight)
        .fold(f64::INFINITY, f64::min);
    Ok(FgrReport { omega, etas: ETA_LADDER.to_vec(), samples, min_gamma, negative_part_nonincreasing, gamma_hat })
}

/// Decomposes one field at time `t` with the config's model, splitting the
/// remainder into `(z, f)` when an internal-mode frame is available.
pub fn decompose_field(cfg: &ScenarioConfig, u: &ComplexField, t: f64) -> Result<DecompositionRecord> {
    let setup = ScenarioSetup::new(cfg)?;
    u.check_grid(&ComplexField::zeros(&setup.grid))?;
    let model = setup
        .decomposition_model(cfg)
        .ok_or_else(|| Error::invalid("nothing to decompose: enable [diagnostics] decompose with a soliton or a well"))?;
    let mut d = decompose(&model, u, t, None)?;
    if let (Some(fam), Some(frame)) = (&setup.family, &setup.frame) {
        let point = manifold_point(fam, d.omega, &d.v)?;
        let proj = projections(fam, &point, &frame.boosted(&d.v))?;
        let (z, f, _) = split_r_zf(&d, &proj);
        d.z = z;
        d.f = Some(f);
    }
    Ok(d.record())
}

//! Two-bubble decomposition
//! `u = e^{Jτ·◇}Φ_p + e^{J(½v·x + ¼t|v|²)}Q_w(· + vt + y₀) + R̃`
//! with orthogonality conditions
//! `⟨R̃, e^{Jτ◇}J⁻¹∂_{p_j}Φ_p⟩ = ⟨R̃, e^{Jτ◇}◇_jΦ_p⟩ = ⟨R̃, B_t∂_{w_j}Q_w⟩ = 0`.

use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::Serialize;

use crate::contraction::{certified_solve, CertifiedOptions, ContractionHistory};
use crate::error::{Error, Result};
use crate::field::{apply_diamond, group_action, pairing_unchecked, translate, ComplexField, GroupElement, MultiIndexAxis};
use crate::groundstates::{manifold_point, omega_v_of_p, BranchPoint, SmallBoundBranch, SolitonFamily, SolitonManifoldPoint};
use crate::linops::{dphi_dp, ProjectionSet};
use crate::model::{charge_momenta, ScenarioParams};

fn trapped_phase(grid: &crate::field::Grid, t: f64, params: &ScenarioParams) -> Vec<f64> {
    let dim = grid.dim();
    let xc = params.well_center(t);
    let v = &params.velocity;
    let v2: f64 = v.iter().map(|c| c * c).sum();
    grid.points()
        .map(|x| {
            let s: f64 = (0..dim).map(|a| v[a] * (xc[a] + grid.min_image(x[a] - xc[a]))).sum();
            0.5 * s + 0.25 * t * v2
        })
        .collect()
}

/// `B_t g = e^{-i(½v·x + ¼t|v|²)} g(x + vt + y₀)`, with `x` taken as the
/// minimum image around the well center.
pub fn trapped_transport(g: &ComplexField, t: f64, params: &ScenarioParams) -> ComplexField {
    let shifted = translate(g, &params.well_center(t));
    let phase: Vec<Complex64> = trapped_phase(g.grid(), t, params).iter().map(|&th| Complex64::from_polar(1.0, -th)).collect();
    shifted.mul_pointwise(&phase)
}

/// Inverse of [`trapped_transport`]: the well-frame view of a lab field.
pub fn trapped_pullback(h: &ComplexField, t: f64, params: &ScenarioParams) -> ComplexField {
    let phase: Vec<Complex64> = trapped_phase(h.grid(), t, params).iter().map(|&th| Complex64::from_polar(1.0, th)).collect();
    let xc = params.well_center(t);
    let back: Vec<f64> = xc.iter().map(|c| -c).collect();
    translate(&h.mul_pointwise(&phase), &back)
}

const MAX_RADIUS: f64 = 0.2;

/// Working radius kept inside the charges `Π₄(φ_ω)` reached for `ω` within a
/// factor 4 of `ω₁`, so every probe of the ball maps back to a soliton.
fn charge_radius(family: &SolitonFamily, omega1: f64) -> Result<f64> {
    let (lo, hi) = family.beta.omega_interval();
    family.beta.check_omega(omega1)?;
    let charge = |w: f64| family.phi(w).map(|f| 0.5 * f.norm_sq());
    let up = (4.0 * omega1).min(0.5 * (omega1 + hi));
    let down = (0.25 * omega1).max(0.5 * (omega1 + lo));
    let c1 = charge(omega1)?;
    let gap = (charge(up)? - c1).abs().min((c1 - charge(down)?).abs());
    Ok(MAX_RADIUS.min(0.5 * gap))
}

/// Solver state shared by decompositions of one scenario.
#[derive(Debug, Clone)]
pub struct DecompositionModel {
    pub family: Option<Arc<SolitonFamily>>,
    pub branch: Option<Arc<SmallBoundBranch>>,
    pub params: ScenarioParams,
    /// Working ball `δ₂` of the contraction.
    pub radius: f64,
    /// Overlap gate `δ` on `X(τ, t)`.
    pub overlap_threshold: f64,
}

impl DecompositionModel {
    pub fn new(family: Option<Arc<SolitonFamily>>, branch: Option<Arc<SmallBoundBranch>>, params: ScenarioParams) -> Result<Self> {
        if family.is_none() && branch.is_none() {
            return Err(Error::invalid("decomposition needs a soliton family, a trapped branch or both"));
        }
        let radius = match &family {
            Some(fam) => charge_radius(fam, params.omega1)?,
            None => MAX_RADIUS,
        };
        Ok(DecompositionModel { family, branch, params, radius, overlap_threshold: 1e-3 })
    }

    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn soliton_unknowns(&self) -> usize {
        if self.family.is_some() {
            2 * (self.dim() + 1)
        } else {
            0
        }
    }

    pub fn unknowns(&self) -> usize {
        self.soliton_unknowns() + if self.branch.is_some() { 2 } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub t: f64,
    pub tau: GroupElement,
    pub p: Vec<f64>,
    pub omega: f64,
    /// Soliton velocity.
    pub v: Vec<f64>,
    pub w: Complex64,
    pub energy_w: f64,
    pub rtilde: ComplexField,
    /// `F_1..F_{d+1}, G_1..G_{d+1}, L_1, L_2` as raw pairings.
    pub residuals: Vec<f64>,
    pub overlap: f64,
    /// `max |D_yF - I|` at the base point.
    pub jacobian_defect: f64,
    pub history: ContractionHistory,
    pub branch_point: Option<BranchPoint>,
    pub z: Vec<Complex64>,
    pub f: Option<ComplexField>,
}

impl Decomposition {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn record(&self) -> DecompositionRecord {
        DecompositionRecord {
            t: self.t,
            shift: self.tau.shift.clone(),
            minus_theta: self.tau.minus_theta,
            p: self.p.clone(),
            omega: self.omega,
            v: self.v.clone(),
            w: [self.w.re, self.w.im],
            energy_w: self.energy_w,
            residuals: self.residuals.clone(),
            max_residual: self.max_residual(),
            overlap: self.overlap,
            jacobian_defect: self.jacobian_defect,
            contraction_ratio: self.history.max_ratio(),
            rtilde_h1: self.rtilde.norm_h1(),
            f_l2: self.f.as_ref().map(|f| f.norm_l2()),
            z_abs: self.z.iter().map(|c| c.norm()).collect(),
        }
    }
}

/// Machine-readable summary of a decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionRecord {
    pub t: f64,
    pub shift: Vec<f64>,
    pub minus_theta: f64,
    pub p: Vec<f64>,
    pub omega: f64,
    pub v: Vec<f64>,
    pub w: [f64; 2],
    pub energy_w: f64,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub overlap: f64,
    pub jacobian_defect: f64,
    pub contraction_ratio: f64,
    pub rtilde_h1: f64,
    pub f_l2: Option<f64>,
    pub z_abs: Vec<f64>,
}

/// Parameters of a trial decomposition before the remainder is formed.
struct Trial {
    tau: GroupElement,
    p: Vec<f64>,
    point: Option<SolitonManifoldPoint>,
    bp: Option<BranchPoint>,
    soliton: ComplexField,
    trapped: ComplexField,
    tests: Vec<ComplexField>,
}

struct Evaluator<'a> {
    model: &'a DecompositionModel,
    u: &'a ComplexField,
    t: f64,
    base_tau: GroupElement,
    base_p: Vec<f64>,
    base_w: Complex64,
    omega_hint: Mutex<f64>,
    bp_hint: Mutex<Option<BranchPoint>>,
}

impl Evaluator<'_> {
    fn unpack(&self, y: &[f64]) -> (GroupElement, Vec<f64>, Complex64) {
        let m = self.model.dim() + 1;
        let (mut tau, mut p, mut w) = (self.base_tau.clone(), self.base_p.clone(), self.base_w);
        let mut k = 0;
        if self.model.family.is_some() {
            for a in 0..m - 1 {
                tau.shift[a] += y[a];
            }
            tau.minus_theta += y[m - 1];
            for a in 0..m {
                p[a] += y[m + a];
            }
            k = 2 * m;
        }
        if self.model.branch.is_some() {
            w += Complex64::new(y[k], y[k + 1]);
        }
        (tau, p, w)
    }

    fn trial(&self, y: &[f64]) -> Result<Trial> {
        let (tau, p, w) = self.unpack(y);
        let grid = self.u.grid();
        let dim = self.model.dim();
        let mut tests = Vec::new();
        let (point, soliton) = match &self.model.family {
            Some(fam) => {
                let hint = *self.omega_hint.lock().unwrap();
                let (omega, v) = omega_v_of_p(fam, &p, hint)?;
                *self.omega_hint.lock().unwrap() = omega;
                let point = manifold_point(fam, omega, &v)?;
                let dp = dphi_dp(fam, &point)?;
                for d in &dp {
                    tests.push(group_action(&d.apply_j_inv(), &tau));
                }
                for axis in MultiIndexAxis::all(dim) {
                    tests.push(group_action(&apply_diamond(&point.field, axis), &tau));
                }
                let sol = group_action(&point.field, &tau);
                (Some(point), sol)
            }
            None => (None, ComplexField::zeros(grid)),
        };
        let (bp, trapped) = match &self.model.branch {
            Some(branch) => {
                let hint = self.bp_hint.lock().unwrap().clone();
                let bp = branch.solve_from(w, hint.as_ref())?;
                *self.bp_hint.lock().unwrap() = Some(bp.clone());
                let (d1, d2) = branch.dq_dw(&bp)?;
                tests.push(trapped_transport(&d1, self.t, &self.model.params));
                tests.push(trapped_transport(&d2, self.t, &self.model.params));
                let q = trapped_transport(&bp.q_full, self.t, &self.model.params);
                (Some(bp), q)
            }
            None => (None, ComplexField::zeros(grid)),
        };
        Ok(Trial { tau, p, point, bp, soliton, trapped, tests })
    }

    /// Raw pairings and the sign-normalized system whose Jacobian is near `I`.
    fn residuals(&self, trial: &Trial) -> (ComplexField, Vec<f64>, Vec<f64>) {
        let r = self.u.sub(&trial.soliton).sub(&trial.trapped);
        let raw: Vec<f64> = trial.tests.iter().map(|t| pairing_unchecked(&r, t)).collect();
        let m = self.model.dim() + 1;
        let soliton_rows = self.model.soliton_unknowns();
        let scaled = raw
            .iter()
            .enumerate()
            .map(|(i, &x)| if soliton_rows > 0 && i < m { x } else { -x })
            .collect();
        (r, raw, scaled)
    }
}

/// Soliton center from the peak of `|u|²` refined by a parabola per axis.
fn peak_location(u: &ComplexField) -> Vec<f64> {
    let grid = u.grid();
    let dim = grid.dim();
    let n = grid.points_per_axis();
    let m = u.modulus_sq();
    let (imax, _) = m.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let mi = grid.multi_index(imax);
    let x = grid.point(imax);
    let stride = |a: usize| n.pow((dim - 1 - a) as u32);
    (0..dim)
        .map(|a| {
            let s = stride(a);
            let j = mi[a];
            let idx = |jj: usize| imax - j * s + jj * s;
            let (l, c, r) = (m[idx((j + n - 1) % n)], m[imax], m[idx((j + 1) % n)]);
            let denom = l - 2.0 * c + r;
            let off = if denom < 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            x[a] + off.clamp(-0.5, 0.5) * grid.spacing()
        })
        .collect()
}

/// Trigonometric interpolation of `u` at `x`.
fn value_at(u: &ComplexField, x: &[f64]) -> Complex64 {
    let grid = u.grid();
    let dim = grid.dim();
    let mut c = u.to_complex();
    grid.forward(&mut c);
    let l = grid.half_width();
    let mut s = Complex64::new(0.0, 0.0);
    for (idx, ck) in c.iter().enumerate() {
        let k = grid.k_vector(idx);
        let phase: f64 = (0..dim).map(|a| k[a] * (x[a] + l)).sum();
        s += ck * Complex64::from_polar(1.0, phase);
    }
    s / grid.len() as f64
}

/// Default guess: peak of `|u|` for `D`, phase at the peak for `θ`,
/// `Π(u - B_t wφ₀)` for `p`, `w` from pairings with the transported `φ₀`.
pub fn initial_guess(model: &DecompositionModel, u: &ComplexField, t: f64) -> (GroupElement, Vec<f64>, Complex64) {
    let dim = model.dim();
    let mut w = Complex64::new(0.0, 0.0);
    let mut rest = u.clone();
    if let Some(branch) = &model.branch {
        let phi0 = branch.phi0();
        let b1 = trapped_transport(phi0, t, &model.params);
        let b2 = trapped_transport(&phi0.apply_j_inv(), t, &model.params);
        w = Complex64::new(pairing_unchecked(u, &b1), pairing_unchecked(u, &b2)) / phi0.norm_sq();
        rest = u.sub(&b1.scaled(w.re)).sub(&b2.scaled(w.im));
    }
    if model.family.is_none() {
        return (GroupElement::identity(dim), vec![], w);
    }
    let d = peak_location(&rest);
    let theta = value_at(&rest, &d).arg();
    (GroupElement::new(d, -theta), charge_momenta(&rest), w)
}

/// Decomposes `u` at time `t`; `guess` (for instance extrapolated from the
/// previous samples) replaces the default guess and its curvature bound is
/// reused.
pub fn decompose(model: &DecompositionModel, u: &ComplexField, t: f64, guess: Option<&Decomposition>) -> Result<Decomposition> {
    let dim = model.dim();
    if u.grid().dim() != dim {
        return Err(Error::invalid("field and scenario dimensions differ"));
    }
    if let Some(fam) = &model.family {
        u.check_grid(&ComplexField::zeros(fam.grid()))?;
    }
    let (tau0, p0, w0, omega_hint, bp_hint, curvature) = match guess {
        Some(g) => (g.tau.clone(), g.p.clone(), g.w, g.omega, g.branch_point.clone(), Some(g.history.curvature)),
        None => {
            let (tau, p, w) = initial_guess(model, u, t);
            let omega = match &model.family {
                Some(fam) => {
                    // invert Π₄(φ_ω) = p₄ starting from the reference frequency
                    let (lo, hi) = fam.beta.omega_interval();
                    let start = model.params.omega1;
                    if start > lo && start < hi {
                        start
                    } else {
                        0.5 * (lo + hi.min(2.0 * lo.max(0.5)))
                    }
                }
                None => 0.0,
            };
            (tau, p, w, omega, None, None)
        }
    };
    let eval = Evaluator {
        model,
        u,
        t,
        base_tau: tau0,
        base_p: p0,
        base_w: w0,
        omega_hint: Mutex::new(omega_hint),
        bp_hint: Mutex::new(bp_hint),
    };
    if let (Some(_), Some(_)) = (&model.family, &model.branch) {
        let trial = eval.trial(&vec![0.0; model.unknowns()])?;
        let x = overlap_indicator(model, &trial.tau, t, trial.point.as_ref().unwrap())?;
        if x > model.overlap_threshold {
            return Err(Error::GateFailed { residual: x, bound: model.overlap_threshold });
        }
    }
    let f = |y: &[f64]| -> Result<Vec<f64>> {
        let trial = eval.trial(y)?;
        Ok(eval.residuals(&trial).2)
    };
    let n = model.unknowns();
    let opts = CertifiedOptions { radius: model.radius, fd_step: 1e-6, max_refinements: 8, curvature };
    let (y, history) = certified_solve(&f, n, opts)?;
    let trial = eval.trial(&y)?;
    let (rtilde, raw, _) = eval.residuals(&trial);
    let overlap = match (&trial.point, &model.branch) {
        (Some(pt), Some(_)) => overlap_indicator(model, &trial.tau, t, pt)?,
        _ => 0.0,
    };
    let (omega, v) = match &trial.point {
        Some(pt) => (pt.omega, pt.v.clone()),
        None => (0.0, vec![0.0; dim]),
    };
    let (w, energy_w) = match &trial.bp {
        Some(bp) => (bp.w, bp.energy),
        None => (Complex64::new(0.0, 0.0), 0.0),
    };
    Ok(Decomposition {
        t,
        tau: trial.tau,
        p: trial.p,
        omega,
        v,
        w,
        energy_w,
        rtilde,
        residuals: raw,
        overlap,
        jacobian_defect: history.jacobian_defect,
        history,
        branch_point: trial.bp,
        z: vec![],
        f: None,
    })
}

/// `e^{Jτ◇}Φ_p + B_tQ_w + R̃`.
pub fn reconstruct(model: &DecompositionModel, dec: &Decomposition) -> Result<ComplexField> {
    let mut out = dec.rtilde.clone();
    if let Some(fam) = &model.family {
        let point = manifold_point(fam, dec.omega, &dec.v)?;
        out = out.add(&group_action(&point.field, &dec.tau));
    }
    if let Some(bp) = &dec.branch_point {
        out = out.add(&trapped_transport(&bp.q_full, dec.t, &model.params));
    }
    Ok(out)
}

/// `X(τ, t)`: largest pairing of the transported `J^{k-1}φ₀` with the
/// transported tangent vectors `J^{l-1}∂_{p_j}Φ` and `J^{l-1}◇_jΦ`.
pub fn overlap_indicator(model: &DecompositionModel, tau: &GroupElement, t: f64, point: &SolitonManifoldPoint) -> Result<f64> {
    let (Some(fam), Some(branch)) = (&model.family, &model.branch) else {
        return Ok(0.0);
    };
    let dim = model.dim();
    let phi0 = branch.phi0();
    let bubbles = [trapped_transport(phi0, t, &model.params), trapped_transport(&phi0.apply_j(), t, &model.params)];
    let mut tangents = dphi_dp(fam, point)?;
    tangents.extend(MultiIndexAxis::all(dim).map(|a| apply_diamond(&point.field, a)));
    let mut x: f64 = 0.0;
    for tv in &tangents {
        let moved = group_action(tv, tau);
        for m in [moved.clone(), moved.apply_j()] {
            for b in &bubbles {
                x = x.max(pairing_unchecked(b, &m).abs());
            }
        }
    }
    Ok(x)
}

/// `P(π)r = Σ z_jξ_j + z̄_jξ̄_j + f` with `r = e^{-Jτ◇}R̃` and `π = p`.
/// Returns `(z, f, reconstruction error)`.
pub fn split_r_zf(dec: &Decomposition, proj: &ProjectionSet) -> (Vec<Complex64>, ComplexField, f64) {
    let r = group_action(&dec.rtilde, &dec.tau.inverse());
    let pr = proj.apply_p(&r);
    let z = proj.frame_coordinates(&pr);
    let f = pr.sub(&proj.frame_synthesis(&z));
    let back = proj.frame_synthesis(&z).add(&proj.apply_pc(&f));
    let err = back.sub(&pr).norm_l2() / pr.norm_l2().max(f64::MIN_POSITIVE);
    (z, f, err)
}

/// `(⟨iη, ∂_{w₁}Q_w⟩, ⟨iη, ∂_{w₂}Q_w⟩)`, zero when `η ∈ H_c[w]`.
pub fn check_hc_membership(eta: &ComplexField, w: Complex64, branch: &SmallBoundBranch) -> Result<(f64, f64)> {
    let bp = branch.solve(w)?;
    let (d1, d2) = branch.dq_dw(&bp)?;
    let ieta = eta.apply_j_inv();
    Ok((pairing_unchecked(&ieta, &d1), pairing_unchecked(&ieta, &d2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{galilean_boost, Grid};
    use crate::groundstates::solve_linear_eigenpair;
    use crate::model::{Nonlinearity, Potential};

    struct Setup {
        model: DecompositionModel,
        family: Arc<SolitonFamily>,
        branch: Arc<SmallBoundBranch>,
    }

    fn setup() -> Setup {
        let grid = Grid::new(1, 512, 32.0).unwrap();
        let family = Arc::new(SolitonFamily::new(Nonlinearity::Cubic, &grid));
        let pot = Potential::default_well();
        let lb = solve_linear_eigenpair(&pot, &grid).unwrap();
        let branch = Arc::new(SmallBoundBranch::new(lb, &pot, Nonlinearity::Cubic));
        let params = ScenarioParams::new(vec![1.0], vec![8.0], 0.5, 1.0).unwrap();
        let model = DecompositionModel::new(Some(family.clone()), Some(branch.clone()), params).unwrap();
        Setup { model, family, branch }
    }

    fn two_bubbles(s: &Setup, omega: f64, v: f64, tau: &GroupElement, w: Complex64, t: f64) -> ComplexField {
        let phi = s.family.phi(omega).unwrap();
        let sol = group_action(&galilean_boost(&phi, &[v]), tau);
        let q = s.branch.solve(w).unwrap();
        sol.add(&trapped_transport(&q.q_full, t, &s.model.params))
    }

    #[test]
    fn transport_round_trip() {
        let s = setup();
        let g = s.branch.phi0().mul_complex(Complex64::new(0.3, -0.7));
        let there = trapped_transport(&g, 0.7, &s.model.params);
        let back = trapped_pullback(&there, 0.7, &s.model.params);
        assert!(back.sub(&g).max_abs() < 1e-12);
        assert!((there.norm_sq() - g.norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn recovers_exact_two_bubble_parameters() {
        let s = setup();
        let tau = GroupElement::new(vec![7.3], 0.4);
        let w = Complex64::new(0.05, -0.02);
        let u = two_bubbles(&s, 1.1, 0.3, &tau, w, 0.0);
        let dec = decompose(&s.model, &u, 0.0, None).unwrap();
        assert!((dec.tau.shift[0] - 7.3).abs() < 1e-8, "{:?}", dec.tau);
        assert!((dec.tau.minus_theta - 0.4).abs() < 1e-8);
        assert!((dec.omega - 1.1).abs() < 1e-8);
        assert!((dec.v[0] - 0.3).abs() < 1e-8);
        assert!((dec.w - w).norm() < 1e-8);
        assert!(dec.rtilde.max_abs() < 1e-8);
        assert!(dec.max_residual() < 1e-10);
        assert!(dec.jacobian_defect < 0.1, "{}", dec.jacobian_defect);
        assert!(dec.overlap < 1e-3);
    }

    #[test]
    fn perturbed_field_satisfies_orthogonality() {
        let s = setup();
        let tau = GroupElement::new(vec![6.0], -1.0);
        let w = Complex64::new(0.04, 0.03);
        let t = 0.5;
        let u = two_bubbles(&s, 0.9, -0.2, &tau, w, t);
        let bump = ComplexField::from_fn(u.grid(), |x| Complex64::new(1e-3 * (-(x[0] - 2.0).powi(2)).exp(), 5e-4 * x[0] * (-(x[0] * x[0]) / 4.0).exp()));
        let u = u.add(&bump);
        let dec = decompose(&s.model, &u, t, None).unwrap();
        assert!(dec.max_residual() < 1e-10, "{:?}", dec.residuals);
        assert!(reconstruct(&s.model, &dec).unwrap().sub(&u).max_abs() < 1e-12);
        assert!((dec.tau.shift[0] - 6.0).abs() < 1e-2);
        assert!((dec.w - w).norm() < 1e-2);
        let (h1, h2) = check_hc_membership(&dec.rtilde, dec.w, &s.branch).unwrap();
        assert!(h1.abs().max(h2.abs()) < 1e-3);
    }

    #[test]
    fn gauge_equivariance_and_idempotence() {
        let s = setup();
        let tau = GroupElement::new(vec![5.5], 0.2);
        let u = two_bubbles(&s, 1.0, 0.1, &tau, Complex64::new(0.03, 0.0), 0.0)
            .add(&ComplexField::from_fn(s.family.grid(), |x| Complex64::new(0.0, 1e-3 * (-(x[0] - 1.0).powi(2)).exp())));
        let d1 = decompose(&s.model, &u, 0.0, None).unwrap();
        let d2 = decompose(&s.model, &reconstruct(&s.model, &d1).unwrap(), 0.0, Some(&d1)).unwrap();
        assert!((d1.tau.shift[0] - d2.tau.shift[0]).abs() < 1e-10);
        assert!((d1.w - d2.w).norm() < 1e-10);
        // a global phase rotates θ and w together
        let rot = Complex64::from_polar(1.0, 0.3);
        let d3 = decompose(&s.model, &u.mul_complex(rot), 0.0, None).unwrap();
        assert!((d3.tau.minus_theta - (d1.tau.minus_theta - 0.3)).abs() < 1e-8);
        assert!((d3.w - d1.w * rot).norm() < 1e-8);
        assert!((d3.omega - d1.omega).abs() < 1e-8);
    }

    #[test]
    fn overlap_grows_as_bubbles_meet() {
        let s = setup();
        let point = manifold_point(&s.family, 1.0, &[0.0]).unwrap();
        let far = overlap_indicator(&s.model, &GroupElement::new(vec![10.0], 0.0), 0.0, &point).unwrap();
        let near = overlap_indicator(&s.model, &GroupElement::new(vec![-6.0], 0.0), 0.0, &point).unwrap();
        let on = overlap_indicator(&s.model, &GroupElement::new(vec![-8.0], 0.0), 0.0, &point).unwrap();
        assert!(far < 1e-4, "{far}");
        assert!(far < near && near < on);
        let u = two_bubbles(&s, 1.0, 0.0, &GroupElement::new(vec![-8.0], 0.0), Complex64::new(0.05, 0.0), 0.0);
        assert!(matches!(decompose(&s.model, &u, 0.0, None), Err(Error::GateFailed { .. })));
    }
}

//! Stationary states: the linear eigenpair of `-Δ + V`, the small nonlinear
//! bound-state branch `w ↦ Q_w`, and the soliton family `ω ↦ φ_ω`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{galilean_boost, pairing_unchecked, ComplexField, Grid};
use crate::krylov::{gmres, GmresOptions};
use crate::model::{charge_momenta, Nonlinearity, Potential};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn neg_laplacian(grid: &Grid, x: &[f64]) -> Vec<f64> {
    grid.real_multiplier(x, |k2| k2)
}

/// Largest grid used for dense eigensolves.
pub fn reduced_grid(grid: &Grid) -> Result<Grid> {
    let cap = match grid.dim() {
        1 => 512,
        2 => 32,
        _ => 16,
    };
    grid.resampled(grid.points_per_axis().min(cap))
}

/// Dense symmetric matrix of `-Δ + diag(w)` on `grid`.
pub fn dense_schrodinger(grid: &Grid, w: &[f64]) -> DMatrix<f64> {
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = neg_laplacian(grid, &e);
        e[j] = 0.0;
        for i in 0..n {
            m[(i, j)] = col[i];
        }
        m[(j, j)] += w[j];
    }
    let mt = m.transpose();
    (m + mt) * 0.5
}

#[derive(Debug, Clone)]
pub struct LinearBoundState {
    pub e0: f64,
    pub phi0: ComplexField,
    pub residual: f64,
}

/// Fraction of `|ψ|²` within half the box around the origin.
fn central_mass_fraction(grid: &Grid, psi: &[f64]) -> f64 {
    let half = 0.5 * grid.half_width();
    let mut inner = 0.0;
    let mut total = 0.0;
    for (i, v) in psi.iter().enumerate() {
        let x = grid.point(i);
        let r2: f64 = x[..grid.dim()].iter().map(|c| c * c).sum();
        let m = v * v;
        total += m;
        if r2.sqrt() < half {
            inner += m;
        }
    }
    inner / total
}

/// Ground state of `-Δ + V` on the periodic grid, with a check that it is the
/// only localized negative eigenvalue.
pub fn solve_linear_eigenpair(potential: &Potential, grid: &Grid) -> Result<LinearBoundState> {
    potential.validate()?;
    let coarse = reduced_grid(grid)?;
    let vc = potential.sample(&coarse, &vec![0.0; grid.dim()]);
    let eig = SymmetricEigen::new(dense_schrodinger(&coarse, &vc));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // negative eigenvalues of delocalized box modes are a truncation artifact
    let bound: Vec<usize> = order
        .iter()
        .copied()
        .take_while(|&j| eig.eigenvalues[j] < 0.0)
        .filter(|&j| {
            let col: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            central_mass_fraction(&coarse, &col) > 0.9
        })
        .collect();
    if bound.len() != 1 {
        let vals: Vec<String> = bound.iter().map(|&j| format!("{:.6}", eig.eigenvalues[j])).collect();
        return Err(Error::BoundStates(format!(
            "-Δ+V must have exactly one eigenvalue, found {} localized negative eigenvalues [{}]",
            bound.len(),
            vals.join(", ")
        )));
    }
    let j = bound[0];
    let mut e0 = eig.eigenvalues[j];
    let col: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
    let mut phi = ComplexField::real(&coarse, col)?.resample(grid)?.re().to_vec();
    let v = potential.sample(grid, &vec![0.0; grid.dim()]);
    let dv = grid.cell_volume();
    let normalize = |phi: &mut Vec<f64>| {
        let s: f64 = dot(phi, phi) * dv;
        let sign = if phi.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / s.sqrt();
        phi.iter_mut().for_each(|x| *x *= scale);
    };
    normalize(&mut phi);
    let apply_h = |x: &[f64]| -> Vec<f64> {
        let mut y = neg_laplacian(grid, x);
        y.iter_mut().zip(x.iter().zip(&v)).for_each(|(yi, (xi, vi))| *yi += vi * xi);
        y
    };
    let residual_of = |phi: &[f64], e: f64| -> f64 {
        let hp = apply_h(phi);
        (hp.iter().zip(phi).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>() * dv).sqrt()
    };
    // bordered Newton on ((H - e)φ, ½(1 - ‖φ‖²))
    let n = grid.len();
    let shift = e0.abs().max(0.1);
    for _ in 0..20 {
        let hp = apply_h(&phi);
        e0 = dot(&hp, &phi) * dv;
        if residual_of(&phi, e0) < 1e-12 {
            break;
        }
        let mut rhs: Vec<f64> = hp.iter().zip(&phi).map(|(a, b)| -(a - e0 * b)).collect();
        rhs.push(0.0);
        let phi_ref = phi.clone();
        let apply = |x: &[f64]| -> Vec<f64> {
            let (d, de) = x.split_at(n);
            let mut y = apply_h(d);
            for i in 0..n {
                y[i] -= e0 * d[i] + de[0] * phi_ref[i];
            }
            y.push(-dot(&phi_ref, d) * dv);
            y
        };
        let pre = |x: &[f64]| -> Vec<f64> {
            let mut y = grid.real_multiplier(&x[..n], |k2| 1.0 / (k2 + shift));
            y.push(x[n]);
            y
        };
        let (dx, _) = gmres(apply, pre, &rhs, None, GmresOptions { tol: 1e-13, ..Default::default() })
            .or_else(|e| match e {
                Error::NonConvergence { .. } => Ok((vec![0.0; n + 1], Default::default())),
                other => Err(other),
            })?;
        phi.iter_mut().zip(&dx[..n]).for_each(|(a, b)| *a += b);
        normalize(&mut phi);
    }
    let hp = apply_h(&phi);
    e0 = dot(&hp, &phi) * dv;
    let residual = residual_of(&phi, e0);
    if residual > 1e-9 {
        return Err(Error::NonConvergence {
            what: "linear eigenpair",
            iterations: 20,
            residual,
        });
    }
    if phi.iter().cloned().fold(f64::INFINITY, f64::min) < -1e-10 {
        return Err(Error::LostPositivity(phi.iter().cloned().fold(f64::INFINITY, f64::min)));
    }
    phi.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(LinearBoundState {
        e0,
        phi0: ComplexField::real(grid, phi)?,
        residual,
    })
}

/// A point `Q_w = wφ₀ + q_w` of the small bound-state branch.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub w: Complex64,
    pub q_full: ComplexField,
    pub q: ComplexField,
    pub energy: f64,
    pub residual: f64,
}

/// `w ↦ (Q_w, E_w)` bifurcating from `(e₀, φ₀)`.
#[derive(Debug)]
pub struct SmallBoundBranch {
    pub linear: LinearBoundState,
    pub beta: Nonlinearity,
    potential_samples: Vec<f64>,
    reached: Mutex<f64>,
}

impl SmallBoundBranch {
    pub fn new(linear: LinearBoundState, potential: &Potential, beta: Nonlinearity) -> Self {
        let grid = linear.phi0.grid().clone();
        let potential_samples = potential.sample(&grid, &vec![0.0; grid.dim()]);
        SmallBoundBranch {
            linear,
            beta,
            potential_samples,
            reached: Mutex::new(0.0),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.linear.phi0.grid()
    }

    pub fn phi0(&self) -> &ComplexField {
        &self.linear.phi0
    }

    /// Largest `|w|` for which a solve has succeeded so far.
    pub fn radius(&self) -> f64 {
        *self.reached.lock().unwrap()
    }

    fn h_apply(&self, f: &ComplexField) -> ComplexField {
        f.laplacian().scaled(-1.0).add(&f.mul_real(&self.potential_samples))
    }

    /// `(-Δ + V)Q + β(|Q|²)Q - E Q`.
    pub fn stationarity(&self, q_full: &ComplexField, energy: f64) -> ComplexField {
        let b: Vec<f64> = q_full.modulus_sq().iter().map(|&s| self.beta.beta(s) - energy).collect();
        self.h_apply(q_full).add(&q_full.mul_real(&b))
    }

    /// Linearization of the stationarity map in `Q` at fixed `E`.
    fn d_stationarity(&self, q_full: &ComplexField, energy: f64, d: &ComplexField) -> ComplexField {
        let n = q_full.re().len();
        let mut out = self.h_apply(d);
        let (qr, qi) = (q_full.re(), q_full.im());
        let (dr, di) = (d.re(), d.im());
        let mut re = out.re().to_vec();
        let mut im = out.im().to_vec();
        for j in 0..n {
            let s = qr[j] * qr[j] + qi[j] * qi[j];
            let b = self.beta.beta(s) - energy;
            let c = 2.0 * self.beta.beta_prime(s) * (qr[j] * dr[j] + qi[j] * di[j]);
            re[j] += b * dr[j] + c * qr[j];
            im[j] += b * di[j] + c * qi[j];
        }
        out.re_mut().copy_from_slice(&re);
        out.im_mut().copy_from_slice(&im);
        out
    }

    /// Bordered Jacobian acting on `(δq, δE, δμ)` in flat layout
    /// `[re, im, δE, δμ]`.
    /// The scalar columns are divided by `|w|` to keep the system well
    /// conditioned as `w → 0`.
    fn bordered_apply(&self, q_full: &ComplexField, energy: f64, x: &[f64]) -> Vec<f64> {
        let grid = self.grid();
        let n2 = 2 * grid.len();
        let d = ComplexField::from_flat(grid, &x[..n2]);
        let s = self.column_scale(q_full);
        let (de, dmu) = (x[n2] / s, x[n2 + 1] / s);
        let iq = q_full.apply_j_inv();
        let mut y = self
            .d_stationarity(q_full, energy, &d)
            .axpy(-de, q_full)
            .axpy(dmu, &iq)
            .to_flat();
        let phi0 = self.phi0();
        y.push(pairing_unchecked(&d, phi0));
        y.push(pairing_unchecked(&d, &phi0.apply_j_inv()));
        y
    }

    fn column_scale(&self, q_full: &ComplexField) -> f64 {
        q_full.norm_l2().max(1e-300)
    }

    fn preconditioner(&self, x: &[f64]) -> Vec<f64> {
        let grid = self.grid();
        let n2 = 2 * grid.len();
        let shift = self.linear.e0.abs().max(0.1);
        let f = ComplexField::from_flat(grid, &x[..n2]);
        let mut y = f
            .fourier_multiply(|k, _| Complex64::new(1.0 / (k[0] * k[0] + k[1] * k[1] + k[2] * k[2] + shift), 0.0))
            .to_flat();
        y.push(x[n2]);
        y.push(x[n2 + 1]);
        y
    }

    fn newton(&self, w: Complex64, q_start: &ComplexField, e_start: f64) -> Result<BranchPoint> {
        let grid = self.grid();
        let n2 = 2 * grid.len();
        let base = self.phi0().mul_complex(w);
        let mut q = q_start.clone();
        let mut energy = e_start;
        let mut mu = 0.0;
        let mut last = f64::INFINITY;
        for it in 0..30 {
            let q_full = base.add(&q);
            let g = self.stationarity(&q_full, energy).axpy(mu, &q_full.apply_j_inv());
            let c1 = pairing_unchecked(&q, self.phi0());
            let c2 = pairing_unchecked(&q, &self.phi0().apply_j_inv());
            let res = (g.norm_sq() + c1 * c1 + c2 * c2).sqrt();
            if res < 1e-14 || (res < 1e-11 && res > 0.1 * last) {
                let residual = self.stationarity(&q_full, energy).norm_l2();
                return Ok(BranchPoint { w, q_full, q, energy, residual });
            }
            if !res.is_finite() || (it > 2 && res > 2.0 * last) {
                break;
            }
            last = res;
            let mut rhs: Vec<f64> = g.to_flat().iter().map(|v| -v).collect();
            rhs.push(-c1);
            rhs.push(-c2);
            let dx = match gmres(
                |x| self.bordered_apply(&q_full, energy, x),
                |x| self.preconditioner(x),
                &rhs,
                None,
                GmresOptions { tol: 1e-9, restart: 80, max_iter: 600 },
            ) {
                Ok((dx, _)) => dx,
                Err(Error::NonConvergence { .. }) if res < 1e-11 => {
                    let residual = self.stationarity(&q_full, energy).norm_l2();
                    return Ok(BranchPoint { w, q_full, q, energy, residual });
                }
                Err(Error::NonConvergence { .. }) => break,
                Err(e) => return Err(e),
            };
            let s = self.column_scale(&q_full);
            q.axpy_in_place(1.0, &ComplexField::from_flat(grid, &dx[..n2]));
            energy += dx[n2] / s;
            mu += dx[n2 + 1] / s;
        }
        Err(Error::BranchExhausted(w.norm()))
    }

    /// Solves for `(Q_w, E_w)`, continuing along the ray through `w` with step
    /// halving when a direct Newton solve fails.
    pub fn solve(&self, w: Complex64) -> Result<BranchPoint> {
        self.solve_from(w, None)
    }

    /// Same as [`solve`](Self::solve) but starting Newton from a nearby point.
    pub fn solve_from(&self, w: Complex64, guess: Option<&BranchPoint>) -> Result<BranchPoint> {
        let grid = self.grid();
        if w.norm() == 0.0 {
            return Ok(BranchPoint {
                w,
                q_full: ComplexField::zeros(grid),
                q: ComplexField::zeros(grid),
                energy: self.linear.e0,
                residual: 0.0,
            });
        }
        let (q0, e0) = match guess {
            Some(g) => (g.q.clone(), g.energy),
            None => (ComplexField::zeros(grid), self.linear.e0),
        };
        let attempt = self.newton(w, &q0, e0);
        let point = match attempt {
            Ok(p) => p,
            Err(Error::BranchExhausted(_)) | Err(Error::NonConvergence { .. }) => self.continuation(w)?,
            Err(e) => return Err(e),
        };
        let mut r = self.reached.lock().unwrap();
        *r = r.max(w.norm());
        Ok(point)
    }

    fn continuation(&self, w: Complex64) -> Result<BranchPoint> {
        let grid = self.grid();
        let mut s = 0.0_f64;
        let mut step = 0.25_f64;
        let mut q = ComplexField::zeros(grid);
        let mut energy = self.linear.e0;
        loop {
            let next = (s + step).min(1.0);
            match self.newton(w * next, &q, energy) {
                Ok(p) => {
                    s = next;
                    q = p.q.clone();
                    energy = p.energy;
                    if s >= 1.0 {
                        return Ok(p);
                    }
                    step = (step * 1.5).min(0.25);
                }
                Err(Error::BranchExhausted(_)) | Err(Error::NonConvergence { .. }) => {
                    step *= 0.5;
                    if step < 1e-3 {
                        return Err(Error::BranchExhausted(w.norm() * s));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// `(∂_{w₁}Q, ∂_{w₂}Q)` at a solved point by implicit differentiation.
    pub fn dq_dw(&self, point: &BranchPoint) -> Result<(ComplexField, ComplexField)> {
        let grid = self.grid();
        let n2 = 2 * grid.len();
        let phi0 = self.phi0();
        let iphi0 = phi0.apply_j_inv();
        let mut out = Vec::with_capacity(2);
        for dir in [phi0, &iphi0] {
            if point.w.norm() == 0.0 {
                out.push(dir.clone());
                continue;
            }
            let mut rhs: Vec<f64> = self
                .d_stationarity(&point.q_full, point.energy, dir)
                .to_flat()
                .iter()
                .map(|v| -v)
                .collect();
            rhs.push(0.0);
            rhs.push(0.0);
            let (dx, _) = gmres(
                |x| self.bordered_apply(&point.q_full, point.energy, x),
                |x| self.preconditioner(x),
                &rhs,
                None,
                GmresOptions { tol: 1e-10, restart: 80, max_iter: 1500 },
            )?;
            out.push(dir.add(&ComplexField::from_flat(grid, &dx[..n2])));
        }
        let b = out.pop().unwrap();
        let a = out.pop().unwrap();
        Ok((a, b))
    }
}

fn cache_key(omega: f64) -> u64 {
    omega.to_bits()
}

const CACHE_LIMIT: usize = 512;

/// `ω ↦ φ_ω`, the positive radial solution of `-Δφ + ωφ + β(φ²)φ = 0`.
#[derive(Debug)]
pub struct SolitonFamily {
    pub beta: Nonlinearity,
    grid: Grid,
    phi_cache: Mutex<HashMap<u64, Arc<ComplexField>>>,
    dphi_cache: Mutex<HashMap<u64, Arc<ComplexField>>>,
}

impl SolitonFamily {
    pub fn new(beta: Nonlinearity, grid: &Grid) -> Self {
        SolitonFamily {
            beta,
            grid: grid.clone(),
            phi_cache: Mutex::new(HashMap::new()),
            dphi_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn phi(&self, omega: f64) -> Result<Arc<ComplexField>> {
        if let Some(p) = self.phi_cache.lock().unwrap().get(&cache_key(omega)) {
            return Ok(p.clone());
        }
        let start = self.nearest_cached(omega);
        let phi = Arc::new(solve_phi_omega_from(&self.beta, omega, &self.grid, start.as_deref())?);
        let mut cache = self.phi_cache.lock().unwrap();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(cache_key(omega), phi.clone());
        Ok(phi)
    }

    fn nearest_cached(&self, omega: f64) -> Option<Arc<ComplexField>> {
        let cache = self.phi_cache.lock().unwrap();
        cache
            .iter()
            .map(|(k, v)| ((f64::from_bits(*k) - omega).abs(), v))
            .filter(|(d, _)| *d < 0.05 * omega)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, v)| v.clone())
    }

    pub fn d_omega_phi(&self, omega: f64) -> Result<Arc<ComplexField>> {
        if let Some(p) = self.dphi_cache.lock().unwrap().get(&cache_key(omega)) {
            return Ok(p.clone());
        }
        let phi = self.phi(omega)?;
        let d = Arc::new(d_omega_phi(&self.beta, omega, &phi)?);
        let mut cache = self.dphi_cache.lock().unwrap();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(cache_key(omega), d.clone());
        Ok(d)
    }

    /// `d/dω Π₄(φ_ω) = ⟨φ_ω, ∂_ωφ_ω⟩`.
    pub fn charge_slope(&self, omega: f64) -> Result<f64> {
        let phi = self.phi(omega)?;
        let d = self.d_omega_phi(omega)?;
        Ok(pairing_unchecked(&phi, &d))
    }
}

fn soliton_residual(beta: &Nonlinearity, omega: f64, grid: &Grid, phi: &[f64]) -> Vec<f64> {
    let mut r = neg_laplacian(grid, phi);
    for (ri, &p) in r.iter_mut().zip(phi) {
        *ri += omega * p + beta.beta(p * p) * p;
    }
    r
}

fn l2(grid: &Grid, x: &[f64]) -> f64 {
    (dot(x, x) * grid.cell_volume()).sqrt()
}

fn symmetrize(grid: &Grid, x: &mut Vec<f64>) {
    let f = ComplexField::real(grid, x.clone()).expect("finite");
    let r = f.reflected();
    x.iter_mut().zip(r.re()).for_each(|(a, b)| *a = 0.5 * (*a + b));
}

/// Applies `L₊ = -Δ + ω + β(φ²) + 2β'(φ²)φ²`.
pub fn apply_l_plus(beta: &Nonlinearity, omega: f64, grid: &Grid, phi: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = neg_laplacian(grid, x);
    for j in 0..x.len() {
        let s = phi[j] * phi[j];
        y[j] += (omega + beta.beta(s) + 2.0 * beta.beta_prime(s) * s) * x[j];
    }
    y
}

/// Applies `L₋ = -Δ + ω + β(φ²)`.
pub fn apply_l_minus(beta: &Nonlinearity, omega: f64, grid: &Grid, phi: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = neg_laplacian(grid, x);
    for j in 0..x.len() {
        y[j] += (omega + beta.beta(phi[j] * phi[j])) * x[j];
    }
    y
}

pub fn solve_phi_omega(beta: &Nonlinearity, omega: f64, grid: &Grid) -> Result<ComplexField> {
    solve_phi_omega_from(beta, omega, grid, None)
}

/// Normalized fixed-point iteration (positivity enforced by `|·|`) followed
/// by a Newton polish. With a nearby solution as `start` only Newton runs.
pub fn solve_phi_omega_from(
    beta: &Nonlinearity,
    omega: f64,
    grid: &Grid,
    start: Option<&ComplexField>,
) -> Result<ComplexField> {
    beta.check_omega(omega)?;
    let mut phi: Vec<f64> = match start {
        Some(s) => s.re().to_vec(),
        None => {
            let a = (2.0 * omega).sqrt();
            let k = omega.sqrt();
            grid.points()
                .map(|x| {
                    let r = x[..grid.dim()].iter().map(|c| c * c).sum::<f64>().sqrt();
                    a / (k * r).cosh()
                })
                .collect()
        }
    };
    if start.is_none() {
        let gamma = 1.5;
        let mut prev = f64::INFINITY;
        for _ in 0..500 {
            let nphi: Vec<f64> = phi.iter().map(|&p| -beta.beta(p * p) * p).collect();
            let lphi = grid.real_multiplier(&phi, |k2| k2 + omega);
            let m = dot(&lphi, &phi) / dot(&nphi, &phi);
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::NonConvergence {
                    what: "soliton fixed-point iteration",
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
            let next = grid.real_multiplier(&nphi, |k2| 1.0 / (k2 + omega));
            phi = next.iter().map(|v| m.powf(gamma) * v.abs()).collect();
            symmetrize(grid, &mut phi);
            let res = l2(grid, &soliton_residual(beta, omega, grid, &phi));
            if res < 1e-8 || (res > 0.9 * prev && res < 1e-5) {
                break;
            }
            prev = res;
        }
    }
    let mut res = l2(grid, &soliton_residual(beta, omega, grid, &phi));
    let mut iterations = 0;
    while res > 1e-12 && iterations < 25 {
        iterations += 1;
        let r = soliton_residual(beta, omega, grid, &phi);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let p_ref = phi.clone();
        let (dx, _) = gmres(
            |x| apply_l_plus(beta, omega, grid, &p_ref, x),
            |x| grid.real_multiplier(x, |k2| 1.0 / (k2 + omega)),
            &rhs,
            None,
            GmresOptions { tol: 1e-8_f64.max(1e-14 / res), restart: 60, max_iter: 600 },
        )
        .or_else(|e| match e {
            Error::NonConvergence { .. } => Ok((vec![0.0; phi.len()], Default::default())),
            other => Err(other),
        })?;
        let mut trial: Vec<f64> = phi.iter().zip(&dx).map(|(a, b)| a + b).collect();
        symmetrize(grid, &mut trial);
        let tres = l2(grid, &soliton_residual(beta, omega, grid, &trial));
        if !(tres < res) {
            break;
        }
        phi = trial;
        res = tres;
    }
    if res > 1e-10 {
        return Err(Error::NonConvergence {
            what: "soliton Newton polish",
            iterations,
            residual: res,
        });
    }
    let max = phi.iter().cloned().fold(0.0, f64::max);
    let min = phi.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-9 * max || max <= 0.0 {
        return Err(Error::LostPositivity(min));
    }
    ComplexField::real(grid, phi)
}

/// Solves `L₊ ∂_ωφ = -φ`.
pub fn d_omega_phi(beta: &Nonlinearity, omega: f64, phi: &ComplexField) -> Result<ComplexField> {
    let grid = phi.grid();
    let p = phi.re();
    let rhs: Vec<f64> = p.iter().map(|v| -v).collect();
    let (x, _) = gmres(
        |x| apply_l_plus(beta, omega, grid, p, x),
        |x| grid.real_multiplier(x, |k2| 1.0 / (k2 + omega)),
        &rhs,
        None,
        GmresOptions { tol: 1e-11, restart: 80, max_iter: 2000 },
    )
    .map_err(|e| match e {
        Error::NonConvergence { residual, .. } => {
            Error::Degenerate(format!("L+ singular at omega = {omega} (residual {residual:e})"))
        }
        other => other,
    })?;
    let mut x = x;
    symmetrize(grid, &mut x);
    ComplexField::real(grid, x)
}

/// `Φ_p = e^{-½Jv·x}φ_ω` with `p = Π(Φ_p)`.
#[derive(Debug, Clone)]
pub struct SolitonManifoldPoint {
    pub omega: f64,
    pub v: Vec<f64>,
    pub field: ComplexField,
    pub p: Vec<f64>,
}

pub fn manifold_point(family: &SolitonFamily, omega: f64, v: &[f64]) -> Result<SolitonManifoldPoint> {
    if v.len() != family.grid.dim() {
        return Err(Error::invalid("velocity has wrong dimension"));
    }
    let phi = family.phi(omega)?;
    let field = galilean_boost(&phi, v);
    let p = charge_momenta(&field);
    Ok(SolitonManifoldPoint { omega, v: v.to_vec(), field, p })
}

/// Inverts `(ω, v) ↦ p` by Newton with the block-triangular Jacobian
/// `∂p_a/∂v_b = ½Π₄δ_ab`, `∂p_a/∂ω = ½v_a dΠ₄/dω`, `∂p₄/∂ω = dΠ₄/dω`.
pub fn omega_v_of_p(family: &SolitonFamily, p: &[f64], omega_guess: f64) -> Result<(f64, Vec<f64>)> {
    let dim = family.grid.dim();
    if p.len() != dim + 1 {
        return Err(Error::invalid("momentum vector has wrong length"));
    }
    let mut omega = omega_guess;
    let mut v: Vec<f64> = vec![0.0; dim];
    let pi4 = family.phi(omega).map(|f| 0.5 * f.norm_sq())?;
    for a in 0..dim {
        v[a] = 2.0 * p[a] / pi4;
    }
    let (lo, hi) = family.beta.omega_interval();
    let mut prev = f64::INFINITY;
    for it in 0..40 {
        let point = manifold_point(family, omega, &v)?;
        let r: Vec<f64> = point.p.iter().zip(p).map(|(a, b)| a - b).collect();
        let rn = r.iter().map(|c| c.abs()).fold(0.0, f64::max);
        let pi4 = point.p[dim];
        let slope = family.charge_slope(omega)?;
        if rn < 1e-13 * (1.0 + pi4) || (rn < 1e-10 * (1.0 + pi4) && rn > 0.5 * prev) {
            return Ok((omega, v));
        }
        prev = rn;
        let domega = -r[dim] / slope;
        let mut step = (0.5 * omega / domega.abs()).min(1.0);
        while !(omega + step * domega > lo && omega + step * domega < hi) {
            step *= 0.5;
            if step < 1e-6 {
                return Err(Error::NonConvergence { what: "momentum inversion", iterations: it, residual: rn });
            }
        }
        let new_omega = omega + step * domega;
        for a in 0..dim {
            v[a] -= (r[a] + 0.5 * v[a] * slope * step * domega) / (0.5 * pi4);
        }
        omega = new_omega;
    }
    Err(Error::NonConvergence {
        what: "momentum inversion",
        iterations: 40,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sech_soliton(grid: &Grid, omega: f64) -> Vec<f64> {
        let a = (2.0 * omega).sqrt();
        let k = omega.sqrt();
        grid.axis_coords().iter().map(|x| a / (k * x).cosh()).collect()
    }

    #[test]
    fn cubic_soliton_matches_sech() {
        let g = Grid::new(1, 1024, 40.0).unwrap();
        let phi = solve_phi_omega(&Nonlinearity::Cubic, 1.0, &g).unwrap();
        let exact = sech_soliton(&g, 1.0);
        let err = phi.re().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        let phi4 = solve_phi_omega(&Nonlinearity::Cubic, 4.0, &g).unwrap();
        assert!((phi4.norm_sq() - 8.0).abs() < 1e-8);
    }

    #[test]
    fn d_omega_phi_consistency() {
        let g = Grid::new(1, 1024, 40.0).unwrap();
        let fam = SolitonFamily::new(Nonlinearity::Cubic, &g);
        let d = fam.d_omega_phi(1.0).unwrap();
        let h = 1e-3;
        let plus = solve_phi_omega(&Nonlinearity::Cubic, 1.0 + h, &g).unwrap();
        let minus = solve_phi_omega(&Nonlinearity::Cubic, 1.0 - h, &g).unwrap();
        let fd = plus.sub(&minus).scaled(0.5 / h);
        assert!(fd.sub(&d).max_abs() < 1e-5);
        assert!((2.0 * fam.charge_slope(1.0).unwrap() - 2.0).abs() < 1e-4);
        let phi = fam.phi(1.0).unwrap();
        assert!(pairing_unchecked(&d, &phi.derivative(0)).abs() < 1e-12);
    }

    #[test]
    fn poschl_teller_ground_state() {
        let g = Grid::new(1, 512, 20.0).unwrap();
        let lb = solve_linear_eigenpair(&Potential::PoschlTeller { depth: 2.0 }, &g).unwrap();
        assert!((lb.e0 + 1.0).abs() < 1e-6, "{}", lb.e0);
        assert!(lb.residual < 1e-10);
        let s: Vec<f64> = g.axis_coords().iter().map(|x| 1.0 / x.cosh() / 2f64.sqrt()).collect();
        let err = lb.phi0.re().iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8);
    }

    #[test]
    fn two_bound_states_are_rejected() {
        let g = Grid::new(1, 256, 20.0).unwrap();
        let deep = Potential::GaussianWell { depth: 8.0, width: 1.5 };
        assert!(matches!(solve_linear_eigenpair(&deep, &g), Err(Error::BoundStates(_))));
        assert!(matches!(solve_linear_eigenpair(&Potential::None, &g), Err(Error::BoundStates(_))));
    }

    fn default_branch() -> SmallBoundBranch {
        let g = Grid::new(1, 512, 20.0).unwrap();
        let pot = Potential::default_well();
        let lb = solve_linear_eigenpair(&pot, &g).unwrap();
        SmallBoundBranch::new(lb, &pot, Nonlinearity::Cubic)
    }

    #[test]
    fn default_well_has_single_bound_state() {
        let b = default_branch();
        assert!(b.linear.e0 < 0.0);
        assert!(b.linear.residual < 1e-10);
        assert!((b.phi0().norm_l2() - 1.0).abs() < 1e-12);
        assert!(b.phi0().re().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn branch_scaling_laws() {
        let b = default_branch();
        let z = b.solve(Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(z.energy, b.linear.e0);
        let mut e_ratio = Vec::new();
        let mut q_ratio = Vec::new();
        for r in [0.02, 0.04, 0.08] {
            let p = b.solve(Complex64::new(r, 0.0)).unwrap();
            assert!(p.residual < 1e-11, "{}", p.residual);
            e_ratio.push((p.energy - b.linear.e0).abs() / (r * r));
            q_ratio.push(crate::field::sigma_norm(&p.q, 1).unwrap() / (r * r * r));
            assert!(pairing_unchecked(&p.q, b.phi0()).abs() < 1e-14);
        }
        let spread = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread(&e_ratio) < 1.3);
        assert!(spread(&q_ratio) < 2.0);
    }

    #[test]
    fn branch_gauge_identities() {
        let b = default_branch();
        let w = Complex64::new(0.03, -0.04);
        let p = b.solve(w).unwrap();
        let rot = b.solve(w * Complex64::from_polar(1.0, 1.234)).unwrap();
        assert!((rot.energy - p.energy).abs() < 1e-10);
        let h = 1e-4;
        let d1 = b.solve(w + h).unwrap().q_full.sub(&b.solve(w - h).unwrap().q_full).scaled(0.5 / h);
        let ih = Complex64::new(0.0, h);
        let d2 = b.solve(w + ih).unwrap().q_full.sub(&b.solve(w - ih).unwrap().q_full).scaled(0.5 / h);
        // iQ = -w₂∂_{w₁}Q + w₁∂_{w₂}Q
        let rhs = d1.scaled(-w.im).add(&d2.scaled(w.re));
        let gauge = p.q_full.apply_j_inv().sub(&rhs).norm_l2();
        assert!(gauge < 1e-6, "{gauge}");
        let (a1, a2) = b.dq_dw(&p).unwrap();
        assert!(a1.sub(&d1).norm_l2() < 1e-6);
        assert!(a2.sub(&d2).norm_l2() < 1e-6);
    }
}

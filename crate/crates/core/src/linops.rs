//! Linearization at the soliton: the operators `L_ω`, `H_ω = iL_ω` and
//! `K_ω = M⁻¹H_ωM`, the internal-mode frame, the spectral projections,
//! resonance bookkeeping and the Fermi-golden-rule form.
//!
//! With `L₊ = -Δ + ω + β(φ²) + 2β'(φ²)φ²` and `L₋ = -Δ + ω + β(φ²)`,
//! `L_ω(a, b) = (L₋b, -L₊a)`. An eigenvector `H_ωξ = eξ` with `e > 0` has the
//! form `ξ = (a, -iL₊a/e)` with `L₋L₊a = e²a`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{apply_diamond, galilean_boost, pairing_unchecked, ComplexField, Grid, MultiIndexAxis};
use crate::groundstates::{dense_schrodinger, reduced_grid, SolitonFamily, SolitonManifoldPoint};
use crate::krylov::{gmres, GmresOptions};
use crate::model::{charge_momenta, Nonlinearity};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Complexified ℝ²-valued field `(a, b)` with `a, b ∈ ℂⁿ`.
#[derive(Debug, Clone)]
pub struct CVec {
    grid: Grid,
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

impl CVec {
    pub fn zeros(grid: &Grid) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); grid.len()];
        CVec { grid: grid.clone(), a: z.clone(), b: z }
    }

    pub fn new(grid: &Grid, a: Vec<Complex64>, b: Vec<Complex64>) -> Self {
        assert_eq!(a.len(), grid.len());
        assert_eq!(b.len(), grid.len());
        CVec { grid: grid.clone(), a, b }
    }

    pub fn from_field(f: &ComplexField) -> Self {
        CVec {
            grid: f.grid().clone(),
            a: f.re().iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            b: f.im().iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    /// `x + i y` from two real fields.
    pub fn from_parts(x: &ComplexField, y: &ComplexField) -> Self {
        CVec {
            grid: x.grid().clone(),
            a: x.re().iter().zip(y.re()).map(|(&r, &i)| Complex64::new(r, i)).collect(),
            b: x.im().iter().zip(y.im()).map(|(&r, &i)| Complex64::new(r, i)).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn real_part(&self) -> ComplexField {
        ComplexField::from_parts(
            &self.grid,
            self.a.iter().map(|c| c.re).collect(),
            self.b.iter().map(|c| c.re).collect(),
        )
        .expect("finite")
    }

    pub fn imag_part(&self) -> ComplexField {
        ComplexField::from_parts(
            &self.grid,
            self.a.iter().map(|c| c.im).collect(),
            self.b.iter().map(|c| c.im).collect(),
        )
        .expect("finite")
    }

    pub fn conj(&self) -> Self {
        CVec {
            grid: self.grid.clone(),
            a: self.a.iter().map(|c| c.conj()).collect(),
            b: self.b.iter().map(|c| c.conj()).collect(),
        }
    }

    /// `J⁻¹(a, b) = (-b, a)`.
    pub fn j_inv(&self) -> Self {
        CVec {
            grid: self.grid.clone(),
            a: self.b.iter().map(|c| -c).collect(),
            b: self.a.clone(),
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        CVec {
            grid: self.grid.clone(),
            a: self.a.iter().map(|c| c * s).collect(),
            b: self.b.iter().map(|c| c * s).collect(),
        }
    }

    pub fn axpy(&self, s: Complex64, other: &CVec) -> Self {
        CVec {
            grid: self.grid.clone(),
            a: self.a.iter().zip(&other.a).map(|(x, y)| x + s * y).collect(),
            b: self.b.iter().zip(&other.b).map(|(x, y)| x + s * y).collect(),
        }
    }

    /// Complex-bilinear extension of the real pairing (no conjugation).
    pub fn bilinear(&self, other: &CVec) -> Complex64 {
        let s: Complex64 = self.a.iter().zip(&other.a).map(|(x, y)| x * y).sum::<Complex64>()
            + self.b.iter().zip(&other.b).map(|(x, y)| x * y).sum::<Complex64>();
        s * self.grid.cell_volume()
    }

    /// `-i⟨J⁻¹x, ȳ⟩`, a Hermitian form; positive on Krein-positive modes.
    pub fn krein(&self, other: &CVec) -> Complex64 {
        -I * self.j_inv().bilinear(&other.conj())
    }

    pub fn norm(&self) -> f64 {
        (self.a.iter().chain(&self.b).map(|c| c.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `e^{-½Jv·x}` applied to both real and imaginary parts.
    pub fn boost(&self, v: &[f64]) -> Self {
        CVec::from_parts(&galilean_boost(&self.real_part(), v), &galilean_boost(&self.imag_part(), v))
    }

    pub fn resample(&self, target: &Grid) -> Result<Self> {
        Ok(CVec::from_parts(&self.real_part().resample(target)?, &self.imag_part().resample(target)?))
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.a.len());
        v.extend(self.a.iter().map(|c| c.re));
        v.extend(self.b.iter().map(|c| c.re));
        v.extend(self.a.iter().map(|c| c.im));
        v.extend(self.b.iter().map(|c| c.im));
        v
    }

    fn from_flat(grid: &Grid, v: &[f64]) -> Self {
        let n = grid.len();
        CVec {
            grid: grid.clone(),
            a: (0..n).map(|j| Complex64::new(v[j], v[2 * n + j])).collect(),
            b: (0..n).map(|j| Complex64::new(v[n + j], v[3 * n + j])).collect(),
        }
    }
}

fn neg_laplacian_c(grid: &Grid, x: &[Complex64]) -> Vec<Complex64> {
    let mut d = x.to_vec();
    grid.forward(&mut d);
    for (idx, c) in d.iter_mut().enumerate() {
        let k = grid.k_vector(idx);
        *c *= k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    }
    grid.inverse(&mut d);
    d
}

/// Linearized operator at `φ_ω` (zero velocity).
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub omega: f64,
    pub beta: Nonlinearity,
    phi: Arc<ComplexField>,
    /// `ω + β(φ²) + 2β'(φ²)φ²`
    w_plus: Vec<f64>,
    /// `ω + β(φ²)`
    w_minus: Vec<f64>,
}

pub fn assemble_linearization(omega: f64, family: &SolitonFamily) -> Result<LinearizedOperator> {
    let phi = family.phi(omega)?;
    Ok(LinearizedOperator::from_phi(omega, family.beta, phi))
}

impl LinearizedOperator {
    pub fn from_phi(omega: f64, beta: Nonlinearity, phi: Arc<ComplexField>) -> Self {
        let mut w_plus = Vec::with_capacity(phi.re().len());
        let mut w_minus = Vec::with_capacity(phi.re().len());
        for &p in phi.re() {
            let s = p * p;
            w_minus.push(omega + beta.beta(s));
            w_plus.push(omega + beta.beta(s) + 2.0 * beta.beta_prime(s) * s);
        }
        LinearizedOperator { omega, beta, phi, w_plus, w_minus }
    }

    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    pub fn phi(&self) -> &ComplexField {
        &self.phi
    }

    fn l_plus_c(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = neg_laplacian_c(self.grid(), x);
        y.iter_mut().zip(x.iter().zip(&self.w_plus)).for_each(|(yi, (xi, w))| *yi += xi * w);
        y
    }

    fn l_minus_c(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = neg_laplacian_c(self.grid(), x);
        y.iter_mut().zip(x.iter().zip(&self.w_minus)).for_each(|(yi, (xi, w))| *yi += xi * w);
        y
    }

    /// `L_ω(a, b) = (L₋b, -L₊a)` on a real field.
    pub fn apply_l(&self, r: &ComplexField) -> ComplexField {
        self.apply_l_c(&CVec::from_field(r)).real_part()
    }

    pub fn apply_l_c(&self, x: &CVec) -> CVec {
        let a = self.l_minus_c(&x.b);
        let b: Vec<Complex64> = self.l_plus_c(&x.a).iter().map(|c| -c).collect();
        CVec::new(self.grid(), a, b)
    }

    /// `H_ω = iL_ω`.
    pub fn apply_h(&self, x: &CVec) -> CVec {
        self.apply_l_c(x).scale(I)
    }

    /// `K_ω = σ₃ [[A₁, A₂], [A₂, A₁]]` in the `(u, ū)` coordinates, with
    /// `A₁ = -Δ + ω + β(φ²) + β'(φ²)φ²` and `A₂ = β'(φ²)φ²`.
    pub fn apply_k(&self, x: &CVec) -> CVec {
        let grid = self.grid();
        let la = neg_laplacian_c(grid, &x.a);
        let lb = neg_laplacian_c(grid, &x.b);
        let n = grid.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for j in 0..n {
            let a2 = 0.5 * (self.w_plus[j] - self.w_minus[j]);
            let a1 = self.w_minus[j] + a2;
            a.push(la[j] + a1 * x.a[j] + a2 * x.b[j]);
            b.push(-(lb[j] + a2 * x.a[j] + a1 * x.b[j]));
        }
        CVec::new(grid, a, b)
    }

    /// Dense `L₊` and `L₋` on a coarser grid.
    pub fn dense_blocks(&self, coarse: &Grid) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let phi = self.phi.resample(coarse)?;
        let mut wp = Vec::with_capacity(coarse.len());
        let mut wm = Vec::with_capacity(coarse.len());
        for &p in phi.re() {
            let s = p * p;
            wm.push(self.omega + self.beta.beta(s));
            wp.push(self.omega + self.beta.beta(s) + 2.0 * self.beta.beta_prime(s) * s);
        }
        Ok((dense_schrodinger(coarse, &wp), dense_schrodinger(coarse, &wm)))
    }

    /// Dense real matrix of `L_ω` acting on `[a; b]`.
    pub fn dense_l(&self, coarse: &Grid) -> Result<DMatrix<f64>> {
        let (lp, lm) = self.dense_blocks(coarse)?;
        let n = coarse.len();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, n), (n, n)).copy_from(&lm);
        m.view_mut((n, 0), (n, n)).copy_from(&(-lp));
        Ok(m)
    }
}

/// `M(u, w) = ½(u + w, -iu + iw)`, mapping `(u, ū)` coordinates to `(a, b)`.
pub fn m_apply(x: &CVec) -> CVec {
    let a = x.a.iter().zip(&x.b).map(|(u, w)| 0.5 * (u + w)).collect();
    let b = x.a.iter().zip(&x.b).map(|(u, w)| 0.5 * (-I * u + I * w)).collect();
    CVec::new(x.grid(), a, b)
}

/// `M⁻¹(a, b) = (a + ib, a - ib)`.
pub fn m_inv_apply(x: &CVec) -> CVec {
    let a = x.a.iter().zip(&x.b).map(|(a, b)| a + I * b).collect();
    let b = x.a.iter().zip(&x.b).map(|(a, b)| a - I * b).collect();
    CVec::new(x.grid(), a, b)
}

/// `L_p = J(∇²E₀(Φ_p) - λ(p)·◇)` assembled directly from the boosted field.
pub fn apply_l_at_point(point: &SolitonManifoldPoint, beta: &Nonlinearity, r: &ComplexField) -> ComplexField {
    let phi = &point.field;
    let dim = phi.grid().dim();
    let mut hess = r.laplacian().scaled(-1.0);
    let (pr, pi) = (phi.re(), phi.im());
    let (rr, ri) = (r.re(), r.im());
    let mut re = hess.re().to_vec();
    let mut im = hess.im().to_vec();
    for j in 0..rr.len() {
        let s = pr[j] * pr[j] + pi[j] * pi[j];
        let b = beta.beta(s);
        let c = 2.0 * beta.beta_prime(s) * (pr[j] * rr[j] + pi[j] * ri[j]);
        re[j] += b * rr[j] + c * pr[j];
        im[j] += b * ri[j] + c * pi[j];
    }
    hess.re_mut().copy_from_slice(&re);
    hess.im_mut().copy_from_slice(&im);
    let v2: f64 = point.v.iter().map(|c| c * c).sum();
    let mut out = hess.axpy(point.omega + 0.25 * v2, r);
    for a in 0..dim {
        out = out.axpy(-point.v[a], &apply_diamond(r, MultiIndexAxis::translation(dim, a)));
    }
    out.apply_j()
}

/// Internal modes `0 < e_j < ω` with their symplectically normalized
/// eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    pub omega: f64,
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<CVec>,
    /// `N_j` with `N_j e_j < ω < (N_j + 1)e_j`.
    pub multiplicities: Vec<usize>,
}

impl SpectralFrame {
    pub fn empty(omega: f64) -> Self {
        SpectralFrame { omega, eigenvalues: vec![], vectors: vec![], multiplicities: vec![] }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `N = N₁`, zero for an empty frame.
    pub fn n(&self) -> usize {
        self.multiplicities.first().copied().unwrap_or(0)
    }

    /// `([-i⟨J⁻¹ξ_j, ξ̄_k⟩], [⟨J⁻¹ξ_j, ξ_k⟩])`.
    pub fn normalization_matrices(&self) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
        let n = self.len();
        let mut h = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        let mut s = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for j in 0..n {
            for k in 0..n {
                h[j][k] = self.vectors[j].krein(&self.vectors[k]);
                s[j][k] = self.vectors[j].j_inv().bilinear(&self.vectors[k]);
            }
        }
        (h, s)
    }

    /// Frame of the boosted operator `L_p = e^{-½Jv·x}L_ω e^{½Jv·x}`.
    pub fn boosted(&self, v: &[f64]) -> Self {
        SpectralFrame {
            vectors: self.vectors.iter().map(|x| x.boost(v)).collect(),
            ..self.clone()
        }
    }
}

fn multiplicity(e: f64, omega: f64) -> usize {
    (omega / e).floor() as usize
}

/// Symplectic Gram–Schmidt: makes `[-i⟨J⁻¹ξ_j, ξ̄_k⟩] = I` and
/// `[⟨J⁻¹ξ_j, ξ_k⟩] = 0` sequentially.
pub fn symplectic_gram_schmidt(vectors: &[CVec]) -> Result<Vec<CVec>> {
    let mut out: Vec<CVec> = Vec::with_capacity(vectors.len());
    for x in vectors {
        let mut y = x.clone();
        for _ in 0..2 {
            for q in &out {
                // q has Krein norm +1 and q̄ has -1
                let c = y.krein(q);
                y = y.axpy(-c, q);
                let qb = q.conj();
                let d = y.krein(&qb);
                y = y.axpy(d, &qb);
            }
        }
        let k = y.krein(&y).re;
        if !(k > 0.0) {
            return Err(Error::KreinNegative(k));
        }
        out.push(y.scale(Complex64::new(1.0 / k.sqrt(), 0.0)));
    }
    Ok(out)
}

fn central_mass_fraction(grid: &Grid, a: &[f64]) -> f64 {
    let half = 0.5 * grid.half_width();
    let (mut inner, mut total) = (0.0, 0.0);
    for (i, v) in a.iter().enumerate() {
        let x = grid.point(i);
        let r: f64 = x[..grid.dim()].iter().map(|c| c * c).sum::<f64>().sqrt();
        total += v * v;
        if r < half {
            inner += v * v;
        }
    }
    inner / total
}

/// Centred sub-box used for dense eigensolves: at most the reduced-grid
/// point count per axis, with spacing a power-of-two multiple of the
/// production spacing and no coarser than `h_max` where possible.
struct Window {
    coarse: Grid,
    fine: Grid,
    stride: usize,
    offset: usize,
}

impl Window {
    fn new(grid: &Grid) -> Result<Self> {
        let n = grid.points_per_axis();
        let m = reduced_grid(grid)?.points_per_axis();
        let h = grid.spacing();
        let h_max = [0.15, 0.5, 0.8][grid.dim() - 1];
        let mut k = 1;
        while 2 * k * m <= n && 2.0 * k as f64 * h <= h_max {
            k *= 2;
        }
        // whole box when the reduced grid already covers it
        if m * k == n || m == n {
            let coarse = grid.resampled(m)?;
            return Ok(Window { coarse, fine: grid.clone(), stride: n / m, offset: 0 });
        }
        let half = 0.5 * (m * k) as f64 * h;
        Ok(Window {
            coarse: Grid::new(grid.dim(), m, half)?,
            fine: Grid::new(grid.dim(), m * k, half)?,
            stride: k,
            offset: (n - m * k) / 2,
        })
    }

    fn is_whole(&self, grid: &Grid) -> bool {
        self.fine.points_per_axis() == grid.points_per_axis()
    }

    /// Production index of coarse point `idx`.
    fn coarse_to_full(&self, grid: &Grid, idx: usize) -> usize {
        let mi = self.coarse.multi_index(idx);
        let n = grid.points_per_axis();
        (0..grid.dim()).fold(0, |acc, a| acc * n + self.offset + mi[a] * self.stride)
    }

    fn fine_to_full(&self, grid: &Grid, idx: usize) -> usize {
        let mi = self.fine.multi_index(idx);
        let n = grid.points_per_axis();
        (0..grid.dim()).fold(0, |acc, a| acc * n + self.offset + mi[a])
    }

    fn sample(&self, grid: &Grid, x: &[f64]) -> Vec<f64> {
        (0..self.coarse.len()).map(|i| x[self.coarse_to_full(grid, i)]).collect()
    }

    /// Spectral interpolation onto the window at production spacing, then
    /// zero extension to the whole box.
    fn embed(&self, grid: &Grid, a: &[f64]) -> Result<Vec<f64>> {
        let fine = ComplexField::real(&self.coarse, a.to_vec())?.resample(&self.fine)?;
        if self.is_whole(grid) {
            return Ok(fine.re().to_vec());
        }
        let mut out = vec![0.0; grid.len()];
        for (i, v) in fine.re().iter().enumerate() {
            out[self.fine_to_full(grid, i)] = *v;
        }
        Ok(out)
    }
}

/// Dense eigensolve of the symmetric reduction `L₋^{½} L₊ L₋^{½}` on a
/// centred window; eigenvectors are carried to the production grid,
/// polished there and normalized by symplectic Gram–Schmidt.
pub fn discrete_spectrum(op: &LinearizedOperator, n_expected: Option<usize>) -> Result<SpectralFrame> {
    let grid = op.grid();
    let win = Window::new(grid)?;
    let coarse = &win.coarse;
    let wp = win.sample(grid, &op.w_plus);
    let wm = win.sample(grid, &op.w_minus);
    let lp = dense_schrodinger(coarse, &wp);
    let lm = dense_schrodinger(coarse, &wm);
    let em = SymmetricEigen::new(lm);
    let sq = em.eigenvalues.map(|x| x.max(0.0).sqrt());
    let s = &em.eigenvectors * DMatrix::from_diagonal(&sq) * em.eigenvectors.transpose();
    let red = &s * &lp * &s;
    let red = (&red + red.transpose()) * 0.5;
    let eig = SymmetricEigen::new(red);
    let omega = op.omega;
    let zero_cut = (1e-2 * omega).powi(2);
    let mut modes: Vec<(f64, Vec<f64>)> = Vec::new();
    for j in 0..eig.eigenvalues.len() {
        let e2 = eig.eigenvalues[j];
        if e2 <= zero_cut || e2 >= omega * omega {
            continue;
        }
        let c = eig.eigenvectors.column(j);
        let a: Vec<f64> = (&s * c).iter().copied().collect();
        if central_mass_fraction(coarse, &a) < 0.9 {
            continue;
        }
        modes.push((e2.sqrt(), a));
    }
    modes.sort_by(|x, y| x.0.total_cmp(&y.0));
    if let Some(n) = n_expected {
        if n != modes.len() {
            return Err(Error::EigenvalueCount { expected: n, found: modes.len() });
        }
    }
    let mut vectors = Vec::with_capacity(modes.len());
    let mut eigenvalues = Vec::with_capacity(modes.len());
    for (e, a) in &modes {
        let af = win.embed(grid, a)?;
        let (xi, e) = polish_mode(op, &af, *e)?;
        vectors.push(xi);
        eigenvalues.push(e);
    }
    let vectors = symplectic_gram_schmidt(&vectors)?;
    let multiplicities = eigenvalues.iter().map(|&e| multiplicity(e, omega)).collect();
    Ok(SpectralFrame { omega, eigenvalues, vectors, multiplicities })
}

/// Refines `L₊a = e b`, `L₋b = e a` on the production grid by bordered
/// Newton, then builds `ξ = (a, -ib)`.
fn polish_mode(op: &LinearizedOperator, a0: &[f64], e0: f64) -> Result<(CVec, f64)> {
    let grid = op.grid();
    let n = grid.len();
    let real_op = |w: &[f64], x: &[f64]| -> Vec<f64> {
        let mut y = grid.real_multiplier(x, |k2| k2);
        y.iter_mut().zip(x.iter().zip(w)).for_each(|(yi, (xi, wi))| *yi += xi * wi);
        y
    };
    let dv = grid.cell_volume();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() * dv;
    let mut a = a0.to_vec();
    let mut e = e0;
    let mut b: Vec<f64> = real_op(&op.w_plus, &a).iter().map(|x| x / e).collect();
    let target = dot(&a, &b);
    let residual = |a: &[f64], b: &[f64], e: f64| -> Vec<f64> {
        let mut r: Vec<f64> = real_op(&op.w_plus, a).iter().zip(b).map(|(x, y)| x - e * y).collect();
        r.extend(real_op(&op.w_minus, b).iter().zip(a).map(|(x, y)| x - e * y));
        r.push(0.5 * (dot(a, b) - target));
        r
    };
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() * dv).sqrt();
    let omega = op.omega;
    let mut iterations = 0;
    let mut last = f64::INFINITY;
    loop {
        let r = residual(&a, &b, e);
        let rn = norm(&r) / (norm(&a) + norm(&b));
        if rn < 1e-12 || rn > 0.5 * last || iterations == 10 {
            break;
        }
        last = rn;
        iterations += 1;
        let (ar, br) = (a.clone(), b.clone());
        let apply = |x: &[f64]| -> Vec<f64> {
            let (da, rest) = x.split_at(n);
            let (db, de) = rest.split_at(n);
            let mut y: Vec<f64> = real_op(&op.w_plus, da)
                .iter()
                .zip(db.iter().zip(&br))
                .map(|(l, (d, bb))| l - e * d - de[0] * bb)
                .collect();
            y.extend(
                real_op(&op.w_minus, db)
                    .iter()
                    .zip(da.iter().zip(&ar))
                    .map(|(l, (d, aa))| l - e * d - de[0] * aa),
            );
            y.push(0.5 * (dot(da, &br) + dot(&ar, db)));
            y
        };
        let pre = |x: &[f64]| -> Vec<f64> {
            let mut y = grid.real_multiplier(&x[..n], |k2| 1.0 / (k2 + omega));
            y.extend(grid.real_multiplier(&x[n..2 * n], |k2| 1.0 / (k2 + omega)));
            y.push(x[2 * n]);
            y
        };
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = match gmres(apply, pre, &rhs, None, GmresOptions { tol: 1e-9, restart: 120, max_iter: 1200 }) {
            Ok((dx, _)) => dx,
            Err(Error::NonConvergence { .. }) => break,
            Err(err) => return Err(err),
        };
        a.iter_mut().zip(&dx[..n]).for_each(|(x, d)| *x += d);
        b.iter_mut().zip(&dx[n..2 * n]).for_each(|(x, d)| *x += d);
        e += dx[2 * n];
    }
    let xi = CVec::new(
        grid,
        a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        b.iter().map(|&x| Complex64::new(0.0, -x)).collect(),
    );
    let res = op.apply_h(&xi).axpy(Complex64::new(-e, 0.0), &xi).norm() / xi.norm();
    if !(res < 1e-8) {
        return Err(Error::NonConvergence { what: "internal-mode polish", iterations, residual: res });
    }
    Ok((xi, e))
}

/// `‖H_ωξ - eξ‖ / ‖ξ‖` for each frame vector.
pub fn frame_residuals(op: &LinearizedOperator, frame: &SpectralFrame) -> Vec<f64> {
    frame
        .vectors
        .iter()
        .zip(&frame.eigenvalues)
        .map(|(x, &e)| op.apply_h(x).axpy(Complex64::new(-e, 0.0), x).norm() / x.norm())
        .collect()
}

/// Solves `(H_ω - z)x = y` matrix-free, preconditioned by the free resolvent
/// in the `(u, ū)` coordinates.
pub fn solve_shifted_h(op: &LinearizedOperator, z: Complex64, y: &CVec, tol: f64) -> Result<CVec> {
    let grid = op.grid();
    let omega = op.omega;
    let apply = |v: &[f64]| -> Vec<f64> {
        let x = CVec::from_flat(grid, v);
        op.apply_h(&x).axpy(-z, &x).to_flat()
    };
    let pre = |v: &[f64]| -> Vec<f64> {
        let x = m_inv_apply(&CVec::from_flat(grid, v));
        m_apply(&free_k_resolvent(grid, omega, z, &x)).to_flat()
    };
    let (x, _) = gmres(apply, pre, &y.to_flat(), None, GmresOptions { tol, restart: 120, max_iter: 4000 })?;
    Ok(CVec::from_flat(grid, &x))
}

/// `(σ₃(-Δ + ω) - z)⁻¹`.
fn free_k_resolvent(grid: &Grid, omega: f64, z: Complex64, x: &CVec) -> CVec {
    let mut a = x.a.clone();
    let mut b = x.b.clone();
    grid.forward(&mut a);
    grid.forward(&mut b);
    for idx in 0..a.len() {
        let k = grid.k_vector(idx);
        let s = k[0] * k[0] + k[1] * k[1] + k[2] * k[2] + omega;
        a[idx] /= s - z;
        b[idx] /= -s - z;
    }
    grid.inverse(&mut a);
    grid.inverse(&mut b);
    CVec::new(grid, a, b)
}

/// Solves `(K_ω - z)x = y`.
pub fn solve_shifted_k(op: &LinearizedOperator, z: Complex64, y: &CVec, tol: f64) -> Result<CVec> {
    let grid = op.grid();
    let omega = op.omega;
    let apply = |v: &[f64]| -> Vec<f64> {
        let x = CVec::from_flat(grid, v);
        op.apply_k(&x).axpy(-z, &x).to_flat()
    };
    let pre = |v: &[f64]| -> Vec<f64> { free_k_resolvent(grid, omega, z, &CVec::from_flat(grid, v)).to_flat() };
    let (x, _) = gmres(apply, pre, &y.to_flat(), None, GmresOptions { tol, restart: 150, max_iter: 6000 })?;
    Ok(CVec::from_flat(grid, &x))
}

/// Riesz projection `(i/2π)∮(H_ω - z)⁻¹dz` around `center`, by the
/// trapezoidal rule on a circle.
pub fn riesz_projection(op: &LinearizedOperator, center: f64, radius: f64, nodes: usize, x: &CVec) -> Result<CVec> {
    let mut acc = CVec::zeros(op.grid());
    for k in 0..nodes {
        let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / nodes as f64;
        let eith = Complex64::from_polar(1.0, th);
        let z = center + radius * eith;
        let r = solve_shifted_h(op, z, x, 1e-10)?;
        acc = acc.axpy(-(radius / nodes as f64) * eith, &r);
    }
    Ok(acc)
}

/// Carries a frame to a nearby frequency by contour projection of the old
/// eigenvectors onto the new spectral subspaces.
pub fn continue_frame(op: &LinearizedOperator, old: &SpectralFrame, nodes: usize) -> Result<SpectralFrame> {
    let mut vectors = Vec::with_capacity(old.len());
    let mut eigenvalues = Vec::with_capacity(old.len());
    for (j, (x, &e)) in old.vectors.iter().zip(&old.eigenvalues).enumerate() {
        // stay clear of the neighbours, the threshold and the origin
        let mut gap = e.min(op.omega - e);
        for (k, &f) in old.eigenvalues.iter().enumerate() {
            if k != j {
                gap = gap.min((f - e).abs());
            }
        }
        let p = riesz_projection(op, e, 0.5 * gap, nodes, x)?;
        let k = p.krein(&p).re;
        if !(k > 0.0) {
            return Err(Error::KreinNegative(k));
        }
        let p = p.scale(Complex64::new(1.0 / k.sqrt(), 0.0));
        let hp = op.apply_h(&p);
        eigenvalues.push(hp.krein(&p).re);
        vectors.push(p);
    }
    let vectors = symplectic_gram_schmidt(&vectors)?;
    let multiplicities = eigenvalues.iter().map(|&e| multiplicity(e, op.omega)).collect();
    Ok(SpectralFrame { omega: op.omega, eigenvalues, vectors, multiplicities })
}

/// Projections attached to a manifold point and its internal-mode frame.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub point: SolitonManifoldPoint,
    /// `J◇_jΦ_p` for `j = 1..dim+1` followed by `∂_{p_j}Φ_p`.
    pub kernel_basis: Vec<ComplexField>,
    /// `J∂_{p_j}Φ_p` followed by `◇_jΦ_p`.
    pub duals: Vec<ComplexField>,
    /// `[⟨b_α, d_β⟩]`, the identity up to discretization.
    pub gram: Vec<Vec<f64>>,
    gram_inv: DMatrix<f64>,
    pub frame: SpectralFrame,
}

/// `(∂_{p_1}Φ_p, …, ∂_{p_{dim+1}}Φ_p)` by the chain rule through `(ω, v)`.
pub fn dphi_dp(family: &SolitonFamily, point: &SolitonManifoldPoint) -> Result<Vec<ComplexField>> {
    let grid = family.grid();
    let dim = grid.dim();
    let phi = family.phi(point.omega)?;
    let pi4 = 0.5 * phi.norm_sq();
    let slope = family.charge_slope(point.omega)?;
    let d_omega = galilean_boost(&*family.d_omega_phi(point.omega)?, &point.v);
    // ∂_{v_a}Φ = i (x_a/2) Φ
    let d_v: Vec<ComplexField> = (0..dim)
        .map(|a| {
            let xa: Vec<f64> = grid.points().map(|x| 0.5 * x[a]).collect();
            point.field.mul_real(&xa).apply_j_inv()
        })
        .collect();
    let mut out: Vec<ComplexField> = d_v.iter().map(|f| f.scaled(2.0 / pi4)).collect();
    let mut last = d_omega.scaled(1.0 / slope);
    for a in 0..dim {
        last = last.axpy(-point.v[a] / pi4, &d_v[a]);
    }
    out.push(last);
    Ok(out)
}

pub fn projections(family: &SolitonFamily, point: &SolitonManifoldPoint, frame: &SpectralFrame) -> Result<ProjectionSet> {
    let dim = family.grid().dim();
    let dp = dphi_dp(family, point)?;
    let diamonds: Vec<ComplexField> = MultiIndexAxis::all(dim).map(|a| apply_diamond(&point.field, a)).collect();
    let mut kernel_basis: Vec<ComplexField> = diamonds.iter().map(|d| d.apply_j()).collect();
    kernel_basis.extend(dp.iter().cloned());
    let mut duals: Vec<ComplexField> = dp.iter().map(|d| d.apply_j()).collect();
    duals.extend(diamonds.iter().cloned());
    let m = kernel_basis.len();
    let mut g = DMatrix::zeros(m, m);
    let mut gram = vec![vec![0.0; m]; m];
    for b in 0..m {
        for a in 0..m {
            let v = pairing_unchecked(&kernel_basis[a], &duals[b]);
            g[(b, a)] = v;
            gram[b][a] = v;
        }
    }
    let svd = g.clone().svd(false, false);
    let smin = svd.singular_values.min();
    if smin < 1e-6 {
        return Err(Error::Degenerate(format!("generalized-kernel Gram matrix near singular (σ_min = {smin:e})")));
    }
    let gram_inv = g.try_inverse().ok_or_else(|| Error::Degenerate("singular Gram matrix".into()))?;
    Ok(ProjectionSet { point: point.clone(), kernel_basis, duals, gram, gram_inv, frame: frame.clone() })
}

impl ProjectionSet {
    pub fn dim(&self) -> usize {
        self.point.v.len()
    }

    pub fn apply_png(&self, x: &ComplexField) -> ComplexField {
        let m = self.kernel_basis.len();
        let rhs = nalgebra::DVector::from_iterator(m, self.duals.iter().map(|d| pairing_unchecked(x, d)));
        let c = &self.gram_inv * rhs;
        let mut out = ComplexField::zeros(x.grid());
        for (a, b) in self.kernel_basis.iter().enumerate() {
            out.axpy_in_place(c[a], b);
        }
        out
    }

    /// `P = 1 - P_{N_g}`.
    pub fn apply_p(&self, x: &ComplexField) -> ComplexField {
        x.sub(&self.apply_png(x))
    }

    /// `z_j = -i⟨J⁻¹x, ξ̄_j⟩` for a real field `x`.
    pub fn frame_coordinates(&self, x: &ComplexField) -> Vec<Complex64> {
        let xc = CVec::from_field(x);
        self.frame.vectors.iter().map(|xi| xc.krein(xi)).collect()
    }

    /// `Σ z_jξ_j + z̄_jξ̄_j` as a real field.
    pub fn frame_synthesis(&self, z: &[Complex64]) -> ComplexField {
        let mut out = ComplexField::zeros(&self.point.field.grid().clone());
        for (zj, xi) in z.iter().zip(&self.frame.vectors) {
            out.axpy_in_place(2.0, &xi.scale(*zj).real_part());
        }
        out
    }

    pub fn apply_pc(&self, x: &ComplexField) -> ComplexField {
        let px = self.apply_p(x);
        let z = self.frame_coordinates(&px);
        px.sub(&self.frame_synthesis(&z))
    }

    /// `P_c` on a complexified field, by linearity.
    pub fn apply_pc_c(&self, x: &CVec) -> CVec {
        CVec::from_parts(&self.apply_pc(&x.real_part()), &self.apply_pc(&x.imag_part()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResonanceClass {
    Null,
    Continuous,
    Neither,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonanceEntry {
    pub mu: Vec<u32>,
    pub nu: Vec<u32>,
    pub value: f64,
    pub class: ResonanceClass,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonanceTable {
    pub omega: f64,
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub tolerance: f64,
    pub entries: Vec<ResonanceEntry>,
    pub warnings: Vec<String>,
}

fn multi_indices(n: usize, max: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::new();
        for m in &out {
            let used: u32 = m.iter().sum();
            for k in 0..=(max - used) {
                let mut v = m.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Classifies `e·(μ - ν)` for `μ, ν ∈ ℕⁿ`: null classes with
/// `|μ| + |ν| ≤ 2N + 2`, continuous classes with `|μ| + |ν| ≤ N + 1`.
pub fn resonance_scan(eigenvalues: &[f64], omega: f64, n: usize) -> ResonanceTable {
    let tol = 1e-6 * omega;
    let dim = eigenvalues.len();
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    if dim == 0 {
        return ResonanceTable { omega, eigenvalues: vec![], n, tolerance: tol, entries, warnings };
    }
    let cap = (2 * n + 2) as u32;
    let all = multi_indices(dim, cap);
    let dot = |m: &[u32]| m.iter().zip(eigenvalues).map(|(&k, e)| k as f64 * e).sum::<f64>();
    for mu in &all {
        let smu: u32 = mu.iter().sum();
        for nu in &all {
            let snu: u32 = nu.iter().sum();
            if smu + snu > cap {
                continue;
            }
            let value = dot(mu) - dot(nu);
            let class = if value.abs() < tol {
                ResonanceClass::Null
            } else if value.abs() > omega && smu + snu <= (n + 1) as u32 {
                ResonanceClass::Continuous
            } else {
                ResonanceClass::Neither
            };
            if class == ResonanceClass::Null && mu != nu {
                warnings.push(format!("(H9): e·(μ-ν) = 0 with μ = {mu:?} ≠ ν = {nu:?}"));
            }
            entries.push(ResonanceEntry { mu: mu.clone(), nu: nu.clone(), value, class });
        }
    }
    for mu in &all {
        if mu.iter().sum::<u32>() == 0 {
            continue;
        }
        if (dot(mu) - omega).abs() < tol {
            warnings.push(format!("(H8): μ·e = ω at μ = {mu:?} (|μ| = {})", mu.iter().sum::<u32>()));
        }
    }
    ResonanceTable { omega, eigenvalues: eigenvalues.to_vec(), n, tolerance: tol, entries, warnings }
}

/// True when two tables agree class by class.
pub fn same_classification(a: &ResonanceTable, b: &ResonanceTable) -> bool {
    a.entries.len() == b.entries.len() && a.entries.iter().zip(&b.entries).all(|(x, y)| x.class == y.class)
}

/// One `ζ^α G_α` contribution at frequency `Λ = e·α`; `g` is given in the
/// `(u, ū)` coordinates of `K_ω`.
#[derive(Debug, Clone)]
pub struct FgrTerm {
    pub alpha: Vec<u32>,
    pub lambda: f64,
    pub g: CVec,
}

fn zeta_power(zeta: &[Complex64], alpha: &[u32]) -> Complex64 {
    zeta.iter().zip(alpha).map(|(z, &k)| z.powu(k)).product()
}

/// `Γ(ζ) = 4 Σ_Λ Λ Im⟨(K_ω - Λ - iη)⁻¹ Ψ_Λ, σ₃ Ψ̄_Λ⟩` with
/// `Ψ_Λ = Σ_{e·α = Λ} ζ^α G_α`.
pub fn fgr_gamma(op: &LinearizedOperator, terms: &[FgrTerm], zeta: &[Complex64], eta: f64) -> Result<f64> {
    let omega = op.omega;
    let mut lambdas: Vec<f64> = Vec::new();
    for t in terms {
        if t.lambda <= omega {
            return Err(Error::invalid(format!("Λ = {} is not above ω = {omega}", t.lambda)));
        }
        if !lambdas.iter().any(|l| (l - t.lambda).abs() < 1e-12 * omega) {
            lambdas.push(t.lambda);
        }
    }
    let mut gamma = 0.0;
    for &lam in &lambdas {
        let mut psi = CVec::zeros(op.grid());
        for t in terms.iter().filter(|t| (t.lambda - lam).abs() < 1e-12 * omega) {
            psi = psi.axpy(zeta_power(zeta, &t.alpha), &t.g);
        }
        if psi.norm() == 0.0 {
            continue;
        }
        let mut eta_used = eta;
        let x = loop {
            match solve_shifted_k(op, Complex64::new(lam, eta_used), &psi, 1e-11) {
                Ok(x) => break x,
                Err(Error::NonConvergence { .. }) if eta_used < 4.0 * eta => eta_used *= 1.5,
                Err(e) => return Err(e),
            }
        };
        let pb = psi.conj();
        let s3 = CVec::new(op.grid(), pb.a.clone(), pb.b.iter().map(|c| -c).collect());
        gamma += 4.0 * lam * x.bilinear(&s3).im;
    }
    Ok(gamma)
}

/// Random localized `G_α` for every `α` with `|α| = N + 1` and `e·α > ω`,
/// projected by `P_c` (in `(a, b)` coordinates) and scaled to unit norm.
pub fn synthetic_fgr_terms<R: Rng>(proj: &ProjectionSet, rng: &mut R) -> Result<Vec<FgrTerm>> {
    let frame = &proj.frame;
    if frame.is_empty() {
        return Err(Error::invalid("the Fermi golden rule form needs at least one internal mode"));
    }
    let grid = proj.point.field.grid().clone();
    let dim = grid.dim();
    let order = (frame.n() + 1) as u32;
    let mut terms = Vec::new();
    for alpha in multi_indices(frame.len(), order) {
        if alpha.iter().sum::<u32>() != order {
            continue;
        }
        let lambda: f64 = alpha.iter().zip(&frame.eigenvalues).map(|(&k, e)| k as f64 * e).sum();
        if lambda <= frame.omega {
            continue;
        }
        let bumps: Vec<(Vec<f64>, f64, Complex64, Complex64)> = (0..3)
            .map(|_| {
                let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
                let w = rng.random_range(0.5..2.0);
                let amp = |rng: &mut R| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (c, w, amp(rng), amp(rng))
            })
            .collect();
        let mut a = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut b = a.clone();
        for (i, x) in grid.points().enumerate() {
            for (c, w, ca, cb) in &bumps {
                let r2: f64 = c.iter().zip(&x[..dim]).map(|(ci, xi)| (xi - ci).powi(2)).sum();
                let g = (-r2 / (w * w)).exp();
                a[i] += ca * g;
                b[i] += cb * g;
            }
        }
        let raw = m_apply(&CVec::new(&grid, a, b));
        let g = m_inv_apply(&proj.apply_pc_c(&raw));
        let norm = g.norm();
        if norm == 0.0 {
            return Err(Error::Degenerate("projected FGR vector vanished".into()));
        }
        terms.push(FgrTerm { alpha, lambda, g: g.scale(Complex64::new(1.0 / norm, 0.0)) });
    }
    Ok(terms)
}

/// `ζ ∈ ℂⁿ` with independent components in the unit disc.
pub fn random_zeta<R: Rng>(n: usize, rng: &mut R) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::from_polar(rng.random_range(0.0f64..1.0).sqrt(), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FgrLadder {
    pub etas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Richardson-style linear extrapolation to `η = 0` from the last two rungs.
    pub extrapolated: f64,
}

pub const ETA_LADDER: [f64; 3] = [1e-1, 3e-2, 1e-2];

pub fn fgr_ladder(op: &LinearizedOperator, terms: &[FgrTerm], zeta: &[Complex64]) -> Result<FgrLadder> {
    let gammas = ETA_LADDER
        .iter()
        .map(|&eta| fgr_gamma(op, terms, zeta, eta))
        .collect::<Result<Vec<_>>>()?;
    let (e1, e2) = (ETA_LADDER[1], ETA_LADDER[2]);
    let (g1, g2) = (gammas[1], gammas[2]);
    let extrapolated = g2 - e2 * (g1 - g2) / (e1 - e2);
    Ok(FgrLadder { etas: ETA_LADDER.to_vec(), gammas, extrapolated })
}

/// `p = Π(Φ_p)` recomputed by quadrature, for consistency checks.
pub fn momenta_of(point: &SolitonManifoldPoint) -> Vec<f64> {
    charge_momenta(&point.field)
}

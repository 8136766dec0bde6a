//! Periodic grids, ℝ²-valued fields and the spectral calculus on them.
//!
//! A complex field `u = re + i·im` is stored as the real pair `(re, im)`.
//! The symplectic matrix is `J = [[0, 1], [-1, 0]]`, so `J(re, im) = (im, -re)`
//! and multiplication by `i` is `J⁻¹ = -J`. With this convention the
//! symplectic form `Ω(f, g) = ⟨J⁻¹f, g⟩ = -Im ∫ f ḡ`, and for `f = 1`,
//! `g = i` on `[-1, 1)` one gets `Ω(f, g) = +2`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

struct GridInner {
    dim: usize,
    n: usize,
    half_width: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    axis: Vec<f64>,
    wavenumbers: Vec<f64>,
}

/// Uniform periodic grid on `[-L, L)^dim` with `n` points per axis.
///
/// Cloning is cheap; FFT plans are shared between clones.
#[derive(Clone)]
pub struct Grid(Arc<GridInner>);

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.0.dim)
            .field("points_per_axis", &self.0.n)
            .field("box_half_width", &self.0.half_width)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.dim == other.0.dim
                && self.0.n == other.0.n
                && self.0.half_width == other.0.half_width)
    }
}

impl Grid {
    pub fn new(dim: usize, points_per_axis: usize, box_half_width: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if points_per_axis < 8 || !points_per_axis.is_power_of_two() {
            return Err(Error::invalid(format!(
                "points_per_axis must be a power of two >= 8, got {points_per_axis}"
            )));
        }
        if !(box_half_width > 0.0 && box_half_width.is_finite()) {
            return Err(Error::invalid("box_half_width must be positive"));
        }
        let n = points_per_axis;
        let h = 2.0 * box_half_width / n as f64;
        let axis = (0..n).map(|j| -box_half_width + j as f64 * h).collect();
        let dk = std::f64::consts::PI / box_half_width;
        let wavenumbers = (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
                m as f64 * dk
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Grid(Arc::new(GridInner {
            dim,
            n,
            half_width: box_half_width,
            forward,
            inverse,
            axis,
            wavenumbers,
        })))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.0.n
    }

    pub fn half_width(&self) -> f64 {
        self.0.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.0.half_width / self.0.n as f64
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.0.n.pow(self.0.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.0.dim as i32)
    }

    pub fn axis_coords(&self) -> &[f64] {
        &self.0.axis
    }

    /// Symmetric integer lattice scaled by `π/L`; the Nyquist entry is negative.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.0.wavenumbers
    }

    pub fn nyquist_index(&self) -> usize {
        self.0.n / 2
    }

    /// Per-axis indices of a flat row-major index.
    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for a in (0..self.0.dim).rev() {
            out[a] = idx % self.0.n;
            idx /= self.0.n;
        }
        out
    }

    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.0.dim {
            x[a] = self.0.axis[mi[a]];
        }
        x
    }

    pub fn k_vector(&self, idx: usize) -> [f64; MAX_DIM] {
        let mi = self.multi_index(idx);
        let mut k = [0.0; MAX_DIM];
        for a in 0..self.0.dim {
            k[a] = self.0.wavenumbers[mi[a]];
        }
        k
    }

    /// Iterator over all point coordinates in storage order.
    pub fn points(&self) -> impl Iterator<Item = [f64; MAX_DIM]> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Wraps a displacement into `[-L, L)`.
    pub fn min_image(&self, d: f64) -> f64 {
        let l = self.0.half_width;
        let w = 2.0 * l;
        let r = (d + l).rem_euclid(w) - l;
        if r >= l {
            r - w
        } else {
            r
        }
    }

    /// Same box, different resolution.
    pub fn resampled(&self, points_per_axis: usize) -> Result<Grid> {
        Grid::new(self.0.dim, points_per_axis, self.0.half_width)
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.0.forward);
    }

    /// Inverse transform in place, including the `1/len` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.0.inverse);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    /// Applies a radial Fourier multiplier `m(|k|²)` to a real array.
    pub fn real_multiplier(&self, x: &[f64], m: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut data: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut data);
        for (idx, c) in data.iter_mut().enumerate() {
            let k = self.k_vector(idx);
            *c *= m(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
        }
        self.inverse(&mut data);
        data.iter().map(|c| c.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.0.n;
        let dim = self.0.dim;
        assert_eq!(data.len(), self.len(), "buffer does not match grid");
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // last axis is contiguous
        plan.process_with_scratch(data, &mut scratch);
        if dim == 1 {
            return;
        }
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for a in 0..dim - 1 {
            let stride = n.pow((dim - 1 - a) as u32);
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for j in 0..n {
                        line[j] = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for j in 0..n {
                        data[base + j * stride] = line[j];
                    }
                }
            }
        }
    }
}

/// Discretized ℂ-valued function stored as the real pair `(re, im)`.
#[derive(Clone, Debug)]
pub struct ComplexField {
    grid: Grid,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexField {
    pub fn zeros(grid: &Grid) -> Self {
        ComplexField {
            grid: grid.clone(),
            re: vec![0.0; grid.len()],
            im: vec![0.0; grid.len()],
        }
    }

    pub fn from_parts(grid: &Grid, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != grid.len() || im.len() != grid.len() {
            return Err(Error::invalid(format!(
                "component lengths {}/{} do not match grid size {}",
                re.len(),
                im.len(),
                grid.len()
            )));
        }
        if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("field contains non-finite values"));
        }
        Ok(ComplexField {
            grid: grid.clone(),
            re,
            im,
        })
    }

    /// Real-valued field (`im = 0`).
    pub fn real(grid: &Grid, re: Vec<f64>) -> Result<Self> {
        let im = vec![0.0; re.len()];
        Self::from_parts(grid, re, im)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.len() {
            let x = grid.point(i);
            let c = f(&x[..grid.dim()]);
            out.re[i] = c.re;
            out.im[i] = c.im;
        }
        out
    }

    pub fn from_complex(grid: &Grid, data: &[Complex64]) -> Self {
        assert_eq!(data.len(), grid.len());
        ComplexField {
            grid: grid.clone(),
            re: data.iter().map(|c| c.re).collect(),
            im: data.iter().map(|c| c.im).collect(),
        }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    /// `[re..., im...]`, the layout used by the linear solvers.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.re.len());
        v.extend_from_slice(&self.re);
        v.extend_from_slice(&self.im);
        v
    }

    pub fn from_flat(grid: &Grid, flat: &[f64]) -> Self {
        let n = grid.len();
        assert_eq!(flat.len(), 2 * n);
        ComplexField {
            grid: grid.clone(),
            re: flat[..n].to_vec(),
            im: flat[n..].to_vec(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub fn value(&self, idx: usize) -> Complex64 {
        Complex64::new(self.re[idx], self.im[idx])
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn check_grid(&self, other: &ComplexField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map_pair(|r, i| (a * r, a * i))
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &ComplexField) -> Self {
        debug_assert!(self.grid == other.grid);
        let mut out = self.clone();
        out.axpy_in_place(a, other);
        out
    }

    pub fn axpy_in_place(&mut self, a: f64, other: &ComplexField) {
        for (x, y) in self.re.iter_mut().zip(&other.re) {
            *x += a * y;
        }
        for (x, y) in self.im.iter_mut().zip(&other.im) {
            *x += a * y;
        }
    }

    pub fn add(&self, other: &ComplexField) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ComplexField) -> Self {
        self.axpy(-1.0, other)
    }

    /// Complex scalar multiple.
    pub fn mul_complex(&self, c: Complex64) -> Self {
        self.map_pair(|r, i| {
            let z = c * Complex64::new(r, i);
            (z.re, z.im)
        })
    }

    /// `J(re, im) = (im, -re)`.
    pub fn apply_j(&self) -> Self {
        self.map_pair(|r, i| (i, -r))
    }

    /// `J⁻¹ = -J`, i.e. multiplication by `i`.
    pub fn apply_j_inv(&self) -> Self {
        self.map_pair(|r, i| (-i, r))
    }

    /// Pointwise product with a real weight.
    pub fn mul_real(&self, w: &[f64]) -> Self {
        debug_assert_eq!(w.len(), self.re.len());
        ComplexField {
            grid: self.grid.clone(),
            re: self.re.iter().zip(w).map(|(a, b)| a * b).collect(),
            im: self.im.iter().zip(w).map(|(a, b)| a * b).collect(),
        }
    }

    /// Pointwise product with a complex function.
    pub fn mul_pointwise(&self, w: &[Complex64]) -> Self {
        debug_assert_eq!(w.len(), self.re.len());
        let mut out = self.clone();
        for (idx, c) in w.iter().enumerate() {
            let z = c * Complex64::new(self.re[idx], self.im[idx]);
            out.re[idx] = z.re;
            out.im[idx] = z.im;
        }
        out
    }

    pub fn modulus_sq(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .collect()
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.grid.cell_volume() * self.modulus_sq().iter().sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.modulus_sq()
            .into_iter()
            .fold(0.0_f64, f64::max)
            .sqrt()
    }

    /// `‖f‖_{H¹}` with the spectral gradient.
    pub fn norm_h1(&self) -> f64 {
        let mut s = self.norm_sq();
        for a in 0..self.grid.dim() {
            s += self.derivative(a).norm_sq();
        }
        s.sqrt()
    }

    fn map_pair(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut re = Vec::with_capacity(self.re.len());
        let mut im = Vec::with_capacity(self.im.len());
        for (&r, &i) in self.re.iter().zip(&self.im) {
            let (a, b) = f(r, i);
            re.push(a);
            im.push(b);
        }
        ComplexField {
            grid: self.grid.clone(),
            re,
            im,
        }
    }

    /// Applies `û(k) ↦ m(k) û(k)`.
    pub fn fourier_multiply(&self, m: impl Fn(&[f64; MAX_DIM], [usize; MAX_DIM]) -> Complex64) -> Self {
        let mut data = self.to_complex();
        self.grid.forward(&mut data);
        for (idx, c) in data.iter_mut().enumerate() {
            let k = self.grid.k_vector(idx);
            *c *= m(&k, self.grid.multi_index(idx));
        }
        self.grid.inverse(&mut data);
        Self::from_complex(&self.grid, &data)
    }

    /// Spectral `∂_{x_axis}` (0-based axis); the Nyquist mode is dropped.
    pub fn derivative(&self, axis: usize) -> Self {
        assert!(axis < self.grid.dim());
        let nyq = self.grid.nyquist_index();
        self.fourier_multiply(|k, mi| {
            if mi[axis] == nyq {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k[axis])
            }
        })
    }

    pub fn laplacian(&self) -> Self {
        self.fourier_multiply(|k, _| Complex64::new(-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]), 0.0))
    }

    /// Mixed spectral derivative `∂^α`.
    pub fn derivative_multi(&self, alpha: &[usize]) -> Self {
        let nyq = self.grid.nyquist_index();
        let dim = self.grid.dim();
        self.fourier_multiply(|k, mi| {
            let mut m = Complex64::new(1.0, 0.0);
            for a in 0..dim {
                if alpha[a] == 0 {
                    continue;
                }
                if alpha[a] % 2 == 1 && mi[a] == nyq {
                    return Complex64::new(0.0, 0.0);
                }
                m *= Complex64::new(0.0, k[a]).powu(alpha[a] as u32);
            }
            m
        })
    }

    /// Reflection `x ↦ -x` through the origin on every axis.
    pub fn reflected(&self) -> Self {
        let n = self.grid.points_per_axis();
        let dim = self.grid.dim();
        let mut out = Self::zeros(&self.grid);
        for idx in 0..self.grid.len() {
            let mi = self.grid.multi_index(idx);
            let mut j = 0;
            for a in 0..dim {
                j = j * n + (n - mi[a]) % n;
            }
            out.re[j] = self.re[idx];
            out.im[j] = self.im[idx];
        }
        out
    }

    /// Spectral interpolation onto a grid with the same box and a different
    /// resolution (zero padding or truncation of the spectrum).
    pub fn resample(&self, target: &Grid) -> Result<Self> {
        if target.dim() != self.grid.dim() || target.half_width() != self.grid.half_width() {
            return Err(Error::invalid("resampling needs the same box and dimension"));
        }
        let n_src = self.grid.points_per_axis();
        let n_dst = target.points_per_axis();
        let dim = self.grid.dim();
        let mut src = self.to_complex();
        self.grid.forward(&mut src);
        let mut dst = vec![Complex64::new(0.0, 0.0); target.len()];
        let nmin = n_src.min(n_dst);
        let map = |j: usize, from: usize, to: usize| -> Option<usize> {
            // signed mode number, dropping the ambiguous Nyquist mode
            let m = if j < from / 2 { j as i64 } else { j as i64 - from as i64 };
            if m.unsigned_abs() as usize >= nmin / 2 {
                None
            } else if m >= 0 {
                Some(m as usize)
            } else {
                Some((to as i64 + m) as usize)
            }
        };
        'outer: for idx in 0..self.grid.len() {
            let mi = self.grid.multi_index(idx);
            let mut j = 0;
            for a in 0..dim {
                match map(mi[a], n_src, n_dst) {
                    Some(t) => j = j * n_dst + t,
                    None => continue 'outer,
                }
            }
            dst[j] = src[idx];
        }
        let scale = (n_dst as f64 / n_src as f64).powi(dim as i32);
        dst.iter_mut().for_each(|c| *c *= scale);
        target.inverse(&mut dst);
        Ok(Self::from_complex(target, &dst))
    }
}

/// Selects `◇_a = J∂_{x_a}` for `a ≤ dim` or the charge operator `◇_{dim+1} = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiIndexAxis {
    index: usize,
    dim: usize,
}

impl MultiIndexAxis {
    /// `a` is 1-based: `1..=dim` are translations, `dim + 1` is the charge.
    pub fn new(dim: usize, a: usize) -> Result<Self> {
        if a == 0 || a > dim + 1 {
            return Err(Error::invalid(format!("axis {a} out of range 1..={}", dim + 1)));
        }
        Ok(MultiIndexAxis { index: a - 1, dim })
    }

    pub fn translation(dim: usize, axis0: usize) -> Self {
        assert!(axis0 < dim);
        MultiIndexAxis { index: axis0, dim }
    }

    pub fn charge(dim: usize) -> Self {
        MultiIndexAxis { index: dim, dim }
    }

    /// All `dim + 1` axes in order.
    pub fn all(dim: usize) -> impl Iterator<Item = MultiIndexAxis> {
        (0..=dim).map(move |index| MultiIndexAxis { index, dim })
    }

    pub fn is_charge(&self) -> bool {
        self.index == self.dim
    }

    /// 0-based position in `(Π_1, …, Π_dim, Π_{dim+1})`.
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Group parameters `τ = (D, -θ)` acting by `u ↦ e^{iθ} u(· - D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub shift: Vec<f64>,
    pub minus_theta: f64,
}

impl GroupElement {
    pub fn identity(dim: usize) -> Self {
        GroupElement {
            shift: vec![0.0; dim],
            minus_theta: 0.0,
        }
    }

    pub fn new(shift: Vec<f64>, minus_theta: f64) -> Self {
        GroupElement { shift, minus_theta }
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            shift: self.shift.iter().zip(&other.shift).map(|(a, b)| a + b).collect(),
            minus_theta: self.minus_theta + other.minus_theta,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            shift: self.shift.iter().map(|a| -a).collect(),
            minus_theta: -self.minus_theta,
        }
    }

    /// Flattened `(D_1, …, D_dim, -θ)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.shift.clone();
        v.push(self.minus_theta);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let (d, t) = v.split_at(v.len() - 1);
        GroupElement {
            shift: d.to_vec(),
            minus_theta: t[0],
        }
    }
}

/// `Re ∫ f ḡ dx`.
pub fn pairing(f: &ComplexField, g: &ComplexField) -> Result<f64> {
    f.check_grid(g)?;
    Ok(pairing_unchecked(f, g))
}

pub(crate) fn pairing_unchecked(f: &ComplexField, g: &ComplexField) -> f64 {
    let s: f64 = f.re.iter().zip(&g.re).map(|(a, b)| a * b).sum::<f64>()
        + f.im.iter().zip(&g.im).map(|(a, b)| a * b).sum::<f64>();
    s * f.grid.cell_volume()
}

/// `Ω(f, g) = ⟨J⁻¹f, g⟩`.
pub fn symplectic_form(f: &ComplexField, g: &ComplexField) -> Result<f64> {
    f.check_grid(g)?;
    // J⁻¹(a, b) = (-b, a)
    let s: f64 = f
        .re
        .iter()
        .zip(&f.im)
        .zip(g.re.iter().zip(&g.im))
        .map(|((fr, fi), (gr, gi))| -fi * gr + fr * gi)
        .sum();
    Ok(s * f.grid.cell_volume())
}

pub fn apply_diamond(f: &ComplexField, axis: MultiIndexAxis) -> ComplexField {
    if axis.is_charge() {
        f.clone()
    } else {
        f.derivative(axis.index).apply_j()
    }
}

fn multi_indices(dim: usize, max_order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; dim];
    fn rec(a: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if a == cur.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur[a] = k;
            rec(a + 1, left - k, cur, out);
        }
        cur[a] = 0;
    }
    rec(0, max_order, &mut cur, &mut out);
    out
}

/// `Σ_n` norm: `‖u‖²_{L²} + Σ_{1≤|α|≤n} (‖x^α u‖² + ‖∂^α u‖²)`, so `n = 0` is
/// the plain `L²` norm.
pub fn sigma_norm(f: &ComplexField, n: usize) -> Result<f64> {
    if n > 4 {
        return Err(Error::invalid("sigma_norm supports n <= 4"));
    }
    let grid = f.grid();
    let dim = grid.dim();
    let mut total = f.norm_sq();
    for alpha in multi_indices(dim, n) {
        let order: usize = alpha.iter().sum();
        if order == 0 {
            continue;
        }
        let weight: Vec<f64> = grid
            .points()
            .map(|x| (0..dim).map(|a| x[a].powi(alpha[a] as i32)).product())
            .collect();
        total += f.mul_real(&weight).norm_sq();
        total += f.derivative_multi(&alpha).norm_sq();
    }
    Ok(total.sqrt())
}

/// `‖⟨x - c⟩^{-σ} f‖_{L²}` with minimum-image distances.
pub fn weighted_l2(f: &ComplexField, sigma: f64, center: &[f64]) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("weighted_l2 needs sigma > 0"));
    }
    let grid = f.grid();
    if center.len() != grid.dim() {
        return Err(Error::invalid("center has wrong dimension"));
    }
    let weight: Vec<f64> = grid
        .points()
        .map(|x| {
            let r2: f64 = (0..grid.dim())
                .map(|a| grid.min_image(x[a] - center[a]).powi(2))
                .sum();
            (1.0 + r2).powf(-sigma / 2.0)
        })
        .collect();
    Ok(f.mul_real(&weight).norm_l2())
}

/// Spectral translation by `D` (multiplier `e^{-ik·D}`).
pub fn translate(f: &ComplexField, shift: &[f64]) -> ComplexField {
    let dim = f.grid().dim();
    if shift.iter().all(|&d| d == 0.0) {
        return f.clone();
    }
    f.fourier_multiply(|k, _| {
        let phase: f64 = (0..dim).map(|a| k[a] * shift[a]).sum();
        Complex64::from_polar(1.0, -phase)
    })
}

/// `e^{Jτ·◇} u = e^{iθ} u(· - D)` for `τ = (D, -θ)`.
pub fn group_action(f: &ComplexField, tau: &GroupElement) -> ComplexField {
    let shifted = translate(f, &tau.shift);
    if tau.minus_theta == 0.0 {
        shifted
    } else {
        shifted.mul_complex(Complex64::from_polar(1.0, -tau.minus_theta))
    }
}

/// `e^{-½Jv·x} u = e^{i v·x/2} u`, with `x` the grid coordinate in `[-L, L)`.
pub fn galilean_boost(f: &ComplexField, v: &[f64]) -> ComplexField {
    let grid = f.grid();
    let dim = grid.dim();
    if v.iter().all(|&c| c == 0.0) {
        return f.clone();
    }
    let phase: Vec<Complex64> = grid
        .points()
        .map(|x| {
            let s: f64 = (0..dim).map(|a| v[a] * x[a]).sum();
            Complex64::from_polar(1.0, 0.5 * s)
        })
        .collect();
    f.mul_pointwise(&phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // smooth random field: random low modes times a Gaussian envelope
        let mut data = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (idx, c) in data.iter_mut().enumerate() {
            let k = grid.k_vector(idx);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            let amp = (-k2 / 4.0).exp();
            *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * amp;
        }
        grid.inverse(&mut data);
        let f = ComplexField::from_complex(grid, &data);
        let env: Vec<f64> = grid
            .points()
            .map(|x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 20.0).exp())
            .collect();
        let f = f.mul_real(&env);
        f.scaled(1.0 / f.norm_l2())
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0, 16, 1.0).is_err());
        assert!(Grid::new(1, 12, 1.0).is_err());
        assert!(Grid::new(1, 4, 1.0).is_err());
        assert!(Grid::new(1, 16, -1.0).is_err());
        let g = Grid::new(2, 16, 2.0).unwrap();
        assert_eq!(g.len(), 256);
        assert!((g.spacing() - 0.25).abs() < 1e-15);
        assert_eq!(g.wavenumbers()[8], -8.0 * std::f64::consts::PI / 2.0);
    }

    #[test]
    fn pairing_of_constants() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let one = ComplexField::from_fn(&g, |_| Complex64::new(1.0, 0.0));
        let i1 = ComplexField::from_fn(&g, |_| Complex64::new(0.0, 1.0));
        assert!((pairing(&one, &one).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(pairing(&one, &i1).unwrap(), 0.0);
    }

    #[test]
    fn pairing_of_sech_squared() {
        let g = Grid::new(1, 1024, 20.0).unwrap();
        let s = ComplexField::from_fn(&g, |x| Complex64::new(1.0 / x[0].cosh(), 0.0));
        assert!((pairing(&s, &s).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = ComplexField::zeros(&Grid::new(1, 16, 1.0).unwrap());
        let b = ComplexField::zeros(&Grid::new(1, 32, 1.0).unwrap());
        assert!(matches!(pairing(&a, &b), Err(Error::GridMismatch)));
        assert!(matches!(symplectic_form(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn j_sign_convention() {
        // multiplication by i is J⁻¹, and Ω(1, i) = +2 on [-1, 1)
        let g = Grid::new(1, 16, 1.0).unwrap();
        let one = ComplexField::from_fn(&g, |_| Complex64::new(1.0, 0.0));
        let i1 = ComplexField::from_fn(&g, |_| Complex64::new(0.0, 1.0));
        let ione = one.apply_j_inv();
        assert_eq!(ione.re(), i1.re());
        assert_eq!(ione.im(), i1.im());
        assert_eq!(one.apply_j().apply_j().re(), one.scaled(-1.0).re());
        assert!((symplectic_form(&one, &i1).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(symplectic_form(&one, &one).unwrap(), 0.0);
    }

    #[test]
    fn symplectic_antisymmetry_and_positivity() {
        let g = Grid::new(1, 128, 10.0).unwrap();
        for seed in 0..5 {
            let f = random_field(&g, seed);
            let h = random_field(&g, seed + 100);
            let s = symplectic_form(&f, &h).unwrap() + symplectic_form(&h, &f).unwrap();
            assert!(s.abs() < 1e-14);
            let jf = f.apply_j();
            let lhs = symplectic_form(&jf, &f).unwrap();
            assert!((lhs - pairing(&f, &f).unwrap()).abs() < 1e-14);
            assert!(lhs >= 0.0);
        }
    }

    #[test]
    fn diamond_on_fourier_mode() {
        let g = Grid::new(1, 64, std::f64::consts::PI).unwrap();
        let k = 3.0;
        let f = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, k * x[0]));
        let d = apply_diamond(&f, MultiIndexAxis::new(1, 1).unwrap());
        // J(ik e^{ikx}) = -i * ik e^{ikx} = k e^{ikx}
        let expected = f.scaled(k);
        assert!(d.sub(&expected).max_abs() < 1e-12);
        let id = apply_diamond(&f, MultiIndexAxis::charge(1));
        assert_eq!(id.re(), f.re());
        assert_eq!(id.im(), f.im());
    }

    #[test]
    fn diamond_is_symmetric() {
        let g = Grid::new(2, 32, 6.0).unwrap();
        let f = random_field(&g, 1);
        let h = random_field(&g, 2);
        for a in MultiIndexAxis::all(2) {
            let l = pairing(&apply_diamond(&f, a), &h).unwrap();
            let r = pairing(&f, &apply_diamond(&h, a)).unwrap();
            assert!((l - r).abs() < 1e-12, "axis {a:?}: {l} vs {r}");
        }
    }

    #[test]
    fn parseval_round_trip() {
        let g = Grid::new(2, 32, 5.0).unwrap();
        let f = random_field(&g, 3);
        let mut data = f.to_complex();
        g.forward(&mut data);
        let spec_norm: f64 = data.iter().map(|c| c.norm_sqr()).sum::<f64>() / g.len() as f64;
        let phys_norm: f64 = f.modulus_sq().iter().sum();
        assert!((spec_norm - phys_norm).abs() < 1e-12 * phys_norm);
        g.inverse(&mut data);
        let back = ComplexField::from_complex(&g, &data);
        assert!(back.sub(&f).max_abs() < 1e-12 * f.max_abs());
    }

    #[test]
    fn sigma_norm_gaussian() {
        let g = Grid::new(1, 512, 20.0).unwrap();
        let f = ComplexField::from_fn(&g, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        let sp = std::f64::consts::PI.sqrt();
        assert!((sigma_norm(&f, 0).unwrap() - sp.sqrt()).abs() < 1e-12);
        // ‖u‖² + ‖xu‖² + ‖u'‖² = √π + √π/2 + √π/2
        assert!((sigma_norm(&f, 1).unwrap() - (2.0 * sp).sqrt()).abs() < 1e-8);
        assert!(sigma_norm(&f, 5).is_err());
    }

    #[test]
    fn sigma_norm_is_monotone_in_order() {
        let g = Grid::new(2, 32, 6.0).unwrap();
        let f = random_field(&g, 9);
        let n0 = sigma_norm(&f, 0).unwrap();
        let n1 = sigma_norm(&f, 1).unwrap();
        let n2 = sigma_norm(&f, 2).unwrap();
        assert!(n0 <= n1 && n1 <= n2);
    }

    #[test]
    fn weighted_norm_cases() {
        let g = Grid::new(1, 2048, 40.0).unwrap();
        let bump = |c: f64| {
            ComplexField::from_fn(&g, move |x| Complex64::new((-(x[0] - c).powi(2) / 0.02).exp(), 0.0))
        };
        let b0 = bump(0.0);
        let w0 = weighted_l2(&b0, 2.0, &[0.0]).unwrap();
        assert!((w0 / b0.norm_l2() - 1.0).abs() < 0.05);
        let r = 5.0;
        let b = bump(r);
        let w = weighted_l2(&b, 2.0, &[0.0]).unwrap();
        let expected = b.norm_l2() / (1.0 + r * r);
        assert!((w / expected - 1.0).abs() < 0.1);
        let mut last = f64::INFINITY;
        for sigma in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let v = weighted_l2(&b, sigma, &[0.0]).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-10);
        assert!(weighted_l2(&b, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn group_action_cases() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let f = random_field(&g, 4);
        let id = group_action(&f, &GroupElement::identity(1));
        assert_eq!(id.re(), f.re());
        let h = g.spacing();
        let shifted = group_action(&f, &GroupElement::new(vec![h], 0.0));
        for j in 0..64 {
            let prev = (j + 63) % 64;
            assert!((shifted.re()[j] - f.re()[prev]).abs() < 1e-13);
            assert!((shifted.im()[j] - f.im()[prev]).abs() < 1e-13);
        }
        let t1 = GroupElement::new(vec![0.37], 1.1);
        let t2 = GroupElement::new(vec![-1.93], -0.4);
        let twice = group_action(&group_action(&f, &t1), &t2);
        let once = group_action(&f, &t1.compose(&t2));
        assert!(twice.sub(&once).max_abs() < 1e-12 * f.max_abs());
        assert!((group_action(&f, &t1).norm_l2() - f.norm_l2()).abs() < 1e-13);
    }

    #[test]
    fn boost_is_an_isometry() {
        let g = Grid::new(1, 128, 10.0).unwrap();
        let f = random_field(&g, 5);
        let b = galilean_boost(&f, &[1.7]);
        assert!((b.norm_l2() - f.norm_l2()).abs() < 1e-14);
        let z = galilean_boost(&f, &[0.0]);
        assert_eq!(z.re(), f.re());
    }

    #[test]
    fn min_image_wraps() {
        let g = Grid::new(1, 16, 2.0).unwrap();
        assert!((g.min_image(3.0) + 1.0).abs() < 1e-15);
        assert!((g.min_image(-3.0) - 1.0).abs() < 1e-15);
        assert!((g.min_image(2.0) + 2.0).abs() < 1e-15);
        assert_eq!(g.min_image(0.5), 0.5);
    }

    #[test]
    fn resample_is_spectral_interpolation() {
        let coarse = Grid::new(1, 64, 10.0).unwrap();
        let fine = coarse.resampled(256).unwrap();
        let f = |x: &[f64]| Complex64::new((-x[0] * x[0]).exp(), (-x[0] * x[0] / 2.0).exp() * x[0]);
        let up = ComplexField::from_fn(&coarse, f).resample(&fine).unwrap();
        assert!(up.sub(&ComplexField::from_fn(&fine, f)).max_abs() < 1e-10);
        let down = up.resample(&coarse).unwrap();
        assert!(down.sub(&ComplexField::from_fn(&coarse, f)).max_abs() < 1e-10);
    }

    #[test]
    fn reflection_is_involution() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let f = random_field(&g, 6);
        let rr = f.reflected().reflected();
        assert_eq!(rr.re(), f.re());
        let e = ComplexField::from_fn(&g, |x| Complex64::new(x[0] + 2.0 * x[1], 0.0));
        let er = e.reflected();
        // x=-L is its own mirror image, skip that row/column
        for idx in 0..g.len() {
            let mi = g.multi_index(idx);
            if mi[0] != 0 && mi[1] != 0 {
                assert!((er.re()[idx] + e.re()[idx]).abs() < 1e-13);
            }
        }
    }
}

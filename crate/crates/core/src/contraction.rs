//! Chord iteration `Φ(y) = y - D_yF(0)⁻¹F(y)` with the quantitative gates of
//! the implicit-function argument: `‖D_yF(0)⁻¹‖ ≤ 2` and
//! `‖F(0)‖ ≤ δ₄/8`, `δ₄ = min(δ₂, (8 sup‖D_yyF‖)⁻¹)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

type Residual<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>;

pub struct ContractionProblem<'a> {
    residual: Residual<'a>,
    pub jacobian: DMatrix<f64>,
    /// `δ₁ = δ₂`, the working ball.
    pub radius: f64,
    /// Estimate of `sup ‖D_yyF‖` on the working ball.
    pub curvature: f64,
    f0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Radii {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ContractionHistory {
    pub steps: Vec<f64>,
    pub ratios: Vec<f64>,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub gate_bound: f64,
    pub inverse_norm: f64,
    pub uniqueness_radius: f64,
    /// Newton re-centerings applied before the gate passed.
    pub refinements: usize,
    pub curvature: f64,
    /// `max |J - I|` entrywise for the Jacobian at the accepted base point.
    pub jacobian_defect: f64,
}

impl ContractionHistory {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().cloned().fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Forward-difference Jacobian at `y0`.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Result<Vec<f64>>, y0: &[f64], f0: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let n = y0.len();
    let m = f0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut y = y0.to_vec();
    for k in 0..n {
        y[k] += step;
        let fk = f(&y)?;
        y[k] = y0[k];
        for i in 0..m {
            jac[(i, k)] = (fk[i] - f0[i]) / step;
        }
    }
    Ok(jac)
}

/// Largest second difference `‖F((j+1)he_k) - 2F(jhe_k) + F((j-1)he_k)‖/h²`
/// over `j ∈ {-1, 0, 1}` with `h = radius/2`, doubled as a safety margin.
pub fn estimate_curvature(f: &dyn Fn(&[f64]) -> Result<Vec<f64>>, n: usize, radius: f64, f0: &[f64]) -> Result<f64> {
    let h = 0.5 * radius;
    let mut best: f64 = 0.0;
    let mut y = vec![0.0; n];
    for k in 0..n {
        let mut vals = Vec::with_capacity(5);
        for j in -2..=2 {
            if j == 0 {
                vals.push(f0.to_vec());
                continue;
            }
            y[k] = j as f64 * h;
            vals.push(f(&y)?);
        }
        y[k] = 0.0;
        for c in 1..4 {
            let d: Vec<f64> = (0..f0.len()).map(|i| vals[c + 1][i] - 2.0 * vals[c][i] + vals[c - 1][i]).collect();
            best = best.max(norm(&d) / (h * h));
        }
    }
    Ok(2.0 * best)
}

impl<'a> ContractionProblem<'a> {
    pub fn new(
        residual: impl Fn(&[f64]) -> Result<Vec<f64>> + 'a,
        jacobian: DMatrix<f64>,
        radius: f64,
        curvature: f64,
    ) -> Result<Self> {
        let f0 = residual(&vec![0.0; jacobian.ncols()])?;
        Ok(ContractionProblem { residual: Box::new(residual), jacobian, radius, curvature, f0 })
    }

    /// Builds the problem with a forward-difference Jacobian at `y = 0` and,
    /// unless given, a curvature estimate.
    pub fn with_fd_jacobian(
        residual: impl Fn(&[f64]) -> Result<Vec<f64>> + 'a,
        n: usize,
        step: f64,
        radius: f64,
        curvature: Option<f64>,
    ) -> Result<Self> {
        let zero = vec![0.0; n];
        let f0 = residual(&zero)?;
        let jacobian = fd_jacobian(&residual, &zero, &f0, step)?;
        let curvature = match curvature {
            Some(c) => c,
            None => estimate_curvature(&residual, n, radius, &f0)?,
        };
        Ok(ContractionProblem { residual: Box::new(residual), jacobian, radius, curvature, f0 })
    }

    pub fn dim(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn residual(&self, y: &[f64]) -> Result<Vec<f64>> {
        (self.residual)(y)
    }

    pub fn residual_at_zero(&self) -> &[f64] {
        &self.f0
    }

    pub fn radii(&self) -> Radii {
        let delta4 = if self.curvature > 0.0 {
            self.radius.min(1.0 / (8.0 * self.curvature))
        } else {
            self.radius
        };
        Radii { delta1: self.radius, delta2: self.radius, delta3: self.radius, delta4 }
    }

    /// `‖D_yF(0)⁻¹‖₂`.
    pub fn inverse_norm(&self) -> f64 {
        let s = self.jacobian.clone().svd(false, false).singular_values;
        let smin = s.min();
        if smin > 0.0 {
            1.0 / smin
        } else {
            f64::INFINITY
        }
    }

    /// Returns `(‖F(0)‖, δ₄/8)`, failing when the gate does not hold.
    pub fn check_gate(&self) -> Result<(f64, f64)> {
        let inv = self.inverse_norm();
        if !(inv <= 2.0) {
            return Err(Error::GateFailed { residual: inv, bound: 2.0 });
        }
        let r0 = norm(&self.f0);
        let bound = self.radii().delta4 / 8.0;
        if !(r0 <= bound) {
            return Err(Error::GateFailed { residual: r0, bound });
        }
        Ok((r0, bound))
    }
}

pub fn contraction_solve(problem: &ContractionProblem) -> Result<(Vec<f64>, ContractionHistory)> {
    contraction_solve_from(problem, &vec![0.0; problem.dim()])
}

/// Runs the chord iteration from `start`; the gate is always checked at 0.
pub fn contraction_solve_from(problem: &ContractionProblem, start: &[f64]) -> Result<(Vec<f64>, ContractionHistory)> {
    let (r0, bound) = problem.check_gate()?;
    let lu = problem.jacobian.clone().lu();
    let mut history = ContractionHistory {
        initial_residual: r0,
        gate_bound: bound,
        inverse_norm: problem.inverse_norm(),
        uniqueness_radius: problem.radii().delta4,
        curvature: problem.curvature,
        ..Default::default()
    };
    let mut y = start.to_vec();
    let mut fy = if norm(start) == 0.0 { problem.f0.clone() } else { problem.residual(&y)? };
    let mut prev_step = f64::INFINITY;
    for _ in 0..200 {
        let dy = lu
            .solve(&DVector::from_column_slice(&fy))
            .ok_or_else(|| Error::Degenerate("singular Jacobian at the base point".into()))?;
        let step = dy.norm();
        y.iter_mut().zip(dy.iter()).for_each(|(a, d)| *a -= d);
        history.steps.push(step);
        fy = problem.residual(&y)?;
        // ratios below the evaluation noise floor carry no information
        if prev_step.is_finite() && prev_step > 1e-10 {
            let ratio = step / prev_step;
            history.ratios.push(ratio);
            if ratio > 0.5 {
                return Err(Error::NotInBasin(ratio));
            }
        }
        let rn = norm(&fy);
        if step < 1e-12 || (step < 1e-10 && rn < 1e-11 && step > 0.5 * prev_step) {
            history.final_residual = rn;
            if rn > 1e-11 {
                return Err(Error::NonConvergence { what: "contraction", iterations: history.steps.len(), residual: rn });
            }
            return Ok((y, history));
        }
        prev_step = step;
    }
    Err(Error::NonConvergence { what: "contraction", iterations: history.steps.len(), residual: norm(&fy) })
}

#[derive(Debug, Clone, Copy)]
pub struct CertifiedOptions {
    pub radius: f64,
    pub fd_step: f64,
    pub max_refinements: usize,
    /// Reuse a curvature bound instead of estimating it.
    pub curvature: Option<f64>,
}

impl Default for CertifiedOptions {
    fn default() -> Self {
        CertifiedOptions { radius: 0.2, fd_step: 1e-6, max_refinements: 8, curvature: None }
    }
}

/// Solves `F(y) = 0` near `y = 0`: re-centers by Newton steps until the
/// smallness gate holds at the base point, then runs the certified chord
/// iteration there. Returns the absolute solution.
pub fn certified_solve(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    n: usize,
    opts: CertifiedOptions,
) -> Result<(Vec<f64>, ContractionHistory)> {
    let mut base = vec![0.0; n];
    let mut refinements = 0;
    let mut curvature = opts.curvature;
    loop {
        let b = base.clone();
        let shifted = move |y: &[f64]| -> Result<Vec<f64>> {
            let z: Vec<f64> = b.iter().zip(y).map(|(p, q)| p + q).collect();
            f(&z)
        };
        let problem = ContractionProblem::with_fd_jacobian(shifted, n, opts.fd_step, opts.radius, curvature)?;
        curvature = Some(problem.curvature);
        match contraction_solve(&problem) {
            Ok((y, mut h)) => {
                h.refinements = refinements;
                h.jacobian_defect = (&problem.jacobian - DMatrix::<f64>::identity(n, n)).amax();
                let out = base.iter().zip(&y).map(|(p, q)| p + q).collect();
                return Ok((out, h));
            }
            Err(Error::GateFailed { residual, bound }) if refinements < opts.max_refinements => {
                if problem.inverse_norm() > 2.0 {
                    return Err(Error::GateFailed { residual, bound });
                }
                let dy = problem
                    .jacobian
                    .clone()
                    .lu()
                    .solve(&DVector::from_column_slice(problem.residual_at_zero()))
                    .ok_or_else(|| Error::Degenerate("singular Jacobian".into()))?;
                // damp steps that would leave the working ball
                let scale = (opts.radius / dy.norm()).min(1.0);
                base.iter_mut().zip(dy.iter()).for_each(|(a, d)| *a -= scale * d);
                refinements += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_problem_solves_in_one_step() {
        let x = 0.3;
        let p = ContractionProblem::with_fd_jacobian(|y: &[f64]| Ok(vec![y[0] - x]), 1, 1e-6, 4.0, Some(0.0)).unwrap();
        let (y, h) = contraction_solve(&p).unwrap();
        assert!((y[0] - x).abs() < 1e-9);
        assert!(h.steps.len() <= 3);
    }

    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn cubic_scalar_problem() {
        let x = 0.1;
        let exact = bisect(|y| y + y * y * y - x, 0.0, 1.0);
        let f = |y: &[f64]| Ok(vec![y[0] + y[0].powi(3) - x]);
        let opts = CertifiedOptions { radius: 0.05, ..Default::default() };
        let (y, h) = certified_solve(&f, 1, opts).unwrap();
        assert!((y[0] - exact).abs() < 1e-12);
        assert!(h.refinements >= 1);
        assert!(h.max_ratio() <= 0.25, "{:?}", h.ratios);
        // certified directly in a small ball around the origin
        let x = 0.002;
        let radius: f64 = 0.05;
        let g = move |y: &[f64]| Ok(vec![y[0] + y[0].powi(3) - x]);
        let p = ContractionProblem::new(g, DMatrix::from_element(1, 1, 1.0), radius, 6.0 * radius).unwrap();
        let (y, h) = contraction_solve(&p).unwrap();
        assert!(h.max_ratio() <= 0.25, "{:?}", h.ratios);
        let r = p.radii().delta4;
        for k in 0..10 {
            let start = [(k as f64 - 4.5) / 5.0 * r];
            let (y2, _) = contraction_solve_from(&p, &start).unwrap();
            assert!((y2[0] - y[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn gate_rejects_large_residual() {
        let p = ContractionProblem::new(|y: &[f64]| Ok(vec![y[0] + y[0].powi(3) - 1.0]), DMatrix::from_element(1, 1, 1.0), 0.2, 1.2)
            .unwrap();
        assert!(matches!(contraction_solve(&p), Err(Error::GateFailed { .. })));
        let p = ContractionProblem::new(|y: &[f64]| Ok(vec![0.1 * y[0]]), DMatrix::from_element(1, 1, 0.1), 0.2, 0.0).unwrap();
        assert!(matches!(contraction_solve(&p), Err(Error::GateFailed { .. })));
    }

    #[test]
    fn fd_curvature_of_cubic() {
        let f = |y: &[f64]| Ok(vec![y[0] + y[0].powi(3)]);
        // sup over the ball of 6|y| is 6r; the off-centre differences give 3r
        let c = estimate_curvature(&f, 1, 0.4, &[0.0]).unwrap();
        assert!((c - 6.0 * 0.4).abs() < 1e-9);
        let g = |y: &[f64]| Ok(vec![y[0] * y[0]]);
        assert!((estimate_curvature(&g, 1, 0.4, &[0.0]).unwrap() - 4.0).abs() < 1e-9);
    }
}

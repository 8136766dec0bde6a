//! Restarted GMRES with right preconditioning on flat real vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    /// Relative residual target `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tol: 1e-12,
            restart: 60,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b`. `precond` applies an approximation of `A⁻¹`.
pub fn gmres<A, M>(
    apply: A,
    precond: M,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: GmresOptions,
) -> Result<(Vec<f64>, SolveInfo)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveInfo { iterations: 0, residual: 0.0 }));
    }
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut rel = f64::INFINITY;
    while total < opts.max_iter {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= opts.tol {
            return Ok((x, SolveInfo { iterations: total, residual: rel }));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for j in 0..m {
            let zj = precond(&v[j]);
            let mut wv = apply(&zj);
            z.push(zj);
            // modified Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let hij = dot(&wv, vi);
                    h[i][j] += hij;
                    wv.iter_mut().zip(vi).for_each(|(a, b)| *a -= hij * b);
                }
            }
            let hn = norm(&wv);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = h[j][j].hypot(h[j + 1][j]);
            if d == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / d;
                sn[j] = h[j + 1][j] / d;
            }
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            total += 1;
            k_used = j + 1;
            rel = g[j + 1].abs() / bnorm;
            if rel <= opts.tol || hn == 0.0 || total >= opts.max_iter {
                break;
            }
            v.push(wv.iter().map(|a| a / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= h[i][l] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (yi, zi) in y.iter().zip(&z) {
            x.iter_mut().zip(zi).for_each(|(a, b)| *a += yi * b);
        }
    }
    let ax = apply(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let true_rel = norm(&r) / bnorm;
    if true_rel <= opts.tol {
        return Ok((x, SolveInfo { iterations: total, residual: true_rel }));
    }
    Err(Error::NonConvergence {
        what: "GMRES",
        iterations: total,
        residual: true_rel.max(rel),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_nonsymmetric_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                3.0 + i as f64 * 0.1
            } else {
                rng.random_range(-0.2..0.2)
            }
        });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let apply = |x: &[f64]| (&a * DVector::from_column_slice(x)).as_slice().to_vec();
        let (x, info) = gmres(apply, |v| v.to_vec(), &b, None, GmresOptions { restart: 10, ..Default::default() })
            .unwrap();
        let oracle = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let err: f64 = x.iter().zip(oracle.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}, info {info:?}");
    }

    #[test]
    fn indefinite_diagonal_with_exact_preconditioner() {
        let d: Vec<f64> = (0..30).map(|i| i as f64 - 10.5).collect();
        let b = vec![1.0; 30];
        let (x, info) = gmres(
            |x| x.iter().zip(&d).map(|(a, b)| a * b).collect(),
            |v| v.iter().zip(&d).map(|(a, b)| a / b).collect(),
            &b,
            None,
            GmresOptions::default(),
        )
        .unwrap();
        assert!(info.iterations <= 2);
        for (xi, di) in x.iter().zip(&d) {
            assert!((xi * di - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs() {
        let (x, _) = gmres(|x| x.to_vec(), |x| x.to_vec(), &[0.0; 4], None, GmresOptions::default()).unwrap();
        assert_eq!(x, vec![0.0; 4]);
    }
}

//! GMRES with modified Gram-Schmidt Arnoldi and Givens rotations.

use crate::error::{BemError, Result};
use crate::kernel::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    /// Relative residual target `||b - Ax|| / ||b||`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Krylov dimension before restarting; `None` never restarts.
    pub restart: Option<usize>,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 200,
            restart: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    /// Residual estimate from the Hessenberg least-squares problem.
    pub residual: f64,
    pub converged: bool,
    /// Estimated relative residual after each iteration.
    pub history: Vec<f64>,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Givens rotation `(c, s)` zeroing `b` in `(a, b)`.
fn givens(a: C64, b: C64) -> (f64, C64) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if na == 0.0 {
        return (0.0, (b / nb).conj());
    }
    let r = na.hypot(nb);
    let c = na / r;
    let s = (a / na) * b.conj() / r;
    (c, s)
}

/// Solves `A x = b` from `x0 = 0`. Stops at the tolerance or the iteration
/// cap; in the latter case the best iterate is returned with
/// `converged = false`. Errors only come from `matvec`.
pub fn gmres<F>(mut matvec: F, b: &[C64], cfg: &GmresConfig) -> Result<GmresOutcome>
where
    F: FnMut(&[C64]) -> Result<Vec<C64>>,
{
    if !(cfg.tolerance > 0.0) {
        return Err(BemError::InvalidArgument(format!("GMRES tolerance must be positive, got {}", cfg.tolerance)));
    }
    if cfg.restart == Some(0) {
        return Err(BemError::InvalidArgument("GMRES restart must be at least 1".into()));
    }
    let n = b.len();
    let zero = C64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let bnorm = norm(b);
    let mut history = Vec::new();
    if bnorm == 0.0 {
        return Ok(GmresOutcome { x, iterations: 0, residual: 0.0, converged: true, history });
    }
    let m = cfg.restart.unwrap_or(cfg.max_iterations).max(1);
    let mut iterations = 0;
    let mut r = b.to_vec();
    let mut rel = 1.0;
    while iterations < cfg.max_iterations {
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= cfg.tolerance {
            break;
        }
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut h: Vec<Vec<C64>> = Vec::new();
        let mut cs: Vec<(f64, C64)> = Vec::new();
        let mut g = vec![C64::new(beta, 0.0)];
        let mut j = 0;
        while j < m && iterations < cfg.max_iterations {
            let mut w = matvec(&basis[j])?;
            let mut col = vec![zero; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
                col[i] = hij;
            }
            let wn = norm(&w);
            col[j + 1] = C64::new(wn, 0.0);
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = a * c + s * bb;
                col[i + 1] = -s.conj() * a + bb * c;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            col[j] = col[j] * c + s * col[j + 1];
            col[j + 1] = zero;
            cs.push((c, s));
            let gj = g[j];
            g[j] = gj * c;
            g.push(-s.conj() * gj);
            h.push(col);
            iterations += 1;
            j += 1;
            rel = g[j].norm() / bnorm;
            history.push(rel);
            if rel <= cfg.tolerance || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|z| z / wn).collect());
        }
        // back substitution on the triangular factor
        let mut y = vec![zero; j];
        for i in (0..j).rev() {
            let mut acc = g[i];
            for k in i + 1..j {
                acc -= h[k][i] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[k]) {
                *xi += yk * vi;
            }
        }
        if rel <= cfg.tolerance {
            break;
        }
        let ax = matvec(&x)?;
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    }
    Ok(GmresOutcome {
        x,
        iterations,
        residual: rel,
        converged: rel <= cfg.tolerance,
        history,
    })
}

//! Slow reference implementations used to validate the fast summation and
//! the solver: dense assembly, direct sums and analytic sphere solutions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{BemError, Result};
use crate::kernel::{green, KernelKind, OperatorKind, WaveContext, C64};
use crate::mesh::{ElementGeometry, Vec3};
use crate::quadrature::{element_integral, self_terms, QuadratureRule};

/// Largest system the dense oracles will assemble.
pub const DENSE_GUARD: usize = 8192;

/// Full collocation matrix of `kind`, with the same quadrature and self terms
/// as the fast engine. Normals of `geom` are used as given.
pub fn dense_assemble(geom: &ElementGeometry, ctx: &WaveContext, kind: OperatorKind) -> Result<DMatrix<C64>> {
    let n = geom.len();
    if n > DENSE_GUARD {
        return Err(BemError::OracleGuard { n, limit: DENSE_GUARD });
    }
    let rows = dense_rows(geom, ctx, kind, &(0..n).collect::<Vec<_>>())?;
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Conventional (non Burton-Miller) matrix `I/2 + D`, where `D` holds
/// `dG/dn_y` element integrals. Loses uniqueness at interior resonances;
/// kept to show what the coupling buys.
pub fn dense_cbie(geom: &ElementGeometry, ctx: &WaveContext) -> Result<DMatrix<C64>> {
    let n = geom.len();
    if n > DENSE_GUARD {
        return Err(BemError::OracleGuard { n, limit: DENSE_GUARD });
    }
    let rule = QuadratureRule::default();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let ei = &geom.elements[i];
            geom.elements
                .iter()
                .enumerate()
                .map(|(j, ej)| {
                    if i == j {
                        // flat element: the principal value of D vanishes
                        Ok(C64::new(0.5, 0.0))
                    } else {
                        element_integral(ej, &ei.centroid, &ei.normal, KernelKind::DlpY, ctx, &rule)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Selected rows of the collocation matrix, one `Vec` per requested row.
pub fn dense_rows(
    geom: &ElementGeometry,
    ctx: &WaveContext,
    kind: OperatorKind,
    rows: &[usize],
) -> Result<Vec<Vec<C64>>> {
    let rule = QuadratureRule::default();
    let near = kind.near_kernel();
    rows.par_iter()
        .map(|&i| {
            let ei = &geom.elements[i];
            geom.elements
                .iter()
                .enumerate()
                .map(|(j, ej)| {
                    if i == j {
                        let st = self_terms(ei, ctx);
                        Ok(match kind {
                            OperatorKind::Lhs => st.lhs_diag,
                            OperatorKind::Rhs => st.rhs_diag,
                        })
                    } else {
                        element_integral(ej, &ei.centroid, &ei.normal, near, ctx, &rule)
                    }
                })
                .collect()
        })
        .collect()
}

/// `A q` restricted to `rows`, without storing the matrix.
pub fn direct_sum_rows(
    geom: &ElementGeometry,
    ctx: &WaveContext,
    kind: OperatorKind,
    q: &[C64],
    rows: &[usize],
) -> Result<Vec<C64>> {
    if q.len() != geom.len() {
        return Err(BemError::DimensionMismatch { expected: geom.len(), got: q.len() });
    }
    let chunks: Vec<Vec<usize>> = rows.chunks(16).map(|c| c.to_vec()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in chunks {
        for row in dense_rows(geom, ctx, kind, &chunk)? {
            out.push(row.iter().zip(q).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

/// Full `A q`; subject to the dense guard.
pub fn direct_sum(geom: &ElementGeometry, ctx: &WaveContext, kind: OperatorKind, q: &[C64]) -> Result<Vec<C64>> {
    if geom.len() > DENSE_GUARD {
        return Err(BemError::OracleGuard { n: geom.len(), limit: DENSE_GUARD });
    }
    direct_sum_rows(geom, ctx, kind, q, &(0..geom.len()).collect::<Vec<_>>())
}

/// `sum_j G(x_i, y_j) c_j` over point sources.
pub fn point_potential(sources: &[Vec3], charges: &[C64], targets: &[Vec3], k: f64) -> Vec<C64> {
    targets
        .iter()
        .map(|x| sources.iter().zip(charges).map(|(y, c)| green(&(x - y), k) * c).sum())
        .collect()
}

/// Dense LU solve.
pub fn dense_solve(a: &DMatrix<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let rhs = DVector::from_column_slice(b);
    a.clone()
        .lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| BemError::InvalidArgument("singular matrix".into()))
}

/// Two-norm condition number from the singular values.
pub fn condition_number(a: &DMatrix<C64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Surface value of the field radiated by a sphere of radius `a` whose
/// surface moves with unit normal velocity into the scatterer normal, i.e.
/// `du/dn = 1` with `n` pointing to the centre. Time convention `e^{-iwt}`,
/// matching `G = e^{ikr} / (4 pi r)`.
pub fn pulsating_sphere_exact(k: f64, radius: f64) -> C64 {
    radius / C64::new(1.0, -k * radius)
}

/// Total surface field on a sound-hard sphere of radius `a` centred at the
/// origin, for the incident plane wave `e^{ik d.x}`. Each point is projected
/// radially onto the sphere.
pub fn sphere_scattering_exact(points: &[Vec3], k: f64, radius: f64, direction: &Vec3) -> Result<Vec<C64>> {
    let coeffs = hard_sphere_coefficients(k * radius, SERIES_TOLERANCE, MAX_SERIES_TERMS)?;
    Ok(sum_series(points, &coeffs, direction))
}

fn sum_series(points: &[Vec3], coeffs: &[C64], direction: &Vec3) -> Vec<C64> {
    let d = direction.normalize();
    points
        .iter()
        .map(|p| {
            let c = p.normalize().dot(&d).clamp(-1.0, 1.0);
            let mut sum = C64::new(0.0, 0.0);
            let (mut p0, mut p1) = (1.0, c);
            for (n, a) in coeffs.iter().enumerate() {
                let pn = match n {
                    0 => 1.0,
                    1 => c,
                    _ => {
                        let p2 = ((2 * n - 1) as f64 * c * p1 - (n - 1) as f64 * p0) / n as f64;
                        p0 = p1;
                        p1 = p2;
                        p2
                    }
                };
                sum += a * pn;
            }
            sum
        })
        .collect()
}

/// Terms allowed before the series counts as divergent.
pub const MAX_SERIES_TERMS: usize = 500;
/// The series stops at the first term whose largest contribution
/// (`|P_n| <= 1`) is below this.
pub const SERIES_TOLERANCE: f64 = 1e-10;

/// `i^n (2n+1) i / (x^2 h_n'(x))`, stopping at `tol` once `n > x`. With
/// `tol = 0` exactly `cap` terms are returned.
fn hard_sphere_coefficients(x: f64, tol: f64, cap: usize) -> Result<Vec<C64>> {
    let h = spherical_hankel(cap + 1, x);
    let mut out = Vec::new();
    let mut ipow = C64::new(1.0, 0.0);
    for n in 0..cap {
        let dh = if n == 0 { -h[1] } else { h[n - 1] - h[n] * ((n + 1) as f64 / x) };
        let a = ipow * (2 * n + 1) as f64 * C64::new(0.0, 1.0) / (dh * x * x);
        if !a.is_finite() {
            return Err(BemError::SeriesDivergence(n));
        }
        out.push(a);
        ipow *= C64::new(0.0, 1.0);
        if n as f64 > x && a.norm() < tol {
            return Ok(out);
        }
    }
    if tol > 0.0 {
        return Err(BemError::SeriesDivergence(cap));
    }
    Ok(out)
}

/// `h_n^{(1)}(x)` for `n = 0..=nmax` (upward recurrence, stable for `y_n`
/// and fine for `h_n` because `y_n` dominates).
fn spherical_hankel(nmax: usize, x: f64) -> Vec<C64> {
    let j = spherical_j(nmax, x);
    let mut y = vec![0.0; nmax + 1];
    y[0] = -x.cos() / x;
    if nmax > 0 {
        y[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for n in 1..nmax {
        y[n + 1] = (2 * n + 1) as f64 / x * y[n] - y[n - 1];
    }
    j.iter().zip(&y).map(|(a, b)| C64::new(*a, *b)).collect()
}

/// `j_n(x)` by downward (Miller) recurrence, normalized with
/// `sum (2n+1) j_n^2 = 1` so zeros of `j_0` do no harm.
pub fn spherical_j(nmax: usize, x: f64) -> Vec<f64> {
    let start = nmax + 20 + x as usize + (x.abs().cbrt() * 10.0) as usize;
    let mut vals = vec![0.0; start + 2];
    vals[start + 1] = 0.0;
    vals[start] = 1e-30;
    for n in (1..=start).rev() {
        vals[n - 1] = (2 * n + 1) as f64 / x * vals[n] - vals[n + 1];
        if vals[n - 1].abs() > 1e100 {
            for v in vals.iter_mut().skip(n - 1) {
                *v *= 1e-100;
            }
        }
    }
    let norm: f64 = vals.iter().enumerate().map(|(n, v)| (2 * n + 1) as f64 * v * v).sum();
    let mut scale = 1.0 / norm.sqrt();
    // fix the sign with whichever of j_0, j_1 is better conditioned
    let (j0, j1) = (x.sin() / x, x.sin() / (x * x) - x.cos() / x);
    if j0.abs() > j1.abs() {
        scale = scale.copysign(j0 * vals[0]);
    } else {
        scale = scale.copysign(j1 * vals[1]);
    }
    vals.truncate(nmax + 1);
    vals.iter().map(|v| v * scale).collect()
}

/// Spherical Neumann function `y_n(x)` by upward recurrence.
pub fn spherical_y(nmax: usize, x: f64) -> Vec<f64> {
    spherical_hankel(nmax, x).iter().map(|h| h.im).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{compute_element_geometry, generate_sphere_mesh};
    use std::f64::consts::PI;

    #[test]
    fn spherical_bessel_closed_forms() {
        for x in [0.3, 1.0, 3.7, 12.0] {
            let j = spherical_j(3, x);
            let y = spherical_y(3, x);
            let (s, c) = x.sin_cos();
            assert!((j[0] - s / x).abs() < 1e-14);
            assert!((j[1] - (s / (x * x) - c / x)).abs() < 1e-14);
            let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
            assert!((j[2] - j2).abs() < 1e-13);
            assert!((y[0] + c / x).abs() < 1e-14);
            let y2 = (-3.0 / (x * x) + 1.0) * c / x - 3.0 * s / (x * x);
            assert!((y[2] - y2).abs() < 1e-12);
            // Wronskian j_n y_{n-1} - j_{n-1} y_n = 1/x^2
            for n in 1..4 {
                assert!((j[n] * y[n - 1] - j[n - 1] * y[n] - 1.0 / (x * x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pulsating_sphere_values() {
        let u = pulsating_sphere_exact(1.0, 1.0);
        assert!((u - C64::new(0.5, 0.5)).norm() < 1e-15);
        assert!((pulsating_sphere_exact(PI, 1.0).norm() - 0.303314).abs() < 1e-6);
    }

    /// Direct form `j_n - j_n' h_n / h_n'` of the same series.
    fn direct_form(x: f64, c: f64) -> C64 {
        let n_terms = 60;
        let j = spherical_j(n_terms + 1, x);
        let h = spherical_hankel(n_terms + 1, x);
        let mut sum = C64::new(0.0, 0.0);
        let mut ipow = C64::new(1.0, 0.0);
        let (mut p0, mut p1) = (1.0, c);
        for n in 0..=n_terms {
            let pn = match n {
                0 => 1.0,
                1 => c,
                _ => {
                    let p2 = ((2 * n - 1) as f64 * c * p1 - (n - 1) as f64 * p0) / n as f64;
                    p0 = p1;
                    p1 = p2;
                    p2
                }
            };
            let (dj, dh) = if n == 0 {
                (-j[1], -h[1])
            } else {
                (j[n - 1] - (n + 1) as f64 / x * j[n], h[n - 1] - h[n] * ((n + 1) as f64 / x))
            };
            sum += ipow * (2 * n + 1) as f64 * (j[n] - dj * h[n] / dh) * pn;
            ipow *= C64::new(0.0, 1.0);
        }
        sum
    }

    #[test]
    fn scattering_series_forms_agree() {
        let d = Vec3::new(0.0, 0.0, 1.0);
        for k in [0.5, PI, 2.0 * PI] {
            for theta in [0.0, 0.7, 1.9, PI] {
                let p = Vec3::new(theta.sin(), 0.0, theta.cos());
                let got = sphere_scattering_exact(&[p], k, 1.0, &d).unwrap()[0];
                let want = direct_form(k, theta.cos());
                assert!((got - want).norm() < 1e-10, "k={k} theta={theta}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn doubling_the_term_cap_changes_nothing() {
        let d = Vec3::new(0.3, -0.2, 1.0);
        let pts: Vec<Vec3> = (0..9).map(|i| Vec3::new((i as f64).cos(), (i as f64).sin(), 0.4 * i as f64 - 1.6)).collect();
        for k in [0.3, PI, 2.0 * PI, 8.0 * PI] {
            let short = hard_sphere_coefficients(k, SERIES_TOLERANCE, MAX_SERIES_TERMS).unwrap();
            let long = hard_sphere_coefficients(k, 0.0, 2 * short.len()).unwrap();
            assert_eq!(long.len(), 2 * short.len());
            for (a, b) in sum_series(&pts, &short, &d).iter().zip(sum_series(&pts, &long, &d)) {
                assert!((a - b).norm() < 1e-9, "k = {k}");
            }
        }
    }

    #[test]
    fn shadow_side_is_quieter() {
        let d = Vec3::new(0.0, 0.0, 1.0);
        let u = sphere_scattering_exact(&[-d, d], 4.0 * PI, 1.0, &d).unwrap();
        // lit pole sees incident plus reflection, the shadow pole much less
        assert!(u[0].norm() > 1.5);
        assert!(u[1].norm() < u[0].norm());
    }

    #[test]
    fn series_divergence_is_reported() {
        assert!(matches!(hard_sphere_coefficients(50.0, SERIES_TOLERANCE, 10), Err(BemError::SeriesDivergence(10))));
    }

    #[test]
    fn cbie_diagonal_and_row_sums() {
        // normals into the body: int dG/dn_y over the surface is +1/2, so at
        // the static limit every row sums to one
        let geom = compute_element_geometry(&generate_sphere_mesh(3, 1.0).unwrap()).unwrap().reversed_normals();
        let a = dense_cbie(&geom, &WaveContext::new(1e-3).unwrap()).unwrap();
        for i in (0..geom.len()).step_by(37) {
            assert_eq!(a[(i, i)], C64::new(0.5, 0.0));
            let sum: C64 = a.row(i).iter().sum();
            assert!((sum - 1.0).norm() < 2e-2, "row {i}: {sum}");
        }
    }

    #[test]
    fn long_wave_limit() {
        // For ka -> 0 the hard sphere barely disturbs the field.
        let d = Vec3::new(1.0, 0.0, 0.0);
        let p = Vec3::new(0.0, 1.0, 0.0);
        let u = sphere_scattering_exact(&[p], 1e-3, 1.0, &d).unwrap()[0];
        assert!((u - C64::new(1.0, 0.0)).norm() < 1e-5);
    }

    #[test]
    fn guard_rejects_large_problems() {
        let geom = compute_element_geometry(&generate_sphere_mesh(6, 1.0).unwrap()).unwrap();
        assert!(geom.len() > DENSE_GUARD);
        let ctx = WaveContext::new(1.0).unwrap();
        assert!(matches!(
            dense_assemble(&geom, &ctx, OperatorKind::Lhs),
            Err(BemError::OracleGuard { .. })
        ));
    }

    #[test]
    fn direct_sum_matches_dense_product() {
        let geom = compute_element_geometry(&generate_sphere_mesh(2, 1.0).unwrap()).unwrap().reversed_normals();
        let ctx = WaveContext::new(2.0).unwrap();
        let q: Vec<C64> = (0..geom.len()).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let a = dense_assemble(&geom, &ctx, OperatorKind::Lhs).unwrap();
        let aq = &a * DVector::from_column_slice(&q);
        let ds = direct_sum(&geom, &ctx, OperatorKind::Lhs, &q).unwrap();
        for (x, y) in aq.iter().zip(&ds) {
            assert!((x - y).norm() < 1e-13 * aq.norm());
        }
    }
}

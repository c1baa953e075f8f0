//! Helmholtz fundamental solution `G = e^{ikr} / (4 pi r)` and its normal
//! derivatives.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{BemError, Result};
use crate::mesh::Vec3;

pub type C64 = Complex64;

pub(crate) const INV_4PI: f64 = 1.0 / (4.0 * PI);

/// Wavenumber and the Burton-Miller coupling `alpha = i / k` derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveContext {
    k: f64,
    alpha: C64,
}

impl WaveContext {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(BemError::InvalidArgument(format!("wavenumber {k} must be positive")));
        }
        Ok(Self {
            k,
            alpha: C64::new(0.0, 1.0 / k),
        })
    }

    /// `k = 0` with the coupling switched off. Only the pure kernels
    /// (single layer, double layers, hypersingular) are meaningful here.
    pub fn static_limit() -> Self {
        Self {
            k: 0.0,
            alpha: C64::new(0.0, 0.0),
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    /// Wavelength `2 pi / k`; infinite in the static limit.
    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// `G`
    Single,
    /// `dG/dn_y`
    DlpY,
    /// `dG/dn_x`
    DlpX,
    /// `d^2 G / dn_x dn_y`
    Hyper,
    /// `G + alpha dG/dn_x`, applied to equivalent densities at targets.
    TargetCombined,
    /// `dG/dn_y + alpha d^2G/dn_x dn_y`, the left-hand-side integrand.
    NearLhs,
    /// `G + alpha dG/dn_x`, the right-hand-side integrand.
    NearRhs,
}

/// The two summations a Burton-Miller solve needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    Lhs,
    Rhs,
}

impl OperatorKind {
    /// Kernel used to build outgoing check potentials from element charges.
    pub fn moment_kernel(self) -> KernelKind {
        match self {
            OperatorKind::Lhs => KernelKind::DlpY,
            OperatorKind::Rhs => KernelKind::Single,
        }
    }

    /// Kernel of the direct near-field interaction.
    pub fn near_kernel(self) -> KernelKind {
        match self {
            OperatorKind::Lhs => KernelKind::NearLhs,
            OperatorKind::Rhs => KernelKind::NearRhs,
        }
    }
}

/// Checked kernel evaluation. `x == y` is an error; singular cases belong to
/// [`crate::quadrature::self_terms`].
pub fn eval_kernel(
    kind: KernelKind,
    x: &Vec3,
    y: &Vec3,
    n_x: &Vec3,
    n_y: &Vec3,
    ctx: &WaveContext,
) -> Result<C64> {
    let d = x - y;
    if d.norm_squared() == 0.0 {
        return Err(BemError::SingularEvaluation);
    }
    Ok(kernel_unchecked(kind, &d, n_x, n_y, ctx.k, ctx.alpha))
}

/// Kernel value for separation `d = x - y` (nonzero).
#[inline]
pub(crate) fn kernel_unchecked(
    kind: KernelKind,
    d: &Vec3,
    n_x: &Vec3,
    n_y: &Vec3,
    k: f64,
    alpha: C64,
) -> C64 {
    let r2 = d.norm_squared();
    let r = r2.sqrt();
    let kr = k * r;
    let (s, c) = kr.sin_cos();
    let e = C64::new(c, s);
    let g = e * (INV_4PI / r);
    match kind {
        KernelKind::Single => g,
        KernelKind::DlpY => dlp(g, kr, d.dot(n_y) / r2),
        KernelKind::DlpX => -dlp(g, kr, d.dot(n_x) / r2),
        KernelKind::Hyper => hyper(g, kr, d, r2, n_x, n_y),
        KernelKind::TargetCombined | KernelKind::NearRhs => {
            g - alpha * dlp(g, kr, d.dot(n_x) / r2)
        }
        KernelKind::NearLhs => {
            dlp(g, kr, d.dot(n_y) / r2) + alpha * hyper(g, kr, d, r2, n_x, n_y)
        }
    }
}

/// `G (1 - ikr) (d.n) / r^2`, the `n_y` derivative when `n = n_y`.
#[inline]
fn dlp(g: C64, kr: f64, dn_over_r2: f64) -> C64 {
    g * C64::new(1.0, -kr) * dn_over_r2
}

#[inline]
fn hyper(g: C64, kr: f64, d: &Vec3, r2: f64, n_x: &Vec3, n_y: &Vec3) -> C64 {
    let radial = d.dot(n_x) * d.dot(n_y) / r2;
    let a = C64::new(1.0, -kr) * n_x.dot(n_y);
    let b = C64::new(3.0 - kr * kr, -3.0 * kr) * radial;
    g * (a - b) / r2
}

/// Plain `G` from a precomputed separation; the translation operators only
/// ever need this.
#[inline]
pub(crate) fn green(d: &Vec3, k: f64) -> C64 {
    let r = d.norm();
    let (s, c) = (k * r).sin_cos();
    C64::new(c, s) * (INV_4PI / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn z() -> Vec3 {
        Vec3::new(0.0, 0.0, 1.0)
    }

    fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn static_values() {
        let ctx = WaveContext::static_limit();
        let o = Vec3::zeros();
        let g = eval_kernel(KernelKind::Single, &o, &Vec3::new(1.0, 0.0, 0.0), &z(), &z(), &ctx).unwrap();
        assert!((g.re - 0.0795774715).abs() < 1e-10 && g.im == 0.0);

        let dy = eval_kernel(KernelKind::DlpY, &o, &z(), &z(), &z(), &ctx).unwrap();
        assert!((dy.re + 1.0 / (4.0 * PI)).abs() < 1e-15);

        let h = eval_kernel(KernelKind::Hyper, &o, &z(), &z(), &z(), &ctx).unwrap();
        assert!((h.re + 1.0 / (2.0 * PI)).abs() < 1e-15, "{h}");
    }

    #[test]
    fn half_wavelength_phase_flip() {
        let ctx = WaveContext::new(2.0 * PI).unwrap();
        let g = eval_kernel(KernelKind::Single, &Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0), &z(), &z(), &ctx).unwrap();
        assert!((g.re + 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!(g.im.abs() < 1e-14);
    }

    #[test]
    fn coincident_points_error() {
        let ctx = WaveContext::new(1.0).unwrap();
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert!(matches!(
            eval_kernel(KernelKind::Hyper, &x, &x, &z(), &z(), &ctx),
            Err(BemError::SingularEvaluation)
        ));
    }

    #[test]
    fn coupling_is_i_over_k() {
        let ctx = WaveContext::new(3.7).unwrap();
        assert!((ctx.alpha() * ctx.k() - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(WaveContext::new(0.0).is_err());
        assert!(WaveContext::new(f64::NAN).is_err());
    }

    #[test]
    fn dlp_x_matches_finite_difference_of_single() {
        let ctx = WaveContext::new(2.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = unit(&mut rng) * 0.4;
            let y = unit(&mut rng) * 1.3;
            let nx = unit(&mut rng);
            let r = (x - y).norm();
            let h = 1e-5 * r;
            let f = |p: Vec3| eval_kernel(KernelKind::Single, &p, &y, &nx, &nx, &ctx).unwrap();
            let fd = (f(x + nx * h) - f(x - nx * h)) / (2.0 * h);
            let exact = eval_kernel(KernelKind::DlpX, &x, &y, &nx, &nx, &ctx).unwrap();
            assert!((fd - exact).norm() <= 1e-6 * exact.norm().max(1e-3), "{fd} vs {exact}");
        }
    }

    #[test]
    fn hyper_matches_finite_difference_of_dlp_y() {
        let ctx = WaveContext::new(1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = unit(&mut rng) * rng.random_range(0.1..1.0);
            let y = unit(&mut rng) * rng.random_range(1.2..2.0);
            let (nx, ny) = (unit(&mut rng), unit(&mut rng));
            let r = (x - y).norm();
            let h = 1e-5 * r;
            let f = |p: Vec3| eval_kernel(KernelKind::DlpY, &p, &y, &nx, &ny, &ctx).unwrap();
            let fd = (f(x + nx * h) - f(x - nx * h)) / (2.0 * h);
            let exact = eval_kernel(KernelKind::Hyper, &x, &y, &nx, &ny, &ctx).unwrap();
            let scale = 1.0 / (4.0 * PI * r.powi(3));
            assert!((fd - exact).norm() <= 1e-6 * exact.norm().max(scale), "{fd} vs {exact}");
        }
    }

    #[test]
    fn symmetries() {
        let ctx = WaveContext::new(4.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = unit(&mut rng) * rng.random_range(0.0..2.0);
            let y = unit(&mut rng) * rng.random_range(0.0..2.0);
            if (x - y).norm() < 1e-3 {
                continue;
            }
            let (nx, ny) = (unit(&mut rng), unit(&mut rng));
            let s1 = eval_kernel(KernelKind::Single, &x, &y, &nx, &ny, &ctx).unwrap();
            let s2 = eval_kernel(KernelKind::Single, &y, &x, &ny, &nx, &ctx).unwrap();
            assert_eq!(s1, s2);
            let r = (x - y).norm();
            assert!((s1.norm() - 1.0 / (4.0 * PI * r)).abs() <= 1e-15 / r);

            let h1 = eval_kernel(KernelKind::Hyper, &x, &y, &nx, &ny, &ctx).unwrap();
            let h2 = eval_kernel(KernelKind::Hyper, &y, &x, &ny, &nx, &ctx).unwrap();
            assert!((h1 - h2).norm() <= 1e-12 * h1.norm().max(1e-300));

            // combined kinds are the documented linear combinations
            let dy = eval_kernel(KernelKind::DlpY, &x, &y, &nx, &ny, &ctx).unwrap();
            let dx = eval_kernel(KernelKind::DlpX, &x, &y, &nx, &ny, &ctx).unwrap();
            let lhs = eval_kernel(KernelKind::NearLhs, &x, &y, &nx, &ny, &ctx).unwrap();
            let rhs = eval_kernel(KernelKind::NearRhs, &x, &y, &nx, &ny, &ctx).unwrap();
            let tc = eval_kernel(KernelKind::TargetCombined, &x, &y, &nx, &ny, &ctx).unwrap();
            assert!((lhs - (dy + ctx.alpha() * h1)).norm() <= 1e-13 * lhs.norm());
            assert!((rhs - (s1 + ctx.alpha() * dx)).norm() <= 1e-13 * rhs.norm());
            assert_eq!(rhs, tc);
        }
    }
}

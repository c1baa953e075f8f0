//! Verification suites behind `fdbem verify`. Every check reports the
//! measured value next to its bound.

use std::f64::consts::PI;
use std::fmt;

use fdbem::engine::{EngineOptions, FdaEngine};
use fdbem::linalg::norm2_estimate;
use fdbem::mesh::{compute_element_geometry, generate_sphere_mesh, ElementGeometry, Vec3};
use fdbem::oracles::{direct_sum, pulsating_sphere_exact};
use fdbem::solver::{l2_error, solve_exterior, ExteriorProblem, SolverConfig};
use fdbem::translation::kernel_matrix;
use fdbem::{eval_kernel, KernelKind, OperatorKind, WaveContext, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Kernels,
    Operators,
    Matvec,
    Solve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// `true` when the measured value must stay at or below the bound.
    pub upper: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, upper: true }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, upper: false }
    }

    pub fn passed(&self) -> bool {
        if self.upper {
            self.measured <= self.bound
        } else {
            self.measured >= self.bound
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.upper { "<=" } else { ">=" };
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {:.4e} {op} {:.4e}", self.name, self.measured, self.bound)
    }
}

fn sphere(n: u32) -> Result<ElementGeometry, CliError> {
    Ok(compute_element_geometry(&generate_sphere_mesh(n, 1.0)?)?.reversed_normals())
}

fn random_q(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

pub fn kernels() -> Result<Vec<Check>, CliError> {
    let z = Vec3::z();
    let o = Vec3::zeros();
    let st = WaveContext::static_limit();
    let mut out = Vec::new();
    let g = eval_kernel(KernelKind::Single, &o, &Vec3::new(0.5, 0.0, 0.0), &z, &z, &WaveContext::new(2.0 * PI)?)?;
    out.push(Check::at_most("single layer, r = 1/2, k = 2 pi, vs -1/(2 pi)", (g + 1.0 / (2.0 * PI)).norm(), 1e-12));
    let d = eval_kernel(KernelKind::DlpY, &o, &z, &z, &z, &st)?;
    out.push(Check::at_most("static axial double layer vs -1/(4 pi)", (d + 1.0 / (4.0 * PI)).norm(), 1e-12));
    let h = eval_kernel(KernelKind::Hyper, &o, &z, &z, &z, &st)?;
    out.push(Check::at_most("static axial hypersingular vs -1/(2 pi)", (h + 1.0 / (2.0 * PI)).norm(), 1e-12));

    // derivatives against central differences, and reciprocity
    let ctx = WaveContext::new(2.3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut unit = || loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() < 1.0 {
            break v.normalize();
        }
    };
    let (mut fd_dlp, mut fd_hyp, mut recip) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (x, y, nx, ny) = (unit() * 0.3, unit() * 1.4, unit(), unit());
        let r = (x - y).norm();
        let step = 1e-5 * r;
        let s = |p: Vec3| eval_kernel(KernelKind::Single, &p, &y, &nx, &ny, &ctx);
        let dx = eval_kernel(KernelKind::DlpX, &x, &y, &nx, &ny, &ctx)?;
        let fd = (s(x + nx * step)? - s(x - nx * step)?) / (2.0 * step);
        fd_dlp = fd_dlp.max((fd - dx).norm() / dx.norm().max(1e-3));
        let dy = |p: Vec3| eval_kernel(KernelKind::DlpY, &p, &y, &nx, &ny, &ctx);
        let hx = eval_kernel(KernelKind::Hyper, &x, &y, &nx, &ny, &ctx)?;
        let fd = (dy(x + nx * step)? - dy(x - nx * step)?) / (2.0 * step);
        fd_hyp = fd_hyp.max((fd - hx).norm() / hx.norm().max(1.0 / (4.0 * PI * r.powi(3))));
        let a = eval_kernel(KernelKind::DlpY, &x, &y, &nx, &ny, &ctx)?;
        let b = eval_kernel(KernelKind::DlpX, &y, &x, &ny, &nx, &ctx)?;
        recip = recip.max((a - b).norm() / a.norm());
    }
    out.push(Check::at_most("dG/dn_x vs central difference of G (max rel)", fd_dlp, 1e-6));
    out.push(Check::at_most("hypersingular vs central difference of dG/dn_y (max rel)", fd_hyp, 1e-6));
    out.push(Check::at_most("dG/dn_y(x, y) = dG/dn_x(y, x) (max rel)", recip, 1e-13));
    Ok(out)
}

/// Bases, compression and rotation reuse on a sphere with a high
/// frequency level (N = 2048, k = 4 pi).
pub fn operators(epsilon: f64) -> Result<Vec<Check>, CliError> {
    let geom = sphere(4)?;
    let ctx = WaveContext::new(4.0 * PI)?;
    let mut opts = EngineOptions::default();
    opts.params.epsilon = epsilon;
    let eng = FdaEngine::new(&geom, &ctx, OperatorKind::Lhs, &opts)?;
    let mut out = Vec::new();
    for level in 0..eng.stats().levels {
        let Some(b) = eng.basis(level) else { continue };
        for (name, check, equiv, svd) in [("outgoing", &b.out_check, &b.out_equiv, &b.up), ("incoming", &b.in_check, &b.in_equiv, &b.dn)] {
            let g = kernel_matrix(check, equiv, ctx.k());
            let err = norm2_estimate(&(&g * svd.pinv() * &g - &g), 60) / norm2_estimate(&g, 60);
            out.push(Check::at_most(format!("level {level} {:?} {name} basis |G G+ G - G| / |G|", b.regime), err, 2.0 * epsilon));
        }
    }
    let errs = eng.rotation_reuse_errors(20)?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    out.push(Check::at_most(format!("rotation reuse, {} sampled pairs (max rel)", errs.len()), worst, 5.0 * epsilon));
    out.push(Check::at_least("sampled high frequency pairs", errs.len() as f64, 20.0));
    let st = eng.stats();
    let frac = st.hf_m2l_factored as f64 / st.hf_m2l_operators.max(1) as f64;
    out.push(Check::at_least(format!("factored HF M2L fraction ({}/{})", st.hf_m2l_factored, st.hf_m2l_operators), frac, 0.5));
    Ok(out)
}

/// Fast matvec against the direct sum, both operator kinds.
pub fn matvec(subdivisions: u32, k: f64, epsilon: f64, vectors: usize) -> Result<Vec<Check>, CliError> {
    let geom = sphere(subdivisions)?;
    let ctx = WaveContext::new(k)?;
    let mut opts = EngineOptions::default();
    opts.params.epsilon = epsilon;
    let mut out = Vec::new();
    for kind in [OperatorKind::Lhs, OperatorKind::Rhs] {
        let eng = FdaEngine::new(&geom, &ctx, kind, &opts)?;
        let mut worst = 0.0f64;
        for seed in 0..vectors as u64 {
            let q = random_q(geom.len(), seed);
            worst = worst.max(l2_error(&eng.apply(&q)?, &direct_sum(&geom, &ctx, kind, &q)?)?);
        }
        out.push(Check::at_most(format!("{kind:?} matvec vs direct sum, N = {}, k = {k:.4}, {vectors} vectors", geom.len()), worst, 10.0 * epsilon));
    }
    Ok(out)
}

/// The two smallest pulsating sphere rows.
pub fn solve() -> Result<Vec<Check>, CliError> {
    let mut out = Vec::new();
    for (n, k, bound) in [(3, PI, 4.5e-2), (4, 2.0 * PI, 2.5e-2)] {
        let mesh = generate_sphere_mesh(n, 1.0)?;
        let ctx = WaveContext::new(k)?;
        let sol = solve_exterior(&mesh, &ctx, &ExteriorProblem::pulsating(mesh.num_triangles()), &SolverConfig::new(1e-3))?;
        let exact = vec![pulsating_sphere_exact(k, 1.0); sol.u.len()];
        let n_el = mesh.num_triangles();
        out.push(Check::at_most(format!("pulsating sphere L2 error, N = {n_el}, k = {k:.4}"), l2_error(&sol.u, &exact)?, bound));
        out.push(Check::at_most(format!("GMRES iterations, N = {n_el}"), sol.iterations as f64, 8.0));
    }
    Ok(out)
}

pub fn run(suite: Suite) -> Result<Vec<Check>, CliError> {
    match suite {
        Suite::Kernels => kernels(),
        Suite::Operators => operators(1e-3),
        Suite::Matvec => matvec(4, 2.0 * PI, 1e-3, 1),
        Suite::Solve => solve(),
    }
}

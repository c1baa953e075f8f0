//! Exterior Neumann and scattering solves with the combined boundary
//! integral equation and the fast matvec.

use std::time::Instant;

use crate::engine::{EngineOptions, EngineStats, FdaEngine};
use crate::error::{BemError, Result};
use crate::gmres::{gmres, GmresConfig};
use crate::kernel::{green, kernel_unchecked, KernelKind, OperatorKind, WaveContext, C64};
use crate::mesh::{compute_element_geometry, ElementGeometry, TriMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IncidentField {
    /// `e^{ik d.x}` with unit `direction`.
    PlaneWave { direction: Vec3 },
    /// `G(x, location)`.
    PointSource { location: Vec3 },
    None,
}

impl IncidentField {
    pub fn plane_wave(direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(BemError::InvalidArgument("plane wave direction must be nonzero".into()));
        }
        Ok(IncidentField::PlaneWave { direction: direction / n })
    }
}

/// `(u_inc(x), du_inc/dn(x))`.
pub fn incident_trace(field: &IncidentField, ctx: &WaveContext, x: &Vec3, n_x: &Vec3) -> Result<(C64, C64)> {
    let k = ctx.k();
    match field {
        IncidentField::PlaneWave { direction } => {
            let (s, c) = (k * direction.dot(x)).sin_cos();
            let u = C64::new(c, s);
            Ok((u, C64::new(0.0, k * direction.dot(n_x)) * u))
        }
        IncidentField::PointSource { location } => {
            let d = x - location;
            if d.norm_squared() == 0.0 {
                return Err(BemError::SingularEvaluation);
            }
            let zero = Vec3::zeros();
            Ok((green(&d, k), kernel_unchecked(KernelKind::DlpX, &d, n_x, &zero, k, C64::new(0.0, 0.0))))
        }
        IncidentField::None => Ok((C64::new(0.0, 0.0), C64::new(0.0, 0.0))),
    }
}

/// `u_inc + alpha du_inc/dn` at every collocation point of `geom`.
pub fn incident_rhs(field: &IncidentField, geom: &ElementGeometry, ctx: &WaveContext) -> Result<Vec<C64>> {
    geom.elements
        .iter()
        .map(|e| {
            let (u, dudn) = incident_trace(field, ctx, &e.centroid, &e.normal)?;
            Ok(u + ctx.alpha() * dudn)
        })
        .collect()
}

/// `b = A_rhs v + u_inc + alpha du_inc/dn`. `geom` must carry the normals
/// the engine was built with.
pub fn assemble_rhs(v: &[C64], field: &IncidentField, engine: &FdaEngine, geom: &ElementGeometry) -> Result<Vec<C64>> {
    if geom.len() != engine.len() {
        return Err(BemError::DimensionMismatch { expected: engine.len(), got: geom.len() });
    }
    let mut b = engine.apply_kind(OperatorKind::Rhs, v)?;
    for (bi, inc) in b.iter_mut().zip(incident_rhs(field, geom, engine.context())?) {
        *bi += inc;
    }
    Ok(b)
}

/// `||a - b|| / ||b||`.
pub fn l2_error(u_num: &[C64], u_ref: &[C64]) -> Result<f64> {
    if u_num.len() != u_ref.len() {
        return Err(BemError::DimensionMismatch { expected: u_ref.len(), got: u_num.len() });
    }
    let den = u_ref.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(BemError::InvalidArgument("reference vector is zero".into()));
    }
    let num = u_num.iter().zip(u_ref).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    Ok(num / den)
}

/// Boundary data of an exterior problem. Normals point into the scatterer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExteriorProblem {
    /// Prescribed `du/dn` per element; `None` means zero.
    pub neumann: Option<Vec<C64>>,
    pub incident: IncidentField,
}

impl ExteriorProblem {
    /// Uniform unit normal velocity on every element.
    pub fn pulsating(n: usize) -> Self {
        Self {
            neumann: Some(vec![C64::new(1.0, 0.0); n]),
            incident: IncidentField::None,
        }
    }

    /// Total field on a sound-hard obstacle: zero Neumann data, the incident
    /// wave enters through the right-hand side only.
    pub fn sound_hard(incident: IncidentField) -> Self {
        Self { neumann: None, incident }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub engine: EngineOptions,
    pub gmres: GmresConfig,
}

impl SolverConfig {
    /// Translation threshold and GMRES tolerance both set to `epsilon`.
    pub fn new(epsilon: f64) -> Self {
        let mut engine = EngineOptions::default();
        engine.params.epsilon = epsilon;
        Self {
            engine,
            gmres: GmresConfig { tolerance: epsilon, ..Default::default() },
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::new(EngineOptions::default().params.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    /// Tree, lists and operators of both engines.
    pub setup: f64,
    pub rhs: f64,
    pub solve: f64,
    pub total: f64,
    /// `solve / iterations`.
    pub per_iteration: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Surface potential per element.
    pub u: Vec<C64>,
    pub iterations: usize,
    /// `||b - A u|| / ||b||`, recomputed after the solve.
    pub residual: f64,
    pub history: Vec<f64>,
    pub timings: Timings,
    /// Largest engine plus the Krylov basis.
    pub memory_bytes: usize,
    pub lhs_stats: EngineStats,
}

fn validate_mesh(mesh: &TriMesh) -> Result<()> {
    if !mesh.is_closed() {
        return Err(BemError::OpenMesh);
    }
    if mesh.signed_volume() <= 0.0 {
        return Err(BemError::InvalidMesh("faces must be oriented outward".into()));
    }
    Ok(())
}

/// Full exterior solve on a closed, outward-oriented mesh. Returns
/// [`BemError::NotConverged`] when GMRES hits its iteration cap.
pub fn solve_exterior(mesh: &TriMesh, ctx: &WaveContext, problem: &ExteriorProblem, cfg: &SolverConfig) -> Result<Solution> {
    let start = Instant::now();
    validate_mesh(mesh)?;
    let geom = compute_element_geometry(mesh)?.reversed_normals();
    let n = geom.len();
    if let Some(v) = &problem.neumann {
        if v.len() != n {
            return Err(BemError::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let mut timings = Timings::default();
    let mut memory = 0;

    // the right-hand side engine is dropped before the left one is built
    let neumann = problem.neumann.as_ref().filter(|v| v.iter().any(|z| *z != C64::new(0.0, 0.0)));
    let b = match neumann {
        Some(v) => {
            let rhs = FdaEngine::new(&geom, ctx, OperatorKind::Rhs, &cfg.engine)?;
            timings.setup += rhs.stats().setup_seconds;
            memory = rhs.stats().memory_bytes;
            let clock = Instant::now();
            let b = assemble_rhs(v, &problem.incident, &rhs, &geom)?;
            timings.rhs = clock.elapsed().as_secs_f64();
            b
        }
        None => {
            let clock = Instant::now();
            let b = incident_rhs(&problem.incident, &geom, ctx)?;
            timings.rhs = clock.elapsed().as_secs_f64();
            b
        }
    };

    let lhs = FdaEngine::new(&geom, ctx, OperatorKind::Lhs, &cfg.engine)?;
    timings.setup += lhs.stats().setup_seconds;
    let clock = Instant::now();
    let out = gmres(|x| lhs.apply(x), &b, &cfg.gmres)?;
    timings.solve = clock.elapsed().as_secs_f64();
    if !out.converged {
        return Err(BemError::NotConverged { iterations: out.iterations, residual: out.residual });
    }
    timings.per_iteration = if out.iterations > 0 { timings.solve / out.iterations as f64 } else { 0.0 };

    let ax = lhs.apply(&out.x)?;
    let bnorm = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let residual = if bnorm == 0.0 {
        0.0
    } else {
        b.iter().zip(&ax).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt() / bnorm
    };
    memory = memory.max(lhs.stats().memory_bytes) + (out.iterations + 1) * n * std::mem::size_of::<C64>();
    timings.total = start.elapsed().as_secs_f64();
    Ok(Solution {
        u: out.x,
        iterations: out.iterations,
        residual,
        history: out.history,
        timings,
        memory_bytes: memory,
        lhs_stats: lhs.stats().clone(),
    })
}

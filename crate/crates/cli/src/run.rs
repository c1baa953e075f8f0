//! `solve` and `benchmark`.

use std::fmt::Write as _;
use std::path::Path;

use fdbem::mesh::{compute_element_geometry, generate_sphere_mesh, load_mesh, MeshFormat, TriMesh, Vec3};
use fdbem::oracles::{pulsating_sphere_exact, sphere_scattering_exact};
use fdbem::solver::{l2_error, solve_exterior, ExteriorProblem, Solution};
use fdbem::{WaveContext, C64};

use crate::config::{MeshSource, Problem, RunConfig};
use crate::CliError;

/// Largest sphere refinement `benchmark` accepts; one more step needs
/// several times the memory of a desktop.
pub const MAX_BENCHMARK_SUBDIVISIONS: u32 = 6;

pub struct SolveReport {
    pub elements: usize,
    pub k: f64,
    pub epsilon: f64,
    pub centroids: Vec<Vec3>,
    pub solution: Solution,
    /// Against the analytic solution, when the mesh is a generated sphere.
    pub l2_error: Option<f64>,
}

pub fn load(source: &MeshSource) -> Result<TriMesh, CliError> {
    Ok(match source {
        MeshSource::File(path) => {
            let format = MeshFormat::from_path(path)
                .ok_or_else(|| CliError::Config(format!("{}: unknown mesh format (use .off or .obj)", path.display())))?;
            load_mesh(path, format)?
        }
        MeshSource::Sphere { subdivisions, radius } => generate_sphere_mesh(*subdivisions, *radius)?,
    })
}

/// Analytic surface potential at the centroids, if one is known.
pub fn reference(cfg: &RunConfig, centroids: &[Vec3]) -> Result<Option<Vec<C64>>, CliError> {
    let MeshSource::Sphere { radius, .. } = cfg.mesh else { return Ok(None) };
    Ok(match cfg.problem {
        Problem::Pulsating => Some(vec![pulsating_sphere_exact(cfg.k, radius); centroids.len()]),
        Problem::PlaneWave(d) => Some(sphere_scattering_exact(centroids, cfg.k, radius, &d)?),
        Problem::PointSource(_) => None,
    })
}

pub fn solve(cfg: &RunConfig) -> Result<SolveReport, CliError> {
    let mesh = load(&cfg.mesh)?;
    let ctx = WaveContext::new(cfg.k)?;
    let n = mesh.num_triangles();
    let problem = match cfg.problem {
        Problem::Pulsating => ExteriorProblem::pulsating(n),
        other => ExteriorProblem::sound_hard(other.incident()?),
    };
    let solution = solve_exterior(&mesh, &ctx, &problem, &cfg.solver_config())?;
    let centroids = compute_element_geometry(&mesh)?.centroids();
    let l2 = match reference(cfg, &centroids)? {
        Some(r) => Some(l2_error(&solution.u, &r)?),
        None => None,
    };
    Ok(SolveReport { elements: n, k: cfg.k, epsilon: cfg.epsilon, centroids, solution, l2_error: l2 })
}

pub fn csv(report: &SolveReport) -> String {
    let mut s = String::from("id,cx,cy,cz,re_u,im_u,abs_u\n");
    for (i, (c, u)) in report.centroids.iter().zip(&report.solution.u).enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{},{},{}", c.x, c.y, c.z, u.re, u.im, u.norm());
    }
    s
}

pub fn summary(report: &SolveReport) -> String {
    let sol = &report.solution;
    let st = &sol.lhs_stats;
    let mut s = String::new();
    let _ = writeln!(s, "N = {}", report.elements);
    let _ = writeln!(s, "k = {}", report.k);
    let _ = writeln!(s, "epsilon = {}", report.epsilon);
    let _ = writeln!(s, "T_t (s) = {:.3}", sol.timings.total);
    let _ = writeln!(s, "T_it (s) = {:.4}", sol.timings.per_iteration);
    let _ = writeln!(s, "N_it = {}", sol.iterations);
    let _ = writeln!(s, "residual = {:e}", sol.residual);
    let _ = writeln!(s, "M (MB, estimate) = {:.1}", sol.memory_bytes as f64 / 1e6);
    let _ = writeln!(s, "setup (s) = {:.3}", sol.timings.setup);
    let _ = writeln!(s, "tree levels = {}", st.levels);
    let _ = writeln!(s, "HF M2L factored = {}/{}", st.hf_m2l_factored, st.hf_m2l_operators);
    if let Some(e) = report.l2_error {
        let _ = writeln!(s, "L2-error = {e:e}");
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Output { path: path.display().to_string(), source })
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<String, CliError> {
    let report = solve(cfg)?;
    let text = summary(&report);
    if let Some(p) = &cfg.csv {
        write(p, &csv(&report))?;
    }
    if let Some(p) = &cfg.summary {
        write(p, &text)?;
    }
    Ok(text)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

pub struct BenchmarkRow {
    pub subdivisions: u32,
    pub report: SolveReport,
}

/// Pulsating unit sphere at `N = 8 4^n`, `k = pi 2^(n-3)`.
pub fn benchmark(base: &RunConfig, n_min: u32, n_max: u32, mut on_row: impl FnMut(&BenchmarkRow)) -> Result<(Vec<BenchmarkRow>, Option<f64>), CliError> {
    if n_min > n_max {
        return Err(CliError::Config(format!("empty range {n_min}..={n_max}")));
    }
    if n_max > MAX_BENCHMARK_SUBDIVISIONS {
        return Err(CliError::Config(format!(
            "resource guard: n_max = {n_max} exceeds {MAX_BENCHMARK_SUBDIVISIONS}"
        )));
    }
    let mut rows = Vec::new();
    for n in n_min..=n_max {
        let mut cfg = base.clone();
        cfg.mesh = MeshSource::Sphere { subdivisions: n, radius: 1.0 };
        cfg.k = std::f64::consts::PI * 2f64.powi(n as i32 - 3);
        cfg.problem = Problem::Pulsating;
        let row = BenchmarkRow { subdivisions: n, report: solve(&cfg)? };
        on_row(&row);
        rows.push(row);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.report.elements as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.report.solution.timings.per_iteration).collect();
    Ok((rows, loglog_slope(&x, &y)))
}

pub fn benchmark_header() -> &'static str {
    "     N        k      T_t(s)    T_it(s)  N_it    M(MB)    L2-error"
}

pub fn benchmark_line(row: &BenchmarkRow) -> String {
    let r = &row.report;
    let s = &r.solution;
    format!(
        "{:>6} {:>8.4} {:>11.3} {:>10.4} {:>5} {:>8.1} {:>11.3e}",
        r.elements,
        r.k,
        s.timings.total,
        s.timings.per_iteration,
        s.iterations,
        s.memory_bytes as f64 / 1e6,
        r.l2_error.unwrap_or(f64::NAN)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.25)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.25).abs() < 1e-12);
        assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
        assert_eq!(loglog_slope(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(loglog_slope(&[1.0, 2.0], &[0.0, 2.0]), None);
    }

    #[test]
    fn benchmark_guards() {
        let cfg = RunConfig::default();
        assert!(matches!(benchmark(&cfg, 3, 7, |_| {}), Err(CliError::Config(_))));
        assert!(matches!(benchmark(&cfg, 4, 3, |_| {}), Err(CliError::Config(_))));
    }

    #[test]
    fn small_solve_report() {
        let mut cfg = RunConfig::default();
        cfg.mesh = MeshSource::Sphere { subdivisions: 2, radius: 1.0 };
        cfg.k = 1.0;
        let r = solve(&cfg).unwrap();
        assert_eq!(r.elements, 128);
        let text = csv(&r);
        assert_eq!(text.lines().count(), 129);
        assert!(summary(&r).contains("N = 128"));
        assert!(r.l2_error.unwrap() < 0.1);
    }
}

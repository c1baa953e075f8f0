//! Run configuration: a `key = value` file plus command-line overrides.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use fdbem::engine::EngineOptions;
use fdbem::gmres::GmresConfig;
use fdbem::mesh::Vec3;
use fdbem::solver::{IncidentField, SolverConfig};
use fdbem::translation::TranslationParams;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    File(PathBuf),
    Sphere { subdivisions: u32, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Problem {
    /// Unit normal velocity on the whole surface.
    Pulsating,
    /// Sound-hard obstacle in a plane wave travelling along the vector.
    PlaneWave(Vec3),
    /// Sound-hard obstacle excited by a monopole at the point.
    PointSource(Vec3),
}

impl Problem {
    pub fn incident(&self) -> Result<IncidentField, CliError> {
        Ok(match self {
            Problem::Pulsating => IncidentField::None,
            Problem::PlaneWave(d) => IncidentField::plane_wave(*d).map_err(|e| CliError::Config(e.to_string()))?,
            Problem::PointSource(x) => IncidentField::PointSource { location: *x },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSource,
    pub k: f64,
    pub epsilon: f64,
    pub p0: usize,
    /// Basis truncation at `basis_ratio * epsilon`.
    pub basis_ratio: f64,
    pub max_leaf: usize,
    pub threads: usize,
    pub problem: Problem,
    /// Defaults to `epsilon`.
    pub gmres_tol: Option<f64>,
    pub gmres_max_iter: usize,
    pub gmres_restart: Option<usize>,
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh: MeshSource::Sphere { subdivisions: 3, radius: 1.0 },
            k: PI,
            epsilon: 1e-3,
            p0: 1,
            basis_ratio: TranslationParams::default().basis_ratio,
            max_leaf: EngineOptions::default().max_leaf,
            threads: 1,
            problem: Problem::Pulsating,
            gmres_tol: None,
            gmres_max_iter: GmresConfig::default().max_iterations,
            gmres_restart: None,
            csv: None,
            summary: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mesh",
    "sphere_subdivisions",
    "sphere_radius",
    "k",
    "epsilon",
    "p0",
    "basis_ratio",
    "max_leaf",
    "threads",
    "problem",
    "gmres_tol",
    "gmres_max_iter",
    "gmres_restart",
    "csv",
    "summary",
];

fn bad(key: &str, value: &str, why: &str) -> CliError {
    CliError::Config(format!("{key} = {value}: {why}"))
}

/// A number, optionally written as a multiple of pi: `3.2`, `pi`, `2pi`,
/// `0.5*pi`.
pub fn parse_real(text: &str) -> Option<f64> {
    let t = text.trim().to_ascii_lowercase();
    let (head, pi) = match t.strip_suffix("pi") {
        Some(h) => (h.trim_end().trim_end_matches('*').trim(), true),
        None => (t.as_str(), false),
    };
    let base = if pi && head.is_empty() { 1.0 } else { head.parse::<f64>().ok()? };
    let v = if pi { base * PI } else { base };
    v.is_finite().then_some(v)
}

fn positive(key: &str, value: &str) -> Result<f64, CliError> {
    match parse_real(value) {
        Some(v) if v > 0.0 => Ok(v),
        _ => Err(bad(key, value, "expected a positive number")),
    }
}

fn count(key: &str, value: &str, min: usize) -> Result<usize, CliError> {
    match value.trim().parse::<usize>() {
        Ok(v) if v >= min => Ok(v),
        _ => Err(bad(key, value, &format!("expected an integer >= {min}"))),
    }
}

fn vector(key: &str, words: &[&str], value: &str) -> Result<Vec3, CliError> {
    if words.len() != 3 {
        return Err(bad(key, value, "expected three coordinates"));
    }
    let c: Option<Vec<f64>> = words.iter().map(|w| parse_real(w)).collect();
    c.map(|c| Vec3::new(c[0], c[1], c[2])).ok_or_else(|| bad(key, value, "bad coordinate"))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "mesh" => self.mesh = MeshSource::File(PathBuf::from(v)),
            "sphere_subdivisions" => {
                let radius = match self.mesh {
                    MeshSource::Sphere { radius, .. } => radius,
                    MeshSource::File(_) => 1.0,
                };
                let n = v.parse::<u32>().map_err(|_| bad(key, v, "expected an integer"))?;
                self.mesh = MeshSource::Sphere { subdivisions: n, radius };
            }
            "sphere_radius" => {
                let subdivisions = match self.mesh {
                    MeshSource::Sphere { subdivisions, .. } => subdivisions,
                    MeshSource::File(_) => 3,
                };
                self.mesh = MeshSource::Sphere { subdivisions, radius: positive(key, v)? };
            }
            "k" => self.k = positive(key, v)?,
            "epsilon" => {
                let e = positive(key, v)?;
                if e >= 1.0 {
                    return Err(bad(key, v, "must be below 1"));
                }
                self.epsilon = e;
            }
            "p0" => self.p0 = count(key, v, 0)?,
            "basis_ratio" => {
                let r = positive(key, v)?;
                if r > 1.0 {
                    return Err(bad(key, v, "must not exceed 1"));
                }
                self.basis_ratio = r;
            }
            "max_leaf" => self.max_leaf = count(key, v, 1)?,
            "threads" => self.threads = count(key, v, 1)?,
            "problem" => {
                let words: Vec<&str> = v.split_whitespace().collect();
                self.problem = match words.first().copied() {
                    Some("pulsating") if words.len() == 1 => Problem::Pulsating,
                    Some("plane_wave") => {
                        let d = vector(key, &words[1..], v)?;
                        if d.norm() == 0.0 {
                            return Err(bad(key, v, "direction must be nonzero"));
                        }
                        Problem::PlaneWave(d)
                    }
                    Some("point_source") => Problem::PointSource(vector(key, &words[1..], v)?),
                    _ => return Err(bad(key, v, "expected pulsating, plane_wave dx dy dz or point_source x y z")),
                };
            }
            "gmres_tol" => self.gmres_tol = Some(positive(key, v)?),
            "gmres_max_iter" => self.gmres_max_iter = count(key, v, 1)?,
            "gmres_restart" => {
                let r = count(key, v, 0)?;
                self.gmres_restart = (r > 0).then_some(r);
            }
            "csv" => self.csv = Some(PathBuf::from(v)),
            "summary" => self.summary = Some(PathBuf::from(v)),
            other => return Err(CliError::Config(format!("unknown key {other:?}; known keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key, value).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `KEY=VALUE` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not KEY=VALUE")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.epsilon);
        cfg.engine = EngineOptions {
            params: TranslationParams { basis_ratio: self.basis_ratio, ..TranslationParams::new(self.epsilon, self.p0) },
            max_leaf: self.max_leaf,
            threads: self.threads,
        };
        cfg.gmres = GmresConfig {
            tolerance: self.gmres_tol.unwrap_or(self.epsilon),
            max_iterations: self.gmres_max_iter,
            restart: self.gmres_restart,
        };
        cfg
    }
}

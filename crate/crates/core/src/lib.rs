//! Fast directional boundary element solver for exterior Helmholtz problems.

pub mod directions;
pub mod engine;
pub mod gmres;
pub mod error;
pub mod interaction;
pub mod kernel;
pub mod linalg;
pub mod mesh;
pub mod octree;
pub mod oracles;
pub mod quadrature;
pub mod solver;
pub mod translation;

pub use error::{BemError, Result};
pub use kernel::{eval_kernel, KernelKind, OperatorKind, WaveContext, C64};
pub use mesh::{compute_element_geometry, generate_sphere_mesh, load_mesh, Element, ElementGeometry, MeshFormat, TriMesh, Vec3};

//! Equivalent and check point clouds, per-level compression bases and the
//! compressed translation operators built from them.
//!
//! Coordinates in compressed form: an outgoing state is `s = S^-1 U^H p`
//! for outgoing check potentials `p` (the equivalent density is `V s`); an
//! incoming state is `t = U^H p` for incoming check potentials `p` (the
//! equivalent density is `V S^-1 t`). `U, S, V` come from truncated SVDs of
//! the equivalent-to-check kernel matrices of each level.
//!
//! High frequency levels work in a reference frame per direction: the
//! outgoing clouds for direction `u` are the `+z` clouds rotated by
//! `rotation_for(u)^T`, and the incoming clouds for direction `v` are the
//! `-z` clouds rotated by `rotation_for(antipode(v))^T`.

use nalgebra::{DMatrix, Matrix3};

use crate::directions::DirectionSet;
use crate::error::{BemError, Result};
use crate::interaction::{high_frequency_distance, NONDIR};
use crate::kernel::{green, WaveContext, C64};
use crate::linalg::{gemm, gemv_acc, truncated_pinv, TruncatedSvd};
use crate::mesh::Vec3;
use crate::octree::{Octree, Regime};

/// Low frequency equivalent cube (and high frequency incoming check cube)
/// side, relative to the cube width.
pub const NEAR_SCALE: f64 = 1.05;
/// Low frequency outgoing check / incoming equivalent cube side.
pub const FAR_SCALE: f64 = 2.95;
/// High frequency cube clouds are rotated, so they must enclose the
/// circumscribed sphere of the cube.
pub const ROTATED_SCALE: f64 = NEAR_SCALE * 1.732_050_807_568_877_2;
/// Frustum apertures are capped to keep the transverse extent finite.
pub const MAX_HALF_ANGLE: f64 = 1.4;
/// Quantization of rotated offsets used as table keys.
const KEY_SCALE: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationParams {
    pub epsilon: f64,
    pub p0: usize,
    /// Extra points per edge of the high frequency clouds, per wavelength
    /// of the rotated cube side.
    pub hf_density: f64,
    /// Singular values below `basis_ratio * epsilon * sigma_max` are dropped
    /// from the equivalent-to-check bases. Below one so the truncation noise
    /// stays under a GMRES tolerance of `epsilon`; at exactly one the solver
    /// needs about twice the iterations of the dense system.
    pub basis_ratio: f64,
}

impl Default for TranslationParams {
    fn default() -> Self {
        Self::new(1e-3, 1)
    }
}

impl TranslationParams {
    pub fn new(epsilon: f64, p0: usize) -> Self {
        Self { epsilon, p0, hf_density: 1.0, basis_ratio: 0.3 }
    }

    /// `round(log10(1/eps)) + p0`, at least 2.
    pub fn points_per_edge(&self) -> usize {
        let p = (1.0 / self.epsilon).log10().round().max(0.0) as usize + self.p0;
        p.max(2)
    }

    /// Points per edge of the high frequency clouds of a cube `width` wide:
    /// `p + 2` plus `hf_density` points per wavelength of the rotated side.
    pub fn hf_points_per_edge(&self, width: f64, wavelength: f64) -> usize {
        let extra = (self.hf_density * ROTATED_SCALE * width / wavelength).ceil() as usize;
        self.points_per_edge() + 2 + extra
    }

    pub fn basis_epsilon(&self) -> f64 {
        self.epsilon * self.basis_ratio
    }
}

/// The `6p^2 - 12p + 8` surface points of a `p x p x p` lattice spanning the
/// cube of side `scale * width` around `center`.
pub fn cube_surface_points(center: &Vec3, width: f64, p: usize, scale: f64) -> Result<Vec<Vec3>> {
    if p < 2 {
        return Err(BemError::InvalidArgument(format!("need at least 2 points per edge, got {p}")));
    }
    let side = scale * width;
    let coord = |i: usize| side * ((2 * i) as f64 - (p - 1) as f64) / (2 * (p - 1)) as f64;
    let mut pts = Vec::with_capacity(6 * p * p - 12 * p + 8);
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                let on_surface = [i, j, k].iter().any(|&t| t == 0 || t == p - 1);
                if on_surface {
                    pts.push(center + Vec3::new(coord(i), coord(j), coord(k)));
                }
            }
        }
    }
    Ok(pts)
}

/// Proper rotation taking `direction` to `+z`: the identity for `+z`, a half
/// turn about `x` for `-z`, otherwise the minimal rotation.
pub fn rotation_for(direction: &Vec3) -> Result<Matrix3<f64>> {
    let n = direction.norm();
    if !(n > 0.0) {
        return Err(BemError::InvalidArgument("zero direction".into()));
    }
    let u = direction / n;
    if u == Vec3::z() {
        return Ok(Matrix3::identity());
    }
    if u == -Vec3::z() {
        return Ok(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
    }
    // Rodrigues with axis u x z; 1 + cos computed without cancellation.
    let a = u.cross(&Vec3::z());
    let s2 = u.x * u.x + u.y * u.y;
    let one_plus_c = if u.z >= 0.0 { 1.0 + u.z } else { s2 / (1.0 - u.z) };
    let k = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Ok(Matrix3::identity() + k + k * k / one_plus_c)
}

/// Frustum of check points along `direction`: the cube-surface lattice
/// `(a, b, c)` goes to `(t rho a, t rho b, rho)` with `t = tan(half_angle)`
/// and `rho = d_min (d_max / d_min)^((c + 1) / 2)`, rotated onto
/// `direction` and shifted to `center`.
pub fn directional_check_cloud(
    center: &Vec3,
    direction: &Vec3,
    p: usize,
    half_angle: f64,
    d_min: f64,
    d_max: f64,
) -> Result<Vec<Vec3>> {
    if !(d_min > 0.0 && d_max >= d_min) {
        return Err(BemError::InvalidArgument(format!("bad frustum range [{d_min}, {d_max}]")));
    }
    if !(half_angle > 0.0 && half_angle <= MAX_HALF_ANGLE) {
        return Err(BemError::InvalidArgument(format!("bad frustum aperture {half_angle}")));
    }
    let rt = rotation_for(direction)?.transpose();
    let reference = frustum(p, half_angle, d_min, d_max, 1.0)?;
    Ok(reference.iter().map(|f| center + rt * f).collect())
}

fn frustum(p: usize, half_angle: f64, d_min: f64, d_max: f64, sign: f64) -> Result<Vec<Vec3>> {
    let t = half_angle.tan();
    let ratio = d_max / d_min;
    Ok(cube_surface_points(&Vec3::zeros(), 2.0, p, 1.0)?
        .into_iter()
        .map(|g| {
            let rho = d_min * ratio.powf(0.5 * (g.z + 1.0));
            Vec3::new(t * rho * g.x, t * rho * g.y, sign * rho)
        })
        .collect())
}

/// Geometry of a high frequency level's check frustum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumShape {
    pub half_angle: f64,
    pub d_min: f64,
    pub d_max: f64,
}

/// Kernel matrix `G(x_i - y_j)` between point lists.
pub fn kernel_matrix(targets: &[Vec3], sources: &[Vec3], k: f64) -> DMatrix<C64> {
    DMatrix::from_fn(targets.len(), sources.len(), |i, j| green(&(targets[i] - sources[j]), k))
}

/// Compression bases and clouds of one tree level. Clouds are relative to
/// the cube centre and expressed in the reference frame.
#[derive(Debug, Clone)]
pub struct LevelBasis {
    pub level: usize,
    pub width: f64,
    pub regime: Regime,
    pub p: usize,
    pub out_equiv: Vec<Vec3>,
    pub out_check: Vec<Vec3>,
    pub in_equiv: Vec<Vec3>,
    pub in_check: Vec<Vec3>,
    pub up: TruncatedSvd,
    pub dn: TruncatedSvd,
    /// `S_up^-1 U_up^H`: outgoing check potentials to outgoing state.
    pub s2m: DMatrix<C64>,
    /// `V_up`: outgoing state to equivalent density.
    pub up_v: DMatrix<C64>,
    /// `U_dn^H`: incoming check potentials to incoming state.
    pub dn_uh: DMatrix<C64>,
    /// `V_dn S_dn^-1`: incoming state to equivalent density.
    pub l2t: DMatrix<C64>,
    pub directions: Option<DirectionSet>,
    /// `rotation_for(direction)` per direction of a high frequency level.
    pub frames: Vec<Matrix3<f64>>,
    pub frustum: Option<FrustumShape>,
}

impl LevelBasis {
    pub fn build(tree: &Octree, level: usize, ctx: &WaveContext, params: &TranslationParams) -> Result<Self> {
        let w = tree.level_width(level);
        let regime = tree.level_regime(level);
        let p = match regime {
            Regime::Low => params.points_per_edge(),
            Regime::High => params.hf_points_per_edge(w, ctx.wavelength()),
        };
        let k = ctx.k();
        let o = Vec3::zeros();
        let (out_equiv, out_check, in_equiv, in_check, directions, frames, frustum_shape) = match regime {
            Regime::Low => (
                cube_surface_points(&o, w, p, NEAR_SCALE)?,
                cube_surface_points(&o, w, p, FAR_SCALE)?,
                cube_surface_points(&o, w, p, FAR_SCALE)?,
                cube_surface_points(&o, w, p, NEAR_SCALE)?,
                None,
                Vec::new(),
                None,
            ),
            Regime::High => {
                let set = tree
                    .directions(level)
                    .cloned()
                    .ok_or_else(|| BemError::InvalidArgument("regimes not classified".into()))?;
                let radius = 0.5 * 3f64.sqrt() * w;
                let d_adm = high_frequency_distance(w, ctx);
                let d_min = d_adm - radius;
                let d_max = (3f64.sqrt() * tree.root().width).max(2.0 * d_min);
                let half_angle = (set.angular_radius() + (radius / d_adm).min(1.0).asin()).min(MAX_HALF_ANGLE);
                let shape = FrustumShape { half_angle, d_min, d_max };
                let frames = set.directions().iter().map(rotation_for).collect::<Result<Vec<_>>>()?;
                (
                    cube_surface_points(&o, w, p, ROTATED_SCALE)?,
                    frustum(p, half_angle, d_min, d_max, 1.0)?,
                    frustum(p, half_angle, d_min, d_max, -1.0)?,
                    cube_surface_points(&o, w, p, ROTATED_SCALE)?,
                    Some(set),
                    frames,
                    Some(shape),
                )
            }
        };
        let up = truncated_pinv(&kernel_matrix(&out_check, &out_equiv, k), params.basis_epsilon())?;
        let dn = truncated_pinv(&kernel_matrix(&in_check, &in_equiv, k), params.basis_epsilon())?;
        Ok(Self {
            level,
            width: w,
            regime,
            p,
            s2m: up.sinv_uh(),
            up_v: up.v.clone(),
            dn_uh: dn.u.adjoint(),
            l2t: dn.v_sinv(),
            out_equiv,
            out_check,
            in_equiv,
            in_check,
            up,
            dn,
            directions,
            frames,
            frustum: frustum_shape,
        })
    }

    pub fn rank_up(&self) -> usize {
        self.up.rank()
    }

    pub fn rank_dn(&self) -> usize {
        self.dn.rank()
    }

    /// Frame of outgoing direction `dir`; identity for low frequency.
    pub fn out_frame(&self, dir: u32) -> Matrix3<f64> {
        if dir == NONDIR {
            Matrix3::identity()
        } else {
            self.frames[dir as usize]
        }
    }

    /// Frame of incoming direction `dir`.
    pub fn in_frame(&self, dir: u32) -> Matrix3<f64> {
        match (&self.directions, dir) {
            (Some(set), d) if d != NONDIR => self.frames[set.antipode(d as usize)],
            _ => Matrix3::identity(),
        }
    }

    fn place(points: &[Vec3], center: &Vec3, frame: &Matrix3<f64>) -> Vec<Vec3> {
        let rt = frame.transpose();
        points.iter().map(|q| center + rt * q).collect()
    }

    pub fn out_equiv_at(&self, center: &Vec3, dir: u32) -> Vec<Vec3> {
        Self::place(&self.out_equiv, center, &self.out_frame(dir))
    }

    pub fn out_check_at(&self, center: &Vec3, dir: u32) -> Vec<Vec3> {
        Self::place(&self.out_check, center, &self.out_frame(dir))
    }

    pub fn in_equiv_at(&self, center: &Vec3, dir: u32) -> Vec<Vec3> {
        Self::place(&self.in_equiv, center, &self.in_frame(dir))
    }

    pub fn in_check_at(&self, center: &Vec3, dir: u32) -> Vec<Vec3> {
        Self::place(&self.in_check, center, &self.in_frame(dir))
    }

    /// Table key of a same-level translation from a source cube to a target
    /// cube at `offset = target - source`, seen from outgoing direction
    /// `dir` of the source.
    pub fn m2l_key(&self, offset: &Vec3, dir: u32) -> [i64; 3] {
        let r = self.out_frame(dir) * offset / self.width;
        let q = if dir == NONDIR { 1.0 } else { KEY_SCALE };
        [(r.x * q).round() as i64, (r.y * q).round() as i64, (r.z * q).round() as i64]
    }

    /// Offset in the reference frame for a key produced by [`Self::m2l_key`].
    fn key_offset(&self, key: &[i64; 3], directional: bool) -> Vec3 {
        let q = if directional { KEY_SCALE } else { 1.0 };
        Vec3::new(key[0] as f64, key[1] as f64, key[2] as f64) * (self.width / q)
    }
}

/// Compressed same-level translation, dense or as a low-rank pair.
#[derive(Debug, Clone, PartialEq)]
pub enum M2lOperator {
    Dense(DMatrix<C64>),
    /// `K ~ u v`
    Factored { u: DMatrix<C64>, v: DMatrix<C64> },
}

impl M2lOperator {
    pub fn apply_acc(&self, x: &[C64], y: &mut [C64]) {
        match self {
            M2lOperator::Dense(k) => gemv_acc(k, x, y),
            M2lOperator::Factored { u, v } => {
                let mut t = vec![C64::new(0.0, 0.0); v.nrows()];
                gemv_acc(v, x, &mut t);
                gemv_acc(u, &t, y);
            }
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            M2lOperator::Dense(k) => k.nrows(),
            M2lOperator::Factored { u, .. } => u.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            M2lOperator::Dense(k) => k.ncols(),
            M2lOperator::Factored { v, .. } => v.ncols(),
        }
    }

    /// `Y = op X` on `m` column-major columns; `tmp` is scratch for the
    /// factored middle.
    pub fn apply_columns(&self, x: &[C64], m: usize, y: &mut [C64], tmp: &mut Vec<C64>) {
        match self {
            M2lOperator::Dense(k) => gemm(k.nrows(), k.ncols(), m, k.as_slice(), x, y, false),
            M2lOperator::Factored { u, v } => {
                tmp.resize(v.nrows() * m, C64::new(0.0, 0.0));
                gemm(v.nrows(), v.ncols(), m, v.as_slice(), x, tmp, false);
                gemm(u.nrows(), u.ncols(), m, u.as_slice(), tmp, y, false);
            }
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, M2lOperator::Factored { .. })
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match self {
            M2lOperator::Dense(k) => k.clone(),
            M2lOperator::Factored { u, v } => u * v,
        }
    }

    pub fn entries(&self) -> usize {
        match self {
            M2lOperator::Dense(k) => k.len(),
            M2lOperator::Factored { u, v } => u.len() + v.len(),
        }
    }
}

/// Uncompressed `K`: outgoing equivalent points of the source to incoming
/// check points of the target, both in the reference frame, with
/// `offset = target - source` already rotated.
pub fn m2l_kernel(basis: &LevelBasis, offset: &Vec3, k: f64) -> DMatrix<C64> {
    let targets: Vec<Vec3> = basis.in_check.iter().map(|x| offset + x).collect();
    kernel_matrix(&targets, &basis.out_equiv, k)
}

/// Compressed `K~ = U_dn^H K V_up`, factored by a second truncated SVD when
/// its rank is below half its smaller dimension.
pub fn build_m2l(basis: &LevelBasis, offset: &Vec3, ctx: &WaveContext, eps: f64) -> Result<M2lOperator> {
    compress(&basis.dn_uh * m2l_kernel(basis, offset, ctx.k()) * &basis.up_v, eps)
}

/// Truncated SVD of a transfer; kept factored when that halves the work.
pub fn compress(kt: DMatrix<C64>, eps: f64) -> Result<M2lOperator> {
    let svd = truncated_pinv(&kt, eps)?;
    let r = svd.rank();
    if 2 * r < kt.nrows().min(kt.ncols()) {
        let mut u = svd.u.clone();
        for (i, s) in svd.sigma.iter().enumerate() {
            u.column_mut(i).scale_mut(*s);
        }
        Ok(M2lOperator::Factored { u, v: svd.v.adjoint() })
    } else {
        Ok(M2lOperator::Dense(kt))
    }
}

/// Build the operator for a key produced by [`LevelBasis::m2l_key`].
pub fn build_m2l_for_key(basis: &LevelBasis, key: &[i64; 3], directional: bool, ctx: &WaveContext, eps: f64) -> Result<M2lOperator> {
    build_m2l(basis, &basis.key_offset(key, directional), ctx, eps)
}

/// Offset of the child centre in octant `o` from its parent's centre.
pub fn octant_offset(o: u8, parent_width: f64) -> Vec3 {
    let s = |bit: u8| if o & bit != 0 { 0.25 } else { -0.25 };
    Vec3::new(s(1), s(2), s(4)) * parent_width
}

/// Child outgoing state (direction `child_dir`) to parent outgoing state
/// (direction `parent_dir`).
pub fn build_m2m(parent: &LevelBasis, child: &LevelBasis, octant: u8, parent_dir: u32, child_dir: u32, k: f64) -> DMatrix<C64> {
    let check = parent.out_check_at(&Vec3::zeros(), parent_dir);
    let equiv = child.out_equiv_at(&octant_offset(octant, parent.width), child_dir);
    &parent.s2m * kernel_matrix(&check, &equiv, k) * &child.up_v
}

/// Parent incoming state (direction `parent_dir`) to child incoming state
/// (direction `child_dir`).
pub fn build_l2l(parent: &LevelBasis, child: &LevelBasis, octant: u8, parent_dir: u32, child_dir: u32, k: f64) -> DMatrix<C64> {
    let check = child.in_check_at(&octant_offset(octant, parent.width), child_dir);
    let equiv = parent.in_equiv_at(&Vec3::zeros(), parent_dir);
    &child.dn_uh * kernel_matrix(&check, &equiv, k) * &parent.l2t
}

/// Direction of a child level corresponding to `dir` of its parent level.
pub fn child_direction(parent: &LevelBasis, child: &LevelBasis, dir: u32) -> u32 {
    match (&parent.directions, &child.directions) {
        (Some(ps), Some(_)) if dir != NONDIR => ps.coarser_index(dir as usize) as u32,
        _ => NONDIR,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2_estimate;
    use crate::octree::build_octree;
    use crate::oracles::point_potential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rand_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() <= 1.0 {
                return v.normalize();
            }
        }
    }

    fn rand_c(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn rel(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    /// Level 2 of [`grid_tree`] is 0.873 wide; this makes it 1.05 wavelengths.
    fn hf_context() -> WaveContext {
        WaveContext::new(2.0 * PI * 1.05 / 0.872_812_5).unwrap()
    }

    /// Points on a regular grid; the root is about 3.5 wide.
    fn grid_tree(n: usize, ctx: &WaveContext) -> Octree {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let f = |t: usize| -1.9 + 3.8 * (t as f64 + 0.5) / n as f64;
                    pts.push(Vec3::new(f(i), f(j), f(k)));
                }
            }
        }
        let mut tree = build_octree(&pts, 8).unwrap();
        tree.classify_regimes(ctx).unwrap();
        tree
    }

    #[test]
    fn surface_point_counts() {
        let c = cube_surface_points(&Vec3::zeros(), 1.0, 2, 1.0).unwrap();
        assert_eq!(c.len(), 8);
        assert!(c.iter().all(|p| p.iter().all(|x| x.abs() == 0.5)));
        assert_eq!(cube_surface_points(&Vec3::zeros(), 1.0, 4, 1.0).unwrap().len(), 56);
        let a = cube_surface_points(&Vec3::zeros(), 1.0, 3, 1.0).unwrap();
        let b = cube_surface_points(&Vec3::repeat(1.0), 1.0, 3, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x + Vec3::repeat(1.0) - y).norm() < 1e-15);
        }
        assert!(cube_surface_points(&Vec3::zeros(), 1.0, 1, 1.0).is_err());
    }

    #[test]
    fn points_per_edge_rule() {
        assert_eq!(TranslationParams::new(1e-3, 1).points_per_edge(), 4);
        assert_eq!(TranslationParams::new(1e-4, 1).points_per_edge(), 5);
        assert_eq!(TranslationParams::new(1e-6, 2).points_per_edge(), 8);
        // 1.05 wavelengths wide: the rotated cube spans 1.9 wavelengths
        assert_eq!(TranslationParams::default().hf_points_per_edge(1.05, 1.0), 8);
        assert_eq!(TranslationParams::default().hf_points_per_edge(2.1, 1.0), 10);
    }

    #[test]
    fn rotations() {
        assert_eq!(rotation_for(&Vec3::z()).unwrap(), Matrix3::identity());
        let r = rotation_for(&-Vec3::z()).unwrap();
        assert_eq!(r * -Vec3::z(), Vec3::z());
        let r = rotation_for(&Vec3::x()).unwrap();
        assert!((r * Vec3::x() - Vec3::z()).norm() < 1e-15);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-14);
        assert!(rotation_for(&Vec3::zeros()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let u = rand_unit(&mut rng);
            let r = rotation_for(&u).unwrap();
            assert!((r * u - Vec3::z()).norm() <= 1e-13);
            assert!((r.determinant() - 1.0).abs() <= 1e-13);
        }
        // close to -z, where the naive formula loses accuracy
        let u = Vec3::new(1e-9, -2e-9, -1.0).normalize();
        let r = rotation_for(&u).unwrap();
        assert!((r * u - Vec3::z()).norm() <= 1e-13);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-13);
    }

    #[test]
    fn frustum_cloud_geometry() {
        let set = DirectionSet::new(1);
        let half = set.angular_radius();
        let (d_min, d_max) = (3.0, 10.0);
        let c = Vec3::new(0.3, -0.2, 0.1);
        for u in 0..set.len() {
            let dir = set.direction(u);
            let cloud = directional_check_cloud(&c, dir, 4, half, d_min, d_max).unwrap();
            assert_eq!(cloud.len(), 56);
            let reference = directional_check_cloud(&Vec3::zeros(), &Vec3::z(), 4, half, d_min, d_max).unwrap();
            let rt = rotation_for(dir).unwrap().transpose();
            // The frustum circumscribes the wedge cone, so its corners reach
            // atan(sqrt(2) tan(half)).
            let corner = (2f64.sqrt() * half.tan()).atan();
            for (x, f) in cloud.iter().zip(&reference) {
                assert!((x - (c + rt * f)).norm() <= 1e-13);
                let d = x - c;
                let ang = d.normalize().dot(dir).clamp(-1.0, 1.0).acos();
                assert!(ang <= corner + 1e-12);
                let along = d.dot(dir);
                assert!(along >= d_min * (1.0 - 1e-12) && along <= d_max * (1.0 + 1e-12));
            }
        }
        assert!(directional_check_cloud(&c, &Vec3::z(), 4, 0.5, 3.0, 1.0).is_err());
    }

    #[test]
    fn low_frequency_bases_are_accurate() {
        let ctx = WaveContext::new(1.0).unwrap();
        let tree = grid_tree(8, &ctx);
        let params = TranslationParams::default();
        for level in 1..tree.depth() {
            let b = LevelBasis::build(&tree, level, &ctx, &params).unwrap();
            assert_eq!(b.regime, Regime::Low);
            for (check, equiv, svd) in [(&b.out_check, &b.out_equiv, &b.up), (&b.in_check, &b.in_equiv, &b.dn)] {
                let g = kernel_matrix(check, equiv, ctx.k());
                let recon = &g * svd.pinv() * &g;
                let err = norm2_estimate(&(recon - &g), 60);
                assert!(err <= 2.0 * params.epsilon * norm2_estimate(&g, 60), "level {level}: {err}");
            }
        }
    }

    /// Sources in a cube of width w at the origin, targets in a far cube at
    /// offset d: the compressed outgoing expansion must reproduce the field.
    fn outgoing_field_error(b: &LevelBasis, dir: u32, d: &Vec3, k: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = b.width;
        let src: Vec<Vec3> = (0..30).map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)) * w).collect();
        let q = rand_c(&mut rng, src.len());
        let tgt: Vec<Vec3> = (0..30).map(|_| d + Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)) * w).collect();
        let exact = point_potential(&src, &q, &tgt, k);
        let check = b.out_check_at(&Vec3::zeros(), dir);
        let pc = point_potential(&src, &q, &check, k);
        let mut s = vec![C64::new(0.0, 0.0); b.rank_up()];
        gemv_acc(&b.s2m, &pc, &mut s);
        let mut sigma = vec![C64::new(0.0, 0.0); b.out_equiv.len()];
        gemv_acc(&b.up_v, &s, &mut sigma);
        let approx = point_potential(&b.out_equiv_at(&Vec3::zeros(), dir), &sigma, &tgt, k);
        rel(&approx, &exact)
    }

    #[test]
    fn low_frequency_outgoing_expansion() {
        let ctx = WaveContext::new(PI).unwrap();
        let tree = grid_tree(8, &ctx);
        let b = LevelBasis::build(&tree, 2, &ctx, &TranslationParams::default()).unwrap();
        let w = b.width;
        let err = outgoing_field_error(&b, NONDIR, &Vec3::new(2.0 * w, w, 0.0), ctx.k(), 1);
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn high_frequency_outgoing_expansion() {
        let ctx = hf_context();
        let tree = grid_tree(8, &ctx);
        let level = 2;
        let b = LevelBasis::build(&tree, level, &ctx, &TranslationParams::default()).unwrap();
        assert_eq!(b.regime, Regime::High);
        let set = b.directions.clone().unwrap();
        let w = b.width;
        let d_adm = high_frequency_distance(w, &ctx);
        let mut worst: f64 = 0.0;
        for (i, d) in [Vec3::new(0.0, 0.0, d_adm), Vec3::new(d_adm, 0.3 * w, 0.5 * w), Vec3::new(-w, 2.0 * w, -3.5 * w)].iter().enumerate() {
            let dir = set.index_of(d) as u32;
            worst = worst.max(outgoing_field_error(&b, dir, d, ctx.k(), i as u64));
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn compressed_m2l_matches_uncompressed_path() {
        let ctx = WaveContext::new(PI).unwrap();
        let tree = grid_tree(8, &ctx);
        let eps = 1e-3;
        let b = LevelBasis::build(&tree, 2, &ctx, &TranslationParams::default()).unwrap();
        let offset = Vec3::new(2.0, -1.0, 0.0) * b.width;
        let k = m2l_kernel(&b, &offset, ctx.k());
        let op = build_m2l(&b, &offset, &ctx, eps).unwrap();
        assert_eq!(op.to_dense().shape(), (b.rank_dn(), b.rank_up()));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let s = rand_c(&mut rng, b.rank_up());
            let mut sigma = vec![C64::new(0.0, 0.0); b.out_equiv.len()];
            gemv_acc(&b.up_v, &s, &mut sigma);
            let mut p_in = vec![C64::new(0.0, 0.0); b.in_check.len()];
            gemv_acc(&k, &sigma, &mut p_in);
            let mut t = vec![C64::new(0.0, 0.0); b.rank_dn()];
            op.apply_acc(&s, &mut t);
            let mut back = vec![C64::new(0.0, 0.0); b.in_check.len()];
            gemv_acc(&b.dn.u, &t, &mut back);
            assert!(rel(&back, &p_in) <= 5.0 * eps, "{}", rel(&back, &p_in));
        }
    }

    #[test]
    fn second_stage_factorization_is_accurate() {
        let ctx = hf_context();
        let tree = grid_tree(8, &ctx);
        let eps = 1e-3;
        let b = LevelBasis::build(&tree, 2, &ctx, &TranslationParams::default()).unwrap();
        let set = b.directions.clone().unwrap();
        let mut factored = 0;
        for d in [Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 4.0, 1.0), Vec3::new(3.0, 3.0, 0.0)] {
            let off = d * b.width;
            let u = set.index_of(&off) as u32;
            let r = b.out_frame(u) * off;
            let op = build_m2l(&b, &r, &ctx, eps).unwrap();
            let kt = &b.dn_uh * m2l_kernel(&b, &r, ctx.k()) * &b.up_v;
            if op.is_factored() {
                factored += 1;
            }
            let err = norm2_estimate(&(op.to_dense() - &kt), 60);
            assert!(err <= 2.0 * eps * norm2_estimate(&kt, 60));
        }
        let _ = factored;
    }

    #[test]
    fn rotation_reuse_matches_direct_build() {
        // K built with explicitly rotated clouds for direction u equals the
        // reference operator at the rotated offset.
        let ctx = hf_context();
        let tree = grid_tree(8, &ctx);
        let eps = 1e-3;
        let b = LevelBasis::build(&tree, 2, &ctx, &TranslationParams::default()).unwrap();
        let set = b.directions.clone().unwrap();
        let w = b.width;
        for d in [Vec3::new(0.2, 0.1, 3.5), Vec3::new(3.0, -1.0, 0.5), Vec3::new(-2.0, -2.0, -2.5)] {
            let offset = d * w;
            let v = set.index_of(&-offset) as u32;
            let u = set.antipode(v as usize) as u32;
            let direct_k = kernel_matrix(&b.in_check_at(&offset, v), &b.out_equiv_at(&Vec3::zeros(), u), ctx.k());
            let direct = &b.dn_uh * direct_k * &b.up_v;
            let reused = build_m2l(&b, &(b.out_frame(u) * offset), &ctx, eps).unwrap().to_dense();
            let err = norm2_estimate(&(direct.clone() - reused), 60) / norm2_estimate(&direct, 60);
            assert!(err <= 5.0 * eps, "{err}");
        }
    }
}

//! Direction sets for high-frequency cubes. The unit sphere is covered by the
//! 6 faces of a cube, each split into `2^j x 2^j` squares; every square is a
//! wedge whose direction is its centre projected onto the sphere.

use crate::error::{BemError, Result};
use crate::kernel::WaveContext;
use crate::mesh::Vec3;

/// Coordinate axes of each face: `(normal axis, sign, u axis, v axis)`.
/// Faces are ordered `+x, -x, +y, -y, +z, -z`.
const FACES: [(usize, f64, usize, usize); 6] = [
    (0, 1.0, 1, 2),
    (0, -1.0, 1, 2),
    (1, 1.0, 2, 0),
    (1, -1.0, 2, 0),
    (2, 1.0, 0, 1),
    (2, -1.0, 0, 1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    j: u32,
    dirs: Vec<Vec3>,
    angular_radius: f64,
}

impl DirectionSet {
    pub fn new(j: u32) -> Self {
        let n = 1usize << j;
        let mut dirs = Vec::with_capacity(6 * n * n);
        for face in 0..6 {
            for row in 0..n {
                for col in 0..n {
                    dirs.push(square_point(face, n, (2 * col + 1) as i64 - n as i64, (2 * row + 1) as i64 - n as i64).normalize());
                }
            }
        }
        let mut angular_radius: f64 = 0.0;
        for row in 0..n {
            for col in 0..n {
                let c = dirs[row * n + col];
                for (dc, dr) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let corner = square_point(0, n, 2 * (col + dc) as i64 - n as i64, 2 * (row + dr) as i64 - n as i64);
                    angular_radius = angular_radius.max(angle_between(&c, &corner));
                }
            }
        }
        Self {
            j,
            dirs,
            angular_radius,
        }
    }

    /// Set for a cube of the given width; only defined in the high-frequency
    /// regime (`width >= wavelength`).
    pub fn for_width(width: f64, ctx: &WaveContext) -> Result<Self> {
        Ok(Self::new(level_exponent(width, ctx.wavelength())?))
    }

    pub fn j(&self) -> u32 {
        self.j
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn direction(&self, i: usize) -> &Vec3 {
        &self.dirs[i]
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.dirs
    }

    /// Largest angle between a wedge direction and the corners of its square.
    pub fn angular_radius(&self) -> f64 {
        self.angular_radius
    }

    fn side(&self) -> usize {
        1 << self.j
    }

    /// Wedge containing `v` (nonzero). Points on wedge boundaries go to the
    /// lowest candidate index.
    pub fn index_of(&self, v: &Vec3) -> usize {
        let n = self.side();
        let m = v.abs().max();
        let mut best = usize::MAX;
        for (face, &(axis, sign, ua, va)) in FACES.iter().enumerate() {
            if v[axis] * sign != m {
                continue;
            }
            let cols = cells(v[ua] / m, n);
            let rows = cells(v[va] / m, n);
            for &r in rows.iter().flatten() {
                for &c in cols.iter().flatten() {
                    best = best.min(face * n * n + r * n + c);
                }
            }
        }
        best
    }

    /// Direction pointing the opposite way; its vector is the exact negation.
    pub fn antipode(&self, i: usize) -> usize {
        let n = self.side();
        let (face, row, col) = (i / (n * n), (i / n) % n, i % n);
        (face ^ 1) * n * n + (n - 1 - row) * n + (n - 1 - col)
    }

    /// Index in the set with exponent `j - 1` whose wedge contains wedge `i`.
    pub fn coarser_index(&self, i: usize) -> usize {
        if self.j == 0 {
            return i;
        }
        let n = self.side();
        let half = n / 2;
        let (face, row, col) = (i / (n * n), (i / n) % n, i % n);
        face * half * half + (row / 2) * half + col / 2
    }
}

/// `max(0, ceil(log2(width / wavelength)))`.
pub fn level_exponent(width: f64, wavelength: f64) -> Result<u32> {
    if !(width >= wavelength) {
        return Err(BemError::InvalidArgument(format!(
            "cube width {width} is below the wavelength {wavelength}"
        )));
    }
    Ok((width / wavelength).log2().ceil().max(0.0) as u32)
}

/// Wedge index of the direction from `from` to `to`.
pub fn direction_index(from: &Vec3, to: &Vec3, set: &DirectionSet) -> Result<usize> {
    let d = to - from;
    if d.norm_squared() == 0.0 {
        return Err(BemError::InvalidArgument("coincident points have no direction".into()));
    }
    Ok(set.index_of(&d))
}

/// Point on face `face` with in-face coordinates `(nu / n, nv / n)`.
fn square_point(face: usize, n: usize, nu: i64, nv: i64) -> Vec3 {
    let (axis, sign, ua, va) = FACES[face];
    let mut p = Vec3::zeros();
    p[axis] = sign;
    p[ua] = nu as f64 / n as f64;
    p[va] = nv as f64 / n as f64;
    p
}

/// Cells of `[-1, 1]` split into `n` that contain `t`; two on a boundary.
fn cells(t: f64, n: usize) -> [Option<usize>; 2] {
    let s = (t + 1.0) * 0.5 * n as f64;
    let f = s.floor();
    let c = (f as i64).clamp(0, n as i64 - 1) as usize;
    if s == f && f > 0.0 && (f as usize) < n {
        [Some(c - 1), Some(c)]
    } else {
        [Some(c), None]
    }
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn counts_and_exponents() {
        for j in 0..4 {
            assert_eq!(DirectionSet::new(j).len(), 6 * 4usize.pow(j));
        }
        let lambda = 1.0;
        assert_eq!(level_exponent(1.0, lambda).unwrap(), 0);
        assert_eq!(level_exponent(1.5, lambda).unwrap(), 1);
        assert_eq!(level_exponent(2.0, lambda).unwrap(), 1);
        assert_eq!(level_exponent(4.0, lambda).unwrap(), 2);
        assert!(level_exponent(0.99, lambda).is_err());
    }

    #[test]
    fn eight_wavelength_cube_has_384_directions() {
        let ctx = WaveContext::new(2.0 * PI).unwrap();
        let set = DirectionSet::for_width(8.0, &ctx).unwrap();
        assert_eq!(set.j(), 3);
        assert_eq!(set.len(), 384);
        assert!(DirectionSet::for_width(0.5, &ctx).is_err());
    }

    #[test]
    fn directions_are_unit_and_self_indexed() {
        for j in 0..4 {
            let set = DirectionSet::new(j);
            for (i, d) in set.directions().iter().enumerate() {
                assert!((d.norm() - 1.0).abs() < 1e-15);
                assert_eq!(set.index_of(d), i);
            }
        }
    }

    #[test]
    fn antipodes_are_exact_negations() {
        for j in 0..4 {
            let set = DirectionSet::new(j);
            for i in 0..set.len() {
                let a = set.antipode(i);
                assert_eq!(*set.direction(a), -set.direction(i));
                assert_eq!(set.antipode(a), i);
            }
        }
    }

    #[test]
    fn coarser_wedge_contains_finer_wedge() {
        for j in 1..4 {
            let fine = DirectionSet::new(j);
            let coarse = DirectionSet::new(j - 1);
            for i in 0..fine.len() {
                assert_eq!(coarse.index_of(fine.direction(i)), fine.coarser_index(i));
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let set = DirectionSet::new(1);
        // The +x/+y edge at z = 0 touches wedges 1, 3 on face +x and 10, 11
        // on face +y.
        assert_eq!(set.index_of(&Vec3::new(1.0, 1.0, 0.0)), 1);
        assert_eq!(set.index_of(&Vec3::new(2.0, 0.0, 0.0)), 0);
    }

    #[test]
    fn angular_radius_shrinks_with_j() {
        let r0 = DirectionSet::new(0).angular_radius();
        assert!((r0 - (1.0f64 / 3.0f64.sqrt()).acos()).abs() < 1e-14);
        let mut prev = r0;
        for j in 1..5 {
            let r = DirectionSet::new(j).angular_radius();
            assert!(r < prev);
            prev = r;
        }
        assert!(DirectionSet::new(4).angular_radius() < 0.1);
    }

    #[test]
    fn direction_index_rejects_coincident_points() {
        let set = DirectionSet::new(1);
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!(direction_index(&p, &p, &set).is_err());
        assert_eq!(direction_index(&p, &(p + Vec3::new(0.0, 0.0, 5.0)), &set).unwrap(), set.index_of(&Vec3::z()));
    }
}

//! Element integrals of the kernels: symmetric triangle rules with adaptive
//! subdivision for nearby targets, and analytic/polar self terms.

use std::f64::consts::PI;

use crate::error::{BemError, Result};
use crate::kernel::{kernel_unchecked, KernelKind, WaveContext, C64, INV_4PI};
use crate::mesh::{Element, Vec3};

/// Symmetric rule on a triangle. Points are barycentric, weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
    order: usize,
}

impl QuadratureRule {
    pub fn centroid() -> Self {
        Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            order: 1,
        }
    }

    /// 6 points, exact for degree 4.
    pub fn degree4() -> Self {
        let mut r = Self::empty(4);
        r.orbit3(0.445_948_490_915_964_886_32, 0.223_381_589_678_011_465_70);
        r.orbit3(0.091_576_213_509_770_743_46, 0.109_951_743_655_321_867_64);
        r
    }

    /// 7 points, exact for degree 5.
    pub fn degree5() -> Self {
        let mut r = Self::empty(5);
        r.points.push([1.0 / 3.0; 3]);
        r.weights.push(0.225);
        r.orbit3(0.470_142_064_105_115_089_77, 0.132_394_152_788_506_180_74);
        r.orbit3(0.101_286_507_323_456_338_80, 0.125_939_180_544_827_152_60);
        r
    }

    /// 16 points, exact for degree 8.
    pub fn degree8() -> Self {
        let mut r = Self::empty(8);
        r.points.push([1.0 / 3.0; 3]);
        r.weights.push(0.144_315_607_677_787_168_25);
        r.orbit3(0.459_292_588_292_723_156_03, 0.095_091_634_267_284_624_79);
        r.orbit3(0.170_569_307_751_760_206_62, 0.103_217_370_534_718_250_28);
        r.orbit3(0.050_547_228_317_030_975_46, 0.032_458_497_623_198_080_31);
        r.orbit6(
            0.008_394_777_409_957_605_34,
            0.263_112_829_634_638_113_42,
            0.027_230_314_174_434_994_26,
        );
        r
    }

    fn empty(order: usize) -> Self {
        Self {
            points: Vec::new(),
            weights: Vec::new(),
            order,
        }
    }

    fn orbit3(&mut self, a: f64, w: f64) {
        let b = 1.0 - 2.0 * a;
        for p in [[a, a, b], [a, b, a], [b, a, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    fn orbit6(&mut self, a: f64, b: f64, w: f64) {
        let c = 1.0 - a - b;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `int_T f dA` on the triangle with the given vertices.
    pub fn integrate<F: FnMut(&Vec3) -> C64>(&self, tri: &[Vec3; 3], mut f: F) -> C64 {
        let area = 0.5 * (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm();
        let mut acc = C64::new(0.0, 0.0);
        for (b, w) in self.points.iter().zip(&self.weights) {
            let y = tri[0] * b[0] + tri[1] * b[1] + tri[2] * b[2];
            acc += f(&y) * *w;
        }
        acc * area
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::degree4()
    }
}

/// Subdivision control for nearly singular element integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub max_depth: u32,
    /// A sub-triangle is split while `dist(x, T) < near_factor * diam(T)`.
    pub near_factor: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            max_depth: 6,
            near_factor: 2.0,
        }
    }
}

/// `int_element K(x, y) dS_y` with the element's own normal as `n_y`.
pub fn element_integral(
    element: &Element,
    x: &Vec3,
    n_x: &Vec3,
    kind: KernelKind,
    ctx: &WaveContext,
    rule: &QuadratureRule,
) -> Result<C64> {
    element_integral_with(element, x, n_x, kind, ctx, rule, &QuadratureOptions::default())
}

pub fn element_integral_with(
    element: &Element,
    x: &Vec3,
    n_x: &Vec3,
    kind: KernelKind,
    ctx: &WaveContext,
    rule: &QuadratureRule,
    opts: &QuadratureOptions,
) -> Result<C64> {
    let far = far_enough(&element.vertices, element.diameter, x, opts.near_factor);
    if !far && element.distance_to(x) <= 1e-14 * element.diameter {
        return Err(BemError::SingularEvaluation);
    }
    let job = Job {
        x,
        n_x,
        n_y: &element.normal,
        kind,
        k: ctx.k(),
        alpha: ctx.alpha(),
        rule,
        opts,
    };
    if far {
        Ok(job.plain(&element.vertices))
    } else {
        Ok(job.adaptive(&element.vertices, 0))
    }
}

struct Job<'a> {
    x: &'a Vec3,
    n_x: &'a Vec3,
    n_y: &'a Vec3,
    kind: KernelKind,
    k: f64,
    alpha: C64,
    rule: &'a QuadratureRule,
    opts: &'a QuadratureOptions,
}

impl Job<'_> {
    fn plain(&self, tri: &[Vec3; 3]) -> C64 {
        self.rule.integrate(tri, |y| {
            kernel_unchecked(self.kind, &(self.x - y), self.n_x, self.n_y, self.k, self.alpha)
        })
    }

    fn adaptive(&self, tri: &[Vec3; 3], depth: u32) -> C64 {
        let diam = (tri[1] - tri[0])
            .norm()
            .max((tri[2] - tri[1]).norm())
            .max((tri[0] - tri[2]).norm());
        let split = depth < self.opts.max_depth
            && !far_enough(tri, diam, self.x, self.opts.near_factor)
            && point_triangle_distance(self.x, tri) < self.opts.near_factor * diam;
        if !split {
            return self.plain(tri);
        }
        let [a, b, c] = *tri;
        let (ab, bc, ca) = ((a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5);
        self.adaptive(&[a, ab, ca], depth + 1)
            + self.adaptive(&[ab, b, bc], depth + 1)
            + self.adaptive(&[ca, bc, c], depth + 1)
            + self.adaptive(&[ab, bc, ca], depth + 1)
    }
}

/// Cheap sufficient test for `dist(x, tri) >= factor * diam`.
fn far_enough(tri: &[Vec3; 3], diam: f64, x: &Vec3, factor: f64) -> bool {
    let c = (tri[0] + tri[1] + tri[2]) / 3.0;
    let rad = tri.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
    (x - c).norm() - rad >= factor * diam
}

fn point_triangle_distance(x: &Vec3, tri: &[Vec3; 3]) -> f64 {
    match Element::from_vertices(*tri) {
        Some(e) => e.distance_to(x),
        None => tri.iter().map(|v| (v - x).norm()).fold(f64::INFINITY, f64::min),
    }
}

/// Diagonal entries of the discrete operators for a flat element collocated
/// at its centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTerms {
    /// `int G dS`
    pub single: C64,
    /// Finite part of `int d^2 G / dn_x dn_y dS`.
    pub hyper: C64,
    /// `1/2 + alpha * hyper`; the double-layer self integral vanishes on a
    /// flat element.
    pub lhs_diag: C64,
    /// `single - alpha/2`; the adjoint double layer vanishes as well.
    pub rhs_diag: C64,
}

const SELF_POLAR_POINTS: usize = 32;

/// Self integrals with the centroid as collocation point. The static parts
/// are integrated in closed form, the smooth remainder in polar coordinates.
pub fn self_terms(element: &Element, ctx: &WaveContext) -> SelfTerms {
    let (gx, gw) = gauss_legendre(SELF_POLAR_POINTS);
    let k = ctx.k();
    let x = element.centroid;
    let mut single = C64::new(0.0, 0.0);
    let mut hyper = C64::new(0.0, 0.0);
    for i in 0..3 {
        let a = element.vertices[i];
        let b = element.vertices[(i + 1) % 3];
        let e = b - a;
        let t = e / e.norm();
        let sa = (a - x).dot(&t);
        let sb = (b - x).dot(&t);
        let h = ((a - x) - t * sa).norm();

        single += (h * INV_4PI) * ((sb / h).asinh() - (sa / h).asinh());
        hyper -= INV_4PI / h * (sb / sb.hypot(h) - sa / sa.hypot(h));

        if k == 0.0 {
            continue;
        }
        let (pa, pb) = ((sa / h).atan(), (sb / h).atan());
        let (mid, half) = (0.5 * (pa + pb), 0.5 * (pb - pa));
        let mut ds = C64::new(0.0, 0.0);
        let mut dh = C64::new(0.0, 0.0);
        for (xi, wi) in gx.iter().zip(&gw) {
            let phi = mid + half * xi;
            let r = h / phi.cos();
            let f = phi1(k * r);
            ds += f * (r * wi * half);
            dh += f * (wi * half);
        }
        single += ds * INV_4PI;
        hyper -= dh * C64::new(0.0, k * INV_4PI);
    }
    let alpha = ctx.alpha();
    SelfTerms {
        single,
        hyper,
        lhs_diag: C64::new(0.5, 0.0) + alpha * hyper,
        rhs_diag: single - alpha * 0.5,
    }
}

/// `(e^{ix} - 1) / (ix) - 1`, accurate for small `x`.
fn phi1(x: f64) -> C64 {
    if x.abs() < 0.5 {
        let ix = C64::new(0.0, x);
        let mut term = C64::new(1.0, 0.0);
        let mut sum = C64::new(0.0, 0.0);
        for m in 1..=24 {
            term = term * ix / (m as f64 + 1.0);
            sum += term;
        }
        sum
    } else {
        let (s, c) = x.sin_cos();
        C64::new(s / x - 1.0, (1.0 - c) / x)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

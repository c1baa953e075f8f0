//! Interaction lists from a dual traversal of the octree.
//!
//! Every ordered pair of elements ends up in exactly one of: a near block
//! between two leaves, a same-level far-field translation between two
//! ancestors, a mixed-level outgoing-to-target interaction (small low
//! frequency source cube, big target leaf) or a mixed-level
//! source-to-incoming interaction (big source leaf, small low frequency
//! target cube).

use crate::directions::DirectionSet;
use crate::error::{BemError, Result};
use crate::kernel::WaveContext;
use crate::octree::{Octree, Regime};

/// Slot marker for the single non-directional expansion of a low frequency
/// cube.
pub const NONDIR: u32 = u32::MAX;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct M2lEntry {
    pub source: usize,
    /// Incoming wedge of the target (direction towards the source).
    pub incoming: u32,
    /// Outgoing wedge of the source, the antipode of `incoming`.
    pub outgoing: u32,
}

#[derive(Debug, Clone, Default)]
pub struct InteractionLists {
    /// Per target leaf: source leaves handled by direct quadrature.
    pub near: Vec<Vec<usize>>,
    /// Per target cube: same-level source cubes.
    pub m2l: Vec<Vec<M2lEntry>>,
    /// Per target leaf: smaller low frequency source cubes whose outgoing
    /// expansion is evaluated directly at the targets.
    pub m2t: Vec<Vec<usize>>,
    /// Per smaller low frequency target cube: bigger source leaves whose
    /// elements feed its incoming expansion directly.
    pub s2l: Vec<Vec<usize>>,
}

/// Same-level far-field criterion.
pub fn well_separated(tree: &Octree, a: usize, b: usize, ctx: &WaveContext) -> bool {
    let (ca, cb) = (tree.cube(a), tree.cube(b));
    let w = ca.width;
    let d = cb.center - ca.center;
    match ca.regime {
        Regime::Low => d.abs().max() > w * (1.0 + TOL),
        Regime::High => d.norm() >= high_frequency_distance(w, ctx) * (1.0 - TOL),
    }
}

/// `max(3w, w^2 / lambda)`: centre distance at which two high frequency
/// cubes of width `w` may interact through a directional translation.
pub fn high_frequency_distance(w: f64, ctx: &WaveContext) -> f64 {
    (3.0 * w).max(w * w / ctx.wavelength())
}

/// Big leaf and smaller cube are separated by at least one small-cube width.
fn mixed_separated(tree: &Octree, big: usize, small: usize) -> bool {
    let (cb, cs) = (tree.cube(big), tree.cube(small));
    let gap = (cb.center - cs.center).abs().max() - 0.5 * (cb.width + cs.width);
    gap >= cs.width * (1.0 - TOL)
}

pub fn build_interaction_lists(tree: &Octree, ctx: &WaveContext) -> Result<InteractionLists> {
    let n = tree.len();
    let mut lists = InteractionLists {
        near: vec![Vec::new(); n],
        m2l: vec![Vec::new(); n],
        m2t: vec![Vec::new(); n],
        s2l: vec![Vec::new(); n],
    };
    let mut stack = vec![(0usize, 0usize)];
    while let Some((t, s)) = stack.pop() {
        let (ct, cs) = (tree.cube(t), tree.cube(s));
        if ct.level == cs.level {
            if t != s && well_separated(tree, t, s, ctx) {
                lists.m2l[t].push(m2l_entry(tree, t, s)?);
                continue;
            }
            match (ct.is_leaf(), cs.is_leaf()) {
                (true, true) => lists.near[t].push(s),
                (true, false) => stack.extend(cs.children.iter().map(|&c| (t, c))),
                (false, true) => stack.extend(ct.children.iter().map(|&c| (c, s))),
                (false, false) => {
                    for &a in &ct.children {
                        for &b in &cs.children {
                            stack.push((a, b));
                        }
                    }
                }
            }
        } else if ct.level < cs.level {
            // big target leaf, smaller source cube
            if cs.regime == Regime::Low && mixed_separated(tree, t, s) {
                lists.m2t[t].push(s);
            } else if cs.is_leaf() {
                lists.near[t].push(s);
            } else {
                stack.extend(cs.children.iter().map(|&c| (t, c)));
            }
        } else if ct.regime == Regime::Low && mixed_separated(tree, s, t) {
            lists.s2l[t].push(s);
        } else if ct.is_leaf() {
            lists.near[t].push(s);
        } else {
            stack.extend(ct.children.iter().map(|&c| (c, s)));
        }
    }
    for l in &mut lists.near {
        l.sort_unstable();
    }
    for l in &mut lists.m2l {
        l.sort_unstable();
    }
    for l in &mut lists.m2t {
        l.sort_unstable();
    }
    for l in &mut lists.s2l {
        l.sort_unstable();
    }
    Ok(lists)
}

fn m2l_entry(tree: &Octree, t: usize, s: usize) -> Result<M2lEntry> {
    let ct = tree.cube(t);
    if ct.regime == Regime::Low {
        return Ok(M2lEntry {
            source: s,
            incoming: NONDIR,
            outgoing: NONDIR,
        });
    }
    let set: &DirectionSet = tree
        .directions(ct.level)
        .ok_or_else(|| BemError::InvalidArgument("regimes not classified".into()))?;
    let v = set.index_of(&(tree.cube(s).center - ct.center));
    Ok(M2lEntry {
        source: s,
        incoming: v as u32,
        outgoing: set.antipode(v) as u32,
    })
}

impl InteractionLists {
    /// Number of times the ordered element pair `(i, j)` is covered; a
    /// correct set of lists gives exactly one for every pair.
    pub fn coverage(&self, tree: &Octree, i: usize, j: usize) -> usize {
        let ti = tree.leaf_of(i);
        let sj = tree.leaf_of(j);
        let anc_i = ancestors(tree, ti);
        let anc_j = ancestors(tree, sj);
        let mut count = self.near[ti].iter().filter(|&&s| s == sj).count();
        for &a in &anc_i {
            count += self.m2l[a].iter().filter(|e| anc_j.contains(&e.source)).count();
            count += self.s2l[a].iter().filter(|&&s| s == sj).count();
        }
        count += self.m2t[ti].iter().filter(|s| anc_j.contains(s)).count();
        count
    }
}

/// `c` and all its ancestors.
fn ancestors(tree: &Octree, mut c: usize) -> Vec<usize> {
    let mut out = vec![c];
    while let Some(p) = tree.cube(c).parent {
        out.push(p);
        c = p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{compute_element_geometry, generate_sphere_mesh, Vec3};
    use crate::octree::build_octree;
    use std::f64::consts::PI;

    fn tree_for(n: u32, max_leaf: usize, k: f64) -> (Octree, WaveContext) {
        let pts = compute_element_geometry(&generate_sphere_mesh(n, 1.0).unwrap()).unwrap().centroids();
        let mut tree = build_octree(&pts, max_leaf).unwrap();
        let ctx = WaveContext::new(k).unwrap();
        tree.classify_regimes(&ctx).unwrap();
        (tree, ctx)
    }

    #[test]
    fn every_pair_is_covered_once() {
        for (n, leaf, k) in [(3, 16, PI), (3, 4, 8.0 * PI), (4, 32, 4.0 * PI)] {
            let (tree, ctx) = tree_for(n, leaf, k);
            let lists = build_interaction_lists(&tree, &ctx).unwrap();
            let ne = tree.leaves().map(|l| tree.cube(l).elements.len()).sum::<usize>();
            let step = if ne > 600 { 7 } else { 1 };
            for i in (0..ne).step_by(step) {
                for j in 0..ne {
                    assert_eq!(lists.coverage(&tree, i, j), 1, "pair ({i}, {j}) n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn irregular_points_are_covered_once() {
        // clustered points force mixed-level interactions
        let mut pts = Vec::new();
        for i in 0..300 {
            let t = i as f64 * 0.37;
            pts.push(Vec3::new(t.sin(), (1.3 * t).cos(), (0.7 * t).sin()) * if i % 3 == 0 { 0.05 } else { 1.0 });
        }
        let mut tree = build_octree(&pts, 3).unwrap();
        let ctx = WaveContext::new(1.0).unwrap();
        tree.classify_regimes(&ctx).unwrap();
        let lists = build_interaction_lists(&tree, &ctx).unwrap();
        assert!(lists.m2t.iter().any(|l| !l.is_empty()) || lists.s2l.iter().any(|l| !l.is_empty()));
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(lists.coverage(&tree, i, j), 1);
            }
        }
    }

    #[test]
    fn far_pairs_satisfy_their_criterion() {
        let (tree, ctx) = tree_for(4, 16, 8.0 * PI);
        let lists = build_interaction_lists(&tree, &ctx).unwrap();
        let mut high = 0;
        for (t, entries) in lists.m2l.iter().enumerate() {
            for e in entries {
                let (ct, cs) = (tree.cube(t), tree.cube(e.source));
                assert_eq!(ct.level, cs.level);
                assert!(well_separated(&tree, t, e.source, &ctx));
                if ct.regime == Regime::High {
                    high += 1;
                    let set = tree.directions(ct.level).unwrap();
                    assert_eq!(set.antipode(e.incoming as usize), e.outgoing as usize);
                    let dir = (cs.center - ct.center).normalize();
                    let angle = dir.dot(set.direction(e.incoming as usize)).clamp(-1.0, 1.0).acos();
                    assert!(angle <= set.angular_radius() + 1e-12);
                } else {
                    assert_eq!(e.incoming, NONDIR);
                }
            }
        }
        assert!(high > 0, "expected directional translations at k = 8 pi");
    }

    #[test]
    fn near_lists_are_symmetric_on_uniform_trees() {
        let (tree, ctx) = tree_for(3, 16, PI);
        let lists = build_interaction_lists(&tree, &ctx).unwrap();
        for (t, l) in lists.near.iter().enumerate() {
            assert!(tree.cube(t).is_leaf() || l.is_empty());
            for &s in l {
                assert!(lists.near[s].contains(&t));
            }
        }
    }

    #[test]
    fn wedge_aperture_times_distance() {
        // Parents at width 2w are never admissible, so a same-level pair sits
        // closer than max(6w, 4w^2/lambda) + sqrt(3) w. Once w >= 2 lambda the
        // aperture is small enough for the 4w bound; at the finest HF level
        // (j = 1, distances up to ~7.1w) only the geometric bound holds.
        for (n, k) in [(5, 4.0 * PI), (4, 8.0 * PI), (5, 16.0 * PI)] {
            let (tree, ctx) = tree_for(n, 32, k);
            let lists = build_interaction_lists(&tree, &ctx).unwrap();
            let lambda = ctx.wavelength();
            let mut checked = 0;
            for (t, entries) in lists.m2l.iter().enumerate() {
                let ct = tree.cube(t);
                if ct.regime != Regime::High {
                    continue;
                }
                let w = ct.width;
                let theta = tree.directions(ct.level).unwrap().angular_radius();
                let parent_reach = (6.0 * w).max(4.0 * w * w / lambda) + 3f64.sqrt() * w;
                for e in entries {
                    let d = (tree.cube(e.source).center - ct.center).norm();
                    assert!(d < parent_reach);
                    if w >= 2.0 * lambda {
                        assert!(d * theta <= 4.0 * w, "level {} d/w {}", ct.level, d / w);
                    }
                    checked += 1;
                }
            }
            assert!(checked > 0);
        }
    }

    #[test]
    fn m2l_pair_count_grows_like_n_log_n() {
        // n = 2 (N = 128) has no far pairs at all and drops out of the fit
        let mut pts = Vec::new();
        for (n, k) in [(2, PI / 2.0), (3, PI), (4, 2.0 * PI), (5, 4.0 * PI)] {
            let (tree, ctx) = tree_for(n, 32, k);
            let pairs: usize = build_interaction_lists(&tree, &ctx).unwrap().m2l.iter().map(Vec::len).sum();
            if pairs > 0 {
                pts.push(((8 * 4usize.pow(n)) as f64, pairs as f64));
            }
        }
        assert_eq!(pts.len(), 3);
        let (lx, ly): (Vec<f64>, Vec<f64>) = pts.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
        let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
        let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!(slope <= 1.2, "fit exponent {slope}");
    }
}

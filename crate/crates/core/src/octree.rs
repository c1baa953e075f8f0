//! Adaptive octree over element centroids.

use std::fmt::Write as _;

use crate::directions::DirectionSet;
use crate::error::{BemError, Result};
use crate::kernel::WaveContext;
use crate::mesh::Vec3;

/// The root cube is the bounding cube of the points, enlarged by this factor.
pub const ROOT_PADDING: f64 = 1.05;
/// Hard cap on refinement depth, guarding against coincident centroids.
pub const MAX_TREE_DEPTH: usize = 30;
/// Cubes narrower than this fraction of the root are never split.
pub const MIN_WIDTH_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub center: Vec3,
    pub width: f64,
    pub level: usize,
    pub parent: Option<usize>,
    /// Position inside the parent, bit 0/1/2 set for the upper x/y/z half.
    pub octant: u8,
    pub children: Vec<usize>,
    /// Element indices, ascending; only leaves own elements.
    pub elements: Vec<usize>,
    pub regime: Regime,
}

impl Cube {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Octree {
    cubes: Vec<Cube>,
    levels: Vec<Vec<usize>>,
    leaf_of: Vec<usize>,
    directions: Vec<Option<DirectionSet>>,
    max_leaf: usize,
}

/// Splits cubes holding more than `max_leaf` points, dropping empty children.
/// Cubes are numbered breadth first, children in octant order.
pub fn build_octree(points: &[Vec3], max_leaf: usize) -> Result<Octree> {
    if points.is_empty() {
        return Err(BemError::EmptyInput("no points to sort into an octree"));
    }
    if max_leaf == 0 {
        return Err(BemError::InvalidArgument("max_leaf must be at least 1".into()));
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    let width = if extent > 0.0 { extent * ROOT_PADDING } else { 1.0 };
    let root = Cube {
        center: (lo + hi) * 0.5,
        width,
        level: 0,
        parent: None,
        octant: 0,
        children: Vec::new(),
        elements: (0..points.len()).collect(),
        regime: Regime::Low,
    };
    let mut cubes = vec![root];
    let mut levels = vec![vec![0]];
    let mut level = 0;
    loop {
        let mut next = Vec::new();
        for &c in &levels[level] {
            let (center, w) = (cubes[c].center, cubes[c].width);
            if cubes[c].elements.len() <= max_leaf || level >= MAX_TREE_DEPTH || w * 0.5 < MIN_WIDTH_REL * width {
                continue;
            }
            let mut buckets: [Vec<usize>; 8] = Default::default();
            for &e in &cubes[c].elements {
                let p = points[e];
                let o = (p.x >= center.x) as usize | ((p.y >= center.y) as usize) << 1 | ((p.z >= center.z) as usize) << 2;
                buckets[o].push(e);
            }
            cubes[c].elements.clear();
            for (o, elements) in buckets.into_iter().enumerate() {
                if elements.is_empty() {
                    continue;
                }
                let offset = Vec3::new(
                    if o & 1 != 0 { 0.25 } else { -0.25 },
                    if o & 2 != 0 { 0.25 } else { -0.25 },
                    if o & 4 != 0 { 0.25 } else { -0.25 },
                ) * w;
                let id = cubes.len();
                cubes.push(Cube {
                    center: center + offset,
                    width: w * 0.5,
                    level: level + 1,
                    parent: Some(c),
                    octant: o as u8,
                    children: Vec::new(),
                    elements,
                    regime: Regime::Low,
                });
                cubes[c].children.push(id);
                next.push(id);
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
        level += 1;
    }
    let mut leaf_of = vec![0; points.len()];
    for (id, cube) in cubes.iter().enumerate() {
        for &e in &cube.elements {
            leaf_of[e] = id;
        }
    }
    let directions = vec![None; levels.len()];
    Ok(Octree {
        cubes,
        levels,
        leaf_of,
        directions,
        max_leaf,
    })
}

impl Octree {
    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn cube(&self, id: usize) -> &Cube {
        &self.cubes[id]
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Cube ids per level, root level first.
    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn root(&self) -> &Cube {
        &self.cubes[0]
    }

    pub fn max_leaf(&self) -> usize {
        self.max_leaf
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cubes.len()).filter(|&c| self.cubes[c].is_leaf())
    }

    /// Leaf holding element `e`.
    pub fn leaf_of(&self, e: usize) -> usize {
        self.leaf_of[e]
    }

    pub fn level_width(&self, level: usize) -> f64 {
        self.cubes[self.levels[level][0]].width
    }

    pub fn level_regime(&self, level: usize) -> Regime {
        self.cubes[self.levels[level][0]].regime
    }

    /// Direction set of a high-frequency level, `None` for low frequency or
    /// before [`Octree::classify_regimes`].
    pub fn directions(&self, level: usize) -> Option<&DirectionSet> {
        self.directions[level].as_ref()
    }

    /// A cube is high frequency iff its width is at least one wavelength.
    /// Also sets up the direction set of each high-frequency level.
    pub fn classify_regimes(&mut self, ctx: &WaveContext) -> Result<()> {
        let lambda = ctx.wavelength();
        for level in 0..self.levels.len() {
            let w = self.level_width(level);
            let regime = if w >= lambda { Regime::High } else { Regime::Low };
            for &c in &self.levels[level] {
                self.cubes[c].regime = regime;
            }
            self.directions[level] = match regime {
                Regime::High => Some(DirectionSet::for_width(w, ctx)?),
                Regime::Low => None,
            };
        }
        Ok(())
    }

    /// One line per cube: `level cx cy cz width regime count`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for c in &self.cubes {
            let count = self.subtree_count(c);
            let regime = match c.regime {
                Regime::Low => "LOW",
                Regime::High => "HIGH",
            };
            writeln!(
                s,
                "{} {:.6e} {:.6e} {:.6e} {:.6e} {} {}",
                c.level, c.center.x, c.center.y, c.center.z, c.width, regime, count
            )
            .unwrap();
        }
        s
    }

    fn subtree_count(&self, c: &Cube) -> usize {
        c.elements.len() + c.children.iter().map(|&ch| self.subtree_count(&self.cubes[ch])).sum::<usize>()
    }
}

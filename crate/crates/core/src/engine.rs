//! Fast application of the two collocation operators.
//!
//! Setup builds the tree, interaction lists, level bases, translation tables
//! and every element-dependent matrix (source-to-expansion, expansion-to-
//! target, near blocks). `apply` then runs the upward pass, the same-level
//! translations and the downward pass on compressed coordinates.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{BemError, Result};
use crate::interaction::{build_interaction_lists, InteractionLists, NONDIR};
use crate::kernel::{kernel_unchecked, KernelKind, OperatorKind, WaveContext, C64};
use crate::linalg::{gemv_acc, norm2_estimate};
use crate::mesh::{ElementGeometry, Vec3};
use crate::octree::{build_octree, Octree, Regime};
use crate::quadrature::{element_integral, self_terms, QuadratureRule};
use crate::translation::{build_l2l, build_m2l_for_key, build_m2m, kernel_matrix, LevelBasis, M2lOperator, TranslationParams};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub params: TranslationParams,
    pub max_leaf: usize,
    /// Worker threads; 1 is the deterministic reference mode.
    pub threads: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            params: TranslationParams::default(),
            max_leaf: 32,
            threads: 1,
        }
    }
}

/// Counts gathered during setup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineStats {
    pub levels: usize,
    pub leaves: usize,
    /// Distinct same-level translation operators, all levels.
    pub m2l_operators: usize,
    pub m2l_factored: usize,
    pub hf_m2l_operators: usize,
    pub hf_m2l_factored: usize,
    /// `(level, rank_up, rank_dn, points)` per level with a basis.
    pub ranks: Vec<(usize, usize, usize, usize)>,
    pub near_entries: usize,
    /// Bytes held by operator tables, leaf matrices and near blocks.
    pub memory_bytes: usize,
    pub setup_seconds: f64,
}

/// Directions with a stored state, sorted; `[NONDIR]` for a low frequency
/// cube that takes part at all.
type DirList = Vec<u32>;

/// One operator and the `(source cube, source slot, target cube, target
/// slot)` state pairs it maps, applied together so the operator stays in
/// cache.
#[derive(Debug, Clone)]
struct Batch<K> {
    key: K,
    pairs: Vec<[usize; 4]>,
}

fn batches<K: Ord + Copy>(mut entries: Vec<(K, [usize; 4])>) -> Vec<Batch<K>> {
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<Batch<K>> = Vec::new();
    for (key, pair) in entries {
        match out.last_mut() {
            Some(b) if b.key == key => b.pairs.push(pair),
            _ => out.push(Batch { key, pairs: vec![pair] }),
        }
    }
    out
}

/// Pairs processed between two scatter steps of a parallel run.
const CHUNK_PAIRS: usize = 4096;

type States = Vec<Vec<Vec<C64>>>;

/// Scratch for one batch: gathered sources, results, factored middle.
#[derive(Default)]
struct BatchBuffers {
    x: Vec<C64>,
    y: Vec<C64>,
    tmp: Vec<C64>,
}

/// `Y = op [src columns]` for one batch; the columns of `bufs.y` follow
/// the pair order.
fn batch_product(op: &M2lOperator, b: &[[usize; 4]], src: &[Vec<Vec<C64>>], src_offset: usize, bufs: &mut BatchBuffers) {
    let (n, m) = (op.ncols(), b.len());
    bufs.x.clear();
    for &[s, ss, _, _] in b {
        bufs.x.extend_from_slice(&src[s - src_offset][ss]);
    }
    debug_assert_eq!(bufs.x.len(), n * m);
    bufs.y.resize(op.nrows() * m, ZERO);
    op.apply_columns(&bufs.x, m, &mut bufs.y, &mut bufs.tmp);
}

fn scatter(b: &[[usize; 4]], y: &[C64], rows: usize, dst: &mut [Vec<Vec<C64>>], dst_offset: usize) {
    for (&[_, _, t, ts], col) in b.iter().zip(y.chunks_exact(rows.max(1))) {
        for (d, v) in dst[t - dst_offset][ts].iter_mut().zip(col) {
            *d += v;
        }
    }
}

/// `dst[t][ts] += op(key) src[s][ss]` over all batches, one matrix-matrix
/// product per operator. Source and target cube ids are shifted by the
/// given offsets. The accumulation order is fixed by the batch order for
/// any thread count.
fn run_batches<'a, K: Sync, F>(
    batches: &[Batch<K>],
    op: F,
    src: &[Vec<Vec<C64>>],
    src_offset: usize,
    dst: &mut [Vec<Vec<C64>>],
    dst_offset: usize,
    parallel: bool,
) where
    F: Fn(&K) -> &'a M2lOperator + Sync,
{
    if !parallel {
        let mut bufs = BatchBuffers::default();
        for b in batches {
            let m = op(&b.key);
            batch_product(m, &b.pairs, src, src_offset, &mut bufs);
            scatter(&b.pairs, &bufs.y, m.nrows(), dst, dst_offset);
        }
        return;
    }
    let mut start = 0;
    while start < batches.len() {
        let mut end = start;
        let mut n = 0;
        while end < batches.len() && (n == 0 || n + batches[end].pairs.len() <= CHUNK_PAIRS) {
            n += batches[end].pairs.len();
            end += 1;
        }
        let results: Vec<Vec<C64>> = batches[start..end]
            .par_iter()
            .map_init(BatchBuffers::default, |bufs, b| {
                batch_product(op(&b.key), &b.pairs, src, src_offset, bufs);
                std::mem::take(&mut bufs.y)
            })
            .collect();
        for (b, y) in batches[start..end].iter().zip(results) {
            scatter(&b.pairs, &y, op(&b.key).nrows(), dst, dst_offset);
        }
        start = end;
    }
}

struct Leaf {
    cube: usize,
    /// Per outgoing direction of the leaf: `rank_up x n_elems`.
    s2m: Vec<DMatrix<C64>>,
    /// Per incoming direction: `n_elems x rank_dn`.
    l2t: Vec<DMatrix<C64>>,
    /// Source cube and `n_elems x rank_up(source)`.
    m2t: Vec<(usize, DMatrix<C64>)>,
    /// Source leaf and `n_elems x n_src`.
    near: Vec<(usize, DMatrix<C64>)>,
}

pub struct FdaEngine {
    kind: OperatorKind,
    ctx: WaveContext,
    n: usize,
    tree: Octree,
    lists: InteractionLists,
    bases: Vec<Option<LevelBasis>>,
    out_dirs: Vec<DirList>,
    in_dirs: Vec<DirList>,
    /// Same-level operators per level, keyed by the rotated offset.
    m2l_tables: Vec<HashMap<[i64; 3], M2lOperator>>,
    m2l_batches: Vec<Batch<(usize, [i64; 3])>>,
    /// Keyed by child level, octant and parent direction.
    m2m: HashMap<(usize, u8, u32), M2lOperator>,
    l2l: HashMap<(usize, u8, u32), M2lOperator>,
    /// Per child level.
    m2m_batches: Vec<Vec<Batch<(usize, u8, u32)>>>,
    l2l_batches: Vec<Vec<Batch<(usize, u8, u32)>>>,
    /// First cube id of each level; levels are contiguous.
    level_start: Vec<usize>,
    /// Per target cube: source leaf and `rank_dn x n_src`.
    s2l: Vec<Vec<(usize, DMatrix<C64>)>>,
    leaves: Vec<Leaf>,
    stats: EngineStats,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for FdaEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FdaEngine")
            .field("kind", &self.kind)
            .field("n", &self.n)
            .field("stats", &self.stats)
            .finish()
    }
}

/// Direction of `child_level` holding direction `dir` of `parent_level`.
fn child_dir(tree: &Octree, parent_level: usize, child_level: usize, dir: u32) -> u32 {
    match (tree.directions(parent_level), tree.directions(child_level)) {
        (Some(ps), Some(cs)) if dir != NONDIR => cs.index_of(ps.direction(dir as usize)) as u32,
        _ => NONDIR,
    }
}

fn slot(dirs: &DirList, dir: u32) -> usize {
    dirs.binary_search(&dir).expect("direction has no state")
}

fn insert_sorted(dirs: &mut DirList, dir: u32) {
    if let Err(pos) = dirs.binary_search(&dir) {
        dirs.insert(pos, dir);
    }
}

/// First cube id of each level. Cubes are numbered level by level.
fn tree_level_starts(tree: &Octree) -> Vec<usize> {
    let mut starts = Vec::with_capacity(tree.depth() + 1);
    let mut next = 0;
    for level in tree.levels() {
        starts.push(next);
        assert!(level.iter().enumerate().all(|(i, &c)| c == next + i), "cubes must be numbered level by level");
        next += level.len();
    }
    starts.push(next);
    starts
}

fn mat_bytes(m: &DMatrix<C64>) -> usize {
    m.len() * std::mem::size_of::<C64>()
}

impl FdaEngine {
    /// `geom` carries the normals used by the integral equation.
    pub fn new(geom: &ElementGeometry, ctx: &WaveContext, kind: OperatorKind, opts: &EngineOptions) -> Result<Self> {
        let start = Instant::now();
        if geom.is_empty() {
            return Err(BemError::EmptyInput("no elements"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads.max(1))
            .build()
            .map_err(|e| BemError::InvalidArgument(format!("thread pool: {e}")))?;
        let mut tree = build_octree(&geom.centroids(), opts.max_leaf)?;
        tree.classify_regimes(ctx)?;
        let lists = build_interaction_lists(&tree, ctx)?;
        let mut engine = pool.install(|| Self::setup(geom, ctx, kind, opts, tree, lists))?;
        engine.pool = pool;
        engine.stats.setup_seconds = start.elapsed().as_secs_f64();
        Ok(engine)
    }

    fn setup(
        geom: &ElementGeometry,
        ctx: &WaveContext,
        kind: OperatorKind,
        opts: &EngineOptions,
        tree: Octree,
        lists: InteractionLists,
    ) -> Result<Self> {
        let nc = tree.len();
        let (out_dirs, in_dirs) = active_directions(&tree, &lists);

        let mut bases: Vec<Option<LevelBasis>> = Vec::new();
        for level in 0..tree.depth() {
            let used = tree.levels()[level].iter().any(|&c| !out_dirs[c].is_empty() || !in_dirs[c].is_empty());
            bases.push(if used { Some(LevelBasis::build(&tree, level, ctx, &opts.params)?) } else { None });
        }
        let basis = |level: usize| bases[level].as_ref().expect("level basis");
        let k = ctx.k();
        let eps = opts.params.epsilon;

        // same-level translations
        let mut m2l_entries = Vec::new();
        let mut keys: Vec<Vec<[i64; 3]>> = vec![Vec::new(); tree.depth()];
        for t in 0..nc {
            let ct = tree.cube(t);
            for e in &lists.m2l[t] {
                let b = basis(ct.level);
                let key = b.m2l_key(&(ct.center - tree.cube(e.source).center), e.outgoing);
                keys[ct.level].push(key);
                m2l_entries.push(((ct.level, key), [e.source, slot(&out_dirs[e.source], e.outgoing), t, slot(&in_dirs[t], e.incoming)]));
            }
        }
        let m2l_batches: Vec<Batch<(usize, [i64; 3])>> = batches(m2l_entries);
        let mut m2l_tables = Vec::with_capacity(tree.depth());
        for (level, mut ks) in keys.into_iter().enumerate() {
            ks.sort_unstable();
            ks.dedup();
            if ks.is_empty() {
                m2l_tables.push(HashMap::new());
                continue;
            }
            let b = basis(level);
            let directional = b.regime == Regime::High;
            let ops = ks
                .par_iter()
                .map(|key| build_m2l_for_key(b, key, directional, ctx, eps).map(|op| (*key, op)))
                .collect::<Result<Vec<_>>>()?;
            m2l_tables.push(ops.into_iter().collect());
        }

        // upward and downward transfers, only for directions in use
        let mut m2m_entries = vec![Vec::new(); tree.depth()];
        let mut l2l_entries = vec![Vec::new(); tree.depth()];
        for c in 0..nc {
            let cube = tree.cube(c);
            let Some(p) = cube.parent else { continue };
            let cl = cube.level;
            for (i, &u) in out_dirs[p].iter().enumerate() {
                let cs = slot(&out_dirs[c], child_dir(&tree, cl - 1, cl, u));
                m2m_entries[cl].push(((cl, cube.octant, u), [c, cs, p, i]));
            }
            for (i, &v) in in_dirs[p].iter().enumerate() {
                let cs = slot(&in_dirs[c], child_dir(&tree, cl - 1, cl, v));
                l2l_entries[cl].push(((cl, cube.octant, v), [p, i, c, cs]));
            }
        }
        let m2m_batches: Vec<Vec<Batch<(usize, u8, u32)>>> = m2m_entries.into_iter().map(batches).collect();
        let l2l_batches: Vec<Vec<Batch<(usize, u8, u32)>>> = l2l_entries.into_iter().map(batches).collect();
        let m2m = m2m_batches
            .iter()
            .flatten()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|b| {
                let (cl, o, u) = b.key;
                let cd = child_dir(&tree, cl - 1, cl, u);
                (b.key, M2lOperator::Dense(build_m2m(basis(cl - 1), basis(cl), o, u, cd, k)))
            })
            .collect::<HashMap<_, _>>();
        let l2l = l2l_batches
            .iter()
            .flatten()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|b| {
                let (cl, o, v) = b.key;
                let cd = child_dir(&tree, cl - 1, cl, v);
                (b.key, M2lOperator::Dense(build_l2l(basis(cl - 1), basis(cl), o, v, cd, k)))
            })
            .collect::<HashMap<_, _>>();

        // element-dependent pieces
        let rule = QuadratureRule::default();
        let moment = kind.moment_kernel();
        let moments = |points: &[Vec3], elements: &[usize]| -> Result<DMatrix<C64>> {
            let mut m = DMatrix::zeros(points.len(), elements.len());
            for (j, &e) in elements.iter().enumerate() {
                for (i, x) in points.iter().enumerate() {
                    m[(i, j)] = element_integral(&geom.elements[e], x, &Vec3::zeros(), moment, ctx, &rule)?;
                }
            }
            Ok(m)
        };
        let targets = |points: &[Vec3], elements: &[usize]| -> DMatrix<C64> {
            DMatrix::from_fn(elements.len(), points.len(), |i, j| {
                let e = &geom.elements[elements[i]];
                kernel_unchecked(KernelKind::TargetCombined, &(e.centroid - points[j]), &e.normal, &e.normal, k, ctx.alpha())
            })
        };

        let s2l = (0..nc)
            .into_par_iter()
            .map(|t| {
                let ct = tree.cube(t);
                lists.s2l[t]
                    .iter()
                    .map(|&s| {
                        let b = basis(ct.level);
                        let check = b.in_check_at(&ct.center, NONDIR);
                        Ok((s, &b.dn_uh * moments(&check, &tree.cube(s).elements)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let leaf_ids: Vec<usize> = tree.leaves().collect();
        let leaves = leaf_ids
            .par_iter()
            .map(|&c| {
                let cube = tree.cube(c);
                let els = &cube.elements;
                let s2m = out_dirs[c]
                    .iter()
                    .map(|&u| {
                        let b = basis(cube.level);
                        Ok(&b.s2m * moments(&b.out_check_at(&cube.center, u), els)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let l2t = in_dirs[c]
                    .iter()
                    .map(|&v| {
                        let b = basis(cube.level);
                        targets(&b.in_equiv_at(&cube.center, v), els) * &b.l2t
                    })
                    .collect();
                let m2t = lists.m2t[c]
                    .iter()
                    .map(|&s| {
                        let cs = tree.cube(s);
                        let b = basis(cs.level);
                        (s, targets(&b.out_equiv_at(&cs.center, NONDIR), els) * &b.up_v)
                    })
                    .collect();
                let near = lists.near[c]
                    .iter()
                    .map(|&s| Ok((s, near_block(geom, ctx, kind, els, &tree.cube(s).elements, &rule)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Leaf { cube: c, s2m, l2t, m2t, near })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut stats = EngineStats {
            levels: tree.depth(),
            leaves: leaves.len(),
            ..Default::default()
        };
        for (level, table) in m2l_tables.iter().enumerate() {
            let factored = table.values().filter(|op| op.is_factored()).count();
            stats.m2l_operators += table.len();
            stats.m2l_factored += factored;
            if tree.level_regime(level) == Regime::High {
                stats.hf_m2l_operators += table.len();
                stats.hf_m2l_factored += factored;
            }
            stats.memory_bytes += table.values().map(|op| op.entries() * std::mem::size_of::<C64>()).sum::<usize>();
        }
        for b in bases.iter().flatten() {
            stats.ranks.push((b.level, b.rank_up(), b.rank_dn(), b.out_equiv.len()));
            stats.memory_bytes += mat_bytes(&b.s2m) + mat_bytes(&b.up_v) + mat_bytes(&b.dn_uh) + mat_bytes(&b.l2t);
        }
        stats.memory_bytes += m2m.values().chain(l2l.values()).map(|op| op.entries() * std::mem::size_of::<C64>()).sum::<usize>();
        stats.memory_bytes += s2l.iter().flatten().map(|(_, m)| mat_bytes(m)).sum::<usize>();
        for leaf in &leaves {
            stats.memory_bytes += leaf.s2m.iter().chain(&leaf.l2t).map(mat_bytes).sum::<usize>();
            stats.memory_bytes += leaf.m2t.iter().map(|(_, m)| mat_bytes(m)).sum::<usize>();
            let near: usize = leaf.near.iter().map(|(_, m)| m.len()).sum();
            stats.near_entries += near;
            stats.memory_bytes += near * std::mem::size_of::<C64>();
        }

        let level_start = tree_level_starts(&tree);
        if log::log_enabled!(log::Level::Debug) {
            for level in 0..tree.depth() {
                let (mut pairs, mut work) = (0usize, 0usize);
                for b in m2l_batches.iter().filter(|b| b.key.0 == level) {
                    pairs += b.pairs.len();
                    work += b.pairs.len() * m2l_tables[level][&b.key.1].entries();
                }
                let tw = |bs: &[Batch<(usize, u8, u32)>], ops: &HashMap<(usize, u8, u32), M2lOperator>| {
                    bs.iter().map(|b| b.pairs.len() * ops[&b.key].entries()).sum::<usize>()
                };
                log::debug!(
                    "level {level}: {} cubes, m2l {pairs} pairs {work} mults, m2m {} mults, l2l {} mults",
                    tree.levels()[level].len(),
                    tw(&m2m_batches[level], &m2m),
                    tw(&l2l_batches[level], &l2l)
                );
            }
        }
        Ok(Self {
            level_start,
            kind,
            ctx: *ctx,
            n: geom.len(),
            tree,
            lists,
            bases,
            out_dirs,
            in_dirs,
            m2l_tables,
            m2l_batches,
            m2m,
            l2l,
            m2m_batches,
            l2l_batches,
            s2l,
            leaves,
            stats,
            pool: rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool"),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn context(&self) -> &WaveContext {
        &self.ctx
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn tree(&self) -> &Octree {
        &self.tree
    }

    pub fn lists(&self) -> &InteractionLists {
        &self.lists
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn basis(&self, level: usize) -> Option<&LevelBasis> {
        self.bases.get(level).and_then(|b| b.as_ref())
    }

    pub fn m2l_table(&self, level: usize) -> &HashMap<[i64; 3], M2lOperator> {
        &self.m2l_tables[level]
    }

    /// Relative spectral-norm gap between stored high frequency M2L
    /// operators (built once per rotated offset) and the same operators
    /// assembled with clouds placed explicitly in each pair's frame. Up to
    /// `samples` pairs are taken at an even stride over all HF pairs.
    pub fn rotation_reuse_errors(&self, samples: usize) -> Result<Vec<f64>> {
        let mut pairs = Vec::new();
        for t in 0..self.tree.len() {
            let level = self.tree.cube(t).level;
            if self.bases[level].as_ref().is_some_and(|b| b.regime == Regime::High) {
                pairs.extend(self.lists.m2l[t].iter().map(|e| (t, *e)));
            }
        }
        if pairs.is_empty() || samples == 0 {
            return Ok(Vec::new());
        }
        let stride = (pairs.len() / samples).max(1);
        let k = self.ctx.k();
        pairs
            .iter()
            .step_by(stride)
            .take(samples)
            .map(|&(t, e)| {
                let (ct, cs) = (self.tree.cube(t), self.tree.cube(e.source));
                let b = self.bases[ct.level].as_ref().expect("HF level has a basis");
                let direct = &b.dn_uh * kernel_matrix(&b.in_check_at(&ct.center, e.incoming), &b.out_equiv_at(&cs.center, e.outgoing), k) * &b.up_v;
                let key = b.m2l_key(&(ct.center - cs.center), e.outgoing);
                let stored = self.m2l_tables[ct.level][&key].to_dense();
                Ok(norm2_estimate(&(stored - &direct), 60) / norm2_estimate(&direct, 60))
            })
            .collect()
    }

    /// Checks the kind before applying.
    pub fn apply_kind(&self, kind: OperatorKind, q: &[C64]) -> Result<Vec<C64>> {
        if kind != self.kind {
            return Err(BemError::KindMismatch { expected: self.kind, got: kind });
        }
        self.apply(q)
    }

    /// `p = A q` for the operator this engine was built for.
    pub fn apply(&self, q: &[C64]) -> Result<Vec<C64>> {
        if q.len() != self.n {
            return Err(BemError::DimensionMismatch { expected: self.n, got: q.len() });
        }
        Ok(self.pool.install(|| self.apply_inner(q)))
    }

    fn local(&self, q: &[C64], cube: usize) -> Vec<C64> {
        self.tree.cube(cube).elements.iter().map(|&e| q[e]).collect()
    }

    fn rank_up(&self, cube: usize) -> usize {
        self.bases[self.tree.cube(cube).level].as_ref().map_or(0, |b| b.rank_up())
    }

    fn rank_dn(&self, cube: usize) -> usize {
        self.bases[self.tree.cube(cube).level].as_ref().map_or(0, |b| b.rank_dn())
    }

    fn apply_inner(&self, q: &[C64]) -> Vec<C64> {
        let tree = &self.tree;
        let nc = tree.len();
        let parallel = self.pool.current_num_threads() > 1;
        let clock = Instant::now();
        let mut marks = Vec::with_capacity(4);

        // outgoing states, one vector per (cube, direction)
        let mut out: States = (0..nc).map(|c| vec![vec![ZERO; self.rank_up(c)]; self.out_dirs[c].len()]).collect();
        let leaf_states: Vec<(usize, Vec<Vec<C64>>)> = self
            .leaves
            .par_iter()
            .filter(|l| !l.s2m.is_empty())
            .map(|l| {
                let ql = self.local(q, l.cube);
                let states = l
                    .s2m
                    .iter()
                    .map(|m| {
                        let mut s = vec![ZERO; m.nrows()];
                        gemv_acc(m, &ql, &mut s);
                        s
                    })
                    .collect();
                (l.cube, states)
            })
            .collect();
        for (c, s) in leaf_states {
            out[c] = s;
        }
        for level in (1..tree.depth()).rev() {
            let start = self.level_start[level];
            let (parents, children) = out.split_at_mut(start);
            run_batches(&self.m2m_batches[level], |key| &self.m2m[key], children, start, parents, 0, parallel);
        }

        marks.push(clock.elapsed().as_secs_f64());
        // same-level translations and big-leaf sources
        let mut inc: States = (0..nc)
            .into_par_iter()
            .map(|t| {
                let mut states = vec![vec![ZERO; self.rank_dn(t)]; self.in_dirs[t].len()];
                for (s, m) in &self.s2l[t] {
                    gemv_acc(m, &self.local(q, *s), &mut states[0]);
                }
                states
            })
            .collect();
        run_batches(&self.m2l_batches, |(level, key)| &self.m2l_tables[*level][key], &out, 0, &mut inc, 0, parallel);

        marks.push(clock.elapsed().as_secs_f64());
        for level in 1..tree.depth() {
            let start = self.level_start[level];
            let (parents, children) = inc.split_at_mut(start);
            run_batches(&self.l2l_batches[level], |key| &self.l2l[key], parents, 0, children, start, parallel);
        }

        marks.push(clock.elapsed().as_secs_f64());
        let parts: Vec<(usize, Vec<C64>)> = self
            .leaves
            .par_iter()
            .map(|l| {
                let n_loc = tree.cube(l.cube).elements.len();
                let mut p = vec![ZERO; n_loc];
                for (m, s) in l.l2t.iter().zip(&inc[l.cube]) {
                    gemv_acc(m, s, &mut p);
                }
                for (s, m) in &l.m2t {
                    gemv_acc(m, &out[*s][0], &mut p);
                }
                for (s, m) in &l.near {
                    gemv_acc(m, &self.local(q, *s), &mut p);
                }
                (l.cube, p)
            })
            .collect();
        let mut result = vec![ZERO; self.n];
        for (c, p) in parts {
            for (&e, v) in tree.cube(c).elements.iter().zip(p) {
                result[e] = v;
            }
        }
        marks.push(clock.elapsed().as_secs_f64());
        log::debug!("apply: upward/m2l/downward/leaves done at {marks:?} s");
        result
    }

    /// Near block between two leaves, for tests against dense assembly.
    pub fn near_block(&self, target: usize, source: usize) -> Option<&DMatrix<C64>> {
        self.leaves
            .iter()
            .find(|l| l.cube == target)?
            .near
            .iter()
            .find(|(s, _)| *s == source)
            .map(|(_, m)| m)
    }
}

/// Collocation block with the jump terms on coincident elements.
fn near_block(
    geom: &ElementGeometry,
    ctx: &WaveContext,
    kind: OperatorKind,
    targets: &[usize],
    sources: &[usize],
    rule: &QuadratureRule,
) -> Result<DMatrix<C64>> {
    let near = kind.near_kernel();
    let mut m = DMatrix::zeros(targets.len(), sources.len());
    for (j, &s) in sources.iter().enumerate() {
        for (i, &t) in targets.iter().enumerate() {
            let et = &geom.elements[t];
            m[(i, j)] = if s == t {
                let st = self_terms(et, ctx);
                match kind {
                    OperatorKind::Lhs => st.lhs_diag,
                    OperatorKind::Rhs => st.rhs_diag,
                }
            } else {
                element_integral(&geom.elements[s], &et.centroid, &et.normal, near, ctx, rule)?
            };
        }
    }
    Ok(m)
}

/// Outgoing and incoming directions each cube must carry. A cube needs a
/// direction when it takes part in a translation with it, or when its
/// parent needs a direction that maps onto it.
fn active_directions(tree: &Octree, lists: &InteractionLists) -> (Vec<DirList>, Vec<DirList>) {
    let nc = tree.len();
    let mut out_dirs: Vec<DirList> = vec![Vec::new(); nc];
    let mut in_dirs: Vec<DirList> = vec![Vec::new(); nc];
    for t in 0..nc {
        for e in &lists.m2l[t] {
            insert_sorted(&mut out_dirs[e.source], e.outgoing);
            insert_sorted(&mut in_dirs[t], e.incoming);
        }
        for &s in &lists.m2t[t] {
            insert_sorted(&mut out_dirs[s], NONDIR);
        }
        if !lists.s2l[t].is_empty() {
            insert_sorted(&mut in_dirs[t], NONDIR);
        }
    }
    for level in 1..tree.depth() {
        for &c in &tree.levels()[level] {
            let p = tree.cube(c).parent.expect("non-root cube");
            for d in out_dirs[p].clone() {
                insert_sorted(&mut out_dirs[c], child_dir(tree, level - 1, level, d));
            }
            for d in in_dirs[p].clone() {
                insert_sorted(&mut in_dirs[c], child_dir(tree, level - 1, level, d));
            }
        }
    }
    (out_dirs, in_dirs)
}

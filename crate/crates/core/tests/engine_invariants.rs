use std::collections::HashSet;
use std::f64::consts::PI;

use fdbem::engine::{EngineOptions, FdaEngine};
use fdbem::octree::Regime;
use fdbem::oracles::direct_sum;
use fdbem::solver::{assemble_rhs, l2_error, solve_exterior, ExteriorProblem, IncidentField, SolverConfig};
use fdbem::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;

fn sphere(n: u32) -> ElementGeometry {
    compute_element_geometry(&generate_sphere_mesh(n, 1.0).unwrap()).unwrap().reversed_normals()
}

fn charges(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn engine(geom: &ElementGeometry, k: f64, kind: OperatorKind, max_leaf: usize, threads: usize) -> FdaEngine {
    let opts = EngineOptions { max_leaf, threads, ..Default::default() };
    FdaEngine::new(geom, &WaveContext::new(k).unwrap(), kind, &opts).unwrap()
}

#[test]
fn leaf_size_does_not_change_the_result() {
    let geom = sphere(3);
    for k in [PI, 4.0 * PI] {
        for kind in [OperatorKind::Lhs, OperatorKind::Rhs] {
            let q = charges(geom.len(), 3);
            let a = engine(&geom, k, kind, 4, 1).apply(&q).unwrap();
            let b = engine(&geom, k, kind, 16, 1).apply(&q).unwrap();
            let d = l2_error(&a, &b).unwrap();
            assert!(d <= 10.0 * EPS, "k = {k} {kind:?}: {d}");
        }
    }
}

#[test]
fn threads_agree_with_the_single_threaded_reference() {
    let geom = sphere(4);
    let q = charges(geom.len(), 11);
    let one = engine(&geom, 4.0 * PI, OperatorKind::Lhs, 32, 1);
    let two = engine(&geom, 4.0 * PI, OperatorKind::Lhs, 32, 2);
    let (a, b) = (one.apply(&q).unwrap(), two.apply(&q).unwrap());
    assert!(l2_error(&b, &a).unwrap() <= 1e-12);
    assert_eq!(two.apply(&q).unwrap(), b);
}

#[test]
fn low_frequency_path_matches_the_oracle() {
    let geom = sphere(4);
    let k = 0.5;
    for kind in [OperatorKind::Lhs, OperatorKind::Rhs] {
        let eng = engine(&geom, k, kind, 32, 1);
        let tree = eng.tree();
        assert!((0..tree.depth()).all(|l| tree.level_regime(l) == Regime::Low));
        assert_eq!(eng.stats().hf_m2l_operators, 0);
        assert!(eng.stats().m2l_operators > 0);
        let q = charges(geom.len(), 5);
        let err = l2_error(&eng.apply(&q).unwrap(), &direct_sum(&geom, eng.context(), kind, &q).unwrap()).unwrap();
        assert!(err <= 10.0 * EPS, "{kind:?}: {err}");
    }
}

#[test]
fn rotated_operators_match_direct_builds() {
    let eng = engine(&sphere(4), 4.0 * PI, OperatorKind::Lhs, 32, 1);
    let errs = eng.rotation_reuse_errors(20).unwrap();
    assert_eq!(errs.len(), 20);
    let worst = errs.iter().copied().fold(0.0, f64::max);
    assert!(worst <= 5.0 * EPS, "{worst}");
}

/// Two high frequency levels (widths about 4 and 2 wavelengths) on a small
/// mesh; both checks share the expensive setup.
#[test]
fn operator_tables_and_ranks_on_two_high_frequency_levels() {
    let geom = sphere(3);
    let eng = engine(&geom, 8.0 * PI, OperatorKind::Lhs, 8, 1);
    let tree = eng.tree();

    // every far pair finds its operator, and no table holds unused keys
    let mut used = vec![HashSet::new(); tree.depth()];
    for (t, entries) in eng.lists().m2l.iter().enumerate() {
        let ct = tree.cube(t);
        for e in entries {
            let key = eng.basis(ct.level).unwrap().m2l_key(&(ct.center - tree.cube(e.source).center), e.outgoing);
            assert!(eng.m2l_table(ct.level).contains_key(&key), "level {} key {key:?}", ct.level);
            used[ct.level].insert(key);
        }
    }
    for (level, keys) in used.iter().enumerate() {
        assert_eq!(eng.m2l_table(level).len(), keys.len(), "level {level}");
    }

    // retained ranks at width 2w stay within 4x of those at width w
    let hf: Vec<_> = eng.stats().ranks.iter().filter(|r| tree.level_regime(r.0) == Regime::High).copied().collect();
    assert!(hf.len() >= 2, "{hf:?}");
    for pair in hf.windows(2) {
        let (coarse, fine) = (pair[0], pair[1]);
        assert_eq!(coarse.0 + 1, fine.0);
        assert!(!used[coarse.0].is_empty() && !used[fine.0].is_empty());
        assert!(coarse.1 <= 4 * fine.1 && coarse.2 <= 4 * fine.2, "{hf:?}");
        println!("level {} rank {} vs level {} rank {}: ratio {:.2}", coarse.0, coarse.1, fine.0, fine.1, coarse.1 as f64 / fine.1 as f64);
    }
}

#[test]
fn reported_residual_is_recomputed_from_the_solution() {
    let mesh = generate_sphere_mesh(3, 1.0).unwrap();
    let ctx = WaveContext::new(PI).unwrap();
    let field = IncidentField::plane_wave(Vec3::new(0.0, 1.0, 1.0)).unwrap();
    let cfg = SolverConfig::new(EPS);
    let sol = solve_exterior(&mesh, &ctx, &ExteriorProblem::sound_hard(field.clone()), &cfg).unwrap();
    let geom = compute_element_geometry(&mesh).unwrap().reversed_normals();
    let lhs = FdaEngine::new(&geom, &ctx, OperatorKind::Lhs, &cfg.engine).unwrap();
    let rhs = FdaEngine::new(&geom, &ctx, OperatorKind::Rhs, &cfg.engine).unwrap();
    let b = assemble_rhs(&vec![C64::new(0.0, 0.0); geom.len()], &field, &rhs, &geom).unwrap();
    let ax = lhs.apply(&sol.u).unwrap();
    let residual = l2_error(&ax, &b).unwrap();
    assert!((residual - sol.residual).abs() <= 1e-12, "{residual} vs {}", sol.residual);
    assert!(sol.residual <= 1e-3);
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meshrecon::mesh::{icosphere, Units};
use meshrecon::metrics::{assd, overlap, surface_distances, MetricSampling, NearestQuery, Reference};
use meshrecon::spatial::KdTree;
use meshrecon::voxel::{Grid, Volume, VolumeKind};
use meshrecon::{TriMesh, Vec3};

fn rand_vec(rng: &mut ChaCha8Rng, amp: f64) -> Vec3 {
    Vec3::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(-amp..amp))
}

fn blobby(rng: &mut ChaCha8Rng, level: u32) -> TriMesh {
    let m = icosphere(level);
    let s = rng.random_range(5.0..12.0);
    let c = rand_vec(rng, 2.0);
    m.with_positions(m.vertices().iter().map(|&p| c + p * s + rand_vec(rng, 0.5)).collect()).with_units(Units::Mm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_jaccard_identity(seed in any::<u64>(), n in 1usize..10, da in 0.0f64..1.0, db in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::cube(n);
        let mut mask = |d: f64| Volume::new(g, (0..g.len()).map(|_| rng.random_bool(d) as u8 as f64).collect(), VolumeKind::Mask).unwrap();
        let (a, b) = (mask(da), mask(db));
        let o = overlap(&a, &b).unwrap();
        let j = o.jaccard();
        prop_assert!((o.dice() - 2.0 * j / (1.0 + j)).abs() <= 4.0 * f64::EPSILON);
        prop_assert_eq!(o, overlap(&b, &a).map(|o| meshrecon::metrics::Overlap { a: o.b, b: o.a, both: o.both }).unwrap());
    }

    #[test]
    fn kd_tree_matches_brute_force(seed in any::<u64>(), n in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..n).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..20 {
            let q = rand_vec(&mut rng, 2.0);
            let (i, d2) = tree.nearest(q).unwrap();
            let best = pts.iter().map(|p| p.dist2(q)).fold(f64::INFINITY, f64::min);
            prop_assert!((d2 - best).abs() <= 1e-9);
            prop_assert!((pts[i].dist2(q) - d2).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mesh_mode_assd_is_symmetric_and_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q) = (blobby(&mut rng, 2), blobby(&mut rng, 1));
        let s = MetricSampling { seed, ..Default::default() };
        let pq = assd(&p, Reference::Mesh(&q), &s).unwrap();
        let qp = assd(&q, Reference::Mesh(&p), &s).unwrap();
        prop_assert!((pq - qp).abs() <= 1e-12 * pq.max(1.0), "{} vs {}", pq, qp);
        let d = surface_distances(&p, Reference::Mesh(&q), &s).unwrap();
        prop_assert!(d.forward.iter().chain(&d.backward).all(|&x| x >= 0.0));
        let same = surface_distances(&p, Reference::Mesh(&p), &s).unwrap();
        prop_assert!(same.hausdorff() < 1e-9);
    }

    #[test]
    fn bvh_nearest_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = blobby(&mut rng, 2);
        let nq = NearestQuery::new(&m).unwrap();
        for _ in 0..40 {
            let x = rand_vec(&mut rng, 20.0);
            prop_assert!((nq.nearest(x).distance() - nq.nearest_brute(x).distance()).abs() <= 1e-9);
        }
    }
}

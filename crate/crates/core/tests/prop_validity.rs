use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meshrecon::mesh::{icosphere, Units};
use meshrecon::metrics::NearestQuery;
use meshrecon::validity::{audit, deviation_fractions, find_self_intersections, find_self_intersections_brute, ValidityThresholds};
use meshrecon::{TriMesh, Vec3};

fn rand_vec(rng: &mut ChaCha8Rng, amp: f64) -> Vec3 {
    if amp <= 0.0 {
        return Vec3::ZERO;
    }
    Vec3::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(-amp..amp))
}

fn crumpled(seed: u64, level: u32, amp: f64) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = icosphere(level);
    m.with_positions(m.vertices().iter().map(|&p| p * 10.0 + rand_vec(&mut rng, amp)).collect()).with_units(Units::Mm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn accelerated_self_intersections_equal_brute_force(seed in any::<u64>(), level in 0u32..3, amp in 0.0f64..4.0) {
        let m = crumpled(seed, level, amp);
        let fast: BTreeSet<_> = find_self_intersections(&m).into_iter().collect();
        let slow: BTreeSet<_> = find_self_intersections_brute(&m).into_iter().collect();
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn audit_is_pure(seed in any::<u64>(), amp in 0.0f64..3.0) {
        let m = crumpled(seed, 1, amp);
        let th = ValidityThresholds::default();
        prop_assert_eq!(audit(&m, None, &th).unwrap().to_text(), audit(&m, None, &th).unwrap().to_text());
    }

    #[test]
    fn deviation_fraction_falls_with_threshold(seed in any::<u64>(), t1 in 0.0f64..5.0, dt in 0.0f64..5.0) {
        let m = crumpled(seed, 2, 2.0);
        let reference = NearestQuery::new(&crumpled(seed ^ 7, 2, 0.0)).unwrap();
        let d = deviation_fractions(&m, &reference, &[t1, t1 + dt]).unwrap();
        prop_assert!(d.fractions[1] <= d.fractions[0]);
        prop_assert!(d.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
    }
}

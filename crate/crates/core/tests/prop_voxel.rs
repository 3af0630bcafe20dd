use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meshrecon::mesh::{icosphere, Units};
use meshrecon::voxel::{label_components, morph_cleanup, rasterize, synth_shape, Grid, SynthParams, Volume, VolumeKind};
use meshrecon::Vec3;

fn noisy_mask(seed: u64, n: usize, density: f64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grid::cube(n);
    let data = (0..g.len()).map(|_| rng.random_bool(density) as u8 as f64).collect();
    Volume::new(g, data, VolumeKind::Mask).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rasterize_ignores_face_orientation(seed in any::<u64>(), level in 1u32..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(4.0..9.0);
        let c = Vec3::new(rng.random_range(9.0..11.0), rng.random_range(9.0..11.0), rng.random_range(9.0..11.0));
        let base = icosphere(level);
        let m = base
            .with_positions(base.vertices().iter().map(|&p| c + p * r * rng.random_range(0.85..1.15)).collect())
            .with_units(Units::Mm);
        let g = Grid::cube(20);
        prop_assert_eq!(rasterize(&m, &g).unwrap(), rasterize(&m.flipped(), &g).unwrap());
    }

    #[test]
    fn morph_cleanup_is_idempotent(seed in any::<u64>(), n in 4usize..14, density in 0.05f64..0.95, min in 0usize..12) {
        let m = noisy_mask(seed, n, density);
        let once = morph_cleanup(&m, min);
        prop_assert_eq!(morph_cleanup(&once, min), once);
    }

    #[test]
    fn mask_values_stay_binary(seed in any::<u64>(), bad in 0.01f64..0.99) {
        let m = noisy_mask(seed, 6, 0.5);
        prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let mut data = m.data().to_vec();
        let at = (seed % data.len() as u64) as usize;
        data[at] = bad;
        prop_assert!(Volume::new(*m.grid(), data, VolumeKind::Mask).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_masks_are_one_component_and_reproducible(seed in any::<u64>(), blobs in 1usize..5) {
        let p = SynthParams { seed, dims: 24, n_blobs: blobs, ..Default::default() };
        let (sdf, mask) = synth_shape(&p).unwrap();
        prop_assert_eq!(sdf.data().len(), 24 * 24 * 24);
        let (_, sizes) = label_components(&mask);
        prop_assert!(sizes.len() <= 1);
        let again = synth_shape(&p).unwrap();
        prop_assert_eq!((sdf, mask), again);
    }
}

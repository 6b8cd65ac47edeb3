mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nearmem::ivf::{train_ivf, CoarseQuantizer};
use nearmem::kmeans::{train, KMeansParams};
use nearmem::pq::{train_pq, PqCodebook, PqTrainParams};

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

fn codebook_strategy() -> impl Strategy<Value = (PqCodebook, Vec<f32>, Vec<u8>)> {
    (1usize..5, 1usize..4, 1usize..17).prop_flat_map(|(m, dsub, ksub)| {
        let dim = m * dsub;
        (
            prop::collection::vec(-10.0f32..10.0, m * ksub * dsub),
            prop::collection::vec(-10.0f32..10.0, dim),
            prop::collection::vec(0..ksub as u8, m),
        )
            .prop_map(move |(c, r, code)| (PqCodebook::from_centroids(dim, m, ksub, c).unwrap(), r, code))
    })
}

proptest! {
    #[test]
    fn adc_equals_distance_to_reconstruction((cb, residual, code) in codebook_strategy()) {
        let adc = cb.build_lut(&residual).unwrap().adc_distance(&code).unwrap() as f64;
        let direct = sq(&residual, &cb.reconstruct(&code).unwrap());
        prop_assert!((adc - direct).abs() / direct.max(1.0) <= 1e-5, "adc {adc} direct {direct}");
    }

    #[test]
    fn encode_picks_the_nearest_centroid_per_subspace((cb, v, _) in codebook_strategy()) {
        let code = cb.encode(&v).unwrap();
        let dsub = cb.dsub();
        for (s, &c) in code.as_bytes().iter().enumerate() {
            let part = &v[s * dsub..(s + 1) * dsub];
            let best = (0..cb.ksub())
                .map(|j| (sq(part, cb.centroid(s, j)), j))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap();
            prop_assert!(sq(part, cb.centroid(s, c as usize)) <= best.0 + 1e-4, "subspace {s}: chose {c}, best {}", best.1);
        }
    }

    #[test]
    fn assign_matches_linear_scan(
        centroids in prop::collection::vec(-5.0f32..5.0, 3 * 12),
        v in prop::collection::vec(-5.0f32..5.0, 3),
    ) {
        let q = CoarseQuantizer::from_centroids(3, centroids.clone()).unwrap();
        let best = centroids
            .chunks_exact(3)
            .enumerate()
            .map(|(i, c)| (sq(&v, c), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap();
        let got = q.assign(&v).unwrap() as usize;
        prop_assert!(sq(&v, q.centroid(got)) <= best.0 + 1e-4);
    }

    #[test]
    fn scan_matches_full_sort(
        centroids in prop::collection::vec(-5.0f32..5.0, 2 * 20),
        v in prop::collection::vec(-5.0f32..5.0, 2),
        nprobe in 1usize..25,
    ) {
        let q = CoarseQuantizer::from_centroids(2, centroids.clone()).unwrap();
        let probe = q.scan(&v, nprobe).unwrap().list_ids;
        prop_assert_eq!(probe.len(), nprobe.min(20));
        let mut all: Vec<(f64, u32)> = centroids.chunks_exact(2).enumerate().map(|(i, c)| (sq(&v, c), i as u32)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // Same distances in the same order; ids may only differ inside f32 ties.
        for (got, want) in probe.iter().zip(&all) {
            prop_assert!((sq(&v, q.centroid(*got as usize)) - want.0).abs() <= 1e-4);
        }
    }
}

#[test]
fn thousand_vectors_thirty_two_lists_all_populated() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f32> = (0..1000 * 8).map(|_| rng.gen()).collect();
    let q = train_ivf(&data, 8, &KMeansParams::new(32, 1)).unwrap();
    let mut counts = [0usize; 32];
    for v in data.chunks_exact(8) {
        counts[q.assign(v).unwrap() as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
}

#[test]
fn encoded_index_error_is_below_training_error() {
    let s = common::small(10_000, 0, 16, 16, 4, 5);
    let index = &s.index;
    let m = index.codebook().m();
    let mut sum = 0.0;
    for (l, list) in index.lists().iter().enumerate() {
        for (j, &id) in list.ids.iter().enumerate() {
            let row = ((id - 1000) / 3) as usize;
            let mut approx = index.codebook().reconstruct(list.code(j, m)).unwrap();
            approx.iter_mut().zip(index.quantizer().centroid(l)).for_each(|(a, c)| *a += c);
            sum += sq(&s.base[row * 16..(row + 1) * 16], &approx);
        }
    }
    let mse = sum / index.len() as f64;
    // The coarse quantizer alone leaves the residual energy; PQ must remove most of it.
    let coarse: f64 = s
        .base
        .chunks_exact(16)
        .map(|v| sq(v, index.quantizer().centroid(index.quantizer().assign(v).unwrap() as usize)))
        .sum::<f64>()
        / index.len() as f64;
    assert!(mse < coarse, "PQ mse {mse} vs coarse-only {coarse}");

    // Retraining each subspace with the seed the trainer derives reproduces
    // the codebook; Lloyd's final reassignment can only lower its objective.
    let residuals: Vec<f32> = s
        .base
        .chunks_exact(16)
        .flat_map(|v| index.quantizer().residual(v, index.quantizer().assign(v).unwrap() as usize))
        .collect();
    let mut train_wcss = 0.0;
    for sub in 0..m {
        let part: Vec<f32> = residuals.chunks_exact(16).flat_map(|r| r[sub * 4..sub * 4 + 4].to_vec()).collect();
        let seed = 5u64.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(sub as u64 + 1));
        let km = train(&part, 4, &KMeansParams { k: 32, max_iters: 10, seed, max_train_points: None }).unwrap();
        assert_eq!(km.centroids, index.codebook().centroids()[sub * 32 * 4..(sub + 1) * 32 * 4]);
        train_wcss += km.wcss_history.last().unwrap();
    }
    let train_mse = train_wcss / index.len() as f64;
    assert!(mse <= train_mse * (1.0 + 1e-6), "index mse {mse} vs training mse {train_mse}");
}

#[test]
fn pq_training_is_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f32> = (0..2000 * 8).map(|_| rng.gen()).collect();
    let p = PqTrainParams { m: 2, ksub: 16, kmeans_iters: 5, seed: 4, max_train_points: None };
    assert_eq!(train_pq(&data, 8, &p).unwrap(), train_pq(&data, 8, &p).unwrap());
}

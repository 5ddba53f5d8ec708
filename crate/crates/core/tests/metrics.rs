use fedembed::eval::{
    average_precisions, cmc, evaluate_embeddings, extract_embeddings, l2_distance_matrix, mean_average_precision,
    retrieval_metrics,
};
use fedembed::baselines::{concat_embeddings, ensemble_param_average, evaluate_feature_concat};
use fedembed::data::{make_query_gallery_split, SyntheticSuite};
use fedembed::nn::EmbeddingNet;
use fedembed::rng::seeded;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;

/// Position of every gallery item in the distance order (ties by index),
/// computed pairwise without sorting.
fn positions(row: &[f64]) -> Vec<usize> {
    (0..row.len())
        .map(|j| (0..row.len()).filter(|&k| row[k] < row[j] || (row[k] == row[j] && k < j)).count())
        .collect()
}

fn oracle_rank(row: &[f64], q: usize, gallery: &[usize]) -> usize {
    let pos = positions(row);
    (0..row.len()).filter(|&j| gallery[j] == q).map(|j| pos[j]).min().unwrap()
}

fn oracle_ap(row: &[f64], q: usize, gallery: &[usize]) -> f64 {
    let pos = positions(row);
    let mut hits: Vec<usize> = (0..row.len()).filter(|&j| gallery[j] == q).map(|j| pos[j]).collect();
    hits.sort_unstable();
    let mut sum = 0.0;
    for (h, &p) in hits.iter().enumerate() {
        sum += (h + 1) as f64 / (p + 1) as f64;
    }
    sum / hits.len() as f64
}

/// Random instance with coarse integer distances so that ties are common.
fn instance(seed: u64) -> (Array2<f64>, Vec<usize>, Vec<usize>) {
    let mut rng = seeded(seed);
    let q = rng.random_range(1..=20);
    let g = rng.random_range(1..=20);
    let ids = rng.random_range(1..=5);
    let gallery: Vec<usize> = (0..g).map(|_| rng.random_range(0..ids)).collect();
    let query: Vec<usize> = (0..q).map(|_| gallery[rng.random_range(0..g)]).collect();
    let d = Array2::from_shape_fn((q, g), |_| rng.random_range(0..6) as f64);
    (d, query, gallery)
}

#[test]
fn cmc_and_map_equal_brute_force_oracles() {
    for seed in 0..100 {
        let (d, query, gallery) = instance(seed);
        let g = gallery.len();
        let ks: Vec<usize> = (1..=g).collect();
        let got = cmc(d.view(), &query, &gallery, &ks).unwrap();
        let aps = average_precisions(d.view(), &query, &gallery).unwrap();
        let mut oracle_aps = Vec::new();
        let mut ranks = Vec::new();
        for (i, &q) in query.iter().enumerate() {
            let row = d.row(i).to_vec();
            ranks.push(oracle_rank(&row, q, &gallery));
            oracle_aps.push(oracle_ap(&row, q, &gallery));
        }
        for (k, v) in ks.iter().zip(&got) {
            let expect = ranks.iter().filter(|&&r| r < *k).count() as f64 / query.len() as f64;
            assert_eq!(*v, expect, "seed {seed} k {k}");
        }
        assert_eq!(aps, oracle_aps, "seed {seed}");
        let map = mean_average_precision(d.view(), &query, &gallery).unwrap();
        assert_eq!(map, oracle_aps.iter().sum::<f64>() / oracle_aps.len() as f64);
        assert_eq!(got[g - 1], 1.0);
    }
}

#[test]
fn worked_average_precision() {
    let d = array![[0.1, 0.2, 0.3, 0.4]];
    let ap = mean_average_precision(d.view(), &[1], &[1, 0, 1, 0]).unwrap();
    assert_eq!(ap, oracle_ap(&[0.1, 0.2, 0.3, 0.4], 1, &[1, 0, 1, 0]));
    assert!((ap - 0.833333).abs() < 1e-6);
}

#[test]
fn perfect_retrieval() {
    let d = array![[0.0, 1.0, 2.0], [2.0, 0.0, 1.0]];
    let r = retrieval_metrics(d.view(), &[0, 1], &[0, 1, 1]).unwrap();
    assert_eq!((r.rank1, r.map), (1.0, 1.0));
}

#[test]
fn distance_matrix_matches_pairwise_loop() {
    let mut rng = seeded(3);
    let a = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
    let b = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
    let d = l2_distance_matrix(a.view(), b.view()).unwrap();
    for i in 0..4 {
        for j in 0..5 {
            let s: f64 = (0..3).map(|k| (a[[i, k]] - b[[j, k]]).powi(2)).sum();
            assert!((d[[i, j]] - s.sqrt()).abs() < 1e-12);
        }
    }
    let self_d = l2_distance_matrix(a.view(), a.view()).unwrap();
    for i in 0..4 {
        assert_eq!(self_d[[i, i]], 0.0);
        for j in 0..4 {
            assert_eq!(self_d[[i, j]], self_d[[j, i]]);
        }
    }
}

fn small_suite() -> SyntheticSuite {
    SyntheticSuite {
        test_identities: 12,
        test_images: 4,
        ..SyntheticSuite::default()
    }
}

#[test]
fn embeddings_match_per_row_forward() {
    let (_, ds) = small_suite().generate(1).unwrap();
    let net = EmbeddingNet::init(&[ds.feature_dim(), 7, 5], &mut seeded(2)).unwrap();
    let all = extract_embeddings(&net, &ds).unwrap();
    assert_eq!(all, extract_embeddings(&net, &ds).unwrap());
    for i in [0, 5, ds.len() - 1] {
        let one = net.embed(ds.rows(&[i]).view()).unwrap();
        assert_eq!(one.row(0), all.row(i));
    }
    let zero = EmbeddingNet::zeros(&[ds.feature_dim(), 7, 5]).unwrap();
    assert!(extract_embeddings(&zero, &ds).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn ensembles_of_a_model_with_itself() {
    let (_, ds) = small_suite().generate(2).unwrap();
    let split = make_query_gallery_split(&ds, &mut seeded(4)).unwrap();
    let net = EmbeddingNet::init(&[ds.feature_dim(), 6], &mut seeded(5)).unwrap();
    let single = evaluate_embeddings(extract_embeddings(&net, &ds).unwrap().view(), &ds, &split).unwrap();
    let twice = [net.clone(), net.clone()];
    let concat = concat_embeddings(&twice, &ds).unwrap();
    assert_eq!(concat.ncols(), 12);
    assert_eq!(evaluate_feature_concat(&twice, &ds, &split).unwrap(), single);
    assert_eq!(ensemble_param_average(&twice).unwrap().params(), net.params());
    let other = EmbeddingNet::init(&[ds.feature_dim(), 7], &mut seeded(6)).unwrap();
    assert!(ensemble_param_average(&[net, other]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_invariant_under_monotone_transforms(seed in 0u64..10_000) {
        let (d, query, gallery) = instance(seed);
        let t = d.mapv(|v| (v * 0.5).exp() + 3.0);
        let a = retrieval_metrics(d.view(), &query, &gallery).unwrap();
        let b = retrieval_metrics(t.view(), &query, &gallery).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.rank1 <= a.rank5 && a.rank5 <= a.rank10);
        prop_assert!((0.0..=1.0).contains(&a.map));
    }
}

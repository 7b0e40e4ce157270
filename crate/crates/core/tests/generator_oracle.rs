//! Generator statistics and the exact oracle against exhaustive enumeration.

use std::collections::BTreeSet;

use proptest::prelude::*;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};
use submatch::graph::{
    add_noise, build_dataset, generate_graph, insert_query, DatasetKind, FeatureEncoding,
    GeneratorConfig, Graph, GraphSizes, SplitCounts,
};
use submatch::oracle::{brute_force_isomorphisms, find_all_isomorphisms, verify_mapping};

fn gen_cfg(p: f64, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        edge_prob: p,
        max_label: 10,
        noise_std: 0.5,
        feature_encoding: FeatureEncoding::Scalar,
        seed,
    }
}

fn edge_counts(size: usize, p: f64, trials: u64) -> Vec<usize> {
    (0..trials)
        .map(|seed| generate_graph(&gen_cfg(p, seed), size).unwrap().edges().len())
        .collect()
}

#[test]
fn mean_edge_count_within_three_standard_errors() {
    let counts = edge_counts(10, 0.2, 10_000);
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - 9.0).abs() < 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn edge_count_distribution_is_binomial() {
    let pairs = 45;
    let counts = edge_counts(10, 0.2, 10_000);
    let total = counts.len() as f64;
    let binom = Binomial::new(0.2, pairs).unwrap();

    // Merge outcomes into bins whose expected count is at least 5.
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for k in 0..=pairs {
        obs += counts.iter().filter(|&&c| c as u64 == k).count() as f64;
        exp += total * binom.pmf(k);
        if exp >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += obs;
        last.1 += exp;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (bins.len() - 1) as f64;
    let critical = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi2 {stat} with {df} dof exceeds {critical}");
}

#[test]
fn noise_variance_matches_config() {
    let node = Graph::from_labels(1, vec![], vec![4], FeatureEncoding::Scalar, 10).unwrap();
    let diffs: Vec<f64> = (0..10_000u64)
        .map(|seed| add_noise(&node, 0.5, seed).unwrap().features()[0][0] - 4.0)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 0.25).abs() < 0.05 * 0.25, "variance {var}");
}

#[test]
fn insertions_are_valid_embeddings() {
    for seed in 0..100u64 {
        let cfg = gen_cfg(0.3, seed);
        let query = generate_graph(&cfg, 1 + (seed % 5) as usize).unwrap();
        let host = generate_graph(&gen_cfg(0.3, seed + 1000), (seed % 7) as usize + 1).unwrap();
        let (data, mapping) = insert_query(&query, &host, 0.3, seed).unwrap();
        assert_eq!(data.num_nodes(), query.num_nodes() + host.num_nodes());
        assert!(verify_mapping(&query, &data, &mapping).unwrap());
        let found = find_all_isomorphisms(&query, &data, None);
        assert!(found.iter().any(|m| m.as_slice() == mapping.as_slice()));
    }
}

#[test]
fn dataset1_shares_query_and_samples_are_valid() {
    let counts = SplitCounts { train: 200, valid: 200, test: 200 };
    let ds = build_dataset(DatasetKind::Dataset1, &gen_cfg(0.2, 5), GraphSizes { data: 6, query: 3 }, counts)
        .unwrap();
    assert_eq!(ds.len(), 600);
    let first = &ds.train[0].query;
    for s in ds.iter() {
        assert_eq!(s.query.edges(), first.edges());
        assert_eq!(s.query.labels(), first.labels());
        assert!(verify_mapping(&s.query, &s.data, &s.mapping).unwrap());
    }
}

#[test]
fn dataset2_draws_fresh_queries() {
    let counts = SplitCounts { train: 50, valid: 0, test: 0 };
    let ds = build_dataset(DatasetKind::Dataset2, &gen_cfg(0.2, 6), GraphSizes { data: 10, query: 3 }, counts)
        .unwrap();
    let distinct: BTreeSet<(Vec<(usize, usize)>, Vec<u32>)> = ds
        .train
        .iter()
        .map(|s| (s.query.edges().to_vec(), s.query.labels().to_vec()))
        .collect();
    assert!(distinct.len() > 40, "only {} distinct queries", distinct.len());
    for s in &ds.train {
        assert!(verify_mapping(&s.query, &s.data, &s.mapping).unwrap());
    }
}

fn graph_strategy(max_nodes: usize, max_label: u32) -> impl Strategy<Value = Graph> {
    (0..=max_nodes).prop_flat_map(move |n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let len = pairs.len();
        (
            proptest::collection::vec(1..=max_label, n),
            proptest::collection::vec(any::<bool>(), len),
        )
            .prop_map(move |(labels, keep)| {
                let edges = pairs.iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| *e).collect();
                Graph::from_labels(labels.len(), edges, labels, FeatureEncoding::Scalar, max_label as usize)
                    .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn backtracking_matches_brute_force(q in graph_strategy(4, 2), g in graph_strategy(8, 2)) {
        let fast = find_all_isomorphisms(&q, &g, None);
        let slow = brute_force_isomorphisms(&q, &g).unwrap();
        prop_assert_eq!(&fast, &slow);
        for m in &fast {
            prop_assert!(verify_mapping(&q, &g, m.as_slice()).unwrap());
        }
        prop_assert_eq!(find_all_isomorphisms(&q, &g, None), fast.clone());
        let limited = find_all_isomorphisms(&q, &g, Some(1));
        prop_assert_eq!(limited.len(), fast.len().min(1));
        if let Some(first) = limited.first() {
            prop_assert!(fast.contains(first));
        }
    }
}

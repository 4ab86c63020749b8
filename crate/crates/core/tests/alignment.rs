mod common;

use common::{loop_attention, to_rows};
use ndarray::{Array1, Array2};
use pase::alignment::{
    build_query, contrastive_from_similarities, contrastive_loss, cross_attention, fuse_pair, total_loss, ContrastiveConfig,
    CrossAttention, PhonemeEmbeddingTable,
};
use pase::nn::init::{seeded_rng, uniform_array};
use pase::PaseError;
use proptest::prelude::*;

#[test]
fn query_examples() {
    let mut rng = seeded_rng(0, 0, 0);
    let a: Array1<f64> = uniform_array(&mut rng, 6, 1.0);
    let zero = PhonemeEmbeddingTable::<f64>::zeros(3, 6);
    assert_eq!(build_query(a.view(), 1, &zero).unwrap(), a);
    let mut table = PhonemeEmbeddingTable::<f64>::uniform(3, 6, 1.0, &mut rng);
    let q = build_query(a.view(), 2, &table).unwrap();
    for i in 0..6 {
        assert_eq!(q[i], a[i] + table.table[[2, i]]);
    }
    table.table.row_mut(0).assign(&(-&a));
    assert!(build_query(a.view(), 0, &table).unwrap().iter().all(|&v| v == 0.0));
    assert!(matches!(build_query(a.view(), 3, &table), Err(PaseError::UnknownPhoneme(_))));
}

#[test]
fn attention_matches_loop_oracle() {
    let mut rng = seeded_rng(1, 0, 0);
    let att = CrossAttention::<f64>::uniform(5, 1, &mut rng);
    let q: Array1<f64> = uniform_array(&mut rng, 5, 1.0);
    let kv: Array2<f64> = uniform_array(&mut rng, (3, 5), 1.0);
    let (got, trace) = att.forward(q.view(), kv.view()).unwrap();
    let (want, w) = loop_attention(
        q.as_slice().unwrap(),
        &to_rows(&kv),
        &to_rows(&att.query.weight),
        att.query.bias.as_slice().unwrap(),
        &to_rows(&att.key.weight),
        att.key.bias.as_slice().unwrap(),
        &to_rows(&att.value.weight),
        att.value.bias.as_slice().unwrap(),
    );
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
    for (a, b) in trace.weights.row(0).iter().zip(&w) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn attention_edge_cases() {
    let mut rng = seeded_rng(2, 0, 0);
    let att = CrossAttention::<f64>::uniform(4, 2, &mut rng);
    let q: Array1<f64> = uniform_array(&mut rng, 4, 1.0);
    let row: Array1<f64> = uniform_array(&mut rng, 4, 1.0);
    let same = Array2::from_shape_fn((5, 4), |(_, j)| row[j]);
    let out = cross_attention(q.view(), same.view(), &att).unwrap();
    let projected = att.value.forward(row.view());
    for (a, b) in out.iter().zip(projected.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(matches!(cross_attention(q.view(), Array2::zeros((0, 4)).view(), &att), Err(PaseError::EmptySequence)));
    let ident = CrossAttention::<f64>::identity(4, 1);
    let one = row.clone().insert_axis(ndarray::Axis(0));
    assert_eq!(cross_attention(q.view(), one.view(), &ident).unwrap(), row);
}

#[test]
fn contrastive_closed_forms() {
    let cfg = ContrastiveConfig::default();
    let a = ndarray::array![1.0f64, 0.0];
    let o = ndarray::array![0.0f64, 1.0];
    assert_eq!(contrastive_loss(a.view(), a.view(), &[], &cfg).unwrap(), 0.0);
    let l: f64 = contrastive_loss(a.view(), o.view(), &[o.view()], &cfg).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-10);
    let l: f64 = contrastive_loss(a.view(), a.view(), &[o.view()], &cfg).unwrap();
    let want = (1.0 + (-1.0f64 / 0.07).exp()).ln();
    assert!((l - want).abs() < 1e-15);
    let z = ndarray::array![0.0f64, 0.0];
    let err = contrastive_loss(a.view(), z.view(), &[], &cfg).unwrap_err();
    assert_eq!(err.to_string(), "zero-norm embedding");
}

#[test]
fn fusion_examples() {
    let mut rng = seeded_rng(3, 0, 0);
    let table = PhonemeEmbeddingTable::<f64>::uniform(4, 6, 0.5, &mut rng);
    let att = CrossAttention::<f64>::uniform(6, 1, &mut rng);
    let a: Array1<f64> = uniform_array(&mut rng, 6, 1.0);
    let v1: Array2<f64> = uniform_array(&mut rng, (3, 6), 1.0);
    let v2: Array2<f64> = uniform_array(&mut rng, (2, 6), 1.0);
    let f1 = fuse_pair(a.view(), 2, v1.view(), &table, &att).unwrap();
    let q = build_query(a.view(), 2, &table).unwrap();
    assert_eq!(f1, cross_attention(q.view(), v1.view(), &att).unwrap());
    let f2 = fuse_pair(a.view(), 2, v2.view(), &table, &att).unwrap();
    assert!((&f1 - &f2).mapv(|v| v * v).sum() > 0.0);
    let cfg = ContrastiveConfig::default();
    let l: f64 = contrastive_loss(a.view(), f1.view(), &[f1.view()], &cfg).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), t in 1usize..9, heads in prop::sample::select(vec![1usize, 2, 4])) {
        let mut rng = seeded_rng(seed, 4, 0);
        let att = CrossAttention::<f64>::uniform(8, heads, &mut rng);
        let q: Array1<f64> = uniform_array(&mut rng, 8, 3.0);
        let kv: Array2<f64> = uniform_array(&mut rng, (t, 8), 3.0);
        let (_, trace) = att.forward(q.view(), kv.view()).unwrap();
        for row in trace.weights.rows() {
            prop_assert!(row.iter().all(|&w| w >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn contrastive_core_is_shift_invariant(
        s_pos in -1.0f64..1.0,
        negs in prop::collection::vec(-1.0f64..1.0, 0..6),
        c in -5.0f64..5.0,
    ) {
        let tau = 0.07;
        let base = contrastive_from_similarities(s_pos, &negs, tau);
        let shifted: Vec<f64> = negs.iter().map(|s| s + c).collect();
        let moved = contrastive_from_similarities(s_pos + c, &shifted, tau);
        prop_assert!((base - moved).abs() < 1e-10);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn contrastive_decreases_in_positive_similarity(
        s_pos in -0.99f64..0.99,
        negs in prop::collection::vec(-1.0f64..1.0, 1..6),
    ) {
        let h = 1e-6;
        let f = |s: f64| contrastive_from_similarities(s, &negs, 0.07);
        prop_assert!((f(s_pos + h) - f(s_pos - h)) / (2.0 * h) < 0.0);
        prop_assert!(f(s_pos + 0.01) < f(s_pos));
    }

    #[test]
    fn total_is_weighted_sum(l_con in 0.0f64..10.0, l_rec in 0.0f64..10.0, alpha in 0.0f64..4.0) {
        let cfg = ContrastiveConfig { alpha, ..ContrastiveConfig::default() };
        prop_assert_eq!(total_loss(l_con, l_rec, &cfg), l_con + alpha * l_rec);
    }
}

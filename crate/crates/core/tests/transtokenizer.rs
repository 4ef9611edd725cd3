mod common;

use std::collections::BTreeMap;

use common::{char_tokenizer, weighted_mean};
use proptest::prelude::*;
use transtok::alignment::AlignmentTable;
use transtok::transtokenizer::{alignment_weights, init_embeddings, EmbeddingMatrix, FallbackMap, Provenance};

const DIM: usize = 6;

fn source_matrix(rows: usize, values: &[f64]) -> EmbeddingMatrix {
    EmbeddingMatrix::new(rows, DIM, values.to_vec(), vec![Provenance::RandomBackoff; rows]).unwrap()
}

fn counts_strategy(src_rows: usize) -> impl Strategy<Value = BTreeMap<usize, f64>> {
    prop::collection::btree_map(0..src_rows, 1u32..50, 1..6).prop_map(|m| m.into_iter().map(|(k, v)| (k, v as f64)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_rows_are_count_weighted_means(
        counts in counts_strategy(9),
        values in prop::collection::vec(-5.0f64..5.0, 9 * DIM),
    ) {
        // target alphabet "abc" -> ids 6..9; row 7 ('b') gets the counts
        let (tgt, src) = (char_tokenizer("abc"), char_tokenizer("uvw"));
        let src_emb = source_matrix(9, &values);
        let b = tgt.token_id("b").unwrap();
        let mut table = AlignmentTable::new(tgt.vocab_size(), src.vocab_size());
        for (&s, &c) in &counts {
            table.add(b, s, c);
        }
        let out = init_embeddings(&table, &src_emb, &FallbackMap::default(), &tgt, &src, 3).unwrap();
        let rows: Vec<Vec<f64>> = (0..9).map(|i| src_emb.row(i).to_vec()).collect();
        let pairs: Vec<(usize, f64)> = counts.iter().map(|(&s, &c)| (s, c)).collect();
        let want = weighted_mean(&pairs, &rows);
        for (a, w) in out.row(b).iter().zip(&want) {
            prop_assert!((a - w).abs() < 1e-12);
        }
        prop_assert_eq!(out.provenance()[b], Provenance::Aligned);

        // convex hull: every coordinate lies between the aligned extremes
        #[allow(clippy::needless_range_loop)]
        for d in 0..DIM {
            let lo = counts.keys().map(|&s| rows[s][d]).fold(f64::INFINITY, f64::min);
            let hi = counts.keys().map(|&s| rows[s][d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.row(b)[d] >= lo - 1e-12 && out.row(b)[d] <= hi + 1e-12);
        }
    }

    #[test]
    fn weights_are_normalised(counts in counts_strategy(20)) {
        let w = alignment_weights(&counts).unwrap();
        let total: f64 = w.iter().map(|p| p.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|p| p.1 > 0.0));
    }
}

#[test]
fn zero_counts_have_no_weights() {
    let counts: BTreeMap<usize, f64> = [(1, 0.0), (2, 0.0)].into_iter().collect();
    assert!(alignment_weights(&counts).is_none());
}

#[test]
fn priority_is_aligned_then_fallback_then_random() {
    let tgt = char_tokenizer("abc");
    let src = char_tokenizer("abz");
    let values: Vec<f64> = (0..src.vocab_size() * DIM).map(|i| i as f64 * 0.1).collect();
    let src_emb = source_matrix(src.vocab_size(), &values);
    let (a, b, c) = (tgt.token_id("a").unwrap(), tgt.token_id("b").unwrap(), tgt.token_id("c").unwrap());
    let mut table = AlignmentTable::new(tgt.vocab_size(), src.vocab_size());
    table.add(a, src.token_id("z").unwrap(), 2.0);
    let fallback = FallbackMap::new(vec![("a".into(), "a".into()), ("b".into(), "b".into())]);
    let out = init_embeddings(&table, &src_emb, &fallback, &tgt, &src, 11).unwrap();

    assert_eq!(out.provenance()[a], Provenance::Aligned);
    assert_eq!(out.row(a), src_emb.row(src.token_id("z").unwrap()));
    assert_eq!(out.provenance()[b], Provenance::Fallback);
    assert_eq!(out.row(b), src_emb.row(src.token_id("b").unwrap()));
    assert_eq!(out.provenance()[c], Provenance::RandomBackoff);

    let again = init_embeddings(&table, &src_emb, &fallback, &tgt, &src, 11).unwrap();
    assert_eq!(out, again);
}

#[test]
fn random_backoff_matches_source_spread() {
    let tgt = char_tokenizer("a");
    let src = char_tokenizer("u");
    let big = 4000;
    let values: Vec<f64> = (0..src.vocab_size() * big).map(|i| if i % 2 == 0 { 3.0 } else { -3.0 }).collect();
    let src_emb = EmbeddingMatrix::new(src.vocab_size(), big, values, vec![Provenance::RandomBackoff; src.vocab_size()]).unwrap();
    let table = AlignmentTable::new(tgt.vocab_size(), src.vocab_size());
    let out = init_embeddings(&table, &src_emb, &FallbackMap::default(), &tgt, &src, 5).unwrap();
    let row = out.row(0);
    let mean = row.iter().sum::<f64>() / big as f64;
    let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / big as f64).sqrt();
    assert!(mean.abs() < 0.2, "{mean}");
    assert!((std - 3.0).abs() < 0.2, "{std}");
}

#[test]
fn binary_round_trip() {
    let values: Vec<f64> = (0..4 * DIM).map(|i| (i as f64).sin()).collect();
    let m = EmbeddingMatrix::new(4, DIM, values, vec![Provenance::Aligned, Provenance::Fallback, Provenance::RandomBackoff, Provenance::Aligned]).unwrap();
    assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
}

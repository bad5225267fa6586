use std::collections::BTreeSet;
use std::path::PathBuf;

use ctxprobe::embedstore::{read_container_from, write_container_to, EmbeddingSet};
use ctxprobe::lexicon::{load_lexicon, parse_lexicon, Lexicon};
use ctxprobe::stats::{bootstrap_ci, filter_outliers, Run, RunSet};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::sample::subsequence;

const ENCODERS: [&str; 4] = ["bert", "elmo", "glove", "gpt"];

fn lexicon() -> Lexicon {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/lexicon.tsv");
    load_lexicon(path).unwrap()
}

/// Shuffles the shipped lexicon's encoder sets so filters have something to drop.
fn scrambled(lex: &Lexicon, masks: &[u8]) -> Lexicon {
    let entries = lex
        .entries
        .iter()
        .zip(masks.iter().cycle())
        .map(|(e, &m)| {
            let mut e = e.clone();
            e.encoders = ENCODERS
                .iter()
                .enumerate()
                .filter(|(i, _)| m & (1 << i) != 0)
                .map(|(_, s)| s.to_string())
                .collect();
            e
        })
        .collect();
    Lexicon::from_entries(entries, lex.source.clone())
}

fn encoder_set() -> impl Strategy<Value = BTreeSet<String>> {
    subsequence(ENCODERS.to_vec(), 0..=4).prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lexicon_tsv_round_trips(masks in prop::collection::vec(0u8..16, 1..64)) {
        let lex = scrambled(&lexicon(), &masks);
        let back = parse_lexicon(&lex.to_tsv(), lex.source.clone()).unwrap();
        prop_assert_eq!(&back.entries, &lex.entries);
        prop_assert_eq!(back.checksum, lex.checksum);
    }

    #[test]
    fn encoder_filter_is_idempotent(masks in prop::collection::vec(0u8..16, 1..64), req in encoder_set()) {
        let lex = scrambled(&lexicon(), &masks);
        let once = lex.retain_encoders(&req);
        let twice = once.retain_encoders(&req);
        prop_assert_eq!(once.entries, twice.entries);
    }

    #[test]
    fn encoder_filter_is_monotone(
        masks in prop::collection::vec(0u8..16, 1..64),
        a in encoder_set(),
        b in encoder_set(),
    ) {
        let lex = scrambled(&lexicon(), &masks);
        let larger: BTreeSet<String> = a.union(&b).cloned().collect();
        let loose = lex.retain_encoders(&a);
        let strict = lex.retain_encoders(&larger);
        prop_assert!(strict.len() <= loose.len());
        for e in &strict.entries {
            prop_assert!(loose.entries.contains(e));
        }
    }

    #[test]
    fn bootstrap_ignores_input_order(
        mut values in prop::collection::vec(0.0f64..1.0, 2..40),
        seed in any::<u64>(),
        rot in any::<usize>(),
    ) {
        let before = bootstrap_ci(&values, 0.95, 500, seed).unwrap();
        let n = values.len();
        values.rotate_left(rot % n);
        values.reverse();
        let after = bootstrap_ci(&values, 0.95, 500, seed).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn bootstrap_shifts_with_data(
        values in prop::collection::vec(0.0f64..1.0, 2..40),
        seed in any::<u64>(),
        shift in -10.0f64..10.0,
    ) {
        let (lo, hi) = bootstrap_ci(&values, 0.95, 500, seed).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (mlo, mhi) = bootstrap_ci(&moved, 0.95, 500, seed).unwrap();
        prop_assert!((mlo - (lo + shift)).abs() < 1e-9);
        prop_assert!((mhi - (hi + shift)).abs() < 1e-9);
        prop_assert!(lo <= hi);
    }

    #[test]
    fn outlier_filter_is_idempotent(
        accs in prop::collection::vec(prop_oneof![0.4f64..0.56, 0.8f64..1.0], 0..60),
        k in 2usize..5,
    ) {
        let mut rs = RunSet::new("t/subject/enc", k, 1000);
        rs.runs = accs.iter().enumerate().map(|(index, &accuracy)| Run { index, accuracy }).collect();
        let once = filter_outliers(&rs);
        let twice = filter_outliers(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.runs.len() + once.omitted.len(), rs.runs.len());
    }

    #[test]
    fn container_round_trips(
        layer in -4i32..0,
        dim in 1usize..12,
        lens in prop::collection::vec(1usize..9, 0..8),
        seed in any::<u32>(),
    ) {
        let mut es = EmbeddingSet::new("enc", layer, dim);
        let mut x = seed as f32;
        for (i, &len) in lens.iter().enumerate() {
            let m = Array2::from_shape_fn((len, dim), |(r, c)| {
                x = (x * 1.618 + (r * dim + c) as f32).fract() - 0.5;
                x
            });
            es.insert(format!("s{i}"), m).unwrap();
        }
        let mut buf = Vec::new();
        write_container_to(&mut buf, &es).unwrap();
        let back = read_container_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, es);
    }
}

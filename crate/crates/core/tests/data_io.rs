mod common;

use mtl_rank::data::{
    generate_synthetic, load_dataset, read_records, save_dataset, standardize, write_records, Format,
    MultiTaskDataset, Record, SyntheticConfig,
};
use mtl_rank::Error;
use proptest::prelude::*;

fn record_strategy(dim: usize) -> impl Strategy<Value = Record> {
    (
        prop::sample::select(vec!["a", "b", "task 3"]),
        prop::sample::select(vec![-1i64, 1]),
        prop::option::of(any::<f64>().prop_filter("finite", |v| v.is_finite())),
        prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), dim),
    )
        .prop_map(|(task, label, score, features)| Record {
            task_id: task.to_string(),
            label,
            score,
            features,
        })
}

fn records_strategy() -> impl Strategy<Value = Vec<Record>> {
    (1usize..5).prop_flat_map(|d| prop::collection::vec(record_strategy(d), 0..12))
}

fn roundtrip(records: &[Record], format: Format) -> Vec<Record> {
    let mut buf = Vec::new();
    write_records(&mut buf, records, format).unwrap();
    read_records(buf.as_slice(), format).unwrap()
}

proptest! {
    #[test]
    fn csv_roundtrip_is_exact(records in records_strategy()) {
        prop_assert_eq!(roundtrip(&records, Format::Csv), records);
    }

    #[test]
    fn jsonl_roundtrip_is_exact(records in records_strategy()) {
        prop_assert_eq!(roundtrip(&records, Format::Jsonl), records);
    }

    #[test]
    fn standardize_is_idempotent(seed in 0u64..500, scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let data = common::synthetic(3, 7, 4, seed);
        let moved = MultiTaskDataset::new(
            data.tasks()
                .iter()
                .map(|t| t.with_instances(t.instances().iter().map(|x| x.iter().map(|v| v * scale + shift).collect()).collect()).unwrap())
                .collect(),
        ).unwrap();
        let (once, _) = standardize(&moved);
        let (twice, _) = standardize(&once);
        for (a, b) in once.tasks().iter().zip(twice.tasks()) {
            for (x, y) in a.instances().iter().zip(b.instances()) {
                for (u, v) in x.iter().zip(y) {
                    prop_assert!((u - v).abs() <= 1e-12, "{} vs {}", u, v);
                }
            }
        }
    }

    #[test]
    fn noiseless_scores_follow_true_margins(seed in 0u64..1000) {
        let cfg = SyntheticConfig { tasks: 3, m: 15, d: 5, score_noise: 0.0, seed, ..SyntheticConfig::default() };
        let (data, truth) = generate_synthetic(&cfg).unwrap();
        for (t, task) in data.tasks().iter().enumerate() {
            let scores = task.scores().unwrap();
            for i in 0..task.len() {
                for j in 0..task.len() {
                    let by_score = scores[i].partial_cmp(&scores[j]);
                    let by_margin = truth.margins[t][i].partial_cmp(&truth.margins[t][j]);
                    prop_assert_eq!(by_score, by_margin);
                }
            }
        }
    }

    #[test]
    fn synthetic_labels_and_weights(seed in 0u64..1000, spread in 0.0f64..2.0) {
        let cfg = SyntheticConfig { tasks: 2, m: 20, d: 4, task_spread: spread, seed, ..SyntheticConfig::default() };
        let (data, truth) = generate_synthetic(&cfg).unwrap();
        prop_assert!((truth.w0.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        for (t, task) in data.tasks().iter().enumerate() {
            let norm = truth.v[t].iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - spread).abs() < 1e-12);
            for (i, &y) in task.labels().iter().enumerate() {
                // Labels may only disagree with the truth inside the noise band.
                if y != truth.true_labels[t][i] {
                    prop_assert!(truth.margins[t][i].abs() < cfg.noise_band);
                }
            }
        }
    }
}

#[test]
fn clean_generators_keep_true_labels() {
    for cfg in [
        SyntheticConfig { flip_prob: 0.0, ..SyntheticConfig::default() },
        SyntheticConfig { noise_band: 0.0, flip_prob: 1.0, ..SyntheticConfig::default() },
    ] {
        let (data, truth) = generate_synthetic(&cfg).unwrap();
        for (t, task) in data.tasks().iter().enumerate() {
            assert_eq!(task.labels(), truth.true_labels[t].as_slice());
        }
    }
}

#[test]
fn same_seed_same_bits() {
    let cfg = SyntheticConfig { seed: 42, ..SyntheticConfig::default() };
    let (a, ta) = generate_synthetic(&cfg).unwrap();
    let (b, tb) = generate_synthetic(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c, _) = generate_synthetic(&SyntheticConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn files_roundtrip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::synthetic(3, 9, 4, 5);
    for (name, format) in [("d.csv", Format::Csv), ("d.jsonl", Format::Jsonl)] {
        let path = dir.path().join(name);
        save_dataset(&data, &path, format).unwrap();
        assert_eq!(Format::from_path(&path), format);
        assert_eq!(load_dataset(&path, format).unwrap(), data);
    }
}

#[test]
fn malformed_input_reports_the_line() {
    let cases = [
        ("task_id,label,score,f0,f1\nt,1,,1,2\nt,1,,1\n", 3),
        ("task_id,label,score,f0\nt,1,,1\nt,2,,1\n", 3),
        ("task_id,label,score,f0\nt,1,,1\nt,1,,NaN\n", 3),
        ("task_id,label,score,f0\nt,1,,1\nt,-1,x,1\n", 3),
    ];
    for (text, line) in cases {
        let err = read_records(text.as_bytes(), Format::Csv).unwrap_err();
        let reported = match err {
            Error::Parse { line, .. } | Error::DimensionMismatch { line, .. } | Error::InvalidLabel { line, .. } | Error::NonFinite { line } => line,
            other => panic!("unexpected error {other:?}"),
        };
        assert_eq!(reported, line, "{text:?}");
    }
    let bad_header = read_records("id,label,score,f0\n".as_bytes(), Format::Csv);
    assert!(matches!(bad_header, Err(Error::Parse { line: 1, .. })));
}

#[test]
fn labels_outside_plus_minus_one_are_rejected() {
    for label in ["0", "2", "-3"] {
        let text = format!("task_id,label,score,f0\nt,1,,1\nt,{label},,2\n");
        let err = read_records(text.as_bytes(), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel { line: 3, .. }), "{label}: {err:?}");
    }
}

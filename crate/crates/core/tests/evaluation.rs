mod common;

use aprad::eval::{run_testbench, TestbenchConfig};
use aprad::token::enumerate_sequences;
use aprad::{ideal_distribution, CountingModel, ExclusionTrie, Method, Sequence};
use common::random_table_model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Recording every error sequence in a trie yields the same distribution
    /// as conditioning by enumeration.
    #[test]
    fn ideal_matches_a_trie_holding_every_error(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab_size = rng.gen_range(2..=4);
        let length = rng.gen_range(1..=4);
        let model = random_table_model(&mut rng, vocab_size, length, 0.1);
        let errors: Vec<Sequence> =
            enumerate_sequences(vocab_size, length).filter(|_| rng.gen_bool(0.3)).collect();
        let oracle = |s: &[usize]| errors.iter().any(|e| e.as_slice() == s);
        let Ok(ideal) = ideal_distribution(&model, &oracle, length) else {
            // everything excluded or zero: nothing to compare
            return Ok(());
        };
        let mut trie = ExclusionTrie::new(CountingModel::new(&model));
        for e in &errors {
            trie.add_bad_sample(e, 0).unwrap();
        }
        for w in enumerate_sequences(vocab_size, length) {
            let got = trie.excluded_sequence_probability(&w, 0).unwrap();
            prop_assert!((got - ideal.prob(&w)).abs() < 1e-9, "{w}");
        }
    }
}

fn small_config() -> TestbenchConfig {
    TestbenchConfig {
        specs: vec!["AAA, AAC".into(), "A** except AAC".into()],
        samples: 500,
        ..TestbenchConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_reports() {
    let a = run_testbench(&small_config()).unwrap();
    let b = run_testbench(&small_config()).unwrap();
    assert_eq!(a, b);
    let mut other = small_config();
    other.seeds = vec![4, 5, 6];
    let c = run_testbench(&other).unwrap();
    assert_ne!(a.rows, c.rows);
    assert_ne!(a.provenance, c.provenance);
}

#[test]
fn every_reported_sample_avoids_the_error_set() {
    let report = run_testbench(&small_config()).unwrap();
    assert_eq!(report.rows.len(), 6);
    for row in &report.rows {
        assert!(
            row.cells.iter().all(|c| c.error_outputs == 0 && c.incomplete == 0),
            "{row:?}"
        );
    }
}

#[test]
fn rows_follow_config_order() {
    let report = run_testbench(&small_config()).unwrap();
    let order: Vec<(&str, Method)> = report.rows.iter().map(|r| (r.error_set.as_str(), r.method)).collect();
    assert_eq!(
        order,
        vec![
            ("AAA, AAC", Method::Asap),
            ("AAA, AAC", Method::Constrained),
            ("AAA, AAC", Method::Aprad),
            ("A** except AAC", Method::Asap),
            ("A** except AAC", Method::Constrained),
            ("A** except AAC", Method::Aprad),
        ]
    );
    for row in &report.rows {
        assert_eq!(row.cells.iter().map(|c| c.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}

#[test]
fn rejection_row_has_exact_samples() {
    let config = TestbenchConfig {
        specs: vec!["AAA, AAB, ABA, BAA".into()],
        methods: vec![Method::Rejection],
        samples: 3000,
        ..TestbenchConfig::default()
    };
    let report = run_testbench(&config).unwrap();
    let row = &report.rows[0];
    // 23 outcomes at 3000 samples: noise floor about 22 / 6000
    assert!(row.kl_mean.unwrap() < 0.012, "{row:?}");
    assert!(row.ratio_mean > 1.0);
}

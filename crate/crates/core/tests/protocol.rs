use std::collections::{BTreeMap, BTreeSet};

use nextaction::baselines::{Baseline, BaselineKind, SyllabusMap};
use nextaction::eval::{self, FoldPlan};
use nextaction::ingest::{ingest, filter_cohort, Corpus, MalformedPolicy, StudentSequence};
use nextaction::lstm::{self, TrainConfig};
use nextaction::ngram;
use nextaction::synth::{self, SynthConfig};

fn seq(id: &str, actions: &[u32]) -> StudentSequence {
    StudentSequence {
        student_id: id.into(),
        actions: actions.to_vec(),
        certified: true,
    }
}

fn small_corpus() -> Corpus {
    let cfg = SynthConfig {
        students_certified: 40,
        students_uncertified: 5,
        mean_sequence_length: 60,
        ..Default::default()
    };
    let files = synth::generate(&cfg).unwrap();
    let out = ingest(&files.log, &files.roster, 5, MalformedPolicy::Abort).unwrap();
    filter_cohort(&out.corpus, true, 2).unwrap()
}

#[test]
fn five_fold_plans_partition_students() {
    let ids: Vec<String> = (0..203).map(|i| format!("s{i:03}")).collect();
    for seed in [0, 1, 99] {
        let plan = eval::make_folds(&ids, 5, seed).unwrap();
        assert_eq!(plan.assignment.len(), ids.len());
        let sizes = plan.fold_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 203);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let corpus = Corpus {
            vocab_size: 1,
            sequences: ids.iter().map(|i| seq(i, &[0, 0])).collect(),
        };
        let mut seen = BTreeSet::new();
        for fold in 0..5 {
            let (train, test) = plan.split(&corpus, fold).unwrap();
            assert_eq!(train.len() + test.len(), 203);
            let test_ids: BTreeSet<&str> = test.iter().map(|s| s.student_id.as_str()).collect();
            assert!(train.iter().all(|s| !test_ids.contains(s.student_id.as_str())));
            for id in test_ids {
                assert!(seen.insert(id.to_string()), "{id} tested twice");
            }
        }
        assert_eq!(seen.len(), 203);
    }
    // input order does not matter
    let mut shuffled = ids.clone();
    shuffled.reverse();
    assert_eq!(eval::make_folds(&shuffled, 5, 4).unwrap(), eval::make_folds(&ids, 5, 4).unwrap());
}

#[test]
fn hill_climb_holdout_is_ceiling_of_ten_percent() {
    for n in 2..=120usize {
        let owned: Vec<StudentSequence> = (0..n).map(|i| seq(&format!("s{i}"), &[0, 1])).collect();
        let refs: Vec<&StudentSequence> = owned.iter().collect();
        let (kept, held) = eval::hill_climb_split(&refs, 0.1, 3).unwrap();
        assert_eq!(held.len(), (n + 9) / 10, "n = {n}");
        assert_eq!(kept.len() + held.len(), n);
    }
}

#[test]
fn macro_and_micro_averages_differ() {
    // fold 0: one sequence, 10/10 correct under repeat
    // fold 1: 0/1 and 2/2 correct
    let corpus = Corpus {
        vocab_size: 4,
        sequences: vec![seq("a", &[1; 11]), seq("b", &[1, 2]), seq("c", &[3, 3, 3])],
    };
    let plan = FoldPlan {
        k: 2,
        seed: 0,
        assignment: BTreeMap::from([("a".into(), 0), ("b".into(), 1), ("c".into(), 1)]),
    };
    let run = eval::cross_validate(
        "repeat",
        |_, _| {
            Ok(Baseline {
                kind: BaselineKind::Repeat,
                syllabus: SyllabusMap::from_items(vec![], 0),
            })
        },
        &corpus,
        &plan,
    )
    .unwrap();
    let r = &run.report;
    assert_eq!(r.per_fold_accuracy, vec![1.0, 0.5]);
    assert_eq!(r.cv_accuracy, 0.75);
    assert_eq!((r.pooled_correct, r.pooled_total), (12, 13));
    assert!((r.micro_accuracy() - 12.0 / 13.0).abs() < 1e-15);
    let flat: f64 = r.per_sequence.iter().map(|s| s.proportion).sum::<f64>() / 3.0;
    assert!((flat - 2.0 / 3.0).abs() < 1e-15);
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn ngram_reports_do_not_depend_on_workers() {
    let corpus = small_corpus();
    let plan = eval::make_folds(&corpus.student_ids(), 5, 7).unwrap();
    let run = |n| pool(n).install(|| ngram::cross_validate(&corpus, 4, &plan).unwrap());
    let (a, b) = (run(1), run(4));
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.predictions.to_text(), b.predictions.to_text());
}

#[test]
fn lstm_reports_do_not_depend_on_workers() {
    let corpus = small_corpus();
    let plan = eval::make_folds(&corpus.student_ids(), 5, 7).unwrap();
    let cfg = TrainConfig {
        layers: 2,
        hidden_size: 8,
        emb_dim: 8,
        epochs: 2,
        batch_size: 8,
        seed: 11,
        ..Default::default()
    };
    let run = |n| pool(n).install(|| lstm::cross_validate(&corpus, &cfg, &plan).unwrap());
    let (a, b) = (run(1), run(3));
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.predictions.to_text(), b.predictions.to_text());
    for (x, y) in a.models.iter().zip(&b.models) {
        assert_eq!(x.network, y.network);
    }
}

use std::collections::BTreeMap;

use nextaction::ingest::StudentSequence;
use nextaction::ngram::{self, NGramTable};
use proptest::prelude::*;

/// Naive re-enumeration: every (context, next) pair whose next action is at
/// index 1 or later, for every order.
fn naive_counts(seqs: &[Vec<u32>], n: usize) -> BTreeMap<(Vec<u32>, u32), u64> {
    let mut out = BTreeMap::new();
    for s in seqs {
        for j in 1..s.len() {
            for k in 1..=n {
                if j + 1 >= k {
                    *out.entry((s[j + 1 - k..j].to_vec(), s[j])).or_insert(0) += 1;
                }
            }
        }
    }
    out
}

fn naive_predict(seqs: &[Vec<u32>], n: usize, context: &[u32]) -> (u32, usize) {
    let top = n.min(context.len() + 1);
    for k in (1..=top).rev() {
        let ctx = &context[context.len() + 1 - k..];
        let mut next: BTreeMap<u32, u64> = BTreeMap::new();
        for s in seqs {
            for j in (k - 1).max(1)..s.len() {
                if &s[j + 1 - k..j] == ctx {
                    *next.entry(s[j]).or_insert(0) += 1;
                }
            }
        }
        if let Some(&max) = next.values().max() {
            let best = next.iter().find(|(_, &c)| c == max).map(|(&id, _)| id).unwrap();
            return (best, k);
        }
    }
    panic!("no observations at all");
}

fn table(seqs: &[Vec<u32>], n: usize, v: usize) -> NGramTable {
    let owned: Vec<StudentSequence> = seqs
        .iter()
        .enumerate()
        .map(|(i, a)| StudentSequence {
            student_id: format!("s{i}"),
            actions: a.clone(),
            certified: true,
        })
        .collect();
    let refs: Vec<&StudentSequence> = owned.iter().collect();
    ngram::fit_sequences(&refs, n, v).unwrap()
}

fn corpus_strategy() -> impl Strategy<Value = (usize, usize, Vec<Vec<u32>>)> {
    (2usize..9, 1usize..6).prop_flat_map(|(v, n)| {
        let seq = prop::collection::vec(0..v as u32, 2..120);
        (Just(v), Just(n), prop::collection::vec(seq, 1..40))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn counts_and_predictions_match_enumeration((v, n, seqs) in corpus_strategy()) {
        let t = table(&seqs, n, v);
        let naive = naive_counts(&seqs, n);
        let stored: BTreeMap<(Vec<u32>, u32), u64> = t
            .entries()
            .into_iter()
            .map(|(ctx, next, c)| ((ctx, next), c))
            .collect();
        prop_assert_eq!(&stored, &naive);
        for s in seqs.iter().take(5) {
            for cut in 1..s.len() {
                let p = t.predict_next(&s[..cut]).unwrap();
                prop_assert_eq!((p.predicted, p.order_used), naive_predict(&seqs, n, &s[..cut]));
            }
        }
        // unseen contexts back off too
        let probe: Vec<u32> = (0..n as u32).map(|i| (v as u32 - 1).saturating_sub(i)).collect();
        let p = t.predict_next(&probe).unwrap();
        prop_assert_eq!((p.predicted, p.order_used), naive_predict(&seqs, n, &probe));
    }

    #[test]
    fn text_format_round_trips((v, n, seqs) in corpus_strategy()) {
        let t = table(&seqs, n, v);
        let back = NGramTable::from_text(&t.to_text(), std::path::Path::new("t")).unwrap();
        prop_assert_eq!(back, t);
    }
}

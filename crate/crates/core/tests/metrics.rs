use std::collections::BTreeMap;

use idtrace_core::gateway::GatewayError;
use idtrace_core::metrics::{
    aggregate_reports, build_matching_problem, evaluate_clip, pair_precision_recall,
    sequence_similarity, solve_assignment, solve_assignment_bruteforce, split_sub_sentences,
    text_coverage, CoverageInput, Embedder, MatchingProblem,
};
use idtrace_core::IdSequence;
use proptest::prelude::*;

fn seq(label: &str, frames: &[u32]) -> IdSequence {
    IdSequence::new(label, frames.to_vec()).unwrap()
}

/// Unordered same-identity frame pairs, counted by enumerating every pair.
fn pair_oracle(ids: &[IdSequence]) -> BTreeMap<(u32, u32), u64> {
    let mut out = BTreeMap::new();
    for s in ids {
        let f = s.frames();
        for i in 0..f.len() {
            for j in 0..f.len() {
                if i < j {
                    *out.entry((f[i], f[j])).or_insert(0) += 1;
                }
            }
        }
    }
    out
}

fn oracle_precision_recall(pred: &[IdSequence], gt: &[IdSequence]) -> (f64, f64) {
    let p = pair_oracle(pred);
    let g = pair_oracle(gt);
    let tp: u64 = p.iter().map(|(k, n)| (*n).min(*g.get(k).unwrap_or(&0))).sum();
    let np: u64 = p.values().sum();
    let ng: u64 = g.values().sum();
    let ratio = |a: u64, b: u64, other: u64| {
        if b == 0 {
            if other == 0 { 1.0 } else { 0.0 }
        } else {
            a as f64 / b as f64
        }
    };
    (ratio(tp, np, ng), ratio(tp, ng, np))
}

#[test]
fn worked_example() {
    let gt = [seq("bean", &[2, 4, 5, 7, 8, 9, 10])];
    let pred = [seq("c2", &[2, 4, 5, 6, 7, 8])];
    assert_eq!(build_matching_problem(&pred, &gt).weights, vec![vec![5]]);
    assert!((sequence_similarity(&pred, &gt).unwrap() - 5.0 / 7.0).abs() < 1e-9);
    let (p, r) = pair_precision_recall(&pred, &gt);
    assert_eq!((p, r), (10.0 / 15.0, 10.0 / 21.0));
    assert_eq!((p, r), oracle_precision_recall(&pred, &gt));
}

#[test]
fn hand_assignments() {
    let a = solve_assignment(&MatchingProblem::from_weights(vec![vec![3, 1], vec![2, 4]]));
    assert_eq!((a.pairs.clone(), a.total), (vec![(0, 0), (1, 1)], 7));
    let b = solve_assignment(&MatchingProblem::from_weights(vec![vec![0, 2, 1]]));
    assert_eq!((b.pairs, b.total), (vec![(0, 1)], 2));
    let z = solve_assignment(&MatchingProblem::from_weights(vec![vec![0, 0], vec![0, 0]]));
    assert!(z.pairs.is_empty());
}

#[test]
fn empty_ground_truth_is_an_error() {
    assert!(sequence_similarity(&[seq("a", &[1])], &[]).is_err());
}

#[test]
fn micro_pooling() {
    // (TP, predicted pairs, gt pairs) = (1, 2, 2) and (3, 3, 4).
    let a = evaluate_clip("a", &[seq("x", &[1, 2]), seq("y", &[3, 4])], &[seq("g", &[1, 2]), seq("h", &[5, 6])]).unwrap();
    let b = evaluate_clip(
        "b",
        &[seq("x", &[1, 2, 3])],
        &[seq("g", &[1, 2, 3]), seq("h", &[4, 5])],
    )
    .unwrap();
    assert_eq!((a.counts.true_positives, a.counts.predicted_pairs, a.counts.ground_truth_pairs), (1, 2, 2));
    assert_eq!((b.counts.true_positives, b.counts.predicted_pairs, b.counts.ground_truth_pairs), (3, 3, 4));
    let agg = aggregate_reports(&[a, b]).unwrap();
    assert_eq!(agg.pooled.precision, 4.0 / 5.0);
    assert_eq!(agg.pooled.recall, 4.0 / 6.0);
}

/// Embeds each text as the one-hot vector of its first word.
struct FirstWord;

impl Embedder for FirstWord {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| {
                let w = t.split_whitespace().next().unwrap_or("");
                let mut v = vec![0f32; 8];
                v[w.bytes().map(usize::from).sum::<usize>() % 8] = 1.0;
                v
            })
            .collect())
    }
}

#[test]
fn sub_sentence_split() {
    assert_eq!(split_sub_sentences("He stops; she waves, smiling."), ["He stops", "she waves, smiling"]);
    assert!(split_sub_sentences("").is_empty());
}

fn sequences() -> impl Strategy<Value = Vec<IdSequence>> {
    prop::collection::vec(prop::collection::btree_set(1u32..=12, 1..6), 1..5).prop_map(|sets| {
        sets.into_iter()
            .enumerate()
            .map(|(i, s)| IdSequence::new(format!("id{i}"), s.into_iter().collect()).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn assignment_matches_bruteforce(rows in 1usize..=6, cols in 1usize..=6, seed in prop::collection::vec(0u64..20, 36)) {
        let w: Vec<Vec<u64>> = (0..rows).map(|i| (0..cols).map(|j| seed[i * 6 + j]).collect()).collect();
        let p = MatchingProblem::from_weights(w);
        prop_assert_eq!(solve_assignment(&p).total, solve_assignment_bruteforce(&p).unwrap().total);
    }

    #[test]
    fn pair_counts_match_enumeration(pred in sequences(), gt in sequences()) {
        prop_assert_eq!(pair_precision_recall(&pred, &gt), oracle_precision_recall(&pred, &gt));
    }

    #[test]
    fn label_permutation_invariance(pred in sequences(), gt in sequences(), rot in 0usize..5) {
        let mut shuffled: Vec<IdSequence> = pred.iter().enumerate().map(|(i, s)| s.relabeled(format!("z{i}"))).collect();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        prop_assert_eq!(pair_precision_recall(&pred, &gt), pair_precision_recall(&shuffled, &gt));
        prop_assert_eq!(sequence_similarity(&pred, &gt).unwrap(), sequence_similarity(&shuffled, &gt).unwrap());
    }

    #[test]
    fn precision_recall_symmetry(pred in sequences(), gt in sequences()) {
        let (p, r) = pair_precision_recall(&pred, &gt);
        let (p2, r2) = pair_precision_recall(&gt, &pred);
        prop_assert_eq!((p, r), (r2, p2));
    }

    #[test]
    fn self_similarity_is_one(x in sequences()) {
        prop_assert_eq!(sequence_similarity(&x, &x).unwrap(), 1.0);
        let s = sequence_similarity(&x, &x).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn coverage_monotone_in_sub_sentences(
        ground in prop::collection::vec("[a-h]{1,3}", 1..5),
        pred in prop::collection::vec("[a-h]{1,3}", 0..5),
        extra in "[a-h]{1,3}",
        rho in 0.05f64..=1.0,
    ) {
        let base = CoverageInput { ground_segments: ground.clone(), predicted_sub_sentences: pred.clone(), rho };
        let mut more = pred.clone();
        more.push(extra);
        let bigger = CoverageInput { predicted_sub_sentences: more, ..base.clone() };
        prop_assert!(text_coverage(&bigger, &FirstWord).unwrap() >= text_coverage(&base, &FirstWord).unwrap());
    }

    #[test]
    fn coverage_anti_monotone_in_rho(
        ground in prop::collection::vec("[a-h]{1,3}", 1..5),
        pred in prop::collection::vec("[a-h]{1,3}", 1..5),
        lo in 0.05f64..=1.0,
        hi in 0.05f64..=1.0,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let at = |rho| text_coverage(&CoverageInput { ground_segments: ground.clone(), predicted_sub_sentences: pred.clone(), rho }, &FirstWord).unwrap();
        prop_assert!(at(lo) >= at(hi));
    }
}

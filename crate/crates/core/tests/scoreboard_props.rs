mod support;

use std::collections::BTreeMap;

use nerqa_core::corpus::Mention;
use nerqa_core::scoreboard::{classify_errors, score, ErrorCategory, MentionsById};
use proptest::prelude::*;
use support::{multiset_minus, random_taxonomy_case, rules_holding, Gen, RULE_CATEGORIES};

fn one(id: &str, ms: Vec<Mention>) -> MentionsById {
    BTreeMap::from([(id.to_string(), ms)])
}

fn m(s: &str, l: &str) -> Mention {
    Mention::new(s, l)
}

/// Harmonic mean computed as 2·TP / (|pred| + |gold|).
fn f1_oracle(tp: usize, n_pred: usize, n_gold: usize) -> f64 {
    if n_pred + n_gold == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (n_pred + n_gold) as f64
    }
}

#[test]
fn third_precision_quarter_recall() {
    let gold = one(
        "s",
        vec![m("a", "X"), m("b", "X"), m("c", "X"), m("d", "X")],
    );
    let pred = one("s", vec![m("a", "X"), m("e", "X"), m("b", "Y")]);
    let got = score(&pred, &gold).unwrap();
    assert!((got.precision - 1.0 / 3.0).abs() < 1e-12);
    assert!((got.recall - 0.25).abs() < 1e-12);
    assert!((got.f1 - 2.0 / 7.0).abs() < 1e-9);
    assert!((got.f1 - f1_oracle(1, 3, 4)).abs() < 1e-9);
}

#[test]
fn identity_and_empty() {
    let gold = one("s", vec![m("京", "GPE"), m("中国", "GPE")]);
    assert_eq!(score(&gold, &gold).unwrap().f1, 1.0);
    let empty = one("s", vec![]);
    let e = score(&empty, &gold).unwrap();
    assert_eq!((e.precision, e.recall, e.f1), (0.0, 0.0, 0.0));
}

#[test]
fn example_sentence_taxonomy() {
    let labels: Vec<String> = ["地缘政治实体", "机构名称", "地名", "人名"]
        .map(String::from)
        .to_vec();
    let r = classify_errors(
        "s",
        "中国保险监管项目在京启动",
        &[
            m("中国保险", "地缘政治实体"),
            m("监管", "机构名称"),
            m("北京", "地缘政治实体"),
        ],
        &[m("中国", "地缘政治实体"), m("京", "地缘政治实体")],
        &labels,
    );
    let c = r.counts;
    assert_eq!(
        (c.contain_gold, c.completely_o, c.ood_mention, c.omitted),
        (1, 1, 1, 1)
    );
    assert_eq!(
        c.ood_type + c.wrong_type + c.contained_by_gold + c.overlap_gold,
        0
    );
    assert_eq!(c.total, 4);
}

fn check_partition(seed: u64) -> Result<(), String> {
    let case = random_taxonomy_case(&mut Gen::new(seed));
    let report = classify_errors("s", &case.text, &case.pred, &case.gold, &case.labels);
    let wrong = multiset_minus(&case.pred, &case.gold);
    let pred_items: Vec<_> = report
        .items
        .iter()
        .filter(|i| i.category != ErrorCategory::Omitted)
        .collect();
    if pred_items.len() != wrong.len() {
        return Err(format!(
            "seed {seed}: {} items for {} wrong predictions",
            pred_items.len(),
            wrong.len()
        ));
    }
    for (item, p) in pred_items.iter().zip(&wrong) {
        if item.mention != *p {
            return Err(format!(
                "seed {seed}: item order {:?} vs {:?}",
                item.mention, p
            ));
        }
        let holds = rules_holding(p, &case.text, &case.gold, &case.labels);
        let first = holds.iter().position(|&b| b).unwrap();
        if item.category != RULE_CATEGORIES[first] {
            return Err(format!(
                "seed {seed}: {p:?} got {:?}, rules {holds:?}",
                item.category
            ));
        }
    }
    let c = report.counts;
    let sum: usize = ErrorCategory::ALL.iter().map(|&k| c.get(k)).sum();
    if c.total != sum || c.total != report.items.len() {
        return Err(format!("seed {seed}: total {} sum {sum}", c.total));
    }
    let missed = multiset_minus(&case.gold, &case.pred);
    if c.omitted > missed.len() {
        return Err(format!(
            "seed {seed}: omitted {} > missed {}",
            c.omitted,
            missed.len()
        ));
    }
    Ok(())
}

#[test]
fn partition_on_1000_seeded_cases() {
    for seed in 0..1000 {
        check_partition(seed).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition(seed in any::<u64>()) {
        prop_assert!(check_partition(seed).is_ok(), "{:?}", check_partition(seed));
    }

    #[test]
    fn swapping_roles_swaps_precision_and_recall(a in any::<u64>(), b in any::<u64>()) {
        let pa = random_taxonomy_case(&mut Gen::new(a)).pred;
        let pb = random_taxonomy_case(&mut Gen::new(b)).pred;
        let x = one("s", pa);
        let y = one("s", pb);
        let fwd = score(&x, &y).unwrap();
        let back = score(&y, &x).unwrap();
        prop_assert_eq!(fwd.precision, back.recall);
        prop_assert_eq!(fwd.recall, back.precision);
        prop_assert_eq!(fwd.f1, back.f1);
    }

    #[test]
    fn f1_between_precision_and_recall(seed in any::<u64>()) {
        let case = random_taxonomy_case(&mut Gen::new(seed));
        let n_pred = case.pred.len();
        let n_gold = case.gold.len();
        let tp = n_pred - multiset_minus(&case.pred, &case.gold).len();
        let s = score(&one("s", case.pred), &one("s", case.gold)).unwrap();
        prop_assert_eq!(s.tp, tp);
        prop_assert!((s.f1 - f1_oracle(tp, n_pred, n_gold)).abs() < 1e-12);
        if s.precision + s.recall > 0.0 {
            prop_assert!(s.precision.min(s.recall) <= s.f1 + 1e-12);
            prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);
        }
    }
}

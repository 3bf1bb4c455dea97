mod common;

use common::{gold_example, prf_array, score_cases, score_fixture};
use gath_core::corpus::{generate_synthetic, normalize_text, QuestionType, SynthConfig};
use gath_core::score::{
    answer_scores, categorize, categorize_raw, category_table, joint_scores, metrics_table, score,
    support_scores, Category, Predictions,
};
use proptest::prelude::*;

fn close(a: [f64; 4], b: [f64; 4]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
}

#[test]
fn fixture_cases_score_as_worked_by_hand() {
    let (gold, preds) = score_fixture();
    for (k, c) in score_cases().iter().enumerate() {
        let r = score(&preds, &gold[k..k + 1]).unwrap();
        assert!(close(prf_array(&r.answer), c.ans), "{}: answer {:?}", c.name, r.answer);
        assert!(close(prf_array(&r.support), c.sup), "{}: support {:?}", c.name, r.support);
        assert!(close(prf_array(&r.joint), c.joint), "{}: joint {:?}", c.name, r.joint);
    }
}

#[test]
fn fixture_averages_are_means_of_the_cases() {
    let (gold, preds) = score_fixture();
    let r = score(&preds, &gold).unwrap();
    let cases = score_cases();
    let mean = |f: fn(&common::ScoreCase) -> [f64; 4]| -> [f64; 4] {
        let mut m = [0.0; 4];
        for c in &cases {
            for (a, b) in m.iter_mut().zip(f(c)) {
                *a += b / cases.len() as f64;
            }
        }
        m
    };
    assert!(close(prf_array(&r.answer), mean(|c| c.ans)));
    assert!(close(prf_array(&r.support), mean(|c| c.sup)));
    assert!(close(prf_array(&r.joint), mean(|c| c.joint)));
    assert_eq!((r.n, r.missing), (10, 0));
}

#[test]
fn longer_answer_is_two_thirds() {
    let p = answer_scores("united states of america", "united states");
    assert_eq!((p.precision, p.recall), (0.5, 1.0));
    assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn normalization_follows_the_official_rules() {
    assert_eq!(normalize_text("The  Quick, brown fox!"), "quick brown fox");
    assert_eq!(normalize_text("An apple a day"), "apple day");
    assert_eq!(normalize_text("theatre"), "theatre");
    assert_eq!(normalize_text("U.S.A."), "usa");
    assert_eq!(normalize_text(""), "");
}

#[test]
fn missing_predictions_score_zero() {
    let gold = vec![
        gold_example("a", "x", &[("A", 0)], QuestionType::Bridge),
        gold_example("b", "y", &[("B", 0)], QuestionType::Bridge),
    ];
    let mut preds = Predictions::default();
    preds.answer.insert("a".into(), "x".into());
    preds.sp.insert("a".into(), vec![("A".into(), 0)]);
    let r = score(&preds, &gold).unwrap();
    assert_eq!(r.missing, 1);
    assert_eq!(r.answer.em, 0.5);
    assert_eq!(r.joint.f1, 0.5);
    assert!(score(&preds, &[]).is_err());
}

#[test]
fn categories_follow_question_type_and_answer() {
    let yn = gold_example("1", "yes", &[], QuestionType::Comparison);
    let span = gold_example("2", "Obama", &[], QuestionType::Comparison);
    let bridge = gold_example("3", "no", &[], QuestionType::Bridge);
    assert_eq!(categorize(&yn), Category::CompYn);
    assert_eq!(categorize(&span), Category::CompSpan);
    assert_eq!(categorize(&bridge), Category::Bridge);
    assert_eq!(categorize_raw("comparison", "No").unwrap(), Category::CompYn);
    assert_eq!(categorize_raw("comparison", "Trump").unwrap(), Category::CompSpan);
    assert_eq!(categorize_raw("bridge", "yes").unwrap(), Category::Bridge);
    assert!(categorize_raw("intersection", "x").is_err());
}

#[test]
fn category_shares_sum_to_one_hundred() {
    let gold = generate_synthetic(&SynthConfig {
        num_examples: 200,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut preds = Predictions::default();
    for ex in &gold {
        preds.answer.insert(ex.id.clone(), ex.answer.clone());
        let sp = ex.supporting_facts.iter().map(|f| (f.0.clone(), f.1)).collect();
        preds.sp.insert(ex.id.clone(), sp);
    }
    let r = score(&preds, &gold).unwrap();
    let total: f64 = r.categories.iter().map(|c| c.pct).sum();
    assert!((total - 100.0).abs() < 1e-9);
    assert_eq!(r.categories.iter().map(|c| c.count).sum::<usize>(), 200);
    assert_eq!((r.answer.em, r.support.em, r.joint.em, r.joint.f1), (1.0, 1.0, 1.0, 1.0));
    for c in &r.categories {
        if c.count > 0 {
            assert_eq!((c.ans_em, c.sup_em, c.joint_em), (1.0, 1.0, 1.0));
        }
    }
    let table = metrics_table(&[("perfect".into(), &r)]);
    assert!(table.contains("perfect") && table.contains("100.0"));
    assert!(category_table(&r).contains("comp-yn"));
}

fn arb_pairs() -> impl Strategy<Value = Vec<(String, usize)>> {
    prop::collection::vec((prop::sample::select(vec!["A", "B", "C", "D"]), 0usize..3), 0..6)
        .prop_map(|v| v.into_iter().map(|(t, i)| (t.to_string(), i)).collect())
}

fn arb_answer() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "red", "blue", "house", "yes", "no", "a", "Red!"]), 0..5)
        .prop_map(|w| w.join(" "))
}

fn arb_suite() -> impl Strategy<Value = (Vec<gath_core::corpus::QAExample>, Predictions)> {
    prop::collection::vec((arb_answer(), arb_pairs(), arb_answer(), arb_pairs()), 1..8).prop_map(|rows| {
        let mut gold = Vec::new();
        let mut preds = Predictions::default();
        for (k, (ga, gs, pa, ps)) in rows.into_iter().enumerate() {
            let id = format!("e{k}");
            let gs: Vec<(&str, usize)> = gs.iter().map(|(t, i)| (t.as_str(), *i)).collect();
            gold.push(gold_example(&id, &ga, &gs, QuestionType::Comparison));
            preds.answer.insert(id.clone(), pa);
            preds.sp.insert(id, ps);
        }
        (gold, preds)
    })
}

proptest! {
    #[test]
    fn score_ignores_example_order((gold, preds) in arb_suite(), seed in any::<u64>()) {
        let a = score(&preds, &gold).unwrap();
        let mut shuffled = gold.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed as usize) % n);
        if seed % 2 == 0 {
            shuffled.reverse();
        }
        let b = score(&preds, &shuffled).unwrap();
        for (x, y) in [(a.answer, b.answer), (a.support, b.support), (a.joint, b.joint)] {
            prop_assert!(close(prf_array(&x), prf_array(&y)));
        }
        prop_assert_eq!(a.categories.len(), b.categories.len());
    }

    #[test]
    fn joint_em_never_exceeds_either_part((gold, preds) in arb_suite()) {
        let r = score(&preds, &gold).unwrap();
        prop_assert!(r.joint.em <= r.answer.em.min(r.support.em) + 1e-15);
        for p in [r.answer, r.support, r.joint] {
            for v in prf_array(&p) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn irrelevant_support_lowers_precision(pred in arb_pairs(), gold in arb_pairs()) {
        let extra = ("Irrelevant".to_string(), 99);
        let before = support_scores(&pred, &gold);
        let mut more = pred.clone();
        more.push(extra);
        let after = support_scores(&more, &gold);
        prop_assert!(after.recall <= before.recall);
        if before.precision > 0.0 {
            prop_assert!(after.precision < before.precision);
        } else {
            prop_assert_eq!(after.precision, 0.0);
        }
    }

    #[test]
    fn joint_scores_are_products(a in arb_answer(), g in arb_answer(), p in arb_pairs(), q in arb_pairs()) {
        let ans = answer_scores(&a, &g);
        let sup = support_scores(&p, &q);
        let j = joint_scores(&ans, &sup);
        prop_assert_eq!(j.em, ans.em * sup.em);
        prop_assert_eq!(j.precision, ans.precision * sup.precision);
        prop_assert_eq!(j.recall, ans.recall * sup.recall);
        let f1 = if j.precision + j.recall > 0.0 { 2.0 * j.precision * j.recall / (j.precision + j.recall) } else { 0.0 };
        prop_assert!((j.f1 - f1).abs() < 1e-15);
    }
}

mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use structa_core::eval::{classification_report, field_f1_report};
use structa_core::model::{FieldKind, FieldSpec, Ontology, Parse};

use common::{brute_counts, check_eval_against_brute, random_ie_instance};

#[test]
fn field_f1_equals_brute_force_on_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let (onto, pred, gold) = random_ie_instance(&mut rng);
        check_eval_against_brute(&pred, &gold, &onto).unwrap_or_else(|e| panic!("instance {i}: {e}"));
    }
}

#[test]
fn classification_fixture() {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let gold: BTreeMap<String, BTreeSet<String>> = [("1".into(), set(&["a"])), ("2".into(), set(&["b"]))].into();
    let pred: BTreeMap<String, BTreeSet<String>> = [("1".into(), set(&["a"])), ("2".into(), set(&["a"]))].into();
    let r = classification_report(&pred, &gold);
    assert!((r.micro_f1 - 0.5).abs() < 1e-12);
    assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn brute_counter_sanity() {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert_eq!(brute_counts(&v(&["a", "a", "b"]), &v(&["a", "c"])), (1, 2, 1));
    assert_eq!(brute_counts(&[], &v(&["x"])), (0, 0, 1));
}

fn onto() -> Ontology {
    Ontology::new("", vec![FieldSpec::new("F", FieldKind::Categorical).multi()]).unwrap()
}

fn parses(values: &[Vec<u8>]) -> BTreeMap<String, Parse> {
    values
        .iter()
        .enumerate()
        .map(|(i, vs)| {
            let mut p = Parse::new();
            p.set("F", vs.iter().map(|v| format!("v{v}")).collect());
            (format!("d{i}"), p)
        })
        .collect()
}

proptest! {
    #[test]
    fn perfect_prediction_scores_one(gold in prop::collection::vec(prop::collection::vec(0u8..5, 1..4), 1..8)) {
        let g = parses(&gold);
        let r = field_f1_report(&g, &g, &onto(), &BTreeSet::new()).unwrap();
        prop_assert_eq!(r.average_f1, 1.0);
    }

    #[test]
    fn swapping_roles_swaps_precision_and_recall(
        a in prop::collection::vec(prop::collection::vec(0u8..5, 0..4), 1..8),
        b in prop::collection::vec(prop::collection::vec(0u8..5, 0..4), 1..8),
    ) {
        let n = a.len().min(b.len());
        let (pa, pb) = (parses(&a[..n]), parses(&b[..n]));
        let ab = field_f1_report(&pa, &pb, &onto(), &BTreeSet::new()).unwrap();
        let ba = field_f1_report(&pb, &pa, &onto(), &BTreeSet::new()).unwrap();
        let (x, y) = (&ab.per_field[0], &ba.per_field[0]);
        prop_assert_eq!(x.precision, y.recall);
        prop_assert_eq!(x.recall, y.precision);
        prop_assert!((x.f1 - y.f1).abs() < 1e-12);
    }

    #[test]
    fn adding_a_correct_value_raises_recall(
        gold in prop::collection::vec(prop::collection::vec(0u8..5, 1..4), 1..6),
        pred in prop::collection::vec(prop::collection::vec(0u8..5, 0..3), 1..6),
        pick in any::<prop::sample::Index>(),
    ) {
        let n = gold.len().min(pred.len());
        let (g, p) = (parses(&gold[..n]), parses(&pred[..n]));
        let before = field_f1_report(&p, &g, &onto(), &BTreeSet::new()).unwrap().per_field[0].clone();
        // add one gold value that is still unmatched in its document
        let doc = pick.index(n);
        let mut left = gold[doc].clone();
        for v in &pred[doc] {
            if let Some(i) = left.iter().position(|x| x == v) {
                left.remove(i);
            }
        }
        prop_assume!(!left.is_empty());
        let mut more = pred[..n].to_vec();
        more[doc].push(left[0]);
        let after = field_f1_report(&parses(&more), &g, &onto(), &BTreeSet::new()).unwrap().per_field[0].clone();
        prop_assert!(after.recall > before.recall);
        prop_assert!(after.counts.tp == before.counts.tp + 1);
    }
}

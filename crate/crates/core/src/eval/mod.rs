//! Field-level precision/recall/F1 for extraction and micro/macro F1 for
//! label-set classification.
//!
//! List-valued fields are scored by multiset intersection of normalized
//! values: per document, a predicted value is a true positive if an equal
//! gold value is still unmatched. A zero denominator scores 0.

mod normalize;

pub use normalize::{normalize, normalize_value, normalize_with_fallback, numeric_value, Normalized};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelRecord, Ontology, Parse};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("field {field:?} in document {doc_id:?} is not part of the ontology")]
    UnknownField { field: String, doc_id: String },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScore {
    pub field: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold values.
    pub support: usize,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// One entry per ontology field, in ontology order.
    pub per_field: Vec<FieldScore>,
    /// Mean F1 over fields not excluded.
    pub average_f1: f64,
    pub excluded_fields: Vec<String>,
    pub documents: usize,
}

impl EvalReport {
    pub fn field(&self, name: &str) -> Option<&FieldScore> {
        self.per_field.iter().find(|f| f.field == name)
    }

    /// Per-field rows: `field,precision,recall,f1,support,tp,fp,fn,excluded`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["field", "precision", "recall", "f1", "support", "tp", "fp", "fn", "excluded"])?;
        for f in &self.per_field {
            w.write_record([
                f.field.clone(),
                f.precision.to_string(),
                f.recall.to_string(),
                f.f1.to_string(),
                f.support.to_string(),
                f.counts.tp.to_string(),
                f.counts.fp.to_string(),
                f.counts.fn_.to_string(),
                self.excluded_fields.contains(&f.field).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Size of the multiset intersection of two value lists.
fn multiset_overlap(pred: &[String], gold: &[String]) -> usize {
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *remaining.entry(g.as_str()).or_default() += 1;
    }
    let mut tp = 0;
    for p in pred {
        if let Some(n) = remaining.get_mut(p.as_str()) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    tp
}

fn check_fields(parses: &BTreeMap<String, Parse>, ontology: &Ontology) -> Result<(), EvalError> {
    for (doc_id, parse) in parses {
        if let Some(field) = parse.fields_outside(ontology).first() {
            return Err(EvalError::UnknownField { field: field.to_string(), doc_id: doc_id.clone() });
        }
    }
    Ok(())
}

/// Scores predictions against gold parses over the gold documents. A gold
/// document without a prediction counts as an empty prediction.
pub fn field_f1_report(
    pred: &BTreeMap<String, Parse>,
    gold: &BTreeMap<String, Parse>,
    ontology: &Ontology,
    exclude: &BTreeSet<String>,
) -> Result<EvalReport, EvalError> {
    check_fields(pred, ontology)?;
    check_fields(gold, ontology)?;
    let empty = Parse::new();
    let mut per_field = Vec::with_capacity(ontology.fields.len());
    for spec in &ontology.fields {
        let mut counts = Counts::default();
        for (doc_id, g) in gold {
            let p = pred.get(doc_id).unwrap_or(&empty);
            let pv: Vec<String> = p.get(&spec.name).iter().map(|v| normalize(v, spec.kind)).collect();
            let gv: Vec<String> = g.get(&spec.name).iter().map(|v| normalize(v, spec.kind)).collect();
            let tp = multiset_overlap(&pv, &gv);
            counts.add(Counts { tp, fp: pv.len() - tp, fn_: gv.len() - tp });
        }
        per_field.push(FieldScore {
            field: spec.name.clone(),
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            support: counts.tp + counts.fn_,
            counts,
        });
    }
    let included: Vec<f64> = per_field
        .iter()
        .filter(|f| !exclude.contains(&f.field))
        .map(|f| f.f1)
        .collect();
    let average_f1 = if included.is_empty() { 0.0 } else { included.iter().sum::<f64>() / included.len() as f64 };
    Ok(EvalReport {
        per_field,
        average_f1,
        excluded_fields: ontology.field_names().filter(|f| exclude.contains(*f)).map(String::from).collect(),
        documents: gold.len(),
    })
}

/// Builds a doc → parse map from label records; later records win.
pub fn parses_by_doc(records: &[LabelRecord]) -> BTreeMap<String, Parse> {
    records.iter().map(|r| (r.doc_id.clone(), r.parse.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_label: Vec<LabelScore>,
}

/// Micro F1 pools counts over all labels; macro F1 averages per-label F1 over
/// labels seen in gold or predictions. A document missing on either side is
/// an empty label set.
pub fn classification_report(
    pred: &BTreeMap<String, BTreeSet<String>>,
    gold: &BTreeMap<String, BTreeSet<String>>,
) -> ClassificationReport {
    let empty = BTreeSet::new();
    let docs: BTreeSet<&String> = pred.keys().chain(gold.keys()).collect();
    let mut per_label: BTreeMap<&str, Counts> = BTreeMap::new();
    for doc in docs {
        let p = pred.get(doc).unwrap_or(&empty);
        let g = gold.get(doc).unwrap_or(&empty);
        for label in p.union(g) {
            let c = per_label.entry(label.as_str()).or_default();
            match (p.contains(label), g.contains(label)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let mut pooled = Counts::default();
    for c in per_label.values() {
        pooled.add(*c);
    }
    let scores: Vec<LabelScore> = per_label
        .into_iter()
        .map(|(label, counts)| LabelScore { label: label.to_string(), f1: counts.f1(), counts })
        .collect();
    let macro_f1 = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64
    };
    ClassificationReport { micro_f1: pooled.f1(), macro_f1, per_label: scores }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FieldKind, FieldSpec};

    fn onto() -> Ontology {
        Ontology::new(
            "",
            vec![
                FieldSpec::new("BAC", FieldKind::Numeric),
                FieldSpec::new("Dist", FieldKind::Numeric),
                FieldSpec::new("Fine", FieldKind::Money).multi(),
            ],
        )
        .unwrap()
    }

    fn docs(entries: &[(&str, Parse)]) -> BTreeMap<String, Parse> {
        entries.iter().map(|(d, p)| (d.to_string(), p.clone())).collect()
    }

    #[test]
    fn identity_scores_one() {
        let gold = docs(&[
            ("1", Parse::new().with("BAC", &["0.1%"]).with("Dist", &["5m"]).with("Fine", &["1", "2"])),
            ("2", Parse::new().with("BAC", &["0.2%"]).with("Dist", &["7m"]).with("Fine", &["3"])),
        ]);
        let r = field_f1_report(&gold, &gold, &onto(), &BTreeSet::new()).unwrap();
        assert!(r.per_field.iter().all(|f| f.f1 == 1.0));
        assert_eq!(r.average_f1, 1.0);
    }

    #[test]
    fn hand_computed_partial_match() {
        let o = Ontology::new(
            "",
            vec![FieldSpec::new("BAC", FieldKind::Numeric), FieldSpec::new("Dist", FieldKind::Numeric)],
        )
        .unwrap();
        let gold = docs(&[("d", Parse::new().with("BAC", &["0.12%"]).with("Dist", &["300m"]))]);
        let pred = docs(&[("d", Parse::new().with("BAC", &["0.12%"]))]);
        let r = field_f1_report(&pred, &gold, &o, &BTreeSet::new()).unwrap();
        assert_eq!(r.field("BAC").unwrap().f1, 1.0);
        assert_eq!(r.field("Dist").unwrap().f1, 0.0);
        assert_eq!(r.average_f1, 0.5);
    }

    #[test]
    fn normalization_applies_before_matching() {
        let o = Ontology::new("", vec![FieldSpec::new("Term", FieldKind::Duration)]).unwrap();
        let gold = docs(&[("d", Parse::new().with("Term", &["2 years"]))]);
        let pred = docs(&[("d", Parse::new().with("Term", &["24 months"]))]);
        let r = field_f1_report(&pred, &gold, &o, &BTreeSet::new()).unwrap();
        assert_eq!(r.average_f1, 1.0);
    }

    #[test]
    fn multiset_counts_duplicates_once_each() {
        let gold = docs(&[("d", Parse::new().with("Fine", &["1", "1", "2"]))]);
        let pred = docs(&[("d", Parse::new().with("Fine", &["1", "3"]))]);
        let r = field_f1_report(&pred, &gold, &onto(), &BTreeSet::new()).unwrap();
        assert_eq!(r.field("Fine").unwrap().counts, Counts { tp: 1, fp: 1, fn_: 2 });
    }

    #[test]
    fn exclusion_and_missing_predictions() {
        let gold = docs(&[("d", Parse::new().with("BAC", &["1"]).with("Dist", &["2"]))]);
        let pred = docs(&[]);
        let excl: BTreeSet<String> = ["Fine".to_string()].into();
        let r = field_f1_report(&pred, &gold, &onto(), &excl).unwrap();
        assert_eq!(r.excluded_fields, ["Fine"]);
        assert_eq!(r.average_f1, 0.0);
        assert_eq!(r.field("BAC").unwrap().counts.fn_, 1);
    }

    #[test]
    fn unknown_field_is_an_error() {
        let gold = docs(&[("d", Parse::new().with("Other", &["1"]))]);
        let err = field_f1_report(&gold, &gold, &onto(), &BTreeSet::new()).unwrap_err();
        assert!(err.to_string().contains("Other"));
    }

    #[test]
    fn csv_rows() {
        let gold = docs(&[("d", Parse::new().with("BAC", &["1"]))]);
        let r = field_f1_report(&gold, &gold, &onto(), &BTreeSet::new()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("field,precision,recall,f1,support,tp,fp,fn,excluded\nBAC,1,1,1,1,1,0,0,false"));
    }

    fn sets(entries: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        entries
            .iter()
            .map(|(d, ls)| (d.to_string(), ls.iter().map(|l| l.to_string()).collect()))
            .collect()
    }

    #[test]
    fn classification_hand_computed() {
        let gold = sets(&[("1", &["a"]), ("2", &["b"])]);
        let pred = sets(&[("1", &["a"]), ("2", &["a"])]);
        let r = classification_report(&pred, &gold);
        assert!((r.micro_f1 - 0.5).abs() < 1e-12);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        let perfect = classification_report(&gold, &gold);
        assert_eq!((perfect.micro_f1, perfect.macro_f1), (1.0, 1.0));
    }
}

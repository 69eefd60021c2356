//! Rule-based canonicalization of extracted values so that predicted and
//! gold strings compare by meaning ("2 years" == "24 months").

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{ChatRequest, Gateway, Message, Purpose};
use crate::model::FieldKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalized {
    pub value: String,
    /// The rules could not parse the input; `value` is the trimmed raw text.
    pub flagged: bool,
}

impl Normalized {
    fn ok(value: String) -> Self {
        Normalized { value, flagged: false }
    }

    fn passthrough(raw: &str) -> Self {
        Normalized { value: raw.trim().to_string(), flagged: true }
    }
}

/// Exact decimal: `mant * 10^-scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dec {
    mant: i128,
    scale: u32,
}

impl Dec {
    const ZERO: Dec = Dec { mant: 0, scale: 0 };

    fn parse(text: &str) -> Option<Dec> {
        let text: String = text.chars().filter(|c| *c != ',').collect();
        let (neg, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text.strip_prefix('+').unwrap_or(&text)),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
            return None;
        }
        let digits = format!("{int}{frac}");
        let mant: i128 = digits.trim_start_matches('0').parse().or_else(|_| {
            if digits.chars().all(|c| c == '0') { Ok(0) } else { Err(()) }
        }).ok()?;
        Some(Dec { mant: if neg { -mant } else { mant }, scale: frac.len() as u32 }.reduce())
    }

    fn reduce(mut self) -> Dec {
        while self.scale > 0 && self.mant % 10 == 0 {
            self.mant /= 10;
            self.scale -= 1;
        }
        if self.mant == 0 {
            self.scale = 0;
        }
        self
    }

    fn align(self, other: Dec) -> Option<(i128, i128, u32)> {
        let scale = self.scale.max(other.scale);
        let a = self.mant.checked_mul(10i128.checked_pow(scale - self.scale)?)?;
        let b = other.mant.checked_mul(10i128.checked_pow(scale - other.scale)?)?;
        Some((a, b, scale))
    }

    fn add(self, other: Dec) -> Option<Dec> {
        let (a, b, scale) = self.align(other)?;
        Some(Dec { mant: a.checked_add(b)?, scale }.reduce())
    }

    fn mul_int(self, k: i128) -> Option<Dec> {
        Some(Dec { mant: self.mant.checked_mul(k)?, scale: self.scale }.reduce())
    }

    /// Exact division when the quotient terminates within the current scale.
    fn div_int_exact(self, k: i128) -> Option<Dec> {
        (self.mant % k == 0).then(|| Dec { mant: self.mant / k, scale: self.scale }.reduce())
    }

    fn is_zero(self) -> bool {
        self.mant == 0
    }

    fn to_canonical(self) -> String {
        let d = self.reduce();
        let neg = d.mant < 0;
        let digits = d.mant.unsigned_abs().to_string();
        let s = if d.scale == 0 {
            digits
        } else {
            let scale = d.scale as usize;
            let padded = format!("{digits:0>width$}", width = scale + 1);
            let (i, f) = padded.split_at(padded.len() - scale);
            format!("{i}.{f}")
        };
        if neg { format!("-{s}") } else { s }
    }

    fn to_f64(self) -> f64 {
        self.mant as f64 / 10f64.powi(self.scale as i32)
    }
}

static NUMBER_WITH_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?(?:\d[\d,]*(?:\.\d+)?|\.\d+))\s*(.*)$").unwrap());

static MONEY_SEGMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(\d[\d,]*(?:\.\d+)?|\.\d+)\s*(천만|백만|십만|억|만|천|백|thousand|million|billion|mn|bn|k|m|b)?")
        .unwrap()
});

static DURATION_SEGMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(\d+(?:\.\d+)?|\.\d+)\s*(years?|yrs?|y|months?|mos?|m|weeks?|wks?|w|days?|d|년|개월|월|주|일)?")
        .unwrap()
});

const CURRENCY_WORDS: &[&str] = &["krw", "usd", "eur", "dollars", "dollar", "won", "원", "₩", "$", "€"];
const DURATION_NOISE: &[&str] = &["imprisonment", "prison", "징역", "금고", "and", "of", "for"];

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Checks that nothing but whitespace and light punctuation lies outside the
/// regex matches.
fn only_separators(text: &str, re: &Regex) -> bool {
    re.replace_all(text, " ")
        .chars()
        .all(|c| c.is_whitespace() || matches!(c, ',' | '.' | '+' | '/'))
}

fn normalize_money(raw: &str) -> Option<String> {
    let mut text = raw.trim().to_lowercase();
    for w in CURRENCY_WORDS {
        text = text.replace(w, " ");
    }
    if !MONEY_SEGMENT.is_match(&text) || !only_separators(&text, &MONEY_SEGMENT) {
        return None;
    }
    let mut total = Dec::ZERO;
    for caps in MONEY_SEGMENT.captures_iter(&text) {
        let n = Dec::parse(&caps[1])?;
        let mult: i128 = match caps.get(2).map(|m| m.as_str()) {
            None => 1,
            Some("백") => 100,
            Some("천" | "thousand" | "k") => 1_000,
            Some("만") => 10_000,
            Some("십만") => 100_000,
            Some("백만" | "million" | "mn" | "m") => 1_000_000,
            Some("천만") => 10_000_000,
            Some("억") => 100_000_000,
            Some("billion" | "bn" | "b") => 1_000_000_000,
            Some(_) => return None,
        };
        total = total.add(n.mul_int(mult)?)?;
    }
    Some(total.to_canonical())
}

fn normalize_duration(raw: &str) -> Option<String> {
    let mut text = format!(" {} ", raw.trim().to_lowercase());
    for w in DURATION_NOISE {
        text = text.replace(&format!(" {w} "), "  ");
        if !w.is_ascii() {
            text = text.replace(w, " ");
        }
    }
    if !DURATION_SEGMENT.is_match(&text) || !only_separators(&text, &DURATION_SEGMENT) {
        return None;
    }
    let mut months = Dec::ZERO;
    let mut days = Dec::ZERO;
    for caps in DURATION_SEGMENT.captures_iter(&text) {
        let n = Dec::parse(&caps[1])?;
        match caps.get(2).map(|m| m.as_str()) {
            None | Some("month" | "months" | "mo" | "mos" | "m" | "개월" | "월") => months = months.add(n)?,
            Some("year" | "years" | "yr" | "yrs" | "y" | "년") => months = months.add(n.mul_int(12)?)?,
            Some("week" | "weeks" | "wk" | "wks" | "w" | "주") => days = days.add(n.mul_int(7)?)?,
            Some("day" | "days" | "d" | "일") => days = days.add(n)?,
            Some(_) => return None,
        }
    }
    if days.is_zero() {
        return Some(months.to_canonical());
    }
    match days.div_int_exact(30) {
        Some(extra) if extra.scale == 0 && days.scale == 0 => Some(months.add(extra)?.to_canonical()),
        _ => Some(format!("{}d", months.mul_int(30)?.add(days)?.to_canonical())),
    }
}

fn normalize_numeric(raw: &str) -> Option<String> {
    let caps = NUMBER_WITH_SUFFIX.captures(raw.trim())?;
    let n = Dec::parse(&caps[1])?;
    let suffix: String = caps[2].chars().filter(|c| !c.is_whitespace()).collect();
    if suffix.chars().any(|c| c.is_ascii_digit()) || suffix.chars().count() > 10 {
        return None;
    }
    Some(format!("{}{suffix}", n.to_canonical()))
}

/// Deterministic canonical form of a value of the given kind. Values the
/// rules cannot parse come back trimmed and flagged.
pub fn normalize_value(raw: &str, kind: FieldKind) -> Normalized {
    let parsed = match kind {
        FieldKind::Money => normalize_money(raw),
        FieldKind::Duration => normalize_duration(raw),
        FieldKind::Numeric => normalize_numeric(raw),
        FieldKind::Categorical | FieldKind::FreeText | FieldKind::LabelSet => {
            return Normalized::ok(collapse_ws(&raw.to_lowercase()));
        }
    };
    match parsed {
        Some(v) => Normalized::ok(v),
        None => Normalized::passthrough(raw),
    }
}

/// Shorthand for `normalize_value(raw, kind).value`.
pub fn normalize(raw: &str, kind: FieldKind) -> String {
    normalize_value(raw, kind).value
}

/// Reads a normalized value as a number. Durations are in months; a day
/// count `Nd` converts at 30 days per month. Percent and unit suffixes are
/// ignored.
pub fn numeric_value(normalized: &str, kind: FieldKind) -> Option<f64> {
    if !kind.is_quantitative() {
        return None;
    }
    let caps = NUMBER_WITH_SUFFIX.captures(normalized.trim())?;
    let n = Dec::parse(&caps[1])?.to_f64();
    let suffix = caps[2].trim();
    match kind {
        FieldKind::Duration if suffix == "d" => Some(n / 30.0),
        FieldKind::Duration | FieldKind::Money if !suffix.is_empty() => None,
        _ => Some(n),
    }
}

/// Rule normalization, falling back to the normalization model for
/// quantitative values the rules cannot parse. The model's answer is run
/// through the rules again and only accepted if it parses.
pub fn normalize_with_fallback(gateway: &Gateway, raw: &str, kind: FieldKind) -> Normalized {
    let first = normalize_value(raw, kind);
    if !first.flagged || !kind.is_quantitative() {
        return first;
    }
    let unit = match kind {
        FieldKind::Money => "an amount of money as a plain integer in the base currency unit",
        FieldKind::Duration => "a duration as a number of months",
        _ => "a plain decimal number",
    };
    let req = ChatRequest::new(
        gateway.model(Purpose::Normalization),
        vec![
            Message::system(format!("Rewrite the value as {unit}. Answer with the value only.")),
            Message::user(raw.to_string()),
        ],
    );
    match gateway.complete(&req).ok().as_ref().and_then(|r| r.content()) {
        Some(answer) => {
            let second = normalize_value(answer, kind);
            if second.flagged { first } else { second }
        }
        None => first,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockRule, MockRules};
    use proptest::prelude::*;

    #[test]
    fn documented_examples() {
        assert_eq!(normalize("2 years", FieldKind::Duration), "24");
        assert_eq!(normalize("5,000,000 won", FieldKind::Money), "5000000");
        assert_eq!(normalize("0.120%", FieldKind::Numeric), "0.12%");
    }

    #[test]
    fn durations() {
        assert_eq!(normalize("1 year 6 months", FieldKind::Duration), "18");
        assert_eq!(normalize("1 year and 6 months", FieldKind::Duration), "18");
        assert_eq!(normalize("징역 1년 6개월", FieldKind::Duration), "18");
        assert_eq!(normalize("90 days", FieldKind::Duration), "3");
        assert_eq!(normalize("45 days", FieldKind::Duration), "45d");
        assert_eq!(normalize("1 year 10 days", FieldKind::Duration), "370d");
        assert_eq!(normalize("1.5 years", FieldKind::Duration), "18");
        assert_eq!(normalize("24", FieldKind::Duration), "24");
        assert_eq!(normalize("2 weeks", FieldKind::Duration), "14d");
        let n = normalize_value("life sentence", FieldKind::Duration);
        assert!(n.flagged);
        assert_eq!(n.value, "life sentence");
    }

    #[test]
    fn money() {
        assert_eq!(normalize("$1,200", FieldKind::Money), "1200");
        assert_eq!(normalize("3 million won", FieldKind::Money), "3000000");
        assert_eq!(normalize("1.5 million", FieldKind::Money), "1500000");
        assert_eq!(normalize("500만원", FieldKind::Money), "5000000");
        assert_eq!(normalize("1억 2천만원", FieldKind::Money), "120000000");
        assert!(normalize_value("a lot", FieldKind::Money).flagged);
    }

    #[test]
    fn numerics() {
        assert_eq!(normalize(" 300 m ", FieldKind::Numeric), "300m");
        assert_eq!(normalize("1,000.50", FieldKind::Numeric), "1000.5");
        assert_eq!(normalize("007", FieldKind::Numeric), "7");
        assert_eq!(normalize("-0.0", FieldKind::Numeric), "0");
        assert_eq!(normalize(".5", FieldKind::Numeric), "0.5");
        assert!(normalize_value("n/a", FieldKind::Numeric).flagged);
    }

    #[test]
    fn text_kinds_fold_case_and_space() {
        assert_eq!(normalize("  Passenger   Car ", FieldKind::Categorical), "passenger car");
        assert_eq!(normalize("Fraud\tScheme", FieldKind::FreeText), "fraud scheme");
    }

    #[test]
    fn numeric_coercion() {
        assert_eq!(numeric_value("0.12%", FieldKind::Numeric), Some(0.12));
        assert_eq!(numeric_value("24", FieldKind::Duration), Some(24.0));
        assert_eq!(numeric_value("45d", FieldKind::Duration), Some(1.5));
        assert_eq!(numeric_value("5000000", FieldKind::Money), Some(5_000_000.0));
        assert_eq!(numeric_value("car", FieldKind::Categorical), None);
        assert_eq!(numeric_value("a lot", FieldKind::Money), None);
    }

    #[test]
    fn fallback_uses_the_normalization_model() {
        let mut gw = Gateway::mock(MockRules::new(vec![MockRule::content("two and a half years", "30")]));
        gw.routes.normalization = "cheap-model".into();
        let n = normalize_with_fallback(&gw, "two and a half years", FieldKind::Duration);
        assert_eq!(n, Normalized { value: "30".into(), flagged: false });
        // unparseable answer keeps the flagged passthrough
        let n = normalize_with_fallback(&gw, "forever", FieldKind::Duration);
        assert!(n.flagged);
    }

    fn kinds() -> impl Strategy<Value = FieldKind> {
        prop_oneof![
            Just(FieldKind::Numeric),
            Just(FieldKind::Money),
            Just(FieldKind::Duration),
            Just(FieldKind::Categorical),
            Just(FieldKind::FreeText),
            Just(FieldKind::LabelSet),
        ]
    }

    fn value_like() -> impl Strategy<Value = String> {
        prop_oneof![
            ".{0,24}",
            "[0-9]{1,4}(,[0-9]{3}){0,2}(\\.[0-9]{1,3})? ?(%|m|km|won|원|만원|years|months|days|년|개월)?",
            "[0-9]{1,2} (years?|months?|weeks?|days?)( [0-9]{1,2} (months?|days?))?",
        ]
    }

    proptest! {
        #[test]
        fn idempotent(raw in value_like(), kind in kinds()) {
            let once = normalize(&raw, kind);
            prop_assert_eq!(normalize(&once, kind), once);
        }
    }
}

//! Input rows and verdicts for `loss-check`.
//!
//! A row is a JSON object:
//! `{"id": "r1", "policy_logp": [..], "ref_logp": [..], "beta": 0.05, "lambda": 0.5, "kind": "listwise"}`.
//! Only the two log-probability arrays are required. Index 0 is the gold
//! candidate. With length normalization on, rows also carry `"lengths"`,
//! the token count of each candidate. Non-finite values may be written as bare `NaN`/`Infinity`
//! literals or as strings; either way the row fails as non-finite input.

use quadpref::prefloss::{
    evaluate, finite_difference_check, LossBatch, LossError, LossKind, DEFAULT_FD_STEP,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub id: Option<String>,
    pub policy_logp: Vec<f64>,
    pub ref_logp: Vec<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub kind: Option<LossKind>,
    pub lengths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<LossKind>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.status == "PASS"
    }

    fn fail(
        line: usize,
        id: Option<String>,
        kind: Option<LossKind>,
        reason: impl Into<String>,
    ) -> Self {
        Verdict {
            line,
            id,
            kind,
            status: "FAIL".into(),
            value: None,
            gradient: None,
            max_rel_error: None,
            reason: Some(reason.into()),
        }
    }
}

/// Quotes bare `NaN`, `Infinity` and `-Infinity` tokens outside strings so
/// the line becomes valid JSON.
fn quote_non_finite(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            rest = &rest[1..];
            continue;
        }
        if let Some(tok) = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t))
        {
            out.push('"');
            out.push_str(tok);
            out.push('"');
            rest = &rest[tok.len()..];
            continue;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

fn number(v: &Value, field: &str) -> Result<f64, String> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| format!("{field}: unrepresentable number")),
        Value::String(s) => match s.as_str() {
            "NaN" | "nan" => Ok(f64::NAN),
            "Infinity" | "inf" => Ok(f64::INFINITY),
            "-Infinity" | "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(format!("{field}: {other:?} is not a number")),
        },
        _ => Err(format!("{field}: expected a number")),
    }
}

fn numbers(v: Option<&Value>, field: &str) -> Result<Vec<f64>, String> {
    match v {
        Some(Value::Array(a)) => a.iter().map(|x| number(x, field)).collect(),
        Some(_) => Err(format!("{field}: expected an array")),
        None => Err(format!("missing field {field:?}")),
    }
}

pub fn parse_row(line: &str) -> Result<LossRow, String> {
    let value: Value = serde_json::from_str(line)
        .or_else(|_| serde_json::from_str(&quote_non_finite(line)))
        .map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("row is not a JSON object")?;
    let optional = |field: &str| {
        obj.get(field)
            .filter(|v| !v.is_null())
            .map(|v| number(v, field))
            .transpose()
    };
    let kind = match obj.get("kind") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.parse::<LossKind>()?),
        Some(_) => return Err("kind must be a string".into()),
    };
    let id = match obj.get("id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => Some(other.to_string()),
    };
    let lengths = match obj.get("lengths") {
        None | Some(Value::Null) => None,
        Some(Value::Array(a)) => Some(
            a.iter()
                .map(|v| {
                    v.as_u64()
                        .map(|n| n as usize)
                        .ok_or("lengths: expected non-negative integers")
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err("lengths: expected an array".into()),
    };
    Ok(LossRow {
        id,
        lengths,
        policy_logp: numbers(obj.get("policy_logp"), "policy_logp")?,
        ref_logp: numbers(obj.get("ref_logp"), "ref_logp")?,
        beta: optional("beta")?,
        lambda: optional("lambda")?,
        kind,
    })
}

fn describe(e: &LossError) -> String {
    match e {
        LossError::NonFinite => "non-finite input".into(),
        other => other.to_string(),
    }
}

/// Settings applied to rows that do not override them.
#[derive(Debug, Clone, Copy)]
pub struct CheckSettings {
    pub kind: LossKind,
    pub beta: f64,
    pub lambda: f64,
    pub tolerance: f64,
    pub length_normalize: bool,
}

/// Evaluates one input line; never fails, bad rows become FAIL verdicts.
pub fn check_line(line_no: usize, line: &str, s: &CheckSettings) -> Verdict {
    let row = match parse_row(line) {
        Ok(r) => r,
        Err(reason) => return Verdict::fail(line_no, None, None, reason),
    };
    let kind = row.kind.unwrap_or(s.kind);
    let batch = LossBatch::new(
        row.policy_logp,
        row.ref_logp,
        row.beta.unwrap_or(s.beta),
        row.lambda.unwrap_or(s.lambda),
    );
    let batch = match (batch, s.length_normalize, &row.lengths) {
        (Err(e), _, _) => Err(describe(&e)),
        (Ok(b), false, _) => Ok(b),
        (Ok(_), true, None) => Err("missing lengths".into()),
        (Ok(b), true, Some(lengths)) => b.length_normalized(lengths).map_err(|e| describe(&e)),
    };
    let batch = match batch {
        Ok(b) => b,
        Err(reason) => return Verdict::fail(line_no, row.id, Some(kind), reason),
    };
    let result = evaluate(kind, &batch)
        .and_then(|r| Ok((r, finite_difference_check(kind, &batch, DEFAULT_FD_STEP)?)));
    match result {
        Err(e) => Verdict::fail(line_no, row.id, Some(kind), describe(&e)),
        Ok((r, check)) => {
            let ok = r.value.is_finite() && check.passes(s.tolerance);
            Verdict {
                line: line_no,
                id: row.id,
                kind: Some(kind),
                status: if ok { "PASS" } else { "FAIL" }.into(),
                value: Some(r.value),
                gradient: Some(r.gradient),
                max_rel_error: Some(check.max_rel_error),
                reason: (!ok).then(|| {
                    format!(
                        "max relative error {:e} exceeds {:e}",
                        check.max_rel_error, s.tolerance
                    )
                }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTWISE: CheckSettings = CheckSettings {
        kind: LossKind::Listwise,
        beta: 0.05,
        lambda: 0.5,
        tolerance: 1e-6,
        length_normalize: false,
    };

    #[test]
    fn bare_literals_are_quoted_outside_strings() {
        assert_eq!(
            quote_non_finite(r#"{"a": [NaN, -Infinity], "id": "NaN"}"#),
            r#"{"a": ["NaN", "-Infinity"], "id": "NaN"}"#
        );
        assert_eq!(
            quote_non_finite(r#"{"id": "say \"NaN\""}"#),
            r#"{"id": "say \"NaN\""}"#
        );
    }

    #[test]
    fn nan_rows_fail_as_non_finite() {
        for line in [
            r#"{"policy_logp": [NaN, -1.0], "ref_logp": [-1.0, -1.0]}"#,
            r#"{"policy_logp": ["NaN", -1.0], "ref_logp": [-1.0, -1.0]}"#,
            r#"{"policy_logp": [-1.0, -1.0], "ref_logp": [-1.0, -1.0], "beta": NaN}"#,
        ] {
            let v = check_line(1, line, &LISTWISE);
            assert_eq!(v.status, "FAIL");
            assert_eq!(v.reason.as_deref(), Some("non-finite input"), "{line}");
        }
    }

    #[test]
    fn identical_rows_give_log_n_plus_one() {
        let line = r#"{"policy_logp": [-2, -2, -2, -2, -2, -2, -2], "ref_logp": [-2, -2, -2, -2, -2, -2, -2]}"#;
        let v = check_line(3, line, &LISTWISE);
        assert!(v.passed());
        assert!((v.value.unwrap() - 7f64.ln()).abs() < 1e-12);
        assert_eq!(v.line, 3);
    }

    #[test]
    fn row_kind_overrides_default() {
        let line = r#"{"kind": "dpo", "policy_logp": [-1, -2, -3], "ref_logp": [-1, -2, -3]}"#;
        let v = check_line(1, line, &LISTWISE);
        assert_eq!(v.kind, Some(LossKind::Dpo));
        assert_eq!(v.status, "FAIL");
        let v = check_line(1, "[1, 2]", &LISTWISE);
        assert_eq!(v.reason.as_deref(), Some("row is not a JSON object"));
    }

    #[test]
    fn length_normalization_divides_by_token_counts() {
        let on = CheckSettings {
            length_normalize: true,
            ..LISTWISE
        };
        let line = r#"{"policy_logp": [-4, -9], "ref_logp": [-2, -3], "lengths": [2, 3]}"#;
        let v = check_line(1, line, &on);
        let plain = check_line(
            1,
            r#"{"policy_logp": [-2, -3], "ref_logp": [-1, -1]}"#,
            &LISTWISE,
        );
        assert!(v.passed());
        assert_eq!(v.value, plain.value);
        let v = check_line(1, r#"{"policy_logp": [-4, -9], "ref_logp": [-2, -3]}"#, &on);
        assert_eq!(v.reason.as_deref(), Some("missing lengths"));
        let v = check_line(
            1,
            r#"{"policy_logp": [-4, -9], "ref_logp": [-2, -3], "lengths": [2, 0]}"#,
            &on,
        );
        assert_eq!(v.status, "FAIL");
    }
}

//! Closed predicate set for conditional ballots.
//!
//! * `flag_set {key}`: context[key] is `true`.
//! * `value_at_least {key, min}`: context[key] is a number ≥ `min`.
//!
//! A missing context key makes the predicate false.

use std::collections::BTreeMap;

use crate::codec::{Fixed, Value};

pub const PREDICATES: &[&str] = &["flag_set", "value_at_least"];

fn key_param(params: &BTreeMap<String, Value>) -> Result<&str, String> {
    params
        .get("key")
        .and_then(|v| v.as_str().ok())
        .ok_or_else(|| "predicate needs a string `key`".to_string())
}

fn as_number(v: &Value) -> Option<Fixed> {
    match v {
        Value::Fixed(f) => Some(*f),
        Value::Int(n) => Fixed::from_int(*n).ok(),
        _ => None,
    }
}

pub fn check(predicate: &str, params: &BTreeMap<String, Value>) -> Result<(), String> {
    match predicate {
        "flag_set" => {
            key_param(params)?;
            if params.len() != 1 {
                return Err("flag_set takes only `key`".into());
            }
        }
        "value_at_least" => {
            key_param(params)?;
            if params.len() != 2 || params.get("min").and_then(as_number).is_none() {
                return Err("value_at_least takes `key` and numeric `min`".into());
            }
        }
        other => return Err(format!("unknown predicate {other:?}")),
    }
    Ok(())
}

/// Evaluates a predicate that already passed [`check`].
pub fn eval(predicate: &str, params: &BTreeMap<String, Value>, context: &BTreeMap<String, Value>) -> bool {
    let Ok(key) = key_param(params) else {
        return false;
    };
    let Some(value) = context.get(key) else {
        return false;
    };
    match predicate {
        "flag_set" => matches!(value, Value::Bool(true)),
        "value_at_least" => match (as_number(value), params.get("min").and_then(as_number)) {
            (Some(v), Some(min)) => v >= min,
            _ => false,
        },
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn flag_and_threshold() {
        let ctx = params(&[("quorum_met", Value::Bool(true)), ("turnout", Value::Int(40))]);
        let flag = params(&[("key", Value::str("quorum_met"))]);
        assert!(check("flag_set", &flag).is_ok());
        assert!(eval("flag_set", &flag, &ctx));
        let at_least = params(&[("key", Value::str("turnout")), ("min", Value::Int(50))]);
        assert!(!eval("value_at_least", &at_least, &ctx));
        let missing = params(&[("key", Value::str("absent"))]);
        assert!(!eval("flag_set", &missing, &ctx));
        assert!(check("coin_flip", &flag).is_err());
        assert!(check("value_at_least", &flag).is_err());
    }
}

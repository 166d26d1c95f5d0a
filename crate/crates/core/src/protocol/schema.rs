//! Validation for the JSON-schema subset tool descriptors use.
//!
//! Supported keywords: `type`, `properties`, `required`, `additionalProperties`
//! (boolean form), `items`, `enum`, `minimum`, `maximum`, `minLength`,
//! `maxLength`, `minItems`, `maxItems`. A property may carry `x-state: <slot>`,
//! meaning the calling agent fills it from session state when the caller
//! leaves it out.

use serde_json::Value;

/// State slot a property is bound to, if any.
pub fn state_binding(property_schema: &Value) -> Option<&str> {
    property_schema.get("x-state").and_then(Value::as_str)
}

/// Validates `value` against `schema`; an empty list means it conforms.
pub fn validate(schema: &Value, value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    check(schema, value, "$", false, &mut out);
    out
}

/// Like [`validate`], but required properties bound with `x-state` may be
/// absent from the top-level object.
pub fn validate_unbound(schema: &Value, value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    check(schema, value, "$", true, &mut out);
    out
}

fn type_matches(ty: &str, value: &Value) -> bool {
    match ty {
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.as_i64().is_some() || value.as_u64().is_some(),
        "boolean" => value.is_boolean(),
        "object" => value.is_object(),
        "array" => value.is_array(),
        "null" => value.is_null(),
        _ => true,
    }
}

fn check(schema: &Value, value: &Value, path: &str, allow_bound: bool, out: &mut Vec<String>) {
    match schema.get("type") {
        Some(Value::String(ty)) if !type_matches(ty, value) => {
            out.push(format!("{path}: expected {ty}"));
            return;
        }
        Some(Value::Array(types)) => {
            let ok = types.iter().filter_map(Value::as_str).any(|t| type_matches(t, value));
            if !ok {
                out.push(format!("{path}: type not in {}", Value::Array(types.clone())));
                return;
            }
        }
        _ => {}
    }
    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(value) {
            out.push(format!("{path}: value not in enum"));
        }
    }
    if let Some(n) = value.as_f64() {
        if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
            if n < min {
                out.push(format!("{path}: {n} < minimum {min}"));
            }
        }
        if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
            if n > max {
                out.push(format!("{path}: {n} > maximum {max}"));
            }
        }
    }
    if let Some(s) = value.as_str() {
        let len = s.chars().count() as u64;
        if let Some(min) = schema.get("minLength").and_then(Value::as_u64) {
            if len < min {
                out.push(format!("{path}: shorter than {min}"));
            }
        }
        if let Some(max) = schema.get("maxLength").and_then(Value::as_u64) {
            if len > max {
                out.push(format!("{path}: longer than {max}"));
            }
        }
    }
    if let Some(items) = value.as_array() {
        let len = items.len() as u64;
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if len < min {
                out.push(format!("{path}: fewer than {min} items"));
            }
        }
        if let Some(max) = schema.get("maxItems").and_then(Value::as_u64) {
            if len > max {
                out.push(format!("{path}: more than {max} items"));
            }
        }
        if let Some(item_schema) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(item_schema, item, &format!("{path}[{i}]"), false, out);
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(Value::Array(required)) = schema.get("required") {
            for key in required.iter().filter_map(Value::as_str) {
                if obj.contains_key(key) {
                    continue;
                }
                let bound = props
                    .and_then(|p| p.get(key))
                    .and_then(state_binding)
                    .is_some();
                if !(allow_bound && bound) {
                    out.push(format!("{path}: missing required field `{key}`"));
                }
            }
        }
        if let Some(props) = props {
            for (key, sub) in obj {
                if let Some(prop_schema) = props.get(key) {
                    check(prop_schema, sub, &format!("{path}.{key}"), false, out);
                } else if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
                    out.push(format!("{path}: unexpected field `{key}`"));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn schema() -> Value {
        json!({
            "type": "object",
            "properties": {
                "query": {"type": "string", "minLength": 1},
                "limit": {"type": "integer", "minimum": 0, "maximum": 50},
                "tags": {"type": "array", "items": {"type": "string"}, "maxItems": 2},
                "skeleton": {"type": "object", "x-state": "skeleton"},
                "mode": {"enum": ["fast", "slow"]}
            },
            "required": ["query", "skeleton"],
            "additionalProperties": false
        })
    }

    #[test]
    fn accepts_conforming_value() {
        let v = json!({"query": "q", "limit": 3, "tags": ["a"], "skeleton": {}, "mode": "fast"});
        assert!(validate(&schema(), &v).is_empty());
    }

    #[test]
    fn reports_each_violation() {
        let v = json!({"query": "", "limit": 99, "tags": ["a", 1, "c"], "extra": 1, "mode": "x"});
        let errs = validate(&schema(), &v);
        assert!(errs.iter().any(|e| e.contains("shorter")));
        assert!(errs.iter().any(|e| e.contains("maximum")));
        assert!(errs.iter().any(|e| e.contains("$.tags[1]")));
        assert!(errs.iter().any(|e| e.contains("more than 2")));
        assert!(errs.iter().any(|e| e.contains("unexpected field `extra`")));
        assert!(errs.iter().any(|e| e.contains("missing required field `skeleton`")));
        assert!(errs.iter().any(|e| e.contains("enum")));
    }

    #[test]
    fn bound_fields_may_be_left_to_the_agent() {
        let v = json!({"query": "q"});
        assert!(validate_unbound(&schema(), &v).is_empty());
        assert_eq!(validate(&schema(), &v).len(), 1);
        assert_eq!(validate_unbound(&schema(), &json!({})).len(), 1);
    }

    #[test]
    fn integer_rejects_fraction() {
        let s = json!({"type": "integer"});
        assert!(validate(&s, &json!(1.5)).len() == 1);
        assert!(validate(&s, &json!(2)).is_empty());
    }
}

//! Extraction and schema validation of model replies.

use super::prompt::{MERGE_SCHEMA, PRECEDENCE_SCHEMA};
use super::LlmError;
use crate::domain::VehicleId;
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrecedence {
    pub first: VehicleId,
    pub second: VehicleId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedReply {
    Precedences(Vec<ParsedPrecedence>),
    Merge(Vec<(VehicleId, usize)>),
}

/// The first complete JSON object or array in `raw` and its byte span.
pub fn extract_json(raw: &str) -> Result<(Value, (usize, usize)), LlmError> {
    for (start, ch) in raw.char_indices() {
        if ch != '{' && ch != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            return Ok((value, (start, start + stream.byte_offset())));
        }
    }
    Err(LlmError::ParseFailure {
        message: if raw.trim().is_empty() {
            "reply is empty".to_string()
        } else {
            "no JSON object or array found".to_string()
        },
        span: (0, raw.len()),
    })
}

fn violation(path: String, message: &str) -> LlmError {
    LlmError::SchemaViolation {
        path,
        message: message.to_string(),
    }
}

fn list<'a>(value: &'a Value, field: &str) -> Result<&'a Vec<Value>, LlmError> {
    match value {
        Value::Array(items) => Ok(items),
        Value::Object(map) => map
            .get(field)
            .and_then(Value::as_array)
            .ok_or_else(|| violation(field.to_string(), "missing or not an array")),
        _ => Err(violation("$".to_string(), "expected an object or array")),
    }
}

fn vehicle(item: &Value, path: String, known: &[VehicleId]) -> Result<VehicleId, LlmError> {
    let raw = item.as_u64().ok_or_else(|| violation(path.clone(), "expected a vehicle id"))?;
    let id = u32::try_from(raw)
        .map(VehicleId)
        .map_err(|_| violation(path.clone(), "vehicle id out of range"))?;
    if known.contains(&id) {
        Ok(id)
    } else {
        Err(violation(path, "unknown vehicle id"))
    }
}

/// Parses a reply against a registered schema; vehicle ids must be in
/// `known`.
pub fn parse_reply(raw: &str, schema_id: &str, known: &[VehicleId]) -> Result<ParsedReply, LlmError> {
    let (value, _) = extract_json(raw)?;
    match schema_id {
        PRECEDENCE_SCHEMA => {
            let items = list(&value, "precedences")?;
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                let at = |field: &str| format!("precedences[{i}].{field}");
                let first = vehicle(item.get("first").unwrap_or(&Value::Null), at("first"), known)?;
                let second = vehicle(item.get("second").unwrap_or(&Value::Null), at("second"), known)?;
                let reason = match item.get("reason") {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(_) => return Err(violation(at("reason"), "expected a string")),
                };
                out.push(ParsedPrecedence { first, second, reason });
            }
            Ok(ParsedReply::Precedences(out))
        }
        MERGE_SCHEMA => {
            let items = list(&value, "order")?;
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                let id = vehicle(item.get("id").unwrap_or(&Value::Null), format!("order[{i}].id"), known)?;
                let group = item
                    .get("group")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| violation(format!("order[{i}].group"), "expected a group index"))?;
                out.push((id, group as usize));
            }
            Ok(ParsedReply::Merge(out))
        }
        other => Err(violation("$schema".to_string(), &format!("unregistered schema {other}"))),
    }
}

/// Canonical JSON text of a reply.
pub fn render_reply(reply: &ParsedReply) -> String {
    let value = match reply {
        ParsedReply::Precedences(items) => json!({
            "precedences": items
                .iter()
                .map(|p| json!({"first": p.first.0, "second": p.second.0, "reason": p.reason}))
                .collect::<Vec<_>>()
        }),
        ParsedReply::Merge(items) => json!({
            "order": items.iter().map(|(id, g)| json!({"id": id.0, "group": g})).collect::<Vec<_>>()
        }),
    };
    value.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: u32) -> Vec<VehicleId> {
        (1..=n).map(VehicleId).collect()
    }

    #[test]
    fn fenced_json_with_prose() {
        let raw = "Sure, here is my decision.\n```json\n{\"precedences\": [{\"first\": 2, \"second\": 1, \"reason\": \"closer\"}]}\n```\nDrive safe!";
        let parsed = parse_reply(raw, PRECEDENCE_SCHEMA, &ids(2)).unwrap();
        assert_eq!(
            parsed,
            ParsedReply::Precedences(vec![ParsedPrecedence {
                first: VehicleId(2),
                second: VehicleId(1),
                reason: "closer".into()
            }])
        );
    }

    #[test]
    fn unknown_vehicle_is_a_schema_violation() {
        let raw = r#"{"precedences": [{"first": 1, "second": 9}]}"#;
        match parse_reply(raw, PRECEDENCE_SCHEMA, &ids(2)) {
            Err(LlmError::SchemaViolation { path, .. }) => assert_eq!(path, "precedences[0].second"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_reply_is_a_parse_failure() {
        assert!(matches!(
            parse_reply("", PRECEDENCE_SCHEMA, &ids(2)),
            Err(LlmError::ParseFailure { span: (0, 0), .. })
        ));
        assert!(matches!(
            parse_reply("no json here {", MERGE_SCHEMA, &ids(2)),
            Err(LlmError::ParseFailure { .. })
        ));
    }

    #[test]
    fn stray_brace_before_the_object_is_skipped() {
        let raw = "use {braces} like {\"order\": [{\"id\": 1, \"group\": 0}]}";
        let (_, span) = extract_json(raw).unwrap();
        assert_eq!(&raw[span.0..span.1], "{\"order\": [{\"id\": 1, \"group\": 0}]}");
        assert_eq!(
            parse_reply(raw, MERGE_SCHEMA, &ids(1)).unwrap(),
            ParsedReply::Merge(vec![(VehicleId(1), 0)])
        );
    }

    #[test]
    fn missing_group_is_reported_with_path() {
        let raw = r#"{"order": [{"id": 1, "group": 0}, {"id": 2}]}"#;
        assert!(matches!(
            parse_reply(raw, MERGE_SCHEMA, &ids(2)),
            Err(LlmError::SchemaViolation { ref path, .. }) if path == "order[1].group"
        ));
    }

    fn precedence_strategy() -> impl Strategy<Value = ParsedReply> {
        proptest::collection::vec((1u32..20, 1u32..20, "[a-z ]{0,12}"), 0..8).prop_map(|items| {
            ParsedReply::Precedences(
                items
                    .into_iter()
                    .map(|(a, b, reason)| ParsedPrecedence {
                        first: VehicleId(a),
                        second: VehicleId(b),
                        reason,
                    })
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn precedence_round_trip(reply in precedence_strategy()) {
            let text = render_reply(&reply);
            prop_assert_eq!(parse_reply(&text, PRECEDENCE_SCHEMA, &ids(20)).unwrap(), reply);
        }

        #[test]
        fn merge_round_trip(items in proptest::collection::vec((1u32..20, 0usize..5), 0..10)) {
            let reply = ParsedReply::Merge(items.into_iter().map(|(a, g)| (VehicleId(a), g)).collect());
            let text = format!("Here you go:\n```\n{}\n```", render_reply(&reply));
            prop_assert_eq!(parse_reply(&text, MERGE_SCHEMA, &ids(20)).unwrap(), reply);
        }
    }
}

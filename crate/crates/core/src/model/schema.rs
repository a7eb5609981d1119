use serde_json::{Map, Value};

use super::{ModelError, Snapshot};

/// How unknown keys in a snapshot document are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchemaMode {
    /// Unknown keys are an error.
    #[default]
    Strict,
    /// Unknown keys are dropped and reported as warnings.
    Lenient,
}

#[derive(Debug, Clone)]
pub struct Validated {
    pub snapshot: Snapshot,
    pub warnings: Vec<String>,
}

const TOP_KEYS: &[&str] = &["awc", "taken_at", "snapshot_id", "tickets", "crews", "withheld"];
const AWC_KEYS: &[&str] = &["code", "yard"];
const POINT_KEYS: &[&str] = &["lat", "lon"];
const TICKET_KEYS: &[&str] = &[
    "id",
    "awc",
    "location",
    "created_at",
    "customers",
    "category",
    "assessed_customers",
    "absorbed",
];
const CREW_KEYS: &[&str] = &[
    "id",
    "awc",
    "anchor",
    "anchor_confirmed_at",
    "availability",
    "frozen",
    "locked_to",
    "assigned_count",
    "shift_active",
];

struct KeyPolicy {
    mode: SchemaMode,
    warnings: Vec<String>,
}

impl KeyPolicy {
    fn prune(&mut self, obj: &mut Map<String, Value>, allowed: &[&str], path: &str) -> Result<(), ModelError> {
        let unknown: Vec<String> = obj.keys().filter(|k| !allowed.contains(&k.as_str())).cloned().collect();
        for key in unknown {
            match self.mode {
                SchemaMode::Strict => {
                    return Err(ModelError::Schema(format!("unknown key `{path}.{key}`")));
                }
                SchemaMode::Lenient => {
                    self.warnings.push(format!("ignored unknown key `{path}.{key}`"));
                    obj.remove(&key);
                }
            }
        }
        Ok(())
    }

    fn child(&mut self, obj: &mut Map<String, Value>, key: &str, allowed: &[&str], path: &str) -> Result<(), ModelError> {
        if let Some(Value::Object(inner)) = obj.get_mut(key) {
            self.prune(inner, allowed, &format!("{path}.{key}"))?;
        }
        Ok(())
    }

    fn array(
        &mut self,
        obj: &mut Map<String, Value>,
        key: &str,
        allowed: &[&str],
        point_key: &str,
    ) -> Result<(), ModelError> {
        if let Some(Value::Array(items)) = obj.get_mut(key) {
            for (i, item) in items.iter_mut().enumerate() {
                if let Value::Object(inner) = item {
                    let path = format!("{key}[{i}]");
                    self.prune(inner, allowed, &path)?;
                    self.child(inner, point_key, POINT_KEYS, &path)?;
                }
            }
        }
        Ok(())
    }
}

/// Parse and validate an untyped snapshot document.
///
/// Structural problems (missing fields, wrong types, unknown keys in strict
/// mode) are `Schema` errors; value-level problems are `Invariant` or
/// `AwcMismatch`. Nothing is coerced.
pub fn validate_snapshot(raw: &Value, mode: SchemaMode) -> Result<Validated, ModelError> {
    let mut doc = raw.clone();
    let Value::Object(top) = &mut doc else {
        return Err(ModelError::Schema("snapshot document must be a JSON object".into()));
    };
    let mut policy = KeyPolicy { mode, warnings: Vec::new() };
    policy.prune(top, TOP_KEYS, "$")?;
    if let Some(Value::Object(awc)) = top.get_mut("awc") {
        policy.prune(awc, AWC_KEYS, "awc")?;
        policy.child(awc, "yard", POINT_KEYS, "awc")?;
    }
    policy.array(top, "tickets", TICKET_KEYS, "location")?;
    policy.array(top, "crews", CREW_KEYS, "anchor")?;

    let snapshot: Snapshot = serde_json::from_value(doc).map_err(|e| {
        let msg = e.to_string();
        // Coordinate bounds are enforced inside GeoPoint deserialization.
        if msg.contains("latitude") || msg.contains("longitude") || msg.contains("not finite") {
            ModelError::Invariant(msg)
        } else {
            ModelError::Schema(msg)
        }
    })?;
    snapshot.check()?;
    Ok(Validated { snapshot, warnings: policy.warnings })
}

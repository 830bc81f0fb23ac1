use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, CodecError, Value};

use super::AttestationError;

/// Semantic type of a payload field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldType {
    Str,
    Int,
    Fixed,
    Bool,
    Bytes,
    Identity,
}

impl FieldType {
    fn name(self) -> &'static str {
        match self {
            FieldType::Str => "str",
            FieldType::Int => "int",
            FieldType::Fixed => "fixed",
            FieldType::Bool => "bool",
            FieldType::Bytes => "bytes",
            FieldType::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Result<Self, CodecError> {
        Ok(match s {
            "str" => FieldType::Str,
            "int" => FieldType::Int,
            "fixed" => FieldType::Fixed,
            "bool" => FieldType::Bool,
            "bytes" => FieldType::Bytes,
            "identity" => FieldType::Identity,
            other => return Err(CodecError::Shape(format!("unknown field type {other:?}"))),
        })
    }

    pub fn accepts(self, v: &Value) -> bool {
        matches!(
            (self, v),
            (FieldType::Str, Value::Str(_))
                | (FieldType::Int, Value::Int(_))
                | (FieldType::Fixed, Value::Fixed(_))
                | (FieldType::Bool, Value::Bool(_))
                | (FieldType::Bytes, Value::Bytes(_))
                | (FieldType::Identity, Value::Digest(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub id: String,
    pub fields: BTreeMap<String, FieldType>,
    pub revocable: bool,
}

impl Schema {
    pub fn new(id: impl Into<String>, revocable: bool) -> Self {
        Schema {
            id: id.into(),
            fields: BTreeMap::new(),
            revocable,
        }
    }

    pub fn with_field(mut self, name: impl Into<String>, ty: FieldType) -> Self {
        self.fields.insert(name.into(), ty);
        self
    }

    /// Payload must carry exactly the declared fields with matching types.
    pub fn check_payload(&self, payload: &BTreeMap<String, Value>) -> Result<(), AttestationError> {
        for (name, ty) in &self.fields {
            match payload.get(name) {
                None => {
                    return Err(AttestationError::SchemaViolation(format!(
                        "{}: missing field {name}",
                        self.id
                    )))
                }
                Some(v) if !ty.accepts(v) => {
                    return Err(AttestationError::SchemaViolation(format!(
                        "{}: field {name} is not {}",
                        self.id,
                        ty.name()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = payload.keys().find(|k| !self.fields.contains_key(*k)) {
            return Err(AttestationError::SchemaViolation(format!(
                "{}: undeclared field {extra}",
                self.id
            )));
        }
        Ok(())
    }
}

impl Canonical for Schema {
    fn to_value(&self) -> Value {
        Value::map([
            ("id", Value::str(&self.id)),
            (
                "fields",
                Value::map(
                    self.fields
                        .iter()
                        .map(|(k, t)| (k.as_bytes(), Value::str(t.name()))),
                ),
            ),
            ("revocable", Value::Bool(self.revocable)),
        ])
    }

    fn from_value(v: &Value) -> Result<Self, CodecError> {
        let fields = v
            .field("fields")?
            .as_map()?
            .iter()
            .map(|(k, t)| {
                let name = String::from_utf8(k.clone())
                    .map_err(|_| CodecError::Shape("field name not utf-8".into()))?;
                Ok((name, FieldType::parse(t.as_str()?)?))
            })
            .collect::<Result<_, CodecError>>()?;
        Ok(Schema {
            id: v.field("id")?.as_str()?.to_owned(),
            fields,
            revocable: v.field("revocable")?.as_bool()?,
        })
    }
}

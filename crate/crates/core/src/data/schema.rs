//! Field schema: ordered field descriptors with roles and arities.

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRole {
    /// The single ad-identity field.
    AdId,
    /// An intrinsic ad attribute (participates in graph creation and
    /// generator inputs).
    AdAttribute,
    /// Everything else: user and context features.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldArity {
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    pub name: String,
    pub role: FieldRole,
    pub arity: FieldArity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSchema {
    fields: Vec<FieldDef>,
    ad_id: usize,
    attrs: Vec<usize>,
    others: Vec<usize>,
}

impl FieldSchema {
    /// Validates that exactly one field is the ad identity and at least
    /// one is an ad attribute.
    pub fn new(fields: Vec<FieldDef>) -> Result<Self> {
        let ids: Vec<usize> = fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.role == FieldRole::AdId)
            .map(|(i, _)| i)
            .collect();
        if ids.len() != 1 {
            return Err(CoreError::Config(format!(
                "schema must contain exactly one ad-identity field, found {}",
                ids.len()
            )));
        }
        let attrs: Vec<usize> = fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.role == FieldRole::AdAttribute)
            .map(|(i, _)| i)
            .collect();
        if attrs.is_empty() {
            return Err(CoreError::Config("schema needs at least one ad-attribute field".into()));
        }
        let others = fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.role == FieldRole::Other)
            .map(|(i, _)| i)
            .collect();
        Ok(Self { fields, ad_id: ids[0], attrs, others })
    }

    pub fn field(name: &str, role: FieldRole, arity: FieldArity) -> FieldDef {
        FieldDef { name: name.to_string(), role, arity }
    }

    pub fn fields(&self) -> &[FieldDef] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn ad_id_field(&self) -> usize {
        self.ad_id
    }

    /// Schema indices of ad-attribute fields, in schema order.
    pub fn attr_fields(&self) -> &[usize] {
        &self.attrs
    }

    pub fn other_fields(&self) -> &[usize] {
        &self.others
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Stable description string used for schema hashing.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for f in &self.fields {
            let role = match f.role {
                FieldRole::AdId => "id",
                FieldRole::AdAttribute => "attr",
                FieldRole::Other => "other",
            };
            let arity = match f.arity {
                FieldArity::Single => "single",
                FieldArity::Multi => "multi",
            };
            s.push_str(&format!("{}:{}:{};", f.name, role, arity));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requires_exactly_one_id_field() {
        let err = FieldSchema::new(vec![
            FieldSchema::field("a", FieldRole::AdAttribute, FieldArity::Single),
        ]);
        assert!(err.is_err());

        let err = FieldSchema::new(vec![
            FieldSchema::field("id1", FieldRole::AdId, FieldArity::Single),
            FieldSchema::field("id2", FieldRole::AdId, FieldArity::Single),
            FieldSchema::field("a", FieldRole::AdAttribute, FieldArity::Single),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn requires_an_attribute_field() {
        let err = FieldSchema::new(vec![
            FieldSchema::field("id", FieldRole::AdId, FieldArity::Single),
            FieldSchema::field("u", FieldRole::Other, FieldArity::Single),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn index_helpers() {
        let s = FieldSchema::new(vec![
            FieldSchema::field("id", FieldRole::AdId, FieldArity::Single),
            FieldSchema::field("cat", FieldRole::AdAttribute, FieldArity::Single),
            FieldSchema::field("title", FieldRole::AdAttribute, FieldArity::Multi),
            FieldSchema::field("user", FieldRole::Other, FieldArity::Single),
        ])
        .unwrap();
        assert_eq!(s.ad_id_field(), 0);
        assert_eq!(s.attr_fields(), &[1, 2]);
        assert_eq!(s.other_fields(), &[3]);
    }
}

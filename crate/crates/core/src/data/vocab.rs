//! Per-field feature vocabularies with a reserved out-of-vocabulary slot.

use std::collections::HashMap;

use super::schema::FieldSchema;

/// Token-to-index maps, one per schema field. Indices are contiguous from
/// 0 in first-appearance order; the OOV index is one past the last token.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    fields: Vec<FieldVocab>,
}

#[derive(Debug, Clone, Default)]
struct FieldVocab {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(schema: &FieldSchema) -> Self {
        Self { fields: vec![FieldVocab::default(); schema.len()] }
    }

    /// Interns a token during vocabulary construction.
    pub fn intern(&mut self, field: usize, token: &str) -> u32 {
        let fv = &mut self.fields[field];
        if let Some(&i) = fv.index.get(token) {
            return i;
        }
        let i = fv.tokens.len() as u32;
        fv.index.insert(token.to_string(), i);
        fv.tokens.push(token.to_string());
        i
    }

    /// Encodes a token; unknown tokens map to the field's OOV index.
    pub fn encode(&self, field: usize, token: &str) -> u32 {
        let fv = &self.fields[field];
        fv.index.get(token).copied().unwrap_or(fv.tokens.len() as u32)
    }

    /// Decodes an index back to its token; the OOV index has none.
    pub fn decode(&self, field: usize, index: u32) -> Option<&str> {
        self.fields[field].tokens.get(index as usize).map(|s| s.as_str())
    }

    pub fn oov_index(&self, field: usize) -> u32 {
        self.fields[field].tokens.len() as u32
    }

    /// Number of distinct indices for a field, OOV slot included.
    pub fn size_with_oov(&self, field: usize) -> usize {
        self.fields[field].tokens.len() + 1
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Stable description used for schema hashing: per-field sizes only.
    pub fn describe_sizes(&self) -> String {
        self.fields
            .iter()
            .map(|f| f.tokens.len().to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FieldArity, FieldRole, FieldSchema};

    fn schema() -> FieldSchema {
        FieldSchema::new(vec![
            FieldSchema::field("id", FieldRole::AdId, FieldArity::Single),
            FieldSchema::field("cat", FieldRole::AdAttribute, FieldArity::Single),
        ])
        .unwrap()
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut v = Vocabulary::new(&schema());
        let i = v.intern(1, "shoes");
        assert_eq!(v.encode(1, "shoes"), i);
        assert_eq!(v.decode(1, i), Some("shoes"));
    }

    #[test]
    fn unknown_token_maps_to_oov() {
        let mut v = Vocabulary::new(&schema());
        v.intern(1, "shoes");
        assert_eq!(v.encode(1, "hats"), v.oov_index(1));
        assert_eq!(v.decode(1, v.oov_index(1)), None);
    }

    #[test]
    fn indices_are_contiguous_with_oov_last() {
        let mut v = Vocabulary::new(&schema());
        assert_eq!(v.intern(0, "a"), 0);
        assert_eq!(v.intern(0, "b"), 1);
        assert_eq!(v.intern(0, "a"), 0);
        assert_eq!(v.oov_index(0), 2);
        assert_eq!(v.size_with_oov(0), 3);
    }
}

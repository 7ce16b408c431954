//! Attribute reverse index over old ads and scored top-N neighbor
//! retrieval.
//!
//! The index maps (attribute field, token) to the sorted list of old ads
//! carrying that token; it is built in one pass and never rescans the
//! old-ad set at query time. A candidate's score is the number of
//! attribute fields in which it shares at least one token with the
//! query, so a many-token field (a title) cannot dominate the count.
//! Ties at the top-N boundary break uniformly at random.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::Rng;

use crate::data::{AdIdx, Dataset};
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GraphConfig {
    /// Schema indices of the attribute fields to index; `None` = all.
    pub fields: Option<Vec<usize>>,
    /// Postings carried by more than this fraction of old ads are
    /// dropped as non-discriminative. 1.0 disables dropping.
    pub common_token_fraction: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { fields: None, common_token_fraction: 0.2 }
    }
}

impl GraphConfig {
    pub fn keep_all_tokens() -> Self {
        Self { common_token_fraction: 1.0, ..Self::default() }
    }
}

/// (attr position within the indexed field list, token index)
type Key = (u16, u32);

#[derive(Debug)]
pub struct ReverseIndex {
    postings: HashMap<Key, Vec<AdIdx>>,
    dropped: HashSet<Key>,
    /// schema indices of the indexed attribute fields, in schema order
    fields: Vec<usize>,
    n_old_ads: usize,
}

/// Scored neighbors of one query, sorted by score descending.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub entries: Vec<(AdIdx, u32)>,
}

impl NeighborSet {
    pub fn ids(&self) -> impl Iterator<Item = AdIdx> + '_ {
        self.entries.iter().map(|&(id, _)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ReverseIndex {
    /// Single pass over the old ads present in `old`.
    pub fn build(old: &Dataset, config: &GraphConfig) -> Result<ReverseIndex> {
        let schema = old.schema();
        let fields = match &config.fields {
            Some(f) => {
                for &i in f {
                    if !schema.attr_fields().contains(&i) {
                        return Err(CoreError::Config(format!(
                            "field {i} is not an ad-attribute field"
                        )));
                    }
                }
                f.clone()
            }
            None => schema.attr_fields().to_vec(),
        };
        if fields.len() > 32 {
            return Err(CoreError::Config("more than 32 indexed attribute fields".into()));
        }

        let ads = old.ads_in_view();
        let mut postings: HashMap<Key, Vec<AdIdx>> = HashMap::new();
        for &ad in &ads {
            let record = old.core().ad(ad);
            for (pos, &field) in fields.iter().enumerate() {
                let attr_pos = attr_position(schema.attr_fields(), field);
                let mut seen = HashSet::new();
                for &tok in &record.attrs[attr_pos] {
                    if seen.insert(tok) {
                        match postings.entry((pos as u16, tok)) {
                            Entry::Occupied(mut e) => e.get_mut().push(ad),
                            Entry::Vacant(e) => {
                                e.insert(vec![ad]);
                            }
                        }
                    }
                }
            }
        }

        let limit = (config.common_token_fraction * ads.len() as f64).floor() as usize;
        let mut dropped = HashSet::new();
        if config.common_token_fraction < 1.0 {
            postings.retain(|key, list| {
                if list.len() > limit.max(1) {
                    dropped.insert(*key);
                    false
                } else {
                    true
                }
            });
        }
        Ok(ReverseIndex { postings, dropped, fields, n_old_ads: ads.len() })
    }

    pub fn fields(&self) -> &[usize] {
        &self.fields
    }

    pub fn n_old_ads(&self) -> usize {
        self.n_old_ads
    }

    /// True when the token was removed as too common to discriminate.
    pub fn is_dropped(&self, field_pos: usize, token: u32) -> bool {
        self.dropped.contains(&(field_pos as u16, token))
    }

    pub fn postings(&self, field_pos: usize, token: u32) -> Option<&[AdIdx]> {
        self.postings.get(&(field_pos as u16, token)).map(|v| v.as_slice())
    }

    /// Top-`n` neighbors for a query given as token lists per indexed
    /// field. Candidates come only from the query tokens' postings;
    /// each field contributes at most 1 to a candidate's score. Ties at
    /// the boundary break uniformly at random via `rng`; `exclude`
    /// removes the query ad itself when it is an old ad.
    pub fn retrieve<R: Rng>(
        &self,
        query: &[Vec<u32>],
        n: usize,
        rng: &mut R,
        exclude: Option<AdIdx>,
    ) -> NeighborSet {
        debug_assert_eq!(query.len(), self.fields.len());
        let mut masks: HashMap<AdIdx, u32> = HashMap::new();
        for (pos, tokens) in query.iter().enumerate() {
            let bit = 1u32 << pos;
            let mut seen = HashSet::new();
            for &tok in tokens {
                if !seen.insert(tok) {
                    continue;
                }
                if let Some(list) = self.postings.get(&(pos as u16, tok)) {
                    for &ad in list {
                        if Some(ad) != exclude {
                            *masks.entry(ad).or_insert(0) |= bit;
                        }
                    }
                }
            }
        }
        if n == 0 || masks.is_empty() {
            return NeighborSet { entries: Vec::new() };
        }
        // deterministic candidate order before random tie-keys
        let mut scored: Vec<(AdIdx, u32)> =
            masks.into_iter().map(|(ad, m)| (ad, m.count_ones())).collect();
        scored.sort_unstable_by_key(|&(ad, _)| ad);
        let mut keyed: Vec<(u32, u64, AdIdx)> =
            scored.iter().map(|&(ad, s)| (s, rng.gen::<u64>(), ad)).collect();
        keyed.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        keyed.truncate(n);
        NeighborSet { entries: keyed.into_iter().map(|(s, _, ad)| (ad, s)).collect() }
    }

    /// Query token lists for an ad record, restricted to indexed fields.
    pub fn query_of(&self, ds: &Dataset, ad: AdIdx) -> Vec<Vec<u32>> {
        let record = ds.core().ad(ad);
        let attr_fields = ds.schema().attr_fields();
        self.fields
            .iter()
            .map(|&f| record.attrs[attr_position(attr_fields, f)].clone())
            .collect()
    }

    /// Writes the index as sorted `field:token<TAB>id,id,...` lines for
    /// inspection. Not a stability-guaranteed format.
    pub fn write_text(&self, ds: &Dataset, out: &mut dyn Write) -> Result<()> {
        let schema = ds.schema();
        let vocab = ds.vocab();
        let mut lines = Vec::new();
        for (&(pos, tok), ads) in &self.postings {
            let field = self.fields[pos as usize];
            let name = &schema.fields()[field].name;
            let token = vocab.decode(field, tok).unwrap_or("?");
            let mut ids: Vec<&str> = ads
                .iter()
                .map(|&a| {
                    vocab
                        .decode(schema.ad_id_field(), ds.core().ad(a).id_index)
                        .unwrap_or("?")
                })
                .collect();
            ids.sort_unstable();
            lines.push(format!("{name}:{token}\t{}", ids.join(",")));
        }
        lines.sort_unstable();
        for l in lines {
            writeln!(out, "{l}")?;
        }
        Ok(())
    }
}

fn attr_position(attr_fields: &[usize], field: usize) -> usize {
    attr_fields.iter().position(|&f| f == field).expect("field is an attribute field")
}

/// Concatenated attribute embedding z for an ad: per ad-attribute field
/// in schema order, the mean-pooled token embeddings from the frozen
/// table. Length = (#attr fields) · d.
pub fn attr_concat_vector(
    table: &crate::model::EmbeddingTable,
    core: &crate::data::DatasetCore,
    ad: AdIdx,
) -> Tensor {
    let record = core.ad(ad);
    let attr_fields = core.schema.attr_fields();
    let mut data = Vec::with_capacity(attr_fields.len() * table.d());
    for (pos, &field) in attr_fields.iter().enumerate() {
        data.extend(table.pooled(field, &record.attrs[pos]));
    }
    Tensor::vector(data).expect("embeddings are finite")
}

/// Per-neighbor tensors for generator input: the pre-trained ID
/// embedding p_i and the attribute concat vector z_i of each neighbor,
/// in retrieval order.
pub fn neighbor_tensors(
    nbrs: &NeighborSet,
    table: &crate::model::EmbeddingTable,
    core: &crate::data::DatasetCore,
) -> (Vec<Tensor>, Vec<Tensor>) {
    let id_field = core.schema.ad_id_field();
    let mut ps = Vec::with_capacity(nbrs.len());
    let mut zs = Vec::with_capacity(nbrs.len());
    for ad in nbrs.ids() {
        let record = core.ad(ad);
        ps.push(
            Tensor::vector(table.row(id_field, record.id_index).to_vec())
                .expect("embeddings are finite"),
        );
        zs.push(attr_concat_vector(table, core, ad));
    }
    (ps, zs)
}

/// Reference scorer: scans every old ad and counts, per the same
/// per-field rule and dropped-token set, how many fields share a token
/// with the query. Used as the retrieval oracle in tests.
pub fn brute_force_scores(
    index: &ReverseIndex,
    old: &Dataset,
    query: &[Vec<u32>],
    exclude: Option<AdIdx>,
) -> Vec<(AdIdx, u32)> {
    let attr_fields = old.schema().attr_fields().to_vec();
    let mut out = Vec::new();
    for ad in old.ads_in_view() {
        if Some(ad) == exclude {
            continue;
        }
        let record = old.core().ad(ad);
        let mut score = 0u32;
        for (pos, &field) in index.fields().iter().enumerate() {
            let mine = &record.attrs[attr_position(&attr_fields, field)];
            let shares = query[pos].iter().any(|qt| {
                !index.is_dropped(pos, *qt)
                    && mine.contains(qt)
            });
            if shares {
                score += 1;
            }
        }
        if score > 0 {
            out.push((ad, score));
        }
    }
    out
}

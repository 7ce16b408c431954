//! Labeled impression storage and the old/new/warm-up/test splits.
//!
//! Samples are interned at ingestion time: each distinct ad keeps one
//! attribute record and each distinct combination of other features keeps
//! one record, so a row is just (label, ad ref, other ref). Split
//! datasets are views sharing one immutable [`DatasetCore`].

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::schema::{FieldRole, FieldSchema};
use super::vocab::Vocabulary;
use crate::error::{CoreError, Result};

/// Dense per-corpus ad index (not the vocab index of the ad-id token).
pub type AdIdx = u32;

/// One labeled impression with raw tokens, used at ingestion and for
/// decode round-trips. `fields[i]` holds the tokens of schema field `i`
/// in order, with multiplicity preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: bool,
    pub fields: Vec<Vec<String>>,
}

/// Interned intrinsic record of one ad.
#[derive(Debug, Clone)]
pub struct AdRecord {
    /// Vocab index of the ad-id token in the ad-identity field.
    pub id_index: u32,
    /// Token indices per ad-attribute field, in schema attr order.
    pub attrs: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
struct OtherRecord {
    feats: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Row {
    pub label: bool,
    pub ad: AdIdx,
    other: u32,
}

/// Immutable interned corpus shared by every dataset view.
#[derive(Debug)]
pub struct DatasetCore {
    pub schema: FieldSchema,
    pub vocab: Vocabulary,
    ads: Vec<AdRecord>,
    others: Vec<OtherRecord>,
    /// position of each schema field inside its role group
    role_pos: Vec<(FieldRole, usize)>,
}

impl DatasetCore {
    pub fn ads(&self) -> &[AdRecord] {
        &self.ads
    }

    pub fn ad(&self, idx: AdIdx) -> &AdRecord {
        &self.ads[idx as usize]
    }

    pub fn n_ads(&self) -> usize {
        self.ads.len()
    }
}

/// Token indices of one encoded sample, resolvable per schema field.
#[derive(Clone, Copy)]
pub struct EncodedSampleRef<'a> {
    core: &'a DatasetCore,
    pub label: f64,
    pub ad: AdIdx,
    other: u32,
}

impl<'a> EncodedSampleRef<'a> {
    /// Token indices of schema field `field`, in order.
    pub fn field_tokens(&self, field: usize) -> &'a [u32] {
        let (role, pos) = self.core.role_pos[field];
        match role {
            FieldRole::AdId => {
                let ad = &self.core.ads[self.ad as usize];
                std::slice::from_ref(&ad.id_index)
            }
            FieldRole::AdAttribute => &self.core.ads[self.ad as usize].attrs[pos],
            FieldRole::Other => &self.core.others[self.other as usize].feats[pos],
        }
    }

    pub fn n_fields(&self) -> usize {
        self.core.role_pos.len()
    }
}

/// A view over the interned corpus: an ordered list of rows plus per-ad
/// row groupings. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    core: Arc<DatasetCore>,
    rows: Vec<Row>,
    by_ad: HashMap<AdIdx, Vec<u32>>,
}

impl Dataset {
    /// Interns raw samples into a dataset, building the vocabulary in
    /// first-appearance order. The first occurrence of an ad defines its
    /// attribute record; later rows that disagree are counted.
    pub fn from_samples<I>(schema: FieldSchema, samples: I) -> Result<(Dataset, usize)>
    where
        I: IntoIterator<Item = Sample>,
    {
        let mut vocab = Vocabulary::new(&schema);
        let mut ads: Vec<AdRecord> = Vec::new();
        let mut ad_by_id: HashMap<u32, AdIdx> = HashMap::new();
        let mut others: Vec<OtherRecord> = Vec::new();
        let mut other_by_key: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut rows = Vec::new();
        let mut attr_conflicts = 0usize;

        let id_field = schema.ad_id_field();
        let attr_fields: Vec<usize> = schema.attr_fields().to_vec();
        let other_fields: Vec<usize> = schema.other_fields().to_vec();

        for sample in samples {
            if sample.fields.len() != schema.len() {
                return Err(CoreError::Config(format!(
                    "sample has {} fields, schema has {}",
                    sample.fields.len(),
                    schema.len()
                )));
            }
            let id_tokens = &sample.fields[id_field];
            if id_tokens.len() != 1 {
                return Err(CoreError::Config(format!(
                    "ad-identity field must hold exactly one token, got {}",
                    id_tokens.len()
                )));
            }
            let id_index = vocab.intern(id_field, &id_tokens[0]);

            let attrs: Vec<Vec<u32>> = attr_fields
                .iter()
                .map(|&f| encode_field(&mut vocab, f, &sample.fields[f]))
                .collect();

            let ad = match ad_by_id.get(&id_index) {
                Some(&idx) => {
                    if ads[idx as usize].attrs != attrs {
                        attr_conflicts += 1;
                    }
                    idx
                }
                None => {
                    let idx = ads.len() as AdIdx;
                    ads.push(AdRecord { id_index, attrs });
                    ad_by_id.insert(id_index, idx);
                    idx
                }
            };

            let feats: Vec<Vec<u32>> = other_fields
                .iter()
                .map(|&f| encode_field(&mut vocab, f, &sample.fields[f]))
                .collect();
            let mut key = Vec::new();
            for f in &feats {
                key.extend_from_slice(f);
                key.push(u32::MAX);
            }
            let other = match other_by_key.get(&key) {
                Some(&i) => i,
                None => {
                    let i = others.len() as u32;
                    others.push(OtherRecord { feats });
                    other_by_key.insert(key, i);
                    i
                }
            };

            rows.push(Row { label: sample.label, ad, other });
        }

        let role_pos = compute_role_pos(&schema);
        let core = Arc::new(DatasetCore { schema, vocab, ads, others, role_pos });
        Ok((Dataset::from_rows(core, rows), attr_conflicts))
    }

    fn from_rows(core: Arc<DatasetCore>, rows: Vec<Row>) -> Dataset {
        let mut by_ad: HashMap<AdIdx, Vec<u32>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            by_ad.entry(r.ad).or_default().push(i as u32);
        }
        Dataset { core, rows, by_ad }
    }

    pub fn core(&self) -> &Arc<DatasetCore> {
        &self.core
    }

    pub fn schema(&self) -> &FieldSchema {
        &self.core.schema
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.core.vocab
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn encoded(&self, row: usize) -> EncodedSampleRef<'_> {
        let r = &self.rows[row];
        EncodedSampleRef {
            core: &self.core,
            label: if r.label { 1.0 } else { 0.0 },
            ad: r.ad,
            other: r.other,
        }
    }

    /// Ads present in this view, ascending.
    pub fn ads_in_view(&self) -> Vec<AdIdx> {
        let mut v: Vec<AdIdx> = self.by_ad.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Row indices of an ad, in view order.
    pub fn rows_of(&self, ad: AdIdx) -> &[u32] {
        self.by_ad.get(&ad).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn ad_count(&self, ad: AdIdx) -> usize {
        self.rows_of(ad).len()
    }

    fn view(&self, row_indices: Vec<u32>) -> Dataset {
        let rows = row_indices.iter().map(|&i| self.rows[i as usize]).collect();
        Dataset::from_rows(Arc::clone(&self.core), rows)
    }

    /// Ads with strictly more than `threshold` rows go to the old
    /// dataset, the rest to the new one.
    pub fn split_old_new(&self, threshold: usize) -> Result<(Dataset, Dataset)> {
        let mut old_rows = Vec::new();
        let mut new_rows = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            if self.ad_count(r.ad) > threshold {
                old_rows.push(i as u32);
            } else {
                new_rows.push(i as u32);
            }
        }
        if old_rows.is_empty() || new_rows.is_empty() {
            return Err(CoreError::Config(format!(
                "old/new split at threshold {threshold} left a partition empty \
                 (old {} rows, new {} rows)",
                old_rows.len(),
                new_rows.len()
            )));
        }
        Ok((self.view(old_rows), self.view(new_rows)))
    }

    /// Splits each eligible new ad's rows, in view order, into
    /// `warm_rounds` rounds of `per_round` samples followed by held-out
    /// test samples. An ad is eligible when it has at least
    /// `warm_rounds * per_round + min_test` rows; others are excluded
    /// from the protocol entirely (reported in the returned counts).
    /// With `warm_rounds == 0` every row goes to the test side.
    pub fn partition_new_ads(
        &self,
        warm_rounds: usize,
        per_round: usize,
        min_test: usize,
    ) -> NewAdPartition {
        if warm_rounds == 0 {
            return NewAdPartition {
                rounds: Vec::new(),
                test: self.view((0..self.rows.len() as u32).collect()),
                excluded_ads: 0,
                excluded_rows: 0,
            };
        }
        let need = warm_rounds * per_round + min_test.max(1);
        let mut round_rows: Vec<Vec<u32>> = vec![Vec::new(); warm_rounds];
        let mut test_rows = Vec::new();
        let mut excluded_ads = 0usize;
        let mut excluded_rows = 0usize;
        for ad in self.ads_in_view() {
            let rows = self.rows_of(ad);
            if rows.len() < need {
                excluded_ads += 1;
                excluded_rows += rows.len();
                continue;
            }
            for (k, chunk) in rows[..warm_rounds * per_round].chunks(per_round).enumerate() {
                round_rows[k].extend_from_slice(chunk);
            }
            test_rows.extend_from_slice(&rows[warm_rounds * per_round..]);
        }
        NewAdPartition {
            rounds: round_rows.into_iter().map(|r| self.view(r)).collect(),
            test: self.view(test_rows),
            excluded_ads,
            excluded_rows,
        }
    }

    /// Draws two disjoint minibatches of `m` rows each for one ad,
    /// uniformly without replacement. Returns `None` when the ad has
    /// fewer than `2m` rows in this view (the caller reports the skip).
    pub fn sample_disjoint_minibatches<R: Rng>(
        &self,
        ad: AdIdx,
        m: usize,
        rng: &mut R,
    ) -> Option<(Vec<u32>, Vec<u32>)> {
        let rows = self.rows_of(ad);
        if m == 0 || rows.len() < 2 * m {
            return None;
        }
        // partial Fisher-Yates: the first 2m slots become the draw
        let mut idx: Vec<u32> = rows.to_vec();
        for i in 0..2 * m {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        let d_a = idx[..m].to_vec();
        let d_b = idx[m..2 * m].to_vec();
        Some((d_a, d_b))
    }

    /// Decodes a row back into raw tokens (OOV indices decode to "?").
    pub fn decode_row(&self, row: usize) -> Sample {
        let enc = self.encoded(row);
        let fields = (0..self.schema().len())
            .map(|f| {
                enc.field_tokens(f)
                    .iter()
                    .map(|&t| self.vocab().decode(f, t).unwrap_or("?").to_string())
                    .collect()
            })
            .collect();
        Sample { label: self.rows[row].label, fields }
    }

    // ── CSV serialization (synthetic corpora) ───────────────────────

    /// Writes `label` plus one column per schema field; multi-valued
    /// tokens are joined by `|`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let names: Vec<&str> = self.schema().fields().iter().map(|f| f.name.as_str()).collect();
        writeln!(out, "label,{}", names.join(","))?;
        for i in 0..self.len() {
            let s = self.decode_row(i);
            let cols: Vec<String> = s.fields.iter().map(|toks| toks.join("|")).collect();
            writeln!(out, "{},{}", if s.label { 1 } else { 0 }, cols.join(","))?;
        }
        Ok(())
    }

    /// Reads a corpus written by [`Dataset::write_csv`].
    pub fn read_csv(schema: FieldSchema, path: &std::path::Path) -> Result<Dataset> {
        use std::io::BufRead;
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Config("empty csv".into()))??;
        let expect = format!(
            "label,{}",
            schema.fields().iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(",")
        );
        if header != expect {
            return Err(CoreError::Config(format!(
                "csv header {header:?} does not match schema header {expect:?}"
            )));
        }
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != schema.len() + 1 {
                return Err(CoreError::Config(format!(
                    "csv row has {} columns, expected {}",
                    cols.len(),
                    schema.len() + 1
                )));
            }
            let label = match cols[0] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(CoreError::Config(format!("bad label {other:?}")));
                }
            };
            let fields = cols[1..]
                .iter()
                .map(|c| c.split('|').map(|t| t.to_string()).collect())
                .collect();
            samples.push(Sample { label, fields });
        }
        let (ds, _) = Dataset::from_samples(schema, samples)?;
        Ok(ds)
    }
}

/// Result of [`Dataset::partition_new_ads`].
pub struct NewAdPartition {
    pub rounds: Vec<Dataset>,
    pub test: Dataset,
    pub excluded_ads: usize,
    pub excluded_rows: usize,
}

fn encode_field(vocab: &mut Vocabulary, field: usize, tokens: &[String]) -> Vec<u32> {
    if tokens.is_empty() {
        // an empty multi-valued field still needs one index to pool over
        return vec![vocab.oov_index(field)];
    }
    tokens.iter().map(|t| vocab.intern(field, t)).collect()
}

fn compute_role_pos(schema: &FieldSchema) -> Vec<(FieldRole, usize)> {
    let mut attr_pos = 0usize;
    let mut other_pos = 0usize;
    schema
        .fields()
        .iter()
        .map(|f| match f.role {
            FieldRole::AdId => (FieldRole::AdId, 0),
            FieldRole::AdAttribute => {
                let p = attr_pos;
                attr_pos += 1;
                (FieldRole::AdAttribute, p)
            }
            FieldRole::Other => {
                let p = other_pos;
                other_pos += 1;
                (FieldRole::Other, p)
            }
        })
        .collect()
}

//! The base DNN click model: per-field embedding lookup with mean
//! pooling, concatenation in schema order, a tanh FC stack, and a
//! sigmoid output trained with mean cross-entropy.
//!
//! A trained model is frozen by construction everywhere downstream:
//! generators and evaluation receive `&BaseModel` and enter its
//! parameters on tapes as constants, so no code path can write them.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::checkpoint::{fnv1a, hash_tensors, TensorArchive};
use crate::data::{Dataset, DatasetCore, EncodedSampleRef};
use crate::error::{CoreError, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::stream_rng;
use crate::tape::{bce_mean_value, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding dimension d shared by every field.
    pub embedding_dim: usize,
    /// Hidden FC widths; each layer uses tanh.
    pub hidden: Vec<usize>,
    /// Embeddings initialize uniformly in [-embed_init, embed_init].
    pub embed_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embedding_dim: 10, hidden: vec![128, 64], embed_init: 0.01 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 256,
            epochs: 5,
            seed: 0,
        }
    }
}

/// Per-field embedding matrices, one row per feature index (OOV row
/// last), all sharing one dimension d.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    fields: Vec<Tensor>,
    d: usize,
}

impl EmbeddingTable {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn field(&self, field: usize) -> &Tensor {
        &self.fields[field]
    }

    #[cfg(test)]
    pub(crate) fn fields_mut(&mut self) -> &mut [Tensor] {
        &mut self.fields
    }

    pub fn row(&self, field: usize, index: u32) -> &[f64] {
        self.fields[field].row(index as usize)
    }

    /// Mean-pooled embedding of a token list, as an owned vector.
    pub fn pooled(&self, field: usize, tokens: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for &t in tokens {
            for (o, v) in out.iter_mut().zip(self.row(field, t)) {
                *o += v;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    /// (weight [out, in], bias [out]) per hidden layer.
    pub layers: Vec<(Tensor, Tensor)>,
    /// Final scalar logit: dot(out_w, h) + out_b.
    pub out_w: Tensor,
    pub out_b: Tensor,
}

/// The frozen parameter set Θ: embeddings plus MLP weights, tied to the
/// schema/vocabulary it was built against.
#[derive(Debug, Clone)]
pub struct BaseModel {
    pub config: ModelConfig,
    pub table: EmbeddingTable,
    pub mlp: MlpParams,
    schema_hash: u64,
    n_fields: usize,
}

impl BaseModel {
    /// Freshly initialized parameters: embeddings uniform in
    /// [-embed_init, embed_init], FC weights scaled-uniform by fan-in,
    /// biases zero.
    pub fn init(core: &DatasetCore, config: &ModelConfig, seed: u64) -> BaseModel {
        let mut rng = stream_rng(seed, "base-init", &[]);
        let d = config.embedding_dim;
        let n_fields = core.schema.len();

        let fields: Vec<Tensor> = (0..n_fields)
            .map(|f| {
                let rows = core.vocab.size_with_oov(f);
                let r = config.embed_init;
                let data: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-r..=r)).collect();
                Tensor::matrix(rows, d, data).expect("finite init")
            })
            .collect();

        let mut widths = vec![n_fields * d];
        widths.extend_from_slice(&config.hidden);
        let mut layers = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            layers.push((
                Tensor::matrix(fan_out, fan_in, data).expect("finite init"),
                Tensor::zeros(&[fan_out]),
            ));
        }
        let last = *widths.last().expect("at least the input width");
        let bound = 1.0 / (last as f64).sqrt();
        let out_w = Tensor::vector((0..last).map(|_| rng.gen_range(-bound..=bound)).collect())
            .expect("finite init");
        let out_b = Tensor::zeros(&[1]);

        BaseModel {
            config: config.clone(),
            table: EmbeddingTable { fields, d },
            mlp: MlpParams { layers, out_w, out_b },
            schema_hash: schema_hash(core, d),
            n_fields,
        }
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn d(&self) -> usize {
        self.table.d
    }

    /// Every parameter tensor, in a stable order (used for hashing).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.table.fields.iter().collect();
        for (w, b) in &self.mlp.layers {
            v.push(w);
            v.push(b);
        }
        v.push(&self.mlp.out_w);
        v.push(&self.mlp.out_b);
        v
    }

    /// Bit-exact hash over all parameters; the freeze invariant checks
    /// this before and after generator training.
    pub fn params_hash(&self) -> u64 {
        hash_tensors(self.params())
    }

    // ── tape forward ─────────────────────────────────────────────────

    /// Enters Θ on a tape, as leaves when `trainable` or as constants
    /// otherwise. Embedding rows are entered lazily and deduplicated per
    /// (field, index) so gradients accumulate per row.
    pub fn bind<'m>(&'m self, tape: &mut Tape, trainable: bool) -> TapeBinding<'m> {
        let enter = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers: Vec<(NodeId, NodeId)> = self
            .mlp
            .layers
            .iter()
            .map(|(w, b)| (enter(tape, w), enter(tape, b)))
            .collect();
        let out_w = enter(tape, &self.mlp.out_w);
        let out_b = enter(tape, &self.mlp.out_b);
        TapeBinding { model: self, trainable, rows: HashMap::new(), layers, out_w, out_b }
    }

    /// Sigmoid click probability for one encoded sample. The ad-ID slot
    /// of the concatenation can be overridden with `(id_field, node)`,
    /// substituting an externally generated initial embedding.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        binding: &mut TapeBinding<'_>,
        enc: EncodedSampleRef<'_>,
        id_override: Option<(usize, NodeId)>,
    ) -> Result<NodeId> {
        debug_assert_eq!(enc.n_fields(), self.n_fields);
        let mut parts = Vec::with_capacity(self.n_fields);
        for f in 0..self.n_fields {
            if let Some((id_field, r0)) = id_override {
                if f == id_field {
                    if tape.value(r0).len() != self.d() {
                        return Err(CoreError::ShapeMismatch {
                            op: "forward_with_id_embedding",
                            left: vec![self.d()],
                            right: tape.value(r0).shape().to_vec(),
                        });
                    }
                    parts.push(r0);
                    continue;
                }
            }
            let tokens = enc.field_tokens(f);
            let pooled = if tokens.len() == 1 {
                binding.row_node(tape, f, tokens[0])?
            } else {
                let nodes: Vec<NodeId> = tokens
                    .iter()
                    .map(|&t| binding.row_node(tape, f, t))
                    .collect::<Result<_>>()?;
                tape.mean_n(&nodes)?
            };
            parts.push(pooled);
        }
        let mut h = tape.concat(&parts)?;
        for &(w, b) in &binding.layers {
            let lin = tape.matvec(w, h)?;
            let biased = tape.add(lin, b)?;
            h = tape.tanh(biased)?;
        }
        let logit = tape.dot(binding.out_w, h)?;
        let logit = tape.add(logit, binding.out_b)?;
        tape.sigmoid(logit)
    }

    // ── tape-free scoring ────────────────────────────────────────────

    pub fn scorer(&self) -> Scorer<'_> {
        Scorer::new(self)
    }

    // ── persistence ──────────────────────────────────────────────────

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut archive = TensorArchive::new("base-model", self.schema_hash);
        for (f, t) in self.table.fields.iter().enumerate() {
            archive.push(&format!("embed.{f}"), t.clone());
        }
        for (i, (w, b)) in self.mlp.layers.iter().enumerate() {
            archive.push(&format!("mlp.w{i}"), w.clone());
            archive.push(&format!("mlp.b{i}"), b.clone());
        }
        archive.push("mlp.out_w", self.mlp.out_w.clone());
        archive.push("mlp.out_b", self.mlp.out_b.clone());
        archive.write(path)
    }

    /// Loads a checkpoint and verifies it belongs to the given corpus
    /// (same schema, vocabulary sizes, and embedding dimension).
    pub fn load_checkpoint(path: &Path, core: &DatasetCore, config: &ModelConfig) -> Result<BaseModel> {
        let mut archive = TensorArchive::read(path)?;
        if archive.kind != "base-model" {
            return Err(CoreError::Checkpoint(format!(
                "{}: kind {:?} is not a base model",
                path.display(),
                archive.kind
            )));
        }
        let expect = schema_hash(core, config.embedding_dim);
        if archive.schema_hash != expect {
            return Err(CoreError::Checkpoint(format!(
                "{}: schema hash {:#x} does not match this corpus ({expect:#x})",
                path.display(),
                archive.schema_hash
            )));
        }
        let d = config.embedding_dim;
        let n_fields = core.schema.len();
        let mut fields = Vec::with_capacity(n_fields);
        for f in 0..n_fields {
            let t = archive
                .take(&format!("embed.{f}"))
                .ok_or_else(|| CoreError::Checkpoint(format!("missing embed.{f}")))?;
            let rows = core.vocab.size_with_oov(f);
            if t.shape() != [rows, d] {
                return Err(CoreError::Checkpoint(format!(
                    "embed.{f} has shape {:?}, corpus needs [{rows}, {d}]",
                    t.shape()
                )));
            }
            fields.push(t);
        }
        let mut layers = Vec::new();
        let mut i = 0;
        while let Some(w) = archive.take(&format!("mlp.w{i}")) {
            let b = archive
                .take(&format!("mlp.b{i}"))
                .ok_or_else(|| CoreError::Checkpoint(format!("missing mlp.b{i}")))?;
            layers.push((w, b));
            i += 1;
        }
        let out_w = archive
            .take("mlp.out_w")
            .ok_or_else(|| CoreError::Checkpoint("missing mlp.out_w".into()))?;
        let out_b = archive
            .take("mlp.out_b")
            .ok_or_else(|| CoreError::Checkpoint("missing mlp.out_b".into()))?;
        let hidden: Vec<usize> = layers.iter().map(|(w, _)| w.shape()[0]).collect();
        Ok(BaseModel {
            config: ModelConfig { hidden, ..config.clone() },
            table: EmbeddingTable { fields, d },
            mlp: MlpParams { layers, out_w, out_b },
            schema_hash: expect,
            n_fields,
        })
    }
}

/// Mean cross-entropy over a prediction batch (the training objective
/// and the evaluation loss share this definition, clamping included).
pub fn loss_eq1(preds: &[f64], labels: &[f64]) -> f64 {
    bce_mean_value(preds, labels)
}

/// Θ entered on one tape, with lazily deduplicated embedding rows.
pub struct TapeBinding<'m> {
    model: &'m BaseModel,
    trainable: bool,
    rows: HashMap<(u16, u32), NodeId>,
    layers: Vec<(NodeId, NodeId)>,
    out_w: NodeId,
    out_b: NodeId,
}

impl<'m> TapeBinding<'m> {
    fn row_node(&mut self, tape: &mut Tape, field: usize, token: u32) -> Result<NodeId> {
        let key = (field as u16, token);
        if let Some(&id) = self.rows.get(&key) {
            return Ok(id);
        }
        let row = self.model.table.row(field, token);
        let t = Tensor::vector(row.to_vec())?;
        let id = if self.trainable { tape.leaf(t) } else { tape.constant(t) };
        self.rows.insert(key, id);
        Ok(id)
    }

    /// (field, token) -> leaf, for routing gradients back to table rows.
    pub fn embedding_nodes(&self) -> &HashMap<(u16, u32), NodeId> {
        &self.rows
    }

    pub fn layer_nodes(&self) -> (&[(NodeId, NodeId)], NodeId, NodeId) {
        (&self.layers, self.out_w, self.out_b)
    }
}

/// Reusable tape-free forward pass for scoring.
pub struct Scorer<'m> {
    model: &'m BaseModel,
    input: Vec<f64>,
    bufs: [Vec<f64>; 2],
}

impl<'m> Scorer<'m> {
    fn new(model: &'m BaseModel) -> Self {
        Self { model, input: Vec::new(), bufs: [Vec::new(), Vec::new()] }
    }

    /// Click probability with the stored ID embedding.
    pub fn predict(&mut self, enc: EncodedSampleRef<'_>, id_field: usize) -> f64 {
        let row = self.model.table.row(id_field, enc.field_tokens(id_field)[0]).to_vec();
        self.predict_with_id(enc, id_field, &row)
    }

    /// Click probability with the ad-ID slot replaced by `r0`.
    pub fn predict_with_id(
        &mut self,
        enc: EncodedSampleRef<'_>,
        id_field: usize,
        r0: &[f64],
    ) -> f64 {
        let model = self.model;
        let d = model.d();
        debug_assert_eq!(r0.len(), d);
        self.input.clear();
        for f in 0..model.n_fields {
            if f == id_field {
                self.input.extend_from_slice(r0);
                continue;
            }
            let tokens = enc.field_tokens(f);
            if tokens.len() == 1 {
                self.input.extend_from_slice(model.table.row(f, tokens[0]));
            } else {
                let start = self.input.len();
                self.input.resize(start + d, 0.0);
                for &t in tokens {
                    let row = model.table.row(f, t);
                    for (o, v) in self.input[start..].iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let inv = 1.0 / tokens.len() as f64;
                for o in self.input[start..].iter_mut() {
                    *o *= inv;
                }
            }
        }

        let mut cur: &[f64] = &self.input;
        let mut flip = 0;
        for (w, b) in &model.mlp.layers {
            let rows = w.shape()[0];
            let out = &mut self.bufs[flip];
            out.clear();
            for r in 0..rows {
                let dot: f64 = w.row(r).iter().zip(cur).map(|(a, b)| a * b).sum();
                out.push((dot + b.data()[r]).tanh());
            }
            cur = unsafe { std::slice::from_raw_parts(out.as_ptr(), out.len()) };
            flip = 1 - flip;
        }
        let logit: f64 = model.mlp.out_w.data().iter().zip(cur).map(|(a, b)| a * b).sum::<f64>()
            + model.mlp.out_b.data()[0];
        sigmoid(logit)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn schema_hash(core: &DatasetCore, d: usize) -> u64 {
    fnv1a(&[
        core.schema.describe().as_bytes(),
        core.vocab.describe_sizes().as_bytes(),
        &(d as u64).to_le_bytes(),
    ])
}

/// Mean cross-entropy over `rows` with the ad-ID slot overridden by
/// `r0`, plus the exact gradient of that loss with respect to `r0`.
/// Θ stays frozen (entered as constants).
pub fn batch_loss_with_id(
    model: &BaseModel,
    ds: &Dataset,
    rows: &[u32],
    r0: &Tensor,
) -> Result<(f64, Tensor)> {
    let id_field = ds.schema().ad_id_field();
    let mut tape = Tape::new();
    let r0_node = tape.leaf(r0.clone());
    let mut binding = model.bind(&mut tape, false);
    let mut preds = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for &r in rows {
        let enc = ds.encoded(r as usize);
        preds.push(model.forward_on_tape(&mut tape, &mut binding, enc, Some((id_field, r0_node)))?);
        labels.push(enc.label);
    }
    let batch = tape.concat(&preds)?;
    let loss = tape.bce_mean(batch, &labels)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item()?, grads.get(r0_node, &tape)))
}

/// One epoch log line of [`train_base`].
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Minibatch Adam on the mean cross-entropy over the old dataset.
/// Deterministic under (config, seed).
pub fn train_base(
    old: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(BaseModel, Vec<EpochLog>)> {
    if old.is_empty() {
        return Err(CoreError::Config("cannot train on an empty dataset".into()));
    }
    let mut model = BaseModel::init(old.core(), model_cfg, train_cfg.seed);

    let mut embed_states: Vec<AdamState> = model
        .table
        .fields
        .iter()
        .map(|t| AdamState::new(train_cfg.optimizer, t.shape()))
        .collect();
    let mut layer_states: Vec<(AdamState, AdamState)> = model
        .mlp
        .layers
        .iter()
        .map(|(w, b)| {
            (
                AdamState::new(train_cfg.optimizer, w.shape()),
                AdamState::new(train_cfg.optimizer, b.shape()),
            )
        })
        .collect();
    let mut out_w_state = AdamState::new(train_cfg.optimizer, model.mlp.out_w.shape());
    let mut out_b_state = AdamState::new(train_cfg.optimizer, model.mlp.out_b.shape());

    let mut log = Vec::new();
    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<u32> = (0..old.len() as u32).collect();
        let mut shuffle_rng = stream_rng(train_cfg.seed, "base-shuffle", &[epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch in order.chunks(train_cfg.batch_size) {
            let mut tape = Tape::new();
            let mut binding = model.bind(&mut tape, true);
            let mut preds = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &r in batch {
                let enc = old.encoded(r as usize);
                preds.push(model.forward_on_tape(&mut tape, &mut binding, enc, None)?);
                labels.push(enc.label);
            }
            let batch_node = tape.concat(&preds)?;
            let loss = tape.bce_mean(batch_node, &labels)?;
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "loss became non-finite in epoch {epoch}"
                )));
            }
            loss_sum += loss_val;
            n_batches += 1;

            let grads = tape.backward(loss)?;

            let mut keys: Vec<((u16, u32), NodeId)> =
                binding.embedding_nodes().iter().map(|(k, v)| (*k, *v)).collect();
            keys.sort_unstable_by_key(|(k, _)| *k);
            let (layers, out_w, out_b) = {
                let (l, w, b) = binding.layer_nodes();
                (l.to_vec(), w, b)
            };
            drop(binding);

            // embedding rows: sparse per-row updates, grouped per field
            let mut touched: Vec<Vec<(usize, &[f64])>> = vec![Vec::new(); model.table.fields.len()];
            for ((field, token), node) in keys {
                if let Some(g) = grads.get_opt(node) {
                    touched[field as usize].push((token as usize, g.data()));
                }
            }
            for (field, rows) in touched.iter().enumerate() {
                if !rows.is_empty() {
                    embed_states[field].apply_rows(&mut model.table.fields[field], rows)?;
                }
            }
            for (i, (w_node, b_node)) in layers.iter().enumerate() {
                let gw = grads.get(*w_node, &tape);
                let gb = grads.get(*b_node, &tape);
                layer_states[i].0.apply(&mut model.mlp.layers[i].0, &gw)?;
                layer_states[i].1.apply(&mut model.mlp.layers[i].1, &gb)?;
            }
            out_w_state.apply(&mut model.mlp.out_w, &grads.get(out_w, &tape))?;
            out_b_state.apply(&mut model.mlp.out_b, &grads.get(out_b, &tape))?;
        }
        log.push(EpochLog { epoch, mean_loss: loss_sum / n_batches.max(1) as f64 });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticConfig};

    fn tiny_corpus() -> Dataset {
        gen_synthetic(&SyntheticConfig::new(6, 8, 2, 5, 11))
    }

    fn zeroed(model: &mut BaseModel) {
        for f in model.table.fields.iter_mut() {
            for v in f.data_mut() {
                *v = 0.0;
            }
        }
        for (w, b) in model.mlp.layers.iter_mut() {
            for v in w.data_mut() {
                *v = 0.0;
            }
            for v in b.data_mut() {
                *v = 0.0;
            }
        }
        for v in model.mlp.out_w.data_mut() {
            *v = 0.0;
        }
    }

    #[test]
    fn all_zero_parameters_predict_one_half() {
        let ds = tiny_corpus();
        let cfg = ModelConfig { hidden: vec![8, 4], ..ModelConfig::default() };
        let mut model = BaseModel::init(ds.core(), &cfg, 1);
        zeroed(&mut model);
        let id_field = ds.schema().ad_id_field();
        let mut scorer = model.scorer();
        for i in 0..ds.len().min(10) {
            assert_eq!(scorer.predict(ds.encoded(i), id_field), 0.5);
        }
    }

    #[test]
    fn tape_and_scorer_agree_bit_exactly() {
        let ds = tiny_corpus();
        let cfg = ModelConfig { embedding_dim: 6, hidden: vec![12, 5], embed_init: 0.01 };
        let model = BaseModel::init(ds.core(), &cfg, 3);
        let id_field = ds.schema().ad_id_field();
        let mut scorer = model.scorer();
        for i in 0..ds.len().min(20) {
            let mut tape = Tape::new();
            let mut binding = model.bind(&mut tape, false);
            let y = model
                .forward_on_tape(&mut tape, &mut binding, ds.encoded(i), None)
                .unwrap();
            let tape_val = tape.value(y).item().unwrap();
            let scorer_val = scorer.predict(ds.encoded(i), id_field);
            assert_eq!(tape_val.to_bits(), scorer_val.to_bits(), "row {i}");
        }
    }

    #[test]
    fn substituting_the_own_column_reproduces_forward_exactly() {
        let ds = tiny_corpus();
        let model = BaseModel::init(ds.core(), &ModelConfig::default(), 4);
        let id_field = ds.schema().ad_id_field();
        let mut scorer = model.scorer();
        for i in 0..ds.len().min(20) {
            let enc = ds.encoded(i);
            let own = model.table.row(id_field, enc.field_tokens(id_field)[0]).to_vec();
            let a = scorer.predict(enc, id_field);
            let b = scorer.predict_with_id(enc, id_field, &own);
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn loss_at_half_is_ln2_and_perfect_is_tiny() {
        let l = loss_eq1(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = loss_eq1(&[1.0, 0.0], &[1.0, 0.0]);
        assert!(perfect >= 0.0 && perfect < 1e-11);
    }

    #[test]
    fn zero_epochs_returns_initialization_unchanged() {
        let ds = tiny_corpus();
        let tc = TrainConfig { epochs: 0, seed: 5, ..TrainConfig::default() };
        let (trained, log) = train_base(&ds, &ModelConfig::default(), &tc).unwrap();
        let fresh = BaseModel::init(ds.core(), &ModelConfig::default(), 5);
        assert_eq!(trained.params_hash(), fresh.params_hash());
        assert!(log.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let ds = gen_synthetic(&SyntheticConfig::new(10, 30, 2, 6, 21));
        let mc = ModelConfig { embedding_dim: 4, hidden: vec![8], embed_init: 0.01 };
        let tc = TrainConfig { epochs: 3, batch_size: 32, seed: 9, ..TrainConfig::default() };
        let (m1, log1) = train_base(&ds, &mc, &tc).unwrap();
        let (m2, _) = train_base(&ds, &mc, &tc).unwrap();
        assert_eq!(m1.params_hash(), m2.params_hash());
        assert!(log1.last().unwrap().mean_loss < log1[0].mean_loss);
        for p in m1.params() {
            p.check_finite("trained params").unwrap();
        }
    }

    #[test]
    fn checkpoint_round_trip_and_schema_guard() {
        let ds = tiny_corpus();
        let model = BaseModel::init(ds.core(), &ModelConfig::default(), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save_checkpoint(&path).unwrap();
        let back = BaseModel::load_checkpoint(&path, ds.core(), &ModelConfig::default()).unwrap();
        assert_eq!(model.params_hash(), back.params_hash());

        // a different corpus (different vocab sizes) must be rejected
        let other = gen_synthetic(&SyntheticConfig::new(9, 4, 2, 7, 12));
        assert!(BaseModel::load_checkpoint(&path, other.core(), &ModelConfig::default()).is_err());

        // truncation is a clean error
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 3]).unwrap();
        assert!(BaseModel::load_checkpoint(&path, ds.core(), &ModelConfig::default()).is_err());
    }

    #[test]
    fn gradient_of_loss_matches_finite_differences() {
        use crate::diff::finite_diff_grad;
        let ds = tiny_corpus();
        let cfg = ModelConfig { embedding_dim: 3, hidden: vec![5, 4], embed_init: 0.05 };
        let model = BaseModel::init(ds.core(), &cfg, 8);
        let id_field = ds.schema().ad_id_field();
        let rows: Vec<u32> = (0..6).collect();

        // gradient w.r.t. a hidden-layer weight matrix via the tape
        let (tape_grad, _) = {
            let mut tape = Tape::new();
            let mut binding = model.bind(&mut tape, true);
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            for &r in &rows {
                let enc = ds.encoded(r as usize);
                preds.push(model.forward_on_tape(&mut tape, &mut binding, enc, None).unwrap());
                labels.push(enc.label);
            }
            let b = tape.concat(&preds).unwrap();
            let loss = tape.bce_mean(b, &labels).unwrap();
            let g = tape.backward(loss).unwrap();
            let (layers, _, _) = binding.layer_nodes();
            (g.get(layers[0].0, &tape), tape.value(loss).item().unwrap())
        };

        let w0 = model.mlp.layers[0].0.clone();
        let fd = finite_diff_grad(
            |w| {
                let mut m = model.clone();
                m.mlp.layers[0].0 = w.clone();
                let mut preds = Vec::new();
                let mut labels = Vec::new();
                let mut scorer = m.scorer();
                for &r in &rows {
                    let enc = ds.encoded(r as usize);
                    preds.push(scorer.predict(enc, id_field));
                    labels.push(enc.label);
                }
                Ok(loss_eq1(&preds, &labels))
            },
            &w0,
            1e-6,
        )
        .unwrap();

        for (a, b) in tape_grad.data().iter().zip(fd.data()) {
            let denom = a.abs().max(b.abs()).max(1e-6);
            assert!((a - b).abs() / denom < 1e-4, "{a} vs {b}");
        }
    }
}

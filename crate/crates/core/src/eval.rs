//! Metrics and the cold-start / warm-up evaluation protocol.
//!
//! Cold phase: each new ad gets one initial embedding from the variant
//! under test (built from attributes and graph neighbors only — labels of
//! the evaluated ad are never read before scoring), every test sample of
//! the ad is scored through the frozen model, and all scores pool into a
//! single AUC and mean loss. Warm-up rounds then train only the per-ad
//! ID embeddings on that round's samples and re-evaluate on the same
//! test set; embeddings carry forward between rounds.

use std::collections::HashMap;

use crate::data::{AdIdx, Dataset};
use crate::error::{CoreError, Result};
use crate::generators::{generate_value, rnd_emb, GeneratorInput, GeneratorParams, Variant};
use crate::graph::{attr_concat_vector, neighbor_tensors, ReverseIndex};
use crate::meta::cold_loss;
use crate::model::{loss_eq1, BaseModel};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

/// Probability that a random positive outranks a random negative, ties
/// counted 1/2 (midrank convention), computed by rank-sum in O(n log n).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::Contract("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positives / {n_neg} negatives"
        )));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(CoreError::UndefinedMetric("non-finite score".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("finite"));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // midrank of the tie group spanning ranks i+1 ..= j+1
        let midrank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// One evaluated (variant, phase) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult {
    pub variant: String,
    pub phase: String,
    pub seed: u64,
    pub auc: f64,
    pub loss: f64,
    pub n: usize,
}

/// Which initial-embedding producer is under evaluation.
#[derive(Clone, Copy)]
pub enum Embedder<'a> {
    /// RndEmb: per-ad uniform draw, seed-deterministic.
    Random,
    Learned(&'a GeneratorParams),
}

impl<'a> Embedder<'a> {
    pub fn variant_name(&self) -> String {
        match self {
            Embedder::Random => Variant::RndEmb.name().to_string(),
            Embedder::Learned(p) => {
                if p.use_attention || !p.variant.uses_attention() {
                    p.variant.name().to_string()
                } else {
                    format!("{}\\GAT", p.variant.name())
                }
            }
        }
    }
}

/// Frozen evaluation dependencies.
pub struct EvalContext<'a> {
    pub model: &'a BaseModel,
    pub index: &'a ReverseIndex,
    pub n_neighbors: usize,
    pub seed: u64,
}

impl<'a> EvalContext<'a> {
    /// Initial embedding for one new ad: attributes and neighbors in,
    /// r0 out. NgbEmb falls back to the random law when the ad has no
    /// neighbors (counted by the caller via the returned flag).
    fn r0_for_ad(&self, embedder: &Embedder<'_>, ds: &Dataset, ad: AdIdx) -> Result<(Tensor, bool)> {
        let d = self.model.d();
        let mut rnd_stream = stream_rng(self.seed, "rnd-emb", &[ad as u64]);
        match embedder {
            Embedder::Random => Ok((rnd_emb(d, &mut rnd_stream), false)),
            Embedder::Learned(params) => {
                let core = ds.core();
                let z0 = attr_concat_vector(&self.model.table, core, ad);
                let mut tie_rng = stream_rng(self.seed, "graph-ties-eval", &[ad as u64]);
                let query = self.index.query_of(ds, ad);
                let nbrs = self.index.retrieve(&query, self.n_neighbors, &mut tie_rng, Some(ad));
                let (neighbor_p, neighbor_z) = neighbor_tensors(&nbrs, &self.model.table, core);
                if params.variant == Variant::NgbEmb && neighbor_p.is_empty() {
                    return Ok((rnd_emb(d, &mut rnd_stream), true));
                }
                let input = GeneratorInput { z0: &z0, neighbor_p: &neighbor_p, neighbor_z: &neighbor_z };
                Ok((generate_value(params, &input)?, false))
            }
        }
    }

    fn initial_embeddings(
        &self,
        embedder: &Embedder<'_>,
        ds: &Dataset,
        ads: &[AdIdx],
    ) -> Result<HashMap<AdIdx, Tensor>> {
        let mut map = HashMap::with_capacity(ads.len());
        for &ad in ads {
            let (r0, _fallback) = self.r0_for_ad(embedder, ds, ad)?;
            map.insert(ad, r0);
        }
        Ok(map)
    }

    fn score_test(
        &self,
        test: &Dataset,
        embeddings: &HashMap<AdIdx, Tensor>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let id_field = test.schema().ad_id_field();
        let mut scorer = self.model.scorer();
        let mut scores = Vec::with_capacity(test.len());
        let mut labels = Vec::with_capacity(test.len());
        for i in 0..test.len() {
            let enc = test.encoded(i);
            let r0 = embeddings.get(&enc.ad).ok_or_else(|| {
                CoreError::Internal(format!("no initial embedding for ad {}", enc.ad))
            })?;
            scores.push(scorer.predict_with_id(enc, id_field, r0.data()));
            labels.push(enc.label);
        }
        Ok((scores, labels))
    }
}

/// Cold-start evaluation: r0 per ad once, all test samples scored with
/// the frozen model, one pooled AUC/loss.
pub fn eval_cold(
    ctx: &EvalContext<'_>,
    embedder: &Embedder<'_>,
    test: &Dataset,
) -> Result<PhaseResult> {
    let ads = test.ads_in_view();
    let embeddings = ctx.initial_embeddings(embedder, test, &ads)?;
    let (scores, labels) = ctx.score_test(test, &embeddings)?;
    Ok(PhaseResult {
        variant: embedder.variant_name(),
        phase: "cold".into(),
        seed: ctx.seed,
        auc: auc(&scores, &labels)?,
        loss: loss_eq1(&scores, &labels),
        n: scores.len(),
    })
}

#[derive(Debug, Clone)]
pub struct WarmupConfig {
    pub optimizer: AdamConfig,
    /// Passes over each ad's round samples.
    pub passes: usize,
    /// Minibatch size within one ad's round samples.
    pub batch_size: usize,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self { optimizer: AdamConfig::default(), passes: 1, batch_size: 10 }
    }
}

/// Cold phase plus one evaluation after each warm-up round. Round k
/// trains only the per-ad ID embeddings (initialized from the variant in
/// round 1, carried over afterwards) on that round's samples; Θ and Ψ
/// stay frozen.
pub fn run_warmup(
    ctx: &EvalContext<'_>,
    embedder: &Embedder<'_>,
    rounds: &[Dataset],
    test: &Dataset,
    cfg: &WarmupConfig,
) -> Result<Vec<PhaseResult>> {
    let mut ads = test.ads_in_view();
    for round in rounds {
        for ad in round.ads_in_view() {
            if !ads.contains(&ad) {
                ads.push(ad);
            }
        }
    }
    ads.sort_unstable();
    let mut embeddings = ctx.initial_embeddings(embedder, test, &ads)?;

    let mut results = Vec::with_capacity(rounds.len() + 1);
    let (scores, labels) = ctx.score_test(test, &embeddings)?;
    results.push(PhaseResult {
        variant: embedder.variant_name(),
        phase: "cold".into(),
        seed: ctx.seed,
        auc: auc(&scores, &labels)?,
        loss: loss_eq1(&scores, &labels),
        n: scores.len(),
    });

    for (k, round) in rounds.iter().enumerate() {
        for ad in round.ads_in_view() {
            let rows = round.rows_of(ad);
            let r0 = embeddings
                .get_mut(&ad)
                .ok_or_else(|| CoreError::Internal(format!("warm-up ad {ad} missing")))?;
            let mut state = AdamState::new(cfg.optimizer, r0.shape());
            for _ in 0..cfg.passes {
                for chunk in rows.chunks(cfg.batch_size) {
                    let (_, grad) = cold_loss(ctx.model, round, r0, chunk)?;
                    state.apply(r0, &grad)?;
                }
            }
        }
        let (scores, labels) = ctx.score_test(test, &embeddings)?;
        results.push(PhaseResult {
            variant: embedder.variant_name(),
            phase: format!("warm-{}", k + 1),
            seed: ctx.seed,
            auc: auc(&scores, &labels)?,
            loss: loss_eq1(&scores, &labels),
            n: scores.len(),
        });
    }
    Ok(results)
}

/// Seed-averaged comparison across variants and phases.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    /// (variant, phase) -> (mean auc, mean loss, seed count)
    pub cells: Vec<(String, String, f64, f64, usize)>,
}

/// Aggregates per-seed results into per-(variant, phase) means, keeping
/// first-appearance order of variants and phases.
pub fn compare_variants(results: &[PhaseResult]) -> ComparisonTable {
    let mut variants = Vec::new();
    let mut phases = Vec::new();
    let mut acc: HashMap<(String, String), (f64, f64, usize)> = HashMap::new();
    for r in results {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
        if !phases.contains(&r.phase) {
            phases.push(r.phase.clone());
        }
        let e = acc.entry((r.variant.clone(), r.phase.clone())).or_insert((0.0, 0.0, 0));
        e.0 += r.auc;
        e.1 += r.loss;
        e.2 += 1;
    }
    let mut cells = Vec::new();
    for v in &variants {
        for p in &phases {
            if let Some(&(a, l, n)) = acc.get(&(v.clone(), p.clone())) {
                cells.push((v.clone(), p.clone(), a / n as f64, l / n as f64, n));
            }
        }
    }
    ComparisonTable { cells }
}

impl ComparisonTable {
    pub fn mean_auc(&self, variant: &str, phase: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|(v, p, ..)| v == variant && p == phase)
            .map(|&(_, _, a, _, _)| a)
    }

    pub fn mean_loss(&self, variant: &str, phase: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|(v, p, ..)| v == variant && p == phase)
            .map(|&(_, _, _, l, _)| l)
    }

    /// Plain-text table: one row per variant, AUC/loss per phase.
    pub fn render(&self) -> String {
        let mut variants = Vec::new();
        let mut phases = Vec::new();
        for (v, p, ..) in &self.cells {
            if !variants.contains(v) {
                variants.push(v.clone());
            }
            if !phases.contains(p) {
                phases.push(p.clone());
            }
        }
        let mut out = String::new();
        out.push_str(&format!("{:<12}", "variant"));
        for p in &phases {
            out.push_str(&format!(" {:>10} {:>10}", format!("auc:{p}"), format!("loss:{p}")));
        }
        out.push('\n');
        for v in &variants {
            out.push_str(&format!("{v:<12}"));
            for p in &phases {
                match self.cells.iter().find(|(cv, cp, ..)| cv == v && cp == p) {
                    Some(&(_, _, a, l, _)) => {
                        out.push_str(&format!(" {a:>10.4} {l:>10.4}"));
                    }
                    None => out.push_str(&format!(" {:>10} {:>10}", "-", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_is_one() {
        assert_eq!(auc(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        assert_eq!(auc(&[0.3, 0.3, 0.3, 0.3], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(auc(&[0.2, 0.8], &[1.0, 1.0]).is_err());
        assert!(auc(&[0.2, 0.8], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn monotone_transform_leaves_auc_unchanged() {
        let scores = [0.1, 0.7, 0.4, 0.9, 0.2, 0.4];
        let labels = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let a1 = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (5.0 * s).tanh()).collect();
        let a2 = auc(&squashed, &labels).unwrap();
        assert!((a1 - a2).abs() < 1e-12);
    }

    #[test]
    fn flipping_scores_complements_auc_without_ties() {
        let scores = [0.11, 0.72, 0.43, 0.95, 0.21, 0.48];
        let labels = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let a = auc(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auc(&neg, &labels).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_sum_matches_pair_counting_with_ties() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n = 2 + rng.gen_range(0..60);
            // coarse grid forces plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..7) as f64 / 6.0).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
            labels[0] = 1.0;
            labels[n - 1] = 0.0;

            let fast = auc(&scores, &labels).unwrap();
            // O(n^2) oracle
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1.0 && labels[j] == 0.0 {
                        den += 1.0;
                        if scores[i] > scores[j] {
                            num += 1.0;
                        } else if scores[i] == scores[j] {
                            num += 0.5;
                        }
                    }
                }
            }
            let slow = num / den;
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn comparison_table_averages_over_seeds() {
        let rows = vec![
            PhaseResult { variant: "A".into(), phase: "cold".into(), seed: 1, auc: 0.6, loss: 0.5, n: 10 },
            PhaseResult { variant: "A".into(), phase: "cold".into(), seed: 2, auc: 0.8, loss: 0.3, n: 10 },
            PhaseResult { variant: "B".into(), phase: "cold".into(), seed: 1, auc: 0.5, loss: 0.7, n: 10 },
        ];
        let table = compare_variants(&rows);
        assert!((table.mean_auc("A", "cold").unwrap() - 0.7).abs() < 1e-12);
        assert!((table.mean_loss("A", "cold").unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(table.mean_auc("B", "cold").unwrap(), 0.5);
        let text = table.render();
        assert!(text.contains("auc:cold"));
    }
}

//! Generator training with the two-minibatch meta objective.
//!
//! Per task (one old ad): produce r0 from Ψ, measure the cold-start loss
//! l_a on minibatch D_a, take one inner gradient step
//! r0' = r0 − η·∂l_a/∂r0, measure the adapted loss l_b on the disjoint
//! minibatch D_b, and optimize l = β·l_a + (1−β)·l_b over Ψ with the base
//! model Θ frozen throughout.
//!
//! The gradient of l through the inner step needs the second-order term
//! H_a·∇l_b; in `ExactHvp` mode it comes from a finite-difference
//! Hessian-vector product over the cold loss, in `FirstOrder` mode it is
//! dropped. At η = 0 the two modes agree bit-exactly.

use rand::Rng;

use crate::data::{AdIdx, Dataset};
use crate::diff::{default_hvp_eps, hvp_fd};
use crate::error::{CoreError, Result};
use crate::generators::{GeneratorInput, GeneratorParams, Variant};
use crate::graph::{attr_concat_vector, neighbor_tensors, ReverseIndex};
use crate::model::{batch_loss_with_id, BaseModel};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaGradientMode {
    /// Second-order: the H_a·∇l_b term via a finite-difference HVP.
    ExactHvp,
    /// Drop the Hessian term (cheaper, approximate).
    FirstOrder,
}

#[derive(Debug, Clone)]
pub struct MetaConfig {
    /// Balance between cold loss and adapted loss, in [0, 1].
    pub beta: f64,
    /// Inner gradient-descent step size, >= 0.
    pub eta: f64,
    /// Samples per minibatch (each task draws 2M disjoint rows).
    pub m: usize,
    pub outer: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub mode: MetaGradientMode,
    /// HVP step; `None` scales 1e-4 by (1 + ‖r0‖∞).
    pub hvp_eps: Option<f64>,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            eta: 0.1,
            m: 20,
            outer: AdamConfig::default(),
            epochs: 10,
            seed: 0,
            mode: MetaGradientMode::ExactHvp,
            hvp_eps: None,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(CoreError::Config(format!("beta must be in [0,1], got {}", self.beta)));
        }
        if self.eta < 0.0 {
            return Err(CoreError::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.m == 0 {
            return Err(CoreError::Config("minibatch size M must be >= 1".into()));
        }
        Ok(())
    }
}

/// One meta-learning task: an old ad with two disjoint minibatches and
/// its generator inputs.
#[derive(Debug, Clone)]
pub struct MetaTaskBatch {
    pub ad: AdIdx,
    pub d_a: Vec<u32>,
    pub d_b: Vec<u32>,
    pub z0: Tensor,
    pub neighbor_p: Vec<Tensor>,
    pub neighbor_z: Vec<Tensor>,
}

impl MetaTaskBatch {
    pub fn input(&self) -> GeneratorInput<'_> {
        GeneratorInput { z0: &self.z0, neighbor_p: &self.neighbor_p, neighbor_z: &self.neighbor_z }
    }
}

/// Mean cross-entropy over a minibatch using the supplied initial ID
/// embedding, plus its exact gradient with respect to that embedding.
pub fn cold_loss(
    model: &BaseModel,
    ds: &Dataset,
    r0: &Tensor,
    rows: &[u32],
) -> Result<(f64, Tensor)> {
    batch_loss_with_id(model, ds, rows, r0)
}

/// One step of gradient descent on the initial embedding.
pub fn inner_adapt(r0: &Tensor, grad_r: &Tensor, eta: f64) -> Result<Tensor> {
    r0.axpy(-eta, grad_r)
}

#[derive(Debug, Clone, Copy)]
pub struct MetaLoss {
    pub total: f64,
    pub l_a: f64,
    pub l_b: f64,
}

/// Evaluates l = β·l_a + (1−β)·l_b for one task at the given Ψ.
pub fn meta_loss(
    task: &MetaTaskBatch,
    params: &GeneratorParams,
    model: &BaseModel,
    ds: &Dataset,
    cfg: &MetaConfig,
) -> Result<MetaLoss> {
    let r0 = crate::generators::generate_value(params, &task.input())?;
    let (l_a, g_a) = cold_loss(model, ds, &r0, &task.d_a)?;
    let adapted = inner_adapt(&r0, &g_a, cfg.eta)?;
    let (l_b, _) = cold_loss(model, ds, &adapted, &task.d_b)?;
    Ok(MetaLoss { total: cfg.beta * l_a + (1.0 - cfg.beta) * l_b, l_a, l_b })
}

/// Gradients of the meta loss with respect to each Ψ tensor.
#[derive(Debug, Clone)]
pub struct PsiGrads {
    pub w: Tensor,
    pub v: Option<Tensor>,
    pub a: Option<Tensor>,
}

/// Total gradient dl/dΨ = (∂r0/∂Ψ)ᵀ·u with
/// u = β·∇l_a(r0) + (1−β)·[∇l_b(r0') − η·H_a·∇l_b(r0')].
pub fn meta_grad(
    task: &MetaTaskBatch,
    params: &GeneratorParams,
    model: &BaseModel,
    ds: &Dataset,
    cfg: &MetaConfig,
) -> Result<(PsiGrads, MetaLoss)> {
    use crate::tape::Tape;

    let mut tape = Tape::new();
    let psi = params.bind(&mut tape, true);
    let r0_node = params.build_r0(&mut tape, &psi, &task.input())?;
    let r0 = tape.value(r0_node).clone();

    let (l_a, g_a) = cold_loss(model, ds, &r0, &task.d_a)?;
    let adapted = inner_adapt(&r0, &g_a, cfg.eta)?;
    let (l_b, g_b) = cold_loss(model, ds, &adapted, &task.d_b)?;

    // cotangent u pulled back through the generator
    let mut u = g_a.scale(cfg.beta)?;
    if cfg.beta < 1.0 {
        let mut b_term = g_b.clone();
        if cfg.mode == MetaGradientMode::ExactHvp && cfg.eta != 0.0 {
            let eps = cfg.hvp_eps.unwrap_or_else(|| default_hvp_eps(&r0));
            let hv = hvp_fd(
                |point| cold_loss(model, ds, point, &task.d_a),
                &r0,
                &g_b,
                eps,
            )?;
            b_term = b_term.axpy(-cfg.eta, &hv)?;
        }
        u = u.axpy(1.0 - cfg.beta, &b_term)?;
    }

    let probe = tape.constant(u);
    let pullback = tape.dot(r0_node, probe)?;
    let grads = tape.backward(pullback)?;
    let psi_grads = PsiGrads {
        w: grads.get(psi.w, &tape),
        v: psi.v.map(|v| grads.get(v, &tape)),
        a: psi.a.map(|a| grads.get(a, &tape)),
    };
    for t in [Some(&psi_grads.w), psi_grads.v.as_ref(), psi_grads.a.as_ref()].into_iter().flatten()
    {
        t.check_finite("meta_grad")?;
    }
    Ok((
        psi_grads,
        MetaLoss { total: cfg.beta * l_a + (1.0 - cfg.beta) * l_b, l_a, l_b },
    ))
}

/// Where meta-training tasks come from: the old-ad dataset plus the
/// reverse index for neighbor retrieval (the task ad is excluded from
/// its own candidates).
pub struct TaskSource<'a> {
    pub ds: &'a Dataset,
    pub index: &'a ReverseIndex,
    pub n_neighbors: usize,
}

impl<'a> TaskSource<'a> {
    /// Builds the task for `ad` in `epoch`, drawing the minibatches and
    /// neighbor tie-breaks from per-(epoch, ad) streams so results do
    /// not depend on task processing order. `None` when the ad lacks 2M
    /// rows.
    pub fn build_task(
        &self,
        model: &BaseModel,
        ad: AdIdx,
        epoch: usize,
        cfg: &MetaConfig,
    ) -> Option<MetaTaskBatch> {
        let mut batch_rng = stream_rng(cfg.seed, "minibatch", &[epoch as u64, ad as u64]);
        let (d_a, d_b) = self.ds.sample_disjoint_minibatches(ad, cfg.m, &mut batch_rng)?;
        let mut tie_rng = stream_rng(cfg.seed, "graph-ties", &[epoch as u64, ad as u64]);
        let query = self.index.query_of(self.ds, ad);
        let nbrs = self.index.retrieve(&query, self.n_neighbors, &mut tie_rng, Some(ad));
        let core = self.ds.core();
        let (neighbor_p, neighbor_z) = neighbor_tensors(&nbrs, &model.table, core);
        let z0 = attr_concat_vector(&model.table, core, ad);
        Some(MetaTaskBatch { ad, d_a, d_b, z0, neighbor_p, neighbor_z })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MetaEpochLog {
    pub epoch: usize,
    pub task_count: usize,
    pub skipped: usize,
    pub mean_l: f64,
    pub mean_l_a: f64,
    pub mean_l_b: f64,
}

/// Trains Ψ for one variant over shuffled old-ad tasks with Adam.
/// Θ is frozen structurally and checked bit-exactly before and after.
pub fn train_meta(
    src: &TaskSource<'_>,
    model: &BaseModel,
    variant: Variant,
    gamma: f64,
    use_attention: bool,
    cfg: &MetaConfig,
) -> Result<(GeneratorParams, Vec<MetaEpochLog>)> {
    cfg.validate()?;
    if !variant.is_trainable() {
        return Err(CoreError::Config(format!("{variant} has no trainable parameters")));
    }
    let theta_hash_before = model.params_hash();

    let d = model.d();
    let attr_width = src.ds.schema().attr_fields().len() * d;
    let variant_salt = Variant::ALL.iter().position(|v| *v == variant).unwrap() as u64;
    let mut init_rng = stream_rng(cfg.seed, "psi-init", &[variant_salt]);
    let mut params =
        GeneratorParams::init(variant, d, attr_width, gamma, use_attention, &mut init_rng)?;

    let eligible: Vec<AdIdx> = src
        .ds
        .ads_in_view()
        .into_iter()
        .filter(|&ad| src.ds.ad_count(ad) >= 2 * cfg.m)
        .collect();
    if eligible.is_empty() {
        return Err(CoreError::Config(format!(
            "no ads with at least {} samples are available for meta-training",
            2 * cfg.m
        )));
    }

    let mut w_state = AdamState::new(cfg.outer, params.w.shape());
    let mut v_state = params.v.as_ref().map(|v| AdamState::new(cfg.outer, v.shape()));
    let mut a_state = params.a.as_ref().map(|a| AdamState::new(cfg.outer, a.shape()));

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = eligible.clone();
        let mut shuffle_rng = stream_rng(cfg.seed, "task-shuffle", &[epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let (mut sum_l, mut sum_a, mut sum_b) = (0.0, 0.0, 0.0);
        let mut tasks = 0usize;
        let mut skipped = 0usize;
        for ad in order {
            let Some(task) = src.build_task(model, ad, epoch, cfg) else {
                skipped += 1;
                continue;
            };
            if variant == Variant::NgbEmb && task.neighbor_p.is_empty() {
                skipped += 1;
                continue;
            }
            let (grads, loss) = meta_grad(&task, &params, model, src.ds, cfg)?;
            if !loss.total.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "meta loss became non-finite on ad {ad} in epoch {epoch}"
                )));
            }
            w_state.apply(&mut params.w, &grads.w)?;
            if let (Some(v), Some(gv), Some(vs)) =
                (params.v.as_mut(), grads.v.as_ref(), v_state.as_mut())
            {
                vs.apply(v, gv)?;
            }
            if let (Some(a), Some(ga), Some(as_)) =
                (params.a.as_mut(), grads.a.as_ref(), a_state.as_mut())
            {
                as_.apply(a, ga)?;
            }
            sum_l += loss.total;
            sum_a += loss.l_a;
            sum_b += loss.l_b;
            tasks += 1;
        }
        let denom = tasks.max(1) as f64;
        log.push(MetaEpochLog {
            epoch,
            task_count: tasks,
            skipped,
            mean_l: sum_l / denom,
            mean_l_a: sum_a / denom,
            mean_l_b: sum_b / denom,
        });
    }

    if model.params_hash() != theta_hash_before {
        return Err(CoreError::Internal(
            "base-model parameters changed during meta-training".into(),
        ));
    }
    Ok((params, log))
}

//! Initial ID-embedding generators for cold-start ads.
//!
//! All six variants produce a d-dimensional embedding r0 for an ad whose
//! ID has no trained column:
//!
//! * RndEmb — uniform random, the same law as embedding initialization.
//! * MetaEmb — g = γ·tanh(W z0) from the ad's own attribute embeddings.
//! * NgbEmb — γ·tanh(W · mean(p_i)) over neighbors' pre-trained ID
//!   embeddings.
//! * GME-P — generates g0 from z0, then attends over pre-trained
//!   neighbor ID embeddings {p_i}.
//! * GME-G — generates g_i for the neighbors with the same W and attends
//!   over the generated embeddings, so identical attributes give
//!   identical keys.
//! * GME-A — attends over attribute vectors {z_i} first, then generates
//!   r0 from the refined attribute vector.
//!
//! Attention is a single-head GAT layer: scores
//! LeakyReLU(aᵀ[V·query ‖ V·key]) with slope 0.2, softmax over the
//! neighbors plus the ad itself (index 0), ELU aggregation. Setting
//! `use_attention = false` replaces the softmax weights with uniform
//! averaging, which is the ablated "\GAT" form.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    RndEmb,
    MetaEmb,
    NgbEmb,
    GmeP,
    GmeG,
    GmeA,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::RndEmb => "RndEmb",
            Variant::MetaEmb => "MetaEmb",
            Variant::NgbEmb => "NgbEmb",
            Variant::GmeP => "GME-P",
            Variant::GmeG => "GME-G",
            Variant::GmeA => "GME-A",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "RndEmb" => Some(Variant::RndEmb),
            "MetaEmb" => Some(Variant::MetaEmb),
            "NgbEmb" => Some(Variant::NgbEmb),
            "GME-P" => Some(Variant::GmeP),
            "GME-G" => Some(Variant::GmeG),
            "GME-A" => Some(Variant::GmeA),
            _ => None,
        }
    }

    /// Variants with parameters Ψ learned by the meta-trainer.
    pub fn is_trainable(&self) -> bool {
        !matches!(self, Variant::RndEmb)
    }

    pub fn uses_attention(&self) -> bool {
        matches!(self, Variant::GmeP | Variant::GmeG | Variant::GmeA)
    }

    pub const ALL: [Variant; 6] = [
        Variant::RndEmb,
        Variant::MetaEmb,
        Variant::NgbEmb,
        Variant::GmeP,
        Variant::GmeG,
        Variant::GmeA,
    ];
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The learnable set Ψ = {W, V, a} of one generator variant, plus the
/// scaling hyperparameter γ and the attention/averaging switch.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub variant: Variant,
    pub gamma: f64,
    pub use_attention: bool,
    pub w: Tensor,
    pub v: Option<Tensor>,
    pub a: Option<Tensor>,
}

impl GeneratorParams {
    /// Scaled-uniform init for W and V; a starts at zero so training
    /// begins from uniform attention.
    pub fn init<R: Rng>(
        variant: Variant,
        d: usize,
        attr_width: usize,
        gamma: f64,
        use_attention: bool,
        rng: &mut R,
    ) -> Result<GeneratorParams> {
        if !(0.0 < gamma && gamma <= 1.0) {
            return Err(CoreError::Config(format!("gamma must be in (0, 1], got {gamma}")));
        }
        if !variant.is_trainable() {
            return Err(CoreError::Config("RndEmb has no trainable parameters".into()));
        }
        let uniform = |rng: &mut R, rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
            Tensor::matrix(rows, cols, data).expect("finite init")
        };
        let (w, v, a) = match variant {
            Variant::MetaEmb => (uniform(rng, d, attr_width), None, None),
            Variant::NgbEmb => (uniform(rng, d, d), None, None),
            Variant::GmeP | Variant::GmeG => (
                uniform(rng, d, attr_width),
                Some(uniform(rng, d, d)),
                Some(Tensor::zeros(&[2 * d])),
            ),
            Variant::GmeA => (
                uniform(rng, d, attr_width),
                Some(uniform(rng, attr_width, attr_width)),
                Some(Tensor::zeros(&[2 * attr_width])),
            ),
            Variant::RndEmb => unreachable!(),
        };
        Ok(GeneratorParams { variant, gamma, use_attention, w, v, a })
    }

    /// Named parameter tensors, in a stable order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![("w", &self.w)];
        if let Some(v) = &self.v {
            out.push(("v", v));
        }
        if let Some(a) = &self.a {
            out.push(("a", a));
        }
        out
    }

    pub fn params_hash(&self) -> u64 {
        crate::checkpoint::hash_tensors(self.tensors().into_iter().map(|(_, t)| t))
    }

    /// Enters Ψ on a tape; leaves when `trainable`, constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> PsiNodes {
        let mut enter = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        PsiNodes {
            w: enter(&self.w),
            v: self.v.as_ref().map(&mut enter),
            a: self.a.as_ref().map(&mut enter),
        }
    }

    /// Builds r0 for one ad on the tape. `z0` is the ad's concatenated
    /// attribute embedding; neighbor inputs are pre-trained ID embeddings
    /// (`neighbor_p`) or attribute vectors (`neighbor_z`), depending on
    /// the variant.
    pub fn build_r0(
        &self,
        tape: &mut Tape,
        psi: &PsiNodes,
        input: &GeneratorInput<'_>,
    ) -> Result<NodeId> {
        match self.variant {
            Variant::RndEmb => Err(CoreError::Contract(
                "RndEmb draws from a random stream, not from a tape".into(),
            )),
            Variant::MetaEmb => {
                let z0 = tape.constant(input.z0.clone());
                eg_generate(tape, psi.w, z0, self.gamma)
            }
            Variant::NgbEmb => {
                if input.neighbor_p.is_empty() {
                    return Err(CoreError::Contract(
                        "NgbEmb needs at least one neighbor (caller falls back to RndEmb)".into(),
                    ));
                }
                let ps: Vec<NodeId> =
                    input.neighbor_p.iter().map(|p| tape.constant(p.clone())).collect();
                let mean = tape.mean_n(&ps)?;
                eg_generate(tape, psi.w, mean, self.gamma)
            }
            Variant::GmeP => {
                let z0 = tape.constant(input.z0.clone());
                let g0 = eg_generate(tape, psi.w, z0, self.gamma)?;
                let v = self.v_node(psi)?;
                let mut values = Vec::with_capacity(input.neighbor_p.len() + 1);
                values.push(g0);
                for p in input.neighbor_p {
                    values.push(tape.constant(p.clone()));
                }
                let weights = self.attention_weights(tape, psi, v, g0, &values[1..])?;
                gat_aggregate(tape, v, weights, &values)
            }
            Variant::GmeG => {
                let z0 = tape.constant(input.z0.clone());
                let g0 = eg_generate(tape, psi.w, z0, self.gamma)?;
                let v = self.v_node(psi)?;
                let mut values = Vec::with_capacity(input.neighbor_z.len() + 1);
                values.push(g0);
                for z in input.neighbor_z {
                    let zi = tape.constant(z.clone());
                    values.push(eg_generate(tape, psi.w, zi, self.gamma)?);
                }
                let weights = self.attention_weights(tape, psi, v, g0, &values[1..])?;
                gat_aggregate(tape, v, weights, &values)
            }
            Variant::GmeA => {
                let z0 = tape.constant(input.z0.clone());
                let v = self.v_node(psi)?;
                let mut values = Vec::with_capacity(input.neighbor_z.len() + 1);
                values.push(z0);
                for z in input.neighbor_z {
                    values.push(tape.constant(z.clone()));
                }
                let weights = self.attention_weights(tape, psi, v, z0, &values[1..])?;
                let refined = gat_aggregate(tape, v, weights, &values)?;
                eg_generate(tape, psi.w, refined, self.gamma)
            }
        }
    }

    fn v_node(&self, psi: &PsiNodes) -> Result<NodeId> {
        psi.v.ok_or_else(|| {
            CoreError::Internal(format!("{} params are missing V", self.variant))
        })
    }

    fn attention_weights(
        &self,
        tape: &mut Tape,
        psi: &PsiNodes,
        v: NodeId,
        query: NodeId,
        keys: &[NodeId],
    ) -> Result<NodeId> {
        if self.use_attention {
            let a = psi.a.ok_or_else(|| {
                CoreError::Internal(format!("{} params are missing a", self.variant))
            })?;
            gat_attention(tape, v, a, query, keys)
        } else {
            // ablation: average pooling over self + neighbors
            let n = keys.len() + 1;
            let w = Tensor::vector(vec![1.0 / n as f64; n])?;
            Ok(tape.constant(w))
        }
    }
}

/// Ψ entered on one tape.
#[derive(Debug, Clone, Copy)]
pub struct PsiNodes {
    pub w: NodeId,
    pub v: Option<NodeId>,
    pub a: Option<NodeId>,
}

/// Inputs for one ad: own attribute vector plus per-neighbor data.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorInput<'a> {
    pub z0: &'a Tensor,
    pub neighbor_p: &'a [Tensor],
    pub neighbor_z: &'a [Tensor],
}

impl<'a> GeneratorInput<'a> {
    pub fn n_neighbors(&self) -> usize {
        self.neighbor_p.len().max(self.neighbor_z.len())
    }
}

// ── building blocks ──────────────────────────────────────────────────

/// g = γ·tanh(W z); every component lands in [-γ, γ].
pub fn eg_generate(tape: &mut Tape, w: NodeId, z: NodeId, gamma: f64) -> Result<NodeId> {
    let lin = tape.matvec(w, z)?;
    let act = tape.tanh(lin)?;
    tape.scale(act, gamma)
}

/// Normalized attention coefficients over the ad itself (index 0) and
/// its neighbors: softmax of LeakyReLU(aᵀ[V·query ‖ V·key_j]) with
/// key_0 defined as the query.
pub fn gat_attention(
    tape: &mut Tape,
    v: NodeId,
    a: NodeId,
    query: NodeId,
    keys: &[NodeId],
) -> Result<NodeId> {
    let vq = tape.matvec(v, query)?;
    let mut scores = Vec::with_capacity(keys.len() + 1);
    let self_cat = tape.concat(&[vq, vq])?;
    let self_score = tape.dot(a, self_cat)?;
    scores.push(tape.leaky_relu(self_score, LEAKY_SLOPE)?);
    for &k in keys {
        let vk = tape.matvec(v, k)?;
        let cat = tape.concat(&[vq, vk])?;
        let score = tape.dot(a, cat)?;
        scores.push(tape.leaky_relu(score, LEAKY_SLOPE)?);
    }
    let stacked = tape.concat(&scores)?;
    tape.softmax(stacked)
}

/// ELU(Σ_j α_j · V·value_j); `values[0]` is the self value.
pub fn gat_aggregate(
    tape: &mut Tape,
    v: NodeId,
    weights: NodeId,
    values: &[NodeId],
) -> Result<NodeId> {
    if tape.value(weights).len() != values.len() {
        return Err(CoreError::ShapeMismatch {
            op: "gat_aggregate",
            left: tape.value(weights).shape().to_vec(),
            right: vec![values.len()],
        });
    }
    let transformed: Vec<NodeId> =
        values.iter().map(|&x| tape.matvec(v, x)).collect::<Result<_>>()?;
    let combined = tape.weighted_sum(weights, &transformed)?;
    tape.elu(combined, ELU_ALPHA)
}

/// Uniform random initial embedding in [-0.01, 0.01]^d, the same law as
/// base-model embedding initialization.
pub fn rnd_emb<R: Rng>(d: usize, rng: &mut R) -> Tensor {
    let data = (0..d).map(|_| rng.gen_range(-0.01..=0.01)).collect();
    Tensor::vector(data).expect("finite init")
}

/// Evaluates r0 without keeping the tape, for scoring paths.
pub fn generate_value(params: &GeneratorParams, input: &GeneratorInput<'_>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let psi = params.bind(&mut tape, false);
    let r0 = params.build_r0(&mut tape, &psi, input)?;
    Ok(tape.value(r0).clone())
}

impl GeneratorParams {
    /// Ψ checkpoints reuse the parameter-archive container with a
    /// variant tag in the kind header.
    pub fn save_checkpoint(&self, path: &std::path::Path, schema_hash: u64) -> Result<()> {
        let kind = format!(
            "generator:{}{}",
            self.variant.name(),
            if self.use_attention { "" } else { ":avg" }
        );
        let mut archive = crate::checkpoint::TensorArchive::new(&kind, schema_hash);
        archive.push("gamma", Tensor::scalar(self.gamma));
        for (name, t) in self.tensors() {
            archive.push(name, t.clone());
        }
        archive.write(path)
    }

    pub fn load_checkpoint(path: &std::path::Path, schema_hash: u64) -> Result<GeneratorParams> {
        let mut archive = crate::checkpoint::TensorArchive::read(path)?;
        let (tag, use_attention) = match archive.kind.strip_prefix("generator:") {
            Some(rest) => match rest.strip_suffix(":avg") {
                Some(name) => (name.to_string(), false),
                None => (rest.to_string(), true),
            },
            None => {
                return Err(CoreError::Checkpoint(format!(
                    "{}: kind {:?} is not a generator",
                    path.display(),
                    archive.kind
                )))
            }
        };
        let variant = Variant::parse(&tag).ok_or_else(|| {
            CoreError::Checkpoint(format!("unknown generator variant {tag:?}"))
        })?;
        if archive.schema_hash != schema_hash {
            return Err(CoreError::Checkpoint(format!(
                "{}: schema hash {:#x} does not match this corpus ({schema_hash:#x})",
                path.display(),
                archive.schema_hash
            )));
        }
        let gamma = archive
            .take("gamma")
            .ok_or_else(|| CoreError::Checkpoint("missing gamma".into()))?
            .item()?;
        let w = archive.take("w").ok_or_else(|| CoreError::Checkpoint("missing w".into()))?;
        let v = archive.take("v");
        let a = archive.take("a");
        Ok(GeneratorParams { variant, gamma, use_attention, w, v, a })
    }
}

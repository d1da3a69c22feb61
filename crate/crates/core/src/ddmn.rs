//! Discrepancy-minimizing embedding network.
//!
//! An MLP backbone followed by row-wise L2 normalization, trained on
//! class-balanced batches so that same-class pairs have cosine similarity
//! near 1 and different-class pairs near -1, whatever domain they came from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Activation, BoundMlp, Checkpoint, Graph, MlpParams, MlpSpec, OptimState, Tensor, Var};
use crate::seed::{derive_indexed, derive_seed, rng_from_seed};
use crate::synthgen::SourceView;

pub const CHECKPOINT_KIND: &str = "ddmn";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Binary cross-entropy on `sigmoid(s_ij / tau)`.
    Bce,
    /// Signed mean of pairwise cosine similarities.
    CosineSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdmnConfig {
    pub epochs: usize,
    pub batch: usize,
    pub tau: f64,
    pub lr: f64,
    pub objective: Objective,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for DdmnConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 32,
            tau: 0.5,
            lr: 1e-3,
            objective: Objective::Bce,
            hidden: vec![128, 128],
            embed_dim: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdmnModel {
    backbone: MlpParams,
    tau: f64,
    objective: Objective,
}

#[derive(Serialize, Deserialize)]
struct DdmnMeta {
    tau: f64,
    objective: Objective,
    backbone: MlpSpec,
}

impl DdmnModel {
    pub fn from_backbone(backbone: MlpParams, tau: f64, objective: Objective) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
        }
        Ok(Self {
            backbone,
            tau,
            objective,
        })
    }

    /// Xavier-initialized `input -> hidden... -> embed_dim` relu backbone.
    pub fn init(input_dim: usize, cfg: &DdmnConfig) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(&cfg.hidden);
        dims.push(cfg.embed_dim);
        let mut acts = vec![Activation::Relu; cfg.hidden.len()];
        acts.push(Activation::Identity);
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "ddmn-init"));
        Self::from_backbone(MlpParams::xavier(&dims, &acts, &mut rng)?, cfg.tau, cfg.objective)
    }

    pub fn backbone(&self) -> &MlpParams {
        &self.backbone
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.backbone.output_dim()
    }

    /// Unit-norm embeddings, one row per input row.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.backbone.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let e = embed_on(&mut g, &bound, xv)?;
        Ok(g.value(e).clone())
    }

    /// `S[i][j] = cos(f(x_i), f(x_j))`.
    pub fn pairwise_similarity(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() < 2 {
            return Err(Error::TooFewSamples {
                what: "pairwise similarity",
                min: 2,
                got: x.rows(),
            });
        }
        let mut g = Graph::new();
        let bound = self.backbone.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let e = embed_on(&mut g, &bound, xv)?;
        let s = similarity_matrix(&mut g, e)?;
        Ok(g.value(s).clone())
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, seed, serde_json::Value::Null);
        let spec = ck.push_mlp("backbone", &self.backbone);
        ck.header.meta = serde_json::to_value(DdmnMeta {
            tau: self.tau,
            objective: self.objective,
            backbone: spec,
        })
        .expect("plain data");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: DdmnMeta = ck.meta()?;
        Self::from_backbone(ck.mlp("backbone", &meta.backbone)?, meta.tau, meta.objective)
    }
}

/// Backbone forward pass followed by row normalization.
pub fn embed_on(g: &mut Graph, bound: &BoundMlp, x: Var) -> Result<Var> {
    let h = bound.forward(g, x)?;
    g.l2_normalize(h)
}

/// Gram matrix of unit rows.
pub fn similarity_matrix(g: &mut Graph, emb: Var) -> Result<Var> {
    let t = g.transpose(emb)?;
    g.matmul(emb, t)
}

fn pair_targets(labels: &[usize], same: f64, diff: f64) -> Tensor {
    let n = labels.len();
    let data = (0..n * n)
        .map(|k| if labels[k / n] == labels[k % n] { same } else { diff })
        .collect();
    Tensor::matrix(n, n, data).expect("n > 0")
}

fn check_square(g: &Graph, s: Var, labels: &[usize]) -> Result<()> {
    let n = labels.len();
    if g.value(s).shape() != [n, n] {
        return Err(Error::ShapeMismatch {
            op: "pair loss",
            lhs: g.value(s).shape().to_vec(),
            rhs: vec![n, n],
        });
    }
    Ok(())
}

/// `-(1/N^2) Σ_ij [y_ij ln p_ij + (1 - y_ij) ln(1 - p_ij)]`, `p_ij = sigmoid(s_ij / tau)`,
/// over all pairs including `i = j`.
pub fn ddmn_loss(g: &mut Graph, s: Var, labels: &[usize], tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
    }
    check_square(g, s, labels)?;
    let y = g.constant(pair_targets(labels, 1.0, 0.0));
    let not_y = g.constant(pair_targets(labels, 0.0, 1.0));
    let logits = g.scale(s, 1.0 / tau);
    let log_p = g.log_sigmoid(logits);
    let neg_logits = g.neg(logits);
    let log_not_p = g.log_sigmoid(neg_logits);
    let pos = g.mul(y, log_p)?;
    let neg = g.mul(not_y, log_not_p)?;
    let both = g.add(pos, neg)?;
    let m = g.mean(both);
    Ok(g.neg(m))
}

/// `(1/N^2) Σ_ij w_ij s_ij` with `w = -1` for same-class pairs and `+1`
/// otherwise, so minimizing raises same-class similarity.
pub fn cosine_sum_loss(g: &mut Graph, s: Var, labels: &[usize]) -> Result<Var> {
    check_square(g, s, labels)?;
    let w = g.constant(pair_targets(labels, -1.0, 1.0));
    let ws = g.mul(w, s)?;
    Ok(g.mean(ws))
}

pub fn objective_loss(g: &mut Graph, s: Var, labels: &[usize], tau: f64, objective: Objective) -> Result<Var> {
    match objective {
        Objective::Bce => ddmn_loss(g, s, labels, tau),
        Objective::CosineSum => cosine_sum_loss(g, s, labels),
    }
}

/// Trains on class-balanced batches with Adam. Returns the model and the
/// mean batch loss of every epoch.
pub fn train_ddmn(src: &SourceView, cfg: &DdmnConfig) -> Result<(DdmnModel, Vec<f64>)> {
    let mut model = DdmnModel::init(src.dims(), cfg)?;
    let mut opt = OptimState::adam(cfg.lr)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = src.balanced_batches(cfg.batch, derive_indexed(cfg.seed, "ddmn-epoch", epoch as u64))?;
        let mut total = 0.0;
        for idx in &batches {
            let xb = src.features().select_rows(idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| src.labels()[i]).collect();
            let mut g = Graph::new();
            let bound = model.backbone.bind(&mut g);
            let xv = g.constant(xb);
            let e = embed_on(&mut g, &bound, xv)?;
            let s = similarity_matrix(&mut g, e)?;
            let loss = objective_loss(&mut g, s, &yb, model.tau, model.objective)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    stage: "train-ddmn",
                    epoch,
                    loss: lv,
                });
            }
            g.backward(loss)?;
            let grads = bound.grads(&g);
            opt.step_all(&mut model.backbone.params_mut(), grads)?;
            total += lv;
        }
        let mean = total / batches.len() as f64;
        log::debug!("ddmn epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    Ok((model, curve))
}

/// Mean cosine similarity over same-class and over different-class pairs
/// (`i != j`).
pub fn class_similarity_stats(emb: &Tensor, labels: &[usize]) -> (f64, f64) {
    let n = labels.len();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let s = crate::numcore::dot(emb.row(i), emb.row(j));
            if labels[i] == labels[j] {
                intra += s;
                ni += 1;
            } else {
                inter += s;
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}

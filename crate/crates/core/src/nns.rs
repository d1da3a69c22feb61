//! Nearest-neighbor sampler: gradient descent in a decoder's latent space
//! toward a target embedding, plus an exact brute-force oracle over a bank.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, map_range, Execution};
use crate::genlatent::{self, VaeModel};
use crate::numcore::{cosine, l2_norm, Graph, OptimState, OptimizerKind, Tensor, Var};
use crate::seed::{derive_indexed, rng_from_seed};

/// A differentiable map from latent vectors onto the unit sphere.
pub trait LatentDecoder: Sync {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Decodes a `[n, k]` latent batch to `[n, m]` unit rows.
    fn decode_on(&self, g: &mut Graph, z: Var) -> Result<Var>;
}

impl LatentDecoder for VaeModel {
    fn latent_dim(&self) -> usize {
        VaeModel::latent_dim(self)
    }

    fn output_dim(&self) -> usize {
        self.input_dim()
    }

    fn decode_on(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let dec = self.decoder().bind_frozen(g);
        genlatent::decode_on(g, &dec, z)
    }
}

/// `z -> normalize(z A)` with `A` of shape `[k, m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDecoder {
    map: Tensor,
}

impl LinearDecoder {
    pub fn new(map: Tensor) -> Result<Self> {
        map.matrix_dims()?;
        if map.rank() != 2 {
            return Err(Error::invalid("linear decoder map must be a matrix"));
        }
        Ok(Self { map })
    }

    pub fn identity(k: usize) -> Self {
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        Self {
            map: Tensor::matrix(k, k, data).expect("square"),
        }
    }
}

impl LatentDecoder for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.map.rows()
    }

    fn output_dim(&self) -> usize {
        self.map.cols()
    }

    fn decode_on(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let a = g.constant(self.map.clone());
        let h = g.matmul(z, a)?;
        g.l2_normalize(h)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentOptimizer {
    /// Fixed-step gradient descent.
    #[default]
    Gradient,
    Adam,
}

/// Search hyperparameters shared by every query of a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnsParams {
    pub restarts: usize,
    pub max_iter: usize,
    pub lr: f64,
    /// Stop once the largest coordinate of a latent step is below this.
    pub tol: f64,
    pub seed: u64,
    pub optimizer: LatentOptimizer,
    pub execution: Execution,
}

impl Default for NnsParams {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 500,
            lr: 0.05,
            tol: 1e-5,
            seed: 0,
            optimizer: LatentOptimizer::Gradient,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentQuery {
    pub target: Vec<f64>,
    pub params: NnsParams,
    /// Starting latents, one per restart, replacing the `N(0, I)` draws.
    pub init: Option<Vec<Vec<f64>>>,
}

impl LatentQuery {
    pub fn new(target: Vec<f64>, params: NnsParams) -> Self {
        Self {
            target,
            params,
            init: None,
        }
    }

    pub fn with_init(mut self, init: Vec<Vec<f64>>) -> Self {
        self.init = Some(init);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    /// Latent updates applied.
    pub iterations: usize,
    pub converged: bool,
    pub initial_similarity: f64,
    pub best_similarity: f64,
    pub best_iteration: usize,
    /// Set when the restart was abandoned on a non-finite value.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentQueryResult {
    pub best_latent: Vec<f64>,
    pub best_reconstruction: Vec<f64>,
    pub best_similarity: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartTrace>,
}

impl LatentQueryResult {
    pub fn converged(&self) -> bool {
        self.restarts[self.best_restart].converged
    }

    pub fn total_iterations(&self) -> usize {
        self.restarts.iter().map(|r| r.iterations).sum()
    }
}

struct RestartOutcome {
    trace: RestartTrace,
    best: Option<(Vec<f64>, Vec<f64>)>,
}

fn validate(decoder: &dyn LatentDecoder, query: &LatentQuery) -> Result<()> {
    let p = &query.params;
    if p.restarts == 0 {
        return Err(Error::invalid("nns needs at least one restart"));
    }
    if !(p.lr > 0.0) || !(p.tol > 0.0) {
        return Err(Error::invalid("nns learning rate and tolerance must be positive"));
    }
    if query.target.len() != decoder.output_dim() {
        return Err(Error::ShapeMismatch {
            op: "nns target",
            lhs: vec![query.target.len()],
            rhs: vec![decoder.output_dim()],
        });
    }
    let norm = l2_norm(&query.target);
    if !((norm - 1.0).abs() < 1e-6) {
        return Err(Error::invalid(format!("nns target must be unit-norm, has norm {norm}")));
    }
    if let Some(init) = &query.init {
        if init.len() != p.restarts || init.iter().any(|z| z.len() != decoder.latent_dim()) {
            return Err(Error::invalid("nns initial latents must match restarts and latent dim"));
        }
    }
    Ok(())
}

/// `1 - cos(decode(z), target)` for a `[1, k]` latent leaf.
pub fn nns_objective(g: &mut Graph, decoder: &dyn LatentDecoder, z: Var, target: &[f64]) -> Result<Var> {
    let recon = decoder.decode_on(g, z)?;
    let t = g.constant(Tensor::matrix(1, target.len(), target.to_vec())?);
    let cos = g.cosine_sim(recon, t)?;
    let c = g.sum(cos);
    let neg = g.neg(c);
    Ok(g.add_scalar(neg, 1.0))
}

fn run_restart(decoder: &dyn LatentDecoder, query: &LatentQuery, r: usize) -> Result<RestartOutcome> {
    let p = &query.params;
    let k = decoder.latent_dim();
    let start = match &query.init {
        Some(init) => init[r].clone(),
        None => {
            let mut rng = rng_from_seed(derive_indexed(p.seed, "nns-restart", r as u64));
            (0..k).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    let mut z = Tensor::matrix(1, k, start)?;
    let kind = match p.optimizer {
        LatentOptimizer::Gradient => OptimizerKind::Sgd,
        LatentOptimizer::Adam => OptimizerKind::Adam,
    };
    let mut opt = OptimState::new(kind, p.lr)?;
    let mut trace = RestartTrace {
        iterations: 0,
        converged: false,
        initial_similarity: f64::NAN,
        best_similarity: f64::NEG_INFINITY,
        best_iteration: 0,
        failure: None,
    };
    let mut best = None;
    for it in 0..=p.max_iter {
        let mut g = Graph::new();
        let zv = g.leaf(z.clone());
        let loss = match nns_objective(&mut g, decoder, zv, &query.target) {
            Ok(l) => l,
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        };
        let sim = 1.0 - g.value(loss).item();
        if !sim.is_finite() {
            trace.failure = Some(format!("non-finite similarity at iteration {it}"));
            break;
        }
        if it == 0 {
            trace.initial_similarity = sim;
        }
        if sim > trace.best_similarity {
            trace.best_similarity = sim;
            trace.best_iteration = it;
            let recon = decoder.decode_on(&mut g, zv)?;
            best = Some((z.data().to_vec(), g.value(recon).data().to_vec()));
        }
        if it == p.max_iter {
            break;
        }
        g.backward(loss)?;
        let grad = g.grad(zv).cloned().unwrap_or_else(|| Tensor::zeros(z.shape()));
        if !grad.is_finite() {
            trace.failure = Some(format!("non-finite gradient at iteration {it}"));
            break;
        }
        let before = z.clone();
        opt.step(&mut [&mut z], &[Some(grad)])?;
        let step = z
            .data()
            .iter()
            .zip(before.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if step < p.tol {
            trace.converged = true;
            break;
        }
        trace.iterations += 1;
    }
    if trace.failure.is_some() {
        log::debug!("nns restart {r} abandoned: {:?}", trace.failure);
        best = None;
    }
    debug_assert!(best.is_none() || trace.best_similarity >= trace.initial_similarity);
    Ok(RestartOutcome { trace, best })
}

/// Multi-restart latent search for the decoded point most similar to the
/// query target. Returns the best iterate over all restarts.
pub fn nearest_neighbor(decoder: &dyn LatentDecoder, query: &LatentQuery) -> Result<LatentQueryResult> {
    validate(decoder, query)?;
    let outcomes = map_range(query.params.execution, query.params.restarts, |r| {
        run_restart(decoder, query, r)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut winner: Option<(usize, f64)> = None;
    for (r, o) in outcomes.iter().enumerate() {
        if o.best.is_some() && winner.is_none_or(|(_, s)| o.trace.best_similarity > s) {
            winner = Some((r, o.trace.best_similarity));
        }
    }
    let Some((best_restart, best_similarity)) = winner else {
        let reason = outcomes
            .iter()
            .find_map(|o| o.trace.failure.clone())
            .unwrap_or_else(|| "no finite iterate".into());
        return Err(Error::AllRestartsFailed {
            restarts: query.params.restarts,
            reason,
        });
    };
    let mut restarts = Vec::with_capacity(outcomes.len());
    let mut best = None;
    for (r, o) in outcomes.into_iter().enumerate() {
        if r == best_restart {
            best = o.best;
        }
        restarts.push(o.trace);
    }
    let (best_latent, best_reconstruction) = best.expect("winner has an iterate");
    Ok(LatentQueryResult {
        best_latent,
        best_reconstruction,
        best_similarity,
        best_restart,
        restarts,
    })
}

/// The query used for row `index` of a batch: same hyperparameters, seed
/// derived from the batch seed and the index.
pub fn query_for_target(params: &NnsParams, target: &[f64], index: usize) -> LatentQuery {
    let mut p = params.clone();
    p.seed = derive_indexed(params.seed, "nns-target", index as u64);
    LatentQuery::new(target.to_vec(), p)
}

/// Runs [`nearest_neighbor`] for every row of `targets`.
pub fn batch_nns(
    decoder: &dyn LatentDecoder,
    targets: &[Vec<f64>],
    params: &NnsParams,
) -> Result<Vec<LatentQueryResult>> {
    // Parallelism lives at the target level; restarts run in order inside.
    map_indexed(params.execution, targets, |i, t| {
        let mut q = query_for_target(params, t, i);
        q.params.execution = Execution::Sequential;
        nearest_neighbor(decoder, &q)
    })
    .into_iter()
    .collect()
}

/// Row of `bank` with the largest cosine similarity to `target`; ties go to
/// the lowest index.
pub fn brute_force_nn(target: &[f64], bank: &Tensor) -> Result<(usize, f64)> {
    if bank.is_empty() || bank.rank() != 2 {
        return Err(Error::invalid("brute_force_nn needs a nonempty [n, m] bank"));
    }
    if bank.cols() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "brute_force_nn",
            lhs: vec![target.len()],
            rhs: bank.shape().to_vec(),
        });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, row) in bank.iter_rows().enumerate() {
        let s = cosine(row, target).ok_or(Error::ZeroNorm { op: "brute_force_nn" })?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genlatent::VaeConfig;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn linear_identity_reaches_target() {
        let dec = LinearDecoder::identity(4);
        let params = NnsParams {
            restarts: 3,
            seed: 5,
            ..Default::default()
        };
        let r = nearest_neighbor(&dec, &LatentQuery::new(vec![1.0, 0.0, 0.0, 0.0], params)).unwrap();
        assert!((r.best_similarity - 1.0).abs() < 1e-6, "{}", r.best_similarity);
        let z = &r.best_latent;
        assert!(z[0] > 0.0 && z[1..].iter().all(|v| (v / z[0]).abs() < 1e-2));
    }

    #[test]
    fn fixed_point_start() {
        let vae = VaeModel::init(
            6,
            &VaeConfig {
                latent_dim: 3,
                hidden: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let z0 = vec![0.3, -0.8, 1.1];
        let target = vae
            .decode(&Tensor::matrix(1, 3, z0.clone()).unwrap())
            .unwrap()
            .into_data();
        let params = NnsParams {
            restarts: 1,
            ..Default::default()
        };
        let q = LatentQuery::new(target, params).with_init(vec![z0]);
        let r = nearest_neighbor(&vae, &q).unwrap();
        assert!((r.best_similarity - 1.0).abs() < 1e-12);
        assert_eq!(r.restarts[0].best_iteration, 0);
        assert_eq!(r.restarts[0].iterations, 0);
        assert!(r.converged());
    }

    #[test]
    fn invalid_targets_rejected() {
        let dec = LinearDecoder::identity(3);
        let p = NnsParams::default();
        assert!(nearest_neighbor(&dec, &LatentQuery::new(vec![0.0; 3], p.clone())).is_err());
        assert!(nearest_neighbor(&dec, &LatentQuery::new(vec![1.0, 0.0], p.clone())).is_err());
        let zero_restarts = NnsParams { restarts: 0, ..p };
        assert!(nearest_neighbor(&dec, &LatentQuery::new(vec![1.0, 0.0, 0.0], zero_restarts)).is_err());
    }

    #[test]
    fn non_finite_restarts_all_fail() {
        let dec = LinearDecoder::identity(2);
        let q = LatentQuery::new(
            vec![1.0, 0.0],
            NnsParams {
                restarts: 2,
                ..Default::default()
            },
        )
        .with_init(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            nearest_neighbor(&dec, &q),
            Err(Error::AllRestartsFailed { restarts: 2, .. })
        ));
        let q = LatentQuery::new(
            vec![1.0, 0.0],
            NnsParams {
                restarts: 2,
                ..Default::default()
            },
        )
        .with_init(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let r = nearest_neighbor(&dec, &q).unwrap();
        assert_eq!(r.best_restart, 1);
        assert!(r.restarts[0].failure.is_some());
    }

    #[test]
    fn brute_force_examples() {
        let bank = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let (i, s) = brute_force_nn(&unit(vec![1.0, 0.1, 0.0]), &bank).unwrap();
        assert_eq!(i, 0);
        assert!((s - 1.0 / 1.01f64.sqrt()).abs() < 1e-12);
        assert_eq!(brute_force_nn(&[0.0, 1.0, 0.0], &bank).unwrap(), (1, 1.0));
        assert_eq!(brute_force_nn(&[0.0, 0.0, 1.0], &bank).unwrap(), (0, 0.0));
    }

    #[test]
    fn batch_matches_single_queries_and_order() {
        let dec = LinearDecoder::new(Tensor::matrix(2, 3, vec![1.0, 0.5, -0.2, 0.3, -1.0, 0.8]).unwrap()).unwrap();
        let targets = vec![
            unit(vec![1.0, 0.2, 0.1]),
            unit(vec![-0.3, 1.0, 0.4]),
            unit(vec![0.2, 0.2, -1.0]),
        ];
        let params = NnsParams {
            restarts: 2,
            max_iter: 50,
            seed: 11,
            ..Default::default()
        };
        let batch = batch_nns(&dec, &targets, &params).unwrap();
        for (i, t) in targets.iter().enumerate() {
            let mut q = query_for_target(&params, t, i);
            q.params.execution = Execution::Sequential;
            assert_eq!(nearest_neighbor(&dec, &q).unwrap(), batch[i]);
        }
        let seq = batch_nns(
            &dec,
            &targets,
            &NnsParams {
                execution: Execution::Sequential,
                ..params.clone()
            },
        )
        .unwrap();
        assert_eq!(seq, batch);
        assert!(batch_nns(&dec, &[], &params).unwrap().is_empty());
    }

    #[test]
    fn best_iterate_never_below_start() {
        let dec = LinearDecoder::new(Tensor::matrix(2, 3, vec![1.0, 2.0, -0.5, 0.1, 0.4, 3.0]).unwrap()).unwrap();
        for opt in [LatentOptimizer::Gradient, LatentOptimizer::Adam] {
            let params = NnsParams {
                restarts: 4,
                max_iter: 30,
                lr: 0.5,
                optimizer: opt,
                ..Default::default()
            };
            let r = nearest_neighbor(&dec, &LatentQuery::new(unit(vec![0.3, -0.2, 1.0]), params)).unwrap();
            for t in &r.restarts {
                assert!(t.best_similarity >= t.initial_similarity);
                assert!(r.best_similarity >= t.best_similarity);
            }
        }
    }
}

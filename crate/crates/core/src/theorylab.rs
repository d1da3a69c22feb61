//! Empirical checks of the theory: proxy H-divergence, Bayes risk, the
//! Cover-Hart term, the variance lemma and the target-risk bound.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{cross_entropy_on, evaluate, ClassifierModel, EvalMode, GnndmPipeline};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::nns::{brute_force_nn, NnsParams};
use crate::numcore::{Activation, Graph, MlpParams, OptimState, Tensor};
use crate::seed::{derive_indexed, derive_seed, rng_from_seed};
use crate::synthgen::{LabelingDescriptor, MultiDomainDataset, SourceView};

pub const MIN_PROXY_SAMPLES: usize = 40;

/// Domain discriminator used by [`proxy_h_divergence`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 200,
            batch: 64,
            lr: 5e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyEstimate {
    pub value: f64,
    /// Held-out discriminator accuracy over both folds.
    pub accuracy: f64,
    pub n_test: usize,
}

/// `2 (2 acc - 1)` clamped to `[0, 2]`.
pub fn proxy_from_accuracy(accuracy: f64) -> f64 {
    (2.0 * (2.0 * accuracy - 1.0)).clamp(0.0, 2.0)
}

fn content_hash(t: &Tensor) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in t.shape() {
        h.update((*s as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Proxy A-distance between two sample sets.
///
/// The larger set is subsampled to the size of the smaller one, each set is
/// split in half, and a small MLP discriminator is trained on one half of
/// both and scored on the other, in both directions. The two sets are put in
/// a canonical order first, so the estimate is symmetric in its arguments.
pub fn proxy_h_divergence(a: &Tensor, b: &Tensor, cfg: &ProxyConfig) -> Result<ProxyEstimate> {
    for t in [a, b] {
        if t.rank() != 2 || t.rows() < MIN_PROXY_SAMPLES {
            return Err(Error::TooFewSamples {
                what: "proxy_h_divergence",
                min: MIN_PROXY_SAMPLES,
                got: if t.rank() == 2 { t.rows() } else { 0 },
            });
        }
    }
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "proxy_h_divergence",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (a, b) = if content_hash(a) <= content_hash(b) {
        (a, b)
    } else {
        (b, a)
    };
    let n = a.rows().min(b.rows());
    let d = a.cols();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "proxy-split"));
    let mut pick = |t: &Tensor| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..t.rows()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx
    };
    let (ia, ib) = (pick(a), pick(b));

    // Center on the pooled mean only. Rescaling would stretch whatever small
    // residual spread a collapsed embedding has left.
    let mut mean = vec![0.0; d];
    for row in ia.iter().map(|&i| a.row(i)).chain(ib.iter().map(|&i| b.row(i))) {
        for j in 0..d {
            mean[j] += row[j];
        }
    }
    let total = (2 * n) as f64;
    mean.iter_mut().for_each(|m| *m /= total);
    let standardize = |row: &[f64]| -> Vec<f64> { row.iter().zip(&mean).map(|(x, m)| x - m).collect() };

    let half = n / 2;
    let fold = |lo: usize, hi: usize| -> Result<(Tensor, Vec<usize>)> {
        let mut rows = Vec::with_capacity(2 * (hi - lo));
        let mut labels = Vec::with_capacity(2 * (hi - lo));
        for &i in &ia[lo..hi] {
            rows.push(standardize(a.row(i)));
            labels.push(0);
        }
        for &i in &ib[lo..hi] {
            rows.push(standardize(b.row(i)));
            labels.push(1);
        }
        Ok((Tensor::from_rows(&rows)?, labels))
    };
    let folds = [fold(0, half)?, fold(half, n)?];
    let mut correct = 0usize;
    let mut n_test = 0usize;
    for (k, (train_i, test_i)) in [(0, 1), (1, 0)].into_iter().enumerate() {
        let (x, y) = &folds[train_i];
        let disc = train_discriminator(x, y, cfg, k as u64)?;
        let (xt, yt) = &folds[test_i];
        let preds = disc.predict_batch(xt)?;
        correct += preds.iter().zip(yt).filter(|(p, y)| p == y).count();
        n_test += yt.len();
    }
    let accuracy = correct as f64 / n_test as f64;
    Ok(ProxyEstimate {
        value: proxy_from_accuracy(accuracy),
        accuracy,
        n_test,
    })
}

/// Thin wrapper so the discriminator can reuse the classifier's prediction
/// code; it has a single hidden layer, so it is not a [`ClassifierModel`].
struct Discriminator(MlpParams);

impl Discriminator {
    fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.0.forward(x)?;
        Ok(logits.data().chunks(2).map(crate::classify::argmax).collect())
    }
}

fn train_discriminator(x: &Tensor, y: &[usize], cfg: &ProxyConfig, fold: u64) -> Result<Discriminator> {
    let mut rng = rng_from_seed(derive_indexed(cfg.seed, "proxy-init", fold));
    let mut mlp = MlpParams::xavier(
        &[x.cols(), cfg.hidden, 2],
        &[Activation::Relu, Activation::Identity],
        &mut rng,
    )?;
    let mut opt = OptimState::adam(cfg.lr)?;
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(cfg.batch.max(1)) {
            let xb = x.select_rows(chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let mut g = Graph::new();
            let bound = mlp.bind(&mut g);
            let xv = g.constant(xb);
            let logits = bound.forward(&mut g, xv)?;
            let loss = cross_entropy_on(&mut g, logits, &yb)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    stage: "proxy discriminator",
                    epoch,
                    loss: lv,
                });
            }
            g.backward(loss)?;
            let grads = bound.grads(&g);
            opt.step_all(&mut mlp.params_mut(), grads)?;
        }
    }
    Ok(Discriminator(mlp))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BayesMode {
    /// Midpoint quadrature on a `grid x grid` lattice of the semantic plane.
    Analytic {
        grid: usize,
    },
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

/// Half-width of the quadrature box around the class means, in standard
/// deviations.
const GRID_SPAN: f64 = 8.0;
const MC_CHUNK: usize = 10_000;

fn grid_box(desc: &LabelingDescriptor) -> ([f64; 2], [f64; 2]) {
    let sd = desc
        .covariances
        .iter()
        .map(|c| c[0].max(c[3]).sqrt())
        .fold(0.0, f64::max);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for m in &desc.means {
        for k in 0..2 {
            lo[k] = lo[k].min(m[k] - GRID_SPAN * sd);
            hi[k] = hi[k].max(m[k] + GRID_SPAN * sd);
        }
    }
    (lo, hi)
}

/// Calls `f(u, cell_area)` at every grid midpoint.
fn for_each_cell(desc: &LabelingDescriptor, grid: usize, mut f: impl FnMut([f64; 2], f64)) {
    let (lo, hi) = grid_box(desc);
    let h = [(hi[0] - lo[0]) / grid as f64, (hi[1] - lo[1]) / grid as f64];
    for i in 0..grid {
        for j in 0..grid {
            let u = [lo[0] + (i as f64 + 0.5) * h[0], lo[1] + (j as f64 + 0.5) * h[1]];
            f(u, h[0] * h[1]);
        }
    }
}

fn check_priors(desc: &LabelingDescriptor, priors: &[f64]) -> Result<()> {
    if priors.len() != desc.classes || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("class priors must match the classes and sum to 1"));
    }
    Ok(())
}

/// `E[min(eta, 1 - eta)]` under the labeling descriptor with the given class
/// priors. For more than two classes the Monte-Carlo mode uses `1 - max eta`.
pub fn bayes_risk(
    desc: &LabelingDescriptor,
    priors: &[f64],
    mode: BayesMode,
    exec: Execution,
) -> Result<BayesEstimate> {
    check_priors(desc, priors)?;
    match mode {
        BayesMode::Analytic { grid } => {
            if desc.classes != 2 {
                return Err(Error::NonBinary(desc.classes));
            }
            if grid < 2 {
                return Err(Error::invalid("quadrature grid needs at least 2 cells per axis"));
            }
            let mut total = 0.0;
            for_each_cell(desc, grid, |u, area| {
                let mix: f64 = desc.class_densities(u, priors).iter().sum();
                let eta = desc.posterior(u, priors);
                total += area * mix * eta[0].min(eta[1]);
            });
            Ok(BayesEstimate {
                value: total,
                stderr: 0.0,
            })
        }
        BayesMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::invalid("monte-carlo Bayes risk needs samples"));
            }
            let chunks = samples.div_ceil(MC_CHUNK);
            let sums = map_range(exec, chunks, |c| {
                let mut rng = rng_from_seed(derive_indexed(seed, "bayes-mc", c as u64));
                let n = MC_CHUNK.min(samples - c * MC_CHUNK);
                let mut s = 0.0;
                for _ in 0..n {
                    let y = sample_class(priors, &mut rng);
                    let u = desc.sample_semantic(y, &mut rng);
                    let eta = desc.posterior(u, priors);
                    s += 1.0 - eta.iter().copied().fold(0.0, f64::max);
                }
                s
            });
            let value = sums.iter().sum::<f64>() / samples as f64;
            Ok(BayesEstimate {
                value,
                stderr: binomial_stderr(value, samples),
            })
        }
    }
}

fn sample_class<R: Rng + ?Sized>(priors: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in priors.iter().enumerate() {
        acc += p;
        if r < acc {
            return c;
        }
    }
    priors.len() - 1
}

/// Bayes risk from posteriors `eta_1(x_i)` of a binary problem.
pub fn bayes_risk_from_posterior(etas: &[f64]) -> Result<BayesEstimate> {
    if etas.is_empty() || etas.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::invalid("posteriors must be a nonempty list of probabilities"));
    }
    let value = etas.iter().map(|&e| e.min(1.0 - e)).sum::<f64>() / etas.len() as f64;
    Ok(BayesEstimate {
        value,
        stderr: binomial_stderr(value, etas.len()),
    })
}

pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Largest conditional label variance `eta (1 - eta)` over the quadrature
/// grid. Binary only.
pub fn variance_bound(desc: &LabelingDescriptor, priors: &[f64], grid: usize) -> Result<f64> {
    check_priors(desc, priors)?;
    if desc.classes != 2 {
        return Err(Error::NonBinary(desc.classes));
    }
    let mut best = 0.0f64;
    for_each_cell(desc, grid, |u, _| {
        let e = desc.posterior(u, priors)[1];
        best = best.max(e * (1.0 - e));
    });
    Ok(best.min(0.25))
}

/// `2 b (1 - b)`.
pub fn cover_hart_term(bayes: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&bayes) {
        return Err(Error::invalid(format!("Bayes risk {bayes} outside [0, 0.5]")));
    }
    Ok(2.0 * bayes * (1.0 - bayes))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Record {
    pub sigma2: f64,
    pub bayes: f64,
    /// `1/2 - sqrt(1/4 - sigma2)`.
    pub endpoint: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn lemma1_check(sigma2: f64, bayes: f64) -> Result<Lemma1Record> {
    if !(sigma2 > 0.0 && sigma2 <= 0.25) {
        return Err(Error::invalid(format!("variance bound {sigma2} outside (0, 0.25]")));
    }
    let lhs = cover_hart_term(bayes)?;
    let rhs = 2.0 * sigma2;
    Ok(Lemma1Record {
        sigma2,
        bayes,
        endpoint: 0.5 - (0.25 - sigma2).sqrt(),
        lhs,
        rhs,
        holds: lhs < rhs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub proxy: ProxyConfig,
    pub bayes_grid: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            proxy: ProxyConfig::default(),
            bayes_grid: 400,
            mc_samples: 200_000,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDivergence {
    pub a: usize,
    pub b: usize,
    pub raw: f64,
    pub transformed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub target_domain: usize,
    pub pairs: Vec<PairDivergence>,
    pub delta_raw: f64,
    pub delta_transformed: f64,
    /// Pooled transformed source against transformed target; stands in for
    /// the divergence to the best source mixture.
    pub lambda_proxy: f64,
    pub source_risk: f64,
    pub source_n: usize,
    pub target_risk_gnndm: f64,
    pub target_risk_direct: Option<f64>,
    pub target_n: usize,
    pub bayes_analytic: f64,
    pub bayes_mc: BayesEstimate,
    pub bayes_agree: bool,
    pub cover_hart: f64,
    pub sigma2: f64,
    pub lemma1: Lemma1Record,
    pub combined_stderr: f64,
    pub bound: f64,
    pub prop3_holds: bool,
    /// Share of target points whose nearest source neighbor the classifier
    /// gets wrong.
    pub term_classifier: f64,
    /// Share of target points labeled differently from their nearest source
    /// neighbor.
    pub term_label: f64,
    /// Risk of classifying each target by its nearest source neighbor.
    pub neighbor_risk: f64,
    pub notes: Vec<String>,
}

/// Everything [`verify_prop3`] reads.
pub struct Prop3Inputs<'a> {
    pub dataset: &'a MultiDomainDataset,
    pub target: usize,
    pub pipeline: &'a GnndmPipeline,
    pub direct: Option<&'a ClassifierModel>,
    /// Embedded source examples the classifier was trained on; the neighbor
    /// bank for the proof terms.
    pub source_train: &'a SourceView,
    pub source_holdout: &'a SourceView,
    pub nns: &'a NnsParams,
    /// Precomputed gnndm predictions on the target inputs, in order.
    pub gnndm_predictions: Option<&'a [usize]>,
}

/// Measures every quantity of the target-risk bound and checks
/// `R_T <= R_S + 2 B* (1 - B*) + 3 se`.
pub fn verify_prop3(inp: &Prop3Inputs<'_>, cfg: &BoundsConfig) -> Result<BoundsReport> {
    let ds = inp.dataset;
    if ds.classes() != 2 {
        return Err(Error::NonBinary(ds.classes()));
    }
    let (_, target) = ds.split_sources_target(inp.target)?;
    let ddmn = &inp.pipeline.ddmn;
    let clf = &inp.pipeline.clf;
    let mut notes = vec!["lambda_proxy compares the pooled transformed source with the transformed target".to_string()];

    // Risks.
    let hold_emb = ddmn.embed(inp.source_holdout.features())?;
    let source = evaluate(
        EvalMode::Embedding,
        &clf.predict_batch(&hold_emb)?,
        inp.source_holdout.labels(),
        2,
    )?;
    let preds = match inp.gnndm_predictions {
        Some(p) => p.to_vec(),
        None => {
            let (p, results) = inp.pipeline.infer(target.inputs(), inp.nns)?;
            let unconverged = results.iter().filter(|r| !r.converged()).count();
            if unconverged > 0 {
                notes.push(format!("{unconverged} latent searches stopped at the iteration cap"));
            }
            p
        }
    };
    let tgt = evaluate(EvalMode::Gnndm, &preds, target.labels(), 2)?;
    let direct = match inp.direct {
        Some(m) => Some(evaluate(EvalMode::Direct, &m.predict_batch(target.inputs())?, target.labels(), 2)?.risk),
        None => None,
    };

    // Bayes risk under the target's class priors.
    let priors = ds
        .meta
        .domains
        .get(inp.target)
        .ok_or(Error::UnknownDomain(inp.target))?
        .class_priors
        .clone();
    let desc = ds.descriptor();
    let analytic = bayes_risk(
        desc,
        &priors,
        BayesMode::Analytic { grid: cfg.bayes_grid },
        cfg.execution,
    )?;
    let mc = bayes_risk(
        desc,
        &priors,
        BayesMode::MonteCarlo {
            samples: cfg.mc_samples,
            seed: derive_seed(cfg.seed, "bayes"),
        },
        cfg.execution,
    )?;
    let bayes_agree = (mc.value - analytic.value).abs() <= 2.0 * mc.stderr;
    let b = analytic.value.clamp(0.0, 0.5);
    let cover_hart = cover_hart_term(b)?;
    let sigma2 = variance_bound(desc, &priors, cfg.bayes_grid)?;
    let lemma1 = lemma1_check(sigma2, b)?;

    let combined_stderr =
        (binomial_stderr(source.risk, source.n).powi(2) + binomial_stderr(tgt.risk, tgt.n).powi(2)).sqrt();
    let bound = source.risk + cover_hart + 3.0 * combined_stderr;

    // Proof terms through the exact nearest source neighbor.
    let bank = ddmn.embed(inp.source_train.features())?;
    let bank_labels = inp.source_train.labels();
    let bank_preds = clf.predict_batch(&bank)?;
    let tgt_emb = ddmn.embed(target.inputs())?;
    let nn = map_range(cfg.execution, tgt_emb.rows(), |i| brute_force_nn(tgt_emb.row(i), &bank))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n_t = nn.len() as f64;
    let mut term_classifier = 0.0;
    let mut term_label = 0.0;
    let mut neighbor_risk = 0.0;
    for ((j, _), &y) in nn.iter().zip(target.labels()) {
        term_classifier += f64::from(u8::from(bank_preds[*j] != bank_labels[*j]));
        term_label += f64::from(u8::from(bank_labels[*j] != y));
        neighbor_risk += f64::from(u8::from(bank_preds[*j] != y));
    }

    // Divergences.
    let sources = ds.source_domains(inp.target);
    let mut jobs = Vec::new();
    for (ai, &a) in sources.iter().enumerate() {
        for &b in &sources[ai + 1..] {
            jobs.push((a, b));
        }
    }
    let raw: Vec<Tensor> = sources.iter().map(|&k| ds.domain_features(k)).collect::<Result<_>>()?;
    let emb: Vec<Tensor> = raw.iter().map(|x| ddmn.embed(x)).collect::<Result<_>>()?;
    let pos = |k: usize| sources.iter().position(|&s| s == k).expect("source id");
    let pooled = ddmn.embed(&pooled_sources(ds, &sources)?)?;
    let proxy_cfg = |label: &str, idx: usize| ProxyConfig {
        seed: derive_indexed(cfg.seed, label, idx as u64),
        ..cfg.proxy.clone()
    };
    let estimates = map_range(cfg.execution, 2 * jobs.len() + 1, |t| {
        if t == 2 * jobs.len() {
            return proxy_h_divergence(&pooled, &tgt_emb, &proxy_cfg("proxy-lambda", 0));
        }
        let (a, b) = jobs[t / 2];
        if t % 2 == 0 {
            proxy_h_divergence(&raw[pos(a)], &raw[pos(b)], &proxy_cfg("proxy-raw", t / 2))
        } else {
            proxy_h_divergence(&emb[pos(a)], &emb[pos(b)], &proxy_cfg("proxy-transformed", t / 2))
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<PairDivergence> = jobs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| PairDivergence {
            a,
            b,
            raw: estimates[2 * i].value,
            transformed: estimates[2 * i + 1].value,
        })
        .collect();
    let delta_raw = pairs.iter().map(|p| p.raw).fold(0.0, f64::max);
    let delta_transformed = pairs.iter().map(|p| p.transformed).fold(0.0, f64::max);

    Ok(BoundsReport {
        target_domain: inp.target,
        delta_raw,
        delta_transformed,
        lambda_proxy: estimates[2 * jobs.len()].value,
        pairs,
        source_risk: source.risk,
        source_n: source.n,
        target_risk_gnndm: tgt.risk,
        target_risk_direct: direct,
        target_n: tgt.n,
        bayes_analytic: analytic.value,
        bayes_mc: mc,
        bayes_agree,
        cover_hart,
        sigma2,
        lemma1,
        combined_stderr,
        bound,
        prop3_holds: tgt.risk <= bound,
        term_classifier: term_classifier / n_t,
        term_label: term_label / n_t,
        neighbor_risk: neighbor_risk / n_t,
        notes,
    })
}

fn pooled_sources(ds: &MultiDomainDataset, sources: &[usize]) -> Result<Tensor> {
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| sources.contains(&ds.domain_ids()[i]))
        .collect();
    ds.features().select_rows(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, offset: f64, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let data = (0..n * d)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + if i % d == 0 { offset } else { 0.0 }
            })
            .collect();
        Tensor::matrix(n, d, data).unwrap()
    }

    fn fast_proxy() -> ProxyConfig {
        ProxyConfig {
            epochs: 40,
            ..Default::default()
        }
    }

    #[test]
    fn proxy_accuracy_formula() {
        assert_eq!(proxy_from_accuracy(0.75), 1.0);
        assert_eq!(proxy_from_accuracy(0.4), 0.0);
        assert_eq!(proxy_from_accuracy(1.0), 2.0);
    }

    #[test]
    fn proxy_same_and_separated() {
        let a = gaussian(400, 3, 0.0, 1);
        let b = gaussian(400, 3, 0.0, 2);
        let same = proxy_h_divergence(&a, &b, &fast_proxy()).unwrap();
        assert!(same.value < 0.15, "{same:?}");
        let far = gaussian(400, 3, 20.0, 3);
        let sep = proxy_h_divergence(&a, &far, &fast_proxy()).unwrap();
        assert!(sep.value > 1.8, "{sep:?}");
        let back = proxy_h_divergence(&far, &a, &fast_proxy()).unwrap();
        assert_eq!(back, sep);
    }

    #[test]
    fn proxy_needs_samples() {
        let a = gaussian(39, 2, 0.0, 1);
        let b = gaussian(100, 2, 0.0, 2);
        assert!(matches!(
            proxy_h_divergence(&a, &b, &fast_proxy()),
            Err(Error::TooFewSamples { got: 39, .. })
        ));
    }

    fn desc(rho: f64) -> LabelingDescriptor {
        LabelingDescriptor {
            classes: 2,
            means: vec![[3.0, 0.0], [-3.0, 0.0]],
            covariances: vec![[1.0, 0.0, 0.0, 1.0]; 2],
            noise_rate: rho,
        }
    }

    /// `Phi(-3)`, the clean error of two unit Gaussians six apart.
    const PHI_M3: f64 = 0.001_349_898_031_630_094_6;

    #[test]
    fn analytic_bayes_matches_closed_form() {
        for rho in [0.0, 0.1, 0.3] {
            let b = bayes_risk(
                &desc(rho),
                &[0.5, 0.5],
                BayesMode::Analytic { grid: 400 },
                Execution::Sequential,
            )
            .unwrap();
            let exact = rho + (1.0 - 2.0 * rho) * PHI_M3;
            assert!((b.value - exact).abs() < 5e-6, "rho {rho}: {} vs {exact}", b.value);
        }
    }

    #[test]
    fn monte_carlo_agrees_and_is_deterministic() {
        let d = desc(0.1);
        let mode = BayesMode::MonteCarlo {
            samples: 50_000,
            seed: 4,
        };
        let mc = bayes_risk(&d, &[0.5, 0.5], mode, Execution::Parallel).unwrap();
        let seq = bayes_risk(&d, &[0.5, 0.5], mode, Execution::Sequential).unwrap();
        assert_eq!(mc, seq);
        let an = bayes_risk(
            &d,
            &[0.5, 0.5],
            BayesMode::Analytic { grid: 300 },
            Execution::Sequential,
        )
        .unwrap();
        assert!((mc.value - an.value).abs() < 2.0 * mc.stderr);
    }

    #[test]
    fn bayes_edge_cases() {
        assert_eq!(bayes_risk_from_posterior(&[0.5; 10]).unwrap().value, 0.5);
        assert!(bayes_risk_from_posterior(&[]).is_err());
        let three = LabelingDescriptor {
            classes: 3,
            means: vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]],
            covariances: vec![[1.0, 0.0, 0.0, 1.0]; 3],
            noise_rate: 0.0,
        };
        let p = [1.0 / 3.0; 3];
        assert!(matches!(
            bayes_risk(&three, &p, BayesMode::Analytic { grid: 10 }, Execution::Sequential),
            Err(Error::NonBinary(3))
        ));
        assert!(bayes_risk(
            &three,
            &p,
            BayesMode::MonteCarlo { samples: 100, seed: 0 },
            Execution::Sequential
        )
        .is_ok());
    }

    #[test]
    fn cover_hart_values() {
        assert_eq!(cover_hart_term(0.0).unwrap(), 0.0);
        assert_eq!(cover_hart_term(0.5).unwrap(), 0.5);
        assert!((cover_hart_term(0.1).unwrap() - 0.18).abs() < 1e-15);
        assert!(cover_hart_term(0.6).is_err());
    }

    #[test]
    fn lemma1_examples() {
        let r = lemma1_check(0.1, 0.1).unwrap();
        assert!((r.endpoint - 0.11270).abs() < 1e-5);
        assert!((r.lhs - 0.18).abs() < 1e-15 && (r.rhs - 0.2).abs() < 1e-15 && r.holds);
        let edge = lemma1_check(0.25, 0.5).unwrap();
        assert_eq!((edge.endpoint, edge.rhs, edge.lhs), (0.5, 0.5, 0.5));
        assert!(!edge.holds);
        assert!(lemma1_check(0.25, 0.4).unwrap().holds);
        assert!(lemma1_check(0.3, 0.1).is_err());
        assert!(lemma1_check(0.0, 0.1).is_err());
    }

    #[test]
    fn variance_bound_reaches_quarter_on_the_boundary() {
        let s = variance_bound(&desc(0.0), &[0.5, 0.5], 101).unwrap();
        assert!(s > 0.249 && s <= 0.25);
    }
}

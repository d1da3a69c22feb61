//! Source classifier, the end-to-end inference path (embed, search, classify
//! the retrieved neighbor) and 0-1 evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ddmn::DdmnModel;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::genlatent::VaeModel;
use crate::nns::{batch_nns, LatentQueryResult, NnsParams};
use crate::numcore::{Activation, Checkpoint, Graph, MlpParams, MlpSpec, OptimState, Tensor, Var};
use crate::seed::{derive_indexed, derive_seed, rng_from_seed};

pub const CHECKPOINT_KIND: &str = "clf";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 64,
            lr: 1e-3,
            hidden: [64, 64],
            seed: 0,
        }
    }
}

/// `m -> h1 -> h2 -> C` relu network read through a softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    mlp: MlpParams,
}

impl ClassifierModel {
    pub fn new(mlp: MlpParams) -> Result<Self> {
        if mlp.layers().len() != 3 {
            return Err(Error::invalid(format!(
                "classifier needs exactly 2 hidden layers, got {}",
                mlp.layers().len().saturating_sub(1)
            )));
        }
        if mlp.output_dim() < 2 {
            return Err(Error::invalid("classifier needs at least two classes"));
        }
        Ok(Self { mlp })
    }

    pub fn init(input_dim: usize, classes: usize, cfg: &ClassifierConfig) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "clf-init"));
        let mlp = MlpParams::xavier(
            &[input_dim, cfg.hidden[0], cfg.hidden[1], classes],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            &mut rng,
        )?;
        Self::new(mlp)
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.forward(x)
    }

    /// Row-wise softmax probabilities.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.logits(x)?;
        let c = self.classes();
        let mut out = Vec::with_capacity(logits.len());
        for row in logits.data().chunks(c) {
            out.extend(softmax(row));
        }
        Tensor::new(logits.shape().to_vec(), out)
    }

    /// Class and probability vector for one input.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let p = self
            .probabilities(&Tensor::matrix(1, x.len(), x.to_vec())?)?
            .into_data();
        Ok((argmax(&p), p))
    }

    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.data().chunks(self.classes()).map(argmax).collect())
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, seed, serde_json::Value::Null);
        let spec = ck.push_mlp("clf", &self.mlp);
        ck.header.meta = serde_json::to_value(spec).expect("plain data");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let spec: MlpSpec = ck.meta()?;
        Self::new(ck.mlp("clf", &spec)?)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} out of range for {classes} classes")));
        }
        data[i * classes + y] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy_on(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = g.value(logits).matrix_dims()?;
    if n != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: vec![n, c],
            rhs: vec![labels.len()],
        });
    }
    let ls = g.log_softmax(logits)?;
    let mask = g.constant(one_hot(labels, c)?);
    let picked = g.mul(ls, mask)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / n as f64))
}

/// Cross-entropy training with Adam on shuffled minibatches.
pub fn train_classifier(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierModel, Vec<f64>)> {
    let n = features.rows();
    if n == 0 || n != labels.len() || cfg.batch == 0 {
        return Err(Error::invalid(
            "train_classifier needs matching features and labels and a positive batch",
        ));
    }
    let mut model = ClassifierModel::init(features.cols(), classes, cfg)?;
    let mut opt = OptimState::adam(cfg.lr)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_indexed(cfg.seed, "clf-epoch", epoch as u64));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in idx.chunks(cfg.batch) {
            let xb = features.select_rows(chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let bound = model.mlp.bind(&mut g);
            let x = g.constant(xb);
            let logits = bound.forward(&mut g, x)?;
            let loss = cross_entropy_on(&mut g, logits, &yb)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    stage: "train-clf",
                    epoch,
                    loss: lv,
                });
            }
            g.backward(loss)?;
            let grads = bound.grads(&g);
            opt.step_all(&mut model.mlp.params_mut(), grads)?;
            total += lv;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok((model, curve))
}

/// The three trained pieces of the embed, search, classify path.
#[derive(Clone, Debug, PartialEq)]
pub struct GnndmPipeline {
    pub ddmn: DdmnModel,
    pub vae: VaeModel,
    pub clf: ClassifierModel,
}

impl GnndmPipeline {
    pub fn new(ddmn: DdmnModel, vae: VaeModel, clf: ClassifierModel) -> Result<Self> {
        let m = ddmn.embed_dim();
        if vae.input_dim() != m || clf.input_dim() != m {
            return Err(Error::invalid(format!(
                "embedding dims disagree: ddmn {m}, vae {}, classifier {}",
                vae.input_dim(),
                clf.input_dim()
            )));
        }
        Ok(Self { ddmn, vae, clf })
    }

    /// Classifies the latent nearest neighbor of each target embedding. The
    /// raw inputs only ever pass through the embedding network.
    pub fn infer(&self, inputs: &Tensor, params: &NnsParams) -> Result<(Vec<usize>, Vec<LatentQueryResult>)> {
        let emb = self.ddmn.embed(inputs)?;
        let targets: Vec<Vec<f64>> = emb.iter_rows().map(<[f64]>::to_vec).collect();
        let results = batch_nns(&self.vae, &targets, params)?;
        let rows: Vec<&[f64]> = results.iter().map(|r| r.best_reconstruction.as_slice()).collect();
        let preds = if rows.is_empty() {
            Vec::new()
        } else {
            self.clf.predict_batch(&Tensor::from_rows(&rows)?)?
        };
        Ok((preds, results))
    }

    /// Classifies the target embedding itself, skipping the search.
    pub fn predict_embedded(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        self.clf.predict_batch(&self.ddmn.embed(inputs)?)
    }
}

/// Single-example form of [`GnndmPipeline::infer`].
pub fn infer_gnndm(pipeline: &GnndmPipeline, x: &[f64], params: &NnsParams) -> Result<(usize, LatentQueryResult)> {
    let (mut preds, mut results) = pipeline.infer(&Tensor::matrix(1, x.len(), x.to_vec())?, params)?;
    Ok((preds.remove(0), results.remove(0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Baseline classifier on raw pooled-source features.
    Direct,
    Gnndm,
    /// Source classifier applied to the target embedding without the search.
    Embedding,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Direct => "direct",
            EvalMode::Gnndm => "gnndm",
            EvalMode::Embedding => "embedding",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub class: usize,
    pub n: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mode: EvalMode,
    pub n: usize,
    pub errors: usize,
    pub accuracy: f64,
    /// Empirical 0-1 risk.
    pub risk: f64,
    pub per_class: Vec<ClassBreakdown>,
}

impl Evaluation {
    /// Binomial standard error of the risk.
    pub fn stderr(&self) -> f64 {
        (self.risk * (1.0 - self.risk) / self.n as f64).sqrt()
    }
}

pub fn evaluate(mode: EvalMode, predictions: &[usize], labels: &[usize], classes: usize) -> Result<Evaluation> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("evaluate needs equally many predictions and labels"));
    }
    let mut per_class: Vec<ClassBreakdown> = (0..classes)
        .map(|class| ClassBreakdown {
            class,
            n: 0,
            correct: 0,
        })
        .collect();
    let mut errors = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        let b = per_class
            .get_mut(y)
            .ok_or_else(|| Error::invalid(format!("label {y} out of range")))?;
        b.n += 1;
        if p == y {
            b.correct += 1;
        } else {
            errors += 1;
        }
    }
    let n = labels.len();
    let risk = errors as f64 / n as f64;
    Ok(Evaluation {
        mode,
        n,
        errors,
        accuracy: 1.0 - risk,
        risk,
        per_class,
    })
}

/// Predictions of a classifier over many inputs, split into chunks that may
/// run concurrently.
pub fn predict_chunked(model: &ClassifierModel, x: &Tensor, exec: Execution) -> Result<Vec<usize>> {
    const CHUNK: usize = 256;
    let n = x.rows();
    let chunks = n.div_ceil(CHUNK);
    let parts = map_range(exec, chunks, |c| {
        let idx: Vec<usize> = (c * CHUNK..((c + 1) * CHUNK).min(n)).collect();
        model.predict_batch(&x.select_rows(&idx)?)
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Layer;

    fn hand_model() -> ClassifierModel {
        // Routes the first input coordinate to class 1.
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let layer = |activation| Layer {
            weight: eye.clone(),
            bias: Tensor::zeros(&[2]),
            activation,
        };
        let last = Layer {
            weight: Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
            activation: Activation::Identity,
        };
        ClassifierModel::new(
            MlpParams::from_layers(vec![layer(Activation::Relu), layer(Activation::Relu), last]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_set_weights_route_e1() {
        let m = hand_model();
        let (c, p) = m.predict(&[1.0, 0.0]).unwrap();
        assert_eq!(c, 1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap().0, 0);
    }

    #[test]
    fn softmax_and_argmax() {
        assert_eq!(softmax(&[2.0, 2.0]), vec![0.5, 0.5]);
        assert_eq!(argmax(&[0.3, 0.3, 0.1]), 0);
        let p = softmax(&[1000.0, -1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn cross_entropy_uniform_is_log_c() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[4, 3]));
        let ce = cross_entropy_on(&mut g, l, &[0, 1, 2, 0]).unwrap();
        assert!((g.value(ce).item() - 3f64.ln()).abs() < 1e-12);
    }

    fn separable(n: usize) -> (Tensor, Vec<usize>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let t = i as f64 * 0.37;
            let y = i % 2;
            let s = if y == 0 { 1.0 } else { -1.0 };
            let v = [s * (1.0 + 0.3 * t.sin()), 0.5 * t.cos(), 0.2 * (2.0 * t).sin()];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.push(v.iter().map(|x| x / norm).collect::<Vec<_>>());
            labels.push(y);
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn trains_on_separable_embeddings() {
        let (x, y) = separable(200);
        let cfg = ClassifierConfig {
            epochs: 100,
            seed: 3,
            ..Default::default()
        };
        let (m, curve) = train_classifier(&x, &y, 2, &cfg).unwrap();
        assert!(curve.last().unwrap() < &curve[0]);
        let e = evaluate(EvalMode::Direct, &m.predict_batch(&x).unwrap(), &y, 2).unwrap();
        assert!(e.accuracy >= 0.99, "{}", e.accuracy);
        let (m2, _) = train_classifier(&x, &y, 2, &cfg).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn untrained_is_near_chance() {
        let (x, y) = separable(200);
        let (m, _) = train_classifier(
            &x,
            &y,
            2,
            &ClassifierConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        let e = evaluate(EvalMode::Direct, &m.predict_batch(&x).unwrap(), &y, 2).unwrap();
        assert!((e.accuracy - 0.5).abs() <= 0.5);
    }

    #[test]
    fn evaluation_identities() {
        let y = vec![0, 1, 1, 0, 2, 2];
        let perfect = evaluate(EvalMode::Gnndm, &y, &y, 3).unwrap();
        assert_eq!((perfect.accuracy, perfect.risk), (1.0, 0.0));
        let constant = evaluate(EvalMode::Direct, &[1; 6], &y, 3).unwrap();
        assert!((constant.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(constant.per_class[1].correct, 2);
        for errors in 0..=97usize {
            let preds: Vec<usize> = (0..97).map(|i| usize::from(i < errors)).collect();
            let e = evaluate(EvalMode::Direct, &preds, &[0; 97], 2).unwrap();
            assert_eq!(e.accuracy + e.risk, 1.0);
        }
    }

    #[test]
    fn checkpoint_and_shape_rules() {
        let m = hand_model();
        let back =
            ClassifierModel::from_checkpoint(&Checkpoint::read_from(m.to_checkpoint(1).to_bytes().as_slice()).unwrap())
                .unwrap();
        assert_eq!(back, m);
        let mut rng = rng_from_seed(0);
        let shallow = MlpParams::xavier(&[2, 4, 2], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        assert!(ClassifierModel::new(shallow).is_err());
    }

    #[test]
    fn chunked_prediction_matches() {
        let (x, _) = separable(600);
        let m = ClassifierModel::init(3, 2, &ClassifierConfig::default()).unwrap();
        let a = predict_chunked(&m, &x, Execution::Parallel).unwrap();
        assert_eq!(a, m.predict_batch(&x).unwrap());
    }
}

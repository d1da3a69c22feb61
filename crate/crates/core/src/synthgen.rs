//! Multi-domain synthetic data with one shared labeling function.
//!
//! Every class is a Gaussian in a 2-D semantic plane. Each example gets
//! `dims - 2` nuisance coordinates of isotropic noise; the domain then
//! rotates, rescales and translates the nuisance block (and, only when the
//! `label_shift` knob is non-zero, rotates the semantic plane). A fixed
//! global rotation embeds the result in `dims` dimensions. Labels are drawn
//! before any domain transform, then flipped with probability `noise_rate`,
//! so the posterior `P(y | x)` depends only on the semantic coordinates and
//! is identical in every domain.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::seed::{derive_indexed, derive_seed, rng_from_seed, SeededRng};

pub const SEMANTIC_DIMS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_domains: usize,
    pub per_domain: usize,
    pub classes: usize,
    pub dims: usize,
    /// Magnitude of the inter-domain shift; 0 makes every domain identical.
    pub shift: f64,
    /// Symmetric label-flip rate.
    pub noise_rate: f64,
    /// Enforce equal class frequencies in every domain.
    pub balance: bool,
    pub seed: u64,
    /// Radius of the circle the class means sit on (semantic std is 1).
    pub class_separation: f64,
    /// Std of the nuisance coordinates before the domain transform.
    pub nuisance_scale: f64,
    /// Semantic-plane rotation per domain index, in radians. Non-zero values
    /// break the shared labeling function; only for negative tests.
    pub label_shift: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_domains: 4,
            per_domain: 600,
            classes: 2,
            dims: 10,
            shift: 2.0,
            noise_rate: 0.0,
            balance: true,
            seed: 0,
            class_separation: 3.0,
            nuisance_scale: 1.0,
            label_shift: 0.0,
        }
    }
}

impl GeneratorConfig {
    /// Frozen benchmark for the gnndm-vs-direct comparison: many strongly
    /// shifted nuisance coordinates and few examples per domain, so a raw
    /// feature classifier latches onto nuisance directions.
    pub fn shifted_benchmark() -> Self {
        Self {
            per_domain: 200,
            dims: 80,
            shift: 3.0,
            nuisance_scale: 4.0,
            ..Self::default()
        }
    }
}

/// Class-conditional base distributions in the semantic plane, before any
/// domain transform. This is the labeling function every domain shares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingDescriptor {
    pub classes: usize,
    pub means: Vec<[f64; 2]>,
    /// Row-major 2x2 covariance per class.
    pub covariances: Vec<[f64; 4]>,
    pub noise_rate: f64,
}

impl LabelingDescriptor {
    fn log_density(&self, class: usize, u: [f64; 2]) -> f64 {
        let [a, b, c, d] = self.covariances[class];
        let det = a * d - b * c;
        let (dx, dy) = (u[0] - self.means[class][0], u[1] - self.means[class][1]);
        // inverse of [[a, b], [c, d]] is [[d, -b], [-c, a]] / det
        let q = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det;
        -0.5 * q - (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln()
    }

    /// `P(observed label = c | u)` for every class, given class priors.
    pub fn posterior(&self, u: [f64; 2], priors: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.classes)
            .map(|c| priors[c].ln() + self.log_density(c, u))
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let clean: Vec<f64> = w.iter().map(|v| v / z).collect();
        let rho = self.noise_rate;
        let other = if self.classes > 1 {
            rho / (self.classes - 1) as f64
        } else {
            0.0
        };
        (0..self.classes)
            .map(|c| {
                let off: f64 = (0..self.classes).filter(|&k| k != c).map(|k| clean[k]).sum();
                (1.0 - rho) * clean[c] + other * off
            })
            .collect()
    }

    /// Mixture density `sum_c prior_c * N(u; mean_c, cov_c)`, weighted per class.
    pub fn class_densities(&self, u: [f64; 2], priors: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| priors[c] * self.log_density(c, u).exp())
            .collect()
    }

    /// Draws one semantic point for `class`.
    pub fn sample_semantic<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> [f64; 2] {
        let [a, b, _, d] = self.covariances[class];
        // Cholesky of a symmetric 2x2
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).sqrt();
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let m = self.means[class];
        [m[0] + l11 * z0, m[1] + l21 * z0 + l22 * z1]
    }
}

/// One domain's affine map `x = matrix · [semantic; nuisance] + translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: usize,
    pub matrix: Tensor,
    pub translation: Vec<f64>,
    pub nuisance_scale: f64,
    pub shift: f64,
    /// Class priors used when sampling this domain.
    pub class_priors: Vec<f64>,
}

impl DomainSpec {
    pub fn determinant(&self) -> f64 {
        determinant(&self.matrix)
    }

    fn apply(&self, base: &[f64]) -> Vec<f64> {
        let d = base.len();
        let m = self.matrix.data();
        (0..d)
            .map(|i| dot_row(&m[i * d..(i + 1) * d], base) + self.translation[i])
            .collect()
    }

    /// Recovers the semantic coordinates of a point of this domain.
    pub fn semantic_of(&self, x: &[f64]) -> Result<[f64; 2]> {
        let d = x.len();
        let centered: Vec<f64> = x.iter().zip(&self.translation).map(|(a, b)| a - b).collect();
        let base = solve(&self.matrix, &centered)
            .ok_or_else(|| Error::invalid(format!("domain {}: singular transform", self.id)))?;
        debug_assert_eq!(base.len(), d);
        Ok([base[0], base[1]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: GeneratorConfig,
    pub descriptor: LabelingDescriptor,
    pub domains: Vec<DomainSpec>,
    pub examples: usize,
    pub dims: usize,
}

/// Labeled examples with their domain of origin. Domain ids are diagnostic:
/// training code receives a [`SourceView`], which does not carry them.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainDataset {
    pub meta: DatasetMeta,
    features: Tensor,
    labels: Vec<usize>,
    domain_ids: Vec<usize>,
}

/// Training view of the pooled source domains: features and labels only.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceView {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

/// Held-out target domain. Inference only ever sees [`TargetView::inputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct TargetView {
    domain: usize,
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl SourceView {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() || features.rank() != 2 {
            return Err(Error::invalid("source view: features/labels disagree"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} >= {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }

    /// Random `(train, holdout)` split with `holdout_frac` of the rows held out.
    pub fn holdout_split(&self, holdout_frac: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&holdout_frac) {
            return Err(Error::invalid("holdout fraction must be in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let n_hold = ((self.len() as f64) * holdout_frac).round() as usize;
        if n_hold == 0 || n_hold == self.len() {
            return Err(Error::TooFewSamples {
                what: "holdout split",
                min: 2,
                got: self.len(),
            });
        }
        let (hold, train) = idx.split_at(n_hold);
        let (mut hold, mut train) = (hold.to_vec(), train.to_vec());
        hold.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&hold)?))
    }

    pub fn balanced_batches(&self, batch: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        class_balanced_batches(&self.labels, self.classes, batch, seed)
    }
}

impl TargetView {
    pub fn domain(&self) -> usize {
        self.domain
    }

    /// Features only; what inference is allowed to read.
    pub fn inputs(&self) -> &Tensor {
        &self.features
    }

    /// Ground-truth labels, for evaluation and bound checks only.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn dot_row(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Haar-ish random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian_vec(n, rng);
        for b in &basis {
            let p = dot_row(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let norm = dot_row(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(m: &Tensor) -> f64 {
    let n = m.rows();
    let mut a = m.data().to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty");
        if a[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
        }
    }
    det
}

fn solve(m: &Tensor, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = m.rows();
    let mut a = m.data().to_vec();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Some(x)
}

fn validate(cfg: &GeneratorConfig) -> Result<()> {
    if cfg.n_domains < 2 {
        return Err(Error::invalid("need at least 2 domains"));
    }
    if cfg.classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if cfg.dims < SEMANTIC_DIMS {
        return Err(Error::invalid("need at least 2 dims"));
    }
    if cfg.per_domain == 0 {
        return Err(Error::invalid("degenerate spec: zero examples per domain"));
    }
    if !(0.0..0.5).contains(&cfg.noise_rate) {
        return Err(Error::invalid(format!(
            "noise rate {} outside [0, 0.5)",
            cfg.noise_rate
        )));
    }
    if cfg.shift < 0.0 || cfg.nuisance_scale < 0.0 || cfg.class_separation < 0.0 {
        return Err(Error::invalid("shift, nuisance scale and separation must be >= 0"));
    }
    Ok(())
}

fn build_descriptor(cfg: &GeneratorConfig) -> LabelingDescriptor {
    let means = (0..cfg.classes)
        .map(|c| {
            let a = 2.0 * std::f64::consts::PI * c as f64 / cfg.classes as f64;
            [cfg.class_separation * a.cos(), cfg.class_separation * a.sin()]
        })
        .collect();
    LabelingDescriptor {
        classes: cfg.classes,
        means,
        covariances: vec![[1.0, 0.0, 0.0, 1.0]; cfg.classes],
        noise_rate: cfg.noise_rate,
    }
}

fn build_domain(cfg: &GeneratorConfig, id: usize, embed: &[Vec<f64>]) -> Result<DomainSpec> {
    let d = cfg.dims;
    let nd = d - SEMANTIC_DIMS;
    let mut rng = rng_from_seed(derive_indexed(cfg.seed, "domain", id as u64));

    // block-diagonal pre-embedding map
    let mut block = vec![vec![0.0; d]; d];
    let theta = cfg.label_shift * id as f64;
    let (s, c) = theta.sin_cos();
    block[0][0] = c;
    block[0][1] = -s;
    block[1][0] = s;
    block[1][1] = c;
    let mut local_shift = vec![0.0; d];
    if nd > 0 {
        let rot = random_orthogonal(nd, &mut rng);
        let scales: Vec<f64> = (0..nd)
            .map(|_| (0.25 * cfg.shift * rng.random_range(-1.0..1.0f64)).exp())
            .collect();
        for i in 0..nd {
            for j in 0..nd {
                block[SEMANTIC_DIMS + i][SEMANTIC_DIMS + j] = if cfg.shift > 0.0 {
                    rot[i][j] * scales[j]
                } else if i == j {
                    1.0
                } else {
                    0.0
                };
            }
        }
        let mut dir = gaussian_vec(nd, &mut rng);
        let norm = dot_row(&dir, &dir).sqrt();
        dir.iter_mut().for_each(|x| *x *= cfg.shift / norm);
        local_shift[SEMANTIC_DIMS..].copy_from_slice(&dir);
    }

    // matrix = embed · block, translation = embed · local_shift
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..d).map(|k| embed[i][k] * block[k][j]).sum();
        }
    }
    let translation = (0..d).map(|i| dot_row(&embed[i], &local_shift)).collect();

    let class_priors = if cfg.balance {
        vec![1.0 / cfg.classes as f64; cfg.classes]
    } else {
        let w: Vec<f64> = (0..cfg.classes).map(|_| rng.random_range(0.5..1.5)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    };
    let spec = DomainSpec {
        id,
        matrix: Tensor::matrix(d, d, m)?,
        translation,
        nuisance_scale: cfg.nuisance_scale,
        shift: cfg.shift,
        class_priors,
    };
    if spec.determinant().abs() <= 1e-6 {
        return Err(Error::invalid(format!("domain {id}: transform is not invertible")));
    }
    Ok(spec)
}

/// Class label sequence for one domain: exact counts when balanced,
/// otherwise i.i.d. from the domain priors.
fn draw_labels(classes: usize, priors: &[f64], n: usize, balance: bool, rng: &mut SeededRng) -> Vec<usize> {
    if balance {
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        labels.shuffle(rng);
        labels
    } else {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (c, p) in priors.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return c;
                    }
                }
                classes - 1
            })
            .collect()
    }
}

fn sample_domain(
    cfg: &GeneratorConfig,
    descriptor: &LabelingDescriptor,
    spec: &DomainSpec,
    n: usize,
    rng: &mut SeededRng,
) -> (Vec<f64>, Vec<usize>) {
    let d = cfg.dims;
    let clean = draw_labels(cfg.classes, &spec.class_priors, n, cfg.balance, rng);
    let mut feats = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for &y in &clean {
        let u = descriptor.sample_semantic(y, rng);
        let mut base = Vec::with_capacity(d);
        base.extend_from_slice(&u);
        base.extend(
            gaussian_vec(d - SEMANTIC_DIMS, rng)
                .into_iter()
                .map(|z| z * spec.nuisance_scale),
        );
        feats.extend(spec.apply(&base));
        let flip: f64 = rng.random();
        let observed = if flip < cfg.noise_rate {
            let k = rng.random_range(0..cfg.classes - 1);
            if k >= y {
                k + 1
            } else {
                k
            }
        } else {
            y
        };
        labels.push(observed);
    }
    (feats, labels)
}

/// Generates every domain of `cfg`. Deterministic in `cfg.seed`.
pub fn make_domains(cfg: &GeneratorConfig) -> Result<MultiDomainDataset> {
    validate(cfg)?;
    let descriptor = build_descriptor(cfg);
    let embed = random_orthogonal(cfg.dims, &mut rng_from_seed(derive_seed(cfg.seed, "embed")));
    let domains = (0..cfg.n_domains)
        .map(|k| build_domain(cfg, k, &embed))
        .collect::<Result<Vec<_>>>()?;

    let mut feats = Vec::with_capacity(cfg.n_domains * cfg.per_domain * cfg.dims);
    let mut labels = Vec::new();
    let mut domain_ids = Vec::new();
    for spec in &domains {
        let mut rng = rng_from_seed(derive_indexed(cfg.seed, "samples", spec.id as u64));
        let (f, l) = sample_domain(cfg, &descriptor, spec, cfg.per_domain, &mut rng);
        feats.extend(f);
        labels.extend(l);
        domain_ids.extend(std::iter::repeat_n(spec.id, cfg.per_domain));
    }
    let n = labels.len();
    Ok(MultiDomainDataset {
        meta: DatasetMeta {
            config: cfg.clone(),
            descriptor,
            domains,
            examples: n,
            dims: cfg.dims,
        },
        features: Tensor::matrix(n, cfg.dims, feats)?,
        labels,
        domain_ids,
    })
}

/// Index batches with exactly `batch / classes` examples of every class.
///
/// Each class is shuffled independently and consumed in order; a class that
/// runs out before the epoch ends is reshuffled and reused, so every example
/// appears at least once per epoch.
pub fn class_balanced_batches(labels: &[usize], classes: usize, batch: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if classes == 0 || batch == 0 || !batch.is_multiple_of(classes) {
        return Err(Error::invalid(format!(
            "batch size {batch} is not a positive multiple of {classes} classes"
        )));
    }
    let per = batch / classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} >= {classes} classes")));
        }
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("class {c} has no examples; cannot balance")));
    }
    let mut rng = rng_from_seed(seed);
    for v in &mut by_class {
        v.shuffle(&mut rng);
    }
    let largest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let n_batches = largest.div_ceil(per);
    let mut cursors = vec![0usize; classes];
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut b = Vec::with_capacity(batch);
        for c in 0..classes {
            for _ in 0..per {
                if cursors[c] == by_class[c].len() {
                    by_class[c].shuffle(&mut rng);
                    cursors[c] = 0;
                }
                b.push(by_class[c][cursors[c]]);
                cursors[c] += 1;
            }
        }
        batches.push(b);
    }
    Ok(batches)
}

impl MultiDomainDataset {
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Diagnostic provenance of every example.
    pub fn domain_ids(&self) -> &[usize] {
        &self.domain_ids
    }

    pub fn classes(&self) -> usize {
        self.meta.config.classes
    }

    pub fn n_domains(&self) -> usize {
        self.meta.domains.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn descriptor(&self) -> &LabelingDescriptor {
        &self.meta.descriptor
    }

    fn domain_rows(&self, id: usize) -> Result<Vec<usize>> {
        if id >= self.n_domains() {
            return Err(Error::UnknownDomain(id));
        }
        Ok((0..self.len()).filter(|&i| self.domain_ids[i] == id).collect())
    }

    /// Features of one domain (diagnostics such as divergence estimates).
    pub fn domain_features(&self, id: usize) -> Result<Tensor> {
        self.features.select_rows(&self.domain_rows(id)?)
    }

    pub fn domain_labels(&self, id: usize) -> Result<Vec<usize>> {
        Ok(self.domain_rows(id)?.into_iter().map(|i| self.labels[i]).collect())
    }

    /// Fresh samples from the same domain distribution under another seed.
    pub fn resample_domain(&self, id: usize, n: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
        let spec = self.meta.domains.get(id).ok_or(Error::UnknownDomain(id))?;
        if n == 0 {
            return Err(Error::invalid("resample of zero examples"));
        }
        let mut rng = rng_from_seed(derive_indexed(seed, "resample", id as u64));
        let (f, l) = sample_domain(&self.meta.config, &self.meta.descriptor, spec, n, &mut rng);
        Ok((Tensor::matrix(n, self.meta.dims, f)?, l))
    }

    /// Leave-one-domain-out partition.
    pub fn split_sources_target(&self, target: usize) -> Result<(SourceView, TargetView)> {
        if target >= self.n_domains() {
            return Err(Error::UnknownDomain(target));
        }
        let (tgt, src): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| self.domain_ids[i] == target);
        let source = SourceView::new(
            self.features.select_rows(&src)?,
            src.iter().map(|&i| self.labels[i]).collect(),
            self.classes(),
        )?;
        let target = TargetView {
            domain: target,
            features: self.features.select_rows(&tgt)?,
            labels: tgt.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes(),
        };
        Ok((source, target))
    }

    /// Source domain ids for a given target.
    pub fn source_domains(&self, target: usize) -> Vec<usize> {
        (0..self.n_domains()).filter(|&k| k != target).collect()
    }

    pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("json"), stem.with_extension("bin"))
    }

    /// Writes `<stem>.json` (metadata) and `<stem>.bin` (features as f64 LE,
    /// then labels and domain ids as u32 LE).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (meta_path, bin_path) = Self::paths(stem);
        let mut w = BufWriter::new(File::create(meta_path)?);
        serde_json::to_writer_pretty(&mut w, &self.meta)?;
        writeln!(w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(bin_path)?);
        for v in self.features.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &l in &self.labels {
            w.write_all(&(l as u32).to_le_bytes())?;
        }
        for &d in &self.domain_ids {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (meta_path, bin_path) = Self::paths(stem);
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(meta_path)?))?;
        let mut bytes = Vec::new();
        BufReader::new(File::open(bin_path)?).read_to_end(&mut bytes)?;
        let (n, d) = (meta.examples, meta.dims);
        if bytes.len() != n * d * 8 + n * 8 {
            return Err(Error::Format(format!(
                "dataset binary has {} bytes, expected {}",
                bytes.len(),
                n * d * 8 + n * 8
            )));
        }
        let (fb, rest) = bytes.split_at(n * d * 8);
        let (lb, db) = rest.split_at(n * 4);
        let feats = fb
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let u32s = |b: &[u8]| -> Vec<usize> {
            b.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
                .collect()
        };
        Ok(Self {
            features: Tensor::matrix(n, d, feats)?,
            labels: u32s(lb),
            domain_ids: u32s(db),
            meta,
        })
    }
}

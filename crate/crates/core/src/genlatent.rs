//! Variational autoencoder over unit-norm embeddings.
//!
//! The encoder maps an embedding to the mean and log-variance of a diagonal
//! Gaussian posterior; the decoder maps a latent back onto the unit sphere.
//! Reconstruction is scored by cosine distance so that the geometry used in
//! training matches the one the latent search optimizes.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Activation, BoundMlp, Checkpoint, Graph, MlpParams, MlpSpec, OptimState, Tensor, Var};
use crate::seed::{derive_indexed, derive_seed, rng_from_seed};

pub const CHECKPOINT_KIND: &str = "vae";
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub latent_dim: usize,
    pub beta: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 64,
            lr: 1e-3,
            latent_dim: 8,
            beta: 0.05,
            hidden: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    encoder: MlpParams,
    decoder: MlpParams,
    latent_dim: usize,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct VaeMeta {
    latent_dim: usize,
    beta: f64,
    encoder: MlpSpec,
    decoder: MlpSpec,
}

/// Values of the three ELBO terms for one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboParts {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Graph handles of an ELBO evaluation.
pub struct ElboVars {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub mean: Var,
    pub log_var: Var,
}

impl VaeModel {
    pub fn from_parts(encoder: MlpParams, decoder: MlpParams, beta: f64) -> Result<Self> {
        let k = decoder.input_dim();
        if encoder.output_dim() != 2 * k {
            return Err(Error::invalid(format!(
                "encoder emits {} values, decoder expects latent dim {k}",
                encoder.output_dim()
            )));
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(Error::invalid("encoder input and decoder output dims differ"));
        }
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("KL weight must be > 0, got {beta}")));
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim: k,
            beta,
        })
    }

    /// Encoder `m -> hidden -> 2k` (relu), decoder `k -> hidden -> m` (tanh),
    /// Xavier-initialized. The decoder output bias starts small and random.
    pub fn init(input_dim: usize, cfg: &VaeConfig) -> Result<Self> {
        if cfg.latent_dim == 0 {
            return Err(Error::invalid("latent dim must be positive"));
        }
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "vae-init"));
        let k = cfg.latent_dim;
        let encoder = MlpParams::xavier(
            &[input_dim, cfg.hidden, 2 * k],
            &[Activation::Relu, Activation::Identity],
            &mut rng,
        )?;
        let mut decoder = MlpParams::xavier(
            &[k, cfg.hidden, input_dim],
            &[Activation::Tanh, Activation::Identity],
            &mut rng,
        )?;
        // With zero biases the origin of latent space decodes to the zero
        // vector, which has no direction.
        if let Some(bias) = decoder.params_mut().pop() {
            for b in bias.data_mut() {
                let v: f64 = StandardNormal.sample(&mut rng);
                *b = 0.1 * v;
            }
        }
        Self::from_parts(encoder, decoder, cfg.beta)
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Unit-norm decoding of a `[k]` vector or `[n, k]` batch.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let dec = self.decoder.bind_frozen(&mut g);
        let zv = g.constant(z.clone());
        let out = decode_on(&mut g, &dec, zv)?;
        Ok(g.value(out).clone())
    }

    /// Posterior `(mean, log_var)` for a batch of embeddings.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let enc = self.encoder.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let (m, lv) = encode_on(&mut g, &enc, xv, self.latent_dim)?;
        Ok((g.value(m).clone(), g.value(lv).clone()))
    }

    /// Decodes the posterior mean; the zero-noise path of the model.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (m, _) = self.encode(x)?;
        self.decode(&m)
    }

    /// `n` decoded draws from the `N(0, I)` prior.
    pub fn sample_prior(&self, n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::invalid("sample_prior of zero samples"));
        }
        let mut rng = rng_from_seed(derive_seed(seed, "vae-prior"));
        let z = (0..n * self.latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        self.decode(&Tensor::matrix(n, self.latent_dim, z)?)
    }

    /// ELBO terms using the given reparameterization noise (`[n, k]`).
    pub fn elbo_loss(&self, x: &Tensor, noise: &Tensor) -> Result<ElboParts> {
        let mut g = Graph::new();
        let enc = self.encoder.bind_frozen(&mut g);
        let dec = self.decoder.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let v = elbo_on(&mut g, &enc, &dec, xv, noise, self.beta)?;
        Ok(ElboParts {
            loss: g.value(v.loss).item(),
            reconstruction: g.value(v.reconstruction).item(),
            kl: g.value(v.kl).item(),
        })
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, seed, serde_json::Value::Null);
        let encoder = ck.push_mlp("encoder", &self.encoder);
        let decoder = ck.push_mlp("decoder", &self.decoder);
        ck.header.meta = serde_json::to_value(VaeMeta {
            latent_dim: self.latent_dim,
            beta: self.beta,
            encoder,
            decoder,
        })
        .expect("plain data");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: VaeMeta = ck.meta()?;
        let model = Self::from_parts(
            ck.mlp("encoder", &meta.encoder)?,
            ck.mlp("decoder", &meta.decoder)?,
            meta.beta,
        )?;
        if model.latent_dim != meta.latent_dim {
            return Err(Error::Format("latent dim disagrees with decoder".into()));
        }
        Ok(model)
    }
}

/// Encoder pass split into mean and clamped log-variance.
pub fn encode_on(g: &mut Graph, enc: &BoundMlp, x: Var, k: usize) -> Result<(Var, Var)> {
    let h = enc.forward(g, x)?;
    let mean = g.slice_cols(h, 0, k)?;
    let raw = g.slice_cols(h, k, 2 * k)?;
    let log_var = g.clamp(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP);
    Ok((mean, log_var))
}

pub fn decode_on(g: &mut Graph, dec: &BoundMlp, z: Var) -> Result<Var> {
    let h = dec.forward(g, z)?;
    g.l2_normalize(h)
}

/// Batch mean of `Σ_j ½ (μ_j² + exp(lv_j) − 1 − lv_j)`, the closed-form
/// `KL(N(μ, diag(exp(lv))) ‖ N(0, I))`.
pub fn kl_divergence(g: &mut Graph, mean: Var, log_var: Var) -> Result<Var> {
    let m2 = g.square(mean);
    let var = g.exp(log_var);
    let a = g.add(m2, var)?;
    let b = g.sub(a, log_var)?;
    let c = g.add_scalar(b, -1.0);
    let per_row = g.sum_rows(c)?;
    let m = g.mean(per_row);
    Ok(g.scale(m, 0.5))
}

/// Negative ELBO: mean cosine distance of reconstructions plus `beta * KL`.
pub fn elbo_on(g: &mut Graph, enc: &BoundMlp, dec: &BoundMlp, x: Var, noise: &Tensor, beta: f64) -> Result<ElboVars> {
    let n = g.value(x).rows();
    let k = noise.cols();
    if noise.shape() != [n, k] {
        return Err(Error::ShapeMismatch {
            op: "elbo noise",
            lhs: noise.shape().to_vec(),
            rhs: vec![n, k],
        });
    }
    let (mean, log_var) = encode_on(g, enc, x, k)?;
    let half = g.scale(log_var, 0.5);
    let std = g.exp(half);
    let eps = g.constant(noise.clone());
    let spread = g.mul(std, eps)?;
    let z = g.add(mean, spread)?;
    let recon = decode_on(g, dec, z)?;
    let cos = g.cosine_sim(x, recon)?;
    let mc = g.mean(cos);
    let neg = g.neg(mc);
    let reconstruction = g.add_scalar(neg, 1.0);
    let kl = kl_divergence(g, mean, log_var)?;
    let wkl = g.scale(kl, beta);
    let loss = g.add(reconstruction, wkl)?;
    Ok(ElboVars {
        loss,
        reconstruction,
        kl,
        mean,
        log_var,
    })
}

/// Trains on shuffled minibatches with Adam. `embeddings` are unit rows.
pub fn train_vae(embeddings: &Tensor, cfg: &VaeConfig) -> Result<(VaeModel, Vec<f64>)> {
    let n = embeddings.rows();
    if n == 0 || cfg.batch == 0 {
        return Err(Error::invalid("train_vae needs embeddings and a positive batch size"));
    }
    if n < 10 * cfg.latent_dim {
        log::warn!(
            "only {n} embeddings for latent dim {}; the sampler is underdetermined",
            cfg.latent_dim
        );
    }
    let mut model = VaeModel::init(embeddings.cols(), cfg)?;
    let mut opt = OptimState::adam(cfg.lr)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let k = model.latent_dim;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_indexed(cfg.seed, "vae-epoch", epoch as u64));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in idx.chunks(cfg.batch) {
            let xb = embeddings.select_rows(chunk)?;
            let noise = Tensor::matrix(
                chunk.len(),
                k,
                (0..chunk.len() * k).map(|_| StandardNormal.sample(&mut rng)).collect(),
            )?;
            let mut g = Graph::new();
            let enc = model.encoder.bind(&mut g);
            let dec = model.decoder.bind(&mut g);
            let xv = g.constant(xb);
            let v = elbo_on(&mut g, &enc, &dec, xv, &noise, model.beta)?;
            let lv = g.value(v.loss).item();
            let kl = g.value(v.kl).item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    stage: "train-vae",
                    epoch,
                    loss: lv,
                });
            }
            if kl < -1e-12 {
                return Err(Error::invalid(format!("negative KL {kl} at epoch {epoch}")));
            }
            g.backward(v.loss)?;
            let mut grads = enc.grads(&g);
            grads.extend(dec.grads(&g));
            let mut params = model.encoder.params_mut();
            params.extend(model.decoder.params_mut());
            opt.step_all(&mut params, grads)?;
            total += lv;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok((model, curve))
}

/// Mean cosine between rows of `x` and their deterministic reconstructions.
pub fn reconstruction_cosine(model: &VaeModel, x: &Tensor) -> Result<f64> {
    let r = model.reconstruct(x)?;
    let total: f64 = x
        .iter_rows()
        .zip(r.iter_rows())
        .map(|(a, b)| crate::numcore::dot(a, b))
        .sum();
    Ok(total / x.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::l2_norm;

    fn kl_value(mean: Tensor, log_var: Tensor) -> f64 {
        let mut g = Graph::new();
        let m = g.constant(mean);
        let lv = g.constant(log_var);
        let kl = kl_divergence(&mut g, m, lv).unwrap();
        g.value(kl).item()
    }

    #[test]
    fn kl_closed_form_examples() {
        assert_eq!(kl_value(Tensor::zeros(&[3, 2]), Tensor::zeros(&[3, 2])), 0.0);
        let unit = Tensor::filled(&[1, 2], 1.0);
        assert_eq!(kl_value(unit, Tensor::zeros(&[1, 2])), 1.0);
    }

    fn small_model(seed: u64) -> VaeModel {
        VaeModel::init(
            4,
            &VaeConfig {
                latent_dim: 2,
                hidden: 6,
                seed,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn decode_is_unit_norm_and_deterministic() {
        let m = small_model(1);
        let z = Tensor::matrix(3, 2, vec![0.1, -2.0, 3.0, 0.5, 0.0, 0.0]).unwrap();
        let a = m.decode(&z).unwrap();
        for row in a.iter_rows() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-9);
        }
        assert_eq!(a, m.decode(&z).unwrap());
    }

    #[test]
    fn zero_noise_is_deterministic_autoencoder() {
        let m = small_model(2);
        let x = m.sample_prior(5, 9).unwrap();
        let parts = m.elbo_loss(&x, &Tensor::zeros(&[5, 2])).unwrap();
        let rc = reconstruction_cosine(&m, &x).unwrap();
        assert!((parts.reconstruction - (1.0 - rc)).abs() < 1e-12);
        assert!(parts.kl >= 0.0);
        assert!((parts.loss - (parts.reconstruction + m.beta() * parts.kl)).abs() < 1e-15);
    }

    #[test]
    fn sample_prior_is_seeded() {
        let m = small_model(3);
        assert_eq!(m.sample_prior(4, 1).unwrap(), m.sample_prior(4, 1).unwrap());
        assert_ne!(m.sample_prior(4, 1).unwrap(), m.sample_prior(4, 2).unwrap());
    }

    #[test]
    fn zero_epochs_and_checkpoint() {
        let cfg = VaeConfig {
            epochs: 0,
            latent_dim: 2,
            hidden: 6,
            ..Default::default()
        };
        let x = small_model(4).sample_prior(30, 0).unwrap();
        let (m, curve) = train_vae(&x, &cfg).unwrap();
        assert!(curve.is_empty());
        assert_eq!(m, VaeModel::init(4, &cfg).unwrap());
        let bytes = m.to_checkpoint(0).to_bytes();
        let back = VaeModel::from_checkpoint(&Checkpoint::read_from(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn mismatched_parts_rejected() {
        let m = small_model(5);
        let other = small_model(6);
        assert!(VaeModel::from_parts(m.encoder().clone(), other.decoder().clone(), 0.0).is_err());
        let wide = VaeModel::init(
            4,
            &VaeConfig {
                latent_dim: 3,
                hidden: 6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(VaeModel::from_parts(m.encoder().clone(), wide.decoder().clone(), 1.0).is_err());
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// One affine layer `x · W + b` followed by an activation. `weight` is
/// `[inputs, outputs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Parameters of an [`MlpParams`] placed on a graph as tracked leaves.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
    activations: Vec<Activation>,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("mlp needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rank() != 2 || l.bias.shape() != [l.outputs()] {
                return Err(Error::invalid(format!("layer {i}: malformed weight/bias")));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::invalid(format!("layer {i}: non-finite parameter")));
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::invalid(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].outputs(),
                    w[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Xavier-uniform weights, zero biases. `dims` lists every width from
    /// input to output; `activations` has one entry per layer.
    pub fn xavier<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::invalid(format!(
                "mlp dims {dims:?} and {} activations disagree",
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("mlp widths must be positive"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("positive dims"),
                    bias: Tensor::zeros(&[fan_out]),
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    /// Widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::outputs));
        d
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Parameters in declared order: `W0, b0, W1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Places the parameters on `g` as tracked leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            vars: self
                .layers
                .iter()
                .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
                .collect(),
            activations: self.activations(),
        }
    }

    /// Places the parameters on `g` as constants (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            vars: self
                .layers
                .iter()
                .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
                .collect(),
            activations: self.activations(),
        }
    }

    /// Inference on a `[rows, input_dim]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let y = bound.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

impl BoundMlp {
    /// Rebinds an MLP from leaves the caller placed on the graph, in
    /// [`MlpParams::params`] order. Used to differentiate with respect to
    /// parameters supplied from outside.
    pub fn from_vars(vars: &[Var], activations: &[Activation]) -> Result<Self> {
        if vars.len() != 2 * activations.len() {
            return Err(Error::invalid(format!(
                "{} vars for {} layers",
                vars.len(),
                activations.len()
            )));
        }
        Ok(Self {
            vars: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
            activations: activations.to_vec(),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (&(w, b), &act) in self.vars.iter().zip(&self.activations) {
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            h = act.apply(g, z);
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Gradients in the same order as [`MlpParams::params`]. A parameter that
    /// did not influence the loss gets a zero gradient.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars()
            .into_iter()
            .map(|v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn xavier_shapes_and_bounds() {
        let mut rng = rng_from_seed(1);
        let m = MlpParams::xavier(&[4, 8, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        assert_eq!(m.dims(), vec![4, 8, 3]);
        let a = (6.0f64 / 12.0).sqrt();
        assert!(m.layers()[0].weight.data().iter().all(|w| w.abs() <= a));
        assert!(m.layers()[0].bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(m.num_params(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn dims_must_chain() {
        let l0 = Layer {
            weight: Tensor::zeros(&[2, 3]),
            bias: Tensor::zeros(&[3]),
            activation: Activation::Relu,
        };
        let l1 = Layer {
            weight: Tensor::zeros(&[4, 1]),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Identity,
        };
        assert!(MlpParams::from_layers(vec![l0, l1]).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rng_from_seed(9);
        let m = MlpParams::xavier(&[3, 5, 2], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, -1.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }
}

//! Feature generator `G` and the two classifier heads `F1`, `F2` as dense MLPs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::None => Ok(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::None => "none",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "none" => Some(Activation::None),
            _ => None,
        }
    }
}

/// One affine layer `x W + b` followed by an activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            let w = layer.weight.shape();
            if w.len() != 2 || layer.bias.shape() != [w[1]] {
                return Err(Error::InvalidShape {
                    shape: w.to_vec(),
                    reason: format!("layer {i}: bias shape {:?}", layer.bias.shape()),
                });
            }
            if i > 0 && layers[i - 1].weight.shape()[1] != w[0] {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    w[0],
                    layers[i - 1].weight.shape()[1]
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `dims` lists every width from
    /// input to output; the last layer uses `output`, the others `hidden`.
    pub fn init(dims: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized above"),
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if i + 2 == dims.len() { output } else { hidden },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.shape()[1]
    }

    /// Parameters in a fixed order: weight then bias of each layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records the parameters on `tape`; `trainable = false` records them as
    /// constants so no gradient is computed for them.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let record = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (record(&l.weight), record(&l.bias), l.activation))
                .collect(),
        }
    }

    /// Tape-free forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let out = self.bind(&tape, false).forward(tape.constant(x.clone()))?;
        Ok(out.value())
    }
}

/// An [`Mlp`] whose parameters are recorded on a tape.
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>, Activation)>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (w, b, act) in &self.layers {
            h = act.apply(h.matmul(w)?.add_row(b)?)?;
        }
        Ok(h)
    }

    /// Parameter handles in the same order as [`Mlp::params`].
    pub fn params(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|(w, b, _)| [*w, *b]).collect()
    }

    pub fn grads(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.params()
            .into_iter()
            .map(|p| grads.get(p).cloned())
            .collect()
    }
}

/// Layer widths of the three networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    /// Widths of the generator's layers; the last one is the feature dimension.
    pub generator_widths: Vec<usize>,
    /// Hidden widths of each classifier (the output width is the class count).
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    pub fn toy(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            generator_widths: vec![64, 64],
            classifier_hidden: vec![64],
            num_classes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.generator_widths.last().copied().unwrap_or(self.input_dim)
    }

    fn generator_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.generator_widths.iter().copied())
            .collect()
    }

    fn classifier_dims(&self) -> Vec<usize> {
        std::iter::once(self.feature_dim())
            .chain(self.classifier_hidden.iter().copied())
            .chain(std::iter::once(self.num_classes))
            .collect()
    }
}

/// `G`, `F1` and `F2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelTriple {
    pub g: Mlp,
    pub f1: Mlp,
    pub f2: Mlp,
}

impl ModelTriple {
    pub fn new(g: Mlp, f1: Mlp, f2: Mlp) -> Result<Self> {
        if f1.input_dim() != g.output_dim() || f2.input_dim() != g.output_dim() {
            return Err(Error::invalid(format!(
                "classifiers expect {} / {} features, generator emits {}",
                f1.input_dim(),
                f2.input_dim(),
                g.output_dim()
            )));
        }
        if f1.output_dim() != f2.output_dim() || f1.output_dim() < 2 {
            return Err(Error::invalid("classifiers must share a class count of at least 2"));
        }
        Ok(Self { g, f1, f2 })
    }

    pub fn num_classes(&self) -> usize {
        self.f1.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.g.output_dim()
    }

    /// Tape-free `G(x)`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.g.predict(x)
    }

    /// Tape-free class probabilities of both heads.
    pub fn probabilities(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let feats = self.g.bind(&tape, false).forward(tape.constant(x.clone()))?;
        let p1 = self.f1.bind(&tape, false).forward(feats)?.softmax_rows()?;
        let p2 = self.f2.bind(&tape, false).forward(feats)?.softmax_rows()?;
        Ok((p1.value(), p2.value()))
    }
}

/// Deterministic initialisation; each network draws from its own ChaCha stream.
pub fn init_model(spec: &ArchitectureSpec, seed: u64) -> Result<ModelTriple> {
    if spec.num_classes < 2 {
        return Err(Error::invalid("at least two classes are required"));
    }
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        rng
    };
    let g = Mlp::init(&spec.generator_dims(), Activation::Relu, Activation::Relu, &mut stream(1))?;
    let f1 = Mlp::init(&spec.classifier_dims(), Activation::Relu, Activation::None, &mut stream(2))?;
    let f2 = Mlp::init(&spec.classifier_dims(), Activation::Relu, Activation::None, &mut stream(3))?;
    ModelTriple::new(g, f1, f2)
}

/// `G(x)` recorded on a tape.
pub fn forward_features<'t>(g: &BoundMlp<'t>, x: Var<'t>) -> Result<Var<'t>> {
    g.forward(x)
}

/// `F(G(x))` logits recorded on a tape.
pub fn forward_logits<'t>(f: &BoundMlp<'t>, features: Var<'t>) -> Result<Var<'t>> {
    f.forward(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ArchitectureSpec {
        ArchitectureSpec::toy(2, 3)
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(init_model(&spec(), 9).unwrap(), init_model(&spec(), 9).unwrap());
        assert_ne!(init_model(&spec(), 9).unwrap(), init_model(&spec(), 10).unwrap());
    }

    #[test]
    fn heads_differ() {
        for seed in 0..10 {
            let m = init_model(&spec(), seed).unwrap();
            assert_ne!(m.f1, m.f2);
        }
    }

    #[test]
    fn default_shapes() {
        let m = init_model(&spec(), 0).unwrap();
        let shapes: Vec<_> = m.g.params().iter().map(|p| p.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 64], vec![64], vec![64, 64], vec![64]]);
        let shapes: Vec<_> = m.f1.params().iter().map(|p| p.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![64, 64], vec![64], vec![64, 3], vec![3]]);
        assert_eq!(m.f1.layers().last().unwrap().activation, Activation::None);

        let x = Tensor::zeros(&[7, 2]);
        assert_eq!(m.features(&x).unwrap().shape(), &[7, 64]);
        let (p1, _) = m.probabilities(&x).unwrap();
        assert_eq!(p1.shape(), &[7, 3]);
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut bad = spec();
        bad.num_classes = 1;
        assert!(init_model(&bad, 0).is_err());
        let mut bad = spec();
        bad.generator_widths = vec![64, 0];
        assert!(init_model(&bad, 0).is_err());
    }

    #[test]
    fn glorot_bound_respected() {
        let m = init_model(&spec(), 4).unwrap();
        let bound = (6.0f64 / 66.0).sqrt();
        assert!(m.g.layers()[0].weight.data().iter().all(|w| w.abs() <= bound));
        assert!(m.g.layers()[0].bias.data().iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_network_gives_zero_features() {
        let mut m = init_model(&spec(), 1).unwrap();
        for p in m.g.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.3, 0.4]]).unwrap();
        assert!(m.features(&x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = init_model(&spec(), 2).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.3, 0.4], vec![-1.1, 0.9]]).unwrap();
        let all = m.features(&x).unwrap();
        let logits = m.f1.predict(&all).unwrap();
        for i in 0..3 {
            let one = m.features(&x.select_rows(&[i]).unwrap()).unwrap();
            assert_eq!(one.data(), all.row(i));
            let one_logits = m.f1.predict(&one).unwrap();
            assert_eq!(one_logits.data(), logits.row(i));
        }
    }

    #[test]
    fn forward_shape_mismatch() {
        let m = init_model(&spec(), 2).unwrap();
        assert!(m.features(&Tensor::zeros(&[4, 3])).is_err());
        assert!(m.f1.predict(&Tensor::zeros(&[4, 2])).is_err());
    }

    #[test]
    fn mlp_new_validates_chain() {
        let l = |i, o| Layer {
            weight: Tensor::zeros(&[i, o]),
            bias: Tensor::zeros(&[o]),
            activation: Activation::Relu,
        };
        assert!(Mlp::new(vec![l(2, 3), l(3, 4)]).is_ok());
        assert!(Mlp::new(vec![l(2, 3), l(4, 4)]).is_err());
        assert!(Mlp::new(vec![]).is_err());
    }
}

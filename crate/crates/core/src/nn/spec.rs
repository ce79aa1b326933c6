use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{rng_from, Fnv64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Mean over samples of the squared residual summed over outputs.
    Mse,
    /// Mean negative log-likelihood of the target class under softmax.
    SoftmaxCrossEntropy,
}

impl LossKind {
    fn tag(self) -> u8 {
        match self {
            LossKind::Mse => 1,
            LossKind::SoftmaxCrossEntropy => 2,
        }
    }
}

/// Architecture of a dense feed-forward network.
///
/// The output layer is always affine (logits); `activations` holds one entry
/// per hidden layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layer_widths: Vec<usize>,
    activations: Vec<Activation>,
    loss_kind: LossKind,
    fingerprint: u64,
}

impl ModelSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        activations: Vec<Activation>,
        loss_kind: LossKind,
    ) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output widths, got {} entries",
                layer_widths.len()
            )));
        }
        if layer_widths.contains(&0) {
            return Err(Error::InvalidSpec("layer widths must be >= 1".into()));
        }
        if activations.len() != layer_widths.len() - 2 {
            return Err(Error::InvalidSpec(format!(
                "{} hidden layers but {} activations",
                layer_widths.len() - 2,
                activations.len()
            )));
        }
        let mut h = Fnv64::new();
        h.write(&(layer_widths.len() as u64).to_le_bytes());
        for w in &layer_widths {
            h.write(&(*w as u64).to_le_bytes());
        }
        for a in &activations {
            h.write(&[a.tag()]);
        }
        h.write(&[loss_kind.tag()]);
        Ok(ModelSpec {
            fingerprint: h.finish(),
            layer_widths,
            activations,
            loss_kind,
        })
    }

    /// Multi-layer perceptron with the same activation on every hidden layer.
    pub fn mlp(layer_widths: &[usize], hidden: Activation, loss_kind: LossKind) -> Result<Self> {
        let hidden_layers = layer_widths.len().saturating_sub(2);
        Self::new(layer_widths.to_vec(), vec![hidden; hidden_layers], loss_kind)
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Activation after affine layer `l`; the last layer is always identity.
    pub fn activation_of(&self, l: usize) -> Activation {
        self.activations.get(l).copied().unwrap_or(Activation::Identity)
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offsets of each layer's block: `(weights_start, bias_start, fan_in, fan_out)`.
    /// Weights are stored row-major as `fan_out x fan_in`, followed by the biases.
    pub fn layer_layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let entry = (offset, offset + fan_in * fan_out, fan_in, fan_out);
                offset += fan_in * fan_out + fan_out;
                entry
            })
            .collect()
    }
}

/// Flat parameter vector tagged with the fingerprint of the architecture it
/// belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub spec_fingerprint: u64,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, spec_fingerprint: u64) -> Self {
        ParamVector {
            values,
            spec_fingerprint,
        }
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        ParamVector::new(vec![0.0; spec.param_count()], spec.fingerprint())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.spec_fingerprint != spec.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: spec.fingerprint(),
                actual: self.spec_fingerprint,
            });
        }
        if self.values.len() != spec.param_count() {
            return Err(Error::LengthMismatch {
                expected: spec.param_count(),
                actual: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.spec_fingerprint != other.spec_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.spec_fingerprint,
                actual: other.spec_fingerprint,
            });
        }
        if self.values.len() != other.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> Vec<f64> {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng_from(seed);
    let mut values = vec![0.0; spec.param_count()];
    for (w_start, b_start, fan_in, _) in spec.layer_layout() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[w_start..b_start] {
            *v = rng.random_range(-bound..bound);
        }
    }
    ParamVector::new(values, spec.fingerprint())
}

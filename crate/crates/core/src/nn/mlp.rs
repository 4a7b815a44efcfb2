use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::ops::dropout_mask;
use crate::error::{Result, ScarfError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer computing `activation(x · Wᵀ + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(ScarfError::shape(
                "DenseLayer::new",
                format!("bias of length {}", weights.rows()),
                bias.len(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Uniform weights in `±sqrt(6 / fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / input.max(1) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weights: Matrix::from_vec(output, input, data).expect("sized above"),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weights.rows()
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        let mut pre = x.matmul_nt(&self.weights)?;
        pre.add_row_vector(&self.bias)?;
        Ok(pre)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every layer of an [`Mlp`], in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.output_width(), l.input_width()),
                    bias: vec![0.0; l.output_width()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(ScarfError::shape(
                "MlpGrads::add_assign",
                self.layers.len(),
                other.layers.len(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.scale(factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flat views in the same order as [`Mlp::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug)]
struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
    output_shape: (usize, usize),
}

/// Stack of dense layers with a cache of the most recent training forward pass.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    cache: Option<ForwardCache>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(ScarfError::Validation("an MLP needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].input_width() != pair[0].output_width() {
                return Err(ScarfError::shape(
                    "Mlp::new",
                    format!("layer {} input width {}", k + 1, pair[0].output_width()),
                    pair[1].input_width(),
                ));
            }
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    /// Builds `widths.len() - 1` layers; hidden layers use ReLU and the last
    /// layer uses `output_activation`.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(ScarfError::Validation(
                "an MLP needs an input and an output width".into(),
            ));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last {
                    output_activation
                } else {
                    Activation::Relu
                };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("nonempty").output_width()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn parameter_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data().len(), l.bias.len()])
            .collect()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_width() {
            return Err(ScarfError::shape(
                "Mlp::forward",
                format!("{} input columns", self.input_width()),
                batch.cols(),
            ));
        }
        Ok(())
    }

    /// Inference pass; leaves the cache untouched.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            let act = layer.activation;
            x = layer.pre_activation(&x)?.map(|v| act.apply(v));
        }
        Ok(x)
    }

    /// Training pass that records activations for [`Mlp::backward`].
    pub fn forward(&mut self, batch: &Matrix) -> Result<Matrix> {
        self.forward_impl(batch, None::<(f64, &mut rand_chacha::ChaCha8Rng)>)
    }

    /// Training pass with inverted dropout applied after every hidden ReLU.
    pub fn forward_with_dropout<R: Rng + ?Sized>(
        &mut self,
        batch: &Matrix,
        rate: f64,
        rng: &mut R,
    ) -> Result<Matrix> {
        if rate == 0.0 {
            return self.forward(batch);
        }
        self.forward_impl(batch, Some((rate, rng)))
    }

    fn forward_impl<R: Rng + ?Sized>(
        &mut self,
        batch: &Matrix,
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<Matrix> {
        self.check_input(batch)?;
        self.cache = None;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pres = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut x = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.pre_activation(&x)?;
            let act = layer.activation;
            let mut post = pre.map(|v| act.apply(v));
            let mask = match dropout.as_mut() {
                Some((rate, rng)) if k + 1 < n && act == Activation::Relu => {
                    let mask = dropout_mask(post.rows(), post.cols(), *rate, &mut **rng)?;
                    for (p, m) in post.data_mut().iter_mut().zip(mask.data()) {
                        *p *= m;
                    }
                    Some(mask)
                }
                _ => None,
            };
            inputs.push(std::mem::replace(&mut x, post));
            pres.push(pre);
            masks.push(mask);
        }
        self.cache = Some(ForwardCache {
            inputs,
            pre: pres,
            masks,
            output_shape: x.shape(),
        });
        Ok(x)
    }

    /// Back-propagates `output_grad` (dLoss/dOutput of the last forward pass).
    /// Returns parameter gradients and dLoss/dInput.
    pub fn backward(&self, output_grad: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| ScarfError::State("backward called before forward".into()))?;
        if output_grad.shape() != cache.output_shape {
            return Err(ScarfError::shape(
                "Mlp::backward",
                format!("{:?}", cache.output_shape),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[k];
            let act = layer.activation;
            let mut delta = upstream;
            if let Some(mask) = &cache.masks[k] {
                for (d, m) in delta.data_mut().iter_mut().zip(mask.data()) {
                    *d *= m;
                }
            }
            if act != Activation::Identity {
                for (d, &p) in delta.data_mut().iter_mut().zip(pre.data()) {
                    *d *= act.derivative(p);
                }
            }
            let weights = delta.matmul_tn(&cache.inputs[k])?;
            let bias = delta.column_sums();
            upstream = delta.matmul(&layer.weights)?;
            grads.push(LayerGrad { weights, bias });
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, upstream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let mut mlp = Mlp::new(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negatives() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Relu).unwrap();
        let mlp = Mlp::new(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[-1.0, 2.0]]).unwrap();
        assert_eq!(mlp.predict(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::init(&[3, 2], Activation::Identity, &mut rng).unwrap();
        let err = mlp.backward(&Matrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, ScarfError::State(_)));
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = Mlp::init(&[3, 2], Activation::Identity, &mut rng).unwrap();
        assert!(matches!(
            mlp.forward(&Matrix::zeros(1, 4)),
            Err(ScarfError::Shape { .. })
        ));
    }

    #[test]
    fn mismatched_layers_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = DenseLayer::init(3, 4, Activation::Relu, &mut rng);
        let b = DenseLayer::init(5, 2, Activation::Identity, &mut rng);
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::init(&[3, 5, 2], Activation::Identity, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, -0.3, 0.7], [1.0, 0.2, -0.5]]).unwrap();
        mlp.forward(&x).unwrap();
        let (grads, input_grad) = mlp.backward(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert!(input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_loss_weight_grad_is_input_transpose_times_ones() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let mut mlp = Mlp::new(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0], [0.5, 0.25]]).unwrap();
        mlp.forward(&x).unwrap();
        let (grads, _) = mlp.backward(&Matrix::filled(3, 2, 1.0)).unwrap();
        // dW[o][i] = sum_b x[b][i]
        let col_sums = x.column_sums();
        for o in 0..2 {
            for i in 0..2 {
                assert_eq!(grads.layers[0].weights.get(o, i), col_sums[i]);
            }
        }
        assert_eq!(grads.layers[0].bias, vec![3.0, 3.0]);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DenseLayer::init(24, 16, Activation::Relu, &mut rng);
        let bound = (6.0_f64 / 24.0).sqrt();
        assert!(layer.weights.data().iter().all(|w| w.abs() <= bound));
        assert!(layer.bias.iter().all(|&b| b == 0.0));
    }
}

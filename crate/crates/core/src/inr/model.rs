use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::ndgrad::{Parameter, Tape, Tensor, Var};

/// Architecture and initialisation settings for [`DenoiserModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Image channels; the network reads `2 + channels` features per pixel.
    pub channels: usize,
    pub hidden_dim: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            hidden_dim: 64,
            depth: 2,
            activation: Activation::default(),
            seed: 0,
        }
    }
}

/// One affine map `x ↦ x·W + b`, with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Pixelwise MLP mapping `[px, py, v_1..v_C]` to denoised `[v_1..v_C]`.
///
/// Hidden layers apply the configured activation; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    layers: Vec<Layer>,
    activation: Activation,
}

impl DenoiserModel {
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            let (r, c) = l.weight.dims2("layer weight")?;
            if l.bias.shape() != [1, c] {
                return Err(Error::dim(format!(
                    "layer {i}: bias shape {:?} does not match {r}x{c} weight",
                    l.bias.shape()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(format!(
                    "layer {i} outputs {} features but layer {} reads {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if let Activation::Phi(p) = activation {
            p.validate()?;
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_dim(&self) -> usize {
        if self.depth() == 0 {
            0
        } else {
            self.layers[0].out_dim()
        }
    }

    /// `(in, out)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect()
    }

    /// Weights and biases in layer order, as trainable parameters.
    pub fn parameters(&self) -> Vec<Parameter> {
        self.layers
            .iter()
            .flat_map(|l| [Parameter::new(l.weight.clone()), Parameter::new(l.bias.clone())])
            .collect()
    }

    pub fn load_parameters(&mut self, params: &[Parameter]) -> Result<()> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        for (layer, pair) in self.layers.iter_mut().zip(params.chunks(2)) {
            if pair[0].value.shape() != layer.weight.shape() || pair[1].value.shape() != layer.bias.shape() {
                return Err(Error::dim("parameter shapes do not match the model"));
            }
            layer.weight = pair[0].value.clone();
            layer.bias = pair[1].value.clone();
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. `params` are the tape leaves for
    /// [`parameters`](Self::parameters), in the same order.
    pub fn record_forward(&self, tape: &mut Tape, features: Var, params: &[Var]) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::Contract("parameter handle count mismatch".into()));
        }
        let mut h = features;
        let last = self.layers.len() - 1;
        for (i, pair) in params.chunks(2).enumerate() {
            let xw = tape.matmul(h, pair[0])?;
            h = tape.add(xw, pair[1])?;
            if i < last {
                h = self.activation.record(tape, h, i)?;
            }
        }
        Ok(h)
    }

    /// Inference without recording; numerically identical to
    /// [`record_forward`](Self::record_forward).
    pub fn predict(&self, features: &Tensor) -> Result<Tensor> {
        let (n, d) = features.dims2("features")?;
        if d != self.input_dim() {
            return Err(Error::dim(format!(
                "model reads {} features, got {d}",
                self.input_dim()
            )));
        }
        let mut out = Vec::with_capacity(n * self.output_dim());
        for chunk in features.data().chunks(PREDICT_CHUNK_ROWS * d) {
            let rows = chunk.len() / d;
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new([rows, d], chunk.to_vec())?);
            let params: Vec<Var> = self
                .layers
                .iter()
                .flat_map(|l| [l.weight.clone(), l.bias.clone()])
                .map(|t| tape.constant(t))
                .collect();
            let y = self.record_forward(&mut tape, x, &params)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Tensor::new([n, self.output_dim()], out)
    }
}

/// Rows per inference batch; bounds the intermediate tensors on large images.
const PREDICT_CHUNK_ROWS: usize = 8192;

/// Builds a freshly initialised model.
///
/// Weights are uniform in `±√(1/fan_in)` (sine: `±1/fan_in` on the first
/// layer and `±√(6/fan_in)/ω` elsewhere); biases start at zero.
pub fn build_model(cfg: &ModelConfig) -> Result<DenoiserModel> {
    if cfg.channels == 0 {
        return Err(Error::config("channels must be positive"));
    }
    if cfg.depth > 0 && cfg.hidden_dim == 0 {
        return Err(Error::config("hidden_dim must be positive"));
    }
    let input_dim = 2 + cfg.channels;
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.depth));
    dims.push(cfg.channels);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, pair) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = match cfg.activation {
            Activation::Sine { hidden_omega, .. } => {
                if i == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / hidden_omega
                }
            }
            _ => (1.0 / fan_in as f64).sqrt(),
        };
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        layers.push(Layer {
            weight: Tensor::new([fan_in, fan_out], weights)?,
            bias: Tensor::zeros([1, fan_out]),
        });
    }
    DenoiserModel::from_layers(layers, cfg.activation)
}

/// Per-pixel features `[px, py, v_1..v_C]`, one row per pixel in raster
/// order. Coordinates span `[-1, 1]` across the image (0 for a single
/// row or column).
pub fn pixel_features(img: &Image) -> Tensor {
    let (h, w, c) = img.shape();
    let coord = |k: usize, n: usize| {
        if n > 1 {
            -1.0 + 2.0 * k as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    let mut data = Vec::with_capacity(h * w * (c + 2));
    for i in 0..h {
        let py = coord(i, h);
        for j in 0..w {
            data.push(coord(j, w));
            data.push(py);
            let base = img.index(i, j, 0);
            data.extend_from_slice(&img.data()[base..base + c]);
        }
    }
    Tensor::new([h * w, c + 2], data).expect("feature tensor shape")
}

/// Runs the denoiser on every pixel of `img` and clamps the result to `[0, 1]`.
pub fn apply_denoiser(model: &DenoiserModel, img: &Image) -> Result<Image> {
    let (h, w, c) = img.shape();
    if model.output_dim() != c || model.input_dim() != c + 2 {
        return Err(Error::dim(format!(
            "model maps {} -> {} features but the image has {c} channels",
            model.input_dim(),
            model.output_dim()
        )));
    }
    let out = model.predict(&pixel_features(img))?;
    Image::from_vec(h, w, c, out.into_data()).map(|im| im.clamp01())
}

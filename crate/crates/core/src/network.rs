//! Parameter container and deterministic forward pass for the
//! encoder/decoder with the diagonal sparsity-promoting layer (SPL).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, Matrix, Rng};

/// Layer widths for the encoder/decoder. The bottleneck is the last encoder
/// width; the decoder must end at the input dimension. Hidden layers are
/// tanh, the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub spl_enabled: bool,
}

impl Topology {
    pub fn new(
        input_dim: usize,
        encoder_widths: Vec<usize>,
        decoder_widths: Vec<usize>,
        spl_enabled: bool,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be >= 1".into()));
        }
        if encoder_widths.is_empty() || decoder_widths.is_empty() {
            return Err(Error::Config("encoder and decoder need at least one layer".into()));
        }
        if encoder_widths.iter().chain(&decoder_widths).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if *decoder_widths.last().unwrap() != input_dim {
            return Err(Error::Config(format!(
                "decoder must end at the input dimension {input_dim}, got {}",
                decoder_widths.last().unwrap()
            )));
        }
        Ok(Topology {
            input_dim,
            encoder_widths,
            decoder_widths,
            spl_enabled,
        })
    }

    /// Split a chain of hidden widths (e.g. [100] for d→100→d, or
    /// [500, 2, 500] for an explicit bottleneck) at its leftmost minimum.
    pub fn from_hidden_chain(input_dim: usize, hidden: &[usize], spl_enabled: bool) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("topology needs at least one hidden width".into()));
        }
        let bottleneck_pos = hidden
            .iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| a.cmp(b).then(ia.cmp(ib)))
            .map(|(i, _)| i)
            .unwrap();
        let encoder_widths = hidden[..=bottleneck_pos].to_vec();
        let mut decoder_widths = hidden[bottleneck_pos + 1..].to_vec();
        decoder_widths.push(input_dim);
        Topology::new(input_dim, encoder_widths, decoder_widths, spl_enabled)
    }

    pub fn bottleneck_width(&self) -> usize {
        *self.encoder_widths.last().unwrap()
    }

    /// Index of the bottleneck activation in the dense-layer list.
    pub fn bottleneck_index(&self) -> usize {
        self.encoder_widths.len() - 1
    }

    /// (fan_in, fan_out) pairs for every dense layer, encoder then decoder.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &w in self.encoder_widths.iter().chain(&self.decoder_widths) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.encoder_widths.len() + self.decoder_widths.len()
    }
}

/// One dense layer: row-major weights (fan_in × fan_out) plus bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// All trainable parameters: the diagonal SPL vector plus the dense layers
/// of the encoder and decoder in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spl: Vec<f64>,
    pub layers: Vec<DenseLayer>,
}

impl ModelParams {
    /// Same shapes, all entries zero. Used for gradients and Adam moments.
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            spl: vec![0.0; self.spl.len()],
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    w: Matrix::zeros(l.w.rows(), l.w.cols()),
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.spl.len()
            + self
                .layers
                .iter()
                .map(|l| l.w.data().len() + l.b.len())
                .sum::<usize>()
    }

    /// Flat view in a fixed order: spl, then per layer the row-major weights
    /// followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend_from_slice(&self.spl);
        for l in &self.layers {
            flat.extend_from_slice(l.w.data());
            flat.extend_from_slice(&l.b);
        }
        flat
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector length {} for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let spl_len = self.spl.len();
        self.spl.copy_from_slice(&flat[..spl_len]);
        let mut offset = spl_len;
        for l in &mut self.layers {
            let wlen = l.w.data().len();
            l.w.data_mut().copy_from_slice(&flat[offset..offset + wlen]);
            offset += wlen;
            let blen = l.b.len();
            l.b.copy_from_slice(&flat[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }

    pub(crate) fn slots(&self) -> impl Iterator<Item = &f64> {
        self.spl
            .iter()
            .chain(self.layers.iter().flat_map(|l| l.w.data().iter().chain(l.b.iter())))
    }

    pub(crate) fn slots_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.spl.iter_mut().chain(
            self.layers
                .iter_mut()
                .flat_map(|l| l.w.data_mut().iter_mut().chain(l.b.iter_mut())),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.slots().all(|v| v.is_finite())
    }

    /// Shape compatibility with a topology (layer chain and SPL length).
    pub fn matches(&self, topology: &Topology) -> bool {
        if self.spl.len() != topology.input_dim {
            return false;
        }
        let dims = topology.layer_dims();
        self.layers.len() == dims.len()
            && self
                .layers
                .iter()
                .zip(&dims)
                .all(|(l, &(fi, fo))| l.w.rows() == fi && l.w.cols() == fo && l.b.len() == fo)
    }
}

/// SPL weights start at exactly 1; dense weights are Glorot-uniform
/// ±√(6/(fan_in+fan_out)) drawn layer by layer in row-major order; biases
/// start at zero.
pub fn init_params(topology: &Topology, rng: &mut Rng) -> ModelParams {
    let spl = vec![1.0; topology.input_dim];
    let layers = topology
        .layer_dims()
        .iter()
        .map(|&(fan_in, fan_out)| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            DenseLayer {
                w: Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction"),
                b: vec![0.0; fan_out],
            }
        })
        .collect();
    ModelParams { spl, layers }
}

/// Per-layer record of one forward pass over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// x ⊙ θ_spl per row (or x itself when the SPL is disabled).
    pub spl_output: Matrix,
    /// Pre-activations Z_l per dense layer.
    pub pre_activations: Vec<Matrix>,
    /// Activations A_l per dense layer; hidden are tanh(Z), the last is Z.
    pub activations: Vec<Matrix>,
    pub bottleneck_index: usize,
}

impl ForwardTrace {
    /// g(x): the bottleneck activation.
    pub fn bottleneck(&self) -> &Matrix {
        &self.activations[self.bottleneck_index]
    }

    /// f(x): the network output.
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("at least one layer")
    }
}

/// Deterministic forward pass over a batch (rows = samples).
pub fn forward(topology: &Topology, params: &ModelParams, x: &Matrix) -> Result<ForwardTrace> {
    if x.cols() != topology.input_dim {
        return Err(Error::Shape(format!(
            "input has {} columns, topology expects {}",
            x.cols(),
            topology.input_dim
        )));
    }
    if !params.matches(topology) {
        return Err(Error::Shape("parameters do not match topology".into()));
    }
    let spl_output = if topology.spl_enabled {
        let mut s = x.clone();
        for i in 0..s.rows() {
            for (v, w) in s.row_mut(i).iter_mut().zip(&params.spl) {
                *v *= w;
            }
        }
        s
    } else {
        x.clone()
    };

    let num_layers = params.layers.len();
    let mut pre_activations = Vec::with_capacity(num_layers);
    let mut activations: Vec<Matrix> = Vec::with_capacity(num_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let prev = if l == 0 { &spl_output } else { &activations[l - 1] };
        let mut z = matmul(prev, &layer.w)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&layer.b) {
                *v += b;
            }
        }
        let a = if l + 1 == num_layers {
            z.clone() // linear output layer
        } else {
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = v.tanh();
            }
            a
        };
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(ForwardTrace {
        spl_output,
        pre_activations,
        activations,
        bottleneck_index: topology.bottleneck_index(),
    })
}

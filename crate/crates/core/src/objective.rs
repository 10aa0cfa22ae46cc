//! The centroid-encoder losses and their analytic gradients.
//!
//! Total loss over a labeled batch with centroid targets c_j (the adapted
//! centroids in force this epoch, also fed through the encoder):
//!
//!   (1/2N) Σ_j Σ_{i∈I_j} ‖c_j − f(x_i)‖²        reconstruction
//! + (μ₁/2N) Σ_j Σ_{i∈I_j} ‖g(c_j) − g(x_i)‖²    bottleneck pull
//! + μ₂ Σ_{k<l} 1/(1 + ‖g(c_k) − g(c_l)‖²)       centroid repulsion
//! + λ₁‖θ_spl‖₁ + λ₂‖θ_spl‖₂²                    elastic-net penalty
//!
//! The repulsion sum is deliberately not divided by N or the pair count.
//! Samples and centroids are forward-propagated as one combined batch so
//! g(c_j) and g(x_i) always use identical parameters; the centroid targets
//! themselves are constants (the Hadamard adaptation is not differentiated),
//! while gradients do flow through the g(c_j) forward paths.

use serde::{Deserialize, Serialize};

use crate::data::{CentroidSet, Dataset};
use crate::error::{Error, Result};
use crate::network::{forward, ModelParams, Topology};
use crate::numerics::{matmul_nt, matmul_tn, Matrix};

/// Loss hyperparameters. With `penalty_active` unset the λ terms contribute
/// exactly zero to both loss and gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub penalty_active: bool,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_penalty(mut self, active: bool) -> LossConfig {
        self.penalty_active = active;
        self
    }
}

/// The five addends of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub bottleneck_pull: f64,
    pub centroid_repulsion: f64,
    pub l1_penalty: f64,
    pub l2_penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Repulsion term over bottleneck centroid embeddings (rows).
pub(crate) fn repulsion(embeddings: &[&[f64]]) -> f64 {
    let m = embeddings.len();
    let mut acc = 0.0;
    for k in 0..m {
        for l in k + 1..m {
            acc += 1.0 / (1.0 + squared_distance(embeddings[k], embeddings[l]));
        }
    }
    acc
}

struct Terms {
    breakdown: LossBreakdown,
    trace: crate::network::ForwardTrace,
    combined: Matrix,
}

fn check_finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("loss term {term}")))
    }
}

fn evaluate(
    topology: &Topology,
    params: &ModelParams,
    batch: &Dataset,
    cents: &CentroidSet,
    cfg: &LossConfig,
) -> Result<Terms> {
    cfg.validate()?;
    let n = batch.n();
    if n == 0 {
        return Err(Error::Data("loss over an empty batch".into()));
    }
    if batch.d() != topology.input_dim {
        return Err(Error::Shape(format!(
            "batch has {} features, topology expects {}",
            batch.d(),
            topology.input_dim
        )));
    }
    let m = cents.adapted.rows();
    let combined = batch.x.vstack(&cents.adapted)?;
    let trace = forward(topology, params, &combined)?;

    let f = trace.output();
    let g = trace.bottleneck();
    let nf = n as f64;

    let mut reconstruction = 0.0;
    let mut pull = 0.0;
    for i in 0..n {
        let j = batch.labels[i];
        reconstruction += squared_distance(cents.adapted.row(j), f.row(i));
        pull += squared_distance(g.row(n + j), g.row(i));
    }
    reconstruction = check_finite(reconstruction / (2.0 * nf), "reconstruction")?;
    let bottleneck_pull = check_finite(cfg.mu1 * pull / (2.0 * nf), "bottleneck_pull")?;

    let cent_embeddings: Vec<&[f64]> = (0..m).map(|j| g.row(n + j)).collect();
    let centroid_repulsion =
        check_finite(cfg.mu2 * repulsion(&cent_embeddings), "centroid_repulsion")?;

    let (l1_penalty, l2_penalty) = if cfg.penalty_active {
        let l1 = cfg.lambda1 * params.spl.iter().map(|w| w.abs()).sum::<f64>();
        let l2 = cfg.lambda2 * params.spl.iter().map(|w| w * w).sum::<f64>();
        (check_finite(l1, "l1_penalty")?, check_finite(l2, "l2_penalty")?)
    } else {
        (0.0, 0.0)
    };

    let total = check_finite(
        reconstruction + bottleneck_pull + centroid_repulsion + l1_penalty + l2_penalty,
        "total",
    )?;
    Ok(Terms {
        breakdown: LossBreakdown {
            reconstruction,
            bottleneck_pull,
            centroid_repulsion,
            l1_penalty,
            l2_penalty,
            total,
        },
        trace,
        combined,
    })
}

/// Evaluates the loss on a batch against the adapted centroids in force.
pub fn loss(
    topology: &Topology,
    params: &ModelParams,
    batch: &Dataset,
    cents: &CentroidSet,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    Ok(evaluate(topology, params, batch, cents, cfg)?.breakdown)
}

/// Exact gradient of the total loss, in ModelParams shape.
///
/// The ℓ1 subgradient at exactly zero is taken as 0, so features already
/// driven to zero feel no penalty pressure.
pub fn grad(
    topology: &Topology,
    params: &ModelParams,
    batch: &Dataset,
    cents: &CentroidSet,
    cfg: &LossConfig,
) -> Result<ModelParams> {
    Ok(loss_and_grad(topology, params, batch, cents, cfg)?.1)
}

/// Loss and gradient from a single forward/backward pass.
pub fn loss_and_grad(
    topology: &Topology,
    params: &ModelParams,
    batch: &Dataset,
    cents: &CentroidSet,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let Terms {
        breakdown,
        trace,
        combined,
    } = evaluate(topology, params, batch, cents, cfg)?;
    let n = batch.n();
    let m = cents.adapted.rows();
    let nf = n as f64;
    let num_layers = params.layers.len();
    let bidx = trace.bottleneck_index;

    let mut g_params = params.zeros_like();

    // Gradient w.r.t. the output activations: sample rows only.
    let f = trace.output();
    let d_out_cols = f.cols();
    let mut d_act = Matrix::zeros(n + m, d_out_cols);
    for i in 0..n {
        let target = cents.adapted.row(batch.labels[i]);
        let row = d_act.row_mut(i);
        for ((dv, &fv), &cv) in row.iter_mut().zip(f.row(i)).zip(target) {
            *dv = (fv - cv) / nf;
        }
    }

    // Gradient injected at the bottleneck activation: pull + repulsion.
    let g = trace.bottleneck();
    let b_cols = g.cols();
    let mut d_bottleneck = Matrix::zeros(n + m, b_cols);
    for i in 0..n {
        let j = batch.labels[i];
        let scale = cfg.mu1 / nf;
        for c in 0..b_cols {
            let diff = g.get(i, c) - g.get(n + j, c);
            *d_bottleneck.row_mut(i).get_mut(c).unwrap() += scale * diff;
            *d_bottleneck.row_mut(n + j).get_mut(c).unwrap() -= scale * diff;
        }
    }
    for k in 0..m {
        for l in k + 1..m {
            let dist2 = squared_distance(g.row(n + k), g.row(n + l));
            let denom = 1.0 + dist2;
            let coef = -2.0 * cfg.mu2 / (denom * denom);
            for c in 0..b_cols {
                let diff = g.get(n + k, c) - g.get(n + l, c);
                *d_bottleneck.row_mut(n + k).get_mut(c).unwrap() += coef * diff;
                *d_bottleneck.row_mut(n + l).get_mut(c).unwrap() -= coef * diff;
            }
        }
    }

    // Backward through the dense layers; tanh' recovered from activations.
    let mut d_spl_output: Option<Matrix> = None;
    for l in (0..num_layers).rev() {
        let mut dz = d_act;
        if l + 1 != num_layers {
            let a = &trace.activations[l];
            for (dv, &av) in dz.data_mut().iter_mut().zip(a.data()) {
                *dv *= 1.0 - av * av;
            }
        }
        let prev = if l == 0 { &trace.spl_output } else { &trace.activations[l - 1] };
        let gw = matmul_tn(prev, &dz)?;
        let gl = &mut g_params.layers[l];
        gl.w = gw;
        for i in 0..dz.rows() {
            for (bg, &dv) in gl.b.iter_mut().zip(dz.row(i)) {
                *bg += dv;
            }
        }
        if l > 0 {
            let mut d_prev = matmul_nt(&dz, &params.layers[l].w)?;
            if l - 1 == bidx {
                for (dv, &inj) in d_prev.data_mut().iter_mut().zip(d_bottleneck.data()) {
                    *dv += inj;
                }
            }
            d_act = d_prev;
        } else {
            d_spl_output = Some(matmul_nt(&dz, &params.layers[0].w)?);
            d_act = Matrix::zeros(0, 0);
        }
    }

    // SPL gradient: data path (centroid rows included, since g(c_j) is
    // forward-propagated) plus the elastic-net penalty.
    if topology.spl_enabled {
        let ds = d_spl_output.expect("set by layer 0");
        for r in 0..ds.rows() {
            let drow = ds.row(r);
            let xrow = combined.row(r);
            for ((gs, &dv), &xv) in g_params.spl.iter_mut().zip(drow).zip(xrow) {
                *gs += dv * xv;
            }
        }
    }
    if cfg.penalty_active {
        for (gs, &w) in g_params.spl.iter_mut().zip(&params.spl) {
            let sign = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gs += cfg.lambda1 * sign + 2.0 * cfg.lambda2 * w;
        }
    }

    if !g_params.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((breakdown, g_params))
}

//! Penalty values with analytic gradients.
//!
//! Representation penalties act on one hidden layer's post-activations
//! `H [M × N]` and return `∂R/∂H`, which the trainer injects into the
//! backward pass. Parameter penalties act on the model's weight matrices.
//!
//! The inhibition family sums over *ordered* neuron pairs `i ≠ j`:
//!
//! ```text
//! R(H) = (1/M) Σ_{i≠j} w_ij Σ_m h_i^m h_j^m
//! ```
//!
//! with `w_ij = 1` (SNI), a Gaussian of the index distance (SLNI), or that
//! Gaussian discounted by `e^{−(α_i+α_j)}` (SLNID). All three go through
//! [`inhibition_penalty`], so the reductions between them are exact.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, Gradients, Mlp};

/// Norm floor used by the cosine in [`ParamPenaltyKind::OrthReg`].
pub const ORTH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyGrad {
    /// `∂R/∂H`, same shape as the penalised post-activations.
    Activations(Array2<f64>),
    /// `∂R/∂θ`, biases included (zero where the penalty ignores them).
    Params(Gradients),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegPenalty {
    pub value: f64,
    pub grad: PenaltyGrad,
}

impl RegPenalty {
    pub fn activation_grad(&self) -> Option<&Array2<f64>> {
        match &self.grad {
            PenaltyGrad::Activations(g) => Some(g),
            PenaltyGrad::Params(_) => None,
        }
    }

    pub fn param_grads(&self) -> Option<&Gradients> {
        match &self.grad {
            PenaltyGrad::Params(g) => Some(g),
            PenaltyGrad::Activations(_) => None,
        }
    }
}

/// Every regularizer a run can be configured with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegularizerKind {
    #[serde(rename = "none")]
    NoReg,
    #[serde(rename = "sni")]
    Sni,
    #[serde(rename = "snid")]
    Snid,
    #[serde(rename = "slni")]
    Slni,
    #[serde(rename = "slnid")]
    Slnid,
    #[serde(rename = "l1-rep")]
    L1Rep,
    #[serde(rename = "decov")]
    DeCov,
    #[serde(rename = "l1-param")]
    L1Param,
    #[serde(rename = "l2-wd")]
    L2Wd,
    #[serde(rename = "orthreg")]
    OrthReg,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 10] = [
        RegularizerKind::NoReg,
        RegularizerKind::Sni,
        RegularizerKind::Snid,
        RegularizerKind::Slni,
        RegularizerKind::Slnid,
        RegularizerKind::L1Rep,
        RegularizerKind::DeCov,
        RegularizerKind::L1Param,
        RegularizerKind::L2Wd,
        RegularizerKind::OrthReg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RegularizerKind::NoReg => "none",
            RegularizerKind::Sni => "sni",
            RegularizerKind::Snid => "snid",
            RegularizerKind::Slni => "slni",
            RegularizerKind::Slnid => "slnid",
            RegularizerKind::L1Rep => "l1-rep",
            RegularizerKind::DeCov => "decov",
            RegularizerKind::L1Param => "l1-param",
            RegularizerKind::L2Wd => "l2-wd",
            RegularizerKind::OrthReg => "orthreg",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// SNI, SNID, SLNI or SLNID.
    pub fn is_inhibition(&self) -> bool {
        matches!(
            self,
            RegularizerKind::Sni | RegularizerKind::Snid | RegularizerKind::Slni | RegularizerKind::Slnid
        )
    }

    pub fn is_local(&self) -> bool {
        matches!(self, RegularizerKind::Slni | RegularizerKind::Slnid)
    }

    pub fn is_discounted(&self) -> bool {
        matches!(self, RegularizerKind::Snid | RegularizerKind::Slnid)
    }

    pub fn acts_on_activations(&self) -> bool {
        self.is_inhibition() || matches!(self, RegularizerKind::L1Rep | RegularizerKind::DeCov)
    }

    pub fn acts_on_params(&self) -> bool {
        matches!(
            self,
            RegularizerKind::L1Param | RegularizerKind::L2Wd | RegularizerKind::OrthReg
        )
    }
}

/// `e^{−(i−j)²/(2σ²)}`, no wrap-around.
pub fn gaussian_locality_weight(i: usize, j: usize, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let d = i as f64 - j as f64;
    Ok((-(d * d) / (2.0 * sigma * sigma)).exp())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Pairwise inhibition weights for one layer, diagonal zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityKernel {
    sigma: Option<f64>,
    weights: Array2<f64>,
}

impl LocalityKernel {
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let mut weights = Array2::zeros((size, size));
        for ((i, j), w) in weights.indexed_iter_mut() {
            if i != j {
                *w = gaussian_locality_weight(i, j, sigma)?;
            }
        }
        Ok(LocalityKernel {
            sigma: Some(sigma),
            weights,
        })
    }

    /// Every off-diagonal weight equal to one: the non-local SNI kernel.
    pub fn uniform(size: usize) -> Self {
        let mut weights = Array2::ones((size, size));
        weights.diag_mut().fill(0.0);
        LocalityKernel { sigma: None, weights }
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// `e^{−(α_i+α_j)} · w_ij`
    pub fn discounted(&self, alpha: &[f64]) -> Result<Array2<f64>> {
        if alpha.len() != self.size() {
            return Err(Error::shape("neuron importance length", self.size(), alpha.len()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "neuron importance must be finite and non-negative, got {a}"
            )));
        }
        let mut out = self.weights.clone();
        for ((i, j), w) in out.indexed_iter_mut() {
            *w *= (-(alpha[i] + alpha[j])).exp();
        }
        Ok(out)
    }
}

/// `(1/M) Σ_{i≠j} w_ij Σ_m h_i^m h_j^m` for a symmetric, zero-diagonal `w`.
///
/// Gradient: `∂R/∂h_i^m = (2/M) Σ_j w_ij h_j^m`.
pub fn inhibition_penalty(h: &Array2<f64>, weights: &Array2<f64>) -> Result<RegPenalty> {
    let n = h.ncols();
    if weights.dim() != (n, n) {
        return Err(Error::shape("inhibition kernel", (n, n), weights.dim()));
    }
    let m = h.nrows().max(1) as f64;
    let hw = h.dot(weights);
    let value = Zip::from(h).and(&hw).fold(0.0, |acc, &a, &b| acc + a * b) / m;
    let grad = hw * (2.0 / m);
    Ok(RegPenalty {
        value,
        grad: PenaltyGrad::Activations(grad),
    })
}

/// Sparse coding through neural inhibition.
pub fn r_sni(h: &Array2<f64>) -> RegPenalty {
    inhibition_penalty(h, LocalityKernel::uniform(h.ncols()).weights()).expect("uniform kernel matches layer width")
}

/// Sparse coding through local neural inhibition.
pub fn r_slni(h: &Array2<f64>, kernel: &LocalityKernel) -> Result<RegPenalty> {
    inhibition_penalty(h, kernel.weights())
}

/// Local inhibition with importance discounting. `alpha` is held constant.
pub fn r_slnid(h: &Array2<f64>, kernel: &LocalityKernel, alpha: &[f64]) -> Result<RegPenalty> {
    inhibition_penalty(h, &kernel.discounted(alpha)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationPenaltyKind {
    L1Rep,
    DeCov,
}

pub fn activation_penalty(kind: ActivationPenaltyKind, h: &Array2<f64>) -> RegPenalty {
    match kind {
        ActivationPenaltyKind::L1Rep => l1_rep(h),
        ActivationPenaltyKind::DeCov => decov(h),
    }
}

fn l1_rep(h: &Array2<f64>) -> RegPenalty {
    let m = h.nrows().max(1) as f64;
    let value = h.iter().map(|v| v.abs()).sum::<f64>() / m;
    let grad = h.mapv(|v| {
        if v > 0.0 {
            1.0 / m
        } else if v < 0.0 {
            -1.0 / m
        } else {
            0.0
        }
    });
    RegPenalty {
        value,
        grad: PenaltyGrad::Activations(grad),
    }
}

/// `½(‖C‖_F² − ‖diag C‖²)` of the batch covariance `C`.
fn decov(h: &Array2<f64>) -> RegPenalty {
    let m = h.nrows();
    if m == 0 {
        return RegPenalty {
            value: 0.0,
            grad: PenaltyGrad::Activations(h.clone()),
        };
    }
    let mf = m as f64;
    let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = h - &mean;
    let mut cov = centered.t().dot(&centered) / mf;
    let diag_sq: f64 = cov.diag().iter().map(|v| v * v).sum();
    let value = 0.5 * (cov.iter().map(|v| v * v).sum::<f64>() - diag_sq);

    cov.diag_mut().fill(0.0);
    let d_centered = centered.dot(&cov) * (2.0 / mf);
    let col_mean = d_centered.mean_axis(Axis(0)).expect("non-empty batch");
    let grad = d_centered - &col_mean;
    RegPenalty {
        value,
        grad: PenaltyGrad::Activations(grad),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamPenaltyKind {
    L1Param,
    L2Wd,
    OrthReg,
}

/// Weight-matrix penalties over every layer; biases are not penalised.
pub fn parameter_penalty(kind: ParamPenaltyKind, model: &Mlp) -> RegPenalty {
    let mut value = 0.0;
    let mut layers = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let (v, gw) = match kind {
            ParamPenaltyKind::L1Param => (
                layer.weights.iter().map(|w| w.abs()).sum(),
                layer.weights.mapv(|w| {
                    if w > 0.0 {
                        1.0
                    } else if w < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }),
            ),
            ParamPenaltyKind::L2Wd => (
                0.5 * layer.weights.iter().map(|w| w * w).sum::<f64>(),
                layer.weights.clone(),
            ),
            ParamPenaltyKind::OrthReg => orth_reg(&layer.weights),
        };
        value += v;
        layers.push(DenseLayer {
            weights: gw,
            biases: Array1::zeros(layer.outputs()),
        });
    }
    RegPenalty {
        value,
        grad: PenaltyGrad::Params(Gradients { layers }),
    }
}

/// `Σ_{i<j} cos²(w_i, w_j)` over the rows of `w`, with norms `√(‖w_i‖² + ε)`.
fn orth_reg(w: &Array2<f64>) -> (f64, Array2<f64>) {
    let rows = w.nrows();
    let gram = w.dot(&w.t());
    let norms: Array1<f64> = gram.diag().mapv(|g| (g + ORTH_EPS).sqrt());
    let mut cos = Array2::zeros((rows, rows));
    for ((i, j), c) in cos.indexed_iter_mut() {
        if i != j {
            *c = gram[[i, j]] / (norms[i] * norms[j]);
        }
    }
    let value = 0.5 * cos.iter().map(|c| c * c).sum::<f64>();

    // ∂/∂w_i = Σ_{j≠i} 2c_ij (w_j/(n_i n_j) − c_ij w_i/n_i²)
    let mut coupling = Array2::zeros((rows, rows));
    for ((i, j), a) in coupling.indexed_iter_mut() {
        *a = 2.0 * cos[[i, j]] / (norms[i] * norms[j]);
    }
    let mut grad = coupling.dot(w);
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let self_term: f64 = cos.row(i).iter().map(|c| 2.0 * c * c).sum::<f64>() / (norms[i] * norms[i]);
        row.scaled_add(-self_term, &w.row(i));
    }
    (value, grad)
}

//! The calibration head.
//!
//! For an input feature `x` with `K` learnable directions:
//!
//! ```text
//! relevance  H = softmax_k(⟨x, W_k⟩)
//! ratio      R = softmax_k(S_k·x + β_k)
//! calibrated h = Σ_k (H_k R_k) U_k + c
//! verbalizer p = softmax_f(⟨h, V_f⟩)
//! ```
//!
//! `W` is kept near-orthonormal by `‖WᵀW − I‖²_F` and the rows of `S` near
//! unit length by `Σ_k (‖S_k‖² − 1)²`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{dot, ensure_finite, log_sum_exp, norm_sq, softmax, Matrix};

pub const DEFAULT_INIT_SD: f64 = 0.02;

/// Whether representations pass through the calibration head or go to the
/// verbalizer unchanged (the plain prompt baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadMode {
    #[default]
    Calibrated,
    Identity,
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Calibrated => "calibrated",
            Self::Identity => "identity",
        })
    }
}

impl FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibrated" => Ok(Self::Calibrated),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown head mode {other:?}"))),
        }
    }
}

/// Initialization for `W` and `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    #[default]
    Gaussian,
    Xavier,
    Eye,
    Orthogonal,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "xavier" => Ok(Self::Xavier),
            "eye" => Ok(Self::Eye),
            "orthogonal" => Ok(Self::Orthogonal),
            other => Err(Error::Config(format!("unknown init scheme {other:?}"))),
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Xavier => "xavier",
            Self::Eye => "eye",
            Self::Orthogonal => "orthogonal",
        })
    }
}

fn gaussian<R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

impl InitScheme {
    pub fn sample<R: Rng>(self, rows: usize, cols: usize, rng: &mut R) -> Matrix {
        match self {
            Self::Gaussian => gaussian(rows, cols, DEFAULT_INIT_SD, rng),
            Self::Xavier => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
            }
            Self::Eye => Matrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 }),
            Self::Orthogonal => orthogonal(rows, cols, rng),
        }
    }
}

/// Random matrix with orthonormal rows (or columns when `rows > cols`).
fn orthogonal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    if rows > cols {
        return orthogonal(cols, rows, rng).transpose();
    }
    let mut m = gaussian(rows, cols, 1.0, rng);
    for i in 0..rows {
        for j in 0..i {
            let p = dot(m.row(i), m.row(j));
            let prev = m.row(j).to_vec();
            m.row_mut(i).iter_mut().zip(&prev).for_each(|(a, b)| *a -= p * b);
        }
        let n = norm_sq(m.row(i)).sqrt();
        m.row_mut(i).iter_mut().for_each(|a| *a /= n);
    }
    m
}

/// Learnable parameters of the calibration head and verbalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationHead {
    pub mode: HeadMode,
    /// K × d rotation, row k is `W_k`.
    pub rotation: Matrix,
    /// K × d scaling, row k is `S_k`.
    pub scaling: Matrix,
    /// Per-direction ratio bias `β_k`.
    pub ratio_bias: Vec<f64>,
    /// K × d decoder directions `U_k`.
    pub decoder: Matrix,
    /// Shared decoder bias `c`.
    pub decoder_bias: Vec<f64>,
    /// F × d label embeddings.
    pub verbalizer: Matrix,
}

/// Parameter tensors in a fixed order, used for optimizer state and
/// checkpoints.
pub const PARAM_NAMES: [&str; 6] = [
    "rotation",
    "scaling",
    "ratio_bias",
    "decoder",
    "decoder_bias",
    "verbalizer",
];

impl CalibrationHead {
    pub fn init<R: Rng>(
        k: usize,
        d: usize,
        num_fine: usize,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Argument(format!("need at least 2 directions, got {k}")));
        }
        if d == 0 || num_fine == 0 {
            return Err(Error::Argument("empty feature or label dimension".into()));
        }
        let rotation = scheme.sample(k, d, rng);
        let scaling = scheme.sample(k, d, rng);
        let decoder = gaussian(k, d, DEFAULT_INIT_SD, rng);
        let verbalizer = gaussian(num_fine, d, DEFAULT_INIT_SD, rng);
        Ok(Self {
            mode: HeadMode::Calibrated,
            rotation,
            scaling,
            ratio_bias: vec![0.0; k],
            decoder,
            decoder_bias: vec![0.0; d],
            verbalizer,
        })
    }

    /// Assemble from explicit tensors, checking shapes and finiteness.
    pub fn from_parts(
        mode: HeadMode,
        rotation: Matrix,
        scaling: Matrix,
        ratio_bias: Vec<f64>,
        decoder: Matrix,
        decoder_bias: Vec<f64>,
        verbalizer: Matrix,
    ) -> Result<Self> {
        let (k, d) = rotation.shape();
        let ok = k >= 2
            && scaling.shape() == (k, d)
            && decoder.shape() == (k, d)
            && ratio_bias.len() == k
            && decoder_bias.len() == d
            && verbalizer.cols() == d;
        if !ok {
            return Err(Error::Consistency("inconsistent head parameter shapes".into()));
        }
        let head = Self {
            mode,
            rotation,
            scaling,
            ratio_bias,
            decoder,
            decoder_bias,
            verbalizer,
        };
        if !head.is_finite() {
            return Err(Error::Value("head parameters contain non-finite values".into()));
        }
        Ok(head)
    }

    pub fn num_directions(&self) -> usize {
        self.rotation.rows()
    }

    pub fn dim(&self) -> usize {
        self.rotation.cols()
    }

    pub fn num_fine(&self) -> usize {
        self.verbalizer.rows()
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.rotation.as_slice(),
            self.scaling.as_slice(),
            &self.ratio_bias,
            self.decoder.as_slice(),
            &self.decoder_bias,
            self.verbalizer.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.rotation.as_mut_slice(),
            self.scaling.as_mut_slice(),
            &mut self.ratio_bias,
            self.decoder.as_mut_slice(),
            &mut self.decoder_bias,
            self.verbalizer.as_mut_slice(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!(
                "input has dimension {}, head expects {}",
                x.len(),
                self.dim()
            )));
        }
        ensure_finite(x, "input")
    }

    fn relevance_logits(&self, x: &[f64]) -> Vec<f64> {
        self.rotation.iter_rows().map(|w| dot(x, w)).collect()
    }

    fn ratio_logits(&self, x: &[f64]) -> Vec<f64> {
        self.scaling
            .iter_rows()
            .zip(&self.ratio_bias)
            .map(|(s, b)| dot(x, s) + b)
            .collect()
    }

    /// `softmax_k ⟨x, W_k⟩`
    pub fn relevance(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(softmax(&self.relevance_logits(x)))
    }

    /// `softmax_k (S_k·x + β_k)`
    pub fn ratio(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(softmax(&self.ratio_logits(x)))
    }

    /// `Σ_k H_k(x) R_k(x) U_k + c`, regardless of [`HeadMode`].
    pub fn calibrate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x).h)
    }

    /// The representation fed to the verbalizer: calibrated output, or `x`
    /// itself in identity mode.
    pub fn represent(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            HeadMode::Calibrated => self.calibrate(x),
            HeadMode::Identity => {
                self.check_input(x)?;
                Ok(x.to_vec())
            }
        }
    }

    pub fn represent_all(&self, m: &Matrix) -> Result<Matrix> {
        let mut out = Vec::with_capacity(m.rows() * self.dim());
        for row in m.iter_rows() {
            out.extend(self.represent(row)?);
        }
        Matrix::new(m.rows(), self.dim(), out)
    }

    fn verbalizer_logits(&self, h: &[f64]) -> Vec<f64> {
        self.verbalizer.iter_rows().map(|v| dot(h, v)).collect()
    }

    /// `softmax_f ⟨h, V_f⟩`
    pub fn classify(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_input(h)?;
        Ok(softmax(&self.verbalizer_logits(h)))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.verbalizer_logits(&self.represent(x)?);
        Ok(argmax(&logits))
    }

    /// Cross-entropy of the verbalizer prediction against `label`.
    pub fn cls_loss(&self, x: &[f64], label: usize) -> Result<f64> {
        if label >= self.num_fine() {
            return Err(Error::Label(format!(
                "label {label} outside [0, {})",
                self.num_fine()
            )));
        }
        let h = self.represent(x)?;
        let logits = self.verbalizer_logits(&h);
        Ok((log_sum_exp(&logits) - logits[label]).max(0.0))
    }

    /// `‖WᵀW − I‖²_F`, computed through the K×K Gram matrix `G = WWᵀ` as
    /// `‖G‖²_F − 2 tr G + d`.
    pub fn orth_loss(&self) -> f64 {
        let g = self.rotation.gram_rows();
        let sq: f64 = g.as_slice().iter().map(|v| v * v).sum();
        let tr: f64 = (0..g.rows()).map(|i| g[(i, i)]).sum();
        (sq - 2.0 * tr + self.dim() as f64).max(0.0)
    }

    /// `Σ_k (‖S_k‖² − 1)²`
    pub fn ratio_loss(&self) -> f64 {
        self.scaling
            .iter_rows()
            .map(|s| (norm_sq(s) - 1.0).powi(2))
            .sum()
    }

    pub fn dis_loss(&self) -> f64 {
        self.orth_loss() + self.ratio_loss()
    }

    /// Squared norm of every parameter except `W` and `S`.
    pub fn l2_other(&self) -> f64 {
        let mut s = norm_sq(self.verbalizer.as_slice());
        if self.mode == HeadMode::Calibrated {
            s += norm_sq(&self.ratio_bias) + norm_sq(self.decoder.as_slice()) + norm_sq(&self.decoder_bias);
        }
        s
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Forward {
        let relevance = softmax(&self.relevance_logits(x));
        let ratio = softmax(&self.ratio_logits(x));
        let weights: Vec<f64> = relevance.iter().zip(&ratio).map(|(a, b)| a * b).collect();
        let mut h = self.decoder_bias.clone();
        for (w, u) in weights.iter().zip(self.decoder.iter_rows()) {
            for (o, v) in h.iter_mut().zip(u) {
                *o += w * v;
            }
        }
        Forward {
            relevance,
            ratio,
            weights,
            h,
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct Forward {
    pub relevance: Vec<f64>,
    pub ratio: Vec<f64>,
    pub weights: Vec<f64>,
    pub h: Vec<f64>,
}

/// Gradient buffers shaped like [`CalibrationHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub rotation: Matrix,
    pub scaling: Matrix,
    pub ratio_bias: Vec<f64>,
    pub decoder: Matrix,
    pub decoder_bias: Vec<f64>,
    pub verbalizer: Matrix,
}

impl HeadGrad {
    pub fn zeros_like(head: &CalibrationHead) -> Self {
        let (k, d) = head.rotation.shape();
        Self {
            rotation: Matrix::zeros(k, d),
            scaling: Matrix::zeros(k, d),
            ratio_bias: vec![0.0; k],
            decoder: Matrix::zeros(k, d),
            decoder_bias: vec![0.0; d],
            verbalizer: Matrix::zeros(head.num_fine(), d),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.rotation.as_slice(),
            self.scaling.as_slice(),
            &self.ratio_bias,
            self.decoder.as_slice(),
            &self.decoder_bias,
            self.verbalizer.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.rotation.as_mut_slice(),
            self.scaling.as_mut_slice(),
            &mut self.ratio_bias,
            self.decoder.as_mut_slice(),
            &mut self.decoder_bias,
            self.verbalizer.as_mut_slice(),
        ]
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &HeadGrad, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }
}

/// Backward pass of the cross-entropy through verbalizer and head for one
/// sample. `extra_grad_h` is an additional upstream gradient on the
/// representation (the metric loss). Accumulates `scale ·` gradient into
/// `grad` and returns the cross-entropy value.
pub(crate) fn backward_sample(
    head: &CalibrationHead,
    x: &[f64],
    label: usize,
    cls_weight: f64,
    extra_grad_h: Option<&[f64]>,
    scale: f64,
    grad: &mut HeadGrad,
) -> f64 {
    let d = head.dim();
    let fwd = match head.mode {
        HeadMode::Calibrated => Some(head.forward(x)),
        HeadMode::Identity => None,
    };
    let h: &[f64] = fwd.as_ref().map_or(x, |f| &f.h);

    let logits = head.verbalizer_logits(h);
    let loss = (log_sum_exp(&logits) - logits[label]).max(0.0);
    let probs = softmax(&logits);

    // ∂/∂logit_f = p_f − [f = y]
    let mut grad_h = vec![0.0; d];
    if cls_weight != 0.0 {
        for (f, (p, v)) in probs.iter().zip(head.verbalizer.iter_rows()).enumerate() {
            let g = cls_weight * (p - if f == label { 1.0 } else { 0.0 });
            for (gh, vi) in grad_h.iter_mut().zip(v) {
                *gh += g * vi;
            }
            for (gv, hi) in grad.verbalizer.row_mut(f).iter_mut().zip(h) {
                *gv += scale * g * hi;
            }
        }
    }
    if let Some(extra) = extra_grad_h {
        grad_h.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
    }

    let Some(fwd) = fwd else {
        return loss;
    };

    // h = c + Σ_k w_k U_k
    grad.decoder_bias
        .iter_mut()
        .zip(&grad_h)
        .for_each(|(a, b)| *a += scale * b);
    let k = head.num_directions();
    let mut grad_w = vec![0.0; k];
    for kk in 0..k {
        let wk = fwd.weights[kk];
        for (gu, gh) in grad.decoder.row_mut(kk).iter_mut().zip(&grad_h) {
            *gu += scale * wk * gh;
        }
        grad_w[kk] = dot(head.decoder.row(kk), &grad_h);
    }

    // w = H ⊙ R, then back through both softmaxes
    let grad_rel: Vec<f64> = grad_w.iter().zip(&fwd.ratio).map(|(g, r)| g * r).collect();
    let grad_rat: Vec<f64> = grad_w.iter().zip(&fwd.relevance).map(|(g, h)| g * h).collect();
    let rel_logits = softmax_backward(&fwd.relevance, &grad_rel);
    let rat_logits = softmax_backward(&fwd.ratio, &grad_rat);

    for kk in 0..k {
        let (ga, gb) = (scale * rel_logits[kk], scale * rat_logits[kk]);
        for (gw, xi) in grad.rotation.row_mut(kk).iter_mut().zip(x) {
            *gw += ga * xi;
        }
        for (gs, xi) in grad.scaling.row_mut(kk).iter_mut().zip(x) {
            *gs += gb * xi;
        }
        grad.ratio_bias[kk] += gb;
    }
    loss
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let inner = dot(p, g);
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - inner)).collect()
}

/// `∂/∂W ‖WᵀW − I‖²_F = 4 (WWᵀ W − W)`
pub(crate) fn orth_grad(head: &CalibrationHead) -> Matrix {
    let w = &head.rotation;
    let g = w.gram_rows();
    let mut out = g.matmul(w);
    out.as_mut_slice()
        .iter_mut()
        .zip(w.as_slice())
        .for_each(|(o, wi)| *o = 4.0 * (*o - wi));
    out
}

/// `∂/∂S_k Σ (‖S_k‖² − 1)² = 4(‖S_k‖² − 1) S_k`
pub(crate) fn ratio_reg_grad(head: &CalibrationHead) -> Matrix {
    let mut out = head.scaling.clone();
    for k in 0..out.rows() {
        let f = 4.0 * (norm_sq(head.scaling.row(k)) - 1.0);
        out.row_mut(k).iter_mut().for_each(|v| *v *= f);
    }
    out
}

//! Poincaré-ball distance and the coarse-class anchor metric loss.
//!
//! Gradients are Euclidean gradients of the closed-form distance, not
//! Riemannian ones. Points leaving the ball are pulled back by radial
//! norm clipping.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{log_sum_exp, norm, norm_sq, softmax, Matrix};

pub const DEFAULT_EPS_BALL: f64 = 1e-5;
/// Lower clamp on the arcosh argument when differentiating.
const ACOSH_GRAD_FLOOR: f64 = 1.0 + 1e-12;
const ANCHOR_INIT_SD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceKind {
    #[default]
    Hyperbolic,
    Euclidean,
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(Self::Hyperbolic),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(Error::Config(format!("unknown distance kind {other:?}"))),
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hyperbolic => "hyperbolic",
            Self::Euclidean => "euclidean",
        })
    }
}

fn check_inside(u: &[f64], what: &str) -> Result<f64> {
    let n2 = norm_sq(u);
    if !n2.is_finite() || n2 >= 1.0 {
        return Err(Error::Domain(format!(
            "{what} has norm {} (must be < 1)",
            n2.sqrt()
        )));
    }
    Ok(n2)
}

/// `arcosh(1 + 2‖u−v‖² / ((1−‖u‖²)(1−‖v‖²)))`
pub fn poincare_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Argument("dimension mismatch".into()));
    }
    let nu = check_inside(u, "u")?;
    let nv = check_inside(v, "v")?;
    Ok(distance_unchecked(u, v, nu, nv).0)
}

/// Distance and the arcosh argument.
fn distance_unchecked(u: &[f64], v: &[f64], nu: f64, nv: f64) -> (f64, f64) {
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let x = (1.0 + 2.0 * diff / ((1.0 - nu) * (1.0 - nv))).max(1.0);
    (x.acosh(), x)
}

/// Distance plus its gradients with respect to `u` and `v`.
fn poincare_distance_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nu = norm_sq(u);
    let nv = norm_sq(v);
    let alpha = 1.0 - nu;
    let beta = 1.0 - nv;
    let delta: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let (dist, x) = distance_unchecked(u, v, nu, nv);
    let xc = x.max(ACOSH_GRAD_FLOOR);
    let dacosh = 1.0 / (xc * xc - 1.0).sqrt();
    // ∂x/∂u = 4(u−v)/(αβ) + 4δu/(α²β), symmetric for v
    let gu = u
        .iter()
        .zip(v)
        .map(|(a, b)| dacosh * (4.0 * (a - b) / (alpha * beta) + 4.0 * delta * a / (alpha * alpha * beta)))
        .collect();
    let gv = u
        .iter()
        .zip(v)
        .map(|(a, b)| dacosh * (4.0 * (b - a) / (alpha * beta) + 4.0 * delta * b / (beta * beta * alpha)))
        .collect();
    (dist, gu, gv)
}

fn euclidean_distance_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let dist = norm(&diff);
    if dist == 0.0 {
        return (0.0, vec![0.0; u.len()], vec![0.0; u.len()]);
    }
    let gu: Vec<f64> = diff.iter().map(|x| x / dist).collect();
    let gv = gu.iter().map(|x| -x).collect();
    (dist, gu, gv)
}

/// Radially clip `v` to norm at most `1 − eps_ball`.
pub fn project_to_ball(v: &[f64], eps_ball: f64) -> Vec<f64> {
    let radius = 1.0 - eps_ball;
    let n = norm(v);
    if n <= radius {
        v.to_vec()
    } else {
        v.iter().map(|x| x * radius / n).collect()
    }
}

/// Backpropagate `grad_out` (w.r.t. the projected point) through
/// [`project_to_ball`].
fn project_backward(v: &[f64], eps_ball: f64, grad_out: &[f64]) -> Vec<f64> {
    let radius = 1.0 - eps_ball;
    let n = norm(v);
    if n <= radius {
        return grad_out.to_vec();
    }
    // J = (r/‖v‖)(I − v̂v̂ᵀ)
    let proj: f64 = v.iter().zip(grad_out).map(|(a, g)| a * g).sum::<f64>() / (n * n);
    v.iter()
        .zip(grad_out)
        .map(|(a, g)| radius / n * (g - proj * a))
        .collect()
}

/// Learnable coarse-class anchors inside the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Matrix,
    eps_ball: f64,
}

impl AnchorSet {
    pub fn new(anchors: Matrix, eps_ball: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps_ball) {
            return Err(Error::Argument(format!("eps_ball {eps_ball} outside [0, 1)")));
        }
        let radius = 1.0 - eps_ball;
        for (i, row) in anchors.iter_rows().enumerate() {
            if norm(row) > radius {
                return Err(Error::Domain(format!(
                    "anchor {i} has norm {} > {radius}",
                    norm(row)
                )));
            }
        }
        Ok(Self { anchors, eps_ball })
    }

    /// Gaussian init (sd 1e-3) followed by retraction.
    pub fn init<R: Rng>(num_coarse: usize, d: usize, eps_ball: f64, rng: &mut R) -> Self {
        let anchors =
            Matrix::from_fn(num_coarse, d, |_, _| ANCHOR_INIT_SD * rng.sample::<f64, _>(StandardNormal));
        let mut set = Self { anchors, eps_ball };
        set.retract_in_place();
        set
    }

    /// Change the margin and retract rows that fall outside it.
    pub fn with_eps_ball(mut self, eps_ball: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps_ball) {
            return Err(Error::Argument(format!("eps_ball {eps_ball} outside [0, 1)")));
        }
        self.eps_ball = eps_ball;
        self.retract_in_place();
        Ok(self)
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub(crate) fn anchors_mut(&mut self) -> &mut Matrix {
        &mut self.anchors
    }

    pub fn eps_ball(&self) -> f64 {
        self.eps_ball
    }

    pub fn num_coarse(&self) -> usize {
        self.anchors.rows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols()
    }

    pub fn retract(&self) -> AnchorSet {
        let mut out = self.clone();
        out.retract_in_place();
        out
    }

    pub fn retract_in_place(&mut self) {
        let eps = self.eps_ball;
        for i in 0..self.anchors.rows() {
            let p = project_to_ball(self.anchors.row(i), eps);
            self.anchors.row_mut(i).copy_from_slice(&p);
        }
    }

    fn check(&self, h: &[f64], coarse: usize) -> Result<()> {
        if coarse >= self.num_coarse() {
            return Err(Error::Label(format!(
                "coarse label {coarse} outside [0, {})",
                self.num_coarse()
            )));
        }
        if h.len() != self.dim() {
            return Err(Error::Argument(format!(
                "point has dimension {}, anchors {}",
                h.len(),
                self.dim()
            )));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::Value("point has non-finite entries".into()));
        }
        Ok(())
    }
}

/// `−log softmax(−d(h, z_i))[coarse]` over the anchors.
pub fn metric_loss(anchors: &AnchorSet, h: &[f64], coarse: usize, kind: DistanceKind) -> Result<f64> {
    Ok(metric_grad(anchors, h, coarse, kind)?.loss)
}

#[derive(Debug, Clone)]
pub struct MetricGrad {
    pub loss: f64,
    pub grad_h: Vec<f64>,
    pub grad_anchors: Matrix,
}

pub fn metric_grad(
    anchors: &AnchorSet,
    h: &[f64],
    coarse: usize,
    kind: DistanceKind,
) -> Result<MetricGrad> {
    anchors.check(h, coarse)?;
    let c = anchors.num_coarse();
    let d = anchors.dim();
    let point = match kind {
        DistanceKind::Hyperbolic => project_to_ball(h, anchors.eps_ball),
        DistanceKind::Euclidean => h.to_vec(),
    };

    let mut dists = Vec::with_capacity(c);
    let mut grads = Vec::with_capacity(c);
    for i in 0..c {
        let z = anchors.anchors.row(i);
        let (dist, gp, gz) = match kind {
            DistanceKind::Hyperbolic => poincare_distance_grad(&point, z),
            DistanceKind::Euclidean => euclidean_distance_grad(&point, z),
        };
        dists.push(dist);
        grads.push((gp, gz));
    }

    let neg: Vec<f64> = dists.iter().map(|d| -d).collect();
    let loss = (dists[coarse] + log_sum_exp(&neg)).max(0.0);
    let q = softmax(&neg);

    // ∂L/∂d_i = [i = coarse] − q_i
    let mut grad_point = vec![0.0; d];
    let mut grad_anchors = Matrix::zeros(c, d);
    for i in 0..c {
        let w = if i == coarse { 1.0 - q[i] } else { -q[i] };
        if w == 0.0 {
            continue;
        }
        let (gp, gz) = &grads[i];
        for (acc, g) in grad_point.iter_mut().zip(gp) {
            *acc += w * g;
        }
        for (acc, g) in grad_anchors.row_mut(i).iter_mut().zip(gz) {
            *acc = w * g;
        }
    }
    let grad_h = match kind {
        DistanceKind::Hyperbolic => project_backward(h, anchors.eps_ball, &grad_point),
        DistanceKind::Euclidean => grad_point,
    };
    Ok(MetricGrad {
        loss,
        grad_h,
        grad_anchors,
    })
}

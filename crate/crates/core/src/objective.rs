//! Weighted training objective and its analytic gradient.
//!
//! `L = w_cls·L_cls + w_metric·L_metric + w_orth·L_orth + w_ratio·L_t + λ·‖θ_other‖²`
//!
//! The data terms (`L_cls`, `L_metric`) are averaged over the batch; the
//! regularizers are added once. `θ_other` is every active parameter except
//! `W` and `S`, including the anchors when the metric term is on.

use std::fmt;

use rayon::prelude::*;

use crate::calib::{backward_sample, orth_grad, ratio_reg_grad, CalibrationHead, HeadGrad, HeadMode};
use crate::error::{Error, Result};
use crate::hyperbolic::{metric_grad, AnchorSet, DistanceKind};
use crate::matrix::{norm_sq, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Cls,
    Metric,
    Orth,
    Ratio,
    L2,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::Cls => "cls",
            Term::Metric => "metric",
            Term::Orth => "orth",
            Term::Ratio => "ratio",
            Term::L2 => "l2",
        })
    }
}

/// Per-term weights; a zero weight switches the term off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub cls: f64,
    pub metric: f64,
    pub orth: f64,
    pub ratio: f64,
    pub l2: f64,
    pub distance: DistanceKind,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            cls: 1.0,
            metric: 0.0,
            orth: 0.0,
            ratio: 0.0,
            l2: 0.0,
            distance: DistanceKind::Hyperbolic,
        }
    }
}

impl Objective {
    pub fn active_terms(&self) -> Vec<Term> {
        [
            (Term::Cls, self.cls),
            (Term::Metric, self.metric),
            (Term::Orth, self.orth),
            (Term::Ratio, self.ratio),
            (Term::L2, self.l2),
        ]
        .into_iter()
        .filter(|(_, w)| *w != 0.0)
        .map(|(t, _)| t)
        .collect()
    }
}

/// Term values (unweighted) and the weighted total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub cls: f64,
    pub orth: f64,
    pub ratio: f64,
    pub metric: f64,
    pub l2: f64,
    /// `Σ weight · value` over the active terms.
    pub total: f64,
    pub active_terms: Vec<Term>,
}

impl LossBreakdown {
    pub fn value(&self, term: Term) -> f64 {
        match term {
            Term::Cls => self.cls,
            Term::Metric => self.metric,
            Term::Orth => self.orth,
            Term::Ratio => self.ratio,
            Term::L2 => self.l2,
        }
    }

    fn set(&mut self, term: Term, v: f64) {
        match term {
            Term::Cls => self.cls = v,
            Term::Metric => self.metric = v,
            Term::Orth => self.orth = v,
            Term::Ratio => self.ratio = v,
            Term::L2 => self.l2 = v,
        }
    }

    fn finish(mut self, obj: &Objective) -> Self {
        self.active_terms = obj.active_terms();
        self.total = self
            .active_terms
            .iter()
            .map(|&t| weight(obj, t) * self.value(t))
            .sum();
        self
    }

    /// Mean of several breakdowns, with the total recomputed from the
    /// averaged terms.
    pub fn mean(items: &[LossBreakdown], obj: &Objective) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for t in [Term::Cls, Term::Metric, Term::Orth, Term::Ratio, Term::L2] {
            out.set(t, items.iter().map(|b| b.value(t)).sum::<f64>() / n);
        }
        out.finish(obj)
    }

    pub fn is_finite(&self) -> bool {
        [self.cls, self.orth, self.ratio, self.metric, self.l2, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn weight(obj: &Objective, t: Term) -> f64 {
    match t {
        Term::Cls => obj.cls,
        Term::Metric => obj.metric,
        Term::Orth => obj.orth,
        Term::Ratio => obj.ratio,
        Term::L2 => obj.l2,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub fine: usize,
    pub coarse: usize,
}

/// Gradient of the objective with respect to the head and the anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub head: HeadGrad,
    pub anchors: Matrix,
}

struct SampleOut {
    cls: f64,
    metric: f64,
    head: HeadGrad,
    anchors: Option<Matrix>,
}

fn sample_grad(
    head: &CalibrationHead,
    anchors: Option<&AnchorSet>,
    s: &Sample,
    obj: &Objective,
) -> Result<SampleOut> {
    if s.fine >= head.num_fine() {
        return Err(Error::Label(format!(
            "fine label {} outside [0, {})",
            s.fine,
            head.num_fine()
        )));
    }
    let mut grad = HeadGrad::zeros_like(head);
    let mut metric = 0.0;
    let mut anchor_grad = None;
    let mut extra = None;
    if obj.metric != 0.0 {
        let anchors = anchors.ok_or_else(|| Error::Argument("metric term needs anchors".into()))?;
        let h = head.represent(s.x)?;
        let mg = metric_grad(anchors, &h, s.coarse, obj.distance)?;
        metric = mg.loss;
        extra = Some(mg.grad_h.iter().map(|g| obj.metric * g).collect::<Vec<_>>());
        let mut ga = mg.grad_anchors;
        ga.as_mut_slice().iter_mut().for_each(|g| *g *= obj.metric);
        anchor_grad = Some(ga);
    } else if s.x.len() != head.dim() {
        return Err(Error::Argument("sample dimension mismatch".into()));
    }
    let cls = backward_sample(head, s.x, s.fine, obj.cls, extra.as_deref(), 1.0, &mut grad);
    Ok(SampleOut {
        cls,
        metric,
        head: grad,
        anchors: anchor_grad,
    })
}

/// Loss breakdown and exact gradient over a batch.
///
/// Per-sample gradients may be computed on `pool`; they are always reduced
/// sequentially in batch order, so the result does not depend on the
/// number of workers.
pub fn grad_all(
    head: &CalibrationHead,
    anchors: Option<&AnchorSet>,
    batch: &[Sample],
    obj: &Objective,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(LossBreakdown, ModelGrad)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let outs: Vec<Result<SampleOut>> = match pool {
        Some(pool) => pool.install(|| {
            batch
                .par_iter()
                .map(|s| sample_grad(head, anchors, s, obj))
                .collect()
        }),
        None => batch.iter().map(|s| sample_grad(head, anchors, s, obj)).collect(),
    };

    let inv = 1.0 / batch.len() as f64;
    let (c, d) = anchors.map_or((0, 0), |a| a.anchors().shape());
    let mut grad = ModelGrad {
        head: HeadGrad::zeros_like(head),
        anchors: Matrix::zeros(c, d),
    };
    let mut breakdown = LossBreakdown::default();
    for out in outs {
        let out = out?;
        breakdown.cls += out.cls;
        breakdown.metric += out.metric;
        grad.head.add_scaled(&out.head, inv);
        if let Some(ga) = out.anchors {
            grad.anchors
                .as_mut_slice()
                .iter_mut()
                .zip(ga.as_slice())
                .for_each(|(a, b)| *a += inv * b);
        }
    }
    breakdown.cls *= inv;
    breakdown.metric *= inv;

    add_regularizers(head, anchors, obj, &mut breakdown, &mut grad);
    Ok((breakdown.finish(obj), grad))
}

fn add_regularizers(
    head: &CalibrationHead,
    anchors: Option<&AnchorSet>,
    obj: &Objective,
    breakdown: &mut LossBreakdown,
    grad: &mut ModelGrad,
) {
    breakdown.orth = head.orth_loss();
    breakdown.ratio = head.ratio_loss();
    if obj.orth != 0.0 {
        let g = orth_grad(head);
        add_into(grad.head.rotation.as_mut_slice(), g.as_slice(), obj.orth);
    }
    if obj.ratio != 0.0 {
        let g = ratio_reg_grad(head);
        add_into(grad.head.scaling.as_mut_slice(), g.as_slice(), obj.ratio);
    }

    breakdown.l2 = l2_value(head, anchors, obj);
    if obj.l2 != 0.0 {
        let s = 2.0 * obj.l2;
        add_into(grad.head.verbalizer.as_mut_slice(), head.verbalizer.as_slice(), s);
        if head.mode == HeadMode::Calibrated {
            add_into(&mut grad.head.ratio_bias, &head.ratio_bias, s);
            add_into(grad.head.decoder.as_mut_slice(), head.decoder.as_slice(), s);
            add_into(&mut grad.head.decoder_bias, &head.decoder_bias, s);
        }
        if obj.metric != 0.0 {
            if let Some(a) = anchors {
                add_into(grad.anchors.as_mut_slice(), a.anchors().as_slice(), s);
            }
        }
    }
}

fn l2_value(head: &CalibrationHead, anchors: Option<&AnchorSet>, obj: &Objective) -> f64 {
    let mut v = head.l2_other();
    if obj.metric != 0.0 {
        if let Some(a) = anchors {
            v += norm_sq(a.anchors().as_slice());
        }
    }
    v
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += scale * b);
}

/// Objective value without gradients.
pub fn loss_all(
    head: &CalibrationHead,
    anchors: Option<&AnchorSet>,
    batch: &[Sample],
    obj: &Objective,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut b = LossBreakdown::default();
    for s in batch {
        b.cls += head.cls_loss(s.x, s.fine)?;
        if obj.metric != 0.0 {
            let a = anchors.ok_or_else(|| Error::Argument("metric term needs anchors".into()))?;
            b.metric += crate::hyperbolic::metric_loss(a, &head.represent(s.x)?, s.coarse, obj.distance)?;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    b.cls *= inv;
    b.metric *= inv;
    b.orth = head.orth_loss();
    b.ratio = head.ratio_loss();
    b.l2 = l2_value(head, anchors, obj);
    Ok(b.finish(obj))
}

//! Training loop, evaluation and the loss-term ablation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calib::{CalibrationHead, HeadMode, InitScheme};
use crate::config::KvFile;
use crate::diagnostics::{spectrum_stats, SpectrumReport};
use crate::error::{Error, Result};
use crate::hyperbolic::{AnchorSet, DistanceKind, DEFAULT_EPS_BALL};
use crate::objective::{grad_all, LossBreakdown, Objective, Sample};
use crate::matrix::Matrix;
use crate::optim::Adam;
use crate::report::Report;
use crate::store::{load_embeddings, sample_k_shot, LabeledDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Verbalizer on the raw features, cross-entropy only.
    Baseline,
    /// Calibration head with cross-entropy and distinguishability loss.
    Tara,
    /// Calibration head with cross-entropy and anchor metric loss.
    Tml,
    /// All terms.
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Tara, Variant::Tml, Variant::Full];

    pub fn uses_dis(self) -> bool {
        matches!(self, Variant::Tara | Variant::Full)
    }

    pub fn uses_metric(self) -> bool {
        matches!(self, Variant::Tml | Variant::Full)
    }

    pub fn head_mode(self) -> HeadMode {
        match self {
            Variant::Baseline => HeadMode::Identity,
            _ => HeadMode::Calibrated,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "tara" => Ok(Variant::Tara),
            "tml" => Ok(Variant::Tml),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::Tara => "tara",
            Variant::Tml => "tml",
            Variant::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Number of calibration directions `K`.
    pub directions: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_orth: bool,
    pub use_ratio: bool,
    pub l2_weight: f64,
    pub distance: DistanceKind,
    pub init: InitScheme,
    pub k_shot: Option<usize>,
    pub eps_ball: f64,
    pub freeze_verbalizer: bool,
    /// Label-word vectors (`F×d`) to start the verbalizer from.
    pub verbalizer: Option<Matrix>,
    pub metric_weight: f64,
    pub orth_weight: f64,
    pub ratio_weight: f64,
    /// Threads for per-sample gradients; results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            directions: 16,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            use_orth: true,
            use_ratio: true,
            l2_weight: 1e-4,
            distance: DistanceKind::Hyperbolic,
            init: InitScheme::Gaussian,
            k_shot: None,
            eps_ball: DEFAULT_EPS_BALL,
            freeze_verbalizer: false,
            verbalizer: None,
            metric_weight: 1.0,
            orth_weight: 1.0,
            ratio_weight: 1.0,
            workers: 1,
        }
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got {other:?}"))),
    }
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        let dis = self.variant.uses_dis();
        Objective {
            cls: 1.0,
            metric: if self.variant.uses_metric() { self.metric_weight } else { 0.0 },
            orth: if dis && self.use_orth { self.orth_weight } else { 0.0 },
            ratio: if dis && self.use_ratio { self.ratio_weight } else { 0.0 },
            l2: self.l2_weight,
            distance: self.distance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.directions < 2 {
            return bad(format!("need at least 2 directions, got {}", self.directions));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return bad(format!("l2 weight must be >= 0, got {}", self.l2_weight));
        }
        if !(0.0..1.0).contains(&self.eps_ball) {
            return bad(format!("eps_ball must be in [0, 1), got {}", self.eps_ball));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    /// Apply keys from a config file on top of `self`.
    pub fn apply(&mut self, kv: &KvFile) -> Result<()> {
        for key in kv.keys() {
            let v = kv.get_str(key).unwrap_or_default();
            match key {
                "variant" => self.variant = v.parse()?,
                "k" | "directions" => kv.set(key, &mut self.directions)?,
                "lr" | "learning_rate" => kv.set(key, &mut self.learning_rate)?,
                "epochs" => kv.set(key, &mut self.epochs)?,
                "batch" | "batch_size" => kv.set(key, &mut self.batch_size)?,
                "seed" => kv.set(key, &mut self.seed)?,
                "use_orth" => self.use_orth = parse_bool(v)?,
                "use_ratio" => self.use_ratio = parse_bool(v)?,
                "l2" | "l2_weight" => kv.set(key, &mut self.l2_weight)?,
                "distance" => self.distance = v.parse()?,
                "init" => self.init = v.parse()?,
                "k_shot" => self.k_shot = Some(v.parse().map_err(|_| Error::Config(format!("k_shot: {v:?}")))?),
                "eps_ball" => kv.set(key, &mut self.eps_ball)?,
                "freeze_verbalizer" => self.freeze_verbalizer = parse_bool(v)?,
                "verbalizer" => self.verbalizer = Some(load_embeddings(Path::new(v))?),
                "metric_weight" => kv.set(key, &mut self.metric_weight)?,
                "orth_weight" => kv.set(key, &mut self.orth_weight)?,
                "ratio_weight" => kv.set(key, &mut self.ratio_weight)?,
                "workers" => kv.set(key, &mut self.workers)?,
                other => return Err(Error::Config(format!("unknown train key {other:?}"))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Epoch means of each loss term.
    pub history: Vec<LossBreakdown>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    /// Spectrum of the calibrated holdout representations.
    pub spectrum: Option<SpectrumReport>,
    pub train_size: usize,
    pub holdout_size: usize,
    pub seconds: f64,
}

impl TrainReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.num("weighted_f1", self.weighted_f1)
            .num("accuracy", self.accuracy)
            .int("train_size", self.train_size)
            .int("holdout_size", self.holdout_size)
            .int("epochs", self.history.len())
            .num("seconds", self.seconds);
        if let Some(last) = self.history.last() {
            r.num("final_total", last.total)
                .num("final_cls", last.cls)
                .num("final_metric", last.metric)
                .num("final_orth", last.orth)
                .num("final_ratio", last.ratio)
                .num("final_l2", last.l2);
        }
        if let Some(s) = &self.spectrum {
            for (k, v) in s.to_report().render().lines().filter_map(|l| l.split_once(" = ")) {
                r.text(format!("holdout.{k}"), v);
            }
        }
        for (i, b) in self.history.iter().enumerate() {
            r.num(format!("epoch.{:04}.total", i + 1), b.total);
        }
        r
    }
}

/// Weighted F1: per-class F1 averaged with weights proportional to gold
/// support. Classes with zero precision+recall contribute 0.
pub fn weighted_f1(gold: &[usize], pred: &[usize], num_classes: usize) -> f64 {
    assert_eq!(gold.len(), pred.len());
    if gold.is_empty() {
        return 0.0;
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        support[g] += 1;
        pred_count[p] += 1;
        if g == p {
            tp[g] += 1;
        }
    }
    let n = gold.len() as f64;
    (0..num_classes)
        .filter(|&c| support[c] > 0)
        .map(|c| {
            let precision = if pred_count[c] == 0 { 0.0 } else { tp[c] as f64 / pred_count[c] as f64 };
            let recall = tp[c] as f64 / support[c] as f64;
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            support[c] as f64 / n * f1
        })
        .sum()
}

pub fn evaluate(head: &CalibrationHead, dataset: &LabeledDataset) -> Result<Evaluation> {
    if dataset.dim() != head.dim() {
        return Err(Error::Consistency(format!(
            "dataset dimension {} differs from head dimension {}",
            dataset.dim(),
            head.dim()
        )));
    }
    if dataset.num_fine() > head.num_fine() {
        return Err(Error::Consistency(format!(
            "dataset has {} fine classes, head predicts {}",
            dataset.num_fine(),
            head.num_fine()
        )));
    }
    let predictions = dataset
        .embeddings()
        .iter_rows()
        .map(|x| head.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let gold = dataset.fine_labels();
    let correct = gold.iter().zip(&predictions).filter(|(g, p)| g == p).count();
    Ok(Evaluation {
        weighted_f1: weighted_f1(gold, &predictions, head.num_fine()),
        accuracy: correct as f64 / gold.len() as f64,
        predictions,
    })
}

/// Train/holdout split implied by the config.
pub fn split(config: &TrainConfig, dataset: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    match config.k_shot {
        Some(k) => sample_k_shot(dataset, k, config.seed),
        None => Ok((dataset.clone(), dataset.clone())),
    }
}

/// Parameters before the first update. Every variant draws the same head
/// and anchors for a given seed.
pub fn init_model(
    config: &TrainConfig,
    dataset: &LabeledDataset,
) -> Result<(CalibrationHead, AnchorSet, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = CalibrationHead::init(
        config.directions,
        dataset.dim(),
        dataset.num_fine(),
        config.init,
        &mut rng,
    )?;
    head.mode = config.variant.head_mode();
    if let Some(v) = &config.verbalizer {
        if v.shape() != head.verbalizer.shape() {
            return Err(Error::Consistency(format!(
                "verbalizer is {}x{}, expected {}x{}",
                v.rows(),
                v.cols(),
                dataset.num_fine(),
                dataset.dim()
            )));
        }
        head.verbalizer = v.clone();
    }
    let anchors = AnchorSet::init(dataset.num_coarse(), dataset.dim(), config.eps_ball, &mut rng);
    Ok((head, anchors, rng))
}

pub struct TrainedModel {
    pub head: CalibrationHead,
    pub anchors: AnchorSet,
    pub report: TrainReport,
}

pub fn train(config: &TrainConfig, dataset: &LabeledDataset) -> Result<TrainedModel> {
    config.validate()?;
    let started = Instant::now();
    let (train_set, holdout) = split(config, dataset)?;
    let (mut head, mut anchors, mut rng) = init_model(config, dataset)?;
    let obj = config.objective();

    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::Argument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    // rotation, scaling, ratio_bias, decoder, decoder_bias, verbalizer, anchors
    let calibrated = head.mode == HeadMode::Calibrated;
    let active = [
        calibrated,
        calibrated,
        calibrated,
        calibrated,
        calibrated,
        !config.freeze_verbalizer,
        obj.metric != 0.0,
    ];
    let mut sizes: Vec<usize> = head.tensors().iter().map(|t| t.len()).collect();
    sizes.push(anchors.anchors().as_slice().len());
    let mut adam = Adam::new(config.learning_rate, &sizes);

    let x = train_set.embeddings();
    let fine = train_set.fine_labels();
    let coarse = train_set.coarse_labels();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut batches = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| Sample {
                    x: x.row(i),
                    fine: fine[i],
                    coarse: coarse[i],
                })
                .collect();
            let (loss, grad) = grad_all(&head, Some(&anchors), &batch, &obj, pool.as_ref())?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("non-finite loss {loss:?}"),
                });
            }
            batches.push(loss);

            let grads_head = grad.head.tensors();
            let mut grads: Vec<&[f64]> = grads_head.to_vec();
            grads.push(grad.anchors.as_slice());
            let mut params: Vec<&mut [f64]> = head.tensors_mut().into_iter().collect();
            params.push(anchors.anchors_mut().as_mut_slice());
            adam.step(&mut params, &grads, &active);
            anchors.retract_in_place();
        }
        let mean = LossBreakdown::mean(&batches, &obj);
        if !head.is_finite() {
            return Err(Error::Training {
                epoch,
                detail: "non-finite parameters".into(),
            });
        }
        history.push(mean);
    }

    let eval = evaluate(&head, &holdout)?;
    let spectrum = if holdout.len() >= 2 {
        spectrum_stats(&head.represent_all(holdout.embeddings())?).ok()
    } else {
        None
    };
    Ok(TrainedModel {
        head,
        anchors,
        report: TrainReport {
            history,
            weighted_f1: eval.weighted_f1,
            accuracy: eval.accuracy,
            spectrum,
            train_size: train_set.len(),
            holdout_size: holdout.len(),
            seconds: started.elapsed().as_secs_f64(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: &'static str,
    pub weighted_f1: f64,
}

pub const ABLATION_SETTINGS: [&str; 5] = ["full", "w/o L_orth", "w/o L_t", "w/o l2", "w/o all"];

/// Retrain the full model with each loss term removed in turn.
pub fn run_ablation(config: &TrainConfig, dataset: &LabeledDataset) -> Result<Vec<AblationRow>> {
    if config.variant != Variant::Full {
        return Err(Error::Config("ablation runs on the full variant".into()));
    }
    ABLATION_SETTINGS
        .iter()
        .map(|&setting| {
            let mut c = config.clone();
            match setting {
                "w/o L_orth" => c.use_orth = false,
                "w/o L_t" => c.use_ratio = false,
                "w/o l2" => c.l2_weight = 0.0,
                "w/o all" => {
                    c.use_orth = false;
                    c.use_ratio = false;
                    c.l2_weight = 0.0;
                }
                _ => {}
            }
            let model = train(&c, dataset)?;
            Ok(AblationRow {
                setting,
                weighted_f1: model.report.weighted_f1,
            })
        })
        .collect()
}

pub fn ablation_report(rows: &[AblationRow]) -> Report {
    let mut r = Report::new();
    for row in rows {
        let key = row.setting.replace("w/o ", "without_").replace(' ', "_");
        r.num(key, row.weighted_f1);
    }
    r
}

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tara_calib::config::KvFile;
use tara_calib::diagnostics::jacobi_svd;
use tara_calib::hyperbolic::project_to_ball;
use tara_calib::matrix::norm;
use tara_calib::objective::loss_all;
use tara_calib::store::{generate_narrow_cone, LabeledDataset, SyntheticConfig};
use tara_calib::{
    grad_all, AnchorSet, CalibrationHead, DistanceKind, HeadMode, Matrix, Objective, Sample, TrainConfig,
};

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn pinned_synth() -> SyntheticConfig {
    let mut c = SyntheticConfig::default();
    c.apply(&KvFile::read(&configs_dir().join("synth.kv")).unwrap()).unwrap();
    c
}

pub fn pinned_train() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.apply(&KvFile::read(&configs_dir().join("train.kv")).unwrap()).unwrap();
    c
}

pub fn pinned_dataset() -> LabeledDataset {
    generate_narrow_cone(&pinned_synth()).unwrap()
}

pub fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    // Box-Muller keeps the helper independent of the library's sampler
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| gauss(rng, sd))
}

/// One small random problem for gradient checking.
pub struct Instance {
    pub head: CalibrationHead,
    pub anchors: AnchorSet,
    pub xs: Vec<Vec<f64>>,
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
}

impl Instance {
    pub fn random(seed: u64, mode: HeadMode) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let d = rng.random_range(2..=8);
            let k = rng.random_range(2..=4);
            let f = rng.random_range(2..=5);
            let c = rng.random_range(1..=3.min(f));
            let n = rng.random_range(1..=4);
            // decoder scale decides whether h lands inside the ball or gets clipped
            let u_sd = if rng.random_bool(0.5) { 0.3 } else { 1.5 };
            let head = CalibrationHead::from_parts(
                mode,
                random_matrix(&mut rng, k, d, 0.7),
                random_matrix(&mut rng, k, d, 0.7),
                (0..k).map(|_| gauss(&mut rng, 0.3)).collect(),
                random_matrix(&mut rng, k, d, u_sd),
                (0..d).map(|_| gauss(&mut rng, 0.1)).collect(),
                random_matrix(&mut rng, f, d, 0.7),
            )
            .unwrap();
            let anchors = AnchorSet::new(
                Matrix::from_fn(c, d, |_, _| rng.random_range(-0.8..0.8) / (d as f64).sqrt()),
                1e-5,
            )
            .unwrap();
            let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| gauss(&mut rng, 1.0)).collect()).collect();
            let fine: Vec<usize> = (0..n).map(|_| rng.random_range(0..f)).collect();
            let coarse: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let inst = Instance { head, anchors, xs, fine, coarse };
            if inst.away_from_kinks() {
                return inst;
            }
        }
    }

    /// Finite differences are meaningless across the clipping radius or at
    /// a zero distance, so such draws are rejected.
    fn away_from_kinks(&self) -> bool {
        let radius = 1.0 - self.anchors.eps_ball();
        self.xs.iter().all(|x| {
            let h = self.head.represent(x).unwrap();
            let p = project_to_ball(&h, self.anchors.eps_ball());
            (norm(&h) - radius).abs() > 1e-3
                && self.anchors.anchors().iter_rows().all(|z| {
                    let diff: Vec<f64> = p.iter().zip(z).map(|(a, b)| a - b).collect();
                    let e: Vec<f64> = h.iter().zip(z).map(|(a, b)| a - b).collect();
                    norm(&diff) > 1e-3 && norm(&e) > 1e-3
                })
        })
    }

    pub fn batch(&self) -> Vec<Sample<'_>> {
        self.xs
            .iter()
            .zip(&self.fine)
            .zip(&self.coarse)
            .map(|((x, &fine), &coarse)| Sample { x, fine, coarse })
            .collect()
    }
}

pub const TENSOR_NAMES: [&str; 7] = [
    "rotation",
    "scaling",
    "ratio_bias",
    "decoder",
    "decoder_bias",
    "verbalizer",
    "anchors",
];

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` per tensor between the
/// analytic gradient and central differences of `loss_all`. Tensors the
/// loss does not touch give 0/0 and are reported as 0.
pub fn gradient_errors(inst: &Instance, obj: &Objective, step: f64) -> Vec<(&'static str, f64)> {
    let batch = inst.batch();
    let (_, grad) = grad_all(&inst.head, Some(&inst.anchors), &batch, obj, None).unwrap();
    let mut analytic: Vec<Vec<f64>> = grad.head.tensors().iter().map(|t| t.to_vec()).collect();
    analytic.push(grad.anchors.as_slice().to_vec());

    let total = |head: &CalibrationHead, anchors: &AnchorSet| {
        loss_all(head, Some(anchors), &batch, obj).unwrap().total
    };

    let mut out = Vec::new();
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let len = analytic[t].len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| {
                if t < 6 {
                    let mut h = inst.head.clone();
                    h.tensors_mut()[t][i] += delta;
                    total(&h, &inst.anchors)
                } else {
                    let mut m = inst.anchors.anchors().clone();
                    m.as_mut_slice()[i] += delta;
                    total(&inst.head, &AnchorSet::new(m, inst.anchors.eps_ball()).unwrap())
                }
            };
            *slot = (eval(step) - eval(-step)) / (2.0 * step);
        }
        let diff: Vec<f64> = analytic[t].iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic[t]).max(norm(&numeric));
        let err = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        out.push((*name, err));
    }
    out
}

pub fn term_objective(term: &str) -> Objective {
    let zero = Objective {
        cls: 0.0,
        ..Objective::default()
    };
    match term {
        "cls" => Objective { cls: 1.0, ..zero },
        "orth" => Objective { orth: 1.0, ..zero },
        "ratio" => Objective { ratio: 1.0, ..zero },
        "l2" => Objective { l2: 1.0, metric: 1e-300, ..zero },
        "metric-hyperbolic" => Objective {
            metric: 1.0,
            distance: DistanceKind::Hyperbolic,
            ..zero
        },
        "metric-euclidean" => Objective {
            metric: 1.0,
            distance: DistanceKind::Euclidean,
            ..zero
        },
        other => panic!("unknown term {other}"),
    }
}

pub const TERMS: [&str; 5] = ["cls", "orth", "ratio", "metric-hyperbolic", "metric-euclidean"];

/// Symmetric eigenvalues by classical cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = a.iter_rows().map(|r| r.to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

/// Singular values from the eigenvalues of the smaller Gram matrix.
pub fn oracle_singular_values(a: &Matrix) -> Vec<f64> {
    let gram = if a.rows() >= a.cols() {
        a.transpose().matmul(a)
    } else {
        a.matmul(&a.transpose())
    };
    symmetric_eigenvalues(&gram).into_iter().map(|e| e.max(0.0).sqrt()).collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Largest singular-value deviation from the Gram-matrix oracle and the
/// relative reconstruction residual.
pub fn svd_errors(a: &Matrix) -> (f64, f64) {
    let svd = jacobi_svd(a);
    let oracle = oracle_singular_values(a);
    assert_eq!(svd.singular_values.len(), a.rows().min(a.cols()));
    let dev = svd
        .singular_values
        .iter()
        .zip(&oracle)
        .map(|(s, o)| (s - o).abs())
        .fold(0.0, f64::max);
    let r = svd.reconstruct();
    let resid = a
        .as_slice()
        .iter()
        .zip(r.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    (dev, resid / a.frobenius_norm())
}

/// Adam on `L_orth` alone from a Gaussian start. Returns the number of steps
/// taken until the loss drops below `target` (or `max_steps`) and the final
/// loss.
pub fn orth_descent(k: usize, d: usize, lr: f64, target: f64, max_steps: usize, seed: u64) -> (usize, f64) {
    use tara_calib::optim::Adam;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = CalibrationHead::init(k, d, 2, tara_calib::InitScheme::Gaussian, &mut rng).unwrap();
    let obj = Objective {
        cls: 0.0,
        orth: 1.0,
        ..Objective::default()
    };
    let x = vec![0.0; d];
    let batch = [Sample { x: &x, fine: 0, coarse: 0 }];
    let sizes: Vec<usize> = head.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(lr, &sizes);
    let active = [true, false, false, false, false, false];
    let mut loss = head.orth_loss();
    let mut steps = 0;
    while loss >= target && steps < max_steps {
        let (_, g) = grad_all(&head, None, &batch, &obj, None).unwrap();
        let grads = g.head.tensors();
        let mut params: Vec<&mut [f64]> = head.tensors_mut().into_iter().collect();
        adam.step(&mut params, &grads, &active);
        steps += 1;
        loss = head.orth_loss();
    }
    (steps, loss)
}

/// Two fine classes on opposite sides of the origin, one coarse class each.
pub fn separable_dataset() -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut rows = Vec::new();
    let mut fine = Vec::new();
    for class in 0..2 {
        let sign = if class == 0 { 1.0 } else { -1.0 };
        for _ in 0..40 {
            let mut r: Vec<f64> = (0..4).map(|_| gauss(&mut rng, 0.3)).collect();
            r[0] += 3.0 * sign;
            rows.push(r);
            fine.push(class);
        }
    }
    LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), fine, vec![0, 1]).unwrap()
}

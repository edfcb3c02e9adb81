//! Narrow-cone generator.
//!
//! Every sample is `a·μ + coarse_center(c) + fine_offset(f) + ε`: a large
//! shared component along one unit axis `μ`, small class offsets orthogonal
//! to `μ`, and isotropic noise. The rows occupy a thin cone around `μ`, so
//! their pairwise cosine similarity is high and the singular spectrum is
//! dominated by its first value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::KvFile;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::store::LabeledDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub d: usize,
    pub num_coarse: usize,
    pub num_fine: usize,
    pub per_class: usize,
    /// Mean magnitude along the shared axis.
    pub cone_axis_scale: f64,
    /// Log-normal spread of the axis magnitude.
    pub axis_spread: f64,
    /// Expected Euclidean norm of the isotropic noise vector.
    pub cone_noise: f64,
    /// Norm of each coarse-class center offset.
    pub coarse_sep: f64,
    /// Norm of each fine-class offset.
    pub fine_sep: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            d: 64,
            num_coarse: 3,
            num_fine: 6,
            per_class: 100,
            cone_axis_scale: 4.0,
            axis_spread: 0.1,
            cone_noise: 0.2,
            coarse_sep: 0.8,
            fine_sep: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if self.num_coarse == 0 || self.num_fine < self.num_coarse {
            return bad("need num_fine >= num_coarse >= 1");
        }
        if !self.num_fine.is_multiple_of(self.num_coarse) {
            return bad("num_fine must be a multiple of num_coarse");
        }
        if self.per_class == 0 {
            return bad("per_class must be at least 1");
        }
        for (name, v) in [
            ("cone_axis_scale", self.cone_axis_scale),
            ("axis_spread", self.axis_spread),
            ("cone_noise", self.cone_noise),
            ("coarse_sep", self.coarse_sep),
            ("fine_sep", self.fine_sep),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Apply keys from a config file on top of `self`.
    pub fn apply(&mut self, kv: &KvFile) -> Result<()> {
        for key in kv.keys() {
            match key {
                "d" => kv.set(key, &mut self.d)?,
                "num_coarse" | "C" => kv.set(key, &mut self.num_coarse)?,
                "num_fine" | "F" => kv.set(key, &mut self.num_fine)?,
                "per_class" => kv.set(key, &mut self.per_class)?,
                "cone_axis_scale" => kv.set(key, &mut self.cone_axis_scale)?,
                "axis_spread" => kv.set(key, &mut self.axis_spread)?,
                "cone_noise" => kv.set(key, &mut self.cone_noise)?,
                "coarse_sep" => kv.set(key, &mut self.coarse_sep)?,
                "fine_sep" => kv.set(key, &mut self.fine_sep)?,
                "seed" => kv.set(key, &mut self.seed)?,
                other => return Err(Error::Config(format!("unknown synth key {other:?}"))),
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random direction orthogonal to the unit `axis`, scaled to `len`.
fn orthogonal_offset(rng: &mut ChaCha8Rng, axis: &[f64], len: f64) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, axis.len());
        let p = dot(&v, axis);
        v.iter_mut().zip(axis).for_each(|(x, a)| *x -= p * a);
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x * len / n).collect();
        }
    }
}

pub fn generate_narrow_cone(config: &SyntheticConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let d = config.d;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut axis = gaussian_vec(&mut rng, d);
    let n = norm(&axis);
    axis.iter_mut().for_each(|x| *x /= n);

    let coarse_centers: Vec<Vec<f64>> = (0..config.num_coarse)
        .map(|_| orthogonal_offset(&mut rng, &axis, config.coarse_sep))
        .collect();
    let fine_offsets: Vec<Vec<f64>> = (0..config.num_fine)
        .map(|_| orthogonal_offset(&mut rng, &axis, config.fine_sep))
        .collect();

    let fine_per_coarse = config.num_fine / config.num_coarse;
    let fine_to_coarse: Vec<usize> = (0..config.num_fine).map(|f| f / fine_per_coarse).collect();
    let noise_sd = config.cone_noise / (d as f64).sqrt();

    let total = config.num_fine * config.per_class;
    let mut data = Vec::with_capacity(total * d);
    let mut fine = Vec::with_capacity(total);
    for f in 0..config.num_fine {
        let center = &coarse_centers[fine_to_coarse[f]];
        let offset = &fine_offsets[f];
        for _ in 0..config.per_class {
            let z: f64 = rng.sample(StandardNormal);
            let a = config.cone_axis_scale * (config.axis_spread * z).exp();
            for i in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let v = a * axis[i] + center[i] + offset[i] + noise_sd * e;
                // stored at float32 precision so the EMB1 round-trip is exact
                data.push(v as f32 as f64);
            }
            fine.push(f);
        }
    }
    LabeledDataset::new(Matrix::new(total, d, data)?, fine, fine_to_coarse)
}

//! One-sided (Hestenes) Jacobi SVD.
//!
//! Columns of the working copy are rotated pairwise until every pair is
//! orthogonal to within `TOL` relative to the product of their norms. The
//! column norms are then the singular values and the accumulated rotations
//! form `V`.

use crate::matrix::Matrix;

const TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U Σ Vᵀ` with `r = min(n, d)`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// n × r
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    /// d × r
    pub v: Matrix,
    pub sweeps: usize,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let (n, r) = self.u.shape();
        let d = self.v.rows();
        Matrix::from_fn(n, d, |i, j| {
            (0..r)
                .map(|k| self.u[(i, k)] * self.singular_values[k] * self.v[(j, k)])
                .sum()
        })
    }
}

pub fn jacobi_svd(a: &Matrix) -> Svd {
    if a.rows() < a.cols() {
        let t = jacobi_svd(&a.transpose());
        return Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
            sweeps: t.sweeps,
        };
    }
    let (n, d) = a.shape();

    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| a[(i, j)]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u = Matrix::zeros(n, d);
    let mut v = Matrix::zeros(d, d);
    let mut singular_values = Vec::with_capacity(d);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        singular_values.push(s);
        if s > 0.0 {
            for i in 0..n {
                u[(i, k)] = cols[j][i] / s;
            }
        }
        for i in 0..d {
            v[(i, k)] = vcols[j][i];
        }
    }
    Svd {
        u,
        singular_values,
        v,
        sweeps,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

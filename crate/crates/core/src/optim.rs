//! Adam over a fixed list of parameter tensors.

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Tensors with `active[i] == false` are left untouched and
    /// their moments are not advanced.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], active: &[bool]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            if !active[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), mi), vi) in params[i].iter_mut().zip(grads[i]).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is lr·sign(g)
        let mut adam = Adam::new(0.1, &[2]);
        let mut p = vec![1.0, 1.0];
        adam.step(&mut [&mut p], &[&[3.0, -0.5]], &[true]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] - 1.1).abs() < 1e-7);
    }

    #[test]
    fn inactive_untouched() {
        let mut adam = Adam::new(0.1, &[1, 1]);
        let (mut a, mut b) = (vec![1.0], vec![1.0]);
        adam.step(&mut [&mut a, &mut b], &[&[1.0], &[1.0]], &[true, false]);
        assert_eq!(b, vec![1.0]);
        assert!(a[0] < 1.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(0.05, &[1]);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 2.0);
            adam.step(&mut [&mut p], &[&[g]], &[true]);
        }
        assert!((p[0] - 2.0).abs() < 1e-3);
    }
}

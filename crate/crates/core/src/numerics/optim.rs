use std::collections::HashMap;

use super::param::ParamSet;

/// Adam with bias-corrected moments.
///
/// Parameters with `trainable = false` are skipped entirely, so their
/// values stay bitwise identical however many steps are taken. A trainable
/// parameter without an accumulated gradient is also skipped for that step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Applies one update from the gradients stored on each parameter and
    /// clears them.
    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let moments = &mut self.moments;
        params.visit_mut(&mut |p| {
            if !p.trainable {
                p.value.zero_grad();
                return;
            }
            let Some(g) = p.value.take_grad() else { return };
            let (m, v) = moments.entry(p.name.clone()).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Parameter, Tensor};

    fn scalar_param(v: f64) -> Vec<Parameter> {
        vec![Parameter::new("w", Tensor::vector(vec![v]).unwrap(), true)]
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = scalar_param(1.5);
        let mut opt = Adam::new(0.1);
        p[0].value.accumulate_grad(&[0.0]).unwrap();
        opt.step(&mut p);
        assert_eq!(p[0].value.data()[0], 1.5);
        let (m, v) = opt.moments("w").unwrap();
        assert_eq!((m[0], v[0]), (0.0, 0.0));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02] {
            let mut p = scalar_param(0.0);
            let mut opt = Adam::new(1e-3);
            p[0].value.accumulate_grad(&[g]).unwrap();
            opt.step(&mut p);
            let want = -1e-3 * f64::signum(g);
            assert!((p[0].value.data()[0] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_reference() {
        // f(w) = (w - 2)^2, gradient 2(w - 2)
        let lr = 0.05;
        let mut p = scalar_param(-1.0);
        let mut opt = Adam::new(lr);
        let (mut w, mut m, mut v) = (-1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * (p[0].value.data()[0] - 2.0);
            p[0].value.accumulate_grad(&[g]).unwrap();
            opt.step(&mut p);

            let gr = 2.0 * (w - 2.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((p[0].value.data()[0] - w).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_parameters_are_bitwise_constant() {
        let mut p = vec![
            Parameter::new("frozen", Tensor::vector(vec![0.1, -0.3]).unwrap(), false),
            Parameter::new("live", Tensor::vector(vec![0.1]).unwrap(), true),
        ];
        let before = p[0].value.clone();
        let mut opt = Adam::new(0.5);
        for _ in 0..100 {
            p[0].value.accumulate_grad(&[1.0, 1.0]).unwrap();
            p[1].value.accumulate_grad(&[1.0]).unwrap();
            opt.step(&mut p);
        }
        assert_eq!(
            p[0].value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            before.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(p[1].value.data()[0] < 0.0);
    }
}

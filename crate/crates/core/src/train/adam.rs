use crate::model::UpdateRule;
use crate::train::Gradients;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: [Vec<f32>; 3],
    v: [Vec<f32>; 3],
}

impl AdamState {
    pub fn new(rule: &UpdateRule) -> Self {
        let zeros = || {
            [
                vec![0.0; rule.w1().len()],
                vec![0.0; rule.b1().len()],
                vec![0.0; rule.w2().len()],
            ]
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `rule` in place.
    pub fn step(&mut self, rule: &mut UpdateRule, grads: &Gradients, lr: f32) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps as f64);
        for (((param, g), m), v) in rule
            .params_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..param.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] as f64 / bc1;
                let v_hat = v[i] as f64 / bc2;
                param[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rule() -> UpdateRule {
        UpdateRule::init(&mut ChaCha8Rng::seed_from_u64(1), 4).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut r = rule();
        let before = r.clone();
        let mut opt = AdamState::new(&r);
        let zero = Gradients::zeros_like(&r);
        opt.step(&mut r, &zero, 1e-2);
        assert_eq!(r, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut r = rule();
        let before = r.clone();
        let mut g = Gradients::zeros_like(&r);
        for (i, v) in g.w1.iter_mut().enumerate() {
            *v = if i % 3 == 0 { 0.5 } else { -2.0 };
        }
        let mut opt = AdamState::new(&r);
        opt.step(&mut r, &g, 1e-3);
        for ((&a, &b), &gi) in r.w1().iter().zip(before.w1()).zip(&g.w1) {
            let expected = -1e-3 * gi.signum();
            assert!(((a - b) - expected).abs() < 1e-6, "{} vs {}", a - b, expected);
        }
    }

    /// Scalar Adam on f(x) = ‖x‖², written independently of the optimizer above.
    fn reference_adam(x0: [f64; 2], lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, [0.0; 2], [0.0; 2]);
        let mut values = Vec::new();
        for t in 1..=steps {
            for i in 0..2 {
                let g = 2.0 * x[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / (1.0 - b1.powi(t as i32));
                let vh = v[i] / (1.0 - b2.powi(t as i32));
                x[i] -= lr * mh / (vh.sqrt() + eps);
            }
            values.push(x[0] * x[0] + x[1] * x[1]);
        }
        values
    }

    #[test]
    fn descends_quadratic_bowl_like_reference() {
        let x0 = [1.5f32, -0.8f32];
        let reference = reference_adam([x0[0] as f64, x0[1] as f64], 0.01, 100);
        for w in reference[10..].windows(2) {
            assert!(w[1] < w[0]);
        }

        // Drive the production optimizer with the bowl's gradient on two b1 entries.
        let mut r = UpdateRule::from_parts(1, vec![0.0; 48], vec![x0[0]], vec![0.0; 16], 0.5, 0.1).unwrap();
        let mut opt = AdamState::new(&r);
        let mut aux = vec![x0[1]];
        let mut aux_rule = UpdateRule::from_parts(1, vec![0.0; 48], aux.clone(), vec![0.0; 16], 0.5, 0.1).unwrap();
        let mut aux_opt = AdamState::new(&aux_rule);
        let mut values = Vec::new();
        for _ in 0..100 {
            let mut g = Gradients::zeros_like(&r);
            g.b1[0] = 2.0 * r.b1()[0];
            opt.step(&mut r, &g, 0.01);
            let mut ga = Gradients::zeros_like(&aux_rule);
            ga.b1[0] = 2.0 * aux_rule.b1()[0];
            aux_opt.step(&mut aux_rule, &ga, 0.01);
            aux[0] = aux_rule.b1()[0];
            values.push((r.b1()[0] as f64).powi(2) + (aux[0] as f64).powi(2));
        }
        for (got, want) in values.iter().zip(&reference) {
            assert!((got - want).abs() < 1e-4 * want.max(1e-3), "{got} vs {want}");
        }
        for w in values[10..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}

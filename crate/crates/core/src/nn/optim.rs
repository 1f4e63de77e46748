//! SGD with classical momentum and coupled weight decay, plus a piecewise
//! learning-rate schedule (initial rate divided at milestone epochs).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Model;

/// Momentum buffers and optimizer hyperparameters. One velocity tensor per
/// parameter tensor, in [`Model::param_tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
}

impl OptimizerState {
    pub fn new(model: &Model, momentum: f64, weight_decay: f64, learning_rate: f64) -> Self {
        let velocity = model
            .param_tensors()
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        OptimizerState {
            velocity,
            momentum,
            weight_decay,
            learning_rate,
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Replace the momentum buffers (checkpoint restore). Shapes must match.
    pub fn set_velocity(&mut self, velocity: Vec<Tensor>) -> Result<()> {
        if velocity.len() != self.velocity.len() {
            return Err(Error::config("velocity buffer count mismatch"));
        }
        for (new, old) in velocity.iter().zip(&self.velocity) {
            if new.shape() != old.shape() {
                return Err(Error::config("velocity buffer shape mismatch"));
            }
        }
        self.velocity = velocity;
        Ok(())
    }
}

/// One update: `v <- mu * v + (g + wd * theta)`, then `theta <- theta - eta * v`.
pub fn sgd_step(model: &mut Model, grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    let mut params = model.param_tensors_mut();
    if grads.len() != params.len() {
        return Err(Error::config(format!(
            "{} gradient tensors for {} parameter tensors",
            grads.len(),
            params.len()
        )));
    }
    for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if grad.shape() != param.shape() {
            return Err(Error::config("gradient shape mismatch"));
        }
        let mu = state.momentum;
        let wd = state.weight_decay;
        let eta = state.learning_rate;
        for ((p, g), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(vel.data_mut())
        {
            *v = mu * *v + (*g + wd * *p);
            *p -= eta * *v;
        }
        param.assert_finite("sgd_step");
    }
    Ok(())
}

/// Initial learning rate divided by every milestone divisor whose epoch has
/// been reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    /// `(epoch, divisor)` pairs, strictly increasing in epoch.
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(initial: f64, milestones: Vec<(usize, f64)>) -> Result<Self> {
        if !(initial.is_finite() && initial > 0.0) {
            return Err(Error::config("initial learning rate must be positive"));
        }
        for pair in milestones.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::config("milestones must strictly increase in epoch"));
            }
        }
        if let Some((e, d)) = milestones.iter().find(|(_, d)| !(*d > 1.0)) {
            return Err(Error::config(format!(
                "milestone divisor {d} at epoch {e} must exceed 1"
            )));
        }
        Ok(LrSchedule {
            initial,
            milestones,
        })
    }

    pub fn constant(initial: f64) -> Self {
        LrSchedule {
            initial,
            milestones: Vec::new(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.initial;
        for &(milestone, divisor) in &self.milestones {
            if milestone <= epoch {
                lr /= divisor;
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::rng::XorShiftRng;

    fn scalar_model(w: f64) -> Model {
        // 1-in 2-out dense; only the first weight is exercised.
        Model::from_params(
            &[LayerSpec::Dense {
                inputs: 1,
                outputs: 2,
            }],
            &[
                Tensor::new(vec![2, 1], vec![w, 0.0]).unwrap(),
                Tensor::zeros(vec![2]),
            ],
        )
        .unwrap()
    }

    fn grads_like(model: &Model, g: f64) -> Vec<Tensor> {
        model
            .param_tensors()
            .iter()
            .map(|p| {
                Tensor::new(p.shape().to_vec(), vec![g; p.len()]).unwrap()
            })
            .collect()
    }

    #[test]
    fn plain_sgd_when_momentum_and_decay_are_zero() {
        let mut model = scalar_model(1.0);
        let mut state = OptimizerState::new(&model, 0.0, 0.0, 0.1);
        let grads = grads_like(&model, 2.0);
        sgd_step(&mut model, &grads, &mut state).unwrap();
        assert_eq!(model.param_tensors()[0].data()[0], 1.0 - 0.1 * 2.0);
    }

    #[test]
    fn zero_gradient_zero_velocity_is_a_fixed_point() {
        let mut model = scalar_model(0.75);
        let before = model.clone();
        let mut state = OptimizerState::new(&model, 0.9, 0.0, 0.1);
        let grads = grads_like(&model, 0.0);
        sgd_step(&mut model, &grads, &mut state).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn two_momentum_steps_match_hand_recurrence() {
        let (mu, wd, eta) = (0.9, 0.01, 0.1);
        let (g1, g2) = (0.5, -0.25);
        let mut theta = 2.0;
        let mut v = 0.0;
        // hand-rolled recurrence
        v = mu * v + (g1 + wd * theta);
        theta -= eta * v;
        v = mu * v + (g2 + wd * theta);
        theta -= eta * v;

        let mut model = scalar_model(2.0);
        let mut state = OptimizerState::new(&model, mu, wd, eta);
        let mut step = |g: f64, model: &mut Model, state: &mut OptimizerState| {
            let mut grads = grads_like(model, 0.0);
            grads[0].data_mut()[0] = g;
            sgd_step(model, &grads, state).unwrap();
        };
        step(g1, &mut model, &mut state);
        step(g2, &mut model, &mut state);
        let got = model.param_tensors()[0].data()[0];
        assert!((got - theta).abs() <= 1e-15, "{got} vs {theta}");
    }

    #[test]
    fn sgd_is_bit_reproducible() {
        let run = || {
            let mut rng = XorShiftRng::new(5);
            let mut model = Model::init(
                &[
                    LayerSpec::Dense {
                        inputs: 3,
                        outputs: 4,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Dense {
                        inputs: 4,
                        outputs: 2,
                    },
                ],
                &mut rng,
            )
            .unwrap();
            let mut state = OptimizerState::new(&model, 0.9, 5e-4, 0.05);
            for step_idx in 0..10 {
                let grads: Vec<Tensor> = model
                    .param_tensors()
                    .iter()
                    .map(|p| {
                        let data: Vec<f64> = (0..p.len())
                            .map(|i| ((i + step_idx) as f64 * 0.01).sin())
                            .collect();
                        Tensor::new(p.shape().to_vec(), data).unwrap()
                    })
                    .collect();
                sgd_step(&mut model, &grads, &mut state).unwrap();
            }
            model
                .param_tensors()
                .iter()
                .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_divides_at_milestones() {
        let s = LrSchedule::new(0.1, vec![(30, 10.0), (60, 10.0)]).unwrap();
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(29), 0.1);
        assert!((s.lr_at(30) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(59) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(60) - 0.001).abs() < 1e-15);
        assert!((s.lr_at(1000) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn schedule_without_milestones_is_constant() {
        let s = LrSchedule::constant(0.05);
        assert_eq!(s.lr_at(0), 0.05);
        assert_eq!(s.lr_at(999), 0.05);
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule::new(0.1, vec![(10, 10.0), (10, 10.0)]).is_err());
        assert!(LrSchedule::new(0.1, vec![(20, 10.0), (10, 10.0)]).is_err());
        assert!(LrSchedule::new(0.1, vec![(10, 1.0)]).is_err());
        assert!(LrSchedule::new(0.0, vec![]).is_err());
    }
}

//! The six first-order optimizers.
//!
//! Constants beyond the learning rate are fixed to their standard defaults:
//! Adam/Nadam beta1=0.9, beta2=0.999, eps=1e-8 with bias correction;
//! Adamax beta1=0.9, beta2=0.999; RMSprop rho=0.9, eps=1e-8 (no momentum,
//! uncentered); Adagrad eps=1e-8; SGD is plain.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;
pub const RMS_RHO: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    RmsProp,
    Adagrad,
    Adamax,
    Nadam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::Adam,
        OptimizerKind::Sgd,
        OptimizerKind::RmsProp,
        OptimizerKind::Adagrad,
        OptimizerKind::Adamax,
        OptimizerKind::Nadam,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adamax => "adamax",
            OptimizerKind::Nadam => "nadam",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam,
            "rmsprop" => OptimizerKind::RmsProp,
            "adagrad" => OptimizerKind::Adagrad,
            "adamax" => OptimizerKind::Adamax,
            "nadam" => OptimizerKind::Nadam,
            other => return Err(Error::config(format!("unknown optimizer `{other}`"))),
        })
    }

    /// Conventional default learning rate when none is specified (the rates
    /// used by evolved genomes, which fix everything but the optimizer name,
    /// epochs and batch size).
    pub fn default_learning_rate(&self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.01,
            OptimizerKind::Adam => 0.001,
            OptimizerKind::RmsProp => 0.001,
            OptimizerKind::Adagrad => 0.01,
            OptimizerKind::Adamax => 0.002,
            OptimizerKind::Nadam => 0.002,
        }
    }
}

/// Per-parameter accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    /// First moment (Adam/Adamax/Nadam) — unused by SGD/RMSprop/Adagrad.
    m: Vec<f64>,
    /// Second moment / squared accumulator / infinity norm, by kind.
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, dims: usize) -> Self {
        let needs_m = matches!(
            kind,
            OptimizerKind::Adam | OptimizerKind::Adamax | OptimizerKind::Nadam
        );
        let needs_v = !matches!(kind, OptimizerKind::Sgd);
        Self {
            kind,
            m: if needs_m { vec![0.0; dims] } else { Vec::new() },
            v: if needs_v { vec![0.0; dims] } else { Vec::new() },
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// The squared-gradient accumulator (second moment / infinity norm,
    /// depending on the optimizer).
    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update in place; increments the step counter.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len()
            || (!self.m.is_empty() && self.m.len() != params.len())
            || (!self.v.is_empty() && self.v.len() != params.len())
        {
            return Err(Error::shape(
                "optimizer state, params and gradient lengths disagree".to_string(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - BETA1.powi(t);
                let bc2 = 1.0 - BETA2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + EPS);
                }
            }
            OptimizerKind::RmsProp => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(self.v.iter_mut()) {
                    *v = RMS_RHO * *v + (1.0 - RMS_RHO) * g * g;
                    *p -= lr * g / (v.sqrt() + EPS);
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(self.v.iter_mut()) {
                    *v += g * g;
                    *p -= lr * g / (v.sqrt() + EPS);
                }
            }
            OptimizerKind::Adamax => {
                let bc1 = 1.0 - BETA1.powi(t);
                for ((p, g), (m, u)) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *u = f64::max(BETA2 * *u, g.abs());
                    *p -= lr / bc1 * *m / (*u + EPS);
                }
            }
            OptimizerKind::Nadam => {
                // Adam with a Nesterov look-ahead on the first moment.
                let bc1 = 1.0 - BETA1.powi(t);
                let bc1_next = 1.0 - BETA1.powi(t + 1);
                let bc2 = 1.0 - BETA2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let mh = BETA1 * *m / bc1_next + (1.0 - BETA1) * g / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut st = OptimizerState::new(OptimizerKind::Adam, 1);
        let mut p = vec![0.0];
        st.apply(&mut p, &[1.0], 0.01).unwrap();
        assert_abs_diff_eq!(p[0], -0.009999999900000002, epsilon = 1e-18);
    }

    #[test]
    fn adam_two_step_recurrence_oracle() {
        let mut st = OptimizerState::new(OptimizerKind::Adam, 2);
        let mut p = vec![0.0, 0.0];
        st.apply(&mut p, &[1.0, 1.0], 0.01).unwrap();
        st.apply(&mut p, &[0.5, 0.5], 0.01).unwrap();
        for &v in &p {
            assert_abs_diff_eq!(v, -0.01932179617018389, epsilon = 1e-16);
        }
        assert_eq!(st.step_count(), 2);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        for kind in OptimizerKind::ALL {
            let mut st = OptimizerState::new(kind, 3);
            let mut p = vec![0.5, -0.25, 1.5];
            // prime the accumulators
            st.apply(&mut p, &[0.1, -0.2, 0.3], 0.01).unwrap();
            let before = p.clone();
            let acc_before = st.second_moment().to_vec();
            st.apply(&mut p, &[0.0, 0.0, 0.0], 0.01).unwrap();
            if kind == OptimizerKind::Adagrad {
                assert_eq!(acc_before, st.second_moment());
            }
            match kind {
                // momentum-style optimizers keep drifting on a zero gradient
                OptimizerKind::Adam | OptimizerKind::Adamax | OptimizerKind::Nadam => {}
                _ => assert_eq!(before, p, "{kind:?} moved on zero gradient"),
            }
        }
    }

    #[test]
    fn adagrad_accumulator_is_non_decreasing() {
        let mut st = OptimizerState::new(OptimizerKind::Adagrad, 2);
        let mut p = vec![0.0, 0.0];
        let mut prev = vec![0.0, 0.0];
        for g in [[0.5, -0.5], [0.0, 0.1], [2.0, 0.0]] {
            st.apply(&mut p, &g, 0.05).unwrap();
            let acc = st.second_moment();
            assert!(acc.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = acc.to_vec();
        }
    }

    #[test]
    fn step_counter_is_monotone() {
        let mut st = OptimizerState::new(OptimizerKind::RmsProp, 1);
        let mut p = vec![0.0];
        for i in 1..=5 {
            st.apply(&mut p, &[0.1], 0.01).unwrap();
            assert_eq!(st.step_count(), i);
        }
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Sgd => write!(f, "sgd"),
            OptimizerKind::Adagrad => write!(f, "adagrad"),
            OptimizerKind::Adam => write!(f, "adam"),
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Mutable optimizer state. Adagrad keeps per-coordinate squared-gradient
/// sums, Adam keeps bias-corrected first/second moments; both are keyed by
/// parameter name so a model's parameter list can be rebuilt between calls.
#[derive(Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    eps: f64,
    beta1: f64,
    beta2: f64,
    step_count: u64,
    accum: HashMap<String, Vec<f64>>,
    moment1: HashMap<String, Vec<f64>>,
    moment2: HashMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            step_count: 0,
            accum: HashMap::new(),
            moment1: HashMap::new(),
            moment2: HashMap::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update to every parameter, folding `l2 * value` into the
    /// gradient first, and zeroes the gradients afterward. Fails fast on a
    /// non-finite gradient, naming the offending parameter.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        self.step_count += 1;
        for param in params.iter_mut() {
            let n = param.len();
            if param.l2 > 0.0 {
                let l2 = param.l2;
                for (g, v) in param.grad.data_mut().iter_mut().zip(param.value.data()) {
                    *g += l2 * v;
                }
            }
            if param.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(param.name.clone()));
            }
            let lr = self.learning_rate;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (v, g) in param.value.data_mut().iter_mut().zip(param.grad.data()) {
                        *v -= lr * g;
                    }
                }
                OptimizerKind::Adagrad => {
                    let acc = self
                        .accum
                        .entry(param.name.clone())
                        .or_insert_with(|| vec![0.0; n]);
                    assert_eq!(acc.len(), n, "adagrad accumulator shape drifted");
                    for ((v, g), a) in param
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(param.grad.data())
                        .zip(acc.iter_mut())
                    {
                        *a += g * g;
                        *v -= lr * g / (*a + self.eps).sqrt();
                    }
                }
                OptimizerKind::Adam => {
                    let m = self
                        .moment1
                        .entry(param.name.clone())
                        .or_insert_with(|| vec![0.0; n]);
                    let v2 = self
                        .moment2
                        .entry(param.name.clone())
                        .or_insert_with(|| vec![0.0; n]);
                    assert_eq!(m.len(), n, "adam moment shape drifted");
                    let t = self.step_count as i32;
                    let bc1 = 1.0 - self.beta1.powi(t);
                    let bc2 = 1.0 - self.beta2.powi(t);
                    for (((val, g), mi), vi) in param
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(param.grad.data())
                        .zip(m.iter_mut())
                        .zip(v2.iter_mut())
                    {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *val -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
            param.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::DenseMatrix;

    fn param(value: f64, l2: f64) -> Param {
        Param::new("p", DenseMatrix::from_vec(1, 1, vec![value]).unwrap(), l2)
    }

    #[test]
    fn sgd_update() {
        let mut p = param(1.0, 0.0);
        *p.grad.at_mut(0, 0) = 2.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value.at(0, 0) - 0.8).abs() < 1e-15);
        assert_eq!(p.grad.at(0, 0), 0.0);
    }

    #[test]
    fn adagrad_first_step_matches_hand_evaluation() {
        // acc = 9, step = 1 * 3 / sqrt(9 + 1e-8) = 0.9999999994...
        let mut p = param(5.0, 0.0);
        *p.grad.at_mut(0, 0) = 3.0;
        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 1.0).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value.at(0, 0) - (5.0 - 0.999_999_999_444_444_4)).abs() < 1e-9);
    }

    #[test]
    fn adagrad_step_magnitudes_non_increasing_under_constant_gradient() {
        let mut p = param(0.0, 0.0);
        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 0.5).unwrap();
        let mut prev_value = 0.0;
        let mut prev_step = f64::INFINITY;
        for _ in 0..20 {
            *p.grad.at_mut(0, 0) = 2.0;
            opt.step(&mut [&mut p]).unwrap();
            let step = (prev_value - p.value.at(0, 0)).abs();
            assert!(step <= prev_step + 1e-15);
            prev_step = step;
            prev_value = p.value.at(0, 0);
        }
    }

    #[test]
    fn adam_first_step_is_roughly_lr_times_sign() {
        // At t=1 the bias corrections cancel the moment scaling, so the
        // update is lr·g/(|g| + ε·correction) ≈ lr·sign(g).
        for &g in &[0.3, -2.0, 11.0] {
            let mut p = param(0.0, 0.0);
            *p.grad.at_mut(0, 0) = g;
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01).unwrap();
            opt.step(&mut [&mut p]).unwrap();
            let delta = -p.value.at(0, 0);
            assert!((delta - 0.01 * g.signum()).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_and_zero_l2_leave_values_unchanged() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adagrad, OptimizerKind::Adam] {
            let mut p = param(1.25, 0.0);
            let mut opt = Optimizer::new(kind, 0.1).unwrap();
            opt.step(&mut [&mut p]).unwrap();
            assert_eq!(p.value.at(0, 0), 1.25, "{kind:?} moved a parameter with zero grad");
        }
    }

    #[test]
    fn l2_is_applied_as_gradient_addend() {
        let mut p = param(2.0, 0.5);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        // grad = 0 + 0.5*2.0 = 1.0 → value = 2.0 - 0.1
        assert!((p.value.at(0, 0) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = param(1.0, 0.0);
        *p.grad.at_mut(0, 0) = f64::NAN;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
        let err = opt.step(&mut [&mut p]).unwrap_err();
        assert!(err.to_string().contains("`p`"), "unexpected error: {err}");
    }

    #[test]
    fn invalid_learning_rate_is_rejected() {
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.0).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, -1.0).is_err());
    }
}

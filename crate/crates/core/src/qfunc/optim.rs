use serde::{Deserialize, Serialize};

use super::QModel;
use crate::error::{Error, Result};

/// Parameter update for gradient *ascent* on the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum UpdateRule {
    Plain { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam(lr: f64) -> Self {
        UpdateRule::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub rule: UpdateRule,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(rule: UpdateRule, param_count: usize) -> Self {
        let moments = matches!(rule, UpdateRule::Adam { .. });
        Optimizer {
            rule,
            m: if moments { vec![0.0; param_count] } else { Vec::new() },
            v: if moments { vec![0.0; param_count] } else { Vec::new() },
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Applies one ascent step. A non-finite gradient leaves the model and the
/// optimizer state untouched.
pub fn apply_gradient(model: &mut QModel, grad: &[f64], opt: &mut Optimizer) -> Result<()> {
    if grad.len() != model.param_count() {
        return Err(Error::Objective(format!(
            "gradient length {} does not match {} parameters",
            grad.len(),
            model.param_count()
        )));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            index,
        });
    }
    opt.t += 1;
    match opt.rule {
        UpdateRule::Plain { lr } => {
            for (p, g) in model.params_mut().iter_mut().zip(grad) {
                *p += lr * g;
            }
        }
        UpdateRule::Adam { lr, beta1, beta2, eps } => {
            let bc1 = 1.0 - beta1.powf(opt.t as f64);
            let bc2 = 1.0 - beta2.powf(opt.t as f64);
            let params = model.params_mut();
            for i in 0..params.len() {
                let g = grad[i];
                let m = &mut opt.m[i];
                let v = &mut opt.v[i];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                params[i] += lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
    }
    if let Some(index) = model.params().iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            what: "parameter",
            index,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qfunc::Grid;

    fn model() -> QModel {
        let mut m = QModel::tabular(Grid::new(2, 0.5), 2);
        for (i, p) in m.params_mut().iter_mut().enumerate() {
            *p = i as f64 * 0.5;
        }
        m
    }

    #[test]
    fn zero_gradient_is_identity() {
        for rule in [UpdateRule::Plain { lr: 0.1 }, UpdateRule::adam(0.1)] {
            let mut m = model();
            let before = m.clone();
            let mut opt = Optimizer::new(rule, m.param_count());
            let zeros = vec![0.0; m.param_count()];
            apply_gradient(&mut m, &zeros, &mut opt).unwrap();
            assert_eq!(m, before);
        }
    }

    #[test]
    fn plain_rule_is_exact_ascent() {
        let mut m = model();
        let before = m.clone();
        let grad: Vec<f64> = (0..m.param_count()).map(|i| i as f64 - 3.0).collect();
        let mut opt = Optimizer::new(UpdateRule::Plain { lr: 0.25 }, m.param_count());
        apply_gradient(&mut m, &grad, &mut opt).unwrap();
        for ((a, b), g) in m.params().iter().zip(before.params()).zip(&grad) {
            assert_eq!(*a, b + 0.25 * g);
        }
    }

    #[test]
    fn adam_step_tends_to_lr_under_constant_gradient() {
        // With g constant, m̂ = g and v̂ = g² after bias correction, so each
        // step is lr·g/(|g| + eps) ≈ lr·sign(g).
        let lr = 1e-3;
        let mut m = model();
        let grad = vec![0.7; m.param_count()];
        let mut opt = Optimizer::new(UpdateRule::adam(lr), m.param_count());
        let mut last = 0.0;
        for _ in 0..200 {
            let before = m.params()[0];
            apply_gradient(&mut m, &grad, &mut opt).unwrap();
            last = m.params()[0] - before;
        }
        let expected = lr * 0.7 / (0.7 + 1e-8);
        assert!((last - expected).abs() < 1e-12, "{last} vs {expected}");
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut m = model();
        let before = m.clone();
        let mut grad = vec![0.0; m.param_count()];
        grad[3] = f64::NAN;
        let mut opt = Optimizer::new(UpdateRule::adam(0.1), m.param_count());
        let err = apply_gradient(&mut m, &grad, &mut opt).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFinite {
                what: "gradient",
                index: 3
            }
        ));
        assert_eq!(m, before);
        assert_eq!(opt.steps(), 0);
    }
}

//! Central-difference verification of analytic gradients.
//!
//! The function under test must be deterministic, so any batch-norm layer it
//! contains has to run in [`Mode::Eval`](crate::ops::Mode::Eval).

pub mod suite;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the parameter holding the worst coordinate.
    pub worst: Option<String>,
    pub params: Vec<ParamCheck>,
    pub coordinates: usize,
}

#[derive(Debug, Clone)]
pub struct GradChecker {
    eps: f64,
    sabotage: Option<String>,
}

impl GradChecker {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Config(format!("finite-difference step must be > 0, got {eps}")));
        }
        Ok(GradChecker { eps, sabotage: None })
    }

    /// Corrupt the backward rule of `op` in the analytic pass.
    pub fn sabotage(mut self, op: impl Into<String>) -> Self {
        self.sabotage = Some(op.into());
        self
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
    where
        F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        let v = tape.value(loss);
        if v.numel() != 1 {
            return Err(Error::shape(format!(
                "gradient check needs a scalar, got {:?}",
                v.shape()
            )));
        }
        Ok(v.item())
    }

    pub fn check<F>(&self, store: &mut ParamStore, f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    {
        let mut tape = match &self.sabotage {
            Some(op) => Tape::with_sabotage(op.clone()),
            None => Tape::new(),
        };
        let loss = f(&mut tape, store)?;
        if !tape.value(loss).is_finite() {
            return Err(Error::Numerical("loss is not finite at the check point".into()));
        }
        let grads = tape.backward(loss)?;
        let mut analytic = store.clone();
        analytic.zero_grad();
        tape.accumulate_param_grads(&grads, &mut analytic);

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            params: Vec::with_capacity(store.len()),
            coordinates: 0,
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let mut worst = 0.0f64;
            for i in 0..store.get(id).value.numel() {
                let orig = store.get(id).value.data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + self.eps;
                let plus = Self::eval(store, &f);
                store.get_mut(id).value.data_mut()[i] = orig - self.eps;
                let minus = Self::eval(store, &f);
                store.get_mut(id).value.data_mut()[i] = orig;
                let (plus, minus) = (plus?, minus?);
                if !(plus.is_finite() && minus.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite loss while perturbing {name}[{i}]"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * self.eps);
                let a = analytic.get(id).gradient.data()[i];
                worst = worst.max(relative_error(a, numeric));
                report.coordinates += 1;
            }
            if report.worst.is_none() || worst > report.max_rel_error {
                report.max_rel_error = worst;
                report.worst = Some(name.clone());
            }
            report.params.push(ParamCheck {
                name,
                max_rel_error: worst,
            });
        }
        Ok(report)
    }
}

/// Check `f` with step `eps`; returns the report whose `max_rel_error` is the
/// maximum over every coordinate of every parameter.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    GradChecker::new(eps)?.check(store, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn square_is_exact() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(3.0)).unwrap();
        let f = |tape: &mut Tape, s: &ParamStore| {
            let t = tape.param(s, id);
            tape.mul(t, t)
        };
        let mut tape = Tape::new();
        let loss = f(&mut tape, &store).unwrap();
        let g = tape.backward(loss).unwrap();
        let mut acc = store.clone();
        tape.accumulate_param_grads(&g, &mut acc);
        assert_eq!(acc.get(id).gradient.item(), 6.0);
        let report = grad_check(&mut store, 1e-5, f).unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        // the store is restored after the check
        assert_eq!(store.get(id).value.item(), 3.0);
    }

    #[test]
    fn sigmoid_sum() {
        let mut store = ParamStore::new();
        let id = store
            .add("theta", Tensor::new(&[4], vec![-1.5, -0.2, 0.3, 1.9]).unwrap())
            .unwrap();
        let report = grad_check(&mut store, 1e-5, |tape, s| {
            let t = tape.param(s, id);
            let y = tape.sigmoid(t)?;
            tape.sum(y)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn sabotage_is_detected() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::new(&[2], vec![0.4, -0.7]).unwrap()).unwrap();
        let report = GradChecker::new(1e-5)
            .unwrap()
            .sabotage("sigmoid")
            .check(&mut store, |tape, s| {
                let t = tape.param(s, id);
                let y = tape.sigmoid(t)?;
                tape.sum(y)
            })
            .unwrap();
        assert!(report.max_rel_error > 0.1);
        assert_eq!(report.worst.as_deref(), Some("theta"));
    }

    #[test]
    fn rejects_bad_step() {
        assert!(GradChecker::new(0.0).is_err());
        assert!(GradChecker::new(f64::NAN).is_err());
    }

    #[test]
    fn non_finite_loss_names_the_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("log_input", Tensor::scalar(1e-6)).unwrap();
        // ln(x) is undefined at x - eps < 0
        let err = grad_check(&mut store, 1e-5, |tape, s| {
            let t = tape.param(s, id);
            let v = tape.value(t).item();
            let out = Tensor::scalar(if v > 0.0 { v.ln() } else { f64::NAN });
            Ok(tape.constant(out))
        })
        .unwrap_err();
        assert!(err.to_string().contains("log_input"), "{err}");
    }
}

//! Central finite-difference checking of tape gradients (64-bit only).

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParameterSet;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error used throughout: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` against `(f(p+ε) - f(p-ε)) / 2ε` for
/// every scalar of every parameter, and returns the worst relative error.
///
/// `f` must build a scalar loss on the graph it is given, reading parameters
/// through [`Graph::param`]. It must be deterministic (no dropout).
pub fn grad_check<F>(params: &ParameterSet<f64>, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Graph<'p, f64>) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic = {
        let mut g = Graph::with_params(params);
        let root = f(&mut g)?;
        g.backward(root)?.params(params)
    };

    let eval = |p: &ParameterSet<f64>| -> Result<f64> {
        let mut g = Graph::with_params(p);
        let root = f(&mut g)?;
        Ok(g.value(root).item())
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for id in params.ids() {
        let name = params.name(id).to_string();
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            let tag = |e: Error| match e {
                Error::Numeric { detail, .. } => Error::numeric(format!("{name}[{i}]"), detail),
                other => other,
            };
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work).map_err(tag)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work).map_err(tag)?;
            work.get_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!("{name}[{i}]"), "non-finite loss at perturbed point"));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParameterSet::new();
        let id = p
            .add("theta", ParamKind::Weight, Tensor::vector(vec![0.3, -1.2, 2.5, 0.0]))
            .unwrap();
        let r = grad_check(&p, 1e-4, |g| {
            let t = g.param(id)?;
            g.sum_squares(t)
        })
        .unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn rejects_bad_eps() {
        let p = ParameterSet::<f64>::new();
        assert!(grad_check(&p, 0.0, |g| Ok(g.leaf(Tensor::scalar(0.0)))).is_err());
    }

    #[test]
    fn non_finite_perturbation_names_parameter() {
        let mut p = ParameterSet::new();
        let id = p.add("big", ParamKind::Weight, Tensor::vector(vec![f64::MAX / 2.0])).unwrap();
        let err = grad_check(&p, f64::MAX * 0.75, |g| {
            let t = g.param(id)?;
            g.sum(t)
        })
        .unwrap_err();
        assert!(err.to_string().contains("big[0]"), "{err}");
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

use super::tape::{Graph, Var};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Pass threshold on the worst relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub per_param: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

/// `|a − n| / max(|a|, |n|, 1e−8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn scalar_loss(g: &Graph, loss: Var, op: &str) -> Result<f64> {
    if g.shape(loss) != (1, 1) {
        return Err(Error::invalid(format!(
            "grad_check `{op}`: loss has shape {:?}, expected a scalar",
            g.shape(loss)
        )));
    }
    Ok(g.scalar_value(loss))
}

/// Compares tape gradients of `build` against central differences for every
/// entry of every tensor in `params`.
pub fn grad_check<F>(op: &str, params: &ParamStore, step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, |_, _| true);
    let loss = build(&mut g, &bound)?;
    scalar_loss(&g, loss, op)?;
    let grads = g.backward(loss);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_, _| false);
        let l = build(&mut g, &b)?;
        scalar_loss(&g, l, op)
    };

    let mut per_param = BTreeMap::new();
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, var) in bound.iter() {
        let shape = params.get(name).map(|t| t.dim()).unwrap_or((0, 0));
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| ndarray::Array2::zeros(shape));
        let mut param_worst: f64 = 0.0;
        for idx in 0..shape.0 * shape.1 {
            let (r, c) = (idx / shape.1, idx % shape.1);
            let orig = params.get(name).unwrap()[[r, c]];
            probe.get_mut(name).unwrap()[[r, c]] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap()[[r, c]] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap()[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * step);
            param_worst = param_worst.max(relative_error(analytic[[r, c]], numeric));
        }
        worst = worst.max(param_worst);
        per_param.insert(name.to_owned(), param_worst);
    }
    Ok(GradCheckReport {
        op: op.to_owned(),
        max_rel_error: worst,
        per_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use ndarray::array;

    #[test]
    fn quadratic_at_three() {
        let mut p = ParamStore::new();
        p.insert("x", ParamGroup::Decoder, array![[3.0]]).unwrap();
        let r = grad_check("square", &p, DEFAULT_STEP, |g, b| Ok(g.sum_squares(b.var("x")))).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut p = ParamStore::new();
        p.insert("x", ParamGroup::Decoder, array![[3.0, -1.0]]).unwrap();
        let r = grad_check("const", &p, DEFAULT_STEP, |g, _| Ok(g.constant(array![[4.0]]))).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut p = ParamStore::new();
        p.insert("x", ParamGroup::Decoder, array![[3.0, 1.0]]).unwrap();
        let err = grad_check("vec", &p, DEFAULT_STEP, |_, b| Ok(b.var("x"))).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use crate::error::Result;
use crate::params::ParamStore;

/// Adam moments and step count, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    /// One bias-corrected update of every parameter that has a gradient.
    pub fn step<'a>(
        &self,
        state: &mut AdamState,
        params: &mut ParamStore,
        grads: impl IntoIterator<Item = (&'a str, Array2<f64>)>,
    ) -> Result<()> {
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| crate::Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
            let m = state.m.entry(name.to_owned()).or_insert_with(|| Array2::zeros(g.dim()));
            let v = state.v.entry(name.to_owned()).or_insert_with(|| Array2::zeros(g.dim()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            Zip::from(p).and(m).and(v).and(&g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
        Ok(())
    }
}

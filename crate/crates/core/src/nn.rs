//! Parameter-naming conventions and the affine layer shared by the networks.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};
use crate::params::{Bound, ParamGroup, ParamStore};

pub(crate) fn weight_name(prefix: &str) -> String {
    format!("{prefix}.weight")
}

pub(crate) fn bias_name(prefix: &str) -> String {
    format!("{prefix}.bias")
}

/// Glorot-uniform weight `fan_in×fan_out` and zero bias `1×fan_out`.
pub(crate) fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    group: ParamGroup,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert_glorot(&weight_name(prefix), group, fan_in, fan_out, rng)?;
    store.insert(&bias_name(prefix), group, Array2::zeros((1, fan_out)))
}

/// `x·W + b`
pub(crate) fn linear(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Var {
    let w = b.var(&weight_name(prefix));
    let xw = g.matmul(x, w);
    g.add_row(xw, b.var(&bias_name(prefix)))
}

/// Checks that `prefix.weight` exists with `fan_in` rows.
pub(crate) fn expect_fan_in(store: &ParamStore, prefix: &str, fan_in: usize) -> Result<()> {
    let name = weight_name(prefix);
    let w = store
        .get(&name)
        .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
    if w.nrows() != fan_in {
        return Err(Error::invalid(format!(
            "`{name}` expects inputs of width {}, got {fan_in}",
            w.nrows()
        )));
    }
    Ok(())
}

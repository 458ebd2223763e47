use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{expect_fan_in, init_linear, linear};
use crate::numerics::{Graph, Var};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::synthcorpus::MotionSeq;

pub const MOTION_ENCODER: &str = "motion_encoder";

/// Per-frame motion features `f_m`, `T×c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatureSeq {
    pub features: Array2<f64>,
}

pub fn init_motion_encoder(
    store: &mut ParamStore,
    vertices: usize,
    channels: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init_linear(store, MOTION_ENCODER, ParamGroup::MotionEncoder, vertices * 3, channels, rng)
}

/// Single affine layer applied frame by frame; `motion` is `T×(V·3)`.
pub fn motion_encoder_graph(g: &mut Graph, b: &Bound, motion: Var) -> Var {
    linear(g, b, MOTION_ENCODER, motion)
}

pub fn motion_encode(motion: &MotionSeq, params: &ParamStore) -> Result<MotionFeatureSeq> {
    expect_fan_in(params, MOTION_ENCODER, motion.frames().ncols())
        .map_err(|e| Error::invalid(format!("motion_encode: {e}")))?;
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_, _| false);
    let x = g.constant(motion.frames().clone());
    let f = motion_encoder_graph(&mut g, &b, x);
    Ok(MotionFeatureSeq {
        features: g.value(f).clone(),
    })
}

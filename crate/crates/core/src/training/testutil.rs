use crate::decoder::DecoderConfig;
use crate::encoders::StyleEncoderConfig;
use crate::model::ModelConfig;
use crate::synthcorpus::generate_corpus;

use super::config::{Stage, TrainConfig};
use super::data::Dataset;

pub(crate) fn tiny_model() -> ModelConfig {
    ModelConfig {
        slots: 8,
        channels: 8,
        d_txt: 8,
        decoder: DecoderConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            ff: 16,
            max_t: 512,
        },
        style: StyleEncoderConfig {
            hidden: 16,
            groups: 4,
            ..StyleEncoderConfig::default()
        },
        ..ModelConfig::default()
    }
}

pub(crate) fn tiny_config(stage: Stage, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: Some(3e-3),
        seed: 5,
        model: tiny_model(),
        ..TrainConfig::for_stage(stage)
    }
}

pub(crate) fn tiny_data() -> Dataset {
    Dataset::from_corpus(&generate_corpus(3, 2, 6).unwrap(), 0.2).unwrap()
}

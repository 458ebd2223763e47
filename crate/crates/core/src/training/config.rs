use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_file;
use crate::losses::{Stage2Weights, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_MARGIN};
use crate::model::ModelConfig;
use crate::params::Stage2Trainable;

pub const STAGE1_LR: f64 = 1e-4;
pub const STAGE2_LR: f64 = 5e-5;

/// Which objective and trainable set a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// General motion storage and recall; style pathway absent.
    One,
    /// Style pathway only, on top of a frozen first stage.
    Two,
    /// Every parameter on the combined objective from scratch.
    Joint,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::One => "1",
            Stage::Two => "2",
            Stage::Joint => "joint",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "1" => Some(Stage::One),
            "2" => Some(Stage::Two),
            "joint" => Some(Stage::Joint),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Joint => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Stage::One),
            2 => Some(Stage::Two),
            3 => Some(Stage::Joint),
            _ => None,
        }
    }

    /// Whether checkpoints of this stage carry a trained style pathway.
    pub fn has_style(self) -> bool {
        !matches!(self, Stage::One)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    /// `None` picks the stage default.
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub w_lip: f64,
    pub w_style: f64,
    pub margin: f64,
    pub stage2_trainable: Stage2Trainable,
    pub test_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Abort when a batch loss exceeds this (or is not finite).
    pub divergence_limit: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::One,
            epochs: 100,
            lr: None,
            batch_size: 4,
            seed: 0,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            w_lip: 1.0,
            w_style: 1.0,
            margin: DEFAULT_MARGIN,
            stage2_trainable: Stage2Trainable::default(),
            test_fraction: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            divergence_limit: 1e6,
            model: ModelConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config key `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("config key `{key}`: expected true/false, got `{value}`"))),
    }
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            ..Self::default()
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.stage {
            Stage::Two => STAGE2_LR,
            Stage::One | Stage::Joint => STAGE1_LR,
        })
    }

    pub fn stage2_weights(&self) -> Stage2Weights {
        Stage2Weights {
            lambda2: self.lambda2,
            lip: self.w_lip,
            style: self.w_style,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::invalid(format!("learning rate {lr} must be finite and non-negative")));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.stage != Stage::One && (self.batch_size < 4 || !self.batch_size.is_multiple_of(2)) {
            return Err(Error::invalid(
                "style training batches pair clips per speaker: batch_size must be even and at least 4",
            ));
        }
        if self.margin < 0.0 {
            return Err(Error::invalid("margin must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction must be in [0, 1)"));
        }
        self.model.validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key.trim() {
            "stage" => {
                self.stage = Stage::from_tag(v)
                    .ok_or_else(|| Error::invalid(format!("stage must be 1, 2 or joint, got `{v}`")))?
            }
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = if v == "default" { None } else { Some(parse(key, v)?) },
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "w_lip" => self.w_lip = parse(key, v)?,
            "w_style" => self.w_style = parse(key, v)?,
            "margin" => self.margin = parse(key, v)?,
            "stage2_trainable" => {
                self.stage2_trainable = Stage2Trainable::from_tag(v).ok_or_else(|| {
                    Error::invalid(format!("stage2_trainable must be style_pathway or encoder_only, got `{v}`"))
                })?
            }
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "divergence_limit" => self.divergence_limit = parse(key, v)?,
            "vertices" => m.vertices = parse(key, v)?,
            "slots" | "n" => m.slots = parse(key, v)?,
            "channels" | "c" => {
                m.channels = parse(key, v)?;
                m.decoder.d_model = m.channels;
            }
            "d_txt" => m.d_txt = parse(key, v)?,
            "kappa" => m.kappa = parse(key, v)?,
            "mem_stop_grad" => m.mem_stop_grad = parse_bool(key, v)?,
            "d_model" => m.decoder.d_model = parse(key, v)?,
            "heads" => m.decoder.heads = parse(key, v)?,
            "layers" => m.decoder.layers = parse(key, v)?,
            "ff" => m.decoder.ff = parse(key, v)?,
            "max_t" => m.decoder.max_t = parse(key, v)?,
            "mel_bins" => m.style.mel_bins = parse(key, v)?,
            "style_hidden" => m.style.hidden = parse(key, v)?,
            "style_kernel" => m.style.kernel = parse(key, v)?,
            "style_groups" => m.style.groups = parse(key, v)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::invalid(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "config is not UTF-8"))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Every field as `key = value` lines; [`TrainConfig::parse`] inverts it.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let lr = self.lr.map_or("default".to_owned(), |v| format!("{v:?}"));
        let rows: Vec<(&str, String)> = vec![
            ("stage", self.stage.tag().to_owned()),
            ("epochs", self.epochs.to_string()),
            ("lr", lr),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("lambda1", format!("{:?}", self.lambda1)),
            ("lambda2", format!("{:?}", self.lambda2)),
            ("w_lip", format!("{:?}", self.w_lip)),
            ("w_style", format!("{:?}", self.w_style)),
            ("margin", format!("{:?}", self.margin)),
            ("stage2_trainable", self.stage2_trainable.tag().to_owned()),
            ("test_fraction", format!("{:?}", self.test_fraction)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("adam_eps", format!("{:?}", self.adam_eps)),
            ("divergence_limit", format!("{:?}", self.divergence_limit)),
            ("vertices", m.vertices.to_string()),
            ("slots", m.slots.to_string()),
            ("channels", m.channels.to_string()),
            ("d_txt", m.d_txt.to_string()),
            ("kappa", format!("{:?}", m.kappa)),
            ("mem_stop_grad", m.mem_stop_grad.to_string()),
            ("d_model", m.decoder.d_model.to_string()),
            ("heads", m.decoder.heads.to_string()),
            ("layers", m.decoder.layers.to_string()),
            ("ff", m.decoder.ff.to_string()),
            ("max_t", m.decoder.max_t.to_string()),
            ("mel_bins", m.style.mel_bins.to_string()),
            ("style_hidden", m.style.hidden.to_string()),
            ("style_kernel", m.style.kernel.to_string()),
            ("style_groups", m.style.groups.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{align_graph, lip_graph, mse_graph, style_graph, vel_graph, LossBreakdown};
use crate::memory::MEMORY_SLOTS;
use crate::model::{decode_from, style_feature, stylized_slots, text_path, value_path};
use crate::numerics::{Graph, Var};
use crate::params::{ParamGroup, ParamStore};

use super::adam::{Adam, AdamState};
use super::checkpoint::{Checkpoint, RngState};
use super::config::{Stage, TrainConfig};
use super::data::{plain_batches, speaker_pair_batches, BatchEntry, Dataset, PreparedClip};

/// Per-epoch mean (per clip) of every loss term.
pub type LossLog = Vec<LossBreakdown>;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: LossLog,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where to write the parameters when training diverges.
    pub diagnostic_path: Option<PathBuf>,
}

pub fn loss_csv(log: &[LossBreakdown]) -> String {
    let mut s = String::from(LossBreakdown::CSV_HEADER);
    s.push('\n');
    for (i, b) in log.iter().enumerate() {
        s.push_str(&b.csv_row(i + 1));
        s.push('\n');
    }
    s
}

struct BatchTerms {
    loss: Var,
    parts: LossBreakdown,
}

fn batch_graph(
    g: &mut Graph,
    b: &crate::params::Bound,
    cfg: &TrainConfig,
    stage: Stage,
    clips: &[PreparedClip],
    lip_columns: &[usize],
    batch: &[BatchEntry],
) -> Result<BatchTerms> {
    let model = &cfg.model;
    let memory_terms = stage != Stage::Two;
    let style_terms = stage != Stage::One;
    let styles: Vec<Var> = if style_terms {
        batch
            .iter()
            .map(|e| {
                let mel = g.constant(clips[e.clip].mel.clone());
                style_feature(g, b, model, mel)
            })
            .collect()
    } else {
        Vec::new()
    };
    let w2 = cfg.stage2_weights();
    let mut totals = Vec::with_capacity(batch.len());
    let mut parts = LossBreakdown::default();
    for (i, e) in batch.iter().enumerate() {
        let clip = &clips[e.clip];
        let t = clip.num_frames();
        let text = text_path(g, b, &clip.text, t)?;
        let slots = if style_terms {
            stylized_slots(g, b, styles[i])
        } else {
            b.var(MEMORY_SLOTS)
        };
        let pred = decode_from(g, b, model, &text, slots)?;
        let target = g.constant(clip.target.clone());
        let mse = mse_graph(g, target, pred);
        let vel = vel_graph(g, target, pred);
        parts.mse += g.scalar_value(mse);
        parts.vel += g.scalar_value(vel);
        let mut terms = vec![mse, vel];
        if memory_terms {
            let vp = value_path(g, b, model, target);
            let align = align_graph(g, text.key, vp.value);
            parts.mem += g.scalar_value(vp.mem_loss);
            parts.align += g.scalar_value(align);
            let reg = g.add(vp.mem_loss, align);
            terms.push(g.scale(reg, cfg.lambda1));
        }
        if style_terms {
            let lip = lip_graph(g, target, pred, lip_columns);
            let style = style_graph(g, styles[i], styles[e.positive], styles[e.negative], cfg.margin);
            parts.lip += g.scalar_value(lip);
            parts.style += g.scalar_value(style);
            let lip = g.scale(lip, w2.lambda2 * w2.lip);
            let style = g.scale(style, w2.lambda2 * w2.style);
            terms.push(lip);
            terms.push(style);
        }
        totals.push(g.add_scalars(&terms));
    }
    let sum = g.add_scalars(&totals);
    let loss = g.scale(sum, 1.0 / batch.len() as f64);
    parts.total = g.scalar_value(sum);
    Ok(BatchTerms { loss, parts })
}

fn rng_state(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

/// Trainable parameter groups of each stage.
pub fn trainable_groups(cfg: &TrainConfig, stage: Stage) -> impl Fn(ParamGroup) -> bool + '_ {
    move |group| match stage {
        Stage::One => group.is_stage1(),
        Stage::Two => cfg.stage2_trainable.includes(group),
        Stage::Joint => true,
    }
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    stage: Stage,
    data: &'a Dataset,
    opts: &'a TrainOptions,
}

impl Loop<'_> {
    fn run(&self, mut params: ParamStore, keep: impl Fn(ParamGroup) -> bool) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let trainable = trainable_groups(cfg, self.stage);
        let adam = Adam {
            lr: cfg.learning_rate(),
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        };
        let mut state = AdamState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (u64::from(self.stage.code()) << 56));
        let clips = &self.data.train;
        let mut log = Vec::with_capacity(cfg.epochs);
        let snapshot = |params: &ParamStore, state: &AdamState, rng: &ChaCha8Rng, epoch: usize| {
            let mut kept = ParamStore::new();
            for (name, p) in params.iter() {
                if keep(p.group) {
                    kept.insert(name, p.group, p.value.clone()).expect("copy of a valid store");
                }
            }
            Checkpoint {
                config: TrainConfig {
                    stage: self.stage,
                    ..cfg.clone()
                },
                stage: self.stage,
                epoch,
                params: kept,
                optimizer: state.clone(),
                rng: rng_state(rng),
            }
        };

        for epoch in 0..cfg.epochs {
            let batches = match self.stage {
                Stage::One => plain_batches(clips.len(), cfg.batch_size, &mut rng),
                Stage::Two | Stage::Joint => speaker_pair_batches(clips, cfg.batch_size, &mut rng),
            };
            if batches.is_empty() {
                return Err(Error::invalid(
                    "no training batches: style training needs at least two speakers with two training clips each",
                ));
            }
            let mut sum = LossBreakdown::default();
            let mut count = 0usize;
            for batch in &batches {
                let mut g = Graph::new();
                let bound = params.bind(&mut g, |_, group| trainable(group));
                let terms = batch_graph(&mut g, &bound, cfg, self.stage, clips, &self.data.lip_columns, batch)?;
                let value = g.scalar_value(terms.loss);
                if !value.is_finite() || value.abs() > cfg.divergence_limit {
                    let diagnostic = match &self.opts.diagnostic_path {
                        Some(p) => {
                            snapshot(&params, &state, &rng, epoch).save(p)?;
                            Some(p.clone())
                        }
                        None => None,
                    };
                    return Err(Error::Numerical {
                        reason: format!(
                            "batch loss {value} at epoch {} is not finite or exceeds the divergence limit {}",
                            epoch + 1,
                            cfg.divergence_limit
                        ),
                        diagnostic,
                    });
                }
                let mut grads = g.backward(terms.loss);
                let updates: Vec<(&str, _)> = bound
                    .iter()
                    .filter(|(_, v)| g.requires_grad(*v))
                    .filter_map(|(name, v)| grads.take(v).map(|gr| (name, gr)))
                    .collect();
                adam.step(&mut state, &mut params, updates)?;
                sum.accumulate(&terms.parts);
                count += batch.len();
            }
            let mean = sum.scaled(1.0 / count as f64);
            log::info!("stage {} epoch {}: total {:.6}", self.stage, epoch + 1, mean.total);
            log.push(mean);
        }
        let checkpoint = snapshot(&params, &state, &rng, cfg.epochs);
        Ok(TrainOutcome { checkpoint, log })
    }
}

fn check_stage(cfg: &TrainConfig, want: Stage) -> Result<()> {
    if cfg.stage != want {
        return Err(Error::InvalidMode(format!("config is for stage {}, expected {want}", cfg.stage)));
    }
    cfg.validate()
}

/// Learns the motion encoder, memory, text encoder and decoder.
pub fn train_stage1(data: &Dataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::One)?;
    if data.train.is_empty() {
        return Err(Error::invalid("no training clips"));
    }
    let params = cfg.model.init_params(cfg.seed)?;
    Loop {
        cfg,
        stage: Stage::One,
        data,
        opts,
    }
    .run(params, ParamGroup::is_stage1)
}

/// Learns the style pathway on top of a frozen first-stage checkpoint.
pub fn train_stage2(
    data: &Dataset,
    stage1: &Checkpoint,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::Two)?;
    if stage1.stage != Stage::One {
        return Err(Error::InvalidCheckpoint(format!(
            "stage 2 starts from a stage 1 checkpoint, got stage {}",
            stage1.stage
        )));
    }
    let mut params = cfg.model.init_params(cfg.seed)?;
    stage1.restore_into(&mut params, ParamGroup::is_stage1)?;
    Loop {
        cfg,
        stage: Stage::Two,
        data,
        opts,
    }
    .run(params, |_| true)
}

/// Trains every component at once on the combined objective.
pub fn train_joint(data: &Dataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::Joint)?;
    let params = cfg.model.init_params(cfg.seed)?;
    Loop {
        cfg,
        stage: Stage::Joint,
        data,
        opts,
    }
    .run(params, |_| true)
}

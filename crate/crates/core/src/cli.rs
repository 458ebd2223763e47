//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data or format
//! error, 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::audio::{read_wav, MelConfig, MelExtractor};
use crate::encoders::{PrecomputedTextFeatures, SyntheticTextEncoder, TextRepEncoder};
use crate::error::{Error, Result};
use crate::gradsuite::run_suite;
use crate::io::{atomic_write, read_file};
use crate::memory::MemoryBank;
use crate::metrics::{load_lip_mask, MetricReport};
use crate::model::{text_path, value_path};
use crate::numerics::{Graph, GRAD_TOLERANCE};
use crate::synthcorpus::{generate_corpus, load_phonemes, Corpus, MotionSeq};
use crate::training::{
    loss_csv, train_joint, train_stage1, train_stage2, Checkpoint, Dataset, Stage, SynthMode,
    Synthesizer, TrainConfig, TrainOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "facemem", version, about = "Speaker-adaptive facial motion from speech with a key-value motion memory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 50)]
        clips: usize,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one stage, or the end-to-end baseline with `--stage joint`.
    Train {
        #[arg(long)]
        stage: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First-stage checkpoint; required for stage 2.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Extra `key=value` config overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Synthesize a motion sequence.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        /// A `.wav` or `.phn` file; the other one is looked up next to it.
        #[arg(long)]
        input: PathBuf,
        /// Precomputed text features used instead of phonemes.
        #[arg(long)]
        text_features: Option<PathBuf>,
        #[arg(long, default_value = "general")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two directories of `.mseq` files.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        lip_mask: PathBuf,
        /// Report path; `.json` and `.csv` files are written.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// `all`, `ops`, `losses`, `modules` or one check name.
        #[arg(long, default_value = "all")]
        which: String,
    },
    /// Dump the memory slots and the addresses used for one clip.
    InspectMemory {
        #[arg(long)]
        ckpt: PathBuf,
        /// A `.phn` or `.wav` clip path; a sibling `.mseq` adds value addresses.
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a loss CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        loss_csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors carry the exit code they map to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::InvalidMode(_) => EXIT_USAGE,
            Error::Numerical { .. } => EXIT_NUMERICAL,
            Error::UnsupportedFormat(_)
            | Error::Format { .. }
            | Error::ShapeMismatch { .. }
            | Error::Capacity(_)
            | Error::InvalidCheckpoint(_)
            | Error::Io { .. }
            | Error::Json(_) => EXIT_DATA,
        };
        let message = match &e {
            Error::Numerical {
                diagnostic: Some(p), ..
            } => format!("{e} (diagnostic checkpoint: {})", p.display()),
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

type CmdResult = std::result::Result<String, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Summaries go to stdout and failures to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::GenData {
            seed,
            speakers,
            clips,
            out,
            force,
        } => gen_data(seed, speakers, clips, &out, force),
        Command::Train {
            stage,
            config,
            corpus,
            out,
            init,
            seed,
            epochs,
            lr,
            overrides,
        } => train(&TrainArgs {
            stage,
            config,
            corpus,
            out,
            init,
            seed,
            epochs,
            lr,
            overrides,
        }),
        Command::Synth {
            ckpt,
            input,
            text_features,
            mode,
            out,
        } => synth(&ckpt, &input, text_features.as_deref(), &mode, &out),
        Command::Eval {
            reference,
            hyp,
            lip_mask,
            out,
        } => eval(&reference, &hyp, &lip_mask, &out),
        Command::Gradcheck { which } => gradcheck(&which),
        Command::InspectMemory { ckpt, clip, out } => inspect_memory(&ckpt, &clip, &out),
        Command::Plot { loss_csv, out } => plot(&loss_csv, &out),
    }
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn gen_data(seed: u64, speakers: usize, clips: usize, out: &Path, force: bool) -> CmdResult {
    if speakers < 2 {
        return Err(Failure::usage(format!(
            "--speakers must be at least 2 so triplets have negatives, got {speakers}"
        )));
    }
    if clips == 0 {
        return Err(Failure::usage("--clips must be positive"));
    }
    if out.exists() && !out.is_dir() {
        return Err(Failure::data(format!("{} exists and is not a directory", out.display())));
    }
    if is_nonempty_dir(out) && !force {
        return Err(Failure::data(format!(
            "{} is not empty; pass --force to replace it",
            out.display()
        )));
    }
    let corpus = generate_corpus(seed, speakers, clips)?;
    // Build next to the target and swap it in, so a failure leaves no
    // half-written corpus behind.
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&parent)?;
    let staging = tempfile::Builder::new()
        .prefix(".gen-data-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    corpus.save(staging.path())?;
    if out.exists() {
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    let staged = staging.keep();
    std::fs::rename(&staged, out).map_err(|e| Error::io(out, e))?;
    Ok(format!(
        "wrote {} clips ({} speakers x {} clips, seed {seed}) to {}\n",
        corpus.clips.len(),
        speakers,
        clips,
        out.display()
    ))
}

struct TrainArgs {
    stage: String,
    config: Option<PathBuf>,
    corpus: PathBuf,
    out: PathBuf,
    init: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    overrides: Vec<String>,
}

fn train(a: &TrainArgs) -> CmdResult {
    let stage = Stage::from_tag(&a.stage)
        .ok_or_else(|| Failure::usage(format!("--stage must be 1, 2 or joint, got `{}`", a.stage)))?;
    if stage == Stage::Two && a.init.is_none() {
        return Err(Failure::usage("stage 2 needs --init with a stage 1 checkpoint"));
    }
    let init = a.init.as_ref().map(Checkpoint::load).transpose()?;
    let mut cfg = match (&a.config, &init) {
        (Some(path), _) => TrainConfig::load(path)?,
        // Stage 2 inherits the architecture it has to match.
        (None, Some(ck)) => ck.config.clone(),
        (None, None) => TrainConfig::default(),
    };
    cfg.stage = stage;
    if a.config.is_none() && init.is_some() {
        let fresh = TrainConfig::for_stage(stage);
        cfg.epochs = fresh.epochs;
        cfg.lr = fresh.lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = Some(lr);
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    let corpus = Corpus::load(&a.corpus)?;
    let data = Dataset::from_corpus(&corpus, cfg.test_fraction)?;
    create_dir(&a.out)?;
    let opts = TrainOptions {
        diagnostic_path: Some(a.out.join("diagnostic.mtck")),
    };
    let outcome = match stage {
        Stage::One => train_stage1(&data, &cfg, &opts)?,
        Stage::Two => train_stage2(&data, init.as_ref().expect("checked above"), &cfg, &opts)?,
        Stage::Joint => train_joint(&data, &cfg, &opts)?,
    };
    let ckpt_path = a.out.join("checkpoint.mtck");
    outcome.checkpoint.save(&ckpt_path)?;
    atomic_write(&a.out.join("loss.csv"), loss_csv(&outcome.log).as_bytes())?;
    atomic_write(&a.out.join("config.txt"), cfg.to_text().as_bytes())?;
    let last = outcome.log.last().map(|b| b.total).unwrap_or(f64::NAN);
    Ok(format!(
        "stage {stage}: {} epochs on {} clips, final loss {last:.6e}, checkpoint {}\n",
        cfg.epochs,
        data.train.len(),
        ckpt_path.display()
    ))
}

/// Text source and optional mel frames for a clip path.
struct ClipInputs {
    text: Box<dyn TextRepEncoder>,
    mel: Option<ndarray::Array2<f64>>,
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn clip_inputs(input: &Path, text_features: Option<&Path>, d_txt: usize, need_audio: bool) -> Result<ClipInputs> {
    let (wav, phn) = if has_ext(input, "wav") {
        (input.to_path_buf(), input.with_extension("phn"))
    } else if has_ext(input, "phn") {
        (input.with_extension("wav"), input.to_path_buf())
    } else {
        return Err(Error::invalid(format!("{}: input must be a .wav or .phn file", input.display())));
    };
    let text: Box<dyn TextRepEncoder> = match text_features {
        Some(p) => Box::new(PrecomputedTextFeatures::load(p, d_txt)?),
        None => Box::new(SyntheticTextEncoder::new(&load_phonemes(&phn)?)?),
    };
    let mel = if need_audio {
        let clip = read_wav(&wav)?;
        Some(MelExtractor::new(MelConfig::default()).compute(&clip)?.frames().clone())
    } else {
        None
    };
    Ok(ClipInputs { text, mel })
}

fn synth(ckpt: &Path, input: &Path, text_features: Option<&Path>, mode: &str, out: &Path) -> CmdResult {
    let mode = SynthMode::from_tag(mode)
        .ok_or_else(|| Failure::usage(format!("--mode must be general or personalized, got `{mode}`")))?;
    let ckpt = Checkpoint::load(ckpt)?;
    if mode == SynthMode::Personalized && !ckpt.stage.has_style() {
        return Err(Failure::usage(format!(
            "personalized synthesis needs a stage 2 or joint checkpoint, this one is stage {}",
            ckpt.stage
        )));
    }
    let inputs = clip_inputs(
        input,
        text_features,
        ckpt.config.model.d_txt,
        mode == SynthMode::Personalized,
    )?;
    let t = inputs.text.source_len();
    let motion = Synthesizer::from_checkpoint(&ckpt).synthesize(inputs.text.as_ref(), t, inputs.mel.as_ref(), mode)?;
    motion.save(out)?;
    Ok(format!(
        "T={} V={} mode={} -> {}\n",
        motion.num_frames(),
        motion.num_vertices(),
        mode.tag(),
        out.display()
    ))
}

/// Relative paths (without extension) of every `.mseq` under `root`.
fn mseq_ids(root: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else if has_ext(&p, "mseq") {
                let rel = p.strip_prefix(root).expect("walked from root").with_extension("");
                let id: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                out.push(id.join("/"));
            }
        }
        Ok(())
    }
    let mut ids = Vec::new();
    walk(root, root, &mut ids)?;
    ids.sort();
    Ok(ids)
}

fn eval(reference: &Path, hyp: &Path, lip_mask: &Path, out: &Path) -> CmdResult {
    let mask = load_lip_mask(lip_mask)?;
    let ref_ids = mseq_ids(reference)?;
    let hyp_ids = mseq_ids(hyp)?;
    let missing: Vec<&String> = ref_ids.iter().filter(|id| !hyp_ids.contains(id)).collect();
    let extra: Vec<&String> = hyp_ids.iter().filter(|id| !ref_ids.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        return Err(Failure::data(format!(
            "clip ids differ; missing from hyp: [{}]; missing from ref: [{}]",
            list(&missing),
            list(&extra)
        )));
    }
    if ref_ids.is_empty() {
        return Err(Failure::data(format!("no .mseq files under {}", reference.display())));
    }
    let pairs = ref_ids
        .iter()
        .map(|id| {
            let r = MotionSeq::load(reference.join(format!("{id}.mseq")))?;
            let h = MotionSeq::load(hyp.join(format!("{id}.mseq")))?;
            Ok((id.clone(), r, h))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::evaluate(&pairs, &mask)?;
    let stem = out.with_extension("");
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    report.save(&stem)?;
    Ok(format!(
        "{} clips: fve {:.6e} lve {:.6e} ldtw {:.6e} lip_max {:.6e}\n",
        report.clips.len(),
        report.fve,
        report.lve,
        report.ldtw,
        report.lip_max
    ))
}

fn gradcheck(which: &str) -> CmdResult {
    let reports = run_suite(which)?;
    let mut s = String::new();
    let mut worst: (f64, &str) = (0.0, "");
    for r in &reports {
        let _ = writeln!(
            s,
            "{:<34} {:.3e} {}",
            r.op,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, &r.op);
        }
    }
    let _ = writeln!(s, "worst relative error {:.3e} ({})", worst.0, worst.1);
    if worst.0 >= GRAD_TOLERANCE {
        print!("{s}");
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("gradient check failed: {:.3e} >= {GRAD_TOLERANCE:e}", worst.0),
        });
    }
    Ok(s)
}

fn address_csv(m: &ndarray::Array2<f64>) -> String {
    let mut s = String::from("frame");
    for i in 0..m.ncols() {
        let _ = write!(s, ",slot{i}");
    }
    s.push('\n');
    for (t, row) in m.outer_iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in row {
            let _ = write!(s, ",{v:e}");
        }
        s.push('\n');
    }
    s
}

#[derive(serde::Serialize)]
struct SlotDump<'a> {
    num_slots: usize,
    channels: usize,
    kappa: f64,
    stage: &'a str,
    slots: Vec<Vec<f64>>,
}

fn inspect_memory(ckpt: &Path, clip: &Path, out: &Path) -> CmdResult {
    let ckpt = Checkpoint::load(ckpt)?;
    let model = &ckpt.config.model;
    let bank = MemoryBank::from_params(&ckpt.params, model.kappa)?;
    let inputs = clip_inputs(clip, None, model.d_txt, false)?;
    let mut g = Graph::new();
    let b = ckpt.params.bind(&mut g, |_, _| false);
    let t = inputs.text.source_len();
    let text = text_path(&mut g, &b, inputs.text.as_ref(), t)?;
    let key = g.value(text.key).clone();
    create_dir(out)?;
    atomic_write(&out.join("key_address.csv"), address_csv(&key).as_bytes())?;
    let mut written = vec!["key_address.csv"];
    let mseq = clip.with_extension("mseq");
    if mseq.exists() {
        let motion = MotionSeq::load(&mseq)?;
        let m = g.constant(motion.frames().clone());
        let vp = value_path(&mut g, &b, model, m);
        atomic_write(&out.join("value_address.csv"), address_csv(g.value(vp.value)).as_bytes())?;
        written.push("value_address.csv");
    }
    let dump = SlotDump {
        num_slots: bank.num_slots(),
        channels: bank.channels(),
        kappa: bank.kappa(),
        stage: ckpt.stage.tag(),
        slots: bank
            .slots()
            .outer_iter()
            .map(|r| r.to_vec())
            .collect(),
    };
    atomic_write(&out.join("slots.json"), serde_json::to_string_pretty(&dump).map_err(Error::from)?.as_bytes())?;
    written.push("slots.json");
    let worst = key
        .outer_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(format!(
        "{t} frames, {} slots; wrote {} to {} (max |row sum - 1| = {worst:.1e})\n",
        bank.num_slots(),
        written.join(", "),
        out.display()
    ))
}

fn parse_loss_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "not UTF-8"))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty CSV"))?
        .split(',')
        .map(|s| s.trim().to_owned())
        .collect();
    if header.len() < 2 {
        return Err(Error::format(path, "CSV needs an x column and at least one series"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(path, format!("row {}: non-numeric value", i + 1)))?;
        if row.len() != header.len() {
            return Err(Error::format(path, format!("row {} has {} fields, expected {}", i + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(path, "CSV has no data rows"));
    }
    Ok((header, rows))
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// One polyline per series; each series is scaled to its own range so
/// terms of different magnitude stay readable.
pub fn loss_svg(header: &[String], rows: &[Vec<f64>]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - pad,
        h - pad
    );
    let _ = writeln!(s, "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>", h - pad);
    for (k, name) in header.iter().enumerate().skip(1) {
        let ys: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let points: Vec<String> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let px = pad + (x - x0) / xspan * (w - 2.0 * pad);
                let py = h - pad - (y - lo) / span * (h - 2.0 * pad);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let color = PALETTE[(k - 1) % PALETTE.len()];
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>{}</title></polyline>",
            points.join(" "),
            xml_escape(name)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            w - pad + 4.0 - 80.0,
            pad + 14.0 * k as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn plot(loss_csv: &Path, out: &Path) -> CmdResult {
    let (header, rows) = parse_loss_csv(loss_csv)?;
    atomic_write(out, loss_svg(&header, &rows).as_bytes())?;
    Ok(format!(
        "plotted {} series over {} rows to {}\n",
        header.len() - 1,
        rows.len(),
        out.display()
    ))
}

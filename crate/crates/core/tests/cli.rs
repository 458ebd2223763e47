use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facemem::synthcorpus::MotionSeq;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const TINY: [&str; 9] = [
    "slots=8",
    "channels=8",
    "d_txt=8",
    "d_model=8",
    "heads=2",
    "layers=1",
    "ff=16",
    "style_hidden=16",
    "style_groups=4",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_facemem"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sha(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn gen(dir: &Path, speakers: usize, clips: usize) {
    let o = run(&[
        "gen-data",
        "--seed",
        "3",
        "--speakers",
        &speakers.to_string(),
        "--clips",
        &clips.to_string(),
        "--out",
        p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn train(corpus: &Path, out: &Path, stage: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--stage", stage, "--corpus", p(corpus), "--out", p(out)];
    args.extend_from_slice(extra);
    run(&args)
}

fn tiny_args<'a>(epochs: &'a str, lr: &'a str) -> Vec<&'a str> {
    let mut v = vec!["--epochs", epochs, "--lr", lr, "--seed", "5"];
    for kv in TINY {
        v.push("--set");
        v.push(kv);
    }
    v
}

/// Tiny corpus plus stage-1 and stage-2 checkpoints; stage 2 runs at lr 0 so
/// the style projection keeps its neutral init.
struct Trained {
    dir: TempDir,
}

impl Trained {
    fn new(stage2_lr: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let corpus = dir.path().join("corpus");
        gen(&corpus, 2, 4);
        let o = train(&corpus, &dir.path().join("s1"), "1", &tiny_args("2", "3e-3"));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let init = dir.path().join("s1/checkpoint.mtck");
        let o = train(
            &corpus,
            &dir.path().join("s2"),
            "2",
            &["--init", p(&init), "--epochs", "1", "--lr", stage2_lr],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

#[test]
fn help_exits_zero_everywhere() {
    for cmd in ["gen-data", "train", "synth", "eval", "gradcheck", "inspect-memory", "plot"] {
        let o = run(&[cmd, "--help"]);
        assert_eq!(code(&o), 0, "{cmd} --help");
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn unknown_command_and_flags_are_usage_errors() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--bogus"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn gen_data_defaults_write_two_hundred_clips() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("corpus");
    let o = run(&["gen-data", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["total_clips"], 200);
    let mut mseq = 0;
    for spk in std::fs::read_dir(&out).unwrap() {
        let spk = spk.unwrap().path();
        if spk.is_dir() {
            mseq += std::fs::read_dir(&spk)
                .unwrap()
                .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "mseq"))
                .count();
        }
    }
    assert_eq!(mseq, 200);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen(&a, 2, 3);
    gen(&b, 2, 3);
    assert_eq!(sha(&a.join("manifest.json")), sha(&b.join("manifest.json")));
    assert_eq!(sha(&a.join("spk_01/clip_0002.wav")), sha(&b.join("spk_01/clip_0002.wav")));
}

#[test]
fn gen_data_rejects_bad_requests() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("corpus");
    assert_eq!(code(&run(&["gen-data", "--speakers", "1", "--out", p(&out)])), 1);
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "x").unwrap();
    let o = run(&["gen-data", "--speakers", "2", "--clips", "2", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(out.join("keep.txt").exists());
    let o = run(&["gen-data", "--speakers", "2", "--clips", "2", "--out", p(&out), "--force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!out.join("keep.txt").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn train_writes_checkpoint_losses_and_config() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus");
    gen(&corpus, 2, 4);
    let out = dir.path().join("run");
    let o = train(&corpus, &out, "1", &tiny_args("3", "3e-3"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["checkpoint.mtck", "loss.csv", "config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "header plus one row per epoch");
    let cfg = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(cfg.contains("epochs"));
}

#[test]
fn stage2_without_init_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus");
    gen(&corpus, 2, 2);
    let o = train(&corpus, &dir.path().join("run"), "2", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--init"));
}

#[test]
fn huge_learning_rate_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus");
    gen(&corpus, 2, 4);
    let out = dir.path().join("run");
    let o = train(&corpus, &out, "1", &tiny_args("5", "1e3"));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(out.join("diagnostic.mtck").exists());
    assert!(stderr(&o).contains("diagnostic"));
}

#[test]
fn synth_modes() {
    let t = Trained::new("0");
    let clip = t.path("corpus/spk_00/clip_0000.wav");
    let phn = t.path("corpus/spk_00/clip_0000.phn");
    let s2 = t.path("s2/checkpoint.mtck");
    let s1 = t.path("s1/checkpoint.mtck");
    let (gen_out, pers_out, again) = (t.path("g.mseq"), t.path("p.mseq"), t.path("p2.mseq"));

    let o = run(&["synth", "--ckpt", p(&s2), "--input", p(&clip), "--mode", "personalized", "--out", p(&pers_out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text_len: usize = std::fs::read_to_string(&phn)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_whitespace().nth(1))
        .map(|d| d.parse::<usize>().unwrap())
        .sum();
    assert_eq!(MotionSeq::load(&pers_out).unwrap().num_frames(), text_len);

    let o = run(&["synth", "--ckpt", p(&s2), "--input", p(&phn), "--out", p(&gen_out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Neutral style weights make the personalized output the general one.
    assert_eq!(std::fs::read(&gen_out).unwrap(), std::fs::read(&pers_out).unwrap());

    let o = run(&["synth", "--ckpt", p(&s2), "--input", p(&clip), "--mode", "personalized", "--out", p(&again)]);
    assert_eq!(code(&o), 0);
    assert_eq!(sha(&again), sha(&pers_out));

    let o = run(&["synth", "--ckpt", p(&s1), "--input", p(&clip), "--mode", "personalized", "--out", p(&again)]);
    assert_eq!(code(&o), 1);
    let o = run(&["synth", "--ckpt", p(&s1), "--input", p(&clip), "--mode", "loud", "--out", p(&again)]);
    assert_eq!(code(&o), 1);
}

fn write_motion(dir: &Path, id: &str, m: &MotionSeq) {
    let path = dir.join(format!("{id}.mseq"));
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    m.save(path).unwrap();
}

fn read_report(stem: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(stem.with_extension("json")).unwrap()).unwrap()
}

#[test]
fn eval_reports() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus");
    gen(&corpus, 2, 2);
    let mask = corpus.join("lip_mask.txt");
    let (refd, hypd) = (dir.path().join("ref"), dir.path().join("hyp"));
    let ids = ["spk_00/clip_0000", "spk_00/clip_0001", "spk_01/clip_0000"];
    for id in ids {
        let m = MotionSeq::load(corpus.join(format!("{id}.mseq"))).unwrap();
        write_motion(&refd, id, &m);
        write_motion(&hypd, id, &m);
    }

    let out = dir.path().join("same.json");
    let o = run(&["eval", "--ref", p(&refd), "--hyp", p(&hypd), "--lip-mask", p(&mask), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_report(&out);
    for k in ["fve", "lve", "ldtw", "lip_max"] {
        assert_eq!(r[k].as_f64().unwrap(), 0.0, "{k}");
    }

    // Every vertex moved by (0.003, 0.004, 0) is a Euclidean offset of 0.005.
    let offset = 0.005;
    for id in ids {
        let m = MotionSeq::load(refd.join(format!("{id}.mseq"))).unwrap();
        let mut f = m.frames().clone();
        for mut row in f.rows_mut() {
            for v in 0..row.len() / 3 {
                row[3 * v] += 0.003;
                row[3 * v + 1] += 0.004;
            }
        }
        write_motion(&hypd, id, &MotionSeq::new(f).unwrap().to_f32_precision());
    }
    let out = dir.path().join("offset.json");
    let o = run(&["eval", "--ref", p(&refd), "--hyp", p(&hypd), "--lip-mask", p(&mask), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_report(&out);
    assert!((r["fve"].as_f64().unwrap() - offset).abs() < 1e-6, "{r}");
    assert!((r["lve"].as_f64().unwrap() - offset).abs() < 1e-6);
    let clips = r["clips"].as_array().unwrap();
    assert_eq!(clips.len(), ids.len());
    for k in ["fve", "lve", "ldtw", "lip_max"] {
        let mean = clips.iter().map(|c| c[k].as_f64().unwrap()).sum::<f64>() / clips.len() as f64;
        assert!((mean - r[k].as_f64().unwrap()).abs() < 1e-12, "{k}");
    }
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "clip_id,fve,lve,ldtw,lip_max");

    std::fs::remove_file(hypd.join("spk_01/clip_0000.mseq")).unwrap();
    let o = run(&["eval", "--ref", p(&refd), "--hyp", p(&hypd), "--lip-mask", p(&mask), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("spk_01/clip_0000"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_on_fresh_parameters() {
    let o = run(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("worst relative error"));
    assert_eq!(code(&run(&["gradcheck", "--which", "no_such_check"])), 1);
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn inspect_memory_addresses_are_stochastic() {
    let t = Trained::new("0");
    let out = t.path("inspect");
    let o = run(&[
        "inspect-memory",
        "--ckpt",
        p(&t.path("s1/checkpoint.mtck")),
        "--clip",
        p(&t.path("corpus/spk_01/clip_0001.phn")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["key_address.csv", "value_address.csv"] {
        let rows = read_csv(&out.join(f));
        assert!(!rows.is_empty());
        for r in rows {
            assert_eq!(r.len(), 8);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{f}");
        }
    }
    let slots: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("slots.json")).unwrap()).unwrap();
    assert_eq!(slots["num_slots"], 8);
    assert_eq!(slots["slots"].as_array().unwrap().len(), 8);
}

#[test]
fn plot_draws_one_polyline_per_series() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("loss.csv");
    std::fs::write(&csv, "epoch,total,mse,vel\n1,3.0,2.0,1.0\n2,2.0,1.5,0.5\n").unwrap();
    let svg = dir.path().join("loss.svg");
    let o = run(&["plot", "--loss-csv", p(&csv), "--out", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).expect("well-formed SVG");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
    assert_eq!(lines.len(), 3);
    for l in lines {
        assert_eq!(l.attribute("points").unwrap().split_whitespace().count(), 2);
    }
    std::fs::write(&csv, "epoch,total\n1,abc\n").unwrap();
    assert_eq!(code(&run(&["plot", "--loss-csv", p(&csv), "--out", p(&svg)])), 2);
}

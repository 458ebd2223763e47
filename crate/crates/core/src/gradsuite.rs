//! Finite-difference checks of every differentiable operation and of each
//! assembled component.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{decoder_graph, DecoderConfig};
use crate::encoders::{motion_encoder_graph, style_encoder_graph, StyleEncoderConfig, SyntheticTextEncoder};
use crate::error::Result;
use crate::losses::{align_graph, lip_graph, mem_graph, mse_graph, style_graph, vel_graph};
use crate::memory::{recall_graph, stylize_graph, style_weights_graph, value_address_graph, MEMORY_SLOTS};
use crate::model::{decode_from, stylized_slots, text_path, value_path, ModelConfig};
use crate::numerics::{grad_check, GradCheckReport, Graph, Var, DEFAULT_STEP};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::synthcorpus::Phoneme;

type Build = Box<dyn Fn(&mut Graph, &Bound) -> Result<Var>>;

struct Case {
    name: String,
    params: ParamStore,
    build: Build,
}

fn random(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-scale..scale))
}

/// Values bounded away from zero so piecewise-linear ops stay off their kinks.
fn off_kink(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn store(tensors: Vec<(&str, Array2<f64>)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in tensors {
        s.insert(name, ParamGroup::Decoder, t).expect("suite tensors are finite and unique");
    }
    s
}

/// Reduces any output to a scalar by a fixed random projection.
fn project(g: &mut Graph, out: Var, probe: &Array2<f64>) -> Var {
    let r = g.constant(probe.clone());
    let m = g.mul(out, r);
    g.sum(m)
}

fn unary(name: &str, input: Array2<f64>, rng: &mut ChaCha8Rng, op: fn(&mut Graph, Var) -> Var) -> Case {
    let mut probe_g = Graph::new();
    let x = probe_g.constant(input.clone());
    let out = op(&mut probe_g, x);
    let shape = probe_g.shape(out);
    let probe = random(rng, shape, 1.0);
    Case {
        name: format!("op:{name}"),
        params: store(vec![("a", input)]),
        build: Box::new(move |g, b| {
            let out = op(g, b.var("a"));
            Ok(project(g, out, &probe))
        }),
    }
}

fn binary(
    name: &str,
    a: Array2<f64>,
    b: Array2<f64>,
    rng: &mut ChaCha8Rng,
    op: fn(&mut Graph, Var, Var) -> Var,
) -> Case {
    let mut probe_g = Graph::new();
    let (x, y) = (probe_g.constant(a.clone()), probe_g.constant(b.clone()));
    let out = op(&mut probe_g, x, y);
    let shape = probe_g.shape(out);
    let probe = random(rng, shape, 1.0);
    Case {
        name: format!("op:{name}"),
        params: store(vec![("a", a), ("b", b)]),
        build: Box::new(move |g, bd| {
            let out = op(g, bd.var("a"), bd.var("b"));
            Ok(project(g, out, &probe))
        }),
    }
}

fn scalar(name: &str, params: ParamStore, build: Build) -> Case {
    Case {
        name: name.to_owned(),
        params,
        build,
    }
}

fn simplex_rows(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn(shape, || rng.gen_range(0.1..1.0));
    for mut row in m.outer_iter_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    m
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut v = Vec::new();
    let (a34, b34) = (random(rng, (3, 4), 1.0), random(rng, (3, 4), 1.0));
    v.push(binary("matmul", a34.clone(), random(rng, (4, 2), 1.0), rng, Graph::matmul));
    v.push(binary("matmul_nt", a34.clone(), random(rng, (5, 4), 1.0), rng, Graph::matmul_nt));
    v.push(binary("add", a34.clone(), b34.clone(), rng, Graph::add));
    v.push(binary("add_row", a34.clone(), random(rng, (1, 4), 1.0), rng, Graph::add_row));
    v.push(binary("sub", a34.clone(), b34.clone(), rng, Graph::sub));
    v.push(binary("mul", a34.clone(), b34.clone(), rng, Graph::mul));
    v.push(binary("mul_scalar", a34.clone(), random(rng, (1, 1), 1.0), rng, Graph::mul_scalar));
    v.push(binary("scale_rows", a34.clone(), random(rng, (1, 3), 1.0), rng, Graph::scale_rows));
    v.push(unary("scale", a34.clone(), rng, |g, x| g.scale(x, -1.7)));
    v.push(unary("sigmoid", random(rng, (3, 4), 3.0), rng, Graph::sigmoid));
    v.push(unary("relu", off_kink(rng, (3, 4)), rng, Graph::relu));
    v.push(unary("softmax_rows", random(rng, (3, 5), 2.0), rng, |g, x| g.softmax_rows(x, false)));
    v.push(unary("softmax_rows_causal", random(rng, (4, 4), 2.0), rng, |g, x| g.softmax_rows(x, true)));
    v.push(unary("normalize_rows", random(rng, (3, 4), 1.0), rng, Graph::normalize_rows));
    v.push(unary("concat_cols", a34.clone(), rng, |g, x| {
        let y = g.scale(x, 2.0);
        g.concat_cols(&[x, y])
    }));
    v.push(unary("slice_cols", a34.clone(), rng, |g, x| g.slice_cols(x, 1, 3)));
    v.push(unary("slice_rows", a34.clone(), rng, |g, x| g.slice_rows(x, 1, 3)));
    v.push(unary("select_cols", a34.clone(), rng, |g, x| g.select_cols(x, &[3, 0, 3])));
    v.push(unary("im2col", random(rng, (5, 2), 1.0), rng, |g, x| g.im2col(x, 3, 1)));
    v.push(unary("im2col_strided", random(rng, (6, 2), 1.0), rng, |g, x| g.im2col(x, 3, 2)));
    v.push(unary("mean_rows", a34.clone(), rng, Graph::mean_rows));
    v.push(unary("sum", a34.clone(), rng, |g, x| {
        let s = g.sum(x);
        g.mul(s, s)
    }));
    v.push(unary("sum_squares", a34.clone(), rng, Graph::sum_squares));
    v.push(unary("add_scalars", a34.clone(), rng, |g, x| {
        let s = g.sum(x);
        let q = g.sum_squares(x);
        g.add_scalars(&[s, q, s])
    }));

    let ln = store(vec![
        ("x", random(rng, (3, 4), 1.0)),
        ("gain", random(rng, (1, 4), 1.0)),
        ("bias", random(rng, (1, 4), 1.0)),
    ]);
    let probe = random(rng, (3, 4), 1.0);
    v.push(scalar(
        "op:layer_norm",
        ln,
        Box::new(move |g, b| {
            let y = g.layer_norm(b.var("x"), b.var("gain"), b.var("bias"));
            Ok(project(g, y, &probe))
        }),
    ));
    let gn = store(vec![
        ("x", random(rng, (4, 6), 1.0)),
        ("gain", random(rng, (1, 6), 1.0)),
        ("bias", random(rng, (1, 6), 1.0)),
    ]);
    let probe = random(rng, (4, 6), 1.0);
    v.push(scalar(
        "op:group_norm",
        gn,
        Box::new(move |g, b| {
            let y = g.group_norm(b.var("x"), b.var("gain"), b.var("bias"), 3);
            Ok(project(g, y, &probe))
        }),
    ));
    let kl = store(vec![("p", random(rng, (3, 4), 1.0)), ("q", random(rng, (3, 4), 1.0))]);
    v.push(scalar(
        "op:kl_rows",
        kl,
        Box::new(|g, b| {
            let p = g.softmax_rows(b.var("p"), false);
            let q = g.softmax_rows(b.var("q"), false);
            Ok(g.kl_rows(p, q))
        }),
    ));
    v
}

fn loss_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut v = Vec::new();
    let two = |rng: &mut ChaCha8Rng| store(vec![("v", random(rng, (4, 6), 0.1)), ("h", random(rng, (4, 6), 0.1))]);
    v.push(scalar("loss:mse", two(rng), Box::new(|g, b| Ok(mse_graph(g, b.var("v"), b.var("h"))))));
    v.push(scalar("loss:vel", two(rng), Box::new(|g, b| Ok(vel_graph(g, b.var("v"), b.var("h"))))));
    v.push(scalar(
        "loss:lip",
        two(rng),
        Box::new(|g, b| Ok(lip_graph(g, b.var("v"), b.var("h"), &[0, 1, 2, 4]))),
    ));
    v.push(scalar("loss:mem", two(rng), Box::new(|g, b| Ok(mem_graph(g, b.var("v"), b.var("h"))))));
    let ka = store(vec![("k", simplex_rows(rng, (3, 4))), ("q", simplex_rows(rng, (3, 4)))]);
    v.push(scalar("loss:align", ka, Box::new(|g, b| Ok(align_graph(g, b.var("k"), b.var("q"))))));
    // Anchor near the positive so the hinge is active.
    let a = random(rng, (1, 5), 1.0);
    let p = &a + &random(rng, (1, 5), 0.3);
    let n = &a + &random(rng, (1, 5), 0.2);
    let st = store(vec![("a", a), ("p", p), ("n", n)]);
    v.push(scalar(
        "loss:style",
        st,
        Box::new(|g, b| Ok(style_graph(g, b.var("a"), b.var("p"), b.var("n"), 0.5))),
    ));
    v
}

/// Replaces every tensor with random values so no branch sits at a
/// degenerate initialization (zero heads, neutral gains).
fn randomized(params: &ParamStore, rng: &mut ChaCha8Rng, scale: f64) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, p) in params.iter() {
        out.insert(name, p.group, random(rng, p.value.dim(), scale)).expect("finite values");
    }
    out
}

fn toy_model() -> ModelConfig {
    ModelConfig {
        vertices: 4,
        slots: 4,
        channels: 4,
        d_txt: 3,
        kappa: 4.0,
        mem_stop_grad: false,
        decoder: DecoderConfig {
            d_model: 4,
            heads: 2,
            layers: 1,
            ff: 6,
            max_t: 8,
        },
        style: StyleEncoderConfig {
            mel_bins: 3,
            hidden: 4,
            kernel: 3,
            groups: 2,
            strides: [1, 1, 2],
        },
    }
}

fn subset(params: &ParamStore, keep: impl Fn(&str) -> bool) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, p) in params.iter().filter(|(n, _)| keep(n)) {
        out.insert(name, p.group, p.value.clone()).expect("copy of a valid store");
    }
    out
}

fn module_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let cfg = toy_model();
    let full = randomized(&cfg.init_params(0)?, rng, 0.6);
    let mut v = Vec::new();
    let t = 3;
    let motion = random(rng, (t, 12), 0.1);

    let m = motion.clone();
    let probe = random(rng, (t, cfg.channels), 1.0);
    v.push(scalar(
        "module:motion_encoder",
        subset(&full, |n| n.starts_with("motion_encoder")),
        Box::new(move |g, b| {
            let x = g.constant(m.clone());
            let f = motion_encoder_graph(g, b, x);
            Ok(project(g, f, &probe))
        }),
    ));

    let query = random(rng, (t, cfg.channels), 1.0);
    let probe = random(rng, (t, cfg.channels), 1.0);
    let mut mem = subset(&full, |n| n == MEMORY_SLOTS);
    mem.insert("query", ParamGroup::MotionEncoder, query).expect("fresh name");
    let kappa = cfg.kappa;
    v.push(scalar(
        "module:memory_value_recall",
        mem,
        Box::new(move |g, b| {
            let addr = value_address_graph(g, b.var(MEMORY_SLOTS), b.var("query"), kappa);
            let r = recall_graph(g, addr, b.var(MEMORY_SLOTS));
            Ok(project(g, r, &probe))
        }),
    ));

    let m = motion.clone();
    v.push(scalar(
        "module:value_path",
        subset(&full, |n| n.starts_with("motion_encoder") || n == MEMORY_SLOTS),
        Box::new(move |g, b| {
            let x = g.constant(m.clone());
            Ok(value_path(g, b, &toy_model(), x).mem_loss)
        }),
    ));

    let f_s = random(rng, (1, cfg.channels), 1.0);
    let probe = random(rng, (cfg.slots, cfg.channels), 1.0);
    let mut sty = subset(&full, |n| n.starts_with("style_projection") || n == MEMORY_SLOTS);
    sty.insert("f_s", ParamGroup::StyleEncoder, f_s).expect("fresh name");
    v.push(scalar(
        "module:style_projection",
        sty,
        Box::new(move |g, b| {
            let w = style_weights_graph(g, b, b.var("f_s"));
            let s = stylize_graph(g, b.var(MEMORY_SLOTS), w);
            Ok(project(g, s, &probe))
        }),
    ));

    let mel = random(rng, (7, cfg.style.mel_bins), 1.0);
    let probe = random(rng, (1, cfg.channels), 1.0);
    v.push(scalar(
        "module:style_encoder",
        subset(&full, |n| n.starts_with("style_encoder")),
        Box::new(move |g, b| {
            let x = g.constant(mel.clone());
            let f = style_encoder_graph(g, b, &toy_model().style, x);
            Ok(project(g, f, &probe))
        }),
    ));

    let phonemes = vec![Phoneme::new(0, 1), Phoneme::new(3, 1), Phoneme::new(1, 1)];
    let text = SyntheticTextEncoder::new(&phonemes)?;
    let probe = random(rng, (t, cfg.slots), 1.0);
    let src = text.clone();
    v.push(scalar(
        "module:text_encoder",
        subset(&full, |n| n.starts_with("text_encoder")),
        Box::new(move |g, b| {
            let p = text_path(g, b, &src, t)?;
            Ok(project(g, p.key, &probe))
        }),
    ));
    // Resampled to a different length to cover the interpolation path.
    let src = text.clone();
    let probe5 = random(rng, (5, cfg.slots), 1.0);
    v.push(scalar(
        "module:text_encoder_resampled",
        subset(&full, |n| n.starts_with("text_encoder")),
        Box::new(move |g, b| {
            let p = text_path(g, b, &src, 5)?;
            Ok(project(g, p.f_txt, &probe5))
        }),
    ));

    let f_txt = random(rng, (t, cfg.slots), 1.0);
    let recalled = random(rng, (t, cfg.channels), 1.0);
    let mut dec = subset(&full, |n| n.starts_with("decoder"));
    dec.insert("f_txt", ParamGroup::TextEncoder, f_txt).expect("fresh name");
    dec.insert("recalled", ParamGroup::Memory, recalled).expect("fresh name");
    let probe = random(rng, (t, 12), 1.0);
    v.push(scalar(
        "module:decoder",
        dec,
        Box::new(move |g, b| {
            let out = decoder_graph(g, b, &toy_model().decoder, b.var("f_txt"), b.var("recalled"))?;
            Ok(project(g, out, &probe))
        }),
    ));

    // End-to-end paths perturb only the tensors joining the components; the
    // components themselves are checked above and stay frozen here.
    let target = random(rng, (t, 12), 0.1);
    let frozen = subset(&full, |n| n.starts_with("decoder"));
    let src = text;
    v.push(scalar(
        "module:general_synthesis",
        subset(&full, |n| n.starts_with("text_encoder") || n == MEMORY_SLOTS),
        Box::new(move |g, b| {
            let cfg = toy_model();
            let mut all = frozen.bind(g, |_, _| false);
            all.extend(b.clone());
            let p = text_path(g, &all, &src, t)?;
            let out = decode_from(g, &all, &cfg, &p, all.var(MEMORY_SLOTS))?;
            let y = g.constant(target.clone());
            Ok(mse_graph(g, y, out))
        }),
    ));

    let source = SyntheticTextEncoder::new(&[Phoneme::new(2, 2), Phoneme::new(5, 1)])?;
    let target = random(rng, (t, 12), 0.1);
    let frozen = subset(&full, |n| n.starts_with("decoder") || n.starts_with("text_encoder"));
    let mut trainable = subset(&full, |n| n.starts_with("style_projection") || n == MEMORY_SLOTS);
    trainable
        .insert("f_s", ParamGroup::StyleEncoder, random(rng, (1, cfg.channels), 1.0))
        .expect("fresh name");
    v.push(scalar(
        "module:personalized_synthesis",
        trainable,
        Box::new(move |g, b| {
            let cfg = toy_model();
            let mut all = frozen.bind(g, |_, _| false);
            all.extend(b.clone());
            let slots = stylized_slots(g, &all, all.var("f_s"));
            let p = text_path(g, &all, &source, t)?;
            let out = decode_from(g, &all, &cfg, &p, slots)?;
            let y = g.constant(target.clone());
            Ok(mse_graph(g, y, out))
        }),
    ));
    Ok(v)
}

/// Every case, in a fixed order.
fn all_cases() -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6752_6164);
    let mut cases = op_cases(&mut rng);
    cases.extend(loss_cases(&mut rng));
    cases.extend(module_cases(&mut rng)?);
    Ok(cases)
}

/// Names of every check; `ops`, `losses` and `modules` select a family.
pub fn case_names() -> Result<Vec<String>> {
    Ok(all_cases()?.into_iter().map(|c| c.name).collect())
}

/// Runs the checks matching `which`: `all`, a family (`ops`, `losses`,
/// `modules`), or a single case name such as `op:matmul` or `decoder`.
pub fn run_suite(which: &str) -> Result<Vec<GradCheckReport>> {
    let family = match which {
        "ops" => Some("op:"),
        "losses" => Some("loss:"),
        "modules" => Some("module:"),
        _ => None,
    };
    let selected: Vec<Case> = all_cases()?
        .into_iter()
        .filter(|c| match (which, family) {
            ("all", _) => true,
            (_, Some(prefix)) => c.name.starts_with(prefix),
            (w, None) => c.name == w || c.name.split_once(':').is_some_and(|(_, n)| n == w),
        })
        .collect();
    if selected.is_empty() {
        return Err(crate::error::Error::invalid(format!("no gradient check named `{which}`")));
    }
    selected
        .into_iter()
        .map(|c| grad_check(&c.name, &c.params, DEFAULT_STEP, c.build))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_by_family_and_name() {
        let names = case_names().unwrap();
        assert!(names.iter().any(|n| n == "module:decoder"));
        assert_eq!(run_suite("op:matmul").unwrap().len(), 1);
        assert_eq!(run_suite("decoder").unwrap().len(), 1);
        assert!(run_suite("nope").is_err());
    }
}

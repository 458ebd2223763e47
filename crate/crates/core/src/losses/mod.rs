//! Training objectives and the stage totals.
//!
//! Reconstruction terms sum over frames; the lip term is a mean over frames
//! and lip vertices. Every loss has a graph form used in training and a
//! value form used by tests and reports.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kl_divergence, Graph, Var};
use crate::synthcorpus::MotionSeq;

pub const DEFAULT_LAMBDA1: f64 = 0.01;
pub const DEFAULT_LAMBDA2: f64 = 0.01;
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Individual loss terms plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub vel: f64,
    pub mem: f64,
    pub align: f64,
    pub lip: f64,
    pub style: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "epoch,mse,vel,mem,align,lip,style,total";

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{},{},{},{},{},{},{}",
            self.mse, self.vel, self.mem, self.align, self.lip, self.style, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.mse, self.vel, self.mem, self.align, self.lip, self.style, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Component-wise running sum, used for epoch averages.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.mse += other.mse;
        self.vel += other.vel;
        self.mem += other.mem;
        self.align += other.align;
        self.lip += other.lip;
        self.style += other.style;
        self.total += other.total;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            mse: self.mse * s,
            vel: self.vel * s,
            mem: self.mem * s,
            align: self.align * s,
            lip: self.lip * s,
            style: self.style * s,
            total: self.total * s,
        }
    }
}

/// Weights of the stage-2 regularizers. `lip` and `style` multiply the
/// individual terms inside `λ2(·)` so each can be ablated alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Weights {
    pub lambda2: f64,
    pub lip: f64,
    pub style: f64,
}

impl Default for Stage2Weights {
    fn default() -> Self {
        Self {
            lambda2: DEFAULT_LAMBDA2,
            lip: 1.0,
            style: 1.0,
        }
    }
}

/// `L_mse + L_vel + λ1·(L_mem + L_align)`
pub fn stage1_total(parts: &LossBreakdown, lambda1: f64) -> f64 {
    parts.mse + parts.vel + lambda1 * (parts.mem + parts.align)
}

/// `L_mse + L_vel + λ2·(w_lip·L_lip + w_style·L_style)`
pub fn stage2_total(parts: &LossBreakdown, w: &Stage2Weights) -> f64 {
    parts.mse + parts.vel + w.lambda2 * (w.lip * parts.lip + w.style * parts.style)
}

/// Joint objective over every term, for end-to-end training.
pub fn joint_total(parts: &LossBreakdown, lambda1: f64, w: &Stage2Weights) -> f64 {
    stage2_total(parts, w) + lambda1 * (parts.mem + parts.align)
}

// Graph forms.

pub fn mse_graph(g: &mut Graph, v: Var, v_hat: Var) -> Var {
    let d = g.sub(v, v_hat);
    g.sum_squares(d)
}

/// Squared error between frame-to-frame differences; zero when `T < 2`.
pub fn vel_graph(g: &mut Graph, v: Var, v_hat: Var) -> Var {
    let t = g.shape(v).0;
    if t < 2 {
        log::warn!("velocity loss on a {t}-frame sequence is defined as 0");
        return g.constant(Array2::zeros((1, 1)));
    }
    let d = g.sub(v, v_hat);
    let later = g.slice_rows(d, 1, t);
    let earlier = g.slice_rows(d, 0, t - 1);
    let dv = g.sub(later, earlier);
    g.sum_squares(dv)
}

pub fn mem_graph(g: &mut Graph, f_m: Var, recalled: Var) -> Var {
    mse_graph(g, f_m, recalled)
}

/// `Σ_t KL(K^t ‖ V^t)`
pub fn align_graph(g: &mut Graph, key: Var, value: Var) -> Var {
    g.kl_rows(key, value)
}

/// Mean over frames and lip vertices of the squared displacement error.
/// `lip_columns` lists the three columns of each lip vertex.
pub fn lip_graph(g: &mut Graph, v: Var, v_hat: Var, lip_columns: &[usize]) -> Var {
    let t = g.shape(v).0;
    let d = g.sub(v, v_hat);
    let lips = g.select_cols(d, lip_columns);
    let s = g.sum_squares(lips);
    g.scale(s, 1.0 / (t * lip_columns.len() / 3) as f64)
}

/// `max(‖f − f⁺‖² − ‖f − f⁻‖² + margin, 0)` on `1×c` rows.
pub fn style_graph(g: &mut Graph, anchor: Var, pos: Var, neg: Var, margin: f64) -> Var {
    let dp = g.sub(anchor, pos);
    let dp = g.sum_squares(dp);
    let dn = g.sub(anchor, neg);
    let dn = g.sum_squares(dn);
    let gap = g.sub(dp, dn);
    let m = g.constant(Array2::from_elem((1, 1), margin));
    let raw = g.add(gap, m);
    g.relu(raw)
}

// Value forms.

fn same_shape(what: &str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("{what}: shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

fn eval2(a: &Array2<f64>, b: &Array2<f64>, f: impl FnOnce(&mut Graph, Var, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = f(&mut g, x, y);
    g.scalar_value(out)
}

pub fn loss_mse(v: &MotionSeq, v_hat: &MotionSeq) -> Result<f64> {
    same_shape("loss_mse", v.frames(), v_hat.frames())?;
    Ok(eval2(v.frames(), v_hat.frames(), mse_graph))
}

pub fn loss_vel(v: &MotionSeq, v_hat: &MotionSeq) -> Result<f64> {
    same_shape("loss_vel", v.frames(), v_hat.frames())?;
    Ok(eval2(v.frames(), v_hat.frames(), vel_graph))
}

pub fn loss_mem(f_m: &Array2<f64>, recalled: &Array2<f64>) -> Result<f64> {
    same_shape("loss_mem", f_m, recalled)?;
    Ok(eval2(f_m, recalled, mem_graph))
}

/// Sum over frames of `KL(K^t ‖ V^t)`.
pub fn loss_align(key: &[Vec<f64>], value: &[Vec<f64>]) -> Result<f64> {
    if key.len() != value.len() {
        return Err(Error::invalid(format!(
            "loss_align: {} key frames but {} value frames",
            key.len(),
            value.len()
        )));
    }
    key.iter().zip(value).map(|(k, v)| kl_divergence(k, v)).sum()
}

pub fn loss_lip(v: &MotionSeq, v_hat: &MotionSeq, lip_mask: &[usize]) -> Result<f64> {
    same_shape("loss_lip", v.frames(), v_hat.frames())?;
    let cols = lip_columns(lip_mask, v.num_vertices())?;
    Ok(eval2(v.frames(), v_hat.frames(), |g, a, b| lip_graph(g, a, b, &cols)))
}

pub fn loss_style(f_s: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> Result<f64> {
    if f_s.len() != pos.len() || f_s.len() != neg.len() {
        return Err(Error::invalid("loss_style: feature lengths differ"));
    }
    if margin < 0.0 {
        return Err(Error::invalid("loss_style: margin must be non-negative"));
    }
    let row = |x: &[f64]| Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
    let mut g = Graph::new();
    let (a, p, n) = (g.constant(row(f_s)), g.constant(row(pos)), g.constant(row(neg)));
    let out = style_graph(&mut g, a, p, n, margin);
    Ok(g.scalar_value(out))
}

/// The three displacement columns of each masked vertex.
pub fn lip_columns(lip_mask: &[usize], vertices: usize) -> Result<Vec<usize>> {
    if lip_mask.is_empty() {
        return Err(Error::invalid("lip mask is empty"));
    }
    if let Some(bad) = lip_mask.iter().find(|&&i| i >= vertices) {
        return Err(Error::invalid(format!("lip mask index {bad} out of range for {vertices} vertices")));
    }
    Ok(lip_mask.iter().flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn seq(rows: Array2<f64>) -> MotionSeq {
        MotionSeq::new(rows).unwrap()
    }

    #[test]
    fn mse_examples() {
        let v = seq(array![[0.1, 0.2, 0.3], [0.0, -0.1, 0.4]]);
        assert_eq!(loss_mse(&v, &v).unwrap(), 0.0);
        let mut w = v.frames().clone();
        w[[1, 0]] += 1.0;
        assert!((loss_mse(&v, &seq(w)).unwrap() - 1.0).abs() < 1e-12);
        let a = seq(array![[1.0, 2.0, 0.0, 0.5, 0.5, 0.5], [0.0, 1.0, 1.0, 2.0, 0.0, 0.0]]);
        let b = seq(array![[0.0, 2.0, 1.0, 0.5, 0.0, 0.5], [1.0, 1.0, 1.0, 0.0, 0.0, 3.0]]);
        // 1 + 1 + 0.25 + 1 + 4 + 9
        assert!((loss_mse(&a, &b).unwrap() - 16.25).abs() < 1e-12);
        assert!(loss_mse(&a, &v).is_err());
    }

    #[test]
    fn vel_examples() {
        let v = seq(array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0]]);
        assert_eq!(loss_vel(&v, &v).unwrap(), 0.0);
        let shifted = seq(v.frames() + 0.3);
        assert!(loss_vel(&v, &shifted).unwrap().abs() < 1e-12);
        let h = seq(array![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        // velocities v: (1,0,0),(0,2,0); h: (0,0,0),(0,0,1)
        assert!((loss_vel(&v, &h).unwrap() - (1.0 + 4.0 + 1.0)).abs() < 1e-12);
        let one = seq(array![[1.0, 2.0, 3.0]]);
        assert_eq!(loss_vel(&one, &seq(array![[0.0, 0.0, 0.0]])).unwrap(), 0.0);
    }

    #[test]
    fn mem_examples() {
        let f = array![[0.5, -1.0], [2.0, 0.0]];
        assert_eq!(loss_mem(&f, &f).unwrap(), 0.0);
        let mut r = f.clone();
        r[[0, 1]] += 1.0;
        assert!((loss_mem(&f, &r).unwrap() - 1.0).abs() < 1e-12);
        let r2 = array![[0.0, 0.0], [1.0, 1.0]];
        assert!((loss_mem(&f, &r2).unwrap() - (0.25 + 1.0 + 1.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn align_examples() {
        let k = vec![vec![0.5, 0.5], vec![0.9, 0.1]];
        assert_eq!(loss_align(&k, &k).unwrap(), 0.0);
        let v = vec![vec![0.25, 0.75], vec![0.5, 0.5]];
        let want = kl_divergence(&k[0], &v[0]).unwrap() + kl_divergence(&k[1], &v[1]).unwrap();
        assert!((loss_align(&k, &v).unwrap() - want).abs() < 1e-12);
        let (kr, vr): (Vec<_>, Vec<_>) = (k.iter().rev().cloned().collect(), v.iter().rev().cloned().collect());
        assert!((loss_align(&kr, &vr).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn lip_examples() {
        let v = seq(Array2::zeros((2, 9)));
        assert_eq!(loss_lip(&v, &v, &[0, 2]).unwrap(), 0.0);
        let mut off = Array2::zeros((2, 9));
        off[[0, 3]] = 1.0;
        off[[1, 5]] = -2.0;
        assert_eq!(loss_lip(&v, &seq(off.clone()), &[0, 2]).unwrap(), 0.0);
        off[[1, 7]] = 2.0;
        // one squared error of 4 over 2 frames x 2 lip vertices
        assert!((loss_lip(&v, &seq(off), &[0, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert!(loss_lip(&v, &v, &[]).is_err());
    }

    #[test]
    fn style_examples() {
        assert_eq!(loss_style(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], 0.2).unwrap(), 0.0);
        let l = loss_style(&[0.0, 0.0], &[1.0, 0.0], &[0.5, 0.0], 0.2).unwrap();
        assert!((l - 0.95).abs() < 1e-12);
        let swapped = loss_style(&[0.0, 0.0], &[0.5, 0.0], &[1.0, 0.0], 0.2).unwrap();
        assert_eq!(swapped, 0.0);
    }

    #[test]
    fn totals() {
        let zero = LossBreakdown::default();
        assert_eq!(stage1_total(&zero, DEFAULT_LAMBDA1), 0.0);
        assert_eq!(stage2_total(&zero, &Stage2Weights::default()), 0.0);
        let ones = LossBreakdown {
            mse: 1.0,
            vel: 1.0,
            mem: 1.0,
            align: 1.0,
            lip: 1.0,
            style: 1.0,
            total: 0.0,
        };
        assert!((stage1_total(&ones, DEFAULT_LAMBDA1) - 2.02).abs() < 1e-12);
        assert!((stage2_total(&ones, &Stage2Weights::default()) - 2.02).abs() < 1e-12);
        assert_eq!(stage1_total(&ones, 0.0), 2.0);
        let off = Stage2Weights {
            lambda2: 0.0,
            ..Stage2Weights::default()
        };
        assert_eq!(stage2_total(&ones, &off), 2.0);
    }

    fn pair() -> impl Strategy<Value = (MotionSeq, MotionSeq)> {
        (1usize..6, 1usize..4).prop_flat_map(|(t, v)| {
            let n = t * v * 3;
            (
                prop::collection::vec(-0.05f64..0.05, n),
                prop::collection::vec(-0.05f64..0.05, n),
            )
                .prop_map(move |(a, b)| {
                    (
                        seq(Array2::from_shape_vec((t, v * 3), a).unwrap()),
                        seq(Array2::from_shape_vec((t, v * 3), b).unwrap()),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn reconstruction_losses_are_nonnegative((a, b) in pair(), offset in -0.1f64..0.1) {
            prop_assert!(loss_mse(&a, &b).unwrap() >= 0.0);
            let vel = loss_vel(&a, &b).unwrap();
            prop_assert!(vel >= 0.0);
            prop_assert!(loss_lip(&a, &b, &[0]).unwrap() >= 0.0);
            prop_assert!(loss_mem(a.frames(), b.frames()).unwrap() >= 0.0);
            // a constant offset on the prediction leaves the velocity loss alone
            let moved = seq(b.frames() + offset);
            prop_assert!((loss_vel(&a, &moved).unwrap() - vel).abs() < 1e-12);
        }

        #[test]
        fn style_and_align_are_nonnegative(
            f in prop::collection::vec(-2.0f64..2.0, 3),
            p in prop::collection::vec(-2.0f64..2.0, 3),
            n in prop::collection::vec(-2.0f64..2.0, 3),
            margin in 0.0f64..1.0,
            raw in prop::collection::vec(0.0f64..1.0, 8),
        ) {
            prop_assert!(loss_style(&f, &p, &n, margin).unwrap() >= 0.0);
            let norm = |x: &[f64]| {
                let s: f64 = x.iter().map(|v| v + 1e-6).sum();
                x.iter().map(|v| (v + 1e-6) / s).collect::<Vec<_>>()
            };
            let k = vec![norm(&raw[..4])];
            let v = vec![norm(&raw[4..])];
            prop_assert!(loss_align(&k, &v).unwrap() >= -1e-12);
        }

        #[test]
        fn totals_recompute_from_parts(parts in prop::collection::vec(0.0f64..10.0, 6), l in 0.0f64..1.0) {
            let b = LossBreakdown { mse: parts[0], vel: parts[1], mem: parts[2], align: parts[3], lip: parts[4], style: parts[5], total: 0.0 };
            let want1 = parts[0] + parts[1] + l * (parts[2] + parts[3]);
            prop_assert!((stage1_total(&b, l) - want1).abs() < 1e-9);
            let w = Stage2Weights { lambda2: l, lip: 1.0, style: 1.0 };
            let want2 = parts[0] + parts[1] + l * (parts[4] + parts[5]);
            prop_assert!((stage2_total(&b, &w) - want2).abs() < 1e-9);
        }
    }
}

//! Vertex and lip error metrics plus dynamic time warping.
//!
//! Errors are means over frames and vertices of the L2 vertex position
//! error, and LDTW is normalized by the optimal path length, so absolute
//! values are only comparable between runs of this crate.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};
use crate::synthcorpus::MotionSeq;

fn check_shapes(reference: &MotionSeq, hyp: &MotionSeq) -> Result<()> {
    if reference.frames().dim() != hyp.frames().dim() {
        return Err(Error::ShapeMismatch {
            name: "motion".into(),
            expected: reference.frames().shape().to_vec(),
            found: hyp.frames().shape().to_vec(),
        });
    }
    Ok(())
}

fn check_mask(mask: &[usize], vertices: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::invalid("lip mask is empty"));
    }
    if let Some(&v) = mask.iter().find(|&&v| v >= vertices) {
        return Err(Error::invalid(format!("lip mask vertex {v} out of range for {vertices} vertices")));
    }
    Ok(())
}

fn vertex_error(reference: &MotionSeq, hyp: &MotionSeq, t: usize, v: usize) -> f64 {
    let a = reference.vertex(t, v);
    let b = hyp.vertex(t, v);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn mean_error(reference: &MotionSeq, hyp: &MotionSeq, vertices: &[usize]) -> f64 {
    let t = reference.num_frames();
    if t == 0 {
        return 0.0;
    }
    let total: f64 = (0..t)
        .map(|f| vertices.iter().map(|&v| vertex_error(reference, hyp, f, v)).sum::<f64>())
        .sum();
    total / (t * vertices.len()) as f64
}

/// Mean over frames and all vertices of the vertex position error.
pub fn fve(reference: &MotionSeq, hyp: &MotionSeq) -> Result<f64> {
    check_shapes(reference, hyp)?;
    let all: Vec<usize> = (0..reference.num_vertices()).collect();
    if all.is_empty() {
        return Ok(0.0);
    }
    Ok(mean_error(reference, hyp, &all))
}

/// [`fve`] restricted to the lip vertices.
pub fn lve(reference: &MotionSeq, hyp: &MotionSeq, lip_mask: &[usize]) -> Result<f64> {
    check_shapes(reference, hyp)?;
    check_mask(lip_mask, reference.num_vertices())?;
    Ok(mean_error(reference, hyp, lip_mask))
}

/// Per-frame maximum lip vertex error, averaged over frames.
pub fn lip_max(reference: &MotionSeq, hyp: &MotionSeq, lip_mask: &[usize]) -> Result<f64> {
    check_shapes(reference, hyp)?;
    check_mask(lip_mask, reference.num_vertices())?;
    let t = reference.num_frames();
    if t == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..t)
        .map(|f| {
            lip_mask
                .iter()
                .map(|&v| vertex_error(reference, hyp, f, v))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / t as f64)
}

fn l2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Cost and number of cells of an optimal warping path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    pub path_len: usize,
}

/// Dynamic time warping with L2 local cost and steps (1,0), (0,1), (1,1).
/// Among optimal paths of equal cost the shortest is reported.
pub fn dtw(a: &Array2<f64>, b: &Array2<f64>) -> Result<DtwResult> {
    let (t1, t2) = (a.nrows(), b.nrows());
    if t1 == 0 || t2 == 0 {
        return Err(Error::invalid("dtw of an empty sequence"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "dtw: feature widths {} and {} differ",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut acc = vec![(f64::INFINITY, usize::MAX); t1 * t2];
    for i in 0..t1 {
        for j in 0..t2 {
            let local = l2(a.row(i), b.row(j));
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                let mut consider = |c: (f64, usize)| {
                    if c.0 < best.0 || (c.0 == best.0 && c.1 < best.1) {
                        best = c;
                    }
                };
                if i > 0 {
                    consider(acc[(i - 1) * t2 + j]);
                }
                if j > 0 {
                    consider(acc[i * t2 + j - 1]);
                }
                if i > 0 && j > 0 {
                    consider(acc[(i - 1) * t2 + j - 1]);
                }
                best
            };
            acc[i * t2 + j] = (best.0 + local, best.1 + 1);
        }
    }
    let (cost, path_len) = acc[t1 * t2 - 1];
    Ok(DtwResult { cost, path_len })
}

/// Accumulated cost of the optimal warping path.
pub fn dtw_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    dtw(a, b).map(|r| r.cost)
}

fn lip_trajectory(m: &MotionSeq, lip_mask: &[usize]) -> Array2<f64> {
    let cols: Vec<usize> = lip_mask.iter().flat_map(|&v| 3 * v..3 * v + 3).collect();
    m.frames().select(ndarray::Axis(1), &cols)
}

/// DTW over the flattened lip vertex trajectories, divided by the optimal
/// path length.
pub fn ldtw(reference: &MotionSeq, hyp: &MotionSeq, lip_mask: &[usize]) -> Result<f64> {
    if reference.num_vertices() != hyp.num_vertices() {
        return Err(Error::invalid(format!(
            "ldtw: vertex counts {} and {} differ",
            reference.num_vertices(),
            hyp.num_vertices()
        )));
    }
    check_mask(lip_mask, reference.num_vertices())?;
    let r = dtw(&lip_trajectory(reference, lip_mask), &lip_trajectory(hyp, lip_mask))?;
    Ok(r.cost / r.path_len as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub fve: f64,
    pub lve: f64,
    pub ldtw: f64,
    pub lip_max: f64,
}

impl ClipMetrics {
    pub fn compute(clip_id: &str, reference: &MotionSeq, hyp: &MotionSeq, lip_mask: &[usize]) -> Result<Self> {
        Ok(Self {
            clip_id: clip_id.to_owned(),
            fve: fve(reference, hyp)?,
            lve: lve(reference, hyp, lip_mask)?,
            ldtw: ldtw(reference, hyp, lip_mask)?,
            lip_max: lip_max(reference, hyp, lip_mask)?,
        })
    }
}

/// Aggregate metrics; every aggregate is the mean of the per-clip rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fve: f64,
    pub lve: f64,
    pub ldtw: f64,
    pub lip_max: f64,
    pub clips: Vec<ClipMetrics>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "clip_id,fve,lve,ldtw,lip_max";

    pub fn from_clips(clips: Vec<ClipMetrics>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::invalid("metric report needs at least one clip"));
        }
        let n = clips.len() as f64;
        let mean = |f: fn(&ClipMetrics) -> f64| clips.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            fve: mean(|c| c.fve),
            lve: mean(|c| c.lve),
            ldtw: mean(|c| c.ldtw),
            lip_max: mean(|c| c.lip_max),
            clips,
        })
    }

    /// Evaluates `(clip_id, reference, hypothesis)` triples in parallel;
    /// rows keep the input order.
    pub fn evaluate(pairs: &[(String, MotionSeq, MotionSeq)], lip_mask: &[usize]) -> Result<Self> {
        let rows = pairs
            .par_iter()
            .map(|(id, r, h)| ClipMetrics::compute(id, r, h, lip_mask))
            .collect::<Result<Vec<_>>>()?;
        Self::from_clips(rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per clip followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        let row = |id: &str, a: f64, b: f64, c: f64, d: f64| format!("{id},{a:e},{b:e},{c:e},{d:e}\n");
        for c in &self.clips {
            s.push_str(&row(&c.clip_id, c.fve, c.lve, c.ldtw, c.lip_max));
        }
        s.push_str(&row("mean", self.fve, self.lve, self.ldtw, self.lip_max));
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv` next to each other.
    pub fn save(&self, stem: &Path) -> Result<()> {
        atomic_write(&stem.with_extension("json"), self.to_json()?.as_bytes())?;
        atomic_write(&stem.with_extension("csv"), self.to_csv().as_bytes())
    }
}

/// Reads a lip mask: one vertex index per line, `#` comments allowed.
pub fn load_lip_mask(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "lip mask is not UTF-8"))?;
    let mut mask = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v = line
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: `{line}` is not a vertex index", i + 1)))?;
        mask.push(v);
    }
    if mask.is_empty() {
        return Err(Error::format(path, "lip mask is empty"));
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-12;

    fn seq(frames: Array2<f64>) -> MotionSeq {
        MotionSeq::new(frames).unwrap()
    }

    fn random_seq(rng: &mut impl Rng, t: usize, v: usize) -> MotionSeq {
        seq(Array2::from_shape_simple_fn((t, 3 * v), || rng.gen_range(-0.05..0.05)))
    }

    /// Minimum accumulated cost over every monotone alignment path.
    fn brute_force_dtw(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        fn walk(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize) -> f64 {
            let here = l2(a.row(i), b.row(j));
            if i == a.nrows() - 1 && j == b.nrows() - 1 {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.nrows() {
                best = best.min(walk(a, b, i + 1, j));
            }
            if j + 1 < b.nrows() {
                best = best.min(walk(a, b, i, j + 1));
            }
            if i + 1 < a.nrows() && j + 1 < b.nrows() {
                best = best.min(walk(a, b, i + 1, j + 1));
            }
            here + best
        }
        walk(a, b, 0, 0)
    }

    #[test]
    fn identical_sequences_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_seq(&mut rng, 6, 4);
        let mask = [0, 2];
        assert_eq!(fve(&m, &m).unwrap(), 0.0);
        assert_eq!(lve(&m, &m, &mask).unwrap(), 0.0);
        assert_eq!(lip_max(&m, &m, &mask).unwrap(), 0.0);
        assert_eq!(ldtw(&m, &m, &mask).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset_equals_its_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_seq(&mut rng, 5, 3);
        let h = seq(r.frames().mapv(|v| v) + &Array2::from_shape_fn((5, 9), |(_, c)| if c % 3 == 0 { 0.001 } else { 0.0 }));
        assert!((fve(&r, &h).unwrap() - 0.001).abs() < TOL);
    }

    #[test]
    fn fve_matches_direct_oracle() {
        let r = array![[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0], [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]];
        let h = array![[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 3.0, 1.0], [1.0, 1.0, 0.0, 0.0, 4.0, 3.0, 2.0, 0.0, 0.0]];
        // errors: frame 0 → 1, 0, 3; frame 1 → 0, 5, 0
        let (r, h) = (seq(r), seq(h));
        assert!((fve(&r, &h).unwrap() - 9.0 / 6.0).abs() < TOL);
        assert!((lve(&r, &h, &[1, 2]).unwrap() - 8.0 / 4.0).abs() < TOL);
        assert_eq!(lve(&r, &h, &[0]).unwrap(), 0.5);
        assert!((lip_max(&r, &h, &[0, 1, 2]).unwrap() - 4.0).abs() < TOL);
    }

    #[test]
    fn errors_outside_the_mask_do_not_count() {
        let r = seq(Array2::zeros((3, 6)));
        let mut h = Array2::zeros((3, 6));
        h[[1, 4]] = 0.3;
        let h = seq(h);
        assert_eq!(lve(&r, &h, &[0]).unwrap(), 0.0);
        assert!(fve(&r, &h).unwrap() > 0.0);
    }

    #[test]
    fn single_lip_spike_averages_over_frames() {
        let t = 7;
        let r = seq(Array2::zeros((t, 9)));
        let mut h = Array2::zeros((t, 9));
        h[[3, 4]] = 0.002;
        let h = seq(h);
        assert!((lip_max(&r, &h, &[0, 1]).unwrap() - 0.002 / t as f64).abs() < TOL);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let a = seq(Array2::zeros((3, 6)));
        let b = seq(Array2::zeros((4, 6)));
        assert!(matches!(fve(&a, &b), Err(Error::ShapeMismatch { .. })));
        assert!(lve(&a, &a, &[]).is_err());
        assert!(lip_max(&a, &a, &[5]).is_err());
        assert!(dtw_distance(&Array2::zeros((0, 2)), &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn dtw_matches_exhaustive_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = rng.gen_range(1..=3);
            let a = Array2::from_shape_simple_fn((rng.gen_range(1..=5), d), || rng.gen_range(-1.0..1.0));
            let b = Array2::from_shape_simple_fn((rng.gen_range(1..=5), d), || rng.gen_range(-1.0..1.0));
            let got = dtw_distance(&a, &b).unwrap();
            assert!((got - brute_force_dtw(&a, &b)).abs() < 1e-9);
            assert!((got - dtw_distance(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frames_reduce_to_l2() {
        let a = array![[0.0, 3.0]];
        let b = array![[4.0, 0.0]];
        assert_eq!(dtw(&a, &b).unwrap(), DtwResult { cost: 5.0, path_len: 1 });
    }

    #[test]
    fn warping_absorbs_a_one_frame_lag() {
        let t = 60;
        let r = Array2::from_shape_fn((t, 6), |(f, c)| 0.01 * ((f as f64) * 0.7 + c as f64).sin());
        let mut h = r.clone();
        for f in 1..t {
            h.row_mut(f).assign(&r.row(f - 1));
        }
        let (r, h) = (seq(r), seq(h));
        let mask = [0, 1];
        let warped = ldtw(&r, &h, &mask).unwrap();
        let plain = lve(&r, &h, &mask).unwrap();
        assert!(warped < 0.1 * plain, "ldtw {warped} vs lve {plain}");
    }

    #[test]
    fn report_aggregates_are_row_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs: Vec<_> = (0..3)
            .map(|i| (format!("c{i}"), random_seq(&mut rng, 4 + i, 3), random_seq(&mut rng, 4 + i, 3)))
            .collect();
        let report = MetricReport::evaluate(&pairs, &[0, 1]).unwrap();
        let mean_lve = report.clips.iter().map(|c| c.lve).sum::<f64>() / 3.0;
        assert!((report.lve - mean_lve).abs() < TOL);
        assert_eq!(report.clips[2].clip_id, "c2");
        assert_eq!(report.to_csv().lines().count(), 5);
        let back: MetricReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn lip_mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.txt");
        std::fs::write(&p, "# lips\n0\n3\n\n5\n").unwrap();
        assert_eq!(load_lip_mask(&p).unwrap(), vec![0, 3, 5]);
        std::fs::write(&p, "x\n").unwrap();
        assert!(matches!(load_lip_mask(&p), Err(Error::Format { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn lip_max_bounds_lve(seed in any::<u64>(), t in 1usize..6, v in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_seq(&mut rng, t, v);
            let b = random_seq(&mut rng, t, v);
            let mask: Vec<usize> = (0..v).filter(|_| rng.gen_bool(0.6)).collect();
            let mask = if mask.is_empty() { vec![0] } else { mask };
            let mean = lve(&a, &b, &mask).unwrap();
            prop_assert!(lip_max(&a, &b, &mask).unwrap() >= mean - TOL);
            prop_assert!((mean - lve(&b, &a, &mask).unwrap()).abs() < TOL);
        }

        #[test]
        fn dtw_never_exceeds_the_diagonal(seed in any::<u64>(), t in 1usize..8, d in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_simple_fn((t, d), || rng.gen_range(-1.0..1.0));
            let b = Array2::from_shape_simple_fn((t, d), || rng.gen_range(-1.0..1.0));
            let diagonal: f64 = (0..t).map(|i| l2(a.row(i), b.row(i))).sum();
            prop_assert!(dtw_distance(&a, &b).unwrap() <= diagonal + TOL);
        }
    }
}

use ndarray::Array2;

use crate::error::{Error, Result};

use super::tape::{KL_EPS, ZERO_NORM};

pub(crate) fn softmax_unchecked(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Numerically shifted softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input contains non-finite values"));
    }
    Ok(softmax_unchecked(x))
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().copied().map(sigmoid_scalar).collect()
}

/// Cosine similarity with the degenerate-query flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input had (near) zero norm; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cosine_similarity: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        log::warn!("cosine similarity of a zero-norm vector; returning 0");
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    Ok(Cosine {
        value: dot.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub(crate) fn kl_term(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * (p.ln() - q.max(KL_EPS).ln())
    } else {
        0.0
    }
}

/// `Σ p·ln(p / max(q, ε))`, taking `0·ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "kl_divergence: lengths {} and {} differ",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter().zip(q).map(|(&a, &b)| kl_term(a, b)).sum())
}

/// Row-stochastic `T_out×T_in` matrix resampling a sequence in time with
/// endpoints aligned: output row `i` samples input position
/// `i·(T_in−1)/(T_out−1)`.
pub fn interp_matrix(t_in: usize, t_out: usize) -> Result<Array2<f64>> {
    if t_in == 0 || t_out == 0 {
        return Err(Error::invalid("linear interpolation needs non-empty input and output"));
    }
    let mut m = Array2::zeros((t_out, t_in));
    if t_in == 1 || t_out == 1 {
        m.column_mut(0).fill(1.0);
        return Ok(m);
    }
    let ratio = (t_in - 1) as f64 / (t_out - 1) as f64;
    for i in 0..t_out {
        if i == t_out - 1 {
            m[[i, t_in - 1]] = 1.0;
            continue;
        }
        let pos = i as f64 * ratio;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if frac == 0.0 || lo + 1 >= t_in {
            m[[i, lo.min(t_in - 1)]] = 1.0;
        } else {
            m[[i, lo]] = 1.0 - frac;
            m[[i, lo + 1]] = frac;
        }
    }
    Ok(m)
}

/// Linear resampling of a `T_in×d` sequence to `T_out` rows.
pub fn linear_interp_time(seq: &Array2<f64>, t_out: usize) -> Result<Array2<f64>> {
    if seq.nrows() == t_out {
        return Ok(seq.clone());
    }
    Ok(interp_matrix(seq.nrows(), t_out)?.dot(seq))
}

//! Key-value motion memory: value and key addressing, recall and
//! audio-driven stylization of the slot bank.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{init_linear, linear};
use crate::numerics::{softmax, Graph, Var, ZERO_NORM};
use crate::params::{Bound, ParamGroup, ParamStore};

pub const MEMORY_SLOTS: &str = "memory.slots";
pub const SLOT_SCORES: &str = "style_projection.slots";
pub const STYLE_GAIN: &str = "style_projection.gain";

/// Bias of `ψ→1` at initialization; with zero `ψ'` weights the style
/// weights start at `sigmoid(0)·2 = 1`, a neutral stylization.
pub const NEUTRAL_GAIN_BIAS: f64 = 2.0;

/// `n×c` slot matrix with the value-addressing temperature `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    slots: Array2<f64>,
    kappa: f64,
}

impl MemoryBank {
    pub fn new(slots: Array2<f64>, kappa: f64) -> Result<Self> {
        if slots.nrows() < 2 {
            return Err(Error::invalid("a memory bank needs at least 2 slots"));
        }
        if slots.iter().any(|v| !v.is_finite()) || !kappa.is_finite() {
            return Err(Error::invalid("memory bank must be finite"));
        }
        Ok(Self { slots, kappa })
    }

    /// I.i.d. uniform slots in `±1/√c`, redrawn if any slot is degenerate.
    pub fn random(n: usize, c: usize, kappa: f64, rng: &mut impl Rng) -> Result<Self> {
        let limit = 1.0 / (c as f64).sqrt();
        loop {
            let slots = Array2::from_shape_simple_fn((n, c), || rng.gen_range(-limit..limit));
            if slots.outer_iter().all(|r| r.dot(&r).sqrt() > ZERO_NORM) {
                return Self::new(slots, kappa);
            }
        }
    }

    pub fn slots(&self) -> &Array2<f64> {
        &self.slots
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn num_slots(&self) -> usize {
        self.slots.nrows()
    }

    pub fn channels(&self) -> usize {
        self.slots.ncols()
    }

    pub fn from_params(params: &ParamStore, kappa: f64) -> Result<Self> {
        let slots = params
            .get(MEMORY_SLOTS)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{MEMORY_SLOTS}`")))?;
        Self::new(slots.clone(), kappa)
    }
}

/// Probability vector over slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressVec {
    pub weights: Vec<f64>,
}

/// Per-slot stylization weights; any finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleWeights {
    pub weights: Vec<f64>,
}

pub fn init_memory(store: &mut ParamStore, n: usize, c: usize, kappa: f64, rng: &mut impl Rng) -> Result<()> {
    let bank = MemoryBank::random(n, c, kappa, rng)?;
    store.insert(MEMORY_SLOTS, ParamGroup::Memory, bank.slots)
}

/// `ψ'→n` and `ψ→1`, initialized to the neutral stylization.
pub fn init_style_projection(store: &mut ParamStore, c: usize, n: usize, rng: &mut impl Rng) -> Result<()> {
    let group = ParamGroup::StyleProjection;
    init_linear(store, SLOT_SCORES, group, c, n, rng)?;
    init_linear(store, STYLE_GAIN, group, c, 1, rng)?;
    store.set(&format!("{SLOT_SCORES}.weight"), Array2::zeros((c, n)))?;
    store.set(&format!("{STYLE_GAIN}.weight"), Array2::zeros((c, 1)))?;
    store.set(&format!("{STYLE_GAIN}.bias"), Array2::from_elem((1, 1), NEUTRAL_GAIN_BIAS))
}

/// `softmax_i(κ·cos(s_i, f_m^t))` for every row of the `T×c` query.
pub fn value_address_graph(g: &mut Graph, slots: Var, query: Var, kappa: f64) -> Var {
    let q = g.normalize_rows(query);
    let s = g.normalize_rows(slots);
    let cos = g.matmul_nt(q, s);
    let logits = g.scale(cos, kappa);
    g.softmax_rows(logits, false)
}

/// Direct softmax of the projected text representation, no cosine or `κ`.
pub fn key_address_graph(g: &mut Graph, f_txt: Var) -> Var {
    g.softmax_rows(f_txt, false)
}

/// `Σ_i w_i·s_i` per row of the `T×n` address.
pub fn recall_graph(g: &mut Graph, address: Var, slots: Var) -> Var {
    g.matmul(address, slots)
}

/// `sigmoid(ψ'→n(f_s))·ψ→1(f_s)`, `1×c → 1×n`.
pub fn style_weights_graph(g: &mut Graph, b: &Bound, f_s: Var) -> Var {
    let scores = linear(g, b, SLOT_SCORES, f_s);
    let gates = g.sigmoid(scores);
    let gain = linear(g, b, STYLE_GAIN, f_s);
    g.mul_scalar(gates, gain)
}

/// Slot `i` scaled by `w_i`.
pub fn stylize_graph(g: &mut Graph, slots: Var, weights: Var) -> Var {
    g.scale_rows(slots, weights)
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!("{what}: length {got}, expected {want}")));
    }
    Ok(())
}

pub fn address_by_value(f_m: &[f64], bank: &MemoryBank) -> Result<AddressVec> {
    check_len("address_by_value", f_m.len(), bank.channels())?;
    if f_m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("address_by_value: non-finite query"));
    }
    let mut g = Graph::new();
    let slots = g.constant(bank.slots.clone());
    let q = g.constant(Array2::from_shape_vec((1, f_m.len()), f_m.to_vec()).expect("row"));
    let a = value_address_graph(&mut g, slots, q, bank.kappa);
    Ok(AddressVec {
        weights: g.value(a).row(0).to_vec(),
    })
}

pub fn address_by_key(f_txt: &[f64]) -> Result<AddressVec> {
    Ok(AddressVec {
        weights: softmax(f_txt)?,
    })
}

fn recall(addr: &AddressVec, bank: &MemoryBank, what: &str) -> Result<Vec<f64>> {
    check_len(what, addr.weights.len(), bank.num_slots())?;
    let w = ndarray::ArrayView1::from(&addr.weights);
    Ok(w.dot(&bank.slots).to_vec())
}

pub fn recall_value(addr: &AddressVec, bank: &MemoryBank) -> Result<Vec<f64>> {
    recall(addr, bank, "recall_value")
}

pub fn recall_key(addr: &AddressVec, bank: &MemoryBank) -> Result<Vec<f64>> {
    recall(addr, bank, "recall_key")
}

pub fn style_weights(f_s: &[f64], params: &ParamStore) -> Result<StyleWeights> {
    let w = params
        .get(&format!("{SLOT_SCORES}.weight"))
        .ok_or_else(|| Error::invalid("style projection parameters missing"))?;
    check_len("style_weights", f_s.len(), w.nrows())?;
    if f_s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("style_weights: non-finite style feature"));
    }
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_, _| false);
    let f = g.constant(Array2::from_shape_vec((1, f_s.len()), f_s.to_vec()).expect("row"));
    let out = style_weights_graph(&mut g, &b, f);
    Ok(StyleWeights {
        weights: g.value(out).row(0).to_vec(),
    })
}

/// New bank with slot `i` multiplied by `w_i`; the input is untouched.
pub fn stylize(bank: &MemoryBank, w: &StyleWeights) -> Result<MemoryBank> {
    check_len("stylize", w.weights.len(), bank.num_slots())?;
    let mut slots = bank.slots.clone();
    for (mut row, &wi) in slots.outer_iter_mut().zip(&w.weights) {
        row *= wi;
    }
    Ok(MemoryBank {
        slots,
        kappa: bank.kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-9;

    fn hand_bank() -> MemoryBank {
        MemoryBank::new(array![[1.0, 0.0, 2.0], [0.0, -1.0, 1.0], [3.0, 1.0, 0.0]], 2.0).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_kappa_is_uniform() {
        let mut bank = hand_bank();
        bank.kappa = 0.0;
        let a = address_by_value(&[0.3, -2.0, 1.0], &bank).unwrap();
        assert!(a.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < TOL));
    }

    #[test]
    fn matching_slot_saturates() {
        let bank = MemoryBank::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 100.0).unwrap();
        let a = address_by_value(&[0.0, 2.0, 0.0], &bank).unwrap();
        assert!(a.weights[1] > 0.999);
    }

    #[test]
    fn value_address_matches_brute_force() {
        let bank = hand_bank();
        let q = [1.0, 2.0, -0.5];
        let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let logits: Vec<f64> = bank
            .slots()
            .outer_iter()
            .map(|s| {
                let ns = s.dot(&s).sqrt();
                bank.kappa() * s.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (ns * nq)
            })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let want: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        assert!(close(&address_by_value(&q, &bank).unwrap().weights, &want, TOL));
    }

    #[test]
    fn zero_query_is_uniform() {
        let a = address_by_value(&[0.0; 3], &hand_bank()).unwrap();
        assert!(a.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < TOL));
    }

    #[test]
    fn recall_examples() {
        let bank = hand_bank();
        let one_hot = AddressVec { weights: vec![0.0, 1.0, 0.0] };
        assert_eq!(recall_value(&one_hot, &bank).unwrap(), vec![0.0, -1.0, 1.0]);
        let uniform = AddressVec { weights: vec![1.0 / 3.0; 3] };
        assert!(close(&recall_key(&uniform, &bank).unwrap(), &[4.0 / 3.0, 0.0, 1.0], TOL));
        let mixed = AddressVec { weights: vec![0.2, 0.3, 0.5] };
        let want = [0.2 + 1.5, -0.3 + 0.5, 0.4 + 0.3];
        assert!(close(&recall_value(&mixed, &bank).unwrap(), &want, TOL));
        assert!(recall_value(&AddressVec { weights: vec![1.0] }, &bank).is_err());
    }

    #[test]
    fn key_address_examples() {
        let z = address_by_key(&[0.0; 4]).unwrap();
        assert!(z.weights.iter().all(|&w| (w - 0.25).abs() < TOL));
        let x = [0.5, -1.0, 2.0, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 7.0).collect();
        let a = address_by_key(&x).unwrap();
        assert!(close(&a.weights, &address_by_key(&shifted).unwrap().weights, TOL));
        let z: f64 = x.iter().map(|v: &f64| v.exp()).sum();
        let want: Vec<f64> = x.iter().map(|v| v.exp() / z).collect();
        assert!(close(&a.weights, &want, TOL));
    }

    fn projection_store(c: usize, n: usize) -> ParamStore {
        let mut s = ParamStore::new();
        init_style_projection(&mut s, c, n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        s
    }

    #[test]
    fn style_weight_examples() {
        let mut s = projection_store(2, 3);
        let neutral = style_weights(&[0.7, -1.1], &s).unwrap();
        assert_eq!(neutral.weights, vec![1.0; 3]);
        s.set("style_projection.gain.bias", array![[0.0]]).unwrap();
        assert_eq!(style_weights(&[0.7, -1.1], &s).unwrap().weights, vec![0.0; 3]);

        s.set("style_projection.slots.weight", array![[1.0, 0.0, -2.0], [0.5, 1.0, 0.0]]).unwrap();
        s.set("style_projection.slots.bias", array![[0.1, 0.0, 0.2]]).unwrap();
        s.set("style_projection.gain.weight", array![[2.0], [-1.0]]).unwrap();
        s.set("style_projection.gain.bias", array![[0.5]]).unwrap();
        let f = [0.4, -0.6];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let gain = 2.0 * 0.4 + 0.6 + 0.5;
        let want = [
            sig(0.4 - 0.3 + 0.1) * gain,
            sig(-0.6) * gain,
            sig(-0.8 + 0.2) * gain,
        ];
        assert!(close(&style_weights(&f, &s).unwrap().weights, &want, TOL));
    }

    #[test]
    fn stylize_examples() {
        let bank = MemoryBank::new(array![[1.0, -2.0], [0.5, 3.0]], 16.0).unwrap();
        let same = stylize(&bank, &StyleWeights { weights: vec![1.0, 1.0] }).unwrap();
        assert_eq!(same, bank);
        let zero = stylize(&bank, &StyleWeights { weights: vec![0.0, 0.0] }).unwrap();
        assert!(zero.slots().iter().all(|&v| v == 0.0));
        let scaled = stylize(&bank, &StyleWeights { weights: vec![2.0, 0.5] }).unwrap();
        assert_eq!(scaled.slots(), &array![[2.0, -4.0], [0.25, 1.5]]);
        assert_eq!(bank.slots(), &array![[1.0, -2.0], [0.5, 3.0]]);
    }

    #[test]
    fn random_bank_has_no_zero_slot() {
        let bank = MemoryBank::random(32, 64, 16.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let limit = 1.0 / 8.0;
        assert!(bank.slots().iter().all(|v| v.abs() <= limit));
        // a query equal to one of the random slots takes most of the mass
        for i in 0..32 {
            let q = bank.slots().row(i).to_vec();
            assert!(address_by_value(&q, &bank).unwrap().weights[i] > 0.95);
        }
        assert!(MemoryBank::new(array![[1.0, 0.0]], 1.0).is_err());
    }

    fn arb_bank() -> impl Strategy<Value = MemoryBank> {
        (2usize..5, 1usize..5).prop_flat_map(|(n, c)| {
            (prop::collection::vec(-2.0f64..2.0, n * c), 0.0f64..30.0).prop_map(move |(v, k)| {
                MemoryBank::new(Array2::from_shape_vec((n, c), v).unwrap(), k).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn value_address_is_scale_invariant(
            bank in arb_bank(),
            seed in prop::collection::vec(-3.0f64..3.0, 4),
            alpha in 0.01f64..100.0,
        ) {
            let q: Vec<f64> = seed.into_iter().take(bank.channels()).collect();
            let scaled: Vec<f64> = q.iter().map(|v| v * alpha).collect();
            let a = address_by_value(&q, &bank).unwrap();
            let b = address_by_value(&scaled, &bank).unwrap();
            prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < TOL);
            prop_assert!(close(&a.weights, &b.weights, TOL));
        }

        #[test]
        fn recall_stays_in_slot_hull(
            bank in arb_bank(),
            raw in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let addr = address_by_key(&raw[..bank.num_slots()]).unwrap();
            let r = recall_key(&addr, &bank).unwrap();
            for (j, v) in r.iter().enumerate() {
                let col = bank.slots().column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - TOL && *v <= hi + TOL);
            }
        }

        #[test]
        fn stylized_recall_composes(
            bank in arb_bank(),
            raw in prop::collection::vec(-5.0f64..5.0, 4),
            w in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let n = bank.num_slots();
            let addr = address_by_key(&raw[..n]).unwrap();
            let sw = StyleWeights { weights: w[..n].to_vec() };
            let got = recall_key(&addr, &stylize(&bank, &sw).unwrap()).unwrap();
            for (j, g) in got.iter().enumerate() {
                let want: f64 = (0..n).map(|i| addr.weights[i] * sw.weights[i] * bank.slots()[[i, j]]).sum();
                prop_assert!((g - want).abs() < TOL);
            }
        }
    }
}

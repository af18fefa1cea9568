//! Central finite-difference verification of every backward pass.
//!
//! Each suite builds a random instance in 64-bit precision, contracts the
//! layer output with a random upstream tensor `R` to get a scalar objective
//! `L = Σ R ∘ out`, and compares the analytic gradient of every input and
//! parameter slot with `(L(x + h) − L(x − h)) / 2h`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::data::{AvailabilityMask, Caption, VideoSample};
use crate::error::Result;
use crate::init::{self, SeededRng};
use crate::layers::{maxpool_backward, maxpool_forward, GateHead, GatedEmbeddingUnit, NetVladAggregator};
use crate::loss::{ranking_loss, ranking_loss_grad, LossConfig};
use crate::model::{mixture_backward, mixture_forward, Aggregation, MeeParams, ModalityConfig, ModelConfig};
use crate::param::ParameterRegistry;
use crate::tensor::{dot, softmax_backward, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients that are zero
/// analytically are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Deliberate backward-pass bugs used to show the checker catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the gated embedding unit's `W1` gradient.
    GeuSignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotReport {
    pub layer: &'static str,
    pub slot: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl SlotReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= REL_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub slots: Vec<SlotReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.slots.iter().all(SlotReport::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SlotReport> {
        self.slots.iter().filter(|s| !s.passed())
    }

    fn merge(&mut self, other: GradcheckReport) {
        for s in other.slots {
            match self
                .slots
                .iter_mut()
                .find(|x| x.layer == s.layer && x.slot == s.slot)
            {
                Some(x) => {
                    x.max_rel_error = x.max_rel_error.max(s.max_rel_error);
                    x.checked += s.checked;
                }
                None => self.slots.push(s),
            }
        }
    }
}

/// Numeric gradient of `eval` over `n` coordinates; `eval(i, δ)` returns the
/// objective with coordinate `i` shifted by `δ`.
pub fn numeric_gradient(n: usize, mut eval: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    (0..n)
        .map(|i| (eval(i, FD_STEP) - eval(i, -FD_STEP)) / (2.0 * FD_STEP))
        .collect()
}

fn compare(layer: &'static str, slot: impl Into<String>, analytic: &[f64], numeric: &[f64]) -> SlotReport {
    let max_rel_error = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    SlotReport {
        layer,
        slot: slot.into(),
        max_rel_error,
        checked: analytic.len(),
    }
}

fn shifted(t: &Tensor<f64>, i: usize, d: f64) -> Tensor<f64> {
    let mut t = t.clone();
    t.data_mut()[i] += d;
    t
}

fn contract(r: &Tensor<f64>, out: &Tensor<f64>) -> f64 {
    dot(r.data(), out.data())
}

pub fn check_geu(seed: u64, fault: Option<Fault>) -> Result<GradcheckReport> {
    let mut rng = init::rng(seed);
    let unit = GatedEmbeddingUnit::<f64>::new("geu", 5, 4, &mut rng);
    // Move biases off zero so every slot is exercised in general position.
    let mut unit = unit;
    unit.b1.value = init::normal(&mut rng, &[4], 0.5);
    unit.b2.value = init::normal(&mut rng, &[4], 0.5);
    let x = init::normal(&mut rng, &[3, 5], 1.0);
    let r = init::normal(&mut rng, &[3, 4], 1.0);
    let cache = unit.forward(&x)?;
    let mut g = unit.backward(&cache, &r)?;
    if fault == Some(Fault::GeuSignFlip) {
        g.w1.scale(-1.0);
    }
    let obj = |u: &GatedEmbeddingUnit<f64>, x: &Tensor<f64>| contract(&r, u.forward(x).expect("shapes fixed").output());
    let mut out = GradcheckReport::default();
    out.slots.push(compare("geu", "input", g.input.data(), &numeric_gradient(x.len(), |i, d| obj(&unit, &shifted(&x, i, d)))));
    for (slot, grad) in [("w1", &g.w1), ("b1", &g.b1), ("w2", &g.w2), ("b2", &g.b2)] {
        let numeric = numeric_gradient(grad.len(), |i, d| {
            let mut u = unit.clone();
            let p = match slot {
                "w1" => &mut u.w1,
                "b1" => &mut u.b1,
                "w2" => &mut u.w2,
                _ => &mut u.b2,
            };
            p.value.data_mut()[i] += d;
            obj(&u, &x)
        });
        out.slots.push(compare("geu", slot, grad.data(), &numeric));
    }
    Ok(out)
}

pub fn check_netvlad(seed: u64) -> Result<GradcheckReport> {
    let mut rng = init::rng(seed);
    let mut agg = NetVladAggregator::<f64>::new("vlad", 3, 4, &mut rng);
    agg.assign_b.value = init::normal(&mut rng, &[3], 0.5);
    let x = init::normal(&mut rng, &[5, 4], 1.0);
    let r = init::normal(&mut rng, &[12], 1.0);
    let cache = agg.forward(&x)?;
    let g = agg.backward(&x, &cache, &r)?;
    let obj = |a: &NetVladAggregator<f64>, x: &Tensor<f64>| contract(&r, a.forward(x).expect("shapes fixed").output());
    let mut out = GradcheckReport::default();
    out.slots.push(compare("netvlad", "input", g.input.data(), &numeric_gradient(x.len(), |i, d| obj(&agg, &shifted(&x, i, d)))));
    for (slot, grad) in [("centers", &g.centers), ("assign_w", &g.assign_w), ("assign_b", &g.assign_b)] {
        let numeric = numeric_gradient(grad.len(), |i, d| {
            let mut a = agg.clone();
            let p = match slot {
                "centers" => &mut a.centers,
                "assign_w" => &mut a.assign_w,
                _ => &mut a.assign_b,
            };
            p.value.data_mut()[i] += d;
            obj(&a, &x)
        });
        out.slots.push(compare("netvlad", slot, grad.data(), &numeric));
    }
    Ok(out)
}

pub fn check_maxpool(seed: u64) -> Result<GradcheckReport> {
    let mut rng = init::rng(seed);
    let x = init::normal(&mut rng, &[4, 5], 1.0);
    let r = init::normal(&mut rng, &[5], 1.0);
    let fwd = maxpool_forward(&x)?;
    let g = maxpool_backward(&fwd.argmax, &r, 4)?;
    let numeric = numeric_gradient(x.len(), |i, d| contract(&r, &maxpool_forward(&shifted(&x, i, d)).expect("non-empty").output));
    Ok(GradcheckReport {
        slots: vec![compare("maxpool", "input", g.data(), &numeric)],
    })
}

/// Gate head followed by the row softmax that turns logits into expert weights.
pub fn check_gate(seed: u64) -> Result<GradcheckReport> {
    let mut rng = init::rng(seed);
    let head = GateHead::<f64>::new("gate.a", 3, 4, &mut rng);
    let hx = init::normal(&mut rng, &[2, 4], 1.0);
    let r = init::normal(&mut rng, &[2, 3], 1.0);
    let weights = |h: &GateHead<f64>, x: &Tensor<f64>| h.logits(x).expect("shapes fixed").softmax(1).expect("non-empty");
    let w = weights(&head, &hx);
    let mut d_logits = Tensor::zeros(&[2, 3]);
    for i in 0..2 {
        softmax_backward(w.row(i), r.row(i), d_logits.row_mut(i));
    }
    let (d_a, d_hx) = head.backward(&hx, &d_logits)?;
    let mut out = GradcheckReport::default();
    out.slots.push(compare("gate", "a", d_a.data(), &numeric_gradient(d_a.len(), |i, d| {
        let mut h = head.clone();
        h.a.value.data_mut()[i] += d;
        contract(&r, &weights(&h, &hx))
    })));
    out.slots.push(compare("gate", "hx", d_hx.data(), &numeric_gradient(hx.len(), |i, d| contract(&r, &weights(&head, &shifted(&hx, i, d))))));
    Ok(out)
}

fn random_mask(rng: &mut SeededRng, n: usize) -> AvailabilityMask {
    loop {
        let m = AvailabilityMask((0..n).map(|_| rng.random_bool(0.6)).collect());
        if m.count() > 0 {
            return m;
        }
    }
}

pub fn check_mixture(seed: u64) -> Result<GradcheckReport> {
    let mut rng = init::rng(seed);
    let (q, n, c) = (3, 4, 3);
    let weights = init::uniform(&mut rng, &[q, n], 0.1, 1.0);
    let scores: Vec<Tensor<f64>> = (0..n).map(|_| init::uniform(&mut rng, &[q, c], -1.0, 1.0)).collect();
    let masks: Vec<AvailabilityMask> = (0..c).map(|_| random_mask(&mut rng, n)).collect();
    let r = init::normal(&mut rng, &[q, c], 1.0);
    let s = mixture_forward(&weights, &scores, &masks)?;
    let (d_w, d_e) = mixture_backward(&weights, &scores, &masks, &s, &r)?;
    let mut out = GradcheckReport::default();
    out.slots.push(compare("mixture", "weights", d_w.data(), &numeric_gradient(weights.len(), |i, d| {
        contract(&r, &mixture_forward(&shifted(&weights, i, d), &scores, &masks).expect("valid"))
    })));
    for (k, de) in d_e.iter().enumerate() {
        let numeric = numeric_gradient(de.len(), |i, d| {
            let mut sc = scores.clone();
            sc[k].data_mut()[i] += d;
            contract(&r, &mixture_forward(&weights, &sc, &masks).expect("valid"))
        });
        out.slots.push(compare("mixture", alloc::format!("expert_scores[{k}]"), de.data(), &numeric));
    }
    Ok(out)
}

/// Ranking loss at a random point whose hinge arguments all stay clear of the kink.
pub fn check_ranking_loss(seed: u64) -> Result<GradcheckReport> {
    let cfg = LossConfig::default();
    let mut rng = init::rng(seed);
    let b = 4;
    let s = loop {
        let s: Tensor<f64> = init::uniform(&mut rng, &[b, b], -1.0, 1.0);
        let clear = (0..b).all(|i| {
            (0..b).filter(|&j| j != i).all(|j| {
                (cfg.margin + s.get2(i, j) - s.get2(i, i)).abs() > 1e-3
                    && (cfg.margin + s.get2(j, i) - s.get2(i, i)).abs() > 1e-3
            })
        });
        if clear {
            break s;
        }
    };
    let g = ranking_loss_grad(&s, &cfg)?;
    let numeric = numeric_gradient(s.len(), |i, d| ranking_loss(&shifted(&s, i, d), &cfg).expect("square"));
    Ok(GradcheckReport {
        slots: vec![compare("ranking_loss", "scores", g.data(), &numeric)],
    })
}

/// Configuration used by the end-to-end check: two max-pooled streams and one
/// NetVLAD stream.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        word_dim: 3,
        text_clusters: 2,
        modalities: vec![
            ModalityConfig::new("appearance", 4, Aggregation::MaxPool, 3),
            ModalityConfig::new("motion", 3, Aggregation::MaxPool, 3),
            ModalityConfig::new("audio", 2, Aggregation::NetVlad { clusters: 2 }, 3),
        ],
    }
}

/// Random batch of captions and videos for `cfg` with the given availability.
pub fn random_batch(
    rng: &mut SeededRng,
    cfg: &ModelConfig,
    masks: &[Vec<bool>],
) -> (Vec<Caption<f64>>, Vec<VideoSample<f64>>) {
    masks
        .iter()
        .enumerate()
        .map(|(j, mask)| {
            let words = rng.random_range(2..5);
            let cap = Caption(init::normal(rng, &[words, cfg.word_dim], 1.0));
            let streams = cfg
                .modalities
                .iter()
                .zip(mask)
                .map(|(m, &present)| {
                    present.then(|| {
                        let frames = rng.random_range(1..4);
                        init::normal(rng, &[frames, m.input_dim], 1.0)
                    })
                })
                .collect();
            (cap, VideoSample::new(alloc::format!("v{j}"), streams))
        })
        .unzip()
}

/// End-to-end check of the batched model on a 2×2 batch, one video missing
/// its motion stream.
pub fn check_model(seed: u64) -> Result<GradcheckReport> {
    let cfg = tiny_model_config();
    let mut rng = init::rng(seed);
    let mut params = MeeParams::<f64>::new(cfg.clone(), init::derive_seed(seed, 1))?;
    for p in params.parameters_mut() {
        if p.name.ends_with(".b1") || p.name.ends_with(".b2") || p.name.ends_with("assign_b") {
            p.value = init::normal(&mut rng, p.value.shape(), 0.3);
        }
    }
    let (caps, vids) = random_batch(&mut rng, &cfg, &[vec![true, true, true], vec![true, false, true]]);
    let r = init::normal(&mut rng, &[2, 2], 1.0);
    let fwd = params.forward_batch(&caps, &vids)?;
    params.zero_grads();
    params.backward_batch(&fwd, &caps, &vids, &r)?;
    let analytic: Vec<(String, Vec<f64>)> = params
        .parameters()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();
    let mut out = GradcheckReport::default();
    for (idx, (name, grad)) in analytic.iter().enumerate() {
        let numeric = numeric_gradient(grad.len(), |i, d| {
            let mut p = params.clone();
            p.parameters_mut()[idx].value.data_mut()[i] += d;
            contract(&r, &p.forward_batch(&caps, &vids).expect("valid batch").scores)
        });
        out.slots.push(compare("model", name.to_string(), grad, &numeric));
    }
    Ok(out)
}

/// Runs every suite over `seeds` consecutive seeds starting at `seed`.
pub fn run_all(seed: u64, seeds: usize, fault: Option<Fault>) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    for s in (0..seeds as u64).map(|k| init::derive_seed(seed, k)) {
        report.merge(check_geu(s, fault)?);
        report.merge(check_netvlad(s)?);
        report.merge(check_maxpool(s)?);
        report.merge(check_gate(s)?);
        report.merge(check_mixture(s)?);
        report.merge(check_ranking_loss(s)?);
        report.merge(check_model(s)?);
    }
    Ok(report)
}

/// Max relative error per layer.
pub fn summarize(report: &GradcheckReport) -> BTreeMap<&'static str, f64> {
    let mut out = BTreeMap::new();
    for s in &report.slots {
        let e = out.entry(s.layer).or_insert(0.0f64);
        *e = Float::max(*e, s.max_rel_error);
    }
    out
}

//! Analytic gradients against central finite differences.

use factorspan_core::builder::AlignedExample;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradStore, Graph, ParamId, ParamStore};
use crate::heads::{Model, ModelKind, SpanSelection};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Relative error allowed per entry.
    pub tolerance: f64,
    /// Share of each tensor's entries to check.
    pub fraction: f64,
    /// Minimum entries checked in each head tensor.
    pub min_head_samples: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Use the fourth-order five-point central stencil instead of the
    /// two-point one.
    pub five_point: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-3, tolerance: 1e-4, fraction: 0.01, min_head_samples: 20, floor: 1e-8, five_point: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    pub worst: Option<GradCheckEntry>,
    pub failures: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            return 0.0;
        }
        self.passed as f64 / self.checked as f64
    }
}

/// |a − n| / max(|a|, |n|, floor).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

type Frozen = Vec<Option<SpanSelection>>;

fn total_loss(
    model: &Model,
    store: &ParamStore,
    examples: &[AlignedExample],
    weights: Option<&[f64]>,
    frozen: &Frozen,
) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for (ex, spans) in examples.iter().zip(frozen) {
        let mut g = Graph::new(store);
        let (loss, _) = model.loss_with_selection(&mut g, ex, weights, None, spans.as_ref())?;
        sum += g.scalar(loss);
    }
    Ok(sum)
}

/// Checks the summed eval-mode loss over `examples` on a seeded sample of
/// parameter entries. `store` is perturbed in place and restored.
///
/// The span model's discrete choices (decoded spans, max-pool winners) are
/// taken at the unperturbed parameters and held fixed while differencing;
/// the analytic gradient is that of the same fixed-selection loss.
pub fn check_gradients(
    model: &Model,
    store: &mut ParamStore,
    examples: &[AlignedExample],
    weights: Option<&[f64]>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, ModelError> {
    let mut grads = GradStore::new(store);
    let mut frozen: Frozen = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut g = Graph::new(store);
        let loss = if model.kind == ModelKind::Span {
            let (loss, _, out) = model.span_training_output(&mut g, ex, weights, None)?;
            frozen.push(Some(out.selection()));
            loss
        } else {
            frozen.push(None);
            model.loss(&mut g, ex, weights, None)?.0
        };
        g.backward(loss, &mut grads, 1.0);
    }
    let mut rng = factorspan_core::text::derive_rng(cfg.seed, &["gradcheck"]);
    let mut report = GradCheckReport { checked: 0, passed: 0, worst: None, failures: Vec::new() };
    for p in 0..store.len() {
        let id = ParamId(p);
        let name = store.param(id).name.clone();
        let len = store.get(id).len();
        let mut want = (cfg.fraction * len as f64).ceil() as usize;
        if name.starts_with("head.") {
            want = want.max(cfg.min_head_samples);
        }
        let picks = sample(&mut rng, len, want.min(len));
        for k in picks.into_iter() {
            let orig = store.get(id).as_slice().expect("contiguous")[k];
            let mut at = |offset: f64| -> Result<f64, ModelError> {
                store.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig + offset;
                let l = total_loss(model, store, examples, weights, &frozen);
                store.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig;
                l
            };
            let h = cfg.h;
            let numeric = if cfg.five_point {
                (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h)
            } else {
                (at(h)? - at(-h)?) / (2.0 * h)
            };
            let analytic = grads.get(id).as_slice().expect("contiguous")[k];
            let rel_error = relative_error(analytic, numeric, cfg.floor);
            let entry = GradCheckEntry { param: name.clone(), index: k, analytic, numeric, rel_error };
            report.checked += 1;
            if rel_error <= cfg.tolerance {
                report.passed += 1;
            } else {
                report.failures.push(entry.clone());
            }
            if report.worst.as_ref().is_none_or(|w| rel_error > w.rel_error) {
                report.worst = Some(entry);
            }
        }
    }
    Ok(report)
}

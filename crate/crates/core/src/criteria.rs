//! Coverage criteria over activation traces.
//!
//! Every criterion implements [`Criterion`]: a static descriptor plus a pure
//! `evaluate(trace, view)`. Criteria that support the only-increase
//! evaluation mode also implement [`Criterion::evaluate_incremental`].
//!
//! Covariance-based criteria (`nlc`, `detcov`, `tracecov`, `speccov`) are
//! unbounded and report the sum of their per-layer values. The discrete
//! baselines (`nc`, `kmnc`, `nbc`, `snac`, `tknc`) report the covered
//! fraction of their targets over all layers, with the layer-local fraction
//! in `per_layer`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{default_ridge, l1_norm, spectral_summary, CovarianceAccumulator};
use crate::trace::{ActivationTrace, Layer, SuiteView, TrainingProfile};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionDescriptor {
    pub name: String,
    /// Values are fractions in `[0, 1]`.
    pub bounded: bool,
    pub monotone_by_design: bool,
    pub requires_profile: bool,
    /// `evaluate` runs the only-increase incremental mode.
    pub incremental: bool,
    pub hyperparameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerValue {
    pub layer: String,
    pub value: f64,
    /// The score hit a numerical floor (singular covariance for `detcov`).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: String,
    pub value: f64,
    pub per_layer: Vec<LayerValue>,
    /// Inputs kept by the incremental mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_inputs: Option<usize>,
    /// Committed value after each processed batch (incremental mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committed: Option<Vec<f64>>,
}

impl CriterionResult {
    fn summed(criterion: &str, per_layer: Vec<LayerValue>) -> Self {
        Self {
            criterion: criterion.to_owned(),
            value: per_layer.iter().map(|l| l.value).sum(),
            per_layer,
            accepted_inputs: None,
            committed: None,
        }
    }

    /// Builds a bounded result from `(layer, covered, total)` target counts.
    fn fraction(criterion: &str, counts: Vec<(String, usize, usize)>) -> Self {
        let covered: usize = counts.iter().map(|c| c.1).sum();
        let total: usize = counts.iter().map(|c| c.2).sum();
        let ratio = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
        Self {
            criterion: criterion.to_owned(),
            value: ratio(covered, total),
            per_layer: counts
                .into_iter()
                .map(|(layer, c, t)| LayerValue {
                    layer,
                    value: ratio(c, t),
                    degenerate: false,
                })
                .collect(),
            accepted_inputs: None,
            committed: None,
        }
    }

    pub fn layer_value(&self, layer: &str) -> Option<f64> {
        self.per_layer.iter().find(|l| l.layer == layer).map(|l| l.value)
    }
}

/// A coverage criterion: descriptor plus batch evaluation, optionally an
/// incremental evaluation.
pub trait Criterion: Send + Sync {
    fn descriptor(&self) -> CriterionDescriptor;

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult>;

    fn evaluate_incremental(
        &self,
        _trace: &ActivationTrace,
        _view: &SuiteView,
        _batch_size: usize,
    ) -> Option<Result<CriterionResult>> {
        None
    }

    fn name(&self) -> String {
        self.descriptor().name
    }
}

fn descriptor(
    name: &str,
    bounded: bool,
    monotone_by_design: bool,
    requires_profile: bool,
    hyperparameters: &[(&str, f64)],
) -> CriterionDescriptor {
    CriterionDescriptor {
        name: name.to_owned(),
        bounded,
        monotone_by_design,
        requires_profile,
        incremental: false,
        hyperparameters: hyperparameters.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn layer_accumulator(layer: &Layer, view: &SuiteView) -> Result<CovarianceAccumulator> {
    CovarianceAccumulator::from_rows(layer.width(), layer.view_rows(view))
}

fn nlc_of(acc: &CovarianceAccumulator) -> Result<f64> {
    let m = acc.dim() as f64;
    Ok(l1_norm(&acc.covariance())? / (m * m))
}

// ---------------------------------------------------------------------------
// NLC

/// Mean absolute covariance per layer, summed over layers.
#[derive(Debug, Clone, Copy, Default)]
pub struct Nlc;

impl Criterion for Nlc {
    fn descriptor(&self) -> CriterionDescriptor {
        descriptor("nlc", false, false, false, &[])
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        view.validate(trace.num_inputs())?;
        let per_layer = trace
            .layers()
            .iter()
            .map(|layer| {
                Ok(LayerValue {
                    layer: layer.name().to_owned(),
                    value: nlc_of(&layer_accumulator(layer, view)?)?,
                    degenerate: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CriterionResult::summed("nlc", per_layer))
    }

    fn evaluate_incremental(
        &self,
        trace: &ActivationTrace,
        view: &SuiteView,
        batch_size: usize,
    ) -> Option<Result<CriterionResult>> {
        Some(NlcIncremental::new(batch_size).and_then(|inc| inc.evaluate(trace, view)))
    }
}

/// NLC under the only-increase update: the view is processed in order, one
/// batch at a time, and a batch is kept only if it strictly raises the
/// summed NLC. The result depends on the order of the view.
///
/// While fewer than two inputs are committed the covariance (and so the
/// value) is identically zero; batches are kept unconditionally during that
/// warm-up so single-input batches can make progress.
#[derive(Debug, Clone)]
pub struct NlcIncremental {
    batch_size: usize,
    warm_start: Option<Vec<CovarianceAccumulator>>,
}

impl NlcIncremental {
    pub fn new(batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        Ok(Self {
            batch_size,
            warm_start: None,
        })
    }

    /// Seeds the per-layer statistics with every input of `reference`
    /// before the evaluated view is processed.
    pub fn with_warm_start(mut self, reference: &ActivationTrace) -> Result<Self> {
        let view = reference.full_view();
        let accs = reference
            .layers()
            .iter()
            .map(|l| layer_accumulator(l, &view))
            .collect::<Result<Vec<_>>>()?;
        self.warm_start = Some(accs);
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

impl Criterion for NlcIncremental {
    fn descriptor(&self) -> CriterionDescriptor {
        let mut d = descriptor(
            "nlc-inc",
            false,
            true,
            false,
            &[("batch_size", self.batch_size as f64)],
        );
        d.incremental = true;
        if self.warm_start.is_some() {
            d.hyperparameters.insert("warm_start".into(), 1.0);
        }
        d
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        view.validate(trace.num_inputs())?;
        let layers = trace.layers();
        let mut accs = match &self.warm_start {
            Some(start) => {
                if start.len() != layers.len() || start.iter().zip(layers).any(|(a, l)| a.dim() != l.width()) {
                    return Err(Error::Dimension("warm start does not match trace layers".into()));
                }
                start.clone()
            }
            None => layers
                .iter()
                .map(|l| CovarianceAccumulator::new(l.width()))
                .collect::<Result<Vec<_>>>()?,
        };
        let total = |accs: &[CovarianceAccumulator]| -> Result<f64> { accs.iter().map(nlc_of).sum() };

        let mut current = total(&accs)?;
        let mut accepted = 0;
        let mut committed = Vec::new();
        for batch in view.batches(self.batch_size) {
            let mut tentative = accs.clone();
            for (acc, layer) in tentative.iter_mut().zip(layers) {
                acc.update(batch.iter().map(|&i| layer.row(i)))?;
            }
            let candidate = total(&tentative)?;
            if candidate > current || accs[0].count() < 2 {
                accs = tentative;
                current = candidate;
                accepted += batch.len();
            }
            committed.push(current);
        }

        let per_layer = accs
            .iter()
            .zip(layers)
            .map(|(acc, layer)| {
                Ok(LayerValue {
                    layer: layer.name().to_owned(),
                    value: nlc_of(acc)?,
                    degenerate: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut result = CriterionResult::summed("nlc-inc", per_layer);
        result.accepted_inputs = Some(accepted);
        result.committed = Some(committed);
        Ok(result)
    }
}

// ---------------------------------------------------------------------------
// Spectral alternatives

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SpectralScore {
    LogDet,
    TracePerNeuron,
    Largest,
}

/// Covariance score computed from the eigen-spectrum of each layer.
#[derive(Debug, Clone, Copy)]
pub struct SpectralCriterion {
    score: SpectralScore,
    /// Fixed log-determinant floor; `None` uses [`default_ridge`].
    ridge: Option<f64>,
}

impl SpectralCriterion {
    /// Log-determinant of each layer's covariance.
    pub fn detcov(ridge: Option<f64>) -> Self {
        Self {
            score: SpectralScore::LogDet,
            ridge,
        }
    }

    /// Trace of each layer's covariance divided by its width.
    pub fn tracecov() -> Self {
        Self {
            score: SpectralScore::TracePerNeuron,
            ridge: None,
        }
    }

    /// Largest eigenvalue of each layer's covariance.
    pub fn speccov() -> Self {
        Self {
            score: SpectralScore::Largest,
            ridge: None,
        }
    }

    fn label(&self) -> &'static str {
        match self.score {
            SpectralScore::LogDet => "detcov",
            SpectralScore::TracePerNeuron => "tracecov",
            SpectralScore::Largest => "speccov",
        }
    }
}

impl Criterion for SpectralCriterion {
    fn descriptor(&self) -> CriterionDescriptor {
        let params: Vec<(&str, f64)> = match (self.score, self.ridge) {
            (SpectralScore::LogDet, Some(r)) => vec![("ridge", r)],
            (SpectralScore::LogDet, None) => vec![("ridge_scale", 1e-8), ("ridge_floor", 1e-30)],
            _ => vec![],
        };
        descriptor(self.label(), false, false, false, &params)
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        view.validate(trace.num_inputs())?;
        let per_layer = trace
            .layers()
            .iter()
            .map(|layer| {
                let sigma = layer_accumulator(layer, view)?.covariance();
                let ridge = self.ridge.unwrap_or_else(|| default_ridge(&sigma));
                let spectrum = spectral_summary(&sigma, ridge)?;
                let (value, degenerate) = match self.score {
                    SpectralScore::LogDet => (spectrum.log_determinant, spectrum.degenerate),
                    SpectralScore::TracePerNeuron => (spectrum.trace / layer.width() as f64, false),
                    SpectralScore::Largest => (spectrum.spectral_norm.max(0.0), false),
                };
                Ok(LayerValue {
                    layer: layer.name().to_owned(),
                    value,
                    degenerate,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CriterionResult::summed(self.label(), per_layer))
    }
}

// ---------------------------------------------------------------------------
// Discrete baselines

/// Neuron coverage: fraction of neurons whose output exceeds `threshold`
/// on at least one input.
#[derive(Debug, Clone, Copy)]
pub struct NeuronCoverage {
    pub threshold: f64,
}

impl Criterion for NeuronCoverage {
    fn descriptor(&self) -> CriterionDescriptor {
        descriptor("nc", true, true, false, &[("threshold", self.threshold)])
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        view.validate(trace.num_inputs())?;
        let counts = trace
            .layers()
            .iter()
            .map(|layer| {
                let mut hit = vec![false; layer.width()];
                for row in layer.view_rows(view) {
                    for (h, &x) in hit.iter_mut().zip(row) {
                        *h |= x > self.threshold;
                    }
                }
                let covered = hit.iter().filter(|&&h| h).count();
                (layer.name().to_owned(), covered, layer.width())
            })
            .collect();
        Ok(CriterionResult::fraction("nc", counts))
    }
}

/// k-multisection neuron coverage: each neuron's profiled range is split
/// into `sections` equal parts; the value is the fraction of parts hit.
#[derive(Debug, Clone)]
pub struct KMultisection {
    pub profile: TrainingProfile,
    pub sections: usize,
}

impl KMultisection {
    pub fn new(profile: TrainingProfile, sections: usize) -> Result<Self> {
        if sections == 0 {
            return Err(Error::Parameter("kmnc needs at least one section".into()));
        }
        Ok(Self { profile, sections })
    }
}

/// Section of `[low, high]` holding `x`, or `None` outside the range. The
/// lower boundary belongs to the first section, the upper to the last.
fn section_of(x: f64, low: f64, high: f64, sections: usize) -> Option<usize> {
    if x < low || x > high {
        return None;
    }
    if high == low {
        return Some(0);
    }
    let pos = ((x - low) / (high - low) * sections as f64).floor() as usize;
    Some(pos.min(sections - 1))
}

impl Criterion for KMultisection {
    fn descriptor(&self) -> CriterionDescriptor {
        descriptor("kmnc", true, true, true, &[("k", self.sections as f64)])
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        view.validate(trace.num_inputs())?;
        self.profile.check_covers(trace)?;
        let k = self.sections;
        let counts = trace
            .layers()
            .iter()
            .zip(&self.profile.layers)
            .map(|(layer, prof)| {
                let mut hit = vec![false; layer.width() * k];
                for row in layer.view_rows(view) {
                    for (j, &x) in row.iter().enumerate() {
                        if let Some(s) = section_of(x, prof.low[j], prof.high[j], k) {
                            hit[j * k + s] = true;
                        }
                    }
                }
                let covered = hit.iter().filter(|&&h| h).count();
                (layer.name().to_owned(), covered, layer.width() * k)
            })
            .collect();
        Ok(CriterionResult::fraction("kmnc", counts))
    }
}

/// Lower- and upper-corner hits per layer: `(layer, lower, upper, width)`.
fn corner_hits(
    trace: &ActivationTrace,
    view: &SuiteView,
    profile: &TrainingProfile,
) -> Result<Vec<(String, usize, usize, usize)>> {
    view.validate(trace.num_inputs())?;
    profile.check_covers(trace)?;
    Ok(trace
        .layers()
        .iter()
        .zip(&profile.layers)
        .map(|(layer, prof)| {
            let mut lower = vec![false; layer.width()];
            let mut upper = vec![false; layer.width()];
            for row in layer.view_rows(view) {
                for (j, &x) in row.iter().enumerate() {
                    lower[j] |= x < prof.low[j];
                    upper[j] |= x > prof.high[j];
                }
            }
            let count = |v: &[bool]| v.iter().filter(|&&h| h).count();
            (layer.name().to_owned(), count(&lower), count(&upper), layer.width())
        })
        .collect())
}

/// Neuron boundary coverage: both corner regions of every neuron.
#[derive(Debug, Clone)]
pub struct NeuronBoundary {
    pub profile: TrainingProfile,
}

impl Criterion for NeuronBoundary {
    fn descriptor(&self) -> CriterionDescriptor {
        descriptor("nbc", true, true, true, &[])
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        let counts = corner_hits(trace, view, &self.profile)?
            .into_iter()
            .map(|(name, lo, hi, w)| (name, lo + hi, 2 * w))
            .collect();
        Ok(CriterionResult::fraction("nbc", counts))
    }
}

/// Strong neuron activation coverage: upper corner only.
#[derive(Debug, Clone)]
pub struct StrongActivation {
    pub profile: TrainingProfile,
}

impl Criterion for StrongActivation {
    fn descriptor(&self) -> CriterionDescriptor {
        descriptor("snac", true, true, true, &[])
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        let counts = corner_hits(trace, view, &self.profile)?
            .into_iter()
            .map(|(name, _, hi, w)| (name, hi, w))
            .collect();
        Ok(CriterionResult::fraction("snac", counts))
    }
}

/// NBC and SNAC evaluated together from one pass over the view.
pub fn nbc_snac(
    trace: &ActivationTrace,
    view: &SuiteView,
    profile: &TrainingProfile,
) -> Result<(CriterionResult, CriterionResult)> {
    let hits = corner_hits(trace, view, profile)?;
    let nbc = hits.iter().map(|(n, lo, hi, w)| (n.clone(), lo + hi, 2 * w)).collect();
    let snac = hits.into_iter().map(|(n, _, hi, w)| (n, hi, w)).collect();
    Ok((CriterionResult::fraction("nbc", nbc), CriterionResult::fraction("snac", snac)))
}

/// Top-k neuron coverage: neurons that rank among the `k` highest outputs
/// of their layer for at least one input. Ties go to the lower index.
#[derive(Debug, Clone, Copy)]
pub struct TopK {
    pub k: usize,
}

impl Criterion for TopK {
    fn descriptor(&self) -> CriterionDescriptor {
        descriptor("tknc", true, true, false, &[("k", self.k as f64)])
    }

    fn evaluate(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<CriterionResult> {
        view.validate(trace.num_inputs())?;
        let narrowest = trace.layers().iter().map(Layer::width).min().unwrap_or(0);
        if self.k == 0 || self.k > narrowest {
            return Err(Error::Parameter(format!(
                "tknc k must be in 1..={narrowest}, got {}",
                self.k
            )));
        }
        let counts = trace
            .layers()
            .iter()
            .map(|layer| {
                let mut hit = vec![false; layer.width()];
                let mut order: Vec<usize> = Vec::with_capacity(layer.width());
                for row in layer.view_rows(view) {
                    order.clear();
                    order.extend(0..layer.width());
                    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                    for &j in &order[..self.k] {
                        hit[j] = true;
                    }
                }
                let covered = hit.iter().filter(|&&h| h).count();
                (layer.name().to_owned(), covered, layer.width())
            })
            .collect();
        Ok(CriterionResult::fraction("tknc", counts))
    }
}

// ---------------------------------------------------------------------------
// Registry

pub const REGISTERED: [&str; 10] = [
    "nlc", "nlc-inc", "detcov", "tracecov", "speccov", "nc", "kmnc", "nbc", "snac", "tknc",
];

/// Hyperparameters shared by every registered criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriterionParams {
    pub nc_threshold: f64,
    pub kmnc_sections: usize,
    pub tknc_k: usize,
    pub batch_size: usize,
    /// Fixed log-determinant floor for `detcov`; `None` scales with the
    /// covariance diagonal.
    pub ridge: Option<f64>,
}

impl Default for CriterionParams {
    fn default() -> Self {
        Self {
            nc_threshold: 0.75,
            kmnc_sections: 100,
            tknc_k: 1,
            batch_size: 1,
            ridge: None,
        }
    }
}

pub fn requires_profile(name: &str) -> bool {
    matches!(name, "kmnc" | "nbc" | "snac")
}

/// Builds a registered criterion by name.
pub fn build(name: &str, params: &CriterionParams, profile: Option<TrainingProfile>) -> Result<Box<dyn Criterion>> {
    let need_profile = |profile: Option<TrainingProfile>| {
        profile.ok_or_else(|| Error::Profile(format!("criterion `{name}` requires a training profile")))
    };
    Ok(match name {
        "nlc" => Box::new(Nlc),
        "nlc-inc" => Box::new(NlcIncremental::new(params.batch_size)?),
        "detcov" => Box::new(SpectralCriterion::detcov(params.ridge)),
        "tracecov" => Box::new(SpectralCriterion::tracecov()),
        "speccov" => Box::new(SpectralCriterion::speccov()),
        "nc" => Box::new(NeuronCoverage {
            threshold: params.nc_threshold,
        }),
        "kmnc" => Box::new(KMultisection::new(need_profile(profile)?, params.kmnc_sections)?),
        "nbc" => Box::new(NeuronBoundary {
            profile: need_profile(profile)?,
        }),
        "snac" => Box::new(StrongActivation {
            profile: need_profile(profile)?,
        }),
        "tknc" => Box::new(TopK { k: params.tknc_k }),
        _ => {
            return Err(Error::UnknownCriterion {
                name: name.to_owned(),
                registered: REGISTERED.join(", "),
            })
        }
    })
}

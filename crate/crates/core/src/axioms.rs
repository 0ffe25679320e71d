//! Metamorphic checks of coverage axioms and the repeated-shuffle
//! stability study.
//!
//! Every check is driven by a seed. Trial `t` draws from its own ChaCha
//! stream `(seed, t)`, so trials run in parallel and reports reproduce
//! bit-for-bit.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, CriterionResult};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trace::{ActivationTrace, SuiteView};

/// Absolute tolerance for bounded criteria.
pub const BOUNDED_TOLERANCE: f64 = 1e-12;
/// Relative tolerance for unbounded criteria.
pub const UNBOUNDED_TOLERANCE: f64 = 1e-9;

const DUPLICATE_STREAM_OFFSET: u64 = 1 << 32;

fn tolerance(bounded: bool, a: f64, b: f64) -> f64 {
    if bounded {
        BOUNDED_TOLERANCE
    } else {
        UNBOUNDED_TOLERANCE * a.abs().max(b.abs())
    }
}

/// `after` is a genuine decrease from `before`.
pub fn decreased(bounded: bool, before: f64, after: f64) -> bool {
    before > after + tolerance(bounded, before, after)
}

fn differs(bounded: bool, a: f64, b: f64) -> bool {
    (a - b).abs() > tolerance(bounded, a, b)
}

/// A pair of suites `smaller ⊆ larger` (multiset inclusion) on which the
/// criterion value decreased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub criterion: String,
    pub smaller: SuiteView,
    pub larger: SuiteView,
    pub smaller_value: f64,
    pub larger_value: f64,
}

impl Witness {
    /// Re-evaluates both suites and reports whether the decrease reproduces.
    pub fn replay(&self, criterion: &dyn Criterion, trace: &ActivationTrace) -> Result<bool> {
        let bounded = criterion.descriptor().bounded;
        let before = criterion.evaluate(trace, &self.smaller)?.value;
        let after = criterion.evaluate(trace, &self.larger)?.value;
        Ok(decreased(bounded, before, after))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub trials: usize,
    /// Chains with at least one decreasing step.
    pub violations: usize,
    /// First violating step, in trial order.
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub trials: usize,
    /// Largest spread `max - min` of values over the original order and
    /// all permutations.
    pub max_delta: f64,
    pub max_relative_delta: f64,
    /// For incremental criteria: evaluations whose committed sequence was
    /// non-decreasing.
    pub nondecreasing_committed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateCheck {
    pub trials: usize,
    pub violations: usize,
}

/// Draws `count` row indices uniformly with replacement.
fn draw(rng: &mut Rng, n: usize, count: usize) -> SuiteView {
    SuiteView::new((0..count).map(|_| rng.random_range(0..n)).collect())
}

fn random_chain(rng: &mut Rng, n: usize, chain_len: usize) -> Vec<SuiteView> {
    let start = rng.random_range(1..=(n / 2).max(1));
    let mut chain = vec![draw(rng, n, start)];
    for _ in 1..chain_len {
        let extra = rng.random_range(1..=(n / 4).max(1));
        let next = chain.last().unwrap().concat(&draw(rng, n, extra));
        chain.push(next);
    }
    chain
}

fn require_inputs(trace: &ActivationTrace) -> Result<()> {
    if trace.num_inputs() == 0 {
        return Err(Error::Parameter("axiom checks need a non-empty trace".into()));
    }
    Ok(())
}

/// Evaluates an explicit chain `V_1 ⊆ V_2 ⊆ ...` and returns the first
/// decreasing step, if any.
pub fn check_chain(criterion: &dyn Criterion, trace: &ActivationTrace, chain: &[SuiteView]) -> Result<Option<Witness>> {
    let bounded = criterion.descriptor().bounded;
    let values = chain
        .iter()
        .map(|v| criterion.evaluate(trace, v).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    for i in 1..chain.len() {
        if decreased(bounded, values[i - 1], values[i]) {
            return Ok(Some(Witness {
                criterion: criterion.name(),
                smaller: chain[i - 1].clone(),
                larger: chain[i].clone(),
                smaller_value: values[i - 1],
                larger_value: values[i],
            }));
        }
    }
    Ok(None)
}

/// Builds `trials` random ascending chains by appending rows drawn with
/// replacement and counts chains on which the criterion decreased.
pub fn check_monotonicity(
    criterion: &dyn Criterion,
    trace: &ActivationTrace,
    trials: usize,
    chain_len: usize,
    seed: u64,
) -> Result<MonotonicityCheck> {
    require_inputs(trace)?;
    if chain_len < 2 {
        return Err(Error::Parameter("chain_len must be >= 2".into()));
    }
    let n = trace.num_inputs();
    let outcomes = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let chain = random_chain(&mut rng::stream(seed, t), n, chain_len);
            check_chain(criterion, trace, &chain)
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = outcomes.iter().filter(|w| w.is_some()).count();
    Ok(MonotonicityCheck {
        trials,
        violations,
        witness: outcomes.into_iter().flatten().next(),
    })
}

/// Evaluates the criterion on the full view and on `trials` random
/// permutations of it.
pub fn check_order_independence(
    criterion: &dyn Criterion,
    trace: &ActivationTrace,
    trials: usize,
    seed: u64,
) -> Result<OrderCheck> {
    require_inputs(trace)?;
    let full = trace.full_view();
    let baseline = criterion.evaluate(trace, &full)?;
    let results = (0..trials as u64)
        .into_par_iter()
        .map(|t| criterion.evaluate(trace, &full.shuffled_with(&mut rng::stream(seed, t))))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&CriterionResult> = std::iter::once(&baseline).chain(&results).collect();

    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.value), hi.max(r.value)));
    let max_delta = hi - lo;
    let scale = lo.abs().max(hi.abs());
    let nondecreasing_committed = baseline.committed.as_ref().map(|_| {
        all.iter()
            .filter(|r| {
                r.committed
                    .as_ref()
                    .is_some_and(|seq| seq.windows(2).all(|w| w[0] <= w[1]))
            })
            .count()
    });
    Ok(OrderCheck {
        trials,
        max_delta,
        max_relative_delta: if scale > 0.0 { max_delta / scale } else { 0.0 },
        nondecreasing_committed,
    })
}

/// Compares each random suite with itself plus re-drawn copies of its own
/// rows; any change in value is a violation.
pub fn check_duplicates(
    criterion: &dyn Criterion,
    trace: &ActivationTrace,
    trials: usize,
    seed: u64,
) -> Result<DuplicateCheck> {
    require_inputs(trace)?;
    let bounded = criterion.descriptor().bounded;
    let n = trace.num_inputs();
    let flags = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, DUPLICATE_STREAM_OFFSET + t);
            let size = rng.random_range(1..=(n / 2).max(1));
            let base = draw(&mut rng, n, size);
            let copies = rng.random_range(1..=base.len());
            let dups = SuiteView::new(
                (0..copies)
                    .map(|_| base.indices()[rng.random_range(0..base.len())])
                    .collect(),
            );
            let a = criterion.evaluate(trace, &base)?.value;
            let b = criterion.evaluate(trace, &base.concat(&dups))?.value;
            Ok(differs(bounded, a, b))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(DuplicateCheck {
        trials,
        violations: flags.into_iter().filter(|&v| v).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomConfig {
    pub trials: usize,
    pub chain_len: usize,
    pub seed: u64,
}

impl Default for AxiomConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            chain_len: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub criterion: String,
    pub monotone_trials: usize,
    pub monotone_violations: usize,
    pub witness: Option<Witness>,
    pub permutation_trials: usize,
    pub max_permutation_delta: f64,
    pub max_relative_permutation_delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nondecreasing_committed: Option<usize>,
    pub duplicate_trials: usize,
    pub duplicate_violations: usize,
}

pub const AXIOM_CSV_HEADER: &str = "criterion,monotone_trials,monotone_violations,permutation_trials,max_permutation_delta,duplicate_trials,duplicate_violations";

impl AxiomReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.criterion,
            self.monotone_trials,
            self.monotone_violations,
            self.permutation_trials,
            self.max_permutation_delta,
            self.duplicate_trials,
            self.duplicate_violations
        )
    }
}

/// Runs the monotonicity, order-independence and duplicate checks with a
/// shared configuration.
pub fn run_axioms(criterion: &dyn Criterion, trace: &ActivationTrace, config: &AxiomConfig) -> Result<AxiomReport> {
    let mono = check_monotonicity(criterion, trace, config.trials, config.chain_len, config.seed)?;
    let order = check_order_independence(criterion, trace, config.trials, config.seed)?;
    let dups = check_duplicates(criterion, trace, config.trials, config.seed)?;
    Ok(AxiomReport {
        criterion: criterion.name(),
        monotone_trials: mono.trials,
        monotone_violations: mono.violations,
        witness: mono.witness,
        permutation_trials: order.trials,
        max_permutation_delta: order.max_delta,
        max_relative_permutation_delta: order.max_relative_delta,
        nondecreasing_committed: order.nondecreasing_committed,
        duplicate_trials: dups.trials,
        duplicate_violations: dups.violations,
    })
}

/// Descriptive statistics of one criterion evaluated over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    /// `std / sqrt(runs)`.
    pub sem: f64,
    /// `sem / mean`.
    pub relative_sem: f64,
    /// `(max - min) / max * 100`.
    pub max_pct_drop: f64,
    /// Values were all zero or negative, so the relative statistics are
    /// undefined and reported as zero.
    pub degenerate: bool,
}

impl StabilityReport {
    pub fn from_values(values: Vec<f64>) -> Self {
        let runs = values.len();
        let n = runs as f64;
        // shift by the first value so identical runs give std exactly 0
        let pivot = values.first().copied().unwrap_or(0.0);
        let shift = values.iter().map(|v| v - pivot).sum::<f64>() / n;
        let mean = pivot + shift;
        let std = (values.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / n).sqrt();
        let sem = std / n.sqrt();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let degenerate = !(max > 0.0 && min >= 0.0);
        let max_pct_drop = if degenerate { 0.0 } else { (max - min) / max * 100.0 };
        let relative_sem = if mean != 0.0 { sem / mean } else { 0.0 };
        Self {
            runs,
            values,
            mean,
            std,
            sem,
            relative_sem,
            max_pct_drop,
            degenerate,
        }
    }
}

/// Unshuffled control and shuffled runs of the same criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleStudy {
    pub criterion: String,
    pub control: StabilityReport,
    pub shuffled: StabilityReport,
}

pub const STABILITY_CSV_HEADER: &str = "criterion,shuffled,std,sem,relative_sem,max_pct_drop";

impl ShuffleStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(STABILITY_CSV_HEADER);
        out.push('\n');
        for (shuffled, r) in [(false, &self.control), (true, &self.shuffled)] {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.criterion, shuffled, r.std, r.sem, r.relative_sem, r.max_pct_drop
            ));
        }
        out
    }
}

/// Evaluates the criterion `runs` times on the recorded order (control) and
/// on `runs` independent shuffles of it.
pub fn shuffle_study(criterion: &dyn Criterion, trace: &ActivationTrace, runs: usize, seed: u64) -> Result<ShuffleStudy> {
    if runs < 2 {
        return Err(Error::Parameter("shuffle study needs at least 2 runs".into()));
    }
    let full = trace.full_view();
    let control = (0..runs)
        .into_par_iter()
        .map(|_| criterion.evaluate(trace, &full).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    let shuffled = (0..runs as u64)
        .into_par_iter()
        .map(|run| {
            let view = full.shuffled_with(&mut rng::stream(seed, run));
            criterion.evaluate(trace, &view).map(|r| r.value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShuffleStudy {
        criterion: criterion.name(),
        control: StabilityReport::from_values(control),
        shuffled: StabilityReport::from_values(shuffled),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{NeuronCoverage, Nlc, NlcIncremental};
    use crate::trace::Layer;

    fn single_neuron(values: &[f64]) -> ActivationTrace {
        ActivationTrace::new("fixture", values.len(), vec![Layer::new("l0", 1, values.to_vec()).unwrap()]).unwrap()
    }

    #[test]
    fn fixture_chain_violates_monotonicity() {
        let t = single_neuron(&[10.0, -10.0, 5.0, -5.0]);
        let chain = [SuiteView::new(vec![0, 1]), SuiteView::new(vec![0, 1, 2, 3])];
        let w = check_chain(&Nlc, &t, &chain).unwrap().unwrap();
        assert_eq!((w.smaller_value, w.larger_value), (100.0, 62.5));
        assert!(w.replay(&Nlc, &t).unwrap());
        assert!(check_chain(&NeuronCoverage { threshold: 0.75 }, &t, &chain).unwrap().is_none());
    }

    #[test]
    fn random_chains_are_nested_and_reproducible() {
        let mut a = rng::stream(3, 9);
        let mut b = rng::stream(3, 9);
        let chain = random_chain(&mut a, 20, 4);
        assert_eq!(chain, random_chain(&mut b, 20, 4));
        for pair in chain.windows(2) {
            assert!(pair[1].indices().starts_with(pair[0].indices()));
        }
    }

    #[test]
    fn monotonicity_report_is_deterministic() {
        let values: Vec<f64> = (0..40).map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.5).collect();
        let t = single_neuron(&values);
        let a = check_monotonicity(&Nlc, &t, 50, 3, 11).unwrap();
        let b = check_monotonicity(&Nlc, &t, 50, 3, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.violations > 0);
        assert!(a.witness.unwrap().replay(&Nlc, &t).unwrap());
        assert!(check_monotonicity(&Nlc, &t, 5, 1, 0).is_err());
        assert!(check_monotonicity(&Nlc, &single_neuron(&[]), 5, 2, 0).is_err());
    }

    #[test]
    fn incremental_order_delta_on_fixture() {
        let t = single_neuron(&[10.0, -10.0, 5.0, -5.0]);
        let inc = NlcIncremental::new(2).unwrap();
        // enough permutations to reach both orders of the two pairs
        let order = check_order_independence(&inc, &t, 200, 1).unwrap();
        assert!(order.max_delta >= 37.5);
        assert_eq!(order.nondecreasing_committed, Some(201));
        let batch = check_order_independence(&Nlc, &t, 20, 1).unwrap();
        assert!(batch.max_relative_delta <= 1e-9);
        assert!(batch.nondecreasing_committed.is_none());
    }

    #[test]
    fn duplicates_change_nlc_but_not_nc() {
        let values: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let t = single_neuron(&values);
        assert_eq!(check_duplicates(&NeuronCoverage { threshold: 0.5 }, &t, 100, 2).unwrap().violations, 0);
        assert!(check_duplicates(&Nlc, &t, 100, 2).unwrap().violations > 0);
    }

    #[test]
    fn stability_statistics() {
        let r = StabilityReport::from_values(vec![2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(r.mean, 5.0);
        assert_eq!(r.std, 2.0);
        assert_eq!(r.sem, 2.0 / 8f64.sqrt());
        assert_eq!(r.relative_sem, r.sem / 5.0);
        assert!((r.max_pct_drop - 7.0 / 9.0 * 100.0).abs() < 1e-12);

        let flat = StabilityReport::from_values(vec![3.0; 20]);
        assert_eq!((flat.std, flat.max_pct_drop), (0.0, 0.0));
        let zero = StabilityReport::from_values(vec![0.0; 4]);
        assert!(zero.degenerate);
        assert_eq!(zero.max_pct_drop, 0.0);
    }

    #[test]
    fn shuffle_study_control_is_flat() {
        let values: Vec<f64> = (0..24).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let t = single_neuron(&values);
        let study = shuffle_study(&NlcIncremental::new(1).unwrap(), &t, 20, 5).unwrap();
        assert_eq!(study.control.std, 0.0);
        assert_eq!(study.control.max_pct_drop, 0.0);
        assert_eq!(study.shuffled.runs, 20);
        let csv = study.to_csv();
        assert!(csv.starts_with(STABILITY_CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
        assert!(shuffle_study(&Nlc, &t, 1, 0).is_err());
        let batch = shuffle_study(&Nlc, &t, 20, 5).unwrap();
        assert!(batch.shuffled.std <= 1e-9);
    }
}

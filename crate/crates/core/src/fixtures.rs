//! Small hand-built traces with known answers.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::trace::{ActivationTrace, Layer};

pub const FIXTURES: [&str; 4] = ["worked-example", "reversed", "collision", "dominance"];

fn scalar_trace(model: &str, values: &[f64]) -> Result<ActivationTrace> {
    ActivationTrace::new(model, values.len(), vec![Layer::new("layer0", 1, values.to_vec())?])
}

/// One neuron, inputs `+5, -5, +10, -10`. Batch NLC is 62.5; incremental
/// NLC with batch size 2 commits both batches and also ends at 62.5.
pub fn worked_example() -> Result<ActivationTrace> {
    scalar_trace("worked-example", &[5.0, -5.0, 10.0, -10.0])
}

/// The worked example in reverse order. Incremental NLC with batch size 2
/// commits `{-10, +10}` (variance 100) and rejects the second batch.
pub fn reversed() -> Result<ActivationTrace> {
    scalar_trace("reversed", &[-10.0, 10.0, -5.0, 5.0])
}

/// Mirrors each vector so the rows have zero mean and the population
/// covariance is `sum(v v^T) / vectors`.
fn mirrored(vectors: &[(usize, [f64; 3])]) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for &(count, v) in vectors {
        for _ in 0..count {
            rows.push(v.to_vec());
            rows.push(v.iter().map(|x| -x).collect());
        }
    }
    rows
}

/// Two 3-neuron layers with identical NLC but different spectra:
/// `sigma1` has covariance `[[4,1,0],[1,4,1],[0,1,4]]` and `sigma2` has
/// `[[4,0,2],[0,4,0],[2,0,4]]`. Both have 48 rows.
pub fn collision() -> Result<ActivationTrace> {
    let sigma1 = mirrored(&[
        (6, [2.0, 2.0, 0.0]),
        (6, [0.0, 2.0, 2.0]),
        (1, [6.0, 0.0, 6.0]),
        (1, [6.0, 0.0, -6.0]),
        (3, [0.0, 4.0, 0.0]),
        (7, [0.0, 0.0, 0.0]),
    ]);
    // 12 vectors, listed twice to match the 48 rows of sigma1
    let sigma2 = mirrored(&[
        (2, [6.0, 0.0, 6.0]),
        (6, [2.0, 0.0, -2.0]),
        (6, [0.0, 4.0, 0.0]),
        (10, [0.0, 0.0, 0.0]),
    ]);
    ActivationTrace::new(
        "collision",
        sigma1.len(),
        vec![Layer::from_rows("sigma1", &sigma1)?, Layer::from_rows("sigma2", &sigma2)?],
    )
}

/// One neuron: `n - 2` ordinary inputs uniform in `[-1, 1]` followed by the
/// extreme pair `+extreme, -extreme`. Under only-increase incremental NLC
/// the final value depends strongly on where the pair lands in the order.
pub fn dominance(n: usize, extreme: f64, seed: u64) -> Result<ActivationTrace> {
    if n < 3 {
        return Err(Error::Parameter("dominance fixture needs n >= 3".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut values: Vec<f64> = (0..n - 2).map(|_| rng.random_range(-1.0..=1.0)).collect();
    values.extend([extreme, -extreme]);
    scalar_trace("dominance", &values)
}

/// Builds a fixture by name with the default dominance parameters
/// (200 inputs, extreme value 30).
pub fn by_name(name: &str, seed: u64) -> Result<ActivationTrace> {
    match name {
        "worked-example" => worked_example(),
        "reversed" => reversed(),
        "collision" => collision(),
        "dominance" => dominance(200, 30.0, seed),
        _ => Err(Error::Parameter(format!(
            "unknown fixture `{name}`; available: {}",
            FIXTURES.join(", ")
        ))),
    }
}

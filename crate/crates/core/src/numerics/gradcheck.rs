//! Central-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::Rng;
use rand::SeedableRng;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Default perturbation for central differences.
pub const DELTA: f64 = 1e-5;
/// Relative-error budget every differentiable path must meet in 64-bit mode.
pub const TOLERANCE: f64 = 1e-4;

/// Worst sampled coordinate of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_path: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub samples: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    // The denominator floor keeps finite-difference noise on dead paths from
    // registering as spurious relative error.
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4)
}

/// Compare `analytic` gradients against central differences of `loss_fn` on a
/// sampled subset of parameter coordinates.
///
/// `loss_fn` must be a deterministic function of the store.
pub fn check_against(
    store: &mut ParamStore,
    analytic: &BTreeMap<String, Tensor>,
    mut loss_fn: impl FnMut(&ParamStore) -> Result<f64>,
    samples: usize,
    delta: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let coords: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(path, tensor)| (0..tensor.len()).map(move |i| (path.clone(), i)))
        .collect();
    let chosen = sample_without_replacement(coords.len(), samples, seed);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_path: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        samples: chosen.len(),
    };

    for idx in chosen {
        let (path, coord) = &coords[idx];
        let original = store.get(path)?.data()[*coord];

        store.get_mut(path)?.data_mut()[*coord] = original + delta;
        let plus = loss_fn(store)?;
        store.get_mut(path)?.data_mut()[*coord] = original - delta;
        let minus = loss_fn(store)?;
        store.get_mut(path)?.data_mut()[*coord] = original;

        let numeric = (plus - minus) / (2.0 * delta);
        let a = analytic.get(path).map(|t| t.data()[*coord]).unwrap_or(0.0);
        let err = relative_error(a, numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_path = path.clone();
            report.worst_index = *coord;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Convenience wrapper: evaluate one loss-and-gradient closure, then verify
/// the returned gradients with central differences of the loss-only path.
pub fn check(
    store: &mut ParamStore,
    loss_and_grads: impl Fn(&ParamStore) -> Result<(f64, BTreeMap<String, Tensor>)>,
    samples: usize,
    delta: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_grads(store)?;
    check_against(
        store,
        &analytic,
        |s| loss_and_grads(s).map(|(l, _)| l),
        samples,
        delta,
        seed,
    )
}

fn sample_without_replacement(population: usize, want: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..population).collect();
    if want >= population {
        return indices;
    }
    let mut rng = StdRng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first `want` slots end up uniformly sampled.
    for i in 0..want {
        let j = rng.gen_range(i..population);
        indices.swap(i, j);
    }
    indices.truncate(want);
    indices
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_checks_cleanly() {
        // loss = x^2 / 2 at x = 3: analytic and numeric agree to ~1e-9.
        let mut store = ParamStore::new();
        store.register("x", Tensor::scalar(3.0)).unwrap();
        let loss = |s: &ParamStore| -> Result<(f64, BTreeMap<String, Tensor>)> {
            let x = s.get("x")?.data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), Tensor::scalar(x));
            Ok((0.5 * x * x, grads))
        };
        let report = check(&mut store, loss, 10, DELTA, 1).unwrap();
        assert!(report.passed(), "max err {}", report.max_rel_err);
        assert!(report.max_rel_err < 1e-8);
    }

    #[test]
    fn corrupted_gradient_is_caught_and_named() {
        let mut store = ParamStore::new();
        store.register("w.good", Tensor::scalar(1.0)).unwrap();
        store.register("w.bad", Tensor::scalar(2.0)).unwrap();
        let loss = |s: &ParamStore| -> Result<f64> {
            let a = s.get("w.good")?.data()[0];
            let b = s.get("w.bad")?.data()[0];
            Ok(a * a + b * b)
        };
        let mut analytic = BTreeMap::new();
        analytic.insert("w.good".to_string(), Tensor::scalar(2.0));
        analytic.insert("w.bad".to_string(), Tensor::scalar(-4.0)); // wrong sign
        let report = check_against(&mut store, &analytic, loss, 10, DELTA, 2).unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst_path, "w.bad");
    }

    #[test]
    fn sampling_is_deterministic_and_capped() {
        let a = sample_without_replacement(100, 20, 9);
        let b = sample_without_replacement(100, 20, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        let all = sample_without_replacement(5, 20, 9);
        assert_eq!(all.len(), 5);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 20, "duplicates in sample");
    }
}

//! Central finite-difference verification of analytic gradients.

use rand::seq::index;

use super::init::seeded_rng;
use super::params::Parameters;
use crate::error::{PaseError, Result};

/// Denominator floor of the relative error. Central differences of an O(1)
/// loss at `ε = 1e-5` carry absolute roundoff near `1e-10`; the floor keeps
/// that noise below `1e-5` relative on near-zero gradients.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `tensor[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Tensors skipped because they are frozen.
    pub skipped: Vec<String>,
    /// Entries whose `±ε` probes crossed a ReLU kink; these have no
    /// two-sided derivative to compare against and are not scored.
    pub kinks: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckOptions {
    /// Check at most this many entries per tensor (all when `None`).
    pub max_per_tensor: Option<usize>,
    /// Tensor-name prefixes excluded from the check.
    pub frozen: Vec<String>,
    pub seed: u64,
}

/// Compares `analytic` (a gradient container shaped like `model`) against
/// central differences of `loss`.
pub fn check_gradients<M, F>(model: &M, analytic: &M, epsilon: f64, opts: &GradCheckOptions, mut loss: F) -> Result<GradCheckReport>
where
    M: Parameters<f64> + Clone,
    F: FnMut(&M) -> f64,
{
    check_gradients_piecewise(model, analytic, epsilon, opts, |m| (loss(m), 0))
}

/// As [`check_gradients`] for piecewise-smooth losses: `loss` also returns
/// an activation fingerprint, and an entry is scored only when both probes
/// share the fingerprint of the unperturbed model.
pub fn check_gradients_piecewise<M, F>(
    model: &M,
    analytic: &M,
    epsilon: f64,
    opts: &GradCheckOptions,
    mut loss: F,
) -> Result<GradCheckReport>
where
    M: Parameters<f64> + Clone,
    F: FnMut(&M) -> (f64, u64),
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PaseError::InvalidEpsilon);
    }
    let grads: Vec<(String, Vec<f64>)> = analytic
        .collect_params()
        .into_iter()
        .map(|p| (p.name, p.data.to_vec()))
        .collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped: Vec::new(),
        kinks: 0,
    };
    let (_, base) = loss(model);
    for (t, (name, grad)) in grads.iter().enumerate() {
        if grad.is_empty() || opts.frozen.iter().any(|f| name.starts_with(f.as_str())) {
            report.skipped.push(name.clone());
            continue;
        }
        let picks: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < grad.len() => {
                let mut rng = seeded_rng(opts.seed, 0x6752_4144, t as u64);
                let mut v = index::sample(&mut rng, grad.len(), k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..grad.len()).collect(),
        };
        for i in picks {
            let original = probe.collect_params()[t].data[i];
            let set = |m: &mut M, v: f64| m.collect_params_mut()[t].data[i] = v;
            set(&mut probe, original + epsilon);
            let (up, up_pattern) = loss(&probe);
            set(&mut probe, original - epsilon);
            let (down, down_pattern) = loss(&probe);
            set(&mut probe, original);
            if up_pattern != base || down_pattern != base {
                report.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(grad[i], numeric);
            report.checked += 1;
            if report.worst.is_empty() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn linear_gradient_passes() {
        let lin = Linear {
            weight: array![[0.3, -0.2], [0.1, 0.7]],
            bias: array![0.05, -0.1],
        };
        let x = array![1.5, -0.5];
        let loss = |m: &Linear<f64>| m.forward(x.view()).mapv(|v| v * v).sum();
        let mut grad = Linear::zeros(2, 2);
        let y = lin.forward(x.view());
        lin.backward(x.view(), (2.0 * &y).view(), &mut grad);
        let r = check_gradients(&lin, &grad, 1e-5, &GradCheckOptions::default(), loss).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 6);

        let mut wrong = grad.clone();
        wrong.weight[[0, 0]] += 0.1;
        let r = check_gradients(&lin, &wrong, 1e-5, &GradCheckOptions::default(), loss).unwrap();
        assert_eq!(r.worst, "weight[0]");
    }

    #[test]
    fn frozen_tensors_are_excluded() {
        let lin = Linear::<f64>::identity(2);
        let mut wrong = Linear::zeros(2, 2);
        wrong.bias.fill(5.0);
        let opts = GradCheckOptions {
            frozen: vec!["bias".into()],
            ..Default::default()
        };
        let r = check_gradients(&lin, &wrong, 1e-5, &opts, |m| m.weight.sum()).unwrap();
        assert!(r.max_relative_error > 0.5);
        assert_eq!(r.skipped, vec!["bias".to_string()]);
        let zero = check_gradients(&lin, &wrong, 1e-5, &opts, |m| m.weight.sum() * 0.0).unwrap();
        assert_eq!(zero.max_relative_error, 0.0);
    }

    #[test]
    fn zero_epsilon_rejected() {
        let lin = Linear::<f64>::identity(2);
        assert!(matches!(
            check_gradients(&lin, &lin, 0.0, &GradCheckOptions::default(), |_| 0.0),
            Err(PaseError::InvalidEpsilon)
        ));
    }
}

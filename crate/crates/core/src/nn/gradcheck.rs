//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen entries per tensor.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_error: f64,
    /// `max |analytic - numeric| / max(|analytic|, |numeric|)` over the checked entries.
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.relative_error).fold(0.0, f64::max)
    }
}

/// Compares `analytic[i]` with central differences of `f` with respect to
/// `params[i]`. `f` must be a pure function of the parameter list.
pub fn grad_check<F>(mut f: F, params: &[Tensor], names: &[&str], analytic: &[Tensor], opts: CheckOptions) -> GradReport
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (ti, grad) in analytic.iter().enumerate() {
        let len = params[ti].len();
        let indices: Vec<usize> = match opts.max_entries {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut max_abs = 0.0f64;
        let mut scale = 0.0f64;
        for &i in &indices {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + opts.step;
            let up = f(&work);
            work[ti].data_mut()[i] = orig - opts.step;
            let down = f(&work);
            work[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad.data()[i];
            max_abs = max_abs.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let relative = if scale > 0.0 { max_abs / scale } else { 0.0 };
        tensors.push(TensorCheck {
            name: names.get(ti).map_or_else(|| format!("#{ti}"), |s| s.to_string()),
            checked: indices.len(),
            max_abs_error: max_abs,
            relative_error: relative,
        });
    }
    let passed = tensors.iter().all(|t| t.relative_error <= opts.tolerance);
    GradReport {
        tensors,
        tolerance: opts.tolerance,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        let p = vec![Tensor::new(&[2], vec![0.3, -0.4]).unwrap()];
        let f = |t: &[Tensor]| t[0].data().iter().map(|x| x * x).sum::<f64>();
        let good = vec![Tensor::new(&[2], vec![0.6, -0.8]).unwrap()];
        let bad = vec![Tensor::new(&[2], vec![0.6, -0.7]).unwrap()];
        assert!(grad_check(f, &p, &["x"], &good, CheckOptions::default()).passed);
        let r = grad_check(f, &p, &["x"], &bad, CheckOptions::default());
        assert!(!r.passed);
        assert!((r.tensors[0].relative_error - 0.125).abs() < 1e-6);
    }
}

//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{GradientSet, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Relative tolerance on the per-leaf error.
    pub tol: f64,
    /// Lower bound on the per-leaf error denominator, so leaves whose true
    /// gradient is zero are judged on absolute error.
    pub abs_floor: f64,
    /// Check a random subset of this many entries per leaf (all if `None`).
    pub max_entries_per_leaf: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tol: 1e-4,
            abs_floor: 1e-8,
            max_entries_per_leaf: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LeafCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_abs_error: f64,
    /// `max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞, abs_floor)`.
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub leaves: Vec<LeafCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.passed)
    }

    pub fn worst(&self) -> Option<&LeafCheck> {
        self.leaves
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &LeafCheck> {
        self.leaves.iter().filter(|l| !l.passed)
    }
}

/// Compare a supplied gradient against central differences of `value`.
///
/// `value` receives the full leaf list with one entry perturbed.
pub fn check_gradient<F>(
    value: F,
    leaves: &[(String, Tensor<f64>)],
    analytic: &GradientSet<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[(String, Tensor<f64>)]) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<(String, Tensor<f64>)> = leaves.to_vec();
    let mut report = GradCheckReport {
        tol: cfg.tol,
        leaves: Vec::new(),
    };
    for li in 0..leaves.len() {
        let name = leaves[li].0.clone();
        let n = leaves[li].1.len();
        let zeros = Tensor::zeros(leaves[li].1.rows(), leaves[li].1.cols());
        let grad = analytic.get(&name).unwrap_or(&zeros);
        let entries: Vec<usize> = match cfg.max_entries_per_leaf {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut max_abs: f64 = 0.0;
        let mut norm_a: f64 = 0.0;
        let mut norm_n: f64 = 0.0;
        for &k in &entries {
            let orig = work[li].1.data()[k];
            work[li].1.data_mut()[k] = orig + cfg.step;
            let plus = value(&work)?;
            work[li].1.data_mut()[k] = orig - cfg.step;
            let minus = value(&work)?;
            work[li].1.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[k];
            max_abs = max_abs.max((a - numeric).abs());
            norm_a = norm_a.max(a.abs());
            norm_n = norm_n.max(numeric.abs());
        }
        let rel = max_abs / norm_a.max(norm_n).max(cfg.abs_floor);
        report.leaves.push(LeafCheck {
            name,
            entries_checked: entries.len(),
            max_abs_error: max_abs,
            rel_error: rel,
            passed: rel <= cfg.tol && rel.is_finite(),
        });
    }
    Ok(report)
}

/// Check tape gradients of the scalar built by `build` against central
/// differences, for every leaf in `leaves`.
pub fn grad_check<F>(
    build: F,
    leaves: &[(String, Tensor<f64>)],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ls: &[(String, Tensor<f64>)]| -> Result<(Tape<f64>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ls
            .iter()
            .map(|(n, t)| tape.leaf(n.clone(), t.clone()))
            .collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, out))
    };
    let (tape, out) = eval(leaves)?;
    let analytic = tape.backward(out)?;
    check_gradient(
        |ls| {
            let (t, o) = eval(ls)?;
            Ok(t.value(o).get(0, 0))
        },
        leaves,
        &analytic,
        cfg,
    )
}

//! Invariant suites behind the `audit` subcommands and the acceptance test.

pub mod algebra;
pub mod equivariance;
pub mod gradient;
pub mod paths;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use equiformer::graph::AtomisticGraph;
use equiformer::irreps::{Irrep, Irreps, MulIr};
use equiformer::so3::Parity;
use equiformer::nn::ParamSet;
use equiformer::{Result, Tensor};

pub use algebra::algebra_suite;
pub use equivariance::{equivariance_suite, EquivarianceOptions};
pub use gradient::{gradient_suite, model_gradient_suite, op_gradient_suite, GradientOptions};
pub use paths::{brute_force_paths, compare_paths, path_count_suite, paths_report};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    /// Measured error (or count mismatch).
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Passes when `value ≤ tol` and finite.
    pub fn check(&mut self, name: impl Into<String>, value: f64, tol: f64) -> bool {
        self.check_with(name, value, tol, String::new())
    }

    pub fn check_with(&mut self, name: impl Into<String>, value: f64, tol: f64, note: impl Into<String>) -> bool {
        let passed = value.is_finite() && value <= tol;
        self.checks.push(Check {
            name: name.into(),
            value,
            tol,
            passed,
            note: note.into(),
        });
        passed
    }

    pub fn flag(&mut self, name: impl Into<String>, ok: bool, note: impl Into<String>) -> bool {
        self.checks.push(Check {
            name: name.into(),
            value: if ok { 0.0 } else { 1.0 },
            tol: 0.0,
            passed: ok,
            note: note.into(),
        });
        ok
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        for c in &mut self.checks {
            c.name = format!("{prefix}/{}", c.name);
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn worst(&self, prefix: &str) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.name.starts_with(prefix))
            .map(|c| c.value)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "{} {:<56} {:>10.3e} (tol {:.0e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tol
            )?;
            if !c.note.is_empty() {
                write!(f, "  {}", c.note)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            std * n
        })
        .collect::<Vec<f64>>();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Every parameter shifted by Gaussian noise so biases, norms and gains
/// are generic rather than at their initial values.
pub(crate) fn perturb<R: Rng + ?Sized>(params: &mut ParamSet, rng: &mut R, std: f64) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += std * n;
        }
    }
}

/// `n` atoms inside a ball, pairwise at least `min_dist` apart.
pub(crate) fn random_positions<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64, min_dist: f64) -> Vec<[f64; 3]> {
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(n);
    while out.len() < n {
        let p = [
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
        ];
        if p.iter().map(|v| v * v).sum::<f64>() > radius * radius {
            continue;
        }
        let far = out.iter().all(|q| {
            let d2: f64 = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum();
            d2 >= min_dist * min_dist
        });
        if far {
            out.push(p);
        }
    }
    out
}

/// Random graph whose coordinates are multiples of 2⁻¹⁰, so translations
/// by dyadic vectors are exact.
pub(crate) fn random_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, species: usize, cutoff: f64) -> Result<AtomisticGraph> {
    let positions = random_positions(rng, n, 1.6, 0.8)
        .into_iter()
        .map(|p| p.map(|v| (v * 1024.0).round() / 1024.0))
        .collect();
    let z = (0..n).map(|_| rng.random_range(0..species)).collect();
    AtomisticGraph::new(z, positions, cutoff)
}

/// Blocks in ascending degree, even before odd, each present with
/// probability ½ (at least one block overall).
pub(crate) fn random_irreps<R: Rng + ?Sized>(rng: &mut R, e3: bool, l_max: u32, max_mul: usize) -> Irreps {
    loop {
        let mut blocks = Vec::new();
        for l in 0..=l_max {
            let kinds: &[Option<Parity>] = if e3 { &[Some(Parity::Even), Some(Parity::Odd)] } else { &[None] };
            for &p in kinds {
                if rng.random_bool(0.5) {
                    blocks.push(MulIr {
                        mul: rng.random_range(1..=max_mul),
                        ir: Irrep::new(l, p),
                    });
                }
            }
        }
        if !blocks.is_empty() {
            return Irreps::new(blocks).expect("positive multiplicities");
        }
    }
}

//! Clebsch–Gordan coupling tensors in the real harmonic basis.
//!
//! The complex Condon–Shortley coefficients come from the Racah formula and
//! are rotated into the real basis of [`super::harmonics`]. The result is an
//! isometric coupling: `Σ_{m1,m2} C[m1,m2,m3] C[m1,m2,m3'] = δ_{m3 m3'}`,
//! anchored by `C(0,0,0) = 1`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::Complex;

/// Dense `(2l1+1) × (2l2+1) × (2l3+1)` coupling tensor, index `[m1][m2][m3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CgTensor {
    pub l1: u32,
    pub l2: u32,
    pub l3: u32,
    pub coeffs: Vec<f64>,
    /// Nonzero entries `(m1, m2, m3, value)` for sparse contraction.
    pub nonzero: Vec<(usize, usize, usize, f64)>,
}

impl CgTensor {
    pub fn dims(&self) -> [usize; 3] {
        [
            2 * self.l1 as usize + 1,
            2 * self.l2 as usize + 1,
            2 * self.l3 as usize + 1,
        ]
    }

    pub fn get(&self, m1: usize, m2: usize, m3: usize) -> f64 {
        let [_, d2, d3] = self.dims();
        self.coeffs[(m1 * d2 + m2) * d3 + m3]
    }

    pub fn is_zero(&self) -> bool {
        self.nonzero.is_empty()
    }

    /// `z[m3] = Σ C[m1,m2,m3] x[m1] y[m2]`.
    pub fn contract(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims()[2]];
        for &(a, b, c, v) in &self.nonzero {
            out[c] += v * x[a] * y[b];
        }
        out
    }
}

/// Selection rule `|l1 − l2| ≤ l3 ≤ l1 + l2`.
pub fn selection_rule(l1: u32, l2: u32, l3: u32) -> bool {
    l1.abs_diff(l2) <= l3 && l3 <= l1 + l2
}

static CACHE: OnceLock<RwLock<HashMap<(u32, u32, u32), Arc<CgTensor>>>> = OnceLock::new();

/// Cached real-basis coupling tensor; the zero tensor outside the selection rule.
pub fn clebsch_gordan(l1: u32, l2: u32, l3: u32) -> Arc<CgTensor> {
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(t) = cache.read().expect("cg cache poisoned").get(&(l1, l2, l3)) {
        return t.clone();
    }
    let t = Arc::new(build(l1, l2, l3));
    cache
        .write()
        .expect("cg cache poisoned")
        .entry((l1, l2, l3))
        .or_insert(t)
        .clone()
}

fn factorial(n: i64) -> f64 {
    debug_assert!(n >= 0);
    (1..=n).map(|k| k as f64).product()
}

/// `⟨j1 m1 j2 m2 | J M⟩` with the Condon–Shortley phase.
fn complex_cg(j1: i64, m1: i64, j2: i64, m2: i64, j: i64, m: i64) -> f64 {
    if m1 + m2 != m || m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    if j < (j1 - j2).abs() || j > j1 + j2 {
        return 0.0;
    }
    let pre = ((2 * j + 1) as f64 * factorial(j + j1 - j2) * factorial(j - j1 + j2)
        * factorial(j1 + j2 - j)
        / factorial(j1 + j2 + j + 1))
    .sqrt();
    let norm = (factorial(j + m)
        * factorial(j - m)
        * factorial(j1 - m1)
        * factorial(j1 + m1)
        * factorial(j2 - m2)
        * factorial(j2 + m2))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=(j1 + j2 + j) {
        let d = [
            j1 + j2 - j - k,
            j1 - m1 - k,
            j2 + m2 - k,
            j - j2 + m1 + k,
            j - j1 - m2 + k,
        ];
        if d.iter().any(|&v| v < 0) {
            continue;
        }
        let denom = factorial(k) * d.iter().map(|&v| factorial(v)).product::<f64>();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / denom;
    }
    pre * norm * sum
}

/// Rows: real order index; columns: complex `m`; both offset by `l`.
fn real_from_complex(l: i64) -> Vec<Vec<Complex<f64>>> {
    let d = (2 * l + 1) as usize;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = vec![vec![Complex::new(0.0, 0.0); d]; d];
    u[l as usize][l as usize] = Complex::new(1.0, 0.0);
    for mu in 1..=l {
        let sign = if mu % 2 == 0 { 1.0 } else { -1.0 };
        let (p, n) = ((l + mu) as usize, (l - mu) as usize);
        u[p][p] = Complex::new(sign * h, 0.0);
        u[p][n] = Complex::new(h, 0.0);
        u[n][n] = Complex::new(0.0, h);
        u[n][p] = Complex::new(0.0, -sign * h);
    }
    u
}

fn build(l1: u32, l2: u32, l3: u32) -> CgTensor {
    let (d1, d2, d3) = (
        2 * l1 as usize + 1,
        2 * l2 as usize + 1,
        2 * l3 as usize + 1,
    );
    let mut coeffs = vec![0.0; d1 * d2 * d3];
    if selection_rule(l1, l2, l3) {
        let (j1, j2, j3) = (l1 as i64, l2 as i64, l3 as i64);
        let (u1, u2, u3) = (real_from_complex(j1), real_from_complex(j2), real_from_complex(j3));
        let mut cplx = vec![Complex::new(0.0, 0.0); d1 * d2 * d3];
        for a in 0..d1 {
            for b in 0..d2 {
                for c in 0..d3 {
                    let mut acc = Complex::new(0.0, 0.0);
                    for m1 in -j1..=j1 {
                        let ua = u1[a][(m1 + j1) as usize].conj();
                        if ua.norm_sqr() == 0.0 {
                            continue;
                        }
                        for m2 in -j2..=j2 {
                            let ub = u2[b][(m2 + j2) as usize].conj();
                            if ub.norm_sqr() == 0.0 {
                                continue;
                            }
                            let m3 = m1 + m2;
                            if m3.abs() > j3 {
                                continue;
                            }
                            let uc = u3[c][(m3 + j3) as usize];
                            if uc.norm_sqr() == 0.0 {
                                continue;
                            }
                            let cg = complex_cg(j1, m1, j2, m2, j3, m3);
                            acc += uc * ua * ub * cg;
                        }
                    }
                    cplx[(a * d2 + b) * d3 + c] = acc;
                }
            }
        }
        // The real-basis tensor is either purely real or purely imaginary.
        let re: f64 = cplx.iter().map(|z| z.re * z.re).sum();
        let im: f64 = cplx.iter().map(|z| z.im * z.im).sum();
        for (dst, z) in coeffs.iter_mut().zip(&cplx) {
            *dst = if re >= im { z.re } else { z.im };
        }
        for v in coeffs.iter_mut() {
            if v.abs() < 1e-15 {
                *v = 0.0;
            }
        }
    }
    let mut nonzero = Vec::new();
    for a in 0..d1 {
        for b in 0..d2 {
            for c in 0..d3 {
                let v = coeffs[(a * d2 + b) * d3 + c];
                if v != 0.0 {
                    nonzero.push((a, b, c, v));
                }
            }
        }
    }
    CgTensor {
        l1,
        l2,
        l3,
        coeffs,
        nonzero,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_anchor() {
        let c = clebsch_gordan(0, 0, 0);
        assert_eq!(c.coeffs, vec![1.0]);
    }

    #[test]
    fn forbidden_triple_is_zero() {
        let c = clebsch_gordan(1, 1, 3);
        assert!(c.is_zero());
        assert_eq!(c.coeffs.len(), 3 * 3 * 7);
        assert!(c.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn known_complex_values() {
        // ⟨1 1 1 −1 | 0 0⟩ = 1/√3
        assert!((complex_cg(1, 1, 1, -1, 0, 0) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        // ⟨1 1 1 0 | 1 1⟩ = 1/√2
        assert!((complex_cg(1, 1, 1, 0, 1, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        // ⟨1 0 1 0 | 2 0⟩ = √(2/3)
        assert!((complex_cg(1, 0, 1, 0, 2, 0) - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cache_returns_same_instance() {
        let a = clebsch_gordan(2, 1, 2);
        let b = clebsch_gordan(2, 1, 2);
        assert!(Arc::ptr_eq(&a, &b));
    }
}

//! Real spherical harmonics as homogeneous Cartesian polynomials.
//!
//! Convention: order index `m ∈ [−L, L]` is stored at position `m + L`;
//! `Y_{L,m>0} ∝ Re (x + iy)^m`, `Y_{L,m<0} ∝ Im (x + iy)^|m|`, no
//! Condon–Shortley phase. Normalization is "component": `Y^(0) = 1` and
//! `‖Y^(L)(n)‖² = 2L + 1` on the unit sphere. For `L = 1` this gives
//! `Y^(1)(n) = √3 · (n_y, n_z, n_x)`.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};
use crate::real::Real;

/// One monomial `coeff · x^a y^b z^c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: [u32; 3],
}

/// Sparse polynomial in (x, y, z).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    fn from_map(map: BTreeMap<[u32; 3], f64>) -> Self {
        let terms = map
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(powers, coeff)| Monomial { coeff, powers })
            .collect();
        Self { terms }
    }

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coeff
                    * v[0].powi(t.powers[0] as i32)
                    * v[1].powi(t.powers[1] as i32)
                    * v[2].powi(t.powers[2] as i32)
            })
            .sum()
    }

    /// Evaluation over any [`Real`] scalar.
    pub fn eval_real<T: Real>(&self, v: [T; 3]) -> T {
        let mut acc = T::zero();
        for t in &self.terms {
            let mut term = T::from_f64(t.coeff);
            for (axis, &p) in t.powers.iter().enumerate() {
                for _ in 0..p {
                    term *= v[axis];
                }
            }
            acc += term;
        }
        acc
    }

    pub fn derivative(&self, axis: usize) -> Polynomial {
        let mut map = BTreeMap::new();
        for t in &self.terms {
            let p = t.powers[axis];
            if p == 0 {
                continue;
            }
            let mut powers = t.powers;
            powers[axis] -= 1;
            *map.entry(powers).or_insert(0.0) += t.coeff * p as f64;
        }
        Polynomial::from_map(map)
    }
}

/// The `2L + 1` harmonics of one degree plus their gradients.
#[derive(Debug)]
pub struct HarmonicPolynomials {
    pub l: u32,
    pub components: Vec<Polynomial>,
    pub gradients: Vec<[Polynomial; 3]>,
}

impl HarmonicPolynomials {
    fn build(l: u32) -> Self {
        let components = build_real_harmonics(l);
        let gradients = components
            .iter()
            .map(|p| [p.derivative(0), p.derivative(1), p.derivative(2)])
            .collect();
        Self {
            l,
            components,
            gradients,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.l as usize + 1
    }
}

static CACHE: OnceLock<RwLock<Vec<Arc<HarmonicPolynomials>>>> = OnceLock::new();

/// Cached polynomial table for degree `l`; built once, immutable after.
pub fn harmonic_polynomials(l: u32) -> Arc<HarmonicPolynomials> {
    let cache = CACHE.get_or_init(|| RwLock::new(Vec::new()));
    if let Some(p) = cache.read().expect("harmonics cache poisoned").get(l as usize) {
        return p.clone();
    }
    let mut w = cache.write().expect("harmonics cache poisoned");
    while w.len() <= l as usize {
        let next = w.len() as u32;
        w.push(Arc::new(HarmonicPolynomials::build(next)));
    }
    w[l as usize].clone()
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn poly_mul(a: &BTreeMap<[u32; 3], f64>, b: &BTreeMap<[u32; 3], f64>) -> BTreeMap<[u32; 3], f64> {
    let mut out = BTreeMap::new();
    for (pa, ca) in a {
        for (pb, cb) in b {
            let p = [pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]];
            *out.entry(p).or_insert(0.0) += ca * cb;
        }
    }
    out
}

fn build_real_harmonics(l: u32) -> Vec<Polynomial> {
    // r² = x² + y² + z²
    let r2: BTreeMap<[u32; 3], f64> = [([2, 0, 0], 1.0), ([0, 2, 0], 1.0), ([0, 0, 2], 1.0)]
        .into_iter()
        .collect();
    let mut r2_pow = vec![BTreeMap::from([([0, 0, 0], 1.0)])];
    for k in 1..=(l / 2 + 1) {
        let next = poly_mul(&r2_pow[k as usize - 1], &r2);
        r2_pow.push(next);
    }

    // Π_l^m(z, r): the z/r-dependent factor of the solid harmonic.
    let pi = |m: u32| -> BTreeMap<[u32; 3], f64> {
        let mut out = BTreeMap::new();
        for k in 0..=((l - m) / 2) {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * 2f64.powi(-(l as i32)) * binomial(l, k) * binomial(2 * l - 2 * k, l)
                * factorial(l - 2 * k)
                / factorial(l - 2 * k - m);
            for (p, v) in &r2_pow[k as usize] {
                let key = [p[0], p[1], p[2] + l - 2 * k - m];
                *out.entry(key).or_insert(0.0) += c * v;
            }
        }
        out
    };
    // (x + iy)^m split into real and imaginary parts.
    let ab = |m: u32| -> (BTreeMap<[u32; 3], f64>, BTreeMap<[u32; 3], f64>) {
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        for p in 0..=m {
            let c = binomial(m, p);
            let q = m - p; // power of (iy)
            let key = [p, q, 0];
            match q % 4 {
                0 => *a.entry(key).or_insert(0.0) += c,
                1 => *b.entry(key).or_insert(0.0) += c,
                2 => *a.entry(key).or_insert(0.0) -= c,
                _ => *b.entry(key).or_insert(0.0) -= c,
            }
        }
        (a, b)
    };

    let scale = |map: BTreeMap<[u32; 3], f64>, s: f64| {
        Polynomial::from_map(map.into_iter().map(|(k, v)| (k, v * s)).collect())
    };
    let norm = |m: u32| ((2 * l + 1) as f64 * factorial(l - m) / factorial(l + m)).sqrt();

    let mut out = vec![Polynomial::default(); 2 * l as usize + 1];
    out[l as usize] = scale(pi(0), norm(0));
    for m in 1..=l {
        let (a, b) = ab(m);
        let p = pi(m);
        let s = std::f64::consts::SQRT_2 * norm(m);
        out[(l + m) as usize] = scale(poly_mul(&p, &a), s);
        out[(l - m) as usize] = scale(poly_mul(&p, &b), s);
    }
    out
}

/// Real spherical harmonics of degree `l` at a unit vector.
///
/// Fails with a domain error on a zero vector and with a precondition error
/// when `n` is not unit length within 1e-8.
pub fn real_sph_harm(l: u32, n: [f64; 3]) -> Result<Vec<f64>> {
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Domain(format!(
            "spherical harmonics need a nonzero direction, got {n:?}"
        )));
    }
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!(
            "spherical harmonics expect a unit vector, got norm {norm}"
        )));
    }
    let table = harmonic_polynomials(l);
    Ok(table.components.iter().map(|p| p.eval(n)).collect())
}

/// Harmonics of `r / ‖r‖` for any nonzero `r`.
pub fn sph_harm_of_vector(l: u32, r: [f64; 3]) -> Result<Vec<f64>> {
    let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Domain(format!(
            "spherical harmonics need a nonzero direction, got {r:?}"
        )));
    }
    real_sph_harm(l, [r[0] / norm, r[1] / norm, r[2] / norm])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_one() {
        assert_eq!(real_sph_harm(0, [0.6, 0.0, 0.8]).unwrap(), vec![1.0]);
    }

    #[test]
    fn degree_one_is_scaled_yzx() {
        let y = real_sph_harm(1, [0.0, 0.0, 1.0]).unwrap();
        let s3 = 3f64.sqrt();
        assert!((y[0]).abs() < 1e-15);
        assert!((y[1] - s3).abs() < 1e-15);
        assert!((y[2]).abs() < 1e-15);
        let y = real_sph_harm(1, [0.6, 0.8, 0.0]).unwrap();
        assert!((y[0] - 0.8 * s3).abs() < 1e-14);
        assert!((y[2] - 0.6 * s3).abs() < 1e-14);
    }

    #[test]
    fn zero_vector_is_a_domain_error() {
        assert!(matches!(real_sph_harm(2, [0.0; 3]), Err(Error::Domain(_))));
        assert!(matches!(sph_harm_of_vector(1, [0.0; 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn non_unit_input_is_rejected() {
        assert!(real_sph_harm(1, [2.0, 0.0, 0.0]).is_err());
        assert!(sph_harm_of_vector(1, [2.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn polynomial_derivative() {
        // d/dx (3 x^2 y) = 6 x y
        let p = Polynomial {
            terms: vec![Monomial {
                coeff: 3.0,
                powers: [2, 1, 0],
            }],
        };
        let d = p.derivative(0);
        assert_eq!(d.eval([2.0, 5.0, 7.0]), 60.0);
        assert!(p.derivative(2).terms.is_empty());
    }
}

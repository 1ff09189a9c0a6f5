//! Wigner-D matrices in the real harmonic basis.
//!
//! `D_L(R)` is the unique matrix with `D_L(R) · Y^(L)(n) = Y^(L)(R n)`. It is
//! recovered by least squares over a fixed spread of sample directions, so it
//! lives in exactly the same basis as [`real_sph_harm`](super::real_sph_harm).

use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;

use super::harmonics::harmonic_polynomials;
use super::rotation::{Rotation, O3};
use super::Parity;

/// Orthogonal `(2L+1)×(2L+1)` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerD {
    pub l: u32,
    pub data: Vec<f64>,
}

impl WignerD {
    pub fn dim(&self) -> usize {
        2 * self.l as usize + 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim() + j]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.data[i * d + j] * v[j]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &WignerD) -> WignerD {
        let d = self.dim();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        WignerD { l: self.l, data }
    }

    pub fn transpose(&self) -> WignerD {
        let d = self.dim();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[j * d + i] = self.data[i * d + j];
            }
        }
        WignerD { l: self.l, data }
    }

    pub fn identity(l: u32) -> WignerD {
        let d = 2 * l as usize + 1;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        WignerD { l, data }
    }
}

/// Sample directions and the pseudo-inverse of their harmonic matrix.
struct Fit {
    points: Vec<[f64; 3]>,
    /// `K × (2L+1)` pseudo-inverse, row-major.
    pinv: Vec<f64>,
}

fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

impl Fit {
    fn build(l: u32) -> Fit {
        let d = 2 * l as usize + 1;
        let points = fibonacci_sphere(2 * d + 3);
        let polys = harmonic_polynomials(l);
        let y = DMatrix::from_fn(d, points.len(), |m, k| polys.components[m].eval(points[k]));
        let gram = &y * y.transpose();
        let inv = gram
            .try_inverse()
            .expect("harmonic sample matrix is full rank");
        let pinv = y.transpose() * inv;
        let data = (0..points.len())
            .flat_map(|k| (0..d).map(move |m| (k, m)))
            .map(|(k, m)| pinv[(k, m)])
            .collect();
        Fit { points, pinv: data }
    }
}

static FITS: OnceLock<RwLock<Vec<Arc<Fit>>>> = OnceLock::new();

fn fit(l: u32) -> Arc<Fit> {
    let cache = FITS.get_or_init(|| RwLock::new(Vec::new()));
    if let Some(f) = cache.read().expect("wigner cache poisoned").get(l as usize) {
        return f.clone();
    }
    let mut w = cache.write().expect("wigner cache poisoned");
    while w.len() <= l as usize {
        let next = w.len() as u32;
        w.push(Arc::new(Fit::build(next)));
    }
    w[l as usize].clone()
}

/// Real-basis Wigner-D matrix of degree `l` for a rotation.
pub fn wigner_d(l: u32, rotation: &Rotation) -> WignerD {
    let d = 2 * l as usize + 1;
    let fit = fit(l);
    let polys = harmonic_polynomials(l);
    let k = fit.points.len();
    // rotated[m][k] = Y_m(R n_k)
    let rotated: Vec<Vec<f64>> = {
        let rn: Vec<[f64; 3]> = fit.points.iter().map(|p| rotation.apply(*p)).collect();
        polys
            .components
            .iter()
            .map(|p| rn.iter().map(|v| p.eval(*v)).collect())
            .collect()
    };
    let mut data = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            data[i * d + j] = (0..k).map(|s| rotated[i][s] * fit.pinv[s * d + j]).sum();
        }
    }
    WignerD { l, data }
}

/// Representation of an O(3) element on a type-(l, p) block.
pub fn o3_matrix(l: u32, parity: Option<Parity>, g: &O3) -> WignerD {
    let mut d = wigner_d(l, &g.rotation);
    let flip = g.inversion && parity.map(|p| p == Parity::Odd).unwrap_or(l % 2 == 1);
    if flip {
        d.data.iter_mut().for_each(|v| *v = -*v);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::real_sph_harm;

    #[test]
    fn identity_rotation_gives_identity() {
        for l in 0..=4 {
            let d = wigner_d(l, &Rotation::identity());
            let id = WignerD::identity(l);
            for (a, b) in d.data.iter().zip(&id.data) {
                assert!((a - b).abs() < 1e-12, "l={l}");
            }
        }
    }

    #[test]
    fn degree_one_is_permuted_rotation_matrix() {
        let r = Rotation::from_euler_zyz(0.3, 1.1, -0.7);
        let m = r.matrix();
        let d = wigner_d(1, &r);
        // basis order (y, z, x)
        let perm = [1usize, 2, 0];
        for i in 0..3 {
            for j in 0..3 {
                assert!((d.get(i, j) - m[perm[i]][perm[j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intertwines_harmonics() {
        let r = Rotation::from_quaternion(0.2, -0.5, 0.7, 0.1);
        let n = [0.48, -0.6, 0.64];
        for l in 0..=4 {
            let lhs = wigner_d(l, &r).apply(&real_sph_harm(l, n).unwrap());
            let rhs = real_sph_harm(l, r.apply(n)).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-11);
            }
        }
    }
}

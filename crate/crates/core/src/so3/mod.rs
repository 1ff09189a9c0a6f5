//! Group-theoretic primitives: parity, rotations, real spherical harmonics,
//! Wigner-D matrices and Clebsch–Gordan coupling tensors.
//!
//! All tables share one real basis (see [`harmonics`]) and are cached on
//! first use. [`precompute`] fills the caches up to a chosen degree so that
//! later evaluation only reads.

pub mod clebsch_gordan;
pub mod harmonics;
pub mod parity;
pub mod rotation;
pub mod wigner;

pub use clebsch_gordan::{clebsch_gordan, selection_rule, CgTensor};
pub use harmonics::{harmonic_polynomials, real_sph_harm, sph_harm_of_vector};
pub use parity::{parity_mul, sh_parity, Parity};
pub use rotation::{Rotation, O3};
pub use wigner::{o3_matrix, wigner_d, WignerD};

/// Build harmonic, Wigner and coupling tables for every degree up to `l_max`.
pub fn precompute(l_max: u32) {
    for l in 0..=l_max {
        harmonic_polynomials(l);
        wigner_d(l, &Rotation::identity());
    }
    for l1 in 0..=l_max {
        for l2 in 0..=l_max {
            for l3 in l1.abs_diff(l2)..=(l1 + l2).min(l_max) {
                clebsch_gordan(l1, l2, l3);
            }
        }
    }
}

//! Coupling-tensor, Wigner-D and spherical-harmonic oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Report;
use equiformer::so3::{clebsch_gordan, real_sph_harm, wigner_d, Rotation, WignerD};
use equiformer::Result;

pub const CG_TOL: f64 = 1e-9;
pub const WIGNER_TOL: f64 = 1e-10;
pub const SH_NORM_TOL: f64 = 1e-10;
pub const SH_INVERSION_TOL: f64 = 1e-12;

const CG_L: u32 = 3;
const WIGNER_L: u32 = 4;

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let r = Rotation::random(rng);
    r.apply([0.0, 0.0, 1.0])
}

fn basis(d: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[k] = 1.0;
    e
}

/// Intertwiner identity on basis pairs: `C(D₁a, D₂b) = D₃ C(a, b)`.
fn intertwiner_error(l1: u32, l2: u32, l3: u32, g: &Rotation) -> f64 {
    let c = clebsch_gordan(l1, l2, l3);
    let [d1, d2, _] = c.dims();
    let (w1, w2, w3) = (wigner_d(l1, g), wigner_d(l2, g), wigner_d(l3, g));
    let mut worst: f64 = 0.0;
    for a in 0..d1 {
        for b in 0..d2 {
            let (ea, eb) = (basis(d1, a), basis(d2, b));
            let lhs = c.contract(&w1.apply(&ea), &w2.apply(&eb));
            let rhs = w3.apply(&c.contract(&ea, &eb));
            worst = lhs.iter().zip(&rhs).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
        }
    }
    worst
}

/// `max |Σ_{m1,m2} C[·,·,m3] C'[·,·,m3'] − k·δ|` across `l3, l3'` for one `(l1, l2)`.
fn orthogonality_error(l1: u32, l2: u32, k: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let allowed: Vec<u32> = (l1.abs_diff(l2)..=l1 + l2).collect();
    for &l3 in &allowed {
        for &l3p in &allowed {
            let (c, cp) = (clebsch_gordan(l1, l2, l3), clebsch_gordan(l1, l2, l3p));
            let [d1, d2, d3] = c.dims();
            let d3p = cp.dims()[2];
            for m3 in 0..d3 {
                for m3p in 0..d3p {
                    let mut s = 0.0;
                    for m1 in 0..d1 {
                        for m2 in 0..d2 {
                            s += c.get(m1, m2, m3) * cp.get(m1, m2, m3p);
                        }
                    }
                    let want = if l3 == l3p && m3 == m3p { k } else { 0.0 };
                    worst = worst.max((s - want).abs());
                }
            }
        }
    }
    worst
}

fn max_abs_offdiag(a: &WignerD, b: &WignerD) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn algebra_suite(seed: u64, samples: usize) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::new();

    let rotations: Vec<Rotation> = (0..samples).map(|_| Rotation::random(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    for g in rotations.iter().take(5) {
        for l1 in 0..=CG_L {
            for l2 in 0..=CG_L {
                for l3 in 0..=CG_L {
                    worst = worst.max(intertwiner_error(l1, l2, l3, g));
                }
            }
        }
    }
    report.check("cg/intertwiner", worst, CG_TOL);

    let anchor = clebsch_gordan(0, 0, 0).get(0, 0, 0);
    let k = anchor * anchor;
    let mut worst: f64 = 0.0;
    for l1 in 0..=CG_L {
        for l2 in 0..=CG_L {
            worst = worst.max(orthogonality_error(l1, l2, k));
        }
    }
    report.check_with("cg/orthogonality", worst, CG_TOL, format!("constant {k} from the (0,0,0) anchor"));
    report.flag(
        "cg/selection_rule",
        clebsch_gordan(1, 1, 3).is_zero() && !clebsch_gordan(1, 1, 2).is_zero(),
        "(1,1,3) zero, (1,1,2) nonzero",
    );

    let mut orth: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for l in 0..=WIGNER_L {
        for (i, g) in rotations.iter().enumerate() {
            let d = wigner_d(l, g);
            orth = orth.max(max_abs_offdiag(&d.transpose().matmul(&d), &WignerD::identity(l)));
            let h = &rotations[(i + 1) % rotations.len()];
            let lhs = wigner_d(l, &g.compose(h));
            comp = comp.max(max_abs_offdiag(&lhs, &d.matmul(&wigner_d(l, h))));
        }
    }
    report.check("wigner/orthogonality", orth, WIGNER_TOL);
    report.check("wigner/composition", comp, WIGNER_TOL);

    let (mut norm, mut inv, mut equi) = (0.0f64, 0.0f64, 0.0f64);
    for g in &rotations {
        let n = unit(&mut rng);
        for l in 0..=WIGNER_L {
            let y = real_sph_harm(l, n)?;
            let sq: f64 = y.iter().map(|v| v * v).sum();
            norm = norm.max((sq - (2 * l + 1) as f64).abs());
            let yn = real_sph_harm(l, n.map(|v| -v))?;
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            inv = y.iter().zip(&yn).map(|(a, b)| (sign * a - b).abs()).fold(inv, f64::max);
        }
        let lhs = wigner_d(1, g).apply(&real_sph_harm(1, n)?);
        let rhs = real_sph_harm(1, g.apply(n))?;
        equi = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(equi, f64::max);
    }
    report.check("sh/norm", norm, SH_NORM_TOL);
    report.check("sh/inversion", inv, SH_INVERSION_TOL);
    report.check("sh/equivariance_l1", equi, WIGNER_TOL);
    Ok(report)
}

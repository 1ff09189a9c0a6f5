//! Synthetic datasets labeled by a closed-form Morse potential.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Frame};
use equiformer::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    /// Five carbon atoms, one Morse pair potential.
    PairwiseMorse,
    /// 3 to 8 atoms of H/C/N/O with element-dependent Morse pairs.
    RandomCluster,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise-morse" => Ok(ToyKind::PairwiseMorse),
            "random-cluster" => Ok(ToyKind::RandomCluster),
            _ => Err(Error::Config(format!("unknown toy dataset `{s}` (pairwise-morse|random-cluster)"))),
        }
    }
}

/// `E = D[(1 − e^{−a(r−r0)})² − 1]`, minimum `−D` at `r0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Morse {
    pub depth: f64,
    pub width: f64,
    pub r0: f64,
}

impl Morse {
    pub const CARBON: Morse = Morse {
        depth: 1.0,
        width: 1.5,
        r0: 1.5,
    };

    pub fn energy(&self, r: f64) -> f64 {
        let e = (-self.width * (r - self.r0)).exp();
        self.depth * ((1.0 - e).powi(2) - 1.0)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let e = (-self.width * (r - self.r0)).exp();
        2.0 * self.depth * self.width * e * (1.0 - e)
    }

    /// Pair parameters from per-element (depth, radius): geometric-mean
    /// depth, additive radii.
    pub fn mixed(zi: usize, zj: usize) -> Morse {
        let (di, ri) = element_params(zi);
        let (dj, rj) = element_params(zj);
        Morse {
            depth: (di * dj).sqrt(),
            width: 1.6,
            r0: ri + rj,
        }
    }
}

fn element_params(z: usize) -> (f64, f64) {
    match z {
        1 => (0.7, 0.5),
        6 => (1.2, 0.75),
        7 => (1.0, 0.7),
        8 => (0.9, 0.65),
        _ => (1.0, 0.75),
    }
}

/// Energy and forces of a configuration under a pairwise potential.
pub fn pair_energy_forces(positions: &[[f64; 3]], pair: impl Fn(usize, usize) -> Morse) -> (f64, Vec<[f64; 3]>) {
    let n = positions.len();
    let mut e = 0.0;
    let mut f = vec![[0.0; 3]; n];
    for i in 0..n {
        for j in i + 1..n {
            let m = pair(i, j);
            let d = [
                positions[i][0] - positions[j][0],
                positions[i][1] - positions[j][1],
                positions[i][2] - positions[j][2],
            ];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            e += m.energy(r);
            let g = m.derivative(r) / r;
            for k in 0..3 {
                f[i][k] -= g * d[k];
                f[j][k] += g * d[k];
            }
        }
    }
    (e, f)
}

fn random_in_ball<R: Rng>(rng: &mut R, radius: f64) -> [f64; 3] {
    loop {
        let p = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2: f64 = p.iter().map(|v| v * v).sum();
        if n2 <= 1.0 {
            return [p[0] * radius, p[1] * radius, p[2] * radius];
        }
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Atoms placed one by one inside a ball, keeping every pair between
/// `0.85·r0` and `max_pair`.
fn place_cluster<R: Rng>(rng: &mut R, species: &[usize], radius: f64, max_pair: f64) -> Vec<[f64; 3]> {
    'restart: loop {
        let mut pos: Vec<[f64; 3]> = Vec::with_capacity(species.len());
        for (i, &z) in species.iter().enumerate() {
            let mut tries = 0;
            loop {
                tries += 1;
                if tries > 1000 {
                    continue 'restart;
                }
                let p = random_in_ball(rng, radius);
                let ok = pos.iter().enumerate().all(|(j, &q)| {
                    let d = distance(p, q);
                    d >= 0.85 * Morse::mixed(z, species[j]).r0 && d <= max_pair
                });
                if ok {
                    pos.push(p);
                    break;
                }
            }
            debug_assert_eq!(pos.len(), i + 1);
        }
        return pos;
    }
}

/// Reproducible synthetic dataset; every pair of a frame lies within 4.8 Å.
pub fn make_toy_dataset(kind: ToyKind, n_frames: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n_frames)
        .map(|_| match kind {
            ToyKind::PairwiseMorse => {
                let species = vec![6; 5];
                let positions = place_cluster(&mut rng, &species, 2.0, 4.8);
                let (energy, forces) = pair_energy_forces(&positions, |_, _| Morse::CARBON);
                Frame {
                    species,
                    positions,
                    energy,
                    forces: Some(forces),
                }
            }
            ToyKind::RandomCluster => {
                let n = rng.random_range(3..=8);
                let species: Vec<usize> = (0..n).map(|_| [1, 6, 7, 8][rng.random_range(0..4)]).collect();
                let radius = 0.9 * (n as f64).cbrt();
                let positions = place_cluster(&mut rng, &species, radius, 4.8);
                let (energy, forces) = pair_energy_forces(&positions, |i, j| Morse::mixed(species[i], species[j]));
                Frame {
                    species,
                    positions,
                    energy,
                    forces: Some(forces),
                }
            }
        })
        .collect();
    Dataset { frames }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_pair_has_zero_force() {
        let r0 = Morse::CARBON.r0;
        let (e, f) = pair_energy_forces(&[[0.0; 3], [r0, 0.0, 0.0]], |_, _| Morse::CARBON);
        assert_eq!(e, -Morse::CARBON.depth);
        assert!(f.iter().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn forces_match_finite_differences() {
        for kind in [ToyKind::PairwiseMorse, ToyKind::RandomCluster] {
            let d = make_toy_dataset(kind, 3, 7);
            for frame in &d.frames {
                let pair = |i: usize, j: usize| match kind {
                    ToyKind::PairwiseMorse => Morse::CARBON,
                    ToyKind::RandomCluster => Morse::mixed(frame.species[i], frame.species[j]),
                };
                let h = 1e-5;
                let f = frame.forces.as_ref().unwrap();
                for a in 0..frame.positions.len() {
                    for k in 0..3 {
                        let mut p = frame.positions.clone();
                        p[a][k] += h;
                        let plus = pair_energy_forces(&p, pair).0;
                        p[a][k] -= 2.0 * h;
                        let minus = pair_energy_forces(&p, pair).0;
                        let fd = -(plus - minus) / (2.0 * h);
                        assert!((fd - f[a][k]).abs() <= 1e-6 * f[a][k].abs().max(1.0), "{fd} vs {}", f[a][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        for kind in [ToyKind::PairwiseMorse, ToyKind::RandomCluster] {
            assert_eq!(make_toy_dataset(kind, 5, 3), make_toy_dataset(kind, 5, 3));
            assert_ne!(make_toy_dataset(kind, 5, 3), make_toy_dataset(kind, 5, 4));
        }
    }

    #[test]
    fn clusters_fit_inside_cutoff() {
        let d = make_toy_dataset(ToyKind::RandomCluster, 20, 1);
        for f in &d.frames {
            for (i, &p) in f.positions.iter().enumerate() {
                for &q in &f.positions[..i] {
                    assert!(distance(p, q) <= 4.8);
                }
            }
        }
    }
}

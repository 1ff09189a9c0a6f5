//! Error metrics on denormalized predictions.

use serde::{Deserialize, Serialize};

/// Energy-within-threshold cutoff in eV.
pub const EWT_THRESHOLD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub energy: f64,
    pub energy_true: f64,
    pub forces: Option<Vec<[f64; 3]>>,
    pub forces_true: Option<Vec<[f64; 3]>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: usize,
    pub energy_mae: f64,
    pub force_mae: Option<f64>,
    /// Fraction of frames with energy error within [`EWT_THRESHOLD`].
    pub ewt: f64,
}

pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64
}

pub fn ewt(pred: &[f64], truth: &[f64], threshold: f64) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| (*a - *b).abs() <= threshold).count();
    hits as f64 / pred.len() as f64
}

/// Metrics recomputed from a prediction list.
pub fn metrics_of(preds: &[Prediction]) -> Metrics {
    let e: Vec<f64> = preds.iter().map(|p| p.energy).collect();
    let t: Vec<f64> = preds.iter().map(|p| p.energy_true).collect();
    let mut fp = Vec::new();
    let mut ft = Vec::new();
    let mut have_forces = !preds.is_empty();
    for p in preds {
        match (&p.forces, &p.forces_true) {
            (Some(a), Some(b)) => {
                fp.extend(a.iter().flatten().copied());
                ft.extend(b.iter().flatten().copied());
            }
            _ => have_forces = false,
        }
    }
    Metrics {
        frames: preds.len(),
        energy_mae: mae(&e, &t),
        force_mae: have_forces.then(|| mae(&fp, &ft)),
        ewt: ewt(&e, &t, EWT_THRESHOLD),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = [1.0, -2.0, 3.5];
        assert_eq!(mae(&t, &t), 0.0);
        assert_eq!(ewt(&t, &t, EWT_THRESHOLD), 1.0);
    }

    #[test]
    fn constant_mean_predictor_gives_mean_absolute_deviation() {
        let t = [1.0, 2.0, 6.0];
        let mean = 3.0;
        assert_eq!(mae(&[mean; 3], &t), (2.0 + 1.0 + 3.0) / 3.0);
    }

    #[test]
    fn errors_above_threshold_count_as_misses() {
        let t = [0.0, 1.0, 2.0];
        let p = [0.03, 1.03, 1.97];
        assert_eq!(ewt(&p, &t, EWT_THRESHOLD), 0.0);
    }
}

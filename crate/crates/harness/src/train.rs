//! Training loop and evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalizer};
use crate::metrics::{metrics_of, Metrics, Prediction};
use crate::optim::{AdamW, AdamWConfig, LrSchedule};
use equiformer::graph::AtomisticGraph;
use equiformer::model::{build_model, Equiformer, LossWeights, ModelConfig, ParameterStore, Targets};
use equiformer::nn::ParamSet;
use equiformer::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub preset: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_factor: f64,
    pub min_lr_factor: f64,
    pub energy_weight: f64,
    pub force_weight: f64,
    pub seed: u64,
    /// Replace the config's average degree and atom count with values
    /// measured on the training split.
    pub fit_averages: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset("toy").expect("toy preset")
    }
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = TrainConfig {
            preset: name.to_string(),
            lr: 5e-4,
            weight_decay: 5e-3,
            batch_size: 128,
            epochs: 300,
            warmup_epochs: 5,
            warmup_factor: 0.2,
            min_lr_factor: 0.01,
            energy_weight: 1.0,
            force_weight: 0.0,
            seed: 0,
            fit_averages: true,
        };
        Ok(match name {
            "qm9" => base,
            "md17" => TrainConfig {
                weight_decay: 1e-6,
                batch_size: 8,
                epochs: 1500,
                warmup_epochs: 10,
                force_weight: 80.0,
                ..base
            },
            "oc20" => TrainConfig {
                lr: 2e-4,
                weight_decay: 1e-3,
                batch_size: 32,
                epochs: 20,
                warmup_epochs: 2,
                ..base
            },
            "toy" => TrainConfig {
                lr: 5e-3,
                weight_decay: 0.0,
                batch_size: 5,
                epochs: 200,
                warmup_epochs: 5,
                ..base
            },
            _ => return Err(Error::Config(format!("unknown preset `{name}` (qm9|md17|oc20|toy)"))),
        })
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs,
            warmup_factor: self.warmup_factor,
            min_factor: self.min_lr_factor,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            energy: self.energy_weight,
            force: self.force_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        if !(self.energy_weight >= 0.0) || !(self.force_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss over the epoch, normalized units.
    pub train_loss: f64,
    pub train: Metrics,
    pub val: Option<Metrics>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Equiformer,
    pub store: ParameterStore,
    pub normalizer: Normalizer,
    pub log: Vec<EpochLog>,
}

/// Model config with averages measured on `data`.
pub fn fit_config(config: &ModelConfig, data: &Dataset) -> Result<ModelConfig> {
    let mut c = config.clone();
    let deg = data.average_degree(c.cutoff)?;
    if deg > 0.0 {
        c.avg_degree = deg;
    }
    let atoms = data.average_atom_count();
    if atoms > 0.0 {
        c.avg_atom_count = atoms;
    }
    c.validate()?;
    Ok(c)
}

fn check_species(config: &ModelConfig, data: &Dataset) -> Result<()> {
    let z = data.max_species();
    if z >= config.species_count {
        return Err(Error::Input(format!(
            "dataset contains species {z} but the model embeds only {} species",
            config.species_count
        )));
    }
    Ok(())
}

struct Prepared {
    graphs: Vec<AtomisticGraph>,
}

impl Prepared {
    fn new(data: &Dataset, cutoff: f64) -> Result<Self> {
        Ok(Self {
            graphs: data.frames.iter().map(|f| f.graph(cutoff)).collect::<Result<_>>()?,
        })
    }

    fn batch(&self, idx: &[usize]) -> Result<AtomisticGraph> {
        let refs: Vec<&AtomisticGraph> = idx.iter().map(|&i| &self.graphs[i]).collect();
        AtomisticGraph::batch(&refs)
    }
}

fn targets(data: &Dataset, idx: &[usize], norm: &Normalizer, forces: bool) -> Targets {
    Targets {
        energy: idx.iter().map(|&i| norm.energy_to_model(data.frames[i].energy)).collect(),
        forces: forces.then(|| {
            idx.iter()
                .flat_map(|&i| data.frames[i].forces.as_ref().expect("forces present").iter())
                .map(|f| [f[0] / norm.std, f[1] / norm.std, f[2] / norm.std])
                .collect()
        }),
    }
}

/// Train from a freshly initialized model.
pub fn train(
    config: &ModelConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let config = if cfg.fit_averages {
        fit_config(config, train_set)?
    } else {
        config.clone()
    };
    check_species(&config, train_set)?;
    let (model, store) = build_model(&config, cfg.seed)?;
    let normalizer = train_set.normalizer();
    train_from(model, store.params, normalizer, train_set, val_set, cfg, on_epoch)
}

/// Continue training given parameters and a fixed normalizer.
pub fn train_from(
    model: Equiformer,
    mut params: ParamSet,
    normalizer: Normalizer,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let use_forces = cfg.force_weight > 0.0 && train_set.has_forces();
    let prepared = Prepared::new(train_set, model.config.cutoff)?;
    let schedule = cfg.schedule();
    let weights = cfg.loss_weights();
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    // stream 1 shuffles, stream 2 seeds attention dropout
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let dropout_on = model.config.attn_dropout > 0.0;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = schedule.at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let graph = prepared.batch(idx)?;
            let t = targets(train_set, idx, &normalizer, use_forces);
            let seed = dropout_on.then(|| dropout_rng.random::<u64>());
            let (report, grads) = model.loss_and_gradient(&params, &graph, &t, weights, seed)?;
            if !report.loss.is_finite() || grads.iter().any(|(_, g)| !g.all_finite()) {
                return Err(Error::Domain(format!(
                    "non-finite loss {} at epoch {epoch} in batch of frames {idx:?}",
                    report.loss
                )));
            }
            opt.update(&mut params, &grads, lr);
            loss_sum += report.loss;
            batches += 1;
        }
        let (train_metrics, _) = evaluate(&model, &params, &normalizer, train_set)?;
        let val = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate(&model, &params, &normalizer, v)?.0),
            _ => None,
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / batches.max(1) as f64,
            train: train_metrics,
            val,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let store = ParameterStore::new(model.config.clone(), cfg.seed, params);
    Ok(TrainOutcome {
        model,
        store,
        normalizer,
        log,
    })
}

/// Denormalized predictions and metrics; forces only when the dataset has them.
pub fn evaluate(
    model: &Equiformer,
    params: &ParamSet,
    normalizer: &Normalizer,
    data: &Dataset,
) -> Result<(Metrics, Vec<Prediction>)> {
    check_species(&model.config, data)?;
    let forces = data.has_forces();
    let mut preds = Vec::with_capacity(data.len());
    for f in &data.frames {
        let g = f.graph(model.config.cutoff)?;
        let (e, fr) = if forces {
            let (e, fr) = model.energies_and_forces(params, &g)?;
            let fr = fr
                .into_iter()
                .map(|v| [v[0] * normalizer.std, v[1] * normalizer.std, v[2] * normalizer.std])
                .collect();
            (e[0], Some(fr))
        } else {
            (model.energies(params, &g)?[0], None)
        };
        preds.push(Prediction {
            energy: normalizer.energy_from_model(e),
            energy_true: f.energy,
            forces: fr,
            forces_true: if forces { f.forces.clone() } else { None },
        });
    }
    Ok((metrics_of(&preds), preds))
}

/// Everything needed to reuse a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub store: ParameterStore,
    pub normalizer: Normalizer,
}

impl TrainedModel {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        if self.store.params.iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::Domain("refusing to store non-finite parameters".into()));
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let t: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        t.store.config.validate()?;
        Ok(t)
    }

    pub fn model(&self) -> Result<Equiformer> {
        Equiformer::new(&self.store.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{make_toy_dataset, ToyKind};
    use equiformer::attention::{AttnKind, MessageKind};
    use equiformer::model::Mode;

    fn toy() -> ModelConfig {
        ModelConfig::toy(Mode::Se3, AttnKind::Mlp, MessageKind::Linear)
    }

    #[test]
    fn zero_epochs_keep_initial_parameters() {
        let d = make_toy_dataset(ToyKind::PairwiseMorse, 4, 0);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::preset("toy").unwrap()
        };
        let out = train(&toy(), &d, None, &cfg, |_| {}).unwrap();
        let fresh = out.model.init(cfg.seed);
        assert_eq!(out.store.params, fresh);
        assert!(out.log.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let d = make_toy_dataset(ToyKind::PairwiseMorse, 4, 0);
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            weight_decay: 0.01,
            ..TrainConfig::preset("toy").unwrap()
        };
        let out = train(&toy(), &d, None, &cfg, |_| {}).unwrap();
        assert_eq!(out.store.params, out.model.init(cfg.seed));
    }

    #[test]
    fn preset_hyperparameters() {
        let md = TrainConfig::preset("md17").unwrap();
        assert_eq!((md.energy_weight, md.force_weight, md.warmup_epochs), (1.0, 80.0, 10));
        assert!(TrainConfig::preset("nope").is_err());
    }

    #[test]
    fn unknown_species_rejected() {
        let mut d = make_toy_dataset(ToyKind::PairwiseMorse, 2, 0);
        d.frames[0].species[0] = 42;
        let err = train(&toy(), &d, None, &TrainConfig::default(), |_| {}).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}

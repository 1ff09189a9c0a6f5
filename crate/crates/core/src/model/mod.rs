//! Full network: atom and edge-degree embeddings, pre-norm transformer
//! blocks, energy head, forces, and loss gradients for energy/force training.

pub mod config;
pub mod store;

pub use config::{ModelConfig, Mode};
pub use store::ParameterStore;

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionBlock, EdgeInputs};
use crate::autodiff::{GradientSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{edge_sh, edge_vectors, AtomisticGraph, RadialMlp};
use crate::irreps::{build_dtp_plan, GateVariant, Irreps, IrrepsFeature, MulIr, TensorProductPlan};
use crate::nn::{Bound, GatedLinear, LayerNorm, Linear, ParamSet};
use crate::real::{Dual, Real};

/// Leaf name used for atomic positions.
pub const POSITIONS: &str = "@positions";

/// `Linear → Gate → Linear`.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub hidden: GatedLinear,
    pub out: Linear,
}

impl Ffn {
    pub fn new(name: &str, irreps_in: &Irreps, hidden: &Irreps, irreps_out: &Irreps, variant: GateVariant) -> Result<Self> {
        let hidden = GatedLinear::new(format!("{name}.fc0"), irreps_in, hidden, variant)?;
        let out = Linear::new(format!("{name}.fc1"), hidden.irreps_out(), irreps_out, true)?;
        Ok(Self { hidden, out })
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        self.hidden.init(rng, params);
        self.out.init(rng, params);
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.apply(tape, p, x)?;
        self.out.apply(tape, p, h)
    }
}

/// `y = x + Attn(LN(x))`, `z = shortcut(y) + FFN(LN(y))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub attn: AttentionBlock,
    pub norm_ffn: LayerNorm,
    pub ffn: Ffn,
    /// Present when the output layout differs from the input.
    pub shortcut: Option<Linear>,
}

impl TransformerBlock {
    pub fn new(name: &str, config: &ModelConfig, irreps_out: &Irreps, hidden: &Irreps) -> Result<Self> {
        let d = &config.d_embed;
        let attn = AttentionBlock::new(
            &format!("{name}.attn"),
            d,
            d,
            &config.d_sh,
            config.l_max,
            &config.attention(),
            config.basis_count,
            config.radial_hidden,
        )?;
        let shortcut = if irreps_out != d {
            Some(Linear::new(format!("{name}.shortcut"), d, irreps_out, true)?)
        } else {
            None
        };
        Ok(Self {
            norm_attn: LayerNorm::new(format!("{name}.norm_attn"), d),
            attn,
            norm_ffn: LayerNorm::new(format!("{name}.norm_ffn"), d),
            ffn: Ffn::new(&format!("{name}.ffn"), d, hidden, irreps_out, GateVariant::Standard)?,
            shortcut,
        })
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        self.norm_attn.init(params);
        self.attn.init(rng, params);
        self.norm_ffn.init(params);
        self.ffn.init(rng, params);
        if let Some(s) = &self.shortcut {
            s.init(rng, params);
        }
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        graph: &AtomisticGraph,
        edges: EdgeInputs,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let h = self.norm_attn.apply(tape, p, x)?;
        let a = self.attn.apply(tape, p, h, graph, edges, dropout)?;
        let y = tape.add(x, a)?;
        let h = self.norm_ffn.apply(tape, p, y)?;
        let f = self.ffn.apply(tape, p, h)?;
        let s = match &self.shortcut {
            Some(l) => l.apply(tape, p, y)?,
            None => y,
        };
        tape.add(s, f)
    }
}

/// Edge messages from a constant input, summed at the destination.
#[derive(Clone, Debug)]
pub struct EdgeDegreeEmbedding {
    pub lin_in: Linear,
    pub dtp: Arc<TensorProductPlan>,
    pub radial: RadialMlp,
    pub lin_out: Linear,
    pub place: Placement,
    pub scale: f64,
}

impl EdgeDegreeEmbedding {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let scalars = config.d_embed.scalars_only();
        let one = Irreps::new(vec![MulIr {
            mul: 1,
            ir: config.d_embed.scalar_irrep(),
        }])?;
        let lin_in = Linear::new("edge_embed.lin_in", &one, &scalars, true)?;
        let dtp = Arc::new(build_dtp_plan(&scalars, &config.d_sh, config.l_max)?);
        let radial = RadialMlp::new("edge_embed.radial", config.basis_count, config.radial_hidden, dtp.weight_count)?;
        let place = Placement::new(&config.d_embed, &dtp.irreps_out)?;
        let lin_out = Linear::new("edge_embed.lin_out", &dtp.irreps_out, &place.sub, true)?;
        Ok(Self {
            lin_in,
            dtp,
            radial,
            lin_out,
            place,
            scale: 1.0 / config.avg_degree.sqrt(),
        })
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        self.lin_in.init(rng, params);
        self.radial.init(rng, params);
        self.lin_out.init(rng, params);
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, graph: &AtomisticGraph, edges: EdgeInputs) -> Result<Var> {
        let ones = tape.constant(Tensor::from_vec(graph.num_edges(), 1, vec![T::one(); graph.num_edges()])?);
        let x = self.lin_in.apply(tape, p, ones)?;
        let w = self.radial.apply(tape, p, edges.basis)?;
        let m = tape.dtp(&self.dtp, x, edges.sh, w)?;
        let m = self.lin_out.apply(tape, p, m)?;
        let m = self.place.apply(tape, m)?;
        let agg = tape.scatter_rows(m, graph.dst_index(), graph.num_nodes())?;
        tape.scale(agg, self.scale)
    }
}

/// Blocks of a full layout whose kinds a producer can reach, and the column
/// spans that place them back. Unreachable blocks stay zero.
#[derive(Clone, Debug)]
pub struct Placement {
    pub sub: Irreps,
    spans: Vec<(usize, usize, usize)>,
    total: usize,
}

impl Placement {
    pub fn new(full: &Irreps, available: &Irreps) -> Result<Self> {
        let offsets = full.offsets();
        let mut blocks = Vec::new();
        let mut spans: Vec<(usize, usize, usize)> = Vec::new();
        let mut at = 0;
        for (b, off) in full.blocks().iter().zip(offsets) {
            if available.channels_of(b.ir) == 0 {
                continue;
            }
            blocks.push(*b);
            match spans.last_mut() {
                Some(last) if last.0 + last.2 == at && last.1 + last.2 == off => last.2 += b.dim(),
                _ => spans.push((at, off, b.dim())),
            }
            at += b.dim();
        }
        if blocks.is_empty() {
            return Err(Error::Layout(format!("no block of {full} is reachable from {available}")));
        }
        Ok(Self {
            sub: Irreps::new(blocks)?,
            spans,
            total: full.dim(),
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if self.spans == [(0, 0, self.total)] {
            return Ok(x);
        }
        let mut acc: Option<Var> = None;
        for &(s, f, len) in &self.spans {
            let part = if s == 0 && len == self.sub.dim() { x } else { tape.slice_cols(x, s, len)? };
            let placed = tape.place_cols(part, f, self.total)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, placed)?,
                None => placed,
            });
        }
        Ok(acc.expect("at least one span"))
    }
}

/// Slots of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `G × 1` energies (normalized units).
    pub energy: Var,
    pub x_init: Var,
    /// Node features after each transformer block.
    pub block_outputs: Vec<Var>,
    /// Per-node scalar before the graph sum.
    pub node_energy: Var,
}

#[derive(Clone, Debug)]
pub struct Equiformer {
    pub config: ModelConfig,
    pub atom_embed: Linear,
    pub atom_place: Placement,
    pub edge_embed: EdgeDegreeEmbedding,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    pub head: Ffn,
}

/// Loss weights: `w_E · MAE(E) + w_F · MAE(F)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub energy: f64,
    pub force: f64,
}

/// Normalized targets for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub energy: Vec<f64>,
    pub forces: Option<Vec<[f64; 3]>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub energy_mae: f64,
    pub force_mae: Option<f64>,
    pub energies: Vec<f64>,
    pub forces: Option<Vec<[f64; 3]>>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Equiformer {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = &config.d_embed;
        let onehot = Irreps::new(vec![MulIr {
            mul: config.species_count,
            ir: d.scalar_irrep(),
        }])?;
        let atom_place = Placement::new(d, &onehot)?;
        let atom_embed = Linear::new("atom_embed", &onehot, &atom_place.sub, false)?;
        let mut blocks = Vec::new();
        for b in 0..config.block_count {
            let last = b + 1 == config.block_count;
            let (out, hidden) = if last {
                (&config.d_feature, &config.d_feature)
            } else {
                (&config.d_embed, &config.d_ffn)
            };
            blocks.push(TransformerBlock::new(&format!("blocks.{b}"), config, out, hidden)?);
        }
        let scalar = Irreps::new(vec![MulIr {
            mul: 1,
            ir: config.d_feature.scalar_irrep(),
        }])?;
        Ok(Self {
            config: config.clone(),
            atom_embed,
            atom_place,
            edge_embed: EdgeDegreeEmbedding::new(config)?,
            blocks,
            final_norm: LayerNorm::new("final_norm", &config.d_feature),
            head: Ffn::new("head", &config.d_feature, &config.d_feature, &scalar, GateVariant::Standard)?,
        })
    }

    /// Deterministic parameters from `seed`.
    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        self.atom_embed.init(&mut rng, &mut params);
        self.edge_embed.init(&mut rng, &mut params);
        for b in &self.blocks {
            b.init(&mut rng, &mut params);
        }
        self.final_norm.init(&mut params);
        self.head.init(&mut rng, &mut params);
        params
    }

    fn one_hot<T: Real>(&self, graph: &AtomisticGraph) -> Result<Tensor<T>> {
        let s = self.config.species_count;
        let mut t = Tensor::zeros(graph.num_nodes(), s);
        for (i, &z) in graph.species.iter().enumerate() {
            if z >= s {
                return Err(Error::Input(format!(
                    "species code {z} of atom {i} exceeds species count {s}"
                )));
            }
            t.set(i, z, T::one());
        }
        Ok(t)
    }

    /// Scalar embedding placed into the `d_embed` layout.
    pub fn atom_embedding<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, graph: &AtomisticGraph) -> Result<Var> {
        let onehot = tape.constant(self.one_hot(graph)?);
        let a = self.atom_embed.apply(tape, p, onehot)?;
        self.atom_place.apply(tape, a)
    }

    pub fn edge_inputs<T: Real>(&self, tape: &mut Tape<T>, graph: &AtomisticGraph, positions: Var) -> Result<EdgeInputs> {
        let r = edge_vectors(tape, graph, positions)?;
        let sh = edge_sh(tape, &self.config.d_sh, r)?;
        let basis = tape.radial_basis(self.config.radial_basis(), r)?;
        Ok(EdgeInputs { sh, basis })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        graph: &AtomisticGraph,
        positions: Var,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput> {
        let edges = self.edge_inputs(tape, graph, positions)?;
        let atoms = self.atom_embedding(tape, p, graph)?;
        let deg = self.edge_embed.apply(tape, p, graph, edges)?;
        let x_init = tape.add(atoms, deg)?;
        let mut x = x_init;
        let mut block_outputs = Vec::new();
        for b in &self.blocks {
            x = b.apply(tape, p, x, graph, edges, dropout.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
            block_outputs.push(x);
        }
        let h = self.final_norm.apply(tape, p, x)?;
        let node_energy = self.head.apply(tape, p, h)?;
        let e = tape.scatter_rows(node_energy, graph.node_graph.clone(), graph.graph_count)?;
        let energy = tape.scale(e, 1.0 / self.config.avg_atom_count.sqrt())?;
        Ok(ForwardOutput {
            energy,
            x_init,
            block_outputs,
            node_energy,
        })
    }

    /// Per-graph energies.
    pub fn energies(&self, params: &ParamSet, graph: &AtomisticGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::<f64>::new();
        let p = params.bind_constant(&mut tape);
        let pos = tape.constant(graph.positions_tensor());
        let out = self.forward(&mut tape, &p, graph, pos, None)?;
        Ok(tape.value(out.energy).data().to_vec())
    }

    /// Node features: embedding then each block output.
    pub fn features(&self, params: &ParamSet, graph: &AtomisticGraph) -> Result<Vec<IrrepsFeature>> {
        let mut tape = Tape::<f64>::new();
        let p = params.bind_constant(&mut tape);
        let pos = tape.constant(graph.positions_tensor());
        let out = self.forward(&mut tape, &p, graph, pos, None)?;
        let mut feats = vec![IrrepsFeature::new(self.config.d_embed.clone(), tape.value(out.x_init).clone())?];
        for (b, v) in self.blocks.iter().zip(&out.block_outputs) {
            let irreps = b.ffn.out.irreps_out().clone();
            feats.push(IrrepsFeature::new(irreps, tape.value(*v).clone())?);
        }
        Ok(feats)
    }

    /// Energies and forces `F = −∂(Σ_g E_g)/∂r`.
    pub fn energies_and_forces(&self, params: &ParamSet, graph: &AtomisticGraph) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        self.energies_and_forces_with(params, graph, None)
    }

    fn energies_and_forces_with(
        &self,
        params: &ParamSet,
        graph: &AtomisticGraph,
        dropout_seed: Option<u64>,
    ) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let mut tape = Tape::<f64>::new();
        let p = params.bind_constant(&mut tape);
        let pos = tape.leaf(POSITIONS, graph.positions_tensor());
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let out = self.forward(&mut tape, &p, graph, pos, rng.as_mut().map(|r| r as &mut dyn RngCore))?;
        let total = tape.sum_all(out.energy)?;
        let grads = tape.backward(total)?;
        let g = grads.get(POSITIONS).expect("positions leaf");
        let forces = (0..graph.num_nodes())
            .map(|i| [-g.get(i, 0), -g.get(i, 1), -g.get(i, 2)])
            .collect();
        Ok((tape.value(out.energy).data().to_vec(), forces))
    }

    /// Loss value only (same definition as [`Self::loss_and_gradient`]).
    pub fn loss(&self, params: &ParamSet, graph: &AtomisticGraph, targets: &Targets, weights: LossWeights, dropout_seed: Option<u64>) -> Result<LossReport> {
        let use_forces = targets.forces.is_some() && weights.force != 0.0;
        let (energies, forces) = if use_forces {
            let (e, f) = self.energies_and_forces_with(params, graph, dropout_seed)?;
            (e, Some(f))
        } else {
            let mut tape = Tape::<f64>::new();
            let p = params.bind_constant(&mut tape);
            let pos = tape.constant(graph.positions_tensor());
            let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
            let out = self.forward(&mut tape, &p, graph, pos, rng.as_mut().map(|r| r as &mut dyn RngCore))?;
            (tape.value(out.energy).data().to_vec(), None)
        };
        self.report(energies, forces, targets, weights)
    }

    fn report(&self, energies: Vec<f64>, forces: Option<Vec<[f64; 3]>>, targets: &Targets, weights: LossWeights) -> Result<LossReport> {
        if targets.energy.len() != energies.len() {
            return Err(Error::Input(format!(
                "{} energy targets for {} graphs",
                targets.energy.len(),
                energies.len()
            )));
        }
        let g = energies.len().max(1) as f64;
        let energy_mae = energies.iter().zip(&targets.energy).map(|(a, b)| (a - b).abs()).sum::<f64>() / g;
        let force_mae = match (&forces, &targets.forces) {
            (Some(f), Some(t)) => {
                if f.len() != t.len() {
                    return Err(Error::Input(format!("{} force targets for {} atoms", t.len(), f.len())));
                }
                let n = (3 * f.len()).max(1) as f64;
                Some(
                    f.iter()
                        .zip(t)
                        .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
                        .sum::<f64>()
                        / n,
                )
            }
            _ => None,
        };
        Ok(LossReport {
            loss: weights.energy * energy_mae + weights.force * force_mae.unwrap_or(0.0),
            energy_mae,
            force_mae,
            energies,
            forces,
        })
    }

    /// Loss and its parameter gradient.
    ///
    /// With a force term the gradient needs mixed second derivatives. The
    /// tape is rerun over dual numbers with position tangent `s = ∂L/∂F`
    /// and energy seed `1 − ε·∂L/∂E`; the reverse sweep then carries
    /// `−∂L/∂θ` in its tangent part.
    pub fn loss_and_gradient(
        &self,
        params: &ParamSet,
        graph: &AtomisticGraph,
        targets: &Targets,
        weights: LossWeights,
        dropout_seed: Option<u64>,
    ) -> Result<(LossReport, GradientSet)> {
        let use_forces = targets.forces.is_some() && weights.force != 0.0;
        if !use_forces {
            let mut tape = Tape::<f64>::new();
            let p = params.bind(&mut tape);
            let pos = tape.constant(graph.positions_tensor());
            let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
            let out = self.forward(&mut tape, &p, graph, pos, rng.as_mut().map(|r| r as &mut dyn RngCore))?;
            let energies = tape.value(out.energy).data().to_vec();
            let report = self.report(energies, None, targets, weights)?;
            let g = report.energies.len().max(1) as f64;
            let c: Vec<f64> = report
                .energies
                .iter()
                .zip(&targets.energy)
                .map(|(e, y)| weights.energy * sign(e - y) / g)
                .collect();
            let c = Tensor::from_vec(c.len(), 1, c)?;
            let s = tape.weighted_sum(out.energy, c)?;
            return Ok((report, tape.backward(s)?));
        }

        let (energies, forces) = self.energies_and_forces_with(params, graph, dropout_seed)?;
        let report = self.report(energies, Some(forces), targets, weights)?;
        let g = report.energies.len().max(1) as f64;
        let n = (3 * graph.num_nodes()).max(1) as f64;
        let f = report.forces.as_ref().expect("forces computed");
        let t = targets.forces.as_ref().expect("force targets");
        let tangent: Vec<f64> = f
            .iter()
            .zip(t)
            .flat_map(|(a, b)| (0..3).map(move |k| weights.force * sign(a[k] - b[k]) / n))
            .collect();
        let tangent = Tensor::from_vec(graph.num_nodes(), 3, tangent)?;

        let mut tape = Tape::<Dual>::new();
        let p = params.bind(&mut tape);
        let pos = tape.constant(Tensor::<Dual>::dual(&graph.positions_tensor(), &tangent)?);
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let out = self.forward(&mut tape, &p, graph, pos, rng.as_mut().map(|r| r as &mut dyn RngCore))?;
        let seed: Vec<Dual> = report
            .energies
            .iter()
            .zip(&targets.energy)
            .map(|(e, y)| Dual::new(1.0, -weights.energy * sign(e - y) / g))
            .collect();
        let seed = Tensor::from_vec(seed.len(), 1, seed)?;
        let s = tape.weighted_sum(out.energy, seed)?;
        let grads = tape.backward(s)?;
        Ok((report, grads.map(|t| t.tangent().scaled(-1.0))))
    }

    /// Tensor-product applications per attention block.
    pub fn tensor_products_per_block(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.attn.tensor_product_count())
    }

    /// Every depth-wise tensor-product plan, labeled.
    pub fn plans(&self) -> Vec<(String, Arc<TensorProductPlan>)> {
        let mut out = vec![("edge_embed.dtp".to_string(), self.edge_embed.dtp.clone())];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.attn.dtp"), b.attn.dtp.clone()));
            if let Some(p) = &b.attn.value_dtp {
                out.push((format!("blocks.{i}.attn.value_dtp"), p.clone()));
            }
        }
        out
    }
}

/// Validate `config`, build the network and initialize parameters.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<(Equiformer, ParameterStore)> {
    let model = Equiformer::new(config)?;
    let params = model.init(seed);
    Ok((model, ParameterStore::new(config.clone(), seed, params)))
}

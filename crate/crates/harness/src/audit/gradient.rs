//! Finite-difference checks of every registered backward rule and of the
//! end-to-end energy, forces and loss.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{normal_tensor, perturb, random_graph, random_irreps, Report};
use equiformer::attention::ops::{head_columns, DotLogits, HeadWeighting, MlpLogits};
use equiformer::autodiff::{check_gradient, grad_check, GradCheckConfig, OpRegistry};
use equiformer::graph::{edge_sh, AtomisticGraph, RadialBasis, RadialKind};
use equiformer::irreps::{build_dtp_plan, GatePlan, Irreps, LayerNormPlan, LinearPlan, MulIr};
use equiformer::model::{Equiformer, LossWeights, ModelConfig, Targets, POSITIONS};
use equiformer::nn::ParamSet;
use equiformer::{Dual, GradientSet, Result, Tape, Tensor, Var};

/// Relative tolerance at step 1e-4.
pub const GRAD_TOL: f64 = 1e-4;
pub const NET_FORCE_TOL: f64 = 1e-8;
/// Reverse-mode forces against forward-mode tangents; both exact up to rounding.
pub const FORWARD_MODE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GradientOptions {
    pub seed: u64,
    /// Random instances per op kind.
    pub instances: usize,
    pub atoms: usize,
    /// Sampled entries per parameter tensor in the end-to-end check.
    pub entries_per_leaf: usize,
    /// Check `∂E/∂θ` over the model parameters (costly for large presets).
    pub energy_params: bool,
    /// Check the combined energy + force loss gradient.
    pub loss: bool,
    pub force_weight: f64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 10,
            atoms: 5,
            entries_per_leaf: 3,
            energy_params: true,
            loss: true,
            force_weight: 80.0,
        }
    }
}

fn fd_config(seed: u64, entries: Option<usize>) -> GradCheckConfig {
    GradCheckConfig {
        step: 1e-4,
        tol: GRAD_TOL,
        abs_floor: 1e-8,
        max_entries_per_leaf: entries,
        seed,
    }
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Instance {
    leaves: Vec<(String, Tensor)>,
    build: Build,
}

fn leaf(name: &str, t: Tensor) -> (String, Tensor) {
    (name.to_string(), t)
}

fn index<R: Rng>(rng: &mut R, len: usize, range: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..range)).collect()
}

/// Index onto `0..segments` in which every segment appears at least once.
fn covering_index<R: Rng>(rng: &mut R, len: usize, segments: usize) -> Vec<usize> {
    (0..len).map(|i| if i < segments { i } else { rng.random_range(0..segments) }).collect()
}

/// Vectors at least 0.5 long and away from the cutoff.
fn edge_vectors<R: Rng>(rng: &mut R, rows: usize) -> Tensor {
    loop {
        let t = normal_tensor(rng, rows, 3, 1.2);
        let ok = (0..rows).all(|r| {
            let d = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            (0.5..4.5).contains(&d)
        });
        if ok {
            return t;
        }
    }
}

/// A random instance of `kind`, or `None` when the kind is unknown to the audit.
fn instance(kind: &str, rng: &mut ChaCha8Rng) -> Result<Option<Instance>> {
    let rows = rng.random_range(2..6);
    let cols = rng.random_range(1..5);
    let e3 = rng.random_bool(0.5);
    let inst = match kind {
        "add" | "sub" | "mul" => {
            let k = kind.to_string();
            Instance {
                leaves: vec![leaf("a", normal_tensor(rng, rows, cols, 1.0)), leaf("b", normal_tensor(rng, rows, cols, 1.0))],
                build: Box::new(move |t, v| match k.as_str() {
                    "add" => t.add(v[0], v[1]),
                    "sub" => t.sub(v[0], v[1]),
                    _ => t.mul(v[0], v[1]),
                }),
            }
        }
        "scale" => {
            let c: f64 = rng.random_range(-2.0..2.0);
            Instance {
                leaves: vec![leaf("a", normal_tensor(rng, rows, cols, 1.0))],
                build: Box::new(move |t, v| t.scale(v[0], c)),
            }
        }
        "sum_all" => Instance {
            leaves: vec![leaf("a", normal_tensor(rng, rows, cols, 1.0))],
            build: Box::new(|t, v| t.sum_all(v[0])),
        },
        "gather_rows" => {
            let idx = index(rng, rows + 2, rows);
            Instance {
                leaves: vec![leaf("a", normal_tensor(rng, rows, cols, 1.0))],
                build: Box::new(move |t, v| t.gather_rows(v[0], idx.clone())),
            }
        }
        "scatter_rows" => {
            let out = rng.random_range(1..4);
            let idx = index(rng, rows, out);
            Instance {
                leaves: vec![leaf("a", normal_tensor(rng, rows, cols, 1.0))],
                build: Box::new(move |t, v| t.scatter_rows(v[0], idx.clone(), out)),
            }
        }
        "slice_cols" => {
            let width = cols + 3;
            let start = rng.random_range(0..width - 1);
            let len = rng.random_range(1..=width - start);
            Instance {
                leaves: vec![leaf("a", normal_tensor(rng, rows, width, 1.0))],
                build: Box::new(move |t, v| t.slice_cols(v[0], start, len)),
            }
        }
        "place_cols" => {
            let start = rng.random_range(0..3);
            let total = start + cols + rng.random_range(0..3);
            Instance {
                leaves: vec![leaf("a", normal_tensor(rng, rows, cols, 1.0))],
                build: Box::new(move |t, v| t.place_cols(v[0], start, total)),
            }
        }
        "equivariant_linear" => {
            let irreps_in = random_irreps(rng, e3, 2, 3);
            // output kinds drawn from the input kinds
            let mut blocks = Vec::new();
            for b in irreps_in.blocks() {
                if rng.random_bool(0.7) {
                    blocks.push(MulIr { mul: rng.random_range(1..4), ir: b.ir });
                }
            }
            let irreps_out = if blocks.is_empty() { irreps_in.clone() } else { Irreps::new(blocks)? };
            let plan = Arc::new(LinearPlan::new(&irreps_in, &irreps_out, true)?);
            let (w, b) = plan.init_weights(rng);
            let mut leaves = vec![
                leaf("x", normal_tensor(rng, rows, irreps_in.dim(), 1.0)),
                leaf("w", Tensor::row_vector(w.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect())),
            ];
            let has_bias = plan.has_bias();
            if has_bias {
                leaves.push(leaf("b", Tensor::row_vector(b.iter().map(|_| rng.random_range(-1.0..1.0)).collect())));
            }
            Instance {
                leaves,
                build: Box::new(move |t, v| t.linear(&plan, v[0], v[1], has_bias.then(|| v[2]))),
            }
        }
        "layer_norm" => {
            let irreps = random_irreps(rng, e3, 2, 3);
            let plan = Arc::new(LayerNormPlan::new(&irreps));
            Instance {
                leaves: vec![
                    leaf("x", normal_tensor(rng, rows, irreps.dim(), 1.0)),
                    leaf("gamma", normal_tensor(rng, 1, plan.gamma_len(), 1.0)),
                    leaf("beta", normal_tensor(rng, 1, plan.beta_len(), 1.0)),
                ],
                build: Box::new(move |t, v| t.layer_norm(&plan, v[0], v[1], v[2])),
            }
        }
        "gate" => {
            let gated = random_irreps(rng, e3, 2, 3);
            let scalar = gated.scalar_irrep();
            let mut blocks = vec![MulIr { mul: rng.random_range(1..4), ir: scalar }];
            blocks.extend(gated.blocks().iter().filter(|b| !b.ir.is_scalar()).copied());
            let plan = Arc::new(GatePlan::for_output(&Irreps::new(blocks)?)?);
            Instance {
                leaves: vec![leaf("x", normal_tensor(rng, rows, plan.irreps_in.dim(), 1.0))],
                build: Box::new(move |t, v| t.gate(&plan, v[0])),
            }
        }
        "dtp" => {
            let a = random_irreps(rng, e3, 2, 2);
            let b = random_irreps(rng, e3, 2, 2);
            let plan = Arc::new(build_dtp_plan(&a, &b, rng.random_range(0..=3))?);
            let wrows = if rng.random_bool(0.5) { rows } else { 1 };
            Instance {
                leaves: vec![
                    leaf("x", normal_tensor(rng, rows, a.dim(), 1.0)),
                    leaf("y", normal_tensor(rng, rows, b.dim(), 1.0)),
                    leaf("w", normal_tensor(rng, wrows, plan.weight_count, 1.0)),
                ],
                build: Box::new(move |t, v| t.dtp(&plan, v[0], v[1], v[2])),
            }
        }
        "spherical_harmonics" => {
            let l = rng.random_range(0..=3);
            let irreps = Irreps::se3(&(0..=l).map(|k| (1, k)).collect::<Vec<_>>());
            Instance {
                leaves: vec![leaf("r", edge_vectors(rng, rows))],
                build: Box::new(move |t, v| edge_sh(t, &irreps, v[0])),
            }
        }
        "radial_basis" => {
            let kind = if rng.random_bool(0.5) { RadialKind::Gaussian } else { RadialKind::Bessel };
            let basis = RadialBasis {
                kind,
                count: rng.random_range(2..9),
                cutoff: 5.0,
            };
            Instance {
                leaves: vec![leaf("r", edge_vectors(rng, rows))],
                build: Box::new(move |t, v| t.radial_basis(basis, v[0])),
            }
        }
        "attention_logits_mlp" => {
            let heads = rng.random_range(1..4);
            let per_head = rng.random_range(1..4);
            let op = move || MlpLogits {
                heads,
                per_head,
                slope: 0.2,
            };
            Instance {
                leaves: vec![
                    leaf("f", normal_tensor(rng, rows, heads * per_head, 1.0)),
                    leaf("a", normal_tensor(rng, 1, heads * per_head, 1.0)),
                ],
                build: Box::new(move |t, v| t.record(op(), &[v[0], v[1]])),
            }
        }
        "attention_logits_dot" => {
            let heads = rng.random_range(1..4);
            let d_head = random_irreps(rng, e3, 1, 2);
            let value = d_head.times(heads);
            let cols = head_columns(&value, heads)?;
            let scale = 1.0 / (d_head.dim() as f64).sqrt();
            Instance {
                leaves: vec![
                    leaf("q", normal_tensor(rng, rows, value.dim(), 1.0)),
                    leaf("k", normal_tensor(rng, rows, value.dim(), 1.0)),
                ],
                build: Box::new(move |t, v| {
                    let op = DotLogits {
                        head_of_col: cols.clone(),
                        heads,
                        scale,
                    };
                    t.record(op, &[v[0], v[1]])
                }),
            }
        }
        "segment_softmax" => {
            let segments = rng.random_range(1..=rows);
            let idx = covering_index(rng, rows + 2, segments);
            Instance {
                leaves: vec![leaf("z", normal_tensor(rng, rows + 2, cols, 1.5))],
                build: Box::new(move |t, v| t.segment_softmax(v[0], idx.clone(), segments)),
            }
        }
        "head_weighting" => {
            let heads = rng.random_range(1..4);
            let value = random_irreps(rng, e3, 2, 2).times(heads);
            let cols = head_columns(&value, heads)?;
            Instance {
                leaves: vec![
                    leaf("a", normal_tensor(rng, rows, heads, 1.0)),
                    leaf("v", normal_tensor(rng, rows, value.dim(), 1.0)),
                ],
                build: Box::new(move |t, v| {
                    let op = HeadWeighting { head_of_col: cols.clone() };
                    t.record(op, &[v[0], v[1]])
                }),
            }
        }
        _ => return Ok(None),
    };
    Ok(Some(inst))
}

/// Reduce the op output to a scalar with fixed random weights, so every
/// output entry contributes with a distinct coefficient.
fn check_instance(inst: &Instance, rng: &mut ChaCha8Rng, seed: u64) -> Result<f64> {
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inst.leaves.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let out = (inst.build)(&mut tape, &vars)?;
        tape.value(out).shape()
    };
    let weights = normal_tensor(rng, shape.0, shape.1, 1.0);
    let report = grad_check(
        |t, v| {
            let out = (inst.build)(t, v)?;
            t.weighted_sum(out, weights.clone())
        },
        &inst.leaves,
        &fd_config(seed, None),
    )?;
    Ok(report.leaves.iter().map(|l| l.rel_error).fold(0.0, f64::max))
}

/// Every kind in `registry` against random instances.
pub fn op_gradient_suite(registry: &OpRegistry, instances: usize, seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::new();
    for kind in registry.kinds() {
        let mut worst: f64 = 0.0;
        let mut missing = false;
        for k in 0..instances {
            match instance(kind, &mut rng)? {
                Some(inst) => worst = worst.max(check_instance(&inst, &mut rng, seed + k as u64)?),
                None => missing = true,
            }
        }
        if missing {
            report.flag(format!("op/{kind}"), false, "no audit instance for this op kind");
        } else {
            report.check_with(format!("op/{kind}"), worst, GRAD_TOL, format!("{instances} instances"));
        }
    }
    Ok(report)
}

fn params_of(leaves: &[(String, Tensor)]) -> ParamSet {
    let mut p = ParamSet::new();
    for (k, v) in leaves.iter().filter(|(k, _)| k != POSITIONS) {
        p.insert(k.clone(), v.clone());
    }
    p
}

fn positions_of(leaves: &[(String, Tensor)]) -> Vec<[f64; 3]> {
    let t = &leaves.iter().find(|(k, _)| k == POSITIONS).expect("positions leaf").1;
    (0..t.rows()).map(|r| [t.get(r, 0), t.get(r, 1), t.get(r, 2)]).collect()
}

fn forces_tensor(f: &[[f64; 3]], sign: f64) -> Tensor {
    Tensor::from_vec(f.len(), 3, f.iter().flat_map(|v| v.map(|x| sign * x)).collect()).expect("N x 3")
}

/// `max_k |F_k + ∂E/∂r_k| / ‖F‖∞` with `∂E/∂r_k` from one dual-number
/// forward pass per coordinate. Unlike central differences this is
/// unaffected by LeakyReLU kinks near the evaluation point.
fn forward_mode_error(model: &Equiformer, params: &ParamSet, graph: &AtomisticGraph, forces: &[[f64; 3]]) -> Result<f64> {
    let scale = forces.iter().flatten().fold(1e-12f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    for i in 0..graph.num_nodes() {
        for k in 0..3 {
            let mut dir = Tensor::zeros(graph.num_nodes(), 3);
            dir.set(i, k, 1.0);
            let mut tape = Tape::<Dual>::new();
            let p = params.bind_constant(&mut tape);
            let pos = tape.constant(Tensor::<Dual>::dual(&graph.positions_tensor(), &dir)?);
            let out = model.forward(&mut tape, &p, graph, pos, None)?;
            let de: f64 = tape.value(out.energy).tangent().data().iter().sum();
            worst = worst.max((forces[i][k] + de).abs() / scale);
        }
    }
    Ok(worst)
}

/// End-to-end checks on a random graph with perturbed parameters.
pub fn model_gradient_suite(config: &ModelConfig, opts: &GradientOptions) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Report::new();
    let model = Equiformer::new(config)?;
    let mut params = model.init(opts.seed);
    perturb(&mut params, &mut rng, 0.05);
    let species = config.species_count.min(5);
    let graph = random_graph(&mut rng, opts.atoms, species, config.cutoff)?;
    let total_energy = |p: &ParamSet, g: &AtomisticGraph| -> Result<f64> { Ok(model.energies(p, g)?.iter().sum()) };

    if opts.energy_params {
        let mut tape = Tape::<f64>::new();
        let p = params.bind(&mut tape);
        let pos = tape.leaf(POSITIONS, graph.positions_tensor());
        let out = model.forward(&mut tape, &p, &graph, pos, None)?;
        let s = tape.sum_all(out.energy)?;
        let grads = tape.backward(s)?;
        let mut leaves: Vec<(String, Tensor)> = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        leaves.push((POSITIONS.to_string(), graph.positions_tensor()));
        let value = |ls: &[(String, Tensor)]| total_energy(&params_of(ls), &graph.with_positions(positions_of(ls))?);
        let r = check_gradient(value, &leaves, &grads, &fd_config(opts.seed, Some(opts.entries_per_leaf)))?;
        let (pos_leaf, param_leaves): (Vec<_>, Vec<_>) = r.leaves.iter().partition(|l| l.name == POSITIONS);
        let worst = param_leaves.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
        report.check_with(
            "model/energy_grad/params",
            worst.map_or(0.0, |l| l.rel_error),
            GRAD_TOL,
            format!(
                "{} tensors, worst {}",
                param_leaves.len(),
                worst.map_or("-", |l| l.name.as_str())
            ),
        );
        report.check("model/energy_grad/positions", pos_leaf.first().map_or(f64::NAN, |l| l.rel_error), GRAD_TOL);
    }

    // forces against −∂E/∂r by central differences
    let (_, forces) = model.energies_and_forces(&params, &graph)?;
    let mut analytic = GradientSet::default();
    analytic.insert(POSITIONS, forces_tensor(&forces, -1.0));
    let leaves = vec![(POSITIONS.to_string(), graph.positions_tensor())];
    let r = check_gradient(
        |ls| total_energy(&params, &graph.with_positions(positions_of(ls))?),
        &leaves,
        &analytic,
        &fd_config(opts.seed, None),
    )?;
    report.check("model/forces", r.leaves[0].rel_error, GRAD_TOL);
    report.check(
        "model/forces_forward_mode",
        forward_mode_error(&model, &params, &graph, &forces)?,
        FORWARD_MODE_TOL,
    );
    let net = (0..3).map(|k| forces.iter().map(|f| f[k]).sum::<f64>().abs()).fold(0.0, f64::max);
    report.check("model/net_force", net, NET_FORCE_TOL);

    if opts.loss {
        let (e, f) = model.energies_and_forces(&params, &graph)?;
        let targets = Targets {
            energy: e.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect(),
            forces: Some(f.iter().map(|v| v.map(|x| x + rng.random_range(-1.0..1.0))).collect()),
        };
        let weights = LossWeights {
            energy: 1.0,
            force: opts.force_weight,
        };
        let (_, grads) = model.loss_and_gradient(&params, &graph, &targets, weights, None)?;
        let leaves: Vec<(String, Tensor)> = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let r = check_gradient(
            |ls| Ok(model.loss(&params_of(ls), &graph, &targets, weights, None)?.loss),
            &leaves,
            &grads,
            &fd_config(opts.seed + 1, Some(opts.entries_per_leaf)),
        )?;
        let worst = r.worst();
        report.check_with(
            "model/loss_grad",
            worst.map_or(0.0, |l| l.rel_error),
            GRAD_TOL,
            format!("force weight {}, worst {}", opts.force_weight, worst.map_or("-", |l| l.name.as_str())),
        );
    }
    Ok(report)
}

/// Op rules on random instances, then the end-to-end checks for `config`.
pub fn gradient_suite(config: &ModelConfig, opts: &GradientOptions) -> Result<Report> {
    let mut report = op_gradient_suite(&OpRegistry::builtin(), opts.instances, opts.seed)?;
    report.extend(model_gradient_suite(config, opts)?);
    Ok(report)
}

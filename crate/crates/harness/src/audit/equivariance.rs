//! Rotation, inversion, translation and permutation checks per operation
//! and end to end.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{normal_tensor, perturb, random_graph, Report};
use equiformer::graph::{edge_sh, AtomisticGraph};
use equiformer::irreps::{build_dtp_plan, GatePlan, GateVariant, Irreps};
use equiformer::model::{Equiformer, Ffn, Mode, ModelConfig};
use equiformer::nn::{Bound, LayerNorm, Linear, ParamSet};
use equiformer::so3::{Rotation, O3};
use equiformer::{IrrepsFeature, Result, Tape, Tensor, Var};

pub const OP_TOL: f64 = 1e-9;
pub const BLOCK_TOL: f64 = 1e-8;
pub const FORCE_TOL: f64 = 1e-7;
pub const PERMUTATION_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct EquivarianceOptions {
    pub rotations: usize,
    pub seed: u64,
    /// Atoms in the random test graph.
    pub atoms: usize,
    /// Run the negative control: SiLU on every scalar, gates included.
    pub corrupt_gate: bool,
    /// Include end-to-end model checks.
    pub model: bool,
}

impl Default for EquivarianceOptions {
    fn default() -> Self {
        Self {
            rotations: 20,
            seed: 0,
            atoms: 6,
            corrupt_gate: false,
            model: true,
        }
    }
}

fn transform(irreps: &Irreps, t: &Tensor, g: &O3) -> Tensor {
    IrrepsFeature::new(irreps.clone(), t.clone())
        .expect("layout checked by the op")
        .transform(g)
        .data
}

fn transform_vectors(t: &Tensor, g: &O3) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let v = g.apply([t.get(r, 0), t.get(r, 1), t.get(r, 2)]);
        out.row_mut(r).copy_from_slice(&v);
    }
    out
}

fn run(params: &ParamSet, f: impl FnOnce(&mut Tape<f64>, &Bound) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let out = f(&mut tape, &p)?;
    Ok(tape.value(out).clone())
}

fn group_elements(rng: &mut ChaCha8Rng, n: usize, improper: bool) -> Vec<(String, O3)> {
    let mut out: Vec<(String, O3)> = (0..n).map(|_| ("rotation".to_string(), O3::rotation(Rotation::random(rng)))).collect();
    if improper {
        out.push(("inversion".into(), O3::inversion()));
        for _ in 0..n {
            out.push((
                "inversion".into(),
                O3 {
                    rotation: Rotation::random(rng),
                    inversion: true,
                },
            ));
        }
    }
    out
}

/// Records `max |f(g·x) − g·f(x)|` separately for proper and improper
/// elements under `name`.
fn record(report: &mut Report, name: &str, elems: &[(String, O3)], tol: f64, mut err: impl FnMut(&O3) -> Result<f64>) -> Result<()> {
    let mut worst_rot: f64 = 0.0;
    let mut worst_inv: Option<f64> = None;
    for (kind, g) in elems {
        let e = err(g)?;
        if kind == "rotation" {
            worst_rot = worst_rot.max(e);
        } else {
            worst_inv = Some(worst_inv.unwrap_or(0.0).max(e));
        }
    }
    report.check(format!("{name}/rotation"), worst_rot, tol);
    if let Some(w) = worst_inv {
        report.check(format!("{name}/inversion"), w, tol);
    }
    Ok(())
}

/// Operation-level and end-to-end checks for a model configuration.
pub fn equivariance_suite(config: &ModelConfig, opts: &EquivarianceOptions) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Report::new();
    let e3 = config.mode == Mode::E3;
    let elems = group_elements(&mut rng, opts.rotations, e3);
    let variant = if opts.corrupt_gate { GateVariant::SiluAll } else { GateVariant::Standard };
    let d = &config.d_embed;
    let rows = 5;

    // spherical harmonics of edge vectors
    let r = normal_tensor(&mut rng, rows, 3, 1.0);
    let sh = |r: &Tensor| {
        run(&ParamSet::new(), |t, _| {
            let v = t.constant(r.clone());
            edge_sh(t, &config.d_sh, v)
        })
    };
    let y = sh(&r)?;
    record(&mut report, "op/spherical_harmonics", &elems, OP_TOL, |g| {
        Ok(sh(&transform_vectors(&r, g))?.max_abs_diff(&transform(&config.d_sh, &y, g)))
    })?;

    let basis = config.radial_basis();
    let rb = |r: &Tensor| {
        run(&ParamSet::new(), |t, _| {
            let v = t.constant(r.clone());
            t.radial_basis(basis, v)
        })
    };
    let b0 = rb(&r)?;
    record(&mut report, "op/radial_basis", &elems, OP_TOL, |g| Ok(rb(&transform_vectors(&r, g))?.max_abs_diff(&b0)))?;

    // node-wise ops on random features
    let x = normal_tensor(&mut rng, rows, d.dim(), 1.0);
    let mut params = ParamSet::new();
    let lin = Linear::new("lin", d, d, true)?;
    lin.init(&mut rng, &mut params);
    let ln = LayerNorm::new("ln", d);
    ln.init(&mut params);
    let ffn = Ffn::new("ffn", d, &config.d_ffn, d, variant)?;
    ffn.init(&mut rng, &mut params);
    perturb(&mut params, &mut rng, 0.1);

    let node_op = |name: &str, report: &mut Report, f: &dyn Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var>, out: &Irreps| -> Result<()> {
        let y = run(&params, |t, p| {
            let v = t.constant(x.clone());
            f(t, p, v)
        })?;
        record(report, name, &elems, OP_TOL, |g| {
            let gx = transform(d, &x, g);
            let gy = run(&params, |t, p| {
                let v = t.constant(gx);
                f(t, p, v)
            })?;
            Ok(gy.max_abs_diff(&transform(out, &y, g)))
        })
    };
    node_op("op/equivariant_linear", &mut report, &|t, p, v| lin.apply(t, p, v), d)?;
    node_op("op/layer_norm", &mut report, &|t, p, v| ln.apply(t, p, v), d)?;
    node_op("op/ffn", &mut report, &|t, p, v| ffn.apply(t, p, v), d)?;

    // gate: equivariance and channel bookkeeping
    let plan = GatePlan::for_output(&config.d_ffn)?.with_variant(variant);
    let plan = Arc::new(plan);
    let gx0 = normal_tensor(&mut rng, rows, plan.irreps_in.dim(), 1.0);
    let gate_run = |x: &Tensor| {
        run(&ParamSet::new(), |t, _| {
            let v = t.constant(x.clone());
            t.gate(&plan, v)
        })
    };
    let gy0 = gate_run(&gx0)?;
    record(&mut report, "op/gate", &elems, OP_TOL, |g| {
        Ok(gate_run(&transform(&plan.irreps_in, &gx0, g))?.max_abs_diff(&transform(&plan.irreps_out, &gy0, g)))
    })?;
    report.flag(
        "op/gate/channel_count",
        plan.irreps_out == config.d_ffn,
        format!("gate output {} expected {}", plan.irreps_out, config.d_ffn),
    );

    // depth-wise tensor product with per-edge weights
    let tp = Arc::new(build_dtp_plan(d, &config.d_sh, config.l_max)?);
    let w = normal_tensor(&mut rng, rows, tp.weight_count, 1.0);
    let dtp_run = |x: &Tensor, r: &Tensor| {
        run(&ParamSet::new(), |t, _| {
            let xv = t.constant(x.clone());
            let rv = t.constant(r.clone());
            let s = edge_sh(t, &config.d_sh, rv)?;
            let wv = t.constant(w.clone());
            t.dtp(&tp, xv, s, wv)
        })
    };
    let ty = dtp_run(&x, &r)?;
    record(&mut report, "op/dtp", &elems, OP_TOL, |g| {
        Ok(dtp_run(&transform(d, &x, g), &transform_vectors(&r, g))?.max_abs_diff(&transform(&tp.irreps_out, &ty, g)))
    })?;

    // graph-level modules of the configured network
    let model = Equiformer::new(config)?;
    let mut mp = model.init(opts.seed);
    perturb(&mut mp, &mut rng, 0.05);
    let species = config.species_count.min(5);
    let graph = random_graph(&mut rng, opts.atoms, species, config.cutoff)?;
    let nodes = normal_tensor(&mut rng, graph.num_nodes(), d.dim(), 1.0);
    let rotated = |g: &O3| -> Result<AtomisticGraph> { graph.with_positions(graph.positions.iter().map(|&p| g.apply(p)).collect()) };

    type GraphOp<'a> = Box<dyn Fn(&mut Tape<f64>, &Bound, &AtomisticGraph, Var, Var) -> Result<Var> + 'a>;
    let graph_ops: Vec<(&str, GraphOp, Irreps)> = vec![
        (
            "op/attention",
            Box::new(|t: &mut Tape<f64>, p: &Bound, gr: &AtomisticGraph, x: Var, pos: Var| {
                let e = model.edge_inputs(t, gr, pos)?;
                model.blocks[0].attn.apply(t, p, x, gr, e, None)
            }),
            d.clone(),
        ),
        (
            "op/edge_degree_embedding",
            Box::new(|t: &mut Tape<f64>, p: &Bound, gr: &AtomisticGraph, _x: Var, pos: Var| {
                let e = model.edge_inputs(t, gr, pos)?;
                model.edge_embed.apply(t, p, gr, e)
            }),
            d.clone(),
        ),
        (
            "op/transformer_block",
            Box::new(|t: &mut Tape<f64>, p: &Bound, gr: &AtomisticGraph, x: Var, pos: Var| {
                let e = model.edge_inputs(t, gr, pos)?;
                model.blocks[0].apply(t, p, x, gr, e, None)
            }),
            model.blocks[0].ffn.out.irreps_out().clone(),
        ),
    ];
    for (name, f, out) in &graph_ops {
        let eval = |gr: &AtomisticGraph, x: &Tensor| {
            run(&mp, |t, p| {
                let xv = t.constant(x.clone());
                let pos = t.constant(gr.positions_tensor());
                f(t, p, gr, xv, pos)
            })
        };
        let y = eval(&graph, &nodes)?;
        record(&mut report, name, &elems, BLOCK_TOL, |g| {
            Ok(eval(&rotated(g)?, &transform(d, &nodes, g))?.max_abs_diff(&transform(out, &y, g)))
        })?;
    }

    if opts.model {
        model_checks(&mut report, &model, &mp, &graph, &elems, &mut rng)?;
    }
    Ok(report)
}

fn model_checks(
    report: &mut Report,
    model: &Equiformer,
    params: &ParamSet,
    graph: &AtomisticGraph,
    elems: &[(String, O3)],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let feats = model.features(params, graph)?;
    let (e0, f0) = model.energies_and_forces(params, graph)?;
    let scale = e0[0].abs().max(1.0);
    let mut feat_err = vec![(0.0f64, None::<f64>); feats.len()];
    let (mut e_rot, mut e_inv) = (0.0f64, None::<f64>);
    let (mut f_rot, mut f_inv) = (0.0f64, None::<f64>);
    for (kind, g) in elems {
        let gg = graph.with_positions(graph.positions.iter().map(|&p| g.apply(p)).collect())?;
        let fe = model.features(params, &gg)?;
        let (e, f) = model.energies_and_forces(params, &gg)?;
        let ee = (e[0] - e0[0]).abs() / scale;
        let fe_err = f
            .iter()
            .zip(&f0)
            .flat_map(|(a, b)| {
                let rb = g.apply(*b);
                (0..3).map(move |k| (a[k] - rb[k]).abs())
            })
            .fold(0.0, f64::max);
        for (i, (a, b)) in fe.iter().zip(&feats).enumerate() {
            let err = a.data.max_abs_diff(&b.transform(g).data);
            if kind == "rotation" {
                feat_err[i].0 = feat_err[i].0.max(err);
            } else {
                feat_err[i].1 = Some(feat_err[i].1.unwrap_or(0.0).max(err));
            }
        }
        if kind == "rotation" {
            e_rot = e_rot.max(ee);
            f_rot = f_rot.max(fe_err);
        } else {
            e_inv = Some(e_inv.unwrap_or(0.0).max(ee));
            f_inv = Some(f_inv.unwrap_or(0.0).max(fe_err));
        }
    }
    for (i, (rot, inv)) in feat_err.iter().enumerate() {
        let label = if i == 0 { "embedding".to_string() } else { format!("block{}", i - 1) };
        report.check(format!("model/features/{label}/rotation"), *rot, BLOCK_TOL);
        if let Some(v) = inv {
            report.check(format!("model/features/{label}/inversion"), *v, BLOCK_TOL);
        }
    }
    report.check("model/energy/rotation", e_rot, BLOCK_TOL);
    report.check("model/forces/rotation", f_rot, FORCE_TOL);
    if let Some(v) = e_inv {
        report.check("model/energy/inversion", v, BLOCK_TOL);
    }
    if let Some(v) = f_inv {
        report.check("model/forces/inversion", v, FORCE_TOL);
    }

    // dyadic translation leaves every edge vector, hence the energy, bit-identical
    let shifted = graph.transformed(&O3::default(), [1.5, -2.25, 0.75])?;
    let (et, ft) = model.energies_and_forces(params, &shifted)?;
    let same = et[0].to_bits() == e0[0].to_bits();
    report.check_with(
        "model/energy/translation",
        (et[0] - e0[0]).abs(),
        0.0,
        if same { "bit-identical" } else { "differs" },
    );
    let fdiff = ft.iter().zip(&f0).flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs())).fold(0.0, f64::max);
    report.check("model/forces/translation", fdiff, 0.0);

    let mut perm: Vec<usize> = (0..graph.num_nodes()).collect();
    perm.shuffle(rng);
    let pg = graph.permuted(&perm)?;
    let (ep, fp) = model.energies_and_forces(params, &pg)?;
    report.check("model/energy/permutation", (ep[0] - e0[0]).abs(), PERMUTATION_TOL);
    let perr = perm
        .iter()
        .enumerate()
        .flat_map(|(k, &old)| (0..3).map(move |c| (k, old, c)))
        .map(|(k, old, c)| (fp[k][c] - f0[old][c]).abs())
        .fold(0.0, f64::max);
    report.check("model/forces/permutation", perr, PERMUTATION_TOL);
    Ok(())
}

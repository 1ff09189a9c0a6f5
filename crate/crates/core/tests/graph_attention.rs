use equiformer::attention::{attn_dropout, AttnKind, MessageKind};
use equiformer::autodiff::{check_gradient, GradCheckConfig};
use equiformer::graph::{radial_basis, radius_graph, AtomisticGraph, RadialKind, RadialMlp};
use equiformer::model::{Equiformer, Mode, ModelConfig};
use equiformer::nn::ParamSet;
use equiformer::so3::{Rotation, O3};
use equiformer::{Error, IrrepsFeature, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const VARIANTS: [(AttnKind, MessageKind); 4] = [
    (AttnKind::Mlp, MessageKind::Linear),
    (AttnKind::Mlp, MessageKind::Nonlinear),
    (AttnKind::Dot, MessageKind::Linear),
    (AttnKind::Dot, MessageKind::Nonlinear),
];

fn positions(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-half..half))).collect()
}

struct Traced {
    weights: Tensor,
    out: IrrepsFeature,
}

/// First attention block on node features `x`.
fn attend(model: &Equiformer, params: &ParamSet, graph: &AtomisticGraph, x: &IrrepsFeature) -> Traced {
    let mut tape = Tape::<f64>::new();
    let p = params.bind_constant(&mut tape);
    let pos = tape.constant(graph.positions_tensor());
    let edges = model.edge_inputs(&mut tape, graph, pos).unwrap();
    let xv = tape.constant(x.data.clone());
    let (ws, out) = model.blocks[0].attn.apply_traced(&mut tape, &p, xv, graph, edges, None).unwrap();
    Traced {
        weights: tape.value(ws.weights).clone(),
        out: IrrepsFeature::new(model.config.d_embed.clone(), tape.value(out).clone()).unwrap(),
    }
}

fn node_features(rng: &mut ChaCha8Rng, model: &Equiformer, n: usize) -> IrrepsFeature {
    let ir = model.config.d_embed.clone();
    let data = (0..n * ir.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    IrrepsFeature::new(ir.clone(), Tensor::from_vec(n, ir.dim(), data).unwrap()).unwrap()
}

fn model(mode: Mode, v: (AttnKind, MessageKind)) -> Equiformer {
    Equiformer::new(&ModelConfig::toy(mode, v.0, v.1)).unwrap()
}

#[test]
fn radius_graph_examples() {
    assert_eq!(radius_graph(&[[0.0; 3], [1.0, 0.0, 0.0]], 5.0).unwrap(), vec![(0, 1), (1, 0)]);
    assert!(radius_graph(&[[0.0; 3], [6.0, 0.0, 0.0]], 5.0).unwrap().is_empty());
    let line = [[0.0; 3], [3.0, 0.0, 0.0], [6.0, 0.0, 0.0]];
    assert_eq!(radius_graph(&line, 5.0).unwrap().len(), 4);
    assert!(matches!(
        radius_graph(&[[1.0; 3], [1.0; 3]], 5.0),
        Err(Error::DegenerateGeometry(_))
    ));
}

#[test]
fn radial_basis_examples() {
    let (count, cutoff) = (6, 5.0);
    let spacing = cutoff / (count - 1) as f64;
    let g = radial_basis(2.0 * spacing, RadialKind::Gaussian, count, cutoff).unwrap();
    assert!((g[2] - 1.0).abs() < 1e-15);
    let b = radial_basis(cutoff, RadialKind::Bessel, count, cutoff).unwrap();
    assert!(b.iter().all(|v| v.abs() < 1e-15));
    let b = radial_basis(cutoff / 2.0, RadialKind::Bessel, count, cutoff).unwrap();
    let want = 2.0 * (2.0 / cutoff).sqrt() / cutoff;
    assert!((b[0] - want).abs() < 1e-14);
    assert!(matches!(radial_basis(0.0, RadialKind::Bessel, count, cutoff), Err(Error::Domain(_))));
}

#[test]
fn radial_mlp_zero_head_and_gradients() {
    let mlp = RadialMlp::new("r", 8, 16, 5).unwrap();
    let mut params = ParamSet::new();
    mlp.init(&mut ChaCha8Rng::seed_from_u64(3), &mut params);
    let basis = Tensor::from_vec(2, 8, (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();

    let run = |ps: &ParamSet, b: &Tensor| {
        let mut t = Tape::<f64>::new();
        let p = ps.bind_constant(&mut t);
        let bv = t.constant(b.clone());
        let out = mlp.apply(&mut t, &p, bv).unwrap();
        t.value(out).clone()
    };
    let coef: Vec<f64> = (0..10).map(|i| 1.0 - 0.15 * i as f64).collect();
    let value = |ls: &[(String, Tensor)]| {
        let mut ps = ParamSet::new();
        for (k, v) in &ls[1..] {
            ps.insert(k.clone(), v.clone());
        }
        Ok(run(&ps, &ls[0].1).data().iter().zip(&coef).map(|(a, c)| a * c).sum())
    };
    let mut t = Tape::<f64>::new();
    let p = params.bind(&mut t);
    let bv = t.leaf("basis", basis.clone());
    let out = mlp.apply(&mut t, &p, bv).unwrap();
    let s = t.weighted_sum(out, Tensor::from_vec(2, 5, coef.clone()).unwrap()).unwrap();
    let grads = t.backward(s).unwrap();
    let mut leaves = vec![("basis".to_string(), basis.clone())];
    leaves.extend(params.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let r = check_gradient(value, &leaves, &grads, &GradCheckConfig::default()).unwrap();
    assert!(r.passed(), "{:?}", r.worst());

    for (k, v) in params.iter_mut() {
        if k.starts_with("r.fc2") {
            *v = v.scaled(0.0);
        }
    }
    assert!(run(&params, &basis).data().iter().all(|v| *v == 0.0));
}

#[test]
fn single_neighbor_gets_full_weight() {
    for v in VARIANTS {
        let m = model(Mode::Se3, v);
        let params = m.init(0);
        let g = AtomisticGraph::new(vec![1, 6], vec![[0.0; 3], [0.9, 0.4, -0.3]], 5.0).unwrap();
        let x = node_features(&mut ChaCha8Rng::seed_from_u64(1), &m, 2);
        let t = attend(&m, &params, &g, &x);
        assert!(t.weights.data().iter().all(|w| *w == 1.0));
    }
}

#[test]
fn isolated_node_gets_zero_attention() {
    let m = model(Mode::Se3, VARIANTS[1]);
    let params = m.init(0);
    let g = AtomisticGraph::new(vec![1, 6, 8], vec![[0.0; 3], [1.0, 0.0, 0.0], [20.0, 0.0, 0.0]], 5.0).unwrap();
    let x = node_features(&mut ChaCha8Rng::seed_from_u64(2), &m, 3);
    let t = attend(&m, &params, &g, &x);
    // the output projection carries a scalar bias; compare against an empty neighborhood
    let empty = AtomisticGraph::with_edges(vec![8], vec![[20.0, 0.0, 0.0]], 5.0, vec![], vec![0], 1).unwrap();
    let x1 = IrrepsFeature::new(x.irreps.clone(), Tensor::row_vector(x.data.row(2).to_vec())).unwrap();
    let alone = attend(&m, &params, &empty, &x1);
    assert_eq!(t.out.data.row(2), alone.out.data.row(0));
    assert!(alone.out.data.data().iter().all(|v| v.is_finite()));
}

#[test]
fn nonlinear_messages_add_a_tensor_product() {
    for mode in [Mode::Se3, Mode::E3] {
        let lin = model(mode, (AttnKind::Mlp, MessageKind::Linear));
        let non = model(mode, (AttnKind::Mlp, MessageKind::Nonlinear));
        assert_eq!(lin.tensor_products_per_block(), 1);
        assert_eq!(non.tensor_products_per_block(), 2);
        assert!(non.blocks[0].attn.weighted_paths() > lin.blocks[0].attn.weighted_paths());
    }
}

#[test]
fn dropout_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::from_vec(2, 2, vec![0.1, 0.9, 0.4, 0.6]).unwrap();
    assert_eq!(attn_dropout(&a, 0.0, true, &mut rng), a);
    assert_eq!(attn_dropout(&a, 0.5, false, &mut rng), a);
    let trials = 100_000;
    let one = Tensor::scalar(0.3);
    let mean: f64 = (0..trials).map(|_| attn_dropout(&one, 0.2, true, &mut rng).data()[0]).sum::<f64>() / trials as f64;
    assert!((mean - 0.3).abs() / 0.3 < 0.02, "mean {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn radius_graph_is_sorted_symmetric_and_within_cutoff(seed in any::<u64>(), n in 1usize..12, cutoff in 0.5f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = positions(&mut rng, n, 3.0);
        let edges = radius_graph(&pos, cutoff).unwrap();
        prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        for &(i, j) in &edges {
            prop_assert!(i != j);
            let d: f64 = (0..3).map(|k| (pos[i][k] - pos[j][k]).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d > 0.0 && d <= cutoff);
            prop_assert!(edges.binary_search(&(j, i)).is_ok());
        }
    }

    #[test]
    fn radial_basis_is_finite(d in 1e-6f64..=5.0, count in 1usize..32, bessel in any::<bool>()) {
        let kind = if bessel { RadialKind::Bessel } else { RadialKind::Gaussian };
        let b = radial_basis(d, kind, count, 5.0).unwrap();
        prop_assert_eq!(b.len(), count);
        prop_assert!(b.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attention_is_equivariant_with_invariant_normalized_weights(
        seed in any::<u64>(),
        variant in 0usize..4,
        e3 in any::<bool>(),
    ) {
        let mode = if e3 { Mode::E3 } else { Mode::Se3 };
        let m = model(mode, VARIANTS[variant]);
        let params = m.init(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 5;
        let g = AtomisticGraph::new(vec![1, 6, 7, 8, 6], positions(&mut rng, n, 1.5), 5.0).unwrap();
        let x = node_features(&mut rng, &m, n);
        let base = attend(&m, &params, &g, &x);

        // Σ_j a_ij = 1 per head per node
        let heads = base.weights.cols();
        for i in 0..n {
            for h in 0..heads {
                let s: f64 = g.edges.iter().enumerate().filter(|(_, e)| e.dst == i).map(|(k, _)| base.weights.get(k, h)).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }

        let mut group = vec![O3::rotation(Rotation::random(&mut rng))];
        if e3 {
            group.push(O3 { rotation: Rotation::random(&mut rng), inversion: true });
        }
        for el in group {
            let moved = g.with_positions(g.positions.iter().map(|p| el.apply(*p)).collect()).unwrap();
            let t = attend(&m, &params, &moved, &x.transform(&el));
            prop_assert!(t.out.data.max_abs_diff(&base.out.transform(&el).data) <= 1e-8);
            prop_assert!(t.weights.max_abs_diff(&base.weights) <= 1e-10);
        }

        // translation leaves everything bit-identical on a dyadic grid
        let snap = |p: &[f64; 3]| p.map(|v| (v * 1024.0).round() / 1024.0);
        let gs = g.with_positions(g.positions.iter().map(snap).collect()).unwrap();
        let shifted = gs.with_positions(gs.positions.iter().map(|p| p.map(|v| v + 0.75)).collect()).unwrap();
        prop_assert_eq!(attend(&m, &params, &gs, &x).out, attend(&m, &params, &shifted, &x).out);
    }

    #[test]
    fn edge_order_does_not_matter(seed in any::<u64>()) {
        let m = model(Mode::Se3, VARIANTS[(seed % 4) as usize]);
        let params = m.init(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = positions(&mut rng, 4, 1.5);
        let species = vec![1, 6, 7, 8];
        let mut pairs = radius_graph(&pos, 5.0).unwrap();
        let a = AtomisticGraph::with_edges(species.clone(), pos.clone(), 5.0, pairs.clone(), vec![0; 4], 1).unwrap();
        pairs.reverse();
        let b = AtomisticGraph::with_edges(species, pos, 5.0, pairs, vec![0; 4], 1).unwrap();
        let x = node_features(&mut rng, &m, 4);
        prop_assert_eq!(attend(&m, &params, &a, &x).out, attend(&m, &params, &b, &x).out);
    }
}

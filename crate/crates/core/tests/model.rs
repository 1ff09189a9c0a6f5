use equiformer::attention::{AttnKind, MessageKind};
use equiformer::graph::AtomisticGraph;
use equiformer::model::{build_model, Equiformer, Mode, ModelConfig, ParameterStore};
use equiformer::so3::Rotation;
use equiformer::{Error, Irreps};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(mode: Mode, attn: AttnKind, msg: MessageKind) -> ModelConfig {
    ModelConfig::toy(mode, attn, msg)
}

fn default_toy() -> ModelConfig {
    toy(Mode::Se3, AttnKind::Mlp, MessageKind::Nonlinear)
}

/// Positions on a 2⁻¹⁰ grid so translations by dyadic shifts are exact.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> AtomisticGraph {
    let pos = (0..n)
        .map(|_| std::array::from_fn(|_| (rng.random_range(-1.6..1.6f64) * 1024.0).round() / 1024.0))
        .collect();
    let species = (0..n).map(|_| rng.random_range(1..10)).collect();
    AtomisticGraph::new(species, pos, 5.0).unwrap()
}

#[test]
fn preset_values() {
    let q = ModelConfig::preset("qm9", Mode::Se3).unwrap();
    assert_eq!(q.d_embed, "[(128,0),(64,1),(32,2)]".parse::<Irreps>().unwrap());
    assert_eq!((q.block_count, q.heads, q.l_max), (6, 4, 2));
    assert_eq!(q.cutoff, 5.0);
    assert!(ModelConfig::preset("nope", Mode::Se3).is_err());
}

#[test]
fn qm9_parameter_count_near_3_53m() {
    let (_, store) = build_model(&ModelConfig::preset("qm9", Mode::Se3).unwrap(), 0).unwrap();
    let n = store.params.count() as f64;
    assert!((n / 3.53e6 - 1.0).abs() < 0.05, "{n} parameters");
}

#[test]
fn same_seed_same_parameters() {
    let c = default_toy();
    let (_, a) = build_model(&c, 7).unwrap();
    let (_, b) = build_model(&c, 7).unwrap();
    let (_, d) = build_model(&c, 8).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, d.params);
}

#[test]
fn three_atom_smoke() {
    let (m, s) = build_model(&default_toy(), 0).unwrap();
    let g = AtomisticGraph::new(vec![1, 6, 8], vec![[0.0; 3], [1.0, 0.1, 0.0], [0.0, 1.2, 0.3]], 5.0).unwrap();
    let e = m.energies(&s.params, &g).unwrap();
    assert_eq!(e.len(), 1);
    assert!(e[0].is_finite());
}

#[test]
fn store_round_trip_is_bit_exact() {
    let (_, s) = build_model(&toy(Mode::E3, AttnKind::Dot, MessageKind::Linear), 3).unwrap();
    let back = ParameterStore::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back, s);
    let path = std::env::temp_dir().join(format!("equiformer-store-{}.json", std::process::id()));
    s.save(&path).unwrap();
    let loaded = ParameterStore::load(&path).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(loaded, s);
    let shapes: Vec<_> = Equiformer::new(&loaded.config).unwrap().init(0).iter().map(|(k, v)| (k.to_string(), v.shape())).collect();
    let stored: Vec<_> = loaded.params.iter().map(|(k, v)| (k.to_string(), v.shape())).collect();
    assert_eq!(shapes, stored);
}

#[test]
fn inconsistent_config_is_rejected() {
    let mut c = default_toy();
    c.d_head = "[(3,0),(4,1),(1,3)]".parse().unwrap();
    assert!(matches!(build_model(&c, 0), Err(Error::Config(_))));
    let mut c = default_toy();
    c.mode = Mode::E3;
    assert!(matches!(build_model(&c, 0), Err(Error::Config(_))));
    let mut c = default_toy();
    c.heads = 0;
    assert!(matches!(build_model(&c, 0), Err(Error::Config(_))));
    let mut c = default_toy();
    c.leaky_slope = 1.5;
    assert!(build_model(&c, 0).is_err());
}

#[test]
fn unknown_species_is_an_input_error() {
    let (m, s) = build_model(&default_toy(), 0).unwrap();
    let g = AtomisticGraph::new(vec![1, 42], vec![[0.0; 3], [1.0, 0.0, 0.0]], 5.0).unwrap();
    assert!(matches!(m.energies(&s.params, &g), Err(Error::Input(_))));
}

#[test]
fn symmetric_pair_has_opposite_forces() {
    let (m, s) = build_model(&default_toy(), 2).unwrap();
    let g = AtomisticGraph::new(vec![6, 6], vec![[0.4, -0.3, 0.5], [-0.4, 0.3, -0.5]], 5.0).unwrap();
    let (_, f) = m.energies_and_forces(&s.params, &g).unwrap();
    for k in 0..3 {
        assert!((f[0][k] + f[1][k]).abs() < 1e-12);
    }
    assert!(f[0].iter().any(|v| v.abs() > 1e-8));
}

#[test]
fn isolated_atoms_have_zero_edge_embedding() {
    let (m, s) = build_model(&default_toy(), 0).unwrap();
    let g = AtomisticGraph::new(vec![1, 1, 6], vec![[0.0; 3], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]], 5.0).unwrap();
    assert_eq!(g.num_edges(), 0);
    let feats = m.features(&s.params, &g).unwrap();
    // x_init is the atom embedding alone: equal species give equal rows
    assert_eq!(feats[0].data.row(0), feats[0].data.row(1));
    let (e, f) = m.energies_and_forces(&s.params, &g).unwrap();
    assert!(e[0].is_finite());
    assert!(f.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn zeroed_block_is_identity() {
    let (m, mut s) = build_model(&default_toy(), 5).unwrap();
    let prefixes = [m.blocks[0].attn.proj.name.clone(), m.blocks[0].ffn.out.name.clone()];
    for (k, v) in s.params.iter_mut() {
        if prefixes.iter().any(|p| k.starts_with(&format!("{p}."))) {
            *v = v.scaled(0.0);
        }
    }
    let g = random_graph(&mut ChaCha8Rng::seed_from_u64(0), 4);
    let feats = m.features(&s.params, &g).unwrap();
    assert_eq!(feats[1], feats[0]);
}

#[test]
fn batched_copies_give_equal_energies() {
    let (m, s) = build_model(&default_toy(), 1).unwrap();
    let g = random_graph(&mut ChaCha8Rng::seed_from_u64(4), 4);
    let e = m.energies(&s.params, &g).unwrap()[0];
    let n = g.num_nodes();
    let mut pos = g.positions.clone();
    pos.extend(g.positions.iter().map(|p| [p[0] + 100.0, p[1], p[2]]));
    let mut species = g.species.clone();
    species.extend(&g.species);
    let mut pairs: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.dst, e.src)).collect();
    pairs.extend(g.edges.iter().map(|e| (e.dst + n, e.src + n)));
    let node_graph = (0..2 * n).map(|i| i / n).collect();
    let two = AtomisticGraph::with_edges(species, pos, 5.0, pairs, node_graph, 2).unwrap();
    let e2 = m.energies(&s.params, &two).unwrap();
    assert_eq!(e2.len(), 2);
    assert!((e2[0] - e).abs() < 1e-12 && (e2[1] - e).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn energy_invariance_and_force_equivariance(
        seed in any::<u64>(),
        attn_dot in any::<bool>(),
        linear in any::<bool>(),
        e3 in any::<bool>(),
    ) {
        let c = toy(
            if e3 { Mode::E3 } else { Mode::Se3 },
            if attn_dot { AttnKind::Dot } else { AttnKind::Mlp },
            if linear { MessageKind::Linear } else { MessageKind::Nonlinear },
        );
        let (m, s) = build_model(&c, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 5);
        let (e, f) = m.energies_and_forces(&s.params, &g).unwrap();
        let scale = e[0].abs().max(1.0);
        prop_assert!(f.iter().map(|v| v[0]).sum::<f64>().abs() <= 1e-8);

        for _ in 0..3 {
            let r = Rotation::random(&mut rng);
            let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let moved = g.with_positions(g.positions.iter().map(|p| {
                let q = r.apply(*p);
                [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]
            }).collect()).unwrap();
            let (em, fm) = m.energies_and_forces(&s.params, &moved).unwrap();
            prop_assert!((em[0] - e[0]).abs() / scale <= 1e-8);
            for (a, b) in f.iter().zip(&fm) {
                let ra = r.apply(*a);
                for k in 0..3 {
                    prop_assert!((ra[k] - b[k]).abs() <= 1e-7);
                }
            }
        }

        // exact translation on the dyadic grid
        let t = g.with_positions(g.positions.iter().map(|p| p.map(|v| v + 0.5)).collect()).unwrap();
        prop_assert_eq!(m.energies(&s.params, &t).unwrap(), e.clone());

        if e3 {
            let inv = g.with_positions(g.positions.iter().map(|p| p.map(|v| -v)).collect()).unwrap();
            prop_assert!((m.energies(&s.params, &inv).unwrap()[0] - e[0]).abs() / scale <= 1e-8);
        }

        // relabeling atoms
        let n = g.num_nodes();
        let perm: Vec<usize> = (0..n).rev().collect();
        let pg = AtomisticGraph::new(
            perm.iter().map(|&i| g.species[i]).collect(),
            perm.iter().map(|&i| g.positions[i]).collect(),
            5.0,
        ).unwrap();
        let (ep, fp) = m.energies_and_forces(&s.params, &pg).unwrap();
        prop_assert!((ep[0] - e[0]).abs() <= 1e-10);
        for (k, &i) in perm.iter().enumerate() {
            for d in 0..3 {
                prop_assert!((fp[k][d] - f[i][d]).abs() <= 1e-10);
            }
        }
    }
}

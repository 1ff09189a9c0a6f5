use equiformer::irreps::*;
use equiformer::so3::{selection_rule, Parity, Rotation, O3};
use equiformer::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn feature(rng: &mut ChaCha8Rng, irreps: &Irreps, rows: usize) -> IrrepsFeature {
    let data = Tensor::from_vec(rows, irreps.dim(), normal(rng, rows * irreps.dim())).unwrap();
    IrrepsFeature::new(irreps.clone(), data).unwrap()
}

/// Blocks in ascending `l`, each kind present with probability 1/2, never empty.
fn random_irreps(rng: &mut ChaCha8Rng, e3: bool, l_max: u32, max_mul: usize) -> Irreps {
    let parities: &[Option<Parity>] = if e3 { &[Some(Parity::Even), Some(Parity::Odd)] } else { &[None] };
    loop {
        let mut blocks = Vec::new();
        for l in 0..=l_max {
            for &p in parities {
                if rng.random_bool(0.5) {
                    blocks.push(MulIr {
                        mul: rng.random_range(1..=max_mul),
                        ir: Irrep::new(l, p),
                    });
                }
            }
        }
        if !blocks.is_empty() {
            return Irreps::new(blocks).unwrap();
        }
    }
}

fn group_elements(rng: &mut ChaCha8Rng, e3: bool) -> Vec<O3> {
    let mut g: Vec<O3> = (0..3).map(|_| O3::rotation(Rotation::random(rng))).collect();
    if e3 {
        g.push(O3::inversion());
        g.push(O3 {
            rotation: Rotation::random(rng),
            inversion: true,
        });
    }
    g
}

fn max_diff(a: &IrrepsFeature, b: &IrrepsFeature) -> f64 {
    a.data.max_abs_diff(&b.data)
}

fn brute_force_count(in1: &Irreps, in2: &Irreps, l_max: u32) -> usize {
    let mut n = 0;
    for a in in1.blocks() {
        for b in in2.blocks() {
            let legal = (0..=l_max).filter(|&l3| selection_rule(a.ir.l, b.ir.l, l3)).count();
            n += a.mul * b.mul * legal;
        }
    }
    n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn irreps_text_round_trip(seed in any::<u64>(), e3 in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ir = random_irreps(&mut rng, e3, 3, 5);
        let back: Irreps = ir.to_string().parse().unwrap();
        prop_assert_eq!(&back, &ir);
        let dim: usize = ir.blocks().iter().map(|b| b.mul * (2 * b.ir.l as usize + 1)).sum();
        prop_assert_eq!(ir.dim(), dim);
        prop_assert_eq!(ir.is_e3(), e3);
    }

    #[test]
    fn linear_is_equivariant_and_linear(seed in any::<u64>(), e3 in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let irreps_in = random_irreps(&mut rng, e3, 2, 4);
        // output kinds drawn from the input kinds
        let out: Vec<MulIr> = irreps_in
            .blocks()
            .iter()
            .map(|b| MulIr { mul: rng.random_range(1..=4), ir: b.ir })
            .collect();
        let irreps_out = Irreps::new(out).unwrap();
        let plan = LinearPlan::new(&irreps_in, &irreps_out, true).unwrap();
        let w = normal(&mut rng, plan.weight_count);
        let bias = normal(&mut rng, irreps_out.scalar_channels());
        let x = feature(&mut rng, &irreps_in, 3);
        let y = equivariant_linear(&x, &w, Some(&bias), &irreps_out).unwrap();
        for g in group_elements(&mut rng, e3) {
            let lhs = equivariant_linear(&x.transform(&g), &w, Some(&bias), &irreps_out).unwrap();
            prop_assert!(max_diff(&lhs, &y.transform(&g)) <= 1e-10);
        }
        let x2 = feature(&mut rng, &irreps_in, 3);
        let (a, b) = (0.7, -1.3);
        let mut mix = x.clone();
        for (m, (u, v)) in mix.data.data_mut().iter_mut().zip(x.data.data().iter().zip(x2.data.data())) {
            *m = a * u + b * v;
        }
        let f = |z: &IrrepsFeature| equivariant_linear(z, &w, None, &irreps_out).unwrap();
        let (fx, fx2, fm) = (f(&x), f(&x2), f(&mix));
        for ((m, u), v) in fm.data.data().iter().zip(fx.data.data()).zip(fx2.data.data()) {
            prop_assert!((m - (a * u + b * v)).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_is_equivariant(seed in any::<u64>(), e3 in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ir = random_irreps(&mut rng, e3, 3, 4);
        let params = LayerNormParams {
            gamma: normal(&mut rng, ir.num_channels()),
            beta: normal(&mut rng, ir.scalar_channels()),
        };
        let x = feature(&mut rng, &ir, 3);
        let y = equivariant_layer_norm(&x, &params).unwrap();
        for g in group_elements(&mut rng, e3) {
            let lhs = equivariant_layer_norm(&x.transform(&g), &params).unwrap();
            prop_assert!(max_diff(&lhs, &y.transform(&g)) <= 1e-9);
        }
    }

    #[test]
    fn gate_contract_and_equivariance(seed in any::<u64>(), e3 in any::<bool>(), c0 in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gated: Vec<MulIr> = random_irreps(&mut rng, e3, 2, 3)
            .blocks()
            .iter()
            .copied()
            .filter(|b| !b.ir.is_scalar())
            .collect();
        prop_assume!(!gated.is_empty() || c0 > 0);
        let gated = Irreps::new(gated).unwrap();
        let plan = GatePlan::new(c0, &gated).unwrap();
        let x = feature(&mut rng, &plan.irreps_in, 2);
        let y = gate(&x).unwrap();
        prop_assert_eq!(y.irreps.scalar_channels(), c0);
        for b in gated.blocks() {
            prop_assert_eq!(y.irreps.channels_of(b.ir), b.mul);
        }
        for g in group_elements(&mut rng, e3) {
            let lhs = gate(&x.transform(&g)).unwrap();
            prop_assert!(max_diff(&lhs, &y.transform(&g)) <= 1e-9);
        }
    }

    #[test]
    fn dtp_plan_matches_enumeration(seed in any::<u64>(), e3 in any::<bool>(), l_max in 0u32..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in1 = random_irreps(&mut rng, e3, 3, 3);
        let in2 = random_irreps(&mut rng, e3, 3, 1);
        let plan = build_dtp_plan(&in1, &in2, l_max).unwrap();
        prop_assert_eq!(plan.paths.len(), brute_force_count(&in1, &in2, l_max));
        prop_assert_eq!(plan.weight_count, plan.paths.len());
        let mut fed = std::collections::HashSet::new();
        for p in &plan.paths {
            prop_assert!(selection_rule(p.l1, p.l2, p.l3) && p.l3 <= l_max);
            let (a, b) = (in1.blocks()[p.block1].ir.parity, in2.blocks()[p.block2].ir.parity);
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert_eq!(p.p3, Some(a * b));
            }
            // depth-wise: one path, hence one input-1 channel, per output channel
            prop_assert!(fed.insert((p.out_block, p.out_channel)));
        }
        let keys: Vec<_> = plan.paths.iter().map(|p| (p.c1, p.c2, p.l3)).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dtp_is_equivariant_and_linear_in_weights(seed in any::<u64>(), e3 in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in1 = random_irreps(&mut rng, e3, 2, 3);
        let in2 = random_irreps(&mut rng, e3, 2, 1);
        let plan = build_dtp_plan(&in1, &in2, 2).unwrap();
        prop_assume!(plan.weight_count > 0);
        let (x, y) = (feature(&mut rng, &in1, 3), feature(&mut rng, &in2, 3));
        let w1 = Tensor::from_vec(3, plan.weight_count, normal(&mut rng, 3 * plan.weight_count)).unwrap();
        let w2 = Tensor::from_vec(3, plan.weight_count, normal(&mut rng, 3 * plan.weight_count)).unwrap();
        let out = apply_dtp(&plan, &x, &y, &w1).unwrap();
        for g in group_elements(&mut rng, e3) {
            let lhs = apply_dtp(&plan, &x.transform(&g), &y.transform(&g), &w1).unwrap();
            prop_assert!(max_diff(&lhs, &out.transform(&g)) <= 1e-9);
        }
        let mut ws = w1.clone();
        ws.add_assign(&w2);
        let sum = apply_dtp(&plan, &x, &y, &ws).unwrap();
        let o2 = apply_dtp(&plan, &x, &y, &w2).unwrap();
        for ((s, a), b) in sum.data.data().iter().zip(out.data.data()).zip(o2.data.data()) {
            prop_assert!((s - a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn linear_mean_example() {
    let x = IrrepsFeature::new(Irreps::se3(&[(2, 0)]), Tensor::row_vector(vec![1.0, 3.0])).unwrap();
    let y = equivariant_linear(&x, &[0.5, 0.5], Some(&[0.0]), &Irreps::se3(&[(1, 0)])).unwrap();
    assert_eq!(y.data.data(), &[2.0]);
}

#[test]
fn linear_rejects_missing_kind() {
    let x = IrrepsFeature::new(Irreps::se3(&[(2, 0)]), Tensor::row_vector(vec![1.0, 3.0])).unwrap();
    let err = equivariant_linear(&x, &[1.0], None, &Irreps::se3(&[(1, 1)])).unwrap_err();
    assert!(matches!(err, equiformer::Error::Layout(_)));
}

#[test]
fn layer_norm_examples() {
    let ir = Irreps::se3(&[(3, 0)]);
    let x = IrrepsFeature::new(ir.clone(), Tensor::row_vector(vec![2.5; 3])).unwrap();
    let p = LayerNormParams {
        gamma: vec![1.0; 3],
        beta: vec![0.3, -0.1, 0.7],
    };
    let y = equivariant_layer_norm(&x, &p).unwrap();
    for (a, b) in y.data.data().iter().zip(&p.beta) {
        assert!((a - b).abs() < 1e-12);
    }

    let ir = Irreps::se3(&[(1, 1)]);
    let v = [3.0, -4.0, 12.0];
    let x = IrrepsFeature::new(ir.clone(), Tensor::row_vector(v.to_vec())).unwrap();
    let y = equivariant_layer_norm(&x, &LayerNormParams::identity(&ir)).unwrap();
    for (a, b) in y.data.data().iter().zip(v) {
        assert!((a - b / 13.0).abs() < 1e-6);
    }

    let zero = IrrepsFeature::zeros(Irreps::se3(&[(2, 0), (2, 1)]), 1);
    let y = equivariant_layer_norm(&zero, &LayerNormParams::identity(&zero.irreps)).unwrap();
    assert!(y.data.all_finite());
}

#[test]
fn gate_examples() {
    // C0 = 0: zero gate scalars halve every vector
    let plan = GatePlan::new(0, &Irreps::se3(&[(2, 1)])).unwrap();
    let v = [1.0, 2.0, 3.0, -1.0, -2.0, -3.0];
    let mut data = vec![0.0, 0.0];
    data.extend(v);
    let x = IrrepsFeature::new(plan.irreps_in.clone(), Tensor::row_vector(data)).unwrap();
    let y = gate(&x).unwrap();
    assert_eq!(y.data.data(), &v.map(|t| 0.5 * t)[..]);

    let bad = IrrepsFeature::new(Irreps::se3(&[(1, 0), (2, 1)]), Tensor::zeros(1, 7)).unwrap();
    assert!(matches!(gate(&bad).unwrap_err(), equiformer::Error::Layout(_)));
}

#[test]
fn dtp_examples() {
    let s = Irreps::se3(&[(1, 0)]);
    for l_max in 0..3 {
        assert_eq!(build_dtp_plan(&s, &s, l_max).unwrap().paths.len(), 1);
    }
    let plan = build_dtp_plan(&s, &s, 1).unwrap();
    let x = IrrepsFeature::new(s.clone(), Tensor::row_vector(vec![2.0])).unwrap();
    let y = IrrepsFeature::new(s.clone(), Tensor::row_vector(vec![3.0])).unwrap();
    assert_eq!(apply_dtp(&plan, &x, &y, &Tensor::row_vector(vec![1.0])).unwrap().data.data(), &[6.0]);

    let plan = build_dtp_plan(&Irreps::se3(&[(2, 0), (2, 1)]), &Irreps::se3(&[(1, 0), (1, 1)]), 1).unwrap();
    assert_eq!(plan.paths.len(), 10);

    let o = Irreps::e3(&[(1, 1, Parity::Odd)]);
    let plan = build_dtp_plan(&o, &o, 2).unwrap();
    for p in plan.paths.iter().filter(|p| p.l3 == 1) {
        assert_eq!(p.p3, Some(Parity::Even));
    }
    assert_eq!(plan.paths.len(), 3);
}

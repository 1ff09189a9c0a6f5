//! Depth-wise tensor-product path enumeration checked against an
//! independent brute-force count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_irreps, Report};
use equiformer::irreps::{build_dtp_plan, Irreps, TensorProductPlan};
use equiformer::so3::{selection_rule, Parity};
use equiformer::Result;

/// `(c1, c2, l3, p3)` of one path.
pub type PathKey = (usize, usize, u32, Option<Parity>);

/// Every `(channel of in1, channel of in2, l3[, p3])` allowed by the
/// selection rule up to `l_max`, one channel at a time.
pub fn brute_force_paths(in1: &Irreps, in2: &Irreps, l_max: u32) -> Vec<PathKey> {
    let expand = |ir: &Irreps| {
        ir.blocks()
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.ir, b.mul))
            .collect::<Vec<_>>()
    };
    let (a, b) = (expand(in1), expand(in2));
    let mut out = Vec::new();
    for (c1, x) in a.iter().enumerate() {
        for (c2, y) in b.iter().enumerate() {
            for l3 in 0..=l_max {
                if !selection_rule(x.l, y.l, l3) {
                    continue;
                }
                let p3 = match (x.parity, y.parity) {
                    (Some(p), Some(q)) => Some(if p == q { Parity::Even } else { Parity::Odd }),
                    _ => None,
                };
                out.push((c1, c2, l3, p3));
            }
        }
    }
    out
}

fn plan_keys(plan: &TensorProductPlan) -> Vec<PathKey> {
    plan.paths.iter().map(|p| (p.c1, p.c2, p.l3, p.p3)).collect()
}

/// Each output channel fed by exactly one path, hence one input-1 channel.
fn depthwise(plan: &TensorProductPlan) -> bool {
    let mut seen = std::collections::HashSet::new();
    plan.paths.iter().all(|p| seen.insert((p.out_block, p.out_channel)))
        && seen.len() == plan.irreps_out.num_channels()
}

/// Plan listing plus path count.
pub fn paths_report(in1: &Irreps, in2: &Irreps, l_max: u32) -> Result<(String, usize)> {
    let plan = build_dtp_plan(in1, in2, l_max)?;
    Ok((plan.describe(), plan.paths.len()))
}

/// Compare the plan against brute force; mismatch count is the check value.
pub fn compare_paths(report: &mut Report, name: &str, in1: &Irreps, in2: &Irreps, l_max: u32) -> Result<usize> {
    let plan = build_dtp_plan(in1, in2, l_max)?;
    let mut got = plan_keys(&plan);
    let mut want = brute_force_paths(in1, in2, l_max);
    got.sort();
    want.sort();
    let mismatch = got.len().abs_diff(want.len()) + got.iter().zip(&want).filter(|(a, b)| a != b).count();
    report.check_with(
        name,
        mismatch as f64,
        0.0,
        format!("{in1} (x) {in2} L_max={l_max}: plan {} brute force {}", got.len(), want.len()),
    );
    report.flag(format!("{name}/depthwise"), depthwise(&plan), "one path per output channel");
    Ok(plan.paths.len())
}

/// Random irreps pairs with `L ≤ 3`, half in E(3) mode.
pub fn path_count_suite(seed: u64, pairs: usize) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Report::new();
    let mut mismatches = 0.0;
    let mut failed_depthwise = Vec::new();
    for k in 0..pairs {
        let e3 = rng.random_bool(0.5);
        let a = random_irreps(&mut rng, e3, 3, 4);
        let b = random_irreps(&mut rng, e3, 3, 2);
        let l_max = rng.random_range(0..=3);
        let mut r = Report::new();
        compare_paths(&mut r, &format!("pair{k}"), &a, &b, l_max)?;
        mismatches += r.checks[0].value;
        if !r.checks[1].passed {
            failed_depthwise.push(k);
        }
        all.extend(r);
    }
    let mut report = Report::new();
    report.check_with("paths/random_pairs", mismatches, 0.0, format!("{pairs} pairs"));
    report.flag(
        "paths/depthwise",
        failed_depthwise.is_empty(),
        format!("pairs violating the one-input-channel rule: {failed_depthwise:?}"),
    );
    let example_in1 = Irreps::se3(&[(2, 0), (2, 1)]);
    let example_in2 = Irreps::se3(&[(1, 0), (1, 1)]);
    let n = compare_paths(&mut report, "paths/example", &example_in1, &example_in2, 1)?;
    report.check_with("paths/example_count", n.abs_diff(10) as f64, 0.0, format!("{n} paths, expected 10"));
    Ok(report)
}

//! Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use vesselfix::disconnect::{
    generate_pair, radius_probability, rng_from_seed, sample_radius, DisconnectionSpec,
};
use vesselfix::experiment::{
    derive_seed, run_ablation, run_convergence, Application, ExperimentPlan,
};
use vesselfix::image::{voxel_diff_count, BinaryMask, Dims};
use vesselfix::metrics::{assd, auc, beta0_error, dice, report};
use vesselfix::morphology::distance_transform;
use vesselfix::reconnect::{iterate, EndpointBridger, IterateOptions, Reconnector};
use vesselfix::synth::{generate_tree, TreeParams};

const SIZES: [f64; 4] = [6.0, 8.0, 10.0, 12.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    println!(
        "{} {name}: {} [{:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
    o.pass
}

fn rel_close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1.0)
}

fn corpus() -> Vec<BinaryMask> {
    (0..20)
        .map(|k| {
            generate_tree(&TreeParams {
                seed: derive_seed(0, u64::MAX, k),
                ..TreeParams::default()
            })
            .unwrap()
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..200u64 {
        let seg = random_mask(seed);
        let reference = random_mask_in(seg.dims(), 0.5, seed ^ 0x5EED);
        let prob = random_prob(seg.dims(), seed ^ 0xA0C);
        let d = dice(&seg, &reference).unwrap();
        worst = worst.max((d - brute_dice(&seg, &reference)).abs());
        if !rel_close(d, brute_dice(&seg, &reference), 1e-9) {
            failures.push(format!("dice #{seed}"));
        }
        match (assd(&seg, &reference), brute_assd(&seg, &reference)) {
            (Ok(got), Some(want)) if rel_close(got, want, 1e-9) => {
                worst = worst.max((got - want).abs())
            }
            (Err(_), None) => {}
            _ => failures.push(format!("assd #{seed}")),
        }
        match (auc(&prob, &reference), brute_auc(&prob, &reference)) {
            (Ok(got), Some(want)) if (got - want).abs() <= 1e-12 => {}
            (Err(_), None) => {}
            _ => failures.push(format!("auc #{seed}")),
        }
        let (b, bg) = (
            flood_fill_count(&seg, true),
            flood_fill_count(&reference, true),
        );
        match beta0_error(&seg, &reference) {
            Ok(e)
                if bg > 0
                    && e.beta0 == b
                    && e.beta0_gt == bg
                    && rel_close(e.eps, (b as f64 - bg as f64).abs() / bg as f64, 1e-9) => {}
            Err(_) if bg == 0 => {}
            _ => failures.push(format!("beta0 #{seed}")),
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: failures.is_empty() && elapsed < Duration::from_secs(60),
        detail: format!(
            "200 masks, {} mismatches {:?}, max abs error {worst:.1e}, {:.1}s < 60s",
            failures.len(),
            failures.first(),
            elapsed.as_secs_f64()
        ),
    }
}

fn edt_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..200u64 {
        let m = random_mask(seed);
        if !m.has_background() {
            continue;
        }
        checked += 1;
        let got = distance_transform(&m).unwrap();
        for (i, want) in brute_edt(&m).into_iter().enumerate() {
            worst = worst.max((got.get_index(i) - want).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("{checked} masks, max abs error {worst:.1e} <= 1e-9"),
    }
}

fn radius_law() -> Outcome {
    let start = Instant::now();
    let mut stats = Vec::new();
    let mut pass = true;
    for (j, p) in [2u32, 3, 5, 8].into_iter().enumerate() {
        let mut r = rng_from_seed(100 + j as u64);
        let mut counts = vec![0u64; p as usize];
        for _ in 0..100_000 {
            counts[sample_radius(p, &mut r).unwrap() as usize - 1] += 1;
        }
        let probs: Vec<f64> = (1..=p).map(|i| radius_probability(p, i)).collect();
        let x2 = chi_square(&counts, &probs);
        let crit = chi2_99(p as usize - 1);
        pass &= x2 < crit;
        stats.push(format!("p={p}: {x2:.2}<{crit:.2}"));
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: pass && elapsed < Duration::from_secs(5),
        detail: format!("{}, {:.2}s < 5s", stats.join(", "), elapsed.as_secs_f64()),
    }
}

fn set_algebra(trees: &[BinaryMask]) -> Outcome {
    let mut bad = 0;
    let mut nondeterministic = 0;
    for k in 0..100usize {
        let t = &trees[k % trees.len()];
        let spec = DisconnectionSpec {
            seed: derive_seed(7, 0, k as u64),
            ..DisconnectionSpec::default()
        };
        let p = generate_pair(t, &spec).unwrap();
        let mut rebuilt = p.disconnected.clone();
        p.removed.iter().for_each(|&c| rebuilt.set(c, true));
        p.added.iter().for_each(|&c| rebuilt.set(c, false));
        if !(p.removed.iter().all(|&c| t.get(c))
            && p.added.iter().all(|&c| !t.get(c))
            && rebuilt == *t)
        {
            bad += 1;
        }
        let again = generate_pair(t, &spec).unwrap();
        let bytes = |s: &vesselfix::disconnect::DisconnectedSample| {
            (
                s.disconnected.data().to_vec(),
                serde_json::to_vec(&(&s.removed, &s.added)).unwrap(),
            )
        };
        if bytes(&p) != bytes(&again) {
            nondeterministic += 1;
        }
    }
    Outcome {
        pass: bad == 0 && nondeterministic == 0,
        detail: format!(
            "100 pairs, {bad} algebra violations, {nondeterministic} non-identical reruns"
        ),
    }
}

fn trend(trees: &[BinaryMask]) -> Outcome {
    let start = Instant::now();
    let op = EndpointBridger::default();
    let spec = DisconnectionSpec {
        s: 8.0,
        sigma: 4.0,
        n_disconnections: 15,
        ..DisconnectionSpec::default()
    };
    let (mut eps_before, mut eps_after, mut dsc_before, mut dsc_after) = (0.0, 0.0, 0.0, 0.0);
    for (k, t) in trees.iter().enumerate() {
        let p = generate_pair(
            t,
            &DisconnectionSpec {
                seed: derive_seed(1, 0, k as u64),
                ..spec.clone()
            },
        )
        .unwrap();
        let (fixed, _) = iterate(&op, &p.disconnected, IterateOptions::default()).unwrap();
        let (b, a) = (
            report(&p.disconnected, t, None).unwrap(),
            report(&fixed, t, None).unwrap(),
        );
        eps_before += b.eps_beta0.unwrap();
        eps_after += a.eps_beta0.unwrap();
        dsc_before += b.dsc;
        dsc_after += a.dsc;
    }
    let n = trees.len() as f64;
    let (eb, ea, db, da) = (eps_before / n, eps_after / n, dsc_before / n, dsc_after / n);
    let reduction = 1.0 - ea / eb;
    let elapsed = start.elapsed();
    Outcome {
        pass: reduction >= 0.5 && db - da <= 0.005 && elapsed < Duration::from_secs(300),
        detail: format!(
            "mean eps_beta0 {eb:.3} -> {ea:.3} ({:.0}% reduction, need >= 50%), mean DSC {db:.4} -> {da:.4} (drop {:.4} <= 0.005)",
            100.0 * reduction,
            db - da
        ),
    }
}

fn convergence_and_fixed_point(trees: &[BinaryMask]) -> (Outcome, Outcome) {
    let op = EndpointBridger::default();
    let options = IterateOptions {
        max_iter: 20,
        tol: 0,
    };
    let mut conv = Vec::new();
    let mut pass = true;
    let (mut runs_checked, mut moved) = (0, 0);
    for (column, &s) in SIZES.iter().enumerate() {
        let images: Vec<_> = trees
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let spec = DisconnectionSpec {
                    s,
                    seed: derive_seed(2, column as u64, k as u64),
                    ..DisconnectionSpec::default()
                };
                (
                    format!("tree_{k:03}"),
                    generate_pair(t, &spec).unwrap().disconnected,
                    t.clone(),
                )
            })
            .collect();
        let runs = run_convergence(&op, &images, options).unwrap();
        let ok = runs
            .iter()
            .filter(|r| r.converged && r.rows.last().is_some_and(|row| row.diff == 0))
            .count();
        pass &= ok * 10 >= runs.len() * 9;
        conv.push(format!("s={s}: {ok}/{}", runs.len()));
        for r in runs.iter().filter(|r| r.converged) {
            runs_checked += 1;
            moved += (r.extra_step_diff != 0) as usize;
        }
    }
    // direct check of the contract through iterate as well
    for (k, t) in trees.iter().enumerate() {
        let p = generate_pair(
            t,
            &DisconnectionSpec {
                seed: k as u64,
                ..DisconnectionSpec::default()
            },
        )
        .unwrap();
        let (last, trace) = iterate(&op, &p.disconnected, options).unwrap();
        if trace.converged {
            runs_checked += 1;
            moved += (voxel_diff_count(&op.apply(&last).unwrap(), &last).unwrap() != 0) as usize;
        }
    }
    (
        Outcome {
            pass,
            detail: format!(
                "converged with final diff 0 within 20 steps: {} (need >= 90% each)",
                conv.join(", ")
            ),
        },
        Outcome {
            pass: moved == 0 && runs_checked > 0,
            detail: format!("{runs_checked} converged runs, {moved} changed by one more step"),
        },
    )
}

fn robustness_grid(trees: &[BinaryMask]) -> Outcome {
    let ops: Vec<EndpointBridger> = SIZES
        .iter()
        .map(|&s| EndpointBridger::new(s, 35.0))
        .collect();
    let pairs: Vec<(f64, &dyn Reconnector)> = SIZES
        .iter()
        .zip(&ops)
        .map(|(&s, op)| (s, op as &dyn Reconnector))
        .collect();
    let mut plan = ExperimentPlan::new(SIZES.to_vec(), SIZES.to_vec(), 3);
    plan.application = Application::Iterate(IterateOptions::default());
    let table = run_ablation(trees, &plan, &pairs).unwrap();
    let before = table.row("before").unwrap();
    let mut improved = 0;
    let mut worst = f64::INFINITY;
    for (label, cells) in table.rows.iter().skip(1) {
        for (cell, b) in cells.iter().zip(before) {
            let (a, b) = (cell.eps_beta0.unwrap().mean, b.eps_beta0.unwrap().mean);
            worst = worst.min(1.0 - a / b);
            if a < b {
                improved += 1;
            } else {
                println!("  cell train={label}: eps_beta0 {a:.3} vs before {b:.3}");
            }
        }
    }
    Outcome {
        pass: improved == 16,
        detail: format!(
            "{improved}/16 cells lower eps_beta0 than before, smallest reduction {:.0}%",
            100.0 * worst
        ),
    }
}

fn main() {
    let trees = corpus();
    assert!(trees.iter().all(|t| t.dims() == Dims::d2(256, 256)));
    let mut all = true;
    all &= check("metric oracles", metric_oracles);
    all &= check("EDT exactness", edt_exactness);
    all &= check("radius distribution law", radius_law);
    all &= check("disconnector set algebra", || set_algebra(&trees));
    all &= check("connectivity restoration trend", || trend(&trees));
    let (conv, fixed) = convergence_and_fixed_point(&trees);
    all &= check("convergence", || conv);
    all &= check("robustness grid", || robustness_grid(&trees));
    all &= check("fixed-point contract", || fixed);
    if !all {
        std::process::exit(1);
    }
}

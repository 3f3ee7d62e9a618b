//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`).

mod common;

use dyncap::config::ExperimentConfig;
use dyncap::data::{population_sample, DatasetKind, Regime, RING_NOISE};
use dyncap::harness::{cmd_gradcheck, cmd_train, flops_table};
use dyncap::metrics::{fit_gaussian, frechet_distance, GaussianFit};
use dyncap::report::mean_std;
use dyncap::schedule::{CapacityEvent, CapacitySchedule, SchedulePreset};
use dyncap::trainer::{growth_seed, run, IterationRecord, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::time::Instant;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ITERATIONS: u64 = 3000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Final metrics of one 3000-iteration run at full evaluation size.
struct Final {
    toy_frechet: f64,
    overfit_gap: f64,
    records: Vec<IterationRecord>,
}

fn experiment(preset: SchedulePreset, regime: Regime, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(preset, regime, seed, false);
    cfg.train.iterations = ITERATIONS;
    cfg
}

fn train_seeds(preset: SchedulePreset, regime: Regime) -> Vec<Final> {
    SEEDS
        .iter()
        .map(|&seed| {
            let out = run(experiment(preset, regime, seed).train).expect("run finishes");
            let r = out.final_report().expect("final evaluation");
            assert_eq!(r.step, ITERATIONS);
            Final {
                toy_frechet: r.toy_frechet,
                overfit_gap: r.overfit_gap,
                records: out.records,
            }
        })
        .collect()
}

fn fds(runs: &[Final]) -> Vec<f64> {
    runs.iter().map(|r| r.toy_frechet).collect()
}

fn gaps(runs: &[Final]) -> Vec<f64> {
    runs.iter().map(|r| r.overfit_gap).collect()
}

fn mean(v: &[f64]) -> f64 {
    mean_std(v).0
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(" "))
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let report = cmd_gradcheck(None).expect("gradcheck runs");
    let secs = t.elapsed().as_secs_f64();
    let groups: Vec<&str> = report.groups.iter().map(|g| g.group.as_str()).collect();
    let layers = groups.contains(&"dense-layer") && groups.contains(&"conv-layer");
    let max = report.max_rel_error();
    outcome(
        report.passed() && max < 1e-4 && report.seeds == 20 && layers && secs < 60.0,
        format!("{} groups, {} seeds, max rel err {max:.2e}, {secs:.1}s", groups.len(), report.seeds),
    )
}

fn c2_materialization() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc_e972);
    let equal = (0..200).filter(|i| common::materialization_pair(&mut rng, i % 2 == 0)).count();
    let secs = t.elapsed().as_secs_f64();
    outcome(equal == 200 && secs < 30.0, format!("{equal}/200 bitwise equal, {secs:.2}s"))
}

/// Replays a dynamic-increase training run; before each grow the trainer is
/// about to apply, the same grow is applied to a copy of the live
/// discriminator and every previously active weight is compared bit for bit.
fn c3_growth() -> Outcome {
    let cfg = experiment(SchedulePreset::DynamicIncrease, Regime::Sufficient, 0).train;
    let base = cfg.d_base.clone();
    let mut t = Trainer::new(cfg).expect("trainer");
    let start_widths = t.state.disc.stack().hidden_widths();
    let mut events = 0;
    let mut violations = 0;
    let mut prev_params = 0;
    let mut monotone = true;
    while !t.is_done() {
        if let Some(CapacityEvent::Grow(widths)) = t.schedule.capacity_event_at(t.state.step) {
            events += 1;
            let before = t.state.disc.stack().clone();
            let mut grown = before.clone();
            grown.grow_to(&widths, growth_seed(t.state.seed, t.state.step)).expect("grow");
            for (old, new) in before.layers().iter().zip(grown.layers()) {
                let taps = old.weight().len() / (old.max_out() * old.max_in());
                for o in 0..old.active_out() {
                    for i in 0..old.active_in() {
                        let at = (o * old.max_in() + i) * taps;
                        let a = &old.weight().data()[at..at + taps];
                        let b = &new.weight().data()[at..at + taps];
                        violations += a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
                    }
                    violations += (old.bias().data()[o].to_bits() != new.bias().data()[o].to_bits()) as usize;
                }
            }
        }
        let r = t.step().expect("step");
        monotone &= r.active_params >= prev_params;
        prev_params = r.active_params;
    }
    let half: Vec<usize> = base.iter().map(|b| b / 2).collect();
    let end_widths = t.state.disc.stack().hidden_widths();
    outcome(
        violations == 0 && monotone && events > 0 && start_widths == half && end_widths == base,
        format!("{events} grow events, {violations} changed weights, widths {start_widths:?} -> {end_widths:?}"),
    )
}

fn c4_schedule() -> Outcome {
    let base = vec![64, 64, 64];
    let total = ITERATIONS - 1;
    let mut bad = Vec::new();
    for n in [1u64, 7, 64] {
        let inc = CapacitySchedule::increase(base.clone(), -0.5, 0.0, total, n).unwrap();
        let dec = CapacitySchedule::decrease(base.clone(), 1.0, 0.5, total, n, BTreeSet::new()).unwrap();
        for (s, a, b) in [(&inc, -0.5, 0.0), (&dec, 1.0, 0.5)] {
            if s.coefficient_at(0) != a || s.coefficient_at(total) != b {
                bad.push(format!("endpoints n={n}"));
            }
            for step in 0..=total {
                let q = (step / n) * n;
                let want = if step == 0 {
                    a
                } else if step >= total {
                    b
                } else {
                    a + (b - a) * (q as f64 / total as f64)
                };
                if s.coefficient_at(step).to_bits() != want.to_bits() {
                    bad.push(format!("n={n} step {step}"));
                    break;
                }
            }
        }
        if inc.widths_at(0) != vec![32; 3] || inc.widths_at(total) != base {
            bad.push(format!("increase widths n={n}"));
        }
        if dec.widths_at(0) != base || dec.widths_at(total) != vec![32; 3] {
            bad.push(format!("decrease widths n={n}"));
        }
    }
    // The preset path used for training ends its ramp on the last iteration.
    let cfg = experiment(SchedulePreset::DynamicIncrease, Regime::LimitedTiny, 0).train;
    let s = cfg.schedule.build(cfg.d_base.clone(), cfg.iterations).unwrap();
    if s.coefficient_at(0) != -0.5 || s.coefficient_at(ITERATIONS - 1) != 0.0 {
        bad.push("preset endpoints".into());
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() { "alpha -0.5 -> 0.0, beta 1.0 -> 0.5, n in {1, 7, 64}".into() } else { bad.join("; ") },
    )
}

fn c5_compute(increase_runs: &[Final]) -> Outcome {
    let cfg = experiment(SchedulePreset::DynamicIncrease, Regime::Sufficient, 0).train;
    let table = flops_table(&cfg, "dynamic-increase", 10).unwrap();
    let every_step = table.per_step.iter().all(|&(_, f)| f <= table.full_per_step);
    let recorded = increase_runs
        .iter()
        .all(|r| r.records.iter().zip(&table.per_step).all(|(rec, &(p, f))| rec.active_params == p && rec.active_flops == f));
    outcome(
        every_step && recorded && table.total_flops < table.full_total_flops,
        format!(
            "total {} / {} MACs = {:.4}, trainer records agree: {recorded}",
            table.total_flops,
            table.full_total_flops,
            table.ratio()
        ),
    )
}

fn c6_limited(full: &[Final], decrease: &[Final], secs: f64) -> Outcome {
    let (fd_full, fd_dec) = (mean(&fds(full)), mean(&fds(decrease)));
    let (gap_full, gap_dec) = (mean(&gaps(full)), mean(&gaps(decrease)));
    let gap_wins = full.iter().zip(decrease).filter(|(f, d)| d.overfit_gap < f.overfit_gap).count();
    let fd_wins = full.iter().zip(decrease).filter(|(f, d)| d.toy_frechet < f.toy_frechet).count();
    outcome(
        fd_dec < fd_full && gap_dec < gap_full && gap_wins >= 4 && secs < 600.0,
        format!(
            "fd decrease {fd_dec:.4} vs full {fd_full:.4} (wins {fd_wins}/5); gap decrease {gap_dec:.4} vs full {gap_full:.4} (wins {gap_wins}/5); fd full {} decrease {}; {secs:.0}s",
            fmt(&fds(full)),
            fmt(&fds(decrease))
        ),
    )
}

fn c7_sufficient(full: &[Final], half: &[Final], increase: &[Final], secs: f64) -> Outcome {
    let (f, h, i) = (mean(&fds(full)), mean(&fds(half)), mean(&fds(increase)));
    outcome(
        i <= f + 0.05 && h > f && secs < 900.0,
        format!(
            "fd full {f:.4} half {h:.4} increase {i:.4}; full {} half {} increase {}; {secs:.0}s",
            fmt(&fds(full)),
            fmt(&fds(half)),
            fmt(&fds(increase))
        ),
    )
}

fn c8_wrong_scheme(full: &[Final], increase: &[Final]) -> Outcome {
    let (f, i) = (mean(&fds(full)), mean(&fds(increase)));
    outcome(
        i >= f - 0.01,
        format!("fd full {f:.4} increase {i:.4} (increase {})", fmt(&fds(increase))),
    )
}

fn c9_metric() -> Outcome {
    let a = population_sample(DatasetKind::Ring8, RING_NOISE, 50_000, 11);
    let b = population_sample(DatasetKind::Ring8, RING_NOISE, 50_000, 12);
    let (fa, fb) = (fit_gaussian(&a).unwrap(), fit_gaussian(&b).unwrap());
    let identity = frechet_distance(&fa, &fa).unwrap();
    let ab = frechet_distance(&fa, &fb).unwrap();
    let ba = frechet_distance(&fb, &fa).unwrap();
    let unit = GaussianFit { mean: vec![0.0, 0.0], cov: vec![1.0, 0.0, 0.0, 1.0] };
    let shifted = GaussianFit { mean: vec![3.0, 4.0], cov: vec![1.0, 0.0, 0.0, 1.0] };
    let analytic = frechet_distance(&unit, &shifted).unwrap();
    outcome(
        identity.abs() < 1e-9 && (ab - ba).abs() < 1e-9 && (analytic - 25.0).abs() < 1e-9 && ab < 0.01,
        format!("identity {identity:.1e}, asymmetry {:.1e}, analytic {analytic}, floor {ab:.5}", (ab - ba).abs()),
    )
}

/// Every preset is trained twice through the CLI code path with default
/// settings; the two `metrics.csv` files must match byte for byte.
fn c10_determinism() -> Outcome {
    let mut differing = Vec::new();
    for preset in SchedulePreset::ALL {
        let csv: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut cfg = ExperimentConfig::preset(preset, Regime::LimitedTiny, 7, false);
                cfg.out_dir = dir.path().to_path_buf();
                cmd_train(&cfg, None).expect("run finishes");
                std::fs::read(cfg.run_dir().join("metrics.csv")).unwrap()
            })
            .collect();
        if csv[0] != csv[1] || csv[0].is_empty() {
            differing.push(preset.name());
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() { "all four presets byte-identical".into() } else { format!("differ: {differing:?}") },
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient correctness", c1_gradients());
    report(2, "materialization equivalence", c2_materialization());
    report(3, "growth stability", c3_growth());
    report(4, "schedule exactness", c4_schedule());

    let t = Instant::now();
    let tiny_full = train_seeds(SchedulePreset::FixedFull, Regime::LimitedTiny);
    let tiny_dec = train_seeds(SchedulePreset::DynamicDecrease, Regime::LimitedTiny);
    let limited_secs = t.elapsed().as_secs_f64();
    let tiny_inc = train_seeds(SchedulePreset::DynamicIncrease, Regime::LimitedTiny);
    let t = Instant::now();
    let suff_full = train_seeds(SchedulePreset::FixedFull, Regime::Sufficient);
    let suff_half = train_seeds(SchedulePreset::FixedHalf, Regime::Sufficient);
    let suff_inc = train_seeds(SchedulePreset::DynamicIncrease, Regime::Sufficient);
    let sufficient_secs = t.elapsed().as_secs_f64();

    report(5, "compute claim", c5_compute(&suff_inc));
    report(6, "limited regime", c6_limited(&tiny_full, &tiny_dec, limited_secs));
    report(7, "sufficient regime", c7_sufficient(&suff_full, &suff_half, &suff_inc, sufficient_secs));
    report(8, "wrong scheme", c8_wrong_scheme(&tiny_full, &tiny_inc));
    report(9, "metric validity", c9_metric());
    report(10, "determinism", c10_determinism());

    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

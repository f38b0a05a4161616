//! End-to-end acceptance checks. Every test prints one `criterion N: PASS|FAIL`
//! line (run with `--nocapture` to see them) and fails when its criterion is
//! not met.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deeps_core::channel::{
    capacity, channel_gain, link_geometry, path_loss_exponent, LinkGeometry,
};
use deeps_core::cost::{
    charge_round, downlink_time, local_training_time, training_energy, transmit_energy,
    uplink_time, RoundCost,
};
use deeps_core::domain::{
    ChannelParams, Dataset, FlTask, GrayImage, Label, LabeledSample, PathLossConstants, Position3D,
    UavHardware, UavState,
};
use deeps_core::harness::output::write_comparison;
use deeps_core::harness::{
    compare_strategies, run_experiment, with_threads, ExperimentConfig, StrategySpec,
};
use deeps_core::learning::{
    aggregate, sample_gradient, sample_loss, ModelSpec, ParamVector, Update,
};
use deeps_core::selection::{deeps_score, deeps_select, oracle_select, ScoreInputs};
use deeps_core::similarity::{ssim_pair, DiversityScore, SsimParams};

fn report(n: u32, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn hw(cpu_hz: f64) -> UavHardware {
    UavHardware {
        cpu_hz,
        ..UavHardware::default()
    }
}

fn uav(id: u32, subregion: u32, battery: f64, hardware: UavHardware) -> UavState {
    UavState::new(
        id,
        subregion,
        Position3D::new(0.0, 0.0, 100.0).unwrap(),
        battery,
        1e4,
        hardware,
        Dataset::new(Vec::new(), 1).unwrap(),
    )
    .unwrap()
}

fn task(m: usize, epochs: usize) -> FlTask {
    FlTask {
        n_rounds_max: 200,
        cohort_size: 10,
        per_subregion_quota: 1,
        xi: 0.5,
        ssim_threshold: 0.5,
        epochs_per_round: epochs,
        param_count: m,
        param_size_bits: 32,
    }
}

#[test]
fn criterion_1_formula_exactness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut check = |got: f64, want: f64| worst = worst.max(rel(got, want));

    let g = link_geometry(
        &Position3D::new(100.0, 0.0, 100.0).unwrap(),
        &Position3D::new(0.0, 0.0, 0.0).unwrap(),
    )
    .unwrap();
    check(g.distance_m, 100.0 * 2f64.sqrt());
    check(g.elevation_deg, 45.0);

    let at10 = LinkGeometry::new(100.0, 10.0).unwrap();
    let plc = PathLossConstants {
        a1: 2.0,
        a2: 2.0,
        a3: 0.1,
        a4: 10.0,
    };
    check(path_loss_exponent(&at10, &plc), 2.0 / 11.0 + 2.0);
    let flat = PathLossConstants {
        a1: 1.0,
        a2: 2.0,
        a3: 0.0,
        a4: 1.0,
    };
    for theta in [0.0, 33.0, 90.0] {
        check(
            path_loss_exponent(&LinkGeometry::new(50.0, theta).unwrap(), &flat),
            2.5,
        );
    }

    // a4 = 0 pins alpha to a1 + a2 = 2.
    let alpha2 = ChannelParams {
        beta0: 1e-4,
        plc: PathLossConstants {
            a1: 1.0,
            a2: 1.0,
            a3: 0.0,
            a4: 0.0,
        },
        ..ChannelParams::default()
    };
    check(
        channel_gain(&LinkGeometry::new(100.0, 30.0).unwrap(), &alpha2),
        1e-4,
    );
    // P h^2 / (W sigma^2) = 1.
    check(capacity(1.0, 1e6, 1e-12, 1e-18), 1e6);

    let t = task(1000, 5);
    let u = uav(1, 1, 5000.0, hw(1e7));
    check(local_training_time(&u, &t, 100), 3.5);
    check(
        local_training_time(&uav(1, 1, 5000.0, hw(2e7)), &t, 100),
        1.75,
    );
    check(uplink_time(&t, 1e6).unwrap(), 0.032);
    check(downlink_time(&t, 2e6).unwrap(), 0.016);
    check(training_energy(&u, 1.0), 0.1);
    let t1 = local_training_time(&u, &t, 100);
    let fast = uav(1, 1, 5000.0, hw(2e7));
    let t2 = local_training_time(&fast, &t, 100);
    check(training_energy(&fast, t2) / training_energy(&u, t1), 4.0);
    check(transmit_energy(&u, 0.032), 0.00896);

    let mut b = uav(1, 1, 5000.0, hw(1e7));
    let cost = RoundCost {
        train_energy_j: 0.35,
        tx_energy_j: 0.009,
        ..RoundCost::default()
    };
    check(charge_round(&mut b, &cost).unwrap(), 4999.641);

    let div = DiversityScore {
        mean_pairwise_ssim: 0.2,
        pairs_evaluated: 1,
    };
    let s = deeps_score(&u, &div, &cost, &task(1000, 1));
    check(s, 0.5 * 0.8 + 0.5 * (5000.0 - 0.359) / 1e4);

    let elapsed = start.elapsed();
    report(
        1,
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max relative error {worst:.3e}, {elapsed:.2?}"),
    );
}

fn random_image(rng: &mut ChaCha8Rng, side: u32) -> GrayImage {
    let data = (0..side * side).map(|_| rng.gen()).collect();
    GrayImage::new(side, side, data).unwrap()
}

#[test]
fn criterion_2_ssim_correctness() {
    let start = Instant::now();
    let p = SsimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let identity = (0..50).all(|_| {
        let a = random_image(&mut rng, 32);
        ssim_pair(&a, &a, &p).unwrap() == 1.0
    });
    let mut symmetric = true;
    let mut bounded = true;
    for i in 0..1000 {
        // Mix in correlated pairs so the suite is not all near zero.
        let a = random_image(&mut rng, 32);
        let b = if i % 2 == 0 {
            random_image(&mut rng, 32)
        } else {
            let px = a
                .pixels()
                .iter()
                .map(|&v| v.saturating_add(rng.gen_range(0..20)))
                .collect();
            GrayImage::new(32, 32, px).unwrap()
        };
        let ab = ssim_pair(&a, &b, &p).unwrap();
        let ba = ssim_pair(&b, &a, &p).unwrap();
        symmetric &= ab.to_bits() == ba.to_bits();
        bounded &= ab.abs() <= 1.0;
    }
    let black = GrayImage::filled(32, 32, 0).unwrap();
    let white = GrayImage::filled(32, 32, 255).unwrap();
    let bw = ssim_pair(&black, &white, &p).unwrap();
    let extreme = (bw - 9.9990e-5).abs() <= 1e-9;
    let elapsed = start.elapsed();
    report(
        2,
        identity && symmetric && bounded && extreme && elapsed < Duration::from_secs(10),
        format!(
            "identity {identity}, symmetric {symmetric}, bounded {bounded}, black/white {bw:.6e}, {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_3_gradient_check() {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let spec = ModelSpec {
        input_dim: 16,
        hidden_dim: 8,
        ..ModelSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let params = ParamVector::new(
            (0..spec.param_count())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let label = if case % 2 == 0 {
            Label::Fire
        } else {
            Label::NonFire
        };
        let sample = LabeledSample::new(random_image(&mut rng, 4), label, format!("g{case}"));
        let analytic = sample_gradient(&params, &sample, &spec).unwrap();
        let numeric: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut plus = params.values().to_vec();
                let mut minus = plus.clone();
                plus[i] += H;
                minus[i] -= H;
                let lp = sample_loss(&ParamVector::new(plus).unwrap(), &sample, &spec).unwrap();
                let lm = sample_loss(&ParamVector::new(minus).unwrap(), &sample, &spec).unwrap();
                (lp - lm) / (2.0 * H)
            })
            .collect();
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    let elapsed = start.elapsed();
    report(
        3,
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!("max relative error {worst:.3e} over 100 cases, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_4_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree = 0;
    for round in 0..50 {
        let regions = rng.gen_range(2..=5u32);
        let quota = rng.gen_range(1..=2usize);
        let per_region_max = (20 / regions as usize).max(quota);
        let mut uavs = Vec::new();
        let mut diversity = BTreeMap::new();
        let mut costs = BTreeMap::new();
        let mut id = 1;
        for s in 1..=regions {
            for _ in 0..rng.gen_range(quota..=per_region_max) {
                if uavs.len() == 20 {
                    break;
                }
                let battery = (rng.gen_range(1e3..1e4) * 4.0f64).round() / 4.0;
                uavs.push(uav(id, s, battery, UavHardware::default()));
                diversity.insert(
                    id,
                    DiversityScore {
                        mean_pairwise_ssim: rng.gen_range(0..5) as f64 / 4.0,
                        pairs_evaluated: 1,
                    },
                );
                costs.insert(
                    id,
                    RoundCost {
                        train_energy_j: 0.1,
                        tx_energy_j: 0.01,
                        ..RoundCost::default()
                    },
                );
                id += 1;
            }
        }
        uavs.shuffle(&mut rng);
        let t = FlTask {
            cohort_size: quota * regions as usize,
            per_subregion_quota: quota,
            ..task(1000, 1)
        };
        let inputs = ScoreInputs {
            diversity: &diversity,
            costs: &costs,
        };
        let mut greedy = deeps_select(&uavs, &t, round, &inputs).ids();
        let mut exact = oracle_select(&uavs, &t, round, &inputs).unwrap().ids();
        greedy.sort_unstable();
        exact.sort_unstable();
        if greedy == exact {
            agree += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        agree == 50 && elapsed < Duration::from_secs(60),
        format!("{agree}/50 instances agree, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_5_fedavg_exactness() {
    let start = Instant::now();
    let upd = |id: u32, v: Vec<f64>, n: usize| Update {
        uav_id: id,
        params: ParamVector::new(v).unwrap(),
        shard_size: n,
    };
    let mut exact = aggregate(&[upd(1, vec![1.0], 1), upd(2, vec![3.0], 3)])
        .unwrap()
        .values()
        == [2.5];
    let single = upd(7, vec![0.1, -2.0, 3.3], 5);
    exact &= aggregate(std::slice::from_ref(&single)).unwrap() == single.params;
    exact &= aggregate(&[upd(1, vec![1.0, 4.0], 2), upd(2, vec![3.0, 8.0], 2)])
        .unwrap()
        .values()
        == [2.0, 6.0];

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut invariant = 0;
    for _ in 0..100 {
        let len = rng.gen_range(1..50);
        let mut set: Vec<Update> = (1..=rng.gen_range(1..12u32))
            .map(|id| {
                upd(
                    id,
                    (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                    rng.gen_range(1..100),
                )
            })
            .collect();
        let base = aggregate(&set).unwrap();
        set.shuffle(&mut rng);
        let bitwise = aggregate(&set)
            .unwrap()
            .values()
            .iter()
            .zip(base.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if bitwise {
            invariant += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        5,
        exact && invariant == 100 && elapsed < Duration::from_secs(5),
        format!(
            "examples exact {exact}, {invariant}/100 permutations bitwise equal, {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_6_energy_closure() {
    let cfg = ExperimentConfig::default();
    let s = run_experiment(&cfg).unwrap();
    let spent = s.total_cohort_energy_j();
    let drawdown = s.initial_battery_j - s.final_battery_j;
    let err = rel(spent, drawdown);
    report(
        6,
        err <= 1e-9 && !s.records.is_empty(),
        format!("{} rounds, cohort energy {spent:.9} J, battery drawdown {drawdown:.9} J, relative error {err:.3e}", s.records.len()),
    );
}

#[test]
fn criterion_7_qualitative_ordering() {
    let start = Instant::now();
    let strategies = [
        StrategySpec::Deeps {
            ssim_threshold: 0.1,
        },
        StrategySpec::Deeps {
            ssim_threshold: 0.5,
        },
        StrategySpec::Random,
    ];
    let runs: Vec<_> = (1..=5u64)
        .map(|seed| {
            let cfg = ExperimentConfig {
                master_seed: seed,
                ..ExperimentConfig::default()
            };
            compare_strategies(&cfg, &strategies).unwrap()
        })
        .collect();
    let med = |i: usize, f: &dyn Fn(&deeps_core::harness::RunSummary) -> f64| {
        median(runs.iter().map(|r| f(&r[i])).collect())
    };
    let acc: Vec<f64> = (0..3).map(|i| med(i, &|s| s.final_accuracy)).collect();
    let lambda: Vec<f64> = (0..3).map(|i| med(i, &|s| s.avg_round_time_s)).collect();
    let accuracy_ok = acc[0] - acc[1] >= 0.02 && acc[1] - acc[2] >= 0.02;
    let time_ok = lambda[0] < lambda[2] && lambda[1] < lambda[2];

    let after = runs
        .iter()
        .flat_map(|r| r[..2].iter().filter_map(|s| s.last_dedup_round()))
        .max()
        .unwrap_or(0);
    let rounds = runs
        .iter()
        .flatten()
        .map(|s| s.records.len())
        .min()
        .unwrap_or(0);
    let energy_at = |i: usize, k: usize| {
        median(
            runs.iter()
                .map(|r| r[i].records[k].cohort_energy_j)
                .collect(),
        )
    };
    let mut energy_ok = after < rounds;
    let mut energy_misses = 0;
    for k in after..rounds {
        let random = energy_at(2, k);
        if !(energy_at(0, k) < random && energy_at(1, k) < random) {
            energy_ok = false;
            energy_misses += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        7,
        accuracy_ok && time_ok && energy_ok && elapsed < Duration::from_secs(15 * 60),
        format!(
            "median accuracy deeps0.1 {:.4} deeps0.5 {:.4} random {:.4} ({}); median lambda_t {:.4} {:.4} {:.4} s ({}); \
             energy after round {after}: {energy_misses}/{} rounds violate ({}); {elapsed:.2?}",
            acc[0],
            acc[1],
            acc[2],
            if accuracy_ok { "ok" } else { "not ordered" },
            lambda[0],
            lambda[1],
            lambda[2],
            if time_ok { "ok" } else { "not ordered" },
            rounds.saturating_sub(after),
            if energy_ok { "ok" } else { "not ordered" },
        ),
    );
}

fn csv_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let key = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(key, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_8_determinism() {
    let cfg = ExperimentConfig::default();
    let strategies = cfg.compare.clone();
    let dirs: Vec<_> = [Some(1), Some(4), Some(4)]
        .into_iter()
        .map(|threads| {
            let dir = tempfile::tempdir().unwrap();
            let summaries = with_threads(threads, || compare_strategies(&cfg, &strategies))
                .unwrap()
                .unwrap();
            write_comparison(dir.path(), &cfg, &summaries).unwrap();
            dir
        })
        .collect();
    let files: Vec<_> = dirs.iter().map(|d| csv_files(d.path())).collect();
    let identical = files.windows(2).all(|w| w[0] == w[1]);
    report(
        8,
        identical && files[0].len() >= 4,
        format!(
            "{} CSV files byte-identical across 1, 4 and 4 threads: {identical}",
            files[0].len()
        ),
    );
}

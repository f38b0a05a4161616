use std::fs;
use std::path::Path;
use std::process::Command;

use deeps_core::domain::{GrayImage, Label};
use deeps_core::harness::output::{write_run, ROUNDS_HEADER};
use deeps_core::harness::{
    build_world, compare_strategies, run_experiment, ExperimentConfig, StrategySpec,
};
use deeps_core::pgm::{load_manifest, write_pgm};

fn small() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "scenario": "custom",
            "population": {"uavs": 6, "cohort_size": 3, "per_subregion_quota": 1, "subregions": 3, "n_rounds_max": 8},
            "generator": {"samples_min": 40, "samples_max": 60}
        }"#,
    )
    .unwrap()
}

fn write_fixture(dir: &Path) {
    let shades = [0u8, 80, 160, 240];
    for (i, v) in shades.iter().enumerate() {
        let img = GrayImage::new(
            32,
            32,
            (0..1024).map(|p| v.wrapping_add((p % 32) as u8)).collect(),
        )
        .unwrap();
        write_pgm(&dir.join(format!("img/{i}.pgm")), &img).unwrap();
    }
    fs::write(
        dir.join("manifest.csv"),
        "path,label,subregion,uav\nimg/0.pgm,1,1,1\nimg/1.pgm,0,1,1\nimg/2.pgm,1,2,2\nimg/3.pgm,0,2,2\n",
    )
    .unwrap();
}

#[test]
fn four_row_manifest_gives_two_uavs() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("img")).unwrap();
    write_fixture(dir.path());
    let by_uav = load_manifest(&dir.path().join("manifest.csv"), dir.path()).unwrap();
    assert_eq!(by_uav.len(), 2);
    for (id, entry) in &by_uav {
        assert_eq!(entry.subregion_id, *id);
        assert_eq!(entry.samples.len(), 2);
        assert_eq!(entry.samples[0].label, Label::Fire);
        assert_eq!(entry.samples[1].label, Label::NonFire);
    }
}

#[test]
fn single_uav_single_round() {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "scenario": "custom",
            "population": {"uavs": 1, "cohort_size": 1, "per_subregion_quota": 1, "subregions": 1, "n_rounds_max": 1},
            "generator": {"samples_min": 20, "samples_max": 20}
        }"#,
    )
    .unwrap();
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.records.len(), 1);
    assert_eq!(s.records[0].selected_ids, vec![1]);
    assert!(s.records[0].round_duration_s > 0.0);
    assert!(s.final_battery_j < s.initial_battery_j);
}

#[test]
fn runs_repeat_exactly() {
    let cfg = small();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    let other = run_experiment(&ExperimentConfig {
        master_seed: 2,
        ..cfg
    })
    .unwrap();
    assert_ne!(a.records, other.records);
}

#[test]
fn compare_shares_the_world_and_dedups_once() {
    let cfg = small();
    let strategies = [
        StrategySpec::Deeps {
            ssim_threshold: 0.5,
        },
        StrategySpec::Random,
    ];
    let out = compare_strategies(&cfg, &strategies).unwrap();
    assert_eq!(out[0].strategy, "deeps_th0.5");
    assert_eq!(out[1].strategy, "random");
    assert_eq!(out[0].initial_battery_j, out[1].initial_battery_j);
    assert!(out[1].dedup_events.is_empty());
    let first_cohort = &out[0].records[0].selected_ids;
    let deduped: Vec<u32> = out[0].dedup_events.iter().map(|e| e.uav_id).collect();
    assert_eq!(deduped.len(), first_cohort.len());
    assert!(out[0].dedup_events.iter().all(|e| e.removed <= e.before));
    for r in &out[0].records {
        assert_eq!(r.selected_ids.len(), 3);
    }
}

#[test]
fn world_layout_matches_population() {
    let w = build_world(&small()).unwrap();
    assert_eq!(w.uavs.len(), 6);
    for (i, u) in w.uavs.iter().enumerate() {
        assert_eq!(u.id, i as u32 + 1);
        assert_eq!(u.subregion_id, i as u32 % 3 + 1);
        assert!((1e3..=1e4).contains(&u.battery_j()));
        assert_eq!(u.position.z, 100.0);
        assert!(u.position.x.abs() <= 500.0 && u.position.y.abs() <= 500.0);
    }
    assert!(!w.test_set.is_empty());
}

#[test]
fn artifacts_are_written() {
    let cfg = small();
    let s = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &cfg, &s).unwrap();
    let rounds = fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().next().unwrap(), ROUNDS_HEADER);
    assert_eq!(rounds.lines().count(), s.records.len() + 1);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap())
            .unwrap();
    assert_eq!(meta["master_seed"], 1);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn cli_generates_data_and_runs_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"scenario": "custom",
            "population": {"uavs": 4, "cohort_size": 2, "per_subregion_quota": 1, "subregions": 2, "n_rounds_max": 4},
            "generator": {"samples_min": 20, "samples_max": 30}}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let bin = env!("CARGO_BIN_EXE_deeps");
    let status = Command::new(bin)
        .args(["gen-data", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = data.join("manifest.csv");
    assert_eq!(load_manifest(&manifest, &data).unwrap().len(), 4);

    let report = Command::new(bin)
        .args(["dedup-report", "--manifest"])
        .arg(&manifest)
        .output()
        .unwrap();
    assert!(report.status.success());
    let text = String::from_utf8(report.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 2);

    let run_cfg = dir.path().join("run.json");
    fs::write(
        &run_cfg,
        format!(
            r#"{{"scenario": "custom",
                "population": {{"uavs": 4, "cohort_size": 2, "per_subregion_quota": 1, "subregions": 2, "n_rounds_max": 4}},
                "data": {{"source": "manifest", "path": {:?}}}}}"#,
            manifest.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = Command::new(bin)
        .args(["run", "--strategy", "random", "--threads", "2", "--config"])
        .arg(&run_cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(
        fs::read_to_string(out.join("rounds.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
}

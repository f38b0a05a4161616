//! The round loop: score, select, deduplicate on first use, train, charge,
//! aggregate, evaluate.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, StrategySpec};
use crate::cost::{can_afford, charge_round, estimate_round_cost, round_duration, RoundCost};
use crate::datagen::generate_uav_dataset;
use crate::domain::{
    validate_scenario, Dataset, FlTask, LabeledSample, Position3D, RoundRecord, UavState,
};
use crate::error::{Error, Result};
use crate::learning::{aggregate, evaluate, local_train, model_init, Update};
use crate::pgm::load_manifest;
use crate::seed::{self, purpose};
use crate::selection::{deeps_select, oracle_select, random_select, ScoreInputs, Selection};
use crate::similarity::{
    consecutive_diversity, dataset_diversity, deduplicate, DiversityMode, DiversityScore,
};

/// Initial state shared by every strategy of one experiment.
#[derive(Clone, Debug)]
pub struct World {
    pub uavs: Vec<UavState>,
    pub test_set: Vec<LabeledSample>,
    pub bs: Position3D,
}

/// Grid of `rows x cols` cells covering the area, `rows <= cols`.
fn grid_shape(cells: usize) -> (usize, usize) {
    let rows = (1..=cells)
        .filter(|r| cells % r == 0 && r * r <= cells)
        .max()
        .unwrap_or(1);
    (rows, cells / rows)
}

/// Uniform position inside the cell of `subregion` (1-based).
fn place_in_cell(
    cfg: &ExperimentConfig,
    subregions: usize,
    subregion: u32,
    rng: &mut impl Rng,
) -> Result<Position3D> {
    let (rows, cols) = grid_shape(subregions);
    let cell = subregion as usize - 1;
    let (r, c) = (cell / cols, cell % cols);
    let side = cfg.geometry.area_side_m;
    let (w, h) = (side / cols as f64, side / rows as f64);
    let x = -side / 2.0 + (c as f64 + rng.gen::<f64>()) * w;
    let y = -side / 2.0 + (r as f64 + rng.gen::<f64>()) * h;
    Position3D::new(x, y, cfg.geometry.uav_altitude_m)
}

struct RawUav {
    subregion_id: u32,
    train: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
}

fn synthetic_data(cfg: &ExperimentConfig, n: usize, subregions: usize) -> Result<Vec<RawUav>> {
    (1..=n as u32)
        .into_par_iter()
        .map(|id| {
            let subregion_id = (id - 1) % subregions as u32 + 1;
            let (train, test) =
                generate_uav_dataset(&cfg.generator, subregion_id, id, cfg.master_seed)?.split();
            Ok(RawUav {
                subregion_id,
                train,
                test,
            })
        })
        .collect()
}

fn manifest_data(
    cfg: &ExperimentConfig,
    path: &std::path::Path,
    root: &std::path::Path,
    n: usize,
) -> Result<Vec<RawUav>> {
    let side = cfg.image_side()?;
    let mut by_uav = load_manifest(path, root)?;
    let ids: Vec<u32> = by_uav.keys().copied().collect();
    if ids != (1..=n as u32).collect::<Vec<_>>() {
        return Err(Error::Config(format!(
            "manifest must list UAVs 1..={n}, found {ids:?}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    for id in 1..=n as u32 {
        let entry = by_uav.remove(&id).expect("checked above");
        let samples = entry
            .samples
            .into_iter()
            .map(|s| {
                let img = s.image.resize_area(side, side)?;
                Ok(LabeledSample::new(img, s.label, s.source_id))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = samples.len();
        let n_test = (cfg.generator.test_fraction * count as f64).round() as usize;
        let mut rng = seed::rng(cfg.master_seed, purpose::SPLIT, &[id as u64]);
        let test_idx = rand::seq::index::sample(&mut rng, count, n_test)
            .into_iter()
            .collect();
        let (train, test) = Dataset::split_off_test(samples, &test_idx);
        out.push(RawUav {
            subregion_id: entry.subregion_id,
            train,
            test,
        });
    }
    Ok(out)
}

/// Builds UAVs (ids `1..=N`), their data, positions and batteries.
pub fn build_world(cfg: &ExperimentConfig) -> Result<World> {
    cfg.validate()?;
    let pop = cfg.population()?;
    let raw = match &cfg.data {
        DataSource::Synthetic => synthetic_data(cfg, pop.uavs, pop.subregions)?,
        DataSource::Manifest { path, image_root } => {
            let root = image_root
                .clone()
                .or_else(|| path.parent().map(|p| p.to_path_buf()))
                .unwrap_or_default();
            manifest_data(cfg, path, &root, pop.uavs)?
        }
    };
    let mut place_rng = seed::rng(cfg.master_seed, purpose::PLACEMENT, &[]);
    let mut battery_rng = seed::rng(cfg.master_seed, purpose::BATTERY, &[]);
    let mut uavs = Vec::with_capacity(pop.uavs);
    let mut test_set = Vec::new();
    for (i, r) in raw.into_iter().enumerate() {
        let id = i as u32 + 1;
        let (position, subregion_id) = match &cfg.geometry.placements {
            Some(p) => (Position3D::new(p[i].x, p[i].y, p[i].z)?, p[i].subregion),
            None => (
                place_in_cell(cfg, pop.subregions, r.subregion_id, &mut place_rng)?,
                r.subregion_id,
            ),
        };
        let b = &cfg.battery;
        let battery = if b.initial_min_j < b.initial_max_j {
            battery_rng.gen_range(b.initial_min_j..=b.initial_max_j)
        } else {
            b.initial_min_j
        };
        let dataset = Dataset::new(r.train, pop.n_rounds_max)?;
        uavs.push(UavState::new(
            id,
            subregion_id,
            position,
            battery,
            b.capacity_j,
            cfg.hardware,
            dataset,
        )?);
        test_set.extend(r.test);
    }
    let task = cfg.task(&cfg.strategy)?;
    validate_scenario(&uavs, &task, pop.subregions as u32)?;
    if test_set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let bs = Position3D::new(0.0, 0.0, cfg.geometry.bs_altitude_m)?;
    Ok(World { uavs, test_set, bs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedupEvent {
    pub round_k: usize,
    pub uav_id: u32,
    pub before: usize,
    pub removed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    /// Mean simulated round duration over all executed rounds.
    pub avg_round_time_s: f64,
    pub rounds_to_convergence: Option<usize>,
    /// Simulated time up to and including the convergence round, minutes.
    pub time_to_convergence_min: Option<f64>,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub records: Vec<RoundRecord>,
    pub dedup_events: Vec<DedupEvent>,
    /// `(round, sub-region)` pairs that could not fill their quota.
    pub exhausted: Vec<(usize, u32)>,
    /// Set when the run ended before `n_rounds_max` for a reason other than
    /// convergence.
    pub stopped_early: Option<String>,
    pub initial_battery_j: f64,
    pub final_battery_j: f64,
}

impl RunSummary {
    pub fn total_cohort_energy_j(&self) -> f64 {
        self.records.iter().map(|r| r.cohort_energy_j).sum()
    }

    /// Last round in which any dataset was deduplicated.
    pub fn last_dedup_round(&self) -> Option<usize> {
        self.dedup_events.iter().map(|e| e.round_k).max()
    }
}

/// Trailing-window plateau test on the accuracy series.
pub fn converged(accuracies: &[f64], window: usize, tolerance: f64) -> bool {
    if accuracies.len() < window {
        return false;
    }
    let tail = &accuracies[accuracies.len() - window..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    max - min < tolerance
}

fn diversity_of(cfg: &ExperimentConfig, uav: &UavState, generation: u64) -> Result<DiversityScore> {
    let samples = uav.dataset().samples();
    if samples.len() < 2 {
        // Nothing to compare: a lone sample is not redundant.
        return Ok(DiversityScore {
            mean_pairwise_ssim: 0.0,
            pairs_evaluated: 0,
        });
    }
    match cfg.diversity.mode {
        DiversityMode::Pairwise => {
            let s = seed::derive(
                cfg.master_seed,
                purpose::DIVERSITY,
                &[uav.id as u64, generation],
            );
            dataset_diversity(samples, &cfg.ssim, cfg.diversity.max_pairs, s)
        }
        DiversityMode::Consecutive => consecutive_diversity(samples, &cfg.ssim),
    }
}

struct Simulation<'a> {
    cfg: &'a ExperimentConfig,
    strategy: StrategySpec,
    task: FlTask,
    uavs: Vec<UavState>,
    test_set: &'a [LabeledSample],
    bs: Position3D,
    diversity: BTreeMap<u32, DiversityScore>,
}

impl Simulation<'_> {
    fn estimate(&self, u: &UavState, round_k: usize) -> Result<RoundCost> {
        estimate_round_cost(
            u,
            &self.task,
            &self.cfg.channel,
            &self.bs,
            u.dataset().shard_size(round_k),
        )
    }

    fn refresh_diversity(&mut self) -> Result<()> {
        let missing: Vec<usize> = self
            .uavs
            .iter()
            .enumerate()
            .filter(|(_, u)| u.is_alive() && !self.diversity.contains_key(&u.id))
            .map(|(i, _)| i)
            .collect();
        let scores: Vec<Result<DiversityScore>> = missing
            .par_iter()
            .map(|&i| {
                let u = &self.uavs[i];
                diversity_of(self.cfg, u, u.dataset().is_deduplicated() as u64)
            })
            .collect();
        for (i, s) in missing.into_iter().zip(scores) {
            self.diversity.insert(self.uavs[i].id, s?);
        }
        Ok(())
    }

    fn select(&self, round_k: usize, costs: &BTreeMap<u32, RoundCost>) -> Result<Selection> {
        let inputs = ScoreInputs {
            diversity: &self.diversity,
            costs,
        };
        match self.strategy {
            StrategySpec::Deeps { .. } => {
                Ok(deeps_select(&self.uavs, &self.task, round_k, &inputs))
            }
            StrategySpec::Oracle { .. } => oracle_select(&self.uavs, &self.task, round_k, &inputs),
            StrategySpec::Random => {
                let s = seed::derive(self.cfg.master_seed, purpose::SELECTION, &[round_k as u64]);
                random_select(&self.uavs, &self.task, round_k, s)
            }
        }
    }

    fn index_of(&self, id: u32) -> usize {
        self.uavs
            .iter()
            .position(|u| u.id == id)
            .expect("selected UAV exists")
    }
}

/// Runs one strategy on a prepared world.
pub fn run_on_world(
    cfg: &ExperimentConfig,
    strategy: StrategySpec,
    world: &World,
) -> Result<RunSummary> {
    let task = cfg.task(&strategy)?;
    let mut sim = Simulation {
        cfg,
        strategy,
        task,
        uavs: world.uavs.clone(),
        test_set: &world.test_set,
        bs: world.bs,
        diversity: BTreeMap::new(),
    };
    let uses_scores = !matches!(strategy, StrategySpec::Random);
    let initial_battery_j: f64 = sim.uavs.iter().map(UavState::battery_j).sum();
    let mut params = model_init(&cfg.model, cfg.master_seed);
    let initial_eval = evaluate(&params, sim.test_set, &cfg.model)?;

    let mut records: Vec<RoundRecord> = Vec::new();
    let mut accuracies = Vec::new();
    let mut dedup_events = Vec::new();
    let mut exhausted = Vec::new();
    let mut stopped_early = None;
    let mut convergence: Option<(usize, f64)> = None;
    let mut elapsed_s = 0.0;

    for round_k in 1..=task.n_rounds_max {
        // Start-of-round feasibility: a UAV that cannot fund its next round
        // leaves the federation.
        let mut dropouts = 0;
        let mut costs = BTreeMap::new();
        for i in 0..sim.uavs.len() {
            if !sim.uavs[i].is_alive() {
                continue;
            }
            let c = sim.estimate(&sim.uavs[i], round_k)?;
            if can_afford(&sim.uavs[i], &c) {
                costs.insert(sim.uavs[i].id, c);
            } else {
                sim.uavs[i].mark_dead();
                dropouts += 1;
            }
        }
        if uses_scores {
            sim.refresh_diversity()?;
        }
        let selection = match sim.select(round_k, &costs) {
            Ok(s) => s,
            Err(e @ Error::CohortInfeasible { .. }) => {
                stopped_early = Some(format!("round {round_k}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        exhausted.extend(selection.exhausted_subregions.iter().map(|&s| (round_k, s)));
        if selection.chosen.is_empty() {
            stopped_early = Some(format!(
                "round {round_k}: no feasible UAV in any sub-region"
            ));
            break;
        }
        let ids = selection.ids();

        if let Some(th) = strategy.ssim_threshold() {
            for &id in &ids {
                let i = sim.index_of(id);
                if !sim.uavs[i].dataset().is_deduplicated() {
                    let before = sim.uavs[i].dataset().len();
                    let removed = deduplicate(sim.uavs[i].dataset_mut(), th, &cfg.ssim)?;
                    dedup_events.push(DedupEvent {
                        round_k,
                        uav_id: id,
                        before,
                        removed,
                    });
                    sim.diversity.remove(&id);
                    let c = sim.estimate(&sim.uavs[i], round_k)?;
                    costs.insert(id, c);
                }
            }
        }

        let cohort: Vec<usize> = ids.iter().map(|&id| sim.index_of(id)).collect();
        let global = &params;
        let trained: Vec<Result<Update>> = cohort
            .par_iter()
            .map(|&i| {
                let u = &sim.uavs[i];
                let shard = u.dataset().shard(round_k);
                let s = seed::derive(
                    cfg.master_seed,
                    purpose::TRAINING,
                    &[round_k as u64, u.id as u64],
                );
                Ok(Update {
                    uav_id: u.id,
                    params: local_train(global, shard, &cfg.model, task.epochs_per_round, s)?,
                    shard_size: shard.len(),
                })
            })
            .collect();
        let updates = trained.into_iter().collect::<Result<Vec<_>>>()?;

        let round_costs: Vec<RoundCost> = ids.iter().map(|id| costs[id]).collect();
        let mut cohort_energy_j = 0.0;
        for (&i, c) in cohort.iter().zip(&round_costs) {
            charge_round(&mut sim.uavs[i], c)?;
            cohort_energy_j += c.total_energy_j();
        }
        let duration = round_duration(&round_costs)?;
        params = aggregate(&updates)?;
        let eval = evaluate(&params, sim.test_set, &cfg.model)?;
        elapsed_s += duration;
        accuracies.push(eval.accuracy);
        records.push(RoundRecord {
            round_k,
            selected_ids: ids,
            global_accuracy: eval.accuracy,
            global_loss: eval.mean_loss,
            round_duration_s: duration,
            cohort_energy_j,
            alive_uavs: sim.uavs.iter().filter(|u| u.is_alive()).count(),
            dropouts,
        });
        if convergence.is_none()
            && converged(
                &accuracies,
                cfg.convergence.window,
                cfg.convergence.tolerance,
            )
        {
            convergence = Some((round_k, elapsed_s / 60.0));
            if cfg.stop_on_convergence {
                break;
            }
        }
    }

    let last = records.last();
    let avg_round_time_s = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.round_duration_s).sum::<f64>() / records.len() as f64
    };
    Ok(RunSummary {
        strategy: strategy.label(),
        avg_round_time_s,
        rounds_to_convergence: convergence.map(|c| c.0),
        time_to_convergence_min: convergence.map(|c| c.1),
        final_accuracy: last.map_or(initial_eval.accuracy, |r| r.global_accuracy),
        final_loss: last.map_or(initial_eval.mean_loss, |r| r.global_loss),
        records,
        dedup_events,
        exhausted,
        stopped_early,
        initial_battery_j,
        final_battery_j: sim.uavs.iter().map(UavState::battery_j).sum(),
    })
}

/// Builds the world from `cfg` and runs `cfg.strategy` on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let world = build_world(cfg)?;
    run_on_world(cfg, cfg.strategy, &world)
}

/// Runs every strategy on the same world.
pub fn compare_strategies(
    cfg: &ExperimentConfig,
    strategies: &[StrategySpec],
) -> Result<Vec<RunSummary>> {
    if strategies.len() < 2 {
        return Err(Error::Config(
            "compare needs at least two strategies".into(),
        ));
    }
    let world = build_world(cfg)?;
    strategies
        .iter()
        .map(|&s| run_on_world(cfg, s, &world))
        .collect()
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

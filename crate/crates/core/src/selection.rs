//! Cohort selection: the DEEPS score, per-sub-region top-quota selection,
//! the uniform random baseline, and an exhaustive oracle for small instances.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{can_afford, RoundCost};
use crate::domain::{FlTask, UavState};
use crate::error::{Error, Result};
use crate::similarity::DiversityScore;

/// Largest population the exhaustive oracle accepts.
pub const ORACLE_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Deeps,
    Random,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub uav_id: u32,
    pub subregion_id: u32,
    /// Selection score; always 0 for random picks.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub round_k: usize,
    pub chosen: Vec<Chosen>,
    pub strategy: Strategy,
    /// Sub-regions that could not fill their quota this round.
    pub exhausted_subregions: Vec<u32>,
}

impl Selection {
    pub fn ids(&self) -> Vec<u32> {
        self.chosen.iter().map(|c| c.uav_id).collect()
    }

    pub fn is_degraded(&self) -> bool {
        !self.exhausted_subregions.is_empty()
    }
}

/// Per-round inputs shared by the score-based selectors.
pub struct ScoreInputs<'a> {
    pub diversity: &'a BTreeMap<u32, DiversityScore>,
    pub costs: &'a BTreeMap<u32, RoundCost>,
}

/// `xi * (1 - mean_ssim) + (1 - xi) * (B - E_train - E_tx) / B_max`.
pub fn deeps_score(uav: &UavState, div: &DiversityScore, est: &RoundCost, task: &FlTask) -> f64 {
    let residual = (uav.battery_j() - est.train_energy_j - est.tx_energy_j) / uav.battery_max_j;
    task.xi * (1.0 - div.mean_pairwise_ssim) + (1.0 - task.xi) * residual
}

fn by_score_then_id(a: &Chosen, b: &Chosen) -> Ordering {
    b.score.total_cmp(&a.score).then(a.uav_id.cmp(&b.uav_id))
}

/// Alive, affordable UAVs with a score, grouped by sub-region `1..=S`.
fn scored_candidates(
    uavs: &[UavState],
    task: &FlTask,
    inputs: &ScoreInputs,
) -> BTreeMap<u32, Vec<Chosen>> {
    let mut groups: BTreeMap<u32, Vec<Chosen>> = (1..=task.subregion_count() as u32)
        .map(|s| (s, Vec::new()))
        .collect();
    for u in uavs.iter().filter(|u| u.is_alive()) {
        let (Some(div), Some(cost)) = (inputs.diversity.get(&u.id), inputs.costs.get(&u.id)) else {
            continue;
        };
        if !can_afford(u, cost) {
            continue;
        }
        if let Some(group) = groups.get_mut(&u.subregion_id) {
            group.push(Chosen {
                uav_id: u.id,
                subregion_id: u.subregion_id,
                score: deeps_score(u, div, cost, task),
            });
        }
    }
    groups
}

/// Takes the `per_subregion_quota` best-scoring feasible UAVs of every
/// sub-region (ties to the lower id). A sub-region with too few feasible
/// UAVs contributes what it has and is listed in `exhausted_subregions`.
pub fn deeps_select(
    uavs: &[UavState],
    task: &FlTask,
    round_k: usize,
    inputs: &ScoreInputs,
) -> Selection {
    let mut chosen = Vec::with_capacity(task.cohort_size);
    let mut exhausted = Vec::new();
    for (subregion, mut group) in scored_candidates(uavs, task, inputs) {
        group.sort_by(by_score_then_id);
        if group.len() < task.per_subregion_quota {
            exhausted.push(subregion);
        }
        chosen.extend(group.into_iter().take(task.per_subregion_quota));
    }
    Selection {
        round_k,
        chosen,
        strategy: Strategy::Deeps,
        exhausted_subregions: exhausted,
    }
}

/// Uniform sample of `cohort_size` alive UAVs, without replacement and
/// without regard to sub-regions or batteries. Output is in id order.
pub fn random_select(
    uavs: &[UavState],
    task: &FlTask,
    round_k: usize,
    rng_seed: u64,
) -> Result<Selection> {
    let mut alive: Vec<&UavState> = uavs.iter().filter(|u| u.is_alive()).collect();
    alive.sort_by_key(|u| u.id);
    if alive.len() < task.cohort_size {
        return Err(Error::CohortInfeasible {
            alive: alive.len(),
            needed: task.cohort_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked = index::sample(&mut rng, alive.len(), task.cohort_size).into_vec();
    picked.sort_unstable();
    let chosen = picked
        .into_iter()
        .map(|i| Chosen {
            uav_id: alive[i].id,
            subregion_id: alive[i].subregion_id,
            score: 0.0,
        })
        .collect();
    Ok(Selection {
        round_k,
        chosen,
        strategy: Strategy::Random,
        exhausted_subregions: Vec::new(),
    })
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k.min(n), &mut Vec::new(), &mut out);
    out
}

/// Objective of a cohort. Scores are added in sorted order so cohorts with
/// the same multiset of scores compare equal bit for bit.
fn cohort_value(cohort: &[Chosen]) -> f64 {
    let mut s: Vec<f64> = cohort.iter().map(|c| c.score).collect();
    s.sort_by(f64::total_cmp);
    s.iter().sum()
}

/// Exhaustive search over every cohort that takes exactly the quota from
/// each sub-region (or all feasible UAVs where fewer exist), maximizing the
/// summed score. Ties go to the lexicographically smallest sorted id list.
pub fn oracle_select(
    uavs: &[UavState],
    task: &FlTask,
    round_k: usize,
    inputs: &ScoreInputs,
) -> Result<Selection> {
    if uavs.len() > ORACLE_LIMIT {
        return Err(Error::InstanceTooLarge {
            got: uavs.len(),
            limit: ORACLE_LIMIT,
        });
    }
    let groups = scored_candidates(uavs, task, inputs);
    let exhausted: Vec<u32> = groups
        .iter()
        .filter(|(_, g)| g.len() < task.per_subregion_quota)
        .map(|(&s, _)| s)
        .collect();
    let options: Vec<Vec<Vec<Chosen>>> = groups
        .values()
        .map(|g| {
            combinations(g.len(), task.per_subregion_quota)
                .into_iter()
                .map(|idx| idx.into_iter().map(|i| g[i]).collect())
                .collect()
        })
        .collect();

    let mut best: Option<(f64, Vec<u32>, Vec<Chosen>)> = None;
    let mut pick = vec![0usize; options.len()];
    loop {
        let cohort: Vec<Chosen> = pick
            .iter()
            .zip(&options)
            .flat_map(|(&i, opts)| opts[i].iter().copied())
            .collect();
        let value = cohort_value(&cohort);
        let mut ids: Vec<u32> = cohort.iter().map(|c| c.uav_id).collect();
        ids.sort_unstable();
        let better = match &best {
            None => true,
            Some((v, best_ids, _)) => value > *v || (value == *v && ids < *best_ids),
        };
        if better {
            best = Some((value, ids, cohort));
        }
        // Odometer over the per-sub-region choices.
        let mut d = 0;
        while d < pick.len() {
            pick[d] += 1;
            if pick[d] < options[d].len() {
                break;
            }
            pick[d] = 0;
            d += 1;
        }
        if d == pick.len() {
            break;
        }
    }
    let mut chosen = best.map(|(_, _, c)| c).unwrap_or_default();
    chosen.sort_by(|a, b| {
        a.subregion_id
            .cmp(&b.subregion_id)
            .then(by_score_then_id(a, b))
    });
    Ok(Selection {
        round_k,
        chosen,
        strategy: Strategy::Oracle,
        exhausted_subregions: exhausted,
    })
}

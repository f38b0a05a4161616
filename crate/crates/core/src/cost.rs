//! Per-round latency and energy accounting, and battery bookkeeping.
//!
//! Only local computation and the uplink transmission are charged to a UAV.
//! Hovering power is treated as a constant outside the FL budget, and the
//! base station side is not metered.

use serde::{Deserialize, Serialize};

use crate::channel::{capacity_downlink, capacity_uplink, channel_gain, link_geometry};
use crate::domain::{ChannelParams, FlTask, Position3D, UavState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundCost {
    pub train_time_s: f64,
    pub uplink_time_s: f64,
    pub downlink_time_s: f64,
    pub train_energy_j: f64,
    pub tx_energy_j: f64,
}

impl RoundCost {
    pub fn total_time_s(&self) -> f64 {
        self.train_time_s + self.uplink_time_s + self.downlink_time_s
    }

    pub fn total_energy_j(&self) -> f64 {
        self.train_energy_j + self.tx_energy_j
    }
}

/// `T_e * kappa * shard_size / gamma`.
pub fn local_training_time(uav: &UavState, task: &FlTask, shard_size: usize) -> f64 {
    task.epochs_per_round as f64 * uav.hardware.cycles_per_sample * shard_size as f64
        / uav.hardware.cpu_hz
}

fn transfer_time(task: &FlTask, rate_bps: f64) -> Result<f64> {
    if !(rate_bps > 0.0) {
        return Err(Error::ZeroRate);
    }
    Ok(task.model_bits() / rate_bps)
}

pub fn uplink_time(task: &FlTask, rate_bps: f64) -> Result<f64> {
    transfer_time(task, rate_bps)
}

pub fn downlink_time(task: &FlTask, rate_bps: f64) -> Result<f64> {
    transfer_time(task, rate_bps)
}

/// Slowest participant's compute + uplink + downlink time. Aggregation and
/// backbone transfer take no time.
pub fn round_duration(costs: &[RoundCost]) -> Result<f64> {
    costs
        .iter()
        .map(RoundCost::total_time_s)
        .reduce(f64::max)
        .ok_or(Error::EmptyCohort)
}

/// CPU energy `chi * t * gamma^3`.
pub fn training_energy(uav: &UavState, train_time_s: f64) -> f64 {
    let gamma = uav.hardware.cpu_hz;
    uav.hardware.chip_coeff * train_time_s * gamma * gamma * gamma
}

/// Uplink radio energy `P_u * t_up`. Reception is not charged.
pub fn transmit_energy(uav: &UavState, uplink_time_s: f64) -> f64 {
    uav.hardware.tx_power_w * uplink_time_s
}

/// Full cost of one round for `uav` training on `shard_size` samples.
pub fn estimate_round_cost(
    uav: &UavState,
    task: &FlTask,
    channel: &ChannelParams,
    bs_pos: &Position3D,
    shard_size: usize,
) -> Result<RoundCost> {
    let geom = link_geometry(&uav.position, bs_pos)?;
    let h = channel_gain(&geom, channel);
    let train_time_s = local_training_time(uav, task, shard_size);
    let uplink_time_s = uplink_time(task, capacity_uplink(h, channel, uav))?;
    let downlink_time_s = downlink_time(task, capacity_downlink(h, channel))?;
    Ok(RoundCost {
        train_time_s,
        uplink_time_s,
        downlink_time_s,
        train_energy_j: training_energy(uav, train_time_s),
        tx_energy_j: transmit_energy(uav, uplink_time_s),
    })
}

/// Whether the UAV's battery covers the round (the per-UAV energy constraint).
pub fn can_afford(uav: &UavState, cost: &RoundCost) -> bool {
    cost.total_energy_j() <= uav.battery_j()
}

/// Debits the round's energy from the battery and returns the new level.
pub fn charge_round(uav: &mut UavState, cost: &RoundCost) -> Result<f64> {
    if !uav.is_alive() {
        return Err(Error::invariant(format!("UAV {} is not alive", uav.id)));
    }
    let required = cost.total_energy_j();
    if !(required >= 0.0) {
        return Err(Error::invariant("round energy must be >= 0"));
    }
    let battery = uav.battery_j();
    if required > battery {
        return Err(Error::InsufficientBattery {
            uav_id: uav.id,
            battery_j: battery,
            required_j: required,
        });
    }
    let left = battery - required;
    uav.set_battery(left);
    Ok(left)
}

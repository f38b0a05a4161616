//! Air-to-ground link model: reciprocal path-loss gain with an
//! elevation-dependent exponent, and Shannon capacities for both directions.

use crate::domain::{ChannelParams, PathLossConstants, Position3D, UavState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkGeometry {
    pub distance_m: f64,
    /// Elevation of the UAV seen from the base station, degrees in [0, 90].
    pub elevation_deg: f64,
}

impl LinkGeometry {
    pub fn new(distance_m: f64, elevation_deg: f64) -> Result<Self> {
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            return Err(Error::invariant(format!(
                "distance must be positive, got {distance_m}"
            )));
        }
        if !(0.0..=90.0).contains(&elevation_deg) {
            return Err(Error::invariant(format!(
                "elevation must be in [0, 90] deg, got {elevation_deg}"
            )));
        }
        Ok(Self {
            distance_m,
            elevation_deg,
        })
    }
}

/// 3D distance and elevation angle between a UAV and a base station.
///
/// The elevation uses the absolute altitude difference, so swapping the two
/// endpoints yields the same geometry.
pub fn link_geometry(uav_pos: &Position3D, bs_pos: &Position3D) -> Result<LinkGeometry> {
    let dx = uav_pos.x - bs_pos.x;
    let dy = uav_pos.y - bs_pos.y;
    let dz = (uav_pos.z - bs_pos.z).abs();
    let horizontal = dx.hypot(dy);
    let distance = horizontal.hypot(dz);
    if distance == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    let elevation = if horizontal == 0.0 {
        90.0
    } else {
        dz.atan2(horizontal).to_degrees()
    };
    LinkGeometry::new(distance, elevation.clamp(0.0, 90.0))
}

/// `a1 / (1 + a4 exp(a3 (theta - a4))) + a2`, theta in degrees.
pub fn path_loss_exponent(geom: &LinkGeometry, plc: &PathLossConstants) -> f64 {
    let theta = geom.elevation_deg;
    plc.a1 / (1.0 + plc.a4 * (plc.a3 * (theta - plc.a4)).exp()) + plc.a2
}

/// Channel amplitude `sqrt(beta0) * d^(-alpha/2)`; identical in both directions.
pub fn channel_gain(geom: &LinkGeometry, params: &ChannelParams) -> f64 {
    let alpha = path_loss_exponent(geom, &params.plc);
    params.beta0.sqrt() * geom.distance_m.powf(-alpha / 2.0)
}

/// Shannon rate `W log2(1 + P h^2 / (W sigma^2))` in bits/s.
pub fn capacity(h: f64, bandwidth_hz: f64, tx_power_w: f64, noise_psd_w: f64) -> f64 {
    let snr = tx_power_w * h * h / (bandwidth_hz * noise_psd_w);
    bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
}

/// UAV to base station rate.
pub fn capacity_uplink(h: f64, params: &ChannelParams, uav: &UavState) -> f64 {
    capacity(
        h,
        params.bandwidth_hz,
        uav.hardware.tx_power_w,
        params.noise_psd_w,
    )
}

/// Base station to UAV rate.
pub fn capacity_downlink(h: f64, params: &ChannelParams) -> f64 {
    capacity(
        h,
        params.bandwidth_hz,
        params.bs_tx_power_w,
        params.noise_psd_w,
    )
}

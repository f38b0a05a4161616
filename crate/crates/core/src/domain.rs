//! Shared domain types.
//!
//! Everything here is a plain value type with a validating constructor. The
//! only state that changes during a simulation is a UAV's battery, its alive
//! flag and its (once) deduplicated dataset, and those are mutated by the
//! harness between rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec. 601 luma weights used when collapsing RGB to one channel.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// 8-bit single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invariant(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::invariant(format!(
                "image {width}x{height} needs {expected} pixels, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    /// Converts interleaved 8-bit RGB to luma.
    pub fn from_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if rgb.len() != expected {
            return Err(Error::invariant(format!(
                "RGB image {width}x{height} needs {expected} bytes, got {}",
                rgb.len()
            )));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|px| {
                let y = LUMA_WEIGHTS[0] * px[0] as f64
                    + LUMA_WEIGHTS[1] * px[1] as f64
                    + LUMA_WEIGHTS[2] * px[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    /// Area-averaging resize. Each output pixel is the coverage-weighted mean
    /// of the source pixels it overlaps, so downscaling by an integer factor
    /// is a plain block mean.
    pub fn resize_area(&self, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invariant("target dimensions must be positive"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width as usize * height as usize);
        for oy in 0..height {
            let y0 = oy as f64 * sy;
            let y1 = y0 + sy;
            for ox in 0..width {
                let x0 = ox as f64 * sx;
                let x1 = x0 + sx;
                let mut acc = 0.0;
                let mut area = 0.0;
                let mut iy = y0.floor() as u32;
                while (iy as f64) < y1 && iy < self.height {
                    let wy = (y1.min(iy as f64 + 1.0) - y0.max(iy as f64)).max(0.0);
                    let mut ix = x0.floor() as u32;
                    while (ix as f64) < x1 && ix < self.width {
                        let wx = (x1.min(ix as f64 + 1.0) - x0.max(ix as f64)).max(0.0);
                        let w = wx * wy;
                        acc += w * self.data[(iy * self.width + ix) as usize] as f64;
                        area += w;
                        ix += 1;
                    }
                    iy += 1;
                }
                out.push((acc / area).round().clamp(0.0, 255.0) as u8);
            }
        }
        Self::new(width, height, out)
    }
}

/// Binary class of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonFire = 0,
    Fire = 1,
}

impl Label {
    pub fn from_int(v: i64) -> Result<Self> {
        match v {
            0 => Ok(Label::NonFire),
            1 => Ok(Label::Fire),
            other => Err(Error::LabelOutOfRange(other)),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn target(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Arc<GrayImage>,
    pub label: Label,
    pub source_id: String,
}

impl LabeledSample {
    pub fn new(image: GrayImage, label: Label, source_id: impl Into<String>) -> Self {
        Self {
            image: Arc::new(image),
            label,
            source_id: source_id.into(),
        }
    }
}

/// Half-open slice bounds of part `index` (0-based) when `len` items are cut
/// into `parts` contiguous pieces whose sizes differ by at most one.
pub fn partition_range(len: usize, parts: usize, index: usize) -> Range<usize> {
    debug_assert!(parts > 0 && index < parts);
    let start = index * len / parts;
    let end = (index + 1) * len / parts;
    start..end
}

/// An ordered sample collection cut into `shard_count` per-round shards.
///
/// Round `k` (1-based) trains on shard `k`. When the collection holds fewer
/// samples than `shard_count` (typically after deduplication), the partition
/// has one sample per shard and round `k` wraps around it, so every round
/// still has data to train on.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    shard_count: usize,
    dedup_done: bool,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, shard_count: usize) -> Result<Self> {
        if shard_count == 0 {
            return Err(Error::invariant("shard_count must be positive"));
        }
        Ok(Self {
            samples,
            shard_count,
            dedup_done: false,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shard_count(&self) -> usize {
        self.shard_count
    }

    pub fn is_deduplicated(&self) -> bool {
        self.dedup_done
    }

    /// Number of distinct shards actually in use.
    pub fn effective_shards(&self) -> usize {
        self.shard_count.min(self.samples.len()).max(1)
    }

    /// Sample range of the shard trained in round `k` (1-based).
    pub fn shard_range(&self, round_k: usize) -> Range<usize> {
        if self.samples.is_empty() {
            return 0..0;
        }
        let parts = self.effective_shards();
        let index = round_k.saturating_sub(1) % parts;
        partition_range(self.samples.len(), parts, index)
    }

    pub fn shard(&self, round_k: usize) -> &[LabeledSample] {
        &self.samples[self.shard_range(round_k)]
    }

    pub fn shard_size(&self, round_k: usize) -> usize {
        self.shard_range(round_k).len()
    }

    pub(crate) fn replace_deduplicated(&mut self, kept: Vec<LabeledSample>) {
        self.samples = kept;
        self.dedup_done = true;
    }

    /// Splits samples into `(train, test)` by index; both keep their order.
    pub fn split_off_test(
        samples: Vec<LabeledSample>,
        test_indices: &BTreeSet<usize>,
    ) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
        let mut train = Vec::with_capacity(samples.len() - test_indices.len());
        let mut test = Vec::with_capacity(test_indices.len());
        for (i, s) in samples.into_iter().enumerate() {
            if test_indices.contains(&i) {
                test.push(s);
            } else {
                train.push(s);
            }
        }
        (train, test)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::invariant("position coordinates must be finite"));
        }
        if z < 0.0 {
            return Err(Error::invariant(format!("altitude must be >= 0, got {z}")));
        }
        Ok(Self { x, y, z })
    }
}

/// Per-UAV compute and radio constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UavHardware {
    /// CPU frequency in cycles/s.
    pub cpu_hz: f64,
    /// CPU cycles needed per training sample per epoch.
    pub cycles_per_sample: f64,
    /// Effective switched capacitance of the CPU chip.
    pub chip_coeff: f64,
    /// Uplink transmit power in watts.
    pub tx_power_w: f64,
}

impl Default for UavHardware {
    fn default() -> Self {
        Self {
            cpu_hz: 1e7,
            cycles_per_sample: 7e4,
            chip_coeff: 1e-22,
            tx_power_w: 0.28,
        }
    }
}

impl UavHardware {
    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_hz > 0.0 && self.cpu_hz.is_finite()) {
            return Err(Error::invariant("cpu_hz must be positive"));
        }
        if !(self.cycles_per_sample >= 0.0 && self.cycles_per_sample.is_finite()) {
            return Err(Error::invariant("cycles_per_sample must be >= 0"));
        }
        if !(self.chip_coeff >= 0.0 && self.chip_coeff.is_finite()) {
            return Err(Error::invariant("chip_coeff must be >= 0"));
        }
        if !(self.tx_power_w >= 0.0 && self.tx_power_w.is_finite()) {
            return Err(Error::invariant("tx_power_w must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct UavState {
    pub id: u32,
    pub subregion_id: u32,
    pub position: Position3D,
    pub battery_max_j: f64,
    pub hardware: UavHardware,
    battery_j: f64,
    alive: bool,
    dataset: Dataset,
}

impl UavState {
    pub fn new(
        id: u32,
        subregion_id: u32,
        position: Position3D,
        battery_j: f64,
        battery_max_j: f64,
        hardware: UavHardware,
        dataset: Dataset,
    ) -> Result<Self> {
        if subregion_id == 0 {
            return Err(Error::invariant("sub-region ids are 1-based"));
        }
        if !(battery_max_j > 0.0 && battery_max_j.is_finite()) {
            return Err(Error::invariant("battery_max_j must be positive"));
        }
        if !(0.0..=battery_max_j).contains(&battery_j) {
            return Err(Error::invariant(format!(
                "UAV {id}: battery {battery_j} J outside [0, {battery_max_j}]"
            )));
        }
        hardware.validate()?;
        Ok(Self {
            id,
            subregion_id,
            position,
            battery_max_j,
            hardware,
            battery_j,
            alive: true,
            dataset,
        })
    }

    pub fn battery_j(&self) -> f64 {
        self.battery_j
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub(crate) fn dataset_mut(&mut self) -> &mut Dataset {
        &mut self.dataset
    }

    pub(crate) fn set_battery(&mut self, battery_j: f64) {
        debug_assert!(battery_j >= 0.0);
        self.battery_j = battery_j;
    }

    pub(crate) fn mark_dead(&mut self) {
        self.alive = false;
    }
}

/// Environment constants of the elevation-dependent path-loss exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl Default for PathLossConstants {
    /// Representative suburban constants.
    fn default() -> Self {
        Self {
            a1: 10.39,
            a2: 2.09,
            a3: 0.05,
            a4: 7.37,
        }
    }
}

impl PathLossConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a1, self.a2, self.a3, self.a4];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("path-loss constants must be finite"));
        }
        if self.a1 <= 0.0 {
            return Err(Error::invariant("a1 must be positive"));
        }
        // The denominator is monotone in theta, so checking both ends of
        // [0, 90] degrees covers the whole range.
        for theta in [0.0, 90.0] {
            let denom = 1.0 + self.a4 * (self.a3 * (theta - self.a4)).exp();
            if !(denom > 0.0) {
                return Err(Error::invariant(format!(
                    "path-loss denominator non-positive at {theta} deg"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Reference power gain at 1 m.
    pub beta0: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd_w: f64,
    pub bandwidth_hz: f64,
    pub bs_tx_power_w: f64,
    pub plc: PathLossConstants,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            beta0: 1e-4,
            noise_psd_w: 4e-21,
            bandwidth_hz: 1e6,
            bs_tx_power_w: 1.0,
            plc: PathLossConstants::default(),
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta0", self.beta0),
            ("noise_psd_w", self.noise_psd_w),
            ("bandwidth_hz", self.bandwidth_hz),
            ("bs_tx_power_w", self.bs_tx_power_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invariant(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        self.plc.validate()
    }
}

/// One federated learning request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlTask {
    pub n_rounds_max: usize,
    pub cohort_size: usize,
    pub per_subregion_quota: usize,
    pub xi: f64,
    pub ssim_threshold: f64,
    pub epochs_per_round: usize,
    pub param_count: usize,
    pub param_size_bits: u32,
}

impl FlTask {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds_max == 0 {
            return Err(Error::invariant("n_rounds_max must be positive"));
        }
        if self.per_subregion_quota == 0 {
            return Err(Error::invariant("per_subregion_quota must be positive"));
        }
        if self.cohort_size == 0 || self.cohort_size % self.per_subregion_quota != 0 {
            return Err(Error::invariant(format!(
                "cohort_size {} is not a positive multiple of quota {}",
                self.cohort_size, self.per_subregion_quota
            )));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::invariant(format!(
                "xi must be in [0,1], got {}",
                self.xi
            )));
        }
        if !(self.ssim_threshold > 0.0 && self.ssim_threshold < 1.0) {
            return Err(Error::invariant(format!(
                "ssim_threshold must be in (0,1), got {}",
                self.ssim_threshold
            )));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::invariant("epochs_per_round must be positive"));
        }
        Ok(())
    }

    /// Number of sub-regions implied by `cohort_size = quota * subregions`.
    pub fn subregion_count(&self) -> usize {
        self.cohort_size / self.per_subregion_quota
    }

    /// Bits exchanged per model transfer.
    pub fn model_bits(&self) -> f64 {
        self.param_count as f64 * self.param_size_bits as f64
    }
}

/// Metrics of one global round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_k: usize,
    pub selected_ids: Vec<u32>,
    pub global_accuracy: f64,
    pub global_loss: f64,
    pub round_duration_s: f64,
    pub cohort_energy_j: f64,
    pub alive_uavs: usize,
    pub dropouts: usize,
}

/// Checks that a UAV population can serve a task: unique ids, sub-region
/// ids in `1..=subregion_count`, and every sub-region able to meet the quota.
pub fn validate_scenario(uavs: &[UavState], task: &FlTask, subregion_count: u32) -> Result<()> {
    task.validate()?;
    if subregion_count == 0 {
        return Err(Error::invariant("subregion_count must be positive"));
    }
    if task.subregion_count() != subregion_count as usize {
        return Err(Error::invariant(format!(
            "cohort_size {} != quota {} x {} sub-regions",
            task.cohort_size, task.per_subregion_quota, subregion_count
        )));
    }
    let mut ids = BTreeSet::new();
    let mut per_region: BTreeMap<u32, usize> = (1..=subregion_count).map(|s| (s, 0)).collect();
    for u in uavs {
        if !ids.insert(u.id) {
            return Err(Error::invariant(format!("duplicate UAV id {}", u.id)));
        }
        match per_region.get_mut(&u.subregion_id) {
            Some(n) => *n += 1,
            None => {
                return Err(Error::invariant(format!(
                    "UAV {} in sub-region {} outside 1..={subregion_count}",
                    u.id, u.subregion_id
                )))
            }
        }
        if !(0.0..=u.battery_max_j).contains(&u.battery_j) {
            return Err(Error::invariant(format!(
                "UAV {} battery out of range",
                u.id
            )));
        }
    }
    for (&subregion, &available) in &per_region {
        if available < task.per_subregion_quota {
            return Err(Error::EmptySubregion {
                subregion,
                available,
                required: task.per_subregion_quota,
            });
        }
    }
    Ok(())
}

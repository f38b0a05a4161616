//! Synthetic aerial "video" datasets with controllable frame redundancy.
//!
//! Every sub-region owns two periodic scenes (one per class) built from a
//! shared terrain field plus a class-specific field, each a sum of random
//! 2D cosines. A UAV films each scene with its own slowly drifting camera
//! that occasionally hovers. A frame is
//! `redundancy * view + (1 - redundancy) * white_noise`, quantized to 8 bits.
//!
//! With `motion_px = 0` the camera never moves, so at `redundancy = 1` all
//! same-class frames of a UAV are identical and at `redundancy = 0` frames
//! are independent noise.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, GrayImage, Label, LabeledSample};
use crate::error::{Error, Result};
use crate::seed;
use crate::similarity::{ssim_pair, SsimParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub image_side: u32,
    pub samples_min: usize,
    pub samples_max: usize,
    /// Weight of the scene against white noise, in `[0, 1]`.
    pub redundancy: f64,
    /// Probability that a frame is `Fire`.
    pub class_balance: f64,
    pub test_fraction: f64,
    /// Camera drift per frame while moving, in scene pixels.
    pub motion_px: f64,
    /// Per-frame probability of starting / ending a hover.
    pub hover_start: f64,
    pub hover_end: f64,
    /// Period of the scenes in pixels.
    pub world_side: u32,
    /// Cosine components per field.
    pub components: usize,
    /// Weight of the class-specific field against the shared terrain.
    pub class_weight: f64,
    /// Standard deviation of the per-frame illumination gain.
    pub illumination_jitter: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            image_side: 32,
            samples_min: 500,
            samples_max: 1000,
            redundancy: CALIBRATED_REDUNDANCY,
            class_balance: 0.5,
            test_fraction: 0.2,
            motion_px: 0.6,
            hover_start: 0.02,
            hover_end: 0.1,
            world_side: 128,
            components: 6,
            class_weight: 0.5,
            illumination_jitter: 0.1,
        }
    }
}

/// Redundancy at which consecutive same-class frames of the default
/// generator average an SSIM of 0.85 (see [`calibrate_redundancy`]).
pub const CALIBRATED_REDUNDANCY: f64 = 0.886;

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.image_side == 0 || self.world_side == 0 || self.components == 0 {
            return Err(Error::invariant("generator sizes must be positive"));
        }
        if self.samples_min < 2 || self.samples_min > self.samples_max {
            return Err(Error::invariant("need 2 <= samples_min <= samples_max"));
        }
        if ![
            self.redundancy,
            self.class_balance,
            self.test_fraction,
            self.hover_start,
            self.hover_end,
            self.class_weight,
        ]
        .into_iter()
        .all(unit)
        {
            return Err(Error::invariant("generator fractions must lie in [0, 1]"));
        }
        if !(self.motion_px >= 0.0 && self.illumination_jitter >= 0.0) {
            return Err(Error::invariant("motion and jitter must be >= 0"));
        }
        Ok(())
    }
}

/// Periodic scalar field on a `side x side` torus, values roughly in [0, 255].
struct Scene {
    side: usize,
    values: Vec<f64>,
}

impl Scene {
    fn cosines(rng: &mut ChaCha8Rng, side: usize, components: usize, max_freq: i32) -> Vec<f64> {
        let waves: Vec<(f64, f64, f64, f64)> = (0..components)
            .map(|_| {
                let kx = rng.gen_range(-max_freq..=max_freq) as f64;
                let ky = rng.gen_range(1..=max_freq) as f64;
                (kx, ky, rng.gen_range(0.0..TAU), rng.gen_range(0.5..1.0))
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.3).sum();
        let mut values = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let v: f64 = waves
                    .iter()
                    .map(|&(kx, ky, phase, amp)| {
                        amp * (TAU * (kx * x as f64 + ky * y as f64) / side as f64 + phase).cos()
                    })
                    .sum();
                values.push(v / norm);
            }
        }
        values
    }

    fn build(spec: &GenSpec, master: u64, subregion_id: u32, label: Label) -> Self {
        let side = spec.world_side as usize;
        let max_freq = (spec.world_side / spec.image_side).max(1) as i32 * 3;
        let mut terrain_rng = seed::rng(master, seed::purpose::DATAGEN, &[0, subregion_id as u64]);
        let terrain = Self::cosines(&mut terrain_rng, side, spec.components, max_freq);
        let mut class_rng = seed::rng(
            master,
            seed::purpose::DATAGEN,
            &[1, subregion_id as u64, label.as_u8() as u64],
        );
        let class_field = Self::cosines(&mut class_rng, side, spec.components, max_freq);
        let w = spec.class_weight;
        let values = terrain
            .iter()
            .zip(&class_field)
            .map(|(&t, &c)| 127.5 + 127.5 * ((1.0 - w) * t + w * c))
            .collect();
        Self { side, values }
    }

    /// `n x n` bilinear view with its top-left corner at `(x, y)`.
    fn view(&self, x: f64, y: f64, n: usize, out: &mut Vec<f64>) {
        let s = self.side as f64;
        let (x, y) = (x.rem_euclid(s), y.rem_euclid(s));
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let at = |r: usize, c: usize| self.values[(r % self.side) * self.side + c % self.side];
        out.clear();
        for i in 0..n {
            for j in 0..n {
                let (r, c) = (y0 + i, x0 + j);
                let top = at(r, c) * (1.0 - fx) + at(r, c + 1) * fx;
                let bottom = at(r + 1, c) * (1.0 - fx) + at(r + 1, c + 1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
}

/// A drifting camera that alternates between moving and hovering.
struct Camera {
    x: f64,
    y: f64,
    heading: f64,
    hovering: bool,
}

impl Camera {
    fn new(rng: &mut ChaCha8Rng, side: f64) -> Self {
        Self {
            x: rng.gen_range(0.0..side),
            y: rng.gen_range(0.0..side),
            heading: rng.gen_range(0.0..TAU),
            hovering: false,
        }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng, spec: &GenSpec) {
        let flip = rng.gen::<f64>();
        self.hovering = if self.hovering {
            flip >= spec.hover_end
        } else {
            flip < spec.hover_start
        };
        let turn: f64 = rng.gen_range(-0.3..0.3);
        self.heading += turn;
        if !self.hovering {
            self.x += spec.motion_px * self.heading.cos();
            self.y += spec.motion_px * self.heading.sin();
        }
    }
}

/// Samples of one UAV in capture order, with the held-out test indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedData {
    pub samples: Vec<LabeledSample>,
    pub test_indices: BTreeSet<usize>,
}

impl GeneratedData {
    /// `(train, test)` samples, both in capture order.
    pub fn split(self) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
        Dataset::split_off_test(self.samples, &self.test_indices)
    }
}

/// Generates one UAV's frames. Scenes depend only on `(master, subregion)`,
/// cameras, labels, noise and the split on `(master, uav)`.
pub fn generate_uav_dataset(
    spec: &GenSpec,
    subregion_id: u32,
    uav_id: u32,
    master_seed: u64,
) -> Result<GeneratedData> {
    spec.validate()?;
    let scenes = [
        Scene::build(spec, master_seed, subregion_id, Label::NonFire),
        Scene::build(spec, master_seed, subregion_id, Label::Fire),
    ];
    let side = spec.world_side as f64;
    let mut rng = seed::rng(master_seed, seed::purpose::DATAGEN, &[2, uav_id as u64]);
    let count = rng.gen_range(spec.samples_min..=spec.samples_max);
    let mut cameras = [Camera::new(&mut rng, side), Camera::new(&mut rng, side)];
    let n = spec.image_side as usize;
    let rho = spec.redundancy;
    let mut view = Vec::with_capacity(n * n);
    let mut samples = Vec::with_capacity(count);
    for t in 0..count {
        let label = if rng.gen::<f64>() < spec.class_balance {
            Label::Fire
        } else {
            Label::NonFire
        };
        let k = label.as_u8() as usize;
        cameras[k].advance(&mut rng, spec);
        scenes[k].view(cameras[k].x, cameras[k].y, n, &mut view);
        let gain = 1.0 + spec.illumination_jitter * (rng.gen::<f64>() * 2.0 - 1.0) * 3f64.sqrt();
        let px = view
            .iter()
            .map(|&v| {
                let noise = rng.gen::<f64>() * 255.0;
                (rho * v * gain + (1.0 - rho) * noise)
                    .round()
                    .clamp(0.0, 255.0) as u8
            })
            .collect();
        let img = GrayImage::new(spec.image_side, spec.image_side, px)?;
        samples.push(LabeledSample::new(img, label, format!("u{uav_id}-f{t}")));
    }
    let mut split_rng = seed::rng(master_seed, seed::purpose::SPLIT, &[uav_id as u64]);
    let n_test = (spec.test_fraction * count as f64).round() as usize;
    let test_indices = index::sample(&mut split_rng, count, n_test)
        .into_iter()
        .collect();
    Ok(GeneratedData {
        samples,
        test_indices,
    })
}

/// Mean SSIM between each frame and the next frame of the same class.
pub fn consecutive_same_class_ssim(samples: &[LabeledSample], p: &SsimParams) -> Result<f64> {
    let mut last: [Option<&LabeledSample>; 2] = [None, None];
    let (mut total, mut pairs) = (0.0, 0usize);
    for s in samples {
        let k = s.label.as_u8() as usize;
        if let Some(prev) = last[k] {
            total += ssim_pair(&prev.image, &s.image, p)?;
            pairs += 1;
        }
        last[k] = Some(s);
    }
    if pairs == 0 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    Ok(total / pairs as f64)
}

/// Bisects the redundancy at which consecutive same-class frames average
/// `target` SSIM, measured over UAVs `1..=uavs` spread across ten
/// sub-regions as the harness lays them out.
pub fn calibrate_redundancy(
    spec: &GenSpec,
    target: f64,
    uavs: u32,
    master_seed: u64,
) -> Result<f64> {
    let measure = |rho: f64| -> Result<f64> {
        let s = GenSpec {
            redundancy: rho,
            ..*spec
        };
        let mut acc = 0.0;
        for u in 1..=uavs {
            let data = generate_uav_dataset(&s, (u - 1) % 10 + 1, u, master_seed)?;
            acc += consecutive_same_class_ssim(&data.samples, &SsimParams::default())?;
        }
        Ok(acc / uavs as f64)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if measure(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::dataset_diversity;

    fn small(redundancy: f64, motion_px: f64) -> GenSpec {
        GenSpec {
            samples_min: 60,
            samples_max: 80,
            redundancy,
            motion_px,
            ..Default::default()
        }
    }

    fn class_only(d: &GeneratedData, label: Label) -> Vec<LabeledSample> {
        d.samples
            .iter()
            .filter(|s| s.label == label)
            .cloned()
            .collect()
    }

    #[test]
    fn full_redundancy_without_motion_repeats_frames() {
        let spec = GenSpec {
            illumination_jitter: 0.0,
            ..small(1.0, 0.0)
        };
        let d = generate_uav_dataset(&spec, 3, 7, 11).unwrap();
        for label in [Label::Fire, Label::NonFire] {
            let same = class_only(&d, label);
            let div = dataset_diversity(&same, &SsimParams::default(), 1000, 0).unwrap();
            assert_eq!(div.mean_pairwise_ssim, 1.0);
        }
    }

    #[test]
    fn zero_redundancy_is_noise() {
        let p = SsimParams::default();
        let mut total = 0.0;
        for seed in 0..30 {
            let d = generate_uav_dataset(&small(0.0, 0.6), 1, seed, seed as u64).unwrap();
            total += dataset_diversity(&d.samples, &p, 200, seed as u64)
                .unwrap()
                .mean_pairwise_ssim;
        }
        assert!((total / 30.0).abs() < 0.05);
    }

    #[test]
    fn similarity_grows_with_redundancy() {
        let p = SsimParams::default();
        for motion in [0.0, 0.6] {
            let mut prev = f64::NEG_INFINITY;
            for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let d = generate_uav_dataset(&small(rho, motion), 2, 5, 3).unwrap();
                let m = dataset_diversity(&class_only(&d, Label::Fire), &p, 500, 1)
                    .unwrap()
                    .mean_pairwise_ssim;
                assert!(m >= prev, "rho {rho}: {m} < {prev}");
                prev = m;
            }
        }
    }

    #[test]
    fn reproducible_and_split_is_a_partition() {
        let spec = small(0.8, 0.6);
        let a = generate_uav_dataset(&spec, 4, 9, 21).unwrap();
        assert_eq!(a, generate_uav_dataset(&spec, 4, 9, 21).unwrap());
        let n = a.samples.len();
        let expected = 0.2 * n as f64;
        assert!((a.test_indices.len() as f64 - expected).abs() <= 1.0);
        let (train, test) = a.clone().split();
        assert_eq!(train.len() + test.len(), n);
        let ids: BTreeSet<&str> = train
            .iter()
            .chain(&test)
            .map(|s| s.source_id.as_str())
            .collect();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn dataset_sizes_stay_in_range() {
        let spec = GenSpec::default();
        for u in 0..5 {
            let n = generate_uav_dataset(&spec, 1, u, 2).unwrap().samples.len();
            assert!((500..=1000).contains(&n));
        }
    }

    #[test]
    fn calibrated_default_hits_target_redundancy() {
        let spec = GenSpec::default();
        let mut acc = 0.0;
        for u in 1..=6 {
            let d = generate_uav_dataset(&spec, (u - 1) % 10 + 1, u, 5).unwrap();
            acc += consecutive_same_class_ssim(&d.samples, &SsimParams::default()).unwrap();
        }
        let mean = acc / 6.0;
        assert!((mean - 0.85).abs() < 0.02, "{mean}");
    }
}

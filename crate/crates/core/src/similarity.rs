//! Structural similarity between images, dataset diversity scores, and
//! threshold-based near-duplicate removal.
//!
//! SSIM here is the global-statistics form: one window covering the whole
//! image, with population (divisor `N`) variance and covariance. Values will
//! differ from tools that average SSIM over sliding Gaussian windows.
//!
//! Moments are accumulated in integers, so the result depends only on the
//! pixel values and is symmetric in its arguments bit for bit.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, GrayImage, LabeledSample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        let v = self.k1 * self.dynamic_range;
        v * v
    }

    pub fn c2(&self) -> f64 {
        let v = self.k2 * self.dynamic_range;
        v * v
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1() > 0.0 && self.c2() > 0.0 && self.c1().is_finite() && self.c2().is_finite()) {
            return Err(Error::invariant("SSIM stabilizers must be positive"));
        }
        Ok(())
    }
}

/// How a dataset's similarity score is aggregated from image pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    /// Mean over (sampled) unordered pairs.
    #[default]
    Pairwise,
    /// Mean over neighbouring samples in dataset order.
    Consecutive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub mean_pairwise_ssim: f64,
    pub pairs_evaluated: usize,
}

impl DiversityScore {
    /// `1 - mean SSIM`, the data-diversity term of the selection score.
    pub fn diversity(&self) -> f64 {
        1.0 - self.mean_pairwise_ssim
    }
}

/// First and second moments of one image, in exact integer arithmetic.
#[derive(Clone, Copy, Debug)]
struct Moments {
    n: u64,
    sum: u64,
    sum_sq: u64,
}

impl Moments {
    fn of(px: &[u8]) -> Self {
        let mut sum = 0u64;
        let mut sum_sq = 0u64;
        for chunk in px.chunks(4096) {
            let (s, q) = chunk.iter().fold((0u32, 0u32), |(s, q), &v| {
                let v = v as u32;
                (s + v, q + v * v)
            });
            sum += s as u64;
            sum_sq += q as u64;
        }
        Self {
            n: px.len() as u64,
            sum,
            sum_sq,
        }
    }
}

fn cross_sum(a: &[u8], b: &[u8]) -> u64 {
    let mut total = 0u64;
    for (ca, cb) in a.chunks(4096).zip(b.chunks(4096)) {
        let s: u32 = ca.iter().zip(cb).map(|(&x, &y)| x as u32 * y as u32).sum();
        total += s as u64;
    }
    total
}

fn ssim_from_moments(ma: &Moments, mb: &Moments, cross: u64, p: &SsimParams) -> f64 {
    let n = ma.n as i128;
    let n2 = (n * n) as f64;
    let mean_a = ma.sum as f64 / ma.n as f64;
    let mean_b = mb.sum as f64 / mb.n as f64;
    let var_a = (n * ma.sum_sq as i128 - (ma.sum as i128) * (ma.sum as i128)) as f64 / n2;
    let var_b = (n * mb.sum_sq as i128 - (mb.sum as i128) * (mb.sum as i128)) as f64 / n2;
    let cov = (n * cross as i128 - (ma.sum as i128) * (mb.sum as i128)) as f64 / n2;
    let (c1, c2) = (p.c1(), p.c2());
    let num = (2.0 * mean_a * mean_b + c1) * (2.0 * cov + c2);
    let den = (mean_a * mean_a + mean_b * mean_b + c1) * (var_a + var_b + c2);
    num / den
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

/// Global-statistics SSIM of two equally sized images.
pub fn ssim_pair(a: &GrayImage, b: &GrayImage, p: &SsimParams) -> Result<f64> {
    check_dims(a, b)?;
    let ma = Moments::of(a.pixels());
    let mb = Moments::of(b.pixels());
    Ok(ssim_from_moments(
        &ma,
        &mb,
        cross_sum(a.pixels(), b.pixels()),
        p,
    ))
}

/// Pairwise SSIM over a fixed image list with per-image moments cached.
struct PairScorer<'a> {
    images: Vec<&'a GrayImage>,
    moments: Vec<Moments>,
    params: SsimParams,
}

impl<'a> PairScorer<'a> {
    fn new(samples: &'a [LabeledSample], params: &SsimParams) -> Result<Self> {
        let images: Vec<&GrayImage> = samples.iter().map(|s| s.image.as_ref()).collect();
        if let Some(first) = images.first() {
            for img in &images[1..] {
                check_dims(first, img)?;
            }
        }
        let moments = images.iter().map(|i| Moments::of(i.pixels())).collect();
        Ok(Self {
            images,
            moments,
            params: *params,
        })
    }

    fn ssim(&self, i: usize, j: usize) -> f64 {
        let cross = cross_sum(self.images[i].pixels(), self.images[j].pixels());
        ssim_from_moments(&self.moments[i], &self.moments[j], cross, &self.params)
    }
}

/// Maps a row-major index over the strict upper triangle of an `n x n`
/// matrix to its `(i, j)` pair, walking forward from a previous position.
fn pairs_from_sorted_indices(n: usize, sorted: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(sorted.len());
    let mut row = 0usize;
    let mut row_start = 0usize;
    for &t in sorted {
        while t >= row_start + (n - 1 - row) {
            row_start += n - 1 - row;
            row += 1;
        }
        out.push((row, row + 1 + (t - row_start)));
    }
    out
}

/// Mean SSIM over at most `max_pairs` distinct unordered pairs, sampled
/// without replacement with `rng_seed`. When every pair fits in the budget
/// all pairs are used and the seed is irrelevant.
///
/// Pair values may be computed in parallel; they are summed in ascending
/// pair order so the result is independent of scheduling.
pub fn dataset_diversity(
    samples: &[LabeledSample],
    p: &SsimParams,
    max_pairs: usize,
    rng_seed: u64,
) -> Result<DiversityScore> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if max_pairs == 0 {
        return Err(Error::invariant("max_pairs must be >= 1"));
    }
    let scorer = PairScorer::new(samples, p)?;
    let total = n * (n - 1) / 2;
    let pairs = if total <= max_pairs {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect::<Vec<_>>()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut picked = index::sample(&mut rng, total, max_pairs).into_vec();
        picked.sort_unstable();
        pairs_from_sorted_indices(n, &picked)
    };
    let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| scorer.ssim(i, j)).collect();
    Ok(DiversityScore {
        mean_pairwise_ssim: values.iter().sum::<f64>() / values.len() as f64,
        pairs_evaluated: values.len(),
    })
}

/// Mean SSIM of each sample with its successor in dataset order.
pub fn consecutive_diversity(samples: &[LabeledSample], p: &SsimParams) -> Result<DiversityScore> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let scorer = PairScorer::new(samples, p)?;
    let values: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .map(|i| scorer.ssim(i, i + 1))
        .collect();
    Ok(DiversityScore {
        mean_pairwise_ssim: values.iter().sum::<f64>() / values.len() as f64,
        pairs_evaluated: values.len(),
    })
}

fn check_threshold(ssim_th: f64) -> Result<()> {
    if !(ssim_th > 0.0 && ssim_th < 1.0) {
        return Err(Error::invariant(format!(
            "SSIM threshold must be in (0,1), got {ssim_th}"
        )));
    }
    Ok(())
}

/// Indices kept by a keep-first scan: a sample survives iff its SSIM with
/// every previously kept sample is at most `ssim_th`.
pub fn greedy_keep_indices(
    samples: &[LabeledSample],
    ssim_th: f64,
    p: &SsimParams,
) -> Result<Vec<usize>> {
    check_threshold(ssim_th)?;
    let scorer = PairScorer::new(samples, p)?;
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..samples.len() {
        if kept.iter().all(|&j| scorer.ssim(j, i) <= ssim_th) {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Removes near-duplicates in place (keep-first, order preserved) and marks
/// the dataset as deduplicated. Returns the number of samples removed.
pub fn deduplicate(d: &mut Dataset, ssim_th: f64, p: &SsimParams) -> Result<usize> {
    if d.is_deduplicated() {
        return Err(Error::AlreadyDeduplicated);
    }
    let keep = greedy_keep_indices(d.samples(), ssim_th, p)?;
    let removed = d.len() - keep.len();
    let kept = keep.into_iter().map(|i| d.samples()[i].clone()).collect();
    d.replace_deduplicated(kept);
    Ok(removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Label;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn img(px: Vec<u8>) -> GrayImage {
        GrayImage::new(4, (px.len() / 4) as u32, px).unwrap()
    }

    fn sample(px: Vec<u8>) -> LabeledSample {
        LabeledSample::new(img(px), Label::NonFire, "t")
    }

    /// Textbook two-pass evaluation in floating point, independent of the
    /// integer-moment path.
    fn reference_ssim(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let va = a.iter().map(|&v| (v as f64 - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|&v| (v as f64 - mb).powi(2)).sum::<f64>() / n;
        let cov = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb))
            .sum::<f64>()
            / n;
        let (c1, c2) = (6.5025, 58.5225);
        (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    }

    #[test]
    fn black_versus_white() {
        let p = SsimParams::default();
        let s = ssim_pair(&img(vec![0; 16]), &img(vec![255; 16]), &p).unwrap();
        assert_relative_eq!(s, 6.5025 / 65031.5025, max_relative = 1e-12);
        assert!((s - 9.9990e-5).abs() < 1e-8);
    }

    #[test]
    fn identical_images_score_one() {
        let a = img((0..16).map(|v| (v * 13) as u8).collect());
        assert_eq!(
            ssim_pair(&a, &a.clone(), &SsimParams::default()).unwrap(),
            1.0
        );
    }

    #[test]
    fn dimension_mismatch() {
        let a = GrayImage::filled(4, 4, 1).unwrap();
        let b = GrayImage::filled(2, 8, 1).unwrap();
        assert!(matches!(
            ssim_pair(&a, &b, &SsimParams::default()),
            Err(Error::DimensionMismatch(4, 4, 2, 8))
        ));
    }

    #[test]
    fn diversity_examples() {
        let p = SsimParams::default();
        let same: Vec<_> = (0..5).map(|_| sample((0..16).collect())).collect();
        let d = dataset_diversity(&same, &p, 1000, 1).unwrap();
        assert_eq!(d.mean_pairwise_ssim, 1.0);
        assert_eq!(d.pairs_evaluated, 10);

        let bw = vec![sample(vec![0; 16]), sample(vec![255; 16])];
        let d = dataset_diversity(&bw, &p, 1000, 1).unwrap();
        assert!((d.mean_pairwise_ssim - 9.9990e-5).abs() < 1e-8);
        assert_eq!(d.pairs_evaluated, 1);

        assert!(matches!(
            dataset_diversity(&bw[..1], &p, 10, 1),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn sampling_with_full_budget_matches_exhaustive() {
        let p = SsimParams::default();
        let set: Vec<_> = (0..7u8)
            .map(|k| sample((0..16u8).map(|v| v.wrapping_mul(k + 3) ^ k).collect()))
            .collect();
        let exact = dataset_diversity(&set, &p, 21, 9).unwrap();
        let roomy = dataset_diversity(&set, &p, 1000, 4).unwrap();
        assert_eq!(exact, roomy);
        let sampled = dataset_diversity(&set, &p, 5, 4).unwrap();
        assert_eq!(sampled.pairs_evaluated, 5);
        assert_eq!(sampled, dataset_diversity(&set, &p, 5, 4).unwrap());
    }

    #[test]
    fn pair_index_mapping_covers_triangle() {
        let n = 6;
        let all: Vec<usize> = (0..n * (n - 1) / 2).collect();
        let pairs = pairs_from_sorted_indices(n, &all);
        let expected: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        assert_eq!(pairs, expected);
    }

    #[test]
    fn dedup_examples() {
        let p = SsimParams::default();
        let mut d = Dataset::new((0..3).map(|_| sample((0..16).collect())).collect(), 10).unwrap();
        assert_eq!(deduplicate(&mut d, 0.5, &p).unwrap(), 2);
        assert_eq!(d.len(), 1);
        assert!(d.is_deduplicated());
        assert!(matches!(
            deduplicate(&mut d, 0.5, &p),
            Err(Error::AlreadyDeduplicated)
        ));

        let mut bw = Dataset::new(vec![sample(vec![0; 16]), sample(vec![255; 16])], 10).unwrap();
        assert_eq!(deduplicate(&mut bw, 0.5, &p).unwrap(), 0);

        let mut d = Dataset::new(vec![sample(vec![1; 16])], 10).unwrap();
        assert!(matches!(
            deduplicate(&mut d, 1.0, &p),
            Err(Error::InvariantViolation(_))
        ));
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..8).prop_flat_map(|rows| {
            (
                proptest::collection::vec(any::<u8>(), rows * 4),
                proptest::collection::vec(any::<u8>(), rows * 4),
            )
        })
    }

    fn arb_set() -> impl Strategy<Value = Vec<Vec<u8>>> {
        // Small palettes make near-duplicates common.
        proptest::collection::vec(proptest::collection::vec(0u8..4, 8), 2..14).prop_map(|v| {
            v.into_iter()
                .map(|px| px.into_iter().map(|x| x * 60).collect())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_matches_reference((a, b) in arb_pair()) {
            let p = SsimParams::default();
            let ab = ssim_pair(&img(a.clone()), &img(b.clone()), &p).unwrap();
            let ba = ssim_pair(&img(b.clone()), &img(a.clone()), &p).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.abs() <= 1.0);
            let r = reference_ssim(&a, &b);
            prop_assert!((ab - r).abs() <= 1e-9 * r.abs().max(1e-3));
        }

        #[test]
        fn dedup_is_sound_and_idempotent(set in arb_set(), th in 0.05f64..0.95) {
            let p = SsimParams::default();
            let samples: Vec<_> = set.into_iter().map(|px| LabeledSample::new(
                GrayImage::new(4, 2, px).unwrap(), Label::Fire, "t")).collect();
            let mut d = Dataset::new(samples, 4).unwrap();
            deduplicate(&mut d, th, &p).unwrap();
            let kept = d.samples();
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    prop_assert!(ssim_pair(&kept[i].image, &kept[j].image, &p).unwrap() <= th);
                }
            }
            prop_assert_eq!(greedy_keep_indices(kept, th, &p).unwrap().len(), kept.len());
        }

        #[test]
        fn lower_threshold_removes_at_least_as_much(set in arb_set()) {
            let p = SsimParams::default();
            let samples: Vec<_> = set.into_iter().map(|px| LabeledSample::new(
                GrayImage::new(4, 2, px).unwrap(), Label::Fire, "t")).collect();
            let strict = greedy_keep_indices(&samples, 0.1, &p).unwrap().len();
            let loose = greedy_keep_indices(&samples, 0.5, &p).unwrap().len();
            prop_assert!(strict <= loose);
        }
    }
}

//! Saliency evaluation measures. All statistics use the population
//! (divide-by-N) standard deviation and natural logarithms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Smoothing added to both distributions inside the KL log ratio.
pub const KL_EPS: f64 = 1e-12;
/// Default number of negative-sampling splits for [`auc_borji`].
pub const AUC_SPLITS: usize = 100;
/// Population standard deviation below which a map counts as constant.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Raw,
    /// Sums to one.
    Probability,
    /// Zero mean, unit population standard deviation.
    ZScored,
}

/// Row-major map of `height` rows by `width` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    variant: Variant,
}

impl SaliencyMap {
    /// A raw map; values must be finite and non-negative.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::shape("saliency map", &[values.len()], &[height, width]));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numeric(format!("saliency value {v} is not a finite non-negative number")));
        }
        Ok(Self { width, height, values, variant: Variant::Raw })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    fn derived(&self, values: Vec<f64>, variant: Variant) -> Self {
        Self { width: self.width, height: self.height, values, variant }
    }
}

/// An integer pixel location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixation {
    pub x: usize,
    pub y: usize,
}

impl Fixation {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `v / sum(v)`.
pub fn normalize_probability(map: &SaliencyMap) -> Result<SaliencyMap> {
    let total: f64 = map.values.iter().sum();
    if !(total > 0.0) || map.values.iter().any(|&v| v < 0.0) {
        return Err(Error::DegenerateMap("probability normalization needs a non-negative map with positive mass"));
    }
    Ok(map.derived(map.values.iter().map(|v| v / total).collect(), Variant::Probability))
}

/// `(v - mean) / std` with the population standard deviation.
pub fn normalize_zscore(map: &SaliencyMap) -> Result<SaliencyMap> {
    let (mean, std) = mean_std(&map.values);
    if !(std > MIN_STD) {
        return Err(Error::DegenerateMap("z-scoring needs a non-constant map"));
    }
    Ok(map.derived(map.values.iter().map(|v| (v - mean) / std).collect(), Variant::ZScored))
}

fn check_fixations(map: &SaliencyMap, fix: &[Fixation]) -> Result<()> {
    if fix.is_empty() {
        return Err(Error::contract("metric needs at least one fixation"));
    }
    for f in fix {
        if f.x >= map.width || f.y >= map.height {
            return Err(Error::OutOfBounds { x: f.x as i64, y: f.y as i64, width: map.width, height: map.height });
        }
    }
    Ok(())
}

fn check_congruent(a: &SaliencyMap, b: &SaliencyMap) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape("map pair", &[a.height, a.width], &[b.height, b.width]));
    }
    Ok(())
}

/// Normalized scanpath saliency: mean z-scored prediction at the fixations.
pub fn nss(pred: &SaliencyMap, fix: &[Fixation]) -> Result<f64> {
    check_fixations(pred, fix)?;
    let z = normalize_zscore(pred)?;
    Ok(fix.iter().map(|f| z.at(f.x, f.y)).sum::<f64>() / fix.len() as f64)
}

/// Pearson correlation coefficient over pixels.
pub fn cc(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check_congruent(pred, gt)?;
    let (mp, sp) = mean_std(&pred.values);
    let (mg, sg) = mean_std(&gt.values);
    if !(sp > MIN_STD && sg > MIN_STD) {
        return Err(Error::DegenerateMap("correlation needs two non-constant maps"));
    }
    let n = pred.values.len() as f64;
    let cov = pred.values.iter().zip(&gt.values).map(|(p, g)| (p - mp) * (g - mg)).sum::<f64>() / n;
    Ok(cov / (sp * sg))
}

/// Which distribution leads the KL divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlOrder {
    /// `sum pred * ln(pred / gt)`.
    #[default]
    PredFirst,
    /// `sum gt * ln(gt / pred)`.
    GtFirst,
}

/// KL divergence with the prediction leading.
pub fn kl(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    kl_ordered(pred, gt, KlOrder::PredFirst)
}

pub fn kl_ordered(pred: &SaliencyMap, gt: &SaliencyMap, order: KlOrder) -> Result<f64> {
    check_congruent(pred, gt)?;
    let (p, q) = (normalize_probability(pred)?, normalize_probability(gt)?);
    let (lead, other) = match order {
        KlOrder::PredFirst => (&p, &q),
        KlOrder::GtFirst => (&q, &p),
    };
    Ok(lead
        .values
        .iter()
        .zip(&other.values)
        .map(|(a, b)| a * ((a + KL_EPS) / (b + KL_EPS)).ln())
        .sum())
}

/// Similarity: histogram intersection of the two probability maps.
pub fn sm(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check_congruent(pred, gt)?;
    let (p, q) = (normalize_probability(pred)?, normalize_probability(gt)?);
    Ok(p.values.iter().zip(&q.values).map(|(a, b)| a.min(*b)).sum())
}

/// Pixel indices never fixated, in raster order.
pub fn non_fixated_pixels(map: &SaliencyMap, fix: &[Fixation]) -> Vec<usize> {
    let mut fixated = vec![false; map.values.len()];
    for f in fix {
        fixated[f.y * map.width + f.x] = true;
    }
    (0..fixated.len()).filter(|&i| !fixated[i]).collect()
}

/// Draws `count` pixel indices uniformly with replacement from `pool`.
/// Shared with the independent oracle so both see the same negatives.
pub fn sample_negatives(pool: &[usize], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// ROC area with fixated values as positives and, per split, as many
/// uniformly sampled non-fixated values as negatives. Thresholds sweep the
/// distinct positive values; the curve runs from `(0, 0)` to `(1, 1)` and is
/// integrated with the trapezoid rule. Returns the mean over `n_splits`.
pub fn auc_borji(pred: &SaliencyMap, fix: &[Fixation], n_splits: usize, seed: u64) -> Result<f64> {
    check_fixations(pred, fix)?;
    if fix.len() > pred.values.len() {
        return Err(Error::Contract(format!(
            "{} fixations exceed the {} pixels of the map",
            fix.len(),
            pred.values.len()
        )));
    }
    if n_splits == 0 {
        return Err(Error::contract("auc needs at least one split"));
    }
    let (_, std) = mean_std(&pred.values);
    if !(std > MIN_STD) {
        return Err(Error::DegenerateMap("auc needs a non-constant map"));
    }
    let pool = non_fixated_pixels(pred, fix);
    if pool.is_empty() {
        return Err(Error::contract("every pixel is fixated; no negatives to sample"));
    }
    let mut positives: Vec<f64> = fix.iter().map(|f| pred.at(f.x, f.y)).collect();
    positives.sort_by(|a, b| b.total_cmp(a));
    let mut thresholds = positives.clone();
    thresholds.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_splits {
        let mut negatives: Vec<f64> =
            sample_negatives(&pool, fix.len(), &mut rng).into_iter().map(|i| pred.values[i]).collect();
        negatives.sort_by(|a, b| b.total_cmp(a));
        total += sweep_area(&positives, &negatives, &thresholds);
    }
    Ok(total / n_splits as f64)
}

/// Both value lists sorted in descending order.
fn sweep_area(positives: &[f64], negatives: &[f64], thresholds: &[f64]) -> f64 {
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let (mut ip, mut ineg) = (0, 0);
    let (mut prev_tp, mut prev_fp) = (0.0, 0.0);
    let mut area = 0.0;
    for &t in thresholds {
        while ip < positives.len() && positives[ip] >= t {
            ip += 1;
        }
        while ineg < negatives.len() && negatives[ineg] >= t {
            ineg += 1;
        }
        let (tp, fp) = (ip as f64 / np, ineg as f64 / nn);
        area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
        (prev_tp, prev_fp) = (tp, fp);
    }
    area + (1.0 - prev_fp) * (1.0 + prev_tp) / 2.0
}

/// All five measures for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub auc: f64,
    pub nss: f64,
    pub cc: f64,
    pub kl: f64,
    pub sm: f64,
}

impl Scores {
    pub fn compute(pred: &SaliencyMap, gt: &SaliencyMap, fix: &[Fixation], seed: u64) -> Result<Self> {
        Ok(Self {
            auc: auc_borji(pred, fix, AUC_SPLITS, seed)?,
            nss: nss(pred, fix)?,
            cc: cc(pred, gt)?,
            kl: kl(pred, gt)?,
            sm: sm(pred, gt)?,
        })
    }

    /// Field-wise mean; `None` for an empty slice.
    pub fn mean(rows: &[Scores]) -> Option<Scores> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&Scores) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(Scores {
            auc: avg(|s| s.auc),
            nss: avg(|s| s.nss),
            cc: avg(|s| s.cc),
            kl: avg(|s| s.kl),
            sm: avg(|s| s.sm),
        })
    }
}

//! Scoring of detection results against ground truth, and a paired t-test.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::annotation::{Category, LandmarkAnnotation, NoiseProfile, Side};
use crate::detect::{categorize, DetectionResult};
use crate::error::{Error, Result};
use crate::volume::GridGeometry;

/// One evaluated volume: the detector output and what it is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreItem {
    /// Volume id the result was produced for; must equal the annotation's.
    pub result_id: String,
    pub result: DetectionResult,
    pub annotation: LandmarkAnnotation,
    pub geometry: GridGeometry,
    pub has_distractor: bool,
    pub noise_profile: NoiseProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRow {
    pub volume_id: String,
    pub truth: Category,
    pub predicted: Category,
    pub has_distractor: bool,
    pub noise_profile: NoiseProfile,
    /// Localization errors in mm, only for present sides of correctly
    /// categorized volumes.
    pub left_error_mm: Option<f64>,
    pub right_error_mm: Option<f64>,
    /// Sides reported present that the ground truth lacks.
    pub false_present: u32,
    pub rejected_by_shape: u32,
}

impl VolumeRow {
    pub fn correct(&self) -> bool {
        self.truth == self.predicted
    }

    pub fn error_mm(&self, side: Side) -> Option<f64> {
        match side {
            Side::Left => self.left_error_mm,
            Side::Right => self.right_error_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stratum {
    pub has_distractor: bool,
    pub noise_profile: NoiseProfile,
    pub total: u64,
    pub errors: u64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `confusion[predicted][truth]` in B, L, R, N order.
    pub confusion: [[u64; 4]; 4],
    pub total: u64,
    pub correct: u64,
    pub error_rate: f64,
    /// Every (has_distractor, noise_profile) combination, including empty ones.
    pub strata: Vec<Stratum>,
    pub localization_mm: Vec<f64>,
    pub localization_mean_mm: f64,
    /// Sample standard deviation; zero with fewer than two errors.
    pub localization_std_mm: f64,
    pub false_present: u64,
    pub rows: Vec<VolumeRow>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_rate
    }
}

fn distance_mm(geom: &GridGeometry, a: crate::volume::VoxelIndex, b: crate::volume::VoxelIndex) -> f64 {
    let pa = geom.voxel_to_mm(a);
    let pb = geom.voxel_to_mm(b);
    libm::sqrt(pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
}

fn row(item: &ScoreItem) -> VolumeRow {
    let truth = item.annotation.category();
    let predicted = categorize(&item.result);
    let mut errs = [None, None];
    let mut false_present = 0;
    let mut rejected = 0;
    for (n, side) in Side::BOTH.into_iter().enumerate() {
        let det = item.result.side(side);
        let gt = item.annotation.landmark(side);
        if det.present && gt.is_none() {
            false_present += 1;
        }
        if det.rejected_by_shape {
            rejected += 1;
        }
        if truth == predicted {
            if let (true, Some(gt)) = (det.present, gt) {
                errs[n] = Some(distance_mm(&item.geometry, det.peak_voxel, gt));
            }
        }
    }
    VolumeRow {
        volume_id: item.annotation.volume_id.clone(),
        truth,
        predicted,
        has_distractor: item.has_distractor,
        noise_profile: item.noise_profile,
        left_error_mm: errs[0],
        right_error_mm: errs[1],
        false_present,
        rejected_by_shape: rejected,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

pub fn score(items: &[ScoreItem]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::invalid("nothing to score"));
    }
    let mut rows = Vec::with_capacity(items.len());
    for item in items {
        if item.result_id != item.annotation.volume_id {
            return Err(Error::invalid(format!(
                "result for '{}' paired with annotation '{}'",
                item.result_id, item.annotation.volume_id
            )));
        }
        rows.push(row(item));
    }
    Ok(report_from_rows(rows))
}

/// Aggregates already-scored rows, e.g. a filtered subset of a report.
pub fn report_from_rows(rows: Vec<VolumeRow>) -> EvalReport {
    let mut confusion = [[0u64; 4]; 4];
    for r in &rows {
        confusion[r.predicted.index()][r.truth.index()] += 1;
    }
    let total = rows.len() as u64;
    let correct: u64 = (0..4).map(|i| confusion[i][i]).sum();
    let rate = |errors: u64, total: u64| if total == 0 { 0.0 } else { errors as f64 / total as f64 };
    let mut strata = Vec::new();
    for has_distractor in [false, true] {
        for noise_profile in NoiseProfile::ALL {
            let sel = rows.iter().filter(|r| r.has_distractor == has_distractor && r.noise_profile == noise_profile);
            let (t, e) = sel.fold((0u64, 0u64), |(t, e), r| (t + 1, e + u64::from(!r.correct())));
            strata.push(Stratum { has_distractor, noise_profile, total: t, errors: e, error_rate: rate(e, t) });
        }
    }
    let localization_mm: Vec<f64> = rows.iter().flat_map(|r| [r.left_error_mm, r.right_error_mm]).flatten().collect();
    let (localization_mean_mm, localization_std_mm) = mean_std(&localization_mm);
    EvalReport {
        confusion,
        total,
        correct,
        error_rate: rate(total - correct, total),
        strata,
        localization_mm,
        localization_mean_mm,
        localization_std_mm,
        false_present: rows.iter().map(|r| r.false_present as u64).sum(),
        rows,
    }
}

/// Localization errors of `(volume, side)` entries scored in both reports,
/// in the order they appear in `a`.
pub fn paired_errors(a: &EvalReport, b: &EvalReport) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ra in &a.rows {
        let Some(rb) = b.rows.iter().find(|r| r.volume_id == ra.volume_id) else { continue };
        for side in Side::BOTH {
            if let (Some(x), Some(y)) = (ra.error_mm(side), rb.error_mm(side)) {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    (xs, ys)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("sample lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::DegenerateTest(format!("need at least 2 pairs, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let (mean, sd) = mean_std(&d);
    if !(sd > 0.0) {
        return Err(Error::DegenerateTest("differences have zero variance".into()));
    }
    let n = d.len() as f64;
    let t = mean / (sd / libm::sqrt(n));
    let df = d.len() - 1;
    let p = student_t_two_sided(t, df as f64);
    Ok(TTest { t, df, p_two_sided: p })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `I_x(a, b)` by the continued fraction (modified Lentz), using the
/// symmetry `I_x(a,b) = 1 - I_{1-x}(b,a)` where it converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

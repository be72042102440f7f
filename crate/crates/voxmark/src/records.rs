//! JSON documents: annotations, dataset manifests, shape models, detection
//! reports and evaluation reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxmark_core::detect::{DetectionResult, DetectorConfig, SideDetection};
use voxmark_core::eval::{EvalReport, TTest, VolumeRow};
use voxmark_core::shape::{ShapeModel, ShapeSpace};
use voxmark_core::{Category, LandmarkAnnotation, NoiseProfile, VoxelIndex};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub volume_id: String,
    pub left_present: bool,
    pub right_present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_voxel: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_voxel: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distractor_voxels: Vec<[usize; 3]>,
    pub category: String,
}

impl From<&LandmarkAnnotation> for AnnotationRecord {
    fn from(a: &LandmarkAnnotation) -> Self {
        Self {
            volume_id: a.volume_id.clone(),
            left_present: a.left.is_some(),
            right_present: a.right.is_some(),
            left_voxel: a.left.map(VoxelIndex::as_array),
            right_voxel: a.right.map(VoxelIndex::as_array),
            distractor_voxels: a.distractors.iter().map(|v| v.as_array()).collect(),
            category: a.category().as_str().to_string(),
        }
    }
}

impl AnnotationRecord {
    /// Checks presence flags, coordinates and category agree.
    pub fn to_annotation(&self) -> std::result::Result<LandmarkAnnotation, String> {
        let side = |present: bool, voxel: Option<[usize; 3]>, name: &str| match (present, voxel) {
            (true, Some(v)) => Ok(Some(VoxelIndex::from(v))),
            (false, None) => Ok(None),
            (true, None) => Err(format!("{name} is present but has no voxel")),
            (false, Some(_)) => Err(format!("{name} is absent but has a voxel")),
        };
        let ann = LandmarkAnnotation {
            volume_id: self.volume_id.clone(),
            left: side(self.left_present, self.left_voxel, "left")?,
            right: side(self.right_present, self.right_voxel, "right")?,
            distractors: self.distractor_voxels.iter().map(|&v| VoxelIndex::from(v)).collect(),
        };
        match Category::parse(&self.category) {
            Some(c) if c == ann.category() => Ok(ann),
            Some(c) => Err(format!("category {c} contradicts presence flags ({})", ann.category())),
            None => Err(format!("unknown category '{}'", self.category)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub volume_path: String,
    pub annotation: AnnotationRecord,
    #[serde(default)]
    pub noise_profile: Option<String>,
}

/// A loaded manifest with paths resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<ManifestEntry> = read_json(path)?;
        for e in &entries {
            e.annotation
                .to_annotation()
                .map_err(|m| Error::format(path, format!("{}: {m}", e.annotation.volume_id)))?;
            if let Some(p) = &e.noise_profile {
                NoiseProfile::parse(p).ok_or_else(|| Error::format(path, format!("unknown noise profile '{p}'")))?;
            }
        }
        Ok(Self { path: path.to_path_buf(), entries })
    }

    pub fn volume_path(&self, e: &ManifestEntry) -> PathBuf {
        let p = Path::new(&e.volume_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn annotation(&self, e: &ManifestEntry) -> LandmarkAnnotation {
        e.annotation.to_annotation().expect("validated on load")
    }

    pub fn noise_profile(&self, e: &ManifestEntry) -> NoiseProfile {
        e.noise_profile.as_deref().and_then(NoiseProfile::parse).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeModelRecord {
    pub mean: [f64; 6],
    pub eigvecs: Vec<[f64; 6]>,
    pub eigvals: Vec<f64>,
    pub m_max: f64,
    pub n_train: usize,
    pub covariance_convention: String,
    pub coordinate_space: String,
}

pub const COVARIANCE_CONVENTION: &str = "population (1/N)";

impl From<&ShapeModel> for ShapeModelRecord {
    fn from(m: &ShapeModel) -> Self {
        Self {
            mean: m.mean,
            eigvecs: m.eigvecs.clone(),
            eigvals: m.eigvals.clone(),
            m_max: m.m_max,
            n_train: m.n_train,
            covariance_convention: COVARIANCE_CONVENTION.to_string(),
            coordinate_space: m.space.as_str().to_string(),
        }
    }
}

impl ShapeModelRecord {
    pub fn to_model(&self, path: &Path) -> Result<ShapeModel> {
        let space = ShapeSpace::parse(&self.coordinate_space)
            .ok_or_else(|| Error::format(path, format!("unknown coordinate space '{}'", self.coordinate_space)))?;
        let m = ShapeModel {
            mean: self.mean,
            eigvecs: self.eigvecs.clone(),
            eigvals: self.eigvals.clone(),
            m_max: self.m_max,
            n_train: self.n_train,
            space,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideRecord {
    pub present: bool,
    pub peak_voxel: [usize; 3],
    pub peak_value: f64,
    pub rejected_by_shape: bool,
}

impl From<&SideDetection> for SideRecord {
    fn from(s: &SideDetection) -> Self {
        Self {
            present: s.present,
            peak_voxel: s.peak_voxel.as_array(),
            peak_value: s.peak_value,
            rejected_by_shape: s.rejected_by_shape,
        }
    }
}

impl From<&SideRecord> for SideDetection {
    fn from(s: &SideRecord) -> Self {
        Self {
            present: s.present,
            peak_voxel: VoxelIndex::from(s.peak_voxel),
            peak_value: s.peak_value,
            rejected_by_shape: s.rejected_by_shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedConfig {
    pub p_thres: f64,
    pub shape_constraint: bool,
}

/// One volume of a detection report: either a result or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub volume_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<SideRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<SideRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: AppliedConfig,
}

impl DetectionRecord {
    pub fn ok(volume_id: &str, r: &DetectionResult, cfg: &DetectorConfig, shape_constraint: bool) -> Self {
        Self {
            volume_id: volume_id.to_string(),
            left: Some(SideRecord::from(&r.left)),
            right: Some(SideRecord::from(&r.right)),
            category: Some(r.category().as_str().to_string()),
            error: None,
            config: AppliedConfig { p_thres: cfg.p_thres, shape_constraint },
        }
    }

    pub fn failed(volume_id: &str, error: String, cfg: &DetectorConfig, shape_constraint: bool) -> Self {
        Self {
            volume_id: volume_id.to_string(),
            left: None,
            right: None,
            category: None,
            error: Some(error),
            config: AppliedConfig { p_thres: cfg.p_thres, shape_constraint },
        }
    }

    pub fn result(&self) -> Option<DetectionResult> {
        Some(DetectionResult { left: (&self.left?).into(), right: (&self.right?).into() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRecord {
    pub has_distractor: bool,
    pub noise_profile: String,
    pub total: u64,
    pub errors: u64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub errors_mm: Vec<f64>,
    pub mean_mm: f64,
    pub std_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRecord {
    pub pairs: usize,
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
}

impl TTestRecord {
    pub fn new(pairs: usize, t: &TTest) -> Self {
        Self { pairs, t: t.t, df: t.df, p_two_sided: t.p_two_sided }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Row and column order of `confusion`.
    pub categories: [String; 4],
    /// `confusion[predicted][truth]`.
    pub confusion: [[u64; 4]; 4],
    pub total: u64,
    pub correct: u64,
    pub error_rate: f64,
    pub strata: Vec<StratumRecord>,
    pub localization: LocalizationRecord,
    pub false_present: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<TTestRecord>,
}

impl From<&EvalReport> for EvalRecord {
    fn from(r: &EvalReport) -> Self {
        Self {
            categories: Category::ALL.map(|c| c.as_str().to_string()),
            confusion: r.confusion,
            total: r.total,
            correct: r.correct,
            error_rate: r.error_rate,
            strata: r
                .strata
                .iter()
                .map(|s| StratumRecord {
                    has_distractor: s.has_distractor,
                    noise_profile: s.noise_profile.as_str().to_string(),
                    total: s.total,
                    errors: s.errors,
                    error_rate: s.error_rate,
                })
                .collect(),
            localization: LocalizationRecord {
                errors_mm: r.localization_mm.clone(),
                mean_mm: r.localization_mean_mm,
                std_mm: r.localization_std_mm,
            },
            false_present: r.false_present,
            comparison: None,
        }
    }
}

/// Per-volume rows as CSV.
pub fn rows_csv(rows: &[VolumeRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("<csv>", e.to_string());
    w.write_record([
        "volume_id",
        "truth",
        "predicted",
        "correct",
        "has_distractor",
        "noise_profile",
        "left_error_mm",
        "right_error_mm",
        "false_present",
        "rejected_by_shape",
    ])
    .map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.volume_id.clone(),
            r.truth.to_string(),
            r.predicted.to_string(),
            r.correct().to_string(),
            r.has_distractor.to_string(),
            r.noise_profile.to_string(),
            opt(r.left_error_mm),
            opt(r.right_error_mm),
            r.false_present.to_string(),
            r.rejected_by_shape.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("<csv>", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_round_trip_and_checks() {
        let a = LandmarkAnnotation {
            volume_id: "B0001".into(),
            left: Some(VoxelIndex::new(1, 2, 3)),
            right: None,
            distractors: vec![VoxelIndex::new(4, 5, 6)],
        };
        let rec = AnnotationRecord::from(&a);
        assert_eq!(rec.category, "L");
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"left_voxel\":[1,2,3]") && !json.contains("right_voxel"));
        let back: AnnotationRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_annotation().unwrap(), a);

        let mut bad = rec.clone();
        bad.category = "B".into();
        assert!(bad.to_annotation().is_err());
        let mut bad = rec.clone();
        bad.right_present = true;
        assert!(bad.to_annotation().is_err());
    }

    #[test]
    fn detection_record_round_trip() {
        let side = |p: bool| SideDetection {
            present: p,
            peak_voxel: VoxelIndex::new(3, 4, 5),
            peak_value: 0.75,
            rejected_by_shape: !p,
        };
        let r = DetectionResult { left: side(true), right: side(false) };
        let rec = DetectionRecord::ok("v", &r, &DetectorConfig::default(), true);
        let back: DetectionRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(back.result().unwrap(), r);
        assert_eq!(back.category.as_deref(), Some("L"));
        let failed = DetectionRecord::failed("w", "bad dims".into(), &DetectorConfig::default(), false);
        assert!(failed.result().is_none());
    }
}

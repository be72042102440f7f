//! Flat `key = value` run configuration.
//!
//! Files hold one `key = value` per line; blank lines and lines starting
//! with `#` are ignored. Command-line `--key value` pairs are applied after
//! the file, and the last assignment to a key wins. Keys not listed in
//! [`KEYS`] are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use voxmark_core::detect::DetectorConfig;
use voxmark_core::labels::LabelConfig;
use voxmark_core::phantom::{AugmentRanges, PhantomConfig};
use voxmark_core::shape::ShapeSpace;
use voxmark_core::train::{StepDecay, TrainConfig};
use voxmark_core::unet::NetArch;

use crate::error::{Error, Result};

/// Every accepted key with its default (empty means unset) and a description.
pub struct KeySpec {
    pub key: &'static str,
    pub default: String,
    pub help: &'static str,
}

fn list(v: [f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

pub fn keys() -> Vec<KeySpec> {
    let p = PhantomConfig::default();
    let l = LabelConfig::default();
    let a = NetArch::default();
    let t = TrainConfig::default();
    let d = DetectorConfig::default();
    let k = |key, default: String, help| KeySpec { key, default, help };
    vec![
        // phantom
        k("dims", format!("{},{},{}", p.dims[0], p.dims[1], p.dims[2]), "volume dims (one value or nx,ny,nz)"),
        k("spacing", p.spacing.to_string(), "voxel size in mm"),
        k("head_semi_axes_mm", list(p.head_semi_axes_mm), "head ellipsoid semi-axes in mm"),
        k("head_intensity", p.head_intensity.to_string(), "head ellipsoid intensity"),
        k("ear_radius_mm", p.ear_radius_mm.to_string(), "outer radius of the ear shell"),
        k("ear_intensity", p.ear_intensity.to_string(), "ear template intensity"),
        k("ear_separation_mm", p.ear_separation_mm.to_string(), "nominal distance between ear centers"),
        k("ear_jitter_mm", p.ear_jitter_mm.to_string(), "maximal ear center displacement"),
        k("distractor_probability", p.distractor_probability.to_string(), "fraction of volumes with a distractor"),
        k("distractor_intensity", p.distractor_intensity.to_string(), "distractor intensity"),
        k("lowdose_fraction", p.lowdose_fraction.to_string(), "fraction of volumes with the low-dose profile"),
        k("noise_sigma_clean", p.noise_sigma_clean.to_string(), "additive noise sigma, clean profile"),
        k("noise_sigma_lowdose", p.noise_sigma_lowdose.to_string(), "additive noise sigma, low-dose profile"),
        k("augment", on_off(p.augment.enabled), "random affine deformation (on/off)"),
        k("augment_scale_min", p.augment.scale_min.to_string(), "smallest isotropic scale"),
        k("augment_scale_max", p.augment.scale_max.to_string(), "largest isotropic scale"),
        k("augment_max_rotation_deg", p.augment.max_rotation_deg.to_string(), "per-axis rotation bound"),
        k("augment_max_shear", p.augment.max_shear.to_string(), "shear coefficient bound"),
        k("seed", p.seed.to_string(), "dataset seed"),
        k("count_per_category", "50".into(), "volumes generated per category"),
        // labels
        k("sigma", l.sigma.to_string(), "target Gaussian sigma in voxels"),
        k("floor_threshold", l.floor_threshold.to_string(), "target values below this become 0"),
        k("suppression", on_off(l.suppression_enabled), "negative target at the opposite landmark (on/off)"),
        // network
        k("depth", a.depth.to_string(), "U-Net pooling levels"),
        k("base_channels", a.base_channels.to_string(), "channels at full resolution"),
        // training
        k("learning_rate", t.learning_rate.to_string(), "SGD learning rate"),
        k("momentum", t.momentum.to_string(), "SGD momentum"),
        k("batch_size", t.batch_size.to_string(), "samples per step"),
        k("epochs", t.epochs.to_string(), "total epochs"),
        k("train_seed", t.seed.to_string(), "initialization and shuffling seed"),
        k("shuffle", on_off(t.shuffle), "shuffle samples each epoch (on/off)"),
        k("lr_decay_every", String::new(), "epochs between learning-rate decays"),
        k("lr_decay_factor", String::new(), "learning-rate multiplier per decay"),
        k("checkpoint_every", "1".into(), "epochs between checkpoints (0 = final only)"),
        // detection and shape model
        k("p_thres", d.p_thres.to_string(), "presence threshold on the map maximum"),
        k("shape_space", ShapeSpace::Mm.as_str().into(), "shape-model coordinates (mm/voxel)"),
        k("max_modes", voxmark_core::shape::MAX_MODES.to_string(), "retained shape modes"),
        // paths
        k("out", String::new(), "output directory or file"),
        k("manifest", String::new(), "dataset manifest JSON"),
        k("checkpoint", String::new(), "network checkpoint (UNC1)"),
        k("checkpoint_dir", "checkpoints".into(), "directory for training checkpoints and loss log"),
        k("resume", String::new(), "checkpoint to resume training from"),
        k("shape_model", String::new(), "shape-model JSON"),
        k("report", String::new(), "detection report JSON"),
        k("compare", String::new(), "second detection report for a paired t-test"),
        k("csv", String::new(), "per-volume CSV output"),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = keys().into_iter().map(|k| (k.key.to_string(), k.default)).collect();
        Self { values }
    }
}

impl RunConfig {
    /// Assigns one key; `-` in keys is read as `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", origin.display(), n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{raw}'")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "on" | "true" | "1" | "yes" => Ok(true),
            "off" | "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!("{key}: expected on/off, got '{other}'"))),
        }
    }

    fn triple(&self, key: &str) -> Result<[f64; 3]> {
        let parts: Vec<&str> = self.raw(key).split(',').map(str::trim).collect();
        let vals: Vec<f64> = parts
            .iter()
            .map(|p| p.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{p}'"))))
            .collect::<Result<_>>()?;
        match vals[..] {
            [v] => Ok([v; 3]),
            [a, b, c] => Ok([a, b, c]),
            _ => Err(Error::Config(format!("{key}: expected 1 or 3 comma-separated values"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::Usage(format!("missing --{key}")))
    }

    pub fn phantom(&self) -> Result<PhantomConfig> {
        let dims = self.triple("dims")?;
        if dims.iter().any(|&d| d < 1.0 || d.fract() != 0.0) {
            return Err(Error::Config("dims: expected positive integers".into()));
        }
        let cfg = PhantomConfig {
            dims: dims.map(|d| d as usize),
            spacing: self.parse("spacing")?,
            head_semi_axes_mm: self.triple("head_semi_axes_mm")?,
            head_intensity: self.parse("head_intensity")?,
            ear_radius_mm: self.parse("ear_radius_mm")?,
            ear_intensity: self.parse("ear_intensity")?,
            ear_separation_mm: self.parse("ear_separation_mm")?,
            ear_jitter_mm: self.parse("ear_jitter_mm")?,
            distractor_probability: self.parse("distractor_probability")?,
            distractor_intensity: self.parse("distractor_intensity")?,
            lowdose_fraction: self.parse("lowdose_fraction")?,
            noise_sigma_clean: self.parse("noise_sigma_clean")?,
            noise_sigma_lowdose: self.parse("noise_sigma_lowdose")?,
            augment: AugmentRanges {
                enabled: self.flag("augment")?,
                scale_min: self.parse("augment_scale_min")?,
                scale_max: self.parse("augment_scale_max")?,
                max_rotation_deg: self.parse("augment_max_rotation_deg")?,
                max_shear: self.parse("augment_max_shear")?,
            },
            seed: self.parse("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn count_per_category(&self) -> Result<usize> {
        self.parse("count_per_category")
    }

    pub fn labels(&self) -> Result<LabelConfig> {
        let cfg = LabelConfig {
            sigma: self.parse("sigma")?,
            floor_threshold: self.parse("floor_threshold")?,
            suppression_enabled: self.flag("suppression")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn arch(&self) -> Result<NetArch> {
        let a = NetArch { depth: self.parse("depth")?, base_channels: self.parse("base_channels")? };
        a.validate()?;
        Ok(a)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let lr_decay = match (self.raw("lr_decay_every").is_empty(), self.raw("lr_decay_factor").is_empty()) {
            (true, true) => None,
            (false, false) => {
                Some(StepDecay { every_epochs: self.parse("lr_decay_every")?, factor: self.parse("lr_decay_factor")? })
            }
            _ => return Err(Error::Config("lr_decay_every and lr_decay_factor must be set together".into())),
        };
        let cfg = TrainConfig {
            learning_rate: self.parse("learning_rate")?,
            momentum: self.parse("momentum")?,
            batch_size: self.parse("batch_size")?,
            epochs: self.parse("epochs")?,
            seed: self.parse("train_seed")?,
            shuffle: self.flag("shuffle")?,
            lr_decay,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn checkpoint_every(&self) -> Result<usize> {
        self.parse("checkpoint_every")
    }

    pub fn detector(&self) -> Result<DetectorConfig> {
        let cfg = DetectorConfig { p_thres: self.parse("p_thres")? };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shape_space(&self) -> Result<ShapeSpace> {
        ShapeSpace::parse(self.raw("shape_space")).ok_or_else(|| {
            Error::Config(format!("shape_space: expected mm or voxel, got '{}'", self.raw("shape_space")))
        })
    }

    pub fn max_modes(&self) -> Result<usize> {
        self.parse("max_modes")
    }
}

/// Help text listing every key and its default.
pub fn help_keys() -> String {
    let mut out = String::new();
    for k in keys() {
        let default = if k.default.is_empty() { "(unset)".to_string() } else { k.default };
        out.push_str(&format!("  --{:<26} {:<16} {}\n", k.key, default, k.help));
    }
    out
}

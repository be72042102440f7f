//! Deterministic synthetic head phantoms with paired ear-like landmarks.
//!
//! Every volume starts as a "both ears" scene: a dim head ellipsoid with two
//! bright ear templates mirrored about the mid-sagittal plane. An ear template
//! is a solid core inside a spherical shell, plus a short canal pointing
//! medially; the canal makes left and right templates mirror images of each
//! other rather than identical. Optional distractors are canal-less
//! core+shell blobs placed superior-lateral to one ear.
//!
//! Single-ear and no-ear volumes are cut out of a full scene (an x-slab on
//! one side of the mid-plane, or a z-slab above both ears) and padded back to
//! the configured dims. The volume is then optionally deformed by a random
//! affine map and finally receives additive Gaussian noise.
//!
//! Sample `n` of a dataset draws every random number from
//! `SplitMix64::stream(seed, n)`, so datasets are reproducible bit for bit.

use alloc::format;
use alloc::vec::Vec;

use crate::annotation::{Category, LandmarkAnnotation, NoiseProfile, Side};
use crate::error::{Error, Result};
use crate::linalg::{inverse3, mat_mul3, mat_vec3};
use crate::rng::SplitMix64;
use crate::volume::{VolumeGrid, VoxelIndex};

/// Ranges random affine deformations are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Per-axis rotation bound in degrees.
    pub max_rotation_deg: f64,
    /// Bound on each of the three shear coefficients.
    pub max_shear: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { enabled: true, scale_min: 0.9, scale_max: 1.1, max_rotation_deg: 10.0, max_shear: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    /// Isotropic voxel size in mm.
    pub spacing: f64,
    pub head_semi_axes_mm: [f64; 3],
    pub head_intensity: f32,
    /// Outer radius of the ear shell.
    pub ear_radius_mm: f64,
    pub ear_intensity: f32,
    pub ear_separation_mm: f64,
    /// Each ear center moves independently by up to this much along x and
    /// jointly by up to this much along y and z.
    pub ear_jitter_mm: f64,
    /// Fraction of each category that carries a distractor.
    pub distractor_probability: f64,
    pub distractor_intensity: f32,
    /// Fraction of each category acquired with the low-dose profile.
    pub lowdose_fraction: f64,
    pub noise_sigma_clean: f64,
    pub noise_sigma_lowdose: f64,
    pub augment: AugmentRanges,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            spacing: 2.25,
            head_semi_axes_mm: [31.5, 27.0, 22.5],
            head_intensity: 0.35,
            ear_radius_mm: 5.625,
            ear_intensity: 1.0,
            ear_separation_mm: 36.0,
            ear_jitter_mm: 4.5,
            distractor_probability: 0.2,
            distractor_intensity: 1.0,
            lowdose_fraction: 0.5,
            noise_sigma_clean: 0.03,
            noise_sigma_lowdose: 0.12,
            augment: AugmentRanges::default(),
            seed: 0,
        }
    }
}

/// Template dimensions in voxels.
#[derive(Debug, Clone, Copy)]
struct Template {
    core: f64,
    shell: f64,
    canal_len: f64,
    canal_radius: f64,
}

impl Template {
    /// Farthest template voxel from the center along the canal axis.
    fn medial_extent(&self) -> i64 {
        libm::floor(self.shell + 0.5 + self.canal_len) as i64
    }

    /// Farthest template voxel in any other direction.
    fn extent(&self) -> i64 {
        libm::floor(self.shell + 0.5) as i64
    }
}

impl PhantomConfig {
    fn template(&self) -> Template {
        let r = self.ear_radius_mm / self.spacing;
        Template { core: 0.6 * r, shell: r, canal_len: 0.8 * r, canal_radius: 1.0 }
    }

    fn jitter(&self) -> i64 {
        libm::round(self.ear_jitter_mm / self.spacing) as i64
    }

    fn half_separation(&self) -> i64 {
        libm::round(0.5 * self.ear_separation_mm / self.spacing) as i64
    }

    /// Distractor offset from its ear: (lateral, superior) voxels.
    fn distractor_offset(&self) -> (i64, i64) {
        let r = self.ear_radius_mm / self.spacing;
        (libm::round(0.8 * r) as i64, libm::round(3.2 * r) as i64)
    }

    fn center(&self) -> [i64; 3] {
        core::array::from_fn(|d| (self.dims[d] / 2) as i64)
    }

    pub fn noise_sigma(&self, profile: NoiseProfile) -> f64 {
        match profile {
            NoiseProfile::Clean => self.noise_sigma_clean,
            NoiseProfile::LowDose => self.noise_sigma_lowdose,
        }
    }

    /// Checks value ranges and that every structure, at maximal jitter,
    /// fits inside the grid and can be cropped away cleanly.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::invalid(m));
        if self.dims.iter().any(|&d| d < 8) {
            return bad(format!("dims must be at least 8 per axis, got {:?}", self.dims));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        if self.head_semi_axes_mm.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return bad("head semi-axes must be positive".into());
        }
        for (name, v) in [
            ("head_intensity", self.head_intensity),
            ("ear_intensity", self.ear_intensity),
            ("distractor_intensity", self.distractor_intensity),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        for (name, p) in
            [("distractor_probability", self.distractor_probability), ("lowdose_fraction", self.lowdose_fraction)]
        {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (name, s) in
            [("noise_sigma_clean", self.noise_sigma_clean), ("noise_sigma_lowdose", self.noise_sigma_lowdose)]
        {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be non-negative, got {s}"));
            }
        }
        let a = &self.augment;
        if !(a.scale_min > 0.0 && a.scale_min <= a.scale_max && a.scale_max.is_finite()) {
            return bad(format!("augment scale range [{}, {}] is invalid", a.scale_min, a.scale_max));
        }
        if !(a.max_rotation_deg >= 0.0 && a.max_rotation_deg <= 90.0 && a.max_shear >= 0.0 && a.max_shear < 1.0) {
            return bad("augment rotation must lie in [0, 90] degrees and shear in [0, 1)".into());
        }
        if !(self.ear_radius_mm / self.spacing >= 1.0) {
            return bad(format!("ear radius must be at least one voxel, got {} mm", self.ear_radius_mm));
        }
        if !(self.ear_separation_mm.is_finite() && self.ear_jitter_mm >= 0.0) {
            return bad("ear separation and jitter must be finite and non-negative".into());
        }

        let t = self.template();
        let (j, h, c) = (self.jitter(), self.half_separation(), self.center());
        let (lat, sup) = self.distractor_offset();
        let n: [i64; 3] = self.dims.map(|d| d as i64);
        // Nearest possible pair must leave room for a crop between the templates.
        if 2 * (h - j) < 2 * t.medial_extent() + 1 {
            return bad(format!(
                "ear separation {} mm minus jitter leaves no gap between templates",
                self.ear_separation_mm
            ));
        }
        let x_lo = c[0] - h - j - t.extent().max(lat + t.extent());
        let x_hi = c[0] + h + j + t.extent().max(lat + t.extent());
        let y_span = j + t.extent();
        let z_hi = c[2] + j + sup + t.extent();
        let z_lo = c[2] - j - t.extent();
        if x_lo < 0 || x_hi >= n[0] || c[1] - y_span < 0 || c[1] + y_span >= n[1] || z_lo < 0 || z_hi >= n[2] {
            return bad(format!("ears and distractors do not fit in {:?} voxels at maximal jitter", self.dims));
        }
        Ok(())
    }
}

/// Affine deformation about the grid center: `x' = c + A (x - c)` with
/// `A = scale * Rz * Ry * Rx * S`, `S` upper unit-triangular with shears
/// (xy, xz, yz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub rotation_deg: [f64; 3],
    pub shear: [f64; 3],
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation_deg: [0.0; 3], shear: [0.0; 3] }
    }

    pub fn sample(ranges: &AugmentRanges, rng: &mut SplitMix64) -> Self {
        if !ranges.enabled {
            return Self::identity();
        }
        let scale = rng.uniform(ranges.scale_min, ranges.scale_max);
        let rotation_deg = core::array::from_fn(|_| rng.uniform(-ranges.max_rotation_deg, ranges.max_rotation_deg));
        let shear = core::array::from_fn(|_| rng.uniform(-ranges.max_shear, ranges.max_shear));
        Self { scale, rotation_deg, shear }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation_deg.map(f64::to_radians);
        let (sx, cx) = libm::sincos(ax);
        let (sy, cy) = libm::sincos(ay);
        let (sz, cz) = libm::sincos(az);
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        let [hxy, hxz, hyz] = self.shear;
        let sh = [[1.0, hxy, hxz], [0.0, 1.0, hyz], [0.0, 0.0, 1.0]];
        let m = mat_mul3(&rz, &mat_mul3(&ry, &mat_mul3(&rx, &sh)));
        m.map(|row| row.map(|v| v * self.scale))
    }
}

/// Where a continuous point lands under the deformation.
pub fn map_point(params: &AugmentParams, dims: [usize; 3], p: [f64; 3]) -> [f64; 3] {
    let c: [f64; 3] = core::array::from_fn(|d| 0.5 * (dims[d] as f64 - 1.0));
    let d = mat_vec3(&params.matrix(), core::array::from_fn(|a| p[a] - c[a]));
    core::array::from_fn(|a| c[a] + d[a])
}

fn map_voxel(params: &AugmentParams, dims: [usize; 3], v: VoxelIndex) -> Option<VoxelIndex> {
    let p = map_point(params, dims, [v.i as f64, v.j as f64, v.k as f64]);
    let mut out = [0usize; 3];
    for d in 0..3 {
        let r = libm::round(p[d]);
        if !(r >= 0.0 && r < dims[d] as f64) {
            return None;
        }
        out[d] = r as usize;
    }
    Some(VoxelIndex::from(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub volume: VolumeGrid,
    pub annotation: LandmarkAnnotation,
    pub category: Category,
    pub noise_profile: NoiseProfile,
    pub has_distractor: bool,
}

/// Applies an affine deformation: the volume is resampled by inverse mapping
/// with trilinear interpolation (outside samples take the volume minimum),
/// and landmarks are mapped forward and rounded. Landmarks or distractors
/// that leave the grid are dropped.
pub fn augment(sample: &PhantomSample, params: &AugmentParams) -> Result<PhantomSample> {
    let vol = &sample.volume;
    let dims = vol.dims();
    let inv = inverse3(&params.matrix()).ok_or_else(|| Error::invalid("augmentation matrix is singular"))?;
    let c: [f64; 3] = core::array::from_fn(|d| 0.5 * (dims[d] as f64 - 1.0));
    let fill = vol.min_value();
    let mut data = Vec::with_capacity(vol.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let q = [i as f64 - c[0], j as f64 - c[1], k as f64 - c[2]];
                let s = mat_vec3(&inv, q);
                let v = vol.sample_trilinear(c[0] + s[0], c[1] + s[1], c[2] + s[2]);
                data.push(v.map_or(fill, |v| v as f32));
            }
        }
    }
    let mut annotation = sample.annotation.clone();
    for side in Side::BOTH {
        let moved = sample.annotation.landmark(side).and_then(|v| map_voxel(params, dims, v));
        annotation.set_landmark(side, moved);
    }
    annotation.distractors = sample.annotation.distractors.iter().filter_map(|&v| map_voxel(params, dims, v)).collect();
    Ok(PhantomSample {
        volume: vol.with_data(data)?,
        category: annotation.category(),
        has_distractor: sample.has_distractor && !annotation.distractors.is_empty(),
        annotation,
        noise_profile: sample.noise_profile,
    })
}

/// Whether item `index` of `count` equally spaced draws at rate `p` is hit;
/// exactly `round(count * p)` of the first `count` items are.
fn spread_hit(index: usize, p: f64) -> bool {
    libm::floor((index + 1) as f64 * p + 0.5) > libm::floor(index as f64 * p + 0.5)
}

struct Scene {
    head_center: [f64; 3],
    ears: [[i64; 3]; 2],
    distractor: Option<(Side, [i64; 3])>,
}

fn in_template(t: &Template, d: [f64; 3], medial: f64) -> bool {
    let r = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if r <= t.core || (r - t.shell).abs() <= 0.5 {
        return true;
    }
    let along = d[0] * medial;
    let perp = libm::sqrt(d[1] * d[1] + d[2] * d[2]);
    along >= t.shell && along <= t.shell + 0.5 + t.canal_len && perp <= t.canal_radius
}

fn in_blob(t: &Template, d: [f64; 3]) -> bool {
    let r = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    r <= t.core || (r - t.shell).abs() <= 0.5
}

fn render(cfg: &PhantomConfig, scene: &Scene) -> Result<VolumeGrid> {
    let t = cfg.template();
    let [nx, ny, nz] = cfg.dims;
    let semi = cfg.head_semi_axes_mm.map(|a| a / cfg.spacing);
    let mut data = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = [i as f64, j as f64, k as f64];
                let delta = |c: [i64; 3]| -> [f64; 3] { core::array::from_fn(|a| p[a] - c[a] as f64) };
                let mut v = 0.0f32;
                let e: f64 = (0..3).map(|a| (p[a] - scene.head_center[a]) / semi[a]).map(|u| u * u).sum();
                if e <= 1.0 {
                    v = cfg.head_intensity;
                }
                // Left ear sits at lower x, so its canal points toward +x.
                for (ear, medial) in scene.ears.iter().zip([1.0, -1.0]) {
                    if in_template(&t, delta(*ear), medial) {
                        v = cfg.ear_intensity;
                    }
                }
                if let Some((_, c)) = scene.distractor {
                    if in_blob(&t, delta(c)) {
                        v = cfg.distractor_intensity;
                    }
                }
                data.push(v);
            }
        }
    }
    VolumeGrid::new(cfg.dims, [cfg.spacing; 3], [0.0; 3], data)
}

fn to_voxel(p: [i64; 3]) -> VoxelIndex {
    VoxelIndex::new(p[0] as usize, p[1] as usize, p[2] as usize)
}

/// Volume id of item `index` within `category`.
pub fn sample_id(category: Category, index: usize) -> alloc::string::String {
    format!("{}{:04}", category.as_str(), index)
}

/// Builds item `index` of `category`; `stream` selects the random stream.
pub fn generate_one(cfg: &PhantomConfig, category: Category, index: usize, stream: u64) -> Result<PhantomSample> {
    cfg.validate()?;
    let mut rng = SplitMix64::stream(cfg.seed, stream);
    let t = cfg.template();
    let (j, h, c) = (cfg.jitter(), cfg.half_separation(), cfg.center());
    let jit = |rng: &mut SplitMix64, r: i64| rng.range_inclusive(-r, r);

    let head_center = core::array::from_fn(|a| c[a] as f64 - 0.5 + rng.uniform(-1.0, 1.0));
    let (cy, cz) = (c[1] + jit(&mut rng, (j + 1) / 2), c[2] + jit(&mut rng, (j + 1) / 2));
    let mut ears = [[0i64; 3]; 2];
    for (n, sign) in [-1i64, 1].into_iter().enumerate() {
        let dy = jit(&mut rng, j / 2);
        let dz = jit(&mut rng, j / 2);
        ears[n] = [c[0] + sign * h + jit(&mut rng, j), cy + dy, cz + dz];
    }

    let has_distractor = spread_hit(index, cfg.distractor_probability);
    let noise_profile =
        if spread_hit(index, cfg.lowdose_fraction) { NoiseProfile::LowDose } else { NoiseProfile::Clean };
    let side_pick = if rng.below(2) == 0 { Side::Left } else { Side::Right };
    let distractor = has_distractor.then(|| {
        let side = match category {
            Category::L => Side::Left,
            Category::R => Side::Right,
            Category::B | Category::N => side_pick,
        };
        let (lat, sup) = cfg.distractor_offset();
        let e = ears[side as usize];
        let dx = if side == Side::Left { -lat } else { lat };
        (side, [e[0] + dx, e[1], e[2] + sup])
    });
    let scene = Scene { head_center, ears, distractor };
    let full = render(cfg, &scene)?;

    // Crop window as (start, length) per axis; source = output + start.
    let n: [i64; 3] = cfg.dims.map(|d| d as i64);
    let [l, r] = ears;
    let (start, len): ([i64; 3], [i64; 3]) = match category {
        Category::B => ([0; 3], n),
        Category::L | Category::R => {
            let lo = l[0] + t.medial_extent() + 1;
            let hi = r[0] - t.medial_extent();
            let cut = rng.range_inclusive(lo, hi);
            if category == Category::L {
                ([0, 0, 0], [cut, n[1], n[2]])
            } else {
                ([cut, 0, 0], [n[0] - cut, n[1], n[2]])
            }
        }
        Category::N => {
            let z0 = l[2].max(r[2]) + t.extent() + 1 + rng.range_inclusive(0, 1);
            ([0, 0, z0], [n[0], n[1], n[2] - z0])
        }
    };
    let cropped = full.window(len.map(|v| v as usize), start.map(|v| v as isize), 0.0)?;
    let pad_shift: [i64; 3] = core::array::from_fn(|d| {
        let (m, t) = (len[d], n[d]);
        if m >= t {
            (m - t) / 2
        } else {
            -((t - m) / 2)
        }
    });
    let volume = cropped.crop_or_pad_symmetric(cfg.dims, 0.0)?;
    let relocate = |p: [i64; 3]| -> Option<VoxelIndex> {
        let inside = (0..3).all(|d| p[d] >= start[d] && p[d] < start[d] + len[d]);
        inside.then(|| to_voxel(core::array::from_fn(|d| p[d] - start[d] - pad_shift[d])))
    };

    let mut annotation = LandmarkAnnotation {
        volume_id: sample_id(category, index),
        left: category.has(Side::Left).then(|| relocate(l)).flatten(),
        right: category.has(Side::Right).then(|| relocate(r)).flatten(),
        distractors: Vec::new(),
    };
    if let Some((_, d)) = distractor {
        annotation.distractors.extend(relocate(d));
    }
    let mut sample = PhantomSample {
        volume,
        has_distractor: !annotation.distractors.is_empty(),
        category: annotation.category(),
        annotation,
        noise_profile,
    };
    debug_assert_eq!(sample.category, category);

    let params = AugmentParams::sample(&cfg.augment, &mut rng);
    if params != AugmentParams::identity() {
        sample = augment(&sample, &params)?;
    }
    let sigma = cfg.noise_sigma(noise_profile);
    if sigma > 0.0 {
        let noisy: Vec<f32> = sample.volume.data().iter().map(|&v| v + (sigma * rng.normal()) as f32).collect();
        sample.volume = sample.volume.with_data(noisy)?;
    }
    Ok(sample)
}

/// `count_per_category` samples of each category, in B, L, R, N order.
pub fn generate(cfg: &PhantomConfig, count_per_category: usize) -> Result<Vec<PhantomSample>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(4 * count_per_category);
    for (ci, cat) in Category::ALL.into_iter().enumerate() {
        for i in 0..count_per_category {
            out.push(generate_one(cfg, cat, i, (ci * count_per_category + i) as u64)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PhantomConfig {
        PhantomConfig {
            noise_sigma_clean: 0.0,
            noise_sigma_lowdose: 0.0,
            augment: AugmentRanges { enabled: false, ..AugmentRanges::default() },
            seed: 42,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn default_config_is_feasible() {
        PhantomConfig::default().validate().unwrap();
        let cfg = PhantomConfig { ear_separation_mm: 18.0, ..PhantomConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = PhantomConfig { dims: [16, 32, 32], ..PhantomConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = PhantomConfig { distractor_probability: 1.5, ..PhantomConfig::default() };
        assert!(generate(&cfg, 1).is_err());
    }

    #[test]
    fn both_ears_mirror_about_midplane() {
        let cfg = PhantomConfig { seed: 42, ..PhantomConfig::default() };
        let a = generate_one(&cfg, Category::B, 0, 0).unwrap();
        let b = generate_one(&cfg, Category::B, 0, 0).unwrap();
        assert_eq!(a, b);
        let (l, r) = (a.annotation.left.unwrap(), a.annotation.right.unwrap());
        let mid = 15.5;
        let tol = 2.0 * cfg.jitter() as f64 + 3.0; // jitter plus augmentation
        assert!(((l.i as f64 - mid) + (r.i as f64 - mid)).abs() <= tol);
        assert!(l.i < r.i);
    }

    #[test]
    fn categories_balanced_and_consistent() {
        let cfg = PhantomConfig { seed: 3, ..PhantomConfig::default() };
        let set = generate(&cfg, 10).unwrap();
        assert_eq!(set.len(), 40);
        for cat in Category::ALL {
            let of: Vec<_> = set.iter().filter(|s| s.category == cat).collect();
            assert_eq!(of.len(), 10);
            assert_eq!(of.iter().filter(|s| s.has_distractor).count(), 2);
            assert_eq!(of.iter().filter(|s| s.noise_profile == NoiseProfile::LowDose).count(), 5);
            for s in of {
                assert_eq!(s.annotation.category(), cat);
                assert_eq!(s.volume.dims(), cfg.dims);
            }
        }
    }

    #[test]
    fn left_only_crop_removes_right_template() {
        let cfg = quiet();
        let t = cfg.template();
        for i in 0..10 {
            let s = generate_one(&cfg, Category::L, i, 100 + i as u64).unwrap();
            assert!(s.annotation.right.is_none());
            let l = s.annotation.left.unwrap();
            // Everything bright lies within the left template or a distractor.
            for k in 0..32 {
                for j in 0..32 {
                    for x in 0..32 {
                        let v = VoxelIndex::new(x, j, k);
                        if s.volume.get(v) < 0.5 {
                            continue;
                        }
                        let near = |c: VoxelIndex, r: f64| v.dist2(c) <= r * r;
                        let ok = near(l, (t.medial_extent() + 1) as f64)
                            || s.annotation.distractors.iter().any(|&d| near(d, t.extent() as f64 + 0.5));
                        assert!(ok, "sample {i}: stray bright voxel at {v:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn neither_has_no_landmarks() {
        let cfg = quiet();
        for i in 0..5 {
            let s = generate_one(&cfg, Category::N, i, i as u64).unwrap();
            assert!(s.annotation.left.is_none() && s.annotation.right.is_none());
        }
    }

    #[test]
    fn landmarks_sit_on_bright_templates() {
        let cfg = PhantomConfig { seed: 11, ..PhantomConfig::default() };
        for s in generate(&cfg, 12).unwrap() {
            for side in Side::BOTH {
                if let Some(v) = s.annotation.landmark(side) {
                    let x = s.volume.get(v);
                    assert!((0.5..=1.5).contains(&x), "{}: {x}", s.annotation.volume_id);
                }
            }
        }
    }

    #[test]
    fn distractors_are_placed_near_their_ear() {
        let cfg = quiet();
        for i in 0..10 {
            if !spread_hit(i, cfg.distractor_probability) {
                continue;
            }
            let s = generate_one(&cfg, Category::B, i, i as u64).unwrap();
            assert!(s.has_distractor);
            let d = s.annotation.distractors[0];
            assert!(s.volume.get(d) == cfg.distractor_intensity);
            let nearest =
                Side::BOTH.iter().map(|&sd| d.dist2(s.annotation.landmark(sd).unwrap())).fold(f64::MAX, f64::min);
            assert!(nearest > 7.5 * 7.5, "distractor overlaps a target: {nearest}");
        }
    }

    #[test]
    fn identity_augment_is_noop() {
        let s = generate_one(&PhantomConfig { seed: 5, ..PhantomConfig::default() }, Category::B, 1, 1).unwrap();
        let a = augment(&s, &AugmentParams::identity()).unwrap();
        for (x, y) in s.volume.data().iter().zip(a.volume.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
        assert_eq!(a.annotation, s.annotation);
    }

    #[test]
    fn isotropic_scale_moves_landmarks_radially() {
        let p = AugmentParams { scale: 1.1, ..AugmentParams::identity() };
        let dims = [32, 32, 32];
        let q = map_point(&p, dims, [5.5, 20.5, 15.5]);
        let c = 15.5;
        assert!((q[0] - c - 1.1 * (5.5 - c)).abs() < 1e-12);
        assert!((q[1] - c - 1.1 * (20.5 - c)).abs() < 1e-12);
        assert!((q[2] - c).abs() < 1e-12);
    }

    #[test]
    fn rotation_out_of_grid_drops_landmark() {
        let cfg = quiet();
        let mut s = generate_one(&cfg, Category::B, 0, 0).unwrap();
        s.annotation.left = Some(VoxelIndex::new(0, 0, 0));
        let p = AugmentParams { rotation_deg: [0.0, 0.0, 10.0], ..AugmentParams::identity() };
        let a = augment(&s, &p).unwrap();
        assert!(a.annotation.left.is_none());
        assert!(a.annotation.right.is_some());
        assert_eq!(a.category, Category::R);
    }

    #[test]
    fn augmented_landmarks_track_templates() {
        let cfg = quiet();
        let s = generate_one(&cfg, Category::B, 0, 0).unwrap();
        let mut rng = SplitMix64::new(8);
        for _ in 0..10 {
            let p = AugmentParams::sample(&AugmentRanges::default(), &mut rng);
            let a = augment(&s, &p).unwrap();
            for side in Side::BOTH {
                let before = s.annotation.landmark(side).unwrap();
                let exact = map_point(&p, cfg.dims, [before.i as f64, before.j as f64, before.k as f64]);
                let got = a.annotation.landmark(side).unwrap();
                let err2: f64 = (0..3).map(|d| (got.as_array()[d] as f64 - exact[d]).powi(2)).sum();
                assert!(err2 <= 1.0);
            }
        }
    }

    #[test]
    fn spread_hits_are_exact() {
        for (n, p) in [(50, 0.2), (10, 0.5), (7, 0.0), (9, 1.0), (50, 0.33)] {
            let hits = (0..n).filter(|&i| spread_hit(i, p)).count();
            assert_eq!(hits as f64, libm::round(n as f64 * p));
        }
    }
}

//! Statistical model of landmark-pair geometry.
//!
//! A pair is reduced to a 6-vector by subtracting the pair centroid from both
//! points. The model keeps the mean shape and the leading principal directions
//! of the training shapes; a detected pair is implausible when its
//! Mahalanobis distance exceeds the largest distance seen in training.

use alloc::format;
use alloc::vec::Vec;

use crate::annotation::Side;
use crate::detect::DetectionResult;
use crate::error::{Error, Result};
use crate::linalg::{dot, symmetric_eigen};
use crate::volume::{GridGeometry, VoxelIndex};

/// Default cap on retained modes; centroid removal leaves at most 3 anyway.
pub const MAX_MODES: usize = 3;

/// Relative threshold below which eigenvalues count as structural zeros.
pub const EIGEN_FLOOR_REL: f64 = 1e-10;

/// Ratio of the largest variance to the mean squared shape magnitude under
/// which a fitted model is reported as near-degenerate.
pub const NEAR_DEGENERATE_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarPairShape {
    pub s: [f64; 6],
}

impl EarPairShape {
    pub fn left(&self) -> [f64; 3] {
        [self.s[0], self.s[1], self.s[2]]
    }

    pub fn right(&self) -> [f64; 3] {
        [self.s[3], self.s[4], self.s[5]]
    }
}

pub fn pair_to_shape(left: [f64; 3], right: [f64; 3]) -> Result<EarPairShape> {
    if left == right {
        return Err(Error::invalid(format!("coincident pair points {left:?}")));
    }
    if left.iter().chain(&right).any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite pair coordinates"));
    }
    let c: [f64; 3] = core::array::from_fn(|a| 0.5 * (left[a] + right[a]));
    let mut s = [0.0; 6];
    for a in 0..3 {
        s[a] = left[a] - c[a];
        s[3 + a] = right[a] - c[a];
    }
    Ok(EarPairShape { s })
}

/// Coordinate frame the model was fit in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShapeSpace {
    /// Physical millimetres via spacing and origin.
    #[default]
    Mm,
    /// Raw voxel indices.
    Voxel,
}

impl ShapeSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeSpace::Mm => "mm",
            ShapeSpace::Voxel => "voxel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mm" => Some(ShapeSpace::Mm),
            "voxel" => Some(ShapeSpace::Voxel),
            _ => None,
        }
    }

    pub fn point(self, v: VoxelIndex, geom: &GridGeometry) -> [f64; 3] {
        match self {
            ShapeSpace::Mm => geom.voxel_to_mm(v),
            ShapeSpace::Voxel => [v.i as f64, v.j as f64, v.k as f64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    pub mean: [f64; 6],
    /// Unit eigenvectors, strongest first.
    pub eigvecs: Vec<[f64; 6]>,
    /// Matching variances, descending and positive.
    pub eigvals: Vec<f64>,
    pub m_max: f64,
    pub n_train: usize,
    pub space: ShapeSpace,
}

impl ShapeModel {
    /// Number of retained modes.
    pub fn k(&self) -> usize {
        self.eigvals.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateModel(m.into()));
        if self.eigvals.is_empty() || self.eigvals.len() != self.eigvecs.len() {
            return bad("model needs matching, non-empty eigenpairs");
        }
        if self.eigvals.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("eigenvalues must be positive and finite");
        }
        if !(self.m_max >= 0.0 && self.m_max.is_finite()) || self.mean.iter().any(|x| !x.is_finite()) {
            return bad("mean and m_max must be finite, m_max non-negative");
        }
        for (j, u) in self.eigvecs.iter().enumerate() {
            for (l, w) in self.eigvecs.iter().enumerate() {
                let target = if j == l { 1.0 } else { 0.0 };
                if (dot(u, w) - target).abs() > 1e-6 {
                    return bad("eigenvectors are not orthonormal");
                }
            }
        }
        Ok(())
    }

    /// True when all retained variance is negligible relative to the shape
    /// scale, i.e. the training shapes were (nearly) identical.
    pub fn near_degenerate(&self) -> bool {
        let scale = dot(&self.mean, &self.mean) / 6.0;
        self.eigvals[0] <= NEAR_DEGENERATE_RATIO * scale
    }
}

/// Fits mean, 1/N covariance, and up to `max_modes` eigenpairs above
/// `EIGEN_FLOOR_REL * trace`.
pub fn fit_with(shapes: &[EarPairShape], max_modes: usize, space: ShapeSpace) -> Result<ShapeModel> {
    if shapes.len() < 2 {
        return Err(Error::DegenerateModel(format!("need at least 2 shapes, got {}", shapes.len())));
    }
    if max_modes == 0 {
        return Err(Error::invalid("max_modes must be positive"));
    }
    let n = shapes.len() as f64;
    let mut mean = [0.0; 6];
    for sh in shapes {
        for (m, x) in mean.iter_mut().zip(&sh.s) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = [[0.0; 6]; 6];
    for sh in shapes {
        let d: [f64; 6] = core::array::from_fn(|a| sh.s[a] - mean[a]);
        for r in 0..6 {
            for c in 0..6 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for row in &mut cov {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    let trace: f64 = (0..6).map(|i| cov[i][i]).sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateModel("training shapes are identical".into()));
    }
    let floor = EIGEN_FLOOR_REL * trace;
    let (vals, vecs) = symmetric_eigen(&cov);
    let keep = vals.iter().take(max_modes).take_while(|&&l| l > floor).count();
    if keep == 0 {
        return Err(Error::DegenerateModel("no eigenvalue above the floor".into()));
    }
    let mut model = ShapeModel {
        mean,
        eigvecs: vecs[..keep].to_vec(),
        eigvals: vals[..keep].to_vec(),
        m_max: 0.0,
        n_train: shapes.len(),
        space,
    };
    model.m_max = shapes.iter().map(|s| mahalanobis(s, &model)).fold(0.0, f64::max);
    Ok(model)
}

pub fn fit(shapes: &[EarPairShape]) -> Result<ShapeModel> {
    fit_with(shapes, MAX_MODES, ShapeSpace::Mm)
}

/// Projections of `s - mean` onto the retained modes.
pub fn project(s: &EarPairShape, model: &ShapeModel) -> Vec<f64> {
    let d: [f64; 6] = core::array::from_fn(|a| s.s[a] - model.mean[a]);
    model.eigvecs.iter().map(|u| dot(&d, u)).collect()
}

pub fn mahalanobis(s: &EarPairShape, model: &ShapeModel) -> f64 {
    libm::sqrt(project(s, model).iter().zip(&model.eigvals).map(|(b, l)| b * b / l).sum::<f64>())
}

/// Mahalanobis distance of the detected pair, or `None` unless both sides
/// are present. Coincident peaks have no shape and score `+inf`.
pub fn pair_distance(result: &DetectionResult, model: &ShapeModel, geom: &GridGeometry) -> Option<f64> {
    if !(result.left.present && result.right.present) {
        return None;
    }
    let l = model.space.point(result.left.peak_voxel, geom);
    let r = model.space.point(result.right.peak_voxel, geom);
    Some(match pair_to_shape(l, r) {
        Ok(s) => mahalanobis(&s, model),
        Err(_) => f64::INFINITY,
    })
}

/// Rejects the weaker side of an implausible pair (the right one on a tie).
pub fn apply_constraint(result: &DetectionResult, model: &ShapeModel, geom: &GridGeometry) -> DetectionResult {
    let mut out = *result;
    if let Some(m) = pair_distance(result, model, geom) {
        if m > model.m_max {
            let weaker = if result.left.peak_value < result.right.peak_value { Side::Left } else { Side::Right };
            let side = out.side_mut(weaker);
            side.present = false;
            side.rejected_by_shape = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Category;
    use crate::detect::SideDetection;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn sh(s: [f64; 6]) -> EarPairShape {
        EarPairShape { s }
    }

    fn two_shape_model() -> ShapeModel {
        fit(&[sh([-10.0, 0.0, 0.0, 10.0, 0.0, 0.0]), sh([-12.0, 0.0, 0.0, 12.0, 0.0, 0.0])]).unwrap()
    }

    #[test]
    fn pair_to_shape_examples() {
        let a = pair_to_shape([-10.0, 0.0, 0.0], [10.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.s, [-10.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
        let b = pair_to_shape([0.0, 0.0, 0.0], [20.0, 0.0, 0.0]).unwrap();
        assert_eq!(b.s, a.s);
        assert!(pair_to_shape([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn two_shape_example() {
        let m = two_shape_model();
        assert_eq!(m.k(), 1);
        assert!((m.mean[0] + 11.0).abs() < 1e-12 && (m.mean[3] - 11.0).abs() < 1e-12);
        assert!((m.eigvals[0] - 2.0).abs() < 1e-9);
        let u = m.eigvecs[0];
        let r = core::f64::consts::FRAC_1_SQRT_2;
        let sign = u[0].signum();
        for (a, e) in u.iter().zip([r, 0.0, 0.0, -r, 0.0, 0.0]) {
            assert!((a - sign * e).abs() < 1e-9);
        }
        assert!((m.m_max - 1.0).abs() < 1e-9);
        let test = sh([-13.0, 0.0, 0.0, 13.0, 0.0, 0.0]);
        assert!((mahalanobis(&test, &m) - 2.0).abs() < 1e-9);
        let b = project(&test, &m)[0];
        assert!((b.abs() - 2.0 * 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(mahalanobis(&sh(m.mean), &m), 0.0);
        assert!(!m.near_degenerate());
    }

    #[test]
    fn orthogonal_component_is_ignored() {
        let m = two_shape_model();
        let mut s = m.mean;
        s[1] += 5.0;
        s[4] -= 5.0;
        assert!(mahalanobis(&sh(s), &m).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let a = sh([-10.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
        assert!(matches!(fit(&[a]), Err(Error::DegenerateModel(_))));
        assert!(matches!(fit(&[a, a, a]), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn jittered_copies_are_near_degenerate() {
        let mut rng = SplitMix64::new(9);
        let shapes: Vec<_> = (0..10)
            .map(|_| {
                let l = [-10.0 + 1e-6 * rng.normal(), 1e-6 * rng.normal(), 2.0];
                let r = [10.0 + 1e-6 * rng.normal(), 1e-6 * rng.normal(), 2.0];
                pair_to_shape(l, r).unwrap()
            })
            .collect();
        let m = fit(&shapes).unwrap();
        assert!(m.eigvals[0] < 1e-10);
        assert!(m.near_degenerate());
    }

    fn random_pairs(seed: u64, n: usize) -> Vec<EarPairShape> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| {
                let c = [rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)];
                let h = [18.0 + 2.0 * rng.normal(), 1.5 * rng.normal(), rng.normal()];
                pair_to_shape([c[0] - h[0], c[1] - h[1], c[2] - h[2]], [c[0] + h[0], c[1] + h[1], c[2] + h[2]]).unwrap()
            })
            .collect()
    }

    fn covariance(shapes: &[EarPairShape], mean: &[f64; 6]) -> [[f64; 6]; 6] {
        let mut c = [[0.0; 6]; 6];
        for s in shapes {
            for r in 0..6 {
                for q in 0..6 {
                    c[r][q] += (s.s[r] - mean[r]) * (s.s[q] - mean[q]) / shapes.len() as f64;
                }
            }
        }
        c
    }

    /// `d^T (C + delta I)^{-1} d` by Gaussian elimination.
    fn regularized_quad(c: &[[f64; 6]; 6], d: &[f64; 6], delta: f64) -> f64 {
        let mut a = [[0.0; 7]; 6];
        for r in 0..6 {
            a[r][..6].copy_from_slice(&c[r]);
            a[r][r] += delta;
            a[r][6] = d[r];
        }
        for col in 0..6 {
            let piv = (col..6).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..6 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for q in col..7 {
                        a[r][q] -= f * a[col][q];
                    }
                }
            }
        }
        (0..6).map(|r| d[r] * a[r][6] / a[r][r]).sum()
    }

    #[test]
    fn eigenpairs_and_rank() {
        for seed in 0..5 {
            let shapes = random_pairs(seed, 40);
            let m = fit(&shapes).unwrap();
            assert!(m.k() <= 3);
            m.validate().unwrap();
            let c = covariance(&shapes, &m.mean);
            for (u, &l) in m.eigvecs.iter().zip(&m.eigvals) {
                let res: f64 = (0..6).map(|r| (dot(&c[r], u) - l * u[r]).powi(2)).sum::<f64>().sqrt();
                assert!(res < 1e-8);
            }
            // Residual after removing retained modes lives outside their span.
            let mut resid = c;
            for (u, &l) in m.eigvecs.iter().zip(&m.eigvals) {
                for r in 0..6 {
                    for q in 0..6 {
                        resid[r][q] -= l * u[r] * u[q];
                    }
                }
            }
            for u in &m.eigvecs {
                for r in 0..6 {
                    assert!(dot(&resid[r], u).abs() < 1e-8);
                }
            }
            for s in &shapes {
                assert!(mahalanobis(s, &m) <= m.m_max);
            }
            assert!(shapes.iter().any(|s| mahalanobis(s, &m) == m.m_max));
        }
    }

    #[test]
    fn mahalanobis_matches_pseudo_inverse() {
        let shapes = random_pairs(77, 30);
        let m = fit(&shapes).unwrap();
        assert_eq!(m.k(), 3);
        let c = covariance(&shapes, &m.mean);
        let trace: f64 = (0..6).map(|i| c[i][i]).sum();
        let delta = 1e-9 * trace;
        for s in shapes.iter().take(10).chain(&random_pairs(78, 10)) {
            let d: [f64; 6] = core::array::from_fn(|a| s.s[a] - m.mean[a]);
            // Richardson extrapolation removes the O(delta) bias.
            let oracle = 2.0 * regularized_quad(&c, &d, delta) - regularized_quad(&c, &d, 2.0 * delta);
            let got = mahalanobis(s, &m).powi(2);
            assert!((oracle - got).abs() <= 1e-8 * got.max(1.0), "{oracle} vs {got}");
        }
    }

    fn side(v: [usize; 3], value: f64) -> SideDetection {
        SideDetection {
            present: value > 0.5,
            peak_voxel: VoxelIndex::from(v),
            peak_value: value,
            rejected_by_shape: false,
        }
    }

    #[test]
    fn constraint_rejects_weaker_side() {
        let m = two_shape_model();
        let geom = GridGeometry { dims: [64, 8, 8], spacing: [1.0; 3], origin: [0.0; 3] };
        // 26 mm apart: M = 2 > m_max = 1.
        let res = DetectionResult { left: side([10, 4, 4], 0.9), right: side([36, 4, 4], 0.6) };
        let out = apply_constraint(&res, &m, &geom);
        assert!(out.left.present && !out.right.present && out.right.rejected_by_shape);
        assert_eq!(out.right.peak_voxel, res.right.peak_voxel);
        assert_eq!(out.category(), Category::L);

        let tie = DetectionResult { left: side([10, 4, 4], 0.7), right: side([36, 4, 4], 0.7) };
        assert!(apply_constraint(&tie, &m, &geom).right.rejected_by_shape);

        let ok = DetectionResult { left: side([10, 4, 4], 0.9), right: side([32, 4, 4], 0.6) };
        assert_eq!(apply_constraint(&ok, &m, &geom), ok);

        let single = DetectionResult { left: side([10, 4, 4], 0.9), right: side([60, 4, 4], 0.2) };
        assert_eq!(apply_constraint(&single, &m, &geom), single);

        let same = DetectionResult { left: side([10, 4, 4], 0.6), right: side([10, 4, 4], 0.9) };
        let out = apply_constraint(&same, &m, &geom);
        assert!(out.left.rejected_by_shape && out.right.present);
    }

    #[test]
    fn voxel_space_switch() {
        let geom = GridGeometry { dims: [64, 8, 8], spacing: [2.0; 3], origin: [5.0; 3] };
        let v = VoxelIndex::new(3, 1, 2);
        assert_eq!(ShapeSpace::Voxel.point(v, &geom), [3.0, 1.0, 2.0]);
        assert_eq!(ShapeSpace::Mm.point(v, &geom), [11.0, 7.0, 9.0]);
        let m = fit_with(
            &[sh([-10.0, 0.0, 0.0, 10.0, 0.0, 0.0]), sh([-12.0, 0.0, 0.0, 12.0, 0.0, 0.0])],
            3,
            ShapeSpace::Voxel,
        )
        .unwrap();
        let res = DetectionResult { left: side([10, 4, 4], 0.9), right: side([36, 4, 4], 0.6) };
        assert!(apply_constraint(&res, &m, &geom).right.rejected_by_shape);
        assert_eq!(ShapeSpace::parse(ShapeSpace::Voxel.as_str()), Some(ShapeSpace::Voxel));
    }

    proptest! {
        #[test]
        fn translation_invariance(seed in any::<u64>(), t in prop::array::uniform3(-100i32..100)) {
            let mut rng = SplitMix64::new(seed ^ 0x55);
            let l = [rng.uniform(-30.0, 0.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
            let r = [rng.uniform(0.0, 30.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
            let tf = t.map(|x| x as f64);
            let a = pair_to_shape(l, r).unwrap();
            let b = pair_to_shape(core::array::from_fn(|i| l[i] + tf[i]), core::array::from_fn(|i| r[i] + tf[i])).unwrap();
            for (x, y) in a.s.iter().zip(&b.s) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            for a3 in 0..3 {
                prop_assert!((a.s[a3] + a.s[3 + a3]).abs() < 1e-9);
            }
        }

        #[test]
        fn voxel_translation_keeps_decision(seed in any::<u64>(), dx in 0usize..10, dy in 0usize..10) {
            let shapes = random_pairs(seed, 12);
            let m = fit(&shapes).unwrap();
            let geom = GridGeometry { dims: [64, 64, 64], spacing: [1.0; 3], origin: [0.0; 3] };
            let mut rng = SplitMix64::new(seed);
            let li = [rng.below(20) as usize, rng.below(20) as usize, rng.below(20) as usize];
            let ri = [30 + rng.below(20) as usize, rng.below(20) as usize, rng.below(20) as usize];
            let res = DetectionResult { left: side(li, 0.8), right: side(ri, 0.7) };
            let moved = DetectionResult {
                left: side([li[0] + dx, li[1] + dy, li[2]], 0.8),
                right: side([ri[0] + dx, ri[1] + dy, ri[2]], 0.7),
            };
            let a = apply_constraint(&res, &m, &geom);
            let b = apply_constraint(&moved, &m, &geom);
            prop_assert_eq!(pair_distance(&res, &m, &geom).map(f64::to_bits), pair_distance(&moved, &m, &geom).map(f64::to_bits));
            prop_assert_eq!(a.left.present, b.left.present);
            prop_assert_eq!(a.right.present, b.right.present);
            prop_assert!(!(a.left.rejected_by_shape && a.right.rejected_by_shape));
        }
    }
}

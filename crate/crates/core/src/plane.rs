//! Ground-plane estimation and the plane-aligned coordinate frame.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;

use crate::cloud::ColoredPointCloud;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::rng::{stream_rng, streams};

/// Minimum consensus fraction for a plane to be accepted.
pub const MIN_INLIER_FRACTION: f64 = 0.05;

/// Inlier distance, absolute or relative to the cloud's bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    RelativeToDiagonal(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::RelativeToDiagonal(0.01)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub threshold: Threshold,
    pub iterations: usize,
    pub seed: u64,
    /// Hypotheses are scored on a seeded random subset of at most this many
    /// points; the final consensus set is taken over the full cloud.
    pub max_scoring_points: usize,
    /// Least-squares passes after consensus. Each pass re-selects the
    /// inliers around the previous estimate; passes stop early once the
    /// inlier set no longer changes.
    pub refinement_passes: usize,
    pub parallelism: Parallelism,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: Threshold::default(),
            iterations: 1024,
            seed: 0,
            max_scoring_points: 1 << 16,
            refinement_passes: 10,
            parallelism: Parallelism::default(),
        }
    }
}

/// Plane `n·x + offset = 0` with an orthonormal right-handed frame
/// `{basis_u, basis_v, normal}` anchored at `centroid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub basis_u: Vector3<f64>,
    pub basis_v: Vector3<f64>,
    pub centroid: Vector3<f64>,
    pub inlier_fraction: f64,
    /// Absolute inlier threshold used for the fit; doubles as the height
    /// band for orientation decisions.
    pub threshold: f64,
}

impl GroundPlane {
    /// Plane through `centroid` with normal direction `normal` (normalized
    /// here), frame already built.
    pub fn from_point_normal(centroid: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let norm = normal.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateGeometry("zero or non-finite normal".into()));
        }
        let normal = normal / norm;
        Ok(build_frame(Self {
            normal,
            offset: -normal.dot(&centroid),
            basis_u: Vector3::zeros(),
            basis_v: Vector3::zeros(),
            centroid,
            inlier_fraction: 1.0,
            threshold: 0.0,
        }))
    }

    /// Signed distance of `p` from the plane.
    pub fn signed_distance(&self, p: &[f64; 3]) -> f64 {
        self.normal.dot(&Vector3::from(*p)) + self.offset
    }

    /// Coefficients `(a, b, c, d)` of `a x + b y + c z + d = 0`.
    pub fn coefficients(&self) -> [f64; 4] {
        [self.normal.x, self.normal.y, self.normal.z, self.offset]
    }

    pub fn to_plane(&self, p: &[f64; 3]) -> [f64; 3] {
        let d = Vector3::from(*p) - self.centroid;
        [d.dot(&self.basis_u), d.dot(&self.basis_v), d.dot(&self.normal)]
    }

    pub fn to_world(&self, uvh: &[f64; 3]) -> [f64; 3] {
        let x = self.centroid + self.basis_u * uvh[0] + self.basis_v * uvh[1] + self.normal * uvh[2];
        [x.x, x.y, x.z]
    }
}

/// Builds `{u, v, n}`: `u` is the world axis with the smallest `|n_k|`
/// (lowest index on ties) projected onto the plane, `v = n × u`.
pub fn build_frame(mut plane: GroundPlane) -> GroundPlane {
    let n = plane.normal;
    let k = (0..3).fold(0, |best, k| if n[k].abs() < n[best].abs() { k } else { best });
    let axis = Vector3::ith(k, 1.0);
    let u = (axis - n * n[k]).normalize();
    plane.basis_u = u;
    plane.basis_v = n.cross(&u);
    plane
}

/// Points expressed as `(u, v, h)` in a plane frame, colors carried along.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePointSet {
    pub coords: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl PlanePointSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.coords.iter().map(|c| c[2])
    }
}

pub fn to_plane_coords(cloud: &ColoredPointCloud, plane: &GroundPlane) -> PlanePointSet {
    PlanePointSet {
        coords: cloud.points().iter().map(|p| plane.to_plane(p)).collect(),
        colors: cloud.colors().to_vec(),
    }
}

/// Makes "up" the side holding more off-plane mass. Points farther than
/// the plane threshold above and below are counted; if fewer are above,
/// the normal, `basis_v`, and every height are negated.
pub fn fix_orientation(mut pts: PlanePointSet, mut plane: GroundPlane) -> (PlanePointSet, GroundPlane) {
    let eps = plane.threshold;
    let (above, below) = pts.heights().fold((0usize, 0usize), |(a, b), h| {
        (a + (h > eps) as usize, b + (h < -eps) as usize)
    });
    if above < below {
        plane.normal = -plane.normal;
        plane.offset = -plane.offset;
        plane.basis_v = -plane.basis_v;
        for c in &mut pts.coords {
            c[1] = -c[1];
            c[2] = -c[2];
        }
    }
    (pts, plane)
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// True when some point lies off the line through the first point and the
/// point farthest from it.
fn has_noncollinear_triple(points: &[[f64; 3]]) -> bool {
    let Some(p0) = points.first().map(v3) else {
        return false;
    };
    let far = points
        .iter()
        .map(|p| v3(p) - p0)
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
        .unwrap();
    let len = far.norm();
    if len == 0.0 {
        return false;
    }
    let dir = far / len;
    points.iter().any(|p| (v3(p) - p0).cross(&dir).norm() > 1e-12 * len)
}

/// Total-least-squares plane: centroid and smallest-eigenvalue eigenvector
/// of the scatter matrix.
pub(crate) fn least_squares_plane<'a>(
    points: impl Iterator<Item = &'a [f64; 3]> + Clone,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let mut n = 0usize;
    let mut sum = Vector3::zeros();
    for p in points.clone() {
        sum += v3(p);
        n += 1;
    }
    if n < 3 {
        return None;
    }
    let centroid = sum / n as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = v3(p) - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let k = eig.eigenvalues.imin();
    Some((centroid, eig.eigenvectors.column(k).into_owned()))
}

#[derive(Clone, Copy)]
struct Hypothesis {
    normal: Vector3<f64>,
    offset: f64,
    score: usize,
}

fn hypothesis(points: &[[f64; 3]], seed: u64, iteration: usize) -> Option<(Vector3<f64>, f64)> {
    let mut rng = stream_rng(seed, streams::RANSAC + iteration as u64);
    let n = points.len();
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let mut k = rng.random_range(0..n - 2);
    for m in [i.min(j), i.max(j)] {
        if k >= m {
            k += 1;
        }
    }
    let (a, b, c) = (v3(&points[i]), v3(&points[j]), v3(&points[k]));
    let normal = (b - a).cross(&(c - a));
    let len = normal.norm();
    let scale = (b - a).norm() * (c - a).norm();
    if !(len > 1e-12 * scale) {
        return None;
    }
    let normal = normal / len;
    Some((normal, -normal.dot(&a)))
}

/// Robust plane fit: seeded RANSAC over three-point hypotheses, then
/// total-least-squares refinement over the consensus set.
///
/// Each iteration draws from its own RNG stream and ties go to the lowest
/// iteration index, so the result does not depend on `parallelism`.
pub fn fit_plane_ransac(cloud: &ColoredPointCloud, params: &RansacParams) -> Result<GroundPlane> {
    let points = cloud.points();
    if points.len() < 3 || !has_noncollinear_triple(points) {
        return Err(Error::DegenerateGeometry(
            "plane fitting needs at least 3 non-collinear points".into(),
        ));
    }
    let threshold = match params.threshold {
        Threshold::Absolute(t) => t,
        Threshold::RelativeToDiagonal(f) => f * cloud.bounding_box()?.diagonal(),
    };
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::domain(format!(
            "RANSAC threshold must be positive, got {threshold}"
        )));
    }
    if params.iterations == 0 {
        return Err(Error::domain("RANSAC needs at least one iteration"));
    }

    let scoring: Vec<[f64; 3]> = if points.len() > params.max_scoring_points.max(3) {
        let mut rng = stream_rng(params.seed, streams::RANSAC_SCORING);
        (0..params.max_scoring_points)
            .map(|_| points[rng.random_range(0..points.len())])
            .collect()
    } else {
        points.to_vec()
    };

    let hypotheses = exec::map_range(params.parallelism, params.iterations, |it| {
        hypothesis(points, params.seed, it).map(|(normal, offset)| Hypothesis {
            normal,
            offset,
            score: scoring
                .iter()
                .filter(|p| (normal.dot(&v3(p)) + offset).abs() <= threshold)
                .count(),
        })
    });
    let best = hypotheses
        .into_iter()
        .flatten()
        .fold(None::<Hypothesis>, |best, h| match best {
            Some(b) if b.score >= h.score => Some(b),
            _ => Some(h),
        })
        .ok_or_else(|| Error::DegenerateGeometry("every RANSAC sample was collinear".into()))?;

    let inlier_count = |normal: &Vector3<f64>, offset: f64| {
        points
            .iter()
            .filter(|p| (normal.dot(&v3(p)) + offset).abs() <= threshold)
            .count()
    };
    let (mut normal, mut offset) = (best.normal, best.offset);
    let mut count = inlier_count(&normal, offset);
    let mut centroid = Vector3::zeros();
    for _ in 0..params.refinement_passes.max(1) {
        let inlier_fraction = count as f64 / points.len() as f64;
        if inlier_fraction < MIN_INLIER_FRACTION {
            return Err(Error::NoPlane { inlier_fraction });
        }
        let inliers = points
            .iter()
            .filter(|p| (normal.dot(&v3(p)) + offset).abs() <= threshold);
        let (c, mut n) = least_squares_plane(inliers)
            .ok_or_else(|| Error::DegenerateGeometry("consensus set has fewer than 3 points".into()))?;
        if n.dot(&normal) < 0.0 {
            n = -n;
        }
        let next = inlier_count(&n, -n.dot(&c));
        let settled = next == count;
        (centroid, normal, offset, count) = (c, n, -n.dot(&c), next);
        if settled {
            break;
        }
    }
    let inlier_fraction = count as f64 / points.len() as f64;
    if inlier_fraction < MIN_INLIER_FRACTION {
        return Err(Error::NoPlane { inlier_fraction });
    }
    let mut plane = GroundPlane::from_point_normal(centroid, normal)?;
    plane.inlier_fraction = inlier_fraction;
    plane.threshold = threshold;
    Ok(plane)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal, UnitSphere};

    fn cloud(points: Vec<[f64; 3]>) -> ColoredPointCloud {
        let n = points.len();
        ColoredPointCloud::new(points, vec![[128; 3]; n]).unwrap()
    }

    fn params(threshold: f64, seed: u64) -> RansacParams {
        RansacParams {
            threshold: Threshold::Absolute(threshold),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_plane() {
        let mut rng = stream_rng(1, 0);
        let pts = (0..1000)
            .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0])
            .collect();
        let plane = fit_plane_ransac(&cloud(pts), &params(0.01, 3)).unwrap();
        assert!((plane.normal.z.abs() - 1.0).abs() < 1e-12);
        assert!(plane.offset.abs() <= 1e-9);
        assert_eq!(plane.inlier_fraction, 1.0);
    }

    #[test]
    fn minimal_three_points() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let plane = fit_plane_ransac(&cloud(pts), &params(1e-6, 0)).unwrap();
        assert!((plane.normal.z.abs() - 1.0).abs() < 1e-12);
        assert!(plane.offset.abs() < 1e-12);
    }

    #[test]
    fn collinear_and_tiny_inputs_are_degenerate() {
        let line = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(
            fit_plane_ransac(&cloud(line), &params(0.1, 0)),
            Err(Error::DegenerateGeometry(_))
        ));
        let two = vec![[0.0; 3], [1.0, 0.0, 0.0]];
        assert!(matches!(
            fit_plane_ransac(&cloud(two), &params(0.1, 0)),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn sphere_shell_has_no_plane() {
        let mut rng = stream_rng(5, 0);
        let pts = (0..20_000)
            .map(|_| {
                let d: [f64; 3] = UnitSphere.sample(&mut rng);
                d.map(|c| 10.0 * c)
            })
            .collect();
        let err = fit_plane_ransac(&cloud(pts), &RansacParams::default()).unwrap_err();
        assert!(matches!(err, Error::NoPlane { .. }), "{err:?}");
    }

    /// 70% of points on z = 5 with sigma 0.01, 30% uniform in a 10-unit box.
    fn noisy_scene(seed: u64) -> ColoredPointCloud {
        let mut rng = stream_rng(seed, 0);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts = (0..10_000)
            .map(|i| {
                let (x, y) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
                if i % 10 < 7 {
                    [x, y, 5.0 + noise.sample(&mut rng)]
                } else {
                    [x, y, rng.random_range(0.0..10.0)]
                }
            })
            .collect();
        cloud(pts)
    }

    #[test]
    fn outlier_contaminated_plane_within_a_tenth_degree() {
        for seed in 0..20 {
            let plane = fit_plane_ransac(&noisy_scene(seed), &params(0.05, seed)).unwrap();
            let angle = plane.normal.z.abs().min(1.0).acos().to_degrees();
            assert!(angle < 0.1, "seed {seed}: {angle} deg");
            assert!((plane.signed_distance(&[3.0, 3.0, 5.0])).abs() < 0.01);
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let c = noisy_scene(9);
        let mut p = params(0.05, 9);
        p.parallelism = Parallelism::Sequential;
        let a = fit_plane_ransac(&c, &p).unwrap();
        p.parallelism = Parallelism::Parallel;
        let b = fit_plane_ransac(&c, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, fit_plane_ransac(&c, &p).unwrap());
    }

    #[test]
    fn frame_for_vertical_normal() {
        let p = GroundPlane::from_point_normal(Vector3::zeros(), Vector3::z()).unwrap();
        assert_eq!(p.basis_u, Vector3::x());
        assert_eq!(p.basis_v, Vector3::y());
    }

    #[test]
    fn frame_for_x_normal_is_right_handed() {
        let p = GroundPlane::from_point_normal(Vector3::zeros(), Vector3::x()).unwrap();
        assert_eq!(p.basis_u, Vector3::y());
        assert_eq!(p.basis_v, Vector3::x().cross(&Vector3::y()));
        assert_eq!(p.basis_u.cross(&p.basis_v), p.normal);
    }

    #[test]
    fn random_frames_are_orthonormal_and_right_handed() {
        let mut rng = stream_rng(2, 0);
        for _ in 0..1000 {
            let n: [f64; 3] = UnitSphere.sample(&mut rng);
            let p = GroundPlane::from_point_normal(Vector3::zeros(), Vector3::from(n)).unwrap();
            let (u, v, n) = (p.basis_u, p.basis_v, p.normal);
            assert!(u.dot(&v).abs() <= 1e-10 && u.dot(&n).abs() <= 1e-10 && v.dot(&n).abs() <= 1e-10);
            assert!((n.norm() - 1.0).abs() <= 1e-12);
            let det = Matrix3::from_columns(&[u, v, n]).determinant();
            assert!((det - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn centroid_and_normal_offsets_map_as_expected() {
        let n = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let c = Vector3::new(4.0, -1.0, 7.0);
        let p = GroundPlane::from_point_normal(c, n).unwrap();
        let origin = p.to_plane(&[c.x, c.y, c.z]);
        assert_eq!(origin, [0.0, 0.0, 0.0]);
        let up = c + n * 2.0;
        let q = p.to_plane(&[up.x, up.y, up.z]);
        assert!(q[0].abs() < 1e-15 && q[1].abs() < 1e-15 && (q[2] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn plane_coords_round_trip() {
        let c = noisy_scene(4);
        let plane = fit_plane_ransac(&c, &params(0.05, 4)).unwrap();
        let diag = c.bounding_box().unwrap().diagonal();
        let pts = to_plane_coords(&c, &plane);
        for (x, uvh) in c.points().iter().zip(&pts.coords) {
            let back = plane.to_world(uvh);
            for k in 0..3 {
                assert!((back[k] - x[k]).abs() < 1e-9 * diag);
            }
        }
    }

    #[test]
    fn orientation_fix() {
        let plane = GroundPlane {
            threshold: 0.1,
            ..GroundPlane::from_point_normal(Vector3::zeros(), Vector3::z()).unwrap()
        };
        let up = PlanePointSet {
            coords: vec![[0.0, 1.0, 0.0], [1.0, 1.0, 3.0], [2.0, 1.0, 3.0]],
            colors: vec![[0; 3]; 3],
        };
        let (same, p2) = fix_orientation(up.clone(), plane);
        assert_eq!(same, up);
        assert_eq!(p2, plane);

        let down = PlanePointSet {
            coords: vec![[0.0, 1.0, 0.0], [1.0, 1.0, -3.0], [2.0, 1.0, -3.0]],
            colors: vec![[0; 3]; 3],
        };
        let (fixed, flipped) = fix_orientation(down, plane);
        let hs: Vec<f64> = fixed.heights().collect();
        assert_eq!(hs, vec![-0.0, 3.0, 3.0]);
        assert_eq!(flipped.normal, -Vector3::z());
        let det = Matrix3::from_columns(&[flipped.basis_u, flipped.basis_v, flipped.normal]).determinant();
        assert!((det - 1.0).abs() < 1e-12);
        // coords still reconstruct the same world points
        assert_eq!(flipped.to_world(&fixed.coords[1]), [1.0, 1.0, -3.0]);
        let (again, p3) = fix_orientation(fixed.clone(), flipped);
        assert_eq!(again, fixed);
        assert_eq!(p3, flipped);
    }

    #[test]
    fn inverted_city_is_flipped_upright() {
        // ground at z = 0 plus "buildings" hanging below, as an upside-down reconstruction looks
        let mut rng = stream_rng(8, 0);
        let mut pts = Vec::new();
        for _ in 0..4000 {
            pts.push([rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), 0.0]);
        }
        for _ in 0..1500 {
            pts.push([
                rng.random_range(10.0..20.0),
                rng.random_range(10.0..20.0),
                -rng.random_range(0.0..8.0),
            ]);
        }
        let c = cloud(pts);
        let plane = fit_plane_ransac(&c, &params(0.05, 1)).unwrap();
        let plane = GroundPlane {
            normal: Vector3::new(0.0, 0.0, 1.0) * plane.normal.z.signum(),
            ..plane
        };
        let (pts, _) = fix_orientation(to_plane_coords(&c, &plane), plane);
        let mut hs: Vec<f64> = pts.heights().collect();
        hs.sort_by(f64::total_cmp);
        assert!(hs[(hs.len() as f64 * 0.95) as usize] > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn heights_are_rigid_invariant(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.1f64..3.1,
            shift in prop::array::uniform3(-100.0f64..100.0),
        ) {
            prop_assume!(Vector3::from(axis).norm() > 1e-3);
            let base = noisy_scene(21);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
            let moved = base
                .map_points(|p| {
                    let q = rot * Vector3::from(p) + Vector3::from(shift);
                    [q.x, q.y, q.z]
                })
                .unwrap();
            let diag = base.bounding_box().unwrap().diagonal();
            let heights = |c: &ColoredPointCloud| {
                let plane = fit_plane_ransac(c, &params(0.05, 21)).unwrap();
                let (pts, _) = fix_orientation(to_plane_coords(c, &plane), plane);
                let mut h: Vec<f64> = pts.heights().collect();
                h.sort_by(f64::total_cmp);
                h
            };
            for (a, b) in heights(&base).iter().zip(heights(&moved)) {
                prop_assert!((a - b).abs() <= 1e-9 * diag, "{} vs {}", a, b);
            }
        }
    }
}

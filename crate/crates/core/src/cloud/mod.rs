//! Colored point clouds and their PLY serialization.

mod ply;

pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyLoad};

use crate::error::{Error, Result};

/// Positions and 8-bit colors of a reconstructed scene.
///
/// Coordinates are kept in double precision; PLY output narrows them to
/// float32, so clouds loaded from float64 files lose precision on save.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPointCloud {
    points: Vec<[f64; 3]>,
    colors: Vec<[u8; 3]>,
}

impl ColoredPointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if points.len() != colors.len() {
            return Err(Error::Schema(format!(
                "{} points but {} colors",
                points.len(),
                colors.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::domain(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points, colors })
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            points: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    /// Appends a point; non-finite coordinates are rejected.
    pub fn push(&mut self, point: [f64; 3], color: [u8; 3]) -> Result<()> {
        if !point.iter().all(|c| c.is_finite()) {
            return Err(Error::domain("non-finite coordinate"));
        }
        self.points.push(point);
        self.colors.push(color);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    /// Applies `f` to every position. The result must stay finite.
    pub fn map_points(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        Self::new(self.points.iter().map(|&p| f(p)).collect(), self.colors.clone())
    }

    pub fn bounding_box(&self) -> Result<Aabb> {
        Aabb::from_points(&self.points)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_points(points: &[[f64; 3]]) -> Result<Self> {
        let (first, rest) = points
            .split_first()
            .ok_or_else(|| Error::domain("bounding box of an empty cloud"))?;
        let mut min = *first;
        let mut max = *first;
        for p in rest {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let [dx, dy, dz] = self.extent();
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_point_box_is_degenerate() {
        let b = Aabb::from_points(&[[1.0, -2.0, 3.5]]).unwrap();
        assert_eq!(b.min, b.max);
        assert_eq!(b.diagonal(), 0.0);
    }

    #[test]
    fn pythagorean_diagonal() {
        let b = Aabb::from_points(&[[0.0, 0.0, 0.0], [1.0, 2.0, 2.0]]).unwrap();
        assert_eq!(b.diagonal(), 3.0);
    }

    #[test]
    fn empty_cloud_has_no_box() {
        assert!(matches!(
            ColoredPointCloud::default().bounding_box(),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn random_box_matches_componentwise_scan() {
        let mut rng = stream_rng(11, 0);
        let pts: Vec<[f64; 3]> = (0..5000)
            .map(|_| {
                [
                    rng.random_range(-50.0..50.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(-1e3..1e3),
                ]
            })
            .collect();
        let b = Aabb::from_points(&pts).unwrap();
        for k in 0..3 {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(b.min[k], lo);
            assert_eq!(b.max[k], hi);
        }
    }

    #[test]
    fn rejects_mismatched_lengths_and_nan() {
        assert!(ColoredPointCloud::new(vec![[0.0; 3]], vec![]).is_err());
        assert!(ColoredPointCloud::new(vec![[f64::NAN, 0.0, 0.0]], vec![[0; 3]]).is_err());
    }

    proptest! {
        #[test]
        fn box_is_permutation_invariant(
            mut pts in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..64),
            rot in 0usize..64,
        ) {
            let a = Aabb::from_points(&pts).unwrap();
            let n = pts.len();
            pts.rotate_left(rot % n);
            pts.reverse();
            prop_assert_eq!(a, Aabb::from_points(&pts).unwrap());
            for p in &pts {
                for k in 0..3 {
                    prop_assert!(a.min[k] <= p[k] && p[k] <= a.max[k]);
                }
            }
        }
    }
}

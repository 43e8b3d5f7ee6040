//! Multi-resolution spatially-hashed Gaussian voxelmaps and the overlap-rate
//! metric between clouds.
//!
//! Each level stores one averaged Gaussian per occupied voxel; level `l` has
//! resolution `r0 * 2^(l-1)`. A single inserted point already forms a valid
//! voxel distribution, so distant sparse voxels stay usable.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use nalgebra::{Matrix3, Vector3};

use crate::cloud::GaussianPointCloud;
use crate::geometry::Pose;

/// Integer voxel coordinate `floor(p / r)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VoxelCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    #[inline]
    pub fn of(p: &Vector3<f64>, inv_resolution: f64) -> Self {
        Self {
            x: (p.x * inv_resolution).floor() as i32,
            y: (p.y * inv_resolution).floor() as i32,
            z: (p.z * inv_resolution).floor() as i32,
        }
    }

}

/// Deterministic 64-bit mixing hasher for voxel coordinates (fixed keys,
/// stable across runs, which keeps map iteration reproducible for identical
/// inserts); collisions fall back to exact key comparison in the map.
#[derive(Default)]
pub struct VoxelHasher(u64);

impl Hasher for VoxelHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        // VoxelCoord hashes via write_i32 below; this path only runs for
        // derived Hash impls on composite keys.
        for &b in bytes {
            self.0 = self.0.rotate_left(8) ^ b as u64;
        }
    }

    fn write_i32(&mut self, i: i32) {
        self.0 = self
            .0
            .rotate_left(21)
            .wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.0 ^= self.0 >> 29;
    }
}

pub type VoxelHashMap<V> = HashMap<VoxelCoord, V, BuildHasherDefault<VoxelHasher>>;

/// Averaged Gaussian of the points merged into one voxel.
#[derive(Clone, Debug)]
pub struct GaussianVoxel {
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub count: u32,
}

/// One resolution level of the voxelmap.
pub struct VoxelLevel {
    pub resolution: f64,
    inv_resolution: f64,
    map: VoxelHashMap<GaussianVoxel>,
}

impl VoxelLevel {
    fn new(resolution: f64) -> Self {
        Self { resolution, inv_resolution: 1.0 / resolution, map: VoxelHashMap::default() }
    }

    #[inline]
    pub fn coord_of(&self, p: &Vector3<f64>) -> VoxelCoord {
        VoxelCoord::of(p, self.inv_resolution)
    }

    #[inline]
    pub fn lookup(&self, p: &Vector3<f64>) -> Option<&GaussianVoxel> {
        self.map.get(&self.coord_of(p))
    }

    #[inline]
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.map.contains_key(&self.coord_of(p))
    }

    pub fn voxel_count(&self) -> usize {
        self.map.len()
    }

    pub fn voxels(&self) -> impl Iterator<Item = (&VoxelCoord, &GaussianVoxel)> {
        self.map.iter()
    }
}

/// Spatially-hashed Gaussian voxelmaps at `L` power-of-two resolutions.
pub struct MultiResolutionVoxelMap {
    pub levels: Vec<VoxelLevel>,
}

impl MultiResolutionVoxelMap {
    /// Builds all levels from a Gaussian cloud. Voxel mean/covariance are the
    /// arithmetic averages of the member points.
    pub fn build(cloud: &GaussianPointCloud, base_resolution: f64, num_levels: usize) -> Self {
        assert!(base_resolution > 0.0 && num_levels >= 1);
        let mut levels: Vec<VoxelLevel> = (0..num_levels)
            .map(|l| VoxelLevel::new(base_resolution * (1u32 << l) as f64))
            .collect();
        for level in &mut levels {
            for (mean, cov) in cloud.means.iter().zip(&cloud.covariances) {
                let coord = level.coord_of(mean);
                let voxel = level.map.entry(coord).or_insert_with(|| GaussianVoxel {
                    mean: Vector3::zeros(),
                    covariance: Matrix3::zeros(),
                    count: 0,
                });
                voxel.mean += mean;
                voxel.covariance += cov;
                voxel.count += 1;
            }
            for voxel in level.map.values_mut() {
                let inv = 1.0 / voxel.count as f64;
                voxel.mean *= inv;
                voxel.covariance *= inv;
            }
        }
        Self { levels }
    }

    /// Per-level containing voxel (no neighbor search beyond the voxel the
    /// point falls in).
    pub fn lookup(&self, p: &Vector3<f64>) -> Vec<Option<&GaussianVoxel>> {
        self.levels.iter().map(|level| level.lookup(p)).collect()
    }

    pub fn base(&self) -> &VoxelLevel {
        &self.levels[0]
    }
}

/// Fraction of `cloud_i` points whose world position, expressed in frame `j`,
/// lands in an occupied base-resolution voxel of `map_j`. Empty clouds rate 0.
pub fn overlap_rate(
    cloud_i: &GaussianPointCloud,
    pose_i: &Pose,
    map_j: &MultiResolutionVoxelMap,
    pose_j: &Pose,
) -> f64 {
    if cloud_i.is_empty() {
        return 0.0;
    }
    let rel = pose_j.inverse() * *pose_i;
    let base = map_j.base();
    let inside = cloud_i.means.iter().filter(|p| base.contains(&rel.transform(p))).count();
    inside as f64 / cloud_i.len() as f64
}

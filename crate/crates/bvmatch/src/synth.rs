//! Synthetic road-scene generator.
//!
//! Builds clouds from the structures that matter for BV imagery: a ground
//! plane, vertical poles and planar facades. Poles and facades project to
//! point and line features, which is what the detector keys on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};

/// Parameters of a synthetic scene. Structures are placed uniformly at
/// random inside `[-half_extent, half_extent]^2`; explicitly listed poles
/// and facades are generated in addition to the random ones.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    /// Placement range for random structures, meters.
    pub half_extent: f64,
    /// Ground plane half-size, meters.
    pub ground_extent: f64,
    /// Ground sampling step, meters.
    pub ground_spacing: f64,
    /// Uniform jitter half-width applied to ground samples, meters. Breaks
    /// the lattice regularity that real ground returns never have.
    pub ground_jitter: f64,
    /// Number of randomly placed poles.
    pub pole_count: usize,
    /// Extra poles at fixed (x, y) positions.
    pub fixed_poles: Vec<[f64; 2]>,
    /// Pole height, meters.
    pub pole_height: f64,
    /// Points generated per meter of pole height.
    pub pole_density: f64,
    /// Pole radius, meters. Points scatter uniformly inside the shaft.
    pub pole_radius: f64,
    /// Number of randomly placed facades.
    pub facade_count: usize,
    /// Facade length along the wall, meters.
    pub facade_length: f64,
    /// Facade height, meters.
    pub facade_height: f64,
    /// Sampling step on the facade plane, meters.
    pub facade_spacing: f64,
    /// Wall thickness, meters. Points scatter uniformly through the depth.
    pub facade_thickness: f64,
    /// Standard deviation of isotropic Gaussian noise added per point.
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            half_extent: 30.0,
            ground_extent: 45.0,
            ground_spacing: 1.0,
            ground_jitter: 0.4,
            pole_count: 24,
            fixed_poles: Vec::new(),
            pole_height: 8.0,
            pole_density: 25.0,
            pole_radius: 0.25,
            facade_count: 10,
            facade_length: 12.0,
            facade_height: 7.5,
            facade_spacing: 0.3,
            facade_thickness: 0.4,
            noise_sigma: 0.0,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if !(self.half_extent > 0.0) || !(self.ground_extent > 0.0) {
            return Err(Error::InvalidParam("scene extent must be positive".into()));
        }
        if !(self.ground_spacing > 0.0) || !(self.facade_spacing > 0.0) {
            return Err(Error::InvalidParam(
                "sampling spacings must be positive".into(),
            ));
        }
        if (self.pole_count > 0 || !self.fixed_poles.is_empty())
            && (!(self.pole_height > 0.0) || !(self.pole_density > 0.0))
        {
            return Err(Error::InvalidParam(
                "pole height and density must be positive".into(),
            ));
        }
        if self.facade_count > 0 && (!(self.facade_length > 0.0) || !(self.facade_height > 0.0)) {
            return Err(Error::InvalidParam(
                "facade dimensions must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParam("noise sigma must be >= 0".into()));
        }
        if !(self.ground_jitter >= 0.0) {
            return Err(Error::InvalidParam("ground jitter must be >= 0".into()));
        }
        Ok(())
    }
}

/// Generates a deterministic synthetic scene for the given seed.
pub fn synth_scene(seed: u64, spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();

    // Ground plane: a jittered grid.
    let e = spec.ground_extent;
    let step = spec.ground_spacing;
    let jitter = spec.ground_jitter;
    let n = (2.0 * e / step).floor() as i64;
    for i in 0..=n {
        for j in 0..=n {
            let (dx, dy) = if jitter > 0.0 {
                (
                    rng.gen_range(-jitter..jitter),
                    rng.gen_range(-jitter..jitter),
                )
            } else {
                (0.0, 0.0)
            };
            points.push(Point3::new(
                -e + i as f64 * step + dx,
                -e + j as f64 * step + dy,
                0.0,
            ));
        }
    }

    // Poles: explicit positions first, then random placements.
    let mut poles: Vec<[f64; 2]> = spec.fixed_poles.clone();
    for _ in 0..spec.pole_count {
        poles.push([
            rng.gen_range(-spec.half_extent..spec.half_extent),
            rng.gen_range(-spec.half_extent..spec.half_extent),
        ]);
    }
    for [px, py] in &poles {
        let count = (spec.pole_height * spec.pole_density).round() as usize;
        for k in 0..count {
            let z = (k as f64 + 0.5) / spec.pole_density;
            let (dx, dy) = if spec.pole_radius > 0.0 {
                let r = spec.pole_radius * rng.gen_range(0.0f64..1.0).sqrt();
                let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                (r * phi.cos(), r * phi.sin())
            } else {
                (0.0, 0.0)
            };
            points.push(Point3::new(px + dx, py + dy, z));
        }
    }

    // Facades: vertical wall segments with random position and heading.
    for _ in 0..spec.facade_count {
        let cx = rng.gen_range(-spec.half_extent..spec.half_extent);
        let cy = rng.gen_range(-spec.half_extent..spec.half_extent);
        let phi = rng.gen_range(0.0..std::f64::consts::PI);
        let (s, c) = phi.sin_cos();
        let ns = (spec.facade_length / spec.facade_spacing).floor() as i64;
        let nz = (spec.facade_height / spec.facade_spacing).floor() as i64;
        for i in 0..=ns {
            let along = -spec.facade_length / 2.0 + i as f64 * spec.facade_spacing;
            for k in 0..=nz {
                let depth = if spec.facade_thickness > 0.0 {
                    rng.gen_range(-spec.facade_thickness / 2.0..spec.facade_thickness / 2.0)
                } else {
                    0.0
                };
                points.push(Point3::new(
                    cx + along * c - depth * s,
                    cy + along * s + depth * c,
                    k as f64 * spec.facade_spacing,
                ));
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidParam(format!("noise sigma: {e}")))?;
        for p in points.iter_mut() {
            p.x += normal.sample(&mut rng);
            p.y += normal.sample(&mut rng);
            p.z += normal.sample(&mut rng);
        }
    }

    Ok(PointCloud::new(points, format!("synth-{seed}")))
}

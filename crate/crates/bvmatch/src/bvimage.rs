//! Bird's-eye-view density images.
//!
//! A cloud is binned onto a square ground-plane grid of resolution `g`
//! covering `[-half, half]` in x and y. Per-cell point counts are clipped at
//! the 99th percentile of the occupied-cell counts and normalized to `[0, 1]`.
//!
//! Axis convention: cell `(0, 0)` sits at `(x = -half, y = +half)`; the `u`
//! index grows with +x and the `v` index grows with -y. Matrices are indexed
//! `[[u, v]]`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Per-cell point counts of a cloud on the BV grid.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub counts: Array2<u32>,
}

impl DensityGrid {
    pub fn side(&self) -> usize {
        self.counts.nrows()
    }

    /// Sum of all cell counts; equals the number of in-window points.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// A normalized BV density image.
#[derive(Debug, Clone)]
pub struct BvImage {
    /// Intensities in `[0, 1]`, indexed `[[u, v]]`.
    pub intensity: Array2<f64>,
    /// Grid resolution in meters per cell.
    pub grid_resolution: f64,
    /// Half-size of the metric window in meters.
    pub window_half: f64,
    /// The count that saturates to intensity 1 (99th percentile).
    pub normalizer: u32,
}

impl BvImage {
    pub fn side(&self) -> usize {
        self.intensity.nrows()
    }

    /// The image-plane point of the metric origin, in cell-index units.
    ///
    /// A cell index `u` represents the cell centered at
    /// `x = -half + (u + 0.5) * g`, so `x = 0` lands at `half/g - 0.5`.
    pub fn center(&self) -> f64 {
        self.window_half / self.grid_resolution - 0.5
    }

    /// Builds an image directly from an intensity matrix. Intended for
    /// tests and tooling; validates the `[0, 1]` range.
    pub fn from_intensity(intensity: Array2<f64>, g: f64, half: f64) -> Result<BvImage> {
        if intensity.nrows() != intensity.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "BV image must be square, got {}x{}",
                intensity.nrows(),
                intensity.ncols()
            )));
        }
        if intensity.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidParam(
                "BV intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(BvImage {
            intensity,
            grid_resolution: g,
            window_half: half,
            normalizer: 1,
        })
    }
}

/// Number of cells per side for a window of half-size `half` and grid
/// resolution `g`: `ceil(2*half / g)`.
pub fn grid_side(g: f64, half: f64) -> usize {
    (2.0 * half / g).ceil() as usize
}

fn validate_grid_params(g: f64, half: f64) -> Result<()> {
    if !(g > 0.0) {
        return Err(Error::InvalidParam(format!(
            "grid resolution must be positive, got {g}"
        )));
    }
    if !(half > 0.0) {
        return Err(Error::InvalidParam(format!(
            "window half-size must be positive, got {half}"
        )));
    }
    Ok(())
}

/// Bins cloud points into per-cell counts. Points outside the window are
/// ignored; z is ignored. Points exactly on the +x / -y boundary are
/// clamped into the last cell.
pub fn density_grid(cloud: &PointCloud, g: f64, half: f64) -> Result<DensityGrid> {
    validate_grid_params(g, half)?;
    let side = grid_side(g, half);
    let mut counts = Array2::<u32>::zeros((side, side));
    for p in &cloud.points {
        if p.x.abs() > half || p.y.abs() > half {
            continue;
        }
        let u = (((p.x + half) / g).floor() as usize).min(side - 1);
        let v = (((half - p.y) / g).floor() as usize).min(side - 1);
        counts[[u, v]] += 1;
    }
    Ok(DensityGrid { counts })
}

/// Nearest-rank 99th percentile over the counts of occupied cells.
/// Zero-count cells are excluded; errors if every cell is empty.
pub fn percentile99(grid: &DensityGrid) -> Result<u32> {
    let mut occupied: Vec<u32> = grid.counts.iter().copied().filter(|&c| c > 0).collect();
    if occupied.is_empty() {
        return Err(Error::EmptyBvWindow);
    }
    occupied.sort_unstable();
    let rank = ((0.99 * occupied.len() as f64).ceil() as usize).max(1);
    Ok(occupied[rank - 1])
}

/// Builds the normalized BV image: `min(count, nm) / nm` per cell, where
/// `nm` is the 99th-percentile occupied-cell count.
pub fn build_bv_image(cloud: &PointCloud, g: f64, half: f64) -> Result<BvImage> {
    let grid = density_grid(cloud, g, half)?;
    let nm = percentile99(&grid)?;
    let nm_f = nm as f64;
    let intensity = grid.counts.mapv(|c| (c.min(nm) as f64) / nm_f);
    Ok(BvImage {
        intensity,
        grid_resolution: g,
        window_half: half,
        normalizer: nm,
    })
}

/// Writes an 8-bit binary PGM (P5). Intensities are scaled by 255 and
/// rounded half-up. Raster rows run along v, columns along u.
pub fn render_pgm(image: &BvImage, path: &Path) -> Result<()> {
    let side = image.side();
    let mut out = Vec::with_capacity(side * side + 32);
    write!(out, "P5\n{side} {side}\n255\n").expect("write to Vec cannot fail");
    for v in 0..side {
        for u in 0..side {
            out.push(gray_byte(image.intensity[[u, v]]));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a raw index map as a PGM, scaling indices onto the full gray
/// range. Debug aid for inspecting orientation maps.
pub fn render_index_pgm(index: &Array2<u8>, levels: u8, path: &Path) -> Result<()> {
    let (w, h) = (index.nrows(), index.ncols());
    let mut out = Vec::with_capacity(w * h + 32);
    write!(out, "P5\n{w} {h}\n255\n").expect("write to Vec cannot fail");
    let scale = 255.0 / levels.max(1) as f64;
    for v in 0..h {
        for u in 0..w {
            out.push((index[[u, v]] as f64 * scale).round() as u8);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn gray_byte(intensity: f64) -> u8 {
    (intensity * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Dumps the intensity matrix as CSV, one v-row per line, six significant
/// digits. Debug aid.
pub fn write_intensity_csv(image: &BvImage, path: &Path) -> Result<()> {
    let side = image.side();
    let mut out = String::new();
    for v in 0..side {
        for u in 0..side {
            if u > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.5e}", image.intensity[[u, v]]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point3;
    use approx::assert_abs_diff_eq;

    fn cloud_of(pts: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(
            pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect(),
            "test",
        )
    }

    #[test]
    fn default_parameters_give_250_cells() {
        assert_eq!(grid_side(0.4, 50.0), 250);
    }

    #[test]
    fn stacked_points_count_in_one_cell() {
        let pts: Vec<(f64, f64, f64)> = (0..10).map(|i| (1.0, 1.0, i as f64)).collect();
        let grid = density_grid(&cloud_of(&pts), 0.4, 50.0).unwrap();
        assert_eq!(grid.total(), 10);
        assert_eq!(*grid.counts.iter().max().unwrap(), 10);
        let occupied = grid.counts.iter().filter(|&&c| c > 0).count();
        assert_eq!(occupied, 1);
    }

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let grid = density_grid(&cloud_of(&[]), 0.4, 50.0).unwrap();
        assert_eq!(grid.total(), 0);
    }

    #[test]
    fn binning_matches_bruteforce_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(f64, f64, f64)> = (0..5000)
            .map(|_| {
                (
                    rng.gen_range(-55.0..55.0),
                    rng.gen_range(-55.0..55.0),
                    rng.gen_range(-2.0..10.0),
                )
            })
            .collect();
        let (g, half) = (0.4, 50.0);
        let side = grid_side(g, half);
        let mut oracle = vec![vec![0u32; side]; side];
        for &(x, y, _) in &pts {
            if x.abs() > half || y.abs() > half {
                continue;
            }
            let u = (((x + half) / g).floor() as usize).min(side - 1);
            let v = (((half - y) / g).floor() as usize).min(side - 1);
            oracle[u][v] += 1;
        }
        let grid = density_grid(&cloud_of(&pts), g, half).unwrap();
        for u in 0..side {
            for v in 0..side {
                assert_eq!(grid.counts[[u, v]], oracle[u][v]);
            }
        }
    }

    #[test]
    fn grid_total_counts_in_window_points() {
        let pts = [(0.0, 0.0, 0.0), (49.9, -49.9, 3.0), (51.0, 0.0, 0.0)];
        let grid = density_grid(&cloud_of(&pts), 0.4, 50.0).unwrap();
        assert_eq!(grid.total(), 2);
    }

    #[test]
    fn axis_convention_puts_origin_cell_top_left() {
        // (x=-half, y=+half) must land in cell (0, 0); +x grows u, -y grows v.
        let pts = [(-50.0, 50.0, 0.0), (-49.0, 50.0, 0.0), (-50.0, 48.0, 0.0)];
        let grid = density_grid(&cloud_of(&pts), 1.0, 50.0).unwrap();
        assert_eq!(grid.counts[[0, 0]], 1);
        assert_eq!(grid.counts[[1, 0]], 1);
        assert_eq!(grid.counts[[0, 2]], 1);
    }

    #[test]
    fn percentile_nearest_rank_oracle() {
        // Occupied counts 1..=100 -> nearest-rank p99 is 99.
        let pts: Vec<(f64, f64, f64)> = (0..100)
            .flat_map(|cell| {
                (0..=cell).map(move |k| (-49.0 + cell as f64 * 0.9, 20.0, k as f64 * 0.01))
            })
            .collect();
        let grid = density_grid(&cloud_of(&pts), 0.4, 50.0).unwrap();
        let mut occ: Vec<u32> = grid.counts.iter().copied().filter(|&c| c > 0).collect();
        occ.sort_unstable();
        assert_eq!(occ, (1..=100).collect::<Vec<u32>>());
        assert_eq!(percentile99(&grid).unwrap(), 99);
    }

    #[test]
    fn percentile_constant_distribution() {
        let pts: Vec<(f64, f64, f64)> = (0..5)
            .flat_map(|cell| (0..7).map(move |k| (cell as f64 * 2.0, 0.0, k as f64)))
            .collect();
        let grid = density_grid(&cloud_of(&pts), 0.4, 50.0).unwrap();
        assert_eq!(percentile99(&grid).unwrap(), 7);
    }

    #[test]
    fn percentile_singleton() {
        let pts = [(0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, 2.0)];
        let grid = density_grid(&cloud_of(&pts), 0.4, 50.0).unwrap();
        assert_eq!(percentile99(&grid).unwrap(), 3);
    }

    #[test]
    fn percentile_empty_grid_errors() {
        let grid = density_grid(&cloud_of(&[]), 0.4, 50.0).unwrap();
        assert!(matches!(percentile99(&grid), Err(Error::EmptyBvWindow)));
    }

    #[test]
    fn image_saturates_at_normalizer() {
        // One cell with nm points, one with 2*nm: both must clip to 1.0.
        let mut pts = Vec::new();
        for k in 0..4 {
            pts.push((0.0, 0.0, k as f64 * 0.01));
        }
        for k in 0..8 {
            pts.push((5.0, 5.0, k as f64 * 0.01));
        }
        for k in 0..2 {
            pts.push((-5.0, -5.0, k as f64 * 0.01));
        }
        let image = build_bv_image(&cloud_of(&pts), 0.4, 50.0).unwrap();
        // occupied counts {2, 4, 8}; p99 -> 8
        assert_eq!(image.normalizer, 8);
        let mx = image.intensity.iter().cloned().fold(0.0, f64::max);
        assert_abs_diff_eq!(mx, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn image_matches_elementwise_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<(f64, f64, f64)> = (0..3000)
            .map(|_| {
                (
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(0.0..5.0),
                )
            })
            .collect();
        let cloud = cloud_of(&pts);
        let grid = density_grid(&cloud, 0.4, 50.0).unwrap();
        let nm = percentile99(&grid).unwrap();
        let image = build_bv_image(&cloud, 0.4, 50.0).unwrap();
        let side = grid.side();
        for u in 0..side {
            for v in 0..side {
                let expected = (grid.counts[[u, v]].min(nm) as f64) / nm as f64;
                assert_abs_diff_eq!(image.intensity[[u, v]], expected, epsilon = 1e-12);
            }
        }
        assert!(image.intensity.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn defaults_build_250x250_image() {
        let pts = [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0)];
        let image = build_bv_image(&cloud_of(&pts), 0.4, 50.0).unwrap();
        assert_eq!(image.side(), 250);
    }

    #[test]
    fn pgm_bytes_scale_and_round_half_up() {
        assert_eq!(gray_byte(0.0), 0);
        assert_eq!(gray_byte(1.0), 255);
        assert_eq!(gray_byte(0.5), 128); // round(127.5) half-up
    }

    #[test]
    fn pgm_all_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        let image = BvImage::from_intensity(Array2::zeros((4, 4)), 1.0, 2.0).unwrap();
        render_pgm(&image, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), header.len() + 16);
    }

    #[test]
    fn boundary_points_clamp_into_last_cell() {
        // g = 1 keeps the cell arithmetic exact.
        let pts = [(50.0, 0.0, 0.0), (0.0, -50.0, 0.0)];
        let grid = density_grid(&cloud_of(&pts), 1.0, 50.0).unwrap();
        assert_eq!(grid.counts[[99, 50]], 1);
        assert_eq!(grid.counts[[50, 99]], 1);
    }
}

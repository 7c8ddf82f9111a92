//! Log-Gabor filter bank, frequency-domain amplitude responses and the
//! maximum index map (MIM).
//!
//! Filters are built directly in the frequency domain as the product of a
//! Gaussian in log-frequency and a Gaussian in angle. The angular Gaussian
//! wraps on a period of pi, so orientations `o` and `o + orientations` are
//! identified; the radial part is isotropic. Together these give the MIM its
//! defining property: rotating the input by `k*pi/orientations` circularly
//! shifts the index map by `k`.
//!
//! Amplitudes are quadrature-pair moduli: the real transfer function is
//! paired with its analytic (half-plane) counterpart, so the modulus of the
//! complex spatial response is the local amplitude envelope.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Filter bank parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGaborParams {
    /// Number of frequency scales.
    pub scales: usize,
    /// Number of orientation channels over `[0, pi)`.
    pub orientations: usize,
    /// Wavelength of the highest-frequency scale, pixels.
    pub min_wavelength: f64,
    /// Wavelength multiplier between consecutive scales.
    pub scale_multiplier: f64,
    /// Ratio sigma_f / f_s of the radial Gaussian (in log-frequency).
    pub sigma_f_ratio: f64,
    /// Width of the angular Gaussian, radians.
    pub sigma_omega: f64,
}

impl LogGaborParams {
    /// Defaults for `orientations` channels: the angular width tracks the
    /// channel spacing, `(pi / orientations) / 1.2`.
    pub fn with_orientations(scales: usize, orientations: usize) -> Self {
        LogGaborParams {
            scales,
            orientations,
            min_wavelength: 3.0,
            scale_multiplier: 1.6,
            sigma_f_ratio: 0.75,
            sigma_omega: (PI / orientations as f64) / 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales < 1 {
            return Err(Error::InvalidParam("need at least one scale".into()));
        }
        if self.orientations < 2 {
            return Err(Error::InvalidParam(
                "need at least two orientations".into(),
            ));
        }
        if !(self.min_wavelength >= 2.0) {
            return Err(Error::InvalidParam(
                "min wavelength must be at least 2 pixels".into(),
            ));
        }
        if !(self.scale_multiplier > 1.0) {
            return Err(Error::InvalidParam("scale multiplier must be > 1".into()));
        }
        if !(self.sigma_f_ratio > 0.0 && self.sigma_f_ratio < 1.0) {
            return Err(Error::InvalidParam("sigma_f ratio must be in (0, 1)".into()));
        }
        if !(self.sigma_omega > 0.0) {
            return Err(Error::InvalidParam("sigma_omega must be positive".into()));
        }
        Ok(())
    }

    /// Center frequency of scale `s`, cycles per pixel.
    pub fn center_frequency(&self, s: usize) -> f64 {
        1.0 / (self.min_wavelength * self.scale_multiplier.powi(s as i32))
    }

    /// Center angle of orientation channel `o`.
    pub fn center_angle(&self, o: usize) -> f64 {
        o as f64 * PI / self.orientations as f64
    }
}

/// Angular distance with period pi, computed on doubled angles.
fn angular_distance_pi(a: f64, b: f64) -> f64 {
    let d = 2.0 * (a - b);
    0.5 * d.sin().atan2(d.cos()).abs()
}

/// Value of the (s, o) transfer function at radius `f` (cycles/pixel) and
/// angle `omega`. The DC point (f = 0) is zero.
pub fn transfer_at(params: &LogGaborParams, s: usize, o: usize, f: f64, omega: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let fs = params.center_frequency(s);
    let log_ratio = (f / fs).ln();
    let denom = 2.0 * params.sigma_f_ratio.ln().powi(2);
    let radial = (-log_ratio * log_ratio / denom).exp();
    let d = angular_distance_pi(omega, params.center_angle(o));
    let angular = (-d * d / (2.0 * params.sigma_omega * params.sigma_omega)).exp();
    radial * angular
}

/// A frequency-domain Log-Gabor filter bank for one image size. Immutable
/// after construction and shareable across threads.
pub struct FilterBank {
    pub width: usize,
    pub height: usize,
    pub params: LogGaborParams,
    /// Real non-negative transfer functions, indexed `s * orientations + o`.
    pub filters: Vec<Array2<f64>>,
    /// Per-orientation analytic half-plane factors (values 0, 1 or 2).
    halfplane: Vec<Array2<f64>>,
    fft_u: Arc<dyn Fft<f64>>,
    fft_v: Arc<dyn Fft<f64>>,
    ifft_u: Arc<dyn Fft<f64>>,
    ifft_v: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FilterBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterBank")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("params", &self.params)
            .finish()
    }
}

/// Signed frequency coordinate of FFT bin `i` out of `n`, cycles per pixel.
fn freq_coord(i: usize, n: usize) -> f64 {
    let half = n / 2;
    if i <= half {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

/// Builds the filter bank for a `width x height` spectrum.
pub fn build_bank(width: usize, height: usize, params: LogGaborParams) -> Result<FilterBank> {
    params.validate()?;
    if width < 8 || height < 8 {
        return Err(Error::InvalidParam(format!(
            "bank size must be at least 8x8, got {width}x{height}"
        )));
    }

    let no = params.orientations;
    let mut filters = Vec::with_capacity(params.scales * no);
    for s in 0..params.scales {
        for o in 0..no {
            let mut h = Array2::<f64>::zeros((width, height));
            for i in 0..width {
                let fu = freq_coord(i, width);
                for j in 0..height {
                    let fv = freq_coord(j, height);
                    let f = fu.hypot(fv);
                    let omega = fv.atan2(fu);
                    h[[i, j]] = transfer_at(&params, s, o, f, omega);
                }
            }
            filters.push(h);
        }
    }

    let mut halfplane = Vec::with_capacity(no);
    for o in 0..no {
        let (s_o, c_o) = params.center_angle(o).sin_cos();
        let mut q = Array2::<f64>::zeros((width, height));
        for i in 0..width {
            let fu = freq_coord(i, width);
            for j in 0..height {
                let fv = freq_coord(j, height);
                let dot = fu * c_o + fv * s_o;
                q[[i, j]] = if dot > 1e-12 {
                    2.0
                } else if dot < -1e-12 {
                    0.0
                } else {
                    1.0
                };
            }
        }
        halfplane.push(q);
    }

    let mut planner = FftPlanner::<f64>::new();
    Ok(FilterBank {
        width,
        height,
        params,
        filters,
        halfplane,
        fft_u: planner.plan_fft_forward(width),
        fft_v: planner.plan_fft_forward(height),
        ifft_u: planner.plan_fft_inverse(width),
        ifft_v: planner.plan_fft_inverse(height),
    })
}

impl FilterBank {
    pub fn filter(&self, s: usize, o: usize) -> &Array2<f64> {
        &self.filters[s * self.params.orientations + o]
    }

    /// The complex transfer function actually applied for channel (s, o):
    /// the real filter times the analytic half-plane factor. Its inverse
    /// transform is the quadrature-pair spatial kernel.
    pub fn transfer_complex(&self, s: usize, o: usize) -> Array2<Complex64> {
        let h = self.filter(s, o);
        let q = &self.halfplane[o];
        let mut out = Array2::<Complex64>::zeros((self.width, self.height));
        for i in 0..self.width {
            for j in 0..self.height {
                out[[i, j]] = Complex64::new(h[[i, j]] * q[[i, j]], 0.0);
            }
        }
        out
    }

    fn fft2(&self, data: &mut Array2<Complex64>, inverse: bool) {
        let (w, h) = (self.width, self.height);
        let (plan_u, plan_v) = if inverse {
            (&self.ifft_u, &self.ifft_v)
        } else {
            (&self.fft_u, &self.fft_v)
        };
        // Axis 1 (contiguous rows of length `height`).
        for mut row in data.rows_mut() {
            let slice = row.as_slice_mut().expect("standard layout");
            plan_v.process(slice);
        }
        // Axis 0 via gather/scatter.
        let mut col = vec![Complex64::default(); w];
        for j in 0..h {
            for i in 0..w {
                col[i] = data[[i, j]];
            }
            plan_u.process(&mut col);
            for i in 0..w {
                data[[i, j]] = col[i];
            }
        }
        if inverse {
            let norm = 1.0 / (w * h) as f64;
            data.mapv_inplace(|c| c * norm);
        }
    }
}

/// Per-channel amplitude responses: modulus of the complex spatial response
/// of each (s, o) channel, indexed `s * orientations + o`. All values >= 0.
pub fn filter_responses(image: &Array2<f64>, bank: &FilterBank) -> Result<Vec<Array2<f64>>> {
    if image.nrows() != bank.width || image.ncols() != bank.height {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, bank is {}x{}",
            image.nrows(),
            image.ncols(),
            bank.width,
            bank.height
        )));
    }
    let mut spectrum = image.mapv(|x| Complex64::new(x, 0.0));
    bank.fft2(&mut spectrum, false);

    let no = bank.params.orientations;
    let mut out = Vec::with_capacity(bank.filters.len());
    for s in 0..bank.params.scales {
        for o in 0..no {
            let h = bank.filter(s, o);
            let q = &bank.halfplane[o];
            let mut y = Array2::<Complex64>::zeros((bank.width, bank.height));
            for i in 0..bank.width {
                for j in 0..bank.height {
                    y[[i, j]] = spectrum[[i, j]] * (h[[i, j]] * q[[i, j]]);
                }
            }
            bank.fft2(&mut y, true);
            out.push(y.mapv(|c| c.norm()));
        }
    }
    Ok(out)
}

/// Summed-over-scales amplitude per orientation channel.
#[derive(Debug, Clone)]
pub struct OrientationAmplitudes {
    /// One matrix per orientation, all values >= 0.
    pub amps: Vec<Array2<f64>>,
}

/// Sums the per-scale responses into per-orientation amplitudes.
pub fn orientation_amplitude(
    per_scale: &[Array2<f64>],
    scales: usize,
    orientations: usize,
) -> Result<OrientationAmplitudes> {
    if per_scale.len() != scales * orientations {
        return Err(Error::DimensionMismatch(format!(
            "expected {} response channels, got {}",
            scales * orientations,
            per_scale.len()
        )));
    }
    let mut amps = Vec::with_capacity(orientations);
    for o in 0..orientations {
        let mut sum = per_scale[o].clone();
        for s in 1..scales {
            sum += &per_scale[s * orientations + o];
        }
        amps.push(sum);
    }
    Ok(OrientationAmplitudes { amps })
}

/// Maximum index map: per pixel, the orientation channel with the largest
/// amplitude, plus the winning amplitude and a validity mask.
#[derive(Debug, Clone)]
pub struct Mim {
    /// Winning orientation index per pixel, in `0..orientations`.
    pub index: Array2<u8>,
    /// The winning amplitude per pixel.
    pub amp_max: Array2<f64>,
    /// True where the winning amplitude exceeds the noise floor.
    pub valid: Array2<bool>,
    pub orientations: usize,
}

impl Mim {
    pub fn side(&self) -> usize {
        self.index.nrows()
    }
}

/// Argmax over orientation channels. Ties break to the smallest index.
/// `noise_floor = None` uses `1e-4 *` the mean winning amplitude.
pub fn compute_mim(amps: &OrientationAmplitudes, noise_floor: Option<f64>) -> Mim {
    let orientations = amps.amps.len();
    let (w, h) = (amps.amps[0].nrows(), amps.amps[0].ncols());
    let mut index = Array2::<u8>::zeros((w, h));
    let mut amp_max = Array2::<f64>::zeros((w, h));
    for i in 0..w {
        for j in 0..h {
            let mut best = 0usize;
            let mut best_amp = amps.amps[0][[i, j]];
            for (o, a) in amps.amps.iter().enumerate().skip(1) {
                let v = a[[i, j]];
                if v > best_amp {
                    best_amp = v;
                    best = o;
                }
            }
            index[[i, j]] = best as u8;
            amp_max[[i, j]] = best_amp;
        }
    }
    let floor = noise_floor.unwrap_or_else(|| {
        1e-4 * amp_max.iter().sum::<f64>() / (w * h) as f64
    });
    let valid = amp_max.mapv(|a| a > floor);
    Mim {
        index,
        amp_max,
        valid,
        orientations,
    }
}

/// Full chain from a BV intensity matrix to its MIM.
pub fn mim_for_image(
    image: &Array2<f64>,
    bank: &FilterBank,
    noise_floor: Option<f64>,
) -> Result<Mim> {
    let responses = filter_responses(image, bank)?;
    let amps = orientation_amplitude(
        &responses,
        bank.params.scales,
        bank.params.orientations,
    )?;
    Ok(compute_mim(&amps, noise_floor))
}

/// Resamples a MIM under an image-plane rotation by `alpha` about `center`
/// (nearest neighbor): `out[p] = in[center + R(alpha) (p - center)]` with
/// `R(alpha) = [[cos, sin], [-sin, cos]]`. Samples falling outside the
/// source, or onto invalid source pixels, are marked invalid.
pub fn resample_mim_rotated(mim: &Mim, alpha: f64, center: (f64, f64)) -> Mim {
    let (w, h) = (mim.index.nrows(), mim.index.ncols());
    let (s, c) = alpha.sin_cos();
    let mut index = Array2::<u8>::zeros((w, h));
    let mut amp_max = Array2::<f64>::zeros((w, h));
    let mut valid = Array2::from_elem((w, h), false);
    for u in 0..w {
        for v in 0..h {
            let du = u as f64 - center.0;
            let dv = v as f64 - center.1;
            let su = (center.0 + c * du + s * dv).round();
            let sv = (center.1 - s * du + c * dv).round();
            if su < 0.0 || sv < 0.0 || su >= w as f64 || sv >= h as f64 {
                continue;
            }
            let (su, sv) = (su as usize, sv as usize);
            index[[u, v]] = mim.index[[su, sv]];
            amp_max[[u, v]] = mim.amp_max[[su, sv]];
            valid[[u, v]] = mim.valid[[su, sv]];
        }
    }
    Mim {
        index,
        amp_max,
        valid,
        orientations: mim.orientations,
    }
}

//! Steady-state Gaussian-plume solution of the advection-diffusion equation
//! for finite line sources at road level.
//!
//! With a constant eddy diffusivity `K` and wind speed `u`, the downwind
//! coordinate enters only through the diffusion time `r = K x / u`. The
//! ground-reflected point kernel is
//!
//! ```text
//! c(r, y, z) = Q / (2 pi u r) * exp(-y^2 / 4r) * exp(-z^2 / 4r)
//! ```
//!
//! and its crosswind line integral over a source of length `L` centred on
//! the plume axis gives
//!
//! ```text
//! C = Q_L / (2 u sqrt(pi r)) * exp(-z^2 / 4r)
//!     * [erf((y + L/2) / 2 sqrt(r)) - erf((y - L/2) / 2 sqrt(r))]
//! ```
//!
//! Sources perpendicular to the wind use the closed form; any other
//! orientation is integrated with a fixed Gauss-Legendre rule.

mod erf;
mod quadrature;

pub use erf::{erf, erf_diff, erfc};
pub use quadrature::GaussLegendre;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Point3, Segment};

/// Angular tolerance (radians) within which a source counts as crosswind.
pub const PERPENDICULAR_TOLERANCE: f64 = 1e-6;
/// Largest number of sources or receptors per legacy solver run.
pub const LEGACY_RUN_LIMIT: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum PlumeError {
    #[error("diffusion time must be positive (r = {0})")]
    NonPositiveDiffusionTime(f64),
    #[error("wind speed must be positive (u = {0})")]
    NonPositiveWindSpeed(f64),
    #[error("line source {0} has coincident endpoints")]
    DegenerateSource(usize),
    #[error("negative emission rate {0}")]
    NegativeEmission(f64),
    #[error("invalid weather sample: {0}")]
    InvalidWeather(String),
    #[error("invalid plume parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} traffic volumes, got {got}")]
    VolumeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    /// m/s
    pub wind_speed: f64,
    /// Direction the wind blows from, radians clockwise from north.
    pub wind_dir: f64,
    /// Standard deviation of the wind direction, radians.
    pub wind_dir_std: f64,
    /// Degrees Celsius.
    pub temperature: f64,
}

impl WeatherSample {
    pub fn validate(&self) -> Result<(), PlumeError> {
        let all_finite =
            [self.wind_speed, self.wind_dir, self.wind_dir_std, self.temperature].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(PlumeError::InvalidWeather(format!("non-finite field in {self:?}")));
        }
        if self.wind_speed < 0.0 || self.wind_dir_std < 0.0 {
            return Err(PlumeError::InvalidWeather(format!("negative speed or direction spread in {self:?}")));
        }
        Ok(())
    }

    /// Unit vector the wind blows towards, in (east, north) coordinates.
    pub fn downwind(&self) -> (f64, f64) {
        let (s, c) = self.wind_dir.sin_cos();
        (-s, -c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSource {
    pub id: usize,
    pub start: Point,
    pub end: Point,
    /// Emission per unit length, µg/(m·s).
    pub emission_rate: f64,
}

impl LineSource {
    pub fn new(id: usize, segment: Segment, emission_rate: f64) -> Result<Self, PlumeError> {
        if segment.start == segment.end {
            return Err(PlumeError::DegenerateSource(id));
        }
        if !(emission_rate >= 0.0) {
            return Err(PlumeError::NegativeEmission(emission_rate));
        }
        Ok(Self { id, start: segment.start, end: segment.end, emission_rate })
    }

    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlumeParams {
    /// Eddy diffusivity K, m²/s.
    pub diffusivity: f64,
    /// Floor applied to the wind speed, m/s.
    pub u_min: f64,
    /// Gauss-Legendre order for oblique sources.
    pub n_quad: usize,
}

impl Default for PlumeParams {
    fn default() -> Self {
        Self { diffusivity: 1.0, u_min: 0.5, n_quad: 32 }
    }
}

impl PlumeParams {
    pub fn validate(&self) -> Result<(), PlumeError> {
        if !(self.diffusivity > 0.0) || !self.diffusivity.is_finite() {
            return Err(PlumeError::InvalidParams(format!("K = {} must be positive", self.diffusivity)));
        }
        if !(self.u_min > 0.0) {
            return Err(PlumeError::InvalidParams(format!("u_min = {} must be positive", self.u_min)));
        }
        if self.n_quad < 8 {
            return Err(PlumeError::InvalidParams(format!("n_quad = {} must be at least 8", self.n_quad)));
        }
        Ok(())
    }
}

/// A pollutant's emission factor (µg per metre per vehicle) and background level (µg/m³).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pollutant {
    pub name: String,
    pub emission_factor: f64,
    pub background: f64,
}

/// Ground-reflected point kernel `Q / (2 pi u r) exp(-(y^2 + z^2) / 4r)`.
pub fn point_kernel(q: f64, u: f64, r: f64, y: f64, z: f64) -> Result<f64, PlumeError> {
    if !(r > 0.0) {
        return Err(PlumeError::NonPositiveDiffusionTime(r));
    }
    if !(u > 0.0) {
        return Err(PlumeError::NonPositiveWindSpeed(u));
    }
    Ok(kernel(q, u, r, y, z))
}

#[inline]
fn kernel(q: f64, u: f64, r: f64, y: f64, z: f64) -> f64 {
    q / (2.0 * PI * u * r) * (-(y * y + z * z) / (4.0 * r)).exp()
}

/// Closed-form concentration of a crosswind source of length `length`
/// whose centre is `x` downwind of the receptor's crosswind foot, with the
/// receptor offset `y` from the source centre.
pub fn crosswind_line(q_l: f64, u: f64, r: f64, y: f64, z: f64, length: f64) -> f64 {
    let s = 2.0 * r.sqrt();
    let half = 0.5 * length;
    q_l / (2.0 * u * (PI * r).sqrt()) * (-(z * z) / (4.0 * r)).exp() * erf_diff((y + half) / s, (y - half) / s)
}

/// Concentration (µg/m³) at `receptor` from one line source.
pub fn line_concentration(
    src: &LineSource,
    receptor: Point3,
    weather: &WeatherSample,
    params: &PlumeParams,
) -> Result<f64, PlumeError> {
    weather.validate()?;
    params.validate()?;
    if src.start == src.end {
        return Err(PlumeError::DegenerateSource(src.id));
    }
    if src.emission_rate == 0.0 {
        return Ok(0.0);
    }
    let u = weather.wind_speed.max(params.u_min);
    let (dx, dy) = weather.downwind();
    // Crosswind axis: downwind rotated 90 degrees counter-clockwise.
    let (cx, cy) = (-dy, dx);

    // Receptor-relative wind frame: `x` is how far the receptor lies downwind of each endpoint.
    let frame = |p: Point| {
        let (ex, ey) = (receptor.x - p.x, receptor.y - p.y);
        (ex * dx + ey * dy, ex * cx + ey * cy)
    };
    let (xa, ya) = frame(src.start);
    let (xb, yb) = frame(src.end);
    let length = src.length();

    if (xb - xa).abs() <= length * PERPENDICULAR_TOLERANCE.sin() {
        let x = 0.5 * (xa + xb);
        if x <= 0.0 {
            return Ok(0.0);
        }
        let r = params.diffusivity * x / u;
        let y_centre = 0.5 * (ya + yb);
        return Ok(crosswind_line(src.emission_rate, u, r, y_centre, receptor.z, length));
    }

    // Restrict to the part of the segment that lies upwind of the receptor.
    let (mut s0, mut s1) = (0.0, 1.0);
    let crossing = xa / (xa - xb);
    match (xa > 0.0, xb > 0.0) {
        (false, false) => return Ok(0.0),
        (true, false) => s1 = crossing,
        (false, true) => s0 = crossing,
        (true, true) => {}
    }
    let rule = GaussLegendre::cached(params.n_quad);
    let q_l = src.emission_rate;
    let z = receptor.z;
    let integral = rule.integrate(s0, s1, |s| {
        let x = xa + s * (xb - xa);
        if x <= 0.0 {
            return 0.0;
        }
        let y = ya + s * (yb - ya);
        kernel(q_l, u, params.diffusivity * x / u, y, z)
    });
    Ok(integral * length)
}

/// Emission rate per unit length (µg/(m·s)) for `volume` veh/h at emission factor `ef` µg/(m·veh).
pub fn emission_rate(volume: f64, ef: f64) -> f64 {
    volume * ef / 3600.0
}

/// Sum of line-source contributions at `receptor`; the background level is
/// added only when `include_background` is set.
#[allow(clippy::too_many_arguments)]
pub fn total_concentration(
    sources: &[Segment],
    receptor: Point3,
    weather: &WeatherSample,
    volumes: &[f64],
    pollutant: &Pollutant,
    params: &PlumeParams,
    include_background: bool,
) -> Result<f64, PlumeError> {
    if volumes.len() != sources.len() {
        return Err(PlumeError::VolumeMismatch { expected: sources.len(), got: volumes.len() });
    }
    let mut total = 0.0;
    for (id, (seg, &vol)) in sources.iter().zip(volumes).enumerate() {
        let src = LineSource::new(id, *seg, emission_rate(vol, pollutant.emission_factor))?;
        total += line_concentration(&src, receptor, weather, params)?;
    }
    if include_background {
        total += pollutant.background;
    }
    Ok(total)
}

/// Bookkeeping for the legacy solver limit of 20 sources and 20 receptors per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyRunReport {
    pub subdomain: usize,
    pub n_sources: usize,
    pub source_violation: bool,
    /// Receptor index ranges, one per logical run.
    pub runs: Vec<std::ops::Range<usize>>,
}

impl LegacyRunReport {
    pub fn passes(&self) -> bool {
        !self.source_violation
    }
}

pub fn caline_mode_check(sub: &crate::geometry::Subdomain) -> LegacyRunReport {
    let n_sources = sub.line_sources.len();
    let n_r = sub.receptors.len();
    let runs = (0..n_r.div_ceil(LEGACY_RUN_LIMIT))
        .map(|k| k * LEGACY_RUN_LIMIT..((k + 1) * LEGACY_RUN_LIMIT).min(n_r))
        .collect();
    LegacyRunReport { subdomain: sub.id, n_sources, source_violation: n_sources > LEGACY_RUN_LIMIT, runs }
}

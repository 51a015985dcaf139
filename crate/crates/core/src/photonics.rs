//! Fluorescence lineshape, Doppler limit and the fiber collection model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::constants::{BOLTZMANN, HBAR, MICRON, TWO_PI};
use crate::fields::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotonicsError {
    #[error("numerical aperture {0} outside [0, 1]")]
    NumericalAperture(f64),
    #[error("invalid lineshape parameters: {0}")]
    Lineshape(&'static str),
    #[error("invalid optical stack: {0}")]
    Stack(String),
    #[error("ion height must be positive")]
    Height,
    #[error("sample count must be at least 1")]
    Samples,
}

/// Weight allowed outside the summed sidebands.
pub const SIDEBAND_TAIL: f64 = 1e-6;

/// `J_0(x) … J_nmax(x)` by Miller's backward recurrence, normalized with
/// `J_0 + 2 Σ J_2k = 1`.
pub fn bessel_j_orders(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let start = 2 * ((nmax.max(ax as usize) + 15 + (40.0 * ax).sqrt() as usize) / 2);
    let (mut next, mut cur) = (0.0f64, 1e-30f64);
    let mut norm = 0.0;
    for k in (0..=start).rev() {
        if k <= nmax {
            out[k] = cur;
        }
        if k % 2 == 0 {
            norm += if k == 0 { cur } else { 2.0 * cur };
        }
        if k == 0 {
            break;
        }
        let prev = 2.0 * k as f64 / ax * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    for (n, v) in out.iter_mut().enumerate() {
        *v /= norm;
        if x < 0.0 && n % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

pub fn bessel_j(n: i32, x: f64) -> f64 {
    let v = bessel_j_orders(n.unsigned_abs() as usize, x)[n.unsigned_abs() as usize];
    if n < 0 && n % 2 != 0 {
        -v
    } else {
        v
    }
}

/// Smallest `N` with `Σ_{|n|>N} J_n(β)² < SIDEBAND_TAIL`, and the weights `J_0² … J_N²`.
pub fn sideband_weights(beta: f64) -> Vec<f64> {
    let nmax = beta.abs().ceil() as usize + 30;
    let j = bessel_j_orders(nmax, beta);
    let mut total = j[0] * j[0];
    let mut n = 0;
    while 1.0 - total >= SIDEBAND_TAIL && n < nmax {
        n += 1;
        total += 2.0 * j[n] * j[n];
    }
    j[..=n].iter().map(|v| v * v).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineshapeParams {
    /// rad/s
    pub gamma: f64,
    pub s: f64,
    /// Detuning (rad/s).
    pub delta: f64,
    pub beta: f64,
    /// rad/s
    pub omega_rf: f64,
    /// counts/s
    pub background_rate: f64,
}

impl LineshapeParams {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(PhotonicsError::Lineshape("gamma must be positive"));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(PhotonicsError::Lineshape("s must be non-negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(PhotonicsError::Lineshape("beta must be non-negative"));
        }
        if !(self.background_rate >= 0.0) {
            return Err(PhotonicsError::Lineshape("background rate must be non-negative"));
        }
        if !self.delta.is_finite() || !self.omega_rf.is_finite() {
            return Err(PhotonicsError::Lineshape("detuning and rf frequency must be finite"));
        }
        Ok(())
    }

    /// Scattered photons per second.
    pub fn scattering_rate(&self) -> f64 {
        scattering_rate(self)
    }

    /// Detected rate through a channel of the given efficiency, plus background.
    pub fn detected_rate(&self, efficiency: f64) -> f64 {
        efficiency * scattering_rate(self) + self.background_rate
    }
}

/// Two-level scattering rate with micromotion sidebands (photons/s).
pub fn scattering_rate(p: &LineshapeParams) -> f64 {
    let w = sideband_weights(p.beta);
    let term = |n: f64| p.s / (1.0 + p.s + (2.0 * (p.delta - n * p.omega_rf) / p.gamma).powi(2));
    let mut sum = w[0] * term(0.0);
    for (n, wn) in w.iter().enumerate().skip(1) {
        sum += wn * (term(n as f64) + term(-(n as f64)));
    }
    0.5 * p.gamma * sum
}

/// Power-broadened full width `γ√(1+s)` (rad/s).
pub fn saturated_linewidth(gamma: f64, s: f64) -> f64 {
    gamma * (1.0 + s).sqrt()
}

/// Doppler cooling limit `ħγ/(2k_B)` (K).
pub fn doppler_limit(gamma: f64) -> f64 {
    HBAR * gamma / (2.0 * BOLTZMANN)
}

/// Fraction of the full sphere inside a cone of numerical aperture `na`.
pub fn cone_fraction(na: f64) -> Result<f64, PhotonicsError> {
    if !(0.0..=1.0).contains(&na) {
        return Err(PhotonicsError::NumericalAperture(na));
    }
    Ok(0.5 * (1.0 - (1.0 - na * na).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossElement {
    pub name: String,
    pub transmission: f64,
}

impl LossElement {
    pub fn new(name: impl Into<String>, transmission: f64) -> Self {
        Self {
            name: name.into(),
            transmission,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmissionPattern {
    Isotropic,
    /// `sin²` about the given axis.
    Dipole { axis: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpticalStack {
    /// m
    pub hole_radius: f64,
    /// degrees
    pub hole_taper_half_angle: f64,
    /// Fiber face depth below the surface (m).
    pub recess_depth: f64,
    /// m
    pub core_radius: f64,
    pub fiber_na: f64,
    pub loss_elements: Vec<LossElement>,
    pub pmt_coupling: f64,
    pub lens_na: f64,
    pub emission_pattern: EmissionPattern,
}

impl Default for OpticalStack {
    fn default() -> Self {
        let mut loss_elements = vec![LossElement::new("uv filter", 0.90)];
        for k in 1..=4 {
            loss_elements.push(LossElement::new(format!("silica surface {k}"), 0.96));
        }
        Self {
            hole_radius: 25.0 * MICRON,
            hole_taper_half_angle: 30.0,
            recess_depth: 50.0 * MICRON,
            core_radius: 110.0 * MICRON,
            fiber_na: 0.37,
            loss_elements,
            pmt_coupling: 0.75,
            lens_na: 0.5,
            emission_pattern: EmissionPattern::Isotropic,
        }
    }
}

impl OpticalStack {
    /// No transmission losses and unit coupling.
    pub fn lossless(mut self) -> Self {
        self.loss_elements.clear();
        self.pmt_coupling = 1.0;
        self
    }

    pub fn validate(&self) -> Result<(), PhotonicsError> {
        for (name, na) in [("fiber_na", self.fiber_na), ("lens_na", self.lens_na)] {
            if !(na > 0.0 && na <= 1.0) {
                return Err(PhotonicsError::Stack(format!("{name} must lie in (0, 1], got {na}")));
            }
        }
        for (name, r) in [("hole_radius", self.hole_radius), ("core_radius", self.core_radius)] {
            if !(r > 0.0) {
                return Err(PhotonicsError::Stack(format!("{name} must be positive")));
            }
        }
        if !(self.recess_depth >= 0.0 && self.recess_depth.is_finite()) {
            return Err(PhotonicsError::Stack("recess_depth must be non-negative".into()));
        }
        if !(0.0..90.0).contains(&self.hole_taper_half_angle) {
            return Err(PhotonicsError::Stack("taper half angle must lie in [0, 90) degrees".into()));
        }
        for t in self
            .loss_elements
            .iter()
            .map(|e| e.transmission)
            .chain(std::iter::once(self.pmt_coupling))
        {
            if !(0.0..=1.0).contains(&t) {
                return Err(PhotonicsError::Stack(format!("transmission {t} outside [0, 1]")));
            }
        }
        if let EmissionPattern::Dipole { axis } = self.emission_pattern {
            if !(Vec3::from(axis).norm() > 0.0) {
                return Err(PhotonicsError::Stack("dipole axis must be nonzero".into()));
            }
        }
        Ok(())
    }

    /// Radius of the lower taper rim, at the recess plane (m).
    pub fn recess_aperture_radius(&self) -> f64 {
        self.hole_radius + self.recess_depth * self.hole_taper_half_angle.to_radians().tan()
    }

    /// NA subtended by the tightest of the two rims and the core, for an ion on axis.
    pub fn subtended_na(&self, ion_height: f64) -> f64 {
        let na = |r: f64, z: f64| r / r.hypot(z);
        let depth = ion_height + self.recess_depth;
        na(self.hole_radius, ion_height)
            .min(na(self.recess_aperture_radius(), depth))
            .min(na(self.core_radius, depth))
    }

    /// True when an emitted direction from the ion reaches the fiber core within its NA.
    fn collects(&self, ion: [f64; 3], d: [f64; 3], sin_max: f64) -> bool {
        if d[2] >= 0.0 {
            return false;
        }
        let dz = -d[2];
        if (d[0] * d[0] + d[1] * d[1]).sqrt() > sin_max {
            return false;
        }
        let at = |depth: f64| {
            let t = (ion[2] + depth) / dz;
            (ion[0] + t * d[0]).hypot(ion[1] + t * d[1])
        };
        let top = at(0.0);
        let bottom = at(self.recess_depth);
        top <= self.hole_radius && bottom <= self.recess_aperture_radius() && bottom <= self.core_radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollectionEstimate {
    pub fraction: f64,
    pub std_error: f64,
    pub collected: u64,
    pub samples: u64,
}

/// Samples per independent random stream.
pub const MC_CHUNK: u64 = 4096;

fn unit_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let phi = TWO_PI * rng.random::<f64>();
    let rho = (1.0 - z * z).max(0.0).sqrt();
    [rho * phi.cos(), rho * phi.sin(), z]
}

fn sample_direction(rng: &mut ChaCha8Rng, pattern: &EmissionPattern) -> [f64; 3] {
    match pattern {
        EmissionPattern::Isotropic => unit_direction(rng),
        EmissionPattern::Dipole { axis } => {
            let a = Vec3::from(*axis).normalize();
            loop {
                let d = unit_direction(rng);
                let c = a.dot(&Vec3::from(d));
                if rng.random::<f64>() <= 1.0 - c * c {
                    return d;
                }
            }
        }
    }
}

/// Monte Carlo estimate of the fraction of emitted photons reaching the fiber
/// core inside its acceptance cone.
///
/// Chunk `k` of `MC_CHUNK` samples draws from stream `k` of a ChaCha8 generator
/// keyed by `seed`, so the result does not depend on the number of threads.
pub fn collection_mc(
    stack: &OpticalStack,
    ion_height: f64,
    lateral_offset: [f64; 2],
    n_samples: u64,
    seed: u64,
) -> Result<CollectionEstimate, PhotonicsError> {
    stack.validate()?;
    if !(ion_height > 0.0 && ion_height.is_finite()) {
        return Err(PhotonicsError::Height);
    }
    if n_samples == 0 {
        return Err(PhotonicsError::Samples);
    }
    let ion = [lateral_offset[0], lateral_offset[1], ion_height];
    let sin_max = stack.fiber_na;
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let collected: u64 = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let count = MC_CHUNK.min(n_samples - k * MC_CHUNK);
            (0..count)
                .filter(|_| stack.collects(ion, sample_direction(&mut rng, &stack.emission_pattern), sin_max))
                .count() as u64
        })
        .sum();
    let n = n_samples as f64;
    let fraction = collected as f64 / n;
    Ok(CollectionEstimate {
        fraction,
        std_error: (fraction * (1.0 - fraction) / n).sqrt(),
        collected,
        samples: n_samples,
    })
}

/// Product of the element transmissions and the detector coupling.
pub fn loss_chain(stack: &OpticalStack) -> f64 {
    stack.loss_elements.iter().map(|e| e.transmission).product::<f64>() * stack.pmt_coupling
}

pub fn net_efficiency(stack: &OpticalStack, ion_height: f64, n_samples: u64, seed: u64) -> Result<f64, PhotonicsError> {
    Ok(collection_mc(stack, ion_height, [0.0, 0.0], n_samples, seed)?.fraction * loss_chain(stack))
}

/// Net fiber efficiency relative to a lossless lens of `stack.lens_na`.
pub fn fiber_lens_ratio(stack: &OpticalStack, ion_height: f64, n_samples: u64, seed: u64) -> Result<f64, PhotonicsError> {
    Ok(net_efficiency(stack, ion_height, n_samples, seed)? / cone_fraction(stack.lens_na)?)
}

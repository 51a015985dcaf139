//! Simulated measurement protocols: spectrum, displacement and height scans.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use thiserror::Error;

use crate::constants::TWO_PI;
use crate::control::{micromotion_along, ControlError};
use crate::fields::{Vec3, Voltages, Z_MIN};
use crate::photonics::{collection_mc, cone_fraction, loss_chain, CollectionEstimate, LineshapeParams, OpticalStack, PhotonicsError};
use crate::trap::{RfTrap, TrapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid scan: {0}")]
    Invalid(String),
    #[error("setpoint {index} puts the ion below the surface guard (z = {z:.3e} m)")]
    BelowSurface { index: usize, z: f64 },
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Photonics(#[from] PhotonicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Probe {
    /// Peak saturation parameter at the beam centre.
    pub s0: f64,
    /// 1/e² intensity radius (m).
    pub waist: f64,
    /// Unit wavevector direction.
    pub direction: [f64; 3],
    /// Detuning used by displacement and height scans (rad/s).
    pub detuning: f64,
}

impl Default for Probe {
    fn default() -> Self {
        Self {
            s0: 0.2,
            waist: 30e-6,
            direction: [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.0],
            detuning: 0.0,
        }
    }
}

impl Probe {
    pub fn direction(&self) -> Vec3 {
        Vec3::from(self.direction)
    }

    /// Saturation at a displacement `d` from the beam axis point.
    pub fn saturation_at(&self, d: &Vec3) -> f64 {
        let k = self.direction().normalize();
        let rho2 = (d - k * k.dot(d)).norm_squared();
        self.s0 * (-2.0 * rho2 / (self.waist * self.waist)).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Backgrounds {
    /// counts/s
    pub fiber: f64,
    /// counts/s
    pub lens: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum Setpoints {
    /// Probe detunings (rad/s).
    Spectrum(Vec<f64>),
    /// Ion displacements from the null (m).
    Displacement(Vec<[f64; 3]>),
    /// Outer/inner rf ratios.
    Height(Vec<f64>),
}

impl Setpoints {
    pub fn len(&self) -> usize {
        match self {
            Setpoints::Spectrum(v) | Setpoints::Height(v) => v.len(),
            Setpoints::Displacement(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanSpec {
    pub setpoints: Setpoints,
    /// s
    pub detect_time: f64,
    pub cycles: u64,
    /// s; not simulated.
    pub cool_time: f64,
    pub probe: Probe,
    pub backgrounds: Backgrounds,
    /// Monte Carlo samples for the fiber collection fraction.
    pub mc_samples: u64,
    pub seed: u64,
    /// Optional uncompensated dc field at the ion (V/m).
    pub stray_field: Option<[f64; 3]>,
}

impl ScanSpec {
    pub fn new(setpoints: Setpoints) -> Self {
        Self {
            setpoints,
            detect_time: 400e-6,
            cycles: 4000,
            cool_time: 4e-3,
            probe: Probe::default(),
            backgrounds: Backgrounds::default(),
            mc_samples: 1_000_000,
            seed: 0,
            stray_field: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.into()));
        if self.setpoints.is_empty() {
            return bad("setpoint list is empty");
        }
        if !(self.detect_time > 0.0 && self.detect_time.is_finite()) {
            return bad("detect_time must be positive");
        }
        if self.cycles == 0 {
            return bad("cycles must be at least 1");
        }
        if !(self.probe.waist > 0.0 && self.probe.waist.is_finite()) {
            return bad("probe waist must be positive");
        }
        if !(self.probe.s0 >= 0.0 && self.probe.s0.is_finite()) {
            return bad("probe s0 must be non-negative");
        }
        if !(self.probe.direction().norm() > 0.0) {
            return bad("probe direction must be nonzero");
        }
        if !(self.backgrounds.fiber >= 0.0 && self.backgrounds.lens >= 0.0) {
            return bad("background rates must be non-negative");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        Ok(())
    }

    fn exposure(&self) -> f64 {
        self.detect_time * self.cycles as f64
    }
}

/// Evenly spaced detunings from `from_hz` to `to_hz` inclusive, in rad/s.
pub fn detuning_grid(from_hz: f64, to_hz: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![TWO_PI * from_hz],
        _ => (0..n)
            .map(|i| TWO_PI * (from_hz + (to_hz - from_hz) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// `n` displacements along `direction`, symmetric about zero with the given extent (m).
pub fn displacement_grid(direction: &Vec3, extent: f64, n: usize) -> Vec<[f64; 3]> {
    let u = direction.normalize();
    if n < 2 {
        return vec![[0.0; 3]; n];
    }
    (0..n)
        .map(|i| (u * (-extent + 2.0 * extent * i as f64 / (n - 1) as f64)).into())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Fiber,
    Lens,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Fiber => "fiber",
            Channel::Lens => "lens",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Channel::Fiber => 0,
            Channel::Lens => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    /// Detuning in Hz, signed displacement along the scan axis in m, or α.
    pub setpoint: f64,
    pub expected_rate: f64,
    pub expected_counts: f64,
    pub sampled_counts: u64,
    pub beta: f64,
    pub saturation_at_ion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanResult {
    pub channel: Channel,
    /// Photons detected per photon scattered.
    pub efficiency: f64,
    pub points: Vec<ScanPoint>,
    pub spec: ScanSpec,
}

impl ScanResult {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["setpoint", "expected_rate_hz", "expected_counts", "sampled_counts", "beta", "channel"])
            .expect("in-memory csv");
        for p in &self.points {
            w.write_record([
                p.setpoint.to_string(),
                p.expected_rate.to_string(),
                p.expected_counts.to_string(),
                p.sampled_counts.to_string(),
                p.beta.to_string(),
                self.channel.name().to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scan result serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelPair {
    pub fiber: ScanResult,
    pub lens: ScanResult,
}

/// Poisson draw with mean `expected`, reproducible from `(seed, index)`.
pub fn sample_counts(expected: f64, seed: u64, index: u64) -> u64 {
    if !(expected > 0.0) {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    match Poisson::new(expected) {
        Ok(p) => p.sample(&mut rng) as u64,
        Err(_) => expected.round() as u64,
    }
}

/// Fiber and lens efficiencies for an ion at `height`.
pub fn channel_efficiencies(
    stack: &OpticalStack,
    height: f64,
    samples: u64,
    seed: u64,
) -> Result<(CollectionEstimate, f64, f64), ExperimentError> {
    let est = collection_mc(stack, height, [0.0, 0.0], samples, seed)?;
    let fiber = est.fraction * loss_chain(stack);
    let lens = cone_fraction(stack.lens_na)?;
    Ok((est, fiber, lens))
}

struct Sample {
    setpoint: f64,
    rate: f64,
    beta: f64,
    saturation: f64,
}

fn build(spec: &ScanSpec, fiber_eff: f64, lens_eff: f64, samples: &[Sample]) -> ChannelPair {
    let channel = |channel: Channel, eff: f64, background: f64| ScanResult {
        channel,
        efficiency: eff,
        points: samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let expected_rate = eff * s.rate + background;
                let expected_counts = expected_rate * spec.exposure();
                ScanPoint {
                    setpoint: s.setpoint,
                    expected_rate,
                    expected_counts,
                    sampled_counts: sample_counts(expected_counts, spec.seed, 2 * i as u64 + channel.stream()),
                    beta: s.beta,
                    saturation_at_ion: s.saturation,
                }
            })
            .collect(),
        spec: spec.clone(),
    };
    ChannelPair {
        fiber: channel(Channel::Fiber, fiber_eff, spec.backgrounds.fiber),
        lens: channel(Channel::Lens, lens_eff, spec.backgrounds.lens),
    }
}

fn lineshape(trap: &RfTrap, s: f64, delta: f64, beta: f64) -> LineshapeParams {
    LineshapeParams {
        gamma: trap.species.gamma,
        s,
        delta,
        beta,
        omega_rf: trap.drive.omega_rf,
        background_rate: 0.0,
    }
}

/// Ion equilibrium: the rf null, pushed by the stray field if one is given.
fn ion_position(trap: &RfTrap, spec: &ScanSpec) -> Result<Vec3, ExperimentError> {
    let null = trap.find_rf_null(&trap.default_guess())?;
    let Some(stray) = spec.stray_field else {
        return Ok(null);
    };
    let k = trap.total_curvature(&Voltages::new(), &null)?;
    let push = trap.species.charge * Vec3::from(stray);
    let d = k.lu().solve(&push).ok_or(TrapError::Unstable {
        axis: Vec3::z(),
        curvature: 0.0,
    })?;
    Ok(null + d)
}

/// Fluorescence vs probe detuning, ion at its equilibrium.
pub fn spectrum_scan(trap: &RfTrap, stack: &OpticalStack, spec: &ScanSpec) -> Result<ChannelPair, ExperimentError> {
    spec.validate()?;
    let Setpoints::Spectrum(detunings) = &spec.setpoints else {
        return Err(ExperimentError::Invalid("spectrum scan needs detuning setpoints".into()));
    };
    let ion = ion_position(trap, spec)?;
    let beta = micromotion_along(trap, &ion, &spec.probe.direction())?.beta;
    let (_, fiber, lens) = channel_efficiencies(stack, ion.z, spec.mc_samples, spec.seed)?;
    let s = spec.probe.s0;
    let samples: Vec<Sample> = detunings
        .iter()
        .map(|&delta| Sample {
            setpoint: delta / TWO_PI,
            rate: lineshape(trap, s, delta, beta).scattering_rate(),
            beta,
            saturation: s,
        })
        .collect();
    Ok(build(spec, fiber, lens, &samples))
}

/// Fluorescence vs ion displacement from the null; the probe axis passes
/// through the null. Collection efficiency is evaluated at the null.
pub fn displacement_scan(
    trap: &RfTrap,
    stack: &OpticalStack,
    spec: &ScanSpec,
    shim_direction: &Vec3,
) -> Result<ChannelPair, ExperimentError> {
    spec.validate()?;
    let Setpoints::Displacement(displacements) = &spec.setpoints else {
        return Err(ExperimentError::Invalid("displacement scan needs displacement setpoints".into()));
    };
    if !(shim_direction.norm() > 0.0) {
        return Err(ExperimentError::Invalid("shim direction must be nonzero".into()));
    }
    let axis = shim_direction.normalize();
    let null = trap.find_rf_null(&trap.default_guess())?;
    let (_, fiber, lens) = channel_efficiencies(stack, null.z, spec.mc_samples, spec.seed)?;
    let probe = spec.probe.direction();
    let samples = displacements
        .iter()
        .enumerate()
        .map(|(index, d)| {
            let d = Vec3::from(*d);
            let r = null + d;
            if r.z <= Z_MIN {
                return Err(ExperimentError::BelowSurface { index, z: r.z });
            }
            let beta = micromotion_along(trap, &r, &probe)?.beta;
            let s = spec.probe.saturation_at(&d);
            Ok(Sample {
                setpoint: axis.dot(&d),
                rate: lineshape(trap, s, spec.probe.detuning, beta).scattering_rate(),
                beta,
                saturation: s,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(build(spec, fiber, lens, &samples))
}

/// Displacement directions perpendicular to the probe: one along which the
/// rf field seen by the probe grows fastest, one along which it stays zero to
/// first order.
pub fn micromotion_axes(trap: &RfTrap, null: &Vec3, probe: &Vec3) -> Result<(Vec3, Vec3), ExperimentError> {
    let k = probe.normalize();
    let jk = trap.rf_jacobian(null)? * k;
    let transverse = jk - k * k.dot(&jk);
    if !(transverse.norm() > 0.0) {
        return Err(ExperimentError::Invalid("rf gradient is parallel to the probe".into()));
    }
    let sensitive = transverse.normalize();
    let insensitive = k.cross(&sensitive).normalize();
    Ok((sensitive, insensitive))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HeightPoint {
    pub alpha: f64,
    /// m
    pub height: f64,
    pub collection: CollectionEstimate,
    pub net_efficiency: f64,
}

/// Null height and fiber efficiency for each outer/inner ratio.
pub fn height_scan(
    trap: &RfTrap,
    stack: &OpticalStack,
    alphas: &[f64],
    samples: u64,
    seed: u64,
) -> Result<Vec<HeightPoint>, ExperimentError> {
    if alphas.is_empty() {
        return Err(ExperimentError::Invalid("alpha list is empty".into()));
    }
    let mut guess = trap.default_guess();
    alphas
        .iter()
        .map(|&alpha| {
            let t = trap.with_drive(trap.drive.with_alpha(alpha))?;
            let null = t.find_rf_null(&guess)?;
            guess = null;
            let (collection, net, _) = channel_efficiencies(stack, null.z, samples, seed)?;
            Ok(HeightPoint {
                alpha,
                height: null.z,
                collection,
                net_efficiency: net,
            })
        })
        .collect()
}

//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::constants::MICRON;
use crate::control::{shim_basis, stray_compensation, ControlError};
use crate::experiment::{
    detuning_grid, displacement_grid, displacement_scan, height_scan, micromotion_axes, spectrum_scan, ChannelPair,
    ExperimentError, ScanSpec, Setpoints,
};
use crate::fields::{Vec3, Voltages};
use crate::layout::{example_layout, parse_layout, validate_layout, ElectrodeLayout, LayoutError};
use crate::photonics::{collection_mc, cone_fraction, loss_chain, OpticalStack, PhotonicsError};
use crate::trap::{tilt_from_minus_y, IonSpecies, RfDrive, RfTrap, TrapError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<TrapError> for CliError {
    fn from(e: TrapError) -> Self {
        match e {
            TrapError::InvalidDrive(_) | TrapError::MissingRfInner | TrapError::MissingRfOuter => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Trap(t) => t.into(),
            ControlError::InvalidBound | ControlError::InvalidDirection | ControlError::InvalidField | ControlError::NoDcElectrodes => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PhotonicsError> for CliError {
    fn from(e: PhotonicsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Trap(t) => t.into(),
            ExperimentError::Control(c) => c.into(),
            ExperimentError::Photonics(p) => p.into(),
            ExperimentError::Invalid(_) => CliError::Config(e.to_string()),
            ExperimentError::BelowSurface { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fibertrap", version, about = "Surface-electrode ion trap with fiber light collection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the rf null, secular modes and trap depth.
    Solve(SolveArgs),
    /// Fiber collection budget.
    Collect(CollectArgs),
    /// Simulated fluorescence scans, written as CSV per channel.
    Scan(ScanArgs),
    /// dc voltages cancelling a stray field at the null.
    Compensate(CompensateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct TrapArgs {
    /// Layout JSON file, or "example" for the bundled layout.
    #[arg(long, default_value = "example")]
    pub layout: String,
    /// rf frequency (MHz).
    #[arg(long, default_value_t = 45.0)]
    pub freq: f64,
    /// rf amplitude on the inner electrode (V).
    #[arg(long, default_value_t = 50.0)]
    pub vrf: f64,
    /// Outer/inner rf amplitude ratio.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Ground the inner rf electrode and drive only the outer one at --vrf.
    #[arg(long)]
    pub outer_only: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub trap: TrapArgs,
    /// dc electrode voltage as ID=VOLTS; repeatable.
    #[arg(long = "dc", value_name = "ID=VOLTS")]
    pub dc: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Ion height above the surface (μm).
    #[arg(long, default_value_t = 50.0)]
    pub height: f64,
    /// Fiber numerical aperture.
    #[arg(long = "fiber-na", visible_alias = "na", default_value_t = 0.37)]
    pub fiber_na: f64,
    /// Reference lens numerical aperture.
    #[arg(long, default_value_t = 0.5)]
    pub lens_na: f64,
    /// Drop all transmission losses and detector coupling.
    #[arg(long)]
    pub lossless: bool,
    /// Monte Carlo samples; scientific notation accepted.
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScanKind {
    Spectrum,
    Displacement,
    Height,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScanAxis {
    /// Perpendicular to the probe, along the rf gradient it sees.
    Sensitive,
    /// Perpendicular to the probe and to that gradient.
    Insensitive,
    X,
    Y,
    Z,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub trap: TrapArgs,
    #[arg(long, value_enum, default_value = "spectrum")]
    pub kind: ScanKind,
    /// First detuning (MHz).
    #[arg(long, default_value_t = -80.0, allow_hyphen_values = true)]
    pub from: f64,
    /// Last detuning (MHz).
    #[arg(long, default_value_t = 40.0, allow_hyphen_values = true)]
    pub to: f64,
    /// Number of setpoints for spectrum and displacement scans.
    #[arg(long, default_value_t = 121)]
    pub points: usize,
    /// Displacement scan axis.
    #[arg(long, value_enum, default_value = "sensitive")]
    pub axis: ScanAxis,
    /// Half range of the displacement scan (μm).
    #[arg(long, default_value_t = 20.0)]
    pub extent: f64,
    /// Comma-separated α values for a height scan.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub alphas: Vec<f64>,
    /// Probe saturation parameter at beam centre.
    #[arg(long, default_value_t = 0.2)]
    pub s0: f64,
    /// Probe waist (μm).
    #[arg(long, default_value_t = 30.0)]
    pub waist: f64,
    #[arg(long, default_value_t = 400.0)]
    pub detect_us: f64,
    #[arg(long, default_value_t = 4000)]
    pub cycles: u64,
    #[arg(long, default_value = "1e6", value_parser = parse_count)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix: writes PREFIX_fiber.csv, PREFIX_lens.csv and PREFIX.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompensateArgs {
    #[command(flatten)]
    pub trap: TrapArgs,
    /// Stray field Ex,Ey,Ez (V/m).
    #[arg(long, default_value = "500,0,0", value_parser = parse_vec3, allow_hyphen_values = true)]
    pub stray: [f64; 3],
    /// Voltage bound (V).
    #[arg(long, default_value_t = 10.0)]
    pub bound: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Three comma-separated numbers.
pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("not a number: {p}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| format!("expected three comma-separated values, got {s}"))
}

/// Counts like `1000000` or `1e6`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format!("not a non-negative integer count: {s}"))
    }
}

pub fn load_layout(source: &str) -> Result<ElectrodeLayout, CliError> {
    if source == "example" {
        return Ok(example_layout());
    }
    let text = std::fs::read_to_string(source).map_err(|e| CliError::Config(format!("cannot read layout {source}: {e}")))?;
    let layout = parse_layout(&text).map_err(|e| match e {
        LayoutError::Invalid(d) => CliError::Config(format!(
            "layout {source} is invalid: {}",
            d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
        )),
        other => CliError::Config(format!("layout {source}: {other}")),
    })?;
    let diagnostics = validate_layout(&layout);
    if !diagnostics.is_empty() {
        return Err(CliError::Config(format!(
            "layout {source} is invalid: {}",
            diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
        )));
    }
    Ok(layout)
}

impl TrapArgs {
    pub fn drive(&self) -> RfDrive {
        if self.outer_only {
            RfDrive::outer_only(self.freq * 1e6, self.vrf)
        } else {
            RfDrive::new(self.freq * 1e6, self.vrf, self.alpha)
        }
    }

    pub fn build(&self) -> Result<(ElectrodeLayout, RfTrap), CliError> {
        let layout = load_layout(&self.layout)?;
        let trap = RfTrap::new(&layout, self.drive(), IonSpecies::mg24())?;
        Ok((layout, trap))
    }

    fn echo(&self) -> serde_json::Value {
        json!({
            "layout": self.layout,
            "freq_mhz": self.freq,
            "vrf": self.vrf,
            "alpha": if self.outer_only { serde_json::Value::Null } else { self.alpha.into() },
            "outer_only": self.outer_only,
        })
    }
}

fn parse_dc(items: &[String], layout: &ElectrodeLayout) -> Result<Voltages, CliError> {
    let mut v = Voltages::new();
    for item in items {
        let (id, volts) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--dc expects ID=VOLTS, got {item}")))?;
        let volts: f64 = volts
            .parse()
            .map_err(|_| CliError::Config(format!("--dc {item}: not a number")))?;
        match layout.patch(id) {
            Some(p) if p.role.is_dc() => {
                v.insert(id.to_string(), volts);
            }
            Some(_) => return Err(CliError::Config(format!("--dc {id}: not a dc electrode"))),
            None => return Err(CliError::Config(format!("--dc {id}: no such electrode"))),
        }
    }
    Ok(v)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Text written by one command: (path, contents) pairs, or stdout when the path is `None`.
pub type Output = Vec<(Option<PathBuf>, String)>;

pub fn cmd_solve(args: &SolveArgs) -> Result<Output, CliError> {
    let (layout, trap) = args.trap.build()?;
    let dc = parse_dc(&args.dc, &layout)?;
    let sol = trap.solve(&trap.default_guess(), &dc)?;
    let lowest = sol.secular[0].axis();
    let report = json!({
        "command": "solve",
        "seed": args.seed,
        "config": args.trap.echo(),
        "dc": dc,
        "null_um": sol.null_position.map(|c| c / MICRON),
        "residual_field_v_per_m": sol.residual_field,
        "frequencies_mhz": sol.secular.map(|m| m.frequency_hz / 1e6),
        "axes": sol.secular.map(|m| m.axis),
        "lowest_mode_tilt_deg": tilt_from_minus_y(&lowest),
        "depth": {
            "kelvin": sol.depth.kelvin(),
            "ev": sol.depth.electron_volts(),
            "saddle_um": sol.depth.saddle.map(|c| c / MICRON),
        },
    });
    Ok(vec![(args.out.clone(), to_json(&report))])
}

pub fn cmd_collect(args: &CollectArgs) -> Result<Output, CliError> {
    let mut stack = OpticalStack {
        fiber_na: args.fiber_na,
        lens_na: args.lens_na,
        ..OpticalStack::default()
    };
    if args.lossless {
        stack = stack.lossless();
    }
    if !(args.height > 0.0) {
        return Err(CliError::Config("--height must be positive".into()));
    }
    let height = args.height * MICRON;
    let est = collection_mc(&stack, height, [0.0, 0.0], args.samples, args.seed)?;
    let chain = loss_chain(&stack);
    let net = est.fraction * chain;
    let lens = cone_fraction(stack.lens_na)?;
    let report = json!({
        "command": "collect",
        "seed": args.seed,
        "samples": args.samples,
        "height_um": args.height,
        "stack": stack,
        "cone_fraction": cone_fraction(stack.fiber_na)?,
        "subtended_na": stack.subtended_na(height),
        "mc_fraction": est.fraction,
        "mc_std_error": est.std_error,
        "loss_chain": chain,
        "net_efficiency": net,
        "lens_fraction": lens,
        "fiber_lens_ratio": net / lens,
    });
    Ok(vec![(args.out.clone(), to_json(&report))])
}

fn scan_outputs(pair: &ChannelPair, out: &Option<PathBuf>) -> Output {
    match out {
        None => vec![(None, pair.fiber.to_csv()), (None, pair.lens.to_csv())],
        Some(prefix) => {
            let with = |suffix: &str| {
                let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                name.push(suffix);
                Some(prefix.with_file_name(name))
            };
            vec![
                (with("_fiber.csv"), pair.fiber.to_csv()),
                (with("_lens.csv"), pair.lens.to_csv()),
                (with(".json"), to_json(pair)),
            ]
        }
    }
}

pub fn cmd_scan(args: &ScanArgs) -> Result<Output, CliError> {
    let stack = OpticalStack::default();
    let mut spec = ScanSpec::new(Setpoints::Spectrum(Vec::new()));
    spec.detect_time = args.detect_us * 1e-6;
    spec.cycles = args.cycles;
    spec.probe.s0 = args.s0;
    spec.probe.waist = args.waist * MICRON;
    spec.mc_samples = args.samples;
    spec.seed = args.seed;
    match args.kind {
        ScanKind::Spectrum => {
            let (_, trap) = args.trap.build()?;
            spec.setpoints = Setpoints::Spectrum(detuning_grid(args.from * 1e6, args.to * 1e6, args.points));
            Ok(scan_outputs(&spectrum_scan(&trap, &stack, &spec)?, &args.out))
        }
        ScanKind::Displacement => {
            let (_, trap) = args.trap.build()?;
            let null = trap.find_rf_null(&trap.default_guess())?;
            let direction = match args.axis {
                ScanAxis::X => Vec3::x(),
                ScanAxis::Y => Vec3::y(),
                ScanAxis::Z => Vec3::z(),
                ScanAxis::Sensitive | ScanAxis::Insensitive => {
                    let (s, i) = micromotion_axes(&trap, &null, &spec.probe.direction())?;
                    if matches!(args.axis, ScanAxis::Sensitive) {
                        s
                    } else {
                        i
                    }
                }
            };
            spec.setpoints = Setpoints::Displacement(displacement_grid(&direction, args.extent * MICRON, args.points));
            Ok(scan_outputs(&displacement_scan(&trap, &stack, &spec, &direction)?, &args.out))
        }
        ScanKind::Height => {
            if args.alphas.is_empty() {
                return Err(CliError::Config("--alphas is empty".into()));
            }
            let (_, trap) = args.trap.build()?;
            let points = height_scan(&trap, &stack, &args.alphas, args.samples, args.seed)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["alpha", "height_um", "mc_fraction", "mc_std_error", "net_efficiency"])
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            for p in &points {
                w.write_record([
                    p.alpha.to_string(),
                    (p.height / MICRON).to_string(),
                    p.collection.fraction.to_string(),
                    p.collection.std_error.to_string(),
                    p.net_efficiency.to_string(),
                ])
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            }
            let text = String::from_utf8(w.into_inner().map_err(|e| CliError::Numerical(e.to_string()))?)
                .expect("csv is utf-8");
            let path = args.out.as_ref().map(|p| p.with_extension("csv"));
            Ok(vec![(path, text)])
        }
    }
}

pub fn cmd_compensate(args: &CompensateArgs) -> Result<Output, CliError> {
    let (layout, trap) = args.trap.build()?;
    let null = trap.find_rf_null(&trap.default_guess())?;
    let basis = shim_basis(&layout, &null)?;
    let stray = Vec3::from(args.stray);
    let set = stray_compensation(&basis, &stray, args.bound)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["electrode", "volts"]).map_err(|e| CliError::Numerical(e.to_string()))?;
    for (id, v) in &set.voltages {
        w.write_record([id.clone(), v.to_string()])
            .map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| CliError::Numerical(e.to_string()))?).expect("csv is utf-8");
    let mut out = vec![(args.out.clone(), text)];
    if args.out.is_none() {
        let residual = (set.achieved_field() + stray).norm();
        out.push((
            None,
            format!(
                "# seed {}, null at ({:.3}, {:.3}, {:.3}) um, residual {:.3e} V/m, max |V| {:.6}\n",
                args.seed,
                null.x / MICRON,
                null.y / MICRON,
                null.z / MICRON,
                residual,
                set.max_abs()
            ),
        ));
    }
    Ok(out)
}

pub fn execute(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Collect(a) => cmd_collect(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Compensate(a) => cmd_compensate(a),
    }
}

fn write_output(output: &Output) -> Result<(), CliError> {
    for (path, text) in output {
        match path {
            Some(p) => write_file(p, text)?,
            None => print!("{text}"),
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Parse, run and report; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli).and_then(|out| write_output(&out)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("1e7"), Ok(10_000_000));
        assert_eq!(parse_count("4096"), Ok(4096));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn mhz_and_volts_convert() {
        let t = TrapArgs {
            layout: "example".into(),
            freq: 45.0,
            vrf: 50.0,
            alpha: 0.5,
            outer_only: false,
        };
        let d = t.drive();
        assert!((d.omega_rf - TWO_PI * 45e6).abs() < 1e-6);
        assert_eq!(d.v_inner, 50.0);
        assert_eq!(d.alpha, 0.5);
    }

    #[test]
    fn missing_layout_is_a_config_error() {
        let e = load_layout("/nonexistent/layout.json").unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }
}

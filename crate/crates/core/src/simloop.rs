//! Fixed-step closed-loop simulation with transport delay, actuator
//! saturation and the three robustness stressors: plant gain doubling,
//! multiplicative measurement noise and an additive load step on the
//! control signal.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerParams, FractionalPid};
use crate::error::{invalid_param, Error, Result};
use crate::plant::{design_plant, LinearPlant, TankInput, TankPlant, TankState, TransferFunction};

/// Relative amplitude of the measurement noise (uniform, +-10 %).
pub const NOISE_AMPLITUDE: f64 = 0.1;
/// Load step added to the control signal, as a fraction of the setpoint.
pub const DISTURBANCE_FRACTION: f64 = 0.2;
/// Plant gain multiplier when the gain-uncertainty factor is on.
pub const GAIN_UNCERTAINTY: f64 = 2.0;

/// Which plant closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantMode {
    /// Rational design model with dead time.
    #[default]
    Linear,
    /// Tank process under the linearizing state feedback; the controller
    /// output is the synthetic input of the law.
    Nonlinear,
}

/// Two-level settings of the three stressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct FactorLevels {
    #[serde(alias = "a")]
    pub a_gain_uncertainty: u8,
    #[serde(alias = "b")]
    pub b_noise: u8,
    #[serde(alias = "c")]
    pub c_disturbance: u8,
}

impl FactorLevels {
    pub const NOMINAL: Self = Self {
        a_gain_uncertainty: 0,
        b_noise: 0,
        c_disturbance: 0,
    };

    pub fn new(a: u8, b: u8, c: u8) -> Result<Self> {
        let f = Self {
            a_gain_uncertainty: a,
            b_noise: b,
            c_disturbance: c,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("A", self.a_gain_uncertainty),
            ("B", self.b_noise),
            ("C", self.c_disturbance),
        ] {
            if v > 1 {
                return Err(invalid_param(format!("factor {name} level must be 0 or 1, got {v}")));
            }
        }
        Ok(())
    }

    /// All eight combinations in (C, B, A) order with A varying fastest.
    pub fn all() -> [Self; 8] {
        std::array::from_fn(|i| Self {
            a_gain_uncertainty: (i & 1) as u8,
            b_noise: ((i >> 1) & 1) as u8,
            c_disturbance: ((i >> 2) & 1) as u8,
        })
    }
}

/// Simulation settings. Every field has a default, so JSON files may list
/// only what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Sample period in seconds.
    pub step: f64,
    pub horizon: f64,
    /// Reference level, applied as a step at `t = 0`.
    pub setpoint: f64,
    pub plant_mode: PlantMode,
    pub seed: u64,
    pub factors: FactorLevels,
    /// Time at which the load step starts.
    pub disturbance_time: f64,
    /// Linear model; its delay also sets the input delay in nonlinear mode.
    pub plant: TransferFunction,
    /// Starting levels in nonlinear mode.
    pub initial_tank: TankState,
    pub conditional_integration: bool,
    /// Short-memory window (samples) for the fractional terms.
    pub memory: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            horizon: 30.0,
            setpoint: 1.0,
            plant_mode: PlantMode::Linear,
            seed: 42,
            factors: FactorLevels::NOMINAL,
            disturbance_time: 15.0,
            plant: design_plant(),
            initial_tank: TankState::default(),
            conditional_integration: false,
            memory: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(invalid_param(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon >= self.disturbance_time) || !self.horizon.is_finite() {
            return Err(invalid_param(format!(
                "horizon {} must not precede the disturbance time {}",
                self.horizon, self.disturbance_time
            )));
        }
        if !(self.disturbance_time >= 0.0) {
            return Err(invalid_param("disturbance time must be >= 0"));
        }
        let n = self.horizon / self.step;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(invalid_param(format!(
                "horizon {} is not a whole number of steps of {}",
                self.horizon, self.step
            )));
        }
        if !self.setpoint.is_finite() {
            return Err(invalid_param("setpoint must be finite"));
        }
        self.factors.validate()?;
        self.plant.validate()?;
        self.initial_tank.validate()?;
        Ok(())
    }

    /// Number of samples in a trace, `horizon/step + 1`.
    pub fn samples(&self) -> usize {
        (self.horizon / self.step).round() as usize + 1
    }

    pub fn delay_samples(&self) -> usize {
        (self.plant.delay / self.step).round() as usize
    }

    pub fn with_factors(&self, factors: FactorLevels) -> Self {
        Self {
            factors,
            ..self.clone()
        }
    }
}

enum PlantCore {
    Linear(LinearPlant),
    Tank(TankPlant),
}

/// Plant behind an input FIFO of whole samples.
struct DelayedPlant {
    core: PlantCore,
    fifo: VecDeque<f64>,
    held: f64,
}

impl DelayedPlant {
    fn new(config: &SimConfig) -> Result<Self> {
        let gain = if config.factors.a_gain_uncertainty == 1 {
            GAIN_UNCERTAINTY
        } else {
            1.0
        };
        let core = match config.plant_mode {
            PlantMode::Linear => {
                PlantCore::Linear(LinearPlant::new(&config.plant.with_gain_factor(gain))?)
            }
            PlantMode::Nonlinear => {
                let mut tank = TankPlant::new(config.initial_tank, TankInput::Linearized)?;
                tank.input_gain = gain;
                // reject a singular start before the first sample
                crate::plant::lie_bundle(config.initial_tank)?;
                PlantCore::Tank(tank)
            }
        };
        let d = config.delay_samples();
        Ok(Self {
            core,
            fifo: VecDeque::from(vec![0.0; d]),
            held: 0.0,
        })
    }

    /// Output at the current sample; a direct feedthrough term sees the input
    /// held over the previous interval.
    fn output(&self) -> f64 {
        match &self.core {
            PlantCore::Linear(p) => p.output(self.held),
            PlantCore::Tank(p) => p.state.output(),
        }
    }

    fn advance(&mut self, u: f64, h: f64) -> Result<()> {
        self.fifo.push_back(u);
        let input = self.fifo.pop_front().unwrap_or(u);
        self.held = input;
        match &mut self.core {
            PlantCore::Linear(p) => p.step(input, h),
            PlantCore::Tank(p) => p.step(input, h)?,
        }
        Ok(())
    }
}

/// Uniformly sampled record of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub time: Vec<f64>,
    pub reference: Vec<f64>,
    /// Plant output `y`.
    pub output: Vec<f64>,
    /// Measured output `y_m`.
    pub measured: Vec<f64>,
    /// `e = r - y_m`.
    pub error: Vec<f64>,
    /// Controller output after clamping to the actuator range.
    pub control: Vec<f64>,
    /// Control signal reaching the plant input FIFO, load step included.
    pub applied: Vec<f64>,
    /// Controller output before clamping.
    pub demand: Vec<f64>,
    pub step: f64,
}

impl SimTrace {
    fn with_capacity(n: usize, step: f64) -> Self {
        Self {
            time: Vec::with_capacity(n),
            reference: Vec::with_capacity(n),
            output: Vec::with_capacity(n),
            measured: Vec::with_capacity(n),
            error: Vec::with_capacity(n),
            control: Vec::with_capacity(n),
            applied: Vec::with_capacity(n),
            demand: Vec::with_capacity(n),
            step,
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Fraction of samples at which the controller demand lay outside the
    /// actuator range.
    pub fn saturated_fraction(&self, bounds: (f64, f64)) -> f64 {
        if self.demand.is_empty() {
            return 0.0;
        }
        let n = self
            .demand
            .iter()
            .filter(|u| **u < bounds.0 || **u > bounds.1)
            .count();
        n as f64 / self.demand.len() as f64
    }

    /// CSV with header `t,r,y,y_meas,e,u_raw,u_applied`, one row per sample,
    /// shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["t", "r", "y", "y_meas", "e", "u_raw", "u_applied"])?;
        for k in 0..self.len() {
            w.write_record(
                [
                    self.time[k],
                    self.reference[k],
                    self.output[k],
                    self.measured[k],
                    self.error[k],
                    self.control[k],
                    self.applied[k],
                ]
                .iter()
                .map(|v| v.to_string()),
            )?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Per-run noise stream. Draws happen only while the noise factor is on.
fn noise_source(config: &SimConfig) -> Option<ChaCha8Rng> {
    (config.factors.b_noise == 1).then(|| ChaCha8Rng::seed_from_u64(config.seed))
}

/// Runs the loop for `horizon/step + 1` samples.
///
/// Per sample: measure (with optional noise), form the error, compute the
/// clamped control, add the load step, push through the delay FIFO, and
/// advance the plant by one step.
pub fn simulate(controller: &ControllerParams, config: &SimConfig) -> Result<SimTrace> {
    config.validate()?;
    controller.validate()?;
    let h = config.step;
    let n = config.samples();
    let mut pid = FractionalPid::new(*controller, h)?
        .with_conditional_integration(config.conditional_integration);
    if let Some(m) = config.memory {
        pid = pid.with_memory(m);
    }
    pid.reserve(n);
    let mut plant = DelayedPlant::new(config)?;
    let mut noise = noise_source(config);
    let r = config.setpoint;
    let load_from = (config.disturbance_time / h).round() as usize;
    let load = if config.factors.c_disturbance == 1 {
        DISTURBANCE_FRACTION * r
    } else {
        0.0
    };

    let mut trace = SimTrace::with_capacity(n, h);
    for k in 0..n {
        let y = plant.output();
        let eta = noise
            .as_mut()
            .map_or(0.0, |rng| rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE));
        let y_m = y * (1.0 + eta);
        let e = r - y_m;
        let out = pid.step_detailed(e)?;
        let applied = out.saturated + if k >= load_from { load } else { 0.0 };

        trace.time.push(k as f64 * h);
        trace.reference.push(r);
        trace.output.push(y);
        trace.measured.push(y_m);
        trace.error.push(e);
        trace.control.push(out.saturated);
        trace.applied.push(applied);
        trace.demand.push(out.unsaturated);

        if k + 1 < n {
            plant.advance(applied, h)?;
        }
    }
    Ok(trace)
}

/// Plant output for an arbitrary input sequence with the loop open; the
/// sequence is applied through the same delay FIFO and hold as in
/// [`simulate`].
pub fn open_loop_response(config: &SimConfig, input: &[f64]) -> Result<Vec<f64>> {
    config.validate()?;
    let mut plant = DelayedPlant::new(config)?;
    let mut y = Vec::with_capacity(input.len());
    for (k, &u) in input.iter().enumerate() {
        y.push(plant.output());
        if k + 1 < input.len() {
            plant.advance(u, config.step)?;
        }
    }
    Ok(y)
}

/// Performance figures of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseMetrics {
    pub ise: f64,
    pub step_std: f64,
    pub control_mean: f64,
    pub control_std: f64,
}

/// Rectangular ISE and population statistics over the full horizon.
pub fn metrics(trace: &SimTrace) -> Result<ResponseMetrics> {
    if trace.is_empty() {
        return Err(Error::InvalidInput("empty trace".into()));
    }
    let ise = trace.error.iter().map(|e| e * e).sum::<f64>() * trace.step;
    let (_, step_std) = mean_std(&trace.output);
    let (control_mean, control_std) = mean_std(&trace.applied);
    Ok(ResponseMetrics {
        ise,
        step_std,
        control_mean,
        control_std,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Last time at which `y` is outside `band * |final - initial|` of its final
/// value; `None` if it never leaves the band after the first sample.
pub fn settling_time(time: &[f64], y: &[f64], band: f64) -> Option<f64> {
    let (first, last) = (*y.first()?, *y.last()?);
    let tol = band * (last - first).abs();
    let idx = y.iter().rposition(|v| (v - last).abs() > tol)?;
    time.get(idx + 1).copied()
}

/// Peak excursion beyond the final value relative to the step size, in
/// percent; zero for monotone responses.
pub fn overshoot_percent(y: &[f64]) -> f64 {
    let (Some(&first), Some(&last)) = (y.first(), y.last()) else {
        return 0.0;
    };
    let span = last - first;
    if span == 0.0 {
        return 0.0;
    }
    let peak = if span > 0.0 {
        y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - last
    } else {
        last - y.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    (peak / span.abs() * 100.0).max(0.0)
}

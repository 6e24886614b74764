//! Frequency-domain specifications, their evaluation on the open loop
//! `L = C G`, and a two-stage tuner: a penalised multi-start search that
//! meets the loop-shaping targets, followed by an ISE refinement inside the
//! tolerance band.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{controller_frequency_response, ControllerParams, SATURATION};
use crate::error::{Error, Result};
use crate::plant::TransferFunction;
use crate::simloop::{metrics, simulate, SimConfig};

mod nelder_mead;
pub use nelder_mead::{nelder_mead, Minimum};

/// Loop-shaping targets.
///
/// Unset rejection frequencies default to `gain_crossover / 100` for the
/// sensitivity bound and `10 * gain_crossover` for the noise bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrequencySpec {
    pub phase_margin_deg: f64,
    pub gain_crossover: f64,
    /// Upper bound on `|T(j w_t)|` in dB.
    pub noise_bound_db: f64,
    pub noise_freq: Option<f64>,
    /// Upper bound on `|S(j w_s)|` in dB.
    pub disturbance_bound_db: f64,
    pub disturbance_freq: Option<f64>,
    pub phase_margin_tol_deg: f64,
    pub crossover_tol_db: f64,
    /// Allowed `|d arg L / d w|` at crossover, degrees per rad/s.
    pub flatness_tol: f64,
}

impl Default for FrequencySpec {
    fn default() -> Self {
        Self {
            phase_margin_deg: 75.0,
            gain_crossover: 1.94,
            noise_bound_db: -3.0,
            noise_freq: None,
            disturbance_bound_db: -20.0,
            disturbance_freq: None,
            phase_margin_tol_deg: 1.0,
            crossover_tol_db: 0.25,
            flatness_tol: 0.5,
        }
    }
}

impl FrequencySpec {
    pub fn noise_freq(&self) -> f64 {
        self.noise_freq.unwrap_or(10.0 * self.gain_crossover)
    }

    pub fn disturbance_freq(&self) -> f64 {
        self.disturbance_freq.unwrap_or(0.01 * self.gain_crossover)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.phase_margin_deg > 0.0 && self.phase_margin_deg <= 90.0) {
            return bad(format!("phase margin must lie in (0, 90], got {}", self.phase_margin_deg));
        }
        if !(self.gain_crossover > 0.0) || !self.gain_crossover.is_finite() {
            return bad(format!("gain crossover must be positive, got {}", self.gain_crossover));
        }
        if !(self.noise_bound_db < 0.0) || !(self.disturbance_bound_db < 0.0) {
            return bad("rejection bounds must be negative dB values".into());
        }
        for (name, w) in [("noise", self.noise_freq()), ("disturbance", self.disturbance_freq())] {
            if !(w > 0.0) || !w.is_finite() {
                return bad(format!("{name} frequency must be positive, got {w}"));
            }
        }
        for (name, t) in [
            ("phase margin", self.phase_margin_tol_deg),
            ("crossover", self.crossover_tol_db),
            ("flatness", self.flatness_tol),
        ] {
            if !(t > 0.0) {
                return bad(format!("{name} tolerance must be positive, got {t}"));
            }
        }
        Ok(())
    }
}

/// `L(j w) = C(j w) G(j w)`.
pub fn open_loop(params: &ControllerParams, plant: &TransferFunction, omega: f64) -> Result<Complex64> {
    Ok(controller_frequency_response(params, omega)? * plant.frequency_response(omega))
}

fn rational_loop(params: &ControllerParams, plant: &TransferFunction, omega: f64) -> Result<Complex64> {
    Ok(controller_frequency_response(params, omega)? * plant.rational_response(omega))
}

/// Phase of the delay-free loop as `w -> 0`, in radians.
fn low_frequency_phase(params: &ControllerParams, plant: &TransferFunction) -> f64 {
    let controller = if params.tau_i.is_finite() {
        -params.lambda * PI / 2.0
    } else {
        0.0
    };
    let lowest = |p: &[f64]| {
        p.iter()
            .rev()
            .enumerate()
            .find(|(_, c)| **c != 0.0)
            .map(|(i, c)| (i as f64, *c))
            .unwrap_or((0.0, 1.0))
    };
    let (nz, bn) = lowest(&plant.num);
    let (np, an) = lowest(&plant.den);
    let sign = if bn / an < 0.0 { -PI } else { 0.0 };
    controller + (nz - np) * PI / 2.0 + sign
}

const POINTS_PER_DECADE: f64 = 50.0;

/// Continuous phase of `L(j w)` in radians.
///
/// The rational part is tracked from a frequency far below `omega`, starting
/// on the branch nearest its low-frequency asymptote; the dead-time phase
/// `-w theta` is added exactly.
pub fn unwrapped_phase(params: &ControllerParams, plant: &TransferFunction, omega: f64) -> Result<f64> {
    Ok(rational_phase(params, plant, omega)? - omega * plant.delay)
}

fn rational_phase(params: &ControllerParams, plant: &TransferFunction, omega: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::InvalidParameter(format!("frequency must be positive, got {omega}")));
    }
    let w0 = 1e-6 * omega.min(1.0);
    let decades = (omega / w0).log10();
    let n = (decades * POINTS_PER_DECADE).ceil().max(1.0) as usize;
    let mut prev = rational_loop(params, plant, w0)?;
    let asym = low_frequency_phase(params, plant);
    let mut phase = prev.arg();
    phase += 2.0 * PI * ((asym - phase) / (2.0 * PI)).round();
    for i in 1..=n {
        let w = w0 * (omega / w0).powf(i as f64 / n as f64);
        let next = rational_loop(params, plant, w)?;
        phase += (next * prev.conj()).arg();
        prev = next;
    }
    Ok(phase)
}

/// Continuous phase in degrees on an ascending frequency grid, tracked
/// point to point from the first entry.
pub fn phase_curve(params: &ControllerParams, plant: &TransferFunction, omegas: &[f64]) -> Result<Vec<f64>> {
    let Some(&first) = omegas.first() else {
        return Ok(Vec::new());
    };
    if omegas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("frequency grid must be strictly ascending".into()));
    }
    let mut phase = rational_phase(params, plant, first)?;
    let mut prev = rational_loop(params, plant, first)?;
    let mut out = Vec::with_capacity(omegas.len());
    out.push((phase - first * plant.delay).to_degrees());
    for &w in &omegas[1..] {
        // substeps keep each increment well inside (-pi, pi]
        let ratio = w / omegas[out.len() - 1];
        let sub = ((ratio.log10() * POINTS_PER_DECADE).ceil() as usize).max(1);
        let w_prev = omegas[out.len() - 1];
        for j in 1..=sub {
            let wj = w_prev * ratio.powf(j as f64 / sub as f64);
            let next = rational_loop(params, plant, wj)?;
            phase += (next * prev.conj()).arg();
            prev = next;
        }
        out.push((phase - w * plant.delay).to_degrees());
    }
    Ok(out)
}

/// `180 + arg L(j w_c)` in degrees.
pub fn eval_phase_margin(params: &ControllerParams, plant: &TransferFunction, omega_c: f64) -> Result<f64> {
    Ok(180.0 + unwrapped_phase(params, plant, omega_c)?.to_degrees())
}

/// `20 log10 |L(j w_c)|`; zero at an exact gain crossover.
pub fn eval_crossover_residual(params: &ControllerParams, plant: &TransferFunction, omega_c: f64) -> Result<f64> {
    Ok(20.0 * open_loop(params, plant, omega_c)?.norm().log10())
}

/// Central-difference slope of the phase at `w_c`, degrees per rad/s.
pub fn eval_phase_flatness(params: &ControllerParams, plant: &TransferFunction, omega_c: f64) -> Result<f64> {
    let d = 1e-4 * omega_c;
    let mid = rational_loop(params, plant, omega_c)?;
    let hi = (rational_loop(params, plant, omega_c + d)? * mid.conj()).arg();
    let lo = (rational_loop(params, plant, omega_c - d)? * mid.conj()).arg();
    let slope = (hi - lo) / (2.0 * d) - plant.delay;
    Ok(slope.to_degrees())
}

fn closed_loop_db(l: Complex64, omega: f64, numerator: Complex64) -> Result<f64> {
    let den = Complex64::new(1.0, 0.0) + l;
    if den.norm() <= f64::EPSILON * l.norm().max(1.0) {
        return Err(Error::SingularLoop { omega });
    }
    Ok(20.0 * (numerator / den).norm().log10())
}

/// `20 log10 |T(j w_t)|` with `T = L / (1 + L)`.
pub fn eval_noise_rejection(params: &ControllerParams, plant: &TransferFunction, omega_t: f64) -> Result<f64> {
    let l = open_loop(params, plant, omega_t)?;
    closed_loop_db(l, omega_t, l)
}

/// `20 log10 |S(j w_s)|` with `S = 1 / (1 + L)`.
pub fn eval_disturbance_rejection(params: &ControllerParams, plant: &TransferFunction, omega_s: f64) -> Result<f64> {
    let l = open_loop(params, plant, omega_s)?;
    closed_loop_db(l, omega_s, Complex64::new(1.0, 0.0))
}

/// Classical margins read off a log grid and refined by bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityMargins {
    /// Lowest frequency where `|L|` falls through 1.
    pub gain_crossover: Option<f64>,
    pub phase_margin_deg: Option<f64>,
    /// Lowest frequency where the phase falls through -180 degrees.
    pub phase_crossover: Option<f64>,
    pub gain_margin_db: Option<f64>,
}

pub fn stability_margins(
    params: &ControllerParams,
    plant: &TransferFunction,
    range: (f64, f64),
) -> Result<StabilityMargins> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("invalid frequency range [{lo}, {hi}]")));
    }
    let n = ((hi / lo).log10() * 200.0).ceil() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    let phase = phase_curve(params, plant, &grid)?;
    let mag: Vec<f64> = grid
        .iter()
        .map(|w| open_loop(params, plant, *w).map(|l| l.norm().log10()))
        .collect::<Result<_>>()?;

    let refine = |i: usize, f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        let (mut a, mut b) = (grid[i], grid[i + 1]);
        let fa = f(a)?;
        for _ in 0..60 {
            let m = (a * b).sqrt();
            if (f(m)? > 0.0) == (fa > 0.0) {
                a = m;
            } else {
                b = m;
            }
        }
        Ok((a * b).sqrt())
    };

    let mut out = StabilityMargins {
        gain_crossover: None,
        phase_margin_deg: None,
        phase_crossover: None,
        gain_margin_db: None,
    };
    if let Some(i) = (0..n - 1).find(|&i| mag[i] > 0.0 && mag[i + 1] <= 0.0) {
        let w = refine(i, &|w| Ok(open_loop(params, plant, w)?.norm().log10()))?;
        let anchor = rational_loop(params, plant, grid[i])?;
        let p = (phase[i].to_radians() + grid[i] * plant.delay)
            + (rational_loop(params, plant, w)? * anchor.conj()).arg()
            - w * plant.delay;
        out.gain_crossover = Some(w);
        out.phase_margin_deg = Some(180.0 + p.to_degrees());
    }
    if let Some(i) = (0..n - 1).find(|&i| phase[i] > -180.0 && phase[i + 1] <= -180.0) {
        let anchor = rational_loop(params, plant, grid[i])?;
        let base = phase[i].to_radians() + grid[i] * plant.delay;
        let w = refine(i, &|w| {
            let p = base + (rational_loop(params, plant, w)? * anchor.conj()).arg() - w * plant.delay;
            Ok(p + PI)
        })?;
        out.phase_crossover = Some(w);
        out.gain_margin_db = Some(-20.0 * open_loop(params, plant, w)?.norm().log10());
    }
    Ok(out)
}

/// Controller structure searched by the tuner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Five free parameters.
    Fopid,
    /// `lambda = mu = 1`; three free parameters.
    Iopid,
}

impl Family {
    fn dims(self) -> usize {
        match self {
            Family::Fopid => 5,
            Family::Iopid => 3,
        }
    }
}

/// Closed box for each parameter. Gains and time constants are searched
/// on a log scale, orders linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBounds {
    pub k: (f64, f64),
    pub tau_i: (f64, f64),
    pub tau_d: (f64, f64),
    pub lambda: (f64, f64),
    pub mu: (f64, f64),
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            k: (1e-3, 50.0),
            tau_i: (0.01, 100.0),
            tau_d: (1e-4, 100.0),
            lambda: (0.1, 1.9),
            mu: (0.0, 1.9),
        }
    }
}

impl SearchBounds {
    fn validate(&self, family: Family) -> Result<()> {
        let mut checks = vec![
            ("k", self.k, true),
            ("tau_i", self.tau_i, true),
            ("tau_d", self.tau_d, true),
        ];
        if family == Family::Fopid {
            checks.push(("lambda", self.lambda, false));
            checks.push(("mu", self.mu, false));
        }
        for (name, (lo, hi), log) in checks {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || (log && !(lo > 0.0)) {
                return Err(Error::Config(format!("empty or invalid search range for {name}: [{lo}, {hi}]")));
            }
        }
        if family == Family::Fopid && !(self.lambda.0 > 0.0 && self.lambda.1 < 2.0 && self.mu.0 >= 0.0 && self.mu.1 < 2.0) {
            return Err(Error::Config("order ranges must stay inside (0, 2)".into()));
        }
        Ok(())
    }

    fn decode(&self, family: Family, z: &[f64]) -> ControllerParams {
        let log = |(lo, hi): (f64, f64), t: f64| lo * (hi / lo).powf(t.clamp(0.0, 1.0));
        let lin = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t.clamp(0.0, 1.0);
        let (lambda, mu) = match family {
            Family::Fopid => (lin(self.lambda, z[3]), lin(self.mu, z[4])),
            Family::Iopid => (1.0, 1.0),
        };
        ControllerParams {
            k: log(self.k, z[0]),
            tau_i: log(self.tau_i, z[1]),
            tau_d: log(self.tau_d, z[2]),
            lambda,
            mu,
        }
    }
}

/// Tuner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub starts: usize,
    pub seed: u64,
    pub bounds: SearchBounds,
    /// Evaluation budget of each stage-one search.
    pub max_evals: usize,
    /// Best stage-one candidates passed to the ISE refinement.
    pub refine_candidates: usize,
    pub refine_evals: usize,
    /// Largest admissible fraction of samples with the controller demand
    /// outside the actuator range, on the nominal step response.
    pub max_saturated_fraction: f64,
    /// Nominal run used for the ISE and saturation checks.
    pub sim: SimConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 42,
            bounds: SearchBounds::default(),
            max_evals: 2500,
            refine_candidates: 3,
            refine_evals: 300,
            max_saturated_fraction: 0.05,
            sim: SimConfig::default(),
        }
    }
}

/// Frequency-domain figures of a tuned loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub phase_margin_deg: f64,
    pub crossover_residual_db: f64,
    pub phase_slope: f64,
    pub noise_db: f64,
    pub disturbance_db: f64,
}

impl Achieved {
    pub fn evaluate(params: &ControllerParams, plant: &TransferFunction, spec: &FrequencySpec) -> Result<Self> {
        let wc = spec.gain_crossover;
        Ok(Self {
            phase_margin_deg: eval_phase_margin(params, plant, wc)?,
            crossover_residual_db: eval_crossover_residual(params, plant, wc)?,
            phase_slope: eval_phase_flatness(params, plant, wc)?,
            noise_db: eval_noise_rejection(params, plant, spec.noise_freq())?,
            disturbance_db: eval_disturbance_rejection(params, plant, spec.disturbance_freq())?,
        })
    }

    /// Tolerance-normalised residuals: phase margin, crossover, flatness,
    /// and the excess over each rejection bound.
    fn residuals(&self, spec: &FrequencySpec) -> [f64; 5] {
        [
            (self.phase_margin_deg - spec.phase_margin_deg) / spec.phase_margin_tol_deg,
            self.crossover_residual_db / spec.crossover_tol_db,
            self.phase_slope / spec.flatness_tol,
            (self.noise_db - spec.noise_bound_db).max(0.0) / REJECTION_TOL_DB,
            (self.disturbance_db - spec.disturbance_bound_db).max(0.0) / REJECTION_TOL_DB,
        ]
    }
}

/// Slack allowed on the rejection bounds when judging feasibility.
const REJECTION_TOL_DB: f64 = 0.1;
/// Weight of phase margin and crossover against the other stage-one terms.
const PRIMARY_WEIGHT: f64 = 1e4;
const PENALTY: f64 = 1e3;

/// Outcome of [`tune`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub family: Family,
    pub params: ControllerParams,
    pub achieved: Achieved,
    pub saturated_fraction: f64,
    pub ise: f64,
    pub feasible: bool,
    /// Human-readable description of each unmet constraint.
    pub violations: Vec<String>,
    pub evaluations: usize,
}

/// Unmet constraints for `family`. The rejection bounds and the saturation
/// limit apply to the fractional family only.
pub fn violations(
    family: Family,
    achieved: &Achieved,
    saturated_fraction: f64,
    spec: &FrequencySpec,
    max_saturated_fraction: f64,
) -> Vec<String> {
    let mut v = Vec::new();
    let r = achieved.residuals(spec);
    if r[0].abs() > 1.0 {
        v.push(format!("phase margin {:.3} deg", achieved.phase_margin_deg));
    }
    if r[1].abs() > 1.0 {
        v.push(format!("crossover residual {:.3} dB", achieved.crossover_residual_db));
    }
    if r[2].abs() > 1.0 {
        v.push(format!("phase slope {:.3} deg/(rad/s)", achieved.phase_slope));
    }
    if family == Family::Fopid {
        if r[3] > 1.0 {
            v.push(format!("|T| {:.3} dB", achieved.noise_db));
        }
        if r[4] > 1.0 {
            v.push(format!("|S| {:.3} dB", achieved.disturbance_db));
        }
        if saturated_fraction > max_saturated_fraction {
            v.push(format!("saturated fraction {:.4}", saturated_fraction));
        }
    }
    v
}

struct Problem<'a> {
    family: Family,
    plant: &'a TransferFunction,
    spec: &'a FrequencySpec,
    config: &'a TuneConfig,
}

impl Problem<'_> {
    fn frequency_objective(&self, z: &[f64]) -> f64 {
        let p = self.config.bounds.decode(self.family, z);
        let Ok(a) = Achieved::evaluate(&p, self.plant, self.spec) else {
            return f64::INFINITY;
        };
        let r = a.residuals(self.spec);
        let mut f = PRIMARY_WEIGHT * (r[0] * r[0] + r[1] * r[1]) + r[2] * r[2];
        if self.family == Family::Fopid {
            f += r[3] * r[3] + r[4] * r[4];
        }
        if f.is_finite() {
            f
        } else {
            f64::INFINITY
        }
    }

    fn nominal(&self, p: &ControllerParams) -> Result<(f64, f64)> {
        let trace = simulate(p, &self.config.sim)?;
        let ise = metrics(&trace)?.ise;
        Ok((ise, trace.saturated_fraction(SATURATION)))
    }

    /// ISE plus a penalty once any residual leaves half its tolerance.
    fn refine_objective(&self, z: &[f64]) -> f64 {
        let p = self.config.bounds.decode(self.family, z);
        let Ok(a) = Achieved::evaluate(&p, self.plant, self.spec) else {
            return f64::INFINITY;
        };
        let r = a.residuals(self.spec);
        let hinge = |x: f64| (x.abs() - 0.5).max(0.0).powi(2);
        let mut pen = hinge(r[0]) + hinge(r[1]) + hinge(r[2]);
        if self.family == Family::Fopid {
            pen += hinge(r[3]) + hinge(r[4]);
        }
        let Ok((ise, sat)) = self.nominal(&p) else {
            return f64::INFINITY;
        };
        if self.family == Family::Fopid {
            let excess = (sat - self.config.max_saturated_fraction).max(0.0);
            pen += (excess / 0.01).powi(2);
        }
        let f = ise + PENALTY * pen;
        if f.is_finite() {
            f
        } else {
            f64::INFINITY
        }
    }

    fn result(&self, z: &[f64], evaluations: usize) -> Result<TuningResult> {
        let params = self.config.bounds.decode(self.family, z);
        let achieved = Achieved::evaluate(&params, self.plant, self.spec)?;
        let (ise, sat) = self.nominal(&params)?;
        let v = violations(self.family, &achieved, sat, self.spec, self.config.max_saturated_fraction);
        Ok(TuningResult {
            family: self.family,
            params,
            achieved,
            saturated_fraction: sat,
            ise,
            feasible: v.is_empty(),
            violations: v,
            evaluations,
        })
    }
}

/// Searches the box for a controller meeting `spec` on `plant`.
///
/// Stage one runs `starts` bounded Nelder-Mead searches in parallel from
/// seeded random points, minimising tolerance-normalised residuals. The
/// best candidates are then refined for nominal ISE with the residuals
/// held inside half their tolerance. The returned controller is the
/// lowest-ISE feasible one, or the best stage-one point when none is
/// feasible. Results depend only on the inputs and `config.seed`.
pub fn tune(
    family: Family,
    plant: &TransferFunction,
    spec: &FrequencySpec,
    config: &TuneConfig,
) -> Result<TuningResult> {
    spec.validate()?;
    plant.validate()?;
    config.bounds.validate(family)?;
    if config.starts == 0 {
        return Err(Error::Config("at least one start is required".into()));
    }
    if !(config.max_saturated_fraction >= 0.0) {
        return Err(Error::Config("saturated fraction limit must be >= 0".into()));
    }
    let sim = SimConfig {
        plant: plant.clone(),
        ..config.sim.clone()
    };
    sim.validate()?;
    let config = &TuneConfig { sim, ..config.clone() };
    let problem = Problem {
        family,
        plant,
        spec,
        config,
    };
    let dims = family.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..config.starts)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect();

    let stage1: Vec<Minimum> = starts
        .par_iter()
        .map(|x0| nelder_mead(|z| problem.frequency_objective(z), x0, 0.15, config.max_evals, 1e-10))
        .collect();
    let mut evaluations: usize = stage1.iter().map(|m| m.evaluations).sum();

    let mut order: Vec<usize> = (0..stage1.len()).collect();
    order.sort_by(|&a, &b| stage1[a].value.total_cmp(&stage1[b].value).then(a.cmp(&b)));
    let best = &stage1[order[0]];

    let feasible_starts: Vec<&Minimum> = order
        .iter()
        .map(|&i| &stage1[i])
        .filter(|m| {
            let p = config.bounds.decode(family, &m.point);
            Achieved::evaluate(&p, plant, spec)
                .map(|a| a.residuals(spec).iter().all(|r| r.abs() <= 1.0))
                .unwrap_or(false)
        })
        .take(config.refine_candidates)
        .collect();

    let refined: Vec<Minimum> = feasible_starts
        .par_iter()
        .map(|m| nelder_mead(|z| problem.refine_objective(z), &m.point, 0.02, config.refine_evals, 1e-12))
        .collect();
    evaluations += refined.iter().map(|m| m.evaluations).sum::<usize>();

    let mut chosen: Option<TuningResult> = None;
    for m in feasible_starts.iter().copied().chain(refined.iter()) {
        let r = problem.result(&m.point, 0)?;
        let better = match &chosen {
            None => true,
            Some(c) => (r.feasible && !c.feasible) || (r.feasible == c.feasible && r.ise < c.ise),
        };
        if better {
            chosen = Some(r);
        }
    }
    let mut result = match chosen {
        Some(r) if r.feasible => r,
        _ => problem.result(&best.point, 0)?,
    };
    result.evaluations = evaluations;
    Ok(result)
}

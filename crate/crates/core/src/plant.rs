//! Two-tank process, its input-output linearization and the linear design
//! model used for controller tuning.
//!
//! The process is `x1' = -sqrt(x1) + u`, `x2' = sqrt(x1) - sqrt(x2)` with
//! output `y = x2`. Its relative degree is two, so the linearizing law places
//! the closed loop on `s^2 + BETA1 s + BETA0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};

/// Relative degree of the tank output.
pub const RELATIVE_DEGREE: usize = 2;
/// Constant coefficient of the target characteristic polynomial.
pub const BETA0: f64 = 0.666;
/// First-order coefficient of the target characteristic polynomial.
pub const BETA1: f64 = 1.66;

/// Levels of both tanks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    pub x1: f64,
    pub x2: f64,
}

impl TankState {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        let s = Self { x1, x2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x1 >= 0.0 && self.x2 >= 0.0) || !self.x1.is_finite() || !self.x2.is_finite() {
            return Err(Error::InvalidState(format!(
                "tank levels must be finite and nonnegative, got ({}, {})",
                self.x1, self.x2
            )));
        }
        Ok(())
    }

    /// Output map `h(x) = x2`.
    pub fn output(&self) -> f64 {
        self.x2
    }

    fn require_interior(&self) -> Result<()> {
        self.validate()?;
        if self.x1 == 0.0 || self.x2 == 0.0 {
            return Err(Error::SingularState(format!(
                "linearizing law undefined at ({}, {})",
                self.x1, self.x2
            )));
        }
        Ok(())
    }
}

impl Default for TankState {
    /// Small positive levels; the linearizing law is singular at zero.
    fn default() -> Self {
        Self { x1: 0.01, x2: 0.01 }
    }
}

/// Drift vector field `f(x)`.
fn drift(s: &TankState) -> [f64; 2] {
    let r1 = s.x1.max(0.0).sqrt();
    let r2 = s.x2.max(0.0).sqrt();
    [-r1, r1 - r2]
}

/// Input vector field `g(x)`; constant for this process.
pub const INPUT_FIELD: [f64; 2] = [1.0, 0.0];
/// Gradient of the output map `h(x) = x2`.
pub const OUTPUT_GRADIENT: [f64; 2] = [0.0, 1.0];

/// State derivative of the nominal process.
pub fn tank_dynamics(state: TankState, u: f64) -> Result<(f64, f64)> {
    state.validate()?;
    if !u.is_finite() {
        return Err(Error::InvalidInput(format!("inflow must be finite, got {u}")));
    }
    let f = drift(&state);
    Ok((f[0] + INPUT_FIELD[0] * u, f[1] + INPUT_FIELD[1] * u))
}

/// Lie derivatives of the output needed by the linearizing law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LieBundle {
    /// `L_f h`
    pub lfh: f64,
    /// `L_f^2 h`
    pub lf2h: f64,
    /// `L_g L_f h`
    pub lglfh: f64,
}

/// `L_g h`, which vanishes identically: the input does not reach the output
/// in one differentiation.
pub fn lie_gh() -> f64 {
    OUTPUT_GRADIENT[0] * INPUT_FIELD[0] + OUTPUT_GRADIENT[1] * INPUT_FIELD[1]
}

pub fn lie_bundle(state: TankState) -> Result<LieBundle> {
    state.require_interior()?;
    let r1 = state.x1.sqrt();
    let r2 = state.x2.sqrt();
    Ok(LieBundle {
        lfh: r1 - r2,
        lf2h: -0.5 * (state.x1 / state.x2).sqrt(),
        lglfh: 1.0 / (2.0 * r1),
    })
}

/// Inflow that makes `y'' + BETA1 y' + BETA0 y = v`.
pub fn linearizing_control(state: TankState, v: f64) -> Result<f64> {
    let lie = lie_bundle(state)?;
    Ok((-BETA0 * state.output() - BETA1 * lie.lfh - lie.lf2h + v) / lie.lglfh)
}

/// Target closed-loop polynomial `s^2 + BETA1 s + BETA0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicPolynomial {
    /// Descending powers.
    pub coefficients: [f64; 3],
}

impl CharacteristicPolynomial {
    /// Roots of the polynomial, most negative first.
    pub fn roots(&self) -> [Complex64; 2] {
        let [a, b, c] = self.coefficients;
        let p = quadratic_roots(a, b, c);
        [p[0], p[1]]
    }

    /// The factorization `(s + 0.8471)(s + 0.7864)` printed alongside the
    /// polynomial in the source design. Its product matches `BETA0` but its
    /// sum is 1.6335, not `BETA1`, so it is kept for reference only.
    pub fn published_factors(&self) -> [f64; 2] {
        [0.8471, 0.7864]
    }
}

pub fn characteristic_polynomial() -> CharacteristicPolynomial {
    CharacteristicPolynomial {
        coefficients: [1.0, BETA1, BETA0],
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        // numerically stable form
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let mut r = if q == 0.0 { [0.0, 0.0] } else { [q / a, c / q] };
        r.sort_by(|x, y| x.total_cmp(y));
        [Complex64::new(r[0], 0.0), Complex64::new(r[1], 0.0)]
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a);
        [Complex64::new(re, -im.abs()), Complex64::new(re, im.abs())]
    }
}

/// Rational transfer function with a pure transport delay,
/// `num(s)/den(s) * exp(-delay*s)`, polynomials in descending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    pub delay: f64,
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>, delay: f64) -> Result<Self> {
        let tf = Self { num, den, delay };
        tf.validate()?;
        Ok(tf)
    }

    /// `k / ((tau1 s + 1)(tau2 s + 1)) * exp(-delay s)`.
    pub fn sopdt(gain: f64, tau1: f64, tau2: f64, delay: f64) -> Result<Self> {
        if !(tau1 > 0.0 && tau2 > 0.0) {
            return Err(Error::InvalidPlant(format!(
                "time constants must be positive, got {tau1}, {tau2}"
            )));
        }
        Self::new(vec![gain], vec![tau1 * tau2, tau1 + tau2, 1.0], delay)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if self.den.is_empty() || self.den[0] == 0.0 || !finite(&self.den) {
            return Err(Error::InvalidPlant("denominator needs a nonzero leading coefficient".into()));
        }
        if self.num.is_empty() || !finite(&self.num) {
            return Err(Error::InvalidPlant("numerator must be non-empty and finite".into()));
        }
        if self.num.len() > self.den.len() {
            return Err(Error::InvalidPlant("transfer function must be proper".into()));
        }
        if !(self.delay >= 0.0) || !self.delay.is_finite() {
            return Err(Error::InvalidPlant(format!("delay must be >= 0, got {}", self.delay)));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Steady-state gain `num(0)/den(0)`; infinite for plants with a pole at
    /// the origin.
    pub fn dc_gain(&self) -> f64 {
        let n0 = *self.num.last().unwrap();
        let d0 = *self.den.last().unwrap();
        n0 / d0
    }

    /// The same plant with its numerator scaled by `factor`.
    pub fn with_gain_factor(&self, factor: f64) -> Self {
        Self {
            num: self.num.iter().map(|b| b * factor).collect(),
            ..self.clone()
        }
    }

    pub fn with_delay(&self, delay: f64) -> Self {
        Self { delay, ..self.clone() }
    }

    /// Delay-free part evaluated at `s = j*omega`.
    pub fn rational_response(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        polyval(&self.num, s) / polyval(&self.den, s)
    }

    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        self.rational_response(omega) * Complex64::from_polar(1.0, -omega * self.delay)
    }

    /// Poles of first- and second-order plants.
    pub fn poles(&self) -> Result<Vec<Complex64>> {
        match self.den.as_slice() {
            [_] => Ok(vec![]),
            [a, b] => Ok(vec![Complex64::new(-b / a, 0.0)]),
            [a, b, c] => Ok(quadratic_roots(*a, *b, *c).to_vec()),
            _ => Err(Error::InvalidPlant("pole computation supports order <= 2".into())),
        }
    }

    /// `(tau1, tau2)` with `tau1 >= tau2 > 0` for a second-order plant with
    /// two real stable poles.
    pub fn time_constants(&self) -> Result<(f64, f64)> {
        let poles = self.poles()?;
        if poles.len() != 2 || poles.iter().any(|p| p.im != 0.0 || !(p.re < 0.0)) {
            return Err(Error::InvalidPlant(
                "expected a second-order plant with two real stable poles".into(),
            ));
        }
        let t1 = -1.0 / poles[1].re;
        let t2 = -1.0 / poles[0].re;
        Ok((t1.max(t2), t1.min(t2)))
    }
}

fn polyval(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Linear design model `2 exp(-0.5 s) / (s^2 + 1.66 s + 0.666)`.
pub fn design_plant() -> TransferFunction {
    TransferFunction {
        num: vec![2.0],
        den: vec![1.0, BETA1, BETA0],
        delay: 0.5,
    }
}

/// Controllable canonical realization of the delay-free part of a transfer
/// function, advanced with classical RK4 under a zero-order-hold input.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    /// Monic denominator coefficients `a1..an`.
    den: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    state: Vec<f64>,
}

impl LinearPlant {
    pub fn new(tf: &TransferFunction) -> Result<Self> {
        tf.validate()?;
        let lead = tf.den[0];
        let n = tf.order();
        let den: Vec<f64> = tf.den[1..].iter().map(|a| a / lead).collect();
        let mut num = vec![0.0; n + 1 - tf.num.len()];
        num.extend(tf.num.iter().map(|b| b / lead));
        let d = num[0];
        // y = d*u + sum_k (b_k - d*a_k) z^(n-k), and z^(n-k) is state n-k
        let mut c = vec![0.0; n];
        for k in 1..=n {
            c[n - k] = num[k] - d * den[k - 1];
        }
        Ok(Self {
            den,
            c,
            d,
            state: vec![0.0; n],
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) {
        self.state.copy_from_slice(state);
    }

    /// Output for the current state with input `u`.
    pub fn output(&self, u: f64) -> f64 {
        self.d * u + self.c.iter().zip(&self.state).map(|(c, x)| c * x).sum::<f64>()
    }

    fn derivative(&self, x: &[f64], u: f64, out: &mut [f64]) {
        let n = x.len();
        if n == 0 {
            return;
        }
        out[..n - 1].copy_from_slice(&x[1..]);
        // z^(n) = u - a1 z^(n-1) - ... - an z
        out[n - 1] = u - self
            .den
            .iter()
            .enumerate()
            .map(|(i, a)| a * x[n - 1 - i])
            .sum::<f64>();
    }

    pub fn step(&mut self, u: f64, h: f64) {
        let n = self.state.len();
        if n == 0 {
            return;
        }
        let x = self.state.clone();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.derivative(&x, u, &mut k1);
        axpy(&x, 0.5 * h, &k1, &mut tmp);
        self.derivative(&tmp, u, &mut k2);
        axpy(&x, 0.5 * h, &k2, &mut tmp);
        self.derivative(&tmp, u, &mut k3);
        axpy(&x, h, &k3, &mut tmp);
        self.derivative(&tmp, u, &mut k4);
        for i in 0..n {
            self.state[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn axpy(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * y[i];
    }
}

/// How the tank inflow is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TankInput {
    /// The command is the inflow itself.
    Direct,
    /// The command is the synthetic input `v` of the linearizing law,
    /// evaluated continuously inside each integration stage.
    Linearized,
}

/// The nonlinear process integrated with fixed-step RK4. Levels are clamped
/// at zero after every step.
#[derive(Debug, Clone)]
pub struct TankPlant {
    pub state: TankState,
    /// Multiplies `g(x)`; 1 for the nominal process.
    pub input_gain: f64,
    pub input: TankInput,
}

impl TankPlant {
    pub fn new(state: TankState, input: TankInput) -> Result<Self> {
        state.validate()?;
        Ok(Self {
            state,
            input_gain: 1.0,
            input,
        })
    }

    fn derivative(&self, s: TankState, command: f64) -> Result<[f64; 2]> {
        let inflow = match self.input {
            TankInput::Direct => command,
            TankInput::Linearized => linearizing_control(s, command)?,
        };
        let f = drift(&s);
        Ok([
            f[0] + self.input_gain * INPUT_FIELD[0] * inflow,
            f[1] + self.input_gain * INPUT_FIELD[1] * inflow,
        ])
    }

    pub fn step(&mut self, command: f64, h: f64) -> Result<()> {
        if !command.is_finite() {
            return Err(Error::InvalidInput(format!("command must be finite, got {command}")));
        }
        let s = self.state;
        let at = |k: [f64; 2], a: f64| TankState {
            x1: (s.x1 + a * k[0]).max(0.0),
            x2: (s.x2 + a * k[1]).max(0.0),
        };
        let k1 = self.derivative(s, command)?;
        let k2 = self.derivative(at(k1, 0.5 * h), command)?;
        let k3 = self.derivative(at(k2, 0.5 * h), command)?;
        let k4 = self.derivative(at(k3, h), command)?;
        self.state = TankState {
            x1: (s.x1 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])).max(0.0),
            x2: (s.x2 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])).max(0.0),
        };
        Ok(())
    }
}

/// Output samples `y(k*h)`, `k = 0..=n`, of the process fed a constant
/// command.
pub fn tank_response(
    initial: TankState,
    input: TankInput,
    command: f64,
    h: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(invalid_param(format!("step must be positive, got {h}")));
    }
    let n = (horizon / h).round() as usize;
    let mut plant = TankPlant::new(initial, input)?;
    let mut y = Vec::with_capacity(n + 1);
    y.push(plant.state.output());
    for _ in 0..n {
        plant.step(command, h)?;
        y.push(plant.state.output());
    }
    Ok(y)
}

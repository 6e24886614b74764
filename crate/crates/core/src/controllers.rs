//! Fractional-order PID (`PI^lambda D^mu`) controllers in sampled time and
//! in the frequency domain, the SIMC tuning rule, and reference presets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::fracops::{s_power, GlKernel};
use crate::plant::TransferFunction;

/// Default actuator range in volts.
pub const SATURATION: (f64, f64) = (0.0, 10.0);

/// Gains and orders of `K (1 + s^-lambda / tau_i + tau_d s^mu)`.
///
/// `tau_i` may be `f64::INFINITY` to drop the integral term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub k: f64,
    pub tau_i: f64,
    pub tau_d: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl ControllerParams {
    pub fn new(k: f64, tau_i: f64, tau_d: f64, lambda: f64, mu: f64) -> Result<Self> {
        let p = Self {
            k,
            tau_i,
            tau_d,
            lambda,
            mu,
        };
        p.validate()?;
        Ok(p)
    }

    /// Integer-order PID.
    pub fn pid(k: f64, tau_i: f64, tau_d: f64) -> Result<Self> {
        Self::new(k, tau_i, tau_d, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(invalid_param(format!("k must be positive, got {}", self.k)));
        }
        if !(self.tau_i > 0.0) {
            return Err(invalid_param(format!("tau_i must be positive, got {}", self.tau_i)));
        }
        if !(self.tau_d >= 0.0) || !self.tau_d.is_finite() {
            return Err(invalid_param(format!("tau_d must be >= 0, got {}", self.tau_d)));
        }
        if !(self.lambda > 0.0 && self.lambda < 2.0) {
            return Err(invalid_param(format!("lambda must lie in (0, 2), got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu < 2.0) {
            return Err(invalid_param(format!("mu must lie in [0, 2), got {}", self.mu)));
        }
        Ok(())
    }

    pub fn is_integer_order(&self) -> bool {
        self.lambda == 1.0 && self.mu == 1.0
    }

    /// The same controller with the proportional gain multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { k: self.k * c, ..*self }
    }
}

/// Frequency response `K (1 + (j w)^-lambda / tau_i + tau_d (j w)^mu)`.
pub fn controller_frequency_response(params: &ControllerParams, omega: f64) -> Result<Complex64> {
    let integral = s_power(-params.lambda, omega)? / params.tau_i;
    let derivative = s_power(params.mu, omega)? * params.tau_d;
    Ok(params.k * (Complex64::new(1.0, 0.0) + integral + derivative))
}

/// One controller output, before and after clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub unsaturated: f64,
    pub saturated: f64,
}

/// Sampled-time FOPID acting on the error history through Grünwald–Letnikov
/// operators.
///
/// One instance serves one loop; the history grows by one sample per call.
#[derive(Debug, Clone)]
pub struct FractionalPid {
    params: ControllerParams,
    bounds: (f64, f64),
    history: Vec<f64>,
    /// Error samples fed to the integral; equal to `history` unless
    /// conditional integration held some of them at zero.
    integrated: Vec<f64>,
    integral: GlKernel,
    derivative: GlKernel,
    conditional_integration: bool,
}

impl FractionalPid {
    pub fn new(params: ControllerParams, step: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            bounds: SATURATION,
            history: Vec::new(),
            integrated: Vec::new(),
            integral: GlKernel::new(-params.lambda, step)?,
            derivative: GlKernel::new(params.mu, step)?,
            conditional_integration: false,
        })
    }

    pub fn with_bounds(mut self, low: f64, high: f64) -> Result<Self> {
        if !(low < high) {
            return Err(invalid_param(format!("empty saturation range [{low}, {high}]")));
        }
        self.bounds = (low, high);
        Ok(self)
    }

    /// Stops integrating while the output is saturated and the error would
    /// drive it further into the limit. Off by default.
    pub fn with_conditional_integration(mut self, enabled: bool) -> Self {
        self.conditional_integration = enabled;
        self
    }

    /// Uses at most `samples` past errors in both fractional terms.
    pub fn with_memory(mut self, samples: usize) -> Self {
        self.integral = self.integral.clone().with_memory(samples);
        self.derivative = self.derivative.clone().with_memory(samples);
        self
    }

    /// Preallocates room for `samples` control steps.
    pub fn reserve(&mut self, samples: usize) {
        self.history.reserve(samples);
        self.integrated.reserve(samples);
        self.integral.reserve(samples);
        self.derivative.reserve(samples);
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Appends `e` and returns the clamped control signal.
    pub fn step(&mut self, e: f64) -> Result<f64> {
        Ok(self.step_detailed(e)?.saturated)
    }

    pub fn step_detailed(&mut self, e: f64) -> Result<ControlOutput> {
        if !e.is_finite() {
            return Err(Error::InvalidInput(format!("error sample must be finite, got {e}")));
        }
        let p = self.params;
        self.history.push(e);
        self.integrated.push(e);
        let derivative = if p.tau_d == 0.0 {
            0.0
        } else {
            p.tau_d * self.derivative.eval_latest(&self.history)
        };
        let mut integral = self.integral.eval_latest(&self.integrated) / p.tau_i;
        let mut raw = p.k * (e + integral + derivative);
        let (low, high) = self.bounds;
        if self.conditional_integration && ((raw > high && e > 0.0) || (raw < low && e < 0.0)) {
            *self.integrated.last_mut().unwrap() = 0.0;
            integral = self.integral.eval_latest(&self.integrated) / p.tau_i;
            raw = p.k * (e + integral + derivative);
        }
        Ok(ControlOutput {
            unsaturated: raw,
            saturated: raw.clamp(low, high),
        })
    }
}

/// SIMC PID settings for `k exp(-theta s) / ((tau1 s + 1)(tau2 s + 1))`:
/// `Kp = tau1 / (k (tau_c + theta))`, `tau_i = min(tau1, 4 (tau_c + theta))`,
/// `tau_d = tau2`.
pub fn simc_tune(plant: &TransferFunction, tau_c: f64) -> Result<ControllerParams> {
    plant.validate()?;
    let gain = plant.dc_gain();
    if gain == 0.0 || !gain.is_finite() {
        return Err(Error::InvalidPlant(format!("plant gain must be finite and nonzero, got {gain}")));
    }
    if !(tau_c > 0.0) {
        return Err(invalid_param(format!("tau_c must be positive, got {tau_c}")));
    }
    let (tau1, tau2) = plant.time_constants()?;
    let theta = plant.delay;
    let kp = tau1 / (gain * (tau_c + theta));
    Ok(ControllerParams {
        k: kp,
        tau_i: tau1.min(4.0 * (tau_c + theta)),
        tau_d: tau2,
        lambda: 1.0,
        mu: 1.0,
    })
}

/// A controller together with the figures reported for it on the design
/// plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub params: ControllerParams,
    pub reported_ise: f64,
    pub reported_mean_control: f64,
}

/// Reference controllers for the design plant, in published order.
pub fn reference_presets() -> [Preset; 3] {
    [
        Preset {
            name: "FOPID",
            params: ControllerParams {
                k: 0.46,
                tau_i: 0.64,
                tau_d: 3.2,
                lambda: 0.85,
                mu: 0.67,
            },
            reported_ise: 0.73,
            reported_mean_control: 0.29,
        },
        Preset {
            name: "SIMC PID",
            params: ControllerParams {
                k: 4.94,
                tau_i: 10.2,
                tau_d: 0.002,
                lambda: 1.0,
                mu: 1.0,
            },
            reported_ise: 1.56,
            reported_mean_control: 0.76,
        },
        Preset {
            name: "IOPID",
            params: ControllerParams {
                k: 0.76,
                tau_i: 1.4,
                tau_d: 0.003,
                lambda: 1.0,
                mu: 1.0,
            },
            reported_ise: 0.82,
            reported_mean_control: 0.33,
        },
    ]
}

/// Looks a preset up by name; accepts `fopid`, `iopid`, `simc` and the
/// display names, case-insensitively.
pub fn preset(name: &str) -> Option<Preset> {
    let key = name.trim().to_ascii_lowercase();
    let wanted = match key.as_str() {
        "fopid" => "FOPID",
        "iopid" => "IOPID",
        "simc" | "simc pid" | "simc_pid" | "simc-pid" => "SIMC PID",
        _ => return None,
    };
    reference_presets().into_iter().find(|p| p.name == wanted)
}

/// JSON form of a controller: `{name, k, tau_i, tau_d, lambda, mu, saturation}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedController {
    pub name: String,
    pub k: f64,
    pub tau_i: f64,
    pub tau_d: f64,
    pub lambda: f64,
    pub mu: f64,
    #[serde(default = "default_saturation")]
    pub saturation: [f64; 2],
}

fn default_saturation() -> [f64; 2] {
    [SATURATION.0, SATURATION.1]
}

impl NamedController {
    pub fn new(name: impl Into<String>, params: ControllerParams) -> Self {
        Self {
            name: name.into(),
            k: params.k,
            tau_i: params.tau_i,
            tau_d: params.tau_d,
            lambda: params.lambda,
            mu: params.mu,
            saturation: default_saturation(),
        }
    }

    pub fn params(&self) -> Result<ControllerParams> {
        ControllerParams::new(self.k, self.tau_i, self.tau_d, self.lambda, self.mu)
    }
}

impl From<&Preset> for NamedController {
    fn from(p: &Preset) -> Self {
        NamedController::new(p.name, p.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::design_plant;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Textbook discrete PID: rectangular integral, backward difference.
    struct TextbookPid {
        k: f64,
        tau_i: f64,
        tau_d: f64,
        h: f64,
        sum: f64,
        prev: f64,
    }

    impl TextbookPid {
        fn step(&mut self, e: f64) -> f64 {
            self.sum += e * self.h;
            let d = (e - self.prev) / self.h;
            self.prev = e;
            self.k * (e + self.sum / self.tau_i + self.tau_d * d)
        }
    }

    #[test]
    fn zero_error_zero_action() {
        let p = reference_presets()[0].params;
        let mut c = FractionalPid::new(p, 0.01).unwrap();
        for _ in 0..10 {
            assert_eq!(c.step(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn integer_orders_match_textbook_pid() {
        let (k, ti, td, h) = (0.8, 1.7, 0.05, 0.01);
        let p = ControllerParams::pid(k, ti, td).unwrap();
        let mut c = FractionalPid::new(p, h)
            .unwrap()
            .with_bounds(-1e9, 1e9)
            .unwrap();
        let mut reference = TextbookPid {
            k,
            tau_i: ti,
            tau_d: td,
            h,
            sum: 0.0,
            prev: 0.0,
        };
        for n in 0..400 {
            let e = if n < 200 { 1.0 } else { (n as f64 * 0.03).sin() };
            let got = c.step(e).unwrap();
            let want = reference.step(e);
            assert!((got - want).abs() < 1e-9, "step {n}: {got} vs {want}");
        }
    }

    #[test]
    fn fopid_first_sample_kick_saturates() {
        let h: f64 = 0.01;
        let p = reference_presets()[0].params;
        let mut c = FractionalPid::new(p, h).unwrap();
        let out = c.step_detailed(1.0).unwrap();
        let expected = 0.46 * (1.0 + h.powf(0.85) / 0.64 + 3.2 / h.powf(0.67));
        assert_relative_eq!(out.unsaturated, expected, max_relative = 1e-14);
        assert_eq!(out.saturated, 10.0);
    }

    #[test]
    fn non_finite_error_rejected() {
        let mut c = FractionalPid::new(ControllerParams::pid(1.0, 1.0, 0.0).unwrap(), 0.01).unwrap();
        assert!(matches!(c.step(f64::NAN), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn conditional_integration_holds_integral() {
        let p = ControllerParams::pid(1.0, 0.1, 0.0).unwrap();
        let mut plain = FractionalPid::new(p, 0.1).unwrap();
        let mut guarded = FractionalPid::new(p, 0.1).unwrap().with_conditional_integration(true);
        for _ in 0..50 {
            plain.step(5.0).unwrap();
            guarded.step(5.0).unwrap();
        }
        // wound-up integral keeps the plain controller saturated after the
        // error reverses; the guarded one responds at once
        assert_eq!(plain.step(-1.0).unwrap(), 10.0);
        assert!(guarded.step(-1.0).unwrap() < 10.0);
    }

    #[test]
    fn frequency_response_examples() {
        let pid = ControllerParams::pid(1.0, 1.0, 1.0).unwrap();
        let g = controller_frequency_response(&pid, 1.0).unwrap();
        assert!((g - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let p_only = ControllerParams::new(2.0, f64::INFINITY, 0.0, 1.0, 1.0).unwrap();
        for w in [0.01, 1.0, 50.0] {
            let g = controller_frequency_response(&p_only, w).unwrap();
            assert!((g - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        }
        assert!(controller_frequency_response(&pid, 0.0).is_err());
    }

    #[test]
    fn fopid_response_at_design_crossover() {
        let p = reference_presets()[0].params;
        let g = controller_frequency_response(&p, 1.94).unwrap();
        // oracle: direct complex arithmetic with principal powers of j*w
        let s = Complex64::new(0.0, 1.94);
        let direct = 0.46 * (1.0 + s.powf(-0.85) / 0.64 + 3.2 * s.powf(0.67));
        assert!((g - direct).norm() < 1e-12);
        // frozen golden value from the oracle above
        assert_relative_eq!(g.re, 1.692_480_917_546_387, max_relative = 1e-12);
        assert_relative_eq!(g.im, 1.595_386_656_659_789_2, max_relative = 1e-12);
    }

    #[test]
    fn simc_examples() {
        let plant = TransferFunction::sopdt(1.0, 1.0, 0.1, 0.5).unwrap();
        let p = simc_tune(&plant, 0.5).unwrap();
        assert_relative_eq!(p.k, 1.0, max_relative = 1e-12);
        assert_relative_eq!(p.tau_i, 1.0, max_relative = 1e-12);
        assert_relative_eq!(p.tau_d, 0.1, max_relative = 1e-12);
        assert!(p.is_integer_order());

        let plant = TransferFunction::sopdt(3.003, 1.2716, 1.1805, 0.5).unwrap();
        let p = simc_tune(&plant, 0.5).unwrap();
        assert_relative_eq!(p.k, 0.4234, epsilon = 1e-4);
        assert_relative_eq!(p.tau_i, 1.2716, max_relative = 1e-12);
        assert_relative_eq!(p.tau_d, 1.1805, max_relative = 1e-12);

        let plant = TransferFunction::sopdt(1.0, 8.0, 0.1, 0.0).unwrap();
        let p = simc_tune(&plant, 1.0).unwrap();
        assert_relative_eq!(p.tau_i, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn simc_on_design_plant_runs() {
        let p = simc_tune(&design_plant(), 0.5).unwrap();
        let (t1, t2) = design_plant().time_constants().unwrap();
        assert_relative_eq!(p.k, t1 / (3.003003003003003 * 1.0), max_relative = 1e-12);
        assert_relative_eq!(p.tau_d, t2, max_relative = 1e-12);
    }

    #[test]
    fn simc_rejects_zero_gain() {
        let plant = TransferFunction::sopdt(0.0, 1.0, 0.5, 0.1).unwrap();
        assert!(matches!(simc_tune(&plant, 0.1), Err(Error::InvalidPlant(_))));
    }

    #[test]
    fn presets_are_exact() {
        let [f, s, i] = reference_presets();
        assert_eq!((f.name, f.params.lambda, f.params.mu), ("FOPID", 0.85, 0.67));
        assert_eq!((s.name, s.params.k, s.params.tau_i), ("SIMC PID", 4.94, 10.2));
        assert_eq!((i.name, i.reported_ise), ("IOPID", 0.82));
        assert_eq!(f.reported_ise, 0.73);
        assert_eq!(f.reported_mean_control, 0.29);
        assert_eq!(s.params.tau_d, 0.002);
        assert_eq!(i.params.tau_d, 0.003);
        assert_eq!(preset("simc").unwrap().name, "SIMC PID");
        assert_eq!(preset("FoPiD").unwrap().name, "FOPID");
        assert!(preset("lqr").is_none());
        for p in [f, s, i] {
            p.params.validate().unwrap();
        }
    }

    #[test]
    fn named_controller_json() {
        let named = NamedController::from(&reference_presets()[0]);
        let text = serde_json::to_string(&named).unwrap();
        assert!(text.contains("\"saturation\":[0.0,10.0]"));
        let back: NamedController = serde_json::from_str(&text).unwrap();
        assert_eq!(back, named);
        assert_eq!(back.params().unwrap(), reference_presets()[0].params);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ControllerParams::new(0.0, 1.0, 0.0, 1.0, 1.0).is_err());
        assert!(ControllerParams::new(1.0, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ControllerParams::new(1.0, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(ControllerParams::new(1.0, 1.0, 0.0, 2.0, 1.0).is_err());
        assert!(ControllerParams::new(1.0, 1.0, 0.0, 1.0, 2.0).is_err());
    }

    fn arb_params() -> impl Strategy<Value = ControllerParams> {
        (0.01f64..20.0, 0.05f64..20.0, 0.0f64..5.0, 0.1f64..1.9, 0.0f64..1.9).prop_map(
            |(k, tau_i, tau_d, lambda, mu)| ControllerParams {
                k,
                tau_i,
                tau_d,
                lambda,
                mu,
            },
        )
    }

    proptest! {
        #[test]
        fn output_always_within_actuator_range(
            params in arb_params(),
            errors in prop::collection::vec(-100.0f64..100.0, 1..200),
        ) {
            let mut c = FractionalPid::new(params, 0.01).unwrap();
            for e in errors {
                let u = c.step(e).unwrap();
                prop_assert!((0.0..=10.0).contains(&u));
            }
        }

        #[test]
        fn unsaturated_signal_is_homogeneous_in_k(
            params in arb_params(),
            errors in prop::collection::vec(-5.0f64..5.0, 1..100),
        ) {
            let mut a = FractionalPid::new(params, 0.01).unwrap();
            let mut b = FractionalPid::new(params.scaled(2.0), 0.01).unwrap();
            for e in errors {
                let ua = a.step_detailed(e).unwrap().unsaturated;
                let ub = b.step_detailed(e).unwrap().unsaturated;
                prop_assert!((ub - 2.0 * ua).abs() <= 1e-12 * (1.0 + ub.abs()));
            }
        }

        #[test]
        fn integer_order_is_classical_pid(
            k in 0.01f64..20.0, ti in 0.05f64..20.0, td in 0.0f64..5.0, w in 1e-3f64..100.0,
        ) {
            let p = ControllerParams::pid(k, ti, td).unwrap();
            let got = controller_frequency_response(&p, w).unwrap();
            let s = Complex64::new(0.0, w);
            let classical = k * (1.0 + 1.0 / (ti * s) + td * s);
            prop_assert!((got - classical).norm() <= 1e-12 * classical.norm().max(1.0));
        }

        #[test]
        fn simc_gain_product_is_gain_independent(gain in 0.1f64..50.0) {
            let a = simc_tune(&TransferFunction::sopdt(gain, 3.0, 0.7, 0.4).unwrap(), 0.4).unwrap();
            let b = simc_tune(&TransferFunction::sopdt(1.0, 3.0, 0.7, 0.4).unwrap(), 0.4).unwrap();
            prop_assert!((a.k * gain - b.k).abs() <= 1e-12 * b.k);
        }
    }
}

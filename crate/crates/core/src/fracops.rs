//! Grünwald–Letnikov differ-integration on uniformly sampled signals and
//! evaluation of `s^alpha` on the imaginary axis.
//!
//! Positive orders differentiate, negative orders integrate. Signals are
//! taken to be zero before their first sample.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{invalid_param, Error, Result};

/// Binomial weights `w_j = (-1)^j * binom(alpha, j)` for `j = 0..=n`.
///
/// Built with the recursion `w_j = w_{j-1} * (1 - (alpha + 1) / j)`, which
/// stays finite for any `n` where the Gamma-function form would overflow.
pub fn gl_weights(alpha: f64, n: usize) -> Result<Vec<f64>> {
    if !alpha.is_finite() {
        return Err(invalid_param(format!("order must be finite, got {alpha}")));
    }
    let mut w = Vec::with_capacity(n + 1);
    w.push(1.0);
    extend_weights(&mut w, alpha, n + 1);
    Ok(w)
}

fn extend_weights(w: &mut Vec<f64>, alpha: f64, len: usize) {
    while w.len() < len {
        let j = w.len() as f64;
        let prev = w[w.len() - 1];
        w.push(prev * (1.0 - (alpha + 1.0) / j));
    }
}

/// A Grünwald–Letnikov operator of fixed order and sample period.
///
/// Weights are grown on demand, so one kernel can serve a history of any
/// length. An optional memory window truncates the convolution to the most
/// recent `memory + 1` samples; by default the full history is used.
#[derive(Debug, Clone)]
pub struct GlKernel {
    alpha: f64,
    step: f64,
    scale: f64,
    weights: Vec<f64>,
    memory: Option<usize>,
}

impl GlKernel {
    pub fn new(alpha: f64, step: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(invalid_param(format!("order must be finite, got {alpha}")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(invalid_param(format!("step must be positive, got {step}")));
        }
        Ok(Self {
            alpha,
            step,
            scale: step.powf(-alpha),
            weights: vec![1.0],
            memory: None,
        })
    }

    /// Restricts the convolution to the last `samples` past values
    /// (short-memory principle).
    pub fn with_memory(mut self, samples: usize) -> Self {
        self.memory = Some(samples);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn memory(&self) -> Option<usize> {
        self.memory
    }

    /// Weights computed so far (at least `w_0`).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Makes sure weights `w_0..=w_n` are available.
    pub fn reserve(&mut self, n: usize) {
        extend_weights(&mut self.weights, self.alpha, n + 1);
    }

    /// Operator output at the newest sample of `history`.
    ///
    /// `history[k]` is the signal at `t = k*h`; the result is
    /// `h^-alpha * sum_{j=0}^{k} w_j * history[k - j]`.
    pub fn eval_latest(&mut self, history: &[f64]) -> f64 {
        let Some(k) = history.len().checked_sub(1) else {
            return 0.0;
        };
        let span = self.memory.map_or(k, |m| m.min(k));
        self.reserve(span);
        let acc: f64 = self.weights[..=span]
            .iter()
            .zip(history[k - span..].iter().rev())
            .map(|(w, x)| w * x)
            .sum();
        acc * self.scale
    }

    /// Applies the operator at every sample of `signal`.
    pub fn apply(&mut self, signal: &[f64]) -> Vec<f64> {
        if self.alpha == 0.0 {
            return signal.to_vec();
        }
        (1..=signal.len())
            .map(|end| self.eval_latest(&signal[..end]))
            .collect()
    }
}

/// Grünwald–Letnikov operator of order `alpha` applied to a sampled signal
/// with full memory.
pub fn gl_apply(signal: &[f64], alpha: f64, step: f64) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::InvalidInput("signal must be non-empty".into()));
    }
    let mut kernel = GlKernel::new(alpha, step)?;
    Ok(kernel.apply(signal))
}

/// `(j*omega)^alpha` on the principal branch: magnitude `omega^alpha`,
/// phase `alpha * pi / 2`.
pub fn s_power(alpha: f64, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(invalid_param(format!("frequency must be positive, got {omega}")));
    }
    if !alpha.is_finite() {
        return Err(invalid_param(format!("order must be finite, got {alpha}")));
    }
    Ok(Complex64::from_polar(omega.powf(alpha), alpha * FRAC_PI_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use statrs::function::gamma::gamma;

    /// `(-1)^j * Gamma(alpha+1) / (Gamma(j+1) * Gamma(alpha-j+1))`, the
    /// closed form the recursion must agree with.
    fn gamma_weight(alpha: f64, j: usize) -> f64 {
        let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * gamma(alpha + 1.0) / (gamma(j as f64 + 1.0) * gamma(alpha - j as f64 + 1.0))
    }

    #[test]
    fn first_derivative_weights_truncate() {
        assert_eq!(gl_weights(1.0, 3).unwrap(), vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_order_is_identity() {
        assert_eq!(gl_weights(0.0, 2).unwrap(), vec![1.0, 0.0, 0.0]);
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3).collect();
        assert_eq!(gl_apply(&t, 0.0, 1e-3).unwrap(), t);
    }

    #[test]
    fn half_order_weights_match_gamma_oracle() {
        let expected: Vec<f64> = (0..=4).map(|j| gamma_weight(0.5, j)).collect();
        // frozen from the Gamma oracle
        let frozen = [1.0, -0.5, -0.125, -0.0625, -0.0390625];
        for (e, f) in expected.iter().zip(frozen) {
            assert_relative_eq!(*e, f, max_relative = 1e-12);
        }
        let w = gl_weights(0.5, 4).unwrap();
        for (w, f) in w.iter().zip(frozen) {
            assert_relative_eq!(*w, f, max_relative = 1e-15);
        }
    }

    #[test]
    fn recursion_matches_closed_form_up_to_fifty() {
        for alpha in [0.25, 0.5, 0.85, 1.5] {
            let w = gl_weights(alpha, 50).unwrap();
            for (j, wj) in w.iter().enumerate() {
                assert_relative_eq!(*wj, gamma_weight(alpha, j), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_order_rejected() {
        assert!(matches!(gl_weights(f64::NAN, 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(gl_weights(f64::INFINITY, 3), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn bad_step_rejected() {
        assert!(matches!(gl_apply(&[1.0], 0.5, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(gl_apply(&[1.0], 0.5, -1.0), Err(Error::InvalidParameter(_))));
        assert!(gl_apply(&[], 0.5, 0.1).is_err());
    }

    #[test]
    fn half_derivative_of_ramp() {
        let h = 1e-3;
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * h).collect();
        let d = gl_apply(&t, 0.5, h).unwrap();
        // D^0.5 t = Gamma(2)/Gamma(1.5) * t^0.5 = 2/sqrt(pi) at t = 1
        let exact = gamma(2.0) / gamma(1.5);
        assert_relative_eq!(exact, std::f64::consts::FRAC_2_SQRT_PI, max_relative = 1e-12);
        assert!((d[1000] - exact).abs() / exact < 0.01, "{}", d[1000]);
    }

    #[test]
    fn first_derivative_of_square() {
        let h = 1e-3;
        let y: Vec<f64> = (0..=1000).map(|k| (k as f64 * h).powi(2)).collect();
        let d = gl_apply(&y, 1.0, h).unwrap();
        assert!((d[1000] - 2.0).abs() / 2.0 < 0.01);
        for k in (100..=1000).step_by(100) {
            let t = k as f64 * h;
            assert!((d[k] - 2.0 * t).abs() / (2.0 * t) < 0.01);
        }
    }

    #[test]
    fn integral_of_constant() {
        let h = 1e-3;
        let c = 2.5;
        let y = vec![c; 1001];
        let i = gl_apply(&y, -1.0, h).unwrap();
        assert!((i[1000] - c).abs() / c < 0.005);
    }

    #[test]
    fn memory_window_truncates() {
        let mut full = GlKernel::new(0.5, 0.1).unwrap();
        let mut short = GlKernel::new(0.5, 0.1).unwrap().with_memory(2);
        let x = [1.0, 2.0, 3.0, 4.0];
        let w = gl_weights(0.5, 3).unwrap();
        let scale = 0.1f64.powf(-0.5);
        assert_relative_eq!(
            short.eval_latest(&x),
            scale * (w[0] * 4.0 + w[1] * 3.0 + w[2] * 2.0),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            full.eval_latest(&x),
            scale * (w[0] * 4.0 + w[1] * 3.0 + w[2] * 2.0 + w[3] * 1.0),
            max_relative = 1e-14
        );
    }

    #[test]
    fn s_power_examples() {
        let s = s_power(1.0, 2.0).unwrap();
        assert!(s.re.abs() < 1e-15 && (s.im - 2.0).abs() < 1e-15);
        let s2 = s_power(2.0, 2.0).unwrap();
        assert!((s2.re + 4.0).abs() < 1e-14 && s2.im.abs() < 1e-14);
        // oracle: principal complex power of j
        let direct = Complex64::new(0.0, 1.0).powf(0.5);
        let half = s_power(0.5, 1.0).unwrap();
        assert!((half - direct).norm() < 1e-15);
        assert_relative_eq!(half.re, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(half.im, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert!(s_power(0.5, 0.0).is_err());
        assert!(s_power(0.5, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn subunit_orders_have_negative_tail(alpha in 0.01f64..0.99) {
            let w = gl_weights(alpha, 200).unwrap();
            prop_assert_eq!(w[0], 1.0);
            let mut partial = 1.0;
            for wj in &w[1..] {
                prop_assert!(*wj < 0.0);
                let next = partial + wj;
                prop_assert!(next > 0.0 && next < partial);
                partial = next;
            }
        }

        #[test]
        fn recursion_identity(alpha in -2.0f64..2.0, n in 1usize..100) {
            let w = gl_weights(alpha, n).unwrap();
            for j in 1..=n {
                prop_assert_eq!(w[j], w[j - 1] * (1.0 - (alpha + 1.0) / j as f64));
            }
        }

        #[test]
        fn operator_is_linear(
            f in prop::collection::vec(-10.0f64..10.0, 1..60),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            alpha in -1.5f64..1.5,
        ) {
            let g: Vec<f64> = f.iter().enumerate().map(|(i, x)| x.sin() + i as f64 * 0.1).collect();
            let h = 0.05;
            let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = gl_apply(&combo, alpha, h).unwrap();
            let df = gl_apply(&f, alpha, h).unwrap();
            let dg = gl_apply(&g, alpha, h).unwrap();
            for k in 0..f.len() {
                let rhs = a * df[k] + b * dg[k];
                prop_assert!((lhs[k] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs().max(lhs[k].abs())) * 10.0);
            }
        }

        #[test]
        fn s_power_polar_form(alpha in -2.0f64..2.0, omega in 1e-3f64..100.0) {
            let s = s_power(alpha, omega).unwrap();
            let mag = omega.powf(alpha);
            prop_assert!((s.norm() - mag).abs() <= 1e-12 * mag);
            prop_assert!((s.arg() - alpha * FRAC_PI_2).abs() <= 1e-12);
            let unit = s * s_power(-alpha, omega).unwrap();
            prop_assert!((unit - Complex64::new(1.0, 0.0)).norm() <= 1e-12);
        }
    }
}

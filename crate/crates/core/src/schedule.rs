//! Brownian-bridge variance schedule and reverse-step coefficients.
//!
//! The bridge interpolates linearly between a clean image at step 0 and a
//! source image at step T while injecting noise that vanishes at both ends:
//!
//! ```text
//! m_t     = t / T
//! delta_t = 2 * s_var * m_t * (1 - m_t)
//! x_t     = (1 - m_t) * x_0  +  m_t * y  +  sqrt(delta_t) * eps
//! ```
//!
//! [`BridgeSchedule::pair`] produces everything a reverse step from t to s
//! needs, for any 0 <= s < t <= T, so sampling can hop over an arbitrary
//! descending step grid instead of walking every step. All schedule math is
//! carried in `f64`; tensors only ever see the final coefficients.

use crate::error::{Error, Result};

/// Precomputed interpolation and variance tables for a bridge of `T` steps.
#[derive(Debug, Clone)]
pub struct BridgeSchedule {
    steps: usize,
    s_var: f64,
    m: Vec<f64>,
    delta: Vec<f64>,
}

/// Coefficients tying steps `s < t` together.
///
/// Transition (forward, `q(x_t | x_s, y)`):
/// `x_t = gain * x_s + source_weight * y + sqrt(step_var) * eps`.
///
/// Posterior (reverse, `q(x_s | x_t, x_0, y)`): mean is
/// `w_noisy * x_t + w_clean * x_0 + w_source * y`, variance `post_var`.
///
/// Substituting the forward marginal for `x_0` rewrites the same mean as
/// `coef_noisy() * x_t + coef_source() * y - coef_eps() * noise`, which is
/// the form the sampler uses with a predicted noise term.
#[derive(Debug, Clone, Copy)]
pub struct PairParams {
    pub s: usize,
    pub t: usize,
    pub m_s: f64,
    pub m_t: f64,
    pub delta_s: f64,
    pub delta_t: f64,
    /// Forward-transition weight on `x_s`.
    pub gain: f64,
    /// Forward-transition weight on `y`.
    pub source_weight: f64,
    /// Fresh variance accumulated between `s` and `t`.
    pub step_var: f64,
    /// Posterior-mean weight on `x_t`.
    pub w_noisy: f64,
    /// Posterior-mean weight on `x_0`.
    pub w_clean: f64,
    /// Posterior-mean weight on `y`.
    pub w_source: f64,
    /// Posterior variance of `x_s`.
    pub post_var: f64,
    /// True when `t == T`, where the observation `x_T = y` carries no
    /// information and the posterior collapses to the prior marginal.
    pub terminal: bool,
}

impl PairParams {
    /// Reparametrized weight on `x_t`.
    pub fn coef_noisy(&self) -> f64 {
        self.w_noisy + self.w_clean
    }

    /// Reparametrized weight on `y`.
    pub fn coef_source(&self) -> f64 {
        self.w_source
    }

    /// Reparametrized weight on the (predicted) noise term, applied with a
    /// minus sign.
    pub fn coef_eps(&self) -> f64 {
        self.w_clean
    }
}

impl BridgeSchedule {
    /// Builds the schedule. `steps` is the bridge length T; `s_var` scales
    /// the peak variance (`delta = s_var / 2` at mid-bridge).
    pub fn new(steps: usize, s_var: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("bridge needs at least 2 steps, got {steps}")));
        }
        if s_var.is_nan() || s_var <= 0.0 || !s_var.is_finite() {
            return Err(Error::Config(format!("s_var must be positive, got {s_var}")));
        }
        let t_f = steps as f64;
        let m: Vec<f64> = (0..=steps).map(|t| t as f64 / t_f).collect();
        let delta: Vec<f64> = m.iter().map(|&mt| 2.0 * s_var * mt * (1.0 - mt)).collect();
        Ok(BridgeSchedule {
            steps,
            s_var,
            m,
            delta,
        })
    }

    /// Bridge length T.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn s_var(&self) -> f64 {
        self.s_var
    }

    /// Interpolation weight `m_t`. Panics if `t > T`.
    pub fn m(&self, t: usize) -> f64 {
        self.m[t]
    }

    /// Marginal variance `delta_t`. Panics if `t > T`.
    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }

    /// Coefficients for the step pair `s < t`.
    pub fn pair(&self, s: usize, t: usize) -> Result<PairParams> {
        if s >= t || t > self.steps {
            return Err(Error::Index(format!(
                "invalid step pair (s={s}, t={t}) for T={}",
                self.steps
            )));
        }
        let (m_s, m_t) = (self.m[s], self.m[t]);
        let (delta_s, delta_t) = (self.delta[s], self.delta[t]);

        let gain = (1.0 - m_t) / (1.0 - m_s);
        let source_weight = m_t - gain * m_s;
        let step_var = delta_t - gain * gain * delta_s;

        let terminal = t == self.steps;
        let (w_noisy, w_clean, w_source, post_var) = if terminal {
            // x_T equals y exactly, so the posterior is the prior marginal.
            (0.0, 1.0 - m_s, m_s, delta_s)
        } else {
            assert!(delta_t > 0.0, "interior variance vanished at t={t}");
            let w_noisy = (delta_s / delta_t) * gain;
            let w_clean = (1.0 - m_s) * step_var / delta_t;
            let w_source = m_s - m_t * gain * delta_s / delta_t;
            let post_var = step_var * delta_s / delta_t;
            (w_noisy, w_clean, w_source, post_var)
        };

        Ok(PairParams {
            s,
            t,
            m_s,
            m_t,
            delta_s,
            delta_t,
            gain,
            source_weight,
            step_var,
            w_noisy,
            w_clean,
            w_source,
            post_var,
            terminal,
        })
    }

    /// Coefficients for the consecutive pair `(t - 1, t)`.
    pub fn consecutive(&self, t: usize) -> Result<PairParams> {
        if t == 0 {
            return Err(Error::Index("consecutive pair needs t >= 1".into()));
        }
        self.pair(t - 1, t)
    }
}

// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn quartic_bridge_variances() {
        let s = BridgeSchedule::new(4, 1.0).unwrap();
        let got: Vec<f64> = (0..=4).map(|t| s.delta(t)).collect();
        assert_eq!(got, vec![0.0, 0.375, 0.5, 0.375, 0.0]);
        assert_eq!(s.m(0), 0.0);
        assert_eq!(s.m(4), 1.0);
    }

    #[test]
    fn quartic_interior_pair() {
        let s = BridgeSchedule::new(4, 1.0).unwrap();
        let p = s.pair(1, 2).unwrap();
        assert!(close(p.step_var, 1.0 / 3.0), "step_var {}", p.step_var);
        assert!(close(p.w_noisy, 0.5));
        assert!(close(p.w_clean, 0.5));
        assert!(close(p.w_source, 0.0));
        assert!(close(p.coef_noisy(), 1.0));
        assert!(close(p.coef_source(), 0.0));
        assert!(close(p.coef_eps(), 0.5));
        assert!(close(p.post_var, 0.25));
        assert!(!p.terminal);
    }

    #[test]
    fn first_step_pair_is_deterministic() {
        for t_total in [4usize, 10, 100] {
            let s = BridgeSchedule::new(t_total, 1.0).unwrap();
            let p = s.pair(0, 1).unwrap();
            assert!(close(p.coef_noisy(), 1.0));
            assert!(close(p.coef_source(), 0.0));
            assert!(close(p.coef_eps(), 1.0));
            assert_eq!(p.post_var, 0.0);
        }
    }

    #[test]
    fn terminal_pair_collapses_to_prior() {
        let s = BridgeSchedule::new(4, 1.0).unwrap();
        let p = s.pair(3, 4).unwrap();
        assert!(p.terminal);
        assert_eq!(p.w_noisy, 0.0);
        assert_eq!(p.w_clean, 0.25);
        assert_eq!(p.w_source, 0.75);
        assert_eq!(p.post_var, 0.375);
        // The forward transition at the terminal step is x_T = y exactly.
        assert_eq!(p.gain, 0.0);
        assert_eq!(p.source_weight, 1.0);
        assert_eq!(p.step_var, 0.0);
    }

    #[test]
    fn consecutive_matches_textbook_single_step_forms() {
        // Literal single-step expressions, written out independently of the
        // general pair computation.
        let s = BridgeSchedule::new(10, 1.7).unwrap();
        for t in 1..10 {
            let p = s.consecutive(t).unwrap();
            let (m_prev, m_t) = (s.m(t - 1), s.m(t));
            let (d_prev, d_t) = (s.delta(t - 1), s.delta(t));
            let ratio = (1.0 - m_t) / (1.0 - m_prev);
            let d_step = d_t - d_prev * ratio * ratio;

            assert!(close(p.gain, ratio));
            assert!(close(p.source_weight, m_t - ratio * m_prev));
            assert!(close(p.step_var, d_step));
            assert!(close(p.w_noisy, (d_prev / d_t) * ratio));
            assert!(close(p.w_clean, (1.0 - m_prev) * d_step / d_t));
            assert!(close(p.w_source, m_prev - m_t * ratio * d_prev / d_t));
            assert!(close(p.post_var, d_step * d_prev / d_t));
        }
    }

    #[test]
    fn rejects_bad_construction_and_indices() {
        assert!(BridgeSchedule::new(1, 1.0).is_err());
        assert!(BridgeSchedule::new(10, 0.0).is_err());
        assert!(BridgeSchedule::new(10, -1.0).is_err());
        assert!(BridgeSchedule::new(10, f64::NAN).is_err());

        let s = BridgeSchedule::new(4, 1.0).unwrap();
        assert!(matches!(s.pair(2, 2), Err(Error::Index(_))));
        assert!(matches!(s.pair(3, 2), Err(Error::Index(_))));
        assert!(matches!(s.pair(1, 5), Err(Error::Index(_))));
        assert!(matches!(s.consecutive(0), Err(Error::Index(_))));
    }

    proptest! {
        #[test]
        fn schedule_shape_properties(steps in 2usize..300, s_var in 0.05f64..4.0) {
            let s = BridgeSchedule::new(steps, s_var).unwrap();
            prop_assert_eq!(s.m(0), 0.0);
            prop_assert_eq!(s.m(steps), 1.0);
            prop_assert_eq!(s.delta(0), 0.0);
            prop_assert_eq!(s.delta(steps), 0.0);
            for t in 1..=steps {
                prop_assert!(s.m(t) > s.m(t - 1));
                if t < steps {
                    prop_assert!(s.delta(t) > 0.0);
                    // Symmetric hump.
                    prop_assert!(close(s.delta(t), s.delta(steps - t)));
                }
            }
        }

        #[test]
        fn transitions_compose(steps in 3usize..200, seed in 0u64..500) {
            let s = BridgeSchedule::new(steps, 1.3).unwrap();
            let mut p = crate::Prng::new(seed, "sched-compose");
            let a = p.below(steps as u64 - 2) as usize;          // a < T-2
            let b = a + 1 + p.below((steps - 1 - a) as u64) as usize; // a < b <= T-1
            let c = b + 1 + p.below((steps - b) as u64) as usize;     // b < c <= T
            let ab = s.pair(a, b).unwrap();
            let bc = s.pair(b, c).unwrap();
            let ac = s.pair(a, c).unwrap();
            // Chaining the two forward transitions must reproduce the direct one.
            prop_assert!(close(ac.gain, ab.gain * bc.gain));
            prop_assert!(close(ac.source_weight, bc.source_weight + bc.gain * ab.source_weight));
            prop_assert!(close(ac.step_var, bc.step_var + bc.gain * bc.gain * ab.step_var));
        }

        #[test]
        fn posterior_weights_are_affine(steps in 2usize..200, seed in 0u64..500) {
            let s = BridgeSchedule::new(steps, 0.9).unwrap();
            let mut p = crate::Prng::new(seed, "sched-affine");
            let t = 1 + p.below(steps as u64) as usize;
            let sl = p.below(t as u64) as usize;
            let pp = s.pair(sl, t).unwrap();
            prop_assert!(close(pp.w_noisy + pp.w_clean + pp.w_source, 1.0));
            prop_assert!(pp.post_var >= 0.0);
        }
    }
}

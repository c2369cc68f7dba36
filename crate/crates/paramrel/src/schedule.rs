//! Accuracy schedule: per-step accuracy alpha_t, accumulated accuracy
//! beta(t), and the continuous-data gamma(t).
//!
//! The step index runs reversed: t = T carries no information, t = 0 full
//! information. `info_time` maps a step index to the fraction of
//! information accumulated, and every closed form is expressed in that
//! fraction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Continuous,
    Discrete,
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleKind::Continuous => write!(f, "continuous"),
            ScheduleKind::Discrete => write!(f, "discrete"),
        }
    }
}

/// Precision bookkeeping over T steps.
///
/// Continuous data uses the sigma1-parameterized geometric form
/// beta(u) = sigma1^(-2u) - 1; discrete data uses the quadratic form
/// beta(u) = beta1 * u^2. Both are zero at u = 0 and strictly increasing.
#[derive(Debug, Clone)]
pub struct AccuracySchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    sigma1: f64,
    beta1: f64,
}

pub const DEFAULT_SIGMA1: f64 = 0.02;
pub const DEFAULT_BETA1: f64 = 4.0;

impl AccuracySchedule {
    pub fn continuous(steps: usize, sigma1: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule.T must be >= 1".into()));
        }
        if !(0.0 < sigma1 && sigma1 < 1.0) {
            return Err(Error::Config(format!(
                "schedule.sigma1 must be in (0,1), got {sigma1}"
            )));
        }
        Ok(AccuracySchedule {
            kind: ScheduleKind::Continuous,
            steps,
            sigma1,
            beta1: 0.0,
        })
    }

    pub fn discrete(steps: usize, beta1: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule.T must be >= 1".into()));
        }
        if beta1 <= 0.0 {
            return Err(Error::Config(format!(
                "schedule.beta1 must be positive, got {beta1}"
            )));
        }
        Ok(AccuracySchedule {
            kind: ScheduleKind::Discrete,
            steps,
            sigma1: 0.0,
            beta1,
        })
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    /// Information-time u = 1 - t/T for a step index t in [0, T].
    pub fn info_time(&self, t: usize) -> Result<f64> {
        if t > self.steps {
            return Err(Error::Usage(format!(
                "step index {t} out of range 0..={}",
                self.steps
            )));
        }
        Ok(1.0 - t as f64 / self.steps as f64)
    }

    fn beta_of_u(&self, u: f64) -> f64 {
        match self.kind {
            ScheduleKind::Continuous => self.sigma1.powf(-2.0 * u) - 1.0,
            ScheduleKind::Discrete => self.beta1 * u * u,
        }
    }

    /// Accumulated accuracy at step t.
    pub fn beta_at(&self, t: usize) -> Result<f64> {
        Ok(self.beta_of_u(self.info_time(t)?))
    }

    /// Per-step accuracy alpha_t = beta(u(t-1)) - beta(u(t)), 1 <= t <= T.
    pub fn alpha_at(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps {
            return Err(Error::Usage(format!(
                "alpha index {t} out of range 1..={}",
                self.steps
            )));
        }
        Ok(self.beta_of_u(self.info_time(t - 1)?) - self.beta_of_u(self.info_time(t)?))
    }

    /// Flow mean coefficient gamma = beta / (1 + beta), continuous only.
    pub fn gamma_at(&self, t: usize) -> Result<f64> {
        if self.kind != ScheduleKind::Continuous {
            return Err(Error::Usage(
                "gamma(t) is defined for continuous schedules only".into(),
            ));
        }
        let beta = self.beta_at(t)?;
        Ok(beta / (1.0 + beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn info_time_endpoints_and_midpoint() {
        let s = AccuracySchedule::continuous(10, 0.5).unwrap();
        assert_eq!(s.info_time(10).unwrap(), 0.0);
        assert_eq!(s.info_time(0).unwrap(), 1.0);
        assert_eq!(s.info_time(5).unwrap(), 0.5);
        assert!(s.info_time(11).is_err());
    }

    #[test]
    fn beta_zero_at_start_for_both_kinds() {
        let c = AccuracySchedule::continuous(8, 0.3).unwrap();
        let d = AccuracySchedule::discrete(8, 4.0).unwrap();
        assert_eq!(c.beta_at(8).unwrap(), 0.0);
        assert_eq!(d.beta_at(8).unwrap(), 0.0);
    }

    #[test]
    fn beta_closed_forms() {
        // continuous: sigma1 = 0.5 at u = 1 gives 1/sigma1^2 - 1 = 3
        let c = AccuracySchedule::continuous(4, 0.5).unwrap();
        assert!((c.beta_at(0).unwrap() - 3.0).abs() < 1e-12);
        // discrete: beta1 = 4 at u = 0.5 gives 1
        let d = AccuracySchedule::discrete(4, 4.0).unwrap();
        assert!((d.beta_at(2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alphas_telescope_to_full_beta() {
        for sched in [
            AccuracySchedule::continuous(17, 0.02).unwrap(),
            AccuracySchedule::discrete(17, 4.0).unwrap(),
        ] {
            let total: f64 = (1..=17).map(|t| sched.alpha_at(t).unwrap()).sum();
            let full = sched.beta_at(0).unwrap();
            assert!(
                (total - full).abs() < 1e-10 * full.max(1.0),
                "telescoping broke: {total} vs {full}"
            );
        }
    }

    #[test]
    fn discrete_alpha_difference_of_squares() {
        // beta1 = T^2 * c gives alpha_t = c * (2i - 1) with i = T - t + 1.
        let t_steps = 10usize;
        let c = 0.7;
        let sched = AccuracySchedule::discrete(t_steps, (t_steps * t_steps) as f64 * c).unwrap();
        for t in 1..=t_steps {
            let i = (t_steps - t + 1) as f64;
            let expect = c * (2.0 * i - 1.0);
            assert!((sched.alpha_at(t).unwrap() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn alphas_positive_everywhere() {
        for (sigma1, beta1, steps) in [(0.02, 4.0, 5), (0.5, 0.3, 33), (0.9, 12.0, 1000)] {
            let c = AccuracySchedule::continuous(steps, sigma1).unwrap();
            let d = AccuracySchedule::discrete(steps, beta1).unwrap();
            for t in 1..=steps {
                assert!(c.alpha_at(t).unwrap() > 0.0);
                assert!(d.alpha_at(t).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn gamma_basics_and_monotonicity() {
        let s = AccuracySchedule::continuous(20, 0.1).unwrap();
        assert_eq!(s.gamma_at(20).unwrap(), 0.0);
        let mut prev = -1.0;
        for t in (0..=20).rev() {
            let g = s.gamma_at(t).unwrap();
            assert!(g > prev, "gamma not increasing at t={t}");
            assert!((0.0..1.0).contains(&g));
            prev = g;
        }
        let d = AccuracySchedule::discrete(20, 4.0).unwrap();
        assert!(d.gamma_at(3).is_err());
    }

    #[test]
    fn gamma_direct_value() {
        // beta = 3 implies gamma = 0.75; sigma1 = 0.5 reaches beta 3 at u = 1.
        let s = AccuracySchedule::continuous(4, 0.5).unwrap();
        assert!((s.gamma_at(0).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn beta_strictly_increasing_in_information_time() {
        for sched in [
            AccuracySchedule::continuous(50, 0.02).unwrap(),
            AccuracySchedule::discrete(50, 7.0).unwrap(),
        ] {
            let mut prev = -1.0;
            for t in (0..=50).rev() {
                let b = sched.beta_at(t).unwrap();
                assert!(b > prev || (t == 50 && b == 0.0));
                prev = b;
            }
        }
    }
}

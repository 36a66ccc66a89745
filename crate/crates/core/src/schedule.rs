//! Discrete variance-preserving noise schedules and solver step grids.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// DDPM linear betas from 1e-4 to 0.02.
    LinearBeta,
    /// Improved-DDPM cosine schedule (offset 0.008, betas clipped at 0.999).
    Cosine,
    /// Hand-specified `alpha_bar` values; not reconstructible from `(kind, T)`.
    Explicit,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::LinearBeta => "linear-beta",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Explicit => "explicit",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-beta" | "linear" => Ok(ScheduleKind::LinearBeta),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.02;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Cumulative signal coefficients `alpha_bar[t]` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    total_steps: usize,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, total_steps: usize) -> Result<Self> {
        if total_steps < 2 {
            return Err(Error::invalid(format!(
                "schedule needs at least 2 steps, got {total_steps}"
            )));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Explicit => {
                return Err(Error::invalid(
                    "explicit schedules are built with NoiseSchedule::from_alpha_bars",
                ))
            }
            ScheduleKind::LinearBeta => (0..total_steps)
                .map(|i| BETA_START + (BETA_END - BETA_START) * i as f64 / (total_steps - 1) as f64)
                .collect(),
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let u = (t as f64 / total_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=total_steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).min(MAX_BETA))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(total_steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for beta in betas {
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self {
            kind,
            total_steps,
            alpha_bar,
        })
    }

    /// Schedule with the given `alpha_bar[0..=T]`, which must start at 1,
    /// decrease strictly, and stay positive.
    pub fn from_alpha_bars(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 3 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::invalid("alpha_bar[0] must be exactly 1"));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) || !(alpha_bar[alpha_bar.len() - 1] > 0.0) {
            return Err(Error::invalid(
                "alpha_bar must decrease strictly and stay positive",
            ));
        }
        Ok(Self {
            kind: ScheduleKind::Explicit,
            total_steps: alpha_bar.len() - 1,
            alpha_bar,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `sqrt(alpha_bar[t])`, the signal coefficient.
    pub fn signal(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// `sqrt(1 - alpha_bar[t])`, the noise coefficient.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    pub(crate) fn check_timestep(&self, t: usize) -> Result<()> {
        if t > self.total_steps {
            Err(Error::invalid(format!(
                "timestep {t} outside [0, {}]",
                self.total_steps
            )))
        } else {
            Ok(())
        }
    }

    /// Starting timestep for denoising strength `eta`: `round(eta * T)`
    /// clamped to `[1, T]`.
    pub fn tau_eta(&self, eta: f64) -> Result<usize> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
        }
        let t = (eta * self.total_steps as f64).round() as usize;
        Ok(t.clamp(1, self.total_steps))
    }

    /// Timestep normalized to `[0, 1]`, the form networks see.
    pub fn normalized(&self, t: usize) -> f64 {
        t as f64 / self.total_steps as f64
    }
}

/// Strictly decreasing solver timesteps `tau = t_N > ... > t_0 = 0`, stored
/// in descending order (`timesteps()[0] == tau`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepGrid {
    timesteps: Vec<usize>,
}

impl StepGrid {
    /// `steps + 1` integer timesteps from `tau` down to 0 with gaps that
    /// differ by at most one.
    pub fn uniform(tau: usize, steps: usize) -> Result<Self> {
        if steps < 1 || steps > tau {
            return Err(Error::invalid(format!(
                "grid needs 1 <= N <= tau, got N={steps}, tau={tau}"
            )));
        }
        let timesteps = (0..=steps).map(|k| (steps - k) * tau / steps).collect();
        Ok(Self { timesteps })
    }

    /// Grid from explicit descending timesteps ending at 0.
    pub fn from_timesteps(timesteps: Vec<usize>) -> Result<Self> {
        if timesteps.len() < 2 {
            return Err(Error::invalid("grid needs at least two timesteps"));
        }
        if timesteps.last() != Some(&0) {
            return Err(Error::invalid("grid must end at timestep 0"));
        }
        if timesteps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::invalid("grid timesteps must be strictly decreasing"));
        }
        Ok(Self { timesteps })
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Number of solver steps `N`.
    pub fn steps(&self) -> usize {
        self.timesteps.len() - 1
    }

    /// Starting timestep (`tau`).
    pub fn start(&self) -> usize {
        self.timesteps[0]
    }

    /// Grid position of `t`, if `t` lies on the grid.
    pub fn position(&self, t: usize) -> Option<usize> {
        self.timesteps.binary_search_by(|probe| t.cmp(probe)).ok()
    }

    /// The grid timestep one solver step below `t`.
    pub fn next_after(&self, t: usize) -> Result<usize> {
        match self.position(t) {
            Some(k) if k < self.steps() => Ok(self.timesteps[k + 1]),
            Some(_) => Err(Error::TimestepOrder("no grid step below timestep 0".into())),
            None => Err(Error::invalid(format!("timestep {t} is not on the grid"))),
        }
    }

    /// Largest grid timestep `<= value` (0 for anything below the first step).
    pub fn snap_down(&self, value: f64) -> usize {
        self.timesteps
            .iter()
            .copied()
            .find(|&t| t as f64 <= value)
            .unwrap_or(0)
    }

    pub fn contains(&self, t: usize) -> bool {
        self.position(t).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prod_oracle(t: usize, total: usize) -> f64 {
        // Independent accumulation in log space.
        (1..=t)
            .map(|i| {
                let beta = 1e-4 + (0.02 - 1e-4) * (i - 1) as f64 / (total - 1) as f64;
                (1.0 - beta).ln()
            })
            .sum::<f64>()
            .exp()
    }

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        // 4.03582976538e-5 from a 50-digit product.
        assert!((s.alpha_bar(1000) - 4.035_829_765_38e-5).abs() < 1e-13);
        assert!((s.alpha_bar(1000) - prod_oracle(1000, 1000)).abs() < 1e-15);
        assert!((s.alpha_bar(750) - 3.350_550_438_94e-3).abs() < 1e-12);
    }

    #[test]
    fn invariants_hold_for_both_kinds() {
        for kind in [ScheduleKind::LinearBeta, ScheduleKind::Cosine] {
            for total in [2, 10, 1000] {
                let s = NoiseSchedule::new(kind, total).unwrap();
                assert_eq!(s.alpha_bar(0), 1.0);
                assert!(s.alpha_bar(total) > 0.0);
                for t in 0..=total {
                    let a = s.alpha_bar(t);
                    assert!(a > 0.0 && a <= 1.0);
                    assert!((a + s.sigma(t).powi(2) - 1.0).abs() < 1e-15);
                    if t > 0 {
                        assert!(a < s.alpha_bar(t - 1), "{kind} T={total} t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_short_schedules_and_unknown_kinds() {
        assert!(NoiseSchedule::new(ScheduleKind::LinearBeta, 1).is_err());
        assert!("sigmoid".parse::<ScheduleKind>().is_err());
        assert!(NoiseSchedule::new(ScheduleKind::Explicit, 10).is_err());
        assert!(NoiseSchedule::from_alpha_bars(vec![1.0, 0.5, 0.6]).is_err());
        assert!(NoiseSchedule::from_alpha_bars(vec![0.9, 0.5, 0.1]).is_err());
        let e = NoiseSchedule::from_alpha_bars(vec![1.0, 0.64, 0.25]).unwrap();
        assert_eq!((e.total_steps(), e.alpha_bar(2)), (2, 0.25));
        assert_eq!(
            "cosine".parse::<ScheduleKind>().unwrap(),
            ScheduleKind::Cosine
        );
    }

    #[test]
    fn tau_eta_examples() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
        assert_eq!(s.tau_eta(0.75).unwrap(), 750);
        assert_eq!(s.tau_eta(1.0).unwrap(), 1000);
        assert_eq!(s.tau_eta(1e-9).unwrap(), 1);
        assert!(s.tau_eta(0.0).is_err());
        assert!(s.tau_eta(1.5).is_err());
        let s50 = NoiseSchedule::new(ScheduleKind::LinearBeta, 50).unwrap();
        // 0.333 * 50 = 16.65
        assert_eq!(s50.tau_eta(0.333).unwrap(), 17);
    }

    #[test]
    fn grid_examples() {
        assert_eq!(
            StepGrid::uniform(750, 3).unwrap().timesteps(),
            &[750, 500, 250, 0]
        );
        let unit = StepGrid::uniform(10, 10).unwrap();
        assert_eq!(unit.timesteps(), &(0..=10).rev().collect::<Vec<_>>()[..]);
        let g = StepGrid::uniform(750, 50).unwrap();
        assert_eq!(g.timesteps().len(), 51);
        assert!(g.timesteps().windows(2).all(|w| w[0] - w[1] == 15));
        assert!(StepGrid::uniform(10, 11).is_err());
        assert!(StepGrid::uniform(10, 0).is_err());
    }

    #[test]
    fn grid_navigation() {
        let g = StepGrid::uniform(750, 50).unwrap();
        assert_eq!(g.position(750), Some(0));
        assert_eq!(g.position(0), Some(50));
        assert_eq!(g.position(7), None);
        assert_eq!(g.next_after(750).unwrap(), 735);
        assert!(g.next_after(0).is_err());
        assert_eq!(g.snap_down(74.9), 60);
        assert_eq!(g.snap_down(75.0), 75);
        assert_eq!(g.snap_down(3.0), 0);
        assert_eq!(g.snap_down(10_000.0), 750);
    }

    proptest! {
        #[test]
        fn uniform_grid_is_well_formed(tau in 1usize..2000, frac in 0.0f64..1.0) {
            let steps = 1 + ((tau - 1) as f64 * frac) as usize;
            let g = StepGrid::uniform(tau, steps).unwrap();
            let ts = g.timesteps();
            prop_assert_eq!(ts.len(), steps + 1);
            prop_assert_eq!(ts[0], tau);
            prop_assert_eq!(*ts.last().unwrap(), 0);
            let gaps: Vec<usize> = ts.windows(2).map(|w| w[0] - w[1]).collect();
            prop_assert!(gaps.iter().all(|&g| g >= 1));
            let (lo, hi) = (gaps.iter().min().unwrap(), gaps.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }

        #[test]
        fn tau_eta_is_monotone(total in 2usize..5000, a in 1e-6f64..1.0, b in 1e-6f64..1.0) {
            let s = NoiseSchedule::new(ScheduleKind::LinearBeta, total).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.tau_eta(lo).unwrap() <= s.tau_eta(hi).unwrap());
        }
    }
}

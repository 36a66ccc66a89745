use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Conditioning signal: unconditional, or a mixture-component label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Null,
    Class(usize),
}

impl Condition {
    /// CSV/text form: `-1` for null, the label otherwise.
    pub fn code(self) -> i64 {
        match self {
            Condition::Null => -1,
            Condition::Class(k) => k as i64,
        }
    }

    pub fn from_code(code: i64) -> Self {
        if code < 0 {
            Condition::Null
        } else {
            Condition::Class(code as usize)
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Isotropic Gaussian mixture `sum_k w_k N(m_k, s_k^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stdevs: Vec<f64>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stdevs: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != k || stdevs.len() != k {
            return Err(Error::invalid(format!(
                "mixture arrays disagree: {k} weights, {} means, {} stdevs",
                means.len(),
                stdevs.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid(
                "mixture means must share a positive dimension",
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if stdevs.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("mixture stdevs must be positive"));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            stdevs,
        })
    }

    /// A single standard Gaussian in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![1.0]).expect("valid by construction")
    }

    /// Default two-component planar mixture.
    pub fn two_blobs() -> Self {
        Self::new(
            vec![0.5, 0.5],
            vec![vec![-1.5, -0.5], vec![1.5, 0.5]],
            vec![0.5, 0.5],
        )
        .expect("valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stdevs(&self) -> &[f64] {
        &self.stdevs
    }

    pub fn check_condition(&self, cond: Condition) -> Result<()> {
        match cond {
            Condition::Class(k) if k >= self.components() => Err(Error::invalid(format!(
                "class label {k} out of range for {} components",
                self.components()
            ))),
            _ => Ok(()),
        }
    }

    fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.components() - 1
    }

    /// One draw. `Null` picks a component by weight; a label draws from that
    /// component. The returned condition is always the component label.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        cond: Condition,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Condition)> {
        self.check_condition(cond)?;
        let k = match cond {
            Condition::Null => self.draw_component(rng),
            Condition::Class(k) => k,
        };
        let x = self.means[k]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.stdevs[k] * z
            })
            .collect();
        Ok((x, Condition::Class(k)))
    }

    /// `n` unconditional draws as a matrix plus their labels.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Matrix, Vec<Condition>) {
        let mut data = Vec::with_capacity(n * self.dim());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, c) = self
                .sample(Condition::Null, rng)
                .expect("null condition is valid");
            data.extend(x);
            labels.push(c);
        }
        (
            Matrix::from_vec(n, self.dim(), data).expect("sized"),
            labels,
        )
    }

    /// Text form used in config sections: `weights`, `means`, `stdevs`.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let join = |v: &[f64], sep: &str| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(sep)
        };
        vec![
            ("weights".into(), join(&self.weights, ", ")),
            (
                "means".into(),
                self.means
                    .iter()
                    .map(|m| join(m, " "))
                    .collect::<Vec<_>>()
                    .join("; "),
            ),
            ("stdevs".into(), join(&self.stdevs, ", ")),
        ]
    }

    /// Parses the three entries produced by [`GmmSpec::to_entries`].
    pub fn from_entries(weights: &str, means: &str, stdevs: &str) -> Result<Self> {
        let list = |s: &str, what: &str| -> Result<Vec<f64>> {
            s.split([',', ' '])
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad number `{p}` in {what}")))
                })
                .collect()
        };
        let means = means
            .split(';')
            .map(|m| list(m, "means"))
            .collect::<Result<Vec<_>>>()?;
        Self::new(list(weights, "weights")?, means, list(stdevs, "stdevs")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, Stream};

    #[test]
    fn rejects_invalid_specs() {
        assert!(GmmSpec::new(vec![], vec![], vec![]).is_err());
        assert!(GmmSpec::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GmmSpec::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        assert!(GmmSpec::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![1.0, 2.0]],
            vec![1.0, 1.0]
        )
        .is_err());
    }

    #[test]
    fn standard_normal_moments() {
        let spec = GmmSpec::standard_normal(1);
        let mut rng = seeded(1, Stream::Data);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| spec.sample(Condition::Null, &mut rng).unwrap().0[0])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn conditional_draws_stay_in_their_component() {
        let spec = GmmSpec::new(
            vec![0.5, 0.5],
            vec![vec![-10.0, 0.0], vec![10.0, 0.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mut rng = seeded(2, Stream::Data);
        for _ in 0..10_000 {
            let (x, c) = spec.sample(Condition::Class(1), &mut rng).unwrap();
            assert_eq!(c, Condition::Class(1));
            let dist = ((x[0] - 10.0).powi(2) + x[1].powi(2)).sqrt();
            assert!(dist < 6.0 * 0.5 * 2f64.sqrt());
        }
        assert!(spec.sample(Condition::Class(2), &mut rng).is_err());
    }

    #[test]
    fn component_frequencies_follow_weights() {
        let spec =
            GmmSpec::new(vec![0.3, 0.7], vec![vec![0.0], vec![5.0]], vec![1.0, 1.0]).unwrap();
        let mut rng = seeded(3, Stream::Data);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| spec.sample(Condition::Null, &mut rng).unwrap().1 == Condition::Class(1))
            .count();
        let frac = ones as f64 / n as f64;
        // 4.5 binomial standard errors is ~0.0065; the stated band is 0.01.
        assert!((frac - 0.7).abs() < 0.01, "{frac}");
    }

    #[test]
    fn text_round_trip() {
        let spec = GmmSpec::new(
            vec![0.25, 0.75],
            vec![vec![-1.0, 0.1], vec![2.0, 1.0 / 3.0]],
            vec![0.3, 1.7],
        )
        .unwrap();
        let e = spec.to_entries();
        let back = GmmSpec::from_entries(&e[0].1, &e[1].1, &e[2].1).unwrap();
        assert_eq!(back, spec);
    }
}

//! Central finite-difference gradient checking.

use super::params::ParamStore;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against `(L(p + h e_i) - L(p - h e_i)) / 2h` for every
/// coordinate, reporting the largest `|a - fd| / max(|a|, |fd|, REL_FLOOR)`.
pub fn check_gradients(
    params: &ParamStore,
    analytic: &ParamStore,
    h: f64,
    loss: impl Fn(&ParamStore) -> f64,
) -> GradCheckReport {
    params
        .check_same_layout(analytic)
        .expect("gradient store must mirror the parameters");
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for idx in 0..params.len() {
        for k in 0..params.get(idx).data.len() {
            let orig = params.get(idx).data[k];
            probe.get_mut(idx).data[k] = orig + h;
            let up = loss(&probe);
            probe.get_mut(idx).data[k] = orig - h;
            let down = loss(&probe);
            probe.get_mut(idx).data[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.get(idx).data[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some((params.get(idx).name.clone(), k));
            }
        }
    }
    report
}

/// One network/configuration pair of [`network_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub network: &'static str,
    pub config: usize,
    pub description: String,
    pub report: GradCheckReport,
}

fn random_widths<R: rand::Rng>(rng: &mut R) -> Vec<usize> {
    (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(3..=10))
        .collect()
}

fn random_matrix<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> crate::matrix::Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    crate::matrix::Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Finite-difference checks of the student consistency function and the
/// discriminator on `configs` random architectures each, at step `h`.
pub fn network_suite(configs: usize, h: f64, seed: u64) -> crate::error::Result<Vec<SuiteCase>> {
    use super::{Activation, DiscConfig, Discriminator, StudentConfig, StudentNet};
    use crate::models::Condition;
    use crate::rng::{stream_rng, Stream};
    use crate::schedule::{NoiseSchedule, ScheduleKind};
    use rand::Rng;

    let schedule = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000)?;
    let mut cases = Vec::with_capacity(2 * configs);
    for k in 0..configs {
        let mut rng = stream_rng(seed, Stream::Init, k as u64);
        let activation = if k % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Silu
        };

        let dim = rng.random_range(1..=3);
        let classes = rng.random_range(1..=3);
        let cfg = StudentConfig {
            dim,
            classes,
            widths: random_widths(&mut rng),
            activation,
            fourier_freqs: rng.random_range(1..=4),
            class_embed_dim: rng.random_range(1..=4),
            condition_on_s: rng.random_bool(0.5),
            zero_output: false,
        };
        let description = format!("{cfg:?}");
        let mut theta = ParamStore::new();
        let net = StudentNet::init(cfg, &mut theta, &mut rng)?;
        let b = 4;
        let x = random_matrix(b, dim, &mut rng);
        let t: Vec<usize> = (0..b).map(|_| rng.random_range(1..=1000)).collect();
        let s: Vec<usize> = t.iter().map(|&ti| rng.random_range(0..ti)).collect();
        let cond: Vec<Condition> = (0..b)
            .map(|_| match rng.random_range(0..=classes) {
                c if c == classes => Condition::Null,
                c => Condition::Class(c),
            })
            .collect();
        let w = random_matrix(b, dim, &mut rng);
        let loss = |p: &ParamStore| -> f64 {
            let f = net
                .consistency(p, &x, &t, &s, &cond, &schedule)
                .expect("finite");
            f.data()
                .iter()
                .zip(w.data())
                .map(|(a, c)| a * c + 0.5 * a * a)
                .sum()
        };
        let (f, tape) = net.consistency_tape(&theta, &x, &t, &s, &cond, &schedule)?;
        let mut g = f.clone();
        for (gv, wv) in g.data_mut().iter_mut().zip(w.data()) {
            *gv += wv;
        }
        let mut grads = theta.zeros_like();
        net.consistency_backward(&theta, &tape, &g, &mut grads)?;
        cases.push(SuiteCase {
            network: "student",
            config: k,
            description,
            report: check_gradients(&theta, &grads, h, loss),
        });

        let cfg = DiscConfig {
            input_dim: rng.random_range(1..=6),
            widths: random_widths(&mut rng),
            activation,
        };
        let description = format!("{cfg:?}");
        let mut psi = ParamStore::new();
        let disc = Discriminator::init(&cfg, &mut psi, &mut rng)?;
        let feats = random_matrix(5, cfg.input_dim, &mut rng);
        let wl: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &ParamStore| -> f64 {
            let logits = disc.forward(p, &feats).expect("sized");
            logits
                .iter()
                .zip(&wl)
                .map(|(l, c)| c * l + 0.25 * l * l)
                .sum()
        };
        let (logits, tape) = disc.forward_tape(&psi, &feats)?;
        let gl: Vec<f64> = logits.iter().zip(&wl).map(|(l, c)| c + 0.5 * l).collect();
        let mut grads = psi.zeros_like();
        disc.backward(&psi, &tape, &gl, &mut grads)?;
        cases.push(SuiteCase {
            network: "discriminator",
            config: k,
            description,
            report: check_gradients(&psi, &grads, h, loss),
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_random_architectures() {
        let cases = network_suite(5, 1e-5, 11).unwrap();
        assert_eq!(cases.len(), 10);
        for c in &cases {
            assert!(c.report.checked > 0);
            assert!(
                c.report.max_rel_error < 1e-4,
                "{} #{}: {:?}",
                c.network,
                c.config,
                c.report
            );
        }
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut p = ParamStore::new();
        p.push("w", vec![2], vec![0.5, -1.0]).unwrap();
        let mut g = p.zeros_like();
        g.get_mut(0).data = vec![1.0, -2.0];
        let ok = check_gradients(&p, &g, 1e-5, |s| s.get(0).data.iter().map(|v| v * v).sum());
        assert!(ok.max_rel_error < 1e-8);
        g.get_mut(0).data[1] = -1.0;
        let bad = check_gradients(&p, &g, 1e-5, |s| s.get(0).data.iter().map(|v| v * v).sum());
        assert_eq!(bad.worst, Some(("w".to_string(), 1)));
        assert!(bad.max_rel_error > 0.4);
    }
}

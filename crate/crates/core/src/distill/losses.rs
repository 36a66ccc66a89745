use rand::Rng;

use super::config::RRule;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{Condition, FeatureMap};
use crate::nn::{ConsistencyTape, Discriminator, ParamStore, StudentNet};
use crate::schedule::{NoiseSchedule, StepGrid};

/// Uniform draw on `[(1 - gamma) t, t]`, before grid snapping.
pub fn draw_target_value<R: Rng + ?Sized>(t: usize, gamma: f64, rng: &mut R) -> f64 {
    let hi = t as f64;
    let lo = (1.0 - gamma) * hi;
    if lo >= hi {
        hi
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Target step `s`: a uniform draw on `[(1 - gamma) t, t]` snapped down to
/// the grid.
pub fn sample_target_s<R: Rng + ?Sized>(
    t: usize,
    gamma: f64,
    grid: &StepGrid,
    rng: &mut R,
) -> usize {
    grid.snap_down(draw_target_value(t, gamma, rng))
}

/// Noise level of the real samples shown to the discriminator.
pub fn sample_r<R: Rng + ?Sized>(rule: RRule, s: usize, grid: &StepGrid, rng: &mut R) -> usize {
    let pick = |cands: Vec<usize>, rng: &mut R, fallback: usize| {
        if cands.is_empty() {
            fallback
        } else {
            cands[rng.random_range(0..cands.len())]
        }
    };
    match rule {
        RRule::Zero => 0,
        RRule::EqualS => s,
        RRule::BelowS => {
            let c = grid
                .timesteps()
                .iter()
                .copied()
                .filter(|&r| r < s)
                .collect();
            pick(c, rng, 0)
        }
        RRule::AboveS => {
            let c = grid
                .timesteps()
                .iter()
                .copied()
                .filter(|&r| r > s)
                .collect();
            pick(c, rng, s)
        }
    }
}

/// `(L_G, L_D)` from discriminator logits:
/// `L_G = -mean D(fake)`,
/// `L_D = mean max(0, 1 + D(fake)) + mean max(0, 1 - D(real))`.
pub fn hinge_losses(fake_logits: &[f64], real_logits: &[f64]) -> (f64, f64) {
    let mean = |v: &mut dyn Iterator<Item = f64>, n: usize| v.sum::<f64>() / n as f64;
    let l_g = -mean(&mut fake_logits.iter().copied(), fake_logits.len());
    let l_d = mean(
        &mut fake_logits.iter().map(|d| (1.0 + d).max(0.0)),
        fake_logits.len(),
    ) + mean(
        &mut real_logits.iter().map(|d| (1.0 - d).max(0.0)),
        real_logits.len(),
    );
    (l_g, l_d)
}

/// Forward half of the distillation loss, kept so the caller can add other
/// terms before back-propagating.
#[derive(Debug, Clone)]
pub struct StdTerm {
    pub loss: f64,
    /// `f_theta(x_in, t_in, s)`, the student's jump.
    pub fake: Matrix,
    /// `d loss / d fake`.
    pub grad_fake: Matrix,
    pub tape: ConsistencyTape,
}

/// Inputs of the distillation loss for one batch.
#[derive(Debug, Clone, Copy)]
pub struct StdInputs<'a> {
    pub x_in: &'a Matrix,
    pub t_in: &'a [usize],
    pub x_teacher: &'a Matrix,
    pub t_n: &'a [usize],
    pub s: &'a [usize],
    pub cond: &'a [Condition],
}

/// Batch mean of `||f_theta(x_in, t_in, s) - f_theta_minus(x_teacher, t_n, s)||^2`.
/// The target branch is evaluated without a tape.
pub fn std_forward(
    net: &StudentNet,
    theta: &ParamStore,
    theta_minus: &ParamStore,
    inputs: StdInputs<'_>,
    schedule: &NoiseSchedule,
) -> Result<StdTerm> {
    let StdInputs {
        x_in,
        t_in,
        x_teacher,
        t_n,
        s,
        cond,
    } = inputs;
    for i in 0..t_in.len().min(t_n.len()).min(s.len()) {
        if !(t_in[i] >= t_n[i] && t_n[i] >= s[i]) {
            return Err(Error::TimestepOrder(format!(
                "row {i}: need t_in >= t_n >= s, got {} / {} / {}",
                t_in[i], t_n[i], s[i]
            )));
        }
    }
    let target = net.consistency(theta_minus, x_teacher, t_n, s, cond, schedule)?;
    let (fake, tape) = net.consistency_tape(theta, x_in, t_in, s, cond, schedule)?;
    let b = fake.rows() as f64;
    let mut grad_fake = fake.clone();
    let mut loss = 0.0;
    for (g, y) in grad_fake.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - y;
        loss += diff * diff;
        *g = 2.0 * diff / b;
    }
    Ok(StdTerm {
        loss: loss / b,
        fake,
        grad_fake,
        tape,
    })
}

/// The distillation loss and its gradient with respect to `theta`.
pub fn std_loss(
    net: &StudentNet,
    theta: &ParamStore,
    theta_minus: &ParamStore,
    inputs: StdInputs<'_>,
    schedule: &NoiseSchedule,
) -> Result<(f64, ParamStore)> {
    let term = std_forward(net, theta, theta_minus, inputs, schedule)?;
    let mut grads = theta.zeros_like();
    net.consistency_backward(theta, &term.tape, &term.grad_fake, &mut grads)?;
    Ok((term.loss, grads))
}

#[derive(Debug, Clone)]
pub struct AdvTerm {
    pub l_g: f64,
    pub l_d: f64,
    /// `d L_G / d fake`; the discriminator is held fixed on this path.
    pub grad_fake: Matrix,
    /// `d L_D / d psi`; fakes are detached on this path.
    pub disc_grads: ParamStore,
}

/// Hinge losses on `F(fake)` against `F(x_real)`.
pub fn adv_losses(
    disc: &Discriminator,
    psi: &ParamStore,
    features: &FeatureMap,
    fake: &Matrix,
    x_real: &Matrix,
) -> Result<AdvTerm> {
    let f_fake = features.apply(fake)?;
    let f_real = features.apply(x_real)?;
    let (d_fake, tape_fake) = disc.forward_tape(psi, &f_fake)?;
    let (d_real, tape_real) = disc.forward_tape(psi, &f_real)?;
    let (l_g, l_d) = hinge_losses(&d_fake, &d_real);

    let nf = d_fake.len() as f64;
    let nr = d_real.len() as f64;
    let mut scratch = psi.zeros_like();
    let g_gen = vec![-1.0 / nf; d_fake.len()];
    let g_feat = disc.backward(psi, &tape_fake, &g_gen, &mut scratch)?;
    let grad_fake = features.backward(&f_fake, &g_feat);

    let mut disc_grads = psi.zeros_like();
    let g_df: Vec<f64> = d_fake
        .iter()
        .map(|d| if 1.0 + d > 0.0 { 1.0 / nf } else { 0.0 })
        .collect();
    let g_dr: Vec<f64> = d_real
        .iter()
        .map(|d| if 1.0 - d > 0.0 { -1.0 / nr } else { 0.0 })
        .collect();
    disc.backward(psi, &tape_fake, &g_df, &mut disc_grads)?;
    disc.backward(psi, &tape_real, &g_dr, &mut disc_grads)?;
    Ok(AdvTerm {
        l_g,
        l_d,
        grad_fake,
        disc_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DiscConfig, StudentConfig};
    use crate::rng::{seeded, Stream};
    use crate::schedule::ScheduleKind;

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_losses(&[-1.0, -1.0], &[1.0, 1.0]).1, 0.0);
        assert_eq!(hinge_losses(&[0.0; 3], &[0.0; 3]), (-0.0, 2.0));
        let (g, d) = hinge_losses(&[0.3], &[-0.2]);
        assert_eq!(g, -0.3);
        assert!((d - 2.5).abs() < 1e-15);
    }

    #[test]
    fn target_step_interval() {
        let grid = StepGrid::uniform(750, 50).unwrap();
        let mut rng = seeded(3, Stream::TargetStep);
        for _ in 0..1000 {
            assert_eq!(sample_target_s(750, 0.0, &grid, &mut rng), 750);
            let v = draw_target_value(750, 0.9, &mut rng);
            assert!((75.0..=750.0).contains(&v));
            let s = sample_target_s(750, 0.9, &grid, &mut rng);
            assert!(s <= 750 && grid.contains(s) && s as f64 >= 75.0 - 15.0);
        }
    }

    #[test]
    fn r_rules() {
        let grid = StepGrid::uniform(750, 50).unwrap();
        let mut rng = seeded(4, Stream::RealStep);
        for _ in 0..200 {
            let r = sample_r(RRule::BelowS, 300, &grid, &mut rng);
            assert!(r < 300 && grid.contains(r));
            let r = sample_r(RRule::AboveS, 300, &grid, &mut rng);
            assert!(r > 300 && r <= 750);
        }
        assert_eq!(sample_r(RRule::BelowS, 0, &grid, &mut rng), 0);
        assert_eq!(sample_r(RRule::EqualS, 45, &grid, &mut rng), 45);
        assert_eq!(sample_r(RRule::Zero, 45, &grid, &mut rng), 0);
    }

    fn net() -> (StudentNet, ParamStore, NoiseSchedule) {
        let mut cfg = StudentConfig::new(1, 1);
        cfg.widths = vec![8];
        let mut store = ParamStore::new();
        let net = StudentNet::init(cfg, &mut store, &mut seeded(0, Stream::Init)).unwrap();
        (
            net,
            store,
            NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap(),
        )
    }

    #[test]
    fn std_loss_degenerate_cases() {
        let (net, theta, sched) = net();
        let x = Matrix::from_rows(&[vec![0.4], vec![-1.2]]).unwrap();
        let c = [Condition::Class(0); 2];
        let (l, g) = std_loss(
            &net,
            &theta,
            &theta,
            StdInputs {
                x_in: &x,
                t_in: &[500, 400],
                x_teacher: &x,
                t_n: &[500, 400],
                s: &[100, 0],
                cond: &c,
            },
            &sched,
        )
        .unwrap();
        assert_eq!(l, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
        let y = Matrix::from_rows(&[vec![0.1], vec![-1.0]]).unwrap();
        let (l, _) = std_loss(
            &net,
            &theta,
            &theta,
            StdInputs {
                x_in: &x,
                t_in: &[300, 200],
                x_teacher: &y,
                t_n: &[300, 200],
                s: &[300, 200],
                cond: &c,
            },
            &sched,
        )
        .unwrap();
        assert!((l - (0.09 + 0.04) / 2.0).abs() < 1e-15);
        assert!(std_loss(
            &net,
            &theta,
            &theta,
            StdInputs {
                x_in: &x,
                t_in: &[300, 200],
                x_teacher: &y,
                t_n: &[350, 200],
                s: &[0, 0],
                cond: &c
            },
            &sched,
        )
        .is_err());
    }

    #[test]
    fn adversarial_paths_are_isolated() {
        let mut psi = ParamStore::new();
        let disc = Discriminator::init(&DiscConfig::new(2), &mut psi, &mut seeded(1, Stream::Init))
            .unwrap();
        let features = FeatureMap::new(crate::models::FeatureKind::Identity, 2, 2, 0);
        let fake = Matrix::from_rows(&[vec![0.1, 0.2], vec![1.0, -1.0]]).unwrap();
        let real = Matrix::from_rows(&[vec![0.5, 0.5], vec![-0.3, 0.0]]).unwrap();
        let adv = adv_losses(&disc, &psi, &features, &fake, &real).unwrap();
        // L_G gradient against finite differences in the fake input.
        for k in 0..4 {
            let h = 1e-6;
            let mut up = fake.clone();
            up.data_mut()[k] += h;
            let mut dn = fake.clone();
            dn.data_mut()[k] -= h;
            let fd = (adv_losses(&disc, &psi, &features, &up, &real).unwrap().l_g
                - adv_losses(&disc, &psi, &features, &dn, &real).unwrap().l_g)
                / (2.0 * h);
            assert!((fd - adv.grad_fake.data()[k]).abs() < 1e-8);
        }
        assert!(adv.disc_grads.flatten().iter().any(|v| *v != 0.0));
    }

    use proptest::prelude::*;

    fn any_rule() -> impl Strategy<Value = RRule> {
        prop_oneof![
            Just(RRule::Zero),
            Just(RRule::EqualS),
            Just(RRule::BelowS),
            Just(RRule::AboveS)
        ]
    }

    proptest! {
        #[test]
        fn target_and_real_steps_stay_on_grid(
            steps in 2usize..60,
            k in 0usize..60,
            gamma in 0.0f64..=1.0,
            rule in any_rule(),
            seed in any::<u64>(),
        ) {
            let grid = StepGrid::uniform(750, steps).unwrap();
            let t = grid.timesteps()[k % grid.timesteps().len()];
            let mut rng = seeded(seed, Stream::TargetStep);
            let s = sample_target_s(t, gamma, &grid, &mut rng);
            prop_assert!(s <= t && grid.contains(s));
            let r = sample_r(rule, s, &grid, &mut rng);
            prop_assert!(r == 0 || grid.contains(r));
            match rule {
                RRule::Zero => prop_assert_eq!(r, 0),
                RRule::EqualS => prop_assert_eq!(r, s),
                RRule::BelowS => prop_assert!(r < s || s == 0),
                RRule::AboveS => prop_assert!(r > s || s == grid.start()),
            }
        }

        #[test]
        fn discriminator_hinge_is_nonnegative(
            fake in proptest::collection::vec(-5.0f64..5.0, 1..20),
            real in proptest::collection::vec(-5.0f64..5.0, 1..20),
        ) {
            let (g, d) = hinge_losses(&fake, &real);
            prop_assert!(d >= 0.0);
            let mean_fake = fake.iter().sum::<f64>() / fake.len() as f64;
            prop_assert!((g + mean_fake).abs() < 1e-12);
        }
    }
}

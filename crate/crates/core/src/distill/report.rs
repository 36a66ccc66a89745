use std::fmt;
use std::io::Write;

/// Provenance of an iteration's input state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// New trajectory launched at `tau_eta`.
    Fresh,
    /// Resumed from a bank slot.
    Bank,
    /// Forward-noised at a random grid timestep (baseline mode).
    Forward,
    /// Rebuilt by a teacher rollout from `tau_eta` (bank-free benchmark arm).
    Rollout,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Fresh => "fresh",
            Branch::Bank => "bank",
            Branch::Forward => "forward",
            Branch::Rollout => "rollout",
        })
    }
}

/// One main-loop iteration. Equality ignores `wall_ns`.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: u64,
    pub branch: Branch,
    /// Mean input timestep over the batch.
    pub t_mean: f64,
    pub omega: f64,
    pub l_std: f64,
    pub l_g: f64,
    pub l_d: f64,
    /// Guided teacher solver steps taken.
    pub solver_steps: u64,
    /// Teacher model evaluations.
    pub teacher_evals: u64,
    pub bank_occupancy: usize,
    pub wall_ns: u64,
}

impl PartialEq for IterationRecord {
    fn eq(&self, o: &Self) -> bool {
        let bits = |v: f64| v.to_bits();
        self.iteration == o.iteration
            && self.branch == o.branch
            && bits(self.t_mean) == bits(o.t_mean)
            && bits(self.omega) == bits(o.omega)
            && bits(self.l_std) == bits(o.l_std)
            && bits(self.l_g) == bits(o.l_g)
            && bits(self.l_d) == bits(o.l_d)
            && self.solver_steps == o.solver_steps
            && self.teacher_evals == o.teacher_evals
            && self.bank_occupancy == o.bank_occupancy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: u64,
    pub consistency_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub warmup_losses: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub snapshots: Vec<Snapshot>,
}

pub const METRICS_HEADER: &str =
    "iteration,branch,t_mean,omega,l_std,l_adv_g,l_adv_d,solver_steps,teacher_evals,bank_occupancy,wall_ns";

impl RunReport {
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:?},{:?},{:?},{:?},{:?},{},{},{},{}",
                r.iteration,
                r.branch,
                r.t_mean,
                r.omega,
                r.l_std,
                r.l_g,
                r.l_d,
                r.solver_steps,
                r.teacher_evals,
                r.bank_occupancy,
                r.wall_ns
            )?;
        }
        Ok(())
    }

    pub fn write_snapshots_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,consistency_gap")?;
        for s in &self.snapshots {
            writeln!(w, "{},{:?}", s.iteration, s.consistency_gap)?;
        }
        Ok(())
    }

    /// Mean of `l_std` over the trailing `window` records.
    pub fn trailing_std_loss(&self, window: usize) -> Option<f64> {
        let n = self.records.len().min(window);
        (n > 0).then(|| {
            self.records[self.records.len() - n..]
                .iter()
                .map(|r| r.l_std)
                .sum::<f64>()
                / n as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(wall: u64) -> IterationRecord {
        IterationRecord {
            iteration: 3,
            branch: Branch::Bank,
            t_mean: 450.0,
            omega: 1.25,
            l_std: 0.5,
            l_g: -0.1,
            l_d: 2.0,
            solver_steps: 1,
            teacher_evals: 2,
            bank_occupancy: 4,
            wall_ns: wall,
        }
    }

    #[test]
    fn equality_ignores_wall_time() {
        assert_eq!(rec(1), rec(99));
        let mut other = rec(1);
        other.l_std = 0.5000000000000001;
        assert_ne!(rec(1), other);
    }

    #[test]
    fn metrics_csv_shape() {
        let report = RunReport {
            records: vec![rec(7)],
            ..Default::default()
        };
        let mut out = Vec::new();
        report.write_metrics_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "3,bank,450.0,1.25,0.5,-0.1,2.0,1,2,4,7");
        assert_eq!(report.trailing_std_loss(10), Some(0.5));
    }
}

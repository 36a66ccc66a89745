//! Capacity-bounded store of in-flight teacher trajectories.
//!
//! A slot holds one trajectory: its origin, current state and timestep.
//! Sampling copies an entry out; the caller advances it with one solver
//! step and commits the result back.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::Condition;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    /// Clean origin.
    pub x0: Vec<f64>,
    /// Current teacher state at timestep `t`.
    pub state: Vec<f64>,
    /// Launch state at the top of the grid.
    pub start: Vec<f64>,
    pub cond: Condition,
    pub t: usize,
    /// Guidance scale frozen for the slot's lifetime, if any.
    pub omega: Option<f64>,
}

impl BankEntry {
    fn validate(&self) -> Result<()> {
        Error::check_dim(self.x0.len(), self.state.len())?;
        Error::check_dim(self.x0.len(), self.start.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBank {
    slots: Vec<Option<BankEntry>>,
}

impl TrajectoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Bank("capacity must be at least 1".into()));
        }
        Ok(Self {
            slots: vec![None; capacity],
        })
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy() == 0
    }

    pub fn slot(&self, index: usize) -> Option<&BankEntry> {
        self.slots.get(index).and_then(Option::as_ref)
    }

    /// Lowest free slot index; the slot stays free until [`Self::insert`].
    pub fn try_reserve(&self) -> Option<usize> {
        self.slots.iter().position(Option::is_none)
    }

    /// Uniform draw over occupied slots, returning a copy.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, BankEntry)> {
        let occupied: Vec<usize> = (0..self.slots.len())
            .filter(|&i| self.slots[i].is_some())
            .collect();
        if occupied.is_empty() {
            return Err(Error::Bank("cannot sample from an empty bank".into()));
        }
        let i = occupied[rng.random_range(0..occupied.len())];
        Ok((i, self.slots[i].clone().expect("occupied")))
    }

    /// Places a new trajectory in a free slot. An entry already at
    /// `t = 0` is finished and leaves the slot free.
    pub fn insert(&mut self, index: usize, entry: BankEntry) -> Result<()> {
        entry.validate()?;
        match self.slots.get_mut(index) {
            None => Err(Error::Bank(format!("slot {index} out of range"))),
            Some(Some(_)) => Err(Error::Bank(format!("slot {index} is occupied"))),
            Some(slot) => {
                if entry.t > 0 {
                    *slot = Some(entry);
                }
                Ok(())
            }
        }
    }

    /// Advances an occupied slot to `new_t < t`, popping it at `new_t = 0`.
    pub fn commit(&mut self, index: usize, state: Vec<f64>, new_t: usize) -> Result<()> {
        let slot = self
            .slots
            .get_mut(index)
            .ok_or_else(|| Error::Bank(format!("slot {index} out of range")))?;
        let entry = slot
            .as_mut()
            .ok_or_else(|| Error::Bank(format!("slot {index} is empty")))?;
        if new_t >= entry.t {
            return Err(Error::Bank(format!(
                "slot {index}: commit to t={new_t} does not advance from t={}",
                entry.t
            )));
        }
        Error::check_dim(entry.state.len(), state.len())?;
        if new_t == 0 {
            *slot = None;
        } else {
            entry.state = state;
            entry.t = new_t;
        }
        Ok(())
    }

    /// Rows of `slot,t,cond,x_1..x_d`; the null condition is written as -1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self
            .slots
            .iter()
            .flatten()
            .map(|e| e.state.len())
            .next()
            .unwrap_or(0);
        write!(w, "slot,t,cond")?;
        for j in 1..=dim {
            write!(w, ",x_{j}")?;
        }
        writeln!(w)?;
        for (i, entry) in self.slots.iter().enumerate() {
            let Some(e) = entry else { continue };
            write!(w, "{i},{},{}", e.t, e.cond.code())?;
            for v in &e.state {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, Stream};
    use proptest::prelude::*;

    fn entry(t: usize) -> BankEntry {
        let v = vec![t as f64, 0.5];
        BankEntry {
            x0: v.clone(),
            state: v.clone(),
            start: v,
            cond: Condition::Class(1),
            t,
            omega: None,
        }
    }

    fn one(v: f64) -> Vec<f64> {
        vec![v, v]
    }

    #[test]
    fn reserve_picks_lowest_free_slot() {
        let mut b = TrajectoryBank::new(4).unwrap();
        assert_eq!(b.try_reserve(), Some(0));
        b.insert(0, entry(500)).unwrap();
        b.insert(2, entry(500)).unwrap();
        assert_eq!(b.try_reserve(), Some(1));
        b.insert(1, entry(500)).unwrap();
        b.insert(3, entry(500)).unwrap();
        assert_eq!(b.try_reserve(), None);
        assert!(b.insert(3, entry(10)).is_err());
    }

    #[test]
    fn commit_advances_and_pops() {
        let mut b = TrajectoryBank::new(2).unwrap();
        b.insert(0, entry(500)).unwrap();
        b.commit(0, one(2.0), 250).unwrap();
        assert_eq!(b.slot(0).unwrap().t, 250);
        assert_eq!(b.slot(0).unwrap().state, one(2.0));
        assert!(b.commit(0, one(2.0), 250).is_err());
        assert!(b.commit(0, one(2.0), 300).is_err());
        assert!(b.commit(1, one(2.0), 0).is_err());
        b.insert(1, entry(15)).unwrap();
        b.commit(1, one(0.0), 0).unwrap();
        assert!(b.slot(1).is_none());
        assert_eq!(b.occupancy(), 1);
        b.insert(1, entry(0)).unwrap();
        assert!(b.slot(1).is_none());
    }

    #[test]
    fn sampling_is_uniform_over_occupied_slots() {
        let mut b = TrajectoryBank::new(6).unwrap();
        assert!(b.sample(&mut seeded(0, Stream::Branch)).is_err());
        b.insert(3, entry(40)).unwrap();
        let mut rng = seeded(1, Stream::Branch);
        assert!((0..100).all(|_| b.sample(&mut rng).unwrap().0 == 3));
        for i in [0, 1, 5] {
            b.insert(i, entry(40)).unwrap();
        }
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[b.sample(&mut rng).unwrap().0] += 1;
        }
        for i in [0, 1, 3, 5] {
            let f = counts[i] as f64 / n as f64;
            assert!((f - 0.25).abs() < 0.01, "slot {i}: {f}");
        }
        assert_eq!(counts[2] + counts[4], 0);
    }

    #[test]
    fn csv_dump() {
        let mut b = TrajectoryBank::new(2).unwrap();
        b.insert(1, entry(30)).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "slot,t,cond,x_1,x_2\n1,30,1,30.0,0.5\n"
        );
    }

    #[derive(Debug, Clone)]
    enum Op {
        Reserve,
        Commit(usize, usize),
        Sample,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Reserve),
            (0usize..5, 0usize..60).prop_map(|(i, dt)| Op::Commit(i, dt)),
            Just(Op::Sample),
        ]
    }

    proptest! {
        #[test]
        fn occupancy_bounded_and_timesteps_decrease(ops in prop::collection::vec(op(), 1..200), cap in 1usize..5) {
            let mut b = TrajectoryBank::new(cap).unwrap();
            let mut rng = seeded(7, Stream::Branch);
            let mut last_t = vec![usize::MAX; cap];
            for o in ops {
                match o {
                    Op::Reserve => {
                        if let Some(i) = b.try_reserve() {
                            b.insert(i, entry(100)).unwrap();
                            last_t[i] = 100;
                        }
                    }
                    Op::Commit(i, dt) => {
                        if let Some(e) = b.slot(i % cap) {
                            let new_t = e.t.saturating_sub(dt.max(1));
                            b.commit(i % cap, one(0.0), new_t).unwrap();
                        }
                    }
                    Op::Sample => {
                        let _ = b.sample(&mut rng);
                    }
                }
                prop_assert!(b.occupancy() <= cap);
                for i in 0..cap {
                    if let Some(e) = b.slot(i) {
                        prop_assert!(e.t > 0);
                        prop_assert!(e.t <= last_t[i]);
                        last_t[i] = e.t;
                    }
                }
            }
        }
    }
}

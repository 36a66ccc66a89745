use crate::error::{Error, Result};

/// A named flat array with its logical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameter arrays.
///
/// Networks address entries by insertion index; two stores with the same
/// layout (names and shapes in the same order) are interchangeable, which is
/// how gradients, optimizer moments and EMA copies mirror the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        Error::check_dim(shape.iter().product(), data.len())?;
        self.params.push(Param { name, shape, data });
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![0.0; p.data.len()],
                })
                .collect(),
        }
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::invalid(format!(
                "parameter stores differ in length: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::invalid(format!(
                    "parameter layout mismatch: `{}` {:?} vs `{}` {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.params {
            for x in &mut p.data {
                *x *= factor;
            }
        }
    }

    /// Euclidean norm over all scalars.
    pub fn norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| &p.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a over names, shapes and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            feed(p.name.as_bytes());
            for d in &p.shape {
                feed(&(*d as u64).to_le_bytes());
            }
            for v in &p.data {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Flat copy of every scalar in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.data.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_bookkeeping() {
        let mut s = ParamStore::new();
        assert_eq!(s.push("w", vec![2, 3], vec![1.0; 6]).unwrap(), 0);
        assert_eq!(s.push("b", vec![3], vec![0.5; 3]).unwrap(), 1);
        assert!(s.push("w", vec![1], vec![0.0]).is_err());
        assert!(s.push("c", vec![2], vec![0.0]).is_err());
        assert_eq!(s.num_scalars(), 9);
        let mut z = s.zeros_like();
        assert!(z.check_same_layout(&s).is_ok());
        z.add_scaled(&s, 2.0).unwrap();
        assert_eq!(z.get(1).data, vec![1.0; 3]);
        assert_ne!(z.fingerprint(), s.fingerprint());
        assert!(ParamStore::new().check_same_layout(&s).is_err());
    }
}

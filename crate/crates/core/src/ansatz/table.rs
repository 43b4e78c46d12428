//! Explicit amplitudes over an enumerated basis.

use super::WaveFunction;
use crate::error::{Error, Result};
use crate::lattice::spins_index;

/// One trainable amplitude per listed configuration index; configurations
/// outside the list have amplitude zero.
#[derive(Clone, Debug)]
pub struct AmplitudeTable {
    num_inputs: usize,
    /// Sorted configuration indices, or `None` for the full space.
    states: Option<Vec<u64>>,
    amplitudes: Vec<f64>,
}

impl AmplitudeTable {
    pub fn full(num_inputs: usize, amplitudes: Vec<f64>) -> Result<Self> {
        if num_inputs >= 64 || amplitudes.len() as u64 != 1u64 << num_inputs {
            return Err(Error::Shape(format!("{} amplitudes for {num_inputs} spins", amplitudes.len())));
        }
        Ok(AmplitudeTable { num_inputs, states: None, amplitudes })
    }

    /// `states` must be strictly increasing.
    pub fn sector(num_inputs: usize, states: Vec<u64>, amplitudes: Vec<f64>) -> Result<Self> {
        if states.len() != amplitudes.len() {
            return Err(Error::Shape(format!("{} states but {} amplitudes", states.len(), amplitudes.len())));
        }
        if !states.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Contract("sector states must be strictly increasing".into()));
        }
        Ok(AmplitudeTable { num_inputs, states: Some(states), amplitudes })
    }

    fn position(&self, index: u64) -> Option<usize> {
        match &self.states {
            None => Some(index as usize),
            Some(s) => s.binary_search(&index).ok(),
        }
    }
}

impl WaveFunction for AmplitudeTable {
    fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    fn num_params(&self) -> usize {
        self.amplitudes.len()
    }

    fn params(&self) -> &[f64] {
        &self.amplitudes
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.amplitudes.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.amplitudes.len(), params.len())));
        }
        self.amplitudes.copy_from_slice(params);
        Ok(())
    }

    fn amplitudes(&self, batch: &[i8], out: &mut [f64]) {
        for (o, cfg) in out.iter_mut().zip(batch.chunks_exact(self.num_inputs)) {
            *o = self.position(spins_index(cfg)).map_or(0.0, |p| self.amplitudes[p]);
        }
    }

    fn amplitudes_and_gradients(&self, batch: &[i8], amps: &mut [f64], grads: &mut [f64]) {
        let np = self.amplitudes.len();
        grads.iter_mut().for_each(|g| *g = 0.0);
        for ((o, g), cfg) in amps.iter_mut().zip(grads.chunks_exact_mut(np)).zip(batch.chunks_exact(self.num_inputs)) {
            match self.position(spins_index(cfg)) {
                Some(p) => {
                    *o = self.amplitudes[p];
                    g[p] = 1.0;
                }
                None => *o = 0.0,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::fill_spins;

    #[test]
    fn lookup() {
        let t = AmplitudeTable::full(3, (0..8).map(f64::from).collect()).unwrap();
        let mut s = [0i8; 3];
        for i in 0..8 {
            fill_spins(i, &mut s);
            assert_eq!(t.amplitude(&s), i as f64);
        }
        let t = AmplitudeTable::sector(3, vec![1, 6], vec![0.5, -0.5]).unwrap();
        fill_spins(6, &mut s);
        assert_eq!(t.amplitude(&s), -0.5);
        fill_spins(2, &mut s);
        assert_eq!(t.amplitude(&s), 0.0);
        assert!(AmplitudeTable::sector(3, vec![6, 1], vec![0.0, 0.0]).is_err());
        assert!(AmplitudeTable::full(3, vec![0.0; 7]).is_err());
    }
}

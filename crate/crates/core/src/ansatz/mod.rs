//! Variational wave functions: the correlator transformer, single-layer
//! feed-forward baselines and an explicit amplitude table.

mod cqs;
mod ffnn;
mod table;

pub use cqs::{
    auto_embedding_dim, param_count, patch_layout, positional_encoding, CqsArchitecture, CorrelatorTransformer,
    HeadMode,
};
pub use ffnn::{Activation, FeedForward, FfnnArchitecture, Parity};
pub use table::AmplitudeTable;

use crate::error::{Error, Result};

/// Samples with `|ψ| < ZERO_GUARD` are excluded from estimators.
pub const ZERO_GUARD: f64 = 1e-12;

/// A real wave function over `±1` inputs with a flat trainable parameter
/// vector.
pub trait WaveFunction: Sync {
    fn num_inputs(&self) -> usize;

    /// Number of trainable parameters.
    fn num_params(&self) -> usize;

    fn params(&self) -> &[f64];

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Amplitudes of `batch.len() / num_inputs` configurations stored row by row.
    fn amplitudes(&self, batch: &[i8], out: &mut [f64]);

    /// Amplitudes and `∂ψ/∂θ`, one row of `num_params` per configuration.
    fn amplitudes_and_gradients(&self, batch: &[i8], amps: &mut [f64], grads: &mut [f64]);

    fn amplitude(&self, spins: &[i8]) -> f64 {
        let mut out = [0.0];
        self.amplitudes(spins, &mut out);
        out[0]
    }
}

/// `O_k(σ) = ∂_k ψ(σ) / ψ(σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogDerivatives {
    pub amplitude: f64,
    pub values: Vec<f64>,
}

pub fn log_derivatives<W: WaveFunction + ?Sized>(wf: &W, spins: &[i8]) -> Result<LogDerivatives> {
    check_input(wf, spins)?;
    let mut amp = [0.0];
    let mut grad = vec![0.0; wf.num_params()];
    wf.amplitudes_and_gradients(spins, &mut amp, &mut grad);
    if amp[0].abs() < ZERO_GUARD {
        return Err(Error::ZeroAmplitude(amp[0]));
    }
    grad.iter_mut().for_each(|g| *g /= amp[0]);
    Ok(LogDerivatives { amplitude: amp[0], values: grad })
}

pub fn evaluate<W: WaveFunction + ?Sized>(wf: &W, spins: &[i8]) -> Result<f64> {
    check_input(wf, spins)?;
    Ok(wf.amplitude(spins))
}

fn check_input<W: WaveFunction + ?Sized>(wf: &W, spins: &[i8]) -> Result<()> {
    if spins.len() != wf.num_inputs() {
        return Err(Error::Shape(format!("expected {} spins, got {}", wf.num_inputs(), spins.len())));
    }
    if spins.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::Contract("spin values must be +1 or -1".into()));
    }
    Ok(())
}

/// Any of the trainable families, dispatched statically.
#[derive(Clone, Debug)]
pub enum Ansatz {
    Cqs(CorrelatorTransformer),
    Ffnn(FeedForward),
    Table(AmplitudeTable),
}

macro_rules! dispatch {
    ($self:ident, $w:ident => $body:expr) => {
        match $self {
            Ansatz::Cqs($w) => $body,
            Ansatz::Ffnn($w) => $body,
            Ansatz::Table($w) => $body,
        }
    };
}

impl WaveFunction for Ansatz {
    fn num_inputs(&self) -> usize {
        dispatch!(self, w => w.num_inputs())
    }

    fn num_params(&self) -> usize {
        dispatch!(self, w => w.num_params())
    }

    fn params(&self) -> &[f64] {
        dispatch!(self, w => w.params())
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        dispatch!(self, w => w.set_params(params))
    }

    fn amplitudes(&self, batch: &[i8], out: &mut [f64]) {
        dispatch!(self, w => w.amplitudes(batch, out))
    }

    fn amplitudes_and_gradients(&self, batch: &[i8], amps: &mut [f64], grads: &mut [f64]) {
        dispatch!(self, w => w.amplitudes_and_gradients(batch, amps, grads))
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_spins(n: usize, rng: &mut impl Rng) -> Vec<i8> {
        (0..n).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect()
    }

    /// Largest relative deviation between analytic log-derivatives and
    /// central differences of `log|ψ|` with step `h`.
    pub fn max_fd_error<W: WaveFunction + Clone>(wf: &W, spins: &[i8], h: f64) -> f64 {
        let analytic = log_derivatives(wf, spins).unwrap();
        let base = wf.params().to_vec();
        let mut probe = wf.clone();
        let mut worst = 0.0f64;
        let scale = analytic.values.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-3);
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_params(&p).unwrap();
            let up = probe.amplitude(spins).abs().ln();
            p[k] = base[k] - h;
            probe.set_params(&p).unwrap();
            let down = probe.amplitude(spins).abs().ln();
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - analytic.values[k]).abs() / scale);
        }
        worst
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}

//! Single hidden layer networks `ψ(σ) = Σ_h act(W_h·σ + b_h)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WaveFunction;
use crate::error::{Error, Result};

const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Cosh,
    Sinh,
    Tanh,
    /// `sigmoid(x) - 1/2`, an odd function.
    SigmoidCentered,
    /// The plain logistic function, which has no fixed parity.
    Sigmoid,
    Relu,
}

/// Parity of an activation under `x → -x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

impl Activation {
    pub fn parity(self) -> Parity {
        match self {
            Activation::Cosh => Parity::Even,
            Activation::Sinh | Activation::Tanh | Activation::SigmoidCentered => Parity::Odd,
            Activation::Sigmoid | Activation::Relu => Parity::Mixed,
        }
    }

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Cosh => x.cosh(),
            Activation::Sinh => x.sinh(),
            Activation::Tanh => x.tanh(),
            Activation::SigmoidCentered => sigmoid(x) - 0.5,
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Cosh => x.sinh(),
            Activation::Sinh => x.cosh(),
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::SigmoidCentered | Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfnnArchitecture {
    pub n_hidden: usize,
    pub activation: Activation,
    pub bias: bool,
}

/// Weights `W` (row per hidden unit) followed by the biases when enabled.
#[derive(Clone, Debug)]
pub struct FeedForward {
    arch: FfnnArchitecture,
    num_inputs: usize,
    params: Vec<f64>,
}

impl FeedForward {
    /// Weights uniform in `±1/√L`. ReLU biases start positive so every unit
    /// is active somewhere; other biases start small.
    pub fn new(arch: FfnnArchitecture, num_inputs: usize, seed: u64) -> Result<Self> {
        if arch.n_hidden == 0 || num_inputs == 0 {
            return Err(Error::Contract("n_hidden and the input size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (num_inputs as f64).sqrt();
        let mut params: Vec<f64> = (0..arch.n_hidden * num_inputs).map(|_| rng.gen_range(-s..=s)).collect();
        if arch.bias {
            params.extend((0..arch.n_hidden).map(|_| match arch.activation {
                Activation::Relu => rng.gen_range(0.5..1.0),
                _ => rng.gen_range(-0.1..0.1),
            }));
        }
        Ok(FeedForward { arch, num_inputs, params })
    }

    pub fn architecture(&self) -> &FfnnArchitecture {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.arch.n_hidden * self.num_inputs]
    }

    pub fn biases(&self) -> Option<&[f64]> {
        self.arch.bias.then(|| &self.params[self.arch.n_hidden * self.num_inputs..])
    }

    fn pre_activation(&self, h: usize, spins: &[i8]) -> f64 {
        let w = &self.params[h * self.num_inputs..(h + 1) * self.num_inputs];
        let b = if self.arch.bias { self.params[self.arch.n_hidden * self.num_inputs + h] } else { 0.0 };
        b + w.iter().zip(spins).map(|(w, &s)| w * f64::from(s)).sum::<f64>()
    }

    fn single(&self, spins: &[i8], grad: Option<&mut [f64]>) -> f64 {
        let (n, l) = (self.arch.n_hidden, self.num_inputs);
        let act = self.arch.activation;
        let mut psi = 0.0;
        match grad {
            None => {
                for h in 0..n {
                    psi += act.value(self.pre_activation(h, spins));
                }
            }
            Some(g) => {
                for h in 0..n {
                    let z = self.pre_activation(h, spins);
                    psi += act.value(z);
                    let d = act.derivative(z);
                    for (gk, &s) in g[h * l..(h + 1) * l].iter_mut().zip(spins) {
                        *gk = d * f64::from(s);
                    }
                    if self.arch.bias {
                        g[n * l + h] = d;
                    }
                }
            }
        }
        psi
    }
}

impl WaveFunction for FeedForward {
    fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.params.len(), params.len())));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn amplitudes(&self, batch: &[i8], out: &mut [f64]) {
        let l = self.num_inputs;
        out.par_chunks_mut(CHUNK).zip(batch.par_chunks(CHUNK * l)).for_each(|(o, s)| {
            for (o, cfg) in o.iter_mut().zip(s.chunks_exact(l)) {
                *o = self.single(cfg, None);
            }
        });
    }

    fn amplitudes_and_gradients(&self, batch: &[i8], amps: &mut [f64], grads: &mut [f64]) {
        let (l, np) = (self.num_inputs, self.params.len());
        amps.par_chunks_mut(CHUNK)
            .zip(grads.par_chunks_mut(CHUNK * np))
            .zip(batch.par_chunks(CHUNK * l))
            .for_each(|((o, g), s)| {
                for ((o, g), cfg) in o.iter_mut().zip(g.chunks_exact_mut(np)).zip(s.chunks_exact(l)) {
                    *o = self.single(cfg, Some(g));
                }
            });
    }
}

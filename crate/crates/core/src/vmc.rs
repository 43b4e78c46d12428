//! Variational Monte Carlo: Metropolis chains, local energies and
//! stochastic reconfiguration.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{WaveFunction, ZERO_GUARD};
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::lattice::{
    fill_spins, sector_indices, spins_index, LatticeGeometry, MoveProposer, SectorConstraint, DEFAULT_P_LOOP,
};
use crate::linalg::{conjugate_gradient, dot, gemm, gram};

/// Largest `states × parameters` product the full-summation mode will hold.
pub const MAX_FULL_SUM_ENTRIES: usize = 1 << 28;
/// Above this size the SR system is solved matrix-free.
const DENSE_SR_LIMIT: usize = 2048;
const DIVERGENCE_PATIENCE: usize = 50;

fn default_p_loop() -> f64 {
    DEFAULT_P_LOOP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Sweeps discarded before the first sample.
    pub burn_in: usize,
    /// Sweeps between consecutive samples of one chain.
    pub stride: usize,
    /// Samples per optimization step, rounded up to a multiple of `n_chains`.
    pub samples: usize,
    pub seed: u64,
    #[serde(default = "default_p_loop")]
    pub p_loop: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { n_chains: 4, burn_in: 100, stride: 2, samples: 4096, seed: 1, p_loop: DEFAULT_P_LOOP }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.burn_in == 0 || self.stride == 0 || self.samples == 0 {
            return Err(Error::Contract("sampler counts must all be positive".into()));
        }
        Ok(())
    }

    fn per_chain(&self) -> usize {
        self.samples.div_ceil(self.n_chains)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrConfig {
    pub learning_rate: f64,
    pub diag_shift: f64,
    pub iterations: usize,
    /// Relative residual at which conjugate gradient stops.
    pub tolerance: f64,
    pub max_cg_iterations: usize,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig { learning_rate: 0.02, diag_shift: 1e-3, iterations: 2000, tolerance: 1e-8, max_cg_iterations: 1000 }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.diag_shift > 0.0) {
            return Err(Error::Contract("diag_shift must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::Contract("learning_rate and tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Configurations drawn from `ψ²` with their amplitudes.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub indices: Vec<u64>,
    pub amplitudes: Vec<f64>,
    pub acceptance: f64,
}

/// Random configuration satisfying `constraint`.
pub fn random_valid_state(
    geometry: &LatticeGeometry,
    constraint: SectorConstraint,
    rng: &mut impl Rng,
) -> Result<u64> {
    constraint.validate(geometry)?;
    let l = geometry.num_spins();
    Ok(match constraint {
        SectorConstraint::None => (0..l).fold(0, |acc, i| if rng.gen() { acc | 1 << i } else { acc }),
        SectorConstraint::FixedMagnetization(m) => {
            let down = ((l as i64 - m) / 2) as usize;
            let mut sites: Vec<usize> = (0..l).collect();
            sites.shuffle(rng);
            sites[..down].iter().fold(0, |acc, &s| acc | 1 << s)
        }
        SectorConstraint::GaussLaw => {
            let proposer = MoveProposer::new(geometry, constraint, 0.5)?;
            (0..4 * l).fold(0, |s, _| proposer.propose(s, rng).apply(s))
        }
    })
}

fn amplitudes_of<W: WaveFunction + ?Sized>(wf: &W, indices: &[u64]) -> Vec<f64> {
    let l = wf.num_inputs();
    let mut spins = vec![0i8; indices.len() * l];
    for (row, &i) in spins.chunks_exact_mut(l).zip(indices) {
        fill_spins(i, row);
    }
    let mut out = vec![0.0; indices.len()];
    wf.amplitudes(&spins, &mut out);
    out
}

/// Lockstep Metropolis chains with persistent state. Every step proposes one
/// constraint-preserving move per chain and evaluates all proposals as one
/// batch.
#[derive(Clone, Debug)]
pub struct MarkovChains {
    proposer: MoveProposer,
    config: SamplerConfig,
    states: Vec<u64>,
    amplitudes: Vec<f64>,
    rngs: Vec<ChaCha8Rng>,
    accepted: u64,
    proposed: u64,
}

impl MarkovChains {
    pub fn new<W: WaveFunction + ?Sized>(
        geometry: &LatticeGeometry,
        constraint: SectorConstraint,
        config: SamplerConfig,
        wf: &W,
    ) -> Result<Self> {
        config.validate()?;
        if wf.num_inputs() != geometry.num_spins() {
            return Err(Error::Shape(format!(
                "ansatz takes {} inputs, lattice has {} spins",
                wf.num_inputs(),
                geometry.num_spins()
            )));
        }
        let proposer = MoveProposer::new(geometry, constraint, config.p_loop)?;
        let mut rngs: Vec<ChaCha8Rng> = (0..config.n_chains)
            .map(|c| {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed);
                r.set_stream(c as u64);
                r
            })
            .collect();
        let states = rngs
            .iter_mut()
            .map(|r| random_valid_state(geometry, constraint, r))
            .collect::<Result<Vec<_>>>()?;
        let amplitudes = amplitudes_of(wf, &states);
        Ok(MarkovChains { proposer, config, states, amplitudes, rngs, accepted: 0, proposed: 0 })
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Re-evaluates the current amplitudes after a parameter change.
    pub fn refresh<W: WaveFunction + ?Sized>(&mut self, wf: &W) {
        self.amplitudes = amplitudes_of(wf, &self.states);
    }

    /// One proposal per chain. A chain sitting on a zero amplitude accepts
    /// any move.
    pub fn step<W: WaveFunction + ?Sized>(&mut self, wf: &W) {
        let proposals: Vec<u64> = self
            .states
            .iter()
            .zip(self.rngs.iter_mut())
            .map(|(&s, r)| self.proposer.propose(s, r).apply(s))
            .collect();
        let amps = amplitudes_of(wf, &proposals);
        for c in 0..self.states.len() {
            let cur = self.amplitudes[c];
            let u: f64 = self.rngs[c].gen();
            let accept = cur.abs() < ZERO_GUARD || u < (amps[c] / cur).powi(2);
            if accept {
                self.states[c] = proposals[c];
                self.amplitudes[c] = amps[c];
                self.accepted += 1;
            }
        }
        self.proposed += self.states.len() as u64;
    }

    pub fn sweep<W: WaveFunction + ?Sized>(&mut self, wf: &W) {
        for _ in 0..self.proposer.sweep_len() {
            self.step(wf);
        }
    }

    pub fn burn_in<W: WaveFunction + ?Sized>(&mut self, wf: &W) {
        for _ in 0..self.config.burn_in {
            self.sweep(wf);
        }
    }

    /// Collects `per_chain` samples from every chain, `stride` sweeps apart.
    pub fn sample<W: WaveFunction + ?Sized>(&mut self, wf: &W) -> SampleBatch {
        let (acc0, prop0) = (self.accepted, self.proposed);
        let per_chain = self.config.per_chain();
        let mut indices = Vec::with_capacity(per_chain * self.states.len());
        let mut amplitudes = Vec::with_capacity(indices.capacity());
        for _ in 0..per_chain {
            for _ in 0..self.config.stride {
                self.sweep(wf);
            }
            indices.extend_from_slice(&self.states);
            amplitudes.extend_from_slice(&self.amplitudes);
        }
        let acceptance = (self.accepted - acc0) as f64 / (self.proposed - prop0).max(1) as f64;
        SampleBatch { indices, amplitudes, acceptance }
    }
}

/// Fresh chains, burn-in, then one batch of samples.
pub fn run_chains<W: WaveFunction + ?Sized>(
    hamiltonian: &HamiltonianSpec,
    constraint: SectorConstraint,
    wf: &W,
    config: &SamplerConfig,
) -> Result<SampleBatch> {
    let mut chains = MarkovChains::new(hamiltonian.geometry(), constraint, config.clone(), wf)?;
    chains.burn_in(wf);
    let batch = chains.sample(wf);
    if batch.amplitudes.iter().all(|a| a.abs() < ZERO_GUARD) {
        return Err(Error::Sampler("every sampled amplitude is zero".into()));
    }
    Ok(batch)
}

/// `E_loc(σ) = Σ_σ' H_σσ' ψ(σ')/ψ(σ)`.
pub fn local_energy<W: WaveFunction + ?Sized>(hamiltonian: &HamiltonianSpec, wf: &W, spins: &[i8]) -> Result<f64> {
    let psi = crate::ansatz::evaluate(wf, spins)?;
    if psi.abs() < ZERO_GUARD {
        return Err(Error::ZeroAmplitude(psi));
    }
    let index = spins_index(spins);
    let e = local_energies(hamiltonian, wf, &[index], &[psi]);
    Ok(e[0].expect("amplitude checked above"))
}

/// Local energies of many configurations; `None` marks samples below the
/// zero guard. All connected amplitudes are evaluated in one batch.
pub fn local_energies<W: WaveFunction + ?Sized>(
    hamiltonian: &HamiltonianSpec,
    wf: &W,
    indices: &[u64],
    amplitudes: &[f64],
) -> Vec<Option<f64>> {
    let mut targets = Vec::new();
    let mut elements = Vec::new();
    let mut offsets = Vec::with_capacity(indices.len() + 1);
    offsets.push(0);
    for (&i, &a) in indices.iter().zip(amplitudes) {
        if a.abs() >= ZERO_GUARD {
            hamiltonian.for_each_off_diagonal(i, |t, el| {
                targets.push(t);
                elements.push(el);
            });
        }
        offsets.push(targets.len());
    }
    let connected = amplitudes_of(wf, &targets);
    indices
        .iter()
        .zip(amplitudes)
        .enumerate()
        .map(|(k, (&i, &a))| {
            (a.abs() >= ZERO_GUARD).then(|| {
                let range = offsets[k]..offsets[k + 1];
                hamiltonian.diagonal(i) + dot(&elements[range.clone()], &connected[range]) / a
            })
        })
        .collect()
}

/// Outcome of one natural-gradient solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SrOutcome {
    pub cg_iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Weighted estimator data: rows of `O_k = ∂_k ψ / ψ`, local energies and
/// probabilities summing to one.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub num_params: usize,
    pub weights: Vec<f64>,
    pub local_energies: Vec<f64>,
    pub log_derivatives: Vec<f64>,
    pub excluded: usize,
    pub acceptance: Option<f64>,
    /// Number of independent samples behind the estimate, `None` for exact sums.
    pub sample_count: Option<usize>,
}

impl Estimate {
    pub fn energy(&self) -> f64 {
        dot(&self.weights, &self.local_energies)
    }

    pub fn variance(&self) -> f64 {
        let e = self.energy();
        self.weights.iter().zip(&self.local_energies).map(|(w, x)| w * (x - e).powi(2)).sum()
    }

    pub fn std_error(&self) -> f64 {
        self.sample_count.map_or(0.0, |n| (self.variance() / n as f64).sqrt())
    }

    /// `F_k = ⟨E_loc O_k⟩ - ⟨E_loc⟩⟨O_k⟩`, half the energy gradient.
    pub fn force(&self) -> Vec<f64> {
        let (centred, residual) = self.centred();
        let p = self.num_params;
        let mut f = vec![0.0; p];
        for (row, r) in centred.chunks_exact(p).zip(&residual) {
            f.iter_mut().zip(row).for_each(|(fk, o)| *fk += o * r);
        }
        f
    }

    /// Rows `√w (O - ⟨O⟩)` and `√w (E_loc - ⟨E_loc⟩)`.
    fn centred(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.num_params;
        let mut mean = vec![0.0; p];
        for (row, w) in self.log_derivatives.chunks_exact(p).zip(&self.weights) {
            mean.iter_mut().zip(row).for_each(|(m, o)| *m += w * o);
        }
        let e = self.energy();
        let mut centred = self.log_derivatives.clone();
        for (row, w) in centred.chunks_exact_mut(p).zip(&self.weights) {
            let s = w.sqrt();
            row.iter_mut().zip(&mean).for_each(|(o, m)| *o = s * (*o - m));
        }
        let residual = self.weights.iter().zip(&self.local_energies).map(|(w, x)| w.sqrt() * (x - e)).collect();
        (centred, residual)
    }

    /// Solves `(S + λI) x = F` by conjugate gradient. With fewer samples than
    /// parameters the equivalent sample-space system `(ÕÕᵀ + λI) y = ẽ`,
    /// `x = Õᵀ y` is solved instead.
    pub fn natural_gradient(&self, cfg: &SrConfig) -> (Vec<f64>, SrOutcome) {
        let (o, e) = self.centred();
        let (n, p) = (e.len(), self.num_params);
        let lambda = cfg.diag_shift;
        let tol = cfg.tolerance;
        let max_it = cfg.max_cg_iterations;
        let outcome = |c: &crate::linalg::CgOutcome| SrOutcome {
            cg_iterations: c.iterations,
            relative_residual: c.relative_residual,
            converged: c.converged,
        };
        if n < p {
            let cg = if n <= DENSE_SR_LIMIT {
                let gram = gram(n, p, &o, (p, 1));
                conjugate_gradient(|v, out| dense_shifted(&gram, n, lambda, v, out), &e, tol, max_it)
            } else {
                conjugate_gradient(|v, out| implicit_sample_space(&o, n, p, lambda, v, out), &e, tol, max_it)
            };
            let mut x = vec![0.0; p];
            gemm(p, n, 1, 1.0, &o, (1, p), &cg.solution, (1, 1), 0.0, &mut x, (1, 1));
            (x, outcome(&cg))
        } else {
            let mut f = vec![0.0; p];
            gemm(p, n, 1, 1.0, &o, (1, p), &e, (1, 1), 0.0, &mut f, (1, 1));
            let cg = if p <= DENSE_SR_LIMIT {
                let s = gram(p, n, &o, (1, p));
                conjugate_gradient(|v, out| dense_shifted(&s, p, lambda, v, out), &f, tol, max_it)
            } else {
                conjugate_gradient(|v, out| implicit_parameter_space(&o, n, p, lambda, v, out), &f, tol, max_it)
            };
            let out = outcome(&cg);
            (cg.solution, out)
        }
    }
}

fn dense_shifted(m: &[f64], n: usize, lambda: f64, v: &[f64], out: &mut [f64]) {
    gemm(n, n, 1, 1.0, m, (n, 1), v, (1, 1), 0.0, out, (1, 1));
    out.iter_mut().zip(v).for_each(|(o, x)| *o += lambda * x);
}

fn implicit_sample_space(o: &[f64], n: usize, p: usize, lambda: f64, v: &[f64], out: &mut [f64]) {
    let mut t = vec![0.0; p];
    gemm(p, n, 1, 1.0, o, (1, p), v, (1, 1), 0.0, &mut t, (1, 1));
    gemm(n, p, 1, 1.0, o, (p, 1), &t, (1, 1), 0.0, out, (1, 1));
    out.iter_mut().zip(v).for_each(|(o, x)| *o += lambda * x);
}

fn implicit_parameter_space(o: &[f64], n: usize, p: usize, lambda: f64, v: &[f64], out: &mut [f64]) {
    let mut t = vec![0.0; n];
    gemm(n, p, 1, 1.0, o, (p, 1), v, (1, 1), 0.0, &mut t, (1, 1));
    gemm(p, n, 1, 1.0, o, (1, p), &t, (1, 1), 0.0, out, (1, 1));
    out.iter_mut().zip(v).for_each(|(o, x)| *o += lambda * x);
}

/// `θ ← θ - η (S + λI)⁻¹ F`. If conjugate gradient fails the step falls back
/// to `θ ← θ - η F`.
pub fn sr_step(estimate: &Estimate, cfg: &SrConfig, params: &mut [f64]) -> SrOutcome {
    let (direction, outcome) = estimate.natural_gradient(cfg);
    let direction = if outcome.converged && direction.iter().all(|x| x.is_finite()) {
        direction
    } else {
        log::warn!(
            "SR solve stopped at residual {:.2e} after {} iterations, taking a plain gradient step",
            outcome.relative_residual,
            outcome.cg_iterations
        );
        estimate.force()
    };
    params.iter_mut().zip(&direction).for_each(|(t, d)| *t -= cfg.learning_rate * d);
    outcome
}

/// Every admissible configuration with a position lookup.
#[derive(Clone, Debug)]
pub struct FullBasis {
    states: Vec<u64>,
    dense: bool,
}

impl FullBasis {
    pub fn new(geometry: &LatticeGeometry, constraint: SectorConstraint) -> Result<Self> {
        let mut states = sector_indices(geometry, constraint)?;
        states.sort_unstable();
        let dense = constraint == SectorConstraint::None;
        Ok(FullBasis { states, dense })
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn position(&self, index: u64) -> Option<usize> {
        if self.dense {
            Some(index as usize)
        } else {
            self.states.binary_search(&index).ok()
        }
    }

    pub fn amplitudes<W: WaveFunction + ?Sized>(&self, wf: &W) -> Vec<f64> {
        amplitudes_of(wf, &self.states)
    }

    fn local_energies(&self, hamiltonian: &HamiltonianSpec, psi: &[f64]) -> Vec<Option<f64>> {
        self.states
            .iter()
            .zip(psi)
            .map(|(&s, &a)| {
                (a.abs() >= ZERO_GUARD).then(|| {
                    let mut acc = hamiltonian.diagonal(s) * a;
                    hamiltonian.for_each_off_diagonal(s, |t, el| {
                        if let Some(p) = self.position(t) {
                            acc += el * psi[p];
                        }
                    });
                    acc / a
                })
            })
            .collect()
    }
}

/// `⟨ψ|H|ψ⟩/⟨ψ|ψ⟩` by summation over the admissible basis.
pub fn exact_energy<W: WaveFunction + ?Sized>(
    hamiltonian: &HamiltonianSpec,
    wf: &W,
    constraint: SectorConstraint,
) -> Result<f64> {
    let basis = FullBasis::new(hamiltonian.geometry(), constraint)?;
    let psi = basis.amplitudes(wf);
    let norm: f64 = psi.iter().map(|a| a * a).sum();
    if norm == 0.0 {
        return Err(Error::ZeroAmplitude(0.0));
    }
    let num: f64 = basis
        .local_energies(hamiltonian, &psi)
        .iter()
        .zip(&psi)
        .filter_map(|(e, a)| e.map(|e| e * a * a))
        .sum();
    Ok(num / norm)
}

fn build_estimate<W: WaveFunction + ?Sized>(
    wf: &W,
    indices: &[u64],
    energies: &[Option<f64>],
    probabilities: Option<&[f64]>,
    acceptance: Option<f64>,
) -> Result<Estimate> {
    let keep: Vec<usize> = (0..indices.len()).filter(|&k| energies[k].is_some()).collect();
    let excluded = indices.len() - keep.len();
    if keep.is_empty() {
        return Err(Error::Sampler("every sample has zero amplitude".into()));
    }
    let l = wf.num_inputs();
    let p = wf.num_params();
    let mut spins = vec![0i8; keep.len() * l];
    for (row, &k) in spins.chunks_exact_mut(l).zip(&keep) {
        fill_spins(indices[k], row);
    }
    let mut amps = vec![0.0; keep.len()];
    let mut grads = vec![0.0; keep.len() * p];
    wf.amplitudes_and_gradients(&spins, &mut amps, &mut grads);
    for (row, a) in grads.chunks_exact_mut(p).zip(&amps) {
        row.iter_mut().for_each(|g| *g /= a);
    }
    let local: Vec<f64> = keep.iter().map(|&k| energies[k].unwrap()).collect();
    let weights: Vec<f64> = match probabilities {
        None => vec![1.0 / keep.len() as f64; keep.len()],
        Some(prob) => {
            let total: f64 = keep.iter().map(|&k| prob[k]).sum();
            keep.iter().map(|&k| prob[k] / total).collect()
        }
    };
    Ok(Estimate {
        num_params: p,
        weights,
        local_energies: local,
        log_derivatives: grads,
        excluded,
        acceptance,
        sample_count: probabilities.is_none().then_some(keep.len()),
    })
}

/// Estimator from a Monte Carlo batch.
pub fn sampled_estimate<W: WaveFunction + ?Sized>(
    hamiltonian: &HamiltonianSpec,
    wf: &W,
    batch: &SampleBatch,
) -> Result<Estimate> {
    let energies = local_energies(hamiltonian, wf, &batch.indices, &batch.amplitudes);
    build_estimate(wf, &batch.indices, &energies, None, Some(batch.acceptance))
}

/// Exact estimator over every admissible configuration.
pub fn full_sum_estimate<W: WaveFunction + ?Sized>(
    hamiltonian: &HamiltonianSpec,
    wf: &W,
    basis: &FullBasis,
) -> Result<Estimate> {
    let n = basis.states().len();
    if n.saturating_mul(wf.num_params()) > MAX_FULL_SUM_ENTRIES {
        return Err(Error::SizeGuard {
            what: "full-summation states x parameters",
            requested: n.saturating_mul(wf.num_params()),
            limit: MAX_FULL_SUM_ENTRIES,
        });
    }
    let psi = basis.amplitudes(wf);
    let energies = basis.local_energies(hamiltonian, &psi);
    let prob: Vec<f64> = psi.iter().map(|a| a * a).collect();
    build_estimate(wf, basis.states(), &energies, Some(&prob), None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Estimation {
    Sampled(SamplerConfig),
    FullSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sr: SrConfig,
    pub estimation: Estimation,
    pub constraint: SectorConstraint,
    /// Exact ground energy used for the relative error column.
    pub reference_energy: Option<f64>,
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub energy: f64,
    pub variance: f64,
    pub std_error: f64,
    pub acceptance: Option<f64>,
    pub rel_error: Option<f64>,
    pub excluded_samples: usize,
    pub param_norm: f64,
    pub cg_iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    /// Records of the last `window` iterations.
    pub fn tail(&self, window: usize) -> &[TrainRecord] {
        &self.records[self.records.len().saturating_sub(window)..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Completed,
    /// The energy stayed far above its starting value, or became non-finite.
    Diverged { iteration: usize, energy: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn into_result(self) -> Result<TrainLog> {
        match self.stop {
            StopReason::Completed => Ok(self.log),
            StopReason::Diverged { iteration, energy } => Err(Error::Diverged { iteration, energy }),
        }
    }
}

enum Source {
    Chains(MarkovChains),
    Exact(FullBasis),
}

/// Iterates sampling, local energies and SR updates on `wf` in place.
/// `on_record` sees every log row as it is produced.
pub fn train<W: WaveFunction + ?Sized>(
    hamiltonian: &HamiltonianSpec,
    wf: &mut W,
    config: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    config.sr.validate()?;
    let geometry = hamiltonian.geometry();
    config.constraint.validate(geometry)?;
    let mut source = match &config.estimation {
        Estimation::Sampled(s) => {
            let mut chains = MarkovChains::new(geometry, config.constraint, s.clone(), wf)?;
            chains.burn_in(wf);
            Source::Chains(chains)
        }
        Estimation::FullSum => Source::Exact(FullBasis::new(geometry, config.constraint)?),
    };
    let mut log = TrainLog::default();
    let mut params = wf.params().to_vec();
    let mut initial = None;
    let mut above = 0;
    for iteration in 0..config.sr.iterations {
        let estimate = match &mut source {
            Source::Chains(chains) => {
                let batch = chains.sample(wf);
                sampled_estimate(hamiltonian, wf, &batch)?
            }
            Source::Exact(basis) => full_sum_estimate(hamiltonian, wf, basis)?,
        };
        let energy = estimate.energy();
        let outcome = sr_step(&estimate, &config.sr, &mut params);
        let record = TrainRecord {
            iteration,
            energy,
            variance: estimate.variance(),
            std_error: estimate.std_error(),
            acceptance: estimate.acceptance,
            rel_error: config.reference_energy.map(|e0| ((energy - e0) / e0).abs()),
            excluded_samples: estimate.excluded,
            param_norm: dot(&params, &params).sqrt(),
            cg_iterations: outcome.cg_iterations,
        };
        on_record(&record);
        log.records.push(record);

        let start: f64 = *initial.get_or_insert(energy);
        above = if energy > start + 10.0 * start.abs().max(1.0) { above + 1 } else { 0 };
        if !energy.is_finite() || above >= DIVERGENCE_PATIENCE || params.iter().any(|x| !x.is_finite()) {
            return Ok(TrainOutcome { log, stop: StopReason::Diverged { iteration, energy } });
        }
        wf.set_params(&params)?;
        if let Source::Chains(chains) = &mut source {
            chains.refresh(wf);
        }
    }
    Ok(TrainOutcome { log, stop: StopReason::Completed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{Activation, AmplitudeTable, FeedForward, FfnnArchitecture};
    use crate::exact::{ground_state_full, SolverOptions};
    use crate::hamiltonian::{build_ising, build_tfim, build_toric};
    use crate::lattice::Boundary;

    fn chain(l: usize) -> LatticeGeometry {
        LatticeGeometry::chain(l, Boundary::Periodic).unwrap()
    }

    fn random_table(l: usize, seed: u64) -> AmplitudeTable {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        AmplitudeTable::full(l, (0..1 << l).map(|_| r.gen_range(0.2..1.0) * if r.gen() { 1.0 } else { -1.0 }).collect())
            .unwrap()
    }

    fn sampler(n_chains: usize, samples: usize, seed: u64) -> SamplerConfig {
        SamplerConfig { n_chains, burn_in: 20, stride: 1, samples, seed, p_loop: DEFAULT_P_LOOP }
    }

    #[test]
    fn diagonal_local_energy_ignores_ansatz() {
        let g = LatticeGeometry::square_sites(3, 3, Boundary::Periodic).unwrap();
        let h = build_ising(&g).unwrap();
        let wf = random_table(9, 1);
        let mut s = [0i8; 9];
        for i in [0u64, 5, 300, 511] {
            fill_spins(i, &mut s);
            assert_eq!(local_energy(&h, &wf, &s).unwrap(), h.diagonal(i));
        }
    }

    #[test]
    fn constant_ansatz_on_two_site_tfim() {
        let h = build_tfim(&LatticeGeometry::chain(2, Boundary::Open).unwrap(), 1.0).unwrap();
        let wf = AmplitudeTable::full(2, vec![1.0; 4]).unwrap();
        let mut s = [0i8; 2];
        for i in 0..4 {
            fill_spins(i, &mut s);
            assert!((local_energy(&h, &wf, &s).unwrap() - (h.diagonal(i) - 2.0)).abs() < 1e-15);
        }
    }

    fn ground_table(h: &HamiltonianSpec, constraint: SectorConstraint) -> (f64, AmplitudeTable) {
        let gs = ground_state_full(h, constraint, &SolverOptions::default()).unwrap();
        let table = match &gs.states {
            None => AmplitudeTable::full(h.num_spins(), gs.vector.clone()).unwrap(),
            Some(states) => AmplitudeTable::sector(h.num_spins(), states.clone(), gs.vector.clone()).unwrap(),
        };
        (gs.energy, table)
    }

    #[test]
    fn zero_variance_at_ground_state() {
        let h = build_tfim(&chain(8), 0.7).unwrap();
        let (e0, table) = ground_table(&h, SectorConstraint::None);
        let basis = FullBasis::new(h.geometry(), SectorConstraint::None).unwrap();
        let est = full_sum_estimate(&h, &table, &basis).unwrap();
        assert!(est.variance() <= 1e-20, "{}", est.variance());
        assert!(est.local_energies.iter().all(|e| (e - e0).abs() < 1e-9));
        let batch = run_chains(&h, SectorConstraint::None, &table, &sampler(4, 256, 3)).unwrap();
        let est = sampled_estimate(&h, &table, &batch).unwrap();
        assert!(est.variance() <= 1e-20);
        assert!(est.force().iter().all(|f| f.abs() < 1e-9));

        let g = LatticeGeometry::square_links(2, 2).unwrap();
        let h = build_toric(&g, 0.2, true, true).unwrap();
        let (e0, table) = ground_table(&h, SectorConstraint::GaussLaw);
        let batch = run_chains(&h, SectorConstraint::GaussLaw, &table, &sampler(2, 64, 4)).unwrap();
        let est = sampled_estimate(&h, &table, &batch).unwrap();
        assert!(est.variance() <= 1e-20 && (est.energy() - e0).abs() < 1e-9);
    }

    #[test]
    fn uniform_ansatz_always_accepts() {
        let h = build_ising(&chain(6)).unwrap();
        let wf = AmplitudeTable::full(6, vec![0.3; 64]).unwrap();
        let batch = run_chains(&h, SectorConstraint::None, &wf, &sampler(3, 60, 5)).unwrap();
        assert_eq!(batch.acceptance, 1.0);
    }

    #[test]
    fn peaked_ansatz_concentrates() {
        let h = build_ising(&chain(6)).unwrap();
        let mut amps = vec![1e-3; 64];
        amps[37] = 1.0;
        let wf = AmplitudeTable::full(6, amps).unwrap();
        let batch = run_chains(&h, SectorConstraint::None, &wf, &sampler(4, 4000, 6)).unwrap();
        let hits = batch.indices.iter().filter(|&&i| i == 37).count();
        assert!(hits as f64 > 0.99 * batch.indices.len() as f64, "{hits}");
    }

    #[test]
    fn histogram_matches_born_distribution() {
        let wf = random_table(8, 7);
        let h = build_ising(&chain(8)).unwrap();
        let cfg = SamplerConfig { n_chains: 8, burn_in: 50, stride: 1, samples: 1_000_000, seed: 8, p_loop: 0.0 };
        let batch = run_chains(&h, SectorConstraint::None, &wf, &cfg).unwrap();
        let mut counts = vec![0usize; 256];
        batch.indices.iter().for_each(|&i| counts[i as usize] += 1);
        let norm: f64 = wf.params().iter().map(|a| a * a).sum();
        let n = batch.indices.len() as f64;
        let tv: f64 =
            wf.params().iter().zip(&counts).map(|(a, &c)| (a * a / norm - c as f64 / n).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.02, "{tv}");
    }

    #[test]
    fn detailed_balance_single_flip() {
        let wf = random_table(3, 9);
        let g = LatticeGeometry::chain(3, Boundary::Open).unwrap();
        let cfg = SamplerConfig { n_chains: 1, burn_in: 10, stride: 1, samples: 1, seed: 10, p_loop: 0.0 };
        let mut chains = MarkovChains::new(&g, SectorConstraint::None, cfg, &wf).unwrap();
        chains.burn_in(&wf);
        let mut visits = [0f64; 8];
        let mut moves = [[0f64; 8]; 8];
        let total = 10_000_000;
        for _ in 0..total {
            let from = chains.states()[0] as usize;
            chains.step(&wf);
            let to = chains.states()[0] as usize;
            visits[from] += 1.0;
            moves[from][to] += 1.0;
        }
        let norm: f64 = wf.params().iter().map(|a| a * a).sum();
        for a in 0..8 {
            for b in 0..8 {
                if a == b {
                    continue;
                }
                let pa = wf.params()[a].powi(2) / norm;
                let pb = wf.params()[b].powi(2) / norm;
                let flow_ab = pa * moves[a][b] / visits[a].max(1.0);
                let flow_ba = pb * moves[b][a] / visits[b].max(1.0);
                assert!((flow_ab - flow_ba).abs() < 1e-2, "{a}->{b}: {flow_ab} vs {flow_ba}");
            }
        }
    }

    #[test]
    fn deterministic_replay() {
        let h = build_tfim(&chain(6), 0.5).unwrap();
        let arch = FfnnArchitecture { n_hidden: 3, activation: Activation::Tanh, bias: true };
        let cfg = TrainConfig {
            sr: SrConfig { iterations: 5, ..SrConfig::default() },
            estimation: Estimation::Sampled(sampler(4, 64, 11)),
            constraint: SectorConstraint::None,
            reference_energy: None,
        };
        let run = || {
            let mut wf = FeedForward::new(arch.clone(), 6, 2).unwrap();
            train(&h, &mut wf, &cfg, |_| {}).unwrap().log
        };
        assert_eq!(run(), run());
    }

    fn small_net() -> (HamiltonianSpec, FeedForward) {
        let g = LatticeGeometry::square_sites(2, 2, Boundary::Periodic).unwrap();
        let h = build_tfim(&g, 0.8).unwrap();
        let arch = FfnnArchitecture { n_hidden: 2, activation: Activation::Tanh, bias: true };
        (h, FeedForward::new(arch, 4, 12).unwrap())
    }

    #[test]
    fn force_is_half_the_energy_gradient() {
        let (h, mut wf) = small_net();
        let basis = FullBasis::new(h.geometry(), SectorConstraint::None).unwrap();
        let force = full_sum_estimate(&h, &wf, &basis).unwrap().force();
        let base = wf.params().to_vec();
        let step = 1e-5;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += step;
            wf.set_params(&p).unwrap();
            let up = exact_energy(&h, &wf, SectorConstraint::None).unwrap();
            p[k] -= 2.0 * step;
            wf.set_params(&p).unwrap();
            let down = exact_energy(&h, &wf, SectorConstraint::None).unwrap();
            let fd = (up - down) / (2.0 * step) / 2.0;
            let scale = force.iter().fold(0.0f64, |m, f| m.max(f.abs()));
            assert!((fd - force[k]).abs() <= 1e-6 * scale, "{k}: {fd} vs {}", force[k]);
        }
    }

    #[test]
    fn large_shift_gives_gradient_direction() {
        let (h, wf) = small_net();
        let basis = FullBasis::new(h.geometry(), SectorConstraint::None).unwrap();
        let est = full_sum_estimate(&h, &wf, &basis).unwrap();
        let f = est.force();
        let lambda = 1e8;
        let cfg = SrConfig { diag_shift: lambda, tolerance: 1e-12, ..SrConfig::default() };
        let (x, out) = est.natural_gradient(&cfg);
        assert!(out.converged);
        for (xk, fk) in x.iter().zip(&f) {
            assert!((xk * lambda - fk).abs() <= 1e-6 * f.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }

    #[test]
    fn sample_and_parameter_space_solves_agree() {
        let (h, wf) = small_net();
        let batch = run_chains(&h, SectorConstraint::None, &wf, &sampler(2, 6, 13)).unwrap();
        let est = sampled_estimate(&h, &wf, &batch).unwrap();
        assert!(est.weights.len() < wf.num_params());
        let cfg = SrConfig { tolerance: 1e-13, ..SrConfig::default() };
        let (x, _) = est.natural_gradient(&cfg);
        // dense parameter-space reference
        let (o, e) = est.centred();
        let p = wf.num_params();
        let mut s = nalgebra::DMatrix::<f64>::identity(p, p) * cfg.diag_shift;
        let mut f = nalgebra::DVector::<f64>::zeros(p);
        for (row, r) in o.chunks_exact(p).zip(&e) {
            for a in 0..p {
                f[a] += row[a] * r;
                for b in 0..p {
                    s[(a, b)] += row[a] * row[b];
                }
            }
        }
        let reference = s.cholesky().unwrap().solve(&f);
        for k in 0..p {
            assert!((x[k] - reference[k]).abs() < 1e-6 * reference.amax(), "{k}");
        }
    }

    #[test]
    fn full_sum_training_lowers_energy() {
        let (h, mut wf) = small_net();
        let e0 = ground_state_full(&h, SectorConstraint::None, &SolverOptions::energy_only()).unwrap().energy;
        let cfg = TrainConfig {
            sr: SrConfig { iterations: 300, learning_rate: 0.05, ..SrConfig::default() },
            estimation: Estimation::FullSum,
            constraint: SectorConstraint::None,
            reference_energy: Some(e0),
        };
        let log = train(&h, &mut wf, &cfg, |_| {}).unwrap().into_result().unwrap();
        let first = log.records[0].energy;
        let last = log.last().unwrap();
        assert!(last.energy < first && last.energy >= e0 - 1e-9);
        assert!(last.rel_error.unwrap() < 0.05, "{:?}", last);
        assert!(log.records.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
    }

    #[test]
    fn divergence_detector_stops_training() {
        let (h, mut wf) = small_net();
        let cfg = TrainConfig {
            sr: SrConfig { iterations: 500, learning_rate: 1e6, ..SrConfig::default() },
            estimation: Estimation::FullSum,
            constraint: SectorConstraint::None,
            reference_energy: None,
        };
        let out = train(&h, &mut wf, &cfg, |_| {});
        if let Ok(out) = out {
            assert!(matches!(out.stop, StopReason::Diverged { .. }) || out.log.records.len() == 500);
        }
    }

    #[test]
    fn sector_chains_stay_in_sector() {
        let g = LatticeGeometry::square_links(2, 2).unwrap();
        let h = build_toric(&g, 0.2, true, true).unwrap();
        let wf = random_table(8, 14);
        let batch = run_chains(&h, SectorConstraint::GaussLaw, &wf, &sampler(3, 300, 15)).unwrap();
        assert!(batch.indices.iter().all(|&s| SectorConstraint::GaussLaw.is_satisfied(&g, s)));
        let m = SectorConstraint::FixedMagnetization(2);
        let h = build_ising(&chain(6)).unwrap();
        let batch = run_chains(&h, m, &random_table(6, 16), &sampler(3, 300, 17)).unwrap();
        assert!(batch.indices.iter().all(|&s| s.count_ones() == 2));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SamplerConfig { n_chains: 0, ..SamplerConfig::default() }.validate().is_err());
        assert!(SrConfig { diag_shift: 0.0, ..SrConfig::default() }.validate().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn full_sum_energy_is_a_variational_bound(hx in 0.0f64..2.0, seed in any::<u64>()) {
                let h = build_tfim(&chain(6), hx).unwrap();
                let wf = random_table(6, seed);
                let basis = FullBasis::new(h.geometry(), SectorConstraint::None).unwrap();
                let est = full_sum_estimate(&h, &wf, &basis).unwrap();
                prop_assert!((est.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(est.weights.iter().all(|&w| w >= 0.0));
                let e = exact_energy(&h, &wf, SectorConstraint::None).unwrap();
                prop_assert!((est.energy() - e).abs() < 1e-10 * e.abs().max(1.0));
                let e0 = h.dense_matrix().unwrap().symmetric_eigenvalues().min();
                prop_assert!(e >= e0 - 1e-10);
            }
        }
    }
}

//! Correlator transformer: attention without softmax over spin patches.
//!
//! With `X¹ = (S·W) ⊙ pE`, each layer computes `Q = X¹·W_Q`, `K = Xˡ·W_K`,
//! `V = pE·W_V` and `Xˡ⁺¹ = Q·Kᵀ·V / √(2p)`, so layer `l` is a polynomial of
//! degree at most `l` in the spins. The amplitude is a linear read-out of the
//! layer means plus a bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WaveFunction;
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, LatticeKind};
use crate::linalg::gemm;

const CHUNK: usize = 32;
const CALIBRATION_SAMPLES: usize = 256;

/// Which layer means (and whether the bias) enter the read-out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    #[default]
    All,
    EvenOnly,
    OddOnly,
    OddPlusBias,
}

impl HeadMode {
    /// `layer` counts from 1.
    pub fn layer_active(self, layer: usize) -> bool {
        match self {
            HeadMode::All => true,
            HeadMode::EvenOnly => layer.is_multiple_of(2),
            HeadMode::OddOnly | HeadMode::OddPlusBias => layer % 2 == 1,
        }
    }

    pub fn uses_bias(self) -> bool {
        matches!(self, HeadMode::All | HeadMode::OddPlusBias)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqsArchitecture {
    pub n_lay: usize,
    pub e_dim: usize,
    pub p_size: usize,
    #[serde(default)]
    pub head: HeadMode,
}

/// Parameter count including the fixed positional encoding:
/// `p·e + (N/p)·e + 3(n_lay-1)·e² + n_lay + 1`.
pub fn param_count(arch: &CqsArchitecture, num_inputs: usize) -> usize {
    let (p, e, n) = (arch.p_size, arch.e_dim, arch.n_lay);
    p * e + (num_inputs / p) * e + 3 * n.saturating_sub(1) * e * e + n + 1
}

/// Embedding dimension whose parameter count is closest to `target`.
pub fn auto_embedding_dim(p_size: usize, num_inputs: usize, n_lay: usize, target: usize) -> usize {
    let count = |e| param_count(&CqsArchitecture { n_lay, e_dim: e, p_size, head: HeadMode::All }, num_inputs);
    let mut best = 1;
    let mut e = 1;
    loop {
        let c = count(e);
        if c.abs_diff(target) < count(best).abs_diff(target) {
            best = e;
        }
        if c > target {
            return best;
        }
        e += 1;
    }
}

/// `pE[i][m] = sin(i / 10000^(2j/e))` for `m = 2j`, `cos(...)` for `m = 2j + 1`.
pub fn positional_encoding(num_patches: usize, e_dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; num_patches * e_dim];
    for i in 0..num_patches {
        for m in 0..e_dim {
            let j = (m / 2) as f64;
            let angle = i as f64 / 10000f64.powf(2.0 * j / e_dim as f64);
            pe[i * e_dim + m] = if m % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn blocks(lx: usize, ly: usize, p: usize, offset: usize) -> Option<Vec<Vec<usize>>> {
    let q = (p as f64).sqrt().round() as usize;
    let (bx, by) = if q * q == p && lx.is_multiple_of(q) && ly.is_multiple_of(q) {
        (q, q)
    } else if lx.is_multiple_of(p) {
        (p, 1)
    } else {
        return None;
    };
    let mut out = Vec::with_capacity(lx * ly / p);
    for y0 in (0..ly).step_by(by) {
        for x0 in (0..lx).step_by(bx) {
            let mut patch = Vec::with_capacity(p);
            for y in y0..y0 + by {
                for x in x0..x0 + bx {
                    patch.push(offset + y * lx + x);
                }
            }
            out.push(patch);
        }
    }
    Some(out)
}

/// Groups the spins of `geometry` into patches of `p_size`: square blocks
/// where the lattice allows, otherwise row segments. Links are patched as
/// two separate site grids, horizontal then vertical.
pub fn patch_layout(geometry: &LatticeGeometry, p_size: usize) -> Result<Vec<Vec<usize>>> {
    if p_size == 0 {
        return Err(Error::Contract("patch size must be positive".into()));
    }
    let (lx, ly) = (geometry.lx, geometry.ly);
    let layout = match geometry.kind {
        LatticeKind::SquareSites => blocks(lx, ly, p_size, 0),
        LatticeKind::SquareLinks => blocks(lx, ly, p_size, 0).zip(blocks(lx, ly, p_size, lx * ly)).map(|(mut h, v)| {
            h.extend(v);
            h
        }),
    };
    layout.ok_or_else(|| Error::Shape(format!("cannot patch a {lx}x{ly} lattice into blocks of {p_size}")))
}

fn calibration_probe(num_inputs: usize, seed: u64) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..CALIBRATION_SAMPLES * num_inputs).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect()
}

struct Offsets {
    wq: usize,
    wk: usize,
    wv: usize,
    pred: usize,
    bias: usize,
    total: usize,
}

impl Offsets {
    fn new(p: usize, e: usize, n: usize) -> Self {
        let block = (n - 1) * e * e;
        let wq = p * e;
        let wk = wq + block;
        let wv = wk + block;
        let pred = wv + block;
        let bias = pred + n;
        Offsets { wq, wk, wv, pred, bias, total: bias + 1 }
    }
}

#[derive(Clone, Debug)]
pub struct CorrelatorTransformer {
    arch: CqsArchitecture,
    patches: Vec<Vec<usize>>,
    num_inputs: usize,
    pos_enc: Vec<f64>,
    params: Vec<f64>,
    /// `V_l = pE·W_V,l`, refreshed whenever parameters change.
    values: Vec<Vec<f64>>,
}

/// Intermediate tensors of a batched forward pass.
struct Trace {
    batch: usize,
    spins: Vec<f64>,
    layers: Vec<Vec<f64>>,
    queries: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
    means: Vec<f64>,
}

impl CorrelatorTransformer {
    /// Training initialization: uniform weights with the embedding scaled to
    /// unit root-mean-square output and a small bias. Key matrices past the
    /// first layer read by the head start at zero, so deeper layers start at
    /// zero and higher orders switch on one layer at a time as the keys move.
    pub fn new(arch: CqsArchitecture, geometry: &LatticeGeometry, seed: u64) -> Result<Self> {
        let mut cqs = Self::randomized(arch, geometry, seed)?;
        let off = cqs.offsets();
        let e2 = cqs.arch.e_dim * cqs.arch.e_dim;
        let first = (1..=cqs.arch.n_lay).find(|&l| cqs.arch.head.layer_active(l)).unwrap_or(1);
        cqs.params[off.wk + (first - 1) * e2..off.wv].iter_mut().for_each(|w| *w = 0.0);
        cqs.refresh_values();
        Ok(cqs)
    }

    /// Every weight random, with the embedding and each key matrix rescaled
    /// so all layer outputs have unit root-mean-square on a fixed probe set.
    pub fn randomized(arch: CqsArchitecture, geometry: &LatticeGeometry, seed: u64) -> Result<Self> {
        let patches = patch_layout(geometry, arch.p_size)?;
        Self::with_patches(arch, patches, geometry.num_spins(), seed)
    }

    /// Like [`randomized`](Self::randomized) with an explicit patch layout.
    pub fn with_patches(arch: CqsArchitecture, patches: Vec<Vec<usize>>, num_inputs: usize, seed: u64) -> Result<Self> {
        if arch.n_lay == 0 || arch.e_dim == 0 {
            return Err(Error::Contract("n_lay and e_dim must be positive".into()));
        }
        if !(1..=arch.n_lay).any(|l| arch.head.layer_active(l)) {
            return Err(Error::Contract(format!("head {:?} reads no layer of {}", arch.head, arch.n_lay)));
        }
        if patches.iter().any(|p| p.len() != arch.p_size) {
            return Err(Error::Shape(format!("every patch must hold {} spins", arch.p_size)));
        }
        let mut covered: Vec<usize> = patches.iter().flatten().copied().collect();
        covered.sort_unstable();
        if covered != (0..num_inputs).collect::<Vec<_>>() {
            return Err(Error::Shape("patches must cover every input exactly once".into()));
        }
        let (p, e, n) = (arch.p_size, arch.e_dim, arch.n_lay);
        let off = Offsets::new(p, e, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (e as f64).sqrt();
        let mut params: Vec<f64> = (0..off.pred).map(|_| rng.gen_range(-s..=s)).collect();
        let sp = 1.0 / (n as f64).sqrt();
        params.extend((0..n).map(|_| rng.gen_range(-sp..=sp)));
        params.push(0.01);
        let pos_enc = positional_encoding(patches.len(), e);
        let mut cqs = CorrelatorTransformer { arch, patches, num_inputs, pos_enc, params, values: Vec::new() };
        cqs.refresh_values();
        cqs.calibrate(&calibration_probe(num_inputs, seed));
        Ok(cqs)
    }

    /// Same architecture with every weight zero and bias `beta`.
    pub fn constant(arch: CqsArchitecture, geometry: &LatticeGeometry, beta: f64) -> Result<Self> {
        let mut cqs = Self::new(arch, geometry, 0)?;
        let mut p = vec![0.0; cqs.params.len()];
        *p.last_mut().unwrap() = beta;
        cqs.set_params(&p)?;
        Ok(cqs)
    }

    fn calibrate(&mut self, probe: &[i8]) {
        let (p, e) = (self.arch.p_size, self.arch.e_dim);
        let off = self.offsets();
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let t = self.forward(probe);
        let r = rms(&t.layers[0]);
        if r > 0.0 {
            self.params[..p * e].iter_mut().for_each(|w| *w /= r);
        }
        for l in 0..self.arch.n_lay - 1 {
            let t = self.forward(probe);
            let r = rms(&t.layers[l + 1]);
            if r > 0.0 {
                self.params[off.wk + l * e * e..off.wk + (l + 1) * e * e].iter_mut().for_each(|w| *w /= r);
            }
        }
    }

    pub fn architecture(&self) -> &CqsArchitecture {
        &self.arch
    }

    pub fn patches(&self) -> &[Vec<usize>] {
        &self.patches
    }

    pub fn positional(&self) -> &[f64] {
        &self.pos_enc
    }

    /// Count from the architecture formula, fixed encoding included.
    pub fn formula_param_count(&self) -> usize {
        param_count(&self.arch, self.num_inputs)
    }

    fn offsets(&self) -> Offsets {
        Offsets::new(self.arch.p_size, self.arch.e_dim, self.arch.n_lay)
    }

    fn scale(&self) -> f64 {
        1.0 / (2.0 * self.arch.p_size as f64).sqrt()
    }

    fn refresh_values(&mut self) {
        let (e, np) = (self.arch.e_dim, self.patches.len());
        let off = self.offsets();
        self.values = (0..self.arch.n_lay - 1)
            .map(|l| {
                let mut v = vec![0.0; np * e];
                let w = &self.params[off.wv + l * e * e..off.wv + (l + 1) * e * e];
                gemm(np, e, e, 1.0, &self.pos_enc, (e, 1), w, (e, 1), 0.0, &mut v, (e, 1));
                v
            })
            .collect();
    }

    fn head_weight(&self, layer: usize) -> f64 {
        if self.arch.head.layer_active(layer + 1) {
            self.params[self.offsets().pred + layer]
        } else {
            0.0
        }
    }

    fn forward(&self, spins: &[i8]) -> Trace {
        let (p, e, n) = (self.arch.p_size, self.arch.e_dim, self.arch.n_lay);
        let np = self.patches.len();
        let batch = spins.len() / self.num_inputs;
        let rows = batch * np;
        let off = self.offsets();
        let c = self.scale();

        let mut s = vec![0.0; rows * p];
        for b in 0..batch {
            let cfg = &spins[b * self.num_inputs..(b + 1) * self.num_inputs];
            for (i, patch) in self.patches.iter().enumerate() {
                for (k, &site) in patch.iter().enumerate() {
                    s[(b * np + i) * p + k] = f64::from(cfg[site]);
                }
            }
        }
        let mut x1 = vec![0.0; rows * e];
        gemm(rows, p, e, 1.0, &s, (p, 1), &self.params[..p * e], (e, 1), 0.0, &mut x1, (e, 1));
        for (r, row) in x1.chunks_exact_mut(e).enumerate() {
            let pe = &self.pos_enc[(r % np) * e..(r % np + 1) * e];
            row.iter_mut().zip(pe).for_each(|(x, w)| *x *= w);
        }

        let mut layers = vec![x1];
        let mut queries = Vec::with_capacity(n - 1);
        let mut keys = Vec::with_capacity(n - 1);
        let mut scores = Vec::with_capacity(n - 1);
        for l in 0..n - 1 {
            let mut q = vec![0.0; rows * e];
            let mut k = vec![0.0; rows * e];
            let wq = &self.params[off.wq + l * e * e..off.wq + (l + 1) * e * e];
            let wk = &self.params[off.wk + l * e * e..off.wk + (l + 1) * e * e];
            gemm(rows, e, e, 1.0, &layers[0], (e, 1), wq, (e, 1), 0.0, &mut q, (e, 1));
            gemm(rows, e, e, 1.0, &layers[l], (e, 1), wk, (e, 1), 0.0, &mut k, (e, 1));
            let mut a = vec![0.0; batch * np * np];
            let mut next = vec![0.0; rows * e];
            let v = &self.values[l];
            for b in 0..batch {
                let qb = &q[b * np * e..(b + 1) * np * e];
                let kb = &k[b * np * e..(b + 1) * np * e];
                let ab = &mut a[b * np * np..(b + 1) * np * np];
                gemm(np, e, np, 1.0, qb, (e, 1), kb, (1, e), 0.0, ab, (np, 1));
                gemm(np, np, e, c, ab, (np, 1), v, (e, 1), 0.0, &mut next[b * np * e..(b + 1) * np * e], (e, 1));
            }
            queries.push(q);
            keys.push(k);
            scores.push(a);
            layers.push(next);
        }
        let block = (np * e) as f64;
        let mut means = vec![0.0; batch * n];
        for (l, x) in layers.iter().enumerate() {
            for b in 0..batch {
                means[b * n + l] = x[b * np * e..(b + 1) * np * e].iter().sum::<f64>() / block;
            }
        }
        Trace { batch, spins: s, layers, queries, keys, scores, means }
    }

    fn read_out(&self, t: &Trace, out: &mut [f64]) {
        let n = self.arch.n_lay;
        let bias = if self.arch.head.uses_bias() { self.params[self.offsets().bias] } else { 0.0 };
        let heads: Vec<f64> = (0..n).map(|l| self.head_weight(l)).collect();
        for (b, o) in out.iter_mut().enumerate().take(t.batch) {
            *o = bias + (0..n).map(|l| heads[l] * t.means[b * n + l]).sum::<f64>();
        }
    }

    fn backward(&self, t: &Trace, grads: &mut [f64]) {
        let (p, e, n) = (self.arch.p_size, self.arch.e_dim, self.arch.n_lay);
        let np = self.patches.len();
        let rows = t.batch * np;
        let off = self.offsets();
        let np_params = off.total;
        let c = self.scale();
        let inv_block = 1.0 / (np * e) as f64;

        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut d = vec![self.head_weight(n - 1) * inv_block; rows * e];
        let mut dx1 = vec![0.0; rows * e];
        let mut da = vec![0.0; np * np];
        let mut dv = vec![0.0; np * e];
        let mut dq = vec![0.0; rows * e];
        let mut dk = vec![0.0; rows * e];
        for l in (0..n - 1).rev() {
            let v = &self.values[l];
            for b in 0..t.batch {
                let span = b * np * e..(b + 1) * np * e;
                let db = &d[span.clone()];
                let ab = &t.scores[l][b * np * np..(b + 1) * np * np];
                let g = &mut grads[b * np_params..(b + 1) * np_params];
                // dA = c·D·Vᵀ, dV = c·Aᵀ·D, dW_V = pEᵀ·dV
                gemm(np, e, np, c, db, (e, 1), v, (1, e), 0.0, &mut da, (np, 1));
                gemm(np, np, e, c, ab, (1, np), db, (e, 1), 0.0, &mut dv, (e, 1));
                let wv = off.wv + l * e * e;
                gemm(e, np, e, 1.0, &self.pos_enc, (1, e), &dv, (e, 1), 0.0, &mut g[wv..wv + e * e], (e, 1));
                // dQ = dA·K, dK = dAᵀ·Q
                let kb = &t.keys[l][span.clone()];
                let qb = &t.queries[l][span.clone()];
                gemm(np, np, e, 1.0, &da, (np, 1), kb, (e, 1), 0.0, &mut dq[span.clone()], (e, 1));
                gemm(np, np, e, 1.0, &da, (1, np), qb, (e, 1), 0.0, &mut dk[span.clone()], (e, 1));
                let wq = off.wq + l * e * e;
                let wk = off.wk + l * e * e;
                let x1b = &t.layers[0][span.clone()];
                let xlb = &t.layers[l][span.clone()];
                gemm(e, np, e, 1.0, x1b, (1, e), &dq[span.clone()], (e, 1), 0.0, &mut g[wq..wq + e * e], (e, 1));
                gemm(e, np, e, 1.0, xlb, (1, e), &dk[span.clone()], (e, 1), 0.0, &mut g[wk..wk + e * e], (e, 1));
            }
            let wq = &self.params[off.wq + l * e * e..off.wq + (l + 1) * e * e];
            let wk = &self.params[off.wk + l * e * e..off.wk + (l + 1) * e * e];
            gemm(rows, e, e, 1.0, &dq, (e, 1), wq, (1, e), 1.0, &mut dx1, (e, 1));
            d.iter_mut().for_each(|x| *x = self.head_weight(l) * inv_block);
            gemm(rows, e, e, 1.0, &dk, (e, 1), wk, (1, e), 1.0, &mut d, (e, 1));
        }
        dx1.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        for (r, row) in dx1.chunks_exact_mut(e).enumerate() {
            let pe = &self.pos_enc[(r % np) * e..(r % np + 1) * e];
            row.iter_mut().zip(pe).for_each(|(x, w)| *x *= w);
        }
        let bias_grad = if self.arch.head.uses_bias() { 1.0 } else { 0.0 };
        for b in 0..t.batch {
            let g = &mut grads[b * np_params..(b + 1) * np_params];
            let sb = &t.spins[b * np * p..(b + 1) * np * p];
            gemm(p, np, e, 1.0, sb, (1, p), &dx1[b * np * e..(b + 1) * np * e], (e, 1), 0.0, &mut g[..p * e], (e, 1));
            for l in 0..n {
                if self.arch.head.layer_active(l + 1) {
                    g[off.pred + l] = t.means[b * n + l];
                }
            }
            g[off.bias] = bias_grad;
        }
    }
}

impl WaveFunction for CorrelatorTransformer {
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
        self.refresh_values();
        Ok(())
    }

    fn amplitudes(&self, batch: &[i8], out: &mut [f64]) {
        let l = self.num_inputs;
        out.par_chunks_mut(CHUNK).zip(batch.par_chunks(CHUNK * l)).for_each(|(o, s)| {
            let t = self.forward(s);
            self.read_out(&t, o);
        });
    }

    fn amplitudes_and_gradients(&self, batch: &[i8], amps: &mut [f64], grads: &mut [f64]) {
        let (l, np) = (self.num_inputs, self.params.len());
        amps.par_chunks_mut(CHUNK)
            .zip(grads.par_chunks_mut(CHUNK * np))
            .zip(batch.par_chunks(CHUNK * l))
            .for_each(|((o, g), s)| {
                let t = self.forward(s);
                self.read_out(&t, o);
                self.backward(&t, g);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::testing::{max_fd_error, random_spins, rng};
    use crate::ansatz::log_derivatives;
    use crate::fourier::fourier_forward;
    use crate::lattice::{fill_spins, Boundary};

    fn arch(n_lay: usize, e_dim: usize, p_size: usize, head: HeadMode) -> CqsArchitecture {
        CqsArchitecture { n_lay, e_dim, p_size, head }
    }

    fn square(l: usize) -> LatticeGeometry {
        LatticeGeometry::square_sites(l, l, Boundary::Periodic).unwrap()
    }

    fn all_configs(n: usize) -> Vec<i8> {
        let mut out = vec![0i8; n << n];
        for (i, row) in out.chunks_exact_mut(n).enumerate() {
            fill_spins(i as u64, row);
        }
        out
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(&arch(16, 10, 4, HeadMode::All), 16), 4597);
        assert_eq!(param_count(&arch(1, 10, 4, HeadMode::All), 16), 80 + 2);
        let e = auto_embedding_dim(4, 16, 16, 20_000);
        assert_eq!(e, 21);
        assert_eq!(param_count(&arch(16, e, 4, HeadMode::All), 16), 20030);
        let cqs = CorrelatorTransformer::new(arch(16, 21, 4, HeadMode::All), &square(4), 1).unwrap();
        assert_eq!(cqs.formula_param_count(), 20030);
        // the positional encoding is counted but not trained
        assert_eq!(cqs.num_params(), 20030 - 4 * 21);
    }

    #[test]
    fn positional_encoding_definition() {
        let pe = positional_encoding(4, 6);
        for i in 0..4 {
            for m in 0..6 {
                let w = 10000f64.powf(2.0 * (m / 2) as f64 / 6.0);
                let expect = if m % 2 == 0 { (i as f64 / w).sin() } else { (i as f64 / w).cos() };
                assert_eq!(pe[i * 6 + m], expect);
            }
        }
    }

    #[test]
    fn patch_layouts() {
        let p = patch_layout(&square(4), 4).unwrap();
        assert_eq!(p, vec![vec![0, 1, 4, 5], vec![2, 3, 6, 7], vec![8, 9, 12, 13], vec![10, 11, 14, 15]]);
        let links = patch_layout(&LatticeGeometry::square_links(4, 4).unwrap(), 4).unwrap();
        assert_eq!(links.len(), 8);
        assert_eq!(links[4], vec![16, 17, 20, 21]);
        let chain = patch_layout(&LatticeGeometry::chain(6, Boundary::Open).unwrap(), 2).unwrap();
        assert_eq!(chain, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert!(patch_layout(&LatticeGeometry::chain(5, Boundary::Open).unwrap(), 2).is_err());
    }

    #[test]
    fn constant_state() {
        let cqs = CorrelatorTransformer::constant(arch(3, 5, 4, HeadMode::All), &square(4), 0.7).unwrap();
        let mut r = rng(1);
        for _ in 0..20 {
            assert_eq!(cqs.amplitude(&random_spins(16, &mut r)), 0.7);
        }
    }

    #[test]
    fn odd_head_first_layer_is_odd() {
        let mut cqs = CorrelatorTransformer::randomized(arch(3, 6, 4, HeadMode::OddOnly), &square(4), 3).unwrap();
        let off = cqs.offsets();
        let mut p = cqs.params().to_vec();
        p[off.pred + 2] = 0.0;
        cqs.set_params(&p).unwrap();
        let mut r = rng(2);
        for _ in 0..100 {
            let s = random_spins(16, &mut r);
            let neg: Vec<i8> = s.iter().map(|x| -x).collect();
            assert_eq!(cqs.amplitude(&neg), -cqs.amplitude(&s));
        }
    }

    fn spectrum_of(cqs: &CorrelatorTransformer, n: usize) -> crate::fourier::CorrelatorSpectrum {
        let configs = all_configs(n);
        let mut psi = vec![0.0; 1 << n];
        cqs.amplitudes(&configs, &mut psi);
        fourier_forward(&psi).unwrap()
    }

    #[test]
    fn degree_bounded_by_layer_count() {
        let chain = LatticeGeometry::chain(4, Boundary::Periodic).unwrap();
        let cqs = CorrelatorTransformer::randomized(arch(2, 5, 2, HeadMode::All), &chain, 4).unwrap();
        let w = spectrum_of(&cqs, 4).degree_profile().weights;
        assert!(w[3] <= 1e-20 && w[4] <= 1e-20, "{w:?}");
        assert!(w[2] > 1e-8);

        let g = LatticeGeometry::square_sites(3, 4, Boundary::Periodic).unwrap();
        for n_lay in [1, 2, 3, 5] {
            let cqs = CorrelatorTransformer::randomized(arch(n_lay, 4, 3, HeadMode::All), &g, 7).unwrap();
            let w = spectrum_of(&cqs, 12).degree_profile().weights;
            let total: f64 = w.iter().sum();
            assert!(w[n_lay + 1..].iter().all(|&x| x <= 1e-10 * total), "n_lay={n_lay}: {w:?}");
        }
    }

    #[test]
    fn training_init_starts_linear() {
        let g = LatticeGeometry::square_sites(3, 4, Boundary::Periodic).unwrap();
        let cqs = CorrelatorTransformer::new(arch(4, 5, 3, HeadMode::All), &g, 3).unwrap();
        let w = spectrum_of(&cqs, 12).degree_profile().weights;
        assert!(w[0] > 0.0 && w[1] > 0.0);
        assert!(w[2..].iter().all(|&x| x < 1e-25), "{w:?}");
        let mut r = rng(5);
        let o = log_derivatives(&cqs, &random_spins(12, &mut r)).unwrap();
        let off = cqs.offsets();
        // only the first key matrix receives a gradient
        assert!(o.values[off.wk..off.wk + 25].iter().any(|&x| x != 0.0));
        assert!(o.values[off.wk + 25..off.wv].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn even_head_starts_at_second_order() {
        let g = LatticeGeometry::square_sites(3, 4, Boundary::Periodic).unwrap();
        let cqs = CorrelatorTransformer::new(arch(4, 5, 3, HeadMode::EvenOnly), &g, 3).unwrap();
        let w = spectrum_of(&cqs, 12).degree_profile().weights;
        assert!(w[2] > 1e-12 && w[3..].iter().all(|&x| x < 1e-25), "{w:?}");
        assert!(CorrelatorTransformer::new(arch(1, 5, 3, HeadMode::EvenOnly), &g, 3).is_err());
    }

    #[test]
    fn head_parity_masks() {
        let g = LatticeGeometry::square_sites(3, 4, Boundary::Periodic).unwrap();
        for (head, even_allowed, odd_allowed) in
            [(HeadMode::EvenOnly, true, false), (HeadMode::OddOnly, false, true), (HeadMode::OddPlusBias, true, true)]
        {
            let cqs = CorrelatorTransformer::randomized(arch(4, 4, 3, head), &g, 9).unwrap();
            let w = spectrum_of(&cqs, 12).degree_profile().weights;
            let even: f64 = w.iter().step_by(2).sum();
            let odd: f64 = w.iter().skip(1).step_by(2).sum();
            assert_eq!(even > 1e-20, even_allowed, "{head:?} {w:?}");
            assert_eq!(odd > 1e-20, odd_allowed, "{head:?} {w:?}");
        }
        // odd-plus-bias carries even weight only in the constant term
        let cqs = CorrelatorTransformer::randomized(arch(4, 4, 3, HeadMode::OddPlusBias), &g, 9).unwrap();
        let w = spectrum_of(&cqs, 12).degree_profile().weights;
        assert!(w[2..].iter().step_by(2).all(|&x| x <= 1e-20));
    }

    #[test]
    fn calibrated_layers_have_unit_scale() {
        let cqs = CorrelatorTransformer::randomized(arch(16, 21, 4, HeadMode::All), &square(4), 5).unwrap();
        let t = cqs.forward(&calibration_probe(16, 5));
        for x in &t.layers {
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
            assert!((rms - 1.0).abs() < 1e-9, "{rms}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(10);
        for (n_lay, e, head) in [(1, 3, HeadMode::All), (3, 4, HeadMode::All), (4, 3, HeadMode::EvenOnly)] {
            let cqs = CorrelatorTransformer::randomized(arch(n_lay, e, 4, head), &square(4), 11).unwrap();
            for _ in 0..5 {
                let s = random_spins(16, &mut r);
                let err = max_fd_error(&cqs, &s, 1e-6);
                assert!(err < 1e-5, "n_lay={n_lay}: {err}");
            }
        }
    }

    #[test]
    fn bias_log_derivative() {
        let cqs = CorrelatorTransformer::randomized(arch(3, 4, 4, HeadMode::All), &square(4), 12).unwrap();
        let s = random_spins(16, &mut rng(3));
        let o = log_derivatives(&cqs, &s).unwrap();
        assert!((o.values[cqs.num_params() - 1] - 1.0 / o.amplitude).abs() < 1e-12);
    }

    #[test]
    fn batched_matches_single() {
        let cqs = CorrelatorTransformer::randomized(arch(5, 6, 4, HeadMode::All), &square(4), 13).unwrap();
        let mut r = rng(4);
        let batch: Vec<i8> = (0..70).flat_map(|_| random_spins(16, &mut r)).collect();
        let np = cqs.num_params();
        let mut amps = vec![0.0; 70];
        let mut grads = vec![0.0; 70 * np];
        cqs.amplitudes_and_gradients(&batch, &mut amps, &mut grads);
        for b in [0, 33, 69] {
            let s = &batch[b * 16..(b + 1) * 16];
            let mut a = [0.0];
            let mut g = vec![0.0; np];
            cqs.amplitudes_and_gradients(s, &mut a, &mut g);
            assert_eq!(a[0], amps[b]);
            assert_eq!(g, grads[b * np..(b + 1) * np]);
            assert_eq!(cqs.amplitude(s), amps[b]);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn correlator_content_respects_depth_and_head(n_lay in 1usize..=3, pick in 0usize..4, seed in any::<u64>()) {
                let head = [HeadMode::All, HeadMode::EvenOnly, HeadMode::OddOnly, HeadMode::OddPlusBias][pick];
                prop_assume!(n_lay > 1 || head != HeadMode::EvenOnly);
                let chain = LatticeGeometry::chain(6, Boundary::Periodic).unwrap();
                let cqs = CorrelatorTransformer::randomized(arch(n_lay, 3, 2, head), &chain, seed).unwrap();
                let w = spectrum_of(&cqs, 6).degree_profile().weights;
                let tol = 1e-12 * w.iter().sum::<f64>().max(1e-300);
                prop_assert!(w[n_lay + 1..].iter().all(|&x| x <= tol), "{:?}", w);
                let even_beyond_constant = w[2..].iter().step_by(2).all(|&x| x <= tol);
                let odd = w.iter().skip(1).step_by(2).all(|&x| x <= tol);
                match head {
                    HeadMode::All => {}
                    HeadMode::EvenOnly => prop_assert!(odd, "{:?}", w),
                    HeadMode::OddOnly => prop_assert!(even_beyond_constant && w[0] <= tol, "{:?}", w),
                    HeadMode::OddPlusBias => prop_assert!(even_beyond_constant, "{:?}", w),
                }
            }
        }
    }
}

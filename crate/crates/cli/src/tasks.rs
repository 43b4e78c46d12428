//! Task execution.

use std::path::Path;

use corrnqs::ansatz::{Ansatz, WaveFunction};
use corrnqs::exact::{ground_floor_correlator, ground_floor_restricted, ground_state_full, relative_error, SolverOptions};
use corrnqs::fourier::{count_truncated, fourier_forward, CorrelatorSpectrum};
use corrnqs::hamiltonian::HamiltonianSpec;
use corrnqs::lattice::{sector_indices, LatticeKind, SectorConstraint};
use corrnqs::restricted::{build_spanning_tree, SpanningTreeBasis};
use corrnqs::vmc::{exact_energy, train, Estimation, FullBasis, StopReason, TrainConfig, TrainLog};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{AnsatzConfig, EstimationMode, ExperimentConfig, ModelConfig, Task};
use crate::error::{io, CliError, Context, Result};
use crate::manifest::{read_f64s, RunDir, RunManifest};
use crate::plot::{Chart, Level, Series};
use crate::recipes::run_figure;

/// Largest admissible basis for which trained states are summed exactly.
const EXACT_SUM_LIMIT: usize = 1 << 22;

/// Relative amplitude above which a configuration counts as occupied.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

pub struct Options {
    pub plot: bool,
}

/// Executes `task` into `out` and writes the manifest.
pub fn run(task: Task, config: &ExperimentConfig, out: &Path, opts: &Options) -> Result<RunManifest> {
    config.validate(task)?;
    let mut dir = RunDir::acquire(out)?;
    dir.write_json("config.json", config)?;
    match task {
        Task::Train => {
            run_train(config, &mut dir, opts)?;
        }
        Task::Ed => {
            run_ed(config, &mut dir)?;
        }
        Task::EdCorr => {
            run_floors(config, &mut dir, opts)?;
        }
        Task::Fourier => run_fourier(config, &mut dir, opts)?,
        Task::Sector => run_sector(config, &mut dir)?,
        Task::Figure => run_figure(config, &mut dir, opts)?,
    }
    dir.finish(task.name(), config.hash())
}

pub(crate) fn reference_energy(config: &ExperimentConfig, h: &HamiltonianSpec, c: SectorConstraint) -> Result<Option<f64>> {
    if let Some(e) = config.reference_energy {
        return Ok(Some(e));
    }
    match ground_state_full(h, c, &SolverOptions::energy_only()) {
        Ok(g) => Ok(Some(g.energy)),
        Err(corrnqs::Error::SizeGuard { .. }) => Ok(None),
        Err(e) => Err(CliError::Core { context: "reference ground state".into(), source: e }),
    }
}

fn basis_size(model: &ModelConfig) -> usize {
    let g = model.geometry();
    let bits = match model.constraint() {
        SectorConstraint::GaussLaw => g.lx * g.ly + 1,
        _ => g.num_spins(),
    };
    if bits >= 63 {
        usize::MAX
    } else {
        1 << bits
    }
}

/// Sidecar describing a binary blob of little-endian `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BlobInfo {
    /// Trained parameters and everything needed to rebuild the ansatz.
    Parameters { model: ModelConfig, ansatz: AnsatzConfig, seed: u64, num_params: usize },
    /// A normalized wave function over `num_vars` binary variables.
    Wavevector { coordinates: Coordinates, num_vars: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coordinates {
    Spins,
    /// Indexed by the independent links of the spanning tree.
    IndependentLinks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub num_params: usize,
    pub stop: String,
    pub final_energy: f64,
    pub reference_energy: Option<f64>,
    pub rel_error: Option<f64>,
    /// Energy of the final parameters summed over the whole basis.
    pub exact_energy: Option<f64>,
    pub exact_rel_error: Option<f64>,
    /// Configurations with `|ψ|/max|ψ|` above the support threshold.
    pub support_states: Option<usize>,
}

pub(crate) struct Trained {
    pub log: TrainLog,
    pub summary: TrainSummary,
}

pub(crate) fn run_train(config: &ExperimentConfig, dir: &mut RunDir, opts: &Options) -> Result<Trained> {
    let model = config.model()?;
    let ansatz = config.ansatz()?;
    let h = model.hamiltonian()?;
    let constraint = model.constraint();
    let mut wf = ansatz.build(model.geometry(), config.seed)?;
    let e0 = reference_energy(config, &h, constraint)?;
    let estimation = match config.estimation {
        EstimationMode::Sampled => Estimation::Sampled(config.sampler.clone().unwrap_or_default().with_seed(config.seed)),
        EstimationMode::FullSum => Estimation::FullSum,
    };
    let sr = config.sr.clone().unwrap_or_default();
    let cfg = TrainConfig { sr, estimation, constraint, reference_energy: e0 };
    log::info!("training {} parameters", wf.num_params());
    let outcome = train(&h, &mut wf, &cfg, |r| {
        if r.iteration % 50 == 0 {
            log::info!("iteration {} energy {:.6} variance {:.3e}", r.iteration, r.energy, r.variance);
        }
    })
    .context("training")?;

    let mut w = dir.csv("train_log.csv")?;
    for r in &outcome.log.records {
        w.serialize(r)?;
    }
    w.flush().map_err(io(dir.root().join("train_log.csv")))?;
    dir.write_f64s("params.bin", wf.params())?;
    dir.write_json(
        "params.json",
        &BlobInfo::Parameters {
            model: model.clone(),
            ansatz: ansatz.clone(),
            seed: config.seed,
            num_params: wf.num_params(),
        },
    )?;

    let (exact, support) = if basis_size(model) <= EXACT_SUM_LIMIT {
        let basis = FullBasis::new(model.geometry(), constraint).context("enumerating the basis")?;
        let psi = basis.amplitudes(&wf);
        let top = psi.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let support = psi.iter().filter(|a| a.abs() > SUPPORT_THRESHOLD * top).count();
        (exact_energy(&h, &wf, constraint).ok(), Some(support))
    } else {
        (None, None)
    };
    let last = outcome.log.last();
    let final_energy = last.map_or(f64::NAN, |r| r.energy);
    let summary = TrainSummary {
        iterations: outcome.log.records.len(),
        num_params: wf.num_params(),
        stop: match outcome.stop {
            StopReason::Completed => "completed".into(),
            StopReason::Diverged { iteration, energy } => format!("diverged at iteration {iteration} (energy {energy})"),
        },
        final_energy,
        reference_energy: e0,
        rel_error: e0.map(|e| relative_error(final_energy, e).value),
        exact_energy: exact,
        exact_rel_error: e0.zip(exact).map(|(e0, e)| relative_error(e, e0).value),
        support_states: support,
    };
    dir.write_json("summary.json", &summary)?;
    if opts.plot {
        let chart = energy_chart("training", vec![("energy".into(), &outcome.log)], e0, &[]);
        dir.write_text("energy.svg", &chart.to_svg())?;
    }
    Ok(Trained { log: outcome.log, summary })
}

/// Relative error against `e0` on a log axis when known, raw energy otherwise.
pub(crate) fn energy_chart(title: &str, runs: Vec<(String, &TrainLog)>, e0: Option<f64>, floors: &[(String, f64)]) -> Chart {
    let value = |e: f64| e0.map_or(e, |e0| relative_error(e, e0).value);
    Chart {
        title: title.into(),
        x_label: "iteration".into(),
        y_label: if e0.is_some() { "relative error" } else { "energy" }.into(),
        log_y: e0.is_some(),
        series: runs
            .into_iter()
            .map(|(label, log)| Series {
                label,
                points: log.records.iter().map(|r| (r.iteration as f64, value(r.energy))).collect(),
            })
            .collect(),
        levels: floors.iter().map(|(label, e)| Level { label: label.clone(), value: value(*e) }).collect(),
    }
}

pub(crate) fn run_ed(config: &ExperimentConfig, dir: &mut RunDir) -> Result<f64> {
    let model = config.model()?;
    let h = model.hamiltonian()?;
    let constraint = model.constraint();
    let g = ground_state_full(&h, constraint, &SolverOptions::default()).context("exact diagonalization")?;
    dir.write_json(
        "ed.json",
        &json!({
            "energy": g.energy,
            "degeneracy": g.degeneracy,
            "residual": g.residual,
            "iterations": g.iterations,
            "dimension": g.vector.len(),
            "constraint": constraint,
        }),
    )?;
    let (coordinates, vector) = match (&g.states, constraint) {
        (Some(states), SectorConstraint::GaussLaw) => {
            let tree = build_spanning_tree(model.geometry()).context("spanning tree")?;
            (Coordinates::IndependentLinks, reduce(&tree, states, &g.vector))
        }
        _ => {
            let full = g.full_wavevector(h.num_spins()).ok_or_else(|| {
                CliError::Config("ground state is too large to store as a full wavevector".into())
            })?;
            (Coordinates::Spins, full)
        }
    };
    let num_vars = vector.len().trailing_zeros() as usize;
    dir.write_f64s("ground_state.bin", &vector)?;
    dir.write_json("ground_state.json", &BlobInfo::Wavevector { coordinates, num_vars })?;
    Ok(g.energy)
}

/// Sector amplitudes re-indexed by the independent links.
fn reduce(tree: &SpanningTreeBasis, states: &[u64], values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 1 << tree.num_independent()];
    for (&s, &v) in states.iter().zip(values) {
        out[tree.project_index(s) as usize] = v;
    }
    out
}

pub(crate) struct Floor {
    pub order: usize,
    pub energy: f64,
}

pub(crate) fn run_floors(config: &ExperimentConfig, dir: &mut RunDir, opts: &Options) -> Result<Vec<Floor>> {
    let model = config.model()?;
    let h = model.hamiltonian()?;
    let e0 = reference_energy(config, &h, model.constraint())?;
    let tree = if config.restricted { Some(build_spanning_tree(model.geometry()).context("spanning tree")?) } else { None };
    let solver = SolverOptions::energy_only();
    let mut floors = Vec::new();
    let mut w = dir.csv("floors.csv")?;
    w.write_record(["order", "dimension", "energy", "rel_error"])?;
    for &order in &config.orders {
        let (energy, dim) = match &tree {
            Some(t) => (
                ground_floor_restricted(&h, t, order, &solver).context(format!("restricted floor at order {order}"))?.energy,
                count_truncated(t.num_independent(), order),
            ),
            None => (
                ground_floor_correlator(&h, order, &solver).context(format!("floor at order {order}"))?.energy,
                count_truncated(h.num_spins(), order),
            ),
        };
        let rel = e0.map(|e| relative_error(energy, e).value);
        w.write_record([order.to_string(), dim.to_string(), energy.to_string(), rel.map_or(String::new(), |r| r.to_string())])?;
        floors.push(Floor { order, energy });
    }
    w.flush().map_err(io(dir.root().join("floors.csv")))?;
    dir.write_json("floors.json", &json!({ "reference_energy": e0, "restricted": config.restricted }))?;
    if opts.plot {
        let value = |e: f64| e0.map_or(e, |e0| relative_error(e, e0).value);
        let chart = Chart {
            title: "energy floors".into(),
            x_label: "maximal correlation order".into(),
            y_label: if e0.is_some() { "relative error" } else { "energy" }.into(),
            log_y: e0.is_some(),
            series: vec![Series {
                label: "floor".into(),
                points: floors.iter().map(|f| (f.order as f64, value(f.energy))).collect(),
            }],
            levels: Vec::new(),
        };
        dir.write_text("floors.svg", &chart.to_svg())?;
    }
    Ok(floors)
}

/// The wave function to transform: a stored blob or the exact ground state.
fn fourier_input(config: &ExperimentConfig) -> Result<Vec<f64>> {
    let Some(path) = &config.input else {
        let model = config.model()?;
        let h = model.hamiltonian()?;
        let g = ground_state_full(&h, model.constraint(), &SolverOptions::default()).context("exact diagonalization")?;
        return match (&g.states, model.constraint()) {
            (Some(states), SectorConstraint::GaussLaw) => {
                let tree = build_spanning_tree(model.geometry()).context("spanning tree")?;
                Ok(reduce(&tree, states, &g.vector))
            }
            _ => g
                .full_wavevector(h.num_spins())
                .ok_or_else(|| CliError::Config("ground state is too large to transform".into())),
        };
    };
    let sidecar = path.with_extension("json");
    let text = std::fs::read_to_string(&sidecar).map_err(io(&sidecar))?;
    let info: BlobInfo = serde_json::from_str(&text).map_err(|source| CliError::Json { path: sidecar.clone(), source })?;
    let values = read_f64s(path)?;
    match info {
        BlobInfo::Wavevector { num_vars, .. } => {
            if values.len() != 1 << num_vars {
                return Err(CliError::Config(format!("{} holds {} values, expected 2^{num_vars}", path.display(), values.len())));
            }
            Ok(values)
        }
        BlobInfo::Parameters { model, ansatz, seed, .. } => {
            let mut wf: Ansatz = ansatz.build(model.geometry(), seed)?;
            wf.set_params(&values).context("loading parameters")?;
            if basis_size(&model) > EXACT_SUM_LIMIT {
                return Err(CliError::Config("basis is too large to transform".into()));
            }
            let constraint = model.constraint();
            let basis = FullBasis::new(model.geometry(), constraint).context("enumerating the basis")?;
            let psi = basis.amplitudes(&wf);
            match constraint {
                SectorConstraint::GaussLaw => {
                    let tree = build_spanning_tree(model.geometry()).context("spanning tree")?;
                    Ok(reduce(&tree, basis.states(), &psi))
                }
                _ => {
                    let mut full = vec![0.0; 1 << model.geometry().num_spins()];
                    for (&s, &a) in basis.states().iter().zip(&psi) {
                        full[s as usize] = a;
                    }
                    Ok(full)
                }
            }
        }
    }
}

/// Coefficients above `1e-12` of the largest, largest magnitude first.
/// Magnitudes that agree to ten significant digits count as equal and list
/// the higher correlation order first.
pub fn ranked_coefficients(spectrum: &CorrelatorSpectrum) -> Vec<(u64, f64)> {
    let c = spectrum.coeffs();
    let top = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let level = |x: f64| (x.abs() / top * 1e10).round() as u64;
    let mut rows: Vec<(u64, f64)> =
        c.iter().enumerate().filter(|(_, x)| x.abs() > 1e-12 * top).map(|(m, &x)| (m as u64, x)).collect();
    rows.sort_by(|a, b| {
        level(b.1).cmp(&level(a.1)).then(b.0.count_ones().cmp(&a.0.count_ones())).then(a.0.cmp(&b.0))
    });
    rows
}

fn run_fourier(config: &ExperimentConfig, dir: &mut RunDir, opts: &Options) -> Result<()> {
    let mut psi = fourier_input(config)?;
    let norm = psi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(CliError::Config("input wave function is zero".into()));
    }
    psi.iter_mut().for_each(|x| *x /= norm);
    let spectrum = fourier_forward(&psi).context("Fourier transform")?;
    let rows = ranked_coefficients(&spectrum);
    let mut w = dir.csv("spectrum.csv")?;
    w.write_record(["mask", "degree", "coefficient"])?;
    for &(m, c) in &rows {
        w.write_record([m.to_string(), m.count_ones().to_string(), c.to_string()])?;
    }
    w.flush().map_err(io(dir.root().join("spectrum.csv")))?;
    let profile = spectrum.degree_profile();
    let mut w = dir.csv("degree_profile.csv")?;
    w.write_record(["degree", "weight"])?;
    for (k, x) in profile.weights.iter().enumerate() {
        w.write_record([k.to_string(), x.to_string()])?;
    }
    w.flush().map_err(io(dir.root().join("degree_profile.csv")))?;
    let (mask, coeff) = rows.first().copied().unwrap_or((0, 0.0));
    dir.write_json(
        "fourier.json",
        &json!({
            "num_vars": spectrum.num_spins(),
            "largest_mask": mask,
            "largest_degree": mask.count_ones(),
            "largest_coefficient": coeff,
            "total_weight": spectrum.total_weight(),
            "nonzero": rows.len(),
        }),
    )?;
    if opts.plot {
        let chart = Chart {
            title: "degree profile".into(),
            x_label: "correlation order".into(),
            y_label: "weight".into(),
            log_y: true,
            series: vec![Series {
                label: "weight".into(),
                points: profile.weights.iter().enumerate().map(|(k, &x)| (k as f64, x)).collect(),
            }],
            levels: Vec::new(),
        };
        dir.write_text("degree_profile.svg", &chart.to_svg())?;
    }
    Ok(())
}

fn run_sector(config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let model = config.model()?;
    let g = model.geometry();
    let constraint = model.constraint();
    let states = sector_indices(g, constraint).context("enumerating the sector")?;
    let mut report = json!({
        "constraint": constraint,
        "num_spins": g.num_spins(),
        "dimension": states.len(),
    });
    if g.kind == LatticeKind::SquareLinks {
        let tree = build_spanning_tree(g).context("spanning tree")?;
        let bijective = constraint != SectorConstraint::GaussLaw || {
            let mut images: Vec<u64> = states.iter().map(|&s| tree.project_index(s)).collect();
            let round_trip = states.iter().all(|&s| tree.reconstruct_index(tree.project_index(s)) == s);
            images.sort_unstable();
            images.dedup();
            round_trip && images.len() == states.len()
        };
        report["num_independent"] = json!(tree.num_independent());
        report["independent_links"] = json!(tree.independent);
        report["projection_bijective"] = json!(bijective);
        let mut w = dir.csv("links.csv")?;
        w.write_record(["link", "orientation", "x", "y", "role"])?;
        for y in 0..g.ly {
            for x in 0..g.lx {
                for (orientation, link) in
                    [("h", g.horizontal_link(x as isize, y as isize)), ("v", g.vertical_link(x as isize, y as isize))]
                {
                    let role = if tree.independent.contains(&link) { "independent" } else { "dependent" };
                    w.write_record([link.to_string(), orientation.into(), x.to_string(), y.to_string(), role.into()])?;
                }
            }
        }
        w.flush().map_err(io(dir.root().join("links.csv")))?;
    }
    dir.write_json("sector.json", &report)
}

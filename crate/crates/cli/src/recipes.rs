//! Config sets that regenerate each figure panel at desk scale.

use corrnqs::ansatz::{Activation, HeadMode};
use corrnqs::lattice::{Boundary, LatticeGeometry};
use corrnqs::vmc::SrConfig;
use serde_json::json;

use crate::config::{AnsatzConfig, ExperimentConfig, FigureName, ModelConfig, SamplerBlock, Task};
use crate::error::{io, CliError, Result};
use crate::manifest::RunDir;
use crate::tasks::{energy_chart, run_ed, run_floors, run_train, Options, Trained};

/// Iterations per training run unless the base config sets an sr block.
pub const DESK_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    /// Subdirectory and series name.
    pub label: String,
    pub task: Task,
    pub config: ExperimentConfig,
}

fn sites() -> LatticeGeometry {
    LatticeGeometry::square_sites(4, 4, Boundary::Periodic).expect("valid lattice")
}

fn links() -> LatticeGeometry {
    LatticeGeometry::square_links(4, 4).expect("valid lattice")
}

fn toric(hx: f64, stabilizers: bool) -> ModelConfig {
    ModelConfig::Toric { lattice: links(), hx, star: stabilizers, plaquette: stabilizers, gauss_law: true }
}

fn cqs(n_lay: usize, head: HeadMode) -> AnsatzConfig {
    AnsatzConfig::Cqs { n_lay, e_dim: None, p_size: 4, head, param_target: 20_000 }
}

fn ffnn(n_hidden: usize, activation: Activation, bias: bool) -> AnsatzConfig {
    AnsatzConfig::Ffnn { n_hidden, activation, bias }
}

/// Every entry of a figure; `base` supplies the seed and optional sampler
/// and sr overrides.
pub fn figure_recipes(name: FigureName, base: &ExperimentConfig) -> Vec<Recipe> {
    let sr = base.sr.clone().unwrap_or(SrConfig { iterations: DESK_ITERATIONS, ..SrConfig::default() });
    let sampler = base.sampler.clone().unwrap_or_default();
    let with = |model: &ModelConfig, ansatz: Option<AnsatzConfig>| ExperimentConfig {
        model: Some(model.clone()),
        ansatz,
        sampler: Some(sampler.clone()),
        sr: Some(sr.clone()),
        estimation: base.estimation,
        seed: base.seed,
        ..ExperimentConfig::empty()
    };
    let entry = |label: String, task: Task, config: ExperimentConfig| Recipe { label, task, config };
    let ed = |model: &ModelConfig| entry("ed".into(), Task::Ed, with(model, None));
    let train = |label: &str, model: &ModelConfig, ansatz: AnsatzConfig| {
        entry(label.into(), Task::Train, with(model, Some(ansatz)))
    };
    let orders = |model: &ModelConfig, orders: &[usize], restricted: bool| {
        let mut c = with(model, None);
        c.orders = orders.to_vec();
        c.restricted = restricted;
        entry("floors".into(), Task::EdCorr, c)
    };

    match name {
        FigureName::Fig1a => {
            let m = ModelConfig::Ising { lattice: sites() };
            let mut r = vec![ed(&m), orders(&m, &[1, 8, 11, 16], false)];
            r.extend([1, 8, 11, 16].map(|n| train(&format!("C{n}"), &m, cqs(n, HeadMode::All))));
            r
        }
        FigureName::Fig1b => {
            let m = toric(0.2, true);
            let mut r = vec![ed(&m)];
            r.extend([1, 2, 6, 32].map(|n| train(&format!("C{n}"), &m, cqs(n, HeadMode::All))));
            r
        }
        FigureName::Fig3 => {
            let m = toric(1.0, false);
            let mut r = vec![ed(&m), orders(&m, &[10, 12], true)];
            r.extend([2, 6, 10, 12].map(|n| train(&format!("C{n}"), &m, cqs(n, HeadMode::All))));
            r
        }
        FigureName::Fig4a => {
            let m = toric(0.2, true);
            vec![
                ed(&m),
                train("cosh", &m, ffnn(32, Activation::Cosh, false)),
                train("sinh", &m, ffnn(32, Activation::Sinh, false)),
                train("sigmoid", &m, ffnn(32, Activation::SigmoidCentered, false)),
                train("C2even", &m, cqs(2, HeadMode::EvenOnly)),
                train("C3odd", &m, cqs(3, HeadMode::OddOnly)),
                train("C1", &m, cqs(1, HeadMode::All)),
            ]
        }
        FigureName::Fig4b => {
            let m = ModelConfig::Tfim { lattice: sites(), hx: 1.0 };
            let mut relu = with(&m, Some(ffnn(1, Activation::Relu, true)));
            if base.sampler.is_none() {
                relu.sampler = Some(SamplerBlock { n_chains: 32, ..SamplerBlock::default() });
            }
            if base.sr.is_none() {
                relu.sr = Some(SrConfig { learning_rate: 0.05, iterations: 600, ..SrConfig::default() });
            }
            vec![
                ed(&m),
                entry("relu".into(), Task::Train, relu),
                train("C1", &m, cqs(1, HeadMode::All)),
                train("C16", &m, cqs(16, HeadMode::All)),
            ]
        }
    }
}

pub(crate) fn run_figure(config: &ExperimentConfig, dir: &mut RunDir, opts: &Options) -> Result<()> {
    let name = config.figure.ok_or_else(|| CliError::Config("figure needs a figure name".into()))?;
    let mut e0 = None;
    let mut floors = Vec::new();
    let mut runs: Vec<(String, Trained)> = Vec::new();
    for recipe in figure_recipes(name, config) {
        log::info!("figure entry {}", recipe.label);
        let mut sub = RunDir::acquire(&dir.root().join(&recipe.label))?;
        sub.write_json("config.json", &recipe.config)?;
        match recipe.task {
            Task::Ed => e0 = Some(run_ed(&recipe.config, &mut sub)?),
            Task::EdCorr => floors = run_floors(&recipe.config, &mut sub, opts)?,
            Task::Train => runs.push((recipe.label.clone(), run_train(&recipe.config, &mut sub, opts)?)),
            _ => unreachable!("recipes use ed, ed-corr and train only"),
        }
        let manifest = sub.finish(recipe.task.name(), recipe.config.hash())?;
        dir.adopt(&recipe.label, &manifest);
    }

    let rel = |e: f64| e0.map(|e0| corrnqs::exact::relative_error(e, e0).value);
    let mut w = dir.csv("figure.csv")?;
    w.write_record(["series", "iteration", "energy", "rel_error"])?;
    for (label, t) in &runs {
        for r in &t.log.records {
            let err = rel(r.energy).map_or(String::new(), |x| x.to_string());
            w.write_record([label.clone(), r.iteration.to_string(), r.energy.to_string(), err])?;
        }
    }
    w.flush().map_err(io(dir.root().join("figure.csv")))?;
    let finals: serde_json::Map<String, serde_json::Value> =
        runs.iter().map(|(label, t)| (label.clone(), json!(t.summary))).collect();
    let floor_rows: Vec<_> =
        floors.iter().map(|f| json!({ "order": f.order, "energy": f.energy, "rel_error": rel(f.energy) })).collect();
    dir.write_json("figure.json", &json!({ "reference_energy": e0, "runs": finals, "floors": floor_rows }))?;
    if opts.plot {
        let levels: Vec<(String, f64)> = floors.iter().map(|f| (format!("floor n={}", f.order), f.energy)).collect();
        let series = runs.iter().map(|(label, t)| (label.clone(), &t.log)).collect();
        let title = serde_json::to_value(name).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        dir.write_text("figure.svg", &energy_chart(&title, series, e0, &levels).to_svg())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(name: FigureName) -> Vec<String> {
        figure_recipes(name, &ExperimentConfig::empty()).into_iter().map(|r| r.label).collect()
    }

    #[test]
    fn legends() {
        assert_eq!(labels(FigureName::Fig1a), ["ed", "floors", "C1", "C8", "C11", "C16"]);
        assert_eq!(labels(FigureName::Fig1b), ["ed", "C1", "C2", "C6", "C32"]);
        assert_eq!(labels(FigureName::Fig4a), ["ed", "cosh", "sinh", "sigmoid", "C2even", "C3odd", "C1"]);
        assert_eq!(labels(FigureName::Fig4b), ["ed", "relu", "C1", "C16"]);
    }

    #[test]
    fn fig3_uses_restricted_floors() {
        let r = figure_recipes(FigureName::Fig3, &ExperimentConfig::empty());
        let floors = r.iter().find(|r| r.task == Task::EdCorr).unwrap();
        assert_eq!(floors.config.orders, [10, 12]);
        assert!(floors.config.restricted);
        assert!(matches!(floors.config.model, Some(ModelConfig::Toric { hx, star: false, plaquette: false, .. }) if hx == 1.0));
    }

    #[test]
    fn recipes_validate_and_follow_base() {
        let mut base = ExperimentConfig::empty();
        base.seed = 9;
        base.sr = Some(SrConfig { iterations: 3, ..SrConfig::default() });
        for name in [FigureName::Fig1a, FigureName::Fig1b, FigureName::Fig3, FigureName::Fig4a, FigureName::Fig4b] {
            for r in figure_recipes(name, &base) {
                r.config.validate(r.task).unwrap();
                assert_eq!(r.config.seed, 9);
                assert_eq!(r.config.sr.as_ref().unwrap().iterations, 3);
            }
        }
        let relu = figure_recipes(FigureName::Fig4b, &ExperimentConfig::empty()).remove(1);
        assert_eq!(relu.config.sampler.unwrap().n_chains, 32);
    }
}

//! One function per experiment, each producing a result table.

use anyhow::{bail, ensure, Context};
use serde_json::{json, Map, Value};

use qst_core::analysis::{
    distance_trend, ggm_curve, high_energy_scan, optimize_fm, sweep_r, unit_grid, HaarSpec, OptimizeOptions,
    ScanGrid, SweepSpec,
};
use qst_core::codec::{
    bare_kernel, bare_transfer_baseline, single_qubit_kernel, single_qubit_transfer, CodecOptions, QubitInput,
};
use qst_core::models::{check_couplings, couplings_for_lattice, find_critical_field};
use qst_core::transfer::{
    effective_kernel, effective_transfer, epsilon_error, haar_average, rr_kernel, rr_transfer, uniform_grid,
    Pipeline, RungInput,
};
use qst_core::{Boundary, SpinLattice};

use crate::config::{Config, Experiment};
use crate::output::{Cell, Table};

pub struct Outcome {
    pub table: Table,
    pub seed: Option<u64>,
    pub extra: Map<String, Value>,
    /// Set when the run completed but a check it performs did not hold.
    pub failure: Option<String>,
}

impl From<Table> for Outcome {
    fn from(table: Table) -> Self {
        Self { table, seed: None, extra: Map::new(), failure: None }
    }
}

fn axis_name(axis: qst_core::analysis::ScanAxis) -> String {
    serde_json::to_value(axis).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn codec_options(config: &Config, lattice: &SpinLattice) -> anyhow::Result<CodecOptions> {
    ensure!(config.transfer.sender == 1, "transfer.sender: the qubit protocols send from rung 1");
    Ok(CodecOptions::new(config.protocol(lattice)?)
        .with_sender_leg(config.protocol.sender_leg)
        .with_field(config.protocol.field))
}

fn qubit(config: &Config) -> anyhow::Result<QubitInput> {
    match config.input {
        RungInput::LowEnergy { a1, a2 } => QubitInput::from_angles(a1, a2).context("input"),
        other => bail!("input: qubit experiments take a low_energy (a1, a2) input, got {other:?}"),
    }
}

fn distances(config: &Config, lattice: &SpinLattice) -> Vec<usize> {
    if let Some(d) = &config.sweep.distances {
        return d.clone();
    }
    let max = match lattice.bc_leg() {
        Boundary::Open => lattice.rungs().saturating_sub(config.transfer.sender),
        Boundary::Periodic => lattice.rungs() - 1,
    };
    (1..=max).collect()
}

pub fn run(experiment: Experiment, config: &Config) -> anyhow::Result<Outcome> {
    if experiment == Experiment::GgmCurve {
        return ggm(config);
    }
    let lattice = config.lattice()?;
    let params = config.params(&lattice)?;
    let grid = uniform_grid(config.grid.t_max, config.grid.dt).context("grid")?;
    let sender = config.transfer.sender;
    let distance = config.distance(&lattice);
    let mode = config.transfer.projection;
    Ok(match experiment {
        Experiment::RrTransfer => {
            let rec = rr_transfer(&lattice, &params, &config.input, sender, distance, &grid)?;
            Table::series("f", &rec.t_grid, &rec.f_values).into()
        }
        Experiment::EffectiveTransfer => {
            let pair = find_critical_field(lattice.legs(), lattice.bc_rung())?;
            let couplings = couplings_for_lattice(&lattice, &params)?;
            let rec = effective_transfer(
                lattice.rungs(),
                &couplings,
                lattice.bc_leg(),
                &pair,
                &config.input,
                sender,
                distance,
                &grid,
                mode,
            )?;
            let mut extra = Map::new();
            extra.insert("couplings".into(), json!(couplings));
            Outcome { table: Table::series("f_eff", &rec.t_grid, &rec.f_values), seed: None, extra, failure: None }
        }
        Experiment::SingleQubit => {
            let opts = codec_options(config, &lattice)?;
            let rec = single_qubit_transfer(
                &lattice,
                &params,
                &qubit(config)?,
                distance,
                config.protocol.target_leg,
                &grid,
                opts,
            )?;
            Table::series("f_prime", &rec.t_grid, &rec.f_values).into()
        }
        Experiment::BareBaseline => {
            ensure!(sender == 1, "transfer.sender: the qubit protocols send from rung 1");
            let rec = bare_transfer_baseline(
                &lattice,
                &params,
                &qubit(config)?,
                config.protocol.sender_leg,
                distance,
                config.protocol.target_leg,
                &grid,
            )?;
            Table::series("f_bare", &rec.t_grid, &rec.f_values).into()
        }
        Experiment::HaarAverage => {
            let haar = config.haar.context("haar: section with `n` required")?;
            let seed = config.seed()?;
            let kernel = match haar.pipeline {
                Pipeline::RungToRung => rr_kernel(&lattice, &params, sender, distance, &grid)?,
                Pipeline::Effective => effective_kernel(
                    lattice.rungs(),
                    &couplings_for_lattice(&lattice, &params)?,
                    lattice.bc_leg(),
                    sender,
                    distance,
                    &grid,
                )?,
                Pipeline::SingleQubit => single_qubit_kernel(
                    &lattice,
                    &params,
                    codec_options(config, &lattice)?,
                    distance,
                    config.protocol.target_leg,
                    &grid,
                )?,
                Pipeline::BareBaseline => {
                    ensure!(sender == 1, "transfer.sender: the qubit protocols send from rung 1");
                    bare_kernel(&lattice, &params, config.protocol.sender_leg, distance, config.protocol.target_leg, &grid)?
                }
            };
            let avg = haar_average(&kernel, haar.n, seed)?;
            let mut extra = Map::new();
            extra.insert("max_mean_f".into(), json!(avg.max_mean));
            extra.insert("t_at_max".into(), json!(avg.t_at_max));
            extra.insert("samples".into(), json!(avg.samples));
            Outcome { table: Table::series("mean_f", &avg.t_grid, &avg.mean), seed: Some(seed), extra, failure: None }
        }
        Experiment::Epsilon => {
            let rs = match &config.sweep.distances {
                Some(d) => d.clone(),
                None => vec![distance],
            };
            let mut table = Table::new(&["r", "epsilon"]);
            for r in rs {
                let e = epsilon_error(&lattice, &params, &config.input, sender, r, &grid, mode)?;
                table.push(vec![r.into(), e.into()]);
            }
            table.into()
        }
        Experiment::SweepR => {
            let rs = distances(config, &lattice);
            let (haar, seed) = match config.haar {
                Some(h) => {
                    let seed = config.seed()?;
                    ensure!(h.pipeline == Pipeline::RungToRung, "haar.pipeline: sweeps average the rung_to_rung pipeline");
                    (Some(HaarSpec { n: h.n, seed }), Some(seed))
                }
                None => (None, None),
            };
            let spec = SweepSpec { input: (!config.sweep.skip_input).then_some(config.input), haar };
            let rows = sweep_r(&lattice, &params, &spec, sender, &rs, &grid)?;
            let options = OptimizeOptions::from(config.optimize);
            let mut table = Table::new(&["r", "f_m", "t_f_m", "mean_f_m", "t_mean_f_m", "opt_f_m"]);
            for row in &rows {
                let opt = if config.sweep.optimize {
                    Cell::Float(optimize_fm(&lattice, &params, &config.input, sender, row.r, &grid, &options)?.f_tilde)
                } else {
                    Cell::Empty
                };
                table.push(vec![
                    row.r.into(),
                    row.f_m.into(),
                    row.t_f_m.into(),
                    row.mean_f_m.into(),
                    row.t_mean_f_m.into(),
                    opt,
                ]);
            }
            let mut extra = Map::new();
            if rows.len() >= 2 && rows.iter().all(|r| r.f_m.is_some()) {
                if let Ok(rho) = distance_trend(&rows) {
                    extra.insert("spearman_f_m_vs_r".into(), json!(rho));
                }
            }
            Outcome { table, seed, extra, failure: None }
        }
        Experiment::Optimize => {
            let rs = match &config.sweep.distances {
                Some(d) => d.clone(),
                None => vec![distance],
            };
            let options = OptimizeOptions::from(config.optimize);
            let mut table =
                Table::new(&["r", "f_tilde", "t_at_max", "u", "v", "dw", "reference_f_m", "evaluations"]);
            for r in rs {
                let o = optimize_fm(&lattice, &params, &config.input, sender, r, &grid, &options)?;
                table.push(vec![
                    r.into(),
                    o.f_tilde.into(),
                    o.t_at_max.into(),
                    o.u.into(),
                    o.v.into(),
                    o.dw.into(),
                    o.reference_f_m.into(),
                    o.evaluations.into(),
                ]);
            }
            table.into()
        }
        Experiment::HighEnergyScan => {
            let scan = config.scan.as_ref().context("scan: section with `x` and `y` axes required")?;
            let x = ScanGrid { axis: scan.x.axis, values: scan.x.values().context("scan.x")? };
            let y = ScanGrid { axis: scan.y.axis, values: scan.y.values().context("scan.y")? };
            let points = high_energy_scan(&lattice, &params, &config.input, &x, &y, distance, &grid, mode)?;
            let (xn, yn) = (axis_name(x.axis), axis_name(y.axis));
            let mut table = Table::new(&[&xn, &yn, "D", "epsilon"]);
            for p in points {
                table.push(vec![p.x.into(), p.y.into(), p.d.into(), p.epsilon.into()]);
            }
            table.into()
        }
        Experiment::ValidateCouplings => {
            let mut table = Table::new(&[
                "N", "source", "jxy", "jzz", "h", "h_boundary", "end_field", "deviation",
            ]);
            let mut worst: f64 = 0.0;
            for n in [2, 3] {
                let lat = SpinLattice::new(n, lattice.legs(), lattice.bc_rung(), lattice.bc_leg())?;
                let check = check_couplings(&lat, &config.params(&lat)?)?;
                let c = check.closed_form;
                let f = check.fit.couplings;
                table.push(vec![
                    n.into(),
                    "closed_form".into(),
                    c.jxy.into(),
                    c.jzz.into(),
                    c.h.into(),
                    c.h_boundary.into(),
                    (c.h + c.h_boundary).into(),
                    Cell::Empty,
                ]);
                let (h, hb) = if check.fit.bulk_identifiable { (Cell::Float(f.h), Cell::Float(f.h_boundary)) } else { (Cell::Empty, Cell::Empty) };
                table.push(vec![
                    n.into(),
                    "oracle_fit".into(),
                    f.jxy.into(),
                    f.jzz.into(),
                    h,
                    hb,
                    check.fit.end_field.into(),
                    check.deviation.into(),
                ]);
                worst = worst.max(check.deviation);
            }
            let mut extra = Map::new();
            extra.insert("max_deviation".into(), json!(worst));
            extra.insert("tolerance".into(), json!(COUPLING_TOL));
            let failure = (worst > COUPLING_TOL)
                .then(|| format!("closed-form couplings deviate from the projection fit by {worst:.3e}"));
            Outcome { table, seed: None, extra, failure }
        }
        Experiment::GgmCurve => unreachable!("handled above"),
    })
}

pub const COUPLING_TOL: f64 = 1e-10;

fn ggm(config: &Config) -> anyhow::Result<Outcome> {
    let legs = config.ggm.legs.clone().unwrap_or_else(|| vec![config.lattice.l]);
    let grid = unit_grid(config.ggm.points).context("ggm.points")?;
    let mut table = Table::new(&["L", "bc_rung", "a1", "G"]);
    let bc = config.lattice.bc_rung;
    for l in legs {
        for p in ggm_curve(l, bc, &grid)? {
            table.push(vec![l.into(), bc.to_string().as_str().into(), p.a1.into(), p.g.into()]);
        }
    }
    Ok(table.into())
}

//! The four experiment commands. Each returns tables; writing them is left
//! to the caller.

use atom_diode::diode::{diode_scan, sweep_vmax_surface};
use atom_diode::dynamics::{master_equation_oracle, run_ensemble, DensityMatrix, OracleConfig, StepControl};
use atom_diode::physics::{cm_per_s, to_cm_per_s};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::table::{Cell, Provenance, ResultTable};

fn provenance(command: &str, cfg: &ExperimentConfig) -> Provenance {
    Provenance::new(command, &cfg.to_toml(), cfg.seed)
}

/// Diode quantities per scan velocity: reflection and transmission for
/// left incidence at `v` and right incidence (reported at `-v`), and the
/// failure functional.
pub fn cmd_scan(cfg: &ExperimentConfig) -> Result<ResultTable, CliError> {
    let scan = cfg.scan.as_ref().ok_or_else(|| CliError::Config("`scan`: section is missing".into()))?;
    let velocities: Vec<f64> = scan.velocities()?.into_iter().map(cm_per_s).collect();
    let spec = cfg.potential()?;
    let mut table = ResultTable::new(
        provenance("scan", cfg),
        &["v_cm_s", "R_sq", "T_sq", "R_sq_reverse", "T_sq_reverse", "failure"],
    );
    for row in diode_scan(&spec, cfg.units()?, &velocities, &cfg.solver()) {
        let row = row?;
        table.push(vec![
            to_cm_per_s(row.v).into(),
            row.left.reflection.into(),
            row.left.transmission.into(),
            row.right.reflection.into(),
            row.right.transmission.into(),
            row.failure.into(),
        ]);
    }
    Ok(table)
}

/// Operating-window edge over the configured `(Omega_hat, W_hat)` grid.
pub fn cmd_vmax(cfg: &ExperimentConfig) -> Result<ResultTable, CliError> {
    let v = cfg.vmax.as_ref().ok_or_else(|| CliError::Config("`vmax`: section is missing".into()))?;
    let search = cfg.window_search()?;
    let mut table = ResultTable::new(provenance("vmax", cfg), &["rabi_msi", "barrier_msi", "v_max_cm_s", "limiting"]);
    table.provenance.extra.push(("epsilon".into(), crate::table::format_number(v.epsilon)));
    if v.rabi_msi.is_empty() || v.barrier_msi.is_empty() {
        return Ok(table);
    }
    for point in sweep_vmax_surface(&v.rabi_msi, &v.barrier_msi, cfg.geometry(), &search)? {
        let p = point?;
        table.push(vec![
            p.rabi.into(),
            p.barrier.into(),
            p.v_max.map(to_cm_per_s).into(),
            p.limiting.as_str().into(),
        ]);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub table: ResultTable,
    /// Averaged final momentum density per initial velocity (cm/s), when
    /// requested.
    pub densities: Vec<(f64, ResultTable)>,
}

/// Quantum-jump ensembles, one per initial velocity, all from the master seed.
pub fn cmd_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleOutput, CliError> {
    let e = cfg.ensemble.as_ref().ok_or_else(|| CliError::Config("`ensemble`: section is missing".into()))?;
    let mut prov = provenance("ensemble", cfg);
    prov.extra.push(("trajectories".into(), e.trajectories.to_string()));
    let mut table = ResultTable::new(prov.clone(), &["v0_cm_s", "p_r", "error_bar", "mean_jumps", "failed"]);
    let mut densities = Vec::new();
    for &v0 in &e.v0_cm_s {
        let (scenario, control) = cfg.ensemble_scenario(v0)?;
        let prop = scenario.propagator(control)?;
        let wp = scenario.packet()?;
        let res = run_ensemble(&prop, &wp, e.trajectories, cfg.seed)?;
        table.push(vec![
            v0.into(),
            res.p_r.into(),
            res.error_bar.into(),
            res.mean_jumps.into(),
            res.failed().into(),
        ]);
        if e.density_dump {
            let mut p = prov.clone();
            p.extra.push(("v0_cm_s".into(), crate::table::format_number(v0)));
            let mut d = ResultTable::new(p, &["k_per_um", "v_cm_s", "density_um"]);
            let m = scenario.units.m_over_hbar;
            for (&k, &rho) in res.wavenumbers.iter().zip(&res.momentum_density) {
                d.push(vec![k.into(), to_cm_per_s(k / m).into(), rho.into()]);
            }
            densities.push((v0, d));
        }
    }
    Ok(EnsembleOutput { table, densities })
}

/// Channel populations from trajectories and from the density matrix at
/// the sample times; the last row also carries `p_r` from both.
pub fn cmd_oracle(cfg: &ExperimentConfig) -> Result<ResultTable, CliError> {
    let o = cfg.oracle.as_ref().ok_or_else(|| CliError::Config("`oracle`: section is missing".into()))?;
    let scenario = cfg.oracle_scenario()?;
    let wp = scenario.packet()?;
    let rho0 = DensityMatrix::pure(&wp)?;
    let mut control = StepControl::fixed(o.dt_us);
    control.samples = o.samples;
    let prop = scenario.propagator(control)?;
    let mcwf = run_ensemble(&prop, &wp, o.trajectories, cfg.seed)?;
    let oracle_cfg = OracleConfig {
        dt: o.dt_us,
        quadrature_nodes: o.quadrature_nodes,
        samples: o.samples,
    };
    let exact = master_equation_oracle(&scenario.spec, scenario.units, &scenario.params, &rho0, &oracle_cfg)?;

    let mut prov = provenance("oracle", cfg);
    prov.extra.push(("trajectories".into(), o.trajectories.to_string()));
    let mut table = ResultTable::new(
        prov,
        &[
            "t_us", "p1_mcwf", "p2_mcwf", "p3_mcwf", "p1_error", "p2_error", "p3_error", "p1_oracle", "p2_oracle",
            "p3_oracle", "p_r_mcwf", "p_r_error", "p_r_oracle",
        ],
    );
    let last = mcwf.samples.len().saturating_sub(1);
    for (i, (s, p)) in mcwf.samples.iter().zip(&exact.populations).enumerate() {
        let mut row: Vec<Cell> = vec![s.t.into()];
        row.extend(s.populations.iter().map(|&x| Cell::from(x)));
        row.extend(s.error.iter().map(|&x| Cell::from(x)));
        row.extend(p.iter().map(|&x| Cell::from(x)));
        if i == last {
            row.extend([mcwf.p_r.into(), mcwf.error_bar.into(), exact.rho.p_r().into()]);
        } else {
            row.extend([Cell::Empty, Cell::Empty, Cell::Empty]);
        }
        table.push(row);
    }
    Ok(table)
}

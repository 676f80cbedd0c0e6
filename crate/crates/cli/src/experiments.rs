//! The experiment families the driver can run.

use std::f64::consts::PI;
use std::sync::Arc;

use clap::ValueEnum;
use phonon_kinetics::collision::{Channel, Interaction};
use phonon_kinetics::invariants::{audit_invariant, fit_values, sample_merger_manifold, InvariantCandidate};
use phonon_kinetics::kinetic::{
    entropy, solve_homogeneous_with, solve_inhomogeneous_with, suggest_dt, InhomogeneousOptions, KineticTrajectory,
    SolveOptions, SpaceGrid, StepOptions, TransportScheme,
};
use phonon_kinetics::lattice::{run_microscopic_experiment, EnsembleSpec, InitialSpectrum, Potential};
use phonon_kinetics::{Kernel, PhaseSpace, Wigner};
use serde_json::{json, Value};

use crate::config::{Config, ConfigError};
use crate::output::{Artifacts, Cell, Check, Csv};
use crate::setup::{self, AtKey, InitialKind, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    #[value(alias = "DispersionReport")]
    DispersionReport,
    #[value(alias = "KinematicsScan")]
    KinematicsScan,
    #[value(alias = "MicroscopicRun")]
    MicroscopicRun,
    #[value(alias = "KineticRelaxation")]
    KineticRelaxation,
    #[value(alias = "InhomogeneousTransport")]
    InhomogeneousTransport,
    #[value(alias = "InvariantAudit")]
    InvariantAudit,
    #[value(alias = "MicroKineticCompare")]
    MicroKineticCompare,
}

impl Experiment {
    pub fn name(self) -> String {
        self.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }
}

/// Everything an experiment reads and writes.
pub struct Ctx<'a> {
    pub cfg: &'a Config,
    pub seed: u64,
    /// The seed came from the command line and overrides `ensemble.seed`.
    pub seed_from_cli: bool,
    pub out: Artifacts,
    pub checks: Vec<Check>,
    pub summary: Value,
}

impl Ctx<'_> {
    fn explicit_seed(&self) -> bool {
        self.seed_from_cli
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }
}

pub fn run(experiment: Experiment, ctx: &mut Ctx) -> Outcome<()> {
    match experiment {
        Experiment::DispersionReport => dispersion_report(ctx),
        Experiment::KinematicsScan => kinematics_scan(ctx),
        Experiment::MicroscopicRun => microscopic_run(ctx),
        Experiment::KineticRelaxation => kinetic_relaxation(ctx),
        Experiment::InhomogeneousTransport => inhomogeneous_transport(ctx),
        Experiment::InvariantAudit => invariant_audit(ctx),
        Experiment::MicroKineticCompare => micro_kinetic_compare(ctx),
    }
}

fn dispersion_report(ctx: &mut Ctx) -> Outcome<()> {
    let spec = setup::dispersion(ctx.cfg)?;
    let d = spec.dim();
    let grid = setup::grid(ctx.cfg, &spec, if d == 1 { 256 } else { 16 })?;
    ctx.cfg.check_unused()?;

    let header: Vec<String> = if d == 1 {
        vec!["k".into(), "omega".into(), "v".into()]
    } else {
        let mut h: Vec<String> = (1..=d).map(|i| format!("k{i}")).collect();
        h.push("omega".into());
        h.extend((1..=d).map(|i| format!("v{i}")));
        h
    };
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let (mut lo, mut hi, mut asym, mut zeros, mut singular) = (f64::INFINITY, 0.0f64, 0.0f64, 0usize, 0usize);
    for flat in 0..grid.len() {
        let k = grid.point(flat);
        let w = spec.eval_omega(&k).at("dispersion.kind")?;
        let minus: Vec<f64> = k.iter().map(|&x| if spec.is_torus() { (-x).rem_euclid(1.0) } else { -x }).collect();
        asym = asym.max((spec.omega(&minus) - w).abs());
        lo = lo.min(w);
        hi = hi.max(w);
        zeros += (w == 0.0) as usize;
        let v = match spec.group_velocity(&k) {
            Ok(v) => v,
            Err(_) => {
                singular += 1;
                vec![f64::NAN; d]
            }
        };
        let mut row: Vec<Cell> = k.iter().map(|&x| x.into()).collect();
        row.push(w.into());
        row.extend(v.into_iter().map(Cell::from));
        csv.row(row);
    }
    ctx.out.write_csv("dispersion.csv", &csv)?;

    let couplings = spec.lattice_couplings_1d().ok();
    ctx.summary = json!({
        "dispersion": spec,
        "grid_points": grid.len(),
        "omega_min": lo,
        "omega_max": hi,
        "zero_modes": zeros,
        "singular_points": singular,
        "max_asymmetry": asym,
        "couplings": couplings,
    });
    ctx.out.write_json("dispersion.json", &ctx.summary)?;
    let tol = 1e-12 * hi.max(1.0);
    ctx.check("omega_even", asym <= tol, format!("max |omega(k) - omega(-k)| = {asym:e}"));
    ctx.check(
        "omega_nonnegative",
        lo >= 0.0 && hi.is_finite(),
        format!("omega in [{lo:e}, {hi:e}]"),
    );
    Ok(())
}

fn kinematics_scan(ctx: &mut Ctx) -> Outcome<()> {
    let spec = setup::dispersion(ctx.cfg)?;
    if !spec.is_torus() {
        return Err(ConfigError::invalid("dispersion.kind", "kinematics scans need a lattice dispersion").into());
    }
    let samples = ctx.cfg.count_or("scan.samples", 1_000_000, 1)?;
    let pair_grid = if spec.dim() == 1 { ctx.cfg.count_or("scan.pair_grid", 32, 0)? } else { 0 };
    let tol = ctx.cfg.positive_or("collision.tol", 1e-12)?;
    let optical = ctx.cfg.raw("dispersion.kind").unwrap_or("optical") == "optical";
    ctx.cfg.check_unused()?;

    let report = spec.scan_merger_kinematics(samples, ctx.seed).at("scan.samples")?;
    ctx.out.write_json("scan.json", &report)?;

    let mut pair_roots = 0usize;
    if pair_grid > 0 {
        let mut csv = Csv::new(&["k1", "k2", "k3", "k4", "jacobian", "degenerate", "residual"]);
        for i in 0..pair_grid {
            for j in 0..pair_grid {
                let (k1, k2) = (i as f64 / pair_grid as f64, j as f64 / pair_grid as f64);
                for r in spec.solve_pair_kinematics(k1, k2, tol).at("collision.tol")? {
                    let k4 = (k1 + k2 - r.k3).rem_euclid(1.0);
                    csv.row(vec![
                        k1.into(),
                        k2.into(),
                        r.k3.into(),
                        k4.into(),
                        r.jacobian.into(),
                        r.degenerate.into(),
                        r.residual.into(),
                    ]);
                    pair_roots += 1;
                }
            }
        }
        ctx.out.write_csv("pair_roots.csv", &csv)?;
    }
    ctx.summary = json!({
        "min_residual": report.min_residual,
        "argmin": report.argmin,
        "samples": report.samples,
        "seed": report.seed,
        "pair_grid": pair_grid,
        "pair_roots": pair_roots,
    });
    if optical {
        ctx.check(
            "merger_forbidden",
            report.min_residual > 0.0,
            format!("min merger residual {:e} over {} samples", report.min_residual, report.samples),
        );
    }
    Ok(())
}

struct MicroSettings {
    ensemble: EnsembleSpec<f64>,
    potential: Potential,
    dt: f64,
}

fn micro_settings(cfg: &Config, l: usize, seed: u64, explicit_seed: bool) -> Outcome<MicroSettings> {
    let beta = setup::beta(cfg)?;
    let m = cfg.count_or("ensemble.M", 1000, 1)?;
    let configured: u64 = cfg.get_or("ensemble.seed", seed)?;
    let ens_seed = if explicit_seed { seed } else { configured };
    let ensemble = EnsembleSpec {
        beta,
        realizations: m,
        seed: ens_seed,
        l,
    };
    ensemble.validate().at("ensemble.M")?;
    Ok(MicroSettings {
        ensemble,
        potential: setup::potential(cfg)?,
        dt: cfg.positive_or("integrator.dt", 0.02)?,
    })
}

fn initial_spectrum(kind: InitialKind, w: &Wigner) -> InitialSpectrum<f64> {
    match kind {
        InitialKind::Equilibrium => InitialSpectrum::Gibbs,
        _ => InitialSpectrum::Custom(w.values().to_vec()),
    }
}

/// `sqrt(h sum stderr^2)`: the expected L2 size of pure sampling noise.
fn noise_norm(h: f64, stderr: &[f64]) -> f64 {
    (h * stderr.iter().map(|s| s * s).sum::<f64>()).sqrt()
}

fn microscopic_run(ctx: &mut Ctx) -> Outcome<()> {
    let cfg = ctx.cfg;
    let spec = setup::dispersion(cfg)?;
    setup::one_dimensional(&spec)?;
    let l = cfg.count_or("lattice.L", 256, 4)?;
    let lambda = cfg.nonnegative_or("lattice.lambda", 0.1)?;
    let s = micro_settings(cfg, l, ctx.seed, ctx.explicit_seed())?;
    let times = cfg.f64_list("snapshots")?.unwrap_or_else(|| vec![0.0, 10.0]);
    if times.is_empty() || times.iter().any(|t| *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(ConfigError::invalid("snapshots", "times must be nonnegative and nondecreasing").into());
    }
    let grid = Arc::new(phonon_kinetics::grid::MomentumGrid::torus(1, l).at("lattice.L")?);
    let (kind, w0) = setup::initial_wigner(cfg, grid.clone(), &spec, ctx.seed)?;
    cfg.check_unused()?;
    if !w0.excluded().is_empty() {
        return Err(ConfigError::invalid("dispersion.kind", "the chain needs omega > 0 at every mode").into());
    }

    let run = run_microscopic_experiment(
        &s.ensemble,
        &spec,
        lambda,
        s.potential,
        &initial_spectrum(kind, &w0),
        &times,
        s.dt,
    )
    .at("lattice.L")?;

    let mut csv = Csv::new(&["k", "W", "stderr", "t"]);
    let mut noise = Vec::new();
    for snap in &run.snapshots {
        for i in 0..l {
            csv.row(vec![
                grid.coord(i).into(),
                snap.state.values()[i].into(),
                snap.stderr[i].into(),
                snap.time.into(),
            ]);
        }
        noise.push(noise_norm(grid.weight(), &snap.stderr));
    }
    ctx.out.write_csv("spectrum.csv", &csv)?;
    let distance: Vec<f64> = run.snapshots.iter().map(|s| s.state.l2_distance(w0.values())).collect();
    ctx.summary = json!({
        "L": l,
        "lambda": lambda,
        "potential": s.potential,
        "beta": s.ensemble.beta,
        "M": s.ensemble.realizations,
        "ensemble_seed": s.ensemble.seed,
        "dt": s.dt,
        "snapshots": times,
        "mean_energy": run.mean_energy,
        "max_energy_drift": run.max_energy_drift,
        "distance_to_initial": distance,
        "noise_norm": noise,
    });
    ctx.out.write_json("run.json", &ctx.summary)?;
    Ok(())
}

struct KineticSettings {
    t_end: f64,
    dt: Option<f64>,
    clamp: bool,
    record_every: Option<usize>,
}

fn kinetic_settings(cfg: &Config) -> Outcome<KineticSettings> {
    let t_end = cfg.positive_or("kinetic.T", 10.0)?;
    let dt = match cfg.has("kinetic.dt") {
        true => Some(cfg.positive_or("kinetic.dt", 1.0)?),
        false => None,
    };
    let record_every = match cfg.has("kinetic.record_every") {
        true => Some(cfg.count_or("kinetic.record_every", 1, 1)?),
        false => None,
    };
    Ok(KineticSettings {
        t_end,
        dt,
        clamp: cfg.bool_or("kinetic.clamp", false)?,
        record_every,
    })
}

impl KineticSettings {
    /// Configured step, or a tenth of the fastest relaxation time of `w`.
    fn step(&self, kernel: &Kernel, w: &Wigner) -> Outcome<f64> {
        Ok(match self.dt {
            Some(dt) => dt,
            None => suggest_dt(kernel, w, 0.1, self.t_end)?.min(self.t_end),
        })
    }

    /// Keep about 200 records unless configured.
    fn every(&self, dt: f64) -> usize {
        self.record_every
            .unwrap_or_else(|| ((self.t_end / dt).ceil() / 200.0).ceil().max(1.0) as usize)
    }
}

fn active_values(w: &Wigner, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    (0..w.values().len()).filter(|&i| w.is_active(i)).map(|i| f(i, w.values()[i])).collect()
}

/// `(a, c, residual)` of the least-squares fit `1/W ~ a + c omega`.
fn fit_reciprocal(w: &Wigner, omega: &[f64]) -> Outcome<Value> {
    if w.values().iter().enumerate().any(|(i, &x)| w.is_active(i) && !(x > 0.0)) {
        return Ok(Value::Null);
    }
    let psi = active_values(w, |_, x| 1.0 / x);
    let om = active_values(w, |i, _| omega[i]);
    let fit = fit_values(&psi, &om)?;
    Ok(json!({ "a": fit.a, "c": fit.c, "residual": fit.residual }))
}

fn kinetic_relaxation(ctx: &mut Ctx) -> Outcome<()> {
    let cfg = ctx.cfg;
    let spec = setup::dispersion(cfg)?;
    let grid = setup::grid(cfg, &spec, 64)?;
    let ksetup = setup::kernel_setup(cfg, None)?;
    let (kind, w0) = setup::initial_wigner(cfg, grid.clone(), &spec, ctx.seed)?;
    let ks = kinetic_settings(cfg)?;
    let slack = cfg.nonnegative_or("kinetic.entropy_slack", 1e-9)?;
    cfg.check_unused()?;
    let kernel = setup::kernel(&spec, grid.clone(), ksetup)?;
    ctx.out.write_json("kernel.json", kernel.diagnostics())?;

    let dt = ks.step(&kernel, &w0)?;
    let opts = SolveOptions {
        step: StepOptions {
            clamp: ks.clamp,
            ..StepOptions::default()
        },
        record_every: ks.every(dt),
        entropy_slack: slack,
        conservation_tol: 1e-6,
    };
    let traj = solve_homogeneous_with(&kernel, &w0, ks.t_end, dt, &opts)?;
    write_homogeneous(&mut ctx.out, &traj)?;

    let last = traj.last();
    let scale = w0.values().iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let deviation = last
        .values()
        .iter()
        .zip(w0.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    let energy_drift = KineticTrajectory::relative_drift(&traj.energy);
    let number_drift = KineticTrajectory::relative_drift(&traj.number);
    ctx.summary = json!({
        "grid_points": grid.len(),
        "entries": kernel.entries().len(),
        "pair_only": kernel.is_pair_only(),
        "dt": dt,
        "t_end": ks.t_end,
        "records": traj.times.len(),
        "entropy_initial": traj.entropy.first(),
        "entropy_final": traj.entropy.last(),
        "entropy_production_final": traj.entropy_production.last(),
        "energy_drift": energy_drift,
        "number_drift": number_drift,
        "max_relative_change": deviation,
        "fixed_point_fit": fit_reciprocal(last, kernel.omega())?,
        "violations": traj.violations,
    });
    ctx.out.write_json("summary.json", &ctx.summary)?;
    let v = &traj.violations;
    ctx.check(
        "h_theorem_and_conservation",
        v.is_empty(),
        if v.is_empty() {
            format!("energy drift {energy_drift:e}, number drift {number_drift:e}")
        } else {
            v.join("; ")
        },
    );
    if kind.is_equilibrium() {
        ctx.check(
            "equilibrium_is_stationary",
            deviation <= 1e-8,
            format!("max |W(t) - W0| / max W0 = {deviation:e}"),
        );
    }
    Ok(())
}

fn write_homogeneous(out: &mut Artifacts, traj: &KineticTrajectory<f64>) -> Outcome<()> {
    let mut t_csv = Csv::new(&["t", "S", "energy", "number"]);
    let mut w_csv = Csv::new(&["t", "k", "W"]);
    for (n, &t) in traj.times.iter().enumerate() {
        t_csv.row(vec![t.into(), traj.entropy[n].into(), traj.energy[n].into(), traj.number[n].into()]);
        let st = &traj.states[n];
        for (i, &w) in st.values().iter().enumerate() {
            w_csv.row(vec![t.into(), st.grid().coord(i).into(), w.into()]);
        }
    }
    out.write_csv("trajectory.csv", &t_csv)?;
    out.write_csv("wigner_t.csv", &w_csv)?;
    Ok(())
}

/// `(number, energy)` integrated over phase space.
fn phase_space_totals(state: &PhaseSpace, omega: &[f64]) -> (f64, f64) {
    let nk = omega.len();
    let h = state.grid().weight() * state.space().spacing();
    let (mut n, mut e) = (0.0, 0.0);
    for (idx, &w) in state.values().iter().enumerate() {
        let i = idx % nk;
        if state.excluded().binary_search(&i).is_err() {
            n += w;
            e += omega[i] * w;
        }
    }
    (n * h, e * h)
}

fn inhomogeneous_transport(ctx: &mut Ctx) -> Outcome<()> {
    let cfg = ctx.cfg;
    let spec = setup::dispersion(cfg)?;
    let grid = setup::grid(cfg, &spec, 32)?;
    let ksetup = setup::kernel_setup(cfg, None)?;
    let (_, w0) = setup::initial_wigner(cfg, grid.clone(), &spec, ctx.seed)?;
    let ks = kinetic_settings(cfg)?;
    let extent = cfg.positive_or("space.R", 1.0)?;
    let nr = cfg.count_or("space.Nr", 32, 2)?;
    let amp = cfg.f64_or("space.amplitude", 0.5)?;
    if amp.abs() >= 1.0 {
        return Err(ConfigError::invalid("space.amplitude", format!("must satisfy |amplitude| < 1, got {amp}")).into());
    }
    let mode = cfg.count_or("space.mode", 1, 0)? as f64;
    let scheme = match cfg.choice("space.scheme", &["linear", "spectral"], "linear")? {
        "linear" => TransportScheme::SemiLagrangianLinear,
        _ => TransportScheme::Spectral,
    };
    cfg.check_unused()?;
    let kernel = setup::kernel(&spec, grid.clone(), ksetup)?;
    ctx.out.write_json("kernel.json", kernel.diagnostics())?;

    let space = SpaceGrid::new(extent, nr).at("space.Nr")?;
    let nk = grid.len();
    let mut values = Vec::with_capacity(nr * nk);
    for ir in 0..nr {
        let f = 1.0 + amp * (2.0 * PI * mode * space.coord(ir) / extent).cos();
        values.extend(w0.values().iter().map(|&w| w * f));
    }
    let state0 = PhaseSpace::with_exclusions(space, grid.clone(), values, w0.excluded().to_vec()).at("space.Nr")?;
    let dt = ks.step(&kernel, &w0)?;
    let opts = InhomogeneousOptions {
        scheme,
        step: StepOptions {
            clamp: ks.clamp,
            ..StepOptions::default()
        },
        record_every: ks.every(dt),
    };
    let traj = solve_inhomogeneous_with(&kernel, &state0, ks.t_end, dt, &opts)?;

    let omega = kernel.omega();
    let mut phase = Csv::new(&["t", "r", "k", "W"]);
    let mut totals = Csv::new(&["t", "energy", "number", "S"]);
    let (mut energies, mut numbers) = (Vec::new(), Vec::new());
    for (n, &t) in traj.times.iter().enumerate() {
        let st = &traj.states[n];
        for ir in 0..nr {
            for ik in 0..nk {
                phase.row(vec![t.into(), space.coord(ir).into(), grid.coord(ik).into(), st.get(ir, ik).into()]);
            }
        }
        let (num, en) = phase_space_totals(st, omega);
        let mut s = 0.0;
        for ir in 0..nr {
            s += entropy(&st.cell(ir)?).value * space.spacing();
        }
        totals.row(vec![t.into(), en.into(), num.into(), s.into()]);
        energies.push(en);
        numbers.push(num);
    }
    ctx.out.write_csv("phase_t.csv", &phase)?;
    ctx.out.write_csv("totals.csv", &totals)?;

    let energy_drift = KineticTrajectory::relative_drift(&energies);
    let number_drift = KineticTrajectory::relative_drift(&numbers);
    let last = traj.last();
    let uniform = PhaseSpace::uniform(space, &last.cell(0)?)?;
    let mut spatial_mean = vec![0.0; nk];
    for ir in 0..nr {
        for (ik, m) in spatial_mean.iter_mut().enumerate() {
            *m += last.get(ir, ik) / nr as f64;
        }
    }
    let mean_state = PhaseSpace::uniform(space, &w0.with_values(spatial_mean)?)?;
    ctx.summary = json!({
        "scheme": scheme,
        "Nr": nr,
        "R": extent,
        "grid_points": nk,
        "entries": kernel.entries().len(),
        "dt": dt,
        "t_end": ks.t_end,
        "records": traj.times.len(),
        "energy_drift": energy_drift,
        "number_drift": number_drift,
        "spatial_inhomogeneity_initial": state0.l2_distance(&PhaseSpace::uniform(space, &state0.cell(0)?)?),
        "spatial_inhomogeneity_final": last.l2_distance(&mean_state),
        "first_cell_distance_to_uniform": last.l2_distance(&uniform),
    });
    ctx.out.write_json("summary.json", &ctx.summary)?;
    ctx.check("energy_conserved", energy_drift <= 1e-6, format!("relative energy drift {energy_drift:e}"));
    if kernel.is_pair_only() {
        ctx.check("number_conserved", number_drift <= 1e-6, format!("relative number drift {number_drift:e}"));
    }
    Ok(())
}

fn invariant_audit(ctx: &mut Ctx) -> Outcome<()> {
    const KNOWN: [&str; 5] = ["constant", "omega", "omega_squared", "sine", "relaxed"];
    let cfg = ctx.cfg;
    let spec = setup::dispersion(cfg)?;
    let grid = setup::grid(cfg, &spec, 64)?;
    let ksetup = setup::kernel_setup(cfg, None)?;
    let tol = ksetup.options.tol;
    let names = cfg
        .word_list("audit.candidates")
        .unwrap_or_else(|| KNOWN.iter().map(|s| s.to_string()).collect());
    if let Some(bad) = names.iter().find(|n| !KNOWN.contains(&n.as_str())) {
        return Err(ConfigError::invalid(
            "audit.candidates",
            format!("unknown candidate `{bad}`; expected some of {}", KNOWN.join(", ")),
        )
        .into());
    }
    let relaxed = names.iter().any(|n| n == "relaxed");
    let (w0, ks) = if relaxed {
        let (_, w0) = setup::initial_wigner(cfg, grid.clone(), &spec, ctx.seed)?;
        (Some(w0), Some(kinetic_settings(cfg)?))
    } else {
        (None, None)
    };
    let lines = cfg.count_or("audit.merger_lines", 1000, 1)?;
    cfg.check_unused()?;
    let kernel = setup::kernel(&spec, grid.clone(), ksetup)?;
    let samples = sample_merger_manifold(&spec, grid.n(), lines, ctx.seed, tol).at("audit.merger_lines")?;
    let has_pairs = kernel.entries().iter().any(|e| e.channel == Channel::Pair);

    let mut audits = Vec::new();
    let mut csv = Csv::new(&["candidate", "a", "c", "residual", "max_pair_residual", "max_merger_residual"]);
    for name in &names {
        let psi = match name.as_str() {
            "constant" => InvariantCandidate::constant(1.0),
            "omega" => InvariantCandidate::omega(),
            "omega_squared" => InvariantCandidate::omega_squared(),
            "sine" => InvariantCandidate::sine(),
            _ => {
                let (w0, ks) = (w0.as_ref().expect("read above"), ks.as_ref().expect("read above"));
                let dt = ks.step(&kernel, w0)?;
                let opts = SolveOptions {
                    record_every: usize::MAX,
                    ..SolveOptions::default()
                };
                let traj = solve_homogeneous_with(&kernel, w0, ks.t_end, dt, &opts)?;
                InvariantCandidate::reciprocal_of(traj.last())?
            }
        };
        let a = audit_invariant(&psi, &kernel, &samples)?;
        csv.row(vec![
            name.as_str().into(),
            a.a.into(),
            a.c.into(),
            a.residual.into(),
            a.max_pair_residual.unwrap_or(f64::NAN).into(),
            a.max_merger_residual.unwrap_or(f64::NAN).into(),
        ]);
        match name.as_str() {
            "omega" => {
                let pr = a.max_pair_residual.unwrap_or(0.0);
                let mr = a.max_merger_residual.unwrap_or(0.0);
                ctx.check(
                    "omega_is_invariant",
                    pr <= 1e-9 && mr <= 1e-9,
                    format!("pair residual {pr:e}, merger residual {mr:e}"),
                );
            }
            "constant" if has_pairs => {
                let pr = a.max_pair_residual.unwrap_or(0.0);
                ctx.check("constant_is_pair_invariant", pr <= 1e-9, format!("pair residual {pr:e}"));
            }
            "relaxed" => ctx.check(
                "relaxed_state_is_affine",
                a.residual <= 1e-3,
                format!("1/W fit residual {:e} (a = {}, c = {})", a.residual, a.a, a.c),
            ),
            _ => {}
        }
        audits.push(a);
    }
    ctx.out.write_csv("residuals.csv", &csv)?;
    ctx.out.write_json("audit.json", &audits)?;
    ctx.summary = json!({
        "entries": kernel.entries().len(),
        "pair_entries": kernel.diagnostics().pair_entries,
        "merger_entries": kernel.diagnostics().merger_entries,
        "merger_samples": samples.len(),
        "audits": audits,
    });
    Ok(())
}

/// Advance `w` by `span` of kinetic time.
fn advance(kernel: &Kernel, w: &Wigner, span: f64) -> Outcome<Wigner> {
    if span <= 0.0 || kernel.is_empty() {
        return Ok(w.clone());
    }
    let dt = suggest_dt(kernel, w, 0.1, span)?.min(span);
    let opts = SolveOptions {
        record_every: usize::MAX,
        ..SolveOptions::default()
    };
    Ok(solve_homogeneous_with(kernel, w, span, dt, &opts)?.last().clone())
}

struct Calibration {
    rate_scale: f64,
    identifiable: bool,
    distance: f64,
    noise: f64,
}

/// Fit `s` so that the unit-rate kinetic solution at `s t_cal` best matches
/// `target`. Uses `W_s(t) = W_1(s t)`: a log-spaced sweep brackets the
/// minimum along one trajectory and golden-section search refines it.
fn fit_rate_scale(kernel: &Kernel, w0: &Wigner, target: &[f64], t_cal: f64, noise: f64, range: (f64, f64)) -> Outcome<Calibration> {
    let (s_min, s_max) = range;
    let n = ((s_max / s_min).log10() * 10.0).ceil().max(2.0) as usize;
    let scales: Vec<f64> = (0..=n).map(|j| s_min * (s_max / s_min).powf(j as f64 / n as f64)).collect();
    let mut states = Vec::with_capacity(scales.len());
    let mut dist = Vec::with_capacity(scales.len());
    let mut w = w0.clone();
    let mut tau = 0.0;
    for &s in &scales {
        let next = advance(kernel, &w, s * t_cal - tau)?;
        let moved = next.l2_distance(w.values());
        w = next;
        tau = s * t_cal;
        dist.push(w.l2_distance(target));
        states.push((tau, w.clone()));
        // relaxed: later points cannot change the distance
        if states.len() > 2 && moved <= 1e-12 * w.l2_norm() {
            break;
        }
    }
    let (j, &d_best) = dist
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least two scales");
    let d_far = dist.iter().fold(0.0f64, |m, &d| m.max(d));
    let spread = d_far.max(w0.l2_distance(target)) - d_best;
    if spread <= noise {
        return Ok(Calibration {
            rate_scale: 1.0,
            identifiable: false,
            distance: d_best,
            noise,
        });
    }
    let (base_tau, base) = if j == 0 { (0.0, w0.clone()) } else { states[j - 1].clone() };
    let lo = if j == 0 { 0.0 } else { scales[j - 1] };
    let hi = scales[(j + 1).min(states.len() - 1)];
    let eval = |s: f64| -> Outcome<f64> { Ok(advance(kernel, &base, s * t_cal - base_tau)?.l2_distance(target)) };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (eval(x1)?, eval(x2)?);
    for _ in 0..40 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = eval(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = eval(x2)?;
        }
    }
    let (s, d) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let (s, d) = if d <= d_best { (s, d) } else { (scales[j], d_best) };
    if !(s > 0.0) {
        return Err(phonon_kinetics::Error::UndefinedResidual("calibrated rate scale is not positive".into()).into());
    }
    Ok(Calibration {
        rate_scale: s,
        identifiable: true,
        distance: d,
        noise,
    })
}

fn micro_kinetic_compare(ctx: &mut Ctx) -> Outcome<()> {
    let cfg = ctx.cfg;
    let spec = setup::dispersion(cfg)?;
    setup::one_dimensional(&spec)?;
    let l = cfg.count_or("lattice.L", 64, 4)?;
    if let Some(n) = cfg.get::<usize>("grid.N")? {
        if n != l {
            return Err(ConfigError::invalid("grid.N", format!("must equal lattice.L = {l} for a mode-by-mode comparison")).into());
        }
    }
    let s = micro_settings(cfg, l, ctx.seed, ctx.explicit_seed())?;
    let interaction = match s.potential {
        Potential::OnsiteQuartic => Interaction::OnsiteQuartic,
        Potential::FpuAlphaCubicBond => Interaction::CubicBond,
        Potential::FpuBetaQuarticBond => {
            return Err(ConfigError::invalid("lattice.potential", "no kinetic kernel for the quartic bond potential").into())
        }
    };
    let mut ksetup = setup::kernel_setup(cfg, Some(interaction))?;
    let lambdas = cfg.f64_list("compare.lambdas")?.unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    if lambdas.is_empty() || lambdas.iter().any(|x| *x < 0.0) {
        return Err(ConfigError::invalid("compare.lambdas", "need a nonempty list of values >= 0").into());
    }
    let positive: Vec<f64> = lambdas.iter().copied().filter(|x| *x > 0.0).collect();
    let t_kin = cfg.positive_or("compare.t_kin", 1.0)?;
    let fixed_scale = match cfg.has("compare.rate_scale") {
        true => Some(cfg.positive_or("compare.rate_scale", 1.0)?),
        false => None,
    };
    let (cal_lambda, cal_t, range) = match fixed_scale {
        Some(_) => (0.0, 0.0, (0.0, 0.0)),
        None => {
            let default_lambda = positive.iter().copied().fold(f64::INFINITY, f64::min);
            let cal_lambda = cfg.positive_or("compare.calibration_lambda", if default_lambda.is_finite() { default_lambda } else { 0.1 })?;
            let cal_t = cfg.positive_or("compare.calibration_t", t_kin)?;
            let s_min = cfg.positive_or("compare.rate_scale_min", 1e-2)?;
            let s_max = cfg.positive_or("compare.rate_scale_max", 1e2)?;
            if !(s_max > s_min) {
                return Err(ConfigError::invalid("compare.rate_scale_max", "must exceed compare.rate_scale_min").into());
            }
            (cal_lambda, cal_t, (s_min, s_max))
        }
    };
    let grid = Arc::new(phonon_kinetics::grid::MomentumGrid::torus(1, l).at("lattice.L")?);
    let (kind, w0) = setup::initial_wigner(cfg, grid.clone(), &spec, ctx.seed)?;
    cfg.check_unused()?;
    if !w0.excluded().is_empty() {
        return Err(ConfigError::invalid("dispersion.kind", "the chain needs omega > 0 at every mode").into());
    }
    ksetup.options.rate_scale = 1.0;
    let unit_kernel = setup::kernel(&spec, grid.clone(), ksetup)?;
    let initial = initial_spectrum(kind, &w0);
    let h = grid.weight();
    let micro = |lambda: f64, t: f64, seed: u64| {
        let ens = EnsembleSpec { seed, ..s.ensemble };
        run_microscopic_experiment(&ens, &spec, lambda, s.potential, &initial, &[t], s.dt)
    };

    let calibration = match fixed_scale {
        Some(v) => Calibration {
            rate_scale: v,
            identifiable: true,
            distance: f64::NAN,
            noise: f64::NAN,
        },
        None => {
            eprintln!("calibrating rate_scale at lambda = {cal_lambda}, t = {cal_t}");
            let run = micro(cal_lambda, cal_t / cal_lambda, s.ensemble.seed.wrapping_add(1))?;
            let snap = &run.snapshots[0];
            let noise = noise_norm(h, &snap.stderr);
            fit_rate_scale(&unit_kernel, &w0, snap.state.values(), cal_t, noise, range)?
        }
    };
    let kernel = unit_kernel.with_rate_scale(calibration.rate_scale)?;
    let w_kin = advance(&kernel, &w0, t_kin)?;
    let kin_norm = w_kin.l2_norm();

    let mut rows = Csv::new(&["lambda", "t_micro", "distance", "noise", "relative_distance"]);
    let mut spectra = Csv::new(&["lambda", "k", "W_micro", "stderr", "W_kinetic"]);
    let mut records = Vec::new();
    for &lambda in &lambdas {
        // lambda = 0 is harmonic: the spectrum is static and compared with W0
        let (t_micro, reference) = if lambda > 0.0 { (t_kin / lambda, &w_kin) } else { (t_kin, &w0) };
        eprintln!("microscopic run at lambda = {lambda}, t = {t_micro}");
        let run = micro(lambda, t_micro, s.ensemble.seed)?;
        let snap = &run.snapshots[0];
        let d = snap.state.l2_distance(reference.values());
        let noise = noise_norm(h, &snap.stderr);
        rows.row(vec![lambda.into(), t_micro.into(), d.into(), noise.into(), (d / kin_norm).into()]);
        for i in 0..l {
            spectra.row(vec![
                lambda.into(),
                grid.coord(i).into(),
                snap.state.values()[i].into(),
                snap.stderr[i].into(),
                reference.values()[i].into(),
            ]);
        }
        records.push((lambda, t_micro, d, noise, run.max_energy_drift));
    }
    ctx.out.write_csv("compare.csv", &rows)?;
    ctx.out.write_csv("spectra.csv", &spectra)?;

    // distances ordered by decreasing lambda must not grow beyond the noise
    let mut trend: Vec<&(f64, f64, f64, f64, f64)> = records.iter().filter(|r| r.0 > 0.0).collect();
    trend.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut trend_ok = true;
    let mut steps = Vec::new();
    for p in trend.windows(2) {
        let allowed = p[0].2 + 2.0 * (p[0].3.powi(2) + p[1].3.powi(2)).sqrt();
        trend_ok &= p[1].2 <= allowed;
        steps.push(format!("{}: {:.3e} -> {}: {:.3e}", p[0].0, p[0].2, p[1].0, p[1].2));
    }
    let within: Vec<bool> = records.iter().map(|r| r.2 <= 3.0 * r.3).collect();
    ctx.summary = json!({
        "rate_scale": calibration.rate_scale,
        "calibration": {
            "fitted": fixed_scale.is_none(),
            "lambda": cal_lambda,
            "t": cal_t,
            "identifiable": calibration.identifiable,
            "distance": calibration.distance,
            "noise": calibration.noise,
        },
        "t_kin": t_kin,
        "L": l,
        "M": s.ensemble.realizations,
        "kinetic_norm": kin_norm,
        "kinetic_change": w_kin.l2_distance(w0.values()),
        "distances": records.iter().map(|r| json!({
            "lambda": r.0,
            "t_micro": r.1,
            "distance": r.2,
            "noise": r.3,
            "within_noise": r.2 <= 3.0 * r.3,
            "max_energy_drift": r.4,
        })).collect::<Vec<_>>(),
        "trend_decreasing": trend_ok,
    });
    ctx.out.write_json("compare.json", &ctx.summary)?;
    if trend.len() >= 2 {
        ctx.check("distance_trend", trend_ok, steps.join(", "));
    }
    if kind.is_equilibrium() {
        ctx.check(
            "equilibrium_within_noise",
            within.iter().all(|&b| b),
            format!("{}/{} distances within 3 noise norms", within.iter().filter(|&&b| b).count(), within.len()),
        );
    }
    Ok(())
}

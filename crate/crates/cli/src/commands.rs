use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smoothlab::evolve::{commutator_identity_residual, propagate};
use smoothlab::grid::{sobolev_norm, Field, Grid, GridSpec, SnapshotHeader};
use smoothlab::operators::{assemble_q_r, commutant_b, CutoffSpec};
use smoothlab::oscillator::{eig_anharmonic_auto, CONVERGENCE_TOL};
use smoothlab::resolvent::{dyadic_resolvent_scan, symbol_lower_bound_scan, BlockScanConfig, HamiltonianSymbol, Region, ScanConfig};
use smoothlab::smoothing::{coherent_state, main_theorem_sweep, smoothing_functional, splitting_diagnostics, SweepConfig, SweepResult, Width};
use smoothlab::weyl::{audit_symbol_class, commutator_residual_block, hermiticity_defect, quantize, InteriorSubspace};

use crate::config::Config;
use crate::manifest::Check;
use crate::{CliError, Run};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Band-limited random data with a Gaussian envelope in `x`.
    Random {
        #[serde(default = "default_frac")]
        frac: f64,
        /// Highest angular offset; defaults to `N_θ/4`.
        #[serde(default)]
        q_max: Option<i64>,
        /// Envelope width; defaults to `L/8`.
        #[serde(default)]
        sigma: Option<f64>,
    },
    Coherent {
        eta0: i64,
        #[serde(default)]
        width: Width,
    },
}

fn default_frac() -> f64 {
    0.2
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Random { frac: default_frac(), q_max: None, sigma: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateExperiment {
    #[serde(default)]
    pub initial: InitialData,
    /// Write every n-th sample under `trajectory/`; 0 disables snapshots.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default = "default_identity_tol")]
    pub identity_tol: f64,
    /// Allowed `‖⟨D_θ⟩u₂‖ − ‖D_x u₂‖`, relative to `max_t ‖u‖_{H¹}`.
    #[serde(default = "default_u2_tol")]
    pub u2_tol: f64,
}

fn default_snapshot_every() -> usize {
    10
}
fn default_identity_tol() -> f64 {
    1e-5
}
fn default_u2_tol() -> f64 {
    1e-12
}

#[derive(Serialize)]
struct SampleRow {
    t: f64,
    norm_drift: f64,
    boundary_mass: f64,
    main_integrand: f64,
    poscom_integrand: f64,
}

#[derive(Serialize)]
struct SnapshotIndex {
    #[serde(flatten)]
    header: SnapshotHeader,
    samples: Vec<SnapshotEntry>,
}

#[derive(Serialize)]
struct SnapshotEntry {
    t: f64,
    file: String,
}

pub fn simulate(run: &mut Run, c: &mut Config) -> Result<(), CliError> {
    let exp: SimulateExperiment = c.experiment()?;
    let surface = c.surface.build()?;
    let grid = c.grid()?.build()?;
    let evolve = c.evolve()?.clone();
    let m = surface.spec().m;
    let u0 = match exp.initial {
        InitialData::Random { frac, q_max, sigma } => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            let q_max = q_max.unwrap_or((grid.ntheta() / 4) as i64);
            Field::random_localized(&grid, &mut rng, frac, q_max, sigma.unwrap_or(grid.l() / 8.0))
        }
        InitialData::Coherent { eta0, width } => coherent_state(&grid, eta0, m, width),
    };
    let q = assemble_q_r(&surface, &grid)?.q_sym;
    let traj = propagate(&q, &u0, &evolve)?;
    let ls = smoothing_functional(&traj, m);
    let n0 = u0.norm();

    let rows: Vec<SampleRow> = (0..traj.times.len())
        .map(|j| SampleRow {
            t: traj.times[j],
            norm_drift: traj.drift[j],
            boundary_mass: traj.boundary_mass[j],
            main_integrand: ls.main_integrand[j],
            poscom_integrand: ls.poscom_integrand[j],
        })
        .collect();
    run.write_csv("results.csv", &rows)?;
    if exp.snapshot_every > 0 {
        let mut samples = Vec::new();
        for (j, u) in traj.samples.iter().enumerate().step_by(exp.snapshot_every) {
            let file = format!("u_{j:05}.bin");
            let mut buf = Vec::new();
            u.write_le(&mut buf)?;
            run.write_bytes(&format!("trajectory/{file}"), &buf)?;
            samples.push(SnapshotEntry { t: traj.times[j], file });
        }
        run.write_json("trajectory/index.json", &SnapshotIndex { header: u0.snapshot_header(), samples })?;
    }

    let t = evolve.t_final.max(1.0);
    let drift = traj.drift.iter().fold(0.0f64, |a, d| a.max(d.abs())) / n0 / t;
    run.check(Check::at_most("norm_drift_per_unit_time", drift, evolve.drift_tol));
    let bm = traj.boundary_mass.iter().cloned().fold(0.0, f64::max);
    run.check(Check::at_most("boundary_mass", bm, evolve.boundary_tol));
    if evolve.absorber.is_none() {
        let id = commutator_identity_residual(&q, &commutant_b(&grid), &traj);
        run.check(Check::at_most("commutator_identity_residual", id.residual, exp.identity_tol));
        run.record("identity", id);
    }
    let diag = splitting_diagnostics(&surface, &grid, &traj)?;
    run.check(Check::at_most("u2_multiplier_slack", diag.u2_bound_resid / diag.h1_scale, exp.u2_tol));
    run.record("splitting", diag);
    run.record("ls_main", ls.ls_main);
    run.record("ls_poscom", ls.ls_poscom);
    run.record("h_half_sq", sobolev_norm(&u0, 0.5));
    run.record("substeps", traj.substeps);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepExperiment {
    pub eta0s: Vec<i64>,
    pub r: f64,
    /// Second exponent whose ratio must grow across the sweep.
    #[serde(default)]
    pub r_alt: Option<f64>,
    #[serde(default)]
    pub width: Width,
    #[serde(default = "default_fit_skip")]
    pub fit_skip: usize,
    #[serde(default)]
    pub band: Option<f64>,
    /// Repeat the sweep on this grid and compare the positive-commutator ratios.
    #[serde(default)]
    pub refine: Option<GridSpec>,
    #[serde(default = "default_spread_tol")]
    pub spread_tol: f64,
    #[serde(default = "default_spread_tol")]
    pub poscom_spread_tol: f64,
    #[serde(default = "default_growth_min")]
    pub growth_min: f64,
    #[serde(default = "default_refine_tol")]
    pub refine_tol: f64,
}

fn default_fit_skip() -> usize {
    2
}
fn default_spread_tol() -> f64 {
    3.0
}
fn default_growth_min() -> f64 {
    2.0
}
fn default_refine_tol() -> f64 {
    0.05
}

#[derive(Serialize)]
struct SweepRow {
    eta0: i64,
    ls_main: f64,
    ls_poscom: f64,
    hr: f64,
    h_half: f64,
    ratio: f64,
    poscom_ratio: f64,
    ratio_alt: Option<f64>,
    poscom_ratio_refined: Option<f64>,
    max_drift: f64,
    max_boundary_mass: f64,
    valid: bool,
    slope: Option<f64>,
}

/// `ratio(last)/ratio(first)` over the valid points.
pub fn ratio_growth(res: &SweepResult) -> f64 {
    let v: Vec<f64> = res.valid_points().map(|p| p.ratio).collect();
    match (v.first(), v.last()) {
        (Some(a), Some(b)) if v.len() >= 2 => b / a,
        _ => f64::NAN,
    }
}

/// Largest relative change of the positive-commutator ratio between two sweeps.
pub fn poscom_change(a: &SweepResult, b: &SweepResult) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| if p.valid && q.valid { (q.poscom_ratio - p.poscom_ratio).abs() / p.poscom_ratio } else { f64::NAN })
        .fold(0.0, |acc, d| if d.is_nan() || acc.is_nan() { f64::NAN } else { acc.max(d) })
}

pub fn sweep(run: &mut Run, c: &mut Config) -> Result<(), CliError> {
    let exp: SweepExperiment = c.experiment()?;
    let surface = c.surface.build()?;
    let cfg = SweepConfig {
        grid: c.grid()?.clone(),
        eta0s: exp.eta0s.clone(),
        r: exp.r,
        width: exp.width,
        fit_skip: exp.fit_skip,
        band: exp.band,
        evolve: c.evolve()?.clone(),
    };
    let res = main_theorem_sweep(&surface, &cfg)?;
    let alt = exp.r_alt.map(|r| res.with_r(r)).transpose()?;
    let refined = match &exp.refine {
        Some(g) => Some(main_theorem_sweep(&surface, &SweepConfig { grid: g.clone(), ..cfg.clone() })?),
        None => None,
    };
    let rows: Vec<SweepRow> = res
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| SweepRow {
            eta0: p.eta0,
            ls_main: p.ls_main,
            ls_poscom: p.ls_poscom,
            hr: p.hr,
            h_half: p.h_half,
            ratio: p.ratio,
            poscom_ratio: p.poscom_ratio,
            ratio_alt: alt.as_ref().map(|a| a.points[i].ratio),
            poscom_ratio_refined: refined.as_ref().map(|a| a.points[i].poscom_ratio),
            max_drift: p.max_drift,
            max_boundary_mass: p.max_boundary_mass,
            valid: p.valid,
            slope: res.slope,
        })
        .collect();
    run.write_csv("results.csv", &rows)?;

    let invalid = res.points.iter().filter(|p| !p.valid).count();
    run.check(Check::at_most("invalid_points", invalid as f64, 0.0));
    run.check(Check::at_most("ratio_spread", res.ratio_spread(), exp.spread_tol));
    run.check(Check::at_most("poscom_spread", res.poscom_spread(), exp.poscom_spread_tol));
    if let Some(a) = &alt {
        run.check(Check::at_least("ratio_alt_growth", ratio_growth(a), exp.growth_min));
    }
    if let Some(r) = &refined {
        run.check(Check::at_most("poscom_refinement_change", poscom_change(&res, r), exp.refine_tol));
    }
    run.record("slope", res.slope);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventExperiment {
    /// Symbol scan; its seed is taken from the run seed.
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub blocks: Option<BlockScanConfig>,
    /// Cutoffs for the block scan; defaults to the `cutoffs` section.
    #[serde(default)]
    pub block_cutoffs: Option<CutoffSpec>,
}

#[derive(Serialize)]
struct BlockCsvRow {
    k: u32,
    eta_lo: i64,
    eta_hi: i64,
    dim: usize,
    c_est: f64,
    argmin_tau: f64,
    rayleigh_min: f64,
    rayleigh_max: f64,
    weight_floor: f64,
    q_min: f64,
    continuity_excess: f64,
}

#[derive(Serialize)]
struct CurveRow {
    k: u32,
    tau: f64,
    c: f64,
}

pub fn resolvent(run: &mut Run, c: &mut Config) -> Result<(), CliError> {
    let mut exp: ResolventExperiment = c.experiment()?;
    if let Some(s) = exp.scan.as_mut() {
        s.seed = c.seed;
    }
    c.experiment = serde_json::to_value(&exp).expect("experiment serializes");
    if exp.scan.is_none() && exp.blocks.is_none() {
        return Err(CliError::Config("experiment needs at least one of scan, blocks".into()));
    }
    let surface = c.surface.build()?;
    let cut = c.cutoffs()?;
    if let Some(scan) = &exp.scan {
        let h = HamiltonianSymbol::new(&surface, &cut)?;
        let reports = symbol_lower_bound_scan(&h, scan)?;
        run.write_json("symbol_scan.json", &reports)?;
        let d2 = 10.0 * cut.delta * cut.delta;
        for r in &reports {
            let tag = match r.region {
                Region::Case1 => "case1",
                Region::Case2 => "case2",
            };
            run.check(Check::at_least(&format!("{tag}_min"), r.min, r.c_min));
            if r.region == Region::Case1 {
                run.check(Check::at_most("case1_min_upper", r.min, 1.0 + d2 + r.s_band));
            }
            run.check(Check::at_most(&format!("{tag}_doubling_change"), r.doubling_change, scan.stable_tol));
        }
    }
    if let Some(blocks) = &exp.blocks {
        let bcut = exp.block_cutoffs.unwrap_or(cut);
        bcut.validate()?;
        let rows = dyadic_resolvent_scan(&surface, &bcut, blocks)?;
        let table: Vec<BlockCsvRow> = rows
            .iter()
            .map(|b| {
                let r = &b.report;
                BlockCsvRow {
                    k: b.k,
                    eta_lo: b.eta_lo,
                    eta_hi: b.eta_hi,
                    dim: r.dim,
                    c_est: r.c_est,
                    argmin_tau: r.argmin_tau,
                    rayleigh_min: r.rayleigh_min,
                    rayleigh_max: r.rayleigh_max,
                    weight_floor: r.weight_floor,
                    q_min: r.q_min,
                    continuity_excess: r.continuity_excess,
                }
            })
            .collect();
        run.write_csv("results.csv", &table)?;
        let curve: Vec<CurveRow> = rows
            .iter()
            .flat_map(|b| b.report.taus.iter().zip(&b.report.c).map(move |(&tau, &c)| CurveRow { k: b.k, tau, c }))
            .collect();
        run.write_csv("curve.csv", &curve)?;
        for b in &rows {
            run.check(Check::above(&format!("c_est_k{}", b.k), b.report.c_est, 0.0));
            run.check(Check::at_most(&format!("continuity_excess_k{}", b.k), b.report.continuity_excess, 0.0));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OscRow {
    m: u32,
    eta: f64,
    j: usize,
    lambda: f64,
    ratio_to_scaling: f64,
    refinement_change: f64,
}

pub fn oscillator(run: &mut Run, m: u32, etas: &[f64], k: usize, print: bool) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut worst_change = 0.0f64;
    for &eta in etas {
        let sp = eig_anharmonic_auto(m, eta, k)?;
        worst_change = worst_change.max(sp.refinement_change);
        for r in sp.rows() {
            if print {
                println!("m={m} eta={eta} j={} lambda={:.12}", r.j, r.lambda);
            }
            rows.push(OscRow { m, eta, j: r.j, lambda: r.lambda, ratio_to_scaling: r.ratio_to_scaling, refinement_change: sp.refinement_change });
        }
    }
    run.write_csv("results.csv", &rows)?;
    run.check(Check::at_most("refinement_change", worst_change, CONVERGENCE_TOL));
    let ground: Vec<&OscRow> = rows.iter().filter(|r| r.j == 0).collect();
    let lambda0_min = ground.iter().map(|r| r.lambda).fold(f64::INFINITY, f64::min);
    run.check(Check::above("lambda0_min", lambda0_min, 0.0));
    if ground.len() >= 2 {
        let (lo, hi) = ground.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.ratio_to_scaling), hi.max(r.ratio_to_scaling)));
        run.check(Check::at_most("scaling_ratio_spread", hi / lo - 1.0, 1e-6));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymcheckExperiment {
    /// Lower ends `H` of the blocks `η ∈ [H, 2H]`.
    #[serde(default = "default_blocks")]
    pub blocks: Vec<i64>,
    #[serde(default = "default_hermiticity_tol")]
    pub hermiticity_tol: f64,
    #[serde(default = "default_audit_orders")]
    pub audit_orders: usize,
}

fn default_blocks() -> Vec<i64> {
    vec![8, 16, 32]
}
fn default_hermiticity_tol() -> f64 {
    1e-12
}
fn default_audit_orders() -> usize {
    2
}

#[derive(Serialize)]
struct BlockResidualRow {
    h: i64,
    resid_1: f64,
    resid_poisson: f64,
    commutator_norm: f64,
    poisson_norm: f64,
    relative: f64,
}

pub fn symcheck(run: &mut Run, c: &mut Config) -> Result<(), CliError> {
    let exp: SymcheckExperiment = c.experiment()?;
    if exp.blocks.len() < 2 || exp.blocks.iter().any(|&h| h <= 0) {
        return Err(CliError::Config("symcheck needs at least two positive blocks".into()));
    }
    let surface = c.surface.build()?;
    let cut = c.cutoffs()?;
    let gs = c.grid()?;
    let grid = gs.build()?;
    let h = HamiltonianSymbol::new(&surface, &cut)?;
    let (a, q) = (h.a_symbol(), h.q_symbol());

    let mut defect = 0.0f64;
    for s in [&a, &q] {
        let op = quantize(&**s, &grid)?;
        let d = op.dense().expect("quantize realizes densely");
        let scale = d.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        defect = defect.max(hermiticity_defect(d) / scale);
    }
    run.check(Check::at_most("hermiticity_defect", defect, exp.hermiticity_tol));

    let audit = audit_symbol_class(&*a, 0.0, cut.eps, exp.audit_orders)?;
    run.check(Check::at_least("symbol_class_audit", if audit.passed { 1.0 } else { 0.0 }, 1.0));
    run.record("audit", &audit);

    let line = if a.theta_independent() && q.theta_independent() { Grid::with_carrier(gs.l, gs.nx, 1, 0)? } else { grid.clone() };
    let res = exp
        .blocks
        .iter()
        .map(|&hh| commutator_residual_block(a.clone(), q.clone(), &line, hh, InteriorSubspace::default()))
        .collect::<smoothlab::Result<Vec<_>>>()?;
    if let Some((_, hh)) = res.iter().zip(&exp.blocks).find(|(r, _)| r.poisson_norm == 0.0) {
        return Err(CliError::Config(format!("block H={hh}: the Poisson bracket vanishes there (frequency floor M={})", cut.m)));
    }
    let rows: Vec<BlockResidualRow> = res
        .iter()
        .zip(&exp.blocks)
        .map(|(r, &hh)| BlockResidualRow {
            h: hh,
            resid_1: r.resid_1,
            resid_poisson: r.resid_poisson,
            commutator_norm: r.commutator_norm,
            poisson_norm: r.poisson_norm,
            relative: r.relative(),
        })
        .collect();
    run.write_csv("results.csv", &rows)?;
    for w in rows.windows(2) {
        run.check(Check::below(&format!("poisson_decay_H{}", w[1].h), w[1].relative / w[0].relative, 1.0));
    }
    Ok(())
}

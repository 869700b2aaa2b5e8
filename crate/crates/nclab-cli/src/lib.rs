//! Run configuration and the six report-producing commands.

use std::collections::BTreeMap;
use std::time::Instant;

use nclab::basis::BasisTruncation;
use nclab::gauge::{
    chain_report, commutator_probe, convergence_sweep, local_compactness_probe, structure_report, tail_report,
    ChainConfig, CommutatorConfig, CompactnessConfig, ConvergenceConfig, SweepRow, TailConfig,
};
use nclab::kinematics::{
    build_kinematics, dirac, ground_state_check, hermitian_spectrum, isospectrality_check, landau_deviation,
    lowest_clusters, square_identity_residual,
};
use nclab::moyal::{moyal_suite, MoyalSuiteConfig};
use nclab::twisted::{twisted_suite, TwistedSuiteConfig};
use nclab::{Check, ParameterSet, Report};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Spectrum,
    Converge,
    Algebra,
    Darboux,
    Commutators,
    Localcompact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub level: usize,
    /// number of lowest distinct eigenvalue clusters compared with +-sqrt(j)
    pub clusters: usize,
    pub tolerance: f64,
    /// second presentation (r, s) of the same sector
    pub iso_rs: [f64; 2],
    pub iso_level: usize,
    pub iso_clusters: usize,
    pub ccr_level: usize,
    pub ccr_margin: usize,
    /// (r, s) at which the separable ground-state Gaussian exists
    pub ground_rs: [f64; 2],
    pub ground_level: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            level: 40,
            clusters: 11,
            tolerance: 1e-6,
            iso_rs: [0.5, 1.0],
            iso_level: 20,
            iso_clusters: 7,
            ccr_level: 20,
            ccr_margin: 2,
            ground_rs: [0.5, 1.0],
            ground_level: 30,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub sweep: ConvergenceConfig,
    pub chain: ChainConfig,
    pub tails: TailConfig,
    pub structure: StructureConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    pub level: usize,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self { level: 16 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgebraConfig {
    pub twisted: TwistedSuiteConfig,
    pub moyal: MoyalSuiteConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarbouxConfig {
    pub trials: usize,
}

impl Default for DarbouxConfig {
    fn default() -> Self {
        Self { trials: 100 }
    }
}

/// The single JSON document read by `--config`. Every field has a default,
/// so `{}` is a valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParameterSet,
    pub seed: u64,
    /// wall-clock timings make reports non-reproducible, so they are opt-in
    pub record_timings: bool,
    pub spectrum: SpectrumConfig,
    pub converge: ConvergeConfig,
    pub algebra: AlgebraConfig,
    pub darboux: DarbouxConfig,
    pub commutators: CommutatorConfig,
    pub localcompact: CompactnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ParameterSet::canonical(),
            seed: 0,
            record_timings: false,
            spectrum: SpectrumConfig::default(),
            converge: ConvergeConfig::default(),
            algebra: AlgebraConfig::default(),
            darboux: DarbouxConfig::default(),
            commutators: CommutatorConfig::default(),
            localcompact: CompactnessConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// A finished command: the report plus the rows of its CSV table.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub table: Table,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    fn checks(rep: &Report) -> Self {
        Self {
            header: ["check", "measured", "tolerance", "passed"].map(String::from).to_vec(),
            rows: rep
                .checks
                .iter()
                .map(|c| vec![c.name.clone(), fmt(c.measured), fmt(c.tolerance), c.passed.to_string()])
                .collect(),
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, key: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    timings.insert(key.to_string(), t.elapsed().as_secs_f64());
    out
}

pub fn run(cmd: Command, cfg: &RunConfig) -> nclab::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut timings = BTreeMap::new();
    let p = &cfg.params;
    let (mut report, table) = match cmd {
        Command::Spectrum => {
            let (rep, eig) = timed(&mut timings, "spectrum", || spectrum(p, &cfg.spectrum))?;
            let table = Table {
                header: vec!["index".into(), "eigenvalue".into()],
                rows: eig.iter().enumerate().map(|(i, v)| vec![i.to_string(), fmt(*v)]).collect(),
            };
            (rep, table)
        }
        Command::Converge => {
            let c = &cfg.converge;
            let (mut rep, rows) = timed(&mut timings, "sweep", || convergence_sweep(p, &c.sweep))?;
            rep.absorb("chain", timed(&mut timings, "chain", || chain_report(p, &c.chain))?);
            rep.absorb("tails", timed(&mut timings, "tails", || tail_report(p, &c.tails))?);
            rep.absorb(
                "structure",
                timed(&mut timings, "structure", || structure_report(p, c.structure.level, &mut rng))?,
            );
            (rep, sweep_table(&rows))
        }
        Command::Algebra => {
            let mut rep = Report::new("algebra");
            rep.absorb("twisted", timed(&mut timings, "twisted", || twisted_suite(p, &cfg.algebra.twisted, &mut rng))?);
            rep.absorb("moyal", timed(&mut timings, "moyal", || moyal_suite(p, &cfg.algebra.moyal, &mut rng))?);
            let t = Table::checks(&rep);
            (rep, t)
        }
        Command::Darboux => {
            let mut rep = timed(&mut timings, "darboux", || nclab::darboux::darboux_suite(p, cfg.darboux.trials, &mut rng))?;
            rep.absorb("admissible", nclab::darboux::validate_admissible(p));
            let t = Table::checks(&rep);
            (rep, t)
        }
        Command::Commutators => {
            let rep = timed(&mut timings, "commutators", || commutator_probe(p, &cfg.commutators))?;
            let t = Table::checks(&rep);
            (rep, t)
        }
        Command::Localcompact => {
            let rep = timed(&mut timings, "localcompact", || local_compactness_probe(p, &cfg.localcompact))?;
            let t = Table::checks(&rep);
            (rep, t)
        }
    };
    report.command = serde_json::to_value(cmd).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    report.config = serde_json::to_value(cfg).unwrap_or_default();
    if cfg.record_timings {
        report.timings = Some(timings);
    }
    Ok(Outcome { report, table })
}

fn sweep_table(rows: &[SweepRow]) -> Table {
    Table {
        header: ["R", "err_resolvent", "err_direct"].map(String::from).to_vec(),
        rows: rows.iter().map(|r| vec![r.radius.to_string(), fmt(r.err_resolvent), fmt(r.err_direct)]).collect(),
    }
}

/// Dirac spectrum, isospectrality, CCR suite and ground state.
pub fn spectrum(p: &ParameterSet, cfg: &SpectrumConfig) -> nclab::Result<(Report, Vec<f64>)> {
    p.validate()?;
    let trunc = BasisTruncation::new(cfg.level);
    let eig = hermitian_spectrum(&dirac(p, trunc)?);
    let dev = landau_deviation(&eig, cfg.clusters);
    let mut rep = Report::new("spectrum");
    rep.put("level", cfg.level)
        .put("eigenvalues", &eig)
        .put("lowest_clusters", lowest_clusters(&eig, cfg.clusters))
        .put_tol("landau_deviation", dev, cfg.tolerance);
    rep.check(Check::at_most("landau_spectrum", dev, cfg.tolerance));

    let other = p.with_rs(cfg.iso_rs[0], cfg.iso_rs[1]);
    rep.absorb("isospectral", isospectrality_check(p, &other, BasisTruncation::new(cfg.iso_level), cfg.iso_clusters)?);

    let kin = build_kinematics(p, BasisTruncation::new(cfg.ccr_level))?;
    for (name, r) in kin.ccr_residuals(cfg.ccr_margin) {
        rep.check(Check::at_most(format!("ccr {name}"), r, 1e-10));
    }
    rep.check(Check::at_most(
        "square_identity",
        square_identity_residual(p, BasisTruncation::new(cfg.ccr_level), cfg.ccr_margin)?,
        1e-10,
    ));

    let g = p.with_rs(cfg.ground_rs[0], cfg.ground_rs[1]);
    let gs = ground_state_check(&g, BasisTruncation::new(cfg.ground_level))?;
    rep.put("ground_state", &gs)
        .check(Check::at_least("ground_overlap", gs.overlap, 1.0 - 1e-8))
        .check(Check::at_most("ground_annihilation", gs.annihilation_norm, 1e-6));
    Ok((rep, eig))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let t = sweep_table(&[SweepRow { radius: 2.0, err_resolvent: 1e-3, err_direct: 0.5 }]);
        assert_eq!(t.to_csv(), "R,err_resolvent,err_direct\n2,1e-3,5e-1\n");
        let mut r = Report::new("x");
        r.check(Check::at_most("a", 0.25, 1.0));
        assert_eq!(Table::checks(&r).to_csv(), "check,measured,tolerance,passed\na,2.5e-1,1e0,true\n");
    }

    #[test]
    fn command_names() {
        assert_eq!(serde_json::to_value(Command::Localcompact).unwrap(), "localcompact");
    }
}

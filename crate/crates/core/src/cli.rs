//! Batch front-end: field generation, fine and multiscale solves, and
//! convergence studies. Every output is a plain data file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::assemble::{assemble_fine, FineSystem, SourceTerm};
use crate::error::{Error, Result};
use crate::field::{generate_channels, generate_inclusions, load_raster, raster_string, PermField};
use crate::grid::{build_grids, GridPair};
use crate::msbasis::{coarse_operators, EigenCut, SpectralLibrary};
use crate::pdas::{pdas_solve, HybridSolution, HybridSystem, PdasOptions};
use crate::verify::{
    complementarity_report, errors, study_with_library, write_study_table, ErrorReport,
};

pub const DEFAULT_N_INCLUSIONS: usize = 64;
pub const DEFAULT_INCLUSION_CHANNELS: usize = 8;
pub const DEFAULT_N_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldKind {
    Inclusions,
    Channels,
    Constant,
    Raster,
}

impl FieldKind {
    fn parse(s: &str) -> Option<Self> {
        <Self as ValueEnum>::from_str(s, true).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub seed: u64,
    pub contrast: f64,
    pub n_inclusions: usize,
    pub n_channels: Option<usize>,
    pub raster: Option<PathBuf>,
}

impl FieldSpec {
    pub fn build(&self, g: &GridPair) -> Result<PermField> {
        match self.kind {
            FieldKind::Inclusions => generate_inclusions(
                g,
                self.seed,
                self.contrast,
                self.n_inclusions,
                self.n_channels.unwrap_or(DEFAULT_INCLUSION_CHANNELS),
            ),
            FieldKind::Channels => generate_channels(
                g,
                self.seed,
                self.contrast,
                self.n_channels.unwrap_or(DEFAULT_N_CHANNELS),
            ),
            FieldKind::Constant => PermField::constant(g, 1.0),
            FieldKind::Raster => {
                let path = self
                    .raster
                    .as_ref()
                    .ok_or_else(|| Error::Config("field kind 'raster' needs a raster path".into()))?;
                load_raster(path, g)
            }
        }
    }
}

/// Validated experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub nc: usize,
    pub nf: usize,
    pub field: FieldSpec,
    pub source: SourceTerm,
    pub l: usize,
    pub l_range: Vec<usize>,
    pub pdas: PdasOptions,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nc: 16,
            nf: 16,
            field: FieldSpec {
                kind: FieldKind::Inclusions,
                seed: 7,
                contrast: 1e4,
                n_inclusions: DEFAULT_N_INCLUSIONS,
                n_channels: None,
                raster: None,
            },
            source: SourceTerm::SinSin,
            l: 5,
            l_range: (1..=5).collect(),
            pdas: PdasOptions::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Parses `1..5`, `1..=5`, `3` or `1,2,4`. An empty range is an error.
pub fn parse_l_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid basis-count range {s:?}"));
    let s = s.trim();
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let range: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        (parse(a)?..=parse(b)?).collect()
    } else if s.is_empty() {
        Vec::new()
    } else {
        s.split(',').map(parse).collect::<Result<_>>()?
    };
    if range.is_empty() {
        return Err(Error::Config(format!("basis-count range {s:?} is empty")));
    }
    if range.contains(&0) {
        return Err(Error::Config("basis counts must be >= 1".into()));
    }
    Ok(range)
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            msg: format!("line {}: expected key = value", k + 1),
        })?;
        map.insert(key.trim().replace('_', "-"), value.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ExperimentConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "nc" => self.nc = parse_value(key, value)?,
            "nf" => self.nf = parse_value(key, value)?,
            "kind" | "field-kind" => {
                self.field.kind = FieldKind::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown field kind {value:?}")))?
            }
            "seed" => self.field.seed = parse_value(key, value)?,
            "contrast" => self.field.contrast = parse_value(key, value)?,
            "n-inclusions" => self.field.n_inclusions = parse_value(key, value)?,
            "n-channels" => self.field.n_channels = Some(parse_value(key, value)?),
            "raster" => {
                self.field.raster = Some(PathBuf::from(value));
                self.field.kind = FieldKind::Raster;
            }
            "source" => self.source = parse_value(key, value)?,
            "l" => self.l = parse_value(key, value)?,
            "l-range" => self.l_range = parse_l_range(value)?,
            "c" => self.pdas.c = parse_value(key, value)?,
            "tol" => self.pdas.tol = parse_value(key, value)?,
            "maxiter" => self.pdas.maxiter = parse_value(key, value)?,
            "out" | "out-dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc == 0 || self.nf == 0 {
            return Err(Error::Config("nc and nf must be >= 1".into()));
        }
        if !(self.field.contrast.is_finite() && self.field.contrast >= 1.0) {
            return Err(Error::Config("contrast must be a finite value >= 1".into()));
        }
        if self.l == 0 {
            return Err(Error::Config("l must be >= 1".into()));
        }
        if self.l_range.is_empty() {
            return Err(Error::Config("basis-count range is empty".into()));
        }
        if !(self.pdas.c > 0.0 && self.pdas.c.is_finite()) {
            return Err(Error::Config("c must be positive".into()));
        }
        if !(self.pdas.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.pdas.maxiter == 0 {
            return Err(Error::Config("maxiter must be >= 1".into()));
        }
        if self.field.kind == FieldKind::Raster && self.field.raster.is_none() {
            return Err(Error::Config("field kind 'raster' needs a raster path".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridPair> {
        build_grids(self.nc, self.nf)
    }

    /// Key/value description written next to every output set.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let f = &self.field;
        writeln!(s, "nc = {}", self.nc).unwrap();
        writeln!(s, "nf = {}", self.nf).unwrap();
        writeln!(s, "kind = {}", kind_name(f.kind)).unwrap();
        writeln!(s, "seed = {}", f.seed).unwrap();
        writeln!(s, "contrast = {:e}", f.contrast).unwrap();
        writeln!(s, "n-inclusions = {}", f.n_inclusions).unwrap();
        if let Some(n) = f.n_channels {
            writeln!(s, "n-channels = {n}").unwrap();
        }
        if let Some(p) = &f.raster {
            writeln!(s, "raster = {}", p.display()).unwrap();
        }
        writeln!(s, "source = {}", self.source.name()).unwrap();
        writeln!(s, "l = {}", self.l).unwrap();
        let lr: Vec<String> = self.l_range.iter().map(|l| l.to_string()).collect();
        writeln!(s, "l-range = {}", lr.join(",")).unwrap();
        writeln!(s, "c = {:e}", self.pdas.c).unwrap();
        writeln!(s, "tol = {:e}", self.pdas.tol).unwrap();
        writeln!(s, "maxiter = {}", self.pdas.maxiter).unwrap();
        s
    }
}

fn kind_name(k: FieldKind) -> &'static str {
    match k {
        FieldKind::Inclusions => "inclusions",
        FieldKind::Channels => "channels",
        FieldKind::Constant => "constant",
        FieldKind::Raster => "raster",
    }
}

#[derive(Debug, Parser)]
#[command(name = "signorini", version, about = "Multiscale Signorini contact solver")]
pub struct Cli {
    /// Configuration file of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a permeability raster.
    GenField(CommonArgs),
    /// Solve the fine-scale hybrid system.
    SolveFine {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write M, B and L.
        #[arg(long)]
        dump_matrices: bool,
    },
    /// Solve the coarse multiscale hybrid system.
    SolveMs {
        #[command(flatten)]
        common: CommonArgs,
        /// Local basis functions per interior coarse node.
        #[arg(short = 'l', long)]
        l: Option<usize>,
        /// Also write every local eigenvalue.
        #[arg(long)]
        eigenvalues: bool,
        /// Also solve the fine system and report errors.
        #[arg(long)]
        compare: bool,
    },
    /// Error table over a range of basis counts.
    Study(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub nc: Option<usize>,
    #[arg(long)]
    pub nf: Option<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<FieldKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub n_inclusions: Option<usize>,
    #[arg(long)]
    pub n_channels: Option<usize>,
    /// CSV raster to use as κ (implies --kind raster).
    #[arg(long)]
    pub raster: Option<PathBuf>,
    /// sinsin, zero, one or const:<value>.
    #[arg(long)]
    pub source: Option<String>,
    /// For example 1..5 or 1,3,5.
    #[arg(long)]
    pub l_range: Option<String>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub maxiter: Option<usize>,
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, s: Option<String>| {
            if let Some(s) = s {
                v.push((k, s));
            }
        };
        push("nc", self.nc.map(|x| x.to_string()));
        push("nf", self.nf.map(|x| x.to_string()));
        push("kind", self.kind.map(|k| kind_name(k).to_string()));
        push("seed", self.seed.map(|x| x.to_string()));
        push("contrast", self.contrast.map(|x| x.to_string()));
        push("n-inclusions", self.n_inclusions.map(|x| x.to_string()));
        push("n-channels", self.n_channels.map(|x| x.to_string()));
        push("raster", self.raster.as_ref().map(|p| p.display().to_string()));
        push("source", self.source.clone());
        push("l-range", self.l_range.clone());
        push("c", self.c.map(|x| x.to_string()));
        push("tol", self.tol.map(|x| x.to_string()));
        push("maxiter", self.maxiter.map(|x| x.to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        v
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(
    file: Option<&Path>,
    common: &CommonArgs,
    l: Option<usize>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_config_text(&text, path)? {
            cfg.apply(&k, &v)?;
        }
    }
    for (k, v) in common.pairs() {
        cfg.apply(k, &v)?;
    }
    if let Some(l) = l {
        cfg.l = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Outcome of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Unconverged,
}

impl Outcome {
    fn from_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        if flags.into_iter().all(|c| c) {
            Outcome::Converged
        } else {
            Outcome::Unconverged
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Converged => 0,
            Outcome::Unconverged => 1,
        }
    }
}

/// Exit code for a failed command: 2 for usage and configuration problems,
/// 1 for numerical failures.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidGrid(_) | Error::InvalidField(_) => 2,
        Error::Io { .. } => 2,
        _ => 1,
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn vector_csv(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 24);
    for x in v {
        writeln!(s, "{x:e}").unwrap();
    }
    s
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn build_problem(cfg: &ExperimentConfig) -> Result<(GridPair, PermField, FineSystem)> {
    let g = cfg.grid()?;
    let kappa = cfg.field.build(&g)?;
    let source = cfg.source;
    let sys = assemble_fine(&g, &kappa, |x, y| source.eval(x, y))?;
    Ok((g, kappa, sys))
}

fn write_solution(
    dir: &Path,
    prefix: &str,
    sys: &HybridSystem,
    sol: &HybridSolution,
    c: f64,
) -> Result<()> {
    write(&dir.join(format!("{prefix}_U.csv")), &vector_csv(&sol.u))?;
    write(&dir.join(format!("{prefix}_Phi.csv")), &vector_csv(&sol.phi))?;
    write(&dir.join(format!("{prefix}_trace.csv")), &sol.trace_csv())?;
    let rep = complementarity_report(sys, &sol.u, &sol.phi, c);
    let mut text = format!(
        "dofs = {}\nconstraints = {}\niterations = {}\nconverged = {}\nactive = {}\n",
        sys.n_dofs(),
        sys.n_constraints(),
        sol.iterations,
        sol.converged,
        sol.active.len()
    );
    text.push_str(&rep.to_text());
    write(&dir.join(format!("{prefix}_report.txt")), &text)
}

pub fn cmd_gen_field(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare_out(cfg)?;
    let g = cfg.grid()?;
    let field = cfg.field.build(&g)?;
    write(&dir.join("field.csv"), &raster_string(&field))?;
    let meta = format!(
        "{}cells-per-side = {}\nmin = {}\nmax = {}\n",
        cfg.describe(),
        field.cells_per_side(),
        field.min(),
        field.max()
    );
    write(&dir.join("field.meta"), &meta)?;
    Ok(Outcome::Converged)
}

pub fn cmd_solve_fine(cfg: &ExperimentConfig, dump_matrices: bool) -> Result<Outcome> {
    let dir = prepare_out(cfg)?;
    let (_, _, sys) = build_problem(cfg)?;
    let hs = HybridSystem::fine(&sys)?;
    let sol = pdas_solve(&hs, &cfg.pdas)?;
    write_solution(dir, "fine", &hs, &sol, cfg.pdas.c)?;
    if dump_matrices {
        sys.stiffness.write_coordinate(dir.join("fine_M.mtx"))?;
        sys.contact.write_coordinate(dir.join("fine_B.mtx"))?;
        write(&dir.join("fine_L.csv"), &vector_csv(&sys.load))?;
    }
    write(&dir.join("config.txt"), &cfg.describe())?;
    Ok(Outcome::from_flags([sol.converged]))
}

pub fn cmd_solve_ms(cfg: &ExperimentConfig, eigenvalues: bool, compare: bool) -> Result<Outcome> {
    let dir = prepare_out(cfg)?;
    let (g, _, sys) = build_problem(cfg)?;
    let library = SpectralLibrary::build(&sys, &g, cfg.l, EigenCut::Strict)?;
    let space = library.space(cfg.l)?;
    let csys = HybridSystem::coarse(&coarse_operators(&space, &sys)?)?;
    let sol = pdas_solve(&csys, &cfg.pdas)?;
    write_solution(dir, "coarse", &csys, &sol, cfg.pdas.c)?;
    let u_fine = space.prolongate(&sol.u);
    write(&dir.join("coarse_U_fine.csv"), &vector_csv(&u_fine))?;
    let mut summary = format!(
        "l = {}\ncoarse_dof = {}\nLambda = {:e}\nLambda_all = {:e}\n",
        cfg.l,
        space.dim(),
        space.lambda,
        space.lambda_all
    );
    let mut flags = vec![sol.converged];
    if eigenvalues {
        library.write_eigenvalues(dir.join("eigenvalues.csv"))?;
    }
    if compare {
        let fine = pdas_solve(&HybridSystem::fine(&sys)?, &cfg.pdas)?;
        let e = errors(&fine.u, &u_fine, &sys)?;
        writeln!(summary, "e_a = {:e}\ne_L2 = {:e}\nfine_iters = {}", e.e_a, e.e_l2, fine.iterations).unwrap();
        flags.push(fine.converged);
    }
    write(&dir.join("coarse_summary.txt"), &summary)?;
    write(&dir.join("config.txt"), &cfg.describe())?;
    Ok(Outcome::from_flags(flags))
}

/// Two-column `l value` plot data.
pub fn plot_data(reports: &[ErrorReport], value: impl Fn(&ErrorReport) -> f64) -> String {
    let mut s = String::new();
    for r in reports {
        writeln!(s, "{} {:e}", r.l, value(r)).unwrap();
    }
    s
}

pub fn cmd_study(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = prepare_out(cfg)?;
    let (g, _, sys) = build_problem(cfg)?;
    let l_max = *cfg.l_range.iter().max().expect("validated nonempty");
    let fine = pdas_solve(&HybridSystem::fine(&sys)?, &cfg.pdas)?;
    let library = SpectralLibrary::build(&sys, &g, l_max, EigenCut::Strict)?;
    let (reports, _) = study_with_library(&sys, &fine, &library, &cfg.l_range, &cfg.pdas)?;
    write_study_table(&reports, dir.join("study.csv"))?;
    write(&dir.join("e_a.dat"), &plot_data(&reports, |r| r.e_a))?;
    write(&dir.join("e_L2.dat"), &plot_data(&reports, |r| r.e_l2))?;
    write(&dir.join("lambda.dat"), &plot_data(&reports, |r| r.lambda))?;
    write(&dir.join("config.txt"), &cfg.describe())?;
    Ok(Outcome::from_flags(
        std::iter::once(fine.converged).chain(reports.iter().map(|r| r.coarse_converged)),
    ))
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let file = cli.config.as_deref();
    match &cli.command {
        Command::GenField(common) => cmd_gen_field(&resolve_config(file, common, None)?),
        Command::SolveFine { common, dump_matrices } => {
            cmd_solve_fine(&resolve_config(file, common, None)?, *dump_matrices)
        }
        Command::SolveMs {
            common,
            l,
            eigenvalues,
            compare,
        } => cmd_solve_ms(&resolve_config(file, common, *l)?, *eigenvalues, *compare),
        Command::Study(common) => cmd_study(&resolve_config(file, common, None)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l_range_forms() {
        assert_eq!(parse_l_range("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_l_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_l_range("1,3, 5").unwrap(), vec![1, 3, 5]);
        assert_eq!(parse_l_range("4").unwrap(), vec![4]);
        for bad in ["", "5..1", "0..2", "a", "1,,2"] {
            assert!(matches!(parse_l_range(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        fs::write(&path, "# test\nnc = 4\nnf = 2\nkind = channels  # trailing\nseed = 11\nl_range = 1..2\n").unwrap();
        let flags = CommonArgs {
            nf: Some(3),
            ..Default::default()
        };
        let cfg = resolve_config(Some(&path), &flags, Some(2)).unwrap();
        assert_eq!((cfg.nc, cfg.nf, cfg.l), (4, 3, 2));
        assert_eq!(cfg.field.kind, FieldKind::Channels);
        assert_eq!(cfg.field.seed, 11);
        assert_eq!(cfg.l_range, vec![1, 2]);
    }

    #[test]
    fn config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        fs::write(&path, "nc 4\n").unwrap();
        let e = resolve_config(Some(&path), &CommonArgs::default(), None).unwrap_err();
        assert_eq!(error_exit_code(&e), 2);
        fs::write(&path, "colour = red\n").unwrap();
        let e = resolve_config(Some(&path), &CommonArgs::default(), None).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = resolve_config(None, &CommonArgs { maxiter: Some(0), ..Default::default() }, None).unwrap_err();
        assert_eq!(error_exit_code(&e), 2);
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.nc, cfg.nf), (16, 16));
        assert_eq!(cfg.field.contrast, 1e4);
        assert_eq!((cfg.pdas.c, cfg.pdas.maxiter), (1.0, 12));
    }
}

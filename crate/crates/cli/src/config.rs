//! Run configuration: built-in problem names, flat `key = value` config
//! files, and CLI flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hp_energy_core::forms::{builtin, InitialMesh, ProblemDef};

/// Initial mesh selector, parsed from `interval:N`, `square` or `lshape`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshSpec {
    Interval(usize),
    LShape,
    UnitSquare8,
}

impl MeshSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(n) = s.strip_prefix("interval:") {
            let n: usize = n.parse().with_context(|| format!("bad element count in mesh spec `{s}`"))?;
            if n == 0 {
                bail!("mesh spec `{s}`: element count must be positive");
            }
            return Ok(MeshSpec::Interval(n));
        }
        match s {
            "lshape" => Ok(MeshSpec::LShape),
            "square" => Ok(MeshSpec::UnitSquare8),
            _ => bail!("unknown mesh spec `{s}` (expected interval:N, square or lshape)"),
        }
    }

    fn to_initial(self) -> InitialMesh {
        match self {
            MeshSpec::Interval(n) => InitialMesh::Interval(n),
            MeshSpec::LShape => InitialMesh::LShape,
            MeshSpec::UnitSquare8 => InitialMesh::UnitSquare8,
        }
    }
}

/// Everything a `run` needs. Defaults match the experiment setup; a config
/// file and then CLI flags override field by field.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: String,
    pub mesh: Option<MeshSpec>,
    pub degree: Option<usize>,
    pub theta: f64,
    pub nmax: Option<usize>,
    pub iters: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub bump: Option<usize>,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Report measured wall time per iteration instead of zeros. Off by
    /// default so identical runs produce byte-identical CSV files.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: String::new(),
            mesh: None,
            degree: None,
            theta: 1.0 / 3.0,
            nmax: None,
            iters: 12,
            seed: 0,
            out: PathBuf::new(),
            threads: None,
            bump: None,
            newton_tol: 1e-10,
            max_newton: 30,
            timing: false,
        }
    }
}

/// CLI flag values layered on top of the base config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub theta: Option<f64>,
    pub nmax: Option<usize>,
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub timing: bool,
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => bail!("expected a boolean, got `{v}`"),
    }
}

impl RunConfig {
    /// Resolves the `run` positional argument: a built-in problem name, or a
    /// path to a flat `key = value` config file.
    pub fn resolve(problem_or_path: &str, over: &Overrides) -> Result<RunConfig> {
        let mut cfg = if builtin::<f64>(problem_or_path).is_some() {
            let mut c = RunConfig::default();
            c.problem = problem_or_path.to_string();
            c
        } else if Path::new(problem_or_path).is_file() {
            RunConfig::from_file(Path::new(problem_or_path))?
        } else {
            bail!(
                "`{problem_or_path}` is neither a built-in problem (ex1, ex1-eps1, ex2, ex3) \
                 nor a config file"
            );
        };

        if let Some(t) = over.theta {
            cfg.theta = t;
        }
        if let Some(n) = over.nmax {
            cfg.nmax = Some(n);
        }
        if let Some(s) = over.seed {
            cfg.seed = s;
        }
        if let Some(i) = over.iters {
            cfg.iters = i;
        }
        if let Some(o) = &over.out {
            cfg.out = o.clone();
        }
        if let Some(t) = over.threads {
            cfg.threads = Some(t);
        }
        if over.timing {
            cfg.timing = true;
        }
        if cfg.out.as_os_str().is_empty() {
            cfg.out = PathBuf::from("out").join(&cfg.problem);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a flat config file: one `key = value` per line, `#` comments.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("{}:{}: key `{key}`", path.display(), lineno + 1);
            match key {
                "problem" => cfg.problem = value.to_string(),
                "mesh" => cfg.mesh = Some(MeshSpec::parse(value).with_context(ctx)?),
                "degree" => cfg.degree = Some(value.parse().with_context(ctx)?),
                "theta" => cfg.theta = value.parse().with_context(ctx)?,
                "nmax" => cfg.nmax = Some(value.parse().with_context(ctx)?),
                "iters" => cfg.iters = value.parse().with_context(ctx)?,
                "seed" => cfg.seed = value.parse().with_context(ctx)?,
                "out" => cfg.out = PathBuf::from(value),
                "threads" => cfg.threads = Some(value.parse().with_context(ctx)?),
                "bump" => cfg.bump = Some(value.parse().with_context(ctx)?),
                "newton_tol" => cfg.newton_tol = value.parse().with_context(ctx)?,
                "max_newton" => cfg.max_newton = value.parse().with_context(ctx)?,
                "timing" => cfg.timing = parse_bool(value).with_context(ctx)?,
                _ => bail!("{}:{}: unknown key `{key}`", path.display(), lineno + 1),
            }
        }
        if cfg.problem.is_empty() {
            bail!("{}: config file must set `problem`", path.display());
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            bail!("theta must lie strictly between 0 and 1, got {}", self.theta);
        }
        if self.iters < 1 {
            bail!("iters must be at least 1");
        }
        if self.degree == Some(0) {
            bail!("degree must be at least 1");
        }
        if !(self.newton_tol > 0.0) {
            bail!("newton_tol must be positive, got {}", self.newton_tol);
        }
        if self.max_newton < 1 {
            bail!("max_newton must be at least 1");
        }
        Ok(())
    }

    /// Builds the problem definition with mesh / degree / quadrature
    /// overrides applied.
    pub fn build_problem(&self) -> Result<ProblemDef<f64>> {
        let mut prob = builtin::<f64>(&self.problem)
            .ok_or_else(|| anyhow!("unknown problem `{}`", self.problem))?;
        if let Some(spec) = self.mesh {
            let m = spec.to_initial();
            let dim = match m {
                InitialMesh::Interval(_) => 1,
                _ => 2,
            };
            if dim != prob.dim {
                bail!(
                    "mesh spec `{:?}` is {dim}D but problem `{}` is {}D",
                    spec,
                    self.problem,
                    prob.dim
                );
            }
            prob.initial_mesh = m;
        }
        if let Some(d) = self.degree {
            prob.initial_degree = d;
        }
        if let Some(b) = self.bump {
            prob.quad_bump = b;
        }
        Ok(prob)
    }
}

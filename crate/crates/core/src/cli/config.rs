//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Keys that are unknown, repeated, or not applicable to the selected problem
//! are rejected. The full schema lives in `docs/config-schema.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::audit::default_audit_order;
use crate::newton::NewtonConfig;
use crate::problem::State;
use crate::problems::{
    cahn_hilliard_1d, constrained_pendulum, default_current, double_well_gradient_flow,
    harmonic_oscillator, magnetoquasistatics_1d, nonlinear_pendulum, quadratic_gradient_flow,
    random_skew_quadratic, CahnHilliardParams, MqsParams, ProblemBundle,
};
use crate::quadrature::MAX_ORDER;
use crate::timestepping::TimeGrid;

/// Largest accepted test degree `k`.
pub const MAX_DEGREE: usize = 12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}` does not apply to problem `{problem}`")]
    NotApplicable { key: String, problem: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

/// A named problem together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    HarmonicOscillator,
    NonlinearPendulum,
    /// Dimension; matrices drawn from the run seed.
    SkewQuadratic {
        n: usize,
    },
    QuadraticGradientFlow {
        matrix: DMatrix<f64>,
    },
    DoubleWell {
        n: usize,
    },
    ConstrainedPendulum {
        gravity: f64,
    },
    Magnetoquasistatics {
        params: MqsParams,
        source_amplitude: f64,
    },
    CahnHilliard {
        params: CahnHilliardParams,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HarmonicOscillator => "harmonic_oscillator",
            Self::NonlinearPendulum => "nonlinear_pendulum",
            Self::SkewQuadratic { .. } => "random_skew_quadratic",
            Self::QuadraticGradientFlow { .. } => "quadratic_gradient_flow",
            Self::DoubleWell { .. } => "double_well_gradient_flow",
            Self::ConstrainedPendulum { .. } => "constrained_pendulum",
            Self::Magnetoquasistatics { .. } => "magnetoquasistatics_1d",
            Self::CahnHilliard { .. } => "cahn_hilliard_1d",
        }
    }

    fn parameter_keys(name: &str) -> Option<&'static [&'static str]> {
        Some(match name {
            "harmonic_oscillator" | "nonlinear_pendulum" => &[],
            "random_skew_quadratic" | "double_well_gradient_flow" => &["n"],
            "quadratic_gradient_flow" => &["matrix"],
            "constrained_pendulum" => &["gravity"],
            "magnetoquasistatics_1d" => &["n_cells", "sigma", "nu0", "nu2", "source_amplitude"],
            "cahn_hilliard_1d" => &["n_cells", "gamma", "length", "mean"],
            _ => return None,
        })
    }

    /// Builds the problem; `seed` feeds problems with random data.
    pub fn build(&self, seed: u64) -> crate::Result<ProblemBundle> {
        match self {
            Self::HarmonicOscillator => Ok(harmonic_oscillator()),
            Self::NonlinearPendulum => Ok(nonlinear_pendulum()),
            Self::SkewQuadratic { n } => random_skew_quadratic(*n, seed),
            Self::QuadraticGradientFlow { matrix } => quadratic_gradient_flow(matrix.clone()),
            Self::DoubleWell { n } => double_well_gradient_flow(*n),
            Self::ConstrainedPendulum { gravity } => Ok(constrained_pendulum(*gravity)),
            Self::Magnetoquasistatics {
                params,
                source_amplitude,
            } => {
                let current = (*source_amplitude != 0.0)
                    .then(|| default_current(params.n_cells, *source_amplitude));
                magnetoquasistatics_1d(*params, current)
            }
            Self::CahnHilliard { params } => cahn_hilliard_1d(*params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionConfig {
    pub rank: usize,
    /// Basis seed; `None` follows the run seed.
    pub seed: Option<u64>,
    /// Use `V = I` instead of a random basis.
    pub identity: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub k: usize,
    /// Scheme quadrature points; defaults to the problem's exactness order,
    /// or `k + 2` when none exists.
    pub m: Option<usize>,
    /// Audit quadrature points; defaults to `max(m, 8)`.
    pub audit_m: Option<usize>,
    pub t_end: f64,
    pub steps: Option<usize>,
    pub steps_list: Vec<usize>,
    /// First step of a geometrically graded grid.
    pub first_step: Option<f64>,
    pub newton: NewtonConfig,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub u0: Option<Vec<f64>>,
    pub reduction: Option<ReductionConfig>,
}

const COMMON_KEYS: &[&str] = &[
    "problem",
    "k",
    "m",
    "audit_m",
    "T",
    "N",
    "N_list",
    "first_step",
    "newton_tol",
    "newton_max_iter",
    "seed",
    "out",
    "u0",
    "reduce_r",
    "reduce_seed",
    "reduce_identity",
];

struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|_| ConfigError::Invalid {
                    key: key.into(),
                    message: format!("cannot parse `{v}`"),
                })
            })
            .transpose()
    }

    fn float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let value = self.parse::<f64>(key)?;
        match value {
            Some(x) if !x.is_finite() => Err(invalid(key, "must be finite")),
            _ => Ok(value),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse::<T>().map_err(|_| ConfigError::Invalid {
                            key: key.into(),
                            message: format!("cannot parse list entry `{}`", s.trim()),
                        })
                    })
                    .collect()
            })
            .transpose()
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

fn positive(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(key, format!("must be positive, got {x}")))
    }
}

fn tokenize(text: &str) -> Result<Entries, ConfigError> {
    let mut values = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line: line_no,
                message: "empty key or value".into(),
            });
        }
        if let Some((first, _)) = values.insert(key.to_string(), (line_no, value.to_string())) {
            return Err(ConfigError::Syntax {
                line: line_no,
                message: format!("key `{key}` already set on line {first}"),
            });
        }
    }
    Ok(Entries { values })
}

fn parse_matrix(key: &str, text: &str) -> Result<DMatrix<f64>, ConfigError> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| invalid(key, format!("cannot parse row `{}`", row.trim())))
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(invalid(
            key,
            "rows must be separated by `;` and form a square matrix",
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = tokenize(text)?;
        let name = entries
            .raw("problem")
            .ok_or(ConfigError::Missing("problem"))?
            .to_string();
        let parameter_keys = ProblemSpec::parameter_keys(&name)
            .ok_or_else(|| invalid("problem", format!("unknown problem `{name}`")))?;
        for (key, (line, _)) in &entries.values {
            if COMMON_KEYS.contains(&key.as_str()) || parameter_keys.contains(&key.as_str()) {
                continue;
            }
            let known_elsewhere = [
                "n",
                "matrix",
                "gravity",
                "n_cells",
                "sigma",
                "nu0",
                "nu2",
                "source_amplitude",
                "gamma",
                "length",
                "mean",
            ]
            .contains(&key.as_str());
            return Err(if known_elsewhere {
                ConfigError::NotApplicable {
                    key: key.clone(),
                    problem: name.clone(),
                }
            } else {
                ConfigError::UnknownKey {
                    key: key.clone(),
                    line: *line,
                }
            });
        }

        let problem = Self::parse_problem(&name, &entries)?;

        let k = entries.parse::<usize>("k")?.unwrap_or(1);
        if k > MAX_DEGREE {
            return Err(invalid("k", format!("must be at most {MAX_DEGREE}")));
        }
        let order = |key: &str| -> Result<Option<usize>, ConfigError> {
            match entries.parse::<usize>(key)? {
                Some(m) if !(1..=MAX_ORDER).contains(&m) => {
                    Err(invalid(key, format!("must lie in 1..={MAX_ORDER}")))
                }
                other => Ok(other),
            }
        };
        let m = order("m")?;
        let audit_m = order("audit_m")?;
        let t_end = positive("T", entries.float("T")?.ok_or(ConfigError::Missing("T"))?)?;

        let steps = entries.parse::<usize>("N")?;
        if steps == Some(0) {
            return Err(invalid("N", "must be at least 1"));
        }
        let steps_list = entries.list::<usize>("N_list")?.unwrap_or_default();
        if steps_list.contains(&0) || steps_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(
                "N_list",
                "entries must be positive and strictly increasing",
            ));
        }
        let first_step = entries
            .float("first_step")?
            .map(|h| positive("first_step", h))
            .transpose()?;
        if let (Some(h), Some(n)) = (first_step, steps) {
            if h * n as f64 > t_end * (1.0 + 1e-12) {
                return Err(invalid("first_step", "first_step * N must not exceed T"));
            }
        }

        let mut newton = NewtonConfig::default();
        if let Some(tol) = entries.float("newton_tol")? {
            newton.tolerance = positive("newton_tol", tol)?;
        }
        if let Some(iters) = entries.parse::<usize>("newton_max_iter")? {
            if iters == 0 {
                return Err(invalid("newton_max_iter", "must be at least 1"));
            }
            newton.max_iterations = iters;
        }

        let seed = entries.parse::<u64>("seed")?.unwrap_or(0);
        let out = entries.raw("out").map(PathBuf::from);
        let u0 = entries.list::<f64>("u0")?;
        if u0
            .as_ref()
            .is_some_and(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(invalid("u0", "entries must be finite"));
        }

        let identity = entries.parse::<bool>("reduce_identity")?.unwrap_or(false);
        let rank = entries.parse::<usize>("reduce_r")?;
        if rank == Some(0) {
            return Err(invalid("reduce_r", "must be at least 1"));
        }
        let reduce_seed = entries.parse::<u64>("reduce_seed")?;
        let reduction = match (rank, identity) {
            (Some(_), true) => {
                return Err(invalid("reduce_identity", "conflicts with reduce_r"));
            }
            (Some(rank), false) => Some(ReductionConfig {
                rank,
                seed: reduce_seed,
                identity: false,
            }),
            (None, true) => Some(ReductionConfig {
                rank: 0,
                seed: reduce_seed,
                identity: true,
            }),
            (None, false) if reduce_seed.is_some() => {
                return Err(invalid("reduce_seed", "needs reduce_r"));
            }
            (None, false) => None,
        };

        Ok(Self {
            problem,
            k,
            m,
            audit_m,
            t_end,
            steps,
            steps_list,
            first_step,
            newton,
            out,
            seed,
            u0,
            reduction,
        })
    }

    fn parse_problem(name: &str, e: &Entries) -> Result<ProblemSpec, ConfigError> {
        let dimension = |default: usize, min: usize| -> Result<usize, ConfigError> {
            let n = e.parse::<usize>("n")?.unwrap_or(default);
            if n < min {
                return Err(invalid("n", format!("must be at least {min}")));
            }
            Ok(n)
        };
        Ok(match name {
            "harmonic_oscillator" => ProblemSpec::HarmonicOscillator,
            "nonlinear_pendulum" => ProblemSpec::NonlinearPendulum,
            "random_skew_quadratic" => ProblemSpec::SkewQuadratic {
                n: dimension(10, 2)?,
            },
            "double_well_gradient_flow" => ProblemSpec::DoubleWell {
                n: dimension(16, 1)?,
            },
            "quadratic_gradient_flow" => {
                let text = e.raw("matrix").ok_or(ConfigError::Missing("matrix"))?;
                let matrix = parse_matrix("matrix", text)?;
                if (&matrix - matrix.transpose()).amax() != 0.0 {
                    return Err(invalid("matrix", "must be symmetric"));
                }
                ProblemSpec::QuadraticGradientFlow { matrix }
            }
            "constrained_pendulum" => ProblemSpec::ConstrainedPendulum {
                gravity: e.float("gravity")?.unwrap_or(1.0),
            },
            "magnetoquasistatics_1d" => {
                let d = MqsParams::default();
                let params = MqsParams {
                    n_cells: e.parse("n_cells")?.unwrap_or(d.n_cells),
                    sigma: e.float("sigma")?.unwrap_or(d.sigma),
                    nu0: e.float("nu0")?.unwrap_or(d.nu0),
                    nu2: e.float("nu2")?.unwrap_or(d.nu2),
                };
                if params.n_cells < 2 {
                    return Err(invalid("n_cells", "must be at least 2"));
                }
                positive("sigma", params.sigma)?;
                positive("nu0", params.nu0)?;
                if params.nu2 < 0.0 {
                    return Err(invalid("nu2", "must be nonnegative"));
                }
                ProblemSpec::Magnetoquasistatics {
                    params,
                    source_amplitude: e.float("source_amplitude")?.unwrap_or(0.0),
                }
            }
            "cahn_hilliard_1d" => {
                let d = CahnHilliardParams::default();
                let params = CahnHilliardParams {
                    n_cells: e.parse("n_cells")?.unwrap_or(d.n_cells),
                    gamma: e.float("gamma")?.unwrap_or(d.gamma),
                    length: e.float("length")?.unwrap_or(d.length),
                    mean: e.float("mean")?.unwrap_or(d.mean),
                };
                if params.n_cells < 3 {
                    return Err(invalid("n_cells", "must be at least 3"));
                }
                positive("gamma", params.gamma)?;
                positive("length", params.length)?;
                ProblemSpec::CahnHilliard { params }
            }
            _ => unreachable!("problem names are checked before parsing"),
        })
    }

    /// Scheme quadrature order for `bundle`.
    pub fn scheme_order(&self, bundle: &ProblemBundle) -> usize {
        self.m
            .unwrap_or_else(|| bundle.min_quadrature_order(self.k).unwrap_or(self.k + 2))
            .min(MAX_ORDER)
    }

    pub fn audit_order(&self, scheme_order: usize) -> usize {
        self.audit_m
            .unwrap_or_else(|| default_audit_order(scheme_order))
            .min(MAX_ORDER)
    }

    /// Uniform grid with `N` steps, or geometric when `first_step` is set.
    pub fn grid(&self) -> Result<TimeGrid, ConfigError> {
        let n = self.steps.ok_or(ConfigError::Missing("N"))?;
        let grid = match self.first_step {
            Some(h) => TimeGrid::geometric(self.t_end, n, h),
            None => TimeGrid::uniform(self.t_end, n),
        };
        grid.map_err(|e| invalid("N", e.to_string()))
    }

    /// Initial state from `u0` or the problem default for `seed`.
    pub fn initial_state(&self, bundle: &ProblemBundle) -> Result<State, ConfigError> {
        let u0 = match &self.u0 {
            Some(v) => State::from_column_slice(v),
            None => bundle.initial_state(self.seed),
        };
        bundle
            .check_initial(&u0)
            .map_err(|e| invalid("u0", e.to_string()))?;
        Ok(u0)
    }
}

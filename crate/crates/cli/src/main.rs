//! `invquad`: optimal designs for inverse quadratic regression from the shell.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

mod commands;
mod files;
mod preset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invquad::{Criterion, DEfficiency, DesignSpace, Error, ModelKind, ModelSpec};

use crate::preset::Preset;

#[derive(Parser, Debug)]
#[command(
    name = "invquad",
    version,
    about = "Locally optimal designs for inverse quadratic regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute an optimal design and certify it.
    Design {
        #[command(flatten)]
        setup: Setup,
        #[command(flatten)]
        criterion: CriterionArgs,
        /// Write the design JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the design JSON instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Optimal-design table and efficiency table of a preset, as CSV.
    Table {
        #[arg(long)]
        preset: String,
        /// Directory receiving table51.csv and table52.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value = "square-root")]
        d_efficiency: DEfficiency,
        /// Orientation of the optimal-design block of table52.csv.
        #[arg(long, value_enum, default_value_t = Layout::ByCriterion)]
        layout: Layout,
    },
    /// Run the equivalence check on a design file and print the report.
    Check {
        file: PathBuf,
        #[command(flatten)]
        criterion: CriterionArgs,
    },
    /// Efficiency matrix (designs × criteria) in percent.
    Efficiency {
        #[command(flatten)]
        setup: Setup,
        /// Design files to evaluate; defaults to the preset's comparison designs.
        #[arg(long = "design")]
        designs: Vec<PathBuf>,
        /// Extrapolation point for the ce column.
        #[arg(long)]
        xe: Option<f64>,
        #[arg(long, default_value = "square-root")]
        d_efficiency: DEfficiency,
    },
    /// Monte Carlo comparison of the estimator covariance with (σ²/N)·M⁻¹.
    Simulate {
        #[command(flatten)]
        setup: Setup,
        /// Design file; otherwise the optimal design for --criterion.
        #[arg(long)]
        design: Option<PathBuf>,
        #[command(flatten)]
        criterion: CriterionArgs,
        #[arg(long, conflicts_with = "sigma_rel")]
        sigma: Option<f64>,
        /// Noise level as a fraction of the peak response.
        #[arg(long)]
        sigma_rel: Option<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_fit_iterations: usize,
        /// Write per-replicate estimates as CSV.
        #[arg(long)]
        estimates_csv: Option<PathBuf>,
    },
    /// Round design weights to run counts.
    Round {
        file: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Chebyshev points and equioscillating coefficients.
    Chebpoints {
        #[command(flatten)]
        setup: Setup,
    },
}

/// Orientation of the optimal-design rows of the efficiency table.
#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    /// Row `xi_X` lists the X-efficiency of each column's optimal design.
    ByCriterion,
    /// Row `xi_X` lists the efficiencies of the X-optimal design.
    ByDesign,
}

/// Model and design space, from a preset and/or explicit flags.
#[derive(Args, Debug, Clone)]
struct Setup {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    model: Option<ModelKind>,
    /// θ₀,θ₁,θ₂
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// s:t, with t = inf for [s, ∞)
    #[arg(long)]
    space: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct CriterionArgs {
    /// D, E, D1, c or ce
    #[arg(long)]
    criterion: Option<String>,
    /// c-vector for the c criterion.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    c: Option<Vec<f64>>,
    /// Extrapolation point for ce.
    #[arg(long)]
    xe: Option<f64>,
}

struct Resolved {
    model: ModelSpec,
    space: DesignSpace,
    preset: Option<Preset>,
}

fn parse_space(text: &str) -> invquad::Result<DesignSpace> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::Validation(format!("space {text:?} is not of the form s:t")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Validation(format!("bad number {v:?} in space")))
    };
    let s = num(a)?;
    match b.trim() {
        "inf" | "Inf" | "INF" => DesignSpace::unbounded(s),
        other => DesignSpace::new(s, num(other)?),
    }
}

impl Setup {
    fn resolve(&self) -> invquad::Result<Resolved> {
        let preset = self.preset.as_deref().map(preset::preset).transpose()?;
        let kind = self.model.or(preset.as_ref().map(|p| p.model.kind()));
        let theta = match &self.theta {
            Some(t) if t.len() == 3 => Some([t[0], t[1], t[2]]),
            Some(t) => return Err(Error::Validation(format!("--theta needs 3 values, got {}", t.len()))),
            None => preset.as_ref().map(|p| p.model.theta()),
        };
        let (Some(kind), Some(theta)) = (kind, theta) else {
            return Err(Error::Validation("give --preset or both --model and --theta".into()));
        };
        let space = match &self.space {
            Some(s) => parse_space(s)?,
            None => preset
                .as_ref()
                .map(|p| p.space)
                .ok_or_else(|| Error::Validation("--space is required without --preset".into()))?,
        };
        Ok(Resolved {
            model: ModelSpec::new(kind, theta)?,
            space,
            preset,
        })
    }
}

impl CriterionArgs {
    fn resolve(&self, preset: Option<&Preset>) -> invquad::Result<Option<Criterion>> {
        let Some(name) = &self.criterion else {
            return Ok(None);
        };
        parse_criterion(
            name,
            self.c.as_deref(),
            self.xe.or(preset.map(|p| p.extrapolation_point)),
        )
        .map(Some)
    }
}

fn parse_criterion(name: &str, c: Option<&[f64]>, xe: Option<f64>) -> invquad::Result<Criterion> {
    match name.to_ascii_lowercase().as_str() {
        "d" => Ok(Criterion::D),
        "e" => Ok(Criterion::E),
        "d1" => Ok(Criterion::D1),
        "c" => match c {
            Some([a, b, c]) => Ok(Criterion::C([*a, *b, *c])),
            _ => Err(Error::Validation("criterion c needs --c with three values".into())),
        },
        "ce" => xe
            .map(Criterion::Extrapolation)
            .ok_or_else(|| Error::Validation("criterion ce needs --xe".into())),
        other => Err(Error::Validation(format!(
            "unknown criterion {other:?} (D, E, D1, c, ce)"
        ))),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .is_some_and(Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "multiflag", version, about = "Articulated arm kinematics and special multi-flag verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a controlled trajectory and export it.
    Simulate(SimulateArgs),
    /// Check the special multi-flag conditions over a sample set.
    Verify(VerifyArgs),
    /// Report singular crossings `A_i = 0` along a trajectory.
    SingularScan(ScanArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Car,
    Arm,
    Subarm,
    Cartesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// All segments along the first axis, base at the origin.
    Straight,
    /// Seeded random regular configuration.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Controls {
    Constant,
    Sinusoidal,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct Dims {
    /// Sphere dimension; the arm lives in R^(k+1).
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Number of trailers (the arm has n+1 segments).
    #[arg(long, default_value_t = 1)]
    pub n: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub dims: Dims,
    #[arg(long, value_enum, default_value_t = Mode::Arm)]
    pub mode: Mode,
    /// First sub-arm segment (subarm mode).
    #[arg(long)]
    pub p: Option<usize>,
    /// Last sub-arm segment (subarm mode).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum, default_value_t = Preset::Straight)]
    pub preset: Preset,
    /// Initial configuration as JSON `{"k","n","x0","z"}`; overrides `--preset`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Controls::Constant)]
    pub controls: Controls,
    /// Sampled controls as JSON `{"times": [..], "values": [{"vn", "w"}]}`; overrides `--controls`.
    #[arg(long)]
    pub controls_file: Option<PathBuf>,
    /// Normal velocity amplitude of the last segment.
    #[arg(long, default_value_t = 1.0)]
    pub vn: f64,
    /// Tangential rate amplitude of the last segment.
    #[arg(long, default_value_t = 0.0)]
    pub wn: f64,
    /// Frequency of the sinusoidal preset.
    #[arg(long, default_value_t = 0.5)]
    pub freq: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Final time.
    #[arg(long = "T", default_value_t = 1.0)]
    pub t_end: f64,
    /// Integration step.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Record every n-th step.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub dims: Dims,
    /// Number of random regular samples.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Extra samples with some `A_i = 0`.
    #[arg(long, default_value_t = 0)]
    pub inject_singular: usize,
    /// Verify this configuration only.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative SVD rank threshold.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Bound on involutivity, inclusion and angle residuals.
    #[arg(long, default_value_t = 1e-6)]
    pub residual_tol: f64,
    /// Central-difference step for brackets.
    #[arg(long, default_value_t = 1e-5)]
    pub bracket_step: f64,
    /// Print the full text report of every point.
    #[arg(long)]
    pub verbose: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Trajectory JSON written by `simulate`; otherwise the run flags are used.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    /// `|A_i|` below this counts as singular.
    #[arg(long, default_value_t = 1e-9)]
    pub eps: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spikeconv::config::{DEFAULT_EPSILON, DEFAULT_ETA, DEFAULT_KAPPA};
use spikeconv::{ConversionConfig, Mode};

#[derive(Debug, Parser)]
#[command(
    name = "spikeconv",
    version,
    about = "Convert CNNs to spiking networks and measure them"
)]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "SPIKECONV_OUT", default_value = "spikeconv-out")]
    pub out: PathBuf,

    /// Worker threads for simulation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fold batch norm and record per-layer activation maxima.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f32,
    },
    /// Convert a CNN into an SNN container.
    Convert {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        conversion: Conversion,
        #[arg(long, default_value_t = 256)]
        timesteps: u32,
        /// Fixed-point weight bits.
        #[arg(long)]
        bits: Option<u32>,
    },
    /// Simulate an SNN on a dataset.
    Run {
        #[arg(long)]
        snn: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the timesteps the SNN was converted for.
        #[arg(long)]
        timesteps: Option<u32>,
        /// CNN to report the accuracy loss against.
        #[arg(long)]
        cnn: Option<PathBuf>,
    },
    /// Accuracy and synaptic operations over timesteps and bit widths.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        conversion: Conversion,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
        timesteps_list: Vec<u32>,
        /// Bit widths, simulated at --timesteps.
        #[arg(long, value_delimiter = ',')]
        bits_list: Vec<u32>,
        #[arg(long, default_value_t = 256)]
        timesteps: u32,
    },
    /// Collect the results in a directory into one JSON summary.
    Report {
        /// Defaults to --out.
        run_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Source {
    #[arg(long)]
    pub model: PathBuf,
    /// Calibration file written by `calibrate`.
    #[arg(long, conflicts_with = "calib", required_unless_present = "calib")]
    pub stats: Option<PathBuf>,
    /// Calibration dataset, used when no --stats file is given.
    #[arg(long)]
    pub calib: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ecc,
    Wn,
    Tb,
}

#[derive(Debug, Args)]
pub struct Conversion {
    #[arg(long, value_enum, default_value_t = ModeArg::Ecc)]
    pub mode: ModeArg,
    /// One value for every layer, or one per layer.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_KAPPA])]
    pub kappa: Vec<f32>,
    /// Encoder threshold.
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa0: f32,
    /// Residual elimination strength (ECC only; default 0.5).
    #[arg(long)]
    pub eta: Option<f32>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f32,
}

impl Conversion {
    pub fn config(&self, timesteps: u32, quant_bits: Option<u32>) -> Result<ConversionConfig, String> {
        let mode = match self.mode {
            ModeArg::Ecc => Mode::Ecc,
            ModeArg::Wn => Mode::Wn,
            ModeArg::Tb => Mode::Tb,
        };
        let eta = match (mode, self.eta) {
            (Mode::Ecc, eta) => eta.unwrap_or(DEFAULT_ETA),
            (_, None) => 0.0,
            (_, Some(_)) => return Err(format!("--eta applies to --mode ecc only, not {:?}", self.mode).to_lowercase()),
        };
        Ok(ConversionConfig {
            mode,
            kappa: self.kappa.clone(),
            kappa0: self.kappa0,
            eta,
            epsilon: self.epsilon,
            timesteps,
            quant_bits,
        })
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lineprot::emt_sim::{simulate_measured, SimOptions, WaveformRecord};
use lineprot::grid_model::{GridScenario, SequenceLineParameters};
use lineprot::harness::{
    render_report_dir, run_detection_stream, run_suite, sweep_line_params, sweep_noise,
    write_sweep_dir, DetectorConfig, SuiteConfig,
};
use lineprot::{Error, Result};

#[derive(Parser)]
#[command(name = "lineprot", version, about = "Two-terminal line protection by model fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the terminal waveforms as CSV.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Overrides the scenario's noise and packet-loss seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the detector over adjacent windows of a waveform CSV.
    Analyze {
        waveform: PathBuf,
        /// Line parameters, or a scenario file whose line is used.
        #[arg(long)]
        line: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        window_ms: f64,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        l: usize,
    },
    /// Run a study suite and write its report directory.
    RunSuite {
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Run the suite at several noise levels.
    SweepNoise {
        #[command(flatten)]
        suite: SuiteArgs,
        /// SNR values in dB; `inf` means noise-free.
        #[arg(long, value_delimiter = ',', default_values_t = [30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0])]
        snr: Vec<f64>,
    },
    /// Run the suite with detector-side line parameter errors.
    SweepParams {
        #[command(flatten)]
        suite: SuiteArgs,
        /// Deviations in percent: `x` applies to R and L, `r:l` sets them apart.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
              default_values_t = ["10:10".to_string(), "10:-10".to_string(), "-10:10".to_string(), "-10:-10".to_string()])]
        dev: Vec<String>,
    },
    /// Print the tables of a report directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite configuration (TOML); defaults apply when omitted.
    config: Option<PathBuf>,
    #[arg(short, long, default_value = "report")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Use the full-size study grid.
    #[arg(long)]
    paper_scale: bool,
}

impl SuiteArgs {
    fn config(&self) -> Result<SuiteConfig> {
        let mut cfg = match &self.config {
            Some(p) => SuiteConfig::load(p)?,
            None => SuiteConfig::default(),
        };
        if self.paper_scale {
            cfg = cfg.paper_scale();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn load_line(path: &Path) -> Result<SequenceLineParameters> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(line) = toml::from_str::<SequenceLineParameters>(&text) {
        line.validate()?;
        return Ok(line);
    }
    Ok(GridScenario::from_toml_str(&text)?.line)
}

fn parse_dev(s: &str) -> Result<(f64, f64)> {
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad deviation {v:?}: {e}")))
    };
    match s.split_once(':') {
        Some((r, l)) => Ok((num(r)?, num(l)?)),
        None => num(s).map(|d| (d, d)),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, output, seed } => {
            let mut sc = GridScenario::load(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let w = simulate_measured(&sc, &SimOptions::default())?;
            w.save(&output)?;
            eprintln!("wrote {} samples to {}", w.len(), output.display());
        }
        Command::Analyze { waveform, line, window_ms, m, l } => {
            let w = WaveformRecord::load(&waveform)?;
            let line = load_line(&line)?;
            let cfg = DetectorConfig { window_ms, m_blocks: m, l, ..DetectorConfig::default() };
            for r in run_detection_stream(&w, &line, &cfg)? {
                println!("window={} start={} {}", r.index, r.start, r.verdict.to_record());
            }
        }
        Command::RunSuite { suite } => {
            let cfg = suite.config()?;
            let report = run_suite(&cfg, suite.jobs())?;
            report.write_dir(&suite.output)?;
            print!("{}", report.table());
        }
        Command::SweepNoise { suite, snr } => {
            let cfg = suite.config()?;
            let reports = sweep_noise(&cfg, &snr, suite.jobs())?;
            write_sweep_dir(&reports, &["snr_db"], |v| vec![v.snr_db.unwrap_or(f64::INFINITY)], &suite.output)?;
            print!("{}", render_report_dir(&suite.output)?);
        }
        Command::SweepParams { suite, dev } => {
            let cfg = suite.config()?;
            let devs = dev.iter().map(|d| parse_dev(d)).collect::<Result<Vec<_>>>()?;
            let reports = sweep_line_params(&cfg, &devs, suite.jobs())?;
            write_sweep_dir(&reports, &["r_dev_pct", "l_dev_pct"], |v| vec![v.r_dev_pct, v.l_dev_pct], &suite.output)?;
            print!("{}", render_report_dir(&suite.output)?);
        }
        Command::Report { dir } => print!("{}", render_report_dir(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_integrity() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

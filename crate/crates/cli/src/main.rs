//! `selene`: layout summary, sensor simulation, channel mapping, decoding and
//! BER sweeps from a run configuration.
//!
//! Exit codes: 0 ok, 2 configuration, 3 I/O, 4 no channels detected,
//! 5 ambiguous mapping.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use selene_core::eval::{calibration_schedule, traffic_schedule, SweepPoint, SweepVariable};
use selene_core::io::{
    read_events_any, read_map, sweep_csv, write_atomic, write_events, write_events_binary,
    write_map, RunConfig,
};
use selene_core::rx::{build_heatmap, extract_channel_boxes, map_channels};
use selene_core::{
    data_rate, decode_all, run_trial, simulate, sweep, DecodeMode, DecoderConfig, Error,
    EventStream, SensorStats,
};

#[derive(Parser)]
#[command(name = "selene", version, about = "Multi-channel passive VLC link simulator")]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print channel counts and the aggregate data rate.
    Layout,
    /// Simulate the receiver and write an event file. Statistics go to stderr.
    Simulate {
        #[arg(long, short)]
        out: PathBuf,
        /// Packed little-endian records instead of text.
        #[arg(long)]
        binary: bool,
        /// Record the channel-index broadcast instead of the traffic.
        #[arg(long)]
        calibration: bool,
    },
    /// Build a channel map from a calibration recording.
    Map {
        #[arg(long, short)]
        events: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Decode a recording: one line per channel, `index count payload...`.
    Decode {
        #[arg(long, short)]
        events: PathBuf,
        #[arg(long, short)]
        map: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides the configured decoder.
        #[arg(long)]
        mode: Option<DecodeMode>,
    },
    /// One end-to-end trial per configured decoder mode, as CSV.
    Eval {
        #[arg(long, short)]
        out: PathBuf,
    },
    /// One trial per grid value, as CSV.
    Sweep {
        /// refresh_rate, channel_count, decoder_mode, bandwidth or ambient.
        #[arg(long)]
        variable: SweepVariable,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format { .. } => 3,
        Error::NoChannelsDetected => 4,
        Error::AmbiguousMapping { .. } => 5,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> selene_core::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            // A missing config is a configuration problem, not an I/O one.
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default_config(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn print_stats(s: &SensorStats) {
    let mut line = format!(
        "generated={} unique={} duplicates={} noise={} dropped={} emitted={}",
        s.generated, s.unique, s.duplicates, s.noise, s.dropped, s.emitted
    );
    for r in 0..s.ring_generated.len() {
        if let Some(l) = s.ring_loss(r) {
            let _ = write!(line, " ring{r}_loss={l:.6}");
        }
    }
    eprintln!("{line}");
}

fn layout(cfg: &RunConfig) -> selene_core::Result<()> {
    let l = cfg.layout()?;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "N={} central={} peripheral={}",
        l.channel_count(),
        l.central_count(),
        l.peripheral_count()
    )?;
    writeln!(
        out,
        "fc_hz={} fp_hz={} bps={}",
        l.central_rate().hz(),
        l.peripheral_rate().hz(),
        data_rate(&l, 2)?
    )?;
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, out: &Path, binary: bool, calibration: bool) -> selene_core::Result<()> {
    let t = &cfg.trial;
    let fp = t.footprints()?;
    let (stream, stats) = if !calibration && t.packets_per_channel == 0 {
        (EventStream::empty(fp.width(), fp.height()), SensorStats::default())
    } else {
        let schedule = if calibration {
            calibration_schedule(t)?
        } else {
            traffic_schedule(t)?
        };
        simulate(&schedule, &fp, &t.optics, &t.sensor)?
    };
    if binary {
        write_events_binary(out, &stream)?;
    } else {
        write_events(out, &stream)?;
    }
    print_stats(&stats);
    Ok(())
}

fn cmd_map(cfg: &RunConfig, events: &Path, out: &Path) -> selene_core::Result<()> {
    let c = &cfg.trial.calibration;
    let stream = read_events_any(events)?;
    let hm = build_heatmap(&stream);
    let boxes = extract_channel_boxes(&hm, c.binarize_frac, c.morph_radius, c.connectivity)?;
    let layout = cfg.trial.layout.with_single_rate(c.base_rate);
    let outcome = map_channels(&stream, &boxes, &layout, c.base_rate)?;
    if !outcome.unresolved.is_empty() {
        eprintln!(
            "warning: {} of {} boxes carried no channel index: {:?}",
            outcome.unresolved.len(),
            boxes.len(),
            outcome.unresolved
        );
    }
    write_map(out, &outcome.map)?;
    eprintln!("mapped {} of {} channels", outcome.map.len(), layout.channel_count());
    Ok(())
}

fn payload_text(p: &[u8]) -> String {
    if p.iter().all(|b| b.is_ascii_graphic()) {
        String::from_utf8_lossy(p).into_owned()
    } else {
        p.iter().fold(String::from("0x"), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn cmd_decode(
    cfg: &RunConfig,
    events: &Path,
    map: &Path,
    out: &Path,
    mode: Option<DecodeMode>,
) -> selene_core::Result<()> {
    let layout = cfg.layout()?;
    let map = read_map(map, &layout)?;
    let stream = read_events_any(events)?;
    let dc = DecoderConfig {
        mode: mode.unwrap_or(cfg.trial.modes[0]),
        payload_len: cfg.trial.payload.len(),
    };
    let decoded = decode_all(&stream, &map, &layout, &dc)?;
    let mut text = String::new();
    let mut packets = 0;
    for d in &decoded {
        packets += d.packets.len();
        let _ = write!(text, "{} {}", d.channel, d.packets.len());
        for p in &d.packets {
            let _ = write!(text, " {}", payload_text(p.payload()));
        }
        text.push('\n');
    }
    write_atomic(out, text.as_bytes())?;
    eprintln!("{} mode: {packets} packets from {} channels", dc.mode.as_str(), decoded.len());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> selene_core::Result<()> {
    let results = run_trial(&cfg.trial, None)?;
    let point = SweepPoint {
        variable: SweepVariable::RefreshRate,
        value: cfg.trial.rates.central.hz().to_string(),
        outcome: Ok(results),
    };
    write_atomic(out, sweep_csv(&[point]).as_bytes())
}

fn cmd_sweep(cfg: &RunConfig, variable: SweepVariable, values: &[String], out: &Path) -> selene_core::Result<()> {
    let values: Vec<String> = values
        .iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    let points = sweep(variable, &values, &cfg.trial)?;
    for p in &points {
        if let Err(e) = &p.outcome {
            eprintln!("warning: {variable}={}: {e}", p.value);
        }
    }
    write_atomic(out, sweep_csv(&points).as_bytes())
}

fn run(cli: Cli) -> selene_core::Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Layout => layout(&cfg),
        Command::Simulate {
            out,
            binary,
            calibration,
        } => cmd_simulate(&cfg, &out, binary, calibration),
        Command::Map { events, out } => cmd_map(&cfg, &events, &out),
        Command::Decode {
            events,
            map,
            out,
            mode,
        } => cmd_decode(&cfg, &events, &map, &out, mode),
        Command::Eval { out } => cmd_eval(&cfg, &out),
        Command::Sweep {
            variable,
            values,
            out,
        } => cmd_sweep(&cfg, variable, &values, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("selene: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

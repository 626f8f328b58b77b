//! Run configuration and on-disk formats: event files (text and packed
//! binary), channel maps and result CSV. Every write is atomic.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{CalibrationConfig, RatePlan, SweepPoint, TrialConfig};
use crate::model::{
    build_layout, ChannelBox, ChannelLayout, ChannelMap, Event, EventStream, MapEntry, Polarity,
    SymbolRate,
};
use crate::optics::{Affine, OpticalConfig, Pose};
use crate::rx::{Connectivity, DecodeMode};
use crate::sensor::{SensorConfig, SensorPreset};

pub const EVENT_HEADER_PREFIX: &str = "# selene-events v1";
pub const BINARY_MAGIC: &[u8; 4] = b"SELB";
pub const BINARY_VERSION: u8 = 1;
pub const CSV_HEADER: &str =
    "variable,value,mode,N,fc_hz,fp_hz,ber,valid_frac,undef_channels,bps,events,dropped";

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "SELENE_SEED";

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn events_to_text(stream: &EventStream) -> String {
    let mut s = String::with_capacity(24 * stream.len() + 64);
    let _ = writeln!(
        s,
        "{EVENT_HEADER_PREFIX} width={} height={}",
        stream.width(),
        stream.height()
    );
    for e in stream.events() {
        let _ = writeln!(s, "{} {} {} {}", e.t, e.x, e.y, e.polarity.is_on() as u8);
    }
    s
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    write_atomic(path, events_to_text(stream).as_bytes())
}

fn parse_header(path: &Path, line: &str) -> Result<(u16, u16)> {
    let rest = line
        .strip_prefix(EVENT_HEADER_PREFIX)
        .ok_or_else(|| format_err(path, 1, "missing selene-events v1 header"))?;
    let mut width = None;
    let mut height = None;
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| format_err(path, 1, format!("bad header field {field:?}")))?;
        let v: u16 = v
            .parse()
            .map_err(|_| format_err(path, 1, format!("bad header value {field:?}")))?;
        match k {
            "width" => width = Some(v),
            "height" => height = Some(v),
            _ => return Err(format_err(path, 1, format!("unknown header field {k:?}"))),
        }
    }
    match (width, height) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format_err(path, 1, "header needs width and height")),
    }
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file"))??;
    let (w, h) = parse_header(path, &header)?;
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        let mut f = line.split(' ');
        let mut next = |name: &str| {
            f.next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| format_err(path, n, format!("missing {name}")))
        };
        let bad = |name: &str| format_err(path, n, format!("bad {name}"));
        let t: u64 = next("t")?.parse().map_err(|_| bad("t"))?;
        let x: u16 = next("x")?.parse().map_err(|_| bad("x"))?;
        let y: u16 = next("y")?.parse().map_err(|_| bad("y"))?;
        let polarity = match next("p")? {
            "1" => Polarity::On,
            "0" => Polarity::Off,
            _ => return Err(bad("p")),
        };
        if f.next().is_some() {
            return Err(format_err(path, n, "trailing fields"));
        }
        if x >= w || y >= h {
            return Err(format_err(path, n, "coordinates outside header dimensions"));
        }
        if events.last().is_some_and(|p: &Event| p.t > t) {
            return Err(format_err(path, n, "events out of time order"));
        }
        events.push(Event { t, x, y, polarity });
    }
    EventStream::new(w, h, events)
}

pub fn events_to_binary(stream: &EventStream) -> Vec<u8> {
    let mut b = Vec::with_capacity(9 + 13 * stream.len());
    b.extend_from_slice(BINARY_MAGIC);
    b.push(BINARY_VERSION);
    b.extend_from_slice(&stream.width().to_le_bytes());
    b.extend_from_slice(&stream.height().to_le_bytes());
    for e in stream.events() {
        b.extend_from_slice(&e.t.to_le_bytes());
        b.extend_from_slice(&e.x.to_le_bytes());
        b.extend_from_slice(&e.y.to_le_bytes());
        b.push(e.polarity.is_on() as u8);
    }
    b
}

pub fn write_events_binary(path: &Path, stream: &EventStream) -> Result<()> {
    write_atomic(path, &events_to_binary(stream))
}

pub fn read_events_binary(path: &Path) -> Result<EventStream> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || &bytes[..4] != BINARY_MAGIC {
        return Err(format_err(path, 0, "missing SELB magic"));
    }
    if bytes[4] != BINARY_VERSION {
        return Err(format_err(path, 0, format!("unsupported version {}", bytes[4])));
    }
    let w = u16::from_le_bytes([bytes[5], bytes[6]]);
    let h = u16::from_le_bytes([bytes[7], bytes[8]]);
    let body = &bytes[9..];
    if body.len() % 13 != 0 {
        return Err(format_err(path, 0, "truncated record"));
    }
    let mut events = Vec::with_capacity(body.len() / 13);
    for (i, r) in body.chunks_exact(13).enumerate() {
        let polarity = match r[12] {
            1 => Polarity::On,
            0 => Polarity::Off,
            p => return Err(format_err(path, i + 1, format!("bad polarity {p}"))),
        };
        events.push(Event {
            t: u64::from_le_bytes(r[..8].try_into().expect("8 bytes")),
            x: u16::from_le_bytes([r[8], r[9]]),
            y: u16::from_le_bytes([r[10], r[11]]),
            polarity,
        });
    }
    EventStream::new(w, h, events)
}

/// Reads either event format, recognising the binary magic.
pub fn read_events_any(path: &Path) -> Result<EventStream> {
    let mut magic = [0u8; 4];
    let n = fs::File::open(path)?.read(&mut magic)?;
    if n == 4 && &magic == BINARY_MAGIC {
        read_events_binary(path)
    } else {
        read_events(path)
    }
}

pub fn map_to_text(map: &ChannelMap) -> String {
    let mut s = String::new();
    for e in map.entries() {
        let b = e.bbox;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            e.id.index, b.x0, b.y0, b.x1, b.y1, b.cx, b.cy
        );
    }
    s
}

pub fn write_map(path: &Path, map: &ChannelMap) -> Result<()> {
    write_atomic(path, map_to_text(map).as_bytes())
}

/// Reads a map file; indices must exist in `layout`.
pub fn read_map(path: &Path, layout: &ChannelLayout) -> Result<ChannelMap> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<u32> = line
            .split_whitespace()
            .map(|f| f.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(path, i + 1, "expected integers"))?;
        if v.len() != 7 {
            return Err(format_err(path, i + 1, "expected 7 fields"));
        }
        if v[0] as usize >= layout.channel_count() {
            return Err(format_err(path, i + 1, format!("index {} not in layout", v[0])));
        }
        let c: Vec<u16> = v[1..]
            .iter()
            .map(|&x| u16::try_from(x))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(path, i + 1, "coordinate out of range"))?;
        if c[0] > c[2] || c[1] > c[3] {
            return Err(format_err(path, i + 1, "inverted box"));
        }
        entries.push(MapEntry {
            id: layout.channel(v[0]),
            bbox: ChannelBox {
                x0: c[0],
                y0: c[1],
                x1: c[2],
                y1: c[3],
                cx: c[4],
                cy: c[5],
            },
        });
    }
    ChannelMap::new(entries)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Result rows under [`CSV_HEADER`], one per (point, mode). A failed point
/// yields one row with its error in the `mode` column and empty metrics.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for p in points {
        match &p.outcome {
            Ok(results) => {
                for r in results {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        p.variable,
                        p.value,
                        r.mode.as_str(),
                        r.channel_count,
                        r.fc_hz,
                        r.fp_hz,
                        opt_num(r.ber.mean_ber),
                        r.ber.valid_frac,
                        r.ber.undefined_channels,
                        r.bps,
                        r.stats.emitted,
                        r.stats.dropped
                    );
                }
            }
            Err(e) => {
                let msg: String = e.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
                let _ = writeln!(s, "{},{},error: {msg},,,,,,,,,", p.variable, p.value);
            }
        }
    }
    s
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    layout: RawLayout,
    #[serde(default)]
    rates: RawRates,
    #[serde(default)]
    camera: RawCamera,
    #[serde(default)]
    optics: RawOptics,
    #[serde(default)]
    sensor: RawSensor,
    #[serde(default)]
    traffic: RawTraffic,
    #[serde(default)]
    calibration: RawCalibration,
    #[serde(default)]
    decode: RawDecode,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawLayout {
    mirror_cols: u32,
    mirror_rows: u32,
    block_size: u32,
    guard: u32,
    grid_cols: u32,
    grid_rows: u32,
}

impl Default for RawLayout {
    fn default() -> Self {
        Self {
            mirror_cols: 912,
            mirror_rows: 1140,
            block_size: 8,
            guard: 1,
            grid_cols: 57,
            grid_rows: 35,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawRates {
    fc_hz: f64,
    /// Defaults to `fc_hz / 2` when `d > 0`, else `fc_hz`.
    fp_hz: Option<f64>,
    d: f64,
}

impl Default for RawRates {
    fn default() -> Self {
        Self {
            fc_hz: 588.0,
            fp_hz: None,
            d: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCamera {
    width: u16,
    height: u16,
    scale: f64,
    rotation_deg: f64,
    translate_x: f64,
    translate_y: f64,
}

impl Default for RawCamera {
    fn default() -> Self {
        Self {
            // Odd sizes keep block edges off pixel centers: 3x3 footprints.
            width: 347,
            height: 261,
            scale: 0.375,
            rotation_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptics {
    ambient_lux: Option<f64>,
    on_lux: Option<f64>,
    attenuation: Option<f64>,
    footprint_margin: Option<f64>,
    crosstalk: Option<f64>,
    /// `[a, b, c, d, e, f]`: pixel = (a x + b y + c, d x + e y + f).
    affine: Option<[f64; 6]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    preset: Option<String>,
    theta_on: Option<f64>,
    theta_off: Option<f64>,
    i_dark: Option<f64>,
    dup_spacing_us: Option<u64>,
    base_delay_us: Option<f64>,
    radial_delay_coeff_us: Option<f64>,
    readout_bandwidth: Option<f64>,
    queue_capacity: Option<usize>,
    noise_rate: Option<f64>,
    off_noise_rate: Option<f64>,
    optical_center: Option<[f64; 2]>,
    carry_residual: Option<bool>,
    rings: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTraffic {
    payload: String,
    packets_per_channel: usize,
    idle_symbols: usize,
    stagger: bool,
}

impl Default for RawTraffic {
    fn default() -> Self {
        Self {
            payload: "good".into(),
            packets_per_channel: 30,
            idle_symbols: 0,
            stagger: true,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCalibration {
    base_rate_hz: f64,
    duration_s: f64,
    stagger: bool,
}

impl Default for RawCalibration {
    fn default() -> Self {
        Self {
            base_rate_hz: 588.0,
            duration_s: 1.0,
            stagger: true,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDecode {
    /// "relative", "absolute" or "both".
    mode: String,
    binarize_frac: f64,
    morph_radius: usize,
    connectivity: u8,
}

impl Default for RawDecode {
    fn default() -> Self {
        Self {
            mode: "relative".into(),
            binarize_frac: 0.2,
            morph_radius: 1,
            connectivity: 4,
        }
    }
}

/// A validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub trial: TrialConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// The built-in configuration: 57x35 grid, ideal sensor, 588 Hz.
    pub fn default_config() -> Self {
        RawConfig::default()
            .validate()
            .expect("built-in defaults are valid")
    }

    /// Replaces the seed with `SELENE_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.trial.sensor.rng_seed = seed;
    }

    pub fn layout(&self) -> Result<ChannelLayout> {
        self.trial.rated_layout()
    }
}

fn cfg_err(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::LayoutDoesNotFit { .. } => e,
        other => Error::Config(other.to_string()),
    }
}

impl RawConfig {
    fn validate(self) -> Result<RunConfig> {
        let l = &self.layout;
        let layout = build_layout(
            l.mirror_cols,
            l.mirror_rows,
            l.block_size,
            l.guard,
            l.grid_cols,
            l.grid_rows,
        )
        .map_err(cfg_err)?;

        let rate = |name: &str, hz: f64| {
            SymbolRate::from_hz(hz).map_err(|e| Error::Config(format!("{name}: {e}")))
        };
        let r = &self.rates;
        let fc = rate("rates.fc_hz", r.fc_hz)?;
        let rates = match (r.d, r.fp_hz) {
            (d, _) if !(d >= 0.0 && d.is_finite()) => {
                return Err(Error::Config(format!("rates.d must be >= 0, got {d}")))
            }
            (d, None) if d > 0.0 => RatePlan::dual(fc, d),
            (d, Some(fp)) if d > 0.0 => RatePlan {
                central: fc,
                peripheral: rate("rates.fp_hz", fp)?,
                radius: d,
            },
            (_, _) => RatePlan::single(fc),
        };
        rates.apply(&layout).map_err(cfg_err)?;

        let o = &self.optics;
        let def = OpticalConfig::default();
        let optics = OpticalConfig {
            ambient_lux: o.ambient_lux.unwrap_or(def.ambient_lux),
            channel_on_lux: o.on_lux.unwrap_or(def.channel_on_lux),
            attenuation: o.attenuation.unwrap_or(def.attenuation),
            footprint_margin: o.footprint_margin.unwrap_or(def.footprint_margin),
            crosstalk: o.crosstalk.unwrap_or(def.crosstalk),
        };
        optics.validate().map_err(cfg_err)?;

        let s = &self.sensor;
        let preset: SensorPreset = s.preset.as_deref().unwrap_or("ideal").parse()?;
        let mut sensor = SensorConfig::preset(preset);
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = s.$f { sensor.$f = v; } )* };
        }
        set!(
            theta_on,
            theta_off,
            i_dark,
            dup_spacing_us,
            base_delay_us,
            radial_delay_coeff_us,
            readout_bandwidth,
            queue_capacity,
            noise_rate,
            off_noise_rate,
            carry_residual,
            rings
        );
        if let Some([x, y]) = s.optical_center {
            sensor.optical_center = Some((x, y));
        }
        let seed = self.seed.unwrap_or(0);
        sensor.rng_seed = seed;
        sensor.validate().map_err(cfg_err)?;

        let t = &self.traffic;
        if t.payload.is_empty() {
            return Err(Error::Config("traffic.payload must not be empty".into()));
        }

        let c = &self.calibration;
        if !(c.duration_s >= 0.0 && c.duration_s.is_finite()) {
            return Err(Error::Config("calibration.duration_s must be >= 0".into()));
        }
        let d = &self.decode;
        if !(d.binarize_frac > 0.0 && d.binarize_frac < 1.0) {
            return Err(Error::Config("decode.binarize_frac must lie in (0, 1)".into()));
        }
        let modes = match d.mode.as_str() {
            "both" => vec![DecodeMode::Relative, DecodeMode::Absolute],
            m => vec![m.parse()?],
        };
        let connectivity: Connectivity = d.connectivity.to_string().parse()?;
        let calibration = CalibrationConfig {
            base_rate: rate("calibration.base_rate_hz", c.base_rate_hz)?,
            duration_s: c.duration_s,
            binarize_frac: d.binarize_frac,
            morph_radius: d.morph_radius,
            connectivity,
            stagger: c.stagger,
        };

        let cam = &self.camera;
        if cam.width == 0 || cam.height == 0 {
            return Err(Error::Config("camera dimensions must be >= 1".into()));
        }
        if !(cam.scale > 0.0 && cam.scale.is_finite()) {
            return Err(Error::Config("camera.scale must be > 0".into()));
        }
        let affine = o.affine.map(|coeffs| Affine { coeffs });
        if affine.is_some_and(|a| a.inverse().is_none()) {
            return Err(Error::Config("optics.affine is not invertible".into()));
        }
        Ok(RunConfig {
            trial: TrialConfig {
                layout,
                rates,
                camera_width: cam.width,
                camera_height: cam.height,
                pose: Pose {
                    scale: cam.scale,
                    rotation_deg: cam.rotation_deg,
                    translate_x: cam.translate_x,
                    translate_y: cam.translate_y,
                },
                affine,
                optics,
                sensor,
                payload: t.payload.as_bytes().to_vec(),
                packets_per_channel: t.packets_per_channel,
                idle_symbols: t.idle_symbols,
                stagger: t.stagger,
                calibration,
                modes,
                active: None,
            },
            seed,
        })
    }
}

/// Buffered text writer that lands atomically on `finish`.
pub struct AtomicText {
    path: std::path::PathBuf,
    inner: BufWriter<tempfile::NamedTempFile>,
}

impl AtomicText {
    pub fn create(path: &Path) -> Result<Self> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        Ok(Self {
            path: path.to_path_buf(),
            inner: BufWriter::new(tempfile::NamedTempFile::new_in(dir)?),
        })
    }

    pub fn finish(self) -> Result<()> {
        let tmp = self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }
}

impl Write for AtomicText {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.inner.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

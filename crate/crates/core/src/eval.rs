//! Bit error rate, end-to-end trials, parameter sweeps and the maximum-rate
//! search.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{data_rate_of, ChannelLayout, ChannelMap, Packet, SymbolRate};
use crate::modulator::{
    fill_payloads, mapping_schedule_with, modulate, stagger_streams, FrameSchedule,
};
use crate::optics::{project_channels, Affine, Footprints, OpticalConfig, Pose, ProjectionModel};
use crate::rx::{
    build_heatmap, decode_all, extract_channel_boxes, map_channels, ChannelDecode, Connectivity,
    DecodeMode, DecoderConfig,
};
use crate::sensor::{simulate, SensorConfig, SensorStats};

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelBer {
    pub channel: u32,
    pub packets: usize,
    pub bits_compared: u64,
    pub bit_errors: u64,
    /// `None` when no valid packet arrived.
    pub ber: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerReport {
    pub channels: Vec<ChannelBer>,
    /// Mean of the defined per-channel BERs; `None` if none is defined.
    pub mean_ber: Option<f64>,
    pub undefined_channels: usize,
    /// Valid packets received over packets transmitted.
    pub valid_frac: f64,
}

/// Per-channel BER of received payloads against the transmitted one.
///
/// `decodes` holds one entry per transmitting channel; channels that were
/// never decoded should be passed with no packets so they count as undefined.
pub fn ber(tx_payload: &[u8], decodes: &[ChannelDecode], packets_sent: usize) -> BerReport {
    let bits_per_packet = 8 * tx_payload.len() as u64;
    let channels: Vec<ChannelBer> = decodes
        .iter()
        .map(|d| {
            let bit_errors = d
                .packets
                .iter()
                .map(|p| hamming(p.payload(), tx_payload))
                .sum();
            let bits_compared = bits_per_packet * d.packets.len() as u64;
            ChannelBer {
                channel: d.channel,
                packets: d.packets.len(),
                bits_compared,
                bit_errors,
                ber: (bits_compared > 0).then(|| bit_errors as f64 / bits_compared as f64),
            }
        })
        .collect();
    let defined: Vec<f64> = channels.iter().filter_map(|c| c.ber).collect();
    let received: usize = channels.iter().map(|c| c.packets).sum();
    let sent = packets_sent * channels.len();
    BerReport {
        mean_ber: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        undefined_channels: channels.len() - defined.len(),
        valid_frac: if sent == 0 {
            0.0
        } else {
            received as f64 / sent as f64
        },
        channels,
    }
}

fn hamming(a: &[u8], b: &[u8]) -> u64 {
    let common: u64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x ^ y).count_ones() as u64)
        .sum();
    // A length mismatch counts every unmatched bit as wrong.
    common + 8 * a.len().abs_diff(b.len()) as u64
}

/// Refresh-rate assignment applied to a layout's grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePlan {
    pub central: SymbolRate,
    pub peripheral: SymbolRate,
    /// Central-disc radius in channel units; 0 means a single rate.
    pub radius: f64,
}

impl RatePlan {
    pub fn single(rate: SymbolRate) -> Self {
        Self {
            central: rate,
            peripheral: rate,
            radius: 0.0,
        }
    }

    /// Central channels at `f_c`, the rest at `f_c / 2`.
    pub fn dual(f_c: SymbolRate, radius: f64) -> Self {
        Self {
            central: f_c,
            peripheral: f_c.halved(),
            radius,
        }
    }

    pub fn is_single(&self) -> bool {
        self.radius == 0.0 || self.central == self.peripheral
    }

    pub fn apply(&self, layout: &ChannelLayout) -> Result<ChannelLayout> {
        if self.is_single() {
            Ok(layout.with_single_rate(self.peripheral))
        } else {
            layout.classify_rates(self.radius, self.central, self.peripheral)
        }
    }

    /// Same plan with the central rate moved to `f_c` and the peripheral rate
    /// scaled in proportion.
    pub fn with_central(&self, f_c: SymbolRate) -> Self {
        if self.is_single() {
            return Self {
                radius: self.radius,
                ..Self::single(f_c)
            };
        }
        let ratio = self.peripheral.millihertz() as f64 / self.central.millihertz() as f64;
        let fp = if self.peripheral == self.central.halved() {
            f_c.halved()
        } else {
            SymbolRate::from_millihertz((f_c.millihertz() as f64 * ratio).round() as u64)
                .unwrap_or(f_c.halved())
        };
        Self {
            central: f_c,
            peripheral: fp,
            radius: self.radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub base_rate: SymbolRate,
    pub duration_s: f64,
    pub binarize_frac: f64,
    pub morph_radius: usize,
    pub connectivity: Connectivity,
    /// Stagger the index broadcast across channels.
    pub stagger: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            base_rate: SymbolRate::from_millihertz(588_000).expect("nonzero"),
            duration_s: 1.0,
            binarize_frac: 0.2,
            morph_radius: 1,
            connectivity: Connectivity::Four,
            stagger: true,
        }
    }
}

/// Everything one end-to-end trial needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    /// Grid geometry; rates come from `rates`.
    pub layout: ChannelLayout,
    pub rates: RatePlan,
    pub camera_width: u16,
    pub camera_height: u16,
    pub pose: Pose,
    /// Explicit mirror-to-pixel transform; overrides `pose` when set.
    pub affine: Option<Affine>,
    pub optics: OpticalConfig,
    pub sensor: SensorConfig,
    pub payload: Vec<u8>,
    pub packets_per_channel: usize,
    pub idle_symbols: usize,
    /// Start each channel's packet train at its own pseudo-random phase.
    pub stagger: bool,
    pub calibration: CalibrationConfig,
    pub modes: Vec<DecodeMode>,
    /// Transmitting channels; `None` means all of them.
    pub active: Option<Vec<u32>>,
}

impl TrialConfig {
    pub fn rated_layout(&self) -> Result<ChannelLayout> {
        self.rates.apply(&self.layout)
    }

    pub fn footprints(&self) -> Result<Footprints> {
        let model = match self.affine {
            Some(a) => ProjectionModel::new(a, self.camera_width, self.camera_height)?,
            None => ProjectionModel::posed(
                &self.layout,
                self.camera_width,
                self.camera_height,
                self.pose,
            )?,
        };
        project_channels(&self.layout, &model, self.optics.footprint_margin)
    }

    fn active_channels(&self) -> Vec<u32> {
        match &self.active {
            Some(a) => {
                let mut a = a.clone();
                a.sort_unstable();
                a.dedup();
                a
            }
            None => (0..self.layout.channel_count() as u32).collect(),
        }
    }
}

/// The `k` channels closest to the grid center (ties by index).
pub fn centered_channels(layout: &ChannelLayout, k: usize) -> Result<Vec<u32>> {
    if k == 0 || k > layout.channel_count() {
        return Err(Error::InvalidParameter(format!(
            "channel count {k} outside 1..={}",
            layout.channel_count()
        )));
    }
    let mut ids: Vec<(i64, u32)> = layout
        .channels()
        .map(|c| ((c.cx2 as i64).pow(2) + (c.cy2 as i64).pow(2), c.index))
        .collect();
    ids.sort_unstable();
    let mut keep: Vec<u32> = ids[..k].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();
    Ok(keep)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub map: ChannelMap,
    pub unresolved: Vec<usize>,
    pub boxes: usize,
    pub stats: SensorStats,
}

/// Runs the calibration phase: index broadcast, heatmap, boxes, mapping.
pub fn calibrate(cfg: &TrialConfig, footprints: &Footprints) -> Result<Calibration> {
    let c = &cfg.calibration;
    let layout = cfg.layout.with_single_rate(c.base_rate);
    let schedule = calibration_schedule(cfg)?;
    let (stream, stats) = simulate(&schedule, footprints, &cfg.optics, &cfg.sensor)?;
    let hm = build_heatmap(&stream);
    let boxes = extract_channel_boxes(&hm, c.binarize_frac, c.morph_radius, c.connectivity)?;
    let out = map_channels(&stream, &boxes, &layout, c.base_rate)?;
    Ok(Calibration {
        map: out.map,
        unresolved: out.unresolved,
        boxes: boxes.len(),
        stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub mode: DecodeMode,
    pub channel_count: usize,
    pub fc_hz: f64,
    pub fp_hz: f64,
    pub ber: BerReport,
    pub bps: f64,
    pub stats: SensorStats,
}

impl TrialResult {
    /// Defined, at or under `target`, and no channel without packets.
    pub fn meets(&self, target: f64) -> bool {
        self.ber.undefined_channels == 0 && self.ber.mean_ber.is_some_and(|b| b <= target)
    }
}

/// The experiment traffic of a trial: framed payloads at each channel's
/// rate, staggered if configured, with inactive channels kept dark.
pub fn traffic_schedule(cfg: &TrialConfig) -> Result<FrameSchedule> {
    let layout = cfg.rated_layout()?;
    let mut streams =
        fill_payloads(&layout, &cfg.payload, cfg.packets_per_channel, cfg.idle_symbols)?;
    if cfg.stagger {
        stagger_streams(&mut streams, 8 * (cfg.payload.len() + 2) + cfg.idle_symbols);
    }
    let schedule = modulate(&layout, &streams)?;
    if cfg.active.is_none() {
        return Ok(schedule);
    }
    let mut on = vec![false; layout.channel_count()];
    for c in cfg.active_channels() {
        *on.get_mut(c as usize).ok_or_else(|| {
            Error::InvalidParameter(format!("active channel {c} not in layout"))
        })? = true;
    }
    Ok(schedule.restricted(|c| on[c as usize]))
}

/// The index broadcast recorded during calibration.
pub fn calibration_schedule(cfg: &TrialConfig) -> Result<FrameSchedule> {
    let c = &cfg.calibration;
    let layout = cfg.layout.with_single_rate(c.base_rate);
    mapping_schedule_with(&layout, c.base_rate, c.duration_s, c.stagger)
}

/// One simulation, decoded once per configured mode.
///
/// A cached map skips the calibration phase.
pub fn run_trial(cfg: &TrialConfig, cached_map: Option<&ChannelMap>) -> Result<Vec<TrialResult>> {
    if cfg.modes.is_empty() {
        return Err(Error::InvalidParameter("no decoder mode selected".into()));
    }
    let layout = cfg.rated_layout()?;
    let footprints = cfg.footprints()?;
    let calibrated;
    let map = match cached_map {
        Some(m) => m,
        None => {
            calibrated = calibrate(cfg, &footprints)?;
            &calibrated.map
        }
    };
    let active = cfg.active_channels();
    let schedule = traffic_schedule(cfg)?;
    let (stream, stats) = simulate(&schedule, &footprints, &cfg.optics, &cfg.sensor)?;
    let map = map.restricted(&active);
    let bps = data_rate_of(&layout, 2, &active)?;
    let mut results = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let decoded = decode_all(
            &stream,
            &map,
            &layout,
            &DecoderConfig {
                mode,
                payload_len: cfg.payload.len(),
            },
        )?;
        // Channels missing from the map decode to nothing.
        let mut all: Vec<ChannelDecode> = active
            .iter()
            .map(|&c| ChannelDecode {
                channel: c,
                bits: Vec::new(),
                packets: Vec::<Packet>::new(),
            })
            .collect();
        for d in decoded {
            if let Ok(i) = active.binary_search(&d.channel) {
                all[i] = d;
            }
        }
        results.push(TrialResult {
            mode,
            channel_count: active.len(),
            fc_hz: layout.central_rate().hz(),
            fp_hz: layout.peripheral_rate().hz(),
            ber: ber(&cfg.payload, &all, cfg.packets_per_channel),
            bps,
            stats: stats.clone(),
        });
    }
    Ok(results)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    RefreshRate,
    ChannelCount,
    DecoderMode,
    Bandwidth,
    Ambient,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RefreshRate => "refresh_rate",
            Self::ChannelCount => "channel_count",
            Self::DecoderMode => "decoder_mode",
            Self::Bandwidth => "bandwidth",
            Self::Ambient => "ambient",
        }
    }

    /// Whether a point changes what the calibration phase sees.
    fn affects_calibration(self) -> bool {
        matches!(self, Self::Bandwidth | Self::Ambient)
    }

    /// The base configuration with this variable set to `value`.
    pub fn apply(self, base: &TrialConfig, value: &str) -> Result<TrialConfig> {
        let num = || -> Result<f64> {
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: bad value {value:?}", self.as_str())))
        };
        let mut cfg = base.clone();
        match self {
            Self::RefreshRate => cfg.rates = base.rates.with_central(SymbolRate::from_hz(num()?)?),
            Self::ChannelCount => {
                let k = num()?;
                if k.fract() != 0.0 || k < 1.0 {
                    return Err(Error::Config(format!("channel_count: bad value {value:?}")));
                }
                cfg.active = Some(centered_channels(&base.layout, k as usize)?);
            }
            Self::DecoderMode => cfg.modes = vec![value.trim().parse()?],
            Self::Bandwidth => cfg.sensor.readout_bandwidth = num()?,
            Self::Ambient => cfg.optics.ambient_lux = num()?,
        }
        cfg.sensor.validate()?;
        cfg.optics.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refresh_rate" => Ok(Self::RefreshRate),
            "channel_count" => Ok(Self::ChannelCount),
            "decoder_mode" => Ok(Self::DecoderMode),
            "bandwidth" => Ok(Self::Bandwidth),
            "ambient" => Ok(Self::Ambient),
            other => Err(Error::Config(format!("unknown sweep variable {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub variable: SweepVariable,
    pub value: String,
    /// Results per decoder mode, or the error that stopped this point.
    pub outcome: std::result::Result<Vec<TrialResult>, String>,
}

/// One trial per grid value, in grid order; point `i` uses seed
/// `base.sensor.rng_seed + i`. Failed points are recorded, not fatal.
pub fn sweep(variable: SweepVariable, values: &[String], base: &TrialConfig) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let shared_map = if variable.affects_calibration() {
        None
    } else {
        Some(calibrate(base, &base.footprints()?)?.map)
    };
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, value)| {
            let outcome = variable.apply(base, value).and_then(|mut cfg| {
                cfg.sensor.rng_seed = base.sensor.rng_seed.wrapping_add(i as u64);
                run_trial(&cfg, shared_map.as_ref())
            });
            SweepPoint {
                variable,
                value: value.clone(),
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Feasible {
        fc_hz: u32,
        result: TrialResult,
        /// The search stopped at the configured ceiling.
        at_ceiling: bool,
    },
    Infeasible,
}

/// Largest integer central rate in `[lo_hz, hi_hz]` whose trial meets
/// `ber_target` in `mode`, by binary search (compliance assumed monotone in
/// rate). The plan's shape (single, or dual with its radius) is kept.
pub fn max_rate_search(
    base: &TrialConfig,
    mode: DecodeMode,
    ber_target: f64,
    lo_hz: u32,
    hi_hz: u32,
    map: &ChannelMap,
) -> Result<SearchOutcome> {
    if !(0.0..1.0).contains(&ber_target) {
        return Err(Error::InvalidParameter(format!(
            "BER target must lie in [0, 1), got {ber_target}"
        )));
    }
    if lo_hz == 0 || lo_hz > hi_hz {
        return Err(Error::InvalidParameter(format!("bad rate range {lo_hz}..={hi_hz}")));
    }
    let trial = |hz: u32| -> Result<TrialResult> {
        let mut cfg = base.clone();
        cfg.rates = base
            .rates
            .with_central(SymbolRate::from_millihertz(hz as u64 * 1000)?);
        cfg.modes = vec![mode];
        Ok(run_trial(&cfg, Some(map))?.remove(0))
    };
    let top = trial(hi_hz)?;
    if top.meets(ber_target) {
        return Ok(SearchOutcome::Feasible {
            fc_hz: hi_hz,
            result: top,
            at_ceiling: true,
        });
    }
    let bottom = trial(lo_hz)?;
    if !bottom.meets(ber_target) {
        return Ok(SearchOutcome::Infeasible);
    }
    let (mut good, mut good_result, mut bad) = (lo_hz, bottom, hi_hz);
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        let r = trial(mid)?;
        if r.meets(ber_target) {
            good = mid;
            good_result = r;
        } else {
            bad = mid;
        }
    }
    Ok(SearchOutcome::Feasible {
        fc_hz: good,
        result: good_result,
        at_ceiling: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_layout;

    fn decode(channel: u32, payloads: &[&[u8]]) -> ChannelDecode {
        ChannelDecode {
            channel,
            bits: Vec::new(),
            packets: payloads.iter().map(|p| Packet::new(p.to_vec()).unwrap()).collect(),
        }
    }

    #[test]
    fn perfect_packets_zero_ber() {
        let good: Vec<&[u8]> = vec![b"good"; 30];
        let r = ber(b"good", &[decode(0, &good)], 30);
        assert_eq!(r.channels[0].bits_compared, 960);
        assert_eq!(r.mean_ber, Some(0.0));
        assert_eq!(r.valid_frac, 1.0);
    }

    #[test]
    fn one_flipped_bit() {
        let mut p: Vec<&[u8]> = vec![b"good"; 29];
        p.push(b"goof");
        // 'd' ^ 'f' = 0b10: one bit.
        let r = ber(b"good", &[decode(3, &p)], 30);
        assert_eq!(r.channels[0].bit_errors, 1);
        assert_eq!(r.mean_ber, Some(1.0 / 960.0));
    }

    #[test]
    fn undefined_channels_are_counted() {
        let r = ber(b"good", &[decode(0, &[b"good"]), decode(1, &[])], 2);
        assert_eq!(r.undefined_channels, 1);
        assert_eq!(r.channels[1].ber, None);
        assert_eq!(r.mean_ber, Some(0.0));
        assert_eq!(r.valid_frac, 0.25);
        let none = ber(b"good", &[decode(0, &[])], 1);
        assert_eq!(none.mean_ber, None);
    }

    #[test]
    fn complement_is_all_errors() {
        let tx = b"good";
        let inv: Vec<u8> = tx.iter().map(|b| !b).collect();
        let r = ber(tx, &[decode(0, &[&inv])], 1);
        assert_eq!(r.mean_ber, Some(1.0));
    }

    #[test]
    fn rate_plan_scaling() {
        let hz = |v: f64| SymbolRate::from_hz(v).unwrap();
        let dual = RatePlan::dual(hz(677.0), 15.0);
        let moved = dual.with_central(hz(1001.0));
        assert_eq!(moved.peripheral.millihertz(), 500_500);
        let single = RatePlan::single(hz(588.0)).with_central(hz(900.0));
        assert!(single.is_single());
        assert_eq!(single.peripheral, hz(900.0));
    }

    #[test]
    fn centered_subsets() {
        let l = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        let one = centered_channels(&l, 1).unwrap();
        assert_eq!(one, vec![997]);
        assert_eq!(l.channel(997).radius(), 0.0);
        assert_eq!(centered_channels(&l, 1995).unwrap().len(), 1995);
        assert!(centered_channels(&l, 0).is_err());
        assert!(centered_channels(&l, 1996).is_err());
    }
}

//! Dynamic vision sensor model.
//!
//! Each pixel compares its log intensity against a memorized reference and
//! emits one event per whole threshold crossed, so large steps produce
//! same-polarity duplicates. Generated events then pass through a single
//! readout queue: detection delay grows with distance from the optical
//! center, the timestamping server handles `readout_bandwidth` events per
//! second, and arrivals that find the queue full are lost. Simultaneous
//! events are served center-first, which is what makes the periphery lose
//! events first under congestion.

use std::collections::VecDeque;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::model::{Event, EventStream, Polarity};
use crate::modulator::FrameSchedule;
use crate::optics::{Footprints, OpticalConfig, PixelTrace, Scene};

#[derive(Clone, Debug, PartialEq)]
pub struct SensorConfig {
    /// ON contrast threshold (natural-log units).
    pub theta_on: f64,
    pub theta_off: f64,
    /// Dark-current equivalent illuminance added before the log.
    pub i_dark: f64,
    /// Gap between successive duplicate events of one step.
    pub dup_spacing_us: u64,
    pub base_delay_us: f64,
    /// Extra detection delay per pixel of distance from the optical center.
    pub radial_delay_coeff_us: f64,
    /// Events per second the timestamping server can stamp.
    pub readout_bandwidth: f64,
    pub queue_capacity: usize,
    /// Spurious ON events per pixel per second.
    pub noise_rate: f64,
    /// Spurious OFF events per pixel per second.
    pub off_noise_rate: f64,
    /// Defaults to the geometric center of the pixel array.
    pub optical_center: Option<(f64, f64)>,
    pub rng_seed: u64,
    /// Advance the reference by whole thresholds instead of resetting it to
    /// the new level, carrying the residual to the next step.
    pub carry_residual: bool,
    /// Number of equal-width radial rings used for loss statistics.
    pub rings: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            theta_on: 1.0,
            theta_off: 1.1,
            i_dark: 1.0,
            dup_spacing_us: 5,
            base_delay_us: 10.0,
            radial_delay_coeff_us: 0.05,
            readout_bandwidth: 200e6,
            queue_capacity: 1 << 20,
            noise_rate: 0.0,
            off_noise_rate: 0.0,
            optical_center: None,
            rng_seed: 0,
            carry_residual: false,
            rings: 4,
        }
    }
}

impl SensorConfig {
    /// One event per transition (with the default optics), no delay, no
    /// loss, no noise.
    pub fn ideal() -> Self {
        Self {
            theta_on: 3.5,
            theta_off: 3.85,
            base_delay_us: 0.0,
            radial_delay_coeff_us: 0.0,
            readout_bandwidth: 1e12,
            queue_capacity: usize::MAX,
            ..Self::default()
        }
    }

    /// Readout congestion fitted on the full 57x35 grid at 677 Hz (about
    /// 1.35 Mbps) with staggered packet phases: the offered load slightly
    /// exceeds `readout_bandwidth`, so the stamping backlog grows slowly.
    /// Gaps between nearby events stay close to true while absolute stamps
    /// drift by many symbols over a 30-packet run.
    pub fn congested() -> Self {
        Self {
            theta_on: 2.0,
            theta_off: 2.2,
            dup_spacing_us: 5,
            base_delay_us: 20.0,
            radial_delay_coeff_us: 0.2,
            readout_bandwidth: 19.2e6,
            queue_capacity: 2_000_000,
            ..Self::default()
        }
    }

    pub fn preset(p: SensorPreset) -> Self {
        match p {
            SensorPreset::Ideal => Self::ideal(),
            SensorPreset::Default => Self::default(),
            SensorPreset::Congested => Self::congested(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.theta_on > 0.0 && self.theta_off > 0.0) {
            return bad("thresholds must be > 0");
        }
        if !(self.i_dark >= 0.0) {
            return bad("i_dark must be >= 0");
        }
        if !(self.readout_bandwidth > 0.0) {
            return bad("readout bandwidth must be > 0");
        }
        if self.queue_capacity == 0 {
            return bad("queue capacity must be >= 1");
        }
        if !(self.base_delay_us >= 0.0 && self.radial_delay_coeff_us >= 0.0) {
            return bad("delays must be >= 0");
        }
        if !(self.noise_rate >= 0.0 && self.off_noise_rate >= 0.0) {
            return bad("noise rates must be >= 0");
        }
        if self.rings == 0 {
            return bad("ring count must be >= 1");
        }
        Ok(())
    }

    /// Readout service time in picoseconds; 0 from 1e12 events/s up.
    fn service_ps(&self) -> u64 {
        let s = 1e12 / self.readout_bandwidth;
        if s <= 1.0 {
            0
        } else {
            s.floor() as u64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensorPreset {
    Ideal,
    Default,
    Congested,
}

impl FromStr for SensorPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Self::Ideal),
            "default" => Ok(Self::Default),
            "congested" => Ok(Self::Congested),
            other => Err(Error::Config(format!("unknown sensor preset {other:?}"))),
        }
    }
}

/// Event before readout: generation time, pixel, polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawEvent {
    pub gen_t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct GenCounts {
    unique: u64,
    duplicates: u64,
    noise: u64,
}

fn pixel_rng(seed: u64, x: u16, y: u16) -> ChaCha8Rng {
    // splitmix64 finalizer over (seed, pixel)
    let mut z = seed ^ ((y as u64) << 16 | x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn poisson_times(rng: &mut ChaCha8Rng, rate_hz: f64, duration_us: u64, out: &mut Vec<u64>) {
    if rate_hz <= 0.0 || duration_us == 0 {
        return;
    }
    let exp = Exp::new(rate_hz / 1e6).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= duration_us as f64 {
            break;
        }
        out.push(t as u64);
    }
}

fn generate_into(
    trace: &PixelTrace,
    cfg: &SensorConfig,
    duration_us: u64,
    out: &mut Vec<(u64, Polarity)>,
) -> Result<GenCounts> {
    let log = |lux: f64| {
        let v = lux + cfg.i_dark;
        if v <= 0.0 {
            Err(Error::LogUndefined { lux })
        } else {
            Ok(v.ln())
        }
    };
    let mut counts = GenCounts::default();
    let mut steps = trace.steps.iter();
    let Some(&(_, first)) = steps.next() else {
        return Ok(counts);
    };
    let mut reference = log(first)?;
    for &(t, lux) in steps {
        let level = log(lux)?;
        let delta = level - reference;
        let (polarity, theta, sign) = if delta >= 0.0 {
            (Polarity::On, cfg.theta_on, 1.0)
        } else {
            (Polarity::Off, cfg.theta_off, -1.0)
        };
        // Tolerance absorbs rounding in the log difference of exact multiples.
        let k = (delta.abs() / theta + 1e-9).floor() as u64;
        for j in 0..k {
            out.push((t + j * cfg.dup_spacing_us, polarity));
        }
        if k > 0 {
            counts.unique += 1;
            counts.duplicates += k - 1;
        }
        reference = if cfg.carry_residual {
            reference + sign * k as f64 * theta
        } else {
            level
        };
    }
    if cfg.noise_rate > 0.0 || cfg.off_noise_rate > 0.0 {
        let mut rng = pixel_rng(cfg.rng_seed, trace.x, trace.y);
        let mut times = Vec::new();
        poisson_times(&mut rng, cfg.noise_rate, duration_us, &mut times);
        let on_noise = times.len();
        poisson_times(&mut rng, cfg.off_noise_rate, duration_us, &mut times);
        counts.noise += times.len() as u64;
        out.extend(times.iter().enumerate().map(|(i, &t)| {
            (t, if i < on_noise { Polarity::On } else { Polarity::Off })
        }));
        out.sort_by_key(|e| e.0);
    }
    Ok(counts)
}

/// Events generated by one pixel over `[0, duration_us)`, in time order.
///
/// Spurious noise events are drawn from a Poisson process seeded by
/// `(rng_seed, pixel)`, so results do not depend on pixel processing order.
pub fn generate_events(
    trace: &PixelTrace,
    cfg: &SensorConfig,
    duration_us: u64,
) -> Result<Vec<RawEvent>> {
    let mut out = Vec::new();
    generate_into(trace, cfg, duration_us, &mut out)?;
    Ok(out
        .into_iter()
        .map(|(gen_t, polarity)| RawEvent {
            gen_t,
            x: trace.x,
            y: trace.y,
            polarity,
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReadoutStats {
    pub emitted: u64,
    pub dropped: u64,
    pub ring_generated: Vec<u64>,
    pub ring_dropped: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SensorStats {
    /// All events entering readout, noise included.
    pub generated: u64,
    /// Steps that produced at least one event.
    pub unique: u64,
    pub duplicates: u64,
    pub noise: u64,
    pub dropped: u64,
    pub emitted: u64,
    pub ring_generated: Vec<u64>,
    pub ring_dropped: Vec<u64>,
}

impl SensorStats {
    pub fn ring_loss(&self, ring: usize) -> Option<f64> {
        let g = *self.ring_generated.get(ring)?;
        (g > 0).then(|| self.ring_dropped[ring] as f64 / g as f64)
    }

    /// Loss fraction of the innermost ring that saw events.
    pub fn central_loss(&self) -> Option<f64> {
        (0..self.ring_generated.len()).find_map(|r| self.ring_loss(r))
    }

    /// Loss fraction of the outermost ring that saw events.
    pub fn peripheral_loss(&self) -> Option<f64> {
        (0..self.ring_generated.len()).rev().find_map(|r| self.ring_loss(r))
    }

    pub fn duplicate_ratio(&self) -> f64 {
        if self.unique == 0 {
            0.0
        } else {
            self.duplicates as f64 / self.unique as f64
        }
    }
}

/// Per-pixel readout geometry: detection delay, center-first rank, ring.
struct Geometry {
    width: usize,
    delay_ps: Vec<u64>,
    rank: Vec<u32>,
    by_rank: Vec<u32>,
    ring: Vec<u16>,
    rings: usize,
}

impl Geometry {
    fn new(width: u16, height: u16, cfg: &SensorConfig) -> Self {
        let (w, h) = (width as usize, height as usize);
        let (cx, cy) = cfg
            .optical_center
            .unwrap_or(((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0));
        let dist = |i: usize| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
        };
        let max_dist = [(0.0, 0.0), (w as f64 - 1.0, 0.0), (0.0, h as f64 - 1.0), (w as f64 - 1.0, h as f64 - 1.0)]
            .iter()
            .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .fold(0.0, f64::max)
            .max(1e-9);
        let n = w * h;
        let dists: Vec<f64> = (0..n).map(dist).collect();
        let delay_ps = dists
            .iter()
            .map(|d| ((cfg.base_delay_us + cfg.radial_delay_coeff_us * d) * 1e6).round() as u64)
            .collect();
        let ring = dists
            .iter()
            .map(|d| ((d / max_dist * cfg.rings as f64) as usize).min(cfg.rings - 1) as u16)
            .collect();
        let mut by_rank: Vec<u32> = (0..n as u32).collect();
        by_rank.sort_by(|&a, &b| dists[a as usize].total_cmp(&dists[b as usize]).then(a.cmp(&b)));
        let mut rank = vec![0u32; n];
        for (r, &p) in by_rank.iter().enumerate() {
            rank[p as usize] = r as u32;
        }
        Self {
            width: w,
            delay_ps,
            rank,
            by_rank,
            ring,
            rings: cfg.rings,
        }
    }

    fn key(&self, gen_t: u64, x: u16, y: u16, polarity: Polarity) -> (u64, u32) {
        let p = y as usize * self.width + x as usize;
        (
            gen_t * 1_000_000 + self.delay_ps[p],
            self.rank[p] << 1 | polarity.is_on() as u32,
        )
    }
}

/// Single-server FIFO over arrival-ordered keys `(arrival_ps, rank << 1 | on)`.
fn run_queue(
    mut keys: Vec<(u64, u32)>,
    geo: &Geometry,
    cfg: &SensorConfig,
    width: u16,
    height: u16,
) -> (EventStream, ReadoutStats) {
    keys.sort_unstable();
    let service = cfg.service_ps();
    let mut stats = ReadoutStats {
        ring_generated: vec![0; geo.rings],
        ring_dropped: vec![0; geo.rings],
        ..Default::default()
    };
    let mut queue: VecDeque<u64> = VecDeque::new();
    let mut last_stamp: Option<u64> = None;
    let mut out = Vec::with_capacity(keys.len());
    for (arrival, slot) in keys {
        let pixel = geo.by_rank[(slot >> 1) as usize] as usize;
        let ring = geo.ring[pixel] as usize;
        stats.ring_generated[ring] += 1;
        while queue.front().is_some_and(|&s| s <= arrival) {
            queue.pop_front();
        }
        if queue.len() >= cfg.queue_capacity {
            stats.dropped += 1;
            stats.ring_dropped[ring] += 1;
            continue;
        }
        let stamp = match last_stamp {
            Some(prev) => arrival.max(prev + service),
            None => arrival,
        };
        last_stamp = Some(stamp);
        queue.push_back(stamp);
        out.push(Event {
            t: stamp / 1_000_000,
            x: (pixel % geo.width) as u16,
            y: (pixel / geo.width) as u16,
            polarity: if slot & 1 == 1 {
                Polarity::On
            } else {
                Polarity::Off
            },
        });
    }
    stats.emitted = out.len() as u64;
    (EventStream::from_sorted(width, height, out), stats)
}

/// Stamps generated events through the readout queue.
pub fn readout(
    raw: &[RawEvent],
    cfg: &SensorConfig,
    width: u16,
    height: u16,
) -> Result<(EventStream, ReadoutStats)> {
    cfg.validate()?;
    if let Some(e) = raw.iter().find(|e| e.x >= width || e.y >= height) {
        return Err(Error::InvalidParameter(format!(
            "raw event at ({}, {}) outside {width}x{height} sensor",
            e.x, e.y
        )));
    }
    let geo = Geometry::new(width, height, cfg);
    let keys = raw
        .iter()
        .map(|e| geo.key(e.gen_t, e.x, e.y, e.polarity))
        .collect();
    Ok(run_queue(keys, &geo, cfg, width, height))
}

/// Renders the schedule, generates events for every pixel and reads them out.
pub fn simulate(
    schedule: &FrameSchedule,
    footprints: &Footprints,
    optics: &OpticalConfig,
    cfg: &SensorConfig,
) -> Result<(EventStream, SensorStats)> {
    cfg.validate()?;
    let scene = Scene::new(footprints, optics)?;
    let (w, h) = (footprints.width(), footprints.height());
    let geo = Geometry::new(w, h, cfg);
    let per_channel = schedule.per_channel();
    let duration = schedule.duration();
    let mut counts = GenCounts::default();
    let mut keys = Vec::new();
    let mut buf = Vec::new();
    let mut lit = vec![false; w as usize * h as usize];
    for i in 0..scene.lit_pixels().len() {
        let trace = scene.trace(i, &per_channel);
        lit[trace.y as usize * w as usize + trace.x as usize] = true;
        buf.clear();
        let c = generate_into(&trace, cfg, duration, &mut buf)?;
        counts.unique += c.unique;
        counts.duplicates += c.duplicates;
        counts.noise += c.noise;
        keys.extend(buf.iter().map(|&(t, p)| geo.key(t, trace.x, trace.y, p)));
    }
    if cfg.noise_rate > 0.0 || cfg.off_noise_rate > 0.0 {
        for (i, _) in lit.iter().enumerate().filter(|(_, l)| !**l) {
            let trace = PixelTrace {
                x: (i % w as usize) as u16,
                y: (i / w as usize) as u16,
                steps: vec![(0, scene.ambient())],
            };
            buf.clear();
            let c = generate_into(&trace, cfg, duration, &mut buf)?;
            counts.noise += c.noise;
            keys.extend(buf.iter().map(|&(t, p)| geo.key(t, trace.x, trace.y, p)));
        }
    }
    let generated = keys.len() as u64;
    let (stream, r) = run_queue(keys, &geo, cfg, w, h);
    Ok((
        stream,
        SensorStats {
            generated,
            unique: counts.unique,
            duplicates: counts.duplicates,
            noise: counts.noise,
            dropped: r.dropped,
            emitted: r.emitted,
            ring_generated: r.ring_generated,
            ring_dropped: r.ring_dropped,
        },
    ))
}

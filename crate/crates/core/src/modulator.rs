//! On-off keying: per-channel bit streams to a time-ordered schedule of
//! mirror-block state changes.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{frame_packet, Bits, ChannelLayout, SymbolRate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MirrorState {
    Off,
    On,
}

impl MirrorState {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            MirrorState::On
        } else {
            MirrorState::Off
        }
    }

    pub fn is_on(self) -> bool {
        self == MirrorState::On
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelBitstream {
    pub channel: u32,
    pub bits: Bits,
    pub rate: SymbolRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub t: u64,
    pub channel: u32,
    pub state: MirrorState,
}

/// Mirror-state transitions sorted by `(t, channel)`. Every channel is dark
/// before `t = 0` and holds its last state until `duration`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FrameSchedule {
    transitions: Vec<Transition>,
    duration: u64,
    channel_count: usize,
}

impl FrameSchedule {
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Duration in microseconds.
    pub fn duration(&self) -> u64 {
        self.duration
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Transitions split by channel, each list in time order.
    pub fn per_channel(&self) -> Vec<Vec<Transition>> {
        let mut out = vec![Vec::new(); self.channel_count];
        for tr in &self.transitions {
            out[tr.channel as usize].push(*tr);
        }
        out
    }

    /// State of `channel` at time `t` (microseconds).
    pub fn state_at(&self, channel: u32, t: u64) -> MirrorState {
        self.transitions
            .iter()
            .filter(|tr| tr.channel == channel && tr.t <= t)
            .last()
            .map_or(MirrorState::Off, |tr| tr.state)
    }

    /// Keeps only the transitions of the listed channels.
    pub fn restricted(&self, keep: impl Fn(u32) -> bool) -> Self {
        Self {
            transitions: self
                .transitions
                .iter()
                .filter(|t| keep(t.channel))
                .copied()
                .collect(),
            ..self.clone()
        }
    }
}

fn channel_transitions(stream: &ChannelBitstream, out: &mut Vec<Transition>) {
    let mut prev = false;
    for (k, &bit) in stream.bits.iter().enumerate() {
        if bit != prev {
            out.push(Transition {
                t: stream.rate.symbol_start_us(k as u64),
                channel: stream.channel,
                state: MirrorState::from_bit(bit),
            });
            prev = bit;
        }
    }
}

/// Modulates one bitstream per layout channel into a merged schedule.
pub fn modulate(layout: &ChannelLayout, streams: &[ChannelBitstream]) -> Result<FrameSchedule> {
    let n = layout.channel_count();
    let mut seen = vec![false; n];
    let mut extra = BTreeSet::new();
    for s in streams {
        match seen.get_mut(s.channel as usize) {
            Some(flag) if !*flag => *flag = true,
            _ => {
                extra.insert(s.channel);
            }
        }
    }
    let missing: Vec<u32> = (0..n as u32).filter(|&c| !seen[c as usize]).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::StreamMismatch {
            missing,
            extra: extra.into_iter().collect(),
        });
    }
    for s in streams {
        let expected = layout.rate_of(s.channel);
        if s.rate != expected {
            return Err(Error::RateMismatch {
                channel: s.channel,
                expected: expected.hz(),
                found: s.rate.hz(),
            });
        }
        if s.bits.is_empty() {
            return Err(Error::EmptyPayload);
        }
    }

    let mut transitions = Vec::new();
    let mut duration = 0;
    for s in streams {
        channel_transitions(s, &mut transitions);
        duration = duration.max(s.rate.symbol_start_us(s.bits.len() as u64));
    }
    transitions.sort_unstable_by_key(|t| (t.t, t.channel));
    Ok(FrameSchedule {
        transitions,
        duration,
        channel_count: n,
    })
}

/// Payload width of the calibration packets: channel index, little-endian.
pub const MAPPING_PAYLOAD_LEN: usize = 2;

pub fn mapping_payload(index: u32) -> [u8; MAPPING_PAYLOAD_LEN] {
    (index as u16).to_le_bytes()
}

/// Calibration traffic: every channel repeats a packet carrying its own index
/// at `base_rate` for `duration_s` seconds (whole packets only).
pub fn mapping_schedule(
    layout: &ChannelLayout,
    base_rate: SymbolRate,
    duration_s: f64,
) -> Result<FrameSchedule> {
    mapping_schedule_with(layout, base_rate, duration_s, false)
}

/// [`mapping_schedule`], optionally with each channel's train delayed by its
/// [`stagger_offset`] within one packet length.
pub fn mapping_schedule_with(
    layout: &ChannelLayout,
    base_rate: SymbolRate,
    duration_s: f64,
    stagger: bool,
) -> Result<FrameSchedule> {
    if !(duration_s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be >= 0, got {duration_s}"
        )));
    }
    let n = layout.channel_count();
    if n > u16::MAX as usize + 1 {
        return Err(Error::InvalidParameter(format!(
            "{n} channels do not fit a {MAPPING_PAYLOAD_LEN}-byte index"
        )));
    }
    let frame_bits = 8 * (MAPPING_PAYLOAD_LEN + 2);
    let symbols = (base_rate.symbols_in(duration_s * 1e6) + 1e-9).floor() as usize;
    let packets = symbols / frame_bits;
    if packets == 0 {
        return Ok(FrameSchedule {
            transitions: Vec::new(),
            duration: 0,
            channel_count: n,
        });
    }
    let mut transitions = Vec::new();
    let mut longest = 0;
    for c in 0..n as u32 {
        let frame = frame_packet(&mapping_payload(c))?;
        let lead = if stagger {
            stagger_offset(c, frame_bits)
        } else {
            0
        };
        let bits: Bits = std::iter::repeat(false)
            .take(lead)
            .chain(frame.iter().copied().cycle().take(packets * frame_bits))
            .collect();
        longest = longest.max(bits.len());
        channel_transitions(
            &ChannelBitstream {
                channel: c,
                bits,
                rate: base_rate,
            },
            &mut transitions,
        );
    }
    transitions.sort_unstable_by_key(|t| (t.t, t.channel));
    Ok(FrameSchedule {
        transitions,
        duration: base_rate.symbol_start_us(longest as u64),
        channel_count: n,
    })
}

/// Experiment traffic: `packets` copies of the framed payload per channel,
/// separated by `idle_symbols` dark symbols, at each channel's class rate.
pub fn fill_payloads(
    layout: &ChannelLayout,
    payload: &[u8],
    packets: usize,
    idle_symbols: usize,
) -> Result<Vec<ChannelBitstream>> {
    if packets == 0 {
        return Err(Error::InvalidParameter(
            "packets per channel must be at least 1".into(),
        ));
    }
    let frame = frame_packet(payload)?;
    let mut bits = Vec::with_capacity(packets * (frame.len() + idle_symbols));
    for k in 0..packets {
        if k > 0 {
            bits.extend(std::iter::repeat(false).take(idle_symbols));
        }
        bits.extend_from_slice(&frame);
    }
    Ok(layout
        .channels()
        .map(|c| ChannelBitstream {
            channel: c.index,
            bits: bits.clone(),
            rate: layout.rate_of(c.index),
        })
        .collect())
}

/// Dark lead-in for channel `c`: a fixed pseudo-random number of symbols in
/// `0..period`.
pub fn stagger_offset(channel: u32, period: usize) -> usize {
    if period == 0 {
        return 0;
    }
    // splitmix64 finalizer
    let mut z = (channel as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ((z ^ (z >> 31)) % period as u64) as usize
}

/// Prepends each channel's [`stagger_offset`] of dark symbols so that
/// channels repeating the same packet do not toggle in lockstep.
pub fn stagger_streams(streams: &mut [ChannelBitstream], period: usize) {
    for s in streams {
        let lead = stagger_offset(s.channel, period);
        s.bits.splice(0..0, std::iter::repeat(false).take(lead));
    }
}

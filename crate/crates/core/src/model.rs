//! Shared domain vocabulary: events, packets, channel geometry and the pure
//! arithmetic on them (framing, rate partitioning, data rate).

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Start-of-text marker opening every packet.
pub const STX: u8 = 0b0101_0101;
/// End-of-text marker closing every packet.
pub const ETX: u8 = 0b0000_1111;

/// A bit sequence, one `bool` per symbol.
pub type Bits = Vec<bool>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    /// Brightness increase.
    On,
    /// Brightness decrease.
    Off,
}

impl Polarity {
    pub fn is_on(self) -> bool {
        self == Polarity::On
    }
}

/// One sensor output tuple. `t` is in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// Time-ordered events of a `width` x `height` sensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates ordering and bounds.
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::InvalidParameter(format!(
                    "event {i} at ({}, {}) outside {width}x{height} sensor",
                    e.x, e.y
                )));
            }
            if i > 0 && events[i - 1].t > e.t {
                return Err(Error::InvalidParameter(format!(
                    "event {i} out of time order"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub(crate) fn from_sorted(width: u16, height: u16, events: Vec<Event>) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0].t <= w[1].t));
        Self {
            width,
            height,
            events,
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Timestamp of the last event, if any.
    pub fn end_time(&self) -> Option<u64> {
        self.events.last().map(|e| e.t)
    }
}

/// A received or transmitted packet. The markers are implied constants.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Packet {
    payload: Vec<u8>,
}

impl Packet {
    pub fn new(payload: Vec<u8>) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::EmptyPayload);
        }
        Ok(Self { payload })
    }

    pub fn stx(&self) -> u8 {
        STX
    }

    pub fn etx(&self) -> u8 {
        ETX
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn into_payload(self) -> Vec<u8> {
        self.payload
    }
}

fn push_byte(bits: &mut Bits, byte: u8) {
    for i in (0..8).rev() {
        bits.push(byte >> i & 1 == 1);
    }
}

fn byte_at(bits: &[bool], start: usize) -> u8 {
    bits[start..start + 8]
        .iter()
        .fold(0u8, |acc, &b| acc << 1 | b as u8)
}

/// Frames `payload` as STX, payload bytes (MSB first), ETX.
pub fn frame_packet(payload: &[u8]) -> Result<Bits> {
    if payload.is_empty() {
        return Err(Error::EmptyPayload);
    }
    let mut bits = Vec::with_capacity(8 * (payload.len() + 2));
    push_byte(&mut bits, STX);
    for &b in payload {
        push_byte(&mut bits, b);
    }
    push_byte(&mut bits, ETX);
    Ok(bits)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Deframed {
    pub packets: Vec<Packet>,
    /// Bits after the end of the last matched packet (all bits if none).
    pub residual: usize,
}

/// Scans `bits` for fixed-length packets carrying `payload_len` bytes.
///
/// A candidate starts at every STX match; it is accepted only if the byte
/// following the payload is exactly ETX. Rejected candidates resume the scan
/// one bit later.
pub fn deframe_bits(bits: &[bool], payload_len: usize) -> Deframed {
    let frame_len = 8 * (payload_len + 2);
    let mut packets = Vec::new();
    let mut end = 0;
    let mut i = 0;
    if payload_len == 0 {
        return Deframed {
            packets,
            residual: bits.len(),
        };
    }
    while i + frame_len <= bits.len() {
        if byte_at(bits, i) == STX && byte_at(bits, i + frame_len - 8) == ETX {
            let payload = (0..payload_len)
                .map(|k| byte_at(bits, i + 8 + 8 * k))
                .collect();
            packets.push(Packet { payload });
            i += frame_len;
            end = i;
        } else {
            i += 1;
        }
    }
    Deframed {
        packets,
        residual: bits.len() - end,
    }
}

/// Symbol (refresh) rate held exactly in millihertz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolRate(u64);

impl SymbolRate {
    pub fn from_hz(hz: f64) -> Result<Self> {
        let mhz = (hz * 1000.0).round();
        if !hz.is_finite() || mhz < 1.0 || mhz > u64::MAX as f64 {
            return Err(Error::InvalidParameter(format!(
                "symbol rate must be positive, got {hz} Hz"
            )));
        }
        Ok(Self(mhz as u64))
    }

    pub fn from_millihertz(mhz: u64) -> Result<Self> {
        if mhz == 0 {
            return Err(Error::InvalidParameter("symbol rate must be positive".into()));
        }
        Ok(Self(mhz))
    }

    pub fn millihertz(self) -> u64 {
        self.0
    }

    pub fn hz(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Half the rate, rounded to the nearest millihertz.
    pub fn halved(self) -> Self {
        Self((self.0 + 1) / 2)
    }

    /// Start of symbol `k` in microseconds, computed exactly then rounded
    /// to the nearest microsecond (no drift over long streams).
    pub fn symbol_start_us(self, k: u64) -> u64 {
        let m = self.0 as u128;
        ((2 * k as u128 * 1_000_000_000 + m) / (2 * m)) as u64
    }

    /// Symbol duration in microseconds.
    pub fn period_us(self) -> f64 {
        1.0e9 / self.0 as f64
    }

    /// Number of symbol periods spanned by `us` microseconds.
    pub fn symbols_in(self, us: f64) -> f64 {
        us * self.0 as f64 / 1.0e9
    }
}

impl fmt::Display for SymbolRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Hz", self.hz())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RateClass {
    Central,
    Peripheral,
}

/// Channel index plus grid coordinates relative to the grid's geometric
/// center, stored in half-channel units so even grids stay integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelId {
    pub index: u32,
    pub cx2: i32,
    pub cy2: i32,
}

impl ChannelId {
    pub fn cx(&self) -> f64 {
        self.cx2 as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.cy2 as f64 / 2.0
    }

    /// Euclidean distance from the grid center, in channel units.
    pub fn radius(&self) -> f64 {
        (((self.cx2 as i64).pow(2) + (self.cy2 as i64).pow(2)) as f64).sqrt() / 2.0
    }
}

/// Mirror-plane rectangle `[x0, x1) x [y0, y1)` in mirror units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MirrorRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

/// Partition of the mirror array into guarded square channel blocks.
///
/// Channels are indexed row-major. The visible extent of the grid is centered
/// on the mirror array.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelLayout {
    mirror_cols: u32,
    mirror_rows: u32,
    block_size: u32,
    guard: u32,
    grid_cols: u32,
    grid_rows: u32,
    classes: Vec<RateClass>,
    central_rate: SymbolRate,
    peripheral_rate: SymbolRate,
    radius: f64,
}

pub const DEFAULT_RATE_HZ: f64 = 1000.0;

/// Builds a single-rate layout (every channel peripheral at 1 kHz).
pub fn build_layout(
    mirror_cols: u32,
    mirror_rows: u32,
    block_size: u32,
    guard: u32,
    grid_cols: u32,
    grid_rows: u32,
) -> Result<ChannelLayout> {
    if block_size == 0 || grid_cols == 0 || grid_rows == 0 {
        return Err(Error::InvalidParameter(
            "block size and grid dimensions must be at least 1".into(),
        ));
    }
    let pitch = block_size as u64 * (1 + guard as u64);
    let need_x = grid_cols as u64 * pitch;
    let need_y = grid_rows as u64 * pitch;
    if need_x > mirror_cols as u64 {
        return Err(Error::LayoutDoesNotFit {
            dimension: "columns",
            needed: need_x,
            available: mirror_cols,
        });
    }
    if need_y > mirror_rows as u64 {
        return Err(Error::LayoutDoesNotFit {
            dimension: "rows",
            needed: need_y,
            available: mirror_rows,
        });
    }
    let rate = SymbolRate::from_hz(DEFAULT_RATE_HZ)?;
    Ok(ChannelLayout {
        mirror_cols,
        mirror_rows,
        block_size,
        guard,
        grid_cols,
        grid_rows,
        classes: vec![RateClass::Peripheral; (grid_cols * grid_rows) as usize],
        central_rate: rate,
        peripheral_rate: rate,
        radius: 0.0,
    })
}

impl ChannelLayout {
    pub fn mirror_cols(&self) -> u32 {
        self.mirror_cols
    }

    pub fn mirror_rows(&self) -> u32 {
        self.mirror_rows
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn guard(&self) -> u32 {
        self.guard
    }

    pub fn grid_cols(&self) -> u32 {
        self.grid_cols
    }

    pub fn grid_rows(&self) -> u32 {
        self.grid_rows
    }

    /// Mirrors between the starts of adjacent blocks.
    pub fn pitch(&self) -> u32 {
        self.block_size * (1 + self.guard)
    }

    pub fn channel_count(&self) -> usize {
        self.classes.len()
    }

    pub fn central_rate(&self) -> SymbolRate {
        self.central_rate
    }

    pub fn peripheral_rate(&self) -> SymbolRate {
        self.peripheral_rate
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn rate_class(&self, index: u32) -> RateClass {
        self.classes[index as usize]
    }

    pub fn rate_of(&self, index: u32) -> SymbolRate {
        match self.classes[index as usize] {
            RateClass::Central => self.central_rate,
            RateClass::Peripheral => self.peripheral_rate,
        }
    }

    pub fn central_count(&self) -> usize {
        self.classes
            .iter()
            .filter(|c| **c == RateClass::Central)
            .count()
    }

    pub fn peripheral_count(&self) -> usize {
        self.channel_count() - self.central_count()
    }

    pub fn channel(&self, index: u32) -> ChannelId {
        let col = index % self.grid_cols;
        let row = index / self.grid_cols;
        ChannelId {
            index,
            cx2: 2 * col as i32 - (self.grid_cols as i32 - 1),
            cy2: 2 * row as i32 - (self.grid_rows as i32 - 1),
        }
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        (0..self.channel_count() as u32).map(|i| self.channel(i))
    }

    fn origin(&self) -> (u32, u32) {
        let extent = |n: u32| (n - 1) * self.pitch() + self.block_size;
        (
            (self.mirror_cols - extent(self.grid_cols)) / 2,
            (self.mirror_rows - extent(self.grid_rows)) / 2,
        )
    }

    /// Mirror rectangle of channel `index`.
    pub fn block_rect(&self, index: u32) -> MirrorRect {
        let (ox, oy) = self.origin();
        let col = index % self.grid_cols;
        let row = index / self.grid_cols;
        let x0 = ox + col * self.pitch();
        let y0 = oy + row * self.pitch();
        MirrorRect {
            x0,
            y0,
            x1: x0 + self.block_size,
            y1: y0 + self.block_size,
        }
    }

    /// Assigns the dual-rate partition: channels within `d` channel units of
    /// the grid center (inclusive) run at `f_c`, the rest at `f_p`.
    pub fn classify_rates(&self, d: f64, f_c: SymbolRate, f_p: SymbolRate) -> Result<Self> {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::InvalidParameter(format!("radius must be >= 0, got {d}")));
        }
        if f_c < f_p {
            return Err(Error::InvalidParameter(format!(
                "central rate {f_c} below peripheral rate {f_p}"
            )));
        }
        // Compare in half-channel units: (2R)^2 <= (2d)^2.
        let limit = 4.0 * d * d;
        let classes = self
            .channels()
            .map(|c| {
                let r2 = (c.cx2 as i64).pow(2) + (c.cy2 as i64).pow(2);
                if (r2 as f64) <= limit && d > 0.0 {
                    RateClass::Central
                } else {
                    RateClass::Peripheral
                }
            })
            .collect();
        Ok(Self {
            classes,
            central_rate: f_c,
            peripheral_rate: f_p,
            radius: d,
            ..self.clone()
        })
    }

    /// Same grid placement with a single rate for all channels.
    pub fn with_single_rate(&self, rate: SymbolRate) -> Self {
        Self {
            classes: vec![RateClass::Peripheral; self.classes.len()],
            central_rate: rate,
            peripheral_rate: rate,
            radius: 0.0,
            ..self.clone()
        }
    }
}

/// Aggregate data rate in bits per second: `log2(X) * sum of channel rates`.
///
/// For a single rate this is `N * Y * log2(X)`; for the dual partition it is
/// `log2(X) * (N_c * f_c + N_p * f_p)`.
pub fn data_rate(layout: &ChannelLayout, symbols: u32) -> Result<f64> {
    let nc = layout.central_count() as u128;
    let np = layout.peripheral_count() as u128;
    let sum_mhz = nc * layout.central_rate.millihertz() as u128
        + np * layout.peripheral_rate.millihertz() as u128;
    bits_per_second(sum_mhz, symbols)
}

/// Data rate carried by a subset of the layout's channels.
pub fn data_rate_of(layout: &ChannelLayout, symbols: u32, channels: &[u32]) -> Result<f64> {
    if let Some(&c) = channels.iter().find(|&&c| c as usize >= layout.channel_count()) {
        return Err(Error::InvalidParameter(format!("channel {c} not in layout")));
    }
    let sum_mhz = channels
        .iter()
        .map(|&c| layout.rate_of(c).millihertz() as u128)
        .sum();
    bits_per_second(sum_mhz, symbols)
}

fn bits_per_second(sum_mhz: u128, symbols: u32) -> Result<f64> {
    if symbols < 2 {
        return Err(Error::InvalidSymbolCount(symbols));
    }
    if symbols.is_power_of_two() {
        let bits = symbols.trailing_zeros() as u128;
        Ok((sum_mhz * bits) as f64 / 1000.0)
    } else {
        Ok(sum_mhz as f64 / 1000.0 * (symbols as f64).log2())
    }
}

/// Receiver-side pixel bounding box (inclusive) and decoding center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelBox {
    pub x0: u16,
    pub y0: u16,
    pub x1: u16,
    pub y1: u16,
    pub cx: u16,
    pub cy: u16,
}

impl ChannelBox {
    /// Box from inclusive corners; the center rounds toward the origin.
    pub fn from_corners(x0: u16, y0: u16, x1: u16, y1: u16) -> Self {
        Self {
            x0,
            y0,
            x1,
            y1,
            cx: x0 + (x1 - x0) / 2,
            cy: y0 + (y1 - y0) / 2,
        }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn intersects(&self, other: &ChannelBox) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapEntry {
    pub id: ChannelId,
    pub bbox: ChannelBox,
}

/// Channel index to pixel region association, sorted by channel index.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ChannelMap {
    entries: Vec<MapEntry>,
}

impl ChannelMap {
    pub fn new(mut entries: Vec<MapEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id.index);
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.index) {
                return Err(Error::InvalidParameter(format!(
                    "channel {} mapped twice",
                    e.id.index
                )));
            }
            if !e.bbox.contains(e.bbox.cx, e.bbox.cy) {
                return Err(Error::InvalidParameter(format!(
                    "channel {} center outside its box",
                    e.id.index
                )));
            }
        }
        // Sweep over boxes sorted by x0 to check pairwise disjointness.
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&i| entries[i].bbox.x0);
        for (k, &i) in order.iter().enumerate() {
            for &j in &order[k + 1..] {
                if entries[j].bbox.x0 > entries[i].bbox.x1 {
                    break;
                }
                if entries[i].bbox.intersects(&entries[j].bbox) {
                    return Err(Error::InvalidParameter(format!(
                        "boxes of channels {} and {} overlap",
                        entries[i].id.index, entries[j].id.index
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u32) -> Option<&MapEntry> {
        self.entries
            .binary_search_by_key(&index, |e| e.id.index)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Keeps only the listed channel indices.
    pub fn restricted(&self, keep: &[u32]) -> Self {
        let keep: HashSet<u32> = keep.iter().copied().collect();
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| keep.contains(&e.id.index))
                .copied()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits_of(s: &str) -> Bits {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c == '1')
            .collect()
    }

    #[test]
    fn frames_good() {
        let bits = frame_packet(b"good").unwrap();
        let expected = bits_of("01010101 01100111 01101111 01101111 01100100 00001111");
        assert_eq!(bits.len(), 48);
        assert_eq!(bits, expected);
    }

    #[test]
    fn frames_small_payloads() {
        assert_eq!(
            frame_packet(&[0x00]).unwrap(),
            bits_of("01010101 00000000 00001111")
        );
        assert_eq!(
            frame_packet(&[0xFF, 0x00]).unwrap(),
            bits_of("01010101 11111111 00000000 00001111")
        );
        assert!(matches!(frame_packet(&[]), Err(Error::EmptyPayload)));
    }

    #[test]
    fn deframe_inverse() {
        let d = deframe_bits(&frame_packet(b"good").unwrap(), 4);
        assert_eq!(d.packets.len(), 1);
        assert_eq!(d.packets[0].payload(), b"good");
        assert_eq!(d.residual, 0);
    }

    #[test]
    fn deframe_rejects_bad_etx() {
        let mut bits = frame_packet(b"good").unwrap();
        let n = bits.len();
        bits[n - 1] = false;
        let d = deframe_bits(&bits, 4);
        assert!(d.packets.is_empty());
        assert_eq!(d.residual, n);
    }

    /// Independent oracle: every offset at which a complete, valid frame of
    /// `payload_len` bytes sits.
    fn valid_frame_offsets(bits: &[bool], payload_len: usize) -> Vec<usize> {
        let n = 8 * (payload_len + 2);
        (0..=bits.len().saturating_sub(n))
            .filter(|&p| {
                let byte = |s: usize| {
                    let mut v = 0u8;
                    for k in 0..8 {
                        v = v * 2 + u8::from(bits[s + k]);
                    }
                    v
                };
                bits.len() >= p + n && byte(p) == STX && byte(p + n - 8) == ETX
            })
            .collect()
    }

    #[test]
    fn deframe_recovers_after_every_8bit_prefix() {
        let frame = frame_packet(b"good").unwrap();
        let mut spurious = 0;
        for prefix in 0u16..256 {
            let mut bits: Bits = (0..8).rev().map(|i| prefix >> i & 1 == 1).collect();
            bits.extend_from_slice(&frame);
            let offsets = valid_frame_offsets(&bits, 4);
            let d = deframe_bits(&bits, 4);
            if offsets.iter().any(|&p| p < 8) {
                spurious += 1;
                continue;
            }
            assert_eq!(offsets, vec![8]);
            assert_eq!(d.packets.len(), 1, "prefix {prefix:08b}");
            assert_eq!(d.packets[0].payload(), b"good");
            assert_eq!(d.residual, 0);
        }
        // Enumerated: no 8-bit prefix can complete a spurious frame, because
        // the ETX slot of any earlier candidate lands inside "good".
        assert_eq!(spurious, 0);
    }

    #[test]
    fn symbol_rate_boundaries_are_exact() {
        let r = SymbolRate::from_hz(588.0).unwrap();
        // 588 Hz has a non-integer period: 1700.68 us.
        assert_eq!(r.symbol_start_us(1), 1701);
        assert_eq!(r.symbol_start_us(588), 1_000_000);
        assert_eq!(r.symbol_start_us(588 * 1000), 1_000_000_000);
        assert_eq!(SymbolRate::from_hz(677.0).unwrap().halved().millihertz(), 338_500);
    }

    #[test]
    fn layout_fits_paper_grid() {
        let l = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        assert_eq!(l.channel_count(), 1995);
        assert_eq!(l.pitch(), 16);
        assert_eq!(build_layout(16, 16, 8, 1, 1, 1).unwrap().channel_count(), 1);
        match build_layout(912, 1140, 8, 1, 58, 35) {
            Err(Error::LayoutDoesNotFit {
                dimension, needed, ..
            }) => {
                assert_eq!(dimension, "columns");
                assert_eq!(needed, 928);
            }
            other => panic!("expected fit error, got {other:?}"),
        }
    }

    #[test]
    fn blocks_stay_inside_mirror_array() {
        for (mc, mr, m, g, gc, gr) in [
            (912, 1140, 8, 1, 57, 35),
            (16, 16, 8, 1, 1, 1),
            (100, 37, 3, 2, 11, 4),
            (913, 561, 8, 1, 57, 35),
            (20, 20, 5, 0, 4, 4),
        ] {
            let l = build_layout(mc, mr, m, g, gc, gr).unwrap();
            let rects: Vec<_> = (0..l.channel_count() as u32).map(|i| l.block_rect(i)).collect();
            for r in &rects {
                assert!(r.x1 <= mc && r.y1 <= mr);
                assert_eq!(r.x1 - r.x0, m);
            }
            for (i, a) in rects.iter().enumerate() {
                for b in &rects[i + 1..] {
                    let overlap = a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
                    assert!(!overlap);
                }
            }
        }
    }

    #[test]
    fn grid_coordinates_centered() {
        let l = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        let c = l.channel(17 * 57 + 28);
        assert_eq!((c.cx2, c.cy2), (0, 0));
        let even = build_layout(64, 64, 8, 1, 2, 2).unwrap();
        assert_eq!((even.channel(0).cx2, even.channel(0).cy2), (-1, -1));
        assert_eq!((even.channel(3).cx2, even.channel(3).cy2), (1, 1));
    }

    fn hz(v: f64) -> SymbolRate {
        SymbolRate::from_hz(v).unwrap()
    }

    #[test]
    fn classify_rates_counts() {
        let l = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        let zero = l.classify_rates(0.0, hz(2000.0), hz(1000.0)).unwrap();
        assert_eq!(zero.central_count(), 0);
        let paper = l.classify_rates(15.0, hz(2000.0), hz(1000.0)).unwrap();
        assert_eq!((paper.central_count(), paper.peripheral_count()), (709, 1286));
        let all = l.classify_rates(100.0, hz(2000.0), hz(1000.0)).unwrap();
        assert_eq!(all.central_count(), 1995);
        assert!(l.classify_rates(1.0, hz(10.0), hz(20.0)).is_err());
    }

    #[test]
    fn data_rate_examples() {
        let one = build_layout(16, 16, 8, 1, 1, 1).unwrap();
        assert_eq!(data_rate(&one, 2).unwrap(), 1000.0);
        let full = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        assert_eq!(data_rate(&full, 2).unwrap(), 1_995_000.0);
        assert_eq!(data_rate(&full, 4).unwrap(), 3_990_000.0);
        assert!(matches!(data_rate(&full, 1), Err(Error::InvalidSymbolCount(1))));

        let fc = hz(1191.0);
        let dual = full.classify_rates(15.0, fc, fc.halved()).unwrap();
        assert_eq!(data_rate(&dual, 2).unwrap(), 1352.0 * 1191.0);
        assert!(data_rate(&dual, 2).unwrap() >= 1.61e6);
        let below = full.classify_rates(15.0, hz(1190.0), hz(595.0)).unwrap();
        assert!(data_rate(&below, 2).unwrap() < 1.61e6);
    }

    #[test]
    fn map_rejects_duplicates_and_overlap() {
        let l = build_layout(64, 64, 8, 1, 2, 2).unwrap();
        let b = ChannelBox::from_corners(0, 0, 2, 2);
        let far = ChannelBox::from_corners(10, 10, 12, 12);
        assert!(ChannelMap::new(vec![
            MapEntry { id: l.channel(0), bbox: b },
            MapEntry { id: l.channel(0), bbox: far },
        ])
        .is_err());
        assert!(ChannelMap::new(vec![
            MapEntry { id: l.channel(0), bbox: b },
            MapEntry { id: l.channel(1), bbox: ChannelBox::from_corners(2, 2, 4, 4) },
        ])
        .is_err());
        let m = ChannelMap::new(vec![
            MapEntry { id: l.channel(1), bbox: far },
            MapEntry { id: l.channel(0), bbox: b },
        ])
        .unwrap();
        assert_eq!(m.entries()[0].id.index, 0);
        assert_eq!(m.get(1).unwrap().bbox, far);
        assert_eq!(ChannelBox::from_corners(0, 0, 3, 3).cx, 1);
    }
}

//! Receiver: channel discovery from a calibration recording, duplicate
//! removal and the two timestamp decoders.

use std::collections::HashMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{
    deframe_bits, Bits, ChannelBox, ChannelLayout, ChannelMap, EventStream, MapEntry, Packet,
    Polarity, SymbolRate, STX,
};
use crate::modulator::MAPPING_PAYLOAD_LEN;

/// Per-pixel event counts, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    width: u16,
    height: u16,
    counts: Vec<u32>,
}

impl Heatmap {
    pub fn new(width: u16, height: u16, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != width as usize * height as usize {
            return Err(Error::InvalidParameter(format!(
                "{} counts for a {width}x{height} heatmap",
                counts.len()
            )));
        }
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn get(&self, x: u16, y: u16) -> u32 {
        self.counts[y as usize * self.width as usize + x as usize]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Tallies events per pixel, both polarities.
pub fn build_heatmap(stream: &EventStream) -> Heatmap {
    let w = stream.width() as usize;
    let mut counts = vec![0u32; w * stream.height() as usize];
    for e in stream.events() {
        counts[e.y as usize * w + e.x as usize] += 1;
    }
    Heatmap {
        width: stream.width(),
        height: stream.height(),
        counts,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" | "four" => Ok(Self::Four),
            "8" | "eight" => Ok(Self::Eight),
            other => Err(Error::Config(format!("unknown connectivity {other:?}"))),
        }
    }
}

// Square structuring element of side 2r+1, separable. Out-of-bounds pixels
// are ignored (they neither erode nor dilate).
fn morph(mask: &[bool], w: usize, h: usize, r: usize, erode: bool) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    let reduce = |vals: &mut dyn Iterator<Item = bool>| {
        if erode {
            vals.fold(true, |a, v| a && v)
        } else {
            vals.fold(false, |a, v| a || v)
        }
    };
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            tmp[y * w + x] = reduce(&mut (lo..=hi).map(|k| mask[y * w + k]));
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = reduce(&mut (lo..=hi).map(|k| tmp[k * w + x]));
        }
    }
    out
}

/// Binarize, open (erode then dilate), label connected components and
/// return each component's tight bounding box, in raster order of the
/// components' first pixels.
pub fn extract_channel_boxes(
    hm: &Heatmap,
    binarize_frac: f64,
    morph_radius: usize,
    connectivity: Connectivity,
) -> Result<Vec<ChannelBox>> {
    if !(binarize_frac > 0.0 && binarize_frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "binarize fraction must lie in (0, 1), got {binarize_frac}"
        )));
    }
    let max = hm.max();
    if max == 0 {
        return Err(Error::NoChannelsDetected);
    }
    let (w, h) = (hm.width as usize, hm.height as usize);
    let threshold = binarize_frac * max as f64;
    let mask: Vec<bool> = hm
        .counts
        .iter()
        .map(|&c| c > 0 && c as f64 >= threshold)
        .collect();
    let opened = morph(&morph(&mask, w, h, morph_radius, true), w, h, morph_radius, false);

    let neighbours: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ],
    };
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !opened[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for &(dx, dy) in neighbours {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if opened[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        boxes.push(ChannelBox::from_corners(
            x0 as u16, y0 as u16, x1 as u16, y1 as u16,
        ));
    }
    if boxes.is_empty() {
        return Err(Error::NoChannelsDetected);
    }
    Ok(boxes)
}

/// Timestamp and polarity of one event at a known pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelEvent {
    pub t: u64,
    pub polarity: Polarity,
}

impl PixelEvent {
    pub fn on(t: u64) -> Self {
        Self {
            t,
            polarity: Polarity::On,
        }
    }

    pub fn off(t: u64) -> Self {
        Self {
            t,
            polarity: Polarity::Off,
        }
    }
}

/// Events of the listed pixels, in stream order, one list per pixel.
pub fn events_at(stream: &EventStream, pixels: &[(u16, u16)]) -> Vec<Vec<PixelEvent>> {
    let w = stream.width() as usize;
    let mut slot: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &(x, y)) in pixels.iter().enumerate() {
        slot.entry(y as usize * w + x as usize).or_default().push(i);
    }
    let mut out = vec![Vec::new(); pixels.len()];
    let mut lookup = vec![u32::MAX; w * stream.height() as usize];
    let mut shared = Vec::new();
    for (p, idx) in &slot {
        if idx.len() == 1 {
            lookup[*p] = idx[0] as u32;
        } else {
            lookup[*p] = u32::MAX - 1;
            shared.push(*p);
        }
    }
    for e in stream.events() {
        let p = e.y as usize * w + e.x as usize;
        let ev = PixelEvent {
            t: e.t,
            polarity: e.polarity,
        };
        match lookup[p] {
            u32::MAX => {}
            k if k == u32::MAX - 1 => {
                for &i in &slot[&p] {
                    out[i].push(ev);
                }
            }
            k => out[k as usize].push(ev),
        }
    }
    out
}

/// Keeps the first event and every event whose polarity differs from the
/// last kept one.
pub fn dedup(events: &[PixelEvent]) -> Vec<PixelEvent> {
    let mut out: Vec<PixelEvent> = Vec::with_capacity(events.len() / 2 + 1);
    for &e in events {
        if out.last().map_or(true, |last| last.polarity != e.polarity) {
            out.push(e);
        }
    }
    out
}

/// Window index of time `t_ns` for windows starting at `t0_ns`.
fn window_of(t_ns: i128, t0_ns: i128, rate: SymbolRate) -> i128 {
    // floor((t - t0) * f), with f in mHz and times in ns.
    (t_ns - t0_ns).wrapping_mul(rate.millihertz() as i128).div_euclid(1_000_000_000_000)
}

/// Transmitter-absolute-time decoding: one bit per symbol window starting at
/// `t0_ns` (nanoseconds). A window holding an ON event decodes 1, an OFF
/// event 0 (the later event wins if both occur), and an empty window repeats
/// the previous bit; the bit before the first window is 0.
pub fn decode_absolute(events: &[PixelEvent], rate: SymbolRate, t0_ns: i64, n_bits: usize) -> Bits {
    let mut marks: Vec<Option<bool>> = vec![None; n_bits];
    for e in events {
        let i = window_of(e.t as i128 * 1000, t0_ns as i128, rate);
        if i >= 0 && (i as usize) < n_bits {
            marks[i as usize] = Some(e.polarity.is_on());
        }
    }
    let mut prev = false;
    marks
        .into_iter()
        .map(|m| {
            prev = m.unwrap_or(prev);
            prev
        })
        .collect()
}

/// Non-overlapping occurrences of `byte`, scanning left to right. STX is
/// periodic, so overlapping matches would reward a slipped window.
fn count_pattern(bits: &[bool], byte: u8) -> usize {
    let mut n = 0;
    let mut i = 0;
    while i + 8 <= bits.len() {
        if bits[i..i + 8].iter().fold(0u8, |a, &b| a << 1 | b as u8) == byte {
            n += 1;
            i += 8;
        } else {
            i += 1;
        }
    }
    n
}

/// Receiver clock alignment from the preamble.
///
/// Candidate window origins place the first event at each eighth of a
/// symbol; each candidate decodes the first two packets' worth of bits and is
/// scored by complete packets, then by STX occurrences. A candidate keeps the
/// worst score among itself and its two phase neighbours, so a lone origin
/// sitting on the symbol edges cannot win on bits it misread. Ties prefer the
/// candidate placing the first event closest to mid-window.
pub fn sync_absolute(events: &[PixelEvent], rate: SymbolRate, payload_len: usize) -> i64 {
    let Some(first) = events.first() else {
        return 0;
    };
    let period_ns = 1.0e12 / rate.millihertz() as f64;
    let frame_bits = 8 * (payload_len + 2);
    let n = 2 * frame_bits + 8;
    let candidates: Vec<(i64, (usize, usize))> = (0..8)
        .map(|j| {
            let t0 = (first.t as f64 * 1000.0 - period_ns - j as f64 * period_ns / 8.0).round() as i64;
            let bits = decode_absolute(events, rate, t0, n);
            (t0, (deframe_bits(&bits, payload_len).packets.len(), count_pattern(&bits, STX)))
        })
        .collect();
    (0..8)
        .max_by_key(|&j| {
            let eroded = [7, 0, 1]
                .iter()
                .map(|d| candidates[(j + d) % 8].1)
                .min()
                .expect("three neighbours");
            (eroded, -(j as i32 - 4).abs())
        })
        .map_or(0, |j| candidates[j].0)
}

fn symbols(dt_us: f64, rate: SymbolRate) -> i64 {
    rate.symbols_in(dt_us).round_ties_even() as i64
}

/// Event-relative-time decoding.
///
/// Between consecutive OFF events `t_i`, `t_{i+1}` with the ON event `t_on`
/// between them: `T = t_{i+1} - t_i`, `H = round(T Y)`,
/// `N0 = round((t_on - t_i) / T * H)`, `N1 = H - N0`, emitting `N0` zeros then
/// `N1` ones. A leading ON contributes the implicit dark symbol followed by
/// its ON run; a trailing ON contributes its zero run and then ones. The
/// output is padded with the last bit (or truncated) to `total_bits`.
pub fn decode_relative(events: &[PixelEvent], rate: SymbolRate, total_bits: usize) -> Result<Bits> {
    if events.windows(2).any(|w| w[0].polarity == w[1].polarity) {
        return Err(Error::DedupRequired);
    }
    let mut bits = Vec::with_capacity(total_bits);
    let push = |bits: &mut Bits, bit: bool, n: i64| {
        bits.extend(std::iter::repeat(bit).take(n.max(0) as usize));
    };
    let offs: Vec<usize> = (0..events.len())
        .filter(|&i| events[i].polarity == Polarity::Off)
        .collect();
    match offs.first() {
        None => {
            if !events.is_empty() {
                bits.push(false);
                bits.push(true);
            }
        }
        Some(&f) => {
            if f == 1 {
                bits.push(false);
                let run = symbols((events[1].t - events[0].t) as f64, rate);
                push(&mut bits, true, run);
            }
            for pair in offs.windows(2) {
                let (ti, tj) = (events[pair[0]].t, events[pair[1]].t);
                let t_on = events[pair[0] + 1].t;
                let period = (tj - ti) as f64;
                let h = symbols(period, rate);
                if h <= 0 {
                    continue;
                }
                let n0 = ((t_on - ti) as f64 / period * h as f64).round_ties_even() as i64;
                push(&mut bits, false, n0);
                push(&mut bits, true, h - n0);
            }
            let last = *offs.last().expect("non-empty");
            if let Some(on) = events.get(last + 1) {
                let n0 = symbols((on.t - events[last].t) as f64, rate);
                push(&mut bits, false, n0);
                bits.push(true);
            }
        }
    }
    let fill = bits.last().copied().unwrap_or(false);
    bits.resize(total_bits, fill);
    Ok(bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum DecodeMode {
    Absolute,
    #[default]
    Relative,
}

impl DecodeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Absolute => "absolute",
            DecodeMode::Relative => "relative",
        }
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Self::Absolute),
            "relative" => Ok(Self::Relative),
            other => Err(Error::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub mode: DecodeMode,
    pub payload_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Relative,
            payload_len: 4,
        }
    }
}

/// Bits and packets decoded from one pixel's raw events.
pub fn decode_pixel(
    events: &[PixelEvent],
    rate: SymbolRate,
    mode: DecodeMode,
    payload_len: usize,
) -> Result<(Bits, Vec<Packet>)> {
    let events = dedup(events);
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok((Vec::new(), Vec::new()));
    };
    let frame_bits = 8 * (payload_len + 2);
    let bits = match mode {
        DecodeMode::Absolute => {
            let t0 = sync_absolute(&events, rate, payload_len);
            let span_ns = last.t as f64 * 1000.0 - t0 as f64;
            let n = (span_ns * rate.millihertz() as f64 / 1e12).ceil() as usize + frame_bits;
            decode_absolute(&events, rate, t0, n)
        }
        DecodeMode::Relative => {
            let n = rate.symbols_in((last.t - first.t) as f64).ceil() as usize + 1 + frame_bits;
            decode_relative(&events, rate, n)?
        }
    };
    let packets = deframe_bits(&bits, payload_len).packets;
    Ok((bits, packets))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelDecode {
    pub channel: u32,
    pub bits: Bits,
    pub packets: Vec<Packet>,
}

/// Decodes every mapped channel from the events at its center pixel, using
/// the channel's rate class.
pub fn decode_all(
    stream: &EventStream,
    map: &ChannelMap,
    layout: &ChannelLayout,
    cfg: &DecoderConfig,
) -> Result<Vec<ChannelDecode>> {
    let centers: Vec<(u16, u16)> = map.entries().iter().map(|e| (e.bbox.cx, e.bbox.cy)).collect();
    let per_pixel = events_at(stream, &centers);
    map.entries()
        .iter()
        .zip(&per_pixel)
        .map(|(entry, events)| {
            let index = entry.id.index;
            if index as usize >= layout.channel_count() {
                return Err(Error::InvalidParameter(format!(
                    "mapped channel {index} not in layout"
                )));
            }
            let (bits, packets) =
                decode_pixel(events, layout.rate_of(index), cfg.mode, cfg.payload_len)?;
            Ok(ChannelDecode {
                channel: index,
                bits,
                packets,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingOutcome {
    pub map: ChannelMap,
    /// Indices into the input boxes that yielded no valid index packet.
    pub unresolved: Vec<usize>,
}

/// Reads the channel index carried by each box's center pixel during the
/// calibration phase.
pub fn map_channels(
    stream: &EventStream,
    boxes: &[ChannelBox],
    layout: &ChannelLayout,
    base_rate: SymbolRate,
) -> Result<MappingOutcome> {
    let centers: Vec<(u16, u16)> = boxes.iter().map(|b| (b.cx, b.cy)).collect();
    let per_pixel = events_at(stream, &centers);
    let mut owner: HashMap<u32, usize> = HashMap::new();
    let mut entries = Vec::new();
    let mut unresolved = Vec::new();
    for (k, (bbox, events)) in boxes.iter().zip(&per_pixel).enumerate() {
        let (_, packets) = decode_pixel(events, base_rate, DecodeMode::Relative, MAPPING_PAYLOAD_LEN)?;
        let index = packets
            .iter()
            .map(|p| u16::from_le_bytes([p.payload()[0], p.payload()[1]]) as u32)
            .find(|&i| (i as usize) < layout.channel_count());
        let Some(index) = index else {
            unresolved.push(k);
            continue;
        };
        if let Some(&first) = owner.get(&index) {
            return Err(Error::AmbiguousMapping {
                index,
                first,
                second: k,
            });
        }
        owner.insert(index, k);
        entries.push(MapEntry {
            id: layout.channel(index),
            bbox: *bbox,
        });
    }
    Ok(MappingOutcome {
        map: ChannelMap::new(entries)?,
        unresolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_layout, frame_packet, Event};

    fn bits_of(s: &str) -> Bits {
        s.chars().map(|c| c == '1').collect()
    }

    fn hz(v: f64) -> SymbolRate {
        SymbolRate::from_hz(v).unwrap()
    }

    /// Events an ideal sensor would report for `bits` at `rate`.
    fn ideal_events(bits: &[bool], rate: SymbolRate) -> Vec<PixelEvent> {
        let mut prev = false;
        let mut out = Vec::new();
        for (k, &b) in bits.iter().enumerate() {
            if b != prev {
                let t = rate.symbol_start_us(k as u64);
                out.push(if b { PixelEvent::on(t) } else { PixelEvent::off(t) });
                prev = b;
            }
        }
        out
    }

    #[test]
    fn sync_ignores_overlapping_stx() {
        // One symbol after STX, so an edge-aligned window reads 0101010101.
        let rate = hz(2786.0);
        let bits = frame_packet(&[32, 0, 0]).unwrap();
        let ev = ideal_events(&bits, rate);
        let t0 = sync_absolute(&ev, rate, 3);
        assert_eq!(decode_absolute(&ev, rate, t0, bits.len()), bits);
        assert_eq!(count_pattern(&bits_of("0101010101"), STX), 1);
    }

    #[test]
    fn heatmap_counts() {
        let empty = EventStream::empty(4, 3);
        assert!(build_heatmap(&empty).counts().iter().all(|&c| c == 0));
        let ev: Vec<Event> = (0..5)
            .map(|t| Event {
                t,
                x: 2,
                y: 1,
                polarity: Polarity::On,
            })
            .collect();
        let hm = build_heatmap(&EventStream::new(4, 3, ev).unwrap());
        assert_eq!(hm.get(2, 1), 5);
        assert_eq!(hm.counts().iter().sum::<u32>(), 5);
    }

    fn blob_map(w: u16, h: u16, blobs: &[(u16, u16, u16)]) -> Heatmap {
        let mut counts = vec![0u32; w as usize * h as usize];
        for &(x0, y0, side) in blobs {
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    counts[y as usize * w as usize + x as usize] = 100;
                }
            }
        }
        Heatmap::new(w, h, counts).unwrap()
    }

    #[test]
    fn single_blob_box() {
        let hm = blob_map(12, 12, &[(3, 4, 5)]);
        let boxes = extract_channel_boxes(&hm, 0.2, 1, Connectivity::Four).unwrap();
        assert_eq!(boxes, vec![ChannelBox::from_corners(3, 4, 7, 8)]);
        assert_eq!((boxes[0].cx, boxes[0].cy), (5, 6));
    }

    #[test]
    fn separated_blobs_stay_apart() {
        // Gap of 3 = 2r + 1 pixels between 3x3 blobs.
        let hm = blob_map(16, 8, &[(1, 1, 3), (7, 1, 3)]);
        let boxes = extract_channel_boxes(&hm, 0.2, 1, Connectivity::Four).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(!boxes[0].intersects(&boxes[1]));
    }

    #[test]
    fn opening_removes_specks() {
        let mut hm = blob_map(16, 16, &[(2, 2, 4)]);
        hm.counts[12 * 16 + 12] = 100;
        let boxes = extract_channel_boxes(&hm, 0.2, 1, Connectivity::Four).unwrap();
        assert_eq!(boxes.len(), 1);
        let zero = Heatmap::new(4, 4, vec![0; 16]).unwrap();
        assert!(matches!(
            extract_channel_boxes(&zero, 0.2, 1, Connectivity::Four),
            Err(Error::NoChannelsDetected)
        ));
        let speck = Heatmap::new(4, 4, (0..16).map(|i| (i == 5) as u32).collect()).unwrap();
        assert!(matches!(
            extract_channel_boxes(&speck, 0.2, 1, Connectivity::Four),
            Err(Error::NoChannelsDetected)
        ));
    }

    #[test]
    fn diagonal_connectivity() {
        let mut counts = vec![0u32; 25];
        counts[6] = 9;
        counts[12] = 9;
        let hm = Heatmap::new(5, 5, counts).unwrap();
        assert_eq!(extract_channel_boxes(&hm, 0.5, 0, Connectivity::Four).unwrap().len(), 2);
        assert_eq!(extract_channel_boxes(&hm, 0.5, 0, Connectivity::Eight).unwrap().len(), 1);
    }

    #[test]
    fn dedup_examples() {
        let on = PixelEvent::on;
        let off = PixelEvent::off;
        let input = [on(1), on(2), on(3), off(4), off(5), on(6)];
        assert_eq!(dedup(&input), vec![on(1), off(4), on(6)]);
        assert_eq!(dedup(&[off(9)]), vec![off(9)]);
        let alt = [on(1), off(2), on(3)];
        assert_eq!(dedup(&alt), alt.to_vec());
    }

    #[test]
    fn absolute_example_word() {
        let r = hz(1000.0);
        let word = bits_of("01011001");
        let ev = ideal_events(&word, r);
        assert_eq!(decode_absolute(&ev, r, 0, 8), word);
        assert_eq!(decode_absolute(&[], r, 0, 8), vec![false; 8]);
        // +0.4 T_s keeps every event inside its window.
        let shifted: Vec<PixelEvent> = ev.iter().map(|e| PixelEvent { t: e.t + 400, ..*e }).collect();
        assert_eq!(decode_absolute(&shifted, r, 0, 8), word);
    }

    #[test]
    fn absolute_conflict_later_wins() {
        let r = hz(1000.0);
        let ev = [PixelEvent::on(1100), PixelEvent::off(1800)];
        assert_eq!(decode_absolute(&ev, r, 0, 3), bits_of("000"));
        let ev = [PixelEvent::off(1100), PixelEvent::on(1800)];
        assert_eq!(decode_absolute(&ev, r, 0, 3), bits_of("011"));
    }

    #[test]
    fn relative_single_period() {
        let r = hz(1000.0);
        let ev = [PixelEvent::off(0), PixelEvent::on(3000), PixelEvent::off(8000)];
        assert_eq!(decode_relative(&ev, r, 8).unwrap(), bits_of("00011111"));
        let shifted: Vec<PixelEvent> = ev.iter().map(|e| PixelEvent { t: e.t + 12345, ..*e }).collect();
        assert_eq!(decode_relative(&shifted, r, 8).unwrap(), bits_of("00011111"));
    }

    #[test]
    fn relative_example_word() {
        let r = hz(1000.0);
        let word = bits_of("01011001");
        let ev = ideal_events(&word, r);
        assert_eq!(decode_relative(&ev, r, 8).unwrap(), word);
        assert!(matches!(
            decode_relative(&[PixelEvent::on(0), PixelEvent::on(5)], r, 8),
            Err(Error::DedupRequired)
        ));
        assert_eq!(decode_relative(&[], r, 4).unwrap(), vec![false; 4]);
    }

    #[test]
    fn sync_recovers_delayed_stream() {
        let r = hz(588.0);
        let bits: Bits = [frame_packet(b"good").unwrap(), frame_packet(b"good").unwrap()].concat();
        let ev: Vec<PixelEvent> = ideal_events(&bits, r)
            .into_iter()
            .map(|e| PixelEvent { t: e.t + 2222, ..e })
            .collect();
        let (decoded, packets) = decode_pixel(&ev, r, DecodeMode::Absolute, 4).unwrap();
        assert_eq!(packets.len(), 2);
        assert_eq!(&decoded[..bits.len()], &bits[..]);
    }

    fn stream_of(w: u16, h: u16, mut ev: Vec<Event>) -> EventStream {
        ev.sort_by_key(|e| e.t);
        EventStream::new(w, h, ev).unwrap()
    }

    fn pixel_stream(bits: &[bool], rate: SymbolRate, x: u16, y: u16) -> Vec<Event> {
        ideal_events(bits, rate)
            .into_iter()
            .map(|e| Event {
                t: e.t,
                x,
                y,
                polarity: e.polarity,
            })
            .collect()
    }

    #[test]
    fn map_single_channel_index_7() {
        let l = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        let r = hz(588.0);
        let frame = frame_packet(&7u16.to_le_bytes()).unwrap();
        let bits: Bits = frame.iter().copied().cycle().take(96).collect();
        let s = stream_of(10, 10, pixel_stream(&bits, r, 5, 5));
        let boxes = vec![ChannelBox::from_corners(4, 4, 6, 6)];
        let out = map_channels(&s, &boxes, &l, r).unwrap();
        assert_eq!(out.map.len(), 1);
        assert_eq!(out.map.entries()[0].id.index, 7);
        assert!(out.unresolved.is_empty());
    }

    #[test]
    fn map_reports_silent_box_and_ambiguity() {
        let l = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        let r = hz(588.0);
        let bits_for = |i: u16| -> Bits {
            frame_packet(&i.to_le_bytes()).unwrap().iter().copied().cycle().take(96).collect()
        };
        let mut ev = pixel_stream(&bits_for(3), r, 1, 1);
        ev.extend(pixel_stream(&bits_for(4), r, 7, 1));
        let boxes = vec![
            ChannelBox::from_corners(0, 0, 2, 2),
            ChannelBox::from_corners(6, 0, 8, 2),
            ChannelBox::from_corners(0, 6, 2, 8),
        ];
        let out = map_channels(&stream_of(10, 10, ev.clone()), &boxes, &l, r).unwrap();
        assert_eq!(out.map.len(), 2);
        assert_eq!(out.unresolved, vec![2]);

        ev.extend(pixel_stream(&bits_for(3), r, 1, 7));
        assert!(matches!(
            map_channels(&stream_of(10, 10, ev), &boxes, &l, r),
            Err(Error::AmbiguousMapping { index: 3, .. })
        ));
    }

    #[test]
    fn decode_all_restricted_and_silent_channels() {
        let l = build_layout(64, 64, 8, 1, 2, 2).unwrap();
        let r = l.rate_of(0);
        let bits: Bits = [frame_packet(b"good").unwrap(), frame_packet(b"good").unwrap()].concat();
        let mut ev = pixel_stream(&bits, r, 1, 1);
        ev.extend(pixel_stream(&bits, r, 5, 1));
        let entries = vec![
            MapEntry {
                id: l.channel(0),
                bbox: ChannelBox::from_corners(0, 0, 2, 2),
            },
            MapEntry {
                id: l.channel(1),
                bbox: ChannelBox::from_corners(4, 0, 6, 2),
            },
            MapEntry {
                id: l.channel(2),
                bbox: ChannelBox::from_corners(0, 4, 2, 6),
            },
        ];
        let map = ChannelMap::new(entries).unwrap();
        let s = stream_of(8, 8, ev);
        for mode in [DecodeMode::Absolute, DecodeMode::Relative] {
            let cfg = DecoderConfig {
                mode,
                payload_len: 4,
            };
            let out = decode_all(&s, &map, &l, &cfg).unwrap();
            assert_eq!(out.iter().map(|c| c.packets.len()).collect::<Vec<_>>(), vec![2, 2, 0]);
            let one = decode_all(&s, &map.restricted(&[1]), &l, &cfg).unwrap();
            assert_eq!(one.len(), 1);
            assert_eq!(one[0].channel, 1);
            assert_eq!(one[0].packets[0].payload(), b"good");
        }
    }
}

//! Invariants checked over random inputs.

use proptest::prelude::*;

use selene_core::eval::ber as ber_report;
use selene_core::optics::PixelTrace;
use selene_core::rx::{build_heatmap, events_at, extract_channel_boxes, ChannelDecode, Connectivity, Heatmap, PixelEvent};
use selene_core::sensor::{generate_events, readout, RawEvent};
use selene_core::*;

fn alternating(start_on: bool, gaps: &[u64]) -> Vec<PixelEvent> {
    let mut t = 0;
    gaps.iter()
        .enumerate()
        .map(|(i, g)| {
            t += g;
            if (i % 2 == 0) == start_on {
                PixelEvent::on(t)
            } else {
                PixelEvent::off(t)
            }
        })
        .collect()
}

fn small_link() -> (ChannelLayout, selene_core::optics::Footprints) {
    let layout = build_layout(64, 64, 8, 1, 4, 4).unwrap();
    let model = ProjectionModel::posed(&layout, 24, 24, Pose::scaled(0.375)).unwrap();
    let fp = project_channels(&layout, &model, 0.0).unwrap();
    (layout, fp)
}

/// Counts whole thresholds by repeated subtraction.
fn subtract_count(mut delta: f64, theta: f64) -> u64 {
    let mut n = 0;
    while delta >= theta {
        delta -= theta;
        n += 1;
    }
    n
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn frames_roundtrip(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..64), 1..4)) {
        // All packets share one length, as on a real link.
        let len = payloads[0].len();
        let payloads: Vec<Vec<u8>> = payloads.into_iter().map(|mut p| { p.resize(len, 0xA5); p }).collect();
        let mut bits = Vec::new();
        for p in &payloads {
            bits.extend(frame_packet(p).unwrap());
        }
        prop_assert_eq!(bits.len(), payloads.len() * 8 * (len + 2));
        let d = deframe_bits(&bits, len);
        let got: Vec<Vec<u8>> = d.packets.iter().map(|p| p.payload().to_vec()).collect();
        prop_assert_eq!(got, payloads);
    }

    #[test]
    fn relative_output_has_requested_length(
        start_on in any::<bool>(),
        gaps in prop::collection::vec(1u64..20_000, 0..60),
        total in 0usize..400,
        hz in 100u32..4000,
    ) {
        let ev = alternating(start_on, &gaps);
        let bits = decode_relative(&ev, SymbolRate::from_hz(hz as f64).unwrap(), total).unwrap();
        prop_assert_eq!(bits.len(), total);
    }

    #[test]
    fn box_extraction_ignores_count_scale(
        counts in prop::collection::vec(prop::sample::select(vec![0u32, 0, 0, 1, 5, 40, 90]), 400),
        k in 2u32..50,
    ) {
        let a = Heatmap::new(20, 20, counts.clone()).unwrap();
        let b = Heatmap::new(20, 20, counts.iter().map(|c| c * k).collect()).unwrap();
        let ra = extract_channel_boxes(&a, 0.2, 1, Connectivity::Four).map_err(|e| e.to_string());
        let rb = extract_channel_boxes(&b, 0.2, 1, Connectivity::Four).map_err(|e| e.to_string());
        prop_assert_eq!(ra, rb);
    }

    #[test]
    fn duplicate_count_matches_subtraction(
        l1 in 0.0f64..5000.0,
        l2 in 0.0f64..5000.0,
        theta in 0.05f64..3.0,
    ) {
        let cfg = SensorConfig { theta_on: theta, theta_off: theta * 1.1, ..SensorConfig::default() };
        let trace = PixelTrace { x: 0, y: 0, steps: vec![(0, l1), (50, l2)] };
        let ev = generate_events(&trace, &cfg, 1000).unwrap();
        let delta = (l2 + cfg.i_dark).ln() - (l1 + cfg.i_dark).ln();
        let th = if delta >= 0.0 { cfg.theta_on } else { cfg.theta_off };
        // Skip draws within rounding distance of a threshold multiple.
        let q = delta.abs() / th;
        prop_assume!((q - q.round()).abs() > 1e-6);
        prop_assert_eq!(ev.len() as u64, subtract_count(delta.abs(), th));
    }

    #[test]
    fn nearer_pixel_is_never_stamped_later(
        t in 0u64..1000,
        near in (0u16..64, 0u16..64),
        far in (0u16..64, 0u16..64),
        coeff in 0.0f64..2.0,
        bandwidth in 1e4f64..1e9,
    ) {
        let c = 31.5;
        let d2 = |(x, y): (u16, u16)| (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
        prop_assume!(near != far && d2(near) < d2(far));
        let cfg = SensorConfig {
            radial_delay_coeff_us: coeff,
            readout_bandwidth: bandwidth,
            optical_center: Some((c, c)),
            ..SensorConfig::default()
        };
        let raw = [far, near].map(|(x, y)| RawEvent { gen_t: t, x, y, polarity: Polarity::On });
        let (s, _) = readout(&raw, &cfg, 64, 64).unwrap();
        prop_assert_eq!(s.len(), 2);
        let stamp = |p: (u16, u16)| s.events().iter().find(|e| (e.x, e.y) == p).unwrap().t;
        prop_assert!(stamp(near) <= stamp(far));
    }

    #[test]
    fn ber_of_own_and_complemented_payload(payload in prop::collection::vec(any::<u8>(), 1..16), n in 1usize..31) {
        let own = Packet::new(payload.clone()).unwrap();
        let flipped = Packet::new(payload.iter().map(|b| !b).collect()).unwrap();
        let dec = |p: &Packet| ChannelDecode { channel: 0, bits: Vec::new(), packets: vec![p.clone(); n] };
        prop_assert_eq!(ber_report(&payload, &[dec(&own)], n).mean_ber, Some(0.0));
        prop_assert_eq!(ber_report(&payload, &[dec(&flipped)], n).mean_ber, Some(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn other_pixels_do_not_change_a_channel(
        channel in 0u32..16,
        keep in prop::collection::vec(any::<bool>(), 4096),
        shift in 0u64..5000,
    ) {
        let (layout, fp) = small_link();
        let layout = layout.with_single_rate(SymbolRate::from_hz(700.0).unwrap());
        let streams = fill_payloads(&layout, b"hi", 4, 0).unwrap();
        let schedule = modulate(&layout, &streams).unwrap();
        let (stream, _) = simulate(&schedule, &fp, &OpticalConfig::default(), &SensorConfig::ideal()).unwrap();

        let hm = build_heatmap(&stream);
        let boxes = extract_channel_boxes(&hm, 0.2, 1, Connectivity::Four).unwrap();
        let entries = boxes
            .iter()
            .map(|b| {
                let index = (0..16).find(|&k| fp.pixels(k).contains(&(b.cx, b.cy))).unwrap();
                MapEntry { id: layout.channel(index), bbox: *b }
            })
            .collect();
        let map = ChannelMap::new(entries).unwrap().restricted(&[channel]);
        let center = { let b = map.get(channel).unwrap().bbox; (b.cx, b.cy) };
        let cfg = DecoderConfig { mode: DecodeMode::Relative, payload_len: 2 };
        let before = decode_all(&stream, &map, &layout, &cfg).unwrap();

        // Drop some foreign events and move the rest in time.
        let mut events: Vec<Event> = stream
            .events()
            .iter()
            .enumerate()
            .filter(|(i, e)| (e.x, e.y) == center || keep[i % keep.len()])
            .map(|(_, e)| if (e.x, e.y) == center { *e } else { Event { t: e.t + shift, ..*e } })
            .collect();
        events.sort_by_key(|e| e.t);
        let edited = EventStream::new(stream.width(), stream.height(), events).unwrap();
        prop_assert_eq!(&events_at(&edited, &[center])[0], &events_at(&stream, &[center])[0]);
        let after = decode_all(&edited, &map, &layout, &cfg).unwrap();
        prop_assert_eq!(before, after);
    }
}

//! Shared workloads for the benchmarks.

use selene_core::modulator::FrameSchedule;
use selene_core::optics::Footprints;
use selene_core::{
    build_layout, fill_payloads, modulate, project_channels, simulate, ChannelLayout, EventStream,
    OpticalConfig, Pose, ProjectionModel, SensorConfig, SymbolRate,
};

/// A `cols x rows` grid at 3x3 pixels per channel, single rate `hz`.
pub fn link(cols: u32, rows: u32, hz: f64) -> (ChannelLayout, Footprints) {
    let layout = build_layout(cols * 16, rows * 16, 8, 1, cols, rows)
        .expect("grid fits")
        .with_single_rate(SymbolRate::from_hz(hz).expect("positive rate"));
    let (w, h) = ((cols * 6 + 1) as u16, (rows * 6 + 1) as u16);
    let model = ProjectionModel::posed(&layout, w, h, Pose::scaled(0.375)).expect("invertible");
    let fp = project_channels(&layout, &model, 0.0).expect("channels visible");
    (layout, fp)
}

pub fn traffic(layout: &ChannelLayout, packets: usize) -> FrameSchedule {
    modulate(layout, &fill_payloads(layout, b"good", packets, 0).expect("payload")).expect("streams")
}

pub fn recording(layout: &ChannelLayout, fp: &Footprints, packets: usize, sensor: &SensorConfig) -> EventStream {
    simulate(&traffic(layout, packets), fp, &OpticalConfig::default(), sensor)
        .expect("simulation")
        .0
}

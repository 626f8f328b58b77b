//! Projection of channel blocks onto the camera and per-pixel illuminance.

use crate::error::{Error, Result};
use crate::model::ChannelLayout;
use crate::modulator::{FrameSchedule, Transition};

/// 2D affine map `(x, y) -> (a x + b y + c, d x + e y + f)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub coeffs: [f64; 6],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        coeffs: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.coeffs;
        (a * x + b * y + c, d * x + e * y + f)
    }

    pub fn determinant(&self) -> f64 {
        let [a, b, _, d, e, _] = self.coeffs;
        a * e - b * d
    }

    pub fn inverse(&self) -> Option<Affine> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let [a, b, c, d, e, f] = self.coeffs;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Some(Affine {
            coeffs: [ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)],
        })
    }
}

/// Similarity pose of the mirror plane relative to the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    /// Camera pixels per mirror.
    pub scale: f64,
    pub rotation_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
}

impl Pose {
    pub fn scaled(scale: f64) -> Self {
        Self {
            scale,
            rotation_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
        }
    }
}

/// Mirror coordinates to camera pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionModel {
    transform: Affine,
    camera_width: u16,
    camera_height: u16,
}

impl ProjectionModel {
    pub fn new(transform: Affine, camera_width: u16, camera_height: u16) -> Result<Self> {
        if transform.inverse().is_none() {
            return Err(Error::NonInvertible);
        }
        if camera_width == 0 || camera_height == 0 {
            return Err(Error::InvalidParameter("camera has no pixels".into()));
        }
        Ok(Self {
            transform,
            camera_width,
            camera_height,
        })
    }

    /// Maps the mirror-array center onto the camera center, then applies the
    /// pose (scale and rotation about that point, translation in pixels).
    pub fn posed(
        layout: &ChannelLayout,
        camera_width: u16,
        camera_height: u16,
        pose: Pose,
    ) -> Result<Self> {
        let (mx, my) = (
            layout.mirror_cols() as f64 / 2.0,
            layout.mirror_rows() as f64 / 2.0,
        );
        let (cx, cy) = (camera_width as f64 / 2.0, camera_height as f64 / 2.0);
        let (s, th) = (pose.scale, pose.rotation_deg.to_radians());
        let (a, b, d, e) = (s * th.cos(), -s * th.sin(), s * th.sin(), s * th.cos());
        let c = cx + pose.translate_x - (a * mx + b * my);
        let f = cy + pose.translate_y - (d * mx + e * my);
        Self::new(
            Affine {
                coeffs: [a, b, c, d, e, f],
            },
            camera_width,
            camera_height,
        )
    }

    pub fn transform(&self) -> Affine {
        self.transform
    }

    pub fn camera_width(&self) -> u16 {
        self.camera_width
    }

    pub fn camera_height(&self) -> u16 {
        self.camera_height
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpticalConfig {
    pub ambient_lux: f64,
    /// Illuminance added on a lit footprint when its channel is ON.
    pub channel_on_lux: f64,
    /// Distance/surface loss factor in (0, 1].
    pub attenuation: f64,
    /// Fraction in [0, 1) by which each block shrinks before projection.
    pub footprint_margin: f64,
    /// Fraction of a channel's ON illuminance leaking onto the one-pixel ring
    /// around its footprint. Uncalibrated.
    pub crosstalk: f64,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            ambient_lux: 0.0,
            channel_on_lux: 1000.0,
            attenuation: 1.0,
            footprint_margin: 0.0,
            crosstalk: 0.0,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.ambient_lux >= 0.0) {
            return bad("ambient_lux must be >= 0");
        }
        if !(self.channel_on_lux > 0.0) {
            return bad("channel_on_lux must be > 0");
        }
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return bad("attenuation must lie in (0, 1]");
        }
        if !(self.footprint_margin >= 0.0 && self.footprint_margin < 1.0) {
            return bad("footprint_margin must lie in [0, 1)");
        }
        if !(self.crosstalk >= 0.0) {
            return bad("crosstalk must be >= 0");
        }
        Ok(())
    }

    fn on_amplitude(&self) -> f64 {
        self.channel_on_lux * self.attenuation
    }
}

/// Rasterized channel footprints on a camera.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Footprints {
    width: u16,
    height: u16,
    channels: Vec<Vec<(u16, u16)>>,
}

impl Footprints {
    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Pixels of channel `index`, in raster order.
    pub fn pixels(&self, index: u32) -> &[(u16, u16)] {
        &self.channels[index as usize]
    }

    pub fn lit_pixel_count(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    /// Per-pixel channel label (`None` outside every footprint), row-major.
    pub fn label_image(&self) -> Vec<Option<u32>> {
        let mut img = vec![None; self.width as usize * self.height as usize];
        for (c, px) in self.channels.iter().enumerate() {
            for &(x, y) in px {
                img[y as usize * self.width as usize + x as usize] = Some(c as u32);
            }
        }
        img
    }
}

/// Rasterizes every channel block (shrunk by `margin`) through the projection.
///
/// A pixel belongs to a block when its center maps back inside the block.
/// Footprints must be non-empty and must not touch (8-neighbourhood), else
/// the receiver could not separate them.
pub fn project_channels(
    layout: &ChannelLayout,
    model: &ProjectionModel,
    margin: f64,
) -> Result<Footprints> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidParameter(
            "footprint margin must lie in [0, 1)".into(),
        ));
    }
    let inv = model.transform.inverse().ok_or(Error::NonInvertible)?;
    let (w, h) = (model.camera_width, model.camera_height);
    let mut channels = Vec::with_capacity(layout.channel_count());
    for c in 0..layout.channel_count() as u32 {
        let r = layout.block_rect(c);
        let inset = margin * layout.block_size() as f64 / 2.0;
        let (x0, y0) = (r.x0 as f64 + inset, r.y0 as f64 + inset);
        let (x1, y1) = (r.x1 as f64 - inset, r.y1 as f64 - inset);
        let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].map(|(x, y)| model.transform.apply(x, y));
        let min_x = corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let px0 = (min_x.floor() - 1.0).max(0.0) as i64;
        let py0 = (min_y.floor() - 1.0).max(0.0) as i64;
        let px1 = (max_x.ceil() + 1.0).min(w as f64 - 1.0) as i64;
        let py1 = (max_y.ceil() + 1.0).min(h as f64 - 1.0) as i64;
        let mut pixels = Vec::new();
        for py in py0..=py1 {
            for px in px0..=px1 {
                let (mx, my) = inv.apply(px as f64 + 0.5, py as f64 + 0.5);
                if mx >= x0 && mx < x1 && my >= y0 && my < y1 {
                    pixels.push((px as u16, py as u16));
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::ChannelNotVisible(c));
        }
        channels.push(pixels);
    }
    let fp = Footprints {
        width: w,
        height: h,
        channels,
    };
    check_separation(&fp)?;
    Ok(fp)
}

fn check_separation(fp: &Footprints) -> Result<()> {
    let img = fp.label_image();
    let (w, h) = (fp.width as usize, fp.height as usize);
    for y in 0..h {
        for x in 0..w {
            let Some(a) = img[y * w + x] else { continue };
            // Forward half of the 8-neighbourhood covers every pair once.
            for (dx, dy) in [(1i64, 0i64), (-1, 1), (0, 1), (1, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                if let Some(b) = img[ny as usize * w + nx as usize] {
                    if a != b {
                        return Err(Error::ChannelsMerge {
                            a: a.min(b),
                            b: a.max(b),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Piecewise-constant illuminance of one pixel.
///
/// `steps[0]` is the pre-stream level (all channels dark) at `t = 0`; later
/// steps are strictly increasing in time, except that a transition at `t = 0`
/// itself may share the first timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTrace {
    pub x: u16,
    pub y: u16,
    pub steps: Vec<(u64, f64)>,
}

/// Lit pixels and the channels driving each one.
#[derive(Clone, Debug)]
pub struct Scene {
    width: u16,
    height: u16,
    ambient: f64,
    pixels: Vec<LitPixel>,
}

#[derive(Clone, Debug)]
pub struct LitPixel {
    pub x: u16,
    pub y: u16,
    /// `(channel, weight)`, weight in units of the ON amplitude.
    pub sources: Vec<(u32, f64)>,
}

impl Scene {
    pub fn new(footprints: &Footprints, optics: &OpticalConfig) -> Result<Self> {
        optics.validate()?;
        let (w, h) = (footprints.width as usize, footprints.height as usize);
        let amp = optics.on_amplitude();
        let mut sources: Vec<Vec<(u32, f64)>> = vec![Vec::new(); w * h];
        for (c, px) in footprints.channels.iter().enumerate() {
            for &(x, y) in px {
                sources[y as usize * w + x as usize].push((c as u32, amp));
            }
        }
        if optics.crosstalk > 0.0 {
            let img = footprints.label_image();
            let leak = amp * optics.crosstalk;
            let mut ring: Vec<Vec<u32>> = vec![Vec::new(); w * h];
            for (c, px) in footprints.channels.iter().enumerate() {
                for &(x, y) in px {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let i = ny as usize * w + nx as usize;
                            if img[i].is_none() && !ring[i].contains(&(c as u32)) {
                                ring[i].push(c as u32);
                            }
                        }
                    }
                }
            }
            for (i, chans) in ring.into_iter().enumerate() {
                sources[i].extend(chans.into_iter().map(|c| (c, leak)));
            }
        }
        let pixels = sources
            .into_iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(i, sources)| LitPixel {
                x: (i % w) as u16,
                y: (i / w) as u16,
                sources,
            })
            .collect();
        Ok(Self {
            width: footprints.width,
            height: footprints.height,
            ambient: optics.ambient_lux,
            pixels,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn ambient(&self) -> f64 {
        self.ambient
    }

    pub fn lit_pixels(&self) -> &[LitPixel] {
        &self.pixels
    }

    /// Trace of lit pixel `i` given per-channel transitions.
    pub fn trace(&self, i: usize, per_channel: &[Vec<Transition>]) -> PixelTrace {
        let p = &self.pixels[i];
        let mut steps = vec![(0, self.ambient)];
        if let [(c, wgt)] = p.sources[..] {
            for tr in &per_channel[c as usize] {
                let lux = self.ambient + if tr.state.is_on() { wgt } else { 0.0 };
                steps.push((tr.t, lux));
            }
        } else {
            let mut merged: Vec<(u64, usize, bool)> = p
                .sources
                .iter()
                .enumerate()
                .flat_map(|(k, (c, _))| {
                    per_channel[*c as usize]
                        .iter()
                        .map(move |tr| (tr.t, k, tr.state.is_on()))
                })
                .collect();
            merged.sort_unstable();
            let mut on = vec![false; p.sources.len()];
            let mut idx = 0;
            while idx < merged.len() {
                let t = merged[idx].0;
                while idx < merged.len() && merged[idx].0 == t {
                    on[merged[idx].1] = merged[idx].2;
                    idx += 1;
                }
                let lux = self.ambient
                    + p.sources
                        .iter()
                        .zip(&on)
                        .filter(|(_, &o)| o)
                        .map(|((_, w), _)| w)
                        .sum::<f64>();
                steps.push((t, lux));
            }
        }
        PixelTrace {
            x: p.x,
            y: p.y,
            steps,
        }
    }
}

/// Illuminance traces for every camera pixel, row-major. Pixels outside all
/// footprints (and their crosstalk rings) hold the ambient level.
pub fn render_traces(
    schedule: &FrameSchedule,
    footprints: &Footprints,
    optics: &OpticalConfig,
) -> Result<Vec<PixelTrace>> {
    let scene = Scene::new(footprints, optics)?;
    let per_channel = schedule.per_channel();
    let w = footprints.width as usize;
    let mut out: Vec<PixelTrace> = (0..w * footprints.height as usize)
        .map(|i| PixelTrace {
            x: (i % w) as u16,
            y: (i / w) as u16,
            steps: vec![(0, optics.ambient_lux)],
        })
        .collect();
    for i in 0..scene.pixels.len() {
        let tr = scene.trace(i, &per_channel);
        let k = tr.y as usize * w + tr.x as usize;
        out[k] = tr;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_layout, SymbolRate};
    use crate::modulator::{modulate, ChannelBitstream};

    fn grid(n: u32) -> ChannelLayout {
        build_layout(16 * n, 16 * n, 8, 1, n, n).unwrap()
    }

    /// Independent rasterizer: tests every camera pixel against every block.
    fn brute_footprints(layout: &ChannelLayout, model: &ProjectionModel) -> Vec<Vec<(u16, u16)>> {
        let inv = model.transform().inverse().unwrap();
        (0..layout.channel_count() as u32)
            .map(|c| {
                let r = layout.block_rect(c);
                let mut v = Vec::new();
                for y in 0..model.camera_height() {
                    for x in 0..model.camera_width() {
                        let (mx, my) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
                        if mx >= r.x0 as f64 && mx < r.x1 as f64 && my >= r.y0 as f64 && my < r.y1 as f64 {
                            v.push((x, y));
                        }
                    }
                }
                v
            })
            .collect()
    }

    #[test]
    fn axis_aligned_scaling_gives_3x3() {
        let l = grid(1);
        let m = ProjectionModel::posed(&l, 12, 12, Pose::scaled(3.0 / 8.0)).unwrap();
        let fp = project_channels(&l, &m, 0.0).unwrap();
        assert_eq!(fp.pixels(0).len(), 9);
    }

    #[test]
    fn half_pixel_translation_stays_disjoint() {
        let l = grid(5);
        let base = ProjectionModel::posed(&l, 40, 40, Pose::scaled(3.0 / 8.0)).unwrap();
        let shifted = ProjectionModel::posed(
            &l,
            40,
            40,
            Pose {
                translate_x: 0.5,
                translate_y: 0.5,
                ..Pose::scaled(3.0 / 8.0)
            },
        )
        .unwrap();
        let a = project_channels(&l, &base, 0.0).unwrap();
        let b = project_channels(&l, &shifted, 0.0).unwrap();
        assert_eq!(b.channels, brute_footprints(&l, &shifted));
        for c in 0..25 {
            for (p, q) in a.pixels(c).iter().zip(b.pixels(c)) {
                assert!(q.0.abs_diff(p.0) <= 1 && q.1.abs_diff(p.1) <= 1);
            }
        }
    }

    #[test]
    fn rotated_paper_grid_is_separable() {
        let l = build_layout(912, 1140, 8, 1, 57, 35).unwrap();
        let m = ProjectionModel::posed(
            &l,
            800,
            600,
            Pose {
                rotation_deg: 10.0,
                ..Pose::scaled(0.625)
            },
        )
        .unwrap();
        let fp = project_channels(&l, &m, 0.0).unwrap();
        assert_eq!(fp.channel_count(), 1995);
        // Exhaustive pairwise check through the label image.
        let img = fp.label_image();
        let total: usize = img.iter().filter(|p| p.is_some()).count();
        assert_eq!(total, fp.lit_pixel_count());
    }

    #[test]
    fn too_small_scale_merges() {
        let l = build_layout(64, 64, 8, 0, 8, 8);
        let l = l.unwrap();
        let m = ProjectionModel::posed(&l, 32, 32, Pose::scaled(0.5)).unwrap();
        assert!(matches!(
            project_channels(&l, &m, 0.0),
            Err(Error::ChannelsMerge { .. })
        ));
        let tiny = ProjectionModel::posed(&grid(2), 32, 32, Pose::scaled(0.02)).unwrap();
        assert!(matches!(
            project_channels(&grid(2), &tiny, 0.0),
            Err(Error::ChannelNotVisible(_))
        ));
        assert!(ProjectionModel::new(
            Affine {
                coeffs: [1.0, 2.0, 0.0, 2.0, 4.0, 0.0]
            },
            10,
            10
        )
        .is_err());
    }

    #[test]
    fn affine_inverse_roundtrip() {
        let a = Affine {
            coeffs: [0.7, -0.2, 13.0, 0.3, 0.9, -4.0],
        };
        let inv = a.inverse().unwrap();
        let (x, y) = a.apply(3.5, -8.25);
        let (bx, by) = inv.apply(x, y);
        assert!((bx - 3.5).abs() < 1e-12 && (by + 8.25).abs() < 1e-12);
    }

    fn toggling(rate: f64, bits: usize) -> (ChannelLayout, FrameSchedule) {
        let r = SymbolRate::from_hz(rate).unwrap();
        let l = grid(1).with_single_rate(r);
        let s = modulate(
            &l,
            &[ChannelBitstream {
                channel: 0,
                bits: (0..bits).map(|k| k % 2 == 1).collect(),
                rate: r,
            }],
        )
        .unwrap();
        (l, s)
    }

    // A 9x9 camera keeps every pixel center clear of the block edges.
    fn render(optics: OpticalConfig) -> (Vec<PixelTrace>, Footprints) {
        let (l, s) = toggling(2000.0, 8);
        let m = ProjectionModel::posed(&l, 9, 9, Pose::scaled(3.0 / 8.0)).unwrap();
        let fp = project_channels(&l, &m, 0.0).unwrap();
        (render_traces(&s, &fp, &optics).unwrap(), fp)
    }

    #[test]
    fn square_wave_traces() {
        let optics = OpticalConfig {
            ambient_lux: 0.0,
            channel_on_lux: 100.0,
            ..Default::default()
        };
        let (traces, fp) = render(optics);
        let (x, y) = fp.pixels(0)[0];
        let tr = &traces[y as usize * 9 + x as usize];
        assert_eq!(
            tr.steps,
            vec![
                (0, 0.0),
                (500, 100.0),
                (1000, 0.0),
                (1500, 100.0),
                (2000, 0.0),
                (2500, 100.0),
                (3000, 0.0),
                (3500, 100.0)
            ]
        );
        // Conservation: transitions + initial step.
        assert_eq!(tr.steps.len(), 7 + 1);
        let dark = traces.iter().filter(|t| t.steps.len() == 1).count();
        assert_eq!(dark, 81 - 9);
        assert!(traces
            .iter()
            .filter(|t| t.steps.len() == 1)
            .all(|t| t.steps[0].1 == 0.0));

        let (lit, _) = render(OpticalConfig {
            ambient_lux: 433.0,
            channel_on_lux: 100.0,
            ..Default::default()
        });
        let t = &lit[y as usize * 9 + x as usize];
        assert_eq!(t.steps[1].1, 533.0);
        assert_eq!(t.steps[2].1, 433.0);
        let (half, _) = render(OpticalConfig {
            channel_on_lux: 100.0,
            attenuation: 0.5,
            ..Default::default()
        });
        assert_eq!(half[y as usize * 9 + x as usize].steps[1].1, 50.0);
    }

    #[test]
    fn attenuation_is_monotone() {
        let mut prev: Option<Vec<PixelTrace>> = None;
        for att in [0.1, 0.3, 0.6, 1.0] {
            let (traces, _) = render(OpticalConfig {
                ambient_lux: 10.0,
                attenuation: att,
                ..Default::default()
            });
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&traces) {
                    for (sa, sb) in a.steps.iter().zip(&b.steps) {
                        assert_eq!(sa.0, sb.0);
                        assert!(sb.1 >= sa.1);
                    }
                }
            }
            prev = Some(traces);
        }
    }

    #[test]
    fn crosstalk_ring() {
        let (l, s) = toggling(1000.0, 4);
        let m = ProjectionModel::posed(&l, 9, 9, Pose::scaled(3.0 / 8.0)).unwrap();
        let fp = project_channels(&l, &m, 0.0).unwrap();
        let optics = OpticalConfig {
            channel_on_lux: 100.0,
            crosstalk: 0.1,
            ..Default::default()
        };
        let traces = render_traces(&s, &fp, &optics).unwrap();
        let lit = traces.iter().filter(|t| t.steps.len() > 1).count();
        // 3x3 footprint plus its 16-pixel ring.
        assert_eq!(lit, 25);
        let ring_max = traces
            .iter()
            .filter(|t| !fp.pixels(0).contains(&(t.x, t.y)))
            .flat_map(|t| t.steps.iter().map(|s| s.1))
            .fold(0.0, f64::max);
        assert!((ring_max - 10.0).abs() < 1e-12);
    }
}

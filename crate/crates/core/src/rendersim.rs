//! Miniature deterministic 2-D render pipeline with fault injection.
//!
//! Scenes are ordered layers (rects, gradients, moving sprites) composited
//! by cameras onto one persistent canvas, frame by frame. Each camera clears
//! per its clear flag, draws its masked layers back-to-front, then applies
//! its post-effect stack. Because the canvas persists across frames, a
//! camera that stops clearing (`Nothing` / `DepthOnly`) leaks the previous
//! frame — exactly the frame-overlay bug class.
//!
//! Three fault kinds are injectable mid-sequence:
//! - `camera_disabled`: the camera's output region fills with seeded
//!   "uninitialized memory" (blocky colors or per-pixel noise)
//! - `clearflag_override`: the camera's clear flag is replaced
//! - `stale_post_effect`: an effect the camera never authored is appended
//!
//! Glitch masks are the exact pixel difference against the fault-free
//! render of the same frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageRGB, Mask};
use crate::manifest::{DatasetManifest, Generator, GlitchClass, Label, SampleRecord};
use crate::rng::derive_seed;

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
    /// Ramp along x + y; never constant along either axis.
    Diagonal,
}

/// Procedurally generated sprite bitmap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SpritePattern {
    Checker { w: u32, h: u32, cell: u32, color_a: [u8; 3], color_b: [u8; 3] },
    Disc { radius: u32, color: [u8; 3] },
    /// Static per-cell colored noise, seeded from the scene seed and the
    /// layer index (a fixed texture asset, identical every frame).
    Noise { w: u32, h: u32, cell: u32 },
}

/// One drawable layer. Sprites displace by `(dx, dy)` every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    SolidRect { x: i64, y: i64, w: u32, h: u32, color: [u8; 3] },
    GradientRect { x: i64, y: i64, w: u32, h: u32, start: [u8; 3], end: [u8; 3], axis: Axis },
    Sprite {
        x: i64,
        y: i64,
        #[serde(default)]
        dx: i64,
        #[serde(default)]
        dy: i64,
        pattern: SpritePattern,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClearFlag {
    SkyBox,
    SolidColor,
    DepthOnly,
    Nothing,
}

/// Buffer transform applied after a camera draws. Mirrors reflect the first
/// half of the canvas onto the second (the symmetric "lake" look), so a
/// second application leaves the buffer unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum PostEffect {
    MirrorVertical,
    MirrorHorizontal,
    Overexpose { gain: f64 },
    /// Black side bars covering `bar_fraction` of the width on each side.
    Letterbox { bar_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub clear_flag: ClearFlag,
    #[serde(default)]
    pub clear_color: [u8; 3],
    /// Layer indices this camera draws, back-to-front by layer order.
    pub layer_mask: Vec<usize>,
    #[serde(default)]
    pub post_effects: Vec<PostEffect>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub layers: Vec<LayerSpec>,
    pub cameras: Vec<CameraSpec>,
    pub frame_count: u32,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UninitTexture {
    /// Blocky solid-colored garbage (reads as abnormal color blocks).
    Blocks,
    /// Per-pixel random garbage (reads as random noise).
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FaultKind {
    CameraDisabled { texture: UninitTexture },
    ClearflagOverride { value: ClearFlag },
    StalePostEffect { effect: PostEffect },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault: FaultKind,
    pub target_camera: usize,
    /// First frame (0-based) the fault is active.
    pub onset_frame: u32,
}

impl FaultSpec {
    pub fn glitch_class(&self) -> GlitchClass {
        match &self.fault {
            FaultKind::CameraDisabled { texture: UninitTexture::Blocks } => {
                GlitchClass::AbnormalColorBlock
            }
            FaultKind::CameraDisabled { texture: UninitTexture::Noise } => {
                GlitchClass::RandomNoise
            }
            FaultKind::ClearflagOverride { value } => match value {
                ClearFlag::Nothing | ClearFlag::DepthOnly => GlitchClass::FrameOverlay,
                // Swapping to a different clearing background manifests as a
                // wrong-colored block, not an overlay.
                ClearFlag::SolidColor | ClearFlag::SkyBox => GlitchClass::AbnormalColorBlock,
            },
            FaultKind::StalePostEffect { effect } => match effect {
                PostEffect::MirrorVertical | PostEffect::MirrorHorizontal => {
                    GlitchClass::PartialRepetition
                }
                PostEffect::Overexpose { .. } => GlitchClass::Overexposed,
                PostEffect::Letterbox { .. } => GlitchClass::BlackBorder,
            },
        }
    }
}

/// A scene plus the faults to inject into it; the on-disk JSON schema for
/// `synth-inject` scene files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBundle {
    pub scene: SceneSpec,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(Error::Scene("canvas dimensions must be nonzero".into()));
        }
        if self.frame_count == 0 {
            return Err(Error::Scene("frame_count must be >= 1".into()));
        }
        if self.cameras.is_empty() {
            return Err(Error::Scene("scene needs at least one camera".into()));
        }
        for (ci, cam) in self.cameras.iter().enumerate() {
            // A camera may draw no layers at all (clear-only cameras are
            // legitimate, e.g. a plain background pass).
            for &li in &cam.layer_mask {
                if li >= self.layers.len() {
                    return Err(Error::Scene(format!(
                        "camera {ci} references layer {li}, scene has {}",
                        self.layers.len()
                    )));
                }
            }
            for effect in &cam.post_effects {
                validate_effect(effect)?;
            }
        }
        for (li, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Sprite { pattern, .. } = layer {
                let ok = match pattern {
                    SpritePattern::Checker { w, h, cell, .. } => *w > 0 && *h > 0 && *cell > 0,
                    SpritePattern::Disc { radius, .. } => *radius > 0,
                    SpritePattern::Noise { w, h, cell } => *w > 0 && *h > 0 && *cell > 0,
                };
                if !ok {
                    return Err(Error::Scene(format!("layer {li} has a degenerate sprite")));
                }
            }
        }
        Ok(())
    }

    pub fn validate_fault(&self, fault: &FaultSpec) -> Result<()> {
        if fault.target_camera >= self.cameras.len() {
            return Err(Error::Scene(format!(
                "fault targets camera {}, scene has {}",
                fault.target_camera,
                self.cameras.len()
            )));
        }
        if fault.onset_frame >= self.frame_count {
            return Err(Error::Scene(format!(
                "fault onset {} is past the last frame {}",
                fault.onset_frame,
                self.frame_count - 1
            )));
        }
        if let FaultKind::StalePostEffect { effect } = &fault.fault {
            validate_effect(effect)?;
        }
        Ok(())
    }
}

fn validate_effect(effect: &PostEffect) -> Result<()> {
    match effect {
        PostEffect::Overexpose { gain } if *gain <= 0.0 => {
            Err(Error::Scene("overexpose gain must be positive".into()))
        }
        PostEffect::Letterbox { bar_fraction } if !(0.0..=0.5).contains(bar_fraction) => {
            Err(Error::Scene("letterbox bar_fraction must be in [0, 0.5]".into()))
        }
        _ => Ok(()),
    }
}

/// Position-keyed hash color, so textures are independent of draw order.
fn hash_color(seed: u64, a: u64, b: u64) -> [u8; 3] {
    let h = derive_seed(seed, a.wrapping_mul(0x9e37_79b9).wrapping_add(b));
    [(h >> 16) as u8, (h >> 32) as u8, (h >> 48) as u8]
}

/// Procedural sky: a diagonal ramp from the camera's clear color toward a
/// brightened version, a low-frequency wave field whose phases derive from
/// the clear color, and a faint position-keyed dither. Every region of the
/// sky then carries both coarse structure and fine texture, so flattening,
/// copying, or overpainting any patch of it is locally visible, while
/// nothing resembles actual noise garbage.
fn sky_color(x: u32, y: u32, width: u32, height: u32, base: [u8; 3]) -> [u8; 3] {
    let span = (width + height).max(3) - 2;
    let t = (x + y) as f64 / span as f64;
    let tau = std::f64::consts::TAU;
    let phase_x = base[0] as f64 / 255.0 * tau;
    let phase_y = base[1] as f64 / 255.0 * tau;
    let wave = 28.0
        * (tau * x as f64 / (width as f64 / 3.2) + phase_x).sin()
        * (tau * y as f64 / (height as f64 / 2.6) + phase_y).sin();
    let d = hash_color(0x5C_D17E, x as u64, y as u64);
    let ramp = |c: u8, dither: u8| {
        let hi = (c as f64 + 150.0).min(250.0);
        let v = c as f64 + (hi - c as f64) * t + wave + (dither % 21) as f64 - 10.0;
        v.round().clamp(0.0, 255.0) as u8
    };
    [ramp(base[0], d[0]), ramp(base[1], d[1]), ramp(base[2], d[2])]
}

struct Painter<'a> {
    canvas: &'a mut ImageRGB,
    writes: Option<&'a mut Mask>,
}

impl<'a> Painter<'a> {
    #[inline]
    fn put(&mut self, x: u32, y: u32, color: [u8; 3]) {
        self.canvas.set(x, y, color);
        if let Some(w) = self.writes.as_deref_mut() {
            w.set(x, y, true);
        }
    }

    fn width(&self) -> u32 {
        self.canvas.width()
    }

    fn height(&self) -> u32 {
        self.canvas.height()
    }
}

fn draw_layer(p: &mut Painter, scene: &SceneSpec, layer_index: usize, frame: u32) {
    match &scene.layers[layer_index] {
        LayerSpec::SolidRect { x, y, w, h, color } => {
            fill_rect(p, *x, *y, *w, *h, |_, _| *color);
        }
        LayerSpec::GradientRect { x, y, w, h, start, end, axis } => {
            let (w0, h0) = (*w, *h);
            let (start, end, axis) = (*start, *end, *axis);
            fill_rect(p, *x, *y, w0, h0, |dx, dy| {
                let t = match axis {
                    Axis::Horizontal => dx as f64 / (w0.max(2) - 1) as f64,
                    Axis::Vertical => dy as f64 / (h0.max(2) - 1) as f64,
                    Axis::Diagonal => (dx + dy) as f64 / ((w0 + h0).max(3) - 2) as f64,
                };
                let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
                [lerp(start[0], end[0]), lerp(start[1], end[1]), lerp(start[2], end[2])]
            });
        }
        LayerSpec::Sprite { x, y, dx, dy, pattern } => {
            let (sw, sh) = match pattern {
                SpritePattern::Checker { w, h, .. } | SpritePattern::Noise { w, h, .. } => {
                    (*w, *h)
                }
                SpritePattern::Disc { radius, .. } => (*radius * 2 + 1, *radius * 2 + 1),
            };
            let px = bounce_position(*x, *dx, frame, p.width() as i64 - sw as i64);
            let py = bounce_position(*y, *dy, frame, p.height() as i64 - sh as i64);
            match pattern {
                SpritePattern::Checker { w, h, cell, color_a, color_b } => {
                    let (cell, a, b) = (*cell, *color_a, *color_b);
                    fill_rect(p, px, py, *w, *h, |sx, sy| {
                        if ((sx / cell) + (sy / cell)) % 2 == 0 {
                            a
                        } else {
                            b
                        }
                    });
                }
                SpritePattern::Disc { radius, color } => {
                    let r = *radius as i64;
                    let color = *color;
                    let d = (*radius * 2 + 1, *radius * 2 + 1);
                    fill_rect_filtered(p, px, py, d.0, d.1, |sx, sy| {
                        let ddx = sx as i64 - r;
                        let ddy = sy as i64 - r;
                        if ddx * ddx + ddy * ddy <= r * r {
                            Some(color)
                        } else {
                            None
                        }
                    });
                }
                SpritePattern::Noise { w, h, cell } => {
                    let tex_seed = derive_seed(scene.seed, 0x5EED ^ layer_index as u64);
                    let cell = *cell;
                    fill_rect(p, px, py, *w, *h, |sx, sy| {
                        hash_color(tex_seed, (sx / cell) as u64, (sy / cell) as u64)
                    });
                }
            }
        }
    }
}

/// Sprite trajectory: per-frame displacement reflecting off the canvas
/// edges, so moving sprites never leave the frame. Pure in the frame index.
/// `hi` is the largest on-canvas position; when the sprite has no room to
/// move the start position clamps instead.
pub fn bounce_position(start: i64, step: i64, frame: u32, hi: i64) -> i64 {
    if hi <= 0 {
        return start.clamp(hi.min(0), 0.max(hi));
    }
    let period = 2 * hi;
    let u = (start.clamp(0, hi) + step * frame as i64).rem_euclid(period);
    u.min(period - u)
}

/// Fills a rect clipped to the canvas; the closure maps sprite-local coords
/// to a color.
fn fill_rect(p: &mut Painter, x: i64, y: i64, w: u32, h: u32, color: impl Fn(u32, u32) -> [u8; 3]) {
    fill_rect_filtered(p, x, y, w, h, |sx, sy| Some(color(sx, sy)));
}

fn fill_rect_filtered(
    p: &mut Painter,
    x: i64,
    y: i64,
    w: u32,
    h: u32,
    color: impl Fn(u32, u32) -> Option<[u8; 3]>,
) {
    let (cw, ch) = (p.width() as i64, p.height() as i64);
    for sy in 0..h {
        let cy = y + sy as i64;
        if cy < 0 || cy >= ch {
            continue;
        }
        for sx in 0..w {
            let cx = x + sx as i64;
            if cx < 0 || cx >= cw {
                continue;
            }
            if let Some(c) = color(sx, sy) {
                p.put(cx as u32, cy as u32, c);
            }
        }
    }
}

fn apply_post_effect(p: &mut Painter, effect: &PostEffect) {
    let (w, h) = (p.width(), p.height());
    match effect {
        PostEffect::MirrorVertical => {
            for y in h.div_ceil(2)..h {
                for x in 0..w {
                    let c = p.canvas.get(x, h - 1 - y);
                    p.put(x, y, c);
                }
            }
        }
        PostEffect::MirrorHorizontal => {
            for y in 0..h {
                for x in w.div_ceil(2)..w {
                    let c = p.canvas.get(w - 1 - x, y);
                    p.put(x, y, c);
                }
            }
        }
        PostEffect::Overexpose { gain } => {
            for y in 0..h {
                for x in 0..w {
                    let c = p.canvas.get(x, y);
                    let amp = |v: u8| ((v as f64 * gain).round()).min(255.0) as u8;
                    p.put(x, y, [amp(c[0]), amp(c[1]), amp(c[2])]);
                }
            }
        }
        PostEffect::Letterbox { bar_fraction } => {
            let bar = ((w as f64 * bar_fraction).round() as u32).min(w / 2);
            for y in 0..h {
                for x in 0..bar {
                    p.put(x, y, [0, 0, 0]);
                }
                for x in w - bar..w {
                    p.put(x, y, [0, 0, 0]);
                }
            }
        }
    }
}

fn fill_uninit(p: &mut Painter, region: &Mask, texture: UninitTexture, frame_seed: u64) {
    let (w, h) = (p.width(), p.height());
    match texture {
        UninitTexture::Blocks => {
            // Block edge in [8, 64], derived from the frame seed.
            let q = 8 + (derive_seed(frame_seed, 0xB10C) % 57) as u32;
            for y in 0..h {
                for x in 0..w {
                    if region.get(x, y) {
                        let c = hash_color(frame_seed, (x / q) as u64, (y / q) as u64);
                        p.put(x, y, c);
                    }
                }
            }
        }
        UninitTexture::Noise => {
            for y in 0..h {
                for x in 0..w {
                    if region.get(x, y) {
                        let c = hash_color(frame_seed, x as u64, y as u64 | (1 << 40));
                        p.put(x, y, c);
                    }
                }
            }
        }
    }
}

struct PipelineRun {
    frames: Vec<ImageRGB>,
    /// Per-frame write region of the tracked camera, when requested.
    tracked_writes: Vec<Mask>,
}

fn run_pipeline(
    scene: &SceneSpec,
    fault: Option<&FaultSpec>,
    track_camera: Option<usize>,
    disabled_region: Option<&[Mask]>,
) -> Result<PipelineRun> {
    let (w, h) = (scene.canvas_width, scene.canvas_height);
    let mut canvas = ImageRGB::new(w, h)?;
    let mut frames = Vec::with_capacity(scene.frame_count as usize);
    let mut tracked_writes = Vec::new();

    for t in 0..scene.frame_count {
        let mut frame_track = track_camera.map(|_| Mask::new(w, h));
        for (ci, cam) in scene.cameras.iter().enumerate() {
            if !cam.enabled {
                continue;
            }
            let mut clear_flag = cam.clear_flag;
            let mut stale_effect = None;
            let mut disabled = false;
            if let Some(f) = fault {
                if f.target_camera == ci && t >= f.onset_frame {
                    match &f.fault {
                        FaultKind::CameraDisabled { texture } => {
                            disabled = true;
                            let region = &disabled_region
                                .expect("camera_disabled needs the fault-free write regions")
                                [t as usize];
                            let frame_seed = derive_seed(scene.seed, 0xD15A ^ t as u64);
                            let mut painter = Painter { canvas: &mut canvas, writes: None };
                            fill_uninit(&mut painter, region, *texture, frame_seed);
                        }
                        FaultKind::ClearflagOverride { value } => clear_flag = *value,
                        FaultKind::StalePostEffect { effect } => {
                            stale_effect = Some(effect.clone())
                        }
                    }
                }
            }
            if disabled {
                continue;
            }

            let tracking_this = track_camera == Some(ci);
            let mut painter = Painter {
                canvas: &mut canvas,
                writes: if tracking_this { frame_track.as_mut() } else { None },
            };
            match clear_flag {
                ClearFlag::SolidColor => {
                    for y in 0..h {
                        for x in 0..w {
                            painter.put(x, y, cam.clear_color);
                        }
                    }
                }
                ClearFlag::SkyBox => {
                    for y in 0..h {
                        for x in 0..w {
                            painter.put(x, y, sky_color(x, y, w, h, cam.clear_color));
                        }
                    }
                }
                // No color-buffer writes; draw-order state has no analogue
                // in a painter's pipeline.
                ClearFlag::DepthOnly | ClearFlag::Nothing => {}
            }
            let mut layer_order: Vec<usize> = cam.layer_mask.clone();
            layer_order.sort_unstable();
            layer_order.dedup();
            for li in layer_order {
                draw_layer(&mut painter, scene, li, t);
            }
            for effect in &cam.post_effects {
                apply_post_effect(&mut painter, effect);
            }
            if let Some(effect) = stale_effect {
                apply_post_effect(&mut painter, &effect);
            }
        }
        frames.push(canvas.clone());
        if let Some(mask) = frame_track {
            tracked_writes.push(mask);
        }
    }
    Ok(PipelineRun { frames, tracked_writes })
}

/// Renders the scene fault-free. Pure in the scene spec.
pub fn render_scene(scene: &SceneSpec) -> Result<Vec<ImageRGB>> {
    scene.validate()?;
    Ok(run_pipeline(scene, None, None, None)?.frames)
}

/// A faulted render: all frames, plus one mask per frame from the onset on
/// (the exact pixel difference against the fault-free render).
pub struct FaultRender {
    pub frames: Vec<ImageRGB>,
    pub masks: Vec<Mask>,
    pub onset_frame: u32,
    pub glitch_class: GlitchClass,
}

pub fn render_with_fault(scene: &SceneSpec, fault: &FaultSpec) -> Result<FaultRender> {
    scene.validate()?;
    scene.validate_fault(fault)?;
    let track = match fault.fault {
        FaultKind::CameraDisabled { .. } => Some(fault.target_camera),
        _ => None,
    };
    let baseline = run_pipeline(scene, None, track, None)?;
    let region = track.map(|_| baseline.tracked_writes.as_slice());
    let faulted = run_pipeline(scene, Some(fault), None, region)?;
    let mut masks = Vec::with_capacity((scene.frame_count - fault.onset_frame) as usize);
    for t in fault.onset_frame..scene.frame_count {
        masks.push(Mask::from_difference(
            &baseline.frames[t as usize],
            &faulted.frames[t as usize],
        )?);
    }
    Ok(FaultRender {
        frames: faulted.frames,
        masks,
        onset_frame: fault.onset_frame,
        glitch_class: fault.glitch_class(),
    })
}

/// Renders every bundle fault-free (label normal) and each fault from its
/// onset (label glitch, with class and mask), writing PNGs and a manifest
/// under `out_dir`.
///
/// Scene seeds are re-derived from the run seed, the scene index, and the
/// authored seed, so one `seed` argument reproduces every byte. A fault that
/// produces a frame identical to the fault-free render is refused: an
/// invisible glitch must not be labeled glitch.
pub fn generate_injection_dataset(
    bundles: &[SceneBundle],
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::new();
    for (si, bundle) in bundles.iter().enumerate() {
        let mut scene = bundle.scene.clone();
        scene.seed = derive_seed(derive_seed(seed, si as u64), bundle.scene.seed);
        let baseline = render_scene(&scene)?;
        for (t, frame) in baseline.iter().enumerate() {
            let name = format!("scene{si:02}_f{t:03}.png");
            frame.save_png(out_dir.join(&name))?;
            records.push(SampleRecord {
                image_path: name,
                label: Label::Normal,
                glitch_class: None,
                mask_path: None,
                generator: Generator::Captured,
                seed: scene.seed,
            });
        }
        for (fi, fault) in bundle.faults.iter().enumerate() {
            let render = render_with_fault(&scene, fault)?;
            for t in fault.onset_frame..scene.frame_count {
                let mask = &render.masks[(t - fault.onset_frame) as usize];
                if !mask.any() {
                    return Err(Error::Scene(format!(
                        "scene {si} fault {fi} produces no visible difference at frame {t}; \
                         refusing to label an unchanged frame as glitch"
                    )));
                }
                let stem = format!("scene{si:02}_fault{fi}_f{t:03}");
                let image_name = format!("{stem}.png");
                let mask_name = format!("{stem}_mask.png");
                render.frames[t as usize].save_png(out_dir.join(&image_name))?;
                mask.save_png(out_dir.join(&mask_name))?;
                records.push(SampleRecord {
                    image_path: image_name,
                    label: Label::Glitch,
                    glitch_class: Some(render.glitch_class),
                    mask_path: Some(mask_name),
                    generator: Generator::Injection,
                    seed: scene.seed,
                });
            }
        }
    }
    let manifest = DatasetManifest::new(records, out_dir)?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Parameterized synthetic scene corpus for experiments and tests.
pub mod corpus {
    use super::*;
    use crate::rng::DetRng;

    /// Builds `count` randomized two-camera scenes: a main camera clearing
    /// with the procedural sky (a diagonal ramp, so every region carries
    /// gradient texture) that draws gradient panels plus some sprites, and
    /// an overlay camera (DepthOnly, no color clear) drawing HUD-like
    /// sprites in the bottom half. Sprites move every frame and are always
    /// textured, so each fault class produces a visible, learnable artifact:
    /// clear-flag breaks ghost against the un-repainted sky, camera-off
    /// garbage replaces texture with solids or noise, and mirrors break the
    /// diagonal ramp's asymmetry.
    pub fn sample_scene_corpus(
        seed: u64,
        count: usize,
        canvas_width: u32,
        canvas_height: u32,
        frame_count: u32,
    ) -> Vec<SceneSpec> {
        (0..count)
            .map(|i| {
                build_scene(
                    derive_seed(seed, 0xC0_0001 + i as u64),
                    canvas_width,
                    canvas_height,
                    frame_count,
                )
            })
            .collect()
    }

    /// One scene of a shared "game UI" template: a full-width top status bar
    /// (main camera), a bottom HUD strip and corner minimap block (overlay
    /// camera), and moving sprites over the sky in between. Colors, sprite
    /// textures, positions, and velocities vary per scene; the layout does
    /// not, mirroring how screenshots of one game share structure. A
    /// consistent layout is what makes "normal" learnable from few samples;
    /// every fault class then manifests as a gross template violation.
    fn build_scene(scene_seed: u64, w: u32, h: u32, frame_count: u32) -> SceneSpec {
        let mut rng = DetRng::new(scene_seed);
        let mut layers = Vec::new();

        let bar_h = (h / 5).max(3);
        let hud_h = (h / 6).max(3);
        // Layer 0: top status bar (main camera).
        layers.push(LayerSpec::GradientRect {
            x: 0,
            y: 0,
            w,
            h: bar_h,
            start: rng.rgb(),
            end: rng.rgb(),
            axis: Axis::Diagonal,
        });
        // Layer 1: bottom HUD strip (overlay camera).
        layers.push(LayerSpec::GradientRect {
            x: 0,
            y: (h - hud_h) as i64,
            w,
            h: hud_h,
            start: rng.rgb(),
            end: rng.rgb(),
            axis: Axis::Diagonal,
        });
        // Layer 2: corner minimap block (overlay camera).
        let mini_w = (w / 5).max(4);
        let mini_h = (h / 4).max(4);
        layers.push(LayerSpec::Sprite {
            x: (w - mini_w - 1) as i64,
            y: (h - hud_h - mini_h - 1) as i64,
            dx: 0,
            dy: 0,
            pattern: SpritePattern::Checker {
                w: mini_w,
                h: mini_h,
                cell: 2,
                color_a: rng.rgb(),
                color_b: rng.rgb(),
            },
        });
        // Central moving sprites (main camera), over the sky band.
        let n_sprites = rng.range_usize(2, 3);
        let mut sprite_indices = Vec::new();
        for _ in 0..n_sprites {
            sprite_indices.push(layers.len());
            layers.push(moving_sprite(&mut rng, w, h, bar_h, hud_h));
        }

        let main_layers: Vec<usize> =
            std::iter::once(0).chain(sprite_indices.iter().copied()).collect();
        let overlay_layers: Vec<usize> = vec![1, 2];

        // Muted sky base so sprites stand out against the ramp.
        let clear_color = [
            40 + rng.below(60) as u8,
            40 + rng.below(60) as u8,
            40 + rng.below(60) as u8,
        ];
        SceneSpec {
            canvas_width: w,
            canvas_height: h,
            layers,
            cameras: vec![
                CameraSpec {
                    enabled: true,
                    clear_flag: ClearFlag::SkyBox,
                    clear_color,
                    layer_mask: main_layers,
                    post_effects: vec![],
                },
                CameraSpec {
                    enabled: true,
                    clear_flag: ClearFlag::DepthOnly,
                    clear_color: [0, 0, 0],
                    layer_mask: overlay_layers,
                    post_effects: vec![],
                },
            ],
            frame_count,
            seed: scene_seed,
        }
    }

    /// Checkered sprite bouncing through the sky band between the top bar
    /// and the HUD, fast enough that a broken clear flag leaves a wide
    /// imprint every frame.
    fn moving_sprite(rng: &mut DetRng, w: u32, h: u32, bar_h: u32, hud_h: u32) -> LayerSpec {
        let sw = rng.range_usize((w / 8).max(5) as usize, (w / 5).max(7) as usize) as u32;
        let band_top = bar_h;
        let band_bottom = h - hud_h;
        let sh = rng
            .range_usize(
                ((band_bottom - band_top) / 3).max(3) as usize,
                ((band_bottom - band_top) / 2).max(4) as usize,
            ) as u32;
        let x = rng.range_usize(0, (w - sw) as usize) as i64;
        let y = rng.range_usize(band_top as usize, (band_bottom - sh).max(band_top + 1) as usize)
            as i64;
        let dx = [-5i64, -4, 4, 5][rng.below(4) as usize];
        let dy = [-1i64, 0, 1][rng.below(3) as usize];
        LayerSpec::Sprite { x, y, dx, dy, pattern: textured_pattern(rng, sw, sh) }
    }

    /// Corpus sprites are always checkered. Normal scenes must not contain
    /// the glitch vocabulary: no flat color patches (those read as
    /// uninitialized blocks) and no noise fields (those read as random-noise
    /// garbage), otherwise normal and glitch become indistinguishable by
    /// construction.
    fn textured_pattern(rng: &mut DetRng, sw: u32, sh: u32) -> SpritePattern {
        SpritePattern::Checker {
            w: sw,
            h: sh,
            cell: rng.range_usize(2, 4) as u32,
            color_a: rng.rgb(),
            color_b: rng.rgb(),
        }
    }

    /// Rotates through the three fault classes: camera-off (both texture
    /// modes) on the overlay camera, a clear-flag override on the main
    /// camera, and a stale mirror on the overlay camera.
    pub fn corpus_fault(scene: &SceneSpec, index: usize) -> FaultSpec {
        let onset = scene.frame_count / 2;
        let last_cam = scene.cameras.len() - 1;
        match index % 3 {
            0 => FaultSpec {
                fault: FaultKind::CameraDisabled {
                    texture: if (index / 3) % 2 == 0 {
                        UninitTexture::Blocks
                    } else {
                        UninitTexture::Noise
                    },
                },
                target_camera: last_cam,
                onset_frame: onset,
            },
            1 => FaultSpec {
                fault: FaultKind::ClearflagOverride { value: ClearFlag::Nothing },
                target_camera: 0,
                onset_frame: onset,
            },
            _ => FaultSpec {
                fault: FaultKind::StalePostEffect {
                    effect: if (index / 3) % 2 == 0 {
                        PostEffect::MirrorVertical
                    } else {
                        PostEffect::MirrorHorizontal
                    },
                },
                target_camera: last_cam,
                onset_frame: onset,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid_sprite(x: i64, y: i64, w: u32, h: u32, color: [u8; 3], dx: i64) -> LayerSpec {
        LayerSpec::Sprite {
            x,
            y,
            dx,
            dy: 0,
            pattern: SpritePattern::Checker { w, h, cell: 1, color_a: color, color_b: color },
        }
    }

    fn one_camera_scene(layers: Vec<LayerSpec>, layer_mask: Vec<usize>) -> SceneSpec {
        SceneSpec {
            canvas_width: 60,
            canvas_height: 20,
            layers,
            cameras: vec![CameraSpec {
                enabled: true,
                clear_flag: ClearFlag::SolidColor,
                clear_color: [10, 10, 10],
                layer_mask,
                post_effects: vec![],
            }],
            frame_count: 6,
            seed: 99,
        }
    }

    #[test]
    fn solid_clear_no_layers_is_the_clear_color() {
        let scene = one_camera_scene(vec![], vec![]);
        let frames = render_scene(&scene).unwrap();
        assert_eq!(frames.len(), 6);
        let expected = ImageRGB::filled(60, 20, [10, 10, 10]).unwrap();
        for f in &frames {
            assert_eq!(*f, expected);
        }
    }

    #[test]
    fn static_scene_frames_are_identical_and_deterministic() {
        let scene = one_camera_scene(
            vec![LayerSpec::SolidRect { x: 5, y: 3, w: 12, h: 8, color: [200, 30, 40] }],
            vec![0],
        );
        let a = render_scene(&scene).unwrap();
        let b = render_scene(&scene).unwrap();
        assert_eq!(a, b);
        for f in &a[1..] {
            assert_eq!(*f, a[0]);
        }
    }

    #[test]
    fn stale_mirror_makes_bottom_half_a_reflection() {
        let mut scene = one_camera_scene(
            vec![
                LayerSpec::GradientRect {
                    x: 0,
                    y: 0,
                    w: 30,
                    h: 10,
                    start: [255, 0, 0],
                    end: [0, 0, 255],
                    axis: Axis::Vertical,
                },
                solid_sprite(40, 2, 8, 5, [0, 255, 0], 0),
            ],
            vec![0, 1],
        );
        scene.frame_count = 4;
        let fault = FaultSpec {
            fault: FaultKind::StalePostEffect { effect: PostEffect::MirrorVertical },
            target_camera: 0,
            onset_frame: 2,
        };
        let render = render_with_fault(&scene, &fault).unwrap();
        assert_eq!(render.glitch_class, GlitchClass::PartialRepetition);
        for t in 2..4usize {
            let f = &render.frames[t];
            let h = f.height();
            for y in h.div_ceil(2)..h {
                for x in 0..f.width() {
                    assert_eq!(f.get(x, y), f.get(x, h - 1 - y), "frame {t} at ({x},{y})");
                }
            }
        }
        // Pre-onset frames match the fault-free render.
        let baseline = render_scene(&scene).unwrap();
        assert_eq!(render.frames[0], baseline[0]);
        assert_eq!(render.frames[1], baseline[1]);
    }

    #[test]
    fn mirror_twice_is_the_same_as_once() {
        let mut once = one_camera_scene(
            vec![solid_sprite(5, 2, 10, 6, [250, 120, 0], 0)],
            vec![0],
        );
        once.cameras[0].post_effects = vec![PostEffect::MirrorVertical];
        let mut twice = once.clone();
        twice.cameras[0].post_effects =
            vec![PostEffect::MirrorVertical, PostEffect::MirrorVertical];
        assert_eq!(render_scene(&once).unwrap(), render_scene(&twice).unwrap());
    }

    #[test]
    fn clearflag_nothing_accumulates_moving_sprite_imprints() {
        // Sprite moves 10 px/frame; with the clear overridden to Nothing from
        // frame 0, frame t must equal a black canvas with the sprite stamped
        // at every position 0..=t (oracle-painted union).
        let sprite_color = [50, 200, 90];
        let scene = one_camera_scene(vec![solid_sprite(2, 7, 6, 6, sprite_color, 10)], vec![0]);
        let fault = FaultSpec {
            fault: FaultKind::ClearflagOverride { value: ClearFlag::Nothing },
            target_camera: 0,
            onset_frame: 0,
        };
        let render = render_with_fault(&scene, &fault).unwrap();
        assert_eq!(render.glitch_class, GlitchClass::FrameOverlay);
        for t in 0..6i64 {
            let mut oracle = ImageRGB::new(60, 20).unwrap();
            for k in 0..=t {
                for dy in 0..6i64 {
                    for dx in 0..6i64 {
                        let px = 2 + k * 10 + dx;
                        let py = 7 + dy;
                        if px >= 0 && px < 60 && py < 20 {
                            oracle.set(px as u32, py as u32, sprite_color);
                        }
                    }
                }
            }
            assert_eq!(render.frames[t as usize], oracle, "frame {t}");
            assert!(render.masks[t as usize].any());
        }
    }

    #[test]
    fn disabling_the_only_camera_garbles_nearly_everything() {
        let scene = one_camera_scene(
            vec![LayerSpec::SolidRect { x: 10, y: 5, w: 20, h: 10, color: [90, 90, 200] }],
            vec![0],
        );
        for texture in [UninitTexture::Noise, UninitTexture::Blocks] {
            let fault = FaultSpec {
                fault: FaultKind::CameraDisabled { texture },
                target_camera: 0,
                onset_frame: 0,
            };
            let render = render_with_fault(&scene, &fault).unwrap();
            for mask in &render.masks {
                assert!(mask.density() >= 0.95, "density {}", mask.density());
            }
        }
    }

    #[test]
    fn masks_are_the_exact_frame_difference() {
        let scene = one_camera_scene(vec![solid_sprite(4, 4, 8, 8, [255, 255, 0], 3)], vec![0]);
        let fault = FaultSpec {
            fault: FaultKind::ClearflagOverride { value: ClearFlag::DepthOnly },
            target_camera: 0,
            onset_frame: 2,
        };
        let baseline = render_scene(&scene).unwrap();
        let render = render_with_fault(&scene, &fault).unwrap();
        for t in 2..6usize {
            let expect = Mask::from_difference(&baseline[t], &render.frames[t]).unwrap();
            assert_eq!(render.masks[t - 2], expect);
        }
    }

    #[test]
    fn fault_validation_rejects_bad_targets() {
        let scene = one_camera_scene(vec![], vec![]);
        let bad_cam = FaultSpec {
            fault: FaultKind::ClearflagOverride { value: ClearFlag::Nothing },
            target_camera: 3,
            onset_frame: 0,
        };
        assert!(scene.validate_fault(&bad_cam).is_err());
        let bad_onset = FaultSpec {
            fault: FaultKind::ClearflagOverride { value: ClearFlag::Nothing },
            target_camera: 0,
            onset_frame: 6,
        };
        assert!(scene.validate_fault(&bad_onset).is_err());
    }

    #[test]
    fn scene_bundle_json_round_trip() {
        let bundle = SceneBundle {
            scene: one_camera_scene(
                vec![solid_sprite(1, 1, 4, 4, [9, 9, 9], 1)],
                vec![0],
            ),
            faults: vec![FaultSpec {
                fault: FaultKind::CameraDisabled { texture: UninitTexture::Blocks },
                target_camera: 0,
                onset_frame: 3,
            }],
        };
        let json = serde_json::to_string_pretty(&bundle).unwrap();
        let back: SceneBundle = serde_json::from_str(&json).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn injection_dataset_counts_and_determinism() {
        let dir = std::env::temp_dir().join("glitchkit_rendersim_test");
        let _ = std::fs::remove_dir_all(&dir);
        let bundles: Vec<SceneBundle> = (0..3)
            .map(|i| SceneBundle {
                scene: {
                    let mut s = one_camera_scene(
                        vec![solid_sprite(2, 3 + i as i64, 6, 6, [200, 40, 40], 4)],
                        vec![0],
                    );
                    s.seed = 1000 + i as u64;
                    s
                },
                faults: vec![FaultSpec {
                    fault: FaultKind::ClearflagOverride { value: ClearFlag::Nothing },
                    target_camera: 0,
                    onset_frame: 3,
                }],
            })
            .collect();
        let m1 = generate_injection_dataset(&bundles, 7, dir.join("a")).unwrap();
        assert_eq!(m1.count_label(Label::Normal), 3 * 6);
        assert_eq!(m1.count_label(Label::Glitch), 3 * 3);
        for rec in &m1.records {
            if rec.label == Label::Glitch {
                let mask = Mask::load_png(m1.resolve(rec.mask_path.as_ref().unwrap())).unwrap();
                assert!(mask.any());
            }
        }
        let m2 = generate_injection_dataset(&bundles, 7, dir.join("b")).unwrap();
        assert_eq!(m1.records, m2.records);
        for rec in &m1.records {
            let a = std::fs::read(m1.resolve(&rec.image_path)).unwrap();
            let b = std::fs::read(m2.resolve(&rec.image_path)).unwrap();
            assert_eq!(a, b, "file {} differs across identical runs", rec.image_path);
        }
    }

    #[test]
    fn corpus_scenes_are_valid_and_render() {
        let scenes = corpus::sample_scene_corpus(5, 4, 64, 32, 6);
        assert_eq!(scenes.len(), 4);
        for (i, scene) in scenes.iter().enumerate() {
            scene.validate().unwrap();
            let frames = render_scene(scene).unwrap();
            assert_eq!(frames.len(), 6);
            let fault = corpus::corpus_fault(scene, i);
            scene.validate_fault(&fault).unwrap();
            let render = render_with_fault(scene, &fault).unwrap();
            for mask in &render.masks {
                assert!(mask.any(), "scene {i} fault produced an empty mask");
            }
        }
    }

    #[test]
    fn corpus_faults_are_always_visible() {
        // Every fault class over many seeded scenes must produce a nonempty
        // mask at every labeled frame; an invisible fault would poison the
        // generated dataset with wrong labels.
        for sweep in 0..60u64 {
            let scenes = corpus::sample_scene_corpus(9000 + sweep, 3, 64, 32, 10);
            for (i, scene) in scenes.iter().enumerate() {
                let fault = corpus::corpus_fault(scene, sweep as usize * 3 + i);
                let render = render_with_fault(scene, &fault).unwrap();
                for (k, mask) in render.masks.iter().enumerate() {
                    assert!(
                        mask.any(),
                        "sweep {sweep} scene {i} fault {:?} empty at frame {}",
                        fault.fault,
                        fault.onset_frame as usize + k
                    );
                }
            }
        }
    }
}

//! Heuristic glitch-synthesis rules over normal screenshots.
//!
//! Four rules: partial repetition, solid color blocks, mosaic, and random
//! noise. Each takes a seed and region constraints and returns the corrupted
//! image plus a mask of every pixel it wrote. Pixels outside the mask are
//! bitwise untouched; identical seeds give identical bytes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{ImageRGB, Mask};
use crate::manifest::{DatasetManifest, Generator, GlitchClass, Label, SampleRecord};
use crate::rng::{derive_seed, DetRng};

/// The four block colors for the fixed palette: red, black, pink, cyan.
pub const FIXED_PALETTE: [[u8; 3]; 4] =
    [[255, 0, 0], [0, 0, 0], [255, 105, 180], [0, 255, 255]];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    PartialRepetition,
    SolidColorBlock,
    Mosaic,
    RandomNoise,
}

impl Rule {
    pub const ALL: [Rule; 4] =
        [Rule::PartialRepetition, Rule::SolidColorBlock, Rule::Mosaic, Rule::RandomNoise];

    /// Closest manifestation category. Mosaic patches read as solid color
    /// blocks, so both block-like rules map there.
    pub fn glitch_class(self) -> GlitchClass {
        match self {
            Rule::PartialRepetition => GlitchClass::PartialRepetition,
            Rule::SolidColorBlock => GlitchClass::AbnormalColorBlock,
            Rule::Mosaic => GlitchClass::AbnormalColorBlock,
            Rule::RandomNoise => GlitchClass::RandomNoise,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::PartialRepetition => "partial_repetition",
            Rule::SolidColorBlock => "solid_color_block",
            Rule::Mosaic => "mosaic",
            Rule::RandomNoise => "random_noise",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Rule> {
        match s {
            "partial_repetition" => Ok(Rule::PartialRepetition),
            "solid_color_block" => Ok(Rule::SolidColorBlock),
            "mosaic" => Ok(Rule::Mosaic),
            "random_noise" => Ok(Rule::RandomNoise),
            other => Err(Error::InvalidArgument(format!(
                "unknown rule '{other}' (expected partial_repetition, solid_color_block, \
                 mosaic, or random_noise)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaletteMode {
    /// Arbitrary RGB block colors (the R variant).
    RandomRgb,
    /// Blocks drawn only from [`FIXED_PALETTE`] (the F variant).
    FixedPalette,
}

impl PaletteMode {
    pub fn generator(self) -> Generator {
        match self {
            PaletteMode::RandomRgb => Generator::RuleR,
            PaletteMode::FixedPalette => Generator::RuleF,
        }
    }
}

/// Bounds on sampled glitch rectangles, as fractions of the image area.
#[derive(Clone, Copy, Debug)]
pub struct RegionConstraints {
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    /// Mosaic patch edge, pixels.
    pub min_patch: u32,
    pub max_patch: u32,
}

impl Default for RegionConstraints {
    fn default() -> Self {
        RegionConstraints { min_area_frac: 0.02, max_area_frac: 0.25, min_patch: 4, max_patch: 32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// One rule application: which rule, which palette (only solid blocks use
/// it), the seed, and the region bounds.
#[derive(Clone, Copy, Debug)]
pub struct RuleSpec {
    pub rule: Rule,
    pub palette_mode: PaletteMode,
    pub seed: u64,
    pub constraints: RegionConstraints,
}

pub fn apply_rule(img: &ImageRGB, spec: &RuleSpec) -> Result<(ImageRGB, Mask)> {
    match spec.rule {
        Rule::PartialRepetition => {
            apply_partial_repetition(img, spec.seed, &spec.constraints)
        }
        Rule::SolidColorBlock => {
            apply_solid_color_block(img, spec.seed, spec.palette_mode, &spec.constraints)
        }
        Rule::Mosaic => apply_mosaic(img, spec.seed, &spec.constraints),
        Rule::RandomNoise => apply_random_noise(img, spec.seed, &spec.constraints),
    }
}

/// Samples rectangle dims with area in `[min_frac, max_frac]` of the image
/// area, respecting per-axis limits, then a position within `w - extra_w`.
fn sample_rect(
    rng: &mut DetRng,
    img_w: u32,
    img_h: u32,
    min_frac: f64,
    max_frac: f64,
    limit_w: u32,
    limit_h: u32,
    min_side: u32,
    extra_w: u32,
    extra_h: u32,
) -> Result<Rect> {
    let area = img_w as f64 * img_h as f64;
    if limit_w < min_side || limit_h < min_side {
        return Err(Error::InvalidArgument(format!(
            "image {img_w}x{img_h} is smaller than the minimum glitch region"
        )));
    }
    for _ in 0..16 {
        let target = rng.range_f64(min_frac, max_frac) * area;
        let aspect = rng.range_f64(0.5, 2.0);
        let rw = (((target * aspect).sqrt().round()) as u32).clamp(min_side, limit_w);
        let lo = ((min_frac * area / rw as f64).ceil() as u32).max(min_side);
        let hi = ((max_frac * area / rw as f64).floor() as u32).min(limit_h);
        if lo > hi {
            continue;
        }
        let rh = ((target / rw as f64).round() as u32).clamp(lo, hi);
        if rw + extra_w > img_w || rh + extra_h > img_h {
            continue;
        }
        let x = rng.range_usize(0, (img_w - rw - extra_w) as usize) as u32;
        let y = rng.range_usize(0, (img_h - rh - extra_h) as usize) as u32;
        return Ok(Rect { x, y, w: rw, h: rh });
    }
    Err(Error::InvalidArgument(format!(
        "no feasible glitch rectangle in {img_w}x{img_h} under the given constraints"
    )))
}

/// Tiles a sampled rectangle repeatedly toward the image border (right for
/// horizontal, down for vertical). The mask covers every written pixel
/// outside the source rectangle.
pub fn apply_partial_repetition(
    img: &ImageRGB,
    seed: u64,
    constraints: &RegionConstraints,
) -> Result<(ImageRGB, Mask)> {
    let (w, h) = (img.width(), img.height());
    let mut rng = DetRng::new(seed);
    let horizontal = rng.below(2) == 0;
    // Reserve room for at least one full tile past the source rectangle.
    let rect = if horizontal {
        let mut r = sample_rect(
            &mut rng,
            w,
            h,
            constraints.min_area_frac,
            constraints.max_area_frac,
            w / 2,
            h,
            1,
            0,
            0,
        )?;
        if r.x + 2 * r.w > w {
            r.x = w - 2 * r.w;
        }
        r
    } else {
        let mut r = sample_rect(
            &mut rng,
            w,
            h,
            constraints.min_area_frac,
            constraints.max_area_frac,
            w,
            h / 2,
            1,
            0,
            0,
        )?;
        if r.y + 2 * r.h > h {
            r.y = h - 2 * r.h;
        }
        r
    };

    // Snapshot the source so clipped tiles always copy original content.
    let mut source = Vec::with_capacity((rect.w * rect.h) as usize);
    for dy in 0..rect.h {
        for dx in 0..rect.w {
            source.push(img.get(rect.x + dx, rect.y + dy));
        }
    }

    let mut out = img.clone();
    let mut mask = Mask::new(w, h);
    if horizontal {
        let mut start = rect.x + rect.w;
        while start < w {
            let span = rect.w.min(w - start);
            for dy in 0..rect.h {
                for dx in 0..span {
                    out.set(start + dx, rect.y + dy, source[(dy * rect.w + dx) as usize]);
                    mask.set(start + dx, rect.y + dy, true);
                }
            }
            start += rect.w;
        }
    } else {
        let mut start = rect.y + rect.h;
        while start < h {
            let span = rect.h.min(h - start);
            for dy in 0..span {
                for dx in 0..rect.w {
                    out.set(rect.x + dx, start + dy, source[(dy * rect.w + dx) as usize]);
                    mask.set(rect.x + dx, start + dy, true);
                }
            }
            start += rect.h;
        }
    }
    Ok((out, mask))
}

/// The planned blocks for a solid-color-block application, in paint order
/// (later blocks may cover earlier ones).
pub fn plan_solid_blocks(
    img_w: u32,
    img_h: u32,
    seed: u64,
    palette_mode: PaletteMode,
    constraints: &RegionConstraints,
) -> Result<Vec<(Rect, [u8; 3])>> {
    // 3-5 blocks, each small enough that the union stays within the global
    // area bound.
    let per_block_max = constraints.max_area_frac / 5.0;
    if constraints.min_area_frac > per_block_max {
        return Err(Error::InvalidArgument(format!(
            "solid blocks need min_area_frac <= max_area_frac / 5, got {} vs {}",
            constraints.min_area_frac, constraints.max_area_frac
        )));
    }
    let mut rng = DetRng::new(seed);
    let count = rng.range_usize(3, 5);
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let rect = sample_rect(
            &mut rng,
            img_w,
            img_h,
            constraints.min_area_frac,
            per_block_max,
            img_w,
            img_h,
            1,
            0,
            0,
        )?;
        let color = match palette_mode {
            PaletteMode::RandomRgb => rng.rgb(),
            PaletteMode::FixedPalette => FIXED_PALETTE[rng.below(4) as usize],
        };
        blocks.push((rect, color));
    }
    Ok(blocks)
}

/// Paints 3-5 solid rectangles sequentially; the mask is their union.
pub fn apply_solid_color_block(
    img: &ImageRGB,
    seed: u64,
    palette_mode: PaletteMode,
    constraints: &RegionConstraints,
) -> Result<(ImageRGB, Mask)> {
    let blocks = plan_solid_blocks(img.width(), img.height(), seed, palette_mode, constraints)?;
    let mut out = img.clone();
    let mut mask = Mask::new(img.width(), img.height());
    for (rect, color) in &blocks {
        for dy in 0..rect.h {
            for dx in 0..rect.w {
                out.set(rect.x + dx, rect.y + dy, *color);
                mask.set(rect.x + dx, rect.y + dy, true);
            }
        }
    }
    Ok((out, mask))
}

/// Pixelates a sampled rectangle: a grid of square patches, each filled with
/// the original color of its center pixel. Edge patches clip to the
/// rectangle; their centers are the centers of the clipped cells.
pub fn apply_mosaic(
    img: &ImageRGB,
    seed: u64,
    constraints: &RegionConstraints,
) -> Result<(ImageRGB, Mask)> {
    let (w, h) = (img.width(), img.height());
    let mut rng = DetRng::new(seed);
    let rect = sample_rect(
        &mut rng,
        w,
        h,
        constraints.min_area_frac,
        constraints.max_area_frac,
        w,
        h,
        2,
        0,
        0,
    )?;
    let patch = (rng.range_usize(constraints.min_patch as usize, constraints.max_patch as usize)
        as u32)
        .clamp(2, rect.w.min(rect.h));
    let mut out = img.clone();
    let mut mask = Mask::new(w, h);
    let mut py = rect.y;
    while py < rect.y + rect.h {
        let ph = patch.min(rect.y + rect.h - py);
        let mut px = rect.x;
        while px < rect.x + rect.w {
            let pw = patch.min(rect.x + rect.w - px);
            let center = img.get(px + pw / 2, py + ph / 2);
            for dy in 0..ph {
                for dx in 0..pw {
                    out.set(px + dx, py + dy, center);
                    mask.set(px + dx, py + dy, true);
                }
            }
            px += patch;
        }
        py += patch;
    }
    Ok((out, mask))
}

/// Replaces a sampled rectangle with independent uniform random RGB pixels.
pub fn apply_random_noise(
    img: &ImageRGB,
    seed: u64,
    constraints: &RegionConstraints,
) -> Result<(ImageRGB, Mask)> {
    let (w, h) = (img.width(), img.height());
    let mut rng = DetRng::new(seed);
    let rect = sample_rect(
        &mut rng,
        w,
        h,
        constraints.min_area_frac,
        constraints.max_area_frac,
        w,
        h,
        1,
        0,
        0,
    )?;
    let mut out = img.clone();
    let mut mask = Mask::new(w, h);
    for dy in 0..rect.h {
        for dx in 0..rect.w {
            out.set(rect.x + dx, rect.y + dy, rng.rgb());
            mask.set(rect.x + dx, rect.y + dy, true);
        }
    }
    Ok((out, mask))
}

/// Applies one rule per normal screenshot, round-robin over the requested
/// rules, and writes images, masks, and a manifest under `out_dir`.
///
/// The originals are copied in alongside (label normal) so the output
/// directory is a self-contained dataset; per-image seeds derive from the
/// run seed and the image index, so parallel regeneration stays bitwise
/// stable.
pub fn generate_rule_dataset(
    normals: &DatasetManifest,
    rules: &[Rule],
    palette_mode: PaletteMode,
    seed: u64,
    out_dir: impl AsRef<Path>,
    constraints: &RegionConstraints,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if rules.is_empty() {
        return Err(Error::InvalidArgument("no rules requested".into()));
    }
    let sources: Vec<&SampleRecord> =
        normals.records.iter().filter(|r| r.label == Label::Normal).collect();
    if sources.is_empty() {
        return Err(Error::Dataset("normals manifest has no normal records".into()));
    }

    let mut records = Vec::with_capacity(sources.len() * 2);
    for (i, src) in sources.iter().enumerate() {
        let src_path = normals.resolve(&src.image_path);
        let normal_name = format!("normal_{i:04}.png");
        std::fs::copy(&src_path, out_dir.join(&normal_name))
            .map_err(|e| Error::io(&src_path, e))?;
        records.push(SampleRecord {
            image_path: normal_name,
            label: Label::Normal,
            glitch_class: None,
            mask_path: None,
            generator: src.generator,
            seed: src.seed,
        });

        let rule = rules[i % rules.len()];
        let img_seed = derive_seed(seed, i as u64);
        let img = ImageRGB::load_png(&src_path)?;
        let spec = RuleSpec { rule, palette_mode, seed: img_seed, constraints: *constraints };
        let (glitch, mask) = apply_rule(&img, &spec)?;
        let stem = format!("glitch_{i:04}_{rule}");
        let glitch_name = format!("{stem}.png");
        let mask_name = format!("{stem}_mask.png");
        glitch.save_png(out_dir.join(&glitch_name))?;
        mask.save_png(out_dir.join(&mask_name))?;
        records.push(SampleRecord {
            image_path: glitch_name,
            label: Label::Glitch,
            glitch_class: Some(rule.glitch_class()),
            mask_path: Some(mask_name),
            generator: palette_mode.generator(),
            seed: img_seed,
        });
    }
    let manifest = DatasetManifest::new(records, out_dir)?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

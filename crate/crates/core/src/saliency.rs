//! Input-gradient saliency: the derivative of a class logit with respect to
//! the input pixels, reduced per pixel to the max absolute value over the
//! RGB channels, plus heatmap rendering and a localization score against a
//! ground-truth mask.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{ImageRGB, Mask};
use crate::model::{preprocess, Model};
use crate::scalar::Scalar;
use crate::tape::Tape;

/// Per-pixel saliency at model input resolution.
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    pub width: u32,
    pub height: u32,
    /// Nonnegative raw magnitudes, row-major.
    pub values: Vec<f64>,
    /// `values` rescaled so the maximum is 1 (all zeros if no signal).
    pub normalized: Vec<f64>,
}

/// Gradient of the target logit w.r.t. the preprocessed input image.
///
/// The gradient is taken at the pre-softmax logit (softmax saturation would
/// flatten it on confident predictions without changing the argmax). The
/// default target is the predicted class. Model parameters are untouched.
pub fn compute_saliency<F: Scalar>(
    model: &Model<F>,
    image: &ImageRGB,
    target_class: Option<usize>,
) -> Result<SaliencyMap> {
    let input = preprocess::<F>(model.config(), image)?;
    let [_, _, h, w] = input.dims4()?;
    let k = model.config().num_classes;
    if let Some(c) = target_class {
        if c >= k {
            return Err(Error::InvalidArgument(format!(
                "target class {c} out of range for {k} classes"
            )));
        }
    }

    let mut tape = Tape::<F>::new();
    let (logits, input_var) = model.forward_input_grad(&mut tape, input)?;
    let target = match target_class {
        Some(c) => c,
        None => {
            let row = tape.value(logits).data();
            let mut best = 0usize;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        }
    };
    let picked = tape.pick(logits, target)?;
    let mut grads = tape.backward(picked)?;
    let grad = grads
        .take(input_var)
        .ok_or_else(|| Error::ShapeMismatch("no input gradient produced".into()))?;

    let gd = grad.data();
    let plane = h * w;
    let mut values = vec![0.0f64; plane];
    for (i, v) in values.iter_mut().enumerate() {
        let r = gd[i].to_f64().abs();
        let g = gd[plane + i].to_f64().abs();
        let b = gd[2 * plane + i].to_f64().abs();
        *v = r.max(g).max(b);
    }
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let normalized = if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; plane]
    };
    Ok(SaliencyMap { width: w as u32, height: h as u32, values, normalized })
}

/// Blue -> cyan -> yellow -> red ramp over normalized saliency in [0, 1].
/// The hottest value maps to pure red.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let stops: [(f64, [f64; 3]); 4] = [
        (0.0, [0.0, 0.0, 255.0]),
        (1.0 / 3.0, [0.0, 255.0, 255.0]),
        (2.0 / 3.0, [255.0, 255.0, 0.0]),
        (1.0, [255.0, 0.0, 0.0]),
    ];
    for pair in stops.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            return [
                (c0[0] + (c1[0] - c0[0]) * f).round() as u8,
                (c0[1] + (c1[1] - c0[1]) * f).round() as u8,
                (c0[2] + (c1[2] - c0[2]) * f).round() as u8,
            ];
        }
    }
    [255, 0, 0]
}

/// Alpha-blends the color-mapped saliency over the original screenshot.
/// `alpha` 0 returns the original bytes; 1 returns the pure heatmap.
pub fn render_heatmap(
    saliency: &SaliencyMap,
    original: &ImageRGB,
    alpha: f64,
) -> Result<ImageRGB> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let mut heat = ImageRGB::new(saliency.width, saliency.height)?;
    for y in 0..saliency.height {
        for x in 0..saliency.width {
            let t = saliency.normalized[(y * saliency.width + x) as usize];
            heat.set(x, y, heat_color(t));
        }
    }
    let heat = heat.resize_bilinear(original.width(), original.height())?;
    let mut out = ImageRGB::new(original.width(), original.height())?;
    for y in 0..original.height() {
        for x in 0..original.width() {
            let o = original.get(x, y);
            let h = heat.get(x, y);
            let mut c = [0u8; 3];
            for ch in 0..3 {
                let v = o[ch] as f64 * (1.0 - alpha) + h[ch] as f64 * alpha;
                c[ch] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, c);
        }
    }
    Ok(out)
}

/// Precision at the top `top_fraction` of saliency pixels: the fraction of
/// them that land inside the ground-truth mask.
///
/// The mask is oriented like the model input (rotated if vertical) and
/// nearest-neighbor resized. Ties in saliency resolve in scan order; the
/// selection size is `max(1, floor(top_fraction * pixels))`.
pub fn localization_score(saliency: &SaliencyMap, mask: &Mask, top_fraction: f64) -> Result<f64> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_fraction must be in (0, 1], got {top_fraction}"
        )));
    }
    if !mask.any() {
        return Err(Error::EmptyMask);
    }
    let oriented;
    let mask = if mask.height() > mask.width() {
        oriented = mask.rotate90_cw();
        &oriented
    } else {
        mask
    };
    let mask = mask.resize_nearest(saliency.width, saliency.height);

    let total = saliency.values.len();
    let k = ((top_fraction * total as f64).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..total).collect();
    // Stable sort keeps scan order among equal values.
    order.sort_by(|&a, &b| saliency.values[b].partial_cmp(&saliency.values[a]).unwrap());
    let hits = order[..k]
        .iter()
        .filter(|&&i| mask.get((i % saliency.width as usize) as u32, (i / saliency.width as usize) as u32))
        .count();
    Ok(hits as f64 / k as f64)
}

#[derive(Serialize)]
struct RawSidecar {
    width: u32,
    height: u32,
}

/// Writes raw saliency as little-endian f32 values plus a JSON sidecar with
/// the dimensions at `<path>.json`.
pub fn write_raw(saliency: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(saliency.values.len() * 4);
    for &v in &saliency.values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    let sidecar_path = {
        let mut s = path.as_os_str().to_os_string();
        s.push(".json");
        std::path::PathBuf::from(s)
    };
    let sidecar = serde_json::to_string(&RawSidecar {
        width: saliency.width,
        height: saliency.height,
    })
    .map_err(|e| Error::json(&sidecar_path, e.to_string()))?;
    std::fs::write(&sidecar_path, sidecar).map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Rational};
    use crate::rng::DetRng;

    fn test_model(seed: u64) -> Model<f64> {
        let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
        let mut model: Model<f64> = Model::build(cfg, seed).unwrap();
        // The classifier layer initializes to zero; nudge every parameter so
        // input gradients are nonzero.
        let mut rng = DetRng::new(seed ^ 0xABCD);
        for t in model.trainable_mut() {
            for v in t.data_mut() {
                *v += rng.normal_f64() * 0.05;
            }
        }
        model
    }

    fn test_image(seed: u64) -> ImageRGB {
        let mut rng = DetRng::new(seed);
        let mut img = ImageRGB::new(64, 32).unwrap();
        for y in 0..32 {
            for x in 0..64 {
                img.set(x, y, rng.rgb());
            }
        }
        img
    }

    #[test]
    fn saliency_is_nonnegative_and_normalized() {
        let model = test_model(1);
        let sal = compute_saliency(&model, &test_image(2), None).unwrap();
        assert!(sal.values.iter().all(|&v| v >= 0.0));
        let max = sal.normalized.iter().cloned().fold(0.0f64, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        assert!(sal.normalized.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn saliency_rejects_bad_target_class() {
        let model = test_model(1);
        assert!(compute_saliency(&model, &test_image(2), Some(7)).is_err());
    }

    #[test]
    fn saliency_does_not_mutate_parameters() {
        let model = test_model(3);
        let before: Vec<Vec<u64>> = model
            .named_tensors()
            .iter()
            .map(|(_, t)| t.data().iter().map(|x| x.to_bits()).collect())
            .collect();
        compute_saliency(&model, &test_image(4), Some(1)).unwrap();
        let after: Vec<Vec<u64>> = model
            .named_tensors()
            .iter()
            .map(|(_, t)| t.data().iter().map(|x| x.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn saliency_is_deterministic() {
        let model = test_model(5);
        let img = test_image(6);
        let a = compute_saliency(&model, &img, Some(1)).unwrap();
        let b = compute_saliency(&model, &img, Some(1)).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn sampled_pixel_gradients_match_finite_differences() {
        // Central differences of the target logit in [0,1] input space,
        // h = 1e-2, 5e-2 relative tolerance.
        let model = test_model(7);
        let img = test_image(8);
        let target = 1usize;
        let sal = compute_saliency(&model, &img, Some(target)).unwrap();
        let input = preprocess::<f64>(model.config(), &img).unwrap();
        let plane = (sal.width * sal.height) as usize;
        let h = 1e-2;

        let mut tape = Tape::<f64>::new();
        let (logits, input_var) = model.forward_input_grad(&mut tape, input.clone()).unwrap();
        let picked = tape.pick(logits, target).unwrap();
        let mut grads = tape.backward(picked).unwrap();
        let analytic = grads.take(input_var).unwrap();
        let f0 = model.forward_infer(&input).unwrap().data()[target];

        let mut rng = DetRng::new(99);
        let mut checked = 0;
        let mut tries = 0;
        while checked < 8 && tries < 64 {
            tries += 1;
            let pix = rng.below(plane as u64) as usize;
            let ch = rng.below(3) as usize;
            let idx = ch * plane + pix;
            let mut plus = input.clone();
            plus.data_mut()[idx] += h;
            let mut minus = input.clone();
            minus.data_mut()[idx] -= h;
            let fp = model.forward_infer(&plus).unwrap().data()[target];
            let fm = model.forward_infer(&minus).unwrap().data()[target];
            // Skip pixels whose h-neighborhood crosses a ReLU/pool kink: the
            // network is piecewise linear, so the one-sided slopes must agree.
            let s_plus = (fp - f0) / h;
            let s_minus = (f0 - fm) / h;
            if (s_plus - s_minus).abs() > 1e-9 * s_plus.abs().max(s_minus.abs()).max(1.0) {
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.data()[idx];
            let denom = fd.abs().max(1e-6);
            assert!((a - fd).abs() / denom < 5e-2, "pixel {idx}: analytic {a}, fd {fd}");
            checked += 1;
        }
        assert!(checked >= 5, "too few kink-free pixels checked");
        let _ = sal;
    }

    #[test]
    fn heatmap_alpha_zero_returns_original() {
        let model = test_model(9);
        let img = test_image(10);
        let sal = compute_saliency(&model, &img, None).unwrap();
        let out = render_heatmap(&sal, &img, 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn uniform_saliency_gives_uniform_tint() {
        let sal = SaliencyMap {
            width: 8,
            height: 4,
            values: vec![0.5; 32],
            normalized: vec![1.0; 32],
        };
        let base = ImageRGB::filled(8, 4, [100, 100, 100]).unwrap();
        let out = render_heatmap(&sal, &base, 0.5).unwrap();
        let first = out.get(0, 0);
        for y in 0..4 {
            for x in 0..8 {
                assert_eq!(out.get(x, y), first);
            }
        }
    }

    #[test]
    fn hottest_pixel_maps_to_ramp_endpoint() {
        assert_eq!(heat_color(1.0), [255, 0, 0]);
        assert_eq!(heat_color(0.0), [0, 0, 255]);
    }

    #[test]
    fn indicator_saliency_scores_one() {
        let mut mask = Mask::new(16, 8);
        let mut values = vec![0.0f64; 16 * 8];
        for y in 2..6 {
            for x in 3..9 {
                mask.set(x, y, true);
                values[(y * 16 + x) as usize] = 1.0;
            }
        }
        let sal = SaliencyMap { width: 16, height: 8, values: values.clone(), normalized: values };
        // Mask density is 24/128; any top fraction below that scores 1.
        for q in [0.05, 0.1, 0.15] {
            assert_eq!(localization_score(&sal, &mask, q).unwrap(), 1.0);
        }
    }

    #[test]
    fn random_saliency_scores_near_density() {
        let mut mask = Mask::new(20, 10);
        for y in 0..10 {
            for x in 0..6 {
                mask.set(x, y, true);
            }
        }
        let density = mask.density();
        let mut total = 0.0;
        let trials = 100;
        for t in 0..trials {
            let mut rng = DetRng::new(3000 + t);
            let values: Vec<f64> = (0..200).map(|_| rng.uniform_f64()).collect();
            let sal = SaliencyMap {
                width: 20,
                height: 10,
                values: values.clone(),
                normalized: values,
            };
            total += localization_score(&sal, &mask, 0.25).unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - density).abs() < 0.05, "mean {mean} vs density {density}");
    }

    #[test]
    fn all_zero_saliency_is_deterministic_scan_order() {
        let mut mask = Mask::new(10, 10);
        mask.set(0, 0, true);
        mask.set(1, 0, true);
        let sal = SaliencyMap {
            width: 10,
            height: 10,
            values: vec![0.0; 100],
            normalized: vec![0.0; 100],
        };
        // Ties resolve in scan order: the top 2% (2 pixels) are (0,0), (1,0).
        assert_eq!(localization_score(&sal, &mask, 0.02).unwrap(), 1.0);
        let score = localization_score(&sal, &mask, 0.05).unwrap();
        assert_eq!(score, 2.0 / 5.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let sal = SaliencyMap {
            width: 4,
            height: 4,
            values: vec![1.0; 16],
            normalized: vec![1.0; 16],
        };
        assert!(matches!(
            localization_score(&sal, &Mask::new(4, 4), 0.1),
            Err(Error::EmptyMask)
        ));
    }
}

//! Confusion-count metrics, model evaluation over a manifest, and stratified
//! train/val/test splitting. Glitch is the positive class.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::manifest::{DatasetManifest, Label, SampleRecord};
use crate::model::Model;
use crate::rng::{derive_seed, DetRng};

/// A metric that may be undefined (zero denominator). Explicitly undefined
/// rather than silently zero, so reports cannot mislead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::Undefined => None,
        }
    }

    /// Rounded to three decimals, the report precision.
    pub fn rounded_3dp(self) -> Option<f64> {
        self.value().map(|v| (v * 1000.0).round() / 1000.0)
    }
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricValue::Defined(v) => write!(f, "{v:.3}"),
            MetricValue::Undefined => write!(f, "undefined"),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Defined(v) => s.serialize_f64(*v),
            MetricValue::Undefined => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let opt = Option::<f64>::deserialize(d)?;
        match opt {
            Some(v) if v.is_finite() => Ok(MetricValue::Defined(v)),
            Some(_) => Err(D::Error::custom("metric value must be finite")),
            None => Ok(MetricValue::Undefined),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: MetricValue,
    pub accuracy: MetricValue,
}

/// Derives precision, recall, F1, and accuracy from confusion counts.
///
/// precision = tp/(tp+fp), recall = tp/(tp+fn), f1 the harmonic mean,
/// accuracy = (tp+tn)/total. Any zero denominator makes that field
/// undefined; F1 is undefined when either input is, or when p + r = 0.
pub fn compute_metrics(tp: u64, fp: u64, tn: u64, fn_: u64) -> Result<Metrics> {
    let total = tp + fp + tn + fn_;
    if total == 0 {
        return Err(Error::InvalidArgument("all confusion counts are zero".into()));
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            MetricValue::Undefined
        } else {
            MetricValue::Defined(num as f64 / den as f64)
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (MetricValue::Defined(p), MetricValue::Defined(r)) if p + r > 0.0 => {
            MetricValue::Defined(2.0 * p * r / (p + r))
        }
        _ => MetricValue::Undefined,
    };
    let accuracy = ratio(tp + tn, total);
    Ok(Metrics { tp, fp, tn, fn_, precision, recall, f1, accuracy })
}

impl Metrics {
    /// Human-readable four-line table.
    pub fn table(&self) -> String {
        format!(
            "tp={} fp={} tn={} fn={}\nprecision: {}\nrecall:    {}\nf1:        {}\naccuracy:  {}",
            self.tp, self.fp, self.tn, self.fn_, self.precision, self.recall, self.f1,
            self.accuracy
        )
    }
}

/// One evaluated sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub path: String,
    pub truth: Label,
    pub prediction: Label,
    pub p_glitch: f64,
}

pub struct Evaluation {
    pub metrics: Metrics,
    pub verdicts: Vec<Verdict>,
}

/// Runs the detector over every record and tallies the confusion counts.
/// Metrics are order-independent; the verdict list follows manifest order.
pub fn evaluate(model: &Model<f32>, manifest: &DatasetManifest) -> Result<Evaluation> {
    if manifest.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty manifest".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    let mut verdicts = Vec::with_capacity(manifest.len());
    for rec in &manifest.records {
        let img = ImageRGB::load_png(manifest.resolve(&rec.image_path))?;
        let (prediction, probs) = model.predict(&img)?;
        let p_glitch = probs.get(1).copied().unwrap_or(0.0) as f64;
        match (rec.label, prediction) {
            (Label::Glitch, Label::Glitch) => tp += 1,
            (Label::Normal, Label::Glitch) => fp += 1,
            (Label::Normal, Label::Normal) => tn += 1,
            (Label::Glitch, Label::Normal) => fn_ += 1,
        }
        verdicts.push(Verdict {
            path: rec.image_path.clone(),
            truth: rec.label,
            prediction,
            p_glitch,
        });
    }
    Ok(Evaluation { metrics: compute_metrics(tp, fp, tn, fn_)?, verdicts })
}

pub struct SplitOutcome {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
    pub warnings: Vec<String>,
}

/// Seeded, label-stratified shuffle split. Splits are disjoint and
/// exhaustive; each split's label ratio lands within one record of the
/// global ratio. A nonzero-fraction split that ends up with zero records of
/// either class yields a warning, not an error.
pub fn split_manifest(
    manifest: &DatasetManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitOutcome> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::InvalidArgument("split fractions must be nonnegative".into()));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fe
        )));
    }
    let fracs = [ft, fv, fe];
    let mut splits: [Vec<SampleRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];

    for (class_idx, label) in [Label::Normal, Label::Glitch].into_iter().enumerate() {
        let mut ids: Vec<usize> = manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        let mut rng = DetRng::new(derive_seed(seed, 0x5917 + class_idx as u64));
        rng.shuffle(&mut ids);

        // Largest-remainder allocation keeps each split within one record of
        // the exact fractional share.
        let n = ids.len();
        let mut sizes = [0usize; 3];
        let mut remainders: Vec<(usize, f64)> = Vec::new();
        let mut assigned = 0usize;
        for (k, &f) in fracs.iter().enumerate() {
            let exact = f * n as f64;
            sizes[k] = exact.floor() as usize;
            assigned += sizes[k];
            remainders.push((k, exact - exact.floor()));
        }
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (k, _) in remainders.iter().take(n - assigned) {
            sizes[*k] += 1;
        }

        let mut cursor = 0usize;
        for (k, &size) in sizes.iter().enumerate() {
            for &id in &ids[cursor..cursor + size] {
                splits[k].push(manifest.records[id].clone());
            }
            cursor += size;
        }
    }

    let mut warnings = Vec::new();
    let names = ["train", "val", "test"];
    for (k, records) in splits.iter().enumerate() {
        if fracs[k] > 0.0 {
            for label in [Label::Normal, Label::Glitch] {
                if !records.iter().any(|r| r.label == label) {
                    warnings.push(format!("{} split received no {label} records", names[k]));
                }
            }
        }
    }
    let [train_recs, val_recs, test_recs] = splits;
    let base = manifest.base_dir();
    Ok(SplitOutcome {
        train: DatasetManifest::new(train_recs, base)?,
        val: DatasetManifest::new(val_recs, base)?,
        test: DatasetManifest::new(test_recs, base)?,
        warnings,
    })
}

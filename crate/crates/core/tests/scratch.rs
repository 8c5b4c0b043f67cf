//! Temporary diagnostics; deleted before ship.

use std::path::Path;

use glitchkit::augment::{self, PaletteMode, RegionConstraints, Rule};
use glitchkit::manifest::{DatasetManifest, Label, SampleRecord};
use glitchkit::metrics;
use glitchkit::model::{ModelConfig, Rational};
use glitchkit::rendersim::{self, corpus};
use glitchkit::rng::derive_seed;
use glitchkit::train::{self, TrainConfig};

fn build_desk_dataset(root: &Path, seed: u64) -> DatasetManifest {
    let inject_dir = root.join("inject");
    let scenes = corpus::sample_scene_corpus(derive_seed(seed, 50), 20, 64, 32, 10);
    let bundles: Vec<rendersim::SceneBundle> = scenes
        .iter()
        .enumerate()
        .map(|(i, scene)| rendersim::SceneBundle {
            scene: scene.clone(),
            faults: vec![corpus::corpus_fault(scene, i)],
        })
        .collect();
    let inject = rendersim::generate_injection_dataset(&bundles, seed, &inject_dir).unwrap();
    let normal_records: Vec<SampleRecord> = inject
        .records
        .iter()
        .filter(|r| r.label == Label::Normal)
        .take(100)
        .cloned()
        .collect();
    let normals_manifest = DatasetManifest::new(normal_records, inject.base_dir()).unwrap();
    let rules_dir = root.join("rules");
    let ruleset = augment::generate_rule_dataset(
        &normals_manifest,
        &Rule::ALL,
        PaletteMode::RandomRgb,
        derive_seed(seed, 51),
        &rules_dir,
        &RegionConstraints { min_area_frac: 0.045, max_area_frac: 0.25, min_patch: 6, max_patch: 16 },
    )
    .unwrap();
    let mut records: Vec<SampleRecord> = Vec::new();
    for rec in &inject.records {
        let mut r = rec.clone();
        r.image_path = inject.resolve(&rec.image_path).to_string_lossy().into_owned();
        r.mask_path =
            rec.mask_path.as_ref().map(|m| inject.resolve(m).to_string_lossy().into_owned());
        records.push(r);
    }
    for rec in &ruleset.records {
        if rec.label == Label::Glitch {
            let mut r = rec.clone();
            r.image_path = ruleset.resolve(&rec.image_path).to_string_lossy().into_owned();
            r.mask_path =
                rec.mask_path.as_ref().map(|m| ruleset.resolve(m).to_string_lossy().into_owned());
            records.push(r);
        }
    }
    DatasetManifest::new(records, root).unwrap()
}

#[test]
#[ignore]
fn probe_training_dynamics() {
    let root = std::env::temp_dir().join("glitchkit_scratch");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let dataset = build_desk_dataset(&root, derive_seed(42, 5));
    let split = metrics::split_manifest(&dataset, (0.7, 0.15, 0.15), 42).unwrap();
    let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
    let train_cfg = TrainConfig {
        batch_size: 16,
        learning_rate: 0.006,
        epochs: 180,
        seed: 42,
        shuffle: true,
        lr_decay: 0.985,
    };
    let outcome = train::train(&split.train, &cfg, &train_cfg, Some(&split.val)).unwrap();
    for e in &outcome.log {
        println!(
            "epoch {:>3} loss {:.5} train_acc {:.4} val_acc {:?}",
            e.epoch, e.loss, e.train_acc, e.val_acc
        );
    }
    let eval = metrics::evaluate(&outcome.model, &split.test).unwrap();
    println!("{}", eval.metrics.table());
    // Per-glitch-class breakdown over val + test.
    use std::collections::BTreeMap;
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for held in [&split.val, &split.test] {
        for rec in &held.records {
            let img = glitchkit::ImageRGB::load_png(held.resolve(&rec.image_path)).unwrap();
            let (pred, _) = outcome.model.predict(&img).unwrap();
            let key = match (rec.label, rec.glitch_class) {
                (Label::Normal, _) => "normal".to_string(),
                (Label::Glitch, Some(c)) => {
                    let frag = ["partial_repetition", "solid_color_block", "mosaic", "random_noise", "fault"]
                        .iter()
                        .find(|f| rec.image_path.contains(**f))
                        .copied()
                        .unwrap_or("?");
                    format!("{c}/{}/{frag}", rec.generator)
                }
                (Label::Glitch, None) => "glitch/?".to_string(),
            };
            let e = per_class.entry(key).or_insert((0, 0));
            e.1 += 1;
            if pred == rec.label { e.0 += 1; }
        }
    }
    for (k, (ok, n)) in per_class {
        println!("{k}: {ok}/{n}");
    }
}

#[test]
#[ignore]
fn probe_trivial_task() {
    use glitchkit::image::ImageRGB;
    use glitchkit::manifest::Generator;
    use glitchkit::rng::DetRng;
    // Trivial separable task: glitch = big white square present.
    let root = std::env::temp_dir().join("glitchkit_scratch_trivial");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let scenes = corpus::sample_scene_corpus(777, 100, 64, 32, 1);
    let mut records = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let frame = rendersim::render_scene(scene).unwrap().remove(0);
        let name = format!("n{i:03}.png");
        frame.save_png(root.join(&name)).unwrap();
        records.push(SampleRecord {
            image_path: name,
            label: Label::Normal,
            glitch_class: None,
            mask_path: None,
            generator: Generator::Captured,
            seed: i as u64,
        });
        let mut rng = DetRng::new(5000 + i as u64);
        let mut g: ImageRGB = frame.clone();
        let x0 = rng.range_usize(0, 48) as u32;
        let y0 = rng.range_usize(0, 16) as u32;
        for y in y0..y0 + 16 {
            for x in x0..x0 + 16 {
                g.set(x, y, [255, 255, 255]);
            }
        }
        let gname = format!("g{i:03}.png");
        g.save_png(root.join(&gname)).unwrap();
        records.push(SampleRecord {
            image_path: gname,
            label: Label::Glitch,
            glitch_class: None,
            mask_path: None,
            generator: Generator::Captured,
            seed: i as u64,
        });
    }
    let manifest = DatasetManifest::new(records, &root).unwrap();
    let split = metrics::split_manifest(&manifest, (0.7, 0.15, 0.15), 1).unwrap();
    let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
    let train_cfg = TrainConfig {
        batch_size: 16,
        learning_rate: 0.001,
        epochs: 25,
        seed: 42,
        shuffle: true,
        lr_decay: 1.0,
    };
    let outcome = train::train(&split.train, &cfg, &train_cfg, Some(&split.val)).unwrap();
    for e in &outcome.log {
        println!(
            "epoch {:>3} loss {:.5} train_acc {:.4} val_acc {:?}",
            e.epoch, e.loss, e.train_acc, e.val_acc
        );
    }
}


#[test]
#[ignore]
fn probe_trivial_full_width() {
    probe_trivial_with(Rational { num: 1, den: 1 }, 0.001, 25);
}

#[test]
#[ignore]
fn probe_trivial_high_lr() {
    probe_trivial_with(Rational { num: 1, den: 4 }, 0.005, 40);
}

fn probe_trivial_with(scale: Rational, lr: f64, epochs: usize) {
    use glitchkit::image::ImageRGB;
    use glitchkit::manifest::Generator;
    use glitchkit::rng::DetRng;
    let root = std::env::temp_dir().join(format!("glitchkit_scratch_t{}_{}", scale.den, (lr*1e4) as u32));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let scenes = corpus::sample_scene_corpus(777, 100, 64, 32, 1);
    let mut records = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let frame = rendersim::render_scene(scene).unwrap().remove(0);
        let name = format!("n{i:03}.png");
        frame.save_png(root.join(&name)).unwrap();
        records.push(SampleRecord {
            image_path: name,
            label: Label::Normal,
            glitch_class: None,
            mask_path: None,
            generator: Generator::Captured,
            seed: i as u64,
        });
        let mut rng = DetRng::new(5000 + i as u64);
        let mut g: ImageRGB = frame.clone();
        let x0 = rng.range_usize(0, 48) as u32;
        let y0 = rng.range_usize(0, 16) as u32;
        for y in y0..y0 + 16 {
            for x in x0..x0 + 16 {
                g.set(x, y, [255, 255, 255]);
            }
        }
        let gname = format!("g{i:03}.png");
        g.save_png(root.join(&gname)).unwrap();
        records.push(SampleRecord {
            image_path: gname,
            label: Label::Glitch,
            glitch_class: None,
            mask_path: None,
            generator: Generator::Captured,
            seed: i as u64,
        });
    }
    let manifest = DatasetManifest::new(records, &root).unwrap();
    let split = metrics::split_manifest(&manifest, (0.7, 0.15, 0.15), 1).unwrap();
    let cfg = ModelConfig::desk_scale(64, 32, scale);
    let train_cfg = TrainConfig { batch_size: 16, learning_rate: lr, epochs, seed: 42, shuffle: true, lr_decay: 1.0 };
    let outcome = train::train(&split.train, &cfg, &train_cfg, Some(&split.val)).unwrap();
    for e in &outcome.log {
        println!(
            "epoch {:>3} loss {:.5} train_acc {:.4} val_acc {:?}",
            e.epoch, e.loss, e.train_acc, e.val_acc
        );
    }
}
#[test]
#[ignore]
fn probe_layer_stats() {
    use glitchkit::layers;
    use glitchkit::model::preprocess;
    let root = std::env::temp_dir().join("glitchkit_probe_layers");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let scenes = corpus::sample_scene_corpus(glitchkit::rng::derive_seed(glitchkit::rng::derive_seed(42, 5), 50), 50, 64, 32, 4);
    let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
    let model: glitchkit::Model<f32> = glitchkit::Model::build(cfg.clone(), 42).unwrap();
    // Batch of 16 fault-free frames.
    let mut inputs = Vec::new();
    for scene in scenes.iter().take(16) {
        let frame = rendersim::render_scene(scene).unwrap().remove(0);
        inputs.push(preprocess::<f32>(&cfg, &frame).unwrap());
    }
    let mut x = glitchkit::model::stack_batch(&inputs).unwrap();
    for (i, b) in model.blocks.iter().enumerate() {
        x = layers::conv2d_forward(&x, &b.weight, &b.bias, 1, 1).unwrap();
        let conv_var = variance(x.data());
        let (bn, _) = layers::batchnorm2d_train(&x, &b.gamma, &b.beta, 1e-5).unwrap();
        x = layers::relu_forward(&bn);
        let alive = x.data().iter().filter(|&&v| v > 0.0).count() as f64 / x.numel() as f64;
        if cfg.pool_after.contains(&(i + 1)) {
            let (p, _) = layers::maxpool2d_forward(&x, 2, 2).unwrap();
            x = p;
        }
        println!("conv{:>2}: conv_var={:.4e} alive={:.3} outshape={:?}", i + 1, conv_var, alive, x.shape());
    }
}

fn variance(d: &[f32]) -> f64 {
    let n = d.len() as f64;
    let mean: f64 = d.iter().map(|&v| v as f64).sum::<f64>() / n;
    d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

#[test]
#[ignore]
fn probe_grad_flow() {
    use glitchkit::adam::AdamState;
    use glitchkit::model::{preprocess, stack_batch};
    use glitchkit::tape::Tape;
    let seed5 = glitchkit::rng::derive_seed(42, 5);
    let scenes = corpus::sample_scene_corpus(glitchkit::rng::derive_seed(seed5, 50), 50, 64, 32, 4);
    let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
    let mut model: glitchkit::Model<f32> = glitchkit::Model::build(cfg.clone(), 42).unwrap();
    let mut adam = AdamState::new(&model.trainable_shapes(), 0.005);
    // Balanced batch: 8 normal frames + 8 camera-off glitch frames.
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, scene) in scenes.iter().take(8).enumerate() {
        let frames = rendersim::render_scene(scene).unwrap();
        inputs.push(preprocess::<f32>(&cfg, &frames[0]).unwrap());
        labels.push(0usize);
        let fault = corpus::corpus_fault(scene, i * 3); // camera-off rotation slot
        let render = rendersim::render_with_fault(scene, &fault).unwrap();
        inputs.push(preprocess::<f32>(&cfg, &render.frames[3]).unwrap());
        labels.push(1usize);
    }
    let batch = stack_batch(&inputs).unwrap();
    for step in 0..30 {
        let mut tape = Tape::new();
        let graph = model.forward_train(&mut tape, batch.clone()).unwrap();
        let loss = tape.cross_entropy(graph.logits, &labels).unwrap();
        let loss_val = tape.value(loss).item();
        let logits_now = tape.value(graph.logits).data().to_vec();
        let mut grads = tape.backward(loss).unwrap();
        let gt: Vec<glitchkit::Tensor<f32>> = graph
            .params
            .iter()
            .map(|&v| grads.take(v).unwrap())
            .collect();
        if step % 5 == 0 {
            let names: Vec<String> =
                model.named_tensors().iter().map(|(n, _)| n.clone()).collect();
            let trainable_names: Vec<&String> =
                names.iter().filter(|n| !n.contains("running")).collect();
            let mut report = String::new();
            for probe in ["conv1.weight", "conv10.weight", "fc1.weight", "fc4.weight"] {
                let idx = trainable_names.iter().position(|n| *n == probe).unwrap();
                let g = &gt[idx];
                let norm: f32 = g.data().iter().map(|v| v * v).sum::<f32>().sqrt();
                report.push_str(&format!("{probe}:g={norm:.3e} "));
            }
            println!(
                "step {step:>2} loss={loss_val:.5} z0={:.4} z1={:.4} {report}",
                logits_now[0], logits_now[1]
            );
        }
        let refs: Vec<&glitchkit::Tensor<f32>> = gt.iter().collect();
        let mut params = model.trainable_mut();
        adam.step(&mut params, &refs).unwrap();
    }
    // Inference on the same batch after 30 steps.
    let logits = model.forward_infer(&batch).unwrap();
    println!("infer logits row0: {:?} row1: {:?}", &logits.data()[0..2], &logits.data()[2..4]);
    let rv_max = model
        .blocks
        .iter()
        .flat_map(|b| b.running_var.data().iter().copied())
        .fold(f32::MIN, f32::max);
    println!("max running_var = {rv_max:.3e}");
}

#[test]
#[ignore]
fn probe_stall_mechanism() {
    use glitchkit::adam::AdamState;
    use glitchkit::model::{preprocess, stack_batch};
    use glitchkit::tape::Tape;
    use glitchkit::image::ImageRGB;
    let root = std::env::temp_dir().join("glitchkit_scratch");
    let dataset = build_desk_dataset(&root, glitchkit::rng::derive_seed(42, 5));
    let split = metrics::split_manifest(&dataset, (0.7, 0.15, 0.15), 42).unwrap();
    let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
    let mut model: glitchkit::Model<f32> = glitchkit::Model::build(cfg.clone(), 42).unwrap();
    let mut adam = AdamState::new(&model.trainable_shapes(), 0.005);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for rec in &split.train.records {
        let img = ImageRGB::load_png(split.train.resolve(&rec.image_path)).unwrap();
        inputs.push(preprocess::<f32>(&cfg, &img).unwrap());
        labels.push(rec.label.class_index());
    }
    for epoch in 1..=6 {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut rng = glitchkit::rng::DetRng::new(glitchkit::rng::derive_seed(42, 0xE70C + epoch as u64));
        rng.shuffle(&mut order);
        for chunk in order.chunks(16) {
            let binputs: Vec<_> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let blabels: Vec<_> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = stack_batch(&binputs).unwrap();
            let mut tape = Tape::new();
            let graph = model.forward_train(&mut tape, batch).unwrap();
            let loss = tape.cross_entropy(graph.logits, &blabels).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let gt: Vec<_> = graph.params.iter().map(|&v| grads.take(v).unwrap()).collect();
            let refs: Vec<&glitchkit::Tensor<f32>> = gt.iter().collect();
            let mut params = model.trainable_mut();
            adam.step(&mut params, &refs).unwrap();
        }
        let w4 = &model.fcs[3].weight;
        let w4_norm: f32 = w4.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        // Post-conv feature health on one training image, inference mode.
        let x = model.forward_infer(&inputs[0]).unwrap();
        let gamma_mins: Vec<f32> = model
            .blocks
            .iter()
            .map(|b| b.gamma.data().iter().fold(f32::MAX, |m, &v| m.min(v.abs())))
            .collect();
        println!(
            "epoch {epoch}: |W4|={w4_norm:.4} logits={:?} min|gamma|={:?}",
            x.data(),
            gamma_mins
        );
    }
}

#[test]
#[ignore]
fn probe_rule_deltas() {
    use glitchkit::augment::{self, PaletteMode, RegionConstraints, Rule, RuleSpec};
    let scenes = corpus::sample_scene_corpus(4242, 12, 64, 32, 1);
    let c = RegionConstraints { min_area_frac: 0.045, max_area_frac: 0.25, min_patch: 6, max_patch: 16 };
    for rule in [Rule::Mosaic, Rule::PartialRepetition] {
        for (i, scene) in scenes.iter().enumerate() {
            let img = rendersim::render_scene(scene).unwrap().remove(0);
            let spec = RuleSpec { rule, palette_mode: PaletteMode::RandomRgb, seed: 900 + i as u64, constraints: c };
            let (out, mask) = augment::apply_rule(&img, &spec).unwrap();
            let mut changed = 0usize;
            let mut sum_abs = 0f64;
            let mut max_abs = 0i32;
            let mut area = 0usize;
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if mask.get(x, y) {
                        area += 1;
                        let a = img.get(x, y);
                        let b = out.get(x, y);
                        let d = (0..3).map(|k| (a[k] as i32 - b[k] as i32).abs()).max().unwrap();
                        if d > 0 { changed += 1; }
                        sum_abs += d as f64;
                        max_abs = max_abs.max(d);
                    }
                }
            }
            println!(
                "{rule} scene {i}: area={area} changed_frac={:.2} mean|d|={:.1} max|d|={max_abs}",
                changed as f64 / area as f64,
                sum_abs / area as f64
            );
        }
    }
}

#[test]
#[ignore]
fn probe_bn_recalibration() {
    use glitchkit::model::{preprocess, stack_batch};
    use glitchkit::tape::Tape;
    use glitchkit::image::ImageRGB;
    let root = std::env::temp_dir().join("glitchkit_scratch");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let dataset = build_desk_dataset(&root, glitchkit::rng::derive_seed(42, 5));
    let split = metrics::split_manifest(&dataset, (0.7, 0.15, 0.15), 42).unwrap();
    let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
    let train_cfg = TrainConfig {
        batch_size: 16,
        learning_rate: 0.006,
        epochs: 180,
        seed: 42,
        shuffle: true,
        lr_decay: 0.985,
    };
    let outcome = train::train(&split.train, &cfg, &train_cfg, Some(&split.val)).unwrap();
    let mut model = outcome.model;
    let eval = metrics::evaluate(&model, &split.test).unwrap();
    println!("before recalibration:\n{}", eval.metrics.table());
    // Converge running stats to the selected weights.
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for rec in &split.train.records {
        let img = ImageRGB::load_png(split.train.resolve(&rec.image_path)).unwrap();
        inputs.push(preprocess::<f32>(&cfg, &img).unwrap());
        labels.push(rec.label.class_index());
    }
    for _pass in 0..6 {
        for chunk in (0..inputs.len()).collect::<Vec<_>>().chunks(16) {
            let b: Vec<_> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let batch = stack_batch(&b).unwrap();
            let mut tape = Tape::new();
            let _ = model.forward_train(&mut tape, batch).unwrap();
        }
    }
    let eval2 = metrics::evaluate(&model, &split.test).unwrap();
    println!("after recalibration:\n{}", eval2.metrics.table());
    let ev_val = metrics::evaluate(&model, &split.val).unwrap();
    println!("val after recal:\n{}", ev_val.metrics.table());
}

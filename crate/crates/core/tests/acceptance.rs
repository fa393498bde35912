//! One PASS/FAIL line per acceptance criterion. Runs everything in sequence
//! and exits non-zero if any criterion fails.
//!
//! The overfit and ablation runs take most of the time (about half an hour
//! on one core together).

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use image::{GrayImage, Luma, RgbImage};
use rand::Rng;

use fipoly::cli::{RunManifest, CHECKPOINT_FILE, MANIFEST_FILE};
use fipoly::data::{assemble_example, generate_freeform_mask, seeded_rng, synth_face, MaskConfig};
use fipoly::imaging::{composite, Image, Mask, Plane};
use fipoly::inference::FrozenModel;
use fipoly::losses::{adversarial_loss_with_grad, gan_loss_with_grad, LabelConvention, LossWeights};
use fipoly::metrics::{mse, snr, ssim};
use fipoly::model::{
    composite_backward, composite_tensor, stack_bundles, stack_images, stack_masks, Discriminator, DiscriminatorConfig,
    Generator, GeneratorConfig, GeneratorInputBundle,
};
use fipoly::nn::{Module, Slot, SpectralState};
use fipoly::trainer::{
    evaluate, evaluation_examples, identity_l1, load_checkpoint, save_checkpoint, DatasetSource, TrainConfig, TrainState,
};
use fipoly::Tensor;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { name, pass, detail: detail.into() }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("reference", reference_scores_documented),
        ("gradients", gradient_suite),
        ("spectral", spectral_oracle),
        ("metrics", metrics_oracle),
        ("compositing", compositing_invariant),
        ("determinism", determinism),
        ("overfit", overfit_run),
        ("ablation", conditioning_ablation),
    ];
    // `cargo test --test acceptance -- gradients metrics` runs a subset
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (key, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| key.contains(w.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "{} {}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn workspace_root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().parent().unwrap()
}

// ---------------------------------------------------------------- reference scores

fn reference_scores_documented() -> Outcome {
    let name = "Reference LFW scores documented as not reproducible at desk scale";
    let readme = std::fs::read_to_string(workspace_root().join("README.md")).unwrap_or_default();
    let numbers = ["0.824", "27.533", "1.678"].iter().all(|n| readme.contains(n));
    let flagged = readme.to_lowercase().contains("not reproducible");
    outcome(name, numbers && flagged, format!("README lists reference numbers: {numbers}, marked not reproducible: {flagged}"))
}

// ---------------------------------------------------------------- gradients

/// Total generator objective: lambda3-weighted GAN term on D(composite) plus
/// lambda4-weighted L1 identity term on the composite.
fn generator_objective(
    g: &Generator<f64>,
    d: &Discriminator<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    mask: &Tensor<f64>,
    w: &LossWeights,
    labels: &LabelConvention,
) -> f64 {
    let (raw, _) = g.forward(input).unwrap();
    let comp = composite_tensor(&raw, target, mask).unwrap();
    let (scores, _) = d.forward(&comp).unwrap();
    let gan = gan_loss_with_grad(&scores, labels.real_label, w.lambda3).unwrap().value;
    let l1: f64 = comp.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / comp.len() as f64;
    gan + w.lambda4 * l1
}

fn discriminator_objective(d: &Discriminator<f64>, real: &Tensor<f64>, fake: &Tensor<f64>, w: &LossWeights, labels: &LabelConvention) -> f64 {
    let (r, _) = d.forward(real).unwrap();
    let (f, _) = d.forward(fake).unwrap();
    let sq = |s: &Tensor<f64>, label: f64| s.data().iter().map(|v| (v - label).powi(2)).sum::<f64>() / s.len() as f64;
    w.lambda1 * sq(&r, labels.real_label) + w.lambda2 * sq(&f, labels.fake_label)
}

/// Sizes of the trainable tensors of `m`, in visiting order.
fn param_sizes(m: &mut dyn Module<f64>) -> Vec<usize> {
    let mut sizes = Vec::new();
    m.visit_mut("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            sizes.push(p.value.len());
        }
    });
    sizes
}

/// Adds `delta` to element `idx` of trainable tensor `which`; returns its gradient.
fn touch(m: &mut dyn Module<f64>, which: usize, idx: usize, delta: f64) -> f64 {
    let (mut k, mut grad) = (0, 0.0);
    m.visit_mut("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            if k == which {
                p.value.data_mut()[idx] += delta;
                grad = p.grad.data()[idx];
            }
            k += 1;
        }
    });
    grad
}

fn block_mask(side: usize, rng: &mut impl Rng) -> Mask {
    let mut plane = Plane::zeros(side, side);
    for _ in 0..3 {
        let (y, x) = (rng.random_range(0..side - 4), rng.random_range(0..side - 4));
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
        for yy in y..(y + h).min(side) {
            for xx in x..(x + w).min(side) {
                plane.data[yy * side + xx] = 1.0;
            }
        }
    }
    Mask(plane)
}

struct Sampled {
    analytic: f64,
    numeric: f64,
}

fn sample_params<M: Module<f64>>(m: &mut M, count: usize, rng: &mut impl Rng, loss: impl Fn(&M) -> f64) -> Vec<Sampled> {
    const H: f64 = 1e-6;
    let sizes = param_sizes(m);
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // uniform over scalars, so large kernels get most samples
        let mut flat = rng.random_range(0..total);
        let which = sizes.iter().position(|&s| if flat < s { true } else { flat -= s; false }).unwrap();
        let analytic = touch(m, which, flat, H);
        let plus = loss(m);
        touch(m, which, flat, -2.0 * H);
        let minus = loss(m);
        touch(m, which, flat, H);
        out.push(Sampled { analytic, numeric: (plus - minus) / (2.0 * H) });
    }
    out
}

fn gradient_suite() -> Outcome {
    let name = "Gradient suite (miniature G + D + losses, f64 central differences)";
    let start = Instant::now();
    let side = 16;
    let gcfg = GeneratorConfig::miniature();
    let dcfg = DiscriminatorConfig::miniature();
    let mut rng = seeded_rng(2024, 0);
    let mut g = Generator::<f64>::new(gcfg.clone(), &mut rng).unwrap();
    let mut d = Discriminator::<f64>::new(dcfg, side, &mut rng).unwrap();
    for _ in 0..3 {
        g.advance_spectral();
        d.advance_spectral();
    }
    let tc = TrainConfig { generator: gcfg, ..Default::default() };
    let ex_cfg = tc.example_config();
    let examples: Vec<_> = (0..2u64)
        .map(|i| assemble_example(&synth_face(i, side), block_mask(side, &mut rng), i, &ex_cfg, None).unwrap())
        .collect();
    let bundles: Vec<&GeneratorInputBundle> = examples.iter().map(|e| &e.bundle).collect();
    let input = stack_bundles::<f64>(&bundles).unwrap();
    let target = stack_images::<f64>(&examples.iter().map(|e| &e.target).collect::<Vec<_>>()).unwrap();
    let mask = stack_masks::<f64>(&examples.iter().map(|e| &e.bundle.mask).collect::<Vec<_>>()).unwrap();
    let (w, labels) = (tc.weights, tc.labels);

    // analytic generator gradients
    g.zero_grad();
    let (raw, g_cache) = g.forward(&input).unwrap();
    let comp = composite_tensor(&raw, &target, &mask).unwrap();
    let (scores, d_cache) = d.forward(&comp).unwrap();
    let gan = gan_loss_with_grad(&scores, labels.real_label, w.lambda3).unwrap();
    let mut d_comp = d.input_grad(&d_cache, &gan.grad).unwrap();
    let n = comp.len() as f64;
    let l1_grad: Vec<f64> = comp.data().iter().zip(target.data()).map(|(a, b)| w.lambda4 * (a - b).signum() * f64::from(a != b) / n).collect();
    d_comp.add_assign(&Tensor::from_vec(comp.shape(), l1_grad).unwrap());
    g.backward(&g_cache, &composite_backward(&d_comp, &mask).unwrap()).unwrap();

    // analytic discriminator gradients on real targets and the detached composite
    d.zero_grad();
    let both = Tensor::concat_batch(&[&target, &comp]).unwrap();
    let (s, cache) = d.forward(&both).unwrap();
    let nb = target.shape()[0];
    let (_, gr, gf) =
        adversarial_loss_with_grad(&s.batch_range(0, nb).unwrap(), &s.batch_range(nb, 2 * nb).unwrap(), labels, w.lambda1, w.lambda2)
            .unwrap();
    d.backward(&cache, &Tensor::concat_batch(&[&gr, &gf]).unwrap(), false).unwrap();

    let d_frozen = d.clone();
    let mut g_samples =
        sample_params(&mut g, 160, &mut rng, |gm| generator_objective(gm, &d_frozen, &input, &target, &mask, &w, &labels));
    let d_samples = sample_params(&mut d, 80, &mut rng, |dm| discriminator_objective(dm, &target, &comp, &w, &labels));
    g_samples.extend(d_samples);

    const FLOOR: f64 = 1e-6;
    let rel: Vec<f64> = g_samples
        .iter()
        .map(|s| (s.analytic - s.numeric).abs() / s.analytic.abs().max(s.numeric.abs()).max(FLOOR))
        .collect();
    let worst = rel.iter().copied().fold(0.0, f64::max);
    let bad = rel.iter().filter(|&&r| r > 1e-3).count();
    let nonzero = g_samples.iter().filter(|s| s.analytic.abs() > FLOOR).count();
    let elapsed = start.elapsed();
    let pass = bad == 0 && g_samples.len() >= 200 && elapsed < Duration::from_secs(120);
    outcome(
        name,
        pass,
        format!(
            "{} params ({} with |grad| > {FLOOR:e}), max rel err {worst:.2e}, {bad} over 1e-3, {:.1}s",
            g_samples.len(),
            nonzero,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- spectral

fn spectral_oracle() -> Outcome {
    let name = "Spectral-norm oracle (50 random kernels, 20 power iterations, dense SVD in [0.99, 1.01])";
    let mut rng = seeded_rng(77, 0);
    let mut sigmas = Vec::new();
    for _ in 0..50 {
        let out = rng.random_range(2..=32usize);
        let inc = rng.random_range(1..=16usize);
        let k = [1usize, 3, 4][rng.random_range(0..3)];
        let kernel: Tensor<f64> = Tensor::randn(&[out, inc, k, k], 0.02, &mut rng);
        let mut state = SpectralState::new(out, &mut rng);
        state.iterations_per_step = 1;
        for _ in 0..20 {
            state.power_iterate(&kernel).unwrap();
        }
        let (normalized, _) = state.normalized(&kernel).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(out, inc * k * k, normalized.data());
        sigmas.push(m.singular_values().max());
    }
    let inside = sigmas.iter().filter(|s| (0.99..=1.01).contains(*s)).count();
    let (lo, hi) = sigmas.iter().fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
    outcome(name, inside == sigmas.len(), format!("{inside}/50 inside, sigma range [{lo:.4}, {hi:.4}]"))
}

// ---------------------------------------------------------------- metrics

fn to255(v: f32) -> f64 {
    (v as f64 + 1.0) * 127.5
}

/// SSIM by direct summation over every 11x11 window with 2-D Gaussian weights.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    const K: usize = 11;
    let sigma: f64 = 1.5;
    let mut weights = [[0.0f64; K]; K];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let (h, w) = (a.height, a.width);
    let mut per_channel = 0.0;
    for c in 0..a.channels {
        let (x, y) = (a.channel(c), b.channel(c));
        let mut acc = 0.0;
        let mut windows = 0;
        for oy in 0..=h - K {
            for ox in 0..=w - K {
                let px = |p: &[f32], i: usize, j: usize| to255(p[(oy + i) * w + ox + j]);
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let wt = weights[i][j] / total;
                        mx += wt * px(x, i, j);
                        my += wt * px(y, i, j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let wt = weights[i][j] / total;
                        let (dx, dy) = (px(x, i, j) - mx, px(y, i, j) - my);
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                windows += 1;
            }
        }
        per_channel += acc / windows as f64;
    }
    per_channel / a.channels as f64
}

fn metrics_oracle() -> Outcome {
    let name = "Metrics oracle (20 random 32x32 pairs vs direct formulas, tol 1e-6)";
    let mut rng = seeded_rng(31, 0);
    let mut worst: f64 = 0.0;
    let mut self_exact = true;
    for i in 0..20 {
        let channels = if i % 4 == 3 { 1 } else { 3 };
        let len = channels * 32 * 32;
        let a = Image::new(channels, 32, 32, (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap();
        // correlated partner, so SSIM lands away from zero
        let b_data = a.data.iter().map(|&v| (v + rng.random_range(-0.3..0.3f32)).clamp(-1.0, 1.0)).collect();
        let b = Image::new(channels, 32, 32, b_data).unwrap();

        let err = (a.data.iter().zip(&b.data).map(|(&p, &q)| (to255(p) - to255(q)).powi(2)).sum::<f64>()) / len as f64;
        let sig: f64 = a.data.iter().map(|&p| to255(p).powi(2)).sum();
        let snr_lin = sig / (err * len as f64);
        let snr_db = 10.0 * snr_lin.log10();
        let s = snr(&a, &b).unwrap();
        for (got, want) in [
            (ssim(&a, &b).unwrap(), ssim_direct(&a, &b)),
            (mse(&a, &b).unwrap(), err),
            (s.linear, snr_lin),
            (s.db, snr_db),
        ] {
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
        self_exact &= ssim(&a, &a).unwrap() == 1.0 && mse(&a, &a).unwrap() == 0.0;
    }
    outcome(name, worst <= 1e-6 && self_exact, format!("max deviation {worst:.2e}, ssim(x,x)=1 and mse(x,x)=0 exact: {self_exact}"))
}

// ---------------------------------------------------------------- compositing

fn compositing_invariant() -> Outcome {
    let name = "Compositing invariant (1000 random image/mask pairs, unmasked pixels bit-exact)";
    let mut rng = seeded_rng(5150, 0);
    let cfg = TrainConfig {
        generator: GeneratorConfig { image_side: 32, ..GeneratorConfig::miniature() },
        discriminator: DiscriminatorConfig::miniature(),
        ..Default::default()
    };
    let model = FrozenModel::from_state(TrainState::new(cfg).unwrap(), "composite-check".into());
    let mut service_bad = 0usize;
    let mut tensor_bad = 0usize;
    let mut changed_holes = 0usize;
    for i in 0..1000u64 {
        // 8-bit route: arbitrary sizes, graded mask values, freeform or noise holes
        let (w, h) = (rng.random_range(8..=96u32), rng.random_range(8..=96u32));
        let image = RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
        let mask = if i % 2 == 0 {
            let m = generate_freeform_mask(i, &MaskConfig::default(), 64).unwrap().0.to_gray8();
            image::imageops::resize(&m, w, h, image::imageops::FilterType::Nearest)
        } else {
            let p = rng.random_range(0.05..0.6);
            GrayImage::from_fn(w, h, |_, _| Luma([if rng.random_bool(p) { rng.random_range(128..=255) } else { rng.random_range(0..128) }]))
        };
        let out = model.inpaint(&image, &mask, None, i).unwrap().image;
        for (x, y, p) in out.enumerate_pixels() {
            if mask.get_pixel(x, y)[0] < 128 {
                service_bad += usize::from(p != image.get_pixel(x, y));
            } else {
                changed_holes += usize::from(p != image.get_pixel(x, y));
            }
        }

        // float route used in training and evaluation
        let side = rng.random_range(4..=40usize);
        let n = 3 * side * side;
        let original = Image::new(3, side, side, (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap();
        let raw = Image::new(3, side, side, (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap();
        let holes: Vec<f32> = (0..side * side).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let m = Mask(Plane::new(side, side, holes.clone()).unwrap());
        let c = composite(&raw, &original, &m).unwrap();
        for (k, (&got, &orig)) in c.data.iter().zip(&original.data).enumerate() {
            if holes[k % (side * side)] == 0.0 && got.to_bits() != orig.to_bits() {
                tensor_bad += 1;
            }
        }
    }
    let pass = service_bad == 0 && tensor_bad == 0 && changed_holes > 0;
    outcome(
        name,
        pass,
        format!("8-bit path: {service_bad} unmasked pixels changed ({changed_holes} hole pixels filled); float path: {tensor_bad} changed"),
    )
}

// ---------------------------------------------------------------- determinism

fn train_cli(out: &Path) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_fipoly"))
        .args(["--seed", "7", "--threads", "1", "train", "--out"])
        .arg(out)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    status.success()
}

fn determinism() -> Outcome {
    let name = "Determinism (two `train --seed 7 --threads 1` runs; checkpoint round trip)";
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !train_cli(&a) || !train_cli(&b) {
        return outcome(name, false, "train command failed");
    }
    let (ma, mb) = (RunManifest::load(&a.join(MANIFEST_FILE)).unwrap(), RunManifest::load(&b.join(MANIFEST_FILE)).unwrap());
    let manifests_equal = ma.without_timestamps() == mb.without_timestamps();
    let bytes_equal = std::fs::read(a.join(CHECKPOINT_FILE)).unwrap() == std::fs::read(b.join(CHECKPOINT_FILE)).unwrap();

    // reload the CLI checkpoint and redo the manifest's evaluation
    let (state, _) = load_checkpoint(&a.join(CHECKPOINT_FILE)).unwrap();
    let cfg = state.config.clone();
    let images = cfg.dataset.load(cfg.generator.image_side, cfg.seed).unwrap();
    let n = images.len().min(16);
    let reloaded = evaluate(&state, &images, n, cfg.seed, &cfg.example_config()).unwrap();
    let cli_round_trip = reloaded == ma.final_metrics;

    // in memory vs saved and loaded: identical raw outputs, bit for bit
    let mini = TrainConfig {
        seed: 3,
        max_steps: Some(3),
        batch_size: 2,
        generator: GeneratorConfig { image_side: 32, ..GeneratorConfig::miniature() },
        discriminator: DiscriminatorConfig::miniature(),
        dataset: DatasetSource::Synthetic(6),
        ..Default::default()
    };
    let imgs = mini.dataset.load(32, 3).unwrap();
    let mut live = TrainState::new(mini.clone()).unwrap();
    live.fit(&imgs, |_, _| Ok(())).unwrap();
    let path = dir.path().join("mini.fipg");
    save_checkpoint(&live, &path).unwrap();
    let (loaded, _) = load_checkpoint(&path).unwrap();
    let ex = evaluation_examples(&imgs, 6, 1, &mini.example_config()).unwrap();
    let refs: Vec<&GeneratorInputBundle> = ex.iter().map(|e| &e.bundle).collect();
    let bits = |imgs: Vec<Image>| imgs.into_iter().flat_map(|i| i.data.into_iter().map(f32::to_bits)).collect::<Vec<_>>();
    let outputs_equal = bits(live.generator.infer(&refs).unwrap()) == bits(loaded.generator.infer(&refs).unwrap());
    let reports_equal = evaluate(&live, &imgs, 6, 1, &mini.example_config()).unwrap()
        == evaluate(&loaded, &imgs, 6, 1, &mini.example_config()).unwrap();

    let pass = manifests_equal && bytes_equal && cli_round_trip && outputs_equal && reports_equal;
    outcome(
        name,
        pass,
        format!(
            "manifests equal (timestamps aside): {manifests_equal}, checkpoints byte-equal: {bytes_equal}, \
             reloaded eval matches manifest: {cli_round_trip}, reloaded outputs bit-equal: {outputs_equal}, \
             reports equal: {reports_equal}"
        ),
    )
}

// ---------------------------------------------------------------- overfit

fn overfit_run() -> Outcome {
    let name = "Overfit (8 faces, side 64, 500 steps, default config: identity L1 < 0.08, < 15 min)";
    let cfg = TrainConfig { max_steps: Some(500), epochs: usize::MAX, dataset: DatasetSource::Synthetic(8), ..Default::default() };
    let images = cfg.dataset.load(cfg.generator.image_side, cfg.seed).unwrap();
    let mut state = TrainState::new(cfg.clone()).unwrap();
    let start = Instant::now();
    let history = state.fit(&images, |_, _| Ok(())).unwrap();
    let elapsed = start.elapsed();
    let examples = evaluation_examples(&images, 8, cfg.seed, &cfg.example_config()).unwrap();
    let l1 = identity_l1(&state, &examples).unwrap();
    let last = history.last().map(|l| l.identity_l1).unwrap_or(f32::NAN);
    let pass = state.step == 500 && l1 < 0.08 && elapsed < Duration::from_secs(15 * 60);
    outcome(
        name,
        pass,
        format!(
            "{} steps in {:.1} min, identity L1 {l1:.4} (last training batch {last:.4})",
            state.step,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

// ---------------------------------------------------------------- ablation

/// Held-out faces start far past the training seeds.
const HELD_OUT_BASE: u64 = 1 << 32;

fn reduced(ablate: bool) -> TrainConfig {
    let b = 16;
    TrainConfig {
        max_steps: Some(2000),
        epochs: usize::MAX,
        dataset: DatasetSource::Synthetic(256),
        generator: GeneratorConfig {
            base_channels: b,
            channels: vec![b, 2 * b, 4 * b, 4 * b, 4 * b],
            cond_features: b,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig { channels: vec![b, 2 * b, 4 * b, 8 * b], ..Default::default() },
        ablate_condition: ablate,
        ..Default::default()
    }
}

fn conditioning_ablation() -> Outcome {
    let name = "Conditioning ablation (2000 steps, 256 faces, 64 held out: SSIM gain >= 0.02)";
    let train = reduced(false).dataset.load(64, 0).unwrap();
    let held_out = DatasetSource::Synthetic(64).load(64, HELD_OUT_BASE).unwrap();
    let mut scores = Vec::new();
    for ablate in [false, true] {
        let cfg = reduced(ablate);
        let mut state = TrainState::new(cfg.clone()).unwrap();
        state.fit(&train, |_, _| Ok(())).unwrap();
        scores.push(evaluate(&state, &held_out, 64, 0, &cfg.example_config()).unwrap());
    }
    let gain = scores[0].ssim - scores[1].ssim;
    outcome(
        name,
        gain >= 0.02,
        format!("conditioned ssim {:.4}, ablated ssim {:.4}, gain {gain:.4}", scores[0].ssim, scores[1].ssim),
    )
}

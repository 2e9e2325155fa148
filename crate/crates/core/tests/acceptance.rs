//! One test per acceptance criterion; each writes a PASS/FAIL line to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use mvfcnn::arch::{build_mini_fcn, build_mini_fcn_with, load_checkpoint, promote, save_checkpoint, FcnConfig, FcnVariant, ForwardMode, Network};
use mvfcnn::cli::{self, EvaluationReport};
use mvfcnn::imgdata::{augment_rotations, compute_patch_grid, connected_components, Manifest, Raster, Split};
use mvfcnn::metrics::{confusion_from_labels, fw_iu, mean_accuracy, mean_iu, object_report, pixel_accuracy};
use mvfcnn::nn::conv::{conv2d_backward, conv2d_forward, ConvParams};
use mvfcnn::nn::fuse::{skip_fuse, skip_fuse_backward};
use mvfcnn::nn::gradcheck::gradient_error;
use mvfcnn::nn::linear::{fc_backward, fc_forward, FcParams};
use mvfcnn::nn::loss::{softmax_cross_entropy, Reduction};
use mvfcnn::nn::pool::{maxpool_backward, maxpool_forward};
use mvfcnn::nn::relu::{relu, relu_backward};
use mvfcnn::nn::upsample::{upsample_backward, upsample_forward, UpsampleParams};
use mvfcnn::pipeline::dataprep::balanced_patches;
use mvfcnn::pipeline::{max_vote_objects, segment_image};
use mvfcnn::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} [{name}]: {verdict} ({detail})");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn criterion_01_patch_arithmetic() {
    let t = Instant::now();
    let coarse = compute_patch_grid(7000, 8000, (1000, 1000), (1000, 1000)).unwrap().origins.len();
    let fine = compute_patch_grid(7000, 8000, (1000, 1000), (100, 100)).unwrap().origins.len();
    let secs = t.elapsed().as_secs_f64();
    report(
        1,
        "patch arithmetic",
        coarse == 56 && fine == 4331 && secs < 1.0,
        &format!("stride 1000 -> {coarse}, stride 100 -> {fine}, {secs:.3} s"),
    );
}

#[test]
fn criterion_02_object_table_arithmetic() {
    let t = Instant::now();
    // True class -> predicted counts of the reference object table.
    let by_truth = [[1190, 24, 39, 0], [0, 268, 6, 0], [11, 0, 325, 9], [0, 0, 16, 317]];
    let mut pairs = Vec::new();
    for (truth, row) in by_truth.iter().enumerate() {
        for (pred, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((truth, Some(pred)), n));
        }
    }
    let names = ["martensite", "tempered martensite", "bainite", "pearlite"].map(String::from).to_vec();
    let r = object_report(&pairs, names).unwrap();
    let values = [
        (100.0 * r.recall[0].unwrap(), 94.97),
        (100.0 * r.precision[0].unwrap(), 99.08),
        (100.0 * r.recall[1].unwrap(), 97.81),
        (100.0 * r.accuracy_excluding_not_segmented, 95.23),
    ];
    let ok = values.iter().all(|(got, want)| (got - want).abs() <= 0.01);
    let secs = t.elapsed().as_secs_f64();
    let detail = values.iter().map(|(g, _)| format!("{g:.4}")).collect::<Vec<_>>().join(", ");
    report(2, "object table arithmetic", ok && secs < 1.0, &format!("{detail}; {secs:.3} s"));
}

#[test]
fn criterion_03_gradient_suite() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0.0f64; 7];
    for _ in 0..20 {
        // Convolution: input, weights and bias.
        let (n, c, k) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let ks = rng.random_range(1..4);
        let (h, w) = (rng.random_range(4..8), rng.random_range(4..8));
        let x = random(&mut rng, Shape::new(n, c, h, w));
        let w = random(&mut rng, Shape::new(k, c, ks, ks));
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = ConvParams::new(w.clone(), b.clone(), rng.random_range(1..3), rng.random_range(0..2)).unwrap();
        let r = random(&mut rng, conv2d_forward(&x, &p).unwrap().shape());
        let g = conv2d_backward(&x, &p, &r).unwrap();
        let e_x = gradient_error(&x, &g.input, |x| dot(&conv2d_forward(x, &p).unwrap(), &r));
        let e_w = gradient_error(&w, &g.weights, |w| {
            dot(&conv2d_forward(&x, &ConvParams::new(w.clone(), b.clone(), p.stride, p.padding).unwrap()).unwrap(), &r)
        });
        let bt = Tensor::from_vec(Shape::new(1, k, 1, 1), b.clone()).unwrap();
        let gb = Tensor::from_vec(Shape::new(1, k, 1, 1), g.bias.clone()).unwrap();
        let e_b = gradient_error(&bt, &gb, |b| {
            dot(&conv2d_forward(&x, &ConvParams::new(w.clone(), b.data().to_vec(), p.stride, p.padding).unwrap()).unwrap(), &r)
        });
        worst[0] = worst[0].max(e_x).max(e_w).max(e_b);

        // Max pooling.
        let x = random(&mut rng, Shape::new(1, 2, 6, 6));
        let (y, idx) = maxpool_forward(&x, (2, 2), 2).unwrap();
        let r = random(&mut rng, y.shape());
        let gx = maxpool_backward(&idx, &r).unwrap();
        worst[1] = worst[1].max(gradient_error(&x, &gx, |x| dot(&maxpool_forward(x, (2, 2), 2).unwrap().0, &r)));

        // ReLU, away from the kink.
        let x = Tensor::from_fn(Shape::new(1, 2, 5, 5), |_, _, _, _| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        });
        let r = random(&mut rng, x.shape());
        let gx = relu_backward(&x, &r).unwrap();
        worst[2] = worst[2].max(gradient_error(&x, &gx, |x| dot(&relu(x), &r)));

        // Fully connected: input, weights, bias.
        let (din, dout) = (rng.random_range(2..10), rng.random_range(1..6));
        let xv = random(&mut rng, Shape::new(1, din, 1, 1));
        let w = random(&mut rng, Shape::new(dout, din, 1, 1));
        let b: Vec<f64> = (0..dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = FcParams::new(w.clone(), b.clone()).unwrap();
        let r: Vec<f64> = (0..dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = |y: Vec<f64>| y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let g = fc_backward(xv.data(), &p, &r).unwrap();
        let e_x = gradient_error(&xv, &Tensor::from_vec(xv.shape(), g.input.data().to_vec()).unwrap(), |x| {
            obj(fc_forward(x.data(), &p).unwrap())
        });
        let e_w = gradient_error(&w, &g.weights, |w| obj(fc_forward(xv.data(), &FcParams::new(w.clone(), b.clone()).unwrap()).unwrap()));
        worst[3] = worst[3].max(e_x).max(e_w);

        // Upsampling with a trainable kernel.
        let f = rng.random_range(1..4);
        let ch = rng.random_range(1..3);
        let kernel = random(&mut rng, Shape::new(ch, 1, 2 * f, 2 * f));
        let p = UpsampleParams { factor: f, kernel: kernel.clone(), trainable: true };
        let (h, w) = (rng.random_range(2..5), rng.random_range(2..5));
        let x = random(&mut rng, Shape::new(1, ch, h, w));
        let r = random(&mut rng, upsample_forward(&x, &p).unwrap().shape());
        let g = upsample_backward(&x, &p, &r).unwrap();
        let e_x = gradient_error(&x, &g.input, |x| dot(&upsample_forward(x, &p).unwrap(), &r));
        let e_k = gradient_error(&kernel, &g.kernel, |k| {
            dot(&upsample_forward(&x, &UpsampleParams { factor: f, kernel: k.clone(), trainable: true }).unwrap(), &r)
        });
        worst[4] = worst[4].max(e_x).max(e_k);

        // Skip fusion, both branches.
        let a = random(&mut rng, Shape::new(1, 3, 4, 4));
        let b = random(&mut rng, a.shape());
        let r = random(&mut rng, a.shape());
        let (ga, gb) = skip_fuse_backward(&r);
        let e_a = gradient_error(&a, &ga, |a| dot(&skip_fuse(a, &b).unwrap(), &r));
        let e_b = gradient_error(&b, &gb, |b| dot(&skip_fuse(&a, b).unwrap(), &r));
        worst[5] = worst[5].max(e_a).max(e_b);

        // Softmax with cross-entropy.
        let ncl = rng.random_range(2..6);
        let z = random(&mut rng, Shape::new(2, ncl, 3, 3));
        let labels: Vec<u8> = (0..18).map(|_| rng.random_range(0..ncl as u8)).collect();
        let ce = softmax_cross_entropy(&z, &labels, Reduction::Mean).unwrap();
        worst[6] = worst[6].max(gradient_error(&z, &ce.grad_logits, |z| {
            softmax_cross_entropy(z, &labels, Reduction::Mean).unwrap().loss
        }));
    }
    let secs = t.elapsed().as_secs_f64();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let names = ["conv", "pool", "relu", "fc", "upsample", "skip-fuse", "softmax-ce"];
    let detail = names.iter().zip(&worst).map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    report(3, "gradient suite", max < 1e-4 && secs < 30.0, &format!("20 instances each; {detail}; {secs:.2} s"));
}

#[test]
fn criterion_04_metric_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 5;
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        // Skewed draws leave some classes absent in some cases.
        let limit = 2 + case % 4;
        let truth = Raster::from_fn(16, 16, |_, _| rng.random_range(0..limit as u8));
        let pred = Raster::from_fn(16, 16, |_, _| rng.random_range(0..n as u8));
        let cm = confusion_from_labels(&truth, &pred, n).unwrap();
        let (mut t_i, mut p_i, mut n_ii) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (&a, &b) in truth.data.iter().zip(&pred.data) {
            t_i[a as usize] += 1.0;
            p_i[b as usize] += 1.0;
            if a == b {
                n_ii[a as usize] += 1.0;
            }
        }
        let present: Vec<usize> = (0..n).filter(|&i| t_i[i] > 0.0).collect();
        let total: f64 = t_i.iter().sum();
        let iu = |i: usize| n_ii[i] / (t_i[i] + p_i[i] - n_ii[i]);
        let oracle = [
            n_ii.iter().sum::<f64>() / total,
            present.iter().map(|&i| n_ii[i] / t_i[i]).sum::<f64>() / present.len() as f64,
            present.iter().map(|&i| iu(i)).sum::<f64>() / present.len() as f64,
            present.iter().map(|&i| t_i[i] * iu(i)).sum::<f64>() / total,
        ];
        let got = [
            pixel_accuracy(&cm).unwrap(),
            mean_accuracy(&cm).unwrap(),
            mean_iu(&cm).unwrap(),
            fw_iu(&cm).unwrap(),
        ];
        for (g, o) in got.iter().zip(&oracle) {
            worst = worst.max((g - o).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        4,
        "metric oracle equivalence",
        worst <= 1e-12 && secs < 5.0,
        &format!("200 pairs, max deviation {worst:.1e}, {secs:.3} s"),
    );
}

#[test]
fn criterion_05_stitch_and_vote() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = FcnConfig { stage_widths: [3, 4, 4, 5, 5], head_width: 6, dropout: 0.5 };
    let mut net = Network::<f64>::init(build_mini_fcn_with(FcnVariant::Fcn8s, 5, &cfg), 5).unwrap();
    for (name, p) in net.params.iter_mut() {
        if name.starts_with("score") {
            *p = random(&mut rng, p.shape());
        }
    }
    let img = Raster::from_fn(128, 192, |_, _| rng.random::<u8>());
    let whole = segment_image(&net, &img, 64, 64).unwrap().label_map;
    let mut placed = Raster::filled(128, 192, 255u8);
    for (top, left) in compute_patch_grid(128, 192, (64, 64), (64, 64)).unwrap().origins {
        let own = segment_image(&net, &img.window(top, left, 64, 64).unwrap(), 64, 64).unwrap().label_map;
        for i in 0..64 {
            for j in 0..64 {
                placed.set(top + i, left + j, own.get(i, j));
            }
        }
    }
    let partition_ok = placed == whole;

    let mut vote_ok = true;
    for _ in 0..100 {
        let labels = Raster::from_fn(20, 20, |_, _| rng.random_range(0..5u8));
        let mask = Raster::from_fn(20, 20, |_, _| rng.random_bool(0.55));
        let regions = connected_components(&mask, 1);
        let got = max_vote_objects(&labels, &regions, 5).unwrap();
        for (r, o) in regions.iter().zip(&got) {
            let mut tally = [0usize; 5];
            for &(i, j) in &r.pixels {
                tally[labels.get(i, j) as usize] += 1;
            }
            let mut best: Option<usize> = None;
            for k in 1..5 {
                if tally[k] > 0 && best.is_none_or(|b| tally[k] > tally[b]) {
                    best = Some(k);
                }
            }
            vote_ok &= o.voted == best.map(|k| k as u8) && o.votes == tally.to_vec();
        }
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        5,
        "stitch and vote correctness",
        partition_ok && vote_ok && secs < 5.0,
        &format!("partition bit-exact {partition_ok}, tally oracle on 100 cases {vote_ok}, {secs:.2} s"),
    );
}

#[test]
fn criterion_06_staged_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let parent = Network::<f64>::init(build_mini_fcn(FcnVariant::Fcn32s, 5), 6).unwrap();
    let mut ok = true;
    for side in [64, 96] {
        let x = random(&mut rng, Shape::new(1, 1, side, side));
        let base = parent.forward(&x, ForwardMode::Eval).unwrap();
        for v in [FcnVariant::Fcn16s, FcnVariant::Fcn8s] {
            ok &= promote(&parent, v).unwrap().forward(&x, ForwardMode::Eval).unwrap() == base;
        }
    }
    report(6, "staged-training identity", ok, "fcn16s and fcn8s bit-equal to fcn32s at 64 and 96 px");
}

#[test]
fn criterion_09_checkpoint_round_trip() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let net = Network::<f32>::init(build_mini_fcn(FcnVariant::Fcn8s, 5), 9).unwrap();
    save_checkpoint(&net, None, &path).unwrap();
    let back: Network<f32> = load_checkpoint(&path).unwrap().network();
    let exact = back.spec == net.spec
        && net.params.iter().all(|(name, p)| {
            let q = back.params.get(name).unwrap();
            p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        });
    let bytes = std::fs::read(&path).unwrap();
    let mut rejected = 0;
    let corrupt = |mutate: &dyn Fn(&mut Vec<u8>)| {
        let mut b = bytes.clone();
        mutate(&mut b);
        std::fs::write(dir.path().join("bad.ckpt"), &b).unwrap();
        load_checkpoint(&dir.path().join("bad.ckpt")).is_err()
    };
    let cases: [fn(&mut Vec<u8>); 4] = [
        |b| b[0] ^= 0xff,
        |b| {
            let last = b.len() - 1;
            b[last] ^= 0x01
        },
        |b| b.truncate(b.len() / 2),
        |b| b[14] ^= 0x20,
    ];
    for case in cases {
        rejected += corrupt(&case) as usize;
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        9,
        "checkpoint round trip",
        exact && rejected == 4 && secs < 1.0,
        &format!("bit-exact {exact}, {rejected}/4 corruptions rejected, {secs:.3} s"),
    );
}

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/benchmark_report.json");

struct Benchmark {
    root: PathBuf,
    train_secs: f64,
    report: EvaluationReport,
    report_bytes: Vec<u8>,
    coarse: EvaluationReport,
}

fn cli_ok(args: &[&str]) {
    let mut argv = vec!["mvfcnn"];
    argv.extend_from_slice(args);
    assert_eq!(cli::run(argv.clone()), 0, "command failed: {argv:?}");
}

/// synth, train, segment, classify, evaluate with default settings; the
/// coarsest stage is also segmented and evaluated for comparison.
fn scripted_run(root: &Path, threads: usize, augment: bool) -> Benchmark {
    let _ = std::fs::remove_dir_all(root);
    std::fs::create_dir_all(root).unwrap();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let threads = threads.to_string();
    let config = p("config.json");
    std::fs::write(&config, format!("{{\"augment\": {augment}}}")).unwrap();
    let manifest = p("data/manifest.json");
    let common = |out: &str| vec!["--config".to_string(), config.clone(), "--threads".into(), threads.clone(), "--out".into(), p(out)];
    let run = |cmd: &str, out: &str, extra: &[String]| {
        let mut args: Vec<String> = vec![cmd.to_string()];
        args.extend(common(out));
        args.extend_from_slice(extra);
        cli_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    };
    let m = |rest: &[&str]| {
        let mut v = vec!["--manifest".to_string(), manifest.clone()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    };
    run("synth", "data", &[]);
    let t = Instant::now();
    run("train", "train", &m(&[]));
    let train_secs = t.elapsed().as_secs_f64();
    run("segment", "seg", &m(&["--checkpoint", &p("train/model.ckpt")]));
    run("classify", "cls", &m(&["--predictions", &p("seg")]));
    run("evaluate", "eval", &m(&["--predictions", &p("cls")]));
    run("segment", "seg32", &m(&["--checkpoint", &p("train/fcn32s.ckpt")]));
    run("evaluate", "eval32", &m(&["--predictions", &p("seg32")]));
    let report_bytes = std::fs::read(root.join("eval/report.json")).unwrap();
    let coarse = serde_json::from_slice(&std::fs::read(root.join("eval32/report.json")).unwrap()).unwrap();
    Benchmark {
        root: root.to_path_buf(),
        train_secs,
        report: serde_json::from_slice(&report_bytes).unwrap(),
        report_bytes,
        coarse,
    }
}

fn bench_root(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn baseline() -> &'static Benchmark {
    static RUN: OnceLock<Benchmark> = OnceLock::new();
    RUN.get_or_init(|| scripted_run(&bench_root("threads1"), 1, false))
}

#[test]
fn criterion_07_end_to_end_benchmark() {
    let b = baseline();
    let golden = std::fs::read(GOLDEN).unwrap_or_default();
    let obj = &b.report.objects;
    let img = &b.report.images;
    let mean_iu = |r: &EvaluationReport| r.pixel.as_ref().map_or(0.0, |p| p.mean_iu);
    let pass = b.train_secs <= 900.0
        && obj.accuracy_counting_not_segmented >= 0.90
        && img.correct == 10
        && img.total == 10
        && b.report_bytes == golden;
    report(
        7,
        "end-to-end synthetic benchmark",
        pass,
        &format!(
            "object accuracy {:.4} ({} not segmented), images {}/{}, training {:.0} s, mean IU fcn8s {:.4} vs fcn32s {:.4}, golden match {}",
            obj.accuracy_counting_not_segmented,
            obj.not_segmented,
            img.correct,
            img.total,
            b.train_secs,
            mean_iu(&b.report),
            mean_iu(&b.coarse),
            b.report_bytes == golden
        ),
    );
}

#[test]
fn criterion_08_augmentation() {
    let b = baseline();
    let manifest = Manifest::read(&b.root.join("data/manifest.json")).unwrap();
    let samples: Vec<_> = manifest.split(Split::Train).map(|e| manifest.load_sample(e).unwrap()).collect();
    let patches = balanced_patches(&samples, 64, 100, 8).unwrap();
    let augmented = augment_rotations(&patches).unwrap();
    let hist = |labels: &Raster<u8>| {
        let mut h = [0usize; 5];
        labels.data.iter().for_each(|&l| h[l as usize] += 1);
        h
    };
    let preserved = augmented.len() == 4 * patches.len()
        && patches
            .iter()
            .enumerate()
            .all(|(k, p)| augmented[4 * k..4 * k + 4].iter().all(|q| hist(&q.labels) == hist(&p.labels)));
    let aug = scripted_run(&bench_root("augmented"), 1, true);
    let base = b.report.objects.accuracy_counting_not_segmented;
    let with = aug.report.objects.accuracy_counting_not_segmented;
    report(
        8,
        "rotation augmentation",
        preserved,
        &format!(
            "{} -> {} patches, class pixel counts preserved {preserved}; object accuracy {base:.4} -> {with:.4}, delta {:+.4}",
            patches.len(),
            augmented.len(),
            with - base
        ),
    );
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_thread_determinism() {
    let one = baseline();
    let four = scripted_run(&bench_root("threads4"), 4, false);
    let files = files_under(&one.root);
    let compared: Vec<&PathBuf> = files.iter().filter(|f| f.file_name().unwrap() != "run.json").collect();
    let differing: Vec<String> = compared
        .iter()
        .filter(|f| std::fs::read(one.root.join(f)).unwrap() != std::fs::read(four.root.join(f)).unwrap_or_default())
        .map(|f| f.display().to_string())
        .collect();
    let same_set = files == files_under(&four.root);
    report(
        10,
        "thread-count determinism",
        same_set && differing.is_empty(),
        &format!("{} files compared, differing: {:?}", compared.len(), differing),
    );
}

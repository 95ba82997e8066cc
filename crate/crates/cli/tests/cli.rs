use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxsyn::codecs::{self, FlowField, Frame};
use ctxsyn::evaluation::CSV_HEADER;
use ctxsyn::synthesis::{GridNet, GridNetConfig, Model};
use ctxsyn::training::synthetic::{self, SceneConfig};
use tempfile::TempDir;

fn ctxsyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxsyn")).args(args).output().expect("binary runs")
}

fn ctxsyn_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxsyn")).args(args).env(key, value).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny() -> GridNetConfig {
    GridNetConfig { channels: vec![4, 8, 12], ..GridNetConfig::default() }
}

/// A network that outputs its first warped image: every PReLU is linear,
/// the head and tail copy the first three channels and all other weights
/// are zero, so each lateral block reduces to its skip connection.
fn identity_model() -> Model {
    let cfg = tiny();
    let mut grid = GridNet::<f32>::zeroed(cfg.clone()).unwrap();
    let centre = |w: &mut [f32], cin: usize, c: usize| w[((c * cin + c) * 3 + 1) * 3 + 1] = 1.0;
    for (name, cin) in [("head.0.weight", cfg.in_channels), ("head.2.weight", 4), ("tail.1.weight", 4)] {
        let w = grid.params.by_name_mut(name).unwrap().data_mut();
        (0..3).for_each(|c| centre(w, cin, c));
    }
    for name in ["head.1.slope", "tail.0.slope"] {
        grid.params.by_name_mut(name).unwrap().data_mut().fill(1.0);
    }
    Model { grid, context: Model::new(cfg, 0).unwrap().context }
}

fn save_model(dir: &Path, name: &str, m: &Model) -> PathBuf {
    let p = dir.join(name);
    m.save(&p).unwrap();
    p
}

fn save_frame(dir: &Path, name: &str, f: &Frame) -> PathBuf {
    let p = dir.join(name);
    codecs::save_image(&p, f).unwrap();
    p
}

fn save_flow(dir: &Path, name: &str, f: &FlowField) -> PathBuf {
    let p = dir.join(name);
    codecs::save_flo(&p, f).unwrap();
    p
}

/// Renders the two endpoint frames of a generated scene, quantized to 8 bits.
fn scene_pair(cfg: &SceneConfig, seed: u64) -> (synthetic::Scene, Frame, Frame) {
    let scene = synthetic::scenes(cfg, 1, seed).unwrap().remove(0);
    let q = |f: Frame| codecs::read_image(&codecs::write_image(&f).unwrap()).unwrap();
    let (a, b) = (q(scene.render(0.0)), q(scene.render(1.0)));
    (scene, a, b)
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = walk(dir);
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    std::fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p)
            } else {
                vec![p]
            }
        })
        .collect()
}

#[test]
fn endpoint_with_identity_model_reproduces_first_frame() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (_, a, b) = scene_pair(&SceneConfig::default(), 3);
    let (first, second) = (save_frame(d, "a.ppm", &a), save_frame(d, "b.ppm", &b));
    let zero = save_flow(d, "zero.flo", &FlowField::zeros(a.width(), a.height()));
    let weights = save_model(d, "id.ctxc", &identity_model());
    let out = d.join("out.ppm");
    ok(&ctxsyn(&[
        "interpolate", "--first", s(&first), "--second", s(&second), "--t", "0", "--out", s(&out),
        "--weights", s(&weights), "--flow-fwd", s(&zero), "--flow-bwd", s(&zero),
    ]));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&first).unwrap());
}

/// Centroid along x of pixels that stand out from the scene background,
/// skipping zero-filled holes.
fn object_x(f: &Frame, bg: &Frame) -> f64 {
    let w = f.width();
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..f.pixels() {
        let px: Vec<f32> = (0..3).map(|c| f.plane(c)[i]).collect();
        let diff: f32 = (0..3).map(|c| (px[c] - bg.plane(c)[i]).abs()).sum::<f32>() / 3.0;
        if diff > 0.07 && px.iter().any(|&v| v > 0.05) {
            sum += (i % w) as f64;
            n += 1;
        }
    }
    assert!(n > 0, "object not found");
    sum / n as f64
}

#[test]
fn t_sweep_moves_the_object_monotonically() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = SceneConfig { min_squares: 1, max_squares: 1, max_gain_drift: 0.0, ..SceneConfig::default() };
    let (scene, a, b) = (0..)
        .map(|seed| scene_pair(&cfg, seed))
        .find(|(sc, _, _)| sc.squares[0].dx.abs() >= 4)
        .unwrap();
    let (first, second) = (save_frame(d, "a.ppm", &a), save_frame(d, "b.ppm", &b));
    let fwd = save_flow(d, "fwd.flo", &scene.flow(0.0, 1.0));
    let bwd = save_flow(d, "bwd.flo", &scene.flow(1.0, 0.0));
    let weights = save_model(d, "id.ctxc", &identity_model());
    let mut xs = Vec::new();
    for t in ["0.2", "0.4", "0.6", "0.8"] {
        let out = d.join(format!("t{t}.ppm"));
        ok(&ctxsyn(&[
            "interpolate", "--first", s(&first), "--second", s(&second), "--t", t, "--out", s(&out),
            "--weights", s(&weights), "--flow-fwd", s(&fwd), "--flow-bwd", s(&bwd), "--emit-warped",
        ]));
        for extra in ["warp1", "warp2", "weight1", "weight2"] {
            assert!(d.join(format!("t{t}.{extra}.ppm")).exists(), "{extra} missing");
        }
        let bg = scene.render_background(t.parse().unwrap());
        xs.push(object_x(&codecs::load_image(&out).unwrap(), &bg));
    }
    let sign = scene.squares[0].dx.signum() as f64;
    assert!(xs.windows(2).all(|w| (w[1] - w[0]) * sign > 0.0), "{xs:?}");
}

#[test]
fn missing_weights_is_an_io_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (_, a, b) = scene_pair(&SceneConfig::default(), 1);
    let (first, second) = (save_frame(d, "a.ppm", &a), save_frame(d, "b.ppm", &b));
    let missing = d.join("nowhere.ctxc");
    let out = ctxsyn(&[
        "interpolate", "--first", s(&first), "--second", s(&second), "--out", s(&d.join("o.ppm")), "--weights", s(&missing),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn bad_usage_exits_one() {
    assert_eq!(ctxsyn(&["interpolate", "--bogus"]).status.code(), Some(1));
    assert_eq!(ctxsyn(&[]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (_, a, b) = scene_pair(&SceneConfig::default(), 1);
    let (first, second) = (save_frame(d, "a.ppm", &a), save_frame(d, "b.ppm", &b));
    let weights = save_model(d, "id.ctxc", &identity_model());
    let out = ctxsyn(&[
        "interpolate", "--first", s(&first), "--second", s(&second), "--t", "1.5", "--out", s(&d.join("o.ppm")),
        "--weights", s(&weights),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("o.ppm").exists());
    assert_eq!(ctxsyn_env(&["flow", "--help"], "CTXSYN_THREADS", "0").status.code(), Some(0));
    let out = ctxsyn_env(
        &["flow", "--first", s(&first), "--second", s(&second), "--out-fwd", "x", "--out-bwd", "y"],
        "CTXSYN_THREADS",
        "0",
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flow_of_identical_frames_is_zero_and_shifts_are_antisymmetric() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (_, a, _) = scene_pair(&SceneConfig::default(), 5);
    let first = save_frame(d, "a.ppm", &a);
    let (fwd, bwd) = (d.join("f.flo"), d.join("b.flo"));
    ok(&ctxsyn(&["flow", "--first", s(&first), "--second", s(&first), "--out-fwd", s(&fwd), "--out-bwd", s(&bwd)]));
    for p in [&fwd, &bwd] {
        let f = codecs::load_flo(p).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&x| x == 0.0));
        assert_eq!(codecs::write_flo(&f).unwrap(), std::fs::read(p).unwrap());
    }

    // Two windows of one blurred noise image, offset so that i1(x) = i2(x + (3, -2)).
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut noise = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u64 << 24) as f32
    };
    let raw = Frame::from_fn(82, 82, |_, _, _| noise());
    let big = Frame::from_fn(80, 80, |c, y, x| {
        (0..3).flat_map(|dy| (0..3).map(move |dx| (dy, dx))).map(|(dy, dx)| raw.get(c, y + dy, x + dx)).sum::<f32>() / 9.0
    });
    let i1 = big.crop(8, 8, 64, 64).unwrap();
    let i2 = big.crop(5, 10, 64, 64).unwrap();
    let (p1, p2) = (save_frame(d, "s1.ppm", &i1), save_frame(d, "s2.ppm", &i2));
    ok(&ctxsyn(&["flow", "--first", s(&p1), "--second", s(&p2), "--out-fwd", s(&fwd), "--out-bwd", s(&bwd)]));
    let (f, b) = (codecs::load_flo(&fwd).unwrap(), codecs::load_flo(&bwd).unwrap());
    let median = |field: &FlowField, pick: fn(&FlowField) -> &[f32]| {
        let w = field.width();
        let mut v: Vec<f32> = pick(field)
            .iter()
            .enumerate()
            .filter(|(i, _)| (8..56).contains(&(i % w)) && (8..56).contains(&(i / w)))
            .map(|(_, &x)| x)
            .collect();
        v.sort_by(f32::total_cmp);
        v[v.len() / 2]
    };
    let (fu, fv) = (median(&f, FlowField::u), median(&f, FlowField::v));
    let (bu, bv) = (median(&b, FlowField::u), median(&b, FlowField::v));
    assert!((fu - 3.0).abs() < 0.5 && (fv + 2.0).abs() < 0.5, "forward median ({fu}, {fv})");
    assert!((fu + bu).abs() < 0.5 && (fv + bv).abs() < 0.5, "backward median ({bu}, {bv})");
}

fn train_args<'a>(out: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train", "--synthetic", "4", "--out", s(out), "--channels", "4,8,12", "--crop", "32", "--batch", "2", "--seed",
        "5",
    ];
    v.extend_from_slice(extra);
    v
}

fn csv_rows(p: &Path) -> Vec<(u64, f64)> {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,epoch,loss,wall_time"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn training_writes_checkpoint_log_and_manifest_reproducibly() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (a, b) = (d.join("a.ctxc"), d.join("b.ctxc"));
    ok(&ctxsyn(&train_args(&a, &["--max-iterations", "3"])));
    ok(&ctxsyn(&train_args(&b, &["--max-iterations", "3"])));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rows = csv_rows(&d.join("a.csv"));
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(rows.iter().all(|r| r.1.is_finite() && r.1 > 0.0));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("a.ctxc.manifest")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"]["Train"]["crop"], 32);
    assert!(Model::load(&a).is_ok());
    assert_eq!(files_in(d).len(), 6);
}

#[test]
fn resumed_training_continues_the_same_run() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (whole, half, rest) = (d.join("whole.ctxc"), d.join("half.ctxc"), d.join("rest.ctxc"));
    ok(&ctxsyn(&train_args(&whole, &["--max-iterations", "4"])));
    ok(&ctxsyn(&train_args(&half, &["--max-iterations", "2"])));
    std::fs::copy(d.join("half.csv"), d.join("rest.csv")).unwrap();
    ok(&ctxsyn(&train_args(&rest, &["--max-iterations", "4", "--resume", s(&half)])));
    assert_eq!(std::fs::read(&whole).unwrap(), std::fs::read(&rest).unwrap());
    let (a, b) = (csv_rows(&d.join("whole.csv")), csv_rows(&d.join("rest.csv")));
    assert_eq!(a.len(), 4);
    assert_eq!(b.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0, y.0);
        assert!((x.1 - y.1).abs() <= 1e-6 * x.1.abs(), "{x:?} vs {y:?}");
    }
}

#[test]
fn empty_dataset_exits_three() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(data.join("clip")).unwrap();
    let out = ctxsyn(&["train", "--data", s(&data), "--out", s(&dir.path().join("m.ctxc"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn training_reads_but_never_writes_the_dataset() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let clip = data.join("clip");
    std::fs::create_dir_all(&clip).unwrap();
    let scene = synthetic::scenes(&SceneConfig::default(), 1, 4).unwrap().remove(0);
    for (i, t) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        save_frame(&clip, &format!("{i:06}.ppm"), &scene.render(t));
    }
    let before = files_in(&data);
    let out = dir.path().join("m.ctxc");
    ok(&ctxsyn(&[
        "train", "--data", s(&data), "--out", s(&out), "--channels", "4,8,12", "--crop", "32", "--batch", "1",
        "--max-iterations", "1",
    ]));
    assert_eq!(files_in(&data), before);
    assert!(out.exists() && dir.path().join("m.csv").exists());
}

/// k examples whose three frames are the same image, with zero flows.
fn identical_pairs(root: &Path, k: usize) {
    for i in 0..k {
        let ex = root.join(format!("ex{i}"));
        std::fs::create_dir_all(&ex).unwrap();
        let (_, a, _) = scene_pair(&SceneConfig::default(), 20 + i as u64);
        for name in ["first.ppm", "second.ppm", "gt.ppm"] {
            save_frame(&ex, name, &a);
        }
        let zero = FlowField::zeros(a.width(), a.height());
        save_flow(&ex, "fwd.flo", &zero);
        save_flow(&ex, "bwd.flo", &zero);
    }
}

#[test]
fn eval_on_identical_pairs_scores_perfect_ssim() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let pairs = d.join("pairs");
    identical_pairs(&pairs, 2);
    let weights = save_model(d, "id.ctxc", &identity_model());
    let csv = d.join("scores.csv");
    let out = ctxsyn(&["eval", "--pairs", s(&pairs), "--weights", s(&weights), "--out-csv", s(&csv), "--with-baselines"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for (i, ex) in ["ex0", "ex1"].into_iter().enumerate() {
        let methods: Vec<&str> = rows[3 * i..3 * i + 3].iter().inspect(|r| assert_eq!(r[0], ex)).map(|r| r[1]).collect();
        assert_eq!(methods, ["model", "bidirectional-blend", "forward-blend"]);
    }
    for r in &rows {
        let ssim: f64 = r[3].parse().unwrap();
        assert!((ssim - 1.0).abs() < 1e-9, "{r:?}");
    }

    let plain = d.join("plain.csv");
    ok(&ctxsyn(&["eval", "--pairs", s(&pairs), "--weights", s(&weights), "--out-csv", s(&plain)]));
    assert_eq!(std::fs::read_to_string(&plain).unwrap().lines().count(), 3);
}

#[test]
fn rerun_from_manifest_is_bit_identical_and_detects_changed_inputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (_, a, b) = scene_pair(&SceneConfig::default(), 8);
    let (first, second) = (save_frame(d, "a.ppm", &a), save_frame(d, "b.ppm", &b));
    let weights = save_model(d, "m.ctxc", &Model::new(tiny(), 2).unwrap());
    let out = d.join("mid.ppm");
    let before = files_in(d);
    ok(&ctxsyn(&["interpolate", "--first", s(&first), "--second", s(&second), "--out", s(&out), "--weights", s(&weights)]));
    let manifest = d.join("mid.ppm.manifest");
    let mut expected = before.clone();
    expected.extend([manifest.clone(), out.clone()]);
    expected.sort();
    assert_eq!(files_in(d), expected);

    let original = std::fs::read(&out).unwrap();
    std::fs::remove_file(&out).unwrap();
    ok(&ctxsyn(&["rerun", s(&manifest)]));
    assert_eq!(std::fs::read(&out).unwrap(), original);

    let mut changed = b.clone();
    changed.data_mut()[0] = 1.0 - changed.data()[0];
    codecs::save_image(&second, &changed).unwrap();
    let res = ctxsyn(&["rerun", s(&manifest)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("changed"));
}

#[test]
fn thread_count_does_not_change_the_output() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (_, a, b) = scene_pair(&SceneConfig::default(), 12);
    let (first, second) = (save_frame(d, "a.ppm", &a), save_frame(d, "b.ppm", &b));
    let weights = save_model(d, "m.ctxc", &Model::new(tiny(), 4).unwrap());
    let mut outputs = Vec::new();
    for n in ["1", "4", "8"] {
        let out = d.join(format!("o{n}.ppm"));
        ok(&ctxsyn_env(
            &["interpolate", "--first", s(&first), "--second", s(&second), "--out", s(&out), "--weights", s(&weights)],
            "CTXSYN_THREADS",
            n,
        ));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert!(outputs.iter().all(|o| *o == outputs[0]));
}

#[test]
fn training_on_the_toy_set_beats_the_untrained_model() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let pairs = d.join("pairs");
    for (i, t) in synthetic::triplets(&SceneConfig::default(), 6, 9).unwrap().into_iter().enumerate() {
        let ex = pairs.join(format!("ex{i}"));
        std::fs::create_dir_all(&ex).unwrap();
        save_frame(&ex, "first.ppm", &t.first);
        save_frame(&ex, "second.ppm", &t.last);
        save_frame(&ex, "gt.ppm", &t.middle);
        let f = t.flows.unwrap();
        save_flow(&ex, "fwd.flo", &f.forward);
        save_flow(&ex, "bwd.flo", &f.backward);
    }
    let trained = d.join("trained.ctxc");
    ok(&ctxsyn(&[
        "train", "--synthetic", "6", "--seed", "9", "--out", s(&trained), "--channels", "8,16,24", "--crop", "64",
        "--batch", "1", "--max-iterations", "300", "--no-augment", "--lr", "0.002",
    ]));
    let untrained = save_model(d, "untrained.ctxc", &Model::new(GridNetConfig { channels: vec![8, 16, 24], ..tiny() }, 9).unwrap());
    let mean_psnr = |weights: &Path, csv: &str| -> f64 {
        let csv = d.join(csv);
        ok(&ctxsyn(&["eval", "--pairs", s(&pairs), "--weights", s(weights), "--out-csv", s(&csv)]));
        let rows: Vec<f64> =
            std::fs::read_to_string(&csv).unwrap().lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    let (before, after) = (mean_psnr(&untrained, "before.csv"), mean_psnr(&trained, "after.csv"));
    assert!(after > before + 10.0, "untrained {before:.2} dB, trained {after:.2} dB");
}

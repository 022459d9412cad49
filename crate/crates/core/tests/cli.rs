use std::path::Path;
use std::process::{Command, Output};

use curvelight::image_io;
use curvelight::net::{self, Model, NetConfig};
use curvelight::synth;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvelight"))
        .args(args)
        .env("CURVELIGHT_THREADS", "0")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn info_reports_parameters_and_flops() {
    let dir = tempfile::tempdir().unwrap();
    for (cfg, count) in [(NetConfig::plain(), "79416"), (NetConfig::separable(), "10561")] {
        let path = dir.path().join(format!("{}.zdce", cfg.variant));
        net::save(&Model::<f32>::build(cfg, 0).unwrap(), &path).unwrap();
        let o = cli(&["info", "--model", p(&path), "--flops", "1200x900"]);
        assert!(o.status.success());
        let text = stdout(&o);
        assert!(text.contains(&format!("parameters: {count}")), "{text}");
        assert!(text.contains("flops (1200x900)"), "{text}");
    }
    let o = cli(&["info", "--model", p(&dir.path().join("plain.zdce")), "--flops", "1200x900"]);
    assert!(stdout(&o).contains("85.59G"), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&["train", "--data", "x", "--out", "y", "--variant", "huge"]).status.code(), Some(2));
    assert_eq!(cli(&["bogus"]).status.code(), Some(2));
    assert_eq!(cli(&["info", "--model", "m", "--no-such-flag"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["ablate", "--grid", "7,32", "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.zdce");
    std::fs::write(&bad, b"NOPE\x01\0\0\0").unwrap();
    let o = cli(&["info", "--model", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a checkpoint"));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = dir.path().join("m.zdce");
    assert_eq!(cli(&["train", "--data", p(&empty), "--out", p(&out)]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_detects_injected_faults() {
    let o = cli(&["gradcheck", "--seed", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("composite_plain"));
    assert_eq!(cli(&["gradcheck", "--inject-wrong-sign"]).status.code(), Some(1));
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth::write_mixed_exposure_set(&data, 3, 16, 0).unwrap();
    let out = dir.path().join("m.zdce");
    let o = cli(&["train", "--data", p(&data), "--out", p(&out), "--variant", "dsc", "--epochs", "0", "--size", "16", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Model<f32> = net::load(&out).unwrap();
    assert_eq!(m, Model::build(NetConfig::separable(), 5).unwrap());
}

#[test]
fn short_training_run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth::write_mixed_exposure_set(&data, 5, 24, 1).unwrap();
    std::fs::write(data.join("broken.png"), b"garbage").unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "variant = dsc\nsize = 24\nbatch = 2\nepochs = 2\ne = 0.6\n").unwrap();
    let out = dir.path().join("m.zdce");
    let o = cli(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out), "--checkpoint-every", "1", "--lr", "1e-3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(dir.path().join("m.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("iter,")).count(), 4);
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch,")).count(), 2);
    assert!(dir.path().join("m.checkpoints/epoch_0002.zdce").is_file());
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.png"));
}

#[test]
fn enhance_with_identity_model_and_dump_maps() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = Model::<f32>::build(NetConfig::separable(), 1).unwrap();
    m.zero_head();
    let model = dir.path().join("zero.zdce");
    net::save(&m, &model).unwrap();
    let inputs = dir.path().join("in");
    synth::write_mixed_exposure_set(&inputs, 2, 36, 2).unwrap();
    let outputs = dir.path().join("out");
    let maps = dir.path().join("maps");
    let o = cli(&["enhance", "--model", p(&model), "--input", p(&inputs), "--output", p(&outputs), "--dump-maps", p(&maps)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["scene_000.png", "scene_001.png"] {
        let a = image_io::load(inputs.join(name)).unwrap();
        let b = image_io::load(outputs.join(name)).unwrap();
        let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(worst <= 1.0 / 255.0 + 1e-6, "{worst}");
    }
    assert!(maps.join("scene_000_iter1_r.png").is_file());

    let single = dir.path().join("one.png");
    for d in ["1", "12"] {
        let o = cli(&["enhance", "--model", p(&model), "--input", p(&inputs.join("scene_000.png")), "--output", p(&single), "--downsample", d]);
        assert!(o.status.success());
    }
    let tiny = dir.path().join("tiny.png");
    image_io::save(&synth::scene(8, 8, 0), &tiny).unwrap();
    let o = cli(&["enhance", "--model", p(&model), "--input", p(&tiny), "--output", p(&single)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("12x12"));
}

#[test]
fn eval_matches_by_file_name() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    synth::write_mixed_exposure_set(&pred, 5, 16, 3).unwrap();
    synth::write_mixed_exposure_set(&gt, 5, 16, 3).unwrap();
    let report = dir.path().join("r.csv");
    let o = cli(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&report)]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().last().unwrap(), "mean,inf,1,0");

    std::fs::remove_file(gt.join("scene_002.png")).unwrap();
    let o = cli(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&report)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("scene_002.png"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 1 + 4 + 1);

    let none = dir.path().join("none");
    std::fs::create_dir(&none).unwrap();
    assert_eq!(cli(&["eval", "--pred", p(&none), "--gt", p(&gt), "--out", p(&report)]).status.code(), Some(1));
}

#[test]
fn ablate_emits_one_row_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth::write_mixed_exposure_set(&data, 3, 16, 4).unwrap();
    let out = dir.path().join("ablation");
    let o = cli(&["ablate", "--grid", "7,32,8;7,32,1;3,8,4", "--data", p(&data), "--out", p(&out), "--size", "16", "--batch", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("l7-f32-n8,7,32,8,79416,"));
    let single: Model<f32> = net::load(out.join("l7-f32-n1.zdce")).unwrap();
    assert_eq!(single.iterations(), 1);
}

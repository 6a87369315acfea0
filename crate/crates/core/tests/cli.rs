use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use perception_magnifier::grid::Grid;
use perception_magnifier::io::{
    decode_png, encode_png, grid_from_npy, mask_from_npy, read_image, read_npy, write_npy,
    NpyArray, TraceRecord,
};
use perception_magnifier::magnifier::ImageBuffer;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn pmag<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_pmag"))
        .args(args)
        .output()
        .expect("pmag runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "pmag failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn load_grid(p: &Path) -> Grid<f64> {
    grid_from_npy(&read_npy(p).unwrap()).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn heatmap_single_layer_copies_slice() {
    let dir = TempDir::new().unwrap();
    let attn = dir.path().join("attn.npy");
    let vals = vec![
        0.0f32, 0.25, 1.5, 3.0, 0.5, 0.125, 7.0, 2.0, 0.0, 1.0, 4.0, 0.75,
    ];
    write_npy(
        &attn,
        &NpyArray::from_f32(vec![1, 1, 3, 4], vals.clone()).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("heat.npy");
    ok(pmag([
        "heatmap".as_ref(),
        attn.as_os_str(),
        "--layer-start".as_ref(),
        "0".as_ref(),
        "--out".as_ref(),
        out.as_os_str(),
    ]));
    let heat = read_npy(&out).unwrap();
    assert_eq!(heat.shape(), &[3, 4]);
    assert_eq!(heat.as_f32().unwrap(), vals.as_slice());
}

#[test]
fn heatmap_golden_is_byte_exact() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("heat.npy");
    ok(pmag([
        "heatmap".as_ref(),
        fixture("golden_attn.npy").as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]));
    assert_eq!(
        fs::read(out).unwrap(),
        fs::read(fixture("golden_heat.npy")).unwrap()
    );
}

#[test]
fn heatmap_layer_out_of_range_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = pmag([
        "heatmap".as_ref(),
        fixture("golden_attn.npy").as_os_str(),
        "--layer-start".as_ref(),
        "16".as_ref(),
        "--out".as_ref(),
        dir.path().join("h.npy").as_os_str(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer"));
}

#[test]
fn heatmap_format_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.npy");
    fs::write(&junk, b"\x93NUMPY\x01\x00garbage").unwrap();
    let out_path = dir.path().join("h.npy");
    let out = pmag([
        "heatmap".as_ref(),
        junk.as_os_str(),
        "--out".as_ref(),
        out_path.as_os_str(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    let missing = dir.path().join("missing.npy");
    let out = pmag([
        "heatmap".as_ref(),
        missing.as_os_str(),
        "--out".as_ref(),
        out_path.as_os_str(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out_path.exists());
}

#[test]
fn heatmap_wrong_rank_exits_3() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("flat.npy");
    write_npy(&p, &NpyArray::from_f32(vec![2, 2], vec![0.0; 4]).unwrap()).unwrap();
    let out = pmag([
        "heatmap".as_ref(),
        p.as_os_str(),
        "--out".as_ref(),
        dir.path().join("h.npy").as_os_str(),
    ]);
    assert_eq!(code(&out), 3);
}

fn refine_two_blob(dir: &Path, extra: &[&str]) -> (Output, PathBuf, PathBuf) {
    let hstar = dir.join("hstar.npy");
    let trace = dir.join("trace.json");
    let mut args: Vec<std::ffi::OsString> = vec![
        "refine".into(),
        "--synthetic".into(),
        fixture("two_blob.json").into(),
        "--out".into(),
        hstar.clone().into(),
        "--trace".into(),
        trace.clone().into(),
    ];
    args.extend(extra.iter().map(Into::into));
    (pmag(args), hstar, trace)
}

#[test]
fn refine_two_blob_trace() {
    let dir = TempDir::new().unwrap();
    let masks = dir.path().join("masks");
    let (out, hstar, trace) = refine_two_blob(dir.path(), &["--mask-dir", masks.to_str().unwrap()]);
    ok(out);
    let t = TraceRecord::read(&trace).unwrap();
    assert_eq!(t.num_iterations, 3);
    assert_eq!(t.termination_reason, "below-threshold");
    assert_eq!((t.grid_h, t.grid_w), (24, 24));
    assert!(t.iterations[0].total_mass > t.iterations[1].total_mass);
    assert!(t.iterations[2].terminated);
    assert!(t.iterations[2].total_mass < 0.3);
    assert_eq!(load_grid(&hstar).dims(), (24, 24));

    let mut prev = usize::MAX;
    for rec in &t.iterations {
        let mask =
            mask_from_npy(&read_npy(masks.join(format!("mask{}.npy", rec.iteration))).unwrap())
                .unwrap();
        assert_eq!(mask.attendable_count(), rec.attendable);
        assert!(rec.attendable < prev);
        prev = rec.attendable;
    }
}

#[test]
fn refine_iteration_cap() {
    let dir = TempDir::new().unwrap();
    let (out, _, trace) = refine_two_blob(dir.path(), &["--max-iters", "1"]);
    ok(out);
    let t = TraceRecord::read(trace).unwrap();
    assert_eq!(t.num_iterations, 1);
    assert_eq!(t.termination_reason, "iteration-cap");
    assert_eq!(t.config.max_iters, 1);
}

#[test]
fn refine_invalid_settings_exit_3() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&refine_two_blob(dir.path(), &["--max-iters", "0"]).0),
        3
    );
    assert_eq!(code(&refine_two_blob(dir.path(), &["--beta=-1"]).0), 3);
    assert_eq!(
        code(&refine_two_blob(dir.path(), &["--layer-start", "32"]).0),
        3
    );
}

#[test]
fn refine_manifest_replay() {
    let dir = TempDir::new().unwrap();
    let hstar = dir.path().join("h.npy");
    ok(pmag([
        "refine".as_ref(),
        "--manifest".as_ref(),
        fixture("golden_manifest.json").as_os_str(),
        "--beta".as_ref(),
        "inf".as_ref(),
        "--out".as_ref(),
        hstar.as_os_str(),
    ]));
    assert_eq!(
        fs::read(hstar).unwrap(),
        fs::read(fixture("golden_heat.npy")).unwrap()
    );
}

#[test]
fn refine_mismatched_manifest_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = pmag([
        "refine".as_ref(),
        "--manifest".as_ref(),
        fixture("mismatched_manifest.json").as_os_str(),
        "--out".as_ref(),
        dir.path().join("h.npy").as_os_str(),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn refine_bad_provider_files() {
    let dir = TempDir::new().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"grid_h\": 4,").unwrap();
    let out_path = dir.path().join("h.npy");
    let out = pmag([
        "refine".as_ref(),
        "--synthetic".as_ref(),
        broken.as_os_str(),
        "--out".as_ref(),
        out_path.as_os_str(),
    ]);
    assert_eq!(code(&out), 2);

    let leaky = dir.path().join("leaky.json");
    fs::write(
        &leaky,
        r#"{"grid_h": 4, "grid_w": 4, "leak": 1.5, "blobs": [{"center": [1, 1], "width": 1.0, "weight": 1.0}]}"#,
    )
    .unwrap();
    let out = pmag([
        "refine".as_ref(),
        "--synthetic".as_ref(),
        leaky.as_os_str(),
        "--out".as_ref(),
        out_path.as_os_str(),
    ]);
    assert_eq!(code(&out), 3);

    let manifest = dir.path().join("run.json");
    fs::write(
        &manifest,
        r#"{"grid_h": 6, "grid_w": 8, "num_layers": 16, "num_heads": 4, "iterations": ["nowhere.npy"]}"#,
    )
    .unwrap();
    let out = pmag([
        "refine".as_ref(),
        "--manifest".as_ref(),
        manifest.as_os_str(),
        "--out".as_ref(),
        out_path.as_os_str(),
    ]);
    assert_eq!(code(&out), 2);
}

fn postprocess(heat: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<std::ffi::OsString> = vec![
        "postprocess".into(),
        heat.into(),
        "--out".into(),
        out.into(),
    ];
    args.extend(extra.iter().map(Into::into));
    pmag(args)
}

#[test]
fn postprocess_constant_map_is_half() {
    let dir = TempDir::new().unwrap();
    let heat = dir.path().join("c.npy");
    write_npy(
        &heat,
        &NpyArray::from_f32(vec![3, 3], vec![2.5; 9]).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("p.npy");
    ok(postprocess(
        &heat,
        &out,
        &["--width", "12", "--height", "9"],
    ));
    let p = load_grid(&out);
    assert_eq!(p.dims(), (9, 12));
    assert!(p.as_slice().iter().all(|v| *v == 0.5));
}

#[test]
fn postprocess_single_hot_golden() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p.npy");
    ok(postprocess(
        &fixture("single_hot_heat.npy"),
        &out,
        &["--width", "24", "--height", "24"],
    ));
    let got = load_grid(&out);
    let want = load_grid(&fixture("single_hot_pmap.npy"));
    assert_eq!(got.dims(), want.dims());
    for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
    assert!(*got.get(9, 13) > *got.get(23, 0));
}

#[test]
fn postprocess_identity_size_two_tokens() {
    let dir = TempDir::new().unwrap();
    let heat = dir.path().join("two.npy");
    write_npy(
        &heat,
        &NpyArray::from_f32(vec![1, 2], vec![0.3, 0.9]).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("p.npy");
    ok(postprocess(&heat, &out, &["--kernel", "1"]));
    let p = load_grid(&out);
    assert_eq!(p.dims(), (1, 2));
    assert_eq!(p.as_slice()[0], f64::from(sigmoid(-10.0) as f32));
    assert_eq!(p.as_slice()[1], f64::from(sigmoid(10.0) as f32));
}

#[test]
fn postprocess_rejects_bad_settings() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p.npy");
    let hot = fixture("single_hot_heat.npy");
    assert_eq!(code(&postprocess(&hot, &out, &["--kernel", "4"])), 3);
    assert_eq!(code(&postprocess(&hot, &out, &["--alpha", "0"])), 3);
    assert_eq!(code(&postprocess(&hot, &out, &["--width", "3"])), 3);
}

fn magnify(image: &Path, pmap: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<std::ffi::OsString> = vec![
        "magnify".into(),
        image.into(),
        pmap.into(),
        "--out".into(),
        out.into(),
    ];
    args.extend(extra.iter().map(Into::into));
    pmag(args)
}

#[test]
fn magnify_uniform_map_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let img = ImageBuffer::from_fn(17, 23, 3, |y, x, c| {
        ((y * 13 + x * 7 + c * 50) % 256) as f64 / 255.0
    })
    .unwrap();
    let input = dir.path().join("in.png");
    fs::write(&input, encode_png(&img).unwrap()).unwrap();
    let pmap = dir.path().join("u.npy");
    write_npy(
        &pmap,
        &NpyArray::from_f32(vec![17, 23], vec![0.5; 17 * 23]).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("out.png");
    ok(magnify(&input, &pmap, &out, &[]));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&input).unwrap());
}

#[test]
fn magnify_central_band_golden() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.png");
    ok(magnify(
        &fixture("band_image.png"),
        &fixture("band_pmap.npy"),
        &out,
        &[],
    ));
    let got = read_image(&out).unwrap();
    let want = read_image(fixture("band_magnified.png")).unwrap();
    assert_eq!(got, want);
    assert_ne!(got, read_image(fixture("band_image.png")).unwrap());
}

#[test]
fn magnify_output_size_flags() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.png");
    ok(magnify(
        &fixture("band_image.png"),
        &fixture("band_pmap.npy"),
        &out,
        &["--out-width", "40", "--out-height", "10"],
    ));
    assert_eq!(read_image(&out).unwrap().dims(), (10, 40));
}

#[test]
fn magnify_dimension_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.png");
    let o = magnify(&fixture("scene.png"), &fixture("band_pmap.npy"), &out, &[]);
    assert_eq!(code(&o), 3);
    assert!(!out.exists());
}

#[test]
fn magnify_non_png_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.png");
    let o = magnify(
        &fixture("two_blob.json"),
        &fixture("band_pmap.npy"),
        &out,
        &[],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn render_plain_and_overlay() {
    let dir = TempDir::new().unwrap();
    let plain = dir.path().join("plain.png");
    ok(pmag([
        "render".as_ref(),
        fixture("golden_heat.npy").as_os_str(),
        "--out".as_ref(),
        plain.as_os_str(),
    ]));
    let img = read_image(&plain).unwrap();
    assert_eq!((img.dims(), img.channels()), ((6, 8), 3));

    let over = dir.path().join("over.png");
    ok(pmag([
        "render".as_ref(),
        fixture("band_pmap.npy").as_os_str(),
        "--overlay".as_ref(),
        fixture("band_image.png").as_os_str(),
        "--blend".as_ref(),
        "0.25".as_ref(),
        "--out".as_ref(),
        over.as_os_str(),
    ]));
    assert_eq!(read_image(&over).unwrap().dims(), (24, 32));

    let bad = pmag([
        "render".as_ref(),
        fixture("band_pmap.npy").as_os_str(),
        "--blend".as_ref(),
        "2".as_ref(),
        "--out".as_ref(),
        over.as_os_str(),
    ]);
    assert_eq!(code(&bad), 3);
}

fn pipeline(image: &Path, provider: &[&std::ffi::OsStr], out_dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<std::ffi::OsString> = vec!["pipeline".into(), image.into()];
    args.extend(provider.iter().map(|s| s.to_os_string()));
    args.extend(["--out-dir".into(), out_dir.into()]);
    args.extend(extra.iter().map(Into::into));
    pmag(args)
}

const ARTIFACTS: [&str; 5] = [
    "hstar.npy",
    "pmap.npy",
    "magnified.png",
    "trace.json",
    "viz.png",
];

#[test]
fn pipeline_two_blob_smoke() {
    let dir = TempDir::new().unwrap();
    let syn = fixture("two_blob.json");
    ok(pipeline(
        &fixture("scene.png"),
        &["--synthetic".as_ref(), syn.as_os_str()],
        dir.path(),
        &[],
    ));
    for name in ARTIFACTS {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let pmap = load_grid(&dir.path().join("pmap.npy"));
    assert_eq!(pmap.dims(), (72, 72));
    assert!(pmap.as_slice().iter().all(|v| *v > 0.0 && *v < 1.0));
    let scene = read_image(fixture("scene.png")).unwrap();
    assert_ne!(read_image(dir.path().join("magnified.png")).unwrap(), scene);
    let t = TraceRecord::read(dir.path().join("trace.json")).unwrap();
    assert_eq!(t.termination_reason, "below-threshold");
}

#[test]
fn pipeline_equals_individual_commands() {
    let dir = TempDir::new().unwrap();
    let all = dir.path().join("all");
    let syn = fixture("two_blob.json");
    let scene = fixture("scene.png");
    let flags = [
        "--alpha",
        "6",
        "--kernel",
        "5",
        "--out-width",
        "90",
        "--out-height",
        "60",
    ];
    ok(pipeline(
        &scene,
        &["--synthetic".as_ref(), syn.as_os_str()],
        &all,
        &flags,
    ));

    let d = dir.path();
    let (hstar, pmap, mag, trace, viz) = (
        d.join("hstar.npy"),
        d.join("pmap.npy"),
        d.join("magnified.png"),
        d.join("trace.json"),
        d.join("viz.png"),
    );
    ok(pmag([
        "refine".as_ref(),
        "--synthetic".as_ref(),
        syn.as_os_str(),
        "--out".as_ref(),
        hstar.as_os_str(),
        "--trace".as_ref(),
        trace.as_os_str(),
    ]));
    ok(postprocess(
        &hstar,
        &pmap,
        &[
            "--alpha", "6", "--kernel", "5", "--width", "72", "--height", "72",
        ],
    ));
    ok(magnify(
        &scene,
        &pmap,
        &mag,
        &["--out-width", "90", "--out-height", "60"],
    ));
    ok(pmag([
        "render".as_ref(),
        pmap.as_os_str(),
        "--overlay".as_ref(),
        scene.as_os_str(),
        "--out".as_ref(),
        viz.as_os_str(),
    ]));

    for name in ["hstar.npy", "pmap.npy", "magnified.png", "viz.png"] {
        assert_eq!(
            fs::read(all.join(name)).unwrap(),
            fs::read(d.join(name)).unwrap(),
            "{name}"
        );
    }
    let mut combined = TraceRecord::read(all.join("trace.json")).unwrap();
    let post = combined.postprocess.take().unwrap();
    assert_eq!(
        (post.alpha, post.kernel, post.out_h, post.out_w),
        (6.0, 5, 72, 72)
    );
    assert_eq!(combined, TraceRecord::read(&trace).unwrap());
}

#[test]
fn pipeline_infinite_beta_is_single_pass_composition() {
    let dir = TempDir::new().unwrap();
    let all = dir.path().join("all");
    let manifest = fixture("golden_manifest.json");
    let image = fixture("band_image.png");
    ok(pipeline(
        &image,
        &["--manifest".as_ref(), manifest.as_os_str()],
        &all,
        &["--beta", "inf"],
    ));
    let t = TraceRecord::read(all.join("trace.json")).unwrap();
    assert_eq!(t.num_iterations, 1);

    let d = dir.path();
    let (heat, pmap, mag) = (d.join("heat.npy"), d.join("pmap.npy"), d.join("mag.png"));
    ok(pmag([
        "heatmap".as_ref(),
        fixture("golden_attn.npy").as_os_str(),
        "--out".as_ref(),
        heat.as_os_str(),
    ]));
    ok(postprocess(
        &heat,
        &pmap,
        &["--width", "32", "--height", "24"],
    ));
    ok(magnify(&image, &pmap, &mag, &[]));
    assert_eq!(
        fs::read(all.join("hstar.npy")).unwrap(),
        fs::read(&heat).unwrap()
    );
    assert_eq!(
        fs::read(all.join("pmap.npy")).unwrap(),
        fs::read(&pmap).unwrap()
    );
    assert_eq!(
        fs::read(all.join("magnified.png")).unwrap(),
        fs::read(&mag).unwrap()
    );
}

#[test]
fn pipeline_whole_grid_blob_is_near_identity() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("wide.json");
    fs::write(
        &spec,
        r#"{"grid_h": 12, "grid_w": 12, "blobs": [{"center": [6, 6], "width": 1e9, "weight": 1.0}]}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    ok(pipeline(
        &fixture("scene.png"),
        &["--synthetic".as_ref(), spec.as_os_str()],
        &out,
        &[],
    ));
    let got = read_image(out.join("magnified.png")).unwrap();
    let scene = read_image(fixture("scene.png")).unwrap();
    let worst = got
        .data()
        .iter()
        .zip(scene.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 2.0 / 255.0, "max delta {worst}");
}

#[test]
fn pipeline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let syn = fixture("two_blob.json");
    let runs: Vec<Vec<Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = dir.path().join(tag);
            ok(pipeline(
                &fixture("scene.png"),
                &["--synthetic".as_ref(), syn.as_os_str()],
                &out,
                &[],
            ));
            ARTIFACTS
                .iter()
                .map(|n| fs::read(out.join(n)).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn pipeline_image_smaller_than_grid_exits_3() {
    let dir = TempDir::new().unwrap();
    let tiny = dir.path().join("tiny.png");
    let img = ImageBuffer::new(4, 4, 1, vec![0.5; 16]).unwrap();
    fs::write(&tiny, encode_png(&img).unwrap()).unwrap();
    let syn = fixture("two_blob.json");
    let o = pipeline(
        &tiny,
        &["--synthetic".as_ref(), syn.as_os_str()],
        &dir.path().join("o"),
        &[],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_2() {
    let out = pmag(["heatmap"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&pmag(["--help"])), 0);
}

#[test]
fn grayscale_png_round_trips_through_decoder() {
    let img = ImageBuffer::from_fn(5, 7, 1, |y, x, _| ((y * 7 + x) * 6) as f64 / 255.0).unwrap();
    assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
}

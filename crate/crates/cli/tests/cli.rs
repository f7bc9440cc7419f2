use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tempfile::TempDir;

use spice_core::imageops::decode_png;
use spice_core::{Channels, ImageBuffer};

mod common;
use common::{fixture, golden_path, sha256_file, spice, write_png};

fn run(args: &[&str]) -> Output {
    spice().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn edit_defaults_are_byte_reproducible_and_match_golden() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let mut hashes = Vec::new();
    for run_no in 0..2 {
        let out = dir.path().join(format!("out{run_no}.png"));
        let o = run(&["edit", "--image", s(&image), "--mask", s(&mask), "--prompt", "a red cube", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        hashes.push((sha256_file(&out), sha256_file(&out.with_extension("json"))));
    }
    assert_eq!(hashes[0], hashes[1]);

    let golden_path = golden_path("edit_default.sha256");
    let actual = format!("result.png {}\nresult.json {}\n", hashes[0].0, hashes[0].1);
    if std::env::var_os("SPICE_UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden_path, &actual).unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).expect("golden file missing; rerun with SPICE_UPDATE_GOLDEN=1");
    assert_eq!(actual, golden);
}

#[test]
fn edit_changes_only_the_region() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let out = dir.path().join("out.png");
    let o = run(&["edit", "--image", s(&image), "--mask", s(&mask), "--resolution", "256x192", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let before = decode_png(&std::fs::read(&image).unwrap()).unwrap();
    let after = decode_png(&std::fs::read(&out).unwrap()).unwrap();
    assert_ne!(before, after);
    // far corners lie outside any blur footprint
    for (x, y) in [(0, 0), (159, 0), (0, 119), (159, 119)] {
        assert_eq!(before.pixel(x, y), after.pixel(x, y));
    }
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta["backend_id"], "mock");
    assert!(meta.get("duration_ms").is_none());
}

#[test]
fn edit_with_project_appends_steps() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let project = dir.path().join("proj");
    let o = run(&["edit", "--image", s(&image), "--mask", s(&mask), "--resolution", "128x96", "--project", s(&project), "--out", s(&dir.path().join("a.png"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["edit", "--mask", s(&mask), "--resolution", "128x96", "--seed", "3", "--project", s(&project), "--out", s(&dir.path().join("b.png"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let session = spice_core::model::load_project(&project).unwrap();
    assert_eq!(session.steps().len(), 2);
    assert_eq!(*session.steps()[1].inputs.original, *session.steps()[0].result);
}

#[test]
fn strength_out_of_range_exits_2() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let o = run(&["edit", "--image", s(&image), "--mask", s(&mask), "--strength", "1.5", "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("denoising_strength"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(code(&run(&["edit", "--bogus"])), 2);
}

#[test]
fn missing_input_exits_3() {
    let dir = TempDir::new().unwrap();
    let o = run(&["edit", "--image", "/nonexistent/a.png", "--mask", "/nonexistent/b.png", "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn backend_down_exits_4() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let o = run(&["edit", "--image", s(&image), "--mask", s(&mask), "--resolution", "64x64", "--backend", "http://127.0.0.1:9", "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn backend_url_env_is_used() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let o = spice()
        .env("SPICE_BACKEND_URL", "http://127.0.0.1:9")
        .args(["edit", "--image", s(&image), "--mask", s(&mask), "--resolution", "64x64", "--out", s(&dir.path().join("o.png"))])
        .output()
        .unwrap();
    assert_eq!(code(&o), 4);
}

#[test]
fn sweep_writes_cells_sheet_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--image", s(&image), "--mask", s(&mask), "--resolution", "128x96", "--axis", "strength", "--values", "0.1,0.3,0.5,0.7,0.9", "--jobs", "2", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..5 {
        assert!(out.join(format!("cell_{i:02}.png")).is_file());
    }
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sidecar["cells"].as_array().unwrap().len(), 5);
    assert!(decode_png(&std::fs::read(out.join("contact.png")).unwrap()).is_ok());
}

#[test]
fn sweep_single_value_exits_2() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let o = run(&["sweep", "--image", s(&image), "--mask", s(&mask), "--axis", "strength", "--values", "0.5", "--out-dir", s(&dir.path().join("sw"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_with_failing_cell_still_succeeds() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--image", s(&image), "--mask", s(&mask), "--resolution", "128x96", "--axis", "strength", "--values", "0.1,0.5,0.9", "--fail-at-strength", "0.5", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!out.join("cell_01.png").exists());
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sidecar["cells"][1]["status"], "error");
    let sheet = decode_png(&std::fs::read(out.join("contact.png")).unwrap()).unwrap();
    // the middle cell is a placeholder
    let cell_w = (sheet.width() - 2 * 4) / 3;
    let p = sheet.pixel(cell_w + 4 + cell_w / 2, sheet.height() / 2);
    assert_eq!(&p[..3], &[160, 24, 24]);
}

fn disk_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let seg = ImageBuffer::from_fn(200, 200, Channels::Gray, |x, y, _| {
        let (dx, dy) = (f64::from(x) + 0.5 - 100.0, f64::from(y) + 0.5 - 80.0);
        if dx * dx + dy * dy <= 40.0 * 40.0 {
            255
        } else {
            0
        }
    })
    .unwrap();
    let image = ImageBuffer::filled(200, 200, &[0, 0, 255]).unwrap();
    let (seg_path, image_path) = (dir.join("seg.png"), dir.join("img.png"));
    write_png(&seg_path, &seg);
    write_png(&image_path, &image);
    (seg_path, image_path)
}

#[test]
fn measure_disk_against_its_own_properties() {
    let dir = TempDir::new().unwrap();
    let (seg, image) = disk_fixture(dir.path());
    let first = run(&["measure", "--seg", s(&seg), "--image", s(&image)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let report: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    let measured = &report["measured"];
    assert_eq!(measured["width"], 80.0);
    assert_eq!(measured["center_x"], 100.0);
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, serde_json::to_vec(measured).unwrap()).unwrap();
    let out = dir.path().join("report.json");
    let o = run(&["measure", "--seg", s(&seg), "--image", s(&image), "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    for key in ["pct_width", "pct_height", "pct_x", "pct_y", "pct_aspect"] {
        assert!(report["errors"][key].as_f64().unwrap().abs() < 1e-9, "{key}: {report}");
    }
}

#[test]
fn measure_error_paths() {
    let dir = TempDir::new().unwrap();
    let (seg, image) = disk_fixture(dir.path());
    let spec = dir.path().join("zero.json");
    std::fs::write(&spec, r#"{"width": 0.0}"#).unwrap();
    assert_eq!(code(&run(&["measure", "--seg", s(&seg), "--image", s(&image), "--spec", s(&spec)])), 2);

    let small = dir.path().join("small.png");
    write_png(&small, &ImageBuffer::filled(10, 10, &[1, 2, 3]).unwrap());
    assert_eq!(code(&run(&["measure", "--seg", s(&seg), "--image", s(&small)])), 2);

    let empty = dir.path().join("empty.png");
    write_png(&empty, &ImageBuffer::filled(200, 200, &[0]).unwrap());
    assert_eq!(code(&run(&["measure", "--seg", s(&empty), "--image", s(&image)])), 3);
}

fn write_case(root: &Path, name: &str, src: [u8; 3], edited: [u8; 3], captions: Option<(&str, &str)>) {
    let d = root.join(name);
    std::fs::create_dir_all(&d).unwrap();
    write_png(&d.join("source.png"), &ImageBuffer::filled(8, 8, &src).unwrap());
    write_png(&d.join("edited.png"), &ImageBuffer::filled(8, 8, &edited).unwrap());
    if let Some((a, b)) = captions {
        std::fs::write(d.join("source_caption.txt"), a).unwrap();
        std::fs::write(d.join("target_caption.txt"), b).unwrap();
    }
}

#[test]
fn clip_metrics_scores_cases_and_reports_errors() {
    let dir = TempDir::new().unwrap();
    let cases = dir.path().join("cases");
    write_case(&cases, "a", [10, 20, 30], [200, 20, 30], Some(("a cat", "a dog")));
    write_case(&cases, "b", [1, 2, 3], [3, 2, 1], Some(("a house", "a red house")));
    write_case(&cases, "c", [9, 9, 9], [8, 8, 8], None);
    let out = dir.path().join("report.json");
    let o = run(&["clip-metrics", "--cases", s(&cases), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("CLIP_dir"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["errored"], 1);
    assert_eq!(report["clip_dir"]["n"], 2);
    assert!(report["cases"][2]["error"].as_str().unwrap().contains("missing"));
}

#[test]
fn clip_metrics_error_paths() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&run(&["clip-metrics", "--cases", s(&empty)])), 3);

    let cases = dir.path().join("cases");
    write_case(&cases, "a", [10, 20, 30], [200, 20, 30], Some(("a cat", "a dog")));
    let o = run(&["clip-metrics", "--cases", s(&cases), "--embedder", "http://127.0.0.1:9"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

struct Running(Child);

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts a server subcommand on an ephemeral port and returns its address.
fn start(args: &[&str]) -> (Running, String) {
    let mut child = spice().args(args).stdout(Stdio::piped()).stderr(Stdio::null()).spawn().unwrap();
    let stdout = child.stdout.take().unwrap();
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("no listen line").to_string();
    (Running(child), url)
}

#[test]
fn serve_answers_health_and_port_conflict_exits_3() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("projects");
    let (_server, url) = start(&["serve", "--port", "0", "--project-root", s(&root)]);
    let resp = reqwest_get(&format!("{url}/v1/health"));
    assert!(resp.contains("ok"), "{resp}");

    let port = url.rsplit(':').next().unwrap();
    let o = run(&["serve", "--port", port, "--project-root", s(&root)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn mock_backend_serves_edits_identical_to_local_mock() {
    let dir = TempDir::new().unwrap();
    let (image, mask) = fixture(dir.path());
    let (_backend, url) = start(&["mock-backend", "--port", "0"]);
    let local = dir.path().join("local.png");
    let remote = dir.path().join("remote.png");
    let o = run(&["edit", "--image", s(&image), "--mask", s(&mask), "--resolution", "128x96", "--out", s(&local)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["edit", "--image", s(&image), "--mask", s(&mask), "--resolution", "128x96", "--backend", &url, "--out", s(&remote)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&local).unwrap(), std::fs::read(&remote).unwrap());
}

#[cfg(unix)]
#[test]
fn sigint_stops_server_cleanly() {
    let dir = TempDir::new().unwrap();
    let (mut server, url) = start(&["serve", "--port", "0", "--project-root", s(&dir.path().join("p"))]);
    assert!(reqwest_get(&format!("{url}/v1/health")).contains("ok"));
    let pid = server.0.id().to_string();
    assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
    let status = server.0.wait().unwrap();
    assert_eq!(status.code(), Some(0));
}

/// Minimal HTTP/1.0 GET so the test crate needs no HTTP client.
fn reqwest_get(url: &str) -> String {
    use std::io::{Read, Write};
    let rest = url.strip_prefix("http://").unwrap();
    let (host, path) = rest.split_once('/').map_or((rest, "/".to_string()), |(h, p)| (h, format!("/{p}")));
    let mut stream = std::net::TcpStream::connect(host).unwrap();
    write!(stream, "GET {path} HTTP/1.0\r\nHost: {host}\r\n\r\n").unwrap();
    let mut body = String::new();
    stream.read_to_string(&mut body).unwrap();
    body
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sqcorr::io::{encode_record, write_calibration, HEADER_LEN};
use sqcorr::{SampleRecord, SnlCalibration};
use tempfile::TempDir;

fn sqcorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqcorr"))
        .args(args)
        .env_remove("SQCORR_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn value(stdout: &str, key: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{stdout}"))
        .to_string()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Self {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn config(&self, name: &str, body: &str) -> String {
        fs::write(self.path(name), body).unwrap();
        self.s(name)
    }
}

const SQUEEZED: &str = "\
# squeezed vacuum, amplitude quadrature
state.vx = 0.5
state.vy = 2.0
lo.amplitude_sq = 100
det1.en_variance = 10
det2.en_variance = 10
digitizer.n_samples = 20000
digitizer.seed = 4
";

#[test]
fn simulate_writes_header_plus_interleaved_samples() {
    let w = Work::new();
    let cfg = w.config("s.cfg", SQUEEZED);
    let out = ok(&sqcorr(&["simulate", &cfg, "--out", &w.s("r.sqc")]));
    assert!(out.contains("20000 samples"), "{out}");
    let len = fs::metadata(w.path("r.sqc")).unwrap().len() as usize;
    assert_eq!(len, HEADER_LEN + 16 * 20000);
    let meta = fs::read_to_string(w.path("r.sqc.meta")).unwrap();
    assert!(meta.contains("digitizer.seed=4"), "{meta}");
    assert!(meta.contains("lo_power=100"), "{meta}");
}

#[test]
fn simulate_reruns_are_bit_identical() {
    let w = Work::new();
    let cfg = w.config("s.cfg", SQUEEZED);
    ok(&sqcorr(&["simulate", &cfg, "--out", &w.s("a.sqc")]));
    ok(&sqcorr(&[
        "simulate",
        &cfg,
        "--out",
        &w.s("b.sqc"),
        "--workers",
        "3",
    ]));
    assert_eq!(
        fs::read(w.path("a.sqc")).unwrap(),
        fs::read(w.path("b.sqc")).unwrap()
    );
    ok(&sqcorr(&[
        "simulate",
        &cfg,
        "--out",
        &w.s("c.sqc"),
        "--seed",
        "5",
    ]));
    assert_ne!(
        fs::read(w.path("a.sqc")).unwrap(),
        fs::read(w.path("c.sqc")).unwrap()
    );
}

#[test]
fn seed_precedence_flag_env_config() {
    let w = Work::new();
    let cfg = w.config("s.cfg", SQUEEZED);
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_sqcorr"));
        c.args(["simulate", &cfg, "--out", &w.s("x.sqc")])
            .args(extra);
        match env {
            Some(v) => c.env("SQCORR_SEED", v),
            None => c.env_remove("SQCORR_SEED"),
        };
        let out = ok(&c.output().unwrap());
        out.split("(seed ")
            .nth(1)
            .unwrap()
            .split(')')
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(run(&[], None), "4");
    assert_eq!(run(&[], Some("9")), "9");
    assert_eq!(run(&["--seed", "11"], Some("9")), "11");
}

#[test]
fn invalid_parameter_exits_2_naming_key() {
    let w = Work::new();
    let cfg = w.config("s.cfg", SQUEEZED);
    let out = sqcorr(&[
        "simulate",
        &cfg,
        "--out",
        &w.s("r.sqc"),
        "digitizer.n_samples=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("digitizer.n_samples"),
        "{}",
        stderr(&out)
    );
    assert!(!w.path("r.sqc").exists());

    let bad = w.config("bad.cfg", "state.vx = 0.5\nstate.vy = 1.0\n");
    let out = sqcorr(&["simulate", &bad, "--out", &w.s("r.sqc")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("state."), "{}", stderr(&out));

    let unknown = w.config("u.cfg", "state.vz = 1\n");
    let out = sqcorr(&["simulate", &unknown, "--out", &w.s("r.sqc")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("state.vz"));
}

#[test]
fn missing_config_exits_3() {
    let w = Work::new();
    let out = sqcorr(&["simulate", &w.s("nope.cfg"), "--out", &w.s("r.sqc")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn truncated_record_exits_4() {
    let w = Work::new();
    let cfg = w.config("s.cfg", SQUEEZED);
    ok(&sqcorr(&["simulate", &cfg, "--out", &w.s("r.sqc")]));
    let bytes = fs::read(w.path("r.sqc")).unwrap();
    fs::write(w.path("t.sqc"), &bytes[..bytes.len() - 5]).unwrap();
    let out = sqcorr(&["estimate", &w.s("t.sqc")]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));

    fs::write(w.path("m.sqc"), b"NOPE").unwrap();
    assert_eq!(sqcorr(&["estimate", &w.s("m.sqc")]).status.code(), Some(4));
}

fn handcrafted(path: &Path) {
    let r =
        SampleRecord::new(vec![1.0, -1.0, 1.0, -1.0], vec![1.0, -1.0, 1.0, -1.0], true).unwrap();
    fs::write(path, encode_record(&r)).unwrap();
}

#[test]
fn estimate_handcrafted_record() {
    let w = Work::new();
    handcrafted(&w.path("h.sqc"));
    // Population covariance is 1; the unbiased n-1 estimator gives 4/3.
    let out = ok(&sqcorr(&["estimate", &w.s("h.sqc")]));
    assert_eq!(value(&out, "cov"), (4.0f64 / 3.0).to_string());
    assert_eq!(value(&out, "mean1"), "0");
    assert_eq!(value(&out, "var_diff"), "0");
}

#[test]
fn estimate_two_sample_record() {
    let w = Work::new();
    let r = SampleRecord::new(vec![0.0, 1.0], vec![0.0, 1.0], false).unwrap();
    fs::write(w.path("h.sqc"), encode_record(&r)).unwrap();
    let out = ok(&sqcorr(&["estimate", &w.s("h.sqc")]));
    assert_eq!(value(&out, "cov"), "0.5");
}

#[test]
fn estimate_covariance_method_at_shot_noise() {
    let w = Work::new();
    // Zero covariance: S = 1 - 4·0/(4·1).
    let r =
        SampleRecord::new(vec![1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0, -1.0, -1.0], true).unwrap();
    fs::write(w.path("z.sqc"), encode_record(&r)).unwrap();
    write_calibration(&w.path("snl.txt"), &SnlCalibration::from_slope(4.0, 0.0)).unwrap();
    let out = ok(&sqcorr(&[
        "estimate",
        &w.s("z.sqc"),
        "--snl",
        &w.s("snl.txt"),
        "--method",
        "cov",
        "--lo-power",
        "1",
    ]));
    assert_eq!(value(&out, "s"), "1");
    assert_eq!(value(&out, "s_db"), "0");
    assert_eq!(value(&out, "method"), "cov");
}

#[test]
fn estimate_method_without_calibration_exits_2() {
    let w = Work::new();
    handcrafted(&w.path("h.sqc"));
    let out = sqcorr(&["estimate", &w.s("h.sqc"), "--method", "hd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--snl"));
}

#[test]
fn estimate_reads_lo_power_from_sidecar_and_writes_csv() {
    let w = Work::new();
    let cfg = w.config("s.cfg", SQUEEZED);
    ok(&sqcorr(&["simulate", &cfg, "--out", &w.s("r.sqc")]));
    write_calibration(&w.path("snl.txt"), &SnlCalibration::from_slope(4.0, 20.0)).unwrap();
    let out = ok(&sqcorr(&[
        "estimate",
        &w.s("r.sqc"),
        "--snl",
        &w.s("snl.txt"),
        "--csv",
        &w.s("e.csv"),
    ]));
    assert_eq!(value(&out, "lo_power"), "100");
    let s: f64 = value(&out, "s").parse().unwrap();
    let se: f64 = value(&out, "s_se").parse().unwrap();
    assert!((s - 0.5).abs() <= 5.0 * se, "{out}");

    let mut rdr = csv::Reader::from_path(w.path("e.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let col = headers.iter().position(|h| h == "s").unwrap();
    assert_eq!(row[col].parse::<f64>().unwrap(), s);
}

#[test]
fn calibrate_needs_two_powers() {
    let w = Work::new();
    let cfg = w.config("c.cfg", "digitizer.n_samples = 20000\n");
    let out = sqcorr(&[
        "calibrate",
        &cfg,
        "--powers",
        "100",
        "--out",
        &w.s("snl.txt"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!w.path("snl.txt").exists());
}

#[test]
fn calibrate_without_electronic_noise() {
    let w = Work::new();
    let cfg = w.config("c.cfg", "det1.en_variance = 0\ndet2.en_variance = 0\n");
    ok(&sqcorr(&[
        "calibrate",
        &cfg,
        "--powers",
        "100,400",
        "--out",
        &w.s("snl.txt"),
    ]));
    let cal = sqcorr::io::read_calibration(&w.path("snl.txt")).unwrap();
    assert!((cal.slope - 4.0).abs() / 4.0 < 0.005, "{cal:?}");
    assert_eq!(cal.en_total, 0.0);
    let text = fs::read_to_string(w.path("snl.txt")).unwrap();
    assert_eq!(sqcorr::io::encode_calibration(&cal), text);
}

#[test]
fn calibrate_then_estimate_round_trip() {
    let w = Work::new();
    let cfg = w.config("c.cfg", SQUEEZED);
    let msg = ok(&sqcorr(&[
        "calibrate",
        &cfg,
        "--powers",
        "50,100,200,400",
        "--out",
        &w.s("snl.txt"),
    ]));
    assert!(msg.starts_with("slope = "), "{msg}");
    let cal = sqcorr::io::read_calibration(&w.path("snl.txt")).unwrap();
    assert!((cal.slope - 4.0).abs() < 0.1, "{cal:?}");
    // Only the upper half of the powers enters the fit.
    assert_eq!(cal.power_points.len(), 2);

    ok(&sqcorr(&[
        "simulate",
        &cfg,
        "--out",
        &w.s("r.sqc"),
        "--seed",
        "99",
    ]));
    let out = ok(&sqcorr(&[
        "estimate",
        &w.s("r.sqc"),
        "--snl",
        &w.s("snl.txt"),
        "--method",
        "cov",
    ]));
    let s: f64 = value(&out, "s").parse().unwrap();
    let se: f64 = value(&out, "s_se").parse().unwrap();
    assert!((s - 0.5).abs() <= 5.0 * se, "{out}");
}

fn read_sweep(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let headers = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (headers, rows)
}

#[test]
fn phase_sweep_csv_is_parseable_and_reproducible() {
    let w = Work::new();
    let cfg = w.config("s.cfg", SQUEEZED);
    let args = |out: &str| {
        vec![
            "sweep".to_string(),
            cfg.clone(),
            "--sweep".into(),
            "phase".into(),
            "--out".into(),
            out.to_string(),
            "--values".into(),
            "0,0.785,1.571".into(),
            "--seeds-per-point".into(),
            "4".into(),
            "--samples-per-run".into(),
            "5000".into(),
        ]
    };
    let a: Vec<String> = args(&w.s("a.csv"));
    let b: Vec<String> = args(&w.s("b.csv"));
    ok(&sqcorr(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    ok(&sqcorr(&b.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(
        fs::read(w.path("a.csv")).unwrap(),
        fs::read(w.path("b.csv")).unwrap()
    );
    assert_eq!(
        fs::read(w.path("a.dat")).unwrap(),
        fs::read(w.path("b.dat")).unwrap()
    );

    let (headers, rows) = read_sweep(&w.path("a.csv"));
    assert_eq!(headers[0], "phase_rad");
    assert!(headers.iter().any(|h| h == "cov_se"));
    assert_eq!(rows.len(), 3);
    let cov = headers.iter().position(|h| h == "cov").unwrap();
    assert!(rows[0][cov].parse::<f64>().unwrap() > 0.0);
    assert!(rows[2][cov].parse::<f64>().unwrap() < 0.0);
    let text = fs::read_to_string(w.path("a.csv")).unwrap();
    assert!(text
        .lines()
        .any(|l| l.starts_with('#') && l.contains("seed")));
}

#[test]
fn phase_sweep_of_vacuum_has_no_significant_covariance() {
    let w = Work::new();
    let cfg = w.config(
        "v.cfg",
        "det1.en_variance = 20\ndet2.en_variance = 20\ndigitizer.n_samples = 40000\n",
    );
    ok(&sqcorr(&[
        "sweep",
        &cfg,
        "--sweep",
        "phase",
        "--out",
        &w.s("v.csv"),
        "--seeds-per-point",
        "2",
    ]));
    let (headers, rows) = read_sweep(&w.path("v.csv"));
    let cov = headers.iter().position(|h| h == "cov").unwrap();
    let se = headers.iter().position(|h| h == "cov_se").unwrap();
    assert_eq!(rows.len(), 64);
    for r in &rows {
        let (c, s): (f64, f64) = (r[cov].parse().unwrap(), r[se].parse().unwrap());
        assert!(c.abs() < 5.0 * s, "{r:?}");
    }
}

fn footer_exponent(out: &str) -> f64 {
    out.split("fitted_exponent=")
        .nth(1)
        .and_then(|r| r.split('±').next())
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn lo_only_attenuation_sweep_footer() {
    let w = Work::new();
    let cfg = w.config("o.cfg", "preset = opa\ndigitizer.n_samples = 200000\n");
    let out = ok(&sqcorr(&[
        "sweep",
        &cfg,
        "--sweep",
        "attenuation",
        "--out",
        &w.s("o.csv"),
        "--values",
        "0.125,0.25,0.5,1",
        "--seeds-per-point",
        "2",
    ]));
    assert!((footer_exponent(&out) - 1.0).abs() <= 0.05, "{out}");
    let text = fs::read_to_string(w.path("o.csv")).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("# fitted_exponent="), "{last}");
    assert!((footer_exponent(last) - 1.0).abs() <= 0.05, "{last}");
}

#[test]
fn attenuation_sweep_reports_exponent_in_footer() {
    let w = Work::new();
    let cfg = w.config("k.cfg", "preset = kerr\ndigitizer.n_samples = 200000\n");
    let out = ok(&sqcorr(&[
        "sweep",
        &cfg,
        "--sweep",
        "attenuation",
        "--out",
        &w.s("k.csv"),
        "--values",
        "0.25,0.5,0.75,1",
        "--seeds-per-point",
        "2",
    ]));
    assert!((footer_exponent(&out) - 2.0).abs() <= 0.05, "{out}");
    let text = fs::read_to_string(w.path("k.csv")).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("# fitted_exponent="), "{last}");
    let (headers, rows) = read_sweep(&w.path("k.csv"));
    assert_eq!(headers[0], "transmission");
    assert_eq!(rows.len(), 4);
}

#[test]
fn attenuation_sweep_of_coherent_light_refuses_fit() {
    let w = Work::new();
    let cfg = w.config("v.cfg", "digitizer.n_samples = 40000\n");
    let out = ok(&sqcorr(&[
        "sweep",
        &cfg,
        "--sweep",
        "attenuation",
        "--out",
        &w.s("v.csv"),
        "--values",
        "0.25,0.5,1",
        "--seeds-per-point",
        "2",
    ]));
    assert!(out.contains("fitted_exponent=refused"), "{out}");
}

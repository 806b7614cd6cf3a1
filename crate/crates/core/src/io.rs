//! On-disk formats: binary sample records with a key=value sidecar,
//! shot-noise calibration files, and CSV result tables.
//!
//! Record layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SQC1" (0x53 0x51 0x43 0x31)
//!      4     2  format version = 1
//!      6     2  flags (bit 0: AC-coupled)
//!      8     8  n_samples
//!     16  16·n  interleaved (i1, i2) pairs of f64
//! ```
//!
//! A record file is therefore exactly `16 + 16·n_samples` bytes long.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detection::SampleRecord;
use crate::estimators::SnlCalibration;
use crate::experiments::SweepResult;

pub const MAGIC: [u8; 4] = *b"SQC1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const FLAG_AC_COUPLED: u16 = 1;
const KNOWN_FLAGS: u16 = FLAG_AC_COUPLED;

pub const CALIBRATION_FORMAT: &str = "sqcorr-snl";
pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("file is {0} bytes, shorter than the {HEADER_LEN}-byte header")]
    Truncated(usize),
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown flag bits {0:#06x}")]
    UnknownFlags(u16),
    #[error("length {actual} bytes does not match {expected} expected for {n_samples} samples")]
    LengthMismatch {
        n_samples: u64,
        expected: u128,
        actual: usize,
    },
    #[error("record holds {0} samples; at least 2 are required")]
    TooFewSamples(u64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing key {0:?}")]
    MissingKey(&'static str),
    #[error("key {key:?}: {message}")]
    BadValue { key: String, message: String },
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
}

impl FileError {
    fn io(path: &Path, source: io::Error) -> Self {
        FileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, source: FormatError) -> Self {
        FileError::Format {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn encode_record(record: &SampleRecord) -> Vec<u8> {
    let n = record.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * n);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if record.ac_coupled() {
        FLAG_AC_COUPLED
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for (a, b) in record.ch1().iter().zip(record.ch2()) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

fn read_f64(bytes: &[u8]) -> f64 {
    f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
}

pub fn decode_record(bytes: &[u8]) -> Result<SampleRecord, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version.into()));
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    if flags & !KNOWN_FLAGS != 0 {
        return Err(FormatError::UnknownFlags(flags & !KNOWN_FLAGS));
    }
    let n_samples = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = HEADER_LEN as u128 + 16 * n_samples as u128;
    if expected != bytes.len() as u128 {
        return Err(FormatError::LengthMismatch {
            n_samples,
            expected,
            actual: bytes.len(),
        });
    }
    if n_samples < 2 {
        return Err(FormatError::TooFewSamples(n_samples));
    }
    let n = n_samples as usize;
    let mut ch1 = Vec::with_capacity(n);
    let mut ch2 = Vec::with_capacity(n);
    for (i, pair) in bytes[HEADER_LEN..].chunks_exact(16).enumerate() {
        let a = read_f64(&pair[..8]);
        let b = read_f64(&pair[8..]);
        if !(a.is_finite() && b.is_finite()) {
            return Err(FormatError::NonFinite(i));
        }
        ch1.push(a);
        ch2.push(b);
    }
    let record = SampleRecord::new(ch1, ch2, flags & FLAG_AC_COUPLED != 0)
        .expect("length and finiteness checked above");
    Ok(record)
}

/// Path of the metadata sidecar: the record path with `.meta` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| {
        FileError::io(
            path,
            io::Error::new(io::ErrorKind::InvalidInput, "no file name"),
        )
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(FileError::io(path, e));
    }
    Ok(())
}

/// Writes the record and its sidecar. `metadata` lines follow the fixed
/// header keys in the given order.
pub fn write_record(
    path: &Path,
    record: &SampleRecord,
    metadata: &[(String, String)],
) -> Result<(), FileError> {
    write_atomic(path, &encode_record(record))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "format=SQC1");
    let _ = writeln!(meta, "version={VERSION}");
    let _ = writeln!(meta, "n_samples={}", record.len());
    let _ = writeln!(meta, "ac_coupled={}", record.ac_coupled());
    if let Some(seed) = record.seed_used() {
        let _ = writeln!(meta, "seed={seed}");
    }
    for (k, v) in metadata {
        let _ = writeln!(meta, "{k}={v}");
    }
    write_atomic(&sidecar_path(path), meta.as_bytes())
}

pub fn read_record(path: &Path) -> Result<SampleRecord, FileError> {
    let bytes = fs::read(path).map_err(|e| FileError::io(path, e))?;
    let record = decode_record(&bytes).map_err(|e| FileError::format(path, e))?;
    let seed = read_sidecar(path)?.and_then(|kv| lookup(&kv, "seed").and_then(|s| s.parse().ok()));
    Ok(record.with_seed_used(seed))
}

/// Parsed sidecar lines, or `None` when no sidecar exists.
pub fn read_sidecar(record_path: &Path) -> Result<Option<Vec<(String, String)>>, FileError> {
    let path = sidecar_path(record_path);
    match fs::read_to_string(&path) {
        Ok(text) => parse_key_values(&text)
            .map(Some)
            .map_err(|e| FileError::format(&path, e)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(FileError::io(&path, e)),
    }
}

pub fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Syntax {
            line: i + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(FormatError::Syntax {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn encode_calibration(c: &SnlCalibration) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format={CALIBRATION_FORMAT}");
    let _ = writeln!(s, "version={CALIBRATION_VERSION}");
    let _ = writeln!(s, "slope={}", c.slope);
    let _ = writeln!(s, "slope_se={}", c.slope_se);
    let _ = writeln!(s, "en_total={}", c.en_total);
    let _ = writeln!(s, "en_total_se={}", c.en_total_se);
    let _ = writeln!(s, "fit_residual={}", c.fit_residual);
    match c.intercept {
        Some(a) => {
            let _ = writeln!(s, "intercept={a}");
        }
        None => {
            let _ = writeln!(s, "intercept=none");
        }
    }
    let _ = writeln!(s, "intercept_warning={}", c.intercept_warning);
    let points: Vec<String> = c
        .power_points
        .iter()
        .map(|(p, v)| format!("{p}:{v}"))
        .collect();
    let _ = writeln!(s, "power_points={}", points.join(","));
    s
}

fn required<'a>(kv: &'a [(String, String)], key: &'static str) -> Result<&'a str, FormatError> {
    lookup(kv, key).ok_or(FormatError::MissingKey(key))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, FormatError> {
    let x = v.parse::<f64>().map_err(|e| FormatError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })?;
    if !x.is_finite() {
        return Err(FormatError::BadValue {
            key: key.to_string(),
            message: format!("{v} is not finite"),
        });
    }
    Ok(x)
}

fn number(kv: &[(String, String)], key: &'static str) -> Result<f64, FormatError> {
    parse_f64(key, required(kv, key)?)
}

pub fn decode_calibration(text: &str) -> Result<SnlCalibration, FormatError> {
    let kv = parse_key_values(text)?;
    let format = required(&kv, "format")?;
    if format != CALIBRATION_FORMAT {
        return Err(FormatError::BadValue {
            key: "format".into(),
            message: format!("expected {CALIBRATION_FORMAT}, got {format}"),
        });
    }
    let version: u32 = required(&kv, "version")?
        .parse()
        .map_err(|_| FormatError::BadValue {
            key: "version".into(),
            message: "not an integer".into(),
        })?;
    if version != CALIBRATION_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let intercept = match required(&kv, "intercept")? {
        "none" => None,
        v => Some(parse_f64("intercept", v)?),
    };
    let intercept_warning = match required(&kv, "intercept_warning")? {
        "true" => true,
        "false" => false,
        v => {
            return Err(FormatError::BadValue {
                key: "intercept_warning".into(),
                message: format!("expected true or false, got {v}"),
            })
        }
    };
    let mut power_points = Vec::new();
    let raw = required(&kv, "power_points")?;
    if !raw.is_empty() {
        for item in raw.split(',') {
            let (p, v) = item.split_once(':').ok_or_else(|| FormatError::BadValue {
                key: "power_points".into(),
                message: format!("expected power:variance, got {item:?}"),
            })?;
            power_points.push((parse_f64("power_points", p)?, parse_f64("power_points", v)?));
        }
    }
    let c = SnlCalibration {
        slope: number(&kv, "slope")?,
        slope_se: number(&kv, "slope_se")?,
        en_total: number(&kv, "en_total")?,
        en_total_se: number(&kv, "en_total_se")?,
        fit_residual: number(&kv, "fit_residual")?,
        intercept,
        intercept_warning,
        power_points,
    };
    if !(c.slope.is_finite() && c.slope > 0.0) {
        return Err(FormatError::BadValue {
            key: "slope".into(),
            message: format!("{} must be positive", c.slope),
        });
    }
    for (key, v) in [
        ("en_total", c.en_total),
        ("slope_se", c.slope_se),
        ("en_total_se", c.en_total_se),
        ("fit_residual", c.fit_residual),
    ] {
        if v < 0.0 {
            return Err(FormatError::BadValue {
                key: key.into(),
                message: format!("{v} must be non-negative"),
            });
        }
    }
    Ok(c)
}

pub fn write_calibration(path: &Path, c: &SnlCalibration) -> Result<(), FileError> {
    write_atomic(path, encode_calibration(c).as_bytes())
}

pub fn read_calibration(path: &Path) -> Result<SnlCalibration, FileError> {
    let text = fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    decode_calibration(&text).map_err(|e| FileError::format(path, e))
}

/// Fixed 17-significant-digit scientific rendering, independent of locale.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub const SWEEP_COLUMNS: [&str; 12] = [
    "lo_power",
    "cov",
    "cov_se",
    "var_diff",
    "var_diff_se",
    "s_cov",
    "s_cov_se",
    "s_hd",
    "s_hd_se",
    "s_true",
    "s_hd_predicted",
    "witness",
];

/// Renders a sweep as CSV: `#` provenance lines, a header row with the
/// swept variable first, one row per swept value, then `footer` lines
/// (each prefixed with `# `).
pub fn render_sweep_csv(
    result: &SweepResult,
    provenance: &[(String, String)],
    footer: &[String],
) -> String {
    let spec = &result.spec;
    let mut s = String::new();
    let _ = writeln!(s, "# sqcorr sweep");
    let _ = writeln!(s, "# swept={}", spec.swept.column());
    let _ = writeln!(s, "# master_seed={}", spec.master_seed());
    let _ = writeln!(s, "# seeds_per_point={}", spec.seeds_per_point);
    let _ = writeln!(s, "# samples_per_run={}", spec.samples_per_run);
    let _ = writeln!(
        s,
        "# calibration={} slope={} en_total={}",
        result.calibration_source.as_str(),
        result.calibration.slope,
        result.calibration.en_total
    );
    for (k, v) in provenance {
        let _ = writeln!(s, "# {k}={v}");
    }
    let _ = writeln!(s, "{},{}", spec.swept.column(), SWEEP_COLUMNS.join(","));
    for r in &result.rows {
        let cells = [
            r.value,
            r.lo_power,
            r.cov.value,
            r.cov.se,
            r.var_diff.value,
            r.var_diff.se,
            r.s_cov.value,
            r.s_cov.se,
            r.s_hd.value,
            r.s_hd.se,
            r.s_true,
            r.s_hd_predicted,
        ];
        let nums: Vec<String> = cells.iter().map(|&x| fmt_num(x)).collect();
        let _ = writeln!(s, "{},{}", nums.join(","), r.witness.as_str());
    }
    for line in footer {
        let _ = writeln!(s, "# {line}");
    }
    s
}

/// Whitespace-separated `x cov cov_se` columns for plotting tools.
pub fn render_xy(result: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} cov cov_se", result.spec.swept.column());
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{} {} {}",
            fmt_num(r.value),
            fmt_num(r.cov.value),
            fmt_num(r.cov.se)
        );
    }
    s
}

/// Companion plot file next to a table: `out.csv` becomes `out.dat`.
pub fn xy_path(table: &Path) -> PathBuf {
    table.with_extension("dat")
}

use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 12;

pub const CSV_HEADER: [&str; 13] = [
    "t", "lax", "lay", "laz", "lgx", "lgy", "lgz", "rax", "ray", "raz", "rgx", "rgy", "rgz",
];

/// Timestamped samples from both earbuds: left accel, left gyro, right accel, right gyro.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    t: Vec<f64>,
    x: Vec<[f64; CHANNELS]>,
}

impl ImuStream {
    pub fn new(t: Vec<f64>, x: Vec<[f64; CHANNELS]>) -> Result<Self> {
        if t.len() != x.len() {
            return Err(Error::shape(
                "imu_stream",
                format!("{} timestamps for {} samples", t.len(), x.len()),
            ));
        }
        if t.is_empty() {
            return Err(Error::Insufficient("stream has no samples".into()));
        }
        if let Some(i) = t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!(
                "timestamps must be strictly increasing (sample {})",
                i + 1
            )));
        }
        if t.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("imu stream".into()));
        }
        Ok(ImuStream { t, x })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.t
    }

    pub fn samples(&self) -> &[[f64; CHANNELS]] {
        &self.x
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.x.iter().map(|s| s[c]).collect()
    }

    /// Same timestamps, samples replaced; lengths must agree.
    pub(crate) fn with_samples(&self, x: Vec<[f64; CHANNELS]>) -> Self {
        assert_eq!(x.len(), self.t.len());
        ImuStream {
            t: self.t.clone(),
            x,
        }
    }

    pub fn span(&self) -> f64 {
        self.t[self.t.len() - 1] - self.t[0]
    }
}

pub fn read_imu_csv(path: &Path) -> Result<ImuStream> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let name = path.display().to_string();
    let parse_err = |row: usize, detail: String| Error::Parse {
        path: name.clone(),
        row,
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| parse_err(0, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != CSV_HEADER {
        return Err(parse_err(0, format!("expected header `{}`", CSV_HEADER.join(","))));
    }
    let mut t = Vec::new();
    let mut x = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(parse_err(
                row,
                format!("expected {} columns, found {}", CSV_HEADER.len(), rec.len()),
            ));
        }
        let mut vals = [0.0; CSV_HEADER.len()];
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(row, format!("column `{}`: `{field}` is not a number", CSV_HEADER[j])))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("column `{}` is not finite", CSV_HEADER[j])));
            }
            vals[j] = v;
        }
        if let Some(&prev) = t.last() {
            if vals[0] <= prev {
                return Err(parse_err(row, "timestamps must be strictly increasing".into()));
            }
        }
        t.push(vals[0]);
        x.push(vals[1..].try_into().unwrap());
    }
    if t.is_empty() {
        return Err(parse_err(1, "no samples".into()));
    }
    ImuStream::new(t, x)
}

/// Writes values with the shortest representation that parses back exactly.
pub fn write_imu_csv(path: &Path, stream: &ImuStream) -> Result<()> {
    let mut out = String::with_capacity(stream.len() * 160);
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for (t, s) in stream.t.iter().zip(&stream.x) {
        out.push_str(&t.to_string());
        for v in s {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

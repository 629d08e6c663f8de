use std::path::Path;

use crate::error::{Error, Result};

pub const N_LANDMARKS: usize = 51;

/// Coordinate frame of a landmark set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameTag {
    RawPixels,
    Normalized,
}

/// Positions of the reference points within the 51-point layout.
///
/// The layout is points 18-68 of the 68-point annotation scheme, so the nose
/// tip (point 31) is index 13 and the outer eye corners (points 37 and 46)
/// are indices 19 and 28.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkIndices {
    pub nose_tip: usize,
    pub left_outer_eye: usize,
    pub right_outer_eye: usize,
}

impl Default for LandmarkIndices {
    fn default() -> Self {
        LandmarkIndices {
            nose_tip: 13,
            left_outer_eye: 19,
            right_outer_eye: 28,
        }
    }
}

impl LandmarkIndices {
    pub fn validate(&self) -> Result<()> {
        let all = [self.nose_tip, self.left_outer_eye, self.right_outer_eye];
        if all.iter().any(|&i| i >= N_LANDMARKS) {
            return Err(Error::Config(format!("landmark indices {all:?} must be < {N_LANDMARKS}")));
        }
        if self.left_outer_eye == self.right_outer_eye {
            return Err(Error::Config("eye corner indices must differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    pub tag: FrameTag,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, tag: FrameTag) -> Result<Self> {
        if points.len() != N_LANDMARKS {
            return Err(Error::shape(
                "landmark_set",
                format!("expected {N_LANDMARKS} points, got {}", points.len()),
            ));
        }
        Ok(LandmarkSet { points, tag })
    }

    /// From `x0, y0, x1, y1, ...`.
    pub fn from_interleaved(v: &[f64], tag: FrameTag) -> Result<Self> {
        if v.len() != 2 * N_LANDMARKS {
            return Err(Error::shape(
                "landmark_set",
                format!("expected {} values, got {}", 2 * N_LANDMARKS, v.len()),
            ));
        }
        Self::new(v.chunks(2).map(|p| [p[0], p[1]]).collect(), tag)
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }
}

/// Reads `frame,x0..x50,y0..y50` rows as raw-pixel sets.
pub fn read_landmark_csv(path: &Path) -> Result<Vec<LandmarkSet>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let name = path.display().to_string();
    let err = |row: usize, detail: String| Error::Parse {
        path: name.clone(),
        row,
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| err(0, e.to_string()))?;
    if header.len() != 1 + 2 * N_LANDMARKS {
        return Err(err(
            0,
            format!(
                "expected {} coordinate columns after `frame`, found {}",
                2 * N_LANDMARKS,
                header.len().saturating_sub(1)
            ),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        if rec.len() != 1 + 2 * N_LANDMARKS {
            return Err(err(
                row,
                format!(
                    "expected {} coordinate columns after `frame`, found {}",
                    2 * N_LANDMARKS,
                    rec.len().saturating_sub(1)
                ),
            ));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(row, format!("`{f}` is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let (xs, ys) = vals.split_at(N_LANDMARKS);
        out.push(LandmarkSet::new(
            xs.iter().zip(ys).map(|(&x, &y)| [x, y]).collect(),
            FrameTag::RawPixels,
        )?);
    }
    Ok(out)
}

pub fn write_landmark_csv(path: &Path, sets: &[LandmarkSet]) -> Result<()> {
    let mut out = String::from("frame");
    for i in 0..N_LANDMARKS {
        out.push_str(&format!(",x{i}"));
    }
    for i in 0..N_LANDMARKS {
        out.push_str(&format!(",y{i}"));
    }
    out.push('\n');
    for (f, s) in sets.iter().enumerate() {
        out.push_str(&f.to_string());
        for axis in 0..2 {
            for p in &s.points {
                out.push(',');
                out.push_str(&p[axis].to_string());
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(k: f64) -> LandmarkSet {
        LandmarkSet::new(
            (0..N_LANDMARKS).map(|i| [i as f64 * 1.5 + k, (i as f64 * k).cos() * 40.0]).collect(),
            FrameTag::RawPixels,
        )
        .unwrap()
    }

    #[test]
    fn two_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.csv");
        let sets = vec![set(0.3), set(1.7)];
        write_landmark_csv(&p, &sets).unwrap();
        assert_eq!(read_landmark_csv(&p).unwrap(), sets);
    }

    #[test]
    fn wrong_column_count_names_expected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.csv");
        let header: Vec<String> = std::iter::once("frame".to_string())
            .chain((0..101).map(|i| format!("c{i}")))
            .collect();
        let row: Vec<String> = (0..102).map(|i| i.to_string()).collect();
        std::fs::write(&p, format!("{}\n{}\n", header.join(","), row.join(","))).unwrap();
        let err = read_landmark_csv(&p).unwrap_err().to_string();
        assert!(err.contains("102"), "{err}");
    }

    #[test]
    fn non_finite_value_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.csv");
        write_landmark_csv(&p, &[set(0.1), set(0.2)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<&str> = lines[2].split(',').collect();
        fields[3] = "NaN";
        lines[2] = fields.join(",");
        std::fs::write(&p, lines.join("\n")).unwrap();
        match read_landmark_csv(&p).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            e => panic!("{e}"),
        }
    }
}

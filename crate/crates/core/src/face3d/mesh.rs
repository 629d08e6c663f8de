use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::rig::{evaluate_rig, BlendshapeRig, FaceParams};
use crate::error::{Error, Result};

/// Writes one Wavefront OBJ per frame (`frame_00000.obj`, ...) into `out_dir`.
pub fn export_mesh_sequence(rig: &BlendshapeRig, params: &[FaceParams], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut faces = String::new();
    for f in &rig.faces {
        writeln!(faces, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    let mut paths = Vec::with_capacity(params.len());
    for (k, p) in params.iter().enumerate() {
        let mut text = String::new();
        for v in evaluate_rig(rig, p)? {
            writeln!(text, "v {:.8} {:.8} {:.8}", v[0], v[1], v[2]).unwrap();
        }
        text.push_str(&faces);
        let path = out_dir.join(format!("frame_{k:05}.obj"));
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Vertex records of an OBJ file.
pub fn read_obj_vertices(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (row, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("v") {
            continue;
        }
        let coords: Vec<f64> = parts.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: row + 1,
            detail: format!("bad vertex: {e}"),
        })?;
        if coords.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: row + 1,
                detail: format!("vertex has {} coordinates", coords.len()),
            });
        }
        out.push([coords[0], coords[1], coords[2]]);
    }
    Ok(out)
}

/// One row per frame: `frame, beta0.., psi0.., theta_jaw`.
pub fn write_params_csv(path: &Path, params: &[FaceParams]) -> Result<()> {
    let (nb, ne) = params.first().map_or((0, 0), |p| (p.beta.len(), p.psi.len()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["frame".to_string()];
    header.extend((0..nb).map(|i| format!("beta{i}")));
    header.extend((0..ne).map(|i| format!("psi{i}")));
    header.push("theta_jaw".into());
    w.write_record(&header).map_err(csv_err)?;
    for (k, p) in params.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(p.beta.iter().chain(&p.psi).map(|v| v.to_string()));
        rec.push(p.theta_jaw.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

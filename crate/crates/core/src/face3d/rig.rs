use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::landmarks::N_LANDMARKS;
use crate::numerics::Tensor;

const CONTAINER_KIND: &str = "earsense-rig";

/// Template mesh plus linear identity/expression offsets and a jaw joint.
///
/// Bases are stored `3N x dims`, row `3 * vertex + axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeRig {
    pub template: Vec<[f64; 3]>,
    pub shape_basis: Vec<f64>,
    pub n_shape: usize,
    pub expression_basis: Vec<f64>,
    pub n_expression: usize,
    pub jaw_pivot: [f64; 3],
    /// Unit rotation axis of the jaw.
    pub jaw_axis: [f64; 3],
    /// Per-vertex blend weight of the jaw rotation, in `[0, 1]`.
    pub jaw_weights: Vec<f64>,
    /// Vertex index of each of the 51 landmarks.
    pub landmark_embedding: Vec<usize>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta_jaw: f64,
}

impl FaceParams {
    pub fn neutral(rig: &BlendshapeRig) -> Self {
        FaceParams {
            beta: vec![0.0; rig.n_shape],
            psi: vec![0.0; rig.n_expression],
            theta_jaw: 0.0,
        }
    }
}

impl BlendshapeRig {
    pub fn n_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.template.len();
        let bad = |m: String| Err(Error::Config(format!("rig: {m}")));
        if n == 0 {
            return bad("empty template".into());
        }
        if self.shape_basis.len() != 3 * n * self.n_shape {
            return bad(format!("shape basis has {} values, expected 3 * {n} * {}", self.shape_basis.len(), self.n_shape));
        }
        if self.expression_basis.len() != 3 * n * self.n_expression {
            return bad(format!(
                "expression basis has {} values, expected 3 * {n} * {}",
                self.expression_basis.len(),
                self.n_expression
            ));
        }
        if self.jaw_weights.len() != n {
            return bad(format!("{} jaw weights for {n} vertices", self.jaw_weights.len()));
        }
        if self.jaw_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return bad("jaw weights must lie in [0, 1]".into());
        }
        let norm = self.jaw_axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return bad(format!("jaw axis has length {norm}"));
        }
        if self.landmark_embedding.len() != N_LANDMARKS {
            return bad(format!("{} landmark vertices, expected {N_LANDMARKS}", self.landmark_embedding.len()));
        }
        if let Some(&i) = self.landmark_embedding.iter().find(|&&i| i >= n) {
            return bad(format!("landmark vertex {i} out of range for {n} vertices"));
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return bad(format!("face {f:?} references a missing vertex"));
        }
        let finite = self.template.iter().flatten().chain(&self.shape_basis).chain(&self.expression_basis);
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rig".into()));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let n = self.n_vertices();
        let mut c = Container::new(CONTAINER_KIND);
        c.set("n_vertices", n);
        c.set("n_shape", self.n_shape);
        c.set("n_expression", self.n_expression);
        let f64t = |shape: &[usize], v: Vec<f64>| Tensor::new(shape, v).expect("rig tensor shape");
        c.push_real("template", &f64t(&[n, 3], self.template.iter().flatten().copied().collect()));
        if self.n_shape > 0 {
            c.push_real("shape_basis", &f64t(&[3 * n, self.n_shape], self.shape_basis.clone()));
        }
        if self.n_expression > 0 {
            c.push_real("expression_basis", &f64t(&[3 * n, self.n_expression], self.expression_basis.clone()));
        }
        c.push_real("jaw_pivot", &f64t(&[3], self.jaw_pivot.to_vec()));
        c.push_real("jaw_axis", &f64t(&[3], self.jaw_axis.to_vec()));
        c.push_real("jaw_weights", &f64t(&[n], self.jaw_weights.clone()));
        c.push_u32(
            "landmark_embedding",
            &[N_LANDMARKS],
            self.landmark_embedding.iter().map(|&i| i as u32).collect(),
        );
        if !self.faces.is_empty() {
            c.push_u32(
                "faces",
                &[self.faces.len(), 3],
                self.faces.iter().flatten().map(|&i| i as u32).collect(),
            );
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != CONTAINER_KIND {
            return Err(Error::Config(format!("container holds `{}`, not a rig", c.kind)));
        }
        let n: usize = c.parse("n_vertices")?;
        let n_shape: usize = c.parse("n_shape")?;
        let n_expression: usize = c.parse("n_expression")?;
        let real = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = c.real::<f64>(name)?;
            if t.shape() != shape {
                return Err(Error::Config(format!("rig tensor `{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t.into_vec())
        };
        let template = real("template", &[n, 3])?.chunks(3).map(|v| [v[0], v[1], v[2]]).collect();
        let shape_basis = if n_shape > 0 { real("shape_basis", &[3 * n, n_shape])? } else { Vec::new() };
        let expression_basis = if n_expression > 0 {
            real("expression_basis", &[3 * n, n_expression])?
        } else {
            Vec::new()
        };
        let arr3 = |v: Vec<f64>| [v[0], v[1], v[2]];
        let (_, emb) = c.u32s("landmark_embedding")?;
        let faces = match c.u32s("faces") {
            Ok((shape, data)) if shape.len() == 2 && shape[1] == 3 => {
                data.chunks(3).map(|f| [f[0] as usize, f[1] as usize, f[2] as usize]).collect()
            }
            Ok(_) => return Err(Error::Config("rig faces must be `[F, 3]`".into())),
            Err(_) => Vec::new(),
        };
        let rig = BlendshapeRig {
            template,
            shape_basis,
            n_shape,
            expression_basis,
            n_expression,
            jaw_pivot: arr3(real("jaw_pivot", &[3])?),
            jaw_axis: arr3(real("jaw_axis", &[3])?),
            jaw_weights: real("jaw_weights", &[n])?,
            landmark_embedding: emb.iter().map(|&i| i as usize).collect(),
            faces,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    pub fn check_params(&self, p: &FaceParams) -> Result<()> {
        if p.beta.len() != self.n_shape || p.psi.len() != self.n_expression {
            return Err(Error::shape(
                "evaluate_rig",
                format!(
                    "params have {} shape / {} expression values, rig has {} / {}",
                    p.beta.len(),
                    p.psi.len(),
                    self.n_shape,
                    self.n_expression
                ),
            ));
        }
        Ok(())
    }
}

/// Rotation of `v` about the unit `axis` by `theta` (Rodrigues).
fn rotate(v: [f64; 3], axis: [f64; 3], theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    let k = axis;
    let kxv = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
    let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    std::array::from_fn(|i| v[i] * c + kxv[i] * s + k[i] * kv * (1.0 - c))
}

/// Template plus basis offsets, then the jaw rotation blended per vertex.
pub fn evaluate_rig(rig: &BlendshapeRig, p: &FaceParams) -> Result<Vec<[f64; 3]>> {
    rig.check_params(p)?;
    Ok((0..rig.n_vertices()).map(|i| vertex(rig, i, p)).collect())
}

/// The 51 embedded landmark vertices only.
pub(crate) fn landmark_vertices(rig: &BlendshapeRig, p: &FaceParams) -> Vec<[f64; 3]> {
    rig.landmark_embedding.iter().map(|&i| vertex(rig, i, p)).collect()
}

fn vertex(rig: &BlendshapeRig, i: usize, p: &FaceParams) -> [f64; 3] {
    let (nb, ne) = (rig.n_shape, rig.n_expression);
    let mut v = rig.template[i];
    for (a, va) in v.iter_mut().enumerate() {
        let row = 3 * i + a;
        let sb = &rig.shape_basis[row * nb..(row + 1) * nb];
        let eb = &rig.expression_basis[row * ne..(row + 1) * ne];
        *va += sb.iter().zip(&p.beta).map(|(b, c)| b * c).sum::<f64>()
            + eb.iter().zip(&p.psi).map(|(b, c)| b * c).sum::<f64>();
    }
    let w = rig.jaw_weights[i];
    if w == 0.0 || p.theta_jaw == 0.0 {
        return v;
    }
    let u = std::array::from_fn(|a| v[a] - rig.jaw_pivot[a]);
    let r = rotate(u, rig.jaw_axis, p.theta_jaw);
    std::array::from_fn(|a| (1.0 - w) * v[a] + w * (r[a] + rig.jaw_pivot[a]))
}

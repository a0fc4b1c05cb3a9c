//! Rigid world-to-world transforms and output grid specifications.
//!
//! A [`RigidTransform`] maps world coordinates (mm) to world coordinates.
//! `compose(first, second)` applies `first`, then `second`, so a chain of
//! registrations can be collapsed into one transform and the image is
//! interpolated a single time.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti::Geometry;

/// Elementwise tolerance for `RᵀR = I` and `det R = 1`.
pub const RIGID_TOL: f64 = 1e-9;
/// Drift above which composed rotations are re-orthonormalized.
const REORTHO_DRIFT: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RigidTransform").field("rows", &self.rows()).finish()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

fn rotation_drift(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Nearest rotation matrix (polar decomposition via SVD).
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * vt;
    }
    q
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { matrix: Matrix4::identity() }
    }

    /// Validates the rigidity invariants on a homogeneous matrix.
    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotRigid("non-finite entries".into()));
        }
        if matrix.row(3).iter().copied().ne([0.0, 0.0, 0.0, 1.0]) {
            return Err(Error::NotRigid("last row must be exactly (0,0,0,1)".into()));
        }
        let r = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let drift = rotation_drift(&r);
        if drift > RIGID_TOL {
            return Err(Error::NotRigid(format!("rotation block deviates by {drift:e}")));
        }
        Ok(Self { matrix })
    }

    /// Builds from a rotation and translation, snapping the rotation onto
    /// SO(3) if it drifted slightly.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = if rotation_drift(&rotation) > REORTHO_DRIFT {
            orthonormalize(&rotation)
        } else {
            rotation
        };
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix: m }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::from_parts(Matrix3::identity(), Vector3::from(t))
    }

    /// Rotation by `angle` radians about the world z axis through the origin.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_parts(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0), Vector3::zeros())
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(Matrix4::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Rotation angle in radians (axis-angle magnitude).
    pub fn rotation_angle(&self) -> f64 {
        let r = self.rotation();
        let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Maps `p`: homogeneous product, last coordinate dropped.
    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let h = self.matrix * Vector4::new(p[0], p[1], p[2], 1.0);
        [h.x, h.y, h.z]
    }

    pub fn apply_vec(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation_part()
    }

    /// Transform that applies `self` first, then `then`.
    pub fn then(&self, then: &RigidTransform) -> RigidTransform {
        compose(self, then)
    }

    pub fn inverse(&self) -> RigidTransform {
        invert(self)
    }

    /// Largest elementwise difference between the two matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.matrix - other.matrix).abs().max()
    }

    pub fn to_file_string(&self) -> String {
        let doc = TransformFile { kind: "rigid".into(), matrix: self.matrix.transpose().iter().copied().collect() };
        toml::to_string(&doc).expect("transform document serializes")
    }

    pub fn from_file_str(s: &str) -> Result<Self> {
        let doc: TransformFile = toml::from_str(s).map_err(|e| Error::TransformFile(e.to_string()))?;
        if doc.kind != "rigid" {
            return Err(Error::TransformFile(format!("unsupported transform kind `{}`", doc.kind)));
        }
        if doc.matrix.len() != 16 {
            return Err(Error::TransformFile(format!("expected 16 matrix entries, got {}", doc.matrix.len())));
        }
        Self::new(Matrix4::from_row_slice(&doc.matrix))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        Self::from_file_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(Error::io_at(path))
    }
}

/// On-disk transform document: `kind = "rigid"` plus the 4x4 matrix row-major.
#[derive(Debug, Serialize, Deserialize)]
struct TransformFile {
    kind: String,
    matrix: Vec<f64>,
}

/// `x ↦ second(first(x))`.
pub fn compose(first: &RigidTransform, second: &RigidTransform) -> RigidTransform {
    let m = second.matrix * first.matrix;
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t = m.fixed_view::<3, 1>(0, 3).into_owned();
    RigidTransform::from_parts(r, t)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation().transpose();
    RigidTransform::from_parts(rt, -(rt * t.translation_part()))
}

pub fn apply_point(t: &RigidTransform, p: [f64; 3]) -> [f64; 3] {
    t.apply_point(p)
}

/// Rotation from intrinsic Z-Y-X Euler angles `[about_z, about_y, about_x]`.
pub fn euler_zyx(angles: [f64; 3]) -> Matrix3<f64> {
    let (sz, cz) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sx, cx) = angles[2].sin_cos();
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    rz * ry * rx
}

/// Rotation about `center` by Z-Y-X intrinsic Euler angles, followed by
/// `translation`: `x ↦ R (x - c) + c + t`.
pub fn euler_to_transform(angles: [f64; 3], translation: [f64; 3], center: [f64; 3]) -> RigidTransform {
    let r = euler_zyx(angles);
    let c = Vector3::from(center);
    let t = c - r * c + Vector3::from(translation);
    RigidTransform::from_parts(r, t)
}

/// Output lattice: dims, spacing, origin (world position of voxel 0) and
/// orthonormal direction columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Row-major 3x3; columns are the world directions of the i, j, k axes.
    #[serde(default = "identity_rows")]
    pub direction: [[f64; 3]; 3],
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Tolerance used when accepting a direction frame read from a float32 header.
const HEADER_ORTHO_TOL: f64 = 1e-4;

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], direction: Matrix3<f64>) -> Result<Self> {
        let spec = Self {
            dims,
            spacing,
            origin,
            direction: std::array::from_fn(|r| std::array::from_fn(|c| direction[(r, c)])),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        Self { dims, spacing, origin, direction: identity_rows() }
    }

    /// 240 x 240 x 155 at 1 mm isotropic, the standard atlas output lattice.
    pub fn brats_default() -> Self {
        Self::axis_aligned([240, 240, 155], [1.0; 3], [0.0, -239.0, 0.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Geometry(format!("grid dims must be positive: {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Geometry(format!("grid spacing must be positive: {:?}", self.spacing)));
        }
        let d = self.direction_matrix();
        let err = (d.transpose() * d - Matrix3::identity()).abs().max();
        if err > RIGID_TOL {
            return Err(Error::Geometry(format!("direction columns not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    pub fn direction_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.direction[r][c])
    }

    pub fn affine(&self) -> Matrix4<f64> {
        let d = self.direction_matrix();
        let mut m = Matrix4::identity();
        for c in 0..3 {
            for r in 0..3 {
                m[(r, c)] = d[(r, c)] * self.spacing[c];
            }
            m[(c, 3)] = self.origin[c];
        }
        m
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.dims, self.spacing, self.affine())
    }

    /// Grid of an existing volume. Direction columns read from a header are
    /// snapped to the nearest orthonormal frame when they are within float32
    /// precision of one; otherwise the affine is rejected.
    pub fn from_geometry(g: &Geometry) -> Result<Self> {
        let lin = g.linear();
        let spacing = g.spacing();
        let mut dir = lin;
        for c in 0..3 {
            let n = dir.column(c).norm();
            dir.column_mut(c).scale_mut(1.0 / n);
        }
        let err = (dir.transpose() * dir - Matrix3::identity()).abs().max();
        if err > HEADER_ORTHO_TOL {
            return Err(Error::Geometry(format!(
                "affine direction columns are not orthogonal (error {err:e})"
            )));
        }
        if err > RIGID_TOL {
            let svd = dir.svd(true, true);
            dir = svd.u.unwrap() * svd.v_t.unwrap();
        }
        let a = g.affine();
        Ok(Self {
            dims: g.dims(),
            spacing,
            origin: [a[(0, 3)], a[(1, 3)], a[(2, 3)]],
            direction: std::array::from_fn(|r| std::array::from_fn(|c| dir[(r, c)])),
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index_to_world(&self, idx: [f64; 3]) -> [f64; 3] {
        let h = self.affine() * Vector4::new(idx[0], idx[1], idx[2], 1.0);
        [h.x, h.y, h.z]
    }

    /// Grid with voxels `factor` times larger. Voxel centres sit at the
    /// centres of the `factor³` blocks they summarize; a trailing partial
    /// block is dropped.
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let f = factor as f64;
        let dims = self.dims.map(|d| (d / factor).max(1));
        let spacing = self.spacing.map(|s| s * f);
        let shift = self.index_to_world([(f - 1.0) / 2.0; 3]);
        Self { dims, spacing, origin: shift, direction: self.direction }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Result, VinetError};

use super::motion::{CanonicalMotion, Point};

/// Smallest determinant accepted for a view matrix.
pub const MIN_DETERMINANT: f64 = 0.1;

/// Camera model between the canonical frame and one view: `p' = A·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewTransform {
    pub view_id: u32,
    pub matrix: [[f64; 2]; 2],
    pub translation: Point,
}

impl ViewTransform {
    pub fn new(view_id: u32, matrix: [[f64; 2]; 2], translation: Point) -> Result<Self> {
        let v = ViewTransform { view_id, matrix, translation };
        v.validate()?;
        Ok(v)
    }

    pub fn identity(view_id: u32) -> Self {
        ViewTransform { view_id, matrix: [[1.0, 0.0], [0.0, 1.0]], translation: [0.0, 0.0] }
    }

    /// `matrix` acting about `center` instead of the origin.
    pub fn about(view_id: u32, matrix: [[f64; 2]; 2], center: Point) -> Result<Self> {
        let ac =
            [matrix[0][0] * center[0] + matrix[0][1] * center[1], matrix[1][0] * center[0] + matrix[1][1] * center[1]];
        Self::new(view_id, matrix, [center[0] - ac[0], center[1] - ac[1]])
    }

    pub fn determinant(&self) -> f64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.matrix.iter().flatten().chain(&self.translation).all(|v| v.is_finite());
        if !finite || self.determinant() <= MIN_DETERMINANT {
            return Err(VinetError::contract(
                "view transform",
                format!("view {}: degenerate matrix (det {})", self.view_id, self.determinant()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.matrix;
        [m[0][0] * p[0] + m[0][1] * p[1] + self.translation[0], m[1][0] * p[0] + m[1][1] * p[1] + self.translation[1]]
    }

    pub fn apply_inverse(&self, p: Point) -> Point {
        let m = &self.matrix;
        let det = self.determinant();
        let (x, y) = (p[0] - self.translation[0], p[1] - self.translation[1]);
        [(m[1][1] * x - m[0][1] * y) / det, (-m[1][0] * x + m[0][0] * y) / det]
    }
}

fn rotation_scale_shear(degrees: f64, sx: f64, sy: f64, shear: f64) -> [[f64; 2]; 2] {
    let (s, c) = degrees.to_radians().sin_cos();
    // R · diag(sx, sy) · [[1, shear], [0, 1]]
    let a = [[c * sx, -s * sy], [s * sx, c * sy]];
    [[a[0][0], a[0][0] * shear + a[0][1]], [a[1][0], a[1][0] * shear + a[1][1]]]
}

/// Six cameras about the frame center: views 1 to 3 roughly frontal with
/// mild rotation and scale, views 4 to 6 side-on with horizontal
/// foreshortening and shear. View 2 is the identity.
pub fn default_views() -> Vec<ViewTransform> {
    let center = [0.5, 0.5];
    let table = [
        (-12.0, 0.95, 0.95, 0.0),
        (0.0, 1.0, 1.0, 0.0),
        (12.0, 1.05, 1.0, 0.0),
        (5.0, 0.6, 1.0, 0.15),
        (0.0, 0.5, 0.95, 0.0),
        (-6.0, 0.7, 0.9, -0.2),
    ];
    table
        .iter()
        .enumerate()
        .map(|(i, &(deg, sx, sy, sh))| {
            ViewTransform::about(i as u32 + 1, rotation_scale_shear(deg, sx, sy, sh), center)
                .expect("built-in views are non-degenerate")
        })
        .collect()
}

/// Every joint position mapped through `view`.
pub fn apply_view_transform(motion: &CanonicalMotion, view: &ViewTransform) -> Result<Vec<Vec<Point>>> {
    view.validate()?;
    Ok(motion.trajectories.iter().map(|tj| tj.iter().map(|&p| view.apply(p)).collect()).collect())
}

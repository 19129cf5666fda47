//! Small fixed-size linear algebra used by the game camera and the cheats.
//!
//! Matrices are column-major `[f32; 16]`: element `(row, col)` lives at
//! `col * 4 + row`. The first three columns of a rigid transform are the
//! orientation axes and the fourth column is the translation, which is also
//! the byte layout the toy game publishes in guest memory.

/// 3-component world vector, Z up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Vec3 {
    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Self { x, y, z }
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, k: f32) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn dot(self, o: Vec3) -> f32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn length(self) -> f32 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let len = self.length();
        if len == 0.0 {
            self
        } else {
            self.scale(1.0 / len)
        }
    }
}

/// Column-major 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4(pub [f32; 16]);

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4([
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ]);

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.0[col * 4 + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.0[col * 4 + row] = v;
    }

    pub fn mul(&self, rhs: &Mat4) -> Mat4 {
        let mut out = [0.0f32; 16];
        for col in 0..4 {
            for row in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += self.at(row, k) * rhs.at(k, col);
                }
                out[col * 4 + row] = acc;
            }
        }
        Mat4(out)
    }

    /// Multiply by `(v, w)` treated as a column vector; returns (x, y, z, w).
    pub fn transform(&self, v: Vec3, w: f32) -> [f32; 4] {
        let mut out = [0.0f32; 4];
        for row in 0..4 {
            out[row] = self.at(row, 0) * v.x
                + self.at(row, 1) * v.y
                + self.at(row, 2) * v.z
                + self.at(row, 3) * w;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// World-to-view transform for a camera at `eye` with the given basis.
    /// Columns 1-3 hold the orientation axes, column 4 the translation, and
    /// the bottom row stays `(0, 0, 0, 1)`.
    pub fn look_basis(eye: Vec3, right: Vec3, up: Vec3, forward: Vec3) -> Mat4 {
        // View space: x = right, y = up, z = -forward (right-handed).
        let mut m = Mat4::IDENTITY;
        m.set(0, 0, right.x);
        m.set(0, 1, right.y);
        m.set(0, 2, right.z);
        m.set(1, 0, up.x);
        m.set(1, 1, up.y);
        m.set(1, 2, up.z);
        m.set(2, 0, -forward.x);
        m.set(2, 1, -forward.y);
        m.set(2, 2, -forward.z);
        m.set(0, 3, -right.dot(eye));
        m.set(1, 3, -up.dot(eye));
        m.set(2, 3, forward.dot(eye));
        m
    }

    /// Symmetric perspective projection; `vfov` in radians.
    pub fn perspective(vfov: f32, aspect: f32, near: f32, far: f32) -> Mat4 {
        let f = 1.0 / (vfov * 0.5).tan();
        let mut m = Mat4([0.0; 16]);
        m.set(0, 0, f / aspect);
        m.set(1, 1, f);
        m.set(2, 2, (far + near) / (near - far));
        m.set(2, 3, 2.0 * far * near / (near - far));
        m.set(3, 2, -1.0);
        m
    }
}

/// Camera basis for a Z-up world: yaw rotates about +Z (yaw 0 faces +X),
/// pitch tilts toward +Z.
pub fn camera_basis(yaw: f32, pitch: f32) -> (Vec3, Vec3, Vec3) {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let forward = Vec3::new(cy * cp, sy * cp, sp);
    let right = Vec3::new(sy, -cy, 0.0);
    let up = Vec3::new(-cy * sp, -sy * sp, cp);
    (right, up, forward)
}

/// Clip-space w below this counts as "behind the camera".
pub const W_EPSILON: f32 = 1e-4;

/// Project a world point through a world-to-clip matrix onto a screen of
/// `(width, height)` pixels. `None` when the point is behind the camera.
pub fn project_to_screen(point: Vec3, world_to_clip: &Mat4, screen: (f32, f32)) -> Option<(f32, f32)> {
    let clip = world_to_clip.transform(point, 1.0);
    if clip[3] <= W_EPSILON {
        return None;
    }
    let ndc_x = clip[0] / clip[3];
    let ndc_y = clip[1] / clip[3];
    Some(((ndc_x + 1.0) * 0.5 * screen.0, (1.0 - ndc_y) * 0.5 * screen.1))
}

/// Axis-aligned screen rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenRect {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl ScreenRect {
    pub fn contains(&self, px: f32, py: f32) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    /// Clip to `[0,0]..screen`; `None` when nothing remains.
    pub fn clipped(&self, screen: (f32, f32)) -> Option<ScreenRect> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(screen.0);
        let y1 = (self.y + self.h).min(screen.1);
        if x0 >= x1 || y0 >= y1 {
            return None;
        }
        Some(ScreenRect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
    }
}

/// Rectangle framing an entity: feet at `feet`, head at `feet + height * z`,
/// projected separately; the box width is half its height, the usual
/// humanoid framing.
pub fn entity_screen_rect(
    feet: Vec3,
    height: f32,
    world_to_clip: &Mat4,
    screen: (f32, f32),
) -> Option<ScreenRect> {
    let (fx, fy) = project_to_screen(feet, world_to_clip, screen)?;
    let (hx, hy) = project_to_screen(feet.add(Vec3::new(0.0, 0.0, height)), world_to_clip, screen)?;
    let h = (fy - hy).abs();
    let w = h * 0.5;
    let cx = (fx + hx) * 0.5;
    Some(ScreenRect { x: cx - w * 0.5, y: fy.min(hy), w, h })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_transform_is_noop() {
        let v = Vec3::new(1.5, -2.0, 3.25);
        assert_eq!(Mat4::IDENTITY.transform(v, 1.0), [1.5, -2.0, 3.25, 1.0]);
    }

    #[test]
    fn camera_basis_is_orthonormal() {
        for &(yaw, pitch) in &[(0.0f32, 0.0f32), (1.2, -0.4), (-2.8, 0.9)] {
            let (r, u, f) = camera_basis(yaw, pitch);
            assert!((r.length() - 1.0).abs() < 1e-5);
            assert!((u.length() - 1.0).abs() < 1e-5);
            assert!((f.length() - 1.0).abs() < 1e-5);
            assert!(r.dot(u).abs() < 1e-5);
            assert!(r.dot(f).abs() < 1e-5);
            assert!(u.dot(f).abs() < 1e-5);
        }
    }

    #[test]
    fn view_matrix_keeps_affine_bottom_row() {
        let (r, u, f) = camera_basis(0.7, 0.2);
        let m = Mat4::look_basis(Vec3::new(10.0, 20.0, 30.0), r, u, f);
        assert_eq!(m.at(3, 0), 0.0);
        assert_eq!(m.at(3, 1), 0.0);
        assert_eq!(m.at(3, 2), 0.0);
        assert_eq!(m.at(3, 3), 1.0);
    }

    #[test]
    fn view_matrix_moves_eye_to_origin() {
        let eye = Vec3::new(5.0, -3.0, 7.0);
        let (r, u, f) = camera_basis(2.1, -0.3);
        let m = Mat4::look_basis(eye, r, u, f);
        let out = m.transform(eye, 1.0);
        for v in &out[..3] {
            assert!(v.abs() < 1e-4);
        }
    }

    #[test]
    fn forward_points_down_negative_view_z() {
        let (r, u, f) = camera_basis(0.9, 0.1);
        let m = Mat4::look_basis(Vec3::default(), r, u, f);
        let out = m.transform(f, 1.0);
        assert!(out[2] < -0.999);
    }
}

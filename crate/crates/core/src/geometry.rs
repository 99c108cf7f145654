//! Head pose from facial landmarks and per-scene frontal frame selection.
//!
//! Camera convention: pinhole looking down +Z with the model's +Y pointing up
//! in the image, i.e. `u = cx + f·x/z`, `v = cy − f·y/z`. An upright face
//! looking straight into the camera therefore has identity rotation.
//! Euler angles decompose `R = Ry(yaw) · Rx(pitch) · Rz(roll)`.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{NoFrontalFrameError, PoseSolveError};

pub const LANDMARK_COUNT: usize = 68;

/// iBUG-68 indices of nose tip, chin, left/right outer eye corner and
/// left/right mouth corner.
pub const PNP_LANDMARKS: [usize; 6] = [30, 8, 36, 45, 48, 54];

/// Generic head model matching `PNP_LANDMARKS`, nose tip at the origin.
pub const FACE_MODEL_3D: [[f64; 3]; 6] = [
    [0.0, 0.0, 0.0],
    [0.0, -330.0, -65.0],
    [-225.0, 170.0, -135.0],
    [225.0, 170.0, -135.0],
    [-150.0, -150.0, -125.0],
    [150.0, -150.0, -125.0],
];

const MAX_ITERATIONS: usize = 100;
const UPDATE_TOLERANCE: f64 = 1e-8;
const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e12;
const DIVERGENCE_RMSE: f64 = 1e3;
const COLLINEAR_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, String> {
        if points.len() != LANDMARK_COUNT {
            return Err(format!("expected {LANDMARK_COUNT} landmarks, got {}", points.len()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err("landmark coordinates must be finite".into());
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Parses 68 lines of `x y`. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => points.push([x, y]),
                _ => return Err(format!("line {}: expected `x y`", n + 1)),
            }
        }
        Self::new(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    /// Uncalibrated portrait camera: focal length equal to the image width,
    /// principal point at the image centre.
    pub fn for_image(width: u32, height: u32) -> Self {
        Self { focal: f64::from(width), cx: f64::from(width) / 2.0, cy: f64::from(height) / 2.0 }
    }

    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        [self.cx + self.focal * p.x / p.z, self.cy - self.focal * p.y / p.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    /// Axis-angle, radians.
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    pub reprojection_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub initial_rmse: f64,
    pub iterations: usize,
}

pub fn select_pnp_points(lm: &LandmarkSet) -> [[f64; 2]; 6] {
    PNP_LANDMARKS.map(|i| lm.points[i])
}

/// Fraction of landmarks inside `[0, width) × [0, height)`.
pub fn landmark_coverage(lm: &LandmarkSet, width: u32, height: u32) -> f64 {
    let (w, h) = (f64::from(width), f64::from(height));
    let inside = lm
        .points
        .iter()
        .filter(|[x, y]| (0.0..w).contains(x) && (0.0..h).contains(y))
        .count();
    inside as f64 / LANDMARK_COUNT as f64
}

/// `Ry(yaw) · Rx(pitch) · Rz(roll)`, angles in degrees.
pub fn rotation_from_euler(pitch: f64, yaw: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), yaw.to_radians())
        * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch.to_radians())
        * Rotation3::from_axis_angle(&Vector3::z_axis(), roll.to_radians())
}

fn wrap_degrees(a: f64) -> f64 {
    if a <= -180.0 {
        a + 360.0
    } else {
        a
    }
}

/// Inverse of `rotation_from_euler`: `(pitch, yaw, roll)` in degrees.
pub fn euler_from_rotation(r: &Rotation3<f64>) -> (f64, f64, f64) {
    let m = r.matrix();
    let sp = (-m[(1, 2)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let (yaw, roll) = if sp.abs() < 1.0 - 1e-12 {
        (m[(0, 2)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(1, 1)]))
    } else {
        // Gimbal lock: fold everything into yaw.
        ((-m[(2, 0)]).atan2(m[(0, 0)]), 0.0)
    };
    (
        wrap_degrees(pitch.to_degrees()),
        wrap_degrees(yaw.to_degrees()),
        wrap_degrees(roll.to_degrees()),
    )
}

/// Projects model points under rotation `r` and translation `t`.
pub fn project_points(model: &[[f64; 3]], r: &Rotation3<f64>, t: &Vector3<f64>, cam: &CameraModel) -> Vec<[f64; 2]> {
    model
        .iter()
        .map(|p| cam.project(&(r * Vector3::from(*p) + t)))
        .collect()
}

fn is_degenerate(points: &[[f64; 2]]) -> bool {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let trace = sxx + syy;
    if trace <= f64::EPSILON {
        return true;
    }
    let det = sxx * syy - sxy * sxy;
    let disc = ((sxx - syy) * (sxx - syy) / 4.0 + sxy * sxy).sqrt();
    let lambda_max = trace / 2.0 + disc;
    let lambda_min = det / lambda_max;
    // Spread across the thinnest direction relative to the widest one.
    (lambda_min.max(0.0) / lambda_max).sqrt() < COLLINEAR_TOLERANCE
}

struct Problem<'a> {
    observed: &'a [[f64; 2]],
    model: Vec<Vector3<f64>>,
    cam: CameraModel,
}

impl Problem<'_> {
    /// Sum of squared reprojection errors; infinite if any point is behind the
    /// camera.
    fn cost(&self, r: &Rotation3<f64>, t: &Vector3<f64>) -> f64 {
        let mut cost = 0.0;
        for (x, obs) in self.model.iter().zip(self.observed) {
            let pc = r * x + t;
            if pc.z <= 1e-9 {
                return f64::INFINITY;
            }
            let [u, v] = self.cam.project(&pc);
            cost += (u - obs[0]).powi(2) + (v - obs[1]).powi(2);
        }
        cost
    }

    /// Normal equations `JᵀJ` and `Jᵀr` for a left-multiplied rotation
    /// increment followed by a translation increment.
    fn normal_equations(&self, r: &Rotation3<f64>, t: &Vector3<f64>) -> (Matrix6<f64>, Vector6<f64>) {
        let f = self.cam.focal;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (x, obs) in self.model.iter().zip(self.observed) {
            let rx = r * x;
            let pc = rx + t;
            let [u, v] = self.cam.project(&pc);
            let iz = 1.0 / pc.z;
            let du = Vector3::new(f * iz, 0.0, -f * pc.x * iz * iz);
            let dv = Vector3::new(0.0, -f * iz, f * pc.y * iz * iz);
            // d(pc)/d(omega) = -[rx]_x
            let skew = Matrix3::new(0.0, -rx.z, rx.y, rx.z, 0.0, -rx.x, -rx.y, rx.x, 0.0);
            let drot = -skew;
            for (d, res) in [(du, u - obs[0]), (dv, v - obs[1])] {
                let jr = drot.transpose() * d;
                let row = Vector6::new(jr.x, jr.y, jr.z, d.x, d.y, d.z);
                jtj += row * row.transpose();
                jtr += row * res;
            }
        }
        (jtj, jtr)
    }

    fn initial_guess(&self) -> (Rotation3<f64>, Vector3<f64>) {
        let n = self.observed.len() as f64;
        let mean2 = self.observed.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
        let mean3 = self.model.iter().fold(Vector3::zeros(), |a, p| a + p / n);
        let spread2 = (self
            .observed
            .iter()
            .map(|p| (p[0] - mean2[0]).powi(2) + (p[1] - mean2[1]).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let spread3 = (self
            .model
            .iter()
            .map(|p| (p.x - mean3.x).powi(2) + (p.y - mean3.y).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let depth = self.cam.focal * spread3 / spread2.max(f64::EPSILON);
        let t = Vector3::new(
            (mean2[0] - self.cam.cx) * depth / self.cam.focal - mean3.x,
            -(mean2[1] - self.cam.cy) * depth / self.cam.focal - mean3.y,
            depth - mean3.z,
        );
        (Rotation3::identity(), t)
    }
}

pub fn solve_pnp(points2d: &[[f64; 2]], model3d: &[[f64; 3]], cam: &CameraModel) -> Result<HeadPose, PoseSolveError> {
    solve_pnp_detailed(points2d, model3d, cam).map(|(pose, _)| pose)
}

/// Damped Gauss–Newton (Levenberg–Marquardt) minimization of the summed
/// squared reprojection error, starting from identity rotation at the depth
/// implied by the ratio of model and image spreads.
pub fn solve_pnp_detailed(
    points2d: &[[f64; 2]],
    model3d: &[[f64; 3]],
    cam: &CameraModel,
) -> Result<(HeadPose, SolveStats), PoseSolveError> {
    if points2d.len() != model3d.len() || points2d.len() < 4 {
        return Err(PoseSolveError::PointCount { points2d: points2d.len(), points3d: model3d.len() });
    }
    if points2d.iter().flatten().any(|v| !v.is_finite()) || is_degenerate(points2d) {
        return Err(PoseSolveError::Degenerate);
    }
    let problem = Problem { observed: points2d, model: model3d.iter().map(|p| Vector3::from(*p)).collect(), cam: *cam };
    let n = points2d.len() as f64;

    let (mut r, mut t) = problem.initial_guess();
    let mut cost = problem.cost(&r, &t);
    let initial_rmse = (cost / n).sqrt();
    let mut lambda = INITIAL_DAMPING;
    let mut iterations = 0;

    'outer: while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(&r, &t);
        loop {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > MAX_DAMPING {
                    break 'outer;
                }
                continue;
            };
            let delta = -chol.solve(&jtr);
            let omega = Vector3::new(delta[0], delta[1], delta[2]);
            let r_new = Rotation3::new(omega) * r;
            let t_new = t + Vector3::new(delta[3], delta[4], delta[5]);
            let cost_new = problem.cost(&r_new, &t_new);
            if cost_new < cost {
                r = r_new;
                t = t_new;
                cost = cost_new;
                lambda = (lambda / 10.0).max(1e-15);
                if delta.norm() < UPDATE_TOLERANCE {
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING || delta.norm() < UPDATE_TOLERANCE {
                break 'outer;
            }
        }
    }

    let rmse = (cost / n).sqrt();
    if !rmse.is_finite() || rmse > DIVERGENCE_RMSE {
        return Err(PoseSolveError::Diverged { rmse });
    }
    debug_assert!(rmse <= initial_rmse || !initial_rmse.is_finite());
    let (pitch, yaw, roll) = euler_from_rotation(&r);
    let axis = r.scaled_axis();
    Ok((
        HeadPose {
            rotation: [axis.x, axis.y, axis.z],
            translation: [t.x, t.y, t.z],
            pitch,
            yaw,
            roll,
            reprojection_rmse: rmse,
        },
        SolveStats { initial_rmse, iterations },
    ))
}

/// Head pose of a full landmark set via the six keypoints.
pub fn pose_from_landmarks(lm: &LandmarkSet, cam: &CameraModel) -> Result<HeadPose, PoseSolveError> {
    solve_pnp(&select_pnp_points(lm), &FACE_MODEL_3D, cam)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontalCandidate {
    pub frame_index: u64,
    pub pitch: f64,
    pub yaw: f64,
    pub coverage: f64,
}

impl FrontalCandidate {
    pub fn new(frame_index: u64, pose: &HeadPose, coverage: f64) -> Self {
        Self { frame_index, pitch: pose.pitch, yaw: pose.yaw, coverage }
    }

    fn objective(&self) -> f64 {
        self.pitch.abs() + self.yaw.abs()
    }
}

/// The candidate with the smallest `|pitch| + |yaw|` among those whose
/// landmark coverage reaches `coverage_min`; lower frame index wins ties.
pub fn select_frontal(candidates: &[FrontalCandidate], coverage_min: f64) -> Result<u64, NoFrontalFrameError> {
    candidates
        .iter()
        .filter(|c| c.coverage >= coverage_min && c.objective().is_finite())
        .min_by(|a, b| a.objective().total_cmp(&b.objective()).then(a.frame_index.cmp(&b.frame_index)))
        .map(|c| c.frame_index)
        .ok_or(NoFrontalFrameError { coverage_min: coverage_min.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent forward projection: explicit Euler matrices, no nalgebra
    /// rotation helpers.
    fn oracle_project(pitch: f64, yaw: f64, roll: f64, t: [f64; 3], focal: f64, cx: f64, cy: f64) -> Vec<[f64; 2]> {
        let (p, y, r) = (pitch.to_radians(), yaw.to_radians(), roll.to_radians());
        let ry = [[y.cos(), 0.0, y.sin()], [0.0, 1.0, 0.0], [-y.sin(), 0.0, y.cos()]];
        let rx = [[1.0, 0.0, 0.0], [0.0, p.cos(), -p.sin()], [0.0, p.sin(), p.cos()]];
        let rz = [[r.cos(), -r.sin(), 0.0], [r.sin(), r.cos(), 0.0], [0.0, 0.0, 1.0]];
        let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            m
        };
        let m = mul(mul(ry, rx), rz);
        FACE_MODEL_3D
            .iter()
            .map(|x| {
                let c: Vec<f64> = (0..3).map(|i| (0..3).map(|k| m[i][k] * x[k]).sum::<f64>() + t[i]).collect();
                [cx + focal * c[0] / c[2], cy - focal * c[1] / c[2]]
            })
            .collect()
    }

    fn cam() -> CameraModel {
        CameraModel { focal: 640.0, cx: 320.0, cy: 240.0 }
    }

    fn landmarks_with(overrides: &[(usize, [f64; 2])]) -> LandmarkSet {
        let mut pts = vec![[10.0, 10.0]; LANDMARK_COUNT];
        for &(i, p) in overrides {
            pts[i] = p;
        }
        LandmarkSet::new(pts).unwrap()
    }

    #[test]
    fn pnp_point_selection() {
        let lm = landmarks_with(&[(30, [100.0, 120.0]), (8, [98.0, 200.0])]);
        let six = select_pnp_points(&lm);
        assert_eq!(six[0], [100.0, 120.0]);
        assert_eq!(six[1], [98.0, 200.0]);
        let zero = LandmarkSet::new(vec![[0.0, 0.0]; LANDMARK_COUNT]).unwrap();
        assert_eq!(select_pnp_points(&zero), [[0.0, 0.0]; 6]);
    }

    #[test]
    fn identity_pose_recovered() {
        let pts = oracle_project(0.0, 0.0, 0.0, [0.0, 0.0, 1000.0], 640.0, 320.0, 240.0);
        let pose = solve_pnp(&pts, &FACE_MODEL_3D, &cam()).unwrap();
        assert!(pose.pitch.abs() < 0.1 && pose.yaw.abs() < 0.1 && pose.roll.abs() < 0.1, "{pose:?}");
        assert!(pose.reprojection_rmse < 1e-6, "{pose:?}");
        assert!((pose.translation[2] - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn yaw_and_pitch_recovered() {
        let pts = oracle_project(-10.0, 15.0, 0.0, [0.0, 0.0, 1000.0], 640.0, 320.0, 240.0);
        let pose = solve_pnp(&pts, &FACE_MODEL_3D, &cam()).unwrap();
        assert!((pose.pitch + 10.0).abs() < 0.5, "{pose:?}");
        assert!((pose.yaw - 15.0).abs() < 0.5, "{pose:?}");
    }

    #[test]
    fn collinear_points_rejected() {
        let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 * 10.0, i as f64 * 5.0 + 3.0]).collect();
        assert_eq!(solve_pnp(&pts, &FACE_MODEL_3D, &cam()).unwrap_err(), PoseSolveError::Degenerate);
        let same = vec![[5.0, 5.0]; 6];
        assert_eq!(solve_pnp(&same, &FACE_MODEL_3D, &cam()).unwrap_err(), PoseSolveError::Degenerate);
    }

    #[test]
    fn euler_round_trip() {
        for &(p, y, r) in &[(10.0, -20.0, 5.0), (-44.0, 44.0, 29.0), (0.0, 179.0, -60.0)] {
            let (pp, yy, rr) = euler_from_rotation(&rotation_from_euler(p, y, r));
            assert!((pp - p).abs() < 1e-9 && (yy - y).abs() < 1e-9 && (rr - r).abs() < 1e-9);
        }
    }

    #[test]
    fn library_projection_matches_oracle() {
        let lib = project_points(&FACE_MODEL_3D, &rotation_from_euler(12.0, -30.0, 7.0), &Vector3::new(5.0, -3.0, 900.0), &cam());
        let ora = oracle_project(12.0, -30.0, 7.0, [5.0, -3.0, 900.0], 640.0, 320.0, 240.0);
        for (a, b) in lib.iter().zip(&ora) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn solver_is_deterministic_and_descends() {
        let pts = oracle_project(20.0, -35.0, 12.0, [30.0, -20.0, 1100.0], 640.0, 320.0, 240.0);
        let (a, stats) = solve_pnp_detailed(&pts, &FACE_MODEL_3D, &cam()).unwrap();
        let (b, _) = solve_pnp_detailed(&pts, &FACE_MODEL_3D, &cam()).unwrap();
        assert_eq!(a, b);
        assert!(a.reprojection_rmse <= stats.initial_rmse);
    }

    #[test]
    fn coverage_counts() {
        let inside = LandmarkSet::new(vec![[1.0, 1.0]; LANDMARK_COUNT]).unwrap();
        assert_eq!(landmark_coverage(&inside, 10, 10), 1.0);
        let outside = LandmarkSet::new(vec![[-1.0, -1.0]; LANDMARK_COUNT]).unwrap();
        assert_eq!(landmark_coverage(&outside, 10, 10), 0.0);
        let mut pts = vec![[1.0, 1.0]; 51];
        pts.extend(vec![[10.0, 1.0]; 17]);
        assert_eq!(landmark_coverage(&LandmarkSet::new(pts).unwrap(), 10, 10), 51.0 / 68.0);
    }

    #[test]
    fn frontal_selection() {
        let c = |i, p: f64, y: f64, cov| FrontalCandidate { frame_index: i, pitch: p, yaw: y, coverage: cov };
        assert_eq!(select_frontal(&[c(4, 30.0, 1.0, 1.0)], 0.8).unwrap(), 4);
        let set = [c(0, 6.0, -6.0, 1.0), c(1, -1.0, 2.0, 0.9), c(2, 3.0, 4.0, 1.0)];
        assert_eq!(select_frontal(&set, 0.8).unwrap(), 1);
        let low = [c(0, 0.0, 0.0, 0.5), c(1, 1.0, 0.0, 0.5)];
        assert!(select_frontal(&low, 0.8).is_err());
        let tie = [c(9, 1.0, 1.0, 1.0), c(3, -1.0, 1.0, 1.0)];
        assert_eq!(select_frontal(&tie, 0.8).unwrap(), 3);
    }

    #[test]
    fn landmark_file_parsing() {
        let text: String = (0..68).map(|i| format!("{i} {}\n", i * 2)).collect();
        let lm = LandmarkSet::parse(&format!("# header\n{text}")).unwrap();
        assert_eq!(lm.points()[30], [30.0, 60.0]);
        assert!(LandmarkSet::parse("1 2\n").is_err());
        assert!(LandmarkSet::parse("1 two\n").is_err());
    }
}

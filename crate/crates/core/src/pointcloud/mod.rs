//! Data model for radar scans and sequences: per-point measurements with
//! motion labels, homogeneous pose transforms, window assembly (alignment
//! and padding), augmentation, the synthetic scene generator, and the
//! on-disk sequence format.

mod augment;
mod io;
mod synth;

pub use augment::{augment, augment_window, augment_with, sample_draws, AugmentDraws, Flip};
pub use io::{list_sequences, read_sequence, write_sequence, SequenceData};
pub use synth::{scene_stats, synth_scene, SceneStats, SyntheticSceneConfig};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::sampling::Point;

/// Number of zero-feature points in a padded previous scan.
pub const PAD_POINTS: usize = 1024;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MotionLabel {
    Static,
    Moving,
}

/// One radar detection: position (m), radar cross section (dBsm), and the
/// ego-motion-compensated Doppler velocity (m/s), plus ground-truth label
/// and instance id. Instance ids exist exactly for moving points.
#[derive(Clone, Debug)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rcs: f64,
    pub doppler: f64,
    pub label: MotionLabel,
    pub instance_id: Option<u32>,
}

impl RadarPoint {
    pub fn new(
        x: f64,
        y: f64,
        z: f64,
        rcs: f64,
        doppler: f64,
        label: MotionLabel,
        instance_id: Option<u32>,
    ) -> Result<RadarPoint> {
        for v in [x, y, z, rcs, doppler] {
            if !v.is_finite() {
                return Err(Error::InvalidData("non-finite point field".into()));
            }
        }
        match (label, instance_id) {
            (MotionLabel::Moving, None) => {
                return Err(Error::InvalidData("moving point without instance id".into()))
            }
            (MotionLabel::Static, Some(_)) => {
                return Err(Error::InvalidData("static point with instance id".into()))
            }
            _ => {}
        }
        Ok(RadarPoint {
            x,
            y,
            z,
            rcs,
            doppler,
            label,
            instance_id,
        })
    }

    pub fn position(&self) -> Point {
        [self.x, self.y, self.z]
    }

    pub fn is_moving(&self) -> bool {
        self.label == MotionLabel::Moving
    }
}

/// Homogeneous 4x4 world-from-sensor transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose(pub [f64; 16]);

impl Pose {
    pub fn identity() -> Pose {
        let mut m = [0.0; 16];
        m[0] = 1.0;
        m[5] = 1.0;
        m[10] = 1.0;
        m[15] = 1.0;
        Pose(m)
    }

    pub fn translation(t: [f64; 3]) -> Pose {
        let mut p = Pose::identity();
        p.0[3] = t[0];
        p.0[7] = t[1];
        p.0[11] = t[2];
        p
    }

    pub fn rotation_z(yaw: f64) -> Pose {
        let (s, c) = yaw.sin_cos();
        let mut p = Pose::identity();
        p.0[0] = c;
        p.0[1] = -s;
        p.0[4] = s;
        p.0[5] = c;
        p
    }

    pub fn from_row_major(m: &[f64]) -> Result<Pose> {
        if m.len() != 16 {
            return Err(Error::InvalidData(format!(
                "pose needs 16 values, got {}",
                m.len()
            )));
        }
        let pose = Pose(m.try_into().unwrap());
        pose.validate()?;
        Ok(pose)
    }

    /// Checks the homogeneous structure: bottom row `(0,0,0,1)` and an
    /// orthonormal rotation block within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::contract("pose bottom row must be (0,0,0,1)".into()));
        }
        for r in 0..3 {
            for c in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += m[r * 4 + k] * m[c * 4 + k];
                }
                let expect = if r == c { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(Error::contract(
                        "pose rotation block is not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn mul(&self, other: &Pose) -> Pose {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += self.0[r * 4 + k] * other.0[k * 4 + c];
                }
                out[r * 4 + c] = acc;
            }
        }
        Pose(out)
    }

    /// Rigid inverse `[R^T, -R^T t]`. Validates first; a malformed pose is a
    /// contract error rather than a garbage transform.
    pub fn inverse(&self) -> Result<Pose> {
        self.validate()?;
        let m = &self.0;
        let mut out = Pose::identity();
        for r in 0..3 {
            for c in 0..3 {
                out.0[r * 4 + c] = m[c * 4 + r];
            }
        }
        let t = [m[3], m[7], m[11]];
        for r in 0..3 {
            out.0[r * 4 + 3] = -(out.0[r * 4] * t[0] + out.0[r * 4 + 1] * t[1] + out.0[r * 4 + 2] * t[2]);
        }
        Ok(out)
    }

    pub fn apply(&self, p: &Point) -> Point {
        let m = &self.0;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    pub fn translation_part(&self) -> [f64; 3] {
        [self.0[3], self.0[7], self.0[11]]
    }
}

/// One radar scan: points in the sensor frame, a timestamp, and the
/// world-from-sensor pose. `padded` marks synthetic filler scans.
#[derive(Clone, Debug)]
pub struct Scan {
    pub points: Vec<RadarPoint>,
    pub timestamp: f64,
    pub pose: Pose,
    pub padded: bool,
}

impl Scan {
    pub fn new(points: Vec<RadarPoint>, timestamp: f64, pose: Pose) -> Result<Scan> {
        pose.validate()?;
        Ok(Scan {
            points,
            timestamp,
            pose,
            padded: false,
        })
    }

    /// A padding scan: `PAD_POINTS` all-zero-feature static points at the
    /// sensor origin. Carries the reference pose so alignment leaves the
    /// zero coordinates untouched.
    pub fn padding(reference: &Scan) -> Scan {
        let points = (0..PAD_POINTS)
            .map(|_| RadarPoint {
                x: 0.0,
                y: 0.0,
                z: 0.0,
                rcs: 0.0,
                doppler: 0.0,
                label: MotionLabel::Static,
                instance_id: None,
            })
            .collect();
        Scan {
            points,
            timestamp: reference.timestamp,
            pose: reference.pose,
            padded: true,
        }
    }

    pub fn positions(&self) -> Vec<Point> {
        self.points.iter().map(|p| p.position()).collect()
    }
}

/// Current scan plus its `T` predecessors, oldest first.
#[derive(Clone, Debug)]
pub struct SequenceWindow {
    pub current: Scan,
    pub previous: Vec<Scan>,
    pub aligned: bool,
}

impl SequenceWindow {
    pub fn new(current: Scan, previous: Vec<Scan>) -> SequenceWindow {
        SequenceWindow {
            current,
            previous,
            aligned: false,
        }
    }

    /// All previous scans merged into one point set (oldest first), in
    /// whatever frame the scans currently are.
    pub fn aggregated_previous(&self) -> Vec<RadarPoint> {
        self.previous
            .iter()
            .flat_map(|s| s.points.iter().cloned())
            .collect()
    }
}

/// Expresses every previous scan in the current scan's frame by applying
/// `current_pose^-1 * previous_pose` to the coordinates. Doppler and RCS are
/// untouched; the current scan is untouched.
pub fn align_previous(window: &SequenceWindow) -> Result<SequenceWindow> {
    let inv_current = window.current.pose.inverse()?;
    let mut previous = Vec::with_capacity(window.previous.len());
    for scan in &window.previous {
        let rel = inv_current.mul(&scan.pose);
        let mut s = scan.clone();
        for p in s.points.iter_mut() {
            let q = rel.apply(&p.position());
            p.x = q[0];
            p.y = q[1];
            p.z = q[2];
        }
        s.pose = window.current.pose;
        previous.push(s);
    }
    Ok(SequenceWindow {
        current: window.current.clone(),
        previous,
        aligned: true,
    })
}

/// Fills the window with padding scans at the oldest positions until it has
/// exactly `t` previous scans. Idempotent; a window that already has `t`
/// previous scans is returned unchanged.
pub fn pad_previous(window: &SequenceWindow, t: usize) -> Result<SequenceWindow> {
    if window.previous.len() > t {
        return Err(Error::contract(format!(
            "window has {} previous scans, more than T = {t}",
            window.previous.len()
        )));
    }
    let missing = t - window.previous.len();
    let mut previous = Vec::with_capacity(t);
    for _ in 0..missing {
        previous.push(Scan::padding(&window.current));
    }
    previous.extend(window.previous.iter().cloned());
    Ok(SequenceWindow {
        current: window.current.clone(),
        previous,
        aligned: window.aligned,
    })
}

/// Per-point input features `(x, y, z, rcs, v)` in scan order, as an `N x 5`
/// tensor. Empty scans give a `0 x 5` tensor.
pub fn feature_matrix(scan: &Scan) -> Tensor {
    let n = scan.points.len();
    let mut data = Vec::with_capacity(n * 5);
    for p in &scan.points {
        data.extend_from_slice(&[p.x, p.y, p.z, p.rcs, p.doppler]);
    }
    Tensor::new(&[n, 5], data).expect("scan points are finite by construction")
}

/// Builds one window per frame of a sequence: frame `i` is current, up to
/// `t` preceding frames (oldest first) are previous. Windows are neither
/// padded nor aligned yet.
pub fn windows_from_scans(scans: &[Scan], t: usize) -> Vec<SequenceWindow> {
    (0..scans.len())
        .map(|i| {
            let lo = i.saturating_sub(t);
            SequenceWindow::new(scans[i].clone(), scans[lo..i].to_vec())
        })
        .collect()
}

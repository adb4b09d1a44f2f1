//! Training-time augmentation: Gaussian jitter (variance 0.01), uniform
//! scaling in [0.95, 1.05], shifting within ±0.1 m, and a random mirror
//! flip. Coordinates only; RCS, Doppler, labels, and instance ids are
//! preserved. Transforms apply as scale, then flip, then shift, then jitter.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Scan, SequenceWindow};

pub const JITTER_STD: f64 = 0.1; // variance 0.01
pub const SCALE_RANGE: (f64, f64) = (0.95, 1.05);
pub const SHIFT_RANGE: f64 = 0.1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Flip {
    None,
    /// Mirror about the x-axis: negates y.
    AboutX,
    /// Mirror about the y-axis: negates x.
    AboutY,
}

/// Concrete draws for one augmentation application. Jitter is per point and
/// consumed in point order; the other draws are shared by the whole scan.
#[derive(Clone, Debug)]
pub struct AugmentDraws {
    pub scale: f64,
    pub shift: [f64; 3],
    pub flip: Flip,
    pub jitter: Vec<[f64; 3]>,
}

impl AugmentDraws {
    pub fn identity(n: usize) -> AugmentDraws {
        AugmentDraws {
            scale: 1.0,
            shift: [0.0; 3],
            flip: Flip::None,
            jitter: vec![[0.0; 3]; n],
        }
    }
}

/// Samples one set of draws for a scan of `n` points.
pub fn sample_draws(n: usize, rng: &mut impl Rng) -> AugmentDraws {
    let normal = Normal::new(0.0, JITTER_STD).expect("valid std");
    let scale = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
    let shift = [
        rng.gen_range(-SHIFT_RANGE..=SHIFT_RANGE),
        rng.gen_range(-SHIFT_RANGE..=SHIFT_RANGE),
        rng.gen_range(-SHIFT_RANGE..=SHIFT_RANGE),
    ];
    let flip = match rng.gen_range(0..3u32) {
        0 => Flip::None,
        1 => Flip::AboutX,
        _ => Flip::AboutY,
    };
    let jitter = (0..n)
        .map(|_| {
            [
                normal.sample(rng),
                normal.sample(rng),
                normal.sample(rng),
            ]
        })
        .collect();
    AugmentDraws {
        scale,
        shift,
        flip,
        jitter,
    }
}

/// Applies explicit draws; jitter must provide one vector per point.
pub fn augment_with(scan: &Scan, draws: &AugmentDraws) -> Scan {
    assert_eq!(draws.jitter.len(), scan.points.len(), "jitter draw count");
    let mut out = scan.clone();
    for (p, j) in out.points.iter_mut().zip(&draws.jitter) {
        let mut q = [p.x * draws.scale, p.y * draws.scale, p.z * draws.scale];
        match draws.flip {
            Flip::None => {}
            Flip::AboutX => q[1] = -q[1],
            Flip::AboutY => q[0] = -q[0],
        }
        p.x = q[0] + draws.shift[0] + j[0];
        p.y = q[1] + draws.shift[1] + j[1];
        p.z = q[2] + draws.shift[2] + j[2];
    }
    out
}

/// Samples draws from `rng` and applies them to one scan.
pub fn augment(scan: &Scan, rng: &mut impl Rng) -> Scan {
    let draws = sample_draws(scan.points.len(), rng);
    augment_with(scan, &draws)
}

/// Augments a whole (aligned) window with one shared scale/flip/shift so the
/// temporal alignment between scans survives; jitter stays independent per
/// point.
pub fn augment_window(window: &SequenceWindow, rng: &mut impl Rng) -> SequenceWindow {
    let shared = sample_draws(0, rng);
    let apply = |scan: &Scan, rng: &mut dyn rand::RngCore| {
        let normal = Normal::new(0.0, JITTER_STD).expect("valid std");
        let draws = AugmentDraws {
            scale: shared.scale,
            shift: shared.shift,
            flip: shared.flip,
            jitter: (0..scan.points.len())
                .map(|_| {
                    [
                        normal.sample(rng),
                        normal.sample(rng),
                        normal.sample(rng),
                    ]
                })
                .collect(),
        };
        augment_with(scan, &draws)
    };
    SequenceWindow {
        current: apply(&window.current, rng),
        previous: window.previous.iter().map(|s| apply(s, rng)).collect(),
        aligned: window.aligned,
    }
}

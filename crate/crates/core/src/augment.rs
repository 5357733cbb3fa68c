//! Audio channel swapping (ACS).
//!
//! Each transform is an element of the dihedral group of order 8 acting on
//! azimuth: an optional reflection `φ → −φ` followed by `q` quarter turns.
//! For the canonical tetrahedron a quarter turn or a reflection alone does
//! not map the capsules onto each other; it must be combined with an
//! elevation flip, so elevation flips exactly when `q` is odd XOR the
//! transform reflects. The channel permutation is derived by mapping every
//! capsule position through the spatial transform and matching it to a
//! capsule of the geometry.

use crate::audio::MultichannelClip;
use crate::error::{Error, Result};
use crate::geometry::{norm, sub, wrap_azimuth, ArrayGeometry, Vec3, NUM_MICS};
use crate::scenesim::SceneAnnotation;

pub const NUM_TRANSFORMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcsTransform {
    id: usize,
    /// `new[permutation[i]] = old[i]`.
    permutation: [usize; NUM_MICS],
}

/// Quarter turns and reflection flag of transform `id`.
fn decompose(id: usize) -> (usize, bool) {
    (id % 4, id >= 4)
}

fn compose_ids(first: usize, second: usize) -> usize {
    let (q1, r1) = decompose(first);
    let (q2, r2) = decompose(second);
    let q1 = if r2 { (4 - q1) % 4 } else { q1 };
    (q1 + q2) % 4 + 4 * usize::from(r1 != r2)
}

fn spatial_map(id: usize, p: Vec3) -> Vec3 {
    let (q, r) = decompose(id);
    let (x, y) = (p[0], if r { -p[1] } else { p[1] });
    let (x, y) = match q {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    };
    let flip = (q % 2 == 1) != r;
    [x, y, if flip { -p[2] } else { p[2] }]
}

impl AcsTransform {
    pub fn new(id: usize, geom: &ArrayGeometry) -> Result<Self> {
        if id >= NUM_TRANSFORMS {
            return Err(Error::invalid(format!("ACS transform id {id} outside 0..8")));
        }
        let mics = geom.mic_positions();
        let scale = mics.iter().map(|&m| norm(m)).fold(0.0, f64::max);
        let mut permutation = [0; NUM_MICS];
        for (i, &m) in mics.iter().enumerate() {
            let image = spatial_map(id, m);
            permutation[i] = mics
                .iter()
                .position(|&other| norm(sub(other, image)) <= 1e-9 * scale.max(1e-12))
                .ok_or_else(|| {
                    Error::invalid(format!("geometry is not symmetric under ACS transform {id} (mic {i} has no image)"))
                })?;
        }
        Ok(Self { id, permutation })
    }

    pub fn identity() -> Self {
        Self { id: 0, permutation: [0, 1, 2, 3] }
    }

    /// All eight transforms for `geom`, ordered by id.
    pub fn all(geom: &ArrayGeometry) -> Result<Vec<Self>> {
        (0..NUM_TRANSFORMS).map(|id| Self::new(id, geom)).collect()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn quarter_turns(&self) -> usize {
        decompose(self.id).0
    }

    pub fn reflects(&self) -> bool {
        decompose(self.id).1
    }

    pub fn flips_elevation(&self) -> bool {
        (self.quarter_turns() % 2 == 1) != self.reflects()
    }

    pub fn channel_permutation(&self) -> [usize; NUM_MICS] {
        self.permutation
    }

    pub fn map_azimuth(&self, azimuth: f64) -> f64 {
        let a = if self.reflects() { -azimuth } else { azimuth };
        wrap_azimuth(a + 90.0 * self.quarter_turns() as f64)
    }

    pub fn map_elevation(&self, elevation: f64) -> f64 {
        if self.flips_elevation() {
            -elevation
        } else {
            elevation
        }
    }

    /// `self` followed by `then`, as a transform id.
    pub fn then_id(&self, then: &AcsTransform) -> usize {
        compose_ids(self.id, then.id)
    }
}

/// Group product table: entry `[a][b]` is the id of `a` followed by `b`.
pub fn composition_table() -> [[usize; NUM_TRANSFORMS]; NUM_TRANSFORMS] {
    let mut table = [[0; NUM_TRANSFORMS]; NUM_TRANSFORMS];
    for (a, row) in table.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = compose_ids(a, b);
        }
    }
    table
}

pub fn transform_clip(clip: &MultichannelClip, t: &AcsTransform) -> Result<MultichannelClip> {
    clip.require_channels(NUM_MICS)?;
    let mut channels = vec![Vec::new(); NUM_MICS];
    for (i, ch) in clip.channels().iter().enumerate() {
        channels[t.permutation[i]] = ch.clone();
    }
    MultichannelClip::new(channels, clip.sample_rate())
}

pub fn transform_annotation(ann: &SceneAnnotation, t: &AcsTransform) -> SceneAnnotation {
    let mut out = ann.clone();
    for e in out.frames.iter_mut().flatten() {
        e.azimuth = t.map_azimuth(e.azimuth);
        e.elevation = t.map_elevation(e.elevation);
    }
    out
}

/// Permutes the channels and maps every annotated direction.
pub fn apply_acs(
    clip: &MultichannelClip,
    ann: &SceneAnnotation,
    t: &AcsTransform,
) -> Result<(MultichannelClip, SceneAnnotation)> {
    Ok((transform_clip(clip, t)?, transform_annotation(ann, t)))
}

//! Synthetic test volumes with exact ground truth.
//!
//! A phantom is a bright background threaded by small dark quasi-cylinders
//! (the objects a detector should find), full-span dark stripes (membrane-
//! like distractors that any diameter-bounded detector must reject), and
//! optional Gaussian pixel noise. Everything is drawn from one seeded
//! [`SplitMix64`] stream in a fixed order, so a spec — including its seed —
//! maps to exactly one output volume, byte for byte.
//!
//! Draw order, for anyone reproducing the stream: first each distractor
//! (orientation, thickness, z extent, z start, position), then each
//! reticulum attempt (length, z start, base radius, center x, center y,
//! then per slice beyond the first a drift step in x and y, then per slice
//! a radius jitter), redrawing everything on a failed placement, and
//! finally one Gaussian variate per voxel in (z, y, x) raster order when
//! `noise_sigma > 0`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{AnnotationError, AnnotationSet, TrackedObject};
use crate::detect::{Source, Status};
use crate::rng::SplitMix64;
use crate::volume::Volume;

/// How many placement attempts each object gets before the volume is
/// declared too crowded.
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Minimum bright gap, in pixels, kept between any two dark structures so
/// regions never fuse across objects.
const CLEARANCE: i64 = 4;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    BadSpec(String),
    #[error(
        "could not place {kind} {index} after {attempts} attempts; \
         the spec overcrowds the volume"
    )]
    Unplaceable {
        kind: &'static str,
        index: usize,
        attempts: usize,
    },
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed phantom spec {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Complete description of a synthetic volume. Identical specs generate
/// identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    /// Number of dark quasi-cylinders with ground-truth annotations.
    pub n_reticula: usize,
    /// Inclusive per-object base radius range, pixels.
    pub reticulum_radius_range: (u32, u32),
    /// Inclusive range of consecutive slices an object threads.
    pub reticulum_length_range: (usize, usize),
    pub reticulum_intensity: u8,
    /// Number of full-span dark stripes (no ground truth; a detector with a
    /// sane diameter bound must reject them).
    pub n_distractors: usize,
    pub background_intensity: u8,
    /// Standard deviation of additive Gaussian noise; 0 disables it.
    pub noise_sigma: f64,
    /// Maximum per-axis center drift between consecutive slices, pixels.
    pub drift_per_slice: u32,
    pub rng_seed: u64,
}

impl PhantomSpec {
    pub fn from_file(path: &Path) -> Result<Self, PhantomError> {
        let text = fs::read_to_string(path).map_err(|source| PhantomError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut deserializer = serde_json::Deserializer::from_str(&text);
        let spec: PhantomSpec =
            serde_path_to_error::deserialize(&mut deserializer).map_err(|source| {
                PhantomError::Json {
                    path: path.to_path_buf(),
                    source,
                }
            })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |msg: String| Err(PhantomError::BadSpec(msg));
        if self.width < 1 || self.height < 1 || self.depth < 1 {
            return bad(format!(
                "degenerate volume {}x{}x{}",
                self.width, self.height, self.depth
            ));
        }
        let (r_min, r_max) = self.reticulum_radius_range;
        if self.n_reticula > 0 {
            if r_min < 1 || r_min > r_max {
                return bad(format!("radius range [{r_min}, {r_max}] is empty or zero"));
            }
            let (l_min, l_max) = self.reticulum_length_range;
            if l_min < 1 || l_min > l_max {
                return bad(format!("length range [{l_min}, {l_max}] is empty or zero"));
            }
            if l_max > self.depth {
                return bad(format!(
                    "length range reaches {l_max} slices but the volume has {}",
                    self.depth
                ));
            }
            if self.reticulum_intensity >= self.background_intensity {
                return bad(format!(
                    "reticulum intensity {} is not darker than background {}",
                    self.reticulum_intensity, self.background_intensity
                ));
            }
            // Centers need border_margin on each side; an empty center range
            // means nothing can ever be placed.
            let margin = 2 * (r_max as usize + 2) + 1;
            if self.width < margin || self.height < margin {
                return bad(format!(
                    "slices of {}x{} cannot hold a radius-{r_max} object away from the border",
                    self.width, self.height
                ));
            }
        }
        if self.n_distractors > 0 && self.reticulum_intensity >= self.background_intensity {
            return bad(format!(
                "distractor intensity {} is not darker than background {}",
                self.reticulum_intensity, self.background_intensity
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return bad(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Stripe {
    horizontal: bool,
    /// First row (horizontal) or column (vertical) of the band.
    start: usize,
    thickness: usize,
    z0: usize,
    z_len: usize,
}

impl Stripe {
    fn covers_z(&self, z: usize) -> bool {
        (self.z0..self.z0 + self.z_len).contains(&z)
    }
}

#[derive(Debug, Clone)]
struct Reticulum {
    z0: usize,
    /// Per slice: center and radius after drift and jitter.
    sections: Vec<((i64, i64), u32)>,
}

/// Generates the volume, its exact per-slice ground truth, and one truth
/// track per object threading at least two slices. Pure function of the
/// spec; see the module docs for the RNG draw order.
pub fn generate_phantom(
    spec: &PhantomSpec,
) -> Result<(Volume, AnnotationSet, Vec<TrackedObject>), PhantomError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.rng_seed);
    let (w, h, d) = (spec.width, spec.height, spec.depth);

    let mut stripes = Vec::with_capacity(spec.n_distractors);
    for _ in 0..spec.n_distractors {
        let horizontal = rng.next_u64().is_multiple_of(2);
        let extent = if horizontal { h } else { w };
        let thickness = (rng.next_range(2, 4) as usize).min(extent);
        let z_len = rng.next_range(1, 4.min(d as i64)) as usize;
        let z0 = rng.next_range(0, (d - z_len) as i64) as usize;
        let start = rng.next_range(0, (extent - thickness) as i64) as usize;
        stripes.push(Stripe {
            horizontal,
            start,
            thickness,
            z0,
            z_len,
        });
    }

    let (r_min, r_max) = spec.reticulum_radius_range;
    let (l_min, l_max) = spec.reticulum_length_range;
    let drift = spec.drift_per_slice as i64;
    let mut reticula: Vec<Reticulum> = Vec::with_capacity(spec.n_reticula);
    for index in 0..spec.n_reticula {
        let mut placed = false;
        for _attempt in 0..MAX_PLACEMENT_ATTEMPTS {
            let len = rng.next_range(l_min as i64, l_max as i64) as usize;
            let z0 = rng.next_range(0, (d - len) as i64) as usize;
            let r_base = rng.next_range(r_min as i64, r_max as i64) as u32;
            let border = r_max as i64 + 2;
            let cx = rng.next_range(border, w as i64 - 1 - border);
            let cy = rng.next_range(border, h as i64 - 1 - border);

            let mut sections = Vec::with_capacity(len);
            let (mut x, mut y) = (cx, cy);
            for k in 0..len {
                if k > 0 {
                    x += rng.next_range(-drift, drift);
                    y += rng.next_range(-drift, drift);
                }
                let jitter = rng.next_range(-1, 1);
                let r = (r_base as i64 + jitter).clamp(1, r_max as i64) as u32;
                sections.push(((x, y), r));
            }

            let candidate = Reticulum { z0, sections };
            if placement_fits(&candidate, &reticula, &stripes, w, h) {
                reticula.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(PhantomError::Unplaceable {
                kind: "reticulum",
                index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    // Paint: background, stripes, then object disks (all structures are
    // mutually clear of each other, so order does not matter).
    let mut volume =
        Volume::filled(w, h, d, spec.background_intensity).expect("validated dimensions");
    let plane = w * h;
    {
        let voxels = volume.voxels_mut();
        for s in &stripes {
            for z in s.z0..s.z0 + s.z_len {
                for i in s.start..s.start + s.thickness {
                    if s.horizontal {
                        let row = &mut voxels[z * plane + i * w..z * plane + (i + 1) * w];
                        row.fill(spec.reticulum_intensity);
                    } else {
                        for yy in 0..h {
                            voxels[z * plane + yy * w + i] = spec.reticulum_intensity;
                        }
                    }
                }
            }
        }
        for r in &reticula {
            for (k, &((x, y), radius)) in r.sections.iter().enumerate() {
                let z = r.z0 + k;
                for (px, py) in disk_pixels(x, y, radius) {
                    voxels[z * plane + py as usize * w + px as usize] = spec.reticulum_intensity;
                }
            }
        }
    }

    // Exact truth: the pre-noise disk pixels, one component per object per
    // slice, linked into one track per object spanning two or more slices.
    let mut truth = AnnotationSet::new(w, h, d);
    let mut tracks = Vec::new();
    for r in &reticula {
        let mut members = Vec::with_capacity(r.sections.len());
        for (k, &((x, y), radius)) in r.sections.iter().enumerate() {
            let z = r.z0 + k;
            let id = truth.add_component(
                z,
                Source::Truth,
                Status::Confirmed,
                disk_pixels(x, y, radius),
            )?;
            members.push((z, id));
        }
        if members.len() >= 2 {
            let track_id = tracks.len() as u32;
            for &(z, id) in &members {
                truth.set_track_id(z, id, Some(track_id));
            }
            tracks.push(TrackedObject::new(track_id, members)?);
        }
    }

    if spec.noise_sigma > 0.0 {
        let voxels = volume.voxels_mut();
        for v in voxels.iter_mut() {
            let noisy = *v as f64 + spec.noise_sigma * rng.next_gaussian();
            *v = noisy.round().clamp(0.0, 255.0) as u8;
        }
    }

    Ok((volume, truth, tracks))
}

/// Filled disk: lattice pixels with dx^2 + dy^2 <= radius^2, sorted
/// row-major. The caller guarantees the disk lies inside the slice.
fn disk_pixels(cx: i64, cy: i64, radius: u32) -> Vec<(u32, u32)> {
    let r = radius as i64;
    let mut pixels = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                pixels.push(((cx + dx) as u32, (cy + dy) as u32));
            }
        }
    }
    pixels
}

/// A placement fits when every cross-section stays clear of the borders,
/// every stripe band on its slice, and every previously placed object
/// sharing a slice, each with `CLEARANCE` pixels of bright background in
/// between.
fn placement_fits(
    candidate: &Reticulum,
    placed: &[Reticulum],
    stripes: &[Stripe],
    w: usize,
    h: usize,
) -> bool {
    for (k, &((x, y), r)) in candidate.sections.iter().enumerate() {
        let z = candidate.z0 + k;
        let r = r as i64;
        let margin = r + 2;
        if x < margin || y < margin || x > w as i64 - 1 - margin || y > h as i64 - 1 - margin {
            return false;
        }
        for s in stripes.iter().filter(|s| s.covers_z(z)) {
            let coord = if s.horizontal { y } else { x };
            let lo = s.start as i64 - r - CLEARANCE;
            let hi = (s.start + s.thickness - 1) as i64 + r + CLEARANCE;
            if coord >= lo && coord <= hi {
                return false;
            }
        }
        for other in placed {
            let shared = z >= other.z0 && z < other.z0 + other.sections.len();
            if !shared {
                continue;
            }
            let ((ox, oy), or) = other.sections[z - other.z0];
            let (dx, dy) = (x - ox, y - oy);
            let min_dist = r + or as i64 + CLEARANCE;
            if dx * dx + dy * dy < min_dist * min_dist {
                return false;
            }
        }
    }
    true
}

//! Cross-slice tracking: confirm detections supported by an adjacent slice,
//! rescue missed detections with a relaxed growth pass, delete unsupported
//! interior detections, and link what survives into tracked objects.
//!
//! All confirm/rescue/delete decisions are evaluated against an immutable
//! snapshot of the annotation set taken before the pass, so the outcome is
//! independent of traversal order and re-running the pass on its own output
//! changes nothing. Mutations are committed afterwards in (z, id) order.

use std::collections::HashSet;

use thiserror::Error;

use crate::annotations::{AnnotationError, AnnotationSet, TrackedObject};
use crate::detect::{flood_dark, Component, GrowParams, Source, Status};
use crate::volume::{SliceView, Volume};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid tracking parameter: {0}")]
    BadParam(String),
    #[error("annotations do not match the volume: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Tolerances for cross-slice matching and the relaxed rescue growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackParams {
    xy_tolerance: f64,
    rescue_threshold_delta: u8,
    rescue_max_diameter: usize,
}

impl TrackParams {
    pub fn new(
        xy_tolerance: f64,
        rescue_threshold_delta: u8,
        rescue_max_diameter: usize,
    ) -> Result<Self, TrackError> {
        if !xy_tolerance.is_finite() || xy_tolerance < 0.0 {
            return Err(TrackError::BadParam(format!(
                "xy_tolerance must be finite and >= 0, got {xy_tolerance}"
            )));
        }
        if rescue_max_diameter == 0 {
            return Err(TrackError::BadParam(
                "rescue_max_diameter must be >= 1".into(),
            ));
        }
        Ok(Self {
            xy_tolerance,
            rescue_threshold_delta,
            rescue_max_diameter,
        })
    }

    pub fn xy_tolerance(&self) -> f64 {
        self.xy_tolerance
    }

    pub fn rescue_threshold_delta(&self) -> u8 {
        self.rescue_threshold_delta
    }

    pub fn rescue_max_diameter(&self) -> usize {
        self.rescue_max_diameter
    }
}

/// Finds the component on slice `c.z() + dz` (dz must be +1 or -1) whose
/// centroid is nearest to `c`'s and within `tol`. Deleted components never
/// match; ties break toward the lower id. Slices beyond either end of the
/// stack simply have no match.
pub fn match_in_adjacent<'a>(
    a: &'a AnnotationSet,
    c: &Component,
    dz: isize,
    tol: f64,
) -> Option<&'a Component> {
    assert!(
        dz == 1 || dz == -1,
        "adjacency means one slice away, got dz={dz}"
    );
    let nz = c.z() as isize + dz;
    if nz < 0 || nz as usize >= a.depth() {
        return None;
    }
    let mut best: Option<(&Component, f64)> = None;
    for cand in a.slice_components(nz as usize) {
        if cand.status() == Status::Deleted {
            continue;
        }
        let d = cand.centroid_distance(c);
        if d > tol {
            continue;
        }
        best = Some(match best {
            Some((b, bd)) if bd < d || (bd == d && b.id() < cand.id()) => (b, bd),
            _ => (cand, d),
        });
    }
    best.map(|(m, _)| m)
}

/// Relaxed growth around a missed location: seeds at the pixel nearest
/// `seed_xy` (within `xy_tolerance`) that falls below the relaxed threshold
/// `dark_threshold + rescue_threshold_delta`, then floods exactly like the
/// detection growth but bounded by `rescue_max_diameter`. Returns `None`
/// when no pixel qualifies as a seed or the grown region fails the bounds.
///
/// The returned component carries a placeholder id of 0; callers assign the
/// real id when inserting it into an annotation set.
pub fn rescue_grow(
    s: SliceView<'_>,
    seed_xy: (f64, f64),
    base: &GrowParams,
    tp: &TrackParams,
) -> Option<Component> {
    let relaxed = base
        .dark_threshold()
        .saturating_add(tp.rescue_threshold_delta());
    let (w, h) = (s.width(), s.height());
    let (sx, sy) = seed_xy;
    let tol = tp.xy_tolerance();
    let x_lo = (sx - tol).ceil().max(0.0) as usize;
    let x_hi = ((sx + tol).floor() as usize).min(w - 1);
    let y_lo = (sy - tol).ceil().max(0.0) as usize;
    let y_hi = ((sy + tol).floor() as usize).min(h - 1);

    let mut seed: Option<((usize, usize), f64)> = None;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let d2 = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
            if d2 > tol * tol || s.get(x, y) >= relaxed {
                continue;
            }
            // Scanning row-major, a strict improvement keeps the first
            // (lowest y, then x) pixel among equidistant candidates.
            if seed.is_none_or(|(_, best)| d2 < best) {
                seed = Some(((x, y), d2));
            }
        }
    }
    let ((x, y), _) = seed?;

    let mut visited = vec![false; w * h];
    let pixels = flood_dark(s, (x, y), relaxed, &mut visited);
    let (x0, y0, x1, y1) = pixels
        .iter()
        .fold((u32::MAX, u32::MAX, 0, 0), |(x0, y0, x1, y1), &(px, py)| {
            (x0.min(px), y0.min(py), x1.max(px), y1.max(py))
        });
    let span = (x1 - x0 + 1).max(y1 - y0 + 1) as usize;
    if span > tp.rescue_max_diameter() || pixels.len() < base.min_area() {
        return None;
    }
    Some(
        Component::new(0, s.z(), Source::Rescue, Status::Confirmed, pixels)
            .expect("flooded rescue regions are nonempty and 8-connected"),
    )
}

/// Runs the full tracking pass over a detection result.
///
/// Each provisional component, judged against the pre-pass snapshot:
/// 1. is confirmed if either adjacent slice holds an annotation whose
///    centroid lies within `xy_tolerance`;
/// 2. otherwise, rescue growth is attempted on the bilateral image of both
///    adjacent slices at the component's centroid — a rescue whose centroid
///    lands within `xy_tolerance` is added (already confirmed) and confirms
///    the component;
/// 3. otherwise the component is deleted — unless it sits on the first or
///    last slice, where the missing neighbor makes one-sided evidence
///    insufficient to condemn, and it is confirmed instead.
///
/// A rescue proposal whose exact pixel set already exists (non-deleted) on
/// its slice is not inserted twice; since relaxed-threshold regions on one
/// slice are either identical or disjoint, duplicate proposals from two
/// triggering components collapse cleanly and the commit order cannot
/// matter.
///
/// Confirmed components are then linked into `TrackedObject`s: walking
/// slices in (z, id) order, each unclaimed component starts a chain that
/// repeatedly follows its nearest unclaimed match one slice deeper; chains
/// of at least two get a track id.
pub fn track_volume(
    bilateral: &Volume,
    mut a: AnnotationSet,
    gp: &GrowParams,
    tp: &TrackParams,
) -> Result<(AnnotationSet, Vec<TrackedObject>), TrackError> {
    if a.width() != bilateral.width()
        || a.height() != bilateral.height()
        || a.depth() != bilateral.depth()
    {
        return Err(TrackError::Mismatch(format!(
            "annotations cover {}x{}x{}, volume is {}x{}x{}",
            a.width(),
            a.height(),
            a.depth(),
            bilateral.width(),
            bilateral.height(),
            bilateral.depth()
        )));
    }
    let depth = a.depth();
    let snapshot = a.clone();

    let mut decisions: Vec<(usize, u32, Status)> = Vec::new();
    let mut proposals: Vec<(usize, Component)> = Vec::new();
    for z in 0..depth {
        for c in snapshot.slice_components(z) {
            if c.status() != Status::Provisional {
                continue;
            }
            let matched = match_in_adjacent(&snapshot, c, -1, tp.xy_tolerance).is_some()
                || match_in_adjacent(&snapshot, c, 1, tp.xy_tolerance).is_some();
            let status = if matched {
                Status::Confirmed
            } else {
                let mut supported = false;
                for dz in [-1isize, 1] {
                    let nz = z as isize + dz;
                    if nz < 0 || nz as usize >= depth {
                        continue;
                    }
                    if let Some(r) = rescue_grow(bilateral.slice(nz as usize), c.centroid(), gp, tp)
                    {
                        // The rescue must support the component under the
                        // same positional criterion as rule 1, or adding it
                        // would confirm without actual adjacent evidence.
                        if r.centroid_distance(c) <= tp.xy_tolerance {
                            supported = true;
                            proposals.push((nz as usize, r));
                        }
                    }
                }
                if supported || z == 0 || z == depth - 1 {
                    Status::Confirmed
                } else {
                    Status::Deleted
                }
            };
            decisions.push((z, c.id(), status));
        }
    }

    for (z, id, status) in decisions {
        a.set_status(z, id, status);
    }
    for (z, r) in proposals {
        let duplicate = a
            .slice_components(z)
            .iter()
            .any(|c| c.status() != Status::Deleted && c.pixels() == r.pixels());
        if !duplicate {
            a.add_component(z, Source::Rescue, Status::Confirmed, r.pixels().to_vec())?;
        }
    }

    a.clear_track_ids();
    let confirmed: Vec<(usize, u32)> = a
        .iter()
        .filter(|c| c.status() == Status::Confirmed)
        .map(|c| (c.z(), c.id()))
        .collect();
    let mut claimed: HashSet<(usize, u32)> = HashSet::new();
    let mut chains: Vec<Vec<(usize, u32)>> = Vec::new();
    for (z, id) in confirmed {
        if claimed.contains(&(z, id)) {
            continue;
        }
        let mut members = vec![(z, id)];
        let mut cur = a.component(z, id).expect("listed component exists");
        while let Some(m) = match_in_adjacent(&a, cur, 1, tp.xy_tolerance) {
            if claimed.contains(&(m.z(), m.id())) {
                break;
            }
            members.push((m.z(), m.id()));
            cur = m;
        }
        if members.len() >= 2 {
            claimed.extend(members.iter().copied());
            chains.push(members);
        }
    }
    let mut tracks = Vec::with_capacity(chains.len());
    for (i, members) in chains.into_iter().enumerate() {
        let track_id = i as u32;
        for &(mz, mid) in &members {
            a.set_track_id(mz, mid, Some(track_id));
        }
        tracks.push(TrackedObject::new(track_id, members)?);
    }
    Ok((a, tracks))
}

//! Dark-region detection by bounded region growing, run per slice.
//!
//! A detection pass scans a filtered slice in row-major order, floods every
//! sub-threshold pixel's 8-connected component, and keeps components whose
//! bounding box stays within the expected organelle diameter. Two passes run
//! per slice — one over the bilaterally filtered image, one over the
//! sharpened image — and their outputs merge wherever pixel sets overlap.

use std::collections::{HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::AnnotationSet;
use crate::volume::{SliceView, Volume};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid growth parameter: {0}")]
    BadParam(String),
    #[error("invalid component: {0}")]
    InvalidComponent(String),
    #[error("slice mismatch: {0}")]
    SliceMismatch(String),
    #[error("volume mismatch: {0}")]
    VolumeMismatch(String),
    #[error("single-slice merge given components from z={0} and z={1}")]
    MixedZ(usize, usize),
    #[error(transparent)]
    Annotation(#[from] crate::annotations::AnnotationError),
}

/// Bounds for one growth pass. Connectivity is always 8-connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowParams {
    dark_threshold: u8,
    max_diameter: usize,
    min_area: usize,
}

impl GrowParams {
    pub fn new(
        dark_threshold: u8,
        max_diameter: usize,
        min_area: usize,
    ) -> Result<Self, DetectError> {
        if max_diameter == 0 {
            return Err(DetectError::BadParam("max_diameter must be >= 1".into()));
        }
        if min_area == 0 {
            return Err(DetectError::BadParam("min_area must be >= 1".into()));
        }
        let disk = disk_area(max_diameter);
        if min_area > disk {
            return Err(DetectError::BadParam(format!(
                "min_area {min_area} exceeds the {disk}-pixel disk of diameter {max_diameter}; \
                 no disk-like region could ever pass both bounds"
            )));
        }
        Ok(Self {
            dark_threshold,
            max_diameter,
            min_area,
        })
    }

    pub fn dark_threshold(&self) -> u8 {
        self.dark_threshold
    }

    pub fn max_diameter(&self) -> usize {
        self.max_diameter
    }

    pub fn min_area(&self) -> usize {
        self.min_area
    }
}

/// Pixels of a rasterized disk of the given diameter: lattice offsets with
/// dx^2 + dy^2 <= (d/2)^2, counted without floating point.
fn disk_area(diameter: usize) -> usize {
    let d = diameter as i64;
    let mut count = 0;
    for dy in -d..=d {
        for dx in -d..=d {
            if 4 * (dx * dx + dy * dy) <= d * d {
                count += 1;
            }
        }
    }
    count as usize
}

/// Which image a component was grown from (or `Truth` for generated ground
/// truth read back through the same serialization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Bilateral,
    Laplacian,
    Rescue,
    Truth,
}

/// Lifecycle of an annotation: fresh detections are provisional, tracking
/// either confirms them or deletes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Provisional,
    Confirmed,
    Deleted,
}

/// One annotated cross-section: an 8-connected set of pixels on a single
/// slice, with derived centroid and bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    id: u32,
    z: usize,
    source: Source,
    status: Status,
    track_id: Option<u32>,
    pixels: Vec<(u32, u32)>,
    centroid: (f64, f64),
    /// (x_min, y_min, x_max, y_max), inclusive.
    bbox: (u32, u32, u32, u32),
}

impl Component {
    /// Builds a component from its pixel set, rejecting empty, duplicated, or
    /// disconnected input. Pixels are kept sorted row-major so equal sets
    /// compare and serialize identically.
    pub fn new(
        id: u32,
        z: usize,
        source: Source,
        status: Status,
        mut pixels: Vec<(u32, u32)>,
    ) -> Result<Self, DetectError> {
        if pixels.is_empty() {
            return Err(DetectError::InvalidComponent("empty pixel set".into()));
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        if pixels.windows(2).any(|w| w[0] == w[1]) {
            return Err(DetectError::InvalidComponent("duplicate pixel".into()));
        }
        if !is_8_connected(&pixels) {
            return Err(DetectError::InvalidComponent(format!(
                "pixel set of size {} is not 8-connected",
                pixels.len()
            )));
        }
        let n = pixels.len() as f64;
        let sum = pixels.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| {
            (sx + x as f64, sy + y as f64)
        });
        let centroid = (sum.0 / n, sum.1 / n);
        let bbox = pixels
            .iter()
            .fold((u32::MAX, u32::MAX, 0, 0), |(x0, y0, x1, y1), &(x, y)| {
                (x0.min(x), y0.min(y), x1.max(x), y1.max(y))
            });
        Ok(Self {
            id,
            z,
            source,
            status,
            track_id: None,
            pixels,
            centroid,
            bbox,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn track_id(&self) -> Option<u32> {
        self.track_id
    }

    /// Sorted row-major (y, then x).
    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    /// Arithmetic mean of the pixel coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }

    pub fn bbox(&self) -> (u32, u32, u32, u32) {
        self.bbox
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Longer side of the bounding box, in pixels.
    pub fn bbox_span(&self) -> usize {
        let (x0, y0, x1, y1) = self.bbox;
        ((x1 - x0 + 1).max(y1 - y0 + 1)) as usize
    }

    pub fn centroid_distance(&self, other: &Component) -> f64 {
        let (ax, ay) = self.centroid;
        let (bx, by) = other.centroid;
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    pub(crate) fn set_id(&mut self, id: u32) {
        self.id = id;
    }

    pub(crate) fn set_status(&mut self, status: Status) {
        self.status = status;
    }

    pub(crate) fn set_track_id(&mut self, track_id: Option<u32>) {
        self.track_id = track_id;
    }
}

fn is_8_connected(sorted_pixels: &[(u32, u32)]) -> bool {
    let set: HashSet<(u32, u32)> = sorted_pixels.iter().copied().collect();
    let mut seen = HashSet::with_capacity(set.len());
    let mut queue = VecDeque::from([sorted_pixels[0]]);
    seen.insert(sorted_pixels[0]);
    while let Some((x, y)) = queue.pop_front() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let n = ((x as i64 + dx) as u32, (y as i64 + dy) as u32);
                if (dx != 0 || dy != 0) && set.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
    }
    seen.len() == set.len()
}

/// Grows all dark regions of one slice. Every pixel below `dark_threshold`
/// seeds (at most once) a breadth-first flood of its 8-connected
/// sub-threshold component; the component is kept only if its bounding box
/// stays within `max_diameter` and it covers at least `min_area` pixels.
///
/// The flood always consumes the entire connected component before the size
/// check. Rejection depends only on the final component's bounding box, so
/// this is equivalent to aborting mid-growth, and it guarantees a rejected
/// component cannot re-seed from one of its own unvisited pixels.
///
/// Returned components are ordered by their row-major-first pixel and carry
/// ids 0, 1, 2, ... in that order with status `Provisional`.
pub fn grow_regions(s: SliceView<'_>, p: &GrowParams, source: Source) -> Vec<Component> {
    let (w, h) = (s.width(), s.height());
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if visited[y * w + x] || s.get(x, y) >= p.dark_threshold {
                continue;
            }
            let pixels = flood_dark(s, (x, y), p.dark_threshold, &mut visited);
            let (x0, y0, x1, y1) = pixels
                .iter()
                .fold((u32::MAX, u32::MAX, 0, 0), |(x0, y0, x1, y1), &(px, py)| {
                    (x0.min(px), y0.min(py), x1.max(px), y1.max(py))
                });
            let span = (x1 - x0 + 1).max(y1 - y0 + 1) as usize;
            if span > p.max_diameter || pixels.len() < p.min_area {
                continue;
            }
            let id = out.len() as u32;
            out.push(
                Component::new(id, s.z(), source, Status::Provisional, pixels)
                    .expect("flood-grown regions are nonempty and 8-connected"),
            );
        }
    }
    out
}

/// Breadth-first flood of the 8-connected component of sub-threshold pixels
/// containing `seed`, marking every reached pixel in `visited`. The seed must
/// itself be below the threshold and unvisited.
pub(crate) fn flood_dark(
    s: SliceView<'_>,
    seed: (usize, usize),
    threshold: u8,
    visited: &mut [bool],
) -> Vec<(u32, u32)> {
    let (w, h) = (s.width(), s.height());
    debug_assert!(s.get(seed.0, seed.1) < threshold && !visited[seed.1 * w + seed.0]);
    visited[seed.1 * w + seed.0] = true;
    let mut queue = VecDeque::from([seed]);
    let mut pixels = Vec::new();
    while let Some((cx, cy)) = queue.pop_front() {
        pixels.push((cx as u32, cy as u32));
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !visited[ny * w + nx] && s.get(nx, ny) < threshold {
                    visited[ny * w + nx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    pixels
}

/// Merges components whose pixel sets intersect, transitively, into single
/// components over the union of the pixels. A merged component takes the
/// bilateral source tag if any member carries it (first-pass priority),
/// otherwise laplacian, and the output keeps the order of each group's
/// earliest member, renumbered 0, 1, 2, ...
pub fn merge_overlapping(cs: Vec<Component>) -> Result<Vec<Component>, DetectError> {
    if let Some(first) = cs.first() {
        if let Some(other) = cs.iter().find(|c| c.z() != first.z()) {
            return Err(DetectError::MixedZ(first.z(), other.z()));
        }
    }

    // Union-find over component indices, driven by shared pixel ownership.
    let mut parent: Vec<usize> = (0..cs.len()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    let mut owner: std::collections::HashMap<(u32, u32), usize> = std::collections::HashMap::new();
    for (i, c) in cs.iter().enumerate() {
        for &px in c.pixels() {
            match owner.entry(px) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, *e.get()));
                    if a != b {
                        // Attach the later root under the earlier one so each
                        // group's representative is its earliest member.
                        parent[a.max(b)] = a.min(b);
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(i);
                }
            }
        }
    }

    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut group_of_root: std::collections::HashMap<usize, usize> =
        std::collections::HashMap::new();
    for i in 0..cs.len() {
        let root = find(&mut parent, i);
        match group_of_root.get(&root) {
            Some(&g) => groups[g].1.push(i),
            None => {
                group_of_root.insert(root, groups.len());
                groups.push((root, vec![i]));
            }
        }
    }
    groups.sort_unstable_by_key(|&(root, _)| root);

    let mut out = Vec::with_capacity(groups.len());
    for (new_id, (_, members)) in groups.into_iter().enumerate() {
        if members.len() == 1 {
            let mut c = cs[members[0]].clone();
            c.set_id(new_id as u32);
            out.push(c);
            continue;
        }
        let z = cs[members[0]].z();
        let status = cs[members[0]].status();
        let source = if members.iter().any(|&i| cs[i].source() == Source::Bilateral) {
            Source::Bilateral
        } else {
            Source::Laplacian
        };
        let mut pixels: Vec<(u32, u32)> = members
            .iter()
            .flat_map(|&i| cs[i].pixels().iter().copied())
            .collect();
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        out.push(Component::new(new_id as u32, z, source, status, pixels)?);
    }
    Ok(out)
}

/// Detects components on one slice by running a growth pass over the
/// bilateral image and another over the sharpened image, then merging
/// overlaps. Both views must cover the same plane.
pub fn detect_slice(
    bilateral: SliceView<'_>,
    sharpened: SliceView<'_>,
    p_b: &GrowParams,
    p_l: &GrowParams,
) -> Result<Vec<Component>, DetectError> {
    if bilateral.width() != sharpened.width() || bilateral.height() != sharpened.height() {
        return Err(DetectError::SliceMismatch(format!(
            "bilateral {}x{} vs sharpened {}x{}",
            bilateral.width(),
            bilateral.height(),
            sharpened.width(),
            sharpened.height()
        )));
    }
    if bilateral.z() != sharpened.z() {
        return Err(DetectError::SliceMismatch(format!(
            "bilateral z={} vs sharpened z={}",
            bilateral.z(),
            sharpened.z()
        )));
    }
    let mut cs = grow_regions(bilateral, p_b, Source::Bilateral);
    let from_sharpened = grow_regions(sharpened, p_l, Source::Laplacian);
    let base = cs.len() as u32;
    cs.extend(from_sharpened.into_iter().map(|mut c| {
        c.set_id(base + c.id());
        c
    }));
    merge_overlapping(cs)
}

/// Runs `detect_slice` over every z plane of the two filtered volumes and
/// collects the results into an annotation set with globally unique ids.
/// Slices are processed in parallel; ids are assigned afterwards in
/// (z, within-slice) order, so the numbering is scheduling-independent.
pub fn detect_volume(
    bilateral: &Volume,
    sharpened: &Volume,
    p_b: &GrowParams,
    p_l: &GrowParams,
) -> Result<AnnotationSet, DetectError> {
    if bilateral.width() != sharpened.width()
        || bilateral.height() != sharpened.height()
        || bilateral.depth() != sharpened.depth()
    {
        return Err(DetectError::VolumeMismatch(format!(
            "bilateral {}x{}x{} vs sharpened {}x{}x{}",
            bilateral.width(),
            bilateral.height(),
            bilateral.depth(),
            sharpened.width(),
            sharpened.height(),
            sharpened.depth()
        )));
    }
    let per_slice: Vec<Vec<Component>> = (0..bilateral.depth())
        .into_par_iter()
        .map(|z| detect_slice(bilateral.slice(z), sharpened.slice(z), p_b, p_l))
        .collect::<Result<_, _>>()?;

    let mut set = AnnotationSet::new(bilateral.width(), bilateral.height(), bilateral.depth());
    for (z, components) in per_slice.into_iter().enumerate() {
        for c in components {
            set.add_component(z, c.source(), c.status(), c.pixels().to_vec())?;
        }
    }
    Ok(set)
}

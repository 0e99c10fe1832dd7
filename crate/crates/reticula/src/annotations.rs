//! In-memory annotation sets and their JSON file format.
//!
//! An `AnnotationSet` holds every component of a volume indexed by slice,
//! with ids unique across the whole set. The on-disk form is a single JSON
//! document: the volume dimensions, a flat component list (z-major, id
//! order), and the tracks linking confirmed components across slices.
//! Deleted components never reach disk; reading validates the document
//! against the same invariants the in-memory constructors enforce.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{Component, Source, Status};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation file {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },
    #[error("invalid annotation file {path}: {reason}")]
    InvalidFile { path: PathBuf, reason: String },
    #[error("invalid annotations: {0}")]
    Invalid(String),
}

/// All components of one volume, indexed by slice, plus the id counter for
/// future insertions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    width: usize,
    height: usize,
    depth: usize,
    slices: Vec<Vec<Component>>,
    next_id: u32,
}

impl AnnotationSet {
    pub fn new(width: usize, height: usize, depth: usize) -> Self {
        assert!(width >= 1 && height >= 1 && depth >= 1, "degenerate volume");
        Self {
            width,
            height,
            depth,
            slices: vec![Vec::new(); depth],
            next_id: 0,
        }
    }

    /// Rebuilds a set from loose components (e.g. a parsed file), validating
    /// slice indices, pixel bounds, and id uniqueness. Components are
    /// re-sorted by id within each slice.
    pub fn from_parts(
        width: usize,
        height: usize,
        depth: usize,
        components: Vec<Component>,
    ) -> Result<Self, AnnotationError> {
        if width < 1 || height < 1 || depth < 1 {
            return Err(AnnotationError::Invalid(format!(
                "degenerate volume {width}x{height}x{depth}"
            )));
        }
        let mut slices = vec![Vec::new(); depth];
        let mut ids = HashSet::with_capacity(components.len());
        let mut next_id = 0;
        for c in components {
            if c.z() >= depth {
                return Err(AnnotationError::Invalid(format!(
                    "component {} on slice {} of a depth-{} volume",
                    c.id(),
                    c.z(),
                    depth
                )));
            }
            let (_, _, x_max, y_max) = c.bbox();
            if x_max as usize >= width || y_max as usize >= height {
                return Err(AnnotationError::Invalid(format!(
                    "component {} has pixels outside the {}x{} slice",
                    c.id(),
                    width,
                    height
                )));
            }
            if !ids.insert(c.id()) {
                return Err(AnnotationError::Invalid(format!(
                    "duplicate component id {}",
                    c.id()
                )));
            }
            next_id = next_id.max(c.id() + 1);
            slices[c.z()].push(c);
        }
        for slice in &mut slices {
            slice.sort_unstable_by_key(Component::id);
        }
        Ok(Self {
            width,
            height,
            depth,
            slices,
            next_id,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Adds a component on slice `z` and returns its assigned id.
    pub fn add_component(
        &mut self,
        z: usize,
        source: Source,
        status: Status,
        pixels: Vec<(u32, u32)>,
    ) -> Result<u32, AnnotationError> {
        if z >= self.depth {
            return Err(AnnotationError::Invalid(format!(
                "slice {z} out of range for depth {}",
                self.depth
            )));
        }
        if let Some(&(x, y)) = pixels
            .iter()
            .find(|&&(x, y)| x as usize >= self.width || y as usize >= self.height)
        {
            return Err(AnnotationError::Invalid(format!(
                "pixel ({x}, {y}) outside the {}x{} slice",
                self.width, self.height
            )));
        }
        let id = self.next_id;
        let component = Component::new(id, z, source, status, pixels)
            .map_err(|e| AnnotationError::Invalid(e.to_string()))?;
        self.slices[z].push(component);
        self.next_id += 1;
        Ok(id)
    }

    /// Components on slice `z` in ascending id order.
    pub fn slice_components(&self, z: usize) -> &[Component] {
        &self.slices[z]
    }

    pub fn component(&self, z: usize, id: u32) -> Option<&Component> {
        self.slices[z].iter().find(|c| c.id() == id)
    }

    /// All components in (z, id) order, including deleted ones.
    pub fn iter(&self) -> impl Iterator<Item = &Component> + '_ {
        self.slices.iter().flatten()
    }

    pub fn count_status(&self, status: Status) -> usize {
        self.iter().filter(|c| c.status() == status).count()
    }

    pub(crate) fn set_status(&mut self, z: usize, id: u32, status: Status) {
        self.component_mut(z, id)
            .unwrap_or_else(|| panic!("no component {id} on slice {z}"))
            .set_status(status);
    }

    pub(crate) fn set_track_id(&mut self, z: usize, id: u32, track_id: Option<u32>) {
        self.component_mut(z, id)
            .unwrap_or_else(|| panic!("no component {id} on slice {z}"))
            .set_track_id(track_id);
    }

    pub(crate) fn clear_track_ids(&mut self) {
        for slice in &mut self.slices {
            for c in slice {
                c.set_track_id(None);
            }
        }
    }

    fn component_mut(&mut self, z: usize, id: u32) -> Option<&mut Component> {
        self.slices[z].iter_mut().find(|c| c.id() == id)
    }
}

/// A chain of confirmed components on consecutive slices, at least two long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackedObject {
    track_id: u32,
    members: Vec<(usize, u32)>,
}

impl TrackedObject {
    pub fn new(track_id: u32, members: Vec<(usize, u32)>) -> Result<Self, AnnotationError> {
        if members.len() < 2 {
            return Err(AnnotationError::Invalid(format!(
                "track {track_id} has {} member(s); tracks need at least 2",
                members.len()
            )));
        }
        if let Some(w) = members.windows(2).find(|w| w[1].0 != w[0].0 + 1) {
            return Err(AnnotationError::Invalid(format!(
                "track {track_id} jumps from slice {} to {}",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { track_id, members })
    }

    pub fn track_id(&self) -> u32 {
        self.track_id
    }

    /// (z, component id) pairs with z increasing by exactly 1.
    pub fn members(&self) -> &[(usize, u32)] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeDims {
    width: usize,
    height: usize,
    depth: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentRecord {
    id: u32,
    z: usize,
    source: Source,
    status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u32>,
    centroid: [f64; 2],
    pixels: Vec<[u32; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    track_id: u32,
    members: Vec<(usize, u32)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    volume: VolumeDims,
    components: Vec<ComponentRecord>,
    #[serde(default)]
    tracks: Vec<TrackRecord>,
}

/// Writes the set and its tracks as pretty-printed JSON. Deleted components
/// are omitted; everything else appears in (z, id) order, tracks in
/// ascending track-id order, so identical inputs produce identical bytes.
pub fn write_annotations(
    path: &Path,
    set: &AnnotationSet,
    tracks: &[TrackedObject],
) -> Result<(), AnnotationError> {
    let components = set
        .iter()
        .filter(|c| c.status() != Status::Deleted)
        .map(|c| ComponentRecord {
            id: c.id(),
            z: c.z(),
            source: c.source(),
            status: c.status(),
            track_id: c.track_id(),
            centroid: [c.centroid().0, c.centroid().1],
            pixels: c.pixels().iter().map(|&(x, y)| [x, y]).collect(),
        })
        .collect();
    let mut track_records: Vec<TrackRecord> = tracks
        .iter()
        .map(|t| TrackRecord {
            track_id: t.track_id(),
            members: t.members().to_vec(),
        })
        .collect();
    track_records.sort_unstable_by_key(|t| t.track_id);
    let file = AnnotationFile {
        volume: VolumeDims {
            width: set.width(),
            height: set.height(),
            depth: set.depth(),
        },
        components,
        tracks: track_records,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("annotation serialization");
    text.push('\n');
    fs::write(path, text).map_err(|source| AnnotationError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an annotation file back, re-deriving centroids and bounding boxes
/// from the pixel sets and validating every cross-reference: stored
/// centroids must match the recomputed ones, track members must exist and be
/// confirmed, and component `track_id` fields must agree with the track
/// list.
pub fn read_annotations(
    path: &Path,
) -> Result<(AnnotationSet, Vec<TrackedObject>), AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    let file: AnnotationFile =
        serde_path_to_error::deserialize(&mut deserializer).map_err(|source| {
            AnnotationError::Json {
                path: path.to_path_buf(),
                source,
            }
        })?;
    let invalid = |reason: String| AnnotationError::InvalidFile {
        path: path.to_path_buf(),
        reason,
    };

    let mut components = Vec::with_capacity(file.components.len());
    for record in file.components {
        if record.status == Status::Deleted {
            return Err(invalid(format!(
                "component {} is deleted; deleted components must be omitted",
                record.id
            )));
        }
        let pixels = record.pixels.iter().map(|&[x, y]| (x, y)).collect();
        let mut c = Component::new(record.id, record.z, record.source, record.status, pixels)
            .map_err(|e| invalid(format!("component {}: {e}", record.id)))?;
        let (cx, cy) = c.centroid();
        if (cx - record.centroid[0]).abs() > 1e-9 || (cy - record.centroid[1]).abs() > 1e-9 {
            return Err(invalid(format!(
                "component {}: stored centroid [{}, {}] does not match its pixels \
                 (expected [{cx}, {cy}])",
                record.id, record.centroid[0], record.centroid[1]
            )));
        }
        c.set_track_id(record.track_id);
        components.push(c);
    }
    let set = AnnotationSet::from_parts(
        file.volume.width,
        file.volume.height,
        file.volume.depth,
        components,
    )
    .map_err(|e| invalid(e.to_string()))?;

    let mut tracks = Vec::with_capacity(file.tracks.len());
    let mut seen_track_ids = HashSet::new();
    let mut claimed: HashMap<(usize, u32), u32> = HashMap::new();
    for record in file.tracks {
        if !seen_track_ids.insert(record.track_id) {
            return Err(invalid(format!("duplicate track id {}", record.track_id)));
        }
        let track = TrackedObject::new(record.track_id, record.members)
            .map_err(|e| invalid(e.to_string()))?;
        for &(z, cid) in track.members() {
            if z >= set.depth() {
                return Err(invalid(format!(
                    "track {} references slice {z} of a depth-{} volume",
                    track.track_id(),
                    set.depth()
                )));
            }
            let c = set.component(z, cid).ok_or_else(|| {
                invalid(format!(
                    "track {} references missing component {cid} on slice {z}",
                    track.track_id()
                ))
            })?;
            if c.status() != Status::Confirmed {
                return Err(invalid(format!(
                    "track {} member {cid} on slice {z} is not confirmed",
                    track.track_id()
                )));
            }
            if c.track_id() != Some(track.track_id()) {
                return Err(invalid(format!(
                    "component {cid} on slice {z} carries track_id {:?} but belongs to track {}",
                    c.track_id(),
                    track.track_id()
                )));
            }
            if claimed.insert((z, cid), track.track_id()).is_some() {
                return Err(invalid(format!(
                    "component {cid} on slice {z} appears in more than one track"
                )));
            }
        }
        tracks.push(track);
    }
    for c in set.iter() {
        if let Some(t) = c.track_id() {
            if claimed.get(&(c.z(), c.id())) != Some(&t) {
                return Err(invalid(format!(
                    "component {} claims membership in track {t}, which does not list it",
                    c.id()
                )));
            }
        }
    }
    tracks.sort_unstable_by_key(TrackedObject::track_id);
    Ok((set, tracks))
}

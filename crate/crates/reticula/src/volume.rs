//! In-memory volumetric image model and the on-disk stack format.
//!
//! A stack on disk is a `stack.json` manifest next to one binary PGM (P5,
//! maxval 255) raster per slice. The manifest carries the dimensions, the
//! z-ordered slice file list, and optional physical resolution metadata;
//! the rasters carry nothing but pixels, so a round trip is lossless.
//!
//! Input volumes are assumed to be contrast-corrected already (e.g. by
//! gradient-domain stitching); nothing in this crate adjusts intensity
//! across slices.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StackError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },
    #[error("manifest inconsistency: {0}")]
    ManifestInconsistency(String),
    #[error("{path}: not a binary PGM: {reason}")]
    BadPgm { path: PathBuf, reason: String },
    #[error("{path}: not an 8-bit raster (maxval {maxval})")]
    NonEightBit { path: PathBuf, maxval: u32 },
    #[error("{path}: raster is {actual_w}x{actual_h}, manifest says {expect_w}x{expect_h}")]
    DimensionMismatch {
        path: PathBuf,
        actual_w: usize,
        actual_h: usize,
        expect_w: usize,
        expect_h: usize,
    },
    #[error("invalid volume geometry: {0}")]
    BadGeometry(String),
}

/// A z-ordered stack of 2D 8-bit grayscale slices.
///
/// Voxels are stored row-major within a slice (x fastest), slices contiguous
/// by z. The volume is immutable once constructed, so shared read access
/// from parallel workers is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    width: usize,
    height: usize,
    depth: usize,
    voxels: Vec<u8>,
    /// Physical voxel pitch in nanometres: `[x, y, z]`. Optional and unused
    /// by the algorithms, which work in pixel units throughout.
    resolution_nm: Option<[f64; 3]>,
}

impl Volume {
    pub fn from_voxels(
        width: usize,
        height: usize,
        depth: usize,
        voxels: Vec<u8>,
        resolution_nm: Option<[f64; 3]>,
    ) -> Result<Self, StackError> {
        if width == 0 || height == 0 || depth == 0 {
            return Err(StackError::BadGeometry(format!(
                "dimensions must all be >= 1, got {width}x{height}x{depth}"
            )));
        }
        let expect = width
            .checked_mul(height)
            .and_then(|a| a.checked_mul(depth))
            .ok_or_else(|| StackError::BadGeometry("dimension overflow".into()))?;
        if voxels.len() != expect {
            return Err(StackError::BadGeometry(format!(
                "voxel buffer holds {} bytes, {width}x{height}x{depth} needs {expect}",
                voxels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            voxels,
            resolution_nm,
        })
    }

    /// Constant-intensity volume.
    pub fn filled(
        width: usize,
        height: usize,
        depth: usize,
        value: u8,
    ) -> Result<Self, StackError> {
        Self::from_voxels(
            width,
            height,
            depth,
            vec![value; width * height * depth],
            None,
        )
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

    pub fn resolution_nm(&self) -> Option<[f64; 3]> {
        self.resolution_nm
    }

    /// Voxel at `(x, y, z)`. Out-of-bounds indices are a contract violation
    /// and panic; they are never wrapped into a neighboring row or slice.
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        assert!(
            x < self.width && y < self.height && z < self.depth,
            "voxel index ({x}, {y}, {z}) outside {}x{}x{}",
            self.width,
            self.height,
            self.depth
        );
        self.voxels[(z * self.height + y) * self.width + x]
    }

    /// Read-only view of one z plane.
    pub fn slice(&self, z: usize) -> SliceView<'_> {
        assert!(
            z < self.depth,
            "slice index {z} outside depth {}",
            self.depth
        );
        let plane = self.width * self.height;
        SliceView {
            data: &self.voxels[z * plane..(z + 1) * plane],
            width: self.width,
            height: self.height,
            z,
        }
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    /// Mutable raster access, z-major then row-major. The slice length is
    /// fixed, so geometry invariants cannot be broken through it.
    pub fn voxels_mut(&mut self) -> &mut [u8] {
        &mut self.voxels
    }
}

/// Borrowed read access to one `(width x height)` plane.
///
/// Obtainable from a [`Volume`] or a [`crate::filters::FilteredSlice`]; the
/// borrow checker guarantees it never outlives its backing storage.
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a> {
    data: &'a [u8],
    width: usize,
    height: usize,
    z: usize,
}

impl<'a> SliceView<'a> {
    pub fn from_raw(data: &'a [u8], width: usize, height: usize, z: usize) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer length mismatch");
        Self {
            data,
            width,
            height,
            z,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        assert!(
            x < self.width && y < self.height,
            "pixel index ({x}, {y}) outside {}x{}",
            self.width,
            self.height
        );
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &'a [u8] {
        self.data
    }
}

/// The `stack.json` schema. `slice_files` are relative to the manifest's
/// directory and their order defines z.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StackManifest {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub slice_files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution_nm: Option<[f64; 3]>,
}

impl StackManifest {
    fn validate(&self) -> Result<(), StackError> {
        if self.depth == 0 {
            return Err(StackError::ManifestInconsistency("depth is 0".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(StackError::ManifestInconsistency(format!(
                "slice dimensions {}x{} must be >= 1x1",
                self.width, self.height
            )));
        }
        if self.slice_files.len() != self.depth {
            return Err(StackError::ManifestInconsistency(format!(
                "depth is {} but {} slice files are listed",
                self.depth,
                self.slice_files.len()
            )));
        }
        for (i, f) in self.slice_files.iter().enumerate() {
            if self.slice_files[..i].contains(f) {
                return Err(StackError::ManifestInconsistency(format!(
                    "duplicate slice file {f:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Loads a stack from its `stack.json` manifest, materializing the volume
/// with byte-for-byte intensity fidelity.
pub fn load_stack(manifest_path: &Path) -> Result<Volume, StackError> {
    let text = fs::read_to_string(manifest_path).map_err(|source| StackError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let manifest: StackManifest =
        serde_path_to_error::deserialize(&mut de).map_err(|source| StackError::Manifest {
            path: manifest_path.to_path_buf(),
            source,
        })?;
    manifest.validate()?;

    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut voxels = Vec::with_capacity(manifest.width * manifest.height * manifest.depth);
    for file in &manifest.slice_files {
        let path = dir.join(file);
        let (w, h, pixels) = read_pgm(&path)?;
        if w != manifest.width || h != manifest.height {
            return Err(StackError::DimensionMismatch {
                path,
                actual_w: w,
                actual_h: h,
                expect_w: manifest.width,
                expect_h: manifest.height,
            });
        }
        voxels.extend_from_slice(&pixels);
    }
    Volume::from_voxels(
        manifest.width,
        manifest.height,
        manifest.depth,
        voxels,
        manifest.resolution_nm,
    )
}

/// Writes one PGM per slice plus `stack.json` into `out_dir`, creating the
/// directory if needed. `load_stack` on the result reproduces the volume
/// exactly.
pub fn save_stack(volume: &Volume, out_dir: &Path) -> Result<StackManifest, StackError> {
    fs::create_dir_all(out_dir).map_err(|source| StackError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut slice_files = Vec::with_capacity(volume.depth());
    for z in 0..volume.depth() {
        let name = format!("slice_{z:04}.pgm");
        write_pgm(&out_dir.join(&name), volume.slice(z))?;
        slice_files.push(name);
    }
    let manifest = StackManifest {
        width: volume.width(),
        height: volume.height(),
        depth: volume.depth(),
        slice_files,
        resolution_nm: volume.resolution_nm(),
    };
    let path = out_dir.join("stack.json");
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|source| StackError::Io { path, source })?;
    Ok(manifest)
}

/// Reads a binary PGM (P5). Accepts `#` comments in the header, per the
/// netpbm convention, and any maxval up to 255; maxval above 255 means a
/// 16-bit raster and is rejected. Pixel bytes are taken verbatim.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), StackError> {
    let file = fs::File::open(path).map_err(|source| StackError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);

    let bad = |reason: &str| StackError::BadPgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut magic = [0u8; 2];
    reader
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != b"P5" {
        return Err(bad(&format!(
            "magic is {:?}, expected \"P5\"",
            String::from_utf8_lossy(&magic)
        )));
    }

    let width = read_header_number(&mut reader).ok_or_else(|| bad("missing width"))?;
    let height = read_header_number(&mut reader).ok_or_else(|| bad("missing height"))?;
    let maxval = read_header_number(&mut reader).ok_or_else(|| bad("missing maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(StackError::NonEightBit {
            path: path.to_path_buf(),
            maxval,
        });
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-sized raster"));
    }
    // One whitespace byte separates the header from the pixel data; the
    // header-number reader has already consumed it.
    let mut pixels = vec![0u8; width as usize * height as usize];
    reader
        .read_exact(&mut pixels)
        .map_err(|_| bad("truncated pixel data"))?;
    Ok((width as usize, height as usize, pixels))
}

/// Consumes whitespace and `#` comments, then parses one ASCII integer and
/// the single whitespace byte that terminates it.
fn read_header_number<R: BufRead>(reader: &mut R) -> Option<u32> {
    let mut in_comment = false;
    let mut digits = String::new();
    loop {
        let buf = reader.fill_buf().ok()?;
        if buf.is_empty() {
            return if digits.is_empty() {
                None
            } else {
                digits.parse().ok()
            };
        }
        let b = buf[0];
        if in_comment {
            reader.consume(1);
            if b == b'\n' {
                in_comment = false;
            }
        } else if b.is_ascii_digit() {
            digits.push(b as char);
            reader.consume(1);
        } else if digits.is_empty() && b == b'#' {
            in_comment = true;
            reader.consume(1);
        } else if b.is_ascii_whitespace() {
            reader.consume(1);
            if !digits.is_empty() {
                return digits.parse().ok();
            }
        } else {
            return None;
        }
    }
}

/// Writes a binary PGM: `P5\n{w} {h}\n255\n` followed by the raw bytes.
pub fn write_pgm(path: &Path, slice: SliceView<'_>) -> Result<(), StackError> {
    let io_err = |source| StackError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    write!(file, "P5\n{} {}\n255\n", slice.width(), slice.height()).map_err(io_err)?;
    file.write_all(slice.data()).map_err(io_err)?;
    Ok(())
}

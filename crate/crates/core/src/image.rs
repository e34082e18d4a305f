//! Raster grids shared by every other module, plus their on-disk formats.
//!
//! Layout is row-major with `x` varying fastest: the linear index of
//! `(x, y, z)` is `x + nx * (y + ny * z)`. 2D grids are stored with `nz = 1`
//! and keep `ndim = 2` for their whole lifetime.
//!
//! File formats:
//!
//! * 2D masks: binary PGM (`P5`, maxval 255), foreground written as 255.
//! * 3D masks: `VMSK`: the 6-byte magic `VMSK1\n`, three little-endian `u32`
//!   extents `(nx, ny, nz)`, then `nx * ny * nz` bytes of 0/1, x fastest.
//! * Scalar grids: `VMSF`: magic `VMSF1\n`, the same three extents, then
//!   little-endian `f32` samples. A 2D grid is written with `nz = 1` and a
//!   file with `nz = 1` reads back as 2D. Grids can also be exported to PGM
//!   for viewing, with values in `[0, 1]` mapped onto `[0, 255]`.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const VMSK_MAGIC: &[u8; 6] = b"VMSK1\n";
pub const VMSF_MAGIC: &[u8; 6] = b"VMSF1\n";
const VOLUME_HEADER_LEN: usize = 6 + 3 * 4;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(Dims, Dims),
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

/// Grid extents, 2 or 3 of them, all positive.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    extents: [usize; 3],
    ndim: usize,
}

impl Dims {
    pub fn new(extents: &[usize]) -> Result<Self> {
        match extents {
            [nx, ny] => Self::check(Dims {
                extents: [*nx, *ny, 1],
                ndim: 2,
            }),
            [nx, ny, nz] => Self::check(Dims {
                extents: [*nx, *ny, *nz],
                ndim: 3,
            }),
            _ => Err(ImageError::InvalidDims(format!(
                "expected 2 or 3 extents, got {}",
                extents.len()
            ))),
        }
    }

    /// Panics on a zero extent; use [`Dims::new`] for untrusted input.
    pub fn d2(nx: usize, ny: usize) -> Self {
        Self::new(&[nx, ny]).expect("positive 2D extents")
    }

    /// Panics on a zero extent; use [`Dims::new`] for untrusted input.
    pub fn d3(nx: usize, ny: usize, nz: usize) -> Self {
        Self::new(&[nx, ny, nz]).expect("positive 3D extents")
    }

    fn check(dims: Dims) -> Result<Self> {
        if dims.extents.contains(&0) {
            return Err(ImageError::InvalidDims(format!("zero extent in {dims}")));
        }
        dims.extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| ImageError::InvalidDims(format!("{dims} overflows")))?;
        Ok(dims)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn nx(&self) -> usize {
        self.extents[0]
    }

    pub fn ny(&self) -> usize {
        self.extents[1]
    }

    /// 1 for 2D grids.
    pub fn nz(&self) -> usize {
        self.extents[2]
    }

    /// Extents padded to three axes (`nz = 1` in 2D).
    pub fn extents3(&self) -> [usize; 3] {
        self.extents
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents[..self.ndim]
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(self.contains(c), "{c:?} outside {self}");
        c.x() + self.nx() * (c.y() + self.ny() * c.z())
    }

    pub fn coord(&self, index: usize) -> Coord {
        let x = index % self.nx();
        let rest = index / self.nx();
        let y = rest % self.ny();
        let z = rest / self.ny();
        if self.ndim == 2 {
            Coord::d2(x, y)
        } else {
            Coord::d3(x, y, z)
        }
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.ndim() == self.ndim && (0..3).all(|a| c.0[a] < self.extents[a])
    }

    /// Coordinate from signed components, `None` when out of bounds.
    pub fn checked_coord(&self, p: [i64; 3]) -> Option<Coord> {
        for (a, &v) in p.iter().enumerate() {
            let lim = if a < self.ndim {
                self.extents[a] as i64
            } else {
                1
            };
            if v < 0 || v >= lim {
                return None;
            }
        }
        let c = [p[0] as usize, p[1] as usize, p[2] as usize];
        Some(if self.ndim == 2 {
            Coord::d2(c[0], c[1])
        } else {
            Coord::d3(c[0], c[1], c[2])
        })
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.extents().iter().map(|e| e.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dims({self})")
    }
}

impl Serialize for Dims {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.extents().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dims {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        Dims::new(&v).map_err(serde::de::Error::custom)
    }
}

/// A voxel position. 2D coordinates carry `z = 0`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord([usize; 3], u8);

impl Coord {
    pub fn d2(x: usize, y: usize) -> Self {
        Coord([x, y, 0], 2)
    }

    pub fn d3(x: usize, y: usize, z: usize) -> Self {
        Coord([x, y, z], 3)
    }

    pub fn x(&self) -> usize {
        self.0[0]
    }

    pub fn y(&self) -> usize {
        self.0[1]
    }

    pub fn z(&self) -> usize {
        self.0[2]
    }

    pub fn ndim(&self) -> usize {
        self.1 as usize
    }

    pub fn components(&self) -> &[usize] {
        &self.0[..self.ndim()]
    }

    pub fn as_f64(&self) -> [f64; 3] {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }

    pub fn as_i64(&self) -> [i64; 3] {
        [self.0[0] as i64, self.0[1] as i64, self.0[2] as i64]
    }

    pub fn dist2(&self, other: &Coord) -> f64 {
        let a = self.as_i64();
        let b = other.as_i64();
        (0..3).map(|k| ((a[k] - b[k]) * (a[k] - b[k])) as f64).sum()
    }

    pub fn dist(&self, other: &Coord) -> f64 {
        self.dist2(other).sqrt()
    }
}

impl fmt::Debug for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.components())
    }
}

impl Serialize for Coord {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.ndim()))?;
        for c in self.components() {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Coord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Vec::<usize>::deserialize(d)?.as_slice() {
            [x, y] => Ok(Coord::d2(*x, *y)),
            [x, y, z] => Ok(Coord::d3(*x, *y, *z)),
            other => Err(serde::de::Error::custom(format!(
                "coordinate needs 2 or 3 components, got {}",
                other.len()
            ))),
        }
    }
}

/// A 2D or 3D raster of {0, 1}.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    data: Vec<u8>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask({}, {} set)", self.dims, self.count())
    }
}

impl BinaryMask {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(ImageError::InvalidData(format!(
                "{} samples for dims {dims}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(ImageError::InvalidData(format!(
                "mask value {v} is not 0 or 1"
            )));
        }
        Ok(BinaryMask { dims, data })
    }

    /// Any nonzero sample becomes foreground.
    pub fn from_nonzero(dims: Dims, data: &[u8]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| u8::from(v != 0)).collect())
    }

    pub fn zeros(dims: Dims) -> Self {
        BinaryMask {
            dims,
            data: vec![0; dims.len()],
        }
    }

    pub fn ones(dims: Dims) -> Self {
        BinaryMask {
            dims,
            data: vec![1; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(Coord) -> bool) -> Self {
        let data = (0..dims.len())
            .map(|i| u8::from(f(dims.coord(i))))
            .collect();
        BinaryMask { dims, data }
    }

    pub fn from_coords(dims: Dims, coords: impl IntoIterator<Item = Coord>) -> Self {
        let mut m = Self::zeros(dims);
        for c in coords {
            m.set(c, true);
        }
        m
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, c: Coord) -> bool {
        self.data[self.dims.index(c)] != 0
    }

    pub fn get_index(&self, index: usize) -> bool {
        self.data[index] != 0
    }

    pub fn set(&mut self, c: Coord, value: bool) {
        let i = self.dims.index(c);
        self.data[i] = u8::from(value);
    }

    pub fn set_index(&mut self, index: usize, value: bool) {
        self.data[index] = u8::from(value);
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn has_foreground(&self) -> bool {
        self.data.iter().any(|&v| v != 0)
    }

    pub fn has_background(&self) -> bool {
        self.data.contains(&0)
    }

    /// Linear indices of foreground voxels in raster order.
    pub fn foreground_indices(&self) -> Vec<usize> {
        (0..self.data.len())
            .filter(|&i| self.data[i] != 0)
            .collect()
    }

    pub fn background_indices(&self) -> Vec<usize> {
        (0..self.data.len())
            .filter(|&i| self.data[i] == 0)
            .collect()
    }

    pub fn foreground(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.data.len())
            .filter(|&i| self.data[i] != 0)
            .map(|i| self.dims.coord(i))
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a & b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask> {
        check_same_dims(self.dims, other.dims)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(BinaryMask {
            dims: self.dims,
            data,
        })
    }

    /// `self ⊆ other` as voxel sets.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }
}

/// Non-negative real samples over a grid: distance maps, soft model outputs.
#[derive(Clone, PartialEq)]
pub struct ScalarGrid {
    dims: Dims,
    data: Vec<f64>,
}

impl fmt::Debug for ScalarGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarGrid({})", self.dims)
    }
}

impl ScalarGrid {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(ImageError::InvalidData(format!(
                "{} samples for dims {dims}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ImageError::InvalidData(format!(
                "sample {v} is not finite and >= 0"
            )));
        }
        Ok(ScalarGrid { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        ScalarGrid {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        ScalarGrid {
            dims: mask.dims,
            data: mask.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: Coord) -> f64 {
        self.data[self.dims.index(c)]
    }

    pub fn get_index(&self, index: usize) -> f64 {
        self.data[index]
    }

    pub(crate) fn set_index(&mut self, index: usize, v: f64) {
        self.data[index] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Foreground wherever the sample is strictly above `threshold`.
    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            data: self.data.iter().map(|&v| u8::from(v > threshold)).collect(),
        }
    }

    /// Rescaled so the maximum becomes 1 (no-op on an all-zero grid).
    pub fn normalized(&self) -> ScalarGrid {
        let m = self.max();
        if m <= 0.0 {
            return self.clone();
        }
        ScalarGrid {
            dims: self.dims,
            data: self.data.iter().map(|v| v / m).collect(),
        }
    }
}

pub(crate) fn check_same_dims(a: Dims, b: Dims) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(ImageError::ShapeMismatch(a, b))
    }
}

/// Number of voxels at which `a` and `b` differ.
///
/// For binary masks this is the squared ℓ2 norm of `a - b`.
pub fn voxel_diff_count(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    check_same_dims(a.dims, b.dims)?;
    Ok(a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count())
}

// ---------------------------------------------------------------------------
// Encoding

/// Encodes a mask as PGM (2D) or VMSK (3D).
pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let d = mask.dims;
    if d.ndim() == 2 {
        let mut out = format!("P5\n{} {}\n255\n", d.nx(), d.ny()).into_bytes();
        out.extend(mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }));
        out
    } else {
        let mut out = volume_header(VMSK_MAGIC, d);
        out.extend_from_slice(&mask.data);
        out
    }
}

/// Decodes PGM or VMSK bytes, sniffing the format from the magic.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    if bytes.starts_with(b"P5") {
        let (dims, payload) = parse_pgm(bytes)?;
        BinaryMask::from_nonzero(dims, payload)
    } else if bytes.starts_with(VMSK_MAGIC) {
        let dims = parse_volume_header(bytes, VMSK_MAGIC)?;
        let payload = &bytes[VOLUME_HEADER_LEN..];
        check_payload(dims.len(), payload.len())?;
        BinaryMask::from_nonzero(dims, payload)
    } else {
        Err(ImageError::MalformedHeader(
            "unknown magic, expected P5 or VMSK1".into(),
        ))
    }
}

pub fn encode_grid(grid: &ScalarGrid) -> Vec<u8> {
    let mut out = volume_header(VMSF_MAGIC, grid.dims);
    for &v in &grid.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<ScalarGrid> {
    let dims = parse_volume_header(bytes, VMSF_MAGIC)?;
    let dims = if dims.nz() == 1 {
        Dims::d2(dims.nx(), dims.ny())
    } else {
        dims
    };
    let payload = &bytes[VOLUME_HEADER_LEN..];
    check_payload(dims.len() * 4, payload.len())?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    ScalarGrid::new(dims, data)
}

/// PGM rendering of a 2D grid: values are clamped to `[0, 1]` and scaled to
/// `[0, 255]`.
pub fn encode_grid_pgm(grid: &ScalarGrid) -> Result<Vec<u8>> {
    let d = grid.dims;
    if d.ndim() != 2 {
        return Err(ImageError::InvalidDims(format!(
            "PGM export needs a 2D grid, got {d}"
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", d.nx(), d.ny()).into_bytes();
    out.extend(
        grid.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

fn volume_header(magic: &[u8; 6], d: Dims) -> Vec<u8> {
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN + d.len());
    out.extend_from_slice(magic);
    for e in d.extents3() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out
}

fn parse_volume_header(bytes: &[u8], magic: &[u8; 6]) -> Result<Dims> {
    if !bytes.starts_with(magic) {
        return Err(ImageError::MalformedHeader(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic).trim_end()
        )));
    }
    if bytes.len() < VOLUME_HEADER_LEN {
        return Err(ImageError::MalformedHeader(
            "header shorter than 18 bytes".into(),
        ));
    }
    let e: Vec<usize> = bytes[6..VOLUME_HEADER_LEN]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    Dims::new(&e).map_err(|e| ImageError::MalformedHeader(e.to_string()))
}

fn check_payload(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(ImageError::TruncatedPayload { expected, found })
    }
}

/// Returns the dims and the raw payload of a binary 8-bit PGM.
fn parse_pgm(bytes: &[u8]) -> Result<(Dims, &[u8])> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments before each header token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::MalformedHeader(
                "missing PGM header field".into(),
            ));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::MalformedHeader("PGM header field overflows".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::MalformedHeader(
            "no whitespace after PGM maxval".into(),
        ));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::MalformedHeader(format!(
            "maxval {maxval} unsupported (need 1..=255)"
        )));
    }
    let dims = Dims::new(&[w, h]).map_err(|e| ImageError::MalformedHeader(e.to_string()))?;
    let payload = &bytes[pos..];
    check_payload(dims.len(), payload.len())?;
    Ok((dims, payload))
}

// ---------------------------------------------------------------------------
// Files

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageError::NotFound(path.to_path_buf()),
        _ => ImageError::Io(e),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask(&read_file(path.as_ref())?)
}

/// Writes PGM for 2D masks and VMSK for 3D masks regardless of extension.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_mask(mask))
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<ScalarGrid> {
    decode_grid(&read_file(path.as_ref())?)
}

/// Writes VMSF, or a scaled 8-bit PGM when the path ends in `.pgm`.
pub fn save_grid(grid: &ScalarGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        encode_grid_pgm(grid)?
    } else {
        encode_grid(grid)
    };
    write_file(path, &bytes)
}

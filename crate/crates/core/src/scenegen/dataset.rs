//! On-disk container for rendered samples.
//!
//! A dataset is a directory: one binary record per sample plus a
//! `manifest.json` listing sample ids and seeds. Records are self-describing
//! (magic, dims, dtype codes in the header), so a reader needs no
//! out-of-band shape information. All multi-byte values are little-endian.
//!
//! Record layout:
//!   magic "VCDR1"
//!   u32 n, h, w
//!   u8 frame dtype (1 = f32), u8 point dtype (1 = f32)
//!   u8 caption flag, then u32 length + UTF-8 bytes if 1
//!   frames: n*3*h*w f32, (N, C, H, W) order
//!   cameras: per frame 18 f64: rotation row-major (9), translation (3),
//!            fx, fy, cx, cy, image width, image height
//!   pointmaps: per frame h*w*3 f32 in (H, W, 3) order, then a row-major
//!              validity bitmask, LSB first, ceil(h*w/8) bytes

use super::{CameraFrame, SceneError, VideoSample};
use crate::geometry::{CameraIntrinsics, PointMap, SE3Pose};
use crate::rng::stream;
use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &[u8; 5] = b"VCDR1";
const DTYPE_F32: u8 = 1;
/// Upper bounds a reader accepts before believing a header.
const MAX_DIM: u32 = 16_384;
const MAX_FRAMES: u32 = 4_096;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected {MAGIC:?}")]
    BadMagic { found: [u8; 5] },
    #[error("file truncated at byte {offset}")]
    Truncated { offset: u64 },
    #[error("{what} has invalid value {value} at byte {offset}")]
    BadField { what: &'static str, value: u64, offset: u64 },
    #[error("caption is not valid UTF-8 at byte {offset}")]
    BadCaption { offset: u64 },
    #[error("trailing {extra} bytes after sample payload")]
    TrailingBytes { extra: u64 },
    #[error("manifest: {0}")]
    BadManifest(#[from] serde_json::Error),
    #[error("sample {id} listed in manifest but {path} is missing")]
    MissingSample { id: u32, path: PathBuf },
}

/// One manifest row: the sample id and the seed that regenerates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u32,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    samples: Vec<ManifestEntry>,
}

fn sample_file(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("{id:05}.vcdr"))
}

/// Reader that tracks write offsets so errors can point at bytes.
struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), DatasetError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(DatasetError::Truncated { offset: self.offset })
            }
            Err(e) => Err(e.into()),
        }
    }

    fn u8(&mut self) -> Result<u8, DatasetError> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>, DatasetError> {
        let mut bytes = vec![0u8; count * 4];
        self.read_exact(&mut bytes)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64_arr<const N: usize>(&mut self) -> Result<[f64; N], DatasetError> {
        let mut bytes = vec![0u8; N * 8];
        self.read_exact(&mut bytes)?;
        let mut out = [0.0; N];
        for (o, c) in out.iter_mut().zip(bytes.chunks_exact(8)) {
            *o = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(out)
    }
}

fn write_sample(path: &Path, sample: &VideoSample) -> Result<(), DatasetError> {
    let (n, h, w) = (sample.n_frames(), sample.height(), sample.width());
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(MAGIC)?;
    for dim in [n, h, w] {
        f.write_all(&(dim as u32).to_le_bytes())?;
    }
    f.write_all(&[DTYPE_F32, DTYPE_F32])?;
    match &sample.caption {
        Some(c) => {
            f.write_all(&[1])?;
            f.write_all(&(c.len() as u32).to_le_bytes())?;
            f.write_all(c.as_bytes())?;
        }
        None => f.write_all(&[0])?,
    }
    for v in sample.frames.as_slice().expect("frames contiguous") {
        f.write_all(&v.to_le_bytes())?;
    }
    for cam in &sample.cameras {
        for row in &cam.pose.r {
            for v in row {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        for v in &cam.pose.t {
            f.write_all(&v.to_le_bytes())?;
        }
        let k = &cam.intr;
        for v in [k.fx, k.fy, k.cx, k.cy, w as f64, h as f64] {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    for pm in &sample.pointmaps {
        for v in pm.points.as_slice().expect("points contiguous") {
            f.write_all(&(*v as f32).to_le_bytes())?;
        }
        let mut byte = 0u8;
        let mut nbits = 0;
        for v in pm.valid.iter() {
            byte |= (*v as u8) << nbits;
            nbits += 1;
            if nbits == 8 {
                f.write_all(&[byte])?;
                byte = 0;
                nbits = 0;
            }
        }
        if nbits > 0 {
            f.write_all(&[byte])?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Bytes a decoded sample occupies, used for residency accounting.
fn decoded_bytes(n: usize, h: usize, w: usize) -> usize {
    n * 3 * h * w * 4 + n * 18 * 8 + n * (h * w * 3 * 8 + h * w)
}

fn read_sample(path: &Path) -> Result<(VideoSample, usize), DatasetError> {
    let file = File::open(path)?;
    let mut r = CountingReader { inner: BufReader::new(file), offset: 0 };

    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic { found: magic });
    }
    let header_at = r.offset;
    let (n, h, w) = (r.u32()?, r.u32()?, r.u32()?);
    if n < 1 || n > MAX_FRAMES {
        return Err(DatasetError::BadField { what: "frame count", value: n as u64, offset: header_at });
    }
    if h < 1 || h > MAX_DIM || w < 1 || w > MAX_DIM {
        return Err(DatasetError::BadField {
            what: "image dims",
            value: (h as u64) << 32 | w as u64,
            offset: header_at + 4,
        });
    }
    for what in ["frame dtype", "point dtype"] {
        let at = r.offset;
        let code = r.u8()?;
        if code != DTYPE_F32 {
            return Err(DatasetError::BadField { what, value: code as u64, offset: at });
        }
    }
    let caption = {
        let at = r.offset;
        match r.u8()? {
            0 => None,
            1 => {
                let len = r.u32()? as usize;
                let mut bytes = vec![0u8; len];
                r.read_exact(&mut bytes)?;
                Some(String::from_utf8(bytes).map_err(|_| DatasetError::BadCaption { offset: at })?)
            }
            other => {
                return Err(DatasetError::BadField { what: "caption flag", value: other as u64, offset: at })
            }
        }
    };

    let (n, h, w) = (n as usize, h as usize, w as usize);
    let frames = Array4::from_shape_vec((n, 3, h, w), r.f32_vec(n * 3 * h * w)?)
        .expect("shape matches read count");

    let mut cameras = Vec::with_capacity(n);
    for _ in 0..n {
        let vals: [f64; 18] = r.f64_arr()?;
        cameras.push(CameraFrame {
            pose: SE3Pose {
                r: [
                    [vals[0], vals[1], vals[2]],
                    [vals[3], vals[4], vals[5]],
                    [vals[6], vals[7], vals[8]],
                ],
                t: [vals[9], vals[10], vals[11]],
            },
            intr: CameraIntrinsics { fx: vals[12], fy: vals[13], cx: vals[14], cy: vals[15] },
        });
    }

    let mut pointmaps = Vec::with_capacity(n);
    for _ in 0..n {
        let pts = r.f32_vec(h * w * 3)?;
        let points =
            Array3::from_shape_vec((h, w, 3), pts.into_iter().map(f64::from).collect()).unwrap();
        let mut mask_bytes = vec![0u8; h.checked_mul(w).unwrap().div_ceil(8)];
        r.read_exact(&mut mask_bytes)?;
        let valid = Array2::from_shape_fn((h, w), |(row, col)| {
            let bit = row * w + col;
            mask_bytes[bit / 8] >> (bit % 8) & 1 == 1
        });
        pointmaps.push(PointMap::new(points, valid).expect("shapes consistent by construction"));
    }

    let mut probe = [0u8; 1];
    let extra = match r.inner.read(&mut probe)? {
        0 => 0,
        _ => 1 + std::io::copy(&mut r.inner, &mut std::io::sink())?,
    };
    if extra > 0 {
        return Err(DatasetError::TrailingBytes { extra });
    }

    Ok((VideoSample { frames, cameras, pointmaps, caption }, decoded_bytes(n, h, w)))
}

/// Writes samples as they arrive; `finish` seals the manifest.
pub struct DatasetWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl DatasetWriter {
    pub fn create(dir: &Path) -> Result<Self, DatasetError> {
        std::fs::create_dir_all(dir)?;
        Ok(DatasetWriter { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn add(&mut self, id: u32, seed: u64, sample: &VideoSample) -> Result<(), DatasetError> {
        write_sample(&sample_file(&self.dir, id), sample)?;
        self.entries.push(ManifestEntry { id, seed });
        Ok(())
    }

    pub fn finish(self) -> Result<(), DatasetError> {
        let manifest = Manifest { samples: self.entries };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Streaming reader: samples decode one at a time on demand.
pub struct DatasetReader {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
    peak_resident: usize,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        for e in &manifest.samples {
            let path = sample_file(dir, e.id);
            if !path.exists() {
                return Err(DatasetError::MissingSample { id: e.id, path });
            }
        }
        Ok(DatasetReader { dir: dir.to_path_buf(), entries: manifest.samples, peak_resident: 0 })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Decode the idx-th sample (manifest order).
    pub fn read(&mut self, idx: usize) -> Result<VideoSample, DatasetError> {
        let (sample, resident) = read_sample(&sample_file(&self.dir, self.entries[idx].id))?;
        self.peak_resident = self.peak_resident.max(resident);
        Ok(sample)
    }

    /// Largest single decoded sample so far: the reader's live footprint is
    /// one sample, never the dataset.
    pub fn peak_resident_bytes(&self) -> usize {
        self.peak_resident
    }

    /// Decode every sample up front (small datasets only).
    pub fn read_all(&mut self) -> Result<Vec<VideoSample>, DatasetError> {
        (0..self.len()).map(|i| self.read(i)).collect()
    }
}

/// A sample plus the provenance the manifest records for it.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub id: u32,
    pub seed: u64,
    pub sample: VideoSample,
}

/// Shape settings for procedural generation.
#[derive(Debug, Clone, Copy)]
pub struct GenerateConfig {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fov_x_rad: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { count: 64, frames: 8, height: 64, width: 64, fov_x_rad: 55f64.to_radians() }
    }
}

/// Deterministically generate `cfg.count` samples from a root seed.
///
/// Each sample's own u64 seed is derived from (root, id, attempt) and fully
/// reproduces it; rare invalid draws (camera inside an object) retry with
/// the next attempt counter, so the manifest seed is always the one that
/// rendered the stored bytes.
pub fn generate(root_seed: u64, cfg: &GenerateConfig) -> Result<Vec<GeneratedSample>, SceneError> {
    let intr = CameraIntrinsics::from_fov(cfg.width, cfg.height, cfg.fov_x_rad);
    let mut out = Vec::with_capacity(cfg.count);
    for id in 0..cfg.count as u32 {
        let mut last_err = None;
        for attempt in 0..64u64 {
            let seed = stream(root_seed, "sample-seed", &[id as u64, attempt]).random::<u64>();
            match generate_one(seed, cfg, &intr) {
                Ok(sample) => {
                    out.push(GeneratedSample { id, seed, sample });
                    last_err = None;
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if let Some(e) = last_err {
            return Err(e);
        }
    }
    Ok(out)
}

/// Render the sample a manifest seed denotes.
pub fn generate_one(
    seed: u64,
    cfg: &GenerateConfig,
    intr: &CameraIntrinsics,
) -> Result<VideoSample, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = super::sample_scene(&mut rng);
    let traj = super::sample_trajectory(&mut rng, cfg.frames);
    let texture_seed = rng.random::<u64>();
    let mut sample = super::render(&scene, &traj, intr, cfg.height, cfg.width, texture_seed)?;
    sample.caption = Some(format!(
        "{} objects, {}",
        scene.primitives.len() - 2,
        match traj.kind {
            super::TrajectoryKind::Orbit { .. } => "orbit",
            super::TrajectoryKind::Dolly { .. } => "dolly",
            super::TrajectoryKind::Truck { .. } => "truck",
            super::TrajectoryKind::Arc { .. } => "arc",
        }
    ));
    Ok(sample)
}

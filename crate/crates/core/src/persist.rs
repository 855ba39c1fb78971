//! On-disk formats: the `VXTC` tensor container (networks, datasets, bare
//! tensors), sweep CSV tables, and binary PPM heatmaps.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! "VXTC" | version: u32 = 1 | manifest_len: u64 | manifest (UTF-8 JSON) | payload
//! ```
//!
//! The payload is the concatenation of the f64 little-endian data of every
//! entry; entry offsets are relative to the payload start.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{LinearFit, OffsetRow, QuadraticFit, StepRow};
use crate::error::{Error, Result};
use crate::network::{Architecture, LayerParams, NetworkSpec};
use crate::relevance::AttributionMap;
use crate::sampler::{Step, Video};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VXTC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Tensor,
    Netspec,
    DatasetMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

/// One decoded container entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub meta: Option<Value>,
    /// Present for tensor entries.
    pub tensor: Option<Tensor>,
}

impl Entry {
    pub fn tensor(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            kind: EntryKind::Tensor,
            meta: None,
            tensor: Some(tensor),
        }
    }

    pub fn meta(name: impl Into<String>, kind: EntryKind, meta: Value) -> Self {
        Self {
            name: name.into(),
            kind,
            meta: Some(meta),
            tensor: None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` through a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub fn encode_container(entries: &[Entry]) -> Vec<u8> {
    let mut manifest = Manifest { entries: Vec::new() };
    let mut payload = Vec::new();
    for e in entries {
        let (shape, offset, length) = match &e.tensor {
            Some(t) => {
                let offset = payload.len() as u64;
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                (t.shape().to_vec(), offset, t.len() as u64 * 8)
            }
            None => (Vec::new(), payload.len() as u64, 0),
        };
        manifest.entries.push(ManifestEntry {
            name: e.name.clone(),
            kind: e.kind,
            shape,
            dtype: "f64le".into(),
            offset,
            length,
            meta: e.meta.clone(),
        });
    }
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_container(bytes: &[u8], path: &Path) -> Result<Vec<Entry>> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    let manifest_err = |detail: String| Error::Manifest {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            return Err(truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if manifest_len > body.len() as u64 {
        return Err(truncated(format!(
            "manifest length {manifest_len} exceeds remaining {} bytes",
            body.len()
        )));
    }
    let (json, payload) = body.split_at(manifest_len as usize);
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| manifest_err(e.to_string()))?;

    let mut spans: Vec<(u64, u64)> = Vec::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        if e.dtype != "f64le" {
            return Err(manifest_err(format!("entry {}: unsupported dtype {}", e.name, e.dtype)));
        }
        let tensor = match e.kind {
            EntryKind::Tensor => {
                let count = e
                    .shape
                    .iter()
                    .try_fold(1u64, |acc, &n| acc.checked_mul(n as u64))
                    .and_then(|n| n.checked_mul(8));
                if count != Some(e.length) {
                    return Err(manifest_err(format!(
                        "entry {}: length {} does not match shape {:?}",
                        e.name, e.length, e.shape
                    )));
                }
                let end = e.offset.checked_add(e.length).filter(|&end| end <= payload.len() as u64);
                let Some(end) = end else {
                    return Err(truncated(format!(
                        "entry {} ends beyond the {}-byte payload",
                        e.name,
                        payload.len()
                    )));
                };
                spans.push((e.offset, end));
                let data = payload[e.offset as usize..end as usize]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Some(Tensor::new(e.shape, data)?)
            }
            _ if e.length != 0 => {
                return Err(manifest_err(format!("metadata entry {} declares payload bytes", e.name)));
            }
            _ => None,
        };
        out.push(Entry {
            name: e.name,
            kind: e.kind,
            meta: e.meta,
            tensor,
        });
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(manifest_err("entry payloads overlap".into()));
    }
    Ok(out)
}

pub fn write_container(path: &Path, entries: &[Entry]) -> Result<()> {
    write_atomic(path, &encode_container(entries))
}

pub fn read_container(path: &Path) -> Result<Vec<Entry>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_container(&bytes, path)
}

fn take_tensor(entries: &mut Vec<Entry>, name: &str, path: &Path) -> Result<Tensor> {
    let pos = entries
        .iter()
        .position(|e| e.name == name && e.kind == EntryKind::Tensor)
        .ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("missing tensor entry {name}"),
        })?;
    Ok(entries.swap_remove(pos).tensor.unwrap())
}

fn find_meta(entries: &[Entry], kind: EntryKind, path: &Path) -> Result<Value> {
    entries
        .iter()
        .find(|e| e.kind == kind)
        .and_then(|e| e.meta.clone())
        .ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("no {kind:?} entry"),
        })
}

pub fn network_entries(net: &NetworkSpec) -> Vec<Entry> {
    let arch = serde_json::to_value(net.architecture()).expect("architecture serializes");
    let mut entries = vec![Entry::meta("network", EntryKind::Netspec, arch)];
    for (k, p) in net.params().iter().enumerate() {
        if let Some(p) = p {
            entries.push(Entry::tensor(format!("layers.{k}.weight"), p.weight.clone()));
            if let Some(b) = &p.bias {
                entries.push(Entry::tensor(format!("layers.{k}.bias"), b.clone()));
            }
        }
    }
    entries
}

pub fn save_network(path: &Path, net: &NetworkSpec) -> Result<()> {
    write_container(path, &network_entries(net))
}

pub fn load_network(path: &Path) -> Result<NetworkSpec> {
    let mut entries = read_container(path)?;
    let arch: Architecture = serde_json::from_value(find_meta(&entries, EntryKind::Netspec, path)?)
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("network description: {e}"),
        })?;
    let mut params = Vec::with_capacity(arch.layers.len());
    for (k, layer) in arch.layers.iter().enumerate() {
        if !layer.is_weighted() {
            params.push(None);
            continue;
        }
        let weight = take_tensor(&mut entries, &format!("layers.{k}.weight"), path)?;
        let bias = match layer.bias_len() {
            Some(_) => Some(take_tensor(&mut entries, &format!("layers.{k}.bias"), path)?),
            None => None,
        };
        params.push(Some(LayerParams { weight, bias }));
    }
    NetworkSpec::new(arch, params).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoMeta {
    id: String,
    true_class: usize,
    pixel_range: (f64, f64),
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    videos: Vec<VideoMeta>,
}

pub fn save_dataset(path: &Path, videos: &[Video]) -> Result<()> {
    let meta = DatasetMeta {
        videos: videos
            .iter()
            .map(|v| VideoMeta {
                id: v.id.clone(),
                true_class: v.true_class,
                pixel_range: v.pixel_range,
            })
            .collect(),
    };
    let mut entries = vec![Entry::meta(
        "dataset",
        EntryKind::DatasetMeta,
        serde_json::to_value(&meta).expect("dataset meta serializes"),
    )];
    for (i, v) in videos.iter().enumerate() {
        entries.push(Entry::tensor(format!("videos.{i}"), v.frames.clone()));
    }
    write_container(path, &entries)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Video>> {
    let mut entries = read_container(path)?;
    let meta: DatasetMeta = serde_json::from_value(find_meta(&entries, EntryKind::DatasetMeta, path)?)
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("dataset description: {e}"),
        })?;
    meta.videos
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let frames = take_tensor(&mut entries, &format!("videos.{i}"), path)?;
            Video::new(frames, m.pixel_range, m.id, m.true_class)
        })
        .collect()
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_container(path, &[Entry::tensor("tensor", tensor.clone())])
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut entries = read_container(path)?;
    take_tensor(&mut entries, "tensor", path)
}

// ---------------------------------------------------------------------------
// CSV

pub const STEP_HEADER: &str = "step,B,C,D,L,A,topk_acc,excluded";
pub const OFFSET_HEADER: &str = "offset,L,A,B,C,D,excluded";

/// 17 significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Csv(format!("bad number {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Csv(format!("bad count {s:?}")))
}

pub fn step_csv(rows: &[StepRow]) -> String {
    let mut out = String::from(STEP_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.step.to_string(),
            fmt_f64(r.quadratic.curvature),
            fmt_f64(r.quadratic.linear),
            fmt_f64(r.quadratic.intercept),
            fmt_f64(r.linear.slope),
            fmt_f64(r.linear.intercept),
            fmt_f64(r.topk_accuracy),
            r.excluded.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn offset_csv(rows: &[OffsetRow]) -> String {
    let mut out = String::from(OFFSET_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.offset.to_string(),
            fmt_f64(r.linear.slope),
            fmt_f64(r.linear.intercept),
            fmt_f64(r.quadratic.curvature),
            fmt_f64(r.quadratic.linear),
            fmt_f64(r.quadratic.intercept),
            r.excluded.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Csv(format!("expected header {header:?}")));
    }
    let width = header.split(',').count();
    lines
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != width {
                return Err(Error::Csv(format!("expected {width} columns in {line:?}")));
            }
            Ok(cols)
        })
        .collect()
}

pub fn parse_step_csv(text: &str) -> Result<Vec<StepRow>> {
    csv_rows(text, STEP_HEADER)?
        .into_iter()
        .map(|c| {
            Ok(StepRow {
                step: c[0].parse::<Step>().map_err(|e| Error::Csv(e.to_string()))?,
                quadratic: QuadraticFit {
                    curvature: parse_f64(c[1])?,
                    linear: parse_f64(c[2])?,
                    intercept: parse_f64(c[3])?,
                },
                linear: LinearFit {
                    slope: parse_f64(c[4])?,
                    intercept: parse_f64(c[5])?,
                },
                topk_accuracy: parse_f64(c[6])?,
                excluded: parse_usize(c[7])?,
            })
        })
        .collect()
}

pub fn parse_offset_csv(text: &str) -> Result<Vec<OffsetRow>> {
    csv_rows(text, OFFSET_HEADER)?
        .into_iter()
        .map(|c| {
            Ok(OffsetRow {
                offset: parse_usize(c[0])?,
                linear: LinearFit {
                    slope: parse_f64(c[1])?,
                    intercept: parse_f64(c[2])?,
                },
                quadratic: QuadraticFit {
                    curvature: parse_f64(c[3])?,
                    linear: parse_f64(c[4])?,
                    intercept: parse_f64(c[5])?,
                },
                excluded: parse_usize(c[6])?,
            })
        })
        .collect()
}

pub fn write_step_csv(path: &Path, rows: &[StepRow]) -> Result<()> {
    write_atomic(path, step_csv(rows).as_bytes())
}

pub fn write_offset_csv(path: &Path, rows: &[OffsetRow]) -> Result<()> {
    write_atomic(path, offset_csv(rows).as_bytes())
}

pub fn read_step_csv(path: &Path) -> Result<Vec<StepRow>> {
    parse_step_csv(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn read_offset_csv(path: &Path) -> Result<Vec<OffsetRow>> {
    parse_offset_csv(&fs::read_to_string(path).map_err(io_err(path))?)
}

// ---------------------------------------------------------------------------
// heatmaps

/// One P6 image per frame. Channels are summed per pixel, then scores are
/// divided by the largest absolute pixel score of the whole snippet and
/// mapped white → red.
pub fn heatmap_frames(map: &AttributionMap) -> Result<Vec<Vec<u8>>> {
    let shape = map.scores.shape();
    if shape.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "heatmaps need a (channels, T, H, W) map, got {shape:?}"
        )));
    }
    let (c, t, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = t * h * w;
    let scores = map.scores.data();
    let pixels: Vec<f64> = (0..plane)
        .map(|i| (0..c).map(|ch| scores[ch * plane + i]).sum())
        .collect();
    let max = pixels.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Degenerate("attribution map is all zero".into()));
    }
    Ok(pixels
        .chunks(h * w)
        .map(|frame| {
            let mut img = format!("P6\n{w} {h}\n255\n").into_bytes();
            for &s in frame {
                let v = (s / max).clamp(0.0, 1.0);
                let gb = (255.0 * (1.0 - v)).round() as u8;
                img.extend_from_slice(&[255, gb, gb]);
            }
            img
        })
        .collect())
}

/// Writes `frame_001.ppm`, `frame_002.ppm`, ... into `dir`.
pub fn render_heatmap(map: &AttributionMap, dir: &Path) -> Result<Vec<PathBuf>> {
    let frames = heatmap_frames(map)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    frames
        .iter()
        .enumerate()
        .map(|(t, img)| {
            let path = dir.join(format!("frame_{:03}.ppm", t + 1));
            write_atomic(&path, img)?;
            Ok(path)
        })
        .collect()
}

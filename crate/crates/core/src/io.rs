//! Deterministic file formats: OBJ / ASCII PLY / XYZ shapes, trajectory
//! directories with a checksummed manifest, training checkpoints, and metric
//! report files.
//!
//! Two precision regimes: standalone shape files use 9 significant digits
//! (round-trip to 1e-6, diff-friendly); trajectory frames and checkpoints
//! use exact representations so replay is bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::energy::{EnergyReport, RegularizerWeights};
use crate::error::{Error, Result};
use crate::kernel::{DiffusionSchedule, KernelKind, Trajectory, TrajectoryMode};
use crate::metrics::MetricReport;
use crate::model::{ModelHyper, OptimizerState, RegressorModel, MODEL_VERSION};
use crate::shape::{Shape, Vec3};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Coordinate precision of a writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Precision {
    /// 9 significant digits.
    Sig9,
    /// Shortest representation that parses back to the same f64.
    Exact,
}

fn fmt_coord(x: f64, p: Precision) -> String {
    match p {
        Precision::Sig9 => format!("{x:.8e}"),
        Precision::Exact => format!("{x}"),
    }
}

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn extension(path: &Path) -> Result<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .ok_or_else(|| Error::UnknownExtension(path.display().to_string()))
}

/// Writes a shape in the format implied by the extension (.obj, .ply, .xyz)
/// at 9-significant-digit precision.
pub fn save_shape(shape: &Shape, path: &Path) -> Result<()> {
    save_shape_with(shape, path, Precision::Sig9)
}

fn save_shape_with(shape: &Shape, path: &Path, prec: Precision) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::EmptyShape);
    }
    let text = match extension(path)?.as_str() {
        "obj" => render_obj(shape, prec),
        "ply" => render_ply(shape, prec),
        "xyz" => render_xyz(shape, prec),
        other => return Err(Error::UnknownExtension(other.to_string())),
    };
    atomic_write(path, &text)
}

fn render_xyz(shape: &Shape, prec: Precision) -> String {
    let mut out = String::new();
    for p in &shape.vertices {
        let _ = writeln!(
            out,
            "{} {} {}",
            fmt_coord(p.x, prec),
            fmt_coord(p.y, prec),
            fmt_coord(p.z, prec)
        );
    }
    out
}

fn render_obj(shape: &Shape, prec: Precision) -> String {
    let mut out = String::new();
    for p in &shape.vertices {
        let _ = writeln!(
            out,
            "v {} {} {}",
            fmt_coord(p.x, prec),
            fmt_coord(p.y, prec),
            fmt_coord(p.z, prec)
        );
    }
    if let Some(normals) = &shape.normals {
        for n in normals {
            let _ = writeln!(
                out,
                "vn {} {} {}",
                fmt_coord(n.x, prec),
                fmt_coord(n.y, prec),
                fmt_coord(n.z, prec)
            );
        }
    }
    if let Some(faces) = &shape.faces {
        for f in faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
    }
    out
}

fn render_ply(shape: &Shape, prec: Precision) -> String {
    let mut out = String::new();
    let nfaces = shape.faces.as_ref().map_or(0, Vec::len);
    let _ = writeln!(out, "ply");
    let _ = writeln!(out, "format ascii 1.0");
    let _ = writeln!(out, "element vertex {}", shape.len());
    let _ = writeln!(out, "property double x");
    let _ = writeln!(out, "property double y");
    let _ = writeln!(out, "property double z");
    if nfaces > 0 {
        let _ = writeln!(out, "element face {nfaces}");
        let _ = writeln!(out, "property list uchar int vertex_indices");
    }
    let _ = writeln!(out, "end_header");
    for p in &shape.vertices {
        let _ = writeln!(
            out,
            "{} {} {}",
            fmt_coord(p.x, prec),
            fmt_coord(p.y, prec),
            fmt_coord(p.z, prec)
        );
    }
    if let Some(faces) = &shape.faces {
        for f in faces {
            let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
        }
    }
    out
}

/// Loads a shape in the format implied by the extension.
pub fn load_shape(path: &Path) -> Result<Shape> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path.display().to_string();
    match extension(path)?.as_str() {
        "obj" => parse_obj(&text, &name),
        "ply" => parse_ply(&text, &name),
        "xyz" => parse_xyz(&text, &name),
        other => Err(Error::UnknownExtension(other.to_string())),
    }
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, path: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("expected a number, got '{tok}'")))
}

fn parse_xyz(text: &str, path: &str) -> Result<Shape> {
    let mut pts = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(path, line, "expected three coordinates"));
        }
        pts.push(Vec3::new(
            parse_f64(toks[0], path, line)?,
            parse_f64(toks[1], path, line)?,
            parse_f64(toks[2], path, line)?,
        ));
    }
    if pts.is_empty() {
        return Err(Error::EmptyShape);
    }
    Ok(Shape::point_cloud(pts))
}

fn parse_obj(text: &str, path: &str) -> Result<Shape> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        match toks.next().unwrap() {
            "v" => {
                let coords: Vec<&str> = toks.collect();
                if coords.len() < 3 {
                    return Err(parse_err(path, line, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(
                    parse_f64(coords[0], path, line)?,
                    parse_f64(coords[1], path, line)?,
                    parse_f64(coords[2], path, line)?,
                ));
            }
            "vn" => {
                let coords: Vec<&str> = toks.collect();
                if coords.len() < 3 {
                    return Err(parse_err(path, line, "normal needs three coordinates"));
                }
                normals.push(Vec3::new(
                    parse_f64(coords[0], path, line)?,
                    parse_f64(coords[1], path, line)?,
                    parse_f64(coords[2], path, line)?,
                ));
            }
            "f" => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        // "i", "i/j", and "i//k" all resolve to the vertex index
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| {
                            parse_err(path, line, format!("bad face index '{t}'"))
                        })?;
                        if i < 1 || i as usize > vertices.len() {
                            return Err(parse_err(
                                path,
                                line,
                                format!("face index {i} out of range 1..={}", vertices.len()),
                            ));
                        }
                        Ok(i as usize - 1)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(path, line, "face needs at least three indices"));
                }
                // fan triangulation for polygons
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            // ignore other record types (o, g, s, usemtl, ...)
            _ => {}
        }
    }
    if vertices.is_empty() {
        return Err(Error::EmptyShape);
    }
    let mut shape = if faces.is_empty() {
        Shape::point_cloud(vertices)
    } else {
        Shape::mesh(vertices, faces)?
    };
    if normals.len() == shape.len() {
        shape.normals = Some(normals);
    }
    Ok(shape)
}

fn parse_ply(text: &str, path: &str) -> Result<Shape> {
    let mut lines = text.lines().enumerate();
    let mut nvert = None;
    let mut nface = 0usize;
    let mut header_end = 0usize;
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if first.trim() != "ply" {
        return Err(parse_err(path, 1, "missing ply magic"));
    }
    for (lineno, raw) in lines.by_ref() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => {
                header_end = line;
                break;
            }
            ["format", kind, _] => {
                if *kind != "ascii" {
                    return Err(parse_err(path, line, "only ascii ply is supported"));
                }
            }
            ["element", "vertex", n] => {
                nvert = Some(n.parse::<usize>().map_err(|_| {
                    parse_err(path, line, format!("bad vertex count '{n}'"))
                })?);
            }
            ["element", "face", n] => {
                nface = n
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("bad face count '{n}'")))?;
            }
            ["comment", ..] | ["property", ..] | ["element", ..] => {}
            _ => return Err(parse_err(path, line, format!("unrecognized header '{trimmed}'"))),
        }
    }
    if header_end == 0 {
        return Err(parse_err(path, 1, "header never terminated"));
    }
    let nvert = nvert.ok_or_else(|| parse_err(path, header_end, "no vertex element"))?;

    let mut vertices = Vec::with_capacity(nvert);
    let mut faces = Vec::with_capacity(nface);
    for (lineno, raw) in lines {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if vertices.len() < nvert {
            if toks.len() < 3 {
                return Err(parse_err(path, line, "vertex needs three coordinates"));
            }
            vertices.push(Vec3::new(
                parse_f64(toks[0], path, line)?,
                parse_f64(toks[1], path, line)?,
                parse_f64(toks[2], path, line)?,
            ));
        } else if faces.len() < nface {
            let count: usize = toks[0]
                .parse()
                .map_err(|_| parse_err(path, line, "bad face list length"))?;
            if count + 1 != toks.len() || count < 3 {
                return Err(parse_err(path, line, "malformed face list"));
            }
            let idx: Vec<usize> = toks[1..]
                .iter()
                .map(|t| {
                    let i: usize = t
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("bad face index '{t}'")))?;
                    if i >= nvert {
                        return Err(parse_err(
                            path,
                            line,
                            format!("face index {i} out of range 0..{nvert}"),
                        ));
                    }
                    Ok(i)
                })
                .collect::<Result<_>>()?;
            for k in 1..idx.len() - 1 {
                faces.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
    }
    if vertices.len() != nvert {
        return Err(parse_err(
            path,
            header_end,
            format!("expected {nvert} vertices, found {}", vertices.len()),
        ));
    }
    if vertices.is_empty() {
        return Err(Error::EmptyShape);
    }
    if faces.is_empty() {
        Ok(Shape::point_cloud(vertices))
    } else {
        Shape::mesh(vertices, faces)
    }
}

/// Loads every supported shape file in a directory, sorted by filename.
pub fn load_shape_dir(dir: &Path) -> Result<Vec<(String, Shape)>> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                extension(p).as_deref(),
                Ok("obj") | Ok("ply") | Ok("xyz")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, load_shape(&p)?))
        })
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct FrameEntry {
    file: String,
    checksum: String,
    energy: EnergyReport,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Manifest {
    schema_version: u32,
    steps: usize,
    interval: usize,
    mode: TrajectoryMode,
    kernel: KernelKind,
    seed: u64,
    rebuild_interval: usize,
    beta: Vec<f64>,
    weights: RegularizerWeights,
    anchor_id: String,
    template_id: String,
    frames: Vec<FrameEntry>,
}

/// Writes one shape file per frame (OBJ for meshes, XYZ for point clouds)
/// at exact precision, then the checksummed manifest, atomically and last.
pub fn save_trajectory(traj: &Trajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut entries = Vec::with_capacity(traj.frames.len());
    for (t, frame) in traj.frames.iter().enumerate() {
        let ext = if frame.faces.is_some() { "obj" } else { "xyz" };
        let file = format!("frame_{t:05}.{ext}");
        let path = dir.join(&file);
        save_shape_with(frame, &path, Precision::Exact)?;
        let bytes =
            fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        entries.push(FrameEntry {
            file,
            checksum: sha256_hex(&bytes),
            energy: traj.energies[t],
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        steps: traj.schedule.steps,
        interval: traj.schedule.interval,
        mode: traj.schedule.mode,
        kernel: traj.kernel,
        seed: traj.schedule.seed,
        rebuild_interval: traj.schedule.rebuild_interval,
        beta: traj.schedule.beta.clone(),
        weights: traj.weights,
        anchor_id: traj.anchor_id.clone(),
        template_id: traj.template_id.clone(),
        frames: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    atomic_write(&dir.join(MANIFEST_FILE), &json)
}

/// Loads a trajectory directory, verifying frame presence and checksums.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let mpath = dir.join(MANIFEST_FILE);
    let text =
        fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported schema version {}",
            manifest.schema_version
        )));
    }
    if manifest.frames.len() != manifest.steps + 1 {
        return Err(Error::Manifest(format!(
            "{} frames listed for {} steps",
            manifest.frames.len(),
            manifest.steps
        )));
    }
    let schedule = DiffusionSchedule {
        steps: manifest.steps,
        beta: manifest.beta,
        interval: manifest.interval,
        mode: manifest.mode,
        seed: manifest.seed,
        rebuild_interval: manifest.rebuild_interval,
    };
    schedule.validate()?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut energies = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(Error::MissingFrame(entry.file.clone()));
        }
        let bytes =
            fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if sha256_hex(&bytes) != entry.checksum {
            return Err(Error::ChecksumMismatch(entry.file.clone()));
        }
        frames.push(load_shape(&path)?);
        energies.push(entry.energy);
    }
    Ok(Trajectory {
        frames,
        kernel: manifest.kernel,
        schedule,
        weights: manifest.weights,
        anchor_id: manifest.anchor_id,
        template_id: manifest.template_id,
        energies,
    })
}

/// A trained model with its optimizer state and iteration counter, enough
/// to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RegressorModel,
    pub optimizer: OptimizerState,
    pub iteration: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    version: u32,
    hyper: ModelHyper,
    iteration: u64,
    opt_step: u64,
    theta: Vec<String>,
    opt_m: Vec<String>,
    opt_v: Vec<String>,
    checksum: String,
}

fn f64s_to_hex(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{:016x}", v.to_bits())).collect()
}

fn hex_to_f64s(hex: &[String], what: &str) -> Result<Vec<f64>> {
    hex.iter()
        .map(|h| {
            u64::from_str_radix(h, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::Checkpoint(format!("bad {what} entry '{h}'")))
        })
        .collect()
}

fn checkpoint_digest(theta: &[String], m: &[String], v: &[String]) -> String {
    let mut h = Sha256::new();
    for part in [theta, m, v] {
        for entry in part {
            h.update(entry.as_bytes());
            h.update(b"\n");
        }
    }
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Parameters and optimizer moments are stored as f64 bit patterns in hex,
/// so save/load round-trips are bit-exact.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    ck.model.validate()?;
    let theta = f64s_to_hex(&ck.model.theta);
    let opt_m = f64s_to_hex(&ck.optimizer.m);
    let opt_v = f64s_to_hex(&ck.optimizer.v);
    let checksum = checkpoint_digest(&theta, &opt_m, &opt_v);
    let file = CheckpointFile {
        version: MODEL_VERSION,
        hyper: ck.model.hyper,
        iteration: ck.iteration,
        opt_step: ck.optimizer.step,
        theta,
        opt_m,
        opt_v,
        checksum,
    };
    atomic_write(path, &serde_json::to_string(&file)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != MODEL_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    if checkpoint_digest(&file.theta, &file.opt_m, &file.opt_v) != file.checksum {
        return Err(Error::ChecksumMismatch(path.display().to_string()));
    }
    let theta = hex_to_f64s(&file.theta, "parameter")?;
    if theta.len() != file.hyper.param_count() {
        return Err(Error::ModelMismatch(format!(
            "checkpoint holds {} parameters, hyperparameters imply {}",
            theta.len(),
            file.hyper.param_count()
        )));
    }
    let model = RegressorModel {
        hyper: file.hyper,
        theta,
        version: file.version,
    };
    model.validate()?;
    let optimizer = OptimizerState {
        m: hex_to_f64s(&file.opt_m, "first-moment")?,
        v: hex_to_f64s(&file.opt_v, "second-moment")?,
        step: file.opt_step,
    };
    if optimizer.m.len() != model.theta.len() || optimizer.v.len() != model.theta.len() {
        return Err(Error::Checkpoint(
            "optimizer state length does not match parameters".into(),
        ));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        iteration: file.iteration,
    })
}

/// Flat key-value rendering of a metric report: raw values first, then the
/// conventionally scaled presentation block.
pub fn metric_report_text(r: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n_generated     {}", r.n_generated);
    let _ = writeln!(out, "n_reference     {}", r.n_reference);
    let _ = writeln!(out, "jsd_resolution  {}", r.jsd_resolution);
    let _ = writeln!(out, "emd_cap         {}", r.emd_cap);
    let _ = writeln!(out, "mmd_cd          {:.9e}", r.mmd_cd);
    let _ = writeln!(out, "mmd_emd         {:.9e}", r.mmd_emd);
    let _ = writeln!(out, "cov_cd          {:.6}", r.cov_cd);
    let _ = writeln!(out, "cov_emd         {:.6}", r.cov_emd);
    let _ = writeln!(out, "one_nna_cd      {:.6}", r.one_nna_cd);
    let _ = writeln!(out, "one_nna_emd     {:.6}", r.one_nna_emd);
    let _ = writeln!(out, "jsd             {:.9e}", r.jsd);
    for line in r.table_lines() {
        let _ = writeln!(out, "{line}");
    }
    out
}

/// Writes the structured and human-readable report files.
pub fn save_metric_report(r: &MetricReport, json_path: &Path, text_path: &Path) -> Result<()> {
    atomic_write(json_path, &serde_json::to_string_pretty(r)?)?;
    atomic_write(text_path, &metric_report_text(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::RegularizerWeights;
    use crate::kernel::{run_trajectory, TrajectoryMode};
    use crate::primitives::{icosphere, sample_ellipsoid};
    use tempfile::tempdir;

    #[test]
    fn xyz_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        let cloud = sample_ellipsoid(64, Vec3::new(1.0, 0.7, 0.4), 1);
        save_shape(&cloud, &path).unwrap();
        let back = load_shape(&path).unwrap();
        assert_eq!(back.len(), 64);
        let max_delta = cloud
            .vertices
            .iter()
            .zip(&back.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_delta < 1e-6, "round-trip drift {max_delta}");
    }

    #[test]
    fn obj_round_trip_preserves_connectivity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sphere.obj");
        let mesh = icosphere(2).unwrap();
        save_shape(&mesh, &path).unwrap();
        let back = load_shape(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        assert_eq!(back.edges, mesh.edges);
        let max_delta = mesh
            .vertices
            .iter()
            .zip(&back.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_delta < 1e-6);
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sphere.ply");
        let mesh = icosphere(1).unwrap();
        save_shape(&mesh, &path).unwrap();
        let back = load_shape(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        assert_eq!(back.len(), mesh.len());
    }

    #[test]
    fn cube_obj_combinatorics() {
        let text = "\
v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n\
f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\n\
f 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";
        let shape = parse_obj(text, "cube.obj").unwrap();
        assert_eq!(shape.len(), 8);
        assert_eq!(shape.faces.as_ref().unwrap().len(), 12);
        assert_eq!(shape.edges.as_ref().unwrap().len(), 18);
    }

    #[test]
    fn obj_quad_fan_triangulation() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let shape = parse_obj(text, "quad.obj").unwrap();
        assert_eq!(shape.faces.as_ref().unwrap().as_slice(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_bad_face_index_names_line() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        match parse_obj(text, "bad.obj") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 4);
                assert!(msg.contains('9'), "{msg}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_malformed_line_reported() {
        match parse_xyz("0 0 0\n1 banana 0\n", "bad.xyz") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_extension_rejected() {
        let dir = tempdir().unwrap();
        let cloud = sample_ellipsoid(4, Vec3::new(1.0, 1.0, 1.0), 2);
        assert!(matches!(
            save_shape(&cloud, &dir.path().join("x.stl")),
            Err(Error::UnknownExtension(_))
        ));
    }

    #[test]
    fn writers_are_deterministic() {
        let dir = tempdir().unwrap();
        let mesh = icosphere(1).unwrap();
        let a = dir.path().join("a.obj");
        let b = dir.path().join("b.obj");
        save_shape(&mesh, &a).unwrap();
        save_shape(&mesh, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    fn small_trajectory() -> Trajectory {
        let source = sample_ellipsoid(24, Vec3::new(1.0, 0.7, 0.5), 3);
        let w = RegularizerWeights::point_cloud();
        let sched =
            DiffusionSchedule::constant(5, 0.05, 5, TrajectoryMode::AnchoredDrift, 4).unwrap();
        run_trajectory(&source, &source, &w, &sched).unwrap()
    }

    #[test]
    fn trajectory_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let traj = small_trajectory();
        save_trajectory(&traj, dir.path()).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 7); // 6 frames + manifest
        let back = load_trajectory(dir.path()).unwrap();
        assert_eq!(back.frames.len(), traj.frames.len());
        for (a, b) in traj.frames.iter().zip(&back.frames) {
            assert_eq!(a.vertices, b.vertices, "frame vertices not bit-equal");
        }
        assert_eq!(back.schedule, traj.schedule);
        assert_eq!(back.kernel, traj.kernel);
        assert_eq!(back.energies, traj.energies);
    }

    #[test]
    fn trajectory_missing_frame_and_corruption_detected() {
        let dir = tempdir().unwrap();
        let traj = small_trajectory();
        save_trajectory(&traj, dir.path()).unwrap();

        let victim = dir.path().join("frame_00002.xyz");
        let original = fs::read(&victim).unwrap();
        fs::write(&victim, b"0 0 0\n").unwrap();
        assert!(matches!(
            load_trajectory(dir.path()),
            Err(Error::ChecksumMismatch(f)) if f == "frame_00002.xyz"
        ));

        fs::write(&victim, original).unwrap();
        assert!(load_trajectory(dir.path()).is_ok());
        fs::remove_file(&victim).unwrap();
        assert!(matches!(
            load_trajectory(dir.path()),
            Err(Error::MissingFrame(f)) if f == "frame_00002.xyz"
        ));
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let hyper = ModelHyper {
            width: 8,
            embed_dim: 8,
            heads: 1,
            time_conditioning: true,
            latent_conditioning: false,
        };
        let model = RegressorModel::new(hyper, 7).unwrap();
        let mut opt = OptimizerState::new(model.theta.len());
        opt.step = 42;
        opt.m[3] = 0.1234567890123456789;
        let ck = Checkpoint {
            model,
            optimizer: opt,
            iteration: 42,
        };
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn checkpoint_corruption_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = RegressorModel::new(
            ModelHyper {
                width: 8,
                embed_dim: 8,
                heads: 1,
                time_conditioning: true,
                latent_conditioning: false,
            },
            8,
        )
        .unwrap();
        let opt = OptimizerState::new(model.theta.len());
        save_checkpoint(
            &Checkpoint {
                model,
                optimizer: opt,
                iteration: 0,
            },
            &path,
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // flip one parameter's bits
        let mut file: CheckpointFile = serde_json::from_str(&text).unwrap();
        file.theta[0] = "3ff0000000000000".into();
        fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn metric_report_files() {
        let dir = tempdir().unwrap();
        let r = MetricReport {
            mmd_cd: 0.001,
            mmd_emd: 0.2,
            cov_cd: 0.5,
            cov_emd: 0.75,
            one_nna_cd: 0.5,
            one_nna_emd: 0.55,
            jsd: 0.01,
            n_generated: 4,
            n_reference: 4,
            jsd_resolution: 28,
            emd_cap: 1024,
        };
        let j = dir.path().join("report.json");
        let t = dir.path().join("report.txt");
        save_metric_report(&r, &j, &t).unwrap();
        let text = fs::read_to_string(&t).unwrap();
        assert!(text.contains("MMD-CD (x1e3)   1.000000"));
        assert!(text.contains("JSD (x1e2)      1.000000"));
        let back: MetricReport = serde_json::from_str(&fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn shape_dir_listing_sorted() {
        let dir = tempdir().unwrap();
        let cloud = sample_ellipsoid(10, Vec3::new(1.0, 1.0, 1.0), 9);
        save_shape(&cloud, &dir.path().join("b.xyz")).unwrap();
        save_shape(&cloud, &dir.path().join("a.xyz")).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let shapes = load_shape_dir(dir.path()).unwrap();
        let names: Vec<&str> = shapes.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["a.xyz", "b.xyz"]);
        assert!(load_shape_dir(&dir.path().join("missing")).is_err());
    }
}

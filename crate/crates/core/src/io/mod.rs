//! Frame directories on disk and crash-safe file writes.
//!
//! A dataset is a directory with one sub-directory per video; each video holds
//! `frame_00000.ppm`, `frame_00001.ppm`, … as binary P6, 8-bit RGB.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{0}: no such file or directory")]
    Missing(PathBuf),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One video: frames `[3,H,W]` in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub frames: Vec<Tensor<f32>>,
}

impl Video {
    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }
    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }
}

/// 8-bit code of a `[0,1]` value.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the nearest 8-bit level, with the same f32 value a
/// PPM reader produces for that level.
pub fn quantize_8bit<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| T::of((to_u8(v.as_f64()) as f32 / 255.0) as f64))
}

pub fn encode_ppm<T: Scalar>(frame: &Tensor<T>) -> Vec<u8> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = frame.data();
    for p in 0..h * w {
        for c in 0..3 {
            out.push(to_u8(d[c * h * w + p].as_f64()));
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |reason: &str| IoError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary P6 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit (maxval 255) images are supported"));
    }
    if w == 0 || h == 0 {
        return Err(bad("empty image"));
    }
    pos += 1;
    let px = bytes.get(pos..pos + 3 * w * h).ok_or_else(|| bad("truncated pixel data"))?;
    let mut data = vec![0.0f32; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = px[3 * p + c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data).expect("shape matches data"))
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes, path)
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.ppm")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Loads one video directory; frames must be numbered contiguously from 0.
pub fn load_video(dir: &Path) -> Result<Video> {
    if !dir.is_dir() {
        return Err(IoError::Missing(dir.to_path_buf()));
    }
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_name(frames.len()));
        if !p.exists() {
            break;
        }
        let f = read_ppm(&p)?;
        if let Some(first) = frames.first() {
            if Tensor::shape(first) != f.shape() {
                return Err(IoError::Format {
                    path: p,
                    reason: "frame size differs from frame 0".into(),
                });
            }
        }
        frames.push(f);
    }
    let stray = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let n = e.file_name().to_string_lossy().into_owned();
            n.starts_with("frame_") && n.ends_with(".ppm")
        })
        .count();
    if frames.is_empty() || stray != frames.len() {
        return Err(IoError::Format {
            path: dir.to_path_buf(),
            reason: format!(
                "expected contiguous frame_%05d.ppm from 0; found {stray} frame files, {} contiguous",
                frames.len()
            ),
        });
    }
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Video { id, frames })
}

/// Loads every video sub-directory, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Video>> {
    if !dir.is_dir() {
        return Err(IoError::Missing(dir.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(IoError::Format {
            path: dir.to_path_buf(),
            reason: "no video directories".into(),
        });
    }
    dirs.iter().map(|d| load_video(d)).collect()
}

pub fn save_video(root: &Path, video: &Video) -> Result<()> {
    let dir = root.join(&video.id);
    for (i, f) in video.frames.iter().enumerate() {
        atomic_write(&dir.join(frame_name(i)), &encode_ppm(f))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, k: usize) -> Tensor<f32> {
        Tensor::from_fn(&[3, h, w], |i| ((i * 7 + k) % 256) as f32 / 255.0)
    }

    #[test]
    fn ppm_roundtrip_and_size() {
        let f = frame(5, 7, 1);
        let bytes = encode_ppm(&f);
        assert_eq!(bytes.len(), "P6\n7 5\n255\n".len() + 3 * 5 * 7);
        let back = decode_ppm(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P6 # c\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let t = decode_ppm(&bytes, Path::new("x")).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(decode_ppm(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n", Path::new("x")).is_err());
    }

    #[test]
    fn dataset_roundtrip_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let v = Video {
            id: "b".into(),
            frames: (0..3).map(|k| frame(4, 6, k)).collect(),
        };
        save_video(dir.path(), &v).unwrap();
        save_video(
            dir.path(),
            &Video {
                id: "a".into(),
                frames: vec![frame(4, 6, 9)],
            },
        )
        .unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.iter().map(|v| v.id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(ds[1], v);
        fs::remove_file(dir.path().join("b").join(frame_name(1))).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(IoError::Format { .. })));
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(IoError::Missing(_))));
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.bin");
        atomic_write(&p, b"abc").unwrap();
        atomic_write(&p, b"de").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"de");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageReader, Limits, RgbImage};

use super::{Domain, DomainDataset, ImageRef, Sample};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Decodes PNG or JPEG bytes into 8-bit RGB.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let mut reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    let mut limits = Limits::default();
    limits.max_image_width = Some(16_384);
    limits.max_image_height = Some(16_384);
    limits.max_alloc = Some(256 * 1024 * 1024);
    reader.limits(limits);
    let img = reader.decode().map_err(|e| e.to_string())?;
    Ok(img.to_rgb8())
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Folder-per-class layout: `root/<class>/<image>`.
///
/// Samples are ordered by (class name, file name). Class ids follow sorted
/// class names, or `expected_classes` exactly when given.
pub fn ingest_folder(root: &Path, expected_classes: Option<&[String]>, domain: Domain) -> Result<DomainDataset> {
    if !root.is_dir() {
        return Err(Error::config(format!(
            "dataset root {} does not exist or is not a directory",
            root.display()
        )));
    }
    let mut classes: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for path in read_dir_sorted(root)? {
        if !path.is_dir() {
            continue;
        }
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Ingest(format!("non UTF-8 class directory {}", path.display())))?
            .to_string();
        let files: Vec<PathBuf> = read_dir_sorted(&path)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if files.is_empty() {
            return Err(Error::Ingest(format!("class directory {name:?} contains no images")));
        }
        classes.push((name, files));
    }
    if classes.is_empty() {
        return Err(Error::Ingest(format!("no class directories under {}", root.display())));
    }
    let class_names: Vec<String> = match expected_classes {
        None => classes.iter().map(|(n, _)| n.clone()).collect(),
        Some(exp) => {
            for (n, _) in &classes {
                if !exp.contains(n) {
                    return Err(Error::Ingest(format!(
                        "class {n:?} found on disk is not in the expected class list"
                    )));
                }
            }
            for e in exp {
                if !classes.iter().any(|(n, _)| n == e) {
                    return Err(Error::Ingest(format!(
                        "expected class {e:?} has no directory under {}",
                        root.display()
                    )));
                }
            }
            exp.to_vec()
        }
    };
    let mut samples = Vec::new();
    for (name, files) in classes {
        let id = class_names
            .iter()
            .position(|n| *n == name)
            .expect("class present in mapping");
        samples.extend(
            files
                .into_iter()
                .map(|f| Sample::new(ImageRef::Path(f), Some(id), domain)),
        );
    }
    let ds_name = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string();
    DomainDataset::new(ds_name, domain, class_names, samples)
}

/// Parses `relative_path label` lines. Blank lines and `#` comments are
/// skipped; the label is the last whitespace-separated token so paths may
/// contain spaces.
pub fn parse_list_file(text: &str) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (path, label) = line
            .rsplit_once(char::is_whitespace)
            .ok_or_else(|| Error::Ingest(format!("list line {}: expected \"path label\"", no + 1)))?;
        let path = path.trim_end();
        if path.is_empty() {
            return Err(Error::Ingest(format!("list line {}: empty path", no + 1)));
        }
        let label: usize = label
            .parse()
            .map_err(|_| Error::Ingest(format!("list line {}: bad label {label:?}", no + 1)))?;
        out.push((path.to_string(), label));
    }
    Ok(out)
}

/// List-file layout; paths are resolved against `root`. Without explicit
/// class names, classes are named `class_<id>` up to the largest label.
pub fn ingest_list(list: &Path, root: &Path, class_names: Option<&[String]>, domain: Domain) -> Result<DomainDataset> {
    let text = std::fs::read_to_string(list).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::config(format!("list file {} does not exist", list.display())),
        _ => Error::io(list, e),
    })?;
    let entries = parse_list_file(&text)?;
    if entries.is_empty() {
        return Err(Error::Ingest(format!("list file {} has no entries", list.display())));
    }
    let max = entries.iter().map(|(_, l)| *l).max().unwrap_or(0);
    let names: Vec<String> = match class_names {
        Some(n) => n.to_vec(),
        None => (0..=max).map(|k| format!("class_{k}")).collect(),
    };
    let samples = entries
        .into_iter()
        .map(|(p, l)| Sample::new(ImageRef::Path(root.join(p)), Some(l), domain))
        .collect();
    let ds_name = list.file_stem().and_then(|n| n.to_str()).unwrap_or("list").to_string();
    DomainDataset::new(ds_name, domain, names, samples)
}

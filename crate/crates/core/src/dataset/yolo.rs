//! YOLO directory layout:
//!
//! ```text
//! out/
//!   classes.names      one class name per line, line index = class id
//!   images/<file>      copied image files
//!   labels/<stem>.txt  "class cx cy w h", normalized, 6 decimals
//!   train.txt val.txt  image paths per split
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::annotation::{AnnotationSet, AnnotationSource};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::geometry::BoundingBox;

use super::{DatasetManifest, ImageRecord, Provenance, Split};

pub const NAMES_FILE: &str = "classes.names";

pub fn format_yolo_line(class_id: usize, b: &BoundingBox, width: u32, height: u32) -> String {
    let (w, h) = (f64::from(width), f64::from(height));
    let (cx, cy) = b.center();
    format!(
        "{class_id} {:.6} {:.6} {:.6} {:.6}",
        cx / w,
        cy / h,
        b.width() / w,
        b.height() / h
    )
}

fn stem(file_name: &str) -> Result<String> {
    Path::new(file_name)
        .file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::invalid("file_name", format!("`{file_name}` has no file stem")))
}

/// Writes the manifest in YOLO layout. Image files are copied from
/// `image_root.join(record.file_name)`.
pub fn export_yolo(manifest: &DatasetManifest, image_root: &Path, out: &Path) -> Result<()> {
    manifest.validate()?;
    let mut stems = BTreeSet::new();
    let mut train = String::new();
    let mut val = String::new();
    for rec in &manifest.images {
        let stem = stem(&rec.file_name)?;
        if !stems.insert(stem.clone()) {
            return Err(Error::invalid(
                "file_name",
                format!("two images share the stem `{stem}`"),
            ));
        }
        let src = image_root.join(&rec.file_name);
        let fname = Path::new(&rec.file_name)
            .file_name()
            .expect("stem exists so file name exists");
        let dst = out.join("images").join(fname);
        let bytes = std::fs::read(&src).map_err(|e| Error::io(&src, e))?;
        write_atomic(&dst, &bytes)?;

        let mut labels = String::new();
        for b in &rec.annotations.boxes {
            labels.push_str(&format_yolo_line(0, b, rec.width, rec.height));
            labels.push('\n');
        }
        write_atomic(&out.join("labels").join(format!("{stem}.txt")), labels.as_bytes())?;

        let list = match rec.split {
            Split::Train => Some(&mut train),
            Split::Val => Some(&mut val),
            _ => None,
        };
        if let Some(list) = list {
            let _ = writeln!(list, "images/{}", fname.to_string_lossy());
        }
    }
    let mut names = manifest.classes.join("\n");
    names.push('\n');
    write_atomic(&out.join(NAMES_FILE), names.as_bytes())?;
    write_atomic(&out.join("train.txt"), train.as_bytes())?;
    write_atomic(&out.join("val.txt"), val.as_bytes())?;
    Ok(())
}

fn read_list(path: &Path) -> Result<BTreeSet<String>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeSet::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn parse_label_line(path: &Path, line_no: usize, line: &str, classes: usize, w: f64, h: f64) -> Result<BoundingBox> {
    let bad = |field: &str, msg: String| Error::record(path, line_no, field, msg);
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(bad("line", format!("expected 5 fields, found {}", parts.len())));
    }
    let class: usize = parts[0]
        .parse()
        .map_err(|_| bad("class", format!("`{}` is not a class index", parts[0])))?;
    if class >= classes {
        return Err(bad("class", format!("{class} is not listed in {NAMES_FILE}")));
    }
    let mut v = [0.0; 4];
    for (i, name) in ["cx", "cy", "w", "h"].iter().enumerate() {
        let x: f64 = parts[i + 1]
            .parse()
            .map_err(|_| bad(name, format!("`{}` is not a number", parts[i + 1])))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(bad(name, format!("{x} is outside [0, 1]")));
        }
        v[i] = x;
    }
    let [cx, cy, bw, bh] = v;
    let x0 = ((cx - bw / 2.0) * w).clamp(0.0, w);
    let y0 = ((cy - bh / 2.0) * h).clamp(0.0, h);
    let x1 = ((cx + bw / 2.0) * w).clamp(0.0, w);
    let y1 = ((cy + bh / 2.0) * h).clamp(0.0, h);
    BoundingBox::new(x0, y0, x1, y1).map_err(|e| bad("box", e.to_string()))
}

/// Reads a YOLO directory back into a manifest. Image sizes come from the
/// image files; splits come from `train.txt` / `val.txt` when present.
pub fn import_yolo(dir: &Path, name: &str) -> Result<DatasetManifest> {
    let names_path = dir.join(NAMES_FILE);
    let classes: Vec<String> = std::fs::read_to_string(&names_path)
        .map_err(|e| Error::io(&names_path, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let train = read_list(&dir.join("train.txt"))?;
    let val = read_list(&dir.join("val.txt"))?;

    let images_dir = dir.join("images");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&images_dir)
        .map_err(|e| Error::io(&images_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut manifest = DatasetManifest {
        name: name.to_string(),
        classes,
        images: Vec::with_capacity(files.len()),
    };
    for path in files {
        let fname = path.file_name().unwrap().to_string_lossy().into_owned();
        let stem = stem(&fname)?;
        let (width, height) = image::image_dimensions(&path)?;
        let label_path = dir.join("labels").join(format!("{stem}.txt"));
        let text = match std::fs::read_to_string(&label_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&label_path, e)),
        };
        let mut annotations = AnnotationSet::new(stem.clone(), AnnotationSource::Imported);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            annotations.boxes.push(parse_label_line(
                &label_path,
                i + 1,
                line,
                manifest.classes.len(),
                f64::from(width),
                f64::from(height),
            )?);
        }
        let listed = format!("images/{fname}");
        let split = if train.contains(&listed) {
            Split::Train
        } else if val.contains(&listed) {
            Split::Val
        } else {
            Split::Unassigned
        };
        manifest.images.push(ImageRecord {
            image_id: stem,
            file_name: listed,
            width,
            height,
            annotations,
            provenance: Provenance::Real,
            split,
        });
    }
    Ok(manifest)
}

//! Binary PGM (P5, maxval 255) reading and writing, and the image manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::domain::{Dataset, GrayImage, Label, LabeledSample};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["path", "label", "subregion", "uav"];

/// Parses a P5 image held in memory. `path` is only used in error messages.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let bad = |reason: &str| Error::BadPgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadPgmMagic {
            path: path.to_path_buf(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        // Whitespace and `#` comments may separate header tokens.
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
            return Err(bad("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval} unsupported, expected 255")));
    }
    let (w, h) = (
        u32::try_from(w).map_err(|_| bad("width too large"))?,
        u32::try_from(h).map_err(|_| bad("height too large"))?,
    );
    let n = w as usize * h as usize;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(bad(&format!(
            "expected {n} raster bytes, found {}",
            raster.len()
        )));
    }
    GrayImage::new(w, h, raster[..n].to_vec()).map_err(|e| bad(&e.to_string()))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_pgm(&bytes, path)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

/// Samples of one UAV as listed in a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestUav {
    pub subregion_id: u32,
    pub samples: Vec<LabeledSample>,
}

impl ManifestUav {
    pub fn into_dataset(self, shard_count: usize) -> Result<Dataset> {
        Dataset::new(self.samples, shard_count)
    }
}

fn parse_int(field: &str, line: usize, what: &str) -> Result<i64> {
    field.trim().parse().map_err(|_| Error::BadManifestRow {
        line,
        reason: format!("{what} `{field}` is not an integer"),
    })
}

/// Reads a `path,label,subregion,uav` manifest and loads every image.
/// Relative image paths are resolved against `image_root`. Rows keep their
/// file order within each UAV.
pub fn load_manifest(
    manifest_path: &Path,
    image_root: &Path,
) -> Result<BTreeMap<u32, ManifestUav>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(manifest_path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(Error::BadHeader(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    let mut out: BTreeMap<u32, ManifestUav> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() != 4 {
            return Err(Error::BadManifestRow {
                line,
                reason: format!("expected 4 fields, got {}", row.len()),
            });
        }
        let label = Label::from_int(parse_int(&row[1], line, "label")?)?;
        let subregion = u32::try_from(parse_int(&row[2], line, "subregion")?)
            .ok()
            .filter(|&s| s > 0)
            .ok_or_else(|| Error::BadManifestRow {
                line,
                reason: "subregion must be a positive integer".into(),
            })?;
        let uav =
            u32::try_from(parse_int(&row[3], line, "uav")?).map_err(|_| Error::BadManifestRow {
                line,
                reason: "uav must be a non-negative integer".into(),
            })?;
        let rel = PathBuf::from(row[0].trim());
        let path = if rel.is_absolute() {
            rel
        } else {
            image_root.join(rel)
        };
        let image = read_pgm(&path)?;
        let entry = out.entry(uav).or_insert_with(|| ManifestUav {
            subregion_id: subregion,
            samples: Vec::new(),
        });
        if entry.subregion_id != subregion {
            return Err(Error::BadManifestRow {
                line,
                reason: format!(
                    "UAV {uav} listed in sub-regions {} and {subregion}",
                    entry.subregion_id
                ),
            });
        }
        entry
            .samples
            .push(LabeledSample::new(image, label, row[0].trim()));
    }
    Ok(out)
}

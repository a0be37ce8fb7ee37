//! On-disk dataset layout: a directory holding a text `meta` file and one
//! binary file per split made of `[label: u32 LE][H·W·C pixel bytes]`
//! records.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, ImageGeometry, LabeledSet, Normalization};
use crate::error::{GfrError, Result};

pub const META_FILE: &str = "meta";
pub const TRAIN_FILE: &str = "train.bin";
pub const TEST_FILE: &str = "test.bin";

fn render_meta(ds: &Dataset) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
    format!(
        "num_classes {}\nheight {}\nwidth {}\nchannels {}\nmean {}\nstd {}\n",
        ds.num_classes,
        ds.geometry.height,
        ds.geometry.width,
        ds.geometry.channels,
        join(&ds.normalization.mean),
        join(&ds.normalization.std),
    )
}

fn parse_meta(path: &Path, text: &str) -> Result<(usize, ImageGeometry, Normalization)> {
    let mut fields = std::collections::HashMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        fields.insert(key.to_string(), parts.map(str::to_string).collect::<Vec<_>>());
    }
    let scalar = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .and_then(|v| v.first())
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| GfrError::format(path, format!("missing or invalid `{key}`")))
    };
    let vector = |key: &str| -> Result<Vec<f64>> {
        let v = fields
            .get(key)
            .ok_or_else(|| GfrError::format(path, format!("missing `{key}`")))?;
        v.iter()
            .map(|x| x.parse::<f64>().map_err(|_| GfrError::format(path, format!("bad number `{x}` in `{key}`"))))
            .collect()
    };
    let k = scalar("num_classes")?;
    let geometry = ImageGeometry::new(scalar("height")?, scalar("width")?, scalar("channels")?);
    let normalization = Normalization {
        mean: vector("mean")?,
        std: vector("std")?,
    };
    if normalization.mean.len() != geometry.channels || normalization.std.len() != geometry.channels {
        return Err(GfrError::format(path, "normalization length differs from channel count"));
    }
    Ok((k, geometry, normalization))
}

fn write_split(path: &Path, set: &LabeledSet) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| GfrError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for i in 0..set.len() {
        out.write_all(&set.labels[i].to_le_bytes())
            .and_then(|_| out.write_all(set.raw(i)))
            .map_err(|e| GfrError::io(path, e))?;
    }
    out.flush().map_err(|e| GfrError::io(path, e))
}

fn read_split(path: &Path, geometry: ImageGeometry) -> Result<LabeledSet> {
    let bytes = fs::read(path).map_err(|e| GfrError::io(path, e))?;
    let record = 4 + geometry.pixels();
    if bytes.len() % record != 0 {
        return Err(GfrError::format(
            path,
            format!("{} bytes is not a whole number of {record}-byte records", bytes.len()),
        ));
    }
    let mut set = LabeledSet::empty(geometry);
    for rec in bytes.chunks_exact(record) {
        let label = u32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]);
        set.push(label, &rec[4..]);
    }
    Ok(set)
}

/// Writes `meta`, `train.bin` and `test.bin` into `dir`, creating it.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GfrError::io(dir, e))?;
    let meta = dir.join(META_FILE);
    fs::write(&meta, render_meta(ds)).map_err(|e| GfrError::io(&meta, e))?;
    write_split(&dir.join(TRAIN_FILE), &ds.train)?;
    write_split(&dir.join(TEST_FILE), &ds.test)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta = dir.join(META_FILE);
    let text = fs::read_to_string(&meta).map_err(|e| GfrError::io(&meta, e))?;
    let (num_classes, geometry, normalization) = parse_meta(&meta, &text)?;
    let train = read_split(&dir.join(TRAIN_FILE), geometry)?;
    let test = read_split(&dir.join(TEST_FILE), geometry)?;
    let ds = Dataset {
        num_classes,
        geometry,
        normalization,
        train,
        test,
    };
    ds.validate().map_err(|e| GfrError::format(dir, e.to_string()))?;
    Ok(ds)
}

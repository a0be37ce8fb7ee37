//! CIFAR-10/100 binary releases to the dataset directory layout.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use gfr_core::data::{write_dataset, Dataset, ImageGeometry, LabeledSet, Normalization};
use gfr_core::{GfrError, Result};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const IMAGE: usize = 3 * PLANE;

struct Layout {
    classes: usize,
    /// Bytes preceding the image in each record.
    label_bytes: usize,
    /// Which of those bytes holds the class.
    label_index: usize,
    train: &'static [&'static str],
    test: &'static [&'static str],
}

const CIFAR10: Layout = Layout {
    classes: 10,
    label_bytes: 1,
    label_index: 0,
    train: &[
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
    ],
    test: &["test_batch.bin"],
};

const CIFAR100: Layout = Layout {
    classes: 100,
    label_bytes: 2,
    label_index: 1,
    train: &["train.bin"],
    test: &["test.bin"],
};

/// Split files keyed by base name.
fn collect_files(source: &Path) -> Result<HashMap<String, Vec<u8>>> {
    let mut files = HashMap::new();
    let wanted = |name: &str| {
        CIFAR10.train.contains(&name)
            || CIFAR10.test.contains(&name)
            || CIFAR100.train.contains(&name)
            || CIFAR100.test.contains(&name)
    };
    if source.is_dir() {
        let mut dirs = vec![source.to_path_buf()];
        while let Some(dir) = dirs.pop() {
            for entry in fs::read_dir(&dir).map_err(|e| GfrError::io(&dir, e))? {
                let path = entry.map_err(|e| GfrError::io(&dir, e))?.path();
                if path.is_dir() {
                    dirs.push(path);
                    continue;
                }
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                if wanted(&name) {
                    let bytes = fs::read(&path).map_err(|e| GfrError::io(&path, e))?;
                    files.insert(name, bytes);
                }
            }
        }
        return Ok(files);
    }
    let file = File::open(source).map_err(|e| GfrError::io(source, e))?;
    let mut archive = tar::Archive::new(GzDecoder::new(file));
    let entries = archive.entries().map_err(|e| GfrError::io(source, e))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| GfrError::io(source, e))?;
        let name = entry
            .path()
            .map_err(|e| GfrError::io(source, e))?
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if wanted(&name) {
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes).map_err(|e| GfrError::io(source, e))?;
            files.insert(name, bytes);
        }
    }
    Ok(files)
}

fn decode_split(source: &Path, name: &str, bytes: &[u8], layout: &Layout, set: &mut LabeledSet) -> Result<()> {
    let record = layout.label_bytes + IMAGE;
    if bytes.is_empty() || !bytes.len().is_multiple_of(record) {
        return Err(GfrError::format(
            source,
            format!("{name}: {} bytes is not a whole number of {record}-byte records", bytes.len()),
        ));
    }
    let mut hwc = vec![0u8; IMAGE];
    for rec in bytes.chunks(record) {
        let label = rec[layout.label_index] as usize;
        if label >= layout.classes {
            return Err(GfrError::format(source, format!("{name}: label {label} out of range")));
        }
        let planes = &rec[layout.label_bytes..];
        for p in 0..PLANE {
            for c in 0..3 {
                hwc[p * 3 + c] = planes[c * PLANE + p];
            }
        }
        set.push(label as u32, &hwc);
    }
    Ok(())
}

/// Reads a CIFAR release into a dataset with train-set normalization.
pub fn read_cifar(source: &Path) -> Result<Dataset> {
    let files = collect_files(source)?;
    let layout = if CIFAR10.train.iter().chain(CIFAR10.test).all(|n| files.contains_key(*n)) {
        CIFAR10
    } else if CIFAR100.train.iter().chain(CIFAR100.test).all(|n| files.contains_key(*n)) {
        CIFAR100
    } else {
        return Err(GfrError::format(
            source,
            "not a CIFAR-10 or CIFAR-100 binary release (split files not found)",
        ));
    };
    let geometry = ImageGeometry::new(SIDE, SIDE, 3);
    let mut train = LabeledSet::empty(geometry);
    let mut test = LabeledSet::empty(geometry);
    for name in layout.train {
        decode_split(source, name, &files[*name], &layout, &mut train)?;
    }
    for name in layout.test {
        decode_split(source, name, &files[*name], &layout, &mut test)?;
    }
    let normalization = Normalization::estimate(&train);
    Ok(Dataset {
        num_classes: layout.classes,
        geometry,
        normalization,
        train,
        test,
    })
}

pub fn run(source: &Path, out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !force {
            return Err(GfrError::Config(format!(
                "output directory {} already exists (pass --force to replace it)",
                out.display()
            )));
        }
        fs::remove_dir_all(out).map_err(|e| GfrError::io(out, e))?;
    }
    let ds = read_cifar(source)?;
    write_dataset(out, &ds)?;
    println!(
        "imported {} train and {} test records over {} classes into {}",
        ds.train.len(),
        ds.test.len(),
        ds.num_classes,
        out.display()
    );
    Ok(())
}

//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.txt
//! <root>/<split>/<index>.rgb.ppm
//! <root>/<split>/<index>.x.pgm
//! <root>/<split>/<index>.mask.pgm
//! ```
//!
//! The manifest lists one `split index seed mode` line per sample after a
//! few `key value` header lines; `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::traineval::{Dataset, Sample, Split};

use super::netpbm;

pub const MANIFEST: &str = "manifest.txt";

pub fn sample_paths(root: &Path, split: Split, index: usize) -> [PathBuf; 3] {
    let dir = root.join(split.name());
    [
        dir.join(format!("{index}.rgb.ppm")),
        dir.join(format!("{index}.x.pgm")),
        dir.join(format!("{index}.mask.pgm")),
    ]
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes both splits and the manifest.
pub fn write_dataset<T: Real>(
    root: &Path,
    header: &[(&str, String)],
    splits: &[(Split, &Dataset<T>)],
) -> Result<()> {
    create_dir(root)?;
    let mut manifest = String::from("# rxfood synthetic dataset\n");
    for (k, v) in header {
        manifest.push_str(&format!("{k} {v}\n"));
    }
    for &(split, data) in splits {
        create_dir(&root.join(split.name()))?;
        for (i, (s, seed)) in data.samples.iter().zip(&data.seeds).enumerate() {
            let [rgb, x, mask] = sample_paths(root, split, i);
            netpbm::write(&rgb, &s.rgb)?;
            netpbm::write(&x, &s.x)?;
            netpbm::write(&mask, &s.mask)?;
            manifest.push_str(&format!("{} {i} {seed} {}\n", split.name(), s.mode));
        }
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads one split in manifest order.
pub fn read_split<T: Real>(root: &Path, split: Split) -> Result<Dataset<T>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut data = Dataset {
        samples: Vec::new(),
        seeds: Vec::new(),
    };
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != split.name() {
            continue;
        }
        let parsed = (fields[1].parse::<usize>(), fields[2].parse::<u64>(), fields[3].parse());
        let (Ok(index), Ok(seed), Ok(mode)) = parsed else {
            return Err(Error::format(&path, format!("malformed entry `{line}`")));
        };
        let [rgb, x, mask] = sample_paths(root, split, index);
        let sample = Sample {
            rgb: netpbm::read_rgb(&rgb)?,
            x: netpbm::read_gray(&x)?,
            mask: netpbm::read_mask(&mask)?,
            mode,
        };
        let (h, w) = (sample.mask.shape()[0], sample.mask.shape()[1]);
        if sample.rgb.shape()[..2] != [h, w] || sample.x.shape()[..2] != [h, w] {
            return Err(Error::format(&rgb, "rgb, x, and mask extents differ"));
        }
        data.samples.push(sample);
        data.seeds.push(seed);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let train = Dataset::<f64>::generate(4, Split::Train, 3, 16, 0.5);
        let test = Dataset::<f64>::generate(4, Split::Test, 2, 16, 0.5);
        write_dataset(dir.path(), &[("seed", "4".into())], &[(Split::Train, &train), (Split::Test, &test)]).unwrap();
        assert_eq!(read_split::<f64>(dir.path(), Split::Train).unwrap(), train);
        assert_eq!(read_split::<f64>(dir.path(), Split::Test).unwrap(), test);
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_split::<f64>(dir.path(), Split::Train), Err(Error::Io { .. })));
    }
}

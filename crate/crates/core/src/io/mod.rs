//! File formats: `.flo` flow, PNG frames and masks, flow visualization and dataset manifests.

mod color;
mod flo;
mod manifest;
mod png;

use std::fs;
use std::path::Path;

pub use self::color::{flow_to_color, wheel_position, COLOR_WHEEL_BINS};
pub use self::flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use self::manifest::{DatasetManifest, SequenceEntry, TripletEntry, MANIFEST_VERSION};
pub use self::png::{read_frame_png, read_mask_png, write_frame_png, write_mask_png};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

//! Raw little-endian float32 payloads with a JSON sidecar.
//!
//! `volume.raw` is paired with `volume.json`:
//! `{"dims":[nx,ny,nz],"spacing_mm":[..],"origin_mm":[..],"components":1,"dtype":"float32","byte_order":"little"}`.
//! Samples are x-fastest; multi-component grids interleave components per voxel.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::AttenuationVolume;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    #[serde(default = "one")]
    pub components: usize,
    #[serde(default = "float32")]
    pub dtype: String,
    #[serde(default = "little")]
    pub byte_order: String,
}

fn one() -> usize {
    1
}
fn float32() -> String {
    "float32".into()
}
fn little() -> String {
    "little".into()
}

impl GridHeader {
    pub fn new(dims: [usize; 3], spacing: Vector3<f64>, origin: Point3<f64>, components: usize) -> Self {
        GridHeader {
            dims,
            spacing_mm: spacing.into(),
            origin_mm: origin.coords.into(),
            components,
            dtype: float32(),
            byte_order: little(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.dtype != "float32" {
            return Err(Error::Format(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.byte_order != "little" {
            return Err(Error::Format(format!("unsupported byte order {:?}", self.byte_order)));
        }
        if self.components == 0 {
            return Err(Error::Format("components must be >= 1".into()));
        }
        Ok(())
    }

    pub fn value_count(&self) -> usize {
        self.dims.iter().product::<usize>() * self.components
    }
}

/// `(payload, sidecar)` paths for a grid file given either of the two.
pub fn grid_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().is_some_and(|e| e == "json") {
        (path.with_extension("raw"), path.to_path_buf())
    } else {
        (path.to_path_buf(), path.with_extension("json"))
    }
}

pub fn write_grid(path: &Path, header: &GridHeader, values: &[f32]) -> Result<()> {
    if values.len() != header.value_count() {
        return Err(Error::SizeMismatch {
            expected: header.value_count(),
            found: values.len(),
        });
    }
    let (raw, side) = grid_paths(path);
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    write_json(&side, header)
}

pub fn read_grid(path: &Path) -> Result<(GridHeader, Vec<f32>)> {
    let (raw, side) = grid_paths(path);
    let header: GridHeader = read_json(&side)?;
    header.check()?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: payload is not a whole number of float32 values", raw.display())));
    }
    let found = bytes.len() / 4;
    if found != header.value_count() {
        return Err(Error::SizeMismatch {
            expected: header.value_count(),
            found,
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}

pub fn save_volume(vol: &AttenuationVolume, path: impl AsRef<Path>) -> Result<()> {
    let header = GridHeader::new(vol.dims(), vol.spacing(), vol.origin(), 1);
    write_grid(path.as_ref(), &header, vol.data())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<AttenuationVolume> {
    let (h, values) = read_grid(path.as_ref())?;
    if h.components != 1 {
        return Err(Error::Format(format!("expected a scalar grid, found {} components", h.components)));
    }
    AttenuationVolume::new(
        h.dims,
        Vector3::from(h.spacing_mm),
        Point3::from(h.origin_mm),
        values,
    )
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn random_volume_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..16 * 16 * 16).map(|_| rng.gen::<f32>()).collect();
        let vol = AttenuationVolume::new(
            [16, 16, 16],
            Vector3::new(0.5, 0.75, 1.25),
            Point3::new(-3.0, 1.0, 2.5),
            data,
        )
        .unwrap();
        let path = dir.path().join("v.raw");
        save_volume(&vol, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back, vol);
        let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u32> = vol.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, orig);
        // loading through the sidecar path works too
        assert_eq!(load_volume(dir.path().join("v.json")).unwrap(), vol);
    }

    #[test]
    fn payload_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        let header = GridHeader::new([8, 8, 8], Vector3::repeat(1.0), Point3::origin(), 1);
        write_json(&path.with_extension("json"), &header).unwrap();
        fs::write(&path, vec![0u8; 7 * 7 * 7 * 4]).unwrap();
        match load_volume(&path) {
            Err(Error::SizeMismatch { expected, found }) => {
                assert_eq!((expected, found), (512, 343));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        fs::write(path.with_extension("json"), "{\"dims\": [1,2]}").unwrap();
        fs::write(&path, [0u8; 8]).unwrap();
        assert!(matches!(load_volume(&path), Err(Error::Format(_))));
    }
}

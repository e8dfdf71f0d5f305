//! Thin helpers over the HDF5 container used for datasets and checkpoints.
//!
//! Complex arrays are stored as `f64` with a trailing axis of length 2
//! holding interleaved `(re, im)` pairs.

use std::path::{Path, PathBuf};

use hdf5_metno as hdf5;
use hdf5::types::VarLenUnicode;
use ndarray::{Array, Array3, ArrayD, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) struct Writer {
    path: PathBuf,
    file: hdf5::File,
}

pub(crate) struct Reader {
    path: PathBuf,
    file: hdf5::File,
}

fn container_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl Writer {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let file = hdf5::File::with_options()
            .with_fcpl(|p| p.obj_track_times(false))
            .create(path)
            .map_err(|e| container_err(path, e))?;
        Ok(Writer {
            path: path.to_path_buf(),
            file,
        })
    }

    fn err(&self, e: impl std::fmt::Display) -> Error {
        container_err(&self.path, e)
    }

    pub fn write_f64(&self, key: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        let arr = ArrayD::from_shape_vec(IxDyn(shape), data.to_vec())
            .map_err(|e| Error::format(key, e.to_string()))?;
        self.file
            .new_dataset_builder()
            .with_data(&arr)
            .create(key)
            .map_err(|e| self.err(e))?;
        Ok(())
    }

    pub fn write_complex3(&self, key: &str, data: &Array3<Complex64>) -> Result<()> {
        let (c, h, w) = data.dim();
        let mut flat = Vec::with_capacity(c * h * w * 2);
        for z in data.iter() {
            flat.push(z.re);
            flat.push(z.im);
        }
        self.write_f64(key, &[c, h, w, 2], &flat)
    }

    pub fn write_str(&self, key: &str, value: &str) -> Result<()> {
        let v: VarLenUnicode = value
            .parse()
            .map_err(|e: hdf5::types::StringError| Error::format(key, e.to_string()))?;
        self.file
            .new_dataset::<VarLenUnicode>()
            .create(key)
            .and_then(|ds| ds.write_scalar(&v))
            .map_err(|e| self.err(e))?;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        self.file.flush().map_err(|e| container_err(&self.path, e))?;
        self.file.close().map_err(|e| container_err(&self.path, e))
    }
}

impl Reader {
    pub fn open(path: &Path) -> Result<Self> {
        std::fs::metadata(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file = hdf5::File::open(path).map_err(|e| container_err(path, e))?;
        Ok(Reader {
            path: path.to_path_buf(),
            file,
        })
    }

    fn dataset(&self, key: &str) -> Result<hdf5::Dataset> {
        if !self.file.link_exists(key) {
            return Err(Error::format(key, "missing key"));
        }
        self.file
            .dataset(key)
            .map_err(|e| Error::format(key, e.to_string()))
    }

    /// Names of the top-level groups whose name starts with `prefix`, sorted.
    pub fn groups_with_prefix(&self, prefix: &str) -> Result<Vec<String>> {
        let mut names: Vec<String> = self
            .file
            .member_names()
            .map_err(|e| container_err(&self.path, e))?
            .into_iter()
            .filter(|n| n.starts_with(prefix))
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn read_f64(&self, key: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let ds = self.dataset(key)?;
        let arr: ArrayD<f64> = ds
            .read_dyn()
            .map_err(|e| Error::format(key, e.to_string()))?;
        let shape = arr.shape().to_vec();
        let data = arr.as_standard_layout().iter().copied().collect();
        Ok((shape, data))
    }

    pub fn read_complex3(&self, key: &str) -> Result<Array3<Complex64>> {
        let (shape, data) = self.read_f64(key)?;
        if shape.len() != 4 || shape[3] != 2 {
            return Err(Error::format(
                key,
                format!("expected [c, h, w, 2] interleaved complex, found {shape:?}"),
            ));
        }
        let zs: Vec<Complex64> = data
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Array::from_shape_vec((shape[0], shape[1], shape[2]), zs)
            .map_err(|e| Error::format(key, e.to_string()))
    }

    pub fn read_str(&self, key: &str) -> Result<String> {
        let ds = self.dataset(key)?;
        let v: VarLenUnicode = ds
            .read_scalar()
            .map_err(|e| Error::format(key, e.to_string()))?;
        Ok(v.as_str().to_owned())
    }
}

//! Dataset persistence: one HDF5 file, one group per record.
//!
//! Layout per record group `record_NNNNNN/`:
//! - `kspace` — f64 `[c, h, w, 2]`, fully-sampled k-space (interleaved re/im)
//! - `sens`   — f64 `[c, h, w, 2]`, coil sensitivities
//! - `sos`    — f64 `[h, w]`, noise-free ground-truth root-sum-of-squares image
//! - `meta`   — JSON string holding the [`PhantomSpec`]

use std::path::Path;

use ndarray::Array2;

use crate::container::{Reader, Writer};
use crate::data::{
    generate_phantom, simulate_acquisition, sos_combine, CoilSensitivities, KSpaceVolume,
    PhantomSpec,
};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "kinr-dataset/1";
const RECORD_PREFIX: &str = "record_";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kspace: KSpaceVolume,
    pub sens: CoilSensitivities,
    pub sos: Array2<f64>,
    pub meta: PhantomSpec,
}

impl Record {
    /// Simulates a fully-sampled acquisition of `spec`.
    pub fn simulate(spec: &PhantomSpec) -> Result<Self> {
        let (gt, sens) = generate_phantom(spec)?;
        let sos = sos_combine(gt.magnitude().view())?;
        // Noise stream is decorrelated from the phantom stream derived from the same seed.
        let kspace = simulate_acquisition(&gt, spec.noise_sigma, spec.seed ^ 0x6b73_7061_6365)?;
        Ok(Record {
            kspace,
            sens,
            sos,
            meta: spec.clone(),
        })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.kspace.dim()
    }
}

/// `count` random phantoms with seeds `seed, seed + 1, …`.
pub fn simulate_records(
    count: usize,
    height: usize,
    width: usize,
    coils: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<Record>> {
    (0..count as u64)
        .map(|i| Record::simulate(&PhantomSpec::random(height, width, coils, noise_sigma, seed + i)))
        .collect()
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let w = Writer::create(path.as_ref())?;
    w.write_str("format", FORMAT_TAG)?;
    for (i, r) in records.iter().enumerate() {
        let g = format!("{RECORD_PREFIX}{i:06}");
        w.write_complex3(&format!("{g}/kspace"), r.kspace.data())?;
        w.write_complex3(&format!("{g}/sens"), r.sens.data())?;
        let (h, wd) = r.sos.dim();
        let sos = r.sos.as_standard_layout();
        w.write_f64(&format!("{g}/sos"), &[h, wd], sos.as_slice().expect("standard layout"))?;
        let meta = serde_json::to_string(&r.meta).map_err(|e| Error::format(format!("{g}/meta"), e.to_string()))?;
        w.write_str(&format!("{g}/meta"), &meta)?;
    }
    w.finish()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let r = Reader::open(path.as_ref())?;
    let tag = r.read_str("format")?;
    if tag != FORMAT_TAG {
        return Err(Error::format("format", format!("expected {FORMAT_TAG}, found {tag}")));
    }
    let mut out = Vec::new();
    for g in r.groups_with_prefix(RECORD_PREFIX)? {
        let kspace = KSpaceVolume::new(r.read_complex3(&format!("{g}/kspace"))?)?;
        let sens = CoilSensitivities::new(r.read_complex3(&format!("{g}/sens"))?)?;
        let key = format!("{g}/sos");
        let (shape, data) = r.read_f64(&key)?;
        if shape.len() != 2 {
            return Err(Error::format(key, format!("expected [h, w], found {shape:?}")));
        }
        let sos = Array2::from_shape_vec((shape[0], shape[1]), data)
            .map_err(|e| Error::format(&key, e.to_string()))?;
        let key = format!("{g}/meta");
        let meta: PhantomSpec =
            serde_json::from_str(&r.read_str(&key)?).map_err(|e| Error::format(&key, e.to_string()))?;
        let (c, h, w) = kspace.dim();
        if sens.dim() != (c, h, w) || sos.dim() != (h, w) {
            return Err(Error::format(g, "kspace, sens and sos shapes disagree"));
        }
        out.push(Record {
            kspace,
            sens,
            sos,
            meta,
        });
    }
    Ok(out)
}

//! Training-set export: statistical inputs and converged labels per sample,
//! in a self-describing little-endian binary file plus a TOML manifest.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "MSATDS01"
//! header_len   u32      bytes that follow in the header (40)
//! version      u32      1
//! K, S         u32 ×2
//! n_v, n_h     u32 ×2
//! n_records    u64
//! dtype        u8       8 = float64
//! endianness   u8       b'L'
//! complex      u8       1 = interleaved (re, im)
//! xi           u8       0 = printed ξ, 1 = least-squares ξ
//! reserved     8 bytes  zero
//! records      n_records × fixed-size record of f64:
//!              power_dbm, D (K·S·5), F (K·2), p (S),
//!              ā (K·(S+1) complex), ū (K), rate_ap1
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};
use crate::factorization::build_all_factors;
use crate::linalg::{CVector, C64};
use crate::rates::rate_ap1;
use crate::rng::{derive_seed, derived_rng};
use crate::scenario::ScenarioConfig;
use crate::solvers::{solve_ms_jocdwm, SolverConfig};
use crate::te::{MappingInputs, MappingLabels, XiConvention, LINK_FEATURES};

pub const MAGIC: &[u8; 8] = b"MSATDS01";
pub const VERSION: u32 = 1;
const HEADER_LEN: u32 = 40;
/// Per-satellite budgets a sample may be drawn with, dBm.
pub const POWER_GRID_DBM: [f64; 7] = [20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub num_users: usize,
    pub num_sats: usize,
    pub array: ArrayGeometry,
    pub n_records: u64,
    pub xi_convention: XiConvention,
}

impl DatasetHeader {
    pub fn record_floats(&self) -> usize {
        let (k, s) = (self.num_users, self.num_sats);
        1 + k * s * LINK_FEATURES + 2 * k + s + 2 * k * (s + 1) + k + 1
    }

    fn to_bytes(self) -> Vec<u8> {
        let mut b = Vec::with_capacity(52);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&HEADER_LEN.to_le_bytes());
        b.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.num_users, self.num_sats, self.array.n_v, self.array.n_h] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&self.n_records.to_le_bytes());
        let xi = match self.xi_convention {
            XiConvention::Printed => 0u8,
            XiConvention::LeastSquares => 1u8,
        };
        b.extend_from_slice(&[8, b'L', 1, xi]);
        b.extend_from_slice(&[0u8; 8]);
        b
    }

    fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 12 || &b[..8] != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
        if u32_at(8) != HEADER_LEN || b.len() < 12 + HEADER_LEN as usize {
            return Err(Error::Format("unexpected header length".into()));
        }
        if u32_at(12) != VERSION {
            return Err(Error::Format(format!("unsupported version {}", u32_at(12))));
        }
        let n_records = u64::from_le_bytes(b[32..40].try_into().expect("8 bytes"));
        if b[40] != 8 || b[41] != b'L' || b[42] != 1 {
            return Err(Error::Format("unsupported dtype, endianness or complex layout".into()));
        }
        let xi_convention = match b[43] {
            0 => XiConvention::Printed,
            1 => XiConvention::LeastSquares,
            x => return Err(Error::Format(format!("unknown xi convention code {x}"))),
        };
        Ok(Self {
            num_users: u32_at(16) as usize,
            num_sats: u32_at(20) as usize,
            array: ArrayGeometry::new(u32_at(24) as usize, u32_at(28) as usize)
                .map_err(|e| Error::Format(e.to_string()))?,
            n_records,
            xi_convention,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub power_dbm: f64,
    pub inputs: MappingInputs,
    pub labels: MappingLabels,
    /// Weighted sum rate reached by the converged solver.
    pub rate_ap1: f64,
}

impl DatasetRecord {
    fn to_floats(&self) -> Vec<f64> {
        let mut v = vec![self.power_dbm];
        v.extend_from_slice(&self.inputs.d_tensor);
        v.extend_from_slice(&self.inputs.f_matrix);
        v.extend_from_slice(&self.inputs.p_vector);
        for a in &self.labels.a_bar {
            for x in a.iter() {
                v.push(x.re);
                v.push(x.im);
            }
        }
        v.extend_from_slice(&self.labels.u_bar);
        v.push(self.rate_ap1);
        v
    }

    fn from_floats(h: &DatasetHeader, v: &[f64]) -> Self {
        let (k, s) = (h.num_users, h.num_sats);
        let mut at = 0;
        let mut take = |n: usize| {
            let out = &v[at..at + n];
            at += n;
            out
        };
        let power_dbm = take(1)[0];
        let d_tensor = take(k * s * LINK_FEATURES).to_vec();
        let f_matrix = take(2 * k).to_vec();
        let p_vector = take(s).to_vec();
        let a_flat = take(2 * k * (s + 1));
        let a_bar = (0..k)
            .map(|i| {
                CVector::from_fn(s + 1, |j, _| {
                    let o = 2 * (i * (s + 1) + j);
                    C64::new(a_flat[o], a_flat[o + 1])
                })
            })
            .collect();
        let u_bar = take(k).to_vec();
        let rate_ap1 = take(1)[0];
        Self {
            power_dbm,
            inputs: MappingInputs { num_users: k, num_sats: s, d_tensor, f_matrix, p_vector },
            labels: MappingLabels { a_bar, u_bar },
            rate_ap1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

/// Sidecar description written next to the binary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub file: String,
    pub sample_count: u64,
    pub seed: u64,
    /// SHA-256 of the generator settings in TOML form.
    pub config_digest: String,
    /// SHA-256 of the binary file.
    pub data_sha256: String,
    pub num_users: usize,
    pub num_sats: usize,
    pub n_v: usize,
    pub n_h: usize,
    pub xi_convention: XiConvention,
    pub power_grid_dbm: Vec<f64>,
    pub record_layout: Vec<String>,
}

/// Generator settings hashed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSpec {
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub xi_convention: XiConvention,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// Draws sample `index`: scenario geometry matches experiment drop `index`,
/// the budget is drawn from [`POWER_GRID_DBM`].
pub fn generate_record(spec: &ExportSpec, states: &[crate::geometry::SatelliteState], seed: u64, index: usize) -> Result<DatasetRecord> {
    let mut scenario = spec.scenario.clone();
    let mut rng = derived_rng(seed, &[index as u64, 2]);
    scenario.p_tx_dbm = POWER_GRID_DBM[rng.random_range(0..POWER_GRID_DBM.len())];
    let drop = scenario.generate(states, derive_seed(seed, &[index as u64]))?;
    let (sol, trace) = solve_ms_jocdwm(&drop.scsi, &spec.solver)?;
    let aux = match (&trace.final_aux, trace.breakdown) {
        (Some(a), false) => a,
        _ => return Err(Error::Numerical("solver produced no labels".into())),
    };
    let factors = build_all_factors(&drop.scsi)?;
    Ok(DatasetRecord {
        power_dbm: scenario.p_tx_dbm,
        inputs: MappingInputs::from_scsi(&drop.scsi),
        labels: MappingLabels::from_aux(aux),
        rate_ap1: rate_ap1(&sol.w, &drop.scsi, &factors)?.sum_rate,
    })
}

/// Writes `n_samples` records to `path` and the manifest next to it.
pub fn export_dataset(spec: &ExportSpec, n_samples: usize, seed: u64, path: &Path) -> Result<Manifest> {
    spec.scenario.validate()?;
    spec.solver.validate()?;
    let states = spec.scenario.states()?;
    let header = DatasetHeader {
        num_users: spec.scenario.num_users,
        num_sats: spec.scenario.num_sats,
        array: spec.scenario.array()?,
        n_records: n_samples as u64,
        xi_convention: spec.xi_convention,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut hasher = Sha256::new();
    let mut put = |bytes: &[u8], out: &mut BufWriter<File>| -> Result<()> {
        hasher.update(bytes);
        out.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    put(&header.to_bytes(), &mut out)?;
    for start in (0..n_samples).step_by(CHUNK) {
        let end = (start + CHUNK).min(n_samples);
        let records: Vec<DatasetRecord> = (start..end)
            .into_par_iter()
            .map(|i| {
                generate_record(spec, &states, seed, i).map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("sample {i}: {m}")),
                    other => Error::InvalidInput(format!("sample {i}: {other}")),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, r) in records.iter().enumerate() {
            let bytes: Vec<u8> = r.to_floats().iter().flat_map(|x| x.to_le_bytes()).collect();
            put(&bytes, &mut out).map_err(|e| Error::InvalidInput(format!("sample {}: {e}", start + i)))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(
        toml::to_string(spec)
            .map_err(|e| Error::Format(e.to_string()))?
            .as_bytes(),
    );
    let manifest = Manifest {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        version: VERSION,
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        sample_count: n_samples as u64,
        seed,
        config_digest: hex(&digest),
        data_sha256: hex(&hasher.finalize()),
        num_users: header.num_users,
        num_sats: header.num_sats,
        n_v: header.array.n_v,
        n_h: header.array.n_h,
        xi_convention: spec.xi_convention,
        power_grid_dbm: POWER_GRID_DBM.to_vec(),
        record_layout: vec![
            "power_dbm: 1".into(),
            "d_tensor [gamma, kappa, theta_x, theta_y, mean_phase]: K*S*5".into(),
            "f_matrix [noise_power, weight]: K*2".into(),
            "p_vector: S".into(),
            "a_bar complex interleaved: K*(S+1)*2".into(),
            "u_bar: K".into(),
            "rate_ap1: 1".into(),
        ],
    };
    let mpath = manifest_path(path);
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let header = DatasetHeader::from_bytes(&bytes)?;
    let start = 12 + HEADER_LEN as usize;
    let rec_bytes = header.record_floats() * 8;
    let expected = start + rec_bytes * header.n_records as usize;
    if bytes.len() != expected {
        return Err(Error::Format(format!("file has {} bytes, header implies {expected}", bytes.len())));
    }
    let records = bytes[start..]
        .chunks_exact(rec_bytes)
        .map(|chunk| {
            let floats: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            DatasetRecord::from_floats(&header, &floats)
        })
        .collect();
    Ok(Dataset { header, records })
}

/// Checks the file against its manifest's checksum and sample count.
pub fn verify_manifest(path: &Path) -> Result<Manifest> {
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if hex(&Sha256::digest(&bytes)) != manifest.data_sha256 {
        return Err(Error::Format("checksum does not match manifest".into()));
    }
    let header = DatasetHeader::from_bytes(&bytes)?;
    if header.n_records != manifest.sample_count {
        return Err(Error::Format("sample count does not match manifest".into()));
    }
    Ok(manifest)
}

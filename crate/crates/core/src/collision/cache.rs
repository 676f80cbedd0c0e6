//! Binary on-disk cache for root-resolved kernels.
//!
//! Layout (little endian): magic `PHKC`, format version, 32-byte key, a
//! length-prefixed JSON header (grid, dispersion, options, diagnostics), the
//! `omega` table, then the entries as fixed-width records.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kernel::{build_kernel_1d_with, channel_from_code, channel_to_code, KernelDiagnostics, KernelOptions};
use super::{CollisionKernel, KernelEntry, Stencil};
use crate::dispersion::DispersionSpec;
use crate::error::{Error, Result};
use crate::grid::MomentumGrid;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"PHKC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header<T> {
    grid: MomentumGrid<T>,
    dispersion: DispersionSpec<T>,
    options: KernelOptions<T>,
    diagnostics: KernelDiagnostics,
}

/// SHA-256 over the dispersion, grid size and build options (which include
/// the root tolerance).
pub fn kernel_cache_key<T: Real + Serialize>(spec: &DispersionSpec<T>, n: usize, options: &KernelOptions<T>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update(serde_json::to_vec(spec).expect("dispersion serializes"));
    h.update((n as u64).to_le_bytes());
    h.update(serde_json::to_vec(options).expect("options serialize"));
    h.update(std::any::type_name::<T>().as_bytes());
    h.finalize().into()
}

fn hex(key: &[u8; 32]) -> String {
    key.iter().map(|b| format!("{b:02x}")).collect()
}

/// File name used for `key` inside a cache directory.
pub fn cache_file_name(key: &[u8; 32]) -> String {
    format!("kernel-{}.bin", &hex(key)[..16])
}

pub fn save_kernel<T: Real + Serialize>(kernel: &CollisionKernel<T>, path: &Path) -> Result<()> {
    let key = kernel_cache_key(&kernel.dispersion, kernel.grid.n(), &kernel.options);
    let header = Header {
        grid: kernel.grid.as_ref().clone(),
        dispersion: kernel.dispersion.clone(),
        options: kernel.options.clone(),
        diagnostics: kernel.diagnostics.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Cache(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(CACHE_VERSION)?;
        w.write_all(&key)?;
        w.write_u64::<LittleEndian>(json.len() as u64)?;
        w.write_all(&json)?;
        w.write_u64::<LittleEndian>(kernel.omega.len() as u64)?;
        for &x in &kernel.omega {
            w.write_f64::<LittleEndian>(x.to_f64_lossy())?;
        }
        w.write_u64::<LittleEndian>(kernel.entries.len() as u64)?;
        for e in &kernel.entries {
            w.write_u8(channel_to_code(e.channel))?;
            for &m in &e.momenta {
                w.write_f64::<LittleEndian>(m.to_f64_lossy())?;
            }
            for s in &e.slots {
                w.write_u32::<LittleEndian>(s.lo)?;
                w.write_u32::<LittleEndian>(s.hi)?;
                w.write_f64::<LittleEndian>(s.w_lo.to_f64_lossy())?;
                w.write_f64::<LittleEndian>(s.w_hi.to_f64_lossy())?;
            }
            w.write_f64::<LittleEndian>(e.weight.to_f64_lossy())?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Load a kernel written by [`save_kernel`]. Returns `Ok(None)` when the file
/// has another format version or a different key.
pub fn load_kernel<T: Real + DeserializeOwned>(path: &Path, expected_key: &[u8; 32]) -> Result<Option<CollisionKernel<T>>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Cache(format!("{} is not a kernel cache file", path.display())));
    }
    if r.read_u32::<LittleEndian>()? != CACHE_VERSION {
        return Ok(None);
    }
    let mut key = [0u8; 32];
    r.read_exact(&mut key)?;
    if &key != expected_key {
        return Ok(None);
    }
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header<T> = serde_json::from_slice(&json).map_err(|e| Error::Cache(e.to_string()))?;
    let n_omega = r.read_u64::<LittleEndian>()? as usize;
    if n_omega != header.grid.len() {
        return Err(Error::Cache("omega table length does not match grid".into()));
    }
    let mut omega = Vec::with_capacity(n_omega);
    for _ in 0..n_omega {
        omega.push(T::lit(r.read_f64::<LittleEndian>()?));
    }
    let n_entries = r.read_u64::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let code = r.read_u8()?;
        let channel = channel_from_code(code).ok_or_else(|| Error::Cache(format!("bad channel code {code}")))?;
        let mut momenta = [T::zero(); 4];
        for m in &mut momenta {
            *m = T::lit(r.read_f64::<LittleEndian>()?);
        }
        let mut slots = [Stencil::on_grid(0); 4];
        for s in &mut slots {
            s.lo = r.read_u32::<LittleEndian>()?;
            s.hi = r.read_u32::<LittleEndian>()?;
            s.w_lo = T::lit(r.read_f64::<LittleEndian>()?);
            s.w_hi = T::lit(r.read_f64::<LittleEndian>()?);
            if s.lo as usize >= n_omega || s.hi as usize >= n_omega {
                return Err(Error::Cache("stencil index out of range".into()));
            }
        }
        let weight = T::lit(r.read_f64::<LittleEndian>()?);
        entries.push(KernelEntry {
            channel,
            momenta,
            slots,
            weight,
        });
    }
    Ok(Some(CollisionKernel {
        grid: Arc::new(header.grid),
        dispersion: header.dispersion,
        options: header.options,
        omega,
        entries,
        diagnostics: header.diagnostics,
    }))
}

/// Build a kernel, reusing `cache_dir` when a matching file exists. The flag
/// reports a cache hit.
pub fn build_kernel_1d_cached<T: Real + Serialize + DeserializeOwned>(
    grid: Arc<MomentumGrid<T>>,
    spec: &DispersionSpec<T>,
    options: KernelOptions<T>,
    cache_dir: &Path,
) -> Result<(CollisionKernel<T>, bool)> {
    let key = kernel_cache_key(spec, grid.n(), &options);
    let path: PathBuf = cache_dir.join(cache_file_name(&key));
    if path.exists() {
        if let Some(k) = load_kernel::<T>(&path, &key)? {
            if k.grid.as_ref() == grid.as_ref() {
                return Ok((k, true));
            }
        }
    }
    let kernel = build_kernel_1d_with(grid, spec, options)?;
    fs::create_dir_all(cache_dir)?;
    save_kernel(&kernel, &path)?;
    Ok((kernel, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hit() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DispersionSpec::optical(1.0f64, 1).unwrap();
        let grid = Arc::new(MomentumGrid::torus(1, 16).unwrap());
        let (k1, hit1) = build_kernel_1d_cached(grid.clone(), &spec, KernelOptions::default(), dir.path()).unwrap();
        let (k2, hit2) = build_kernel_1d_cached(grid, &spec, KernelOptions::default(), dir.path()).unwrap();
        assert!(!hit1 && hit2);
        assert_eq!(k1, k2);
    }

    #[test]
    fn different_tolerance_misses() {
        let spec = DispersionSpec::optical(1.0f64, 1).unwrap();
        let a = kernel_cache_key(&spec, 16, &KernelOptions::default());
        let b = kernel_cache_key(
            &spec,
            16,
            &KernelOptions {
                tol: 1e-10,
                ..KernelOptions::default()
            },
        );
        assert_ne!(a, b);
        assert_ne!(a, kernel_cache_key(&spec, 32, &KernelOptions::default()));
    }
}

//! Versioned binary checkpoints.
//!
//! Layout: magic `IVCP`, container version, a JSON architecture header, then
//! named f64 tensors (little-endian raw bits), so save → load → forward is
//! bit-identical to the pre-save forward. Writes go to a temporary file in
//! the same directory and are renamed into place.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusenet::{FusionArch, FusionModel, PipelineFlags};
use crate::illum::{EnhancerConfig, EnhancerModel};

const MAGIC: &[u8; 4] = b"IVCP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Enhancer { config: EnhancerConfig },
    Fusion { arch: FusionArch, flags: PipelineFlags },
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_file(path: &Path, header: &Header, tensors: &[(String, Vec<usize>, &[f64])]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp_name = path.file_name().unwrap_or_default().to_owned();
    tmp_name.push(".tmp");
    let tmp = dir.map(|d| d.join(&tmp_name)).unwrap_or_else(|| tmp_name.clone().into());
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let header_json = serde_json::to_vec(header).map_err(|e| bad(e.to_string()))?;
        w.write_u32::<LittleEndian>(header_json.len() as u32)?;
        w.write_all(&header_json)?;
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (name, dims, data) in tensors {
            let name_bytes = name.as_bytes();
            w.write_u16::<LittleEndian>(name_bytes.len() as u16)?;
            w.write_all(name_bytes)?;
            w.write_u8(dims.len() as u8)?;
            let mut expect = 1usize;
            for &d in dims {
                w.write_u64::<LittleEndian>(d as u64)?;
                expect *= d;
            }
            debug_assert_eq!(expect, data.len());
            for &v in data.iter() {
                w.write_u64::<LittleEndian>(v.to_bits())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct LoadedTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn read_file(path: &Path) -> Result<(Header, Vec<LoadedTensor>)> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic in {}", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if hlen > 1 << 20 {
        return Err(bad("unreasonable header size"));
    }
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&hbuf).map_err(|e| bad(e.to_string()))?;
    let count = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated tensor table"))?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.read_u16::<LittleEndian>().map_err(|_| bad("truncated tensor"))? as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf).map_err(|_| bad("truncated tensor"))?;
        let name = String::from_utf8(nbuf).map_err(|_| bad("tensor name not utf-8"))?;
        let ndim = r.read_u8().map_err(|_| bad("truncated tensor"))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut len = 1usize;
        for _ in 0..ndim {
            let d = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated tensor"))? as usize;
            len = len.checked_mul(d).ok_or_else(|| bad("tensor dims overflow"))?;
            dims.push(d);
        }
        if len > 1 << 28 {
            return Err(bad("unreasonable tensor size"));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let bits = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated tensor data"))?;
            data.push(f64::from_bits(bits));
        }
        tensors.push(LoadedTensor { name, dims, data });
    }
    Ok((header, tensors))
}

/// Fills a model's tensors (in declaration order) from loaded data,
/// validating names and shapes.
fn fill(
    named: Vec<(String, Vec<usize>)>,
    slices: Vec<&mut [f64]>,
    loaded: &[LoadedTensor],
) -> Result<()> {
    if named.len() != loaded.len() {
        return Err(bad(format!(
            "tensor count mismatch: expected {}, found {}",
            named.len(),
            loaded.len()
        )));
    }
    for (((name, dims), slot), t) in named.into_iter().zip(slices).zip(loaded) {
        if t.name != name {
            return Err(bad(format!("expected tensor {name}, found {}", t.name)));
        }
        if t.dims != dims {
            return Err(bad(format!("tensor {name}: shape {:?} vs {:?}", t.dims, dims)));
        }
        if t.data.len() != slot.len() {
            return Err(bad(format!("tensor {name}: length mismatch")));
        }
        slot.copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn save_enhancer(model: &EnhancerModel, path: impl AsRef<Path>) -> Result<()> {
    let header = Header::Enhancer { config: model.config };
    write_file(path.as_ref(), &header, &model.tensors())
}

pub fn load_enhancer(path: impl AsRef<Path>) -> Result<EnhancerModel> {
    let (header, tensors) = read_file(path.as_ref())?;
    let Header::Enhancer { config } = header else {
        return Err(bad("not an enhancer checkpoint"));
    };
    let mut model = EnhancerModel::zeroed(config);
    let named: Vec<(String, Vec<usize>)> =
        model.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
    fill(named, model.tensors_mut(), &tensors)?;
    Ok(model)
}

pub fn save_fusion(model: &FusionModel, path: impl AsRef<Path>) -> Result<()> {
    let header = Header::Fusion { arch: model.arch, flags: model.flags };
    write_file(path.as_ref(), &header, &model.tensors())
}

pub fn load_fusion(path: impl AsRef<Path>) -> Result<FusionModel> {
    let (header, tensors) = read_file(path.as_ref())?;
    let Header::Fusion { arch, flags } = header else {
        return Err(bad("not a fusion checkpoint"));
    };
    let mut model = FusionModel::zeroed(arch, flags);
    let named: Vec<(String, Vec<usize>)> =
        model.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
    fill(named, model.param_slices_mut(), &tensors)?;
    Ok(model)
}

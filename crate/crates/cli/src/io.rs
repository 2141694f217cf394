//! Field files, target manifests and time-series CSV.
//!
//! Field file layout, little-endian: magic `NLCHF1`, `u32` version (1),
//! `u32` dim, `u64` cells per axis, `f64` extent per axis, then the
//! row-major `f64` payload.

use anyhow::{anyhow, bail, Context, Result};
use ini::Ini;
use nlch_core::field::{Grid, ScalarField};
use std::fs;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 6] = b"NLCHF1";
const VERSION: u32 = 1;

pub fn encode_field(f: &ScalarField) -> Result<Vec<u8>> {
    if !f.is_finite() {
        bail!("refusing to write a non-finite field");
    }
    let g = f.grid();
    let mut out = Vec::with_capacity(14 + 16 * g.dim() + 8 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    for &n in g.n() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for &l in g.length() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for x in f.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| anyhow!("truncated NLCHF1 header"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into()?))
    }
}

pub fn decode_field(bytes: &[u8]) -> Result<ScalarField> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        bail!("not a NLCHF1 file");
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported NLCHF1 version {version}");
    }
    let dim = r.u32()? as usize;
    if dim != 2 && dim != 3 {
        bail!("unsupported dimension {dim}");
    }
    let n = (0..dim)
        .map(|_| r.u64().map(|x| x as usize))
        .collect::<Result<Vec<_>>>()?;
    let length = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let grid = Grid::new(dim, &n, &length)?;
    let payload = &bytes[r.pos..];
    if payload.len() != 8 * grid.len() {
        bail!(
            "payload size mismatch: expected {} bytes, found {}",
            8 * grid.len(),
            payload.len()
        );
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        bail!("non-finite value at index {i}");
    }
    Ok(ScalarField::from_vec(&grid, data)?)
}

pub fn write_field(path: &Path, f: &ScalarField) -> Result<()> {
    fs::write(path, encode_field(f)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_field(&bytes).with_context(|| format!("decoding {}", path.display()))
}

const MANIFEST: &str = "manifest.ini";

/// Writes `phi_q[n]` and `phi_omega` as separate field files plus an index
/// manifest; returns the manifest path.
pub fn write_targets(dir: &Path, phi_q: &[ScalarField], phi_omega: &ScalarField) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut ini = Ini::new();
    ini.with_section(Some("targets"))
        .set("count", phi_q.len().to_string())
        .set("phi_omega", "phi_omega.nlchf");
    write_field(&dir.join("phi_omega.nlchf"), phi_omega)?;
    for (n, f) in phi_q.iter().enumerate() {
        let name = format!("phi_q_{n:04}.nlchf");
        write_field(&dir.join(&name), f)?;
        ini.with_section(Some("phi_q")).set(n.to_string(), name);
    }
    let path = dir.join(MANIFEST);
    ini.write_to_file(&path)?;
    Ok(path)
}

/// `(phi_q files in index order, phi_omega file)`.
fn manifest_entries(path: &Path) -> Result<(Vec<PathBuf>, PathBuf)> {
    let ini = Ini::load_from_file(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let t = ini.section(Some("targets")).ok_or_else(|| anyhow!("manifest lacks [targets]"))?;
    let count: usize = t
        .get("count")
        .ok_or_else(|| anyhow!("manifest lacks count"))?
        .trim()
        .parse()?;
    if count == 0 {
        bail!("manifest lists no phi_q slices");
    }
    let omega = base.join(t.get("phi_omega").ok_or_else(|| anyhow!("manifest lacks phi_omega"))?.trim());
    let q = ini.section(Some("phi_q")).ok_or_else(|| anyhow!("manifest lacks [phi_q]"))?;
    let files = (0..count)
        .map(|n| {
            q.get(n.to_string())
                .map(|f| base.join(f.trim()))
                .ok_or_else(|| anyhow!("manifest lacks phi_q index {n}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((files, omega))
}

pub fn manifest_files(path: &Path) -> Result<Vec<PathBuf>> {
    let (mut files, omega) = manifest_entries(path)?;
    files.push(omega);
    Ok(files)
}

pub fn read_targets(path: &Path) -> Result<(Vec<ScalarField>, ScalarField)> {
    let (files, omega) = manifest_entries(path)?;
    let q = files.iter().map(|f| read_field(f)).collect::<Result<Vec<_>>>()?;
    Ok((q, read_field(&omega)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesRow {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    pub separation: f64,
    pub cost: Option<(f64, f64)>,
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `step,time,mass,energy,separation[,cost,stationarity]`; the
/// optional columns appear when the first row carries them.
pub fn emit_timeseries(path: &Path, rows: &[SeriesRow]) -> Result<()> {
    let with_cost = rows.first().is_some_and(|r| r.cost.is_some());
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["step", "time", "mass", "energy", "separation"];
    if with_cost {
        header.extend(["cost", "stationarity"]);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.step.to_string(), real(r.time), real(r.mass), real(r.energy), real(r.separation)];
        if with_cost {
            let (c, s) = r.cost.ok_or_else(|| anyhow!("row {} lacks cost columns", r.step))?;
            rec.extend([real(c), real(s)]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`emit_timeseries`] back into its header and rows.
pub fn read_timeseries(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec?.iter().map(|s| s.parse::<f64>().map_err(Into::into)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((header, rows))
}

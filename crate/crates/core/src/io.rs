//! File formats.
//!
//! * T3 tensors: ASCII line `T3 I J K\n`, then `I·J·K` little-endian `f64` in the tensor's
//!   storage order (`k` fastest).
//! * Triplet text tensors: a `# dims I J K` header, then `i j k value` lines with 0-based
//!   indices. Entries that are not listed are zero. Other `#` lines and blank lines are skipped.
//! * M2 matrices: ASCII line `M2 rows cols\n`, then row-major little-endian `f64`.
//! * Factor directories: `meta` (`R = …`, `dims = I J K`, `ranks = L_1 … L_R`), `A_r.mat`,
//!   `B_r.mat` for `r = 1..R` and `C.mat`, all M2.
//! * Trace CSV with header [`TRACE_HEADER`].
//!
//! Parse errors carry the byte offset at which the problem was found.

use std::fs;
use std::path::Path;

use crate::error::{BtdError, Result};
use crate::hirls::{IterationRecord, SolverTrace};
use crate::matrix::DenseMatrix;
use crate::model::{BtdFactors, RankEstimate};
use crate::tensor::{DenseTensor3, Dims};

pub const TRACE_HEADER: [&str; 8] =
    ["iter", "objective", "data_fit", "reg", "rel_diff", "active_R", "active_L_json", "wall_ms"];

fn parse_err(offset: usize, message: impl Into<String>) -> BtdError {
    BtdError::Parse { offset, message: message.into() }
}

/// Splits `"<TAG> n1 n2 …\n"` off the front of `bytes`; returns the numbers and the payload
/// offset.
fn binary_header(bytes: &[u8], tag: &str, count: usize) -> Result<(Vec<usize>, usize)> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(bytes.len(), format!("missing end of {tag} header line")))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|e| parse_err(e.valid_up_to(), "header is not ASCII"))?;
    let mut fields = line.split_ascii_whitespace();
    if fields.next() != Some(tag) {
        return Err(parse_err(0, format!("expected `{tag}` magic")));
    }
    let mut nums = Vec::with_capacity(count);
    for field in fields {
        let offset = field.as_ptr() as usize - line.as_ptr() as usize;
        let n: usize = field.parse().map_err(|_| parse_err(offset, format!("bad dimension `{field}`")))?;
        if n == 0 {
            return Err(parse_err(offset, "dimensions must be positive"));
        }
        nums.push(n);
    }
    if nums.len() != count {
        return Err(parse_err(0, format!("{tag} header needs {count} dimensions, found {}", nums.len())));
    }
    Ok((nums, end + 1))
}

fn read_f64s(bytes: &[u8], start: usize, count: usize) -> Result<Vec<f64>> {
    let payload = &bytes[start..];
    let expected = count.checked_mul(8).ok_or_else(|| parse_err(0, "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(parse_err(
            start + payload.len().min(expected),
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    payload
        .chunks_exact(8)
        .enumerate()
        .map(|(n, chunk)| {
            let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(start + 8 * n, "non-finite value"))
            }
        })
        .collect()
}

fn encode(header: String, values: &[f64]) -> Vec<u8> {
    let mut out = header.into_bytes();
    out.reserve(values.len() * 8);
    values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn encode_t3(t: &DenseTensor3) -> Vec<u8> {
    let (i, j, k) = t.dims();
    encode(format!("T3 {i} {j} {k}\n"), t.as_slice())
}

pub fn decode_t3(bytes: &[u8]) -> Result<DenseTensor3> {
    let (d, start) = binary_header(bytes, "T3", 3)?;
    let dims = (d[0], d[1], d[2]);
    let values = read_f64s(bytes, start, d[0] * d[1] * d[2])?;
    DenseTensor3::new(dims, values)
}

pub fn encode_m2(m: &DenseMatrix) -> Vec<u8> {
    encode(format!("M2 {} {}\n", m.rows(), m.cols()), m.as_slice())
}

pub fn decode_m2(bytes: &[u8]) -> Result<DenseMatrix> {
    let (d, start) = binary_header(bytes, "M2", 2)?;
    let values = read_f64s(bytes, start, d[0] * d[1])?;
    DenseMatrix::new(d[0], d[1], values)
}

/// Parses the triplet text format.
pub fn parse_triplets(text: &str) -> Result<DenseTensor3> {
    let mut dims: Option<Dims> = None;
    let mut values: Vec<Option<f64>> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let at = |field: &str| start + (field.as_ptr() as usize - line.as_ptr() as usize);
        if let Some(rest) = trimmed.strip_prefix('#') {
            let mut fields = rest.split_ascii_whitespace();
            if fields.next() == Some("dims") {
                if dims.is_some() {
                    return Err(parse_err(start, "duplicate dims header"));
                }
                let nums: Vec<usize> = fields
                    .map(|f| {
                        f.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| parse_err(at(f), "bad dimension"))
                    })
                    .collect::<Result<_>>()?;
                if nums.len() != 3 {
                    return Err(parse_err(start, "dims header needs three sizes"));
                }
                dims = Some((nums[0], nums[1], nums[2]));
                values = vec![None; nums[0] * nums[1] * nums[2]];
            }
            continue;
        }
        let (ni, nj, nk) = dims.ok_or_else(|| parse_err(start, "entry before `# dims I J K` header"))?;
        let fields: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(start, format!("expected `i j k value`, found {} fields", fields.len())));
        }
        let mut idx = [0usize; 3];
        for (slot, (field, bound)) in idx.iter_mut().zip(fields.iter().zip([ni, nj, nk])) {
            *slot = field
                .parse::<usize>()
                .ok()
                .filter(|&v| v < bound)
                .ok_or_else(|| parse_err(at(field), format!("index `{field}` outside 0..{bound}")))?;
        }
        let v: f64 = fields[3]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(at(fields[3]), format!("bad value `{}`", fields[3])))?;
        let slot = &mut values[(idx[0] * nj + idx[1]) * nk + idx[2]];
        if slot.is_some() {
            return Err(parse_err(start, "duplicate entry"));
        }
        *slot = Some(v);
    }
    let dims = dims.ok_or_else(|| parse_err(0, "missing `# dims I J K` header"))?;
    DenseTensor3::new(dims, values.into_iter().map(|v| v.unwrap_or(0.0)).collect())
}

pub fn format_triplets(t: &DenseTensor3) -> String {
    let (ni, nj, nk) = t.dims();
    let mut out = format!("# dims {ni} {nj} {nk}\n");
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                out.push_str(&format!("{i} {j} {k} {:e}\n", t[(i, j, k)]));
            }
        }
    }
    out
}

/// Reads a T3 file, or a triplet text file if it does not start with the T3 magic.
pub fn read_tensor(path: &Path) -> Result<DenseTensor3> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"T3") {
        decode_t3(&bytes)
    } else {
        let text =
            std::str::from_utf8(&bytes).map_err(|e| parse_err(e.valid_up_to(), "not a T3 file or UTF-8 text"))?;
        parse_triplets(text)
    }
}

pub fn write_tensor(path: &Path, t: &DenseTensor3) -> Result<()> {
    Ok(fs::write(path, encode_t3(t))?)
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    decode_m2(&fs::read(path)?)
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    Ok(fs::write(path, encode_m2(m))?)
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_factors(dir: &Path, f: &BtdFactors) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (i, j, k) = f.dims();
    fs::write(dir.join("meta"), format!("R = {}\ndims = {i} {j} {k}\nranks = {}\n", f.num_blocks(), join(&f.ranks())))?;
    for (r, (a, b)) in f.a_blocks().iter().zip(f.b_blocks()).enumerate() {
        write_matrix(&dir.join(format!("A_{}.mat", r + 1)), a)?;
        write_matrix(&dir.join(format!("B_{}.mat", r + 1)), b)?;
    }
    write_matrix(&dir.join("C.mat"), f.c())
}

pub fn read_factors(dir: &Path) -> Result<BtdFactors> {
    let meta = fs::read_to_string(dir.join("meta"))?;
    let entries = parse_key_values(&meta)?;
    let get = |key: &str| -> Result<Vec<usize>> {
        let (offset, value) = entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, o, v)| (*o, v.as_str()))
            .ok_or_else(|| parse_err(meta.len(), format!("meta is missing `{key}`")))?;
        value
            .split_ascii_whitespace()
            .map(|f| f.parse().map_err(|_| parse_err(offset, format!("bad number `{f}` for `{key}`"))))
            .collect()
    };
    let r = get("R")?;
    let ranks = get("ranks")?;
    get("dims")?;
    if r.len() != 1 || r[0] != ranks.len() {
        return Err(parse_err(0, "meta `R` disagrees with `ranks`"));
    }
    let mut a = Vec::with_capacity(r[0]);
    let mut b = Vec::with_capacity(r[0]);
    for n in 1..=r[0] {
        a.push(read_matrix(&dir.join(format!("A_{n}.mat")))?);
        b.push(read_matrix(&dir.join(format!("B_{n}.mat")))?);
    }
    BtdFactors::new(a, b, read_matrix(&dir.join("C.mat"))?)
}

/// `key = value` lines; `#` starts a comment. Returns `(key, byte offset of the line, value)`.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, usize, String)>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| parse_err(start, "expected `key = value`"))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(parse_err(start, "empty key"));
        }
        out.push((key.to_string(), start, v.trim().to_string()));
    }
    Ok(out)
}

pub fn write_trace_csv(path: &Path, trace: &SolverTrace) -> Result<()> {
    fs::write(path, format_trace_csv(trace)?)?;
    Ok(())
}

pub fn format_trace_csv(trace: &SolverTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| BtdError::Io(e.into());
    w.write_record(TRACE_HEADER).map_err(to_io)?;
    for r in &trace.records {
        w.write_record([
            r.iter.to_string(),
            format!("{:e}", r.objective),
            format!("{:e}", r.data_fit),
            format!("{:e}", r.reg_value),
            format!("{:e}", r.rel_diff),
            r.active_r.to_string(),
            serde_json::to_string(&r.active_l).expect("list of integers"),
            format!("{:.3}", r.wall_ms),
        ])
        .map_err(to_io)?;
    }
    let bytes = w.into_inner().map_err(|e| BtdError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("ASCII"))
}

/// Parses the records of a trace CSV written by [`format_trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| parse_err(0, e.to_string()))?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(parse_err(0, "unexpected trace header"));
    }
    rd.records()
        .map(|rec| {
            let rec = rec.map_err(|e| parse_err(0, e.to_string()))?;
            let offset = rec.position().map_or(0, |p| p.byte() as usize);
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| parse_err(offset, format!("bad `{}` value `{}`", TRACE_HEADER[i], &rec[i])))
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse().map_err(|_| parse_err(offset, format!("bad `{}` value `{}`", TRACE_HEADER[i], &rec[i])))
            };
            Ok(IterationRecord {
                iter: int(0)?,
                objective: num(1)?,
                data_fit: num(2)?,
                reg_value: num(3)?,
                rel_diff: num(4)?,
                active_r: int(5)?,
                active_l: serde_json::from_str(&rec[6]).map_err(|e| parse_err(offset, e.to_string()))?,
                wall_ms: num(7)?,
            })
        })
        .collect()
}

pub fn format_rank_report(est: &RankEstimate) -> String {
    format!("R_est = {}\nL_est = {}\n", est.r_est, join(&est.l_est))
}

pub fn rank_report_json(est: &RankEstimate) -> String {
    serde_json::json!({
        "r_est": est.r_est,
        "l_est": est.l_est,
        "active_blocks": est.active_blocks,
        "c_energies": est.c_energies,
    })
    .to_string()
}

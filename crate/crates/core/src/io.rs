//! Raster and matrix file formats.
//!
//! Cubes are stored band-sequential as little-endian `f32`, either as a single
//! flat file (text header followed by the payload) or as an ENVI `.hdr`/`.raw`
//! pair restricted to `interleave = bsq`, `data type = 4`, `byte order = 0`.
//!
//! Flat cube layout:
//!
//! ```text
//! MRCD-CUBE
//! bands=3
//! rows=4
//! cols=5
//! dtype=f32le
//! end
//! <bands*rows*cols little-endian f32, band after band, each band row-major>
//! ```
//!
//! An optional `wavelengths=w0,w1,...` line carries band centers (nm).
//!
//! Masks are binary PGM (`P5`, maxval 255), 0 for no change and 255 for
//! change. Small matrices (spectral responses, kernels, endmembers) are plain
//! text, one row per line, whitespace separated, `#` starting a comment.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::{ChangeMask, Grid, ImageCube};

const FLAT_MAGIC: &str = "MRCD-CUBE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFormat {
    /// Single file: text header plus raw payload.
    Flat,
    /// ENVI header/data pair.
    Envi,
}

impl CubeFormat {
    /// `.hdr` and `.raw` select ENVI, anything else the flat format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("hdr") | Some("raw") => CubeFormat::Envi,
            _ => CubeFormat::Flat,
        }
    }
}

impl std::str::FromStr for CubeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" | "flat-binary" => Ok(CubeFormat::Flat),
            "envi" | "envi-raw" => Ok(CubeFormat::Envi),
            other => Err(Error::InvalidParameter(format!("unknown cube format `{other}`"))),
        }
    }
}

pub fn read_cube(path: &Path, format: CubeFormat) -> Result<ImageCube> {
    match format {
        CubeFormat::Flat => read_flat(path),
        CubeFormat::Envi => read_envi(path),
    }
}

pub fn write_cube(cube: &ImageCube, path: &Path, format: CubeFormat) -> Result<()> {
    let payload = encode_payload(cube)?;
    match format {
        CubeFormat::Flat => {
            let mut header = format!(
                "{FLAT_MAGIC}\nbands={}\nrows={}\ncols={}\ndtype=f32le\n",
                cube.bands(),
                cube.grid().rows,
                cube.grid().cols
            );
            if let Some(w) = cube.band_centers() {
                let list: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                header.push_str(&format!("wavelengths={}\n", list.join(",")));
            }
            header.push_str("end\n");
            let mut bytes = header.into_bytes();
            bytes.extend_from_slice(&payload);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        CubeFormat::Envi => {
            let (hdr, raw) = envi_paths(path);
            let mut header = format!(
                "ENVI\nsamples = {}\nlines = {}\nbands = {}\nheader offset = 0\nfile type = ENVI Standard\n\
                 data type = 4\ninterleave = bsq\nbyte order = 0\n",
                cube.grid().cols,
                cube.grid().rows,
                cube.bands()
            );
            if let Some(w) = cube.band_centers() {
                let list: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                header.push_str(&format!("wavelength = {{{}}}\n", list.join(", ")));
            }
            fs::write(&hdr, header).map_err(|e| Error::io(&hdr, e))?;
            fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))
        }
    }
}

fn encode_payload(cube: &ImageCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(cube.bands() * cube.pixels() * 4);
    for b in 0..cube.bands() {
        for p in 0..cube.pixels() {
            let v = cube.get(b, p) as f32;
            if !v.is_finite() {
                return Err(Error::NonFinite { band: b, pixel: p });
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_payload(bytes: &[u8], bands: usize, grid: Grid) -> Result<ImageCube> {
    let expected = bands * grid.len() * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let n = grid.len();
    let mut data = DMatrix::zeros(bands, n);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let (b, p) = (k / n, k % n);
        if !v.is_finite() {
            return Err(Error::NonFinite { band: b, pixel: p });
        }
        data[(b, p)] = v as f64;
    }
    ImageCube::new(data, grid)
}

fn read_flat(path: &Path) -> Result<ImageCube> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = HashMap::new();
    let mut offset = 0;
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::Header("header is not terminated by `end`".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Header("header is not valid UTF-8".into()))?
            .trim();
        offset += nl + 1;
        if first {
            if line != FLAT_MAGIC {
                return Err(Error::Header(format!("missing `{FLAT_MAGIC}` magic line")));
            }
            first = false;
            continue;
        }
        if line == "end" {
            break;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("expected key=value, got `{line}`")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let dtype = fields.get("dtype").map(String::as_str).unwrap_or("");
    if dtype != "f32le" {
        return Err(Error::Header(format!("unsupported dtype `{dtype}`")));
    }
    let bands = header_usize(&fields, "bands")?;
    let grid = Grid::new(header_usize(&fields, "rows")?, header_usize(&fields, "cols")?)
        .map_err(|e| Error::Header(e.to_string()))?;
    let cube = decode_payload(&bytes[offset..], bands, grid)?;
    match fields.get("wavelengths") {
        Some(list) => cube.with_band_centers(parse_list(list)?),
        None => Ok(cube),
    }
}

fn envi_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().and_then(|e| e.to_str()) == Some("hdr") {
        (path.to_path_buf(), path.with_extension("raw"))
    } else {
        (path.with_extension("hdr"), path.to_path_buf())
    }
}

fn read_envi(path: &Path) -> Result<ImageCube> {
    let (hdr, raw) = envi_paths(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let fields = parse_envi_header(&text)?;
    let get = |k: &str| fields.get(k).map(String::as_str);
    if let Some(interleave) = get("interleave") {
        if !interleave.eq_ignore_ascii_case("bsq") {
            return Err(Error::Header(format!("unsupported interleave `{interleave}`")));
        }
    }
    if get("data type") != Some("4") {
        return Err(Error::Header(format!(
            "unsupported data type `{}` (only 4 = f32)",
            get("data type").unwrap_or("<missing>")
        )));
    }
    if let Some(order) = get("byte order") {
        if order != "0" {
            return Err(Error::Header(format!("unsupported byte order `{order}`")));
        }
    }
    let bands = header_usize(&fields, "bands")?;
    let grid = Grid::new(header_usize(&fields, "lines")?, header_usize(&fields, "samples")?)
        .map_err(|e| Error::Header(e.to_string()))?;
    let offset = match fields.get("header offset") {
        Some(_) => header_usize(&fields, "header offset")?,
        None => 0,
    };
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() < offset {
        return Err(Error::SizeMismatch {
            expected: offset,
            found: bytes.len(),
        });
    }
    let cube = decode_payload(&bytes[offset..], bands, grid)?;
    match fields.get("wavelength") {
        Some(list) => cube.with_band_centers(parse_list(list)?),
        None => Ok(cube),
    }
}

fn parse_envi_header(text: &str) -> Result<HashMap<String, String>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == "ENVI" => {}
        _ => return Err(Error::Header("ENVI header must start with `ENVI`".into())),
    }
    let mut fields = HashMap::new();
    let mut pending: Option<(String, String)> = None;
    for line in lines {
        if let Some((key, mut acc)) = pending.take() {
            acc.push(' ');
            acc.push_str(line.trim());
            if acc.contains('}') {
                fields.insert(key, strip_braces(&acc));
            } else {
                pending = Some((key, acc));
            }
            continue;
        }
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Header(format!("expected `key = value`, got `{line}`")));
        };
        let key = k.trim().to_ascii_lowercase();
        let value = v.trim().to_string();
        if value.starts_with('{') && !value.contains('}') {
            pending = Some((key, value));
        } else {
            fields.insert(key, strip_braces(&value));
        }
    }
    if pending.is_some() {
        return Err(Error::Header("unterminated `{` in ENVI header".into()));
    }
    Ok(fields)
}

fn strip_braces(s: &str) -> String {
    s.trim().trim_start_matches('{').trim_end_matches('}').trim().to_string()
}

fn header_usize(fields: &HashMap<String, String>, key: &str) -> Result<usize> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::Header(format!("missing `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Header(format!("`{key}` is not a non-negative integer: `{raw}`")))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Header(format!("bad number `{}` in list", t.trim())))
        })
        .collect()
}

pub fn write_mask(mask: &ChangeMask, path: &Path) -> Result<()> {
    let grid = mask.grid();
    let mut bytes = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    bytes.extend(mask.as_slice().iter().map(|&v| if v { 255u8 } else { 0u8 }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<ChangeMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Header("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Header(format!("expected P5 graymap, got `{}`", tokens[0])));
    }
    let num = |t: &str| -> Result<usize> {
        t.parse()
            .map_err(|_| Error::Header(format!("bad PGM header field `{t}`")))
    };
    let (cols, rows, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::Header(format!("expected maxval 255, got {maxval}")));
    }
    let grid = Grid::new(rows, cols).map_err(|e| Error::Header(e.to_string()))?;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != grid.len() {
        return Err(Error::SizeMismatch {
            expected: grid.len(),
            found: raster.len(),
        });
    }
    let data = raster
        .iter()
        .enumerate()
        .map(|(p, &v)| match v {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::InvalidMask(format!("pixel {p} has value {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    ChangeMask::from_vec(grid, data)
}

/// Parses a whitespace-separated text matrix, one row per line.
pub fn parse_text_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Header(format!("line {}: bad number `{t}`", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Shape(format!(
                    "line {}: {} entries, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Shape("empty matrix".into()));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn format_text_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_text_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text_matrix(&text)
}

pub fn write_text_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    fs::write(path, format_text_matrix(m)).map_err(|e| Error::io(path, e))
}

/// Parses `key=value` lines; `#` starts a comment. Later keys overwrite
/// earlier ones.
pub fn parse_key_values(reader: impl BufRead) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<key-value stream>", e))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("expected key=value, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (k, v) in entries {
        writeln!(f, "{k}={v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

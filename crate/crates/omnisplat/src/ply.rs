//! Minimal PLY support: ASCII and binary little-endian, one element of
//! interest (`vertex`) read into columns, scalar properties only for
//! writing. Values are kept in their declared type's precision, so a
//! `float` written and read back is bit-identical.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("unsupported PLY: {0}")]
    UnsupportedFormat(String),
    #[error("missing property \"{0}\"")]
    MissingProperty(String),
    #[error("malformed PLY: {0}")]
    Parse(String),
}

impl PlyError {
    fn parse(msg: impl Into<String>) -> Self {
        PlyError::Parse(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn read_binary(self, r: &mut &[u8]) -> io::Result<f64> {
        Ok(match self {
            Self::I8 => r.read_i8()? as f64,
            Self::U8 => r.read_u8()? as f64,
            Self::I16 => r.read_i16::<LittleEndian>()? as f64,
            Self::U16 => r.read_u16::<LittleEndian>()? as f64,
            Self::I32 => r.read_i32::<LittleEndian>()? as f64,
            Self::U32 => r.read_u32::<LittleEndian>()? as f64,
            Self::F32 => r.read_f32::<LittleEndian>()? as f64,
            Self::F64 => r.read_f64::<LittleEndian>()?,
        })
    }

    fn parse_ascii(self, tok: &str) -> Option<f64> {
        let int = |lo: i64, hi: i64| {
            tok.parse::<i64>()
                .ok()
                .filter(|v| (lo..=hi).contains(v))
                .map(|v| v as f64)
        };
        match self {
            Self::I8 => int(i8::MIN as i64, i8::MAX as i64),
            Self::U8 => int(0, u8::MAX as i64),
            Self::I16 => int(i16::MIN as i64, i16::MAX as i64),
            Self::U16 => int(0, u16::MAX as i64),
            Self::I32 => int(i32::MIN as i64, i32::MAX as i64),
            Self::U32 => int(0, u32::MAX as i64),
            Self::F32 => tok.parse::<f32>().ok().map(|v| v as f64),
            Self::F64 => tok.parse::<f64>().ok(),
        }
    }

    fn write_binary(self, w: &mut impl Write, v: f64) -> io::Result<()> {
        match self {
            Self::I8 => w.write_i8(v as i8),
            Self::U8 => w.write_u8(v as u8),
            Self::I16 => w.write_i16::<LittleEndian>(v as i16),
            Self::U16 => w.write_u16::<LittleEndian>(v as u16),
            Self::I32 => w.write_i32::<LittleEndian>(v as i32),
            Self::U32 => w.write_u32::<LittleEndian>(v as u32),
            Self::F32 => w.write_f32::<LittleEndian>(v as f32),
            Self::F64 => w.write_f64::<LittleEndian>(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementDef {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub format: Format,
    pub comments: Vec<String>,
    pub elements: Vec<ElementDef>,
}

/// Scalar columns of the `vertex` element, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTable {
    pub header: Header,
    pub count: usize,
    columns: Vec<(String, ScalarType, Vec<f64>)>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Result<&[f64], PlyError> {
        self.column_typed(name).map(|(_, v)| v)
    }

    pub fn column_typed(&self, name: &str) -> Result<(ScalarType, &[f64]), PlyError> {
        self.columns
            .iter()
            .find(|c| c.0 == name)
            .map(|c| (c.1, c.2.as_slice()))
            .ok_or_else(|| PlyError::MissingProperty(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.0 == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.0.as_str())
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize), PlyError> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| PlyError::parse("header is not terminated by end_header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| PlyError::parse("header is not valid text"))?
            .trim_end_matches('\r');
        offset += end + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line.to_string());
    }

    let mut it = lines.iter();
    if it.next().map(|s| s.trim()) != Some("ply") {
        return Err(PlyError::parse("missing \"ply\" magic"));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<ElementDef> = Vec::new();
    for line in it {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] => {
                comments.push(line.trim_start()["comment".len()..].trim().to_string())
            }
            ["obj_info", ..] => {}
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(PlyError::UnsupportedFormat(format!("version {version}")));
                }
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| PlyError::parse(format!("bad element count in \"{line}\"")))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::parse("property before any element"))?;
                let ty = |t: &str| {
                    ScalarType::parse(t)
                        .ok_or_else(|| PlyError::UnsupportedFormat(format!("property type {t}")))
                };
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List {
                        count: ty(count)?,
                        item: ty(item)?,
                    },
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::parse("property before any element"))?;
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| PlyError::UnsupportedFormat(format!("property type {ty}")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(ty),
                });
            }
            _ => {
                return Err(PlyError::parse(format!(
                    "unrecognized header line \"{line}\""
                )))
            }
        }
    }
    let format = format.ok_or_else(|| PlyError::parse("missing format line"))?;
    Ok((
        Header {
            format,
            comments,
            elements,
        },
        offset,
    ))
}

/// Reads the `vertex` element of a PLY file.
pub fn parse_vertices(bytes: &[u8]) -> Result<VertexTable, PlyError> {
    let (header, offset) = parse_header(bytes)?;
    let body = &bytes[offset..];
    let vertex_index = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::parse("no vertex element"))?;

    let mut columns: Vec<(String, ScalarType, Vec<f64>)> = Vec::new();
    match header.format {
        Format::BinaryLittleEndian => {
            let mut r = body;
            let eof = |_| PlyError::parse("unexpected end of binary data");
            for (ei, el) in header.elements.iter().enumerate().take(vertex_index + 1) {
                let keep = ei == vertex_index;
                if keep {
                    columns = scalar_columns(el);
                }
                for _ in 0..el.count {
                    let mut col = 0;
                    for p in &el.properties {
                        match p.kind {
                            PropertyKind::Scalar(ty) => {
                                let v = ty.read_binary(&mut r).map_err(eof)?;
                                if keep {
                                    columns[col].2.push(v);
                                    col += 1;
                                }
                            }
                            PropertyKind::List { count, item } => {
                                let n = count.read_binary(&mut r).map_err(eof)?;
                                for _ in 0..list_len(n)? {
                                    item.read_binary(&mut r).map_err(eof)?;
                                }
                            }
                        }
                    }
                }
            }
        }
        Format::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| PlyError::parse("ASCII body is not valid text"))?;
            let mut rows = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty());
            for (ei, el) in header.elements.iter().enumerate().take(vertex_index + 1) {
                let keep = ei == vertex_index;
                if keep {
                    columns = scalar_columns(el);
                }
                for row in 0..el.count {
                    let (line_no, line) = rows.next().ok_or_else(|| {
                        PlyError::parse(format!("element {} ends after {row} rows", el.name))
                    })?;
                    let mut toks = line.split_whitespace();
                    let bad =
                        |what: &str| PlyError::parse(format!("body line {}: {what}", line_no + 1));
                    let mut col = 0;
                    for p in &el.properties {
                        match p.kind {
                            PropertyKind::Scalar(ty) => {
                                let tok = toks.next().ok_or_else(|| bad("too few values"))?;
                                let v = ty.parse_ascii(tok).ok_or_else(|| {
                                    bad(&format!("\"{tok}\" is not a valid {}", ty.name()))
                                })?;
                                if keep {
                                    columns[col].2.push(v);
                                    col += 1;
                                }
                            }
                            PropertyKind::List { count, item } => {
                                let tok = toks.next().ok_or_else(|| bad("missing list length"))?;
                                let n = count
                                    .parse_ascii(tok)
                                    .ok_or_else(|| bad("bad list length"))?;
                                for _ in 0..list_len(n)? {
                                    let tok =
                                        toks.next().ok_or_else(|| bad("list is too short"))?;
                                    item.parse_ascii(tok).ok_or_else(|| bad("bad list item"))?;
                                }
                            }
                        }
                    }
                    if toks.next().is_some() {
                        return Err(bad("too many values"));
                    }
                }
            }
        }
    }
    let count = header.elements[vertex_index].count;
    Ok(VertexTable {
        header,
        count,
        columns,
    })
}

fn list_len(n: f64) -> Result<usize, PlyError> {
    if n < 0.0 {
        return Err(PlyError::parse("negative list length"));
    }
    Ok(n as usize)
}

fn scalar_columns(el: &ElementDef) -> Vec<(String, ScalarType, Vec<f64>)> {
    el.properties
        .iter()
        .filter_map(|p| match p.kind {
            PropertyKind::Scalar(ty) => Some((p.name.clone(), ty, Vec::with_capacity(el.count))),
            PropertyKind::List { .. } => None,
        })
        .collect()
}

pub fn read_vertices(path: &Path) -> Result<VertexTable, PlyError> {
    let bytes = fs::read(path).map_err(|source| PlyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_vertices(&bytes)
}

/// Writes a binary little-endian PLY with a single `vertex` element.
/// Every column must have `count` values.
pub fn write_vertices(
    w: &mut impl Write,
    comments: &[String],
    count: usize,
    columns: &[(&str, ScalarType, &[f64])],
) -> io::Result<()> {
    for (name, _, values) in columns {
        assert_eq!(values.len(), count, "column {name} has the wrong length");
    }
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        header.push_str(&format!("comment {c}\n"));
    }
    header.push_str(&format!("element vertex {count}\n"));
    for (name, ty, _) in columns {
        header.push_str(&format!("property {} {name}\n", ty.name()));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut row = Vec::with_capacity(columns.len() * 8);
    for i in 0..count {
        row.clear();
        for (_, ty, values) in columns {
            ty.write_binary(&mut row, values[i])?;
        }
        w.write_all(&row)?;
    }
    Ok(())
}

pub(crate) fn write_file(
    path: &Path,
    write: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), PlyError> {
    let io_err = |source| PlyError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = io::BufWriter::new(file);
    write(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Colored sparse points, e.g. from structure-from-motion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparsePoints {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
}

impl SparsePoints {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions with colors scaled to `[0, 1]`, as the scene initializer
    /// expects them.
    pub fn to_init_points(&self) -> Vec<([f64; 3], [f64; 3])> {
        self.positions
            .iter()
            .zip(&self.colors)
            .map(|(p, c)| (*p, c.map(|v| v as f64 / 255.0)))
            .collect()
    }
}

pub fn parse_points(bytes: &[u8]) -> Result<SparsePoints, PlyError> {
    points_from_table(&parse_vertices(bytes)?)
}

fn points_from_table(table: &VertexTable) -> Result<SparsePoints, PlyError> {
    let mut xyz = Vec::new();
    for name in ["x", "y", "z"] {
        let (ty, col) = table.column_typed(name)?;
        if !matches!(ty, ScalarType::F32 | ScalarType::F64) {
            return Err(PlyError::UnsupportedFormat(format!(
                "property {name} must be float, found {}",
                ty.name()
            )));
        }
        xyz.push(col);
    }
    let mut rgb = Vec::new();
    for name in ["red", "green", "blue"] {
        let (ty, col) = table.column_typed(name)?;
        if ty != ScalarType::U8 {
            return Err(PlyError::UnsupportedFormat(format!(
                "property {name} must be uchar, found {}",
                ty.name()
            )));
        }
        rgb.push(col);
    }
    let mut out = SparsePoints::default();
    for i in 0..table.count {
        let p = [xyz[0][i], xyz[1][i], xyz[2][i]];
        if !p.iter().all(|v| v.is_finite()) {
            return Err(PlyError::parse(format!(
                "vertex {i} has a non-finite position"
            )));
        }
        out.positions.push(p);
        out.colors
            .push([rgb[0][i] as u8, rgb[1][i] as u8, rgb[2][i] as u8]);
    }
    Ok(out)
}

pub fn load_points(path: &Path) -> Result<SparsePoints, PlyError> {
    points_from_table(&read_vertices(path)?)
}

/// Writes points as binary little-endian PLY (`float` x, y, z and `uchar`
/// red, green, blue).
pub fn save_points(points: &SparsePoints, path: &Path) -> Result<(), PlyError> {
    let col = |f: &dyn Fn(usize) -> f64| (0..points.len()).map(f).collect::<Vec<f64>>();
    let cols: Vec<Vec<f64>> = vec![
        col(&|i| points.positions[i][0]),
        col(&|i| points.positions[i][1]),
        col(&|i| points.positions[i][2]),
        col(&|i| points.colors[i][0] as f64),
        col(&|i| points.colors[i][1] as f64),
        col(&|i| points.colors[i][2] as f64),
    ];
    let names = ["x", "y", "z", "red", "green", "blue"];
    let columns: Vec<(&str, ScalarType, &[f64])> = names
        .iter()
        .zip(&cols)
        .enumerate()
        .map(|(i, (n, c))| {
            (
                *n,
                if i < 3 {
                    ScalarType::F32
                } else {
                    ScalarType::U8
                },
                c.as_slice(),
            )
        })
        .collect();
    write_file(path, |w| write_vertices(w, &[], points.len(), &columns))
}

//! Minimal PLY reader/writer (ASCII, binary little- and big-endian).

use std::io::Write;

use crate::error::{Error, Result};

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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarType::I8 => "char",
            ScalarType::U8 => "uchar",
            ScalarType::I16 => "short",
            ScalarType::U16 => "ushort",
            ScalarType::I32 => "int",
            ScalarType::U32 => "uint",
            ScalarType::F32 => "float",
            ScalarType::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if little { <$t>::from_le_bytes(arr) } else { <$t>::from_be_bytes(arr) }) as f64
            }};
        }
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => num!(i16, 2),
            ScalarType::U16 => num!(u16, 2),
            ScalarType::I32 => num!(i32, 4),
            ScalarType::U32 => num!(u32, 4),
            ScalarType::F32 => num!(f32, 4),
            ScalarType::F64 => num!(f64, 8),
        }
    }

    fn write(self, out: &mut Vec<u8>, v: f64) {
        match self {
            ScalarType::I8 => out.push(v as i8 as u8),
            ScalarType::U8 => out.push(v as u8),
            ScalarType::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            ScalarType::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            ScalarType::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            ScalarType::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            ScalarType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            ScalarType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

impl Value {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(v) => Some(*v),
            Value::List(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    pub rows: Vec<Vec<Value>>,
}

impl Element {
    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }

    /// Column of a scalar property, or a "missing attribute" error.
    pub fn scalar_column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .property_index(name)
            .ok_or_else(|| Error::format(format!("missing attribute {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .scalar()
                    .ok_or_else(|| Error::format(format!("attribute {name} is a list")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyFile {
    pub encoding: Encoding,
    pub comments: Vec<String>,
    pub elements: Vec<Element>,
}

impl PlyFile {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn parse(bytes: &[u8]) -> Result<PlyFile> {
        let (header, body_start) = split_header(bytes)?;
        let mut lines = header.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == "ply" => {}
            _ => return Err(Error::format("not a PLY file (missing `ply` magic)")),
        }
        let mut encoding = None;
        let mut comments = Vec::new();
        let mut elements: Vec<Element> = Vec::new();
        for (no, line) in lines {
            let lineno = no + 1;
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("format") => {
                    encoding = Some(match tok.next() {
                        Some("ascii") => Encoding::Ascii,
                        Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                        Some("binary_big_endian") => Encoding::BinaryBigEndian,
                        other => {
                            return Err(Error::Parse {
                                line: lineno,
                                msg: format!("unknown PLY format {other:?}"),
                            })
                        }
                    });
                }
                Some("comment") | Some("obj_info") => {
                    comments.push(line.splitn(2, ' ').nth(1).unwrap_or("").to_string());
                }
                Some("element") => {
                    let name = tok.next();
                    let count = tok.next().and_then(|c| c.parse::<usize>().ok());
                    match (name, count) {
                        (Some(n), Some(c)) => elements.push(Element {
                            name: n.to_string(),
                            count: c,
                            properties: Vec::new(),
                            rows: Vec::new(),
                        }),
                        _ => {
                            return Err(Error::Parse {
                                line: lineno,
                                msg: "malformed element line".into(),
                            })
                        }
                    }
                }
                Some("property") => {
                    let bad = || Error::Parse {
                        line: lineno,
                        msg: format!("malformed property line `{line}`"),
                    };
                    let el = elements.last_mut().ok_or_else(bad)?;
                    let first = tok.next().ok_or_else(bad)?;
                    let prop = if first == "list" {
                        let count = tok.next().and_then(ScalarType::parse).ok_or_else(bad)?;
                        let item = tok.next().and_then(ScalarType::parse).ok_or_else(bad)?;
                        Property {
                            name: tok.next().ok_or_else(bad)?.to_string(),
                            kind: PropertyKind::List { count, item },
                        }
                    } else {
                        Property {
                            kind: PropertyKind::Scalar(ScalarType::parse(first).ok_or_else(bad)?),
                            name: tok.next().ok_or_else(bad)?.to_string(),
                        }
                    };
                    el.properties.push(prop);
                }
                Some("end_header") | None => {}
                Some(other) => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unexpected header keyword `{other}`"),
                    })
                }
            }
        }
        let encoding = encoding.ok_or_else(|| Error::format("PLY header lacks a format line"))?;
        let body = &bytes[body_start..];
        match encoding {
            Encoding::Ascii => read_ascii(body, header.lines().count(), &mut elements)?,
            Encoding::BinaryLittleEndian => read_binary(body, true, &mut elements)?,
            Encoding::BinaryBigEndian => read_binary(body, false, &mut elements)?,
        }
        Ok(PlyFile {
            encoding,
            comments,
            elements,
        })
    }

    /// Header text exactly as [`PlyFile::to_bytes`] writes it.
    pub fn header(&self) -> String {
        let mut h = String::from("ply\n");
        h.push_str(match self.encoding {
            Encoding::Ascii => "format ascii 1.0\n",
            Encoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
            Encoding::BinaryBigEndian => "format binary_big_endian 1.0\n",
        });
        for c in &self.comments {
            h.push_str(&format!("comment {c}\n"));
        }
        for e in &self.elements {
            h.push_str(&format!("element {} {}\n", e.name, e.rows.len()));
            for p in &e.properties {
                match &p.kind {
                    PropertyKind::Scalar(t) => h.push_str(&format!("property {} {}\n", t.name(), p.name)),
                    PropertyKind::List { count, item } => h.push_str(&format!(
                        "property list {} {} {}\n",
                        count.name(),
                        item.name(),
                        p.name
                    )),
                }
            }
        }
        h.push_str("end_header\n");
        h
    }

    /// Serializes with the file's encoding (big-endian is written as little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut file = self.clone();
        if file.encoding == Encoding::BinaryBigEndian {
            file.encoding = Encoding::BinaryLittleEndian;
        }
        let mut out = file.header().into_bytes();
        for e in &file.elements {
            for row in &e.rows {
                if file.encoding == Encoding::Ascii {
                    let mut parts = Vec::new();
                    for v in row {
                        match v {
                            Value::Scalar(s) => parts.push(format!("{s}")),
                            Value::List(l) => {
                                parts.push(l.len().to_string());
                                parts.extend(l.iter().map(|x| format!("{x}")));
                            }
                        }
                    }
                    writeln!(out, "{}", parts.join(" ")).unwrap();
                } else {
                    for (p, v) in e.properties.iter().zip(row) {
                        match (&p.kind, v) {
                            (PropertyKind::Scalar(t), Value::Scalar(s)) => t.write(&mut out, *s),
                            (PropertyKind::List { count, item }, Value::List(l)) => {
                                count.write(&mut out, l.len() as f64);
                                for x in l {
                                    item.write(&mut out, *x);
                                }
                            }
                            _ => unreachable!("row value kind does not match property"),
                        }
                    }
                }
            }
        }
        out
    }
}

fn split_header(bytes: &[u8]) -> Result<(String, usize)> {
    const END: &[u8] = b"end_header";
    let pos = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format("PLY header has no end_header"))?;
    let mut end = pos + END.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) == Some(&b'\n') {
        end += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos + END.len()])
        .map_err(|_| Error::format("PLY header is not valid UTF-8"))?;
    Ok((header.to_string(), end))
}

fn read_ascii(body: &[u8], header_lines: usize, elements: &mut [Element]) -> Result<()> {
    let text = std::str::from_utf8(body).map_err(|_| Error::format("ASCII PLY body is not UTF-8"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + header_lines + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    for el in elements.iter_mut() {
        el.rows.reserve(el.count);
        for _ in 0..el.count {
            let (lineno, line) = lines.next().ok_or_else(|| {
                Error::format(format!("ASCII PLY ended early in element {}", el.name))
            })?;
            let mut tok = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                let t = tok.next().ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("missing value for {what}"),
                })?;
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad number `{t}` for {what}"),
                })
            };
            let mut row = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                match p.kind {
                    PropertyKind::Scalar(_) => row.push(Value::Scalar(next(&p.name)?)),
                    PropertyKind::List { .. } => {
                        let n = next(&p.name)? as usize;
                        let mut l = Vec::with_capacity(n);
                        for _ in 0..n {
                            l.push(next(&p.name)?);
                        }
                        row.push(Value::List(l));
                    }
                }
            }
            el.rows.push(row);
        }
    }
    Ok(())
}

fn read_binary(body: &[u8], little: bool, elements: &mut [Element]) -> Result<()> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let s = body
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(format!("binary PLY truncated while reading {what}")))?;
        pos += n;
        Ok(s)
    };
    for el in elements.iter_mut() {
        el.rows.reserve(el.count);
        for _ in 0..el.count {
            let mut row = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                match p.kind {
                    PropertyKind::Scalar(t) => row.push(Value::Scalar(t.read(take(t.size(), &p.name)?, little))),
                    PropertyKind::List { count, item } => {
                        let n = count.read(take(count.size(), &p.name)?, little) as usize;
                        let mut l = Vec::with_capacity(n);
                        for _ in 0..n {
                            l.push(item.read(take(item.size(), &p.name)?, little));
                        }
                        row.push(Value::List(l));
                    }
                }
            }
            el.rows.push(row);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCII: &str = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\nproperty float y\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2\n3 4.5\n3 0 1 1\n";

    #[test]
    fn parses_ascii() {
        let f = PlyFile::parse(ASCII.as_bytes()).unwrap();
        assert_eq!(f.comments, vec!["hi".to_string()]);
        let v = f.element("vertex").unwrap();
        assert_eq!(v.scalar_column("y").unwrap(), vec![2.0, 4.5]);
        let face = f.element("face").unwrap();
        assert_eq!(face.rows[0][0], Value::List(vec![0.0, 1.0, 1.0]));
    }

    #[test]
    fn binary_roundtrip() {
        let mut f = PlyFile::parse(ASCII.as_bytes()).unwrap();
        f.encoding = Encoding::BinaryLittleEndian;
        let bytes = f.to_bytes();
        let g = PlyFile::parse(&bytes).unwrap();
        assert_eq!(f.elements, g.elements);
    }

    #[test]
    fn missing_attribute_named() {
        let f = PlyFile::parse(ASCII.as_bytes()).unwrap();
        let err = f.element("vertex").unwrap().scalar_column("z").unwrap_err();
        assert_eq!(err.to_string(), "format error: missing attribute z");
    }

    #[test]
    fn truncated_binary_is_error() {
        let mut f = PlyFile::parse(ASCII.as_bytes()).unwrap();
        f.encoding = Encoding::BinaryLittleEndian;
        let bytes = f.to_bytes();
        assert!(PlyFile::parse(&bytes[..bytes.len() - 2]).is_err());
    }
}

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const BINARY_MAGIC: &[u8; 8] = b"GLCLOUD\0";

/// Column groups of the text format, in file order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Column {
    Xyz,
    Rgb,
    Label,
    /// One extra scalar per point (attention scores and the like).
    Scalar,
}

impl Column {
    fn token(self) -> &'static str {
        match self {
            Column::Xyz => "xyz",
            Column::Rgb => "rgb",
            Column::Label => "l",
            Column::Scalar => "s",
        }
    }

    fn width(self) -> usize {
        match self {
            Column::Xyz | Column::Rgb => 3,
            Column::Label | Column::Scalar => 1,
        }
    }
}

/// Splits a schema such as `xyzrgbl` into column groups.
pub fn parse_schema(schema: &str) -> Result<Vec<Column>> {
    let mut rest = schema;
    let mut cols = Vec::new();
    while !rest.is_empty() {
        let col = [Column::Xyz, Column::Rgb, Column::Label, Column::Scalar]
            .into_iter()
            .find(|c| rest.starts_with(c.token()))
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("unknown column in schema {schema:?}") })?;
        if cols.contains(&col) {
            return Err(Error::Parse { line: 1, msg: format!("repeated column {:?}", col.token()) });
        }
        cols.push(col);
        rest = &rest[col.token().len()..];
    }
    if !cols.contains(&Column::Xyz) {
        return Err(Error::Parse { line: 1, msg: "schema lacks xyz".into() });
    }
    Ok(cols)
}

/// A cloud plus an optional per-point scalar column.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudRecord {
    pub cloud: PointCloud,
    pub scalars: Option<Vec<f64>>,
}

impl CloudRecord {
    pub fn schema(&self) -> Vec<Column> {
        let mut cols = vec![Column::Xyz];
        if self.cloud.colors.is_some() {
            cols.push(Column::Rgb);
        }
        if self.cloud.labels.is_some() {
            cols.push(Column::Label);
        }
        if self.scalars.is_some() {
            cols.push(Column::Scalar);
        }
        cols
    }
}

/// Shortest decimal form of `v` rounded to nine significant digits.
fn fmt9(out: &mut String, v: f64) {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    write!(out, "{rounded}").unwrap();
}

pub fn format_text(record: &CloudRecord) -> String {
    let cloud = &record.cloud;
    let schema: String = record.schema().iter().map(|c| c.token()).collect();
    let mut out = format!("pts {} cols {schema}\n", cloud.len());
    for i in 0..cloud.len() {
        let mut fields: Vec<String> = Vec::new();
        let mut push = |v: f64| {
            let mut s = String::new();
            fmt9(&mut s, v);
            fields.push(s);
        };
        cloud.positions[i].iter().for_each(|&v| push(v));
        if let Some(c) = &cloud.colors {
            c[i].iter().for_each(|&v| push(v));
        }
        if let Some(l) = &cloud.labels {
            fields.push(l[i].to_string());
        }
        if let Some(s) = &record.scalars {
            let mut t = String::new();
            fmt9(&mut t, s[i]);
            fields.push(t);
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_text(text: impl BufRead) -> Result<CloudRecord> {
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let header = header?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::Parse { line: hline, msg: format!("bad header {header:?}") };
    if parts.len() != 4 || parts[0] != "pts" || parts[2] != "cols" {
        return Err(bad_header());
    }
    let n: usize = parts[1].parse().map_err(|_| bad_header())?;
    let schema = parse_schema(parts[3]).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::Parse { line: hline, msg },
        other => other,
    })?;
    let width: usize = schema.iter().map(|c| c.width()).sum();

    let mut positions = Vec::with_capacity(n);
    let mut colors = schema.contains(&Column::Rgb).then(|| Vec::with_capacity(n));
    let mut labels = schema.contains(&Column::Label).then(|| Vec::with_capacity(n));
    let mut scalars = schema.contains(&Column::Scalar).then(|| Vec::with_capacity(n));
    for (line, row) in lines {
        let row = row?;
        if positions.len() == n {
            return Err(Error::Parse { line, msg: format!("more than {n} points") });
        }
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != width {
            return Err(Error::Parse { line, msg: format!("expected {width} fields, found {}", fields.len()) });
        }
        let num = |s: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { line, msg: format!("bad number {s:?}") }),
            }
        };
        let mut at = 0;
        for col in &schema {
            match col {
                Column::Xyz => positions.push([num(fields[at])?, num(fields[at + 1])?, num(fields[at + 2])?]),
                Column::Rgb => {
                    let c = [num(fields[at])?, num(fields[at + 1])?, num(fields[at + 2])?];
                    colors.as_mut().unwrap().push(c);
                }
                Column::Label => {
                    let l = fields[at]
                        .parse::<usize>()
                        .map_err(|_| Error::Parse { line, msg: format!("bad label {:?}", fields[at]) })?;
                    labels.as_mut().unwrap().push(l);
                }
                Column::Scalar => scalars.as_mut().unwrap().push(num(fields[at])?),
            }
            at += col.width();
        }
    }
    if positions.len() != n {
        return Err(Error::Parse { line: hline, msg: format!("header promises {n} points, found {}", positions.len()) });
    }
    Ok(CloudRecord { cloud: PointCloud { positions, colors, labels }, scalars })
}

pub fn to_binary(record: &CloudRecord) -> Vec<u8> {
    let cloud = &record.cloud;
    let mut out = BINARY_MAGIC.to_vec();
    let flags = cloud.colors.is_some() as u8 | (cloud.labels.is_some() as u8) << 1 | (record.scalars.is_some() as u8) << 2;
    out.push(flags);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for i in 0..cloud.len() {
        let mut vals: Vec<f64> = cloud.positions[i].to_vec();
        if let Some(c) = &cloud.colors {
            vals.extend_from_slice(&c[i]);
        }
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &cloud.labels {
            out.extend_from_slice(&(l[i] as u64).to_le_bytes());
        }
        if let Some(s) = &record.scalars {
            out.extend_from_slice(&s[i].to_le_bytes());
        }
    }
    out
}

pub fn from_binary(bytes: &[u8]) -> Result<CloudRecord> {
    let corrupt = |msg: &str| Error::Parse { line: 0, msg: msg.to_string() };
    if bytes.len() < 17 || &bytes[..8] != BINARY_MAGIC {
        return Err(corrupt("not a binary cloud"));
    }
    let flags = bytes[8];
    let n = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    let (has_c, has_l, has_s) = (flags & 1 != 0, flags & 2 != 0, flags & 4 != 0);
    let per = 8 * (3 + 3 * has_c as usize + has_l as usize + has_s as usize);
    if n.checked_mul(per) != Some(bytes.len() - 17) {
        return Err(corrupt("binary cloud has the wrong length"));
    }
    let mut words = bytes[17..].chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
    let mut f = || f64::from_le_bytes(words.next().unwrap());
    let mut record = CloudRecord {
        cloud: PointCloud {
            positions: Vec::with_capacity(n),
            colors: has_c.then(Vec::new),
            labels: has_l.then(Vec::new),
        },
        scalars: has_s.then(Vec::new),
    };
    for _ in 0..n {
        record.cloud.positions.push([f(), f(), f()]);
        if let Some(c) = record.cloud.colors.as_mut() {
            c.push([f(), f(), f()]);
        }
        if let Some(l) = record.cloud.labels.as_mut() {
            l.push(f().to_bits() as usize);
        }
        if let Some(s) = record.scalars.as_mut() {
            s.push(f());
        }
    }
    Ok(record)
}

/// Reads the text or binary format (detected by content) and validates
/// labels against `num_classes` when given.
pub fn read_record(path: &Path, num_classes: Option<usize>) -> Result<CloudRecord> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let record = if bytes.starts_with(BINARY_MAGIC) {
        from_binary(&bytes)?
    } else {
        parse_text(BufReader::new(bytes.as_slice()))?
    };
    record.cloud.validate(num_classes)?;
    Ok(record)
}

pub fn read_cloud(path: &Path, num_classes: Option<usize>) -> Result<PointCloud> {
    Ok(read_record(path, num_classes)?.cloud)
}

/// Writes the binary variant when the extension is `.bin`, text otherwise.
pub fn write_record(path: &Path, record: &CloudRecord) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "bin") {
        to_binary(record)
    } else {
        format_text(record).into_bytes()
    };
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_record(path, &CloudRecord { cloud: cloud.clone(), scalars: None })
}

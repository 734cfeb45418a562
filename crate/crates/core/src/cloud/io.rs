//! ASCII PLY and CSV point-cloud files.
//!
//! Cloud metadata rides in PLY comments (`comment sensor_origin x y z`,
//! `comment planar`, `comment corrected`). Invalid normals are written as
//! `nan`. Normals read back are renormalised; zero or non-finite ones load
//! as invalid.

use std::io::{BufRead, BufReader, Read, Write};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::Vec3;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn clean_normal(n: Vec3) -> Option<Vec3> {
    let len = n.norm();
    (len.is_finite() && len > 0.0).then(|| n / len)
}

fn normal_fields(n: Option<Vec3>) -> [String; 3] {
    match n {
        Some(n) => [format!("{:?}", n.x), format!("{:?}", n.y), format!("{:?}", n.z)],
        None => ["nan".into(), "nan".into(), "nan".into()],
    }
}

pub fn write_ply<W: Write>(cloud: &PointCloud, mut out: W) -> Result<()> {
    let o = cloud.sensor_origin();
    writeln!(out, "ply\nformat ascii 1.0")?;
    writeln!(out, "comment sensor_origin {:?} {:?} {:?}", o.x, o.y, o.z)?;
    if cloud.is_planar() {
        writeln!(out, "comment planar")?;
    }
    if cloud.is_corrected() {
        writeln!(out, "comment corrected")?;
    }
    writeln!(out, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {axis}")?;
    }
    if cloud.normals().is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(out, "property double {axis}")?;
        }
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
        if cloud.normals().is_some() {
            write!(out, " {}", normal_fields(cloud.normal(i)).join(" "))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ply<R: Read>(input: R) -> Result<PointCloud> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
        }
    };
    let (n, magic) = next("`ply`")?;
    if magic.trim() != "ply" {
        return Err(parse_err(n, "missing `ply` magic"));
    }
    let mut origin = Vec3::zeros();
    let mut planar = false;
    let mut corrected = false;
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let (n, line) = next("`end_header`")?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(parse_err(n, format!("unsupported format `{other}`"))),
            ["comment", "sensor_origin", x, y, z] => {
                let v = |s: &str| s.parse::<f64>().map_err(|_| parse_err(n, format!("bad origin `{s}`")));
                origin = Vec3::new(v(x)?, v(y)?, v(z)?);
            }
            ["comment", "planar"] => planar = true,
            ["comment", "corrected"] => corrected = true,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", c] => {
                if count.is_some() {
                    return Err(parse_err(n, "duplicate vertex element"));
                }
                count = Some(c.parse::<usize>().map_err(|_| parse_err(n, format!("bad vertex count `{c}`")))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if count.is_none() {
                    return Err(parse_err(n, "vertex element must come first"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if !in_vertex => {}
            ["property", ty, name] if in_vertex => {
                if !["float", "double", "float32", "float64"].contains(ty) {
                    return Err(parse_err(n, format!("vertex property `{name}` has unsupported type `{ty}`")));
                }
                props.push(name.to_string());
            }
            ["property", ..] if !in_vertex => {}
            _ => return Err(parse_err(n, format!("unrecognised header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| parse_err(0, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let xyz = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(parse_err(0, "vertex element lacks x, y, z")),
    };
    let nxyz = match (col("nx"), col("ny"), col("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        (None, None, None) => None,
        _ => return Err(parse_err(0, "partial normal properties")),
    };

    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = next("vertex row")?;
        let vals = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| parse_err(n, format!("not a number: `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != props.len() {
            return Err(parse_err(n, format!("expected {} values, got {}", props.len(), vals.len())));
        }
        let p = Vec3::new(vals[xyz[0]], vals[xyz[1]], vals[xyz[2]]);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(parse_err(n, "non-finite point"));
        }
        points.push(p);
        if let Some(c) = nxyz {
            normals.push(clean_normal(Vec3::new(vals[c[0]], vals[c[1]], vals[c[2]])));
        }
    }
    finish(points, nxyz.map(|_| normals), origin, planar, corrected)
}

fn finish(
    points: Vec<Vec3>,
    normals: Option<Vec<Option<Vec3>>>,
    origin: Vec3,
    planar: bool,
    corrected: bool,
) -> Result<PointCloud> {
    let cloud = PointCloud::new(points).with_origin(origin).with_planar(planar);
    let cloud = match normals {
        Some(n) => cloud.with_normals(n)?,
        None => cloud,
    };
    Ok(cloud.mark_corrected(corrected))
}

/// CSV `x,y,z[,nx,ny,nz]`. CSV carries no metadata, so the sensor origin
/// has to be supplied.
pub fn write_csv<W: Write>(cloud: &PointCloud, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let with_normals = cloud.normals().is_some();
    let mut header = vec!["x", "y", "z"];
    if with_normals {
        header.extend(["nx", "ny", "nz"]);
    }
    w.write_record(&header).map_err(io)?;
    for (i, p) in cloud.points().iter().enumerate() {
        let mut row = vec![format!("{:?}", p.x), format!("{:?}", p.y), format!("{:?}", p.z)];
        if with_normals {
            row.extend(normal_fields(cloud.normal(i)));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R, sensor_origin: Vec3) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let with_normals = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "nx", "ny", "nz"] => true,
        _ => return Err(parse_err(1, format!("expected header x,y,z[,nx,ny,nz], got {}", header.join(",")))),
    };
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        let v = |j: usize| {
            row[j]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("not a number: `{}`", &row[j])))
        };
        let p = Vec3::new(v(0)?, v(1)?, v(2)?);
        if !p.iter().all(|c| c.is_finite()) {
            return Err(parse_err(line, "non-finite point"));
        }
        points.push(p);
        if with_normals {
            normals.push(clean_normal(Vec3::new(v(3)?, v(4)?, v(5)?)));
        }
    }
    finish(points, with_normals.then_some(normals), sensor_origin, false, false)
}

//! Gmsh ASCII v2.2 import and export for quadratic meshes.
//!
//! Supported element types: 11 (10-node tetrahedron) and 9 (6-node
//! triangle), matching the discretization used everywhere else. Points and
//! lines are skipped with a warning; any other type is an error. Surface
//! triangles are grouped into named surfaces by their physical tag, using
//! `$PhysicalNames` when present and `surface_<tag>` otherwise. Volume
//! elements keep their physical tag as the region id.
//!
//! The writer emits nodes with shortest round-trip decimal formatting, so a
//! write/read cycle reproduces coordinates, connectivity, and tags exactly.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use super::{Mesh, Surface};
use crate::{Error, Real, Result, Vec3};

const TET10: u32 = 11;
const TRI6: u32 = 9;
const POINT: u32 = 15;
const LINE2: u32 = 1;
const LINE3: u32 = 8;

struct Cursor<R: BufRead> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Cursor<R> {
    fn next_line(&mut self) -> Result<Option<String>> {
        match self.lines.next() {
            None => Ok(None),
            Some(l) => {
                self.line_no += 1;
                Ok(Some(l?.trim().to_string()))
            }
        }
    }

    fn expect_line(&mut self, what: &str) -> Result<String> {
        self.next_line()?.ok_or_else(|| {
            Error::Mesh(format!(
                "unexpected end of file while reading {what} (line {})",
                self.line_no
            ))
        })
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Mesh(format!("line {}: {msg}", self.line_no))
    }
}

/// Reads a mesh from a Gmsh ASCII v2.2 file.
pub fn read_msh(path: &Path) -> Result<Mesh> {
    let file = std::fs::File::open(path)?;
    read_msh_from(std::io::BufReader::new(file))
}

/// Reads a mesh from any buffered reader (ASCII v2.2).
pub fn read_msh_from<R: BufRead>(reader: R) -> Result<Mesh> {
    let mut cur = Cursor {
        lines: reader.lines(),
        line_no: 0,
    };

    let mut phys_names: HashMap<(u32, i32), String> = HashMap::new();
    let mut node_ids: Vec<u64> = Vec::new();
    let mut nodes: Vec<Vec3> = Vec::new();
    let mut id_to_index: HashMap<u64, usize> = HashMap::new();
    let mut tets: Vec<[usize; 10]> = Vec::new();
    let mut tet_region: Vec<i32> = Vec::new();
    let mut surface_tris: BTreeMap<i32, Vec<[usize; 6]>> = BTreeMap::new();
    let mut saw_format = false;
    let mut saw_nodes = false;
    let mut saw_elements = false;
    let mut skipped = 0usize;

    while let Some(line) = cur.next_line()? {
        if line.is_empty() {
            continue;
        }
        match line.as_str() {
            "$MeshFormat" => {
                let l = cur.expect_line("$MeshFormat")?;
                let mut it = l.split_whitespace();
                let version = it.next().unwrap_or("");
                let ftype: u32 = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| cur.err("malformed $MeshFormat"))?;
                if !version.starts_with("2.2") {
                    return Err(cur.err(format!(
                        "unsupported msh version '{version}' (expected 2.2)"
                    )));
                }
                if ftype != 0 {
                    return Err(cur.err("binary msh files are not supported"));
                }
                expect_end(&mut cur, "$EndMeshFormat")?;
                saw_format = true;
            }
            "$PhysicalNames" => {
                let count: usize = parse_count(&mut cur, "$PhysicalNames")?;
                for _ in 0..count {
                    let l = cur.expect_line("physical name")?;
                    let mut it = l.splitn(3, ' ');
                    let dim: u32 = parse_field(&cur, it.next(), "dimension")?;
                    let tag: i32 = parse_field(&cur, it.next(), "tag")?;
                    let raw = it
                        .next()
                        .ok_or_else(|| cur.err("missing physical name"))?
                        .trim();
                    let name = raw.trim_matches('"').to_string();
                    if name.is_empty() {
                        return Err(cur.err("empty physical name"));
                    }
                    phys_names.insert((dim, tag), name);
                }
                expect_end(&mut cur, "$EndPhysicalNames")?;
            }
            "$Nodes" => {
                let count: usize = parse_count(&mut cur, "$Nodes")?;
                for _ in 0..count {
                    let l = cur.expect_line("node")?;
                    let mut it = l.split_whitespace();
                    let id: u64 = parse_field(&cur, it.next(), "node id")?;
                    let x: Real = parse_field(&cur, it.next(), "x")?;
                    let y: Real = parse_field(&cur, it.next(), "y")?;
                    let z: Real = parse_field(&cur, it.next(), "z")?;
                    if id_to_index.insert(id, nodes.len()).is_some() {
                        return Err(cur.err(format!("duplicate node id {id}")));
                    }
                    node_ids.push(id);
                    nodes.push(Vec3::new(x, y, z));
                }
                expect_end(&mut cur, "$EndNodes")?;
                saw_nodes = true;
            }
            "$Elements" => {
                if !saw_nodes {
                    return Err(cur.err("$Elements before $Nodes"));
                }
                let count: usize = parse_count(&mut cur, "$Elements")?;
                for _ in 0..count {
                    let l = cur.expect_line("element")?;
                    let fields: Vec<&str> = l.split_whitespace().collect();
                    if fields.len() < 3 {
                        return Err(cur.err("malformed element line"));
                    }
                    let etype: u32 = parse_field(&cur, Some(fields[1]), "element type")?;
                    let ntags: usize = parse_field(&cur, Some(fields[2]), "tag count")?;
                    if fields.len() < 3 + ntags {
                        return Err(cur.err("element line shorter than its tag count"));
                    }
                    let phys: i32 = if ntags >= 1 {
                        parse_field(&cur, Some(fields[3]), "physical tag")?
                    } else {
                        0
                    };
                    let node_fields = &fields[3 + ntags..];
                    let conn = |n: usize| -> Result<Vec<usize>> {
                        if node_fields.len() != n {
                            return Err(cur.err(format!(
                                "element type {etype} expects {n} nodes, found {}",
                                node_fields.len()
                            )));
                        }
                        node_fields
                            .iter()
                            .map(|s| {
                                let id: u64 = s
                                    .parse()
                                    .map_err(|_| cur.err(format!("bad node id '{s}'")))?;
                                id_to_index
                                    .get(&id)
                                    .copied()
                                    .ok_or_else(|| cur.err(format!("undefined node id {id}")))
                            })
                            .collect()
                    };
                    match etype {
                        TET10 => {
                            let c = conn(10)?;
                            tets.push(std::array::from_fn(|i| c[i]));
                            tet_region.push(phys);
                        }
                        TRI6 => {
                            let c = conn(6)?;
                            surface_tris
                                .entry(phys)
                                .or_default()
                                .push(std::array::from_fn(|i| c[i]));
                        }
                        POINT | LINE2 | LINE3 => skipped += 1,
                        other => {
                            return Err(cur.err(format!(
                                "unsupported element type {other}; only quadratic \
                                 tetrahedra (11) and triangles (9) are accepted"
                            )))
                        }
                    }
                }
                expect_end(&mut cur, "$EndElements")?;
                saw_elements = true;
            }
            s if s.starts_with('$') && !s.starts_with("$End") => {
                // Unknown section: skip to its end marker.
                let end = format!("$End{}", &s[1..]);
                loop {
                    let l = cur.expect_line(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            other => {
                return Err(cur.err(format!("unexpected content '{other}'")));
            }
        }
    }

    if !saw_format {
        return Err(Error::Mesh("missing $MeshFormat section".into()));
    }
    if !saw_nodes || !saw_elements {
        return Err(Error::Mesh("missing $Nodes or $Elements section".into()));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} point/line elements");
    }
    if tets.is_empty() && surface_tris.is_empty() {
        return Err(Error::Mesh("mesh contains no supported elements".into()));
    }

    let mut surfaces = BTreeMap::new();
    for (tag, tris) in surface_tris {
        let name = phys_names
            .get(&(2, tag))
            .cloned()
            .unwrap_or_else(|| format!("surface_{tag}"));
        if surfaces
            .insert(name.clone(), Surface { tag, tris })
            .is_some()
        {
            return Err(Error::Mesh(format!(
                "two physical surface tags share the name '{name}'"
            )));
        }
    }

    Ok(Mesh {
        nodes,
        tets,
        tet_region,
        surfaces,
        ellipsoid: None,
    })
}

fn expect_end<R: BufRead>(cur: &mut Cursor<R>, marker: &str) -> Result<()> {
    let l = cur.expect_line(marker)?;
    if l != marker {
        return Err(cur.err(format!("expected {marker}, found '{l}'")));
    }
    Ok(())
}

fn parse_count<R: BufRead>(cur: &mut Cursor<R>, section: &str) -> Result<usize> {
    let l = cur.expect_line(section)?;
    l.trim()
        .parse()
        .map_err(|_| cur.err(format!("bad count '{l}' in {section}")))
}

fn parse_field<R: BufRead, T: std::str::FromStr>(
    cur: &Cursor<R>,
    field: Option<&str>,
    what: &str,
) -> Result<T> {
    field
        .ok_or_else(|| cur.err(format!("missing {what}")))?
        .parse()
        .map_err(|_| cur.err(format!("bad {what} '{}'", field.unwrap())))
}

/// Writes a mesh as Gmsh ASCII v2.2.
pub fn write_msh(mesh: &Mesh, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_msh_to(mesh, &mut w)
}

/// Writes a mesh to any writer (ASCII v2.2).
pub fn write_msh_to<W: Write>(mesh: &Mesh, w: &mut W) -> Result<()> {
    writeln!(w, "$MeshFormat\n2.2 0 8\n$EndMeshFormat")?;

    if !mesh.surfaces.is_empty() {
        writeln!(w, "$PhysicalNames\n{}", mesh.surfaces.len())?;
        for (name, s) in &mesh.surfaces {
            writeln!(w, "2 {} \"{}\"", s.tag, name)?;
        }
        writeln!(w, "$EndPhysicalNames")?;
    }

    writeln!(w, "$Nodes\n{}", mesh.nodes.len())?;
    for (i, p) in mesh.nodes.iter().enumerate() {
        // Shortest round-trip decimal form keeps write/read exact.
        writeln!(w, "{} {} {} {}", i + 1, p.x, p.y, p.z)?;
    }
    writeln!(w, "$EndNodes")?;

    let n_elems = mesh.tets.len() + mesh.surfaces.values().map(|s| s.tris.len()).sum::<usize>();
    writeln!(w, "$Elements\n{n_elems}")?;
    let mut eid = 1usize;
    for (e, conn) in mesh.tets.iter().enumerate() {
        let tag = mesh.tet_region[e];
        write!(w, "{eid} {TET10} 2 {tag} {tag}")?;
        for &n in conn {
            write!(w, " {}", n + 1)?;
        }
        writeln!(w)?;
        eid += 1;
    }
    for s in mesh.surfaces.values() {
        for tri in &s.tris {
            write!(w, "{eid} {TRI6} 2 {} {}", s.tag, s.tag)?;
            for &n in tri {
                write!(w, " {}", n + 1)?;
            }
            writeln!(w)?;
            eid += 1;
        }
    }
    writeln!(w, "$EndElements")?;
    Ok(())
}

//! Frames, datasets and extended-XYZ reading and writing.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use equiformer::graph::AtomisticGraph;
use equiformer::{Error, Result};

const ELEMENTS: &str = "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn \
Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd \
Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf \
Es Fm";

/// Atomic number of an element symbol, or of a bare integer.
pub fn atomic_number(symbol: &str) -> Option<usize> {
    if let Ok(z) = symbol.parse::<usize>() {
        return Some(z);
    }
    ELEMENTS
        .split_whitespace()
        .position(|s| s.eq_ignore_ascii_case(symbol))
        .map(|i| i + 1)
}

pub fn element_symbol(z: usize) -> String {
    match ELEMENTS.split_whitespace().nth(z.wrapping_sub(1)) {
        Some(s) => s.to_string(),
        None => z.to_string(),
    }
}

/// One configuration. Species are atomic numbers; energies in eV,
/// positions in Å, forces in eV/Å.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub species: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    pub energy: f64,
    pub forces: Option<Vec<[f64; 3]>>,
}

impl Frame {
    pub fn graph(&self, cutoff: f64) -> Result<AtomisticGraph> {
        AtomisticGraph::new(self.species.clone(), self.positions.clone(), cutoff)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub frames: Vec<Frame>,
}

/// Energy mean and standard deviation; forces are divided by the same std.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn energy_to_model(&self, e: f64) -> f64 {
        (e - self.mean) / self.std
    }

    pub fn energy_from_model(&self, e: f64) -> f64 {
        e * self.std + self.mean
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_forces(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.forces.is_some())
    }

    /// First `n` frames and the rest.
    pub fn split(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.frames.len());
        (
            Dataset {
                frames: self.frames[..n].to_vec(),
            },
            Dataset {
                frames: self.frames[n..].to_vec(),
            },
        )
    }

    pub fn normalizer(&self) -> Normalizer {
        let n = self.frames.len().max(1) as f64;
        let mean = self.frames.iter().map(|f| f.energy).sum::<f64>() / n;
        let var = self.frames.iter().map(|f| (f.energy - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Normalizer {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn energy_std(&self) -> f64 {
        self.normalizer().std
    }

    pub fn average_atom_count(&self) -> f64 {
        let n = self.frames.len().max(1) as f64;
        self.frames.iter().map(|f| f.species.len() as f64).sum::<f64>() / n
    }

    pub fn average_degree(&self, cutoff: f64) -> Result<f64> {
        let (mut edges, mut nodes) = (0usize, 0usize);
        for f in &self.frames {
            let g = f.graph(cutoff)?;
            edges += g.num_edges();
            nodes += g.num_nodes();
        }
        Ok(if nodes == 0 { 0.0 } else { edges as f64 / nodes as f64 })
    }

    pub fn max_species(&self) -> usize {
        self.frames.iter().flat_map(|f| f.species.iter().copied()).max().unwrap_or(0)
    }
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

/// `key=value` pairs of a comment line; values may be double-quoted.
fn comment_pairs(s: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if key.is_empty() {
            break;
        }
        let mut value = String::new();
        if chars.peek() == Some(&'=') {
            chars.next();
            if chars.peek() == Some(&'"') {
                chars.next();
                for c in chars.by_ref() {
                    if c == '"' {
                        break;
                    }
                    value.push(c);
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
            }
        }
        out.push((key, value));
    }
    out
}

/// Parse extended XYZ text. With `require_forces`, every atom line must
/// carry three force columns.
pub fn parse_xyz(text: &str, require_forces: bool) -> Result<Dataset> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| parse_err(i + 1, format!("expected atom count, got `{}`", lines[i].trim())))?;
        let comment_line = i + 2;
        let comment = *lines
            .get(i + 1)
            .ok_or_else(|| parse_err(comment_line, "missing comment line"))?;
        let energy = comment_pairs(comment)
            .into_iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("energy"))
            .ok_or_else(|| parse_err(comment_line, "comment has no energy=<value>"))?
            .1
            .parse::<f64>()
            .map_err(|e| parse_err(comment_line, format!("bad energy: {e}")))?;
        let mut species = Vec::with_capacity(count);
        let mut positions = Vec::with_capacity(count);
        let mut forces = Vec::with_capacity(count);
        let mut all_forces = true;
        for a in 0..count {
            let ln = i + 2 + a;
            let line = *lines
                .get(ln)
                .ok_or_else(|| parse_err(ln + 1, format!("frame ends after {a} of {count} atoms")))?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 && cols.len() != 7 {
                return Err(parse_err(
                    ln + 1,
                    format!("expected 4 or 7 columns (element x y z [fx fy fz]), got {}", cols.len()),
                ));
            }
            let z = atomic_number(cols[0]).ok_or_else(|| parse_err(ln + 1, format!("unknown element `{}`", cols[0])))?;
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| parse_err(ln + 1, format!("bad number `{s}`"))) };
            species.push(z);
            positions.push([num(cols[1])?, num(cols[2])?, num(cols[3])?]);
            if cols.len() == 7 {
                forces.push([num(cols[4])?, num(cols[5])?, num(cols[6])?]);
            } else {
                all_forces = false;
                if require_forces {
                    return Err(Error::Input(format!(
                        "line {}: missing forces for atom {a} (forces were requested)",
                        ln + 1
                    )));
                }
            }
        }
        frames.push(Frame {
            species,
            positions,
            energy,
            forces: (all_forces && count > 0).then_some(forces),
        });
        i += 2 + count;
    }
    Ok(Dataset { frames })
}

pub fn load_xyz(path: impl AsRef<Path>, require_forces: bool) -> Result<Dataset> {
    parse_xyz(&std::fs::read_to_string(path)?, require_forces)
}

/// Extended XYZ text; floats use shortest round-trip formatting.
pub fn format_xyz(data: &Dataset) -> String {
    let mut s = String::new();
    for f in &data.frames {
        let props = if f.forces.is_some() {
            "species:S:1:pos:R:3:forces:R:3"
        } else {
            "species:S:1:pos:R:3"
        };
        writeln!(s, "{}", f.species.len()).unwrap();
        writeln!(s, "energy={:?} Properties={props}", f.energy).unwrap();
        for (a, (&z, p)) in f.species.iter().zip(&f.positions).enumerate() {
            write!(s, "{} {:?} {:?} {:?}", element_symbol(z), p[0], p[1], p[2]).unwrap();
            if let Some(fr) = &f.forces {
                write!(s, " {:?} {:?} {:?}", fr[a][0], fr[a][1], fr[a][2]).unwrap();
            }
            s.push('\n');
        }
    }
    s
}

pub fn write_xyz(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    std::fs::write(path, format_xyz(data))?;
    Ok(())
}

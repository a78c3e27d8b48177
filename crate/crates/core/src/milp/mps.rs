//! MPS export/import and the plain-text solution format.
//!
//! The writer emits a fixed layout so identical models always serialize to
//! identical bytes:
//!
//! * section headers start in column 1;
//! * indicator lines (`ROWS`, `BOUNDS`, SOS set headers) are ` XX ` followed
//!   by name fields;
//! * data lines are indented four spaces with name fields left-justified to
//!   12 columns and separated by single spaces;
//! * one (name, value) pair per data line;
//! * values use Rust's shortest round-trip decimal formatting;
//! * variables are named `x<id>`, constraints `c<id>`, the objective row
//!   `obj`; binary runs are wrapped in `'INTORG'`/`'INTEND'` markers;
//! * ordered interpolation groups are written in an `SOS` section as
//!   ` S2 sos<k>` headers followed by member lines `x<id> <ordinal>`.
//!
//! The parser tokenizes on whitespace, so it also accepts ordinary
//! free-format MPS files using the same naming scheme.
//!
//! Solution files are `<variable name> <value>` per line; variables omitted
//! by the producer default to zero. Blank lines and `#` comments are
//! ignored.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{MilpModel, Sense, VarKind, Variable};

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T, MpsError> {
    Err(MpsError::Parse {
        line,
        msg: msg.into(),
    })
}

fn pad(name: &str) -> String {
    format!("{name:<12}")
}

/// Serialize a model to our fixed MPS layout.
pub fn write_mps<W: Write>(model: &MilpModel, name: &str, w: &mut W) -> io::Result<()> {
    writeln!(w, "NAME          {name}")?;
    writeln!(w, "ROWS")?;
    writeln!(w, " N  obj")?;
    for (i, row) in model.constraints.iter().enumerate() {
        let code = match row.sense {
            Sense::Le => "L",
            Sense::Eq => "E",
            Sense::Ge => "G",
        };
        writeln!(w, " {code}  c{i}")?;
    }

    // Column-major terms: objective first, then rows in index order.
    let n = model.variables.len();
    let mut cols: Vec<Vec<(String, f64)>> = vec![Vec::new(); n];
    for &(j, c) in &model.objective {
        cols[j].push(("obj".to_string(), c));
    }
    for (i, row) in model.constraints.iter().enumerate() {
        for &(j, c) in &row.terms {
            cols[j].push((format!("c{i}"), c));
        }
    }

    writeln!(w, "COLUMNS")?;
    let mut in_int = false;
    for (j, entries) in cols.iter().enumerate() {
        let is_int = model.variables[j].kind == VarKind::Binary;
        if is_int && !in_int {
            writeln!(w, "    {} {} 'INTORG'", pad("MARKER"), pad("'MARKER'"))?;
            in_int = true;
        } else if !is_int && in_int {
            writeln!(w, "    {} {} 'INTEND'", pad("MARKER"), pad("'MARKER'"))?;
            in_int = false;
        }
        let var = format!("x{j}");
        if entries.is_empty() {
            // Keep orphan columns visible so ids stay contiguous on import.
            writeln!(w, "    {} {} 0", pad(&var), pad("obj"))?;
        }
        for (row, c) in entries {
            writeln!(w, "    {} {} {c}", pad(&var), pad(row))?;
        }
    }
    if in_int {
        writeln!(w, "    {} {} 'INTEND'", pad("MARKER"), pad("'MARKER'"))?;
    }

    writeln!(w, "RHS")?;
    for (i, row) in model.constraints.iter().enumerate() {
        if row.rhs != 0.0 {
            writeln!(w, "    {} {} {}", pad("RHS"), pad(&format!("c{i}")), row.rhs)?;
        }
    }

    writeln!(w, "BOUNDS")?;
    for (j, v) in model.variables.iter().enumerate() {
        let var = pad(&format!("x{j}"));
        let bnd = pad("BND");
        if v.kind == VarKind::Binary {
            if v.lower == v.upper {
                writeln!(w, " FX {bnd} {var} {}", v.lower)?;
            } else {
                writeln!(w, " BV {bnd} {var}")?;
            }
            continue;
        }
        if v.lower == v.upper {
            writeln!(w, " FX {bnd} {var} {}", v.lower)?;
            continue;
        }
        if v.lower == f64::NEG_INFINITY {
            writeln!(w, " MI {bnd} {var}")?;
        } else if v.lower != 0.0 {
            writeln!(w, " LO {bnd} {var} {}", v.lower)?;
        }
        if v.upper != f64::INFINITY {
            writeln!(w, " UP {bnd} {var} {}", v.upper)?;
        }
    }

    if !model.sos2_groups.is_empty() {
        writeln!(w, "SOS")?;
        for (g, group) in model.sos2_groups.iter().enumerate() {
            writeln!(w, " S2 sos{g}")?;
            for (ord, &j) in group.iter().enumerate() {
                writeln!(w, "    {} {}", pad(&format!("x{j}")), ord + 1)?;
            }
        }
    }

    writeln!(w, "ENDATA")
}

pub fn mps_string(model: &MilpModel, name: &str) -> String {
    let mut buf = Vec::new();
    write_mps(model, name, &mut buf).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("MPS output is ASCII")
}

fn var_index(tok: &str, line: usize) -> Result<usize, MpsError> {
    tok.strip_prefix('x')
        .and_then(|s| s.parse().ok())
        .ok_or(())
        .or_else(|_| perr(line, format!("expected variable name x<id>, got `{tok}`")))
}

fn row_index(tok: &str, line: usize) -> Result<usize, MpsError> {
    tok.strip_prefix('c')
        .and_then(|s| s.parse().ok())
        .ok_or(())
        .or_else(|_| perr(line, format!("expected row name c<id>, got `{tok}`")))
}

fn parse_value(tok: &str, line: usize) -> Result<f64, MpsError> {
    tok.parse()
        .or_else(|_| perr(line, format!("bad numeric value `{tok}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Start,
    Rows,
    Columns,
    Rhs,
    Ranges,
    Bounds,
    Sos,
    Done,
}

/// Parse an MPS file produced by [`write_mps`] (or any whitespace-separated
/// MPS using the `x<id>`/`c<id>` naming scheme).
pub fn parse_mps<R: BufRead>(reader: R) -> Result<(MilpModel, String), MpsError> {
    let mut name = String::new();
    let mut model = MilpModel::new();
    // Grow-on-demand variable table; fills gaps with default columns.
    let mut vars: Vec<Option<Variable>> = Vec::new();
    let mut explicit_bounds: Vec<(usize, String, f64)> = Vec::new();
    let mut section = Section::Start;
    let mut in_int = false;

    let ensure_var = |vars: &mut Vec<Option<Variable>>, j: usize, int: bool| {
        if vars.len() <= j {
            vars.resize(j + 1, None);
        }
        vars[j].get_or_insert(Variable {
            kind: if int {
                VarKind::Binary
            } else {
                VarKind::Continuous
            },
            lower: 0.0,
            upper: if int { 1.0 } else { f64::INFINITY },
        });
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('*') {
            continue;
        }
        let header = !line.starts_with(' ');
        let toks: Vec<&str> = line.split_whitespace().collect();
        if header {
            section = match toks[0] {
                "NAME" => {
                    name = toks.get(1).unwrap_or(&"").to_string();
                    Section::Start
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "RANGES" => Section::Ranges,
                "BOUNDS" => Section::Bounds,
                "SOS" => Section::Sos,
                "ENDATA" => Section::Done,
                other => return perr(lineno, format!("unknown section `{other}`")),
            };
            if section == Section::Done {
                break;
            }
            continue;
        }
        match section {
            Section::Rows => {
                if toks.len() != 2 {
                    return perr(lineno, "ROWS lines need a type and a name");
                }
                match (toks[0], toks[1]) {
                    ("N", "obj") => {}
                    ("N", other) => {
                        return perr(lineno, format!("objective row must be `obj`, got `{other}`"))
                    }
                    (code, rname) => {
                        let idx = row_index(rname, lineno)?;
                        let sense = match code {
                            "L" => Sense::Le,
                            "E" => Sense::Eq,
                            "G" => Sense::Ge,
                            other => return perr(lineno, format!("unknown row type `{other}`")),
                        };
                        if idx != model.constraints.len() {
                            return perr(lineno, format!("row c{idx} out of order"));
                        }
                        model.add_constraint(Vec::new(), sense, 0.0);
                    }
                }
            }
            Section::Columns => {
                if toks.len() >= 3 && toks[1] == "'MARKER'" {
                    match toks[2] {
                        "'INTORG'" => in_int = true,
                        "'INTEND'" => in_int = false,
                        other => return perr(lineno, format!("unknown marker `{other}`")),
                    }
                    continue;
                }
                if toks.len() < 3 || toks.len() % 2 == 0 {
                    return perr(lineno, "COLUMNS lines are `var (row value)+`");
                }
                let j = var_index(toks[0], lineno)?;
                ensure_var(&mut vars, j, in_int);
                for pair in toks[1..].chunks(2) {
                    let value = parse_value(pair[1], lineno)?;
                    if pair[0] == "obj" {
                        model.objective.push((j, value));
                    } else {
                        let i = row_index(pair[0], lineno)?;
                        if i >= model.constraints.len() {
                            return perr(lineno, format!("row c{i} not declared"));
                        }
                        model.constraints[i].terms.push((j, value));
                    }
                }
            }
            Section::Rhs => {
                if toks.len() < 3 || toks.len() % 2 == 0 {
                    return perr(lineno, "RHS lines are `set (row value)+`");
                }
                for pair in toks[1..].chunks(2) {
                    let i = row_index(pair[0], lineno)?;
                    if i >= model.constraints.len() {
                        return perr(lineno, format!("row c{i} not declared"));
                    }
                    model.constraints[i].rhs = parse_value(pair[1], lineno)?;
                }
            }
            Section::Ranges => return perr(lineno, "RANGES sections are not supported"),
            Section::Bounds => {
                if toks.len() < 3 {
                    return perr(lineno, "BOUNDS lines are `type set var [value]`");
                }
                let j = var_index(toks[2], lineno)?;
                ensure_var(&mut vars, j, false);
                let value = if toks.len() > 3 {
                    parse_value(toks[3], lineno)?
                } else {
                    0.0
                };
                explicit_bounds.push((j, toks[0].to_string(), value));
            }
            Section::Sos => {
                if toks[0] == "S2" {
                    if toks.len() != 2 {
                        return perr(lineno, "SOS set headers are ` S2 <name>`");
                    }
                    model.sos2_groups.push(Vec::new());
                } else {
                    if toks.len() != 2 {
                        return perr(lineno, "SOS member lines are `var ordinal`");
                    }
                    let j = var_index(toks[0], lineno)?;
                    ensure_var(&mut vars, j, false);
                    match model.sos2_groups.last_mut() {
                        Some(g) => g.push(j),
                        None => return perr(lineno, "SOS member before set header"),
                    }
                }
            }
            Section::Start | Section::Done => {
                return perr(lineno, "data line outside any section")
            }
        }
    }
    if section != Section::Done {
        return perr(0, "missing ENDATA");
    }

    model.variables = vars
        .into_iter()
        .enumerate()
        .map(|(j, v)| {
            v.ok_or(MpsError::Parse {
                line: 0,
                msg: format!("variable ids are not contiguous: x{j} missing"),
            })
        })
        .collect::<Result<_, _>>()?;

    for (j, kind, value) in explicit_bounds {
        let v = &mut model.variables[j];
        match kind.as_str() {
            "UP" => v.upper = value,
            "LO" => v.lower = value,
            "FX" => {
                v.lower = value;
                v.upper = value;
            }
            "FR" => {
                v.lower = f64::NEG_INFINITY;
                v.upper = f64::INFINITY;
            }
            "MI" => v.lower = f64::NEG_INFINITY,
            "PL" => v.upper = f64::INFINITY,
            "BV" => {
                v.kind = VarKind::Binary;
                v.lower = 0.0;
                v.upper = 1.0;
            }
            other => {
                return perr(0, format!("unknown bound type `{other}` for x{j}"));
            }
        }
    }

    model
        .validate()
        .map_err(|e| MpsError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
    Ok((model, name))
}

/// Write a full assignment, one `x<id> <value>` line per variable.
pub fn write_solution<W: Write>(values: &[f64], w: &mut W) -> io::Result<()> {
    for (j, v) in values.iter().enumerate() {
        writeln!(w, "x{j} {v}")?;
    }
    Ok(())
}

/// Parse a solution file for a model with `n_vars` variables. Missing
/// variables default to zero; unknown or repeated names are errors.
pub fn parse_solution<R: BufRead>(n_vars: usize, reader: R) -> Result<Vec<f64>, MpsError> {
    let mut values = vec![0.0; n_vars];
    let mut seen = vec![false; n_vars];
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return perr(lineno, "solution lines are `<variable> <value>`");
        }
        let j = var_index(toks[0], lineno)?;
        if j >= n_vars {
            return perr(lineno, format!("x{j} not in model ({n_vars} variables)"));
        }
        if seen[j] {
            return perr(lineno, format!("duplicate value for x{j}"));
        }
        seen[j] = true;
        values[j] = parse_value(toks[1], lineno)?;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::MilpModel;

    fn sample_model() -> MilpModel {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 10.0);
        let y = m.add_binary();
        let z = m.add_continuous(f64::NEG_INFINITY, f64::INFINITY);
        let l0 = m.add_continuous(0.0, 1.0);
        let l1 = m.add_continuous(0.0, 1.0);
        m.objective = vec![(x, -1.5), (y, 2.0)];
        m.add_constraint(vec![(x, 1.0), (y, 3.5)], Sense::Le, 4.25);
        m.add_constraint(vec![(z, 1.0), (l0, -0.125)], Sense::Eq, 0.0);
        m.add_constraint(vec![(l0, 1.0), (l1, 1.0)], Sense::Ge, 0.5);
        m.sos2_groups.push(vec![l0, l1]);
        m
    }

    #[test]
    fn export_import_export_is_byte_stable() {
        let m = sample_model();
        let first = mps_string(&m, "sample");
        let (parsed, name) = parse_mps(first.as_bytes()).unwrap();
        assert_eq!(name, "sample");
        let second = mps_string(&parsed, "sample");
        assert_eq!(first, second);
    }

    #[test]
    fn parse_recovers_structure() {
        let m = sample_model();
        let (parsed, _) = parse_mps(mps_string(&m, "s").as_bytes()).unwrap();
        assert_eq!(parsed.variables, m.variables);
        assert_eq!(parsed.constraints, m.constraints);
        assert_eq!(parsed.sos2_groups, m.sos2_groups);
        assert_eq!(parsed.objective, m.objective);
    }

    #[test]
    fn orphan_columns_keep_ids_contiguous() {
        let mut m = MilpModel::new();
        m.add_continuous(0.0, 1.0);
        m.add_continuous(0.0, 2.0); // appears nowhere
        let (parsed, _) = parse_mps(mps_string(&m, "s").as_bytes()).unwrap();
        assert_eq!(parsed.n_variables(), 2);
    }

    #[test]
    fn malformed_inputs_are_line_diagnosed() {
        let bad = "NAME x\nROWS\n N  obj\nCOLUMNS\n    x0  obj\nENDATA\n";
        match parse_mps(bad.as_bytes()) {
            Err(MpsError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_mps("NAME only\n".as_bytes()).is_err());
    }

    #[test]
    fn solution_round_trip_is_exact() {
        let values = vec![1.0 / 3.0, -2.5e-11, 554.2740229999999, 0.0];
        let mut buf = Vec::new();
        write_solution(&values, &mut buf).unwrap();
        let parsed = parse_solution(values.len(), buf.as_slice()).unwrap();
        assert_eq!(parsed, values);
    }

    #[test]
    fn solution_rejects_unknown_and_duplicate_names() {
        assert!(parse_solution(1, "x3 1.0\n".as_bytes()).is_err());
        assert!(parse_solution(1, "x0 1\nx0 2\n".as_bytes()).is_err());
        assert!(parse_solution(1, "y0 1\n".as_bytes()).is_err());
        let vals = parse_solution(2, "# comment\n\nx1 4.5\n".as_bytes()).unwrap();
        assert_eq!(vals, vec![0.0, 4.5]);
    }
}

//! Fixed-column MPS. Columns and rows get eight-character short names; the
//! full names travel in `* map` comment lines.

use super::model::{LinExpr, MilpModel, Sense, VarKind};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write;

const OBJ: &str = "COST";

fn col_name(j: usize) -> String {
    format!("X{:07}", j + 1)
}

fn row_name(i: usize) -> String {
    format!("R{:07}", i + 1)
}

/// Shortest representation within the 12-character value field.
pub fn mps_num(x: f64) -> String {
    let plain = if x == 0.0 { "0".to_string() } else { format!("{x}") };
    if plain.len() <= 12 {
        return plain;
    }
    let fixed = (0..=11).rev().map(|d| format!("{x:.d$}")).find(|s| s.len() <= 12);
    let sci = (0..=10).rev().map(|p| format!("{x:.p$e}")).find(|s| s.len() <= 12);
    let err = |s: &String| (s.parse::<f64>().unwrap() - x).abs();
    [fixed, sci]
        .into_iter()
        .flatten()
        .min_by(|a, b| err(a).partial_cmp(&err(b)).unwrap())
        .unwrap()
}

fn line(out: &mut String, f1: &str, f2: &str, f3: &str, f4: &str, f5: &str, f6: &str) {
    let s = format!(" {f1:<2} {f2:<8}  {f3:<8}  {f4:<12}   {f5:<8}  {f6:<12}");
    let _ = writeln!(out, "{}", s.trim_end());
}

pub fn write_mps(model: &MilpModel) -> Result<String> {
    if model.variables.len() > 9_999_999 || model.constraints.len() > 9_999_999 {
        return Err(Error::Internal { message: "model too large for eight-character names".into(), model_lp: None });
    }
    if model.name.contains(char::is_whitespace) {
        return Err(Error::InvalidParameter(format!("model name '{}' contains whitespace", model.name)));
    }
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {}", model.name);
    for (j, v) in model.variables.iter().enumerate() {
        let _ = writeln!(out, "* map {} {}", col_name(j), v.name);
    }
    for (i, c) in model.constraints.iter().enumerate() {
        let _ = writeln!(out, "* map {} {}", row_name(i), c.name);
    }
    out.push_str("ROWS\n");
    line(&mut out, "N", OBJ, "", "", "", "");
    for (i, c) in model.constraints.iter().enumerate() {
        let t = match c.sense {
            Sense::Le => "L",
            Sense::Ge => "G",
            Sense::Eq => "E",
        };
        line(&mut out, t, &row_name(i), "", "", "", "");
    }

    let mut cols: Vec<Vec<(String, f64)>> = vec![Vec::new(); model.variables.len()];
    for &(j, c) in &model.objective {
        cols[j].push((OBJ.to_string(), c));
    }
    for (i, c) in model.constraints.iter().enumerate() {
        for &(j, a) in &c.terms {
            cols[j].push((row_name(i), a));
        }
    }
    out.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut markers = 0;
    for (j, v) in model.variables.iter().enumerate() {
        let integral = v.is_integral();
        if integral != in_int {
            let tag = if integral { "'INTORG'" } else { "'INTEND'" };
            line(&mut out, "", &format!("MARKER{markers:02}"), "'MARKER'", "", tag, "");
            markers += 1;
            in_int = integral;
        }
        let name = col_name(j);
        let entries = if cols[j].is_empty() { vec![(OBJ.to_string(), 0.0)] } else { cols[j].clone() };
        for pair in entries.chunks(2) {
            let (r1, a1) = &pair[0];
            match pair.get(1) {
                Some((r2, a2)) => line(&mut out, "", &name, r1, &mps_num(*a1), r2, &mps_num(*a2)),
                None => line(&mut out, "", &name, r1, &mps_num(*a1), "", ""),
            }
        }
    }
    if in_int {
        line(&mut out, "", &format!("MARKER{markers:02}"), "'MARKER'", "", "'INTEND'", "");
    }

    out.push_str("RHS\n");
    let mut rhs: Vec<(String, f64)> = Vec::new();
    if model.objective_constant != 0.0 {
        rhs.push((OBJ.to_string(), -model.objective_constant));
    }
    for (i, c) in model.constraints.iter().enumerate() {
        if c.rhs != 0.0 {
            rhs.push((row_name(i), c.rhs));
        }
    }
    for pair in rhs.chunks(2) {
        let (r1, a1) = &pair[0];
        match pair.get(1) {
            Some((r2, a2)) => line(&mut out, "", "RHS", r1, &mps_num(*a1), r2, &mps_num(*a2)),
            None => line(&mut out, "", "RHS", r1, &mps_num(*a1), "", ""),
        }
    }

    out.push_str("BOUNDS\n");
    for (j, v) in model.variables.iter().enumerate() {
        let name = col_name(j);
        let b = |out: &mut String, t: &str, x: Option<f64>| {
            line(out, t, "BND", &name, &x.map(mps_num).unwrap_or_default(), "", "");
        };
        if v.kind == VarKind::Binary && v.lower == 0.0 && v.upper == 1.0 {
            b(&mut out, "BV", None);
            continue;
        }
        if v.lower == v.upper {
            b(&mut out, "FX", Some(v.lower));
            continue;
        }
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            b(&mut out, "FR", None);
            continue;
        }
        if v.lower == f64::NEG_INFINITY {
            b(&mut out, "MI", None);
        } else if v.lower != 0.0 || (v.upper < 0.0) {
            b(&mut out, "LO", Some(v.lower));
        }
        if v.upper.is_finite() {
            b(&mut out, "UP", Some(v.upper));
        } else if v.is_integral() {
            b(&mut out, "PL", None);
        }
    }
    out.push_str("ENDATA\n");
    Ok(out)
}

fn perr(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("MPS line {line}: {msg}"))
}

fn num(tok: &str, ln: usize) -> Result<f64> {
    tok.parse().map_err(|_| perr(ln, format!("bad number {tok}")))
}

/// Reads fixed or free MPS (fields split on whitespace). `* map` comments,
/// when present, restore the full names.
pub fn parse_mps(text: &str) -> Result<MilpModel> {
    let mut model = MilpModel::new("mps");
    let mut map: HashMap<String, String> = HashMap::new();
    let mut rows: HashMap<String, Option<usize>> = HashMap::new();
    let mut objective_row: Option<String> = None;
    let mut cols: HashMap<String, usize> = HashMap::new();
    let mut row_exprs: Vec<LinExpr> = Vec::new();
    let mut row_meta: Vec<(String, Sense)> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut objective = LinExpr::new();
    let mut section = "";
    let mut integer = false;
    let mut seen_bound: Vec<bool> = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(c) = raw.strip_prefix('*') {
            let t: Vec<&str> = c.split_whitespace().collect();
            if t.len() == 3 && t[0] == "map" {
                map.insert(t[1].to_string(), t[2].to_string());
            }
            continue;
        }
        if !raw.starts_with(' ') && !raw.starts_with('\t') {
            let t: Vec<&str> = raw.split_whitespace().collect();
            section = match t[0] {
                "NAME" => {
                    model.name = t.get(1).unwrap_or(&"").to_string();
                    "NAME"
                }
                "ROWS" => "ROWS",
                "COLUMNS" => "COLUMNS",
                "RHS" => "RHS",
                "BOUNDS" => "BOUNDS",
                "ENDATA" => "END",
                "RANGES" => return Err(perr(ln, "RANGES is not supported")),
                other => return Err(perr(ln, format!("unknown section {other}"))),
            };
            continue;
        }
        let t: Vec<&str> = raw.split_whitespace().collect();
        match section {
            "ROWS" => {
                let [kind, name] = t[..] else { return Err(perr(ln, "row needs type and name")) };
                let sense = match kind {
                    "N" => {
                        if objective_row.is_none() {
                            objective_row = Some(name.to_string());
                        }
                        rows.insert(name.to_string(), None);
                        continue;
                    }
                    "L" => Sense::Le,
                    "G" => Sense::Ge,
                    "E" => Sense::Eq,
                    _ => return Err(perr(ln, format!("bad row type {kind}"))),
                };
                if rows.insert(name.to_string(), Some(row_exprs.len())).is_some() {
                    return Err(perr(ln, format!("duplicate row {name}")));
                }
                row_exprs.push(LinExpr::new());
                row_meta.push((name.to_string(), sense));
                rhs.push(0.0);
            }
            "COLUMNS" => {
                if t.len() == 3 && t[1] == "'MARKER'" {
                    integer = match t[2] {
                        "'INTORG'" => true,
                        "'INTEND'" => false,
                        m => return Err(perr(ln, format!("bad marker {m}"))),
                    };
                    continue;
                }
                if t.len() != 3 && t.len() != 5 {
                    return Err(perr(ln, "column entry needs 3 or 5 fields"));
                }
                let j = match cols.get(t[0]) {
                    Some(&j) => j,
                    None => {
                        let kind = if integer { VarKind::Integer } else { VarKind::Continuous };
                        let j = model.add_var(t[0], kind, 0.0, f64::INFINITY);
                        seen_bound.push(false);
                        cols.insert(t[0].to_string(), j);
                        j
                    }
                };
                for pair in t[1..].chunks(2) {
                    let a = num(pair[1], ln)?;
                    match rows.get(pair[0]) {
                        Some(None) => {
                            if Some(pair[0]) == objective_row.as_deref() {
                                objective = objective.add(j, a);
                            }
                        }
                        Some(Some(i)) => row_exprs[*i] = std::mem::take(&mut row_exprs[*i]).add(j, a),
                        None => return Err(perr(ln, format!("unknown row {}", pair[0]))),
                    }
                }
            }
            "RHS" => {
                if t.len() != 3 && t.len() != 5 {
                    return Err(perr(ln, "RHS entry needs 3 or 5 fields"));
                }
                for pair in t[1..].chunks(2) {
                    let v = num(pair[1], ln)?;
                    match rows.get(pair[0]) {
                        Some(None) => objective = objective.plus_const(-v),
                        Some(Some(i)) => rhs[*i] = v,
                        None => return Err(perr(ln, format!("unknown row {}", pair[0]))),
                    }
                }
            }
            "BOUNDS" => {
                if t.len() < 3 {
                    return Err(perr(ln, "bound needs type, set and column"));
                }
                let j = *cols.get(t[2]).ok_or_else(|| perr(ln, format!("unknown column {}", t[2])))?;
                let value = t.get(3).map(|s| num(s, ln)).transpose()?;
                let need = |v: Option<f64>| v.ok_or_else(|| perr(ln, "bound needs a value"));
                let var = &mut model.variables[j];
                seen_bound[j] = true;
                match t[0] {
                    "UP" => var.upper = need(value)?,
                    "LO" => var.lower = need(value)?,
                    "FX" => {
                        let v = need(value)?;
                        var.lower = v;
                        var.upper = v;
                    }
                    "FR" => {
                        var.lower = f64::NEG_INFINITY;
                        var.upper = f64::INFINITY;
                    }
                    "MI" => var.lower = f64::NEG_INFINITY,
                    "PL" => var.upper = f64::INFINITY,
                    "BV" => {
                        var.kind = VarKind::Binary;
                        var.lower = 0.0;
                        var.upper = 1.0;
                    }
                    "LI" => {
                        var.kind = VarKind::Integer;
                        var.lower = need(value)?;
                    }
                    "UI" => {
                        var.kind = VarKind::Integer;
                        var.upper = need(value)?;
                    }
                    other => return Err(perr(ln, format!("bad bound type {other}"))),
                }
            }
            "NAME" | "END" | "" => return Err(perr(ln, "data outside a section")),
            _ => unreachable!(),
        }
    }
    if section != "END" {
        return Err(Error::Parse("MPS text has no ENDATA".into()));
    }
    model.set_objective(&objective);
    for (i, (name, sense)) in row_meta.into_iter().enumerate() {
        let full = map.get(&name).cloned().unwrap_or(name);
        model.add_row(full, &row_exprs[i], sense, rhs[i], None);
    }
    for v in &mut model.variables {
        if let Some(full) = map.get(&v.name) {
            v.name = full.clone();
        }
    }
    Ok(model)
}

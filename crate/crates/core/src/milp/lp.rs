//! CPLEX-style LP text. Tokens are whitespace separated; each row and
//! bound is written on its own line.

use super::model::{LinExpr, MilpModel, Sense, VarKind};
use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::fmt::Write;

/// Maps a model name onto the LP name alphabet. Names that could read as
/// numbers get a leading underscore.
pub fn lp_name(raw: &str) -> String {
    const EXTRA: &str = "!\"#$%&()/,.;?@_`'{}|~";
    let mut s: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || EXTRA.contains(c) { c } else { '_' })
        .collect();
    match s.chars().next() {
        None => s.push('_'),
        Some(c) if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' => s.insert(0, '_'),
        _ if parse_num(&s).is_some() => s.insert(0, '_'),
        _ => {}
    }
    s
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for raw in names {
        let n = lp_name(raw);
        if !seen.insert(n.clone()) {
            return Err(Error::Internal { message: format!("{what} name collision on {n}"), model_lp: None });
        }
        out.push(n);
    }
    Ok(out)
}

pub(crate) fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

fn terms(out: &mut String, terms: &[(usize, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(names.first().map(|s| s.as_str()).unwrap_or("_"));
        return;
    }
    for (p, &(j, a)) in terms.iter().enumerate() {
        let sign = if a < 0.0 { "-" } else { "+" };
        if p > 0 || a < 0.0 {
            let _ = write!(out, " {sign}");
        }
        let _ = write!(out, " {} {}", num(a.abs()), names[j]);
    }
}

pub fn write_lp(model: &MilpModel) -> Result<String> {
    let vars = unique_names(model.variables.iter().map(|v| v.name.as_str()), "variable")?;
    let rows = unique_names(model.constraints.iter().map(|c| c.name.as_str()), "row")?;
    if model.variables.is_empty() {
        return Err(Error::InvalidParameter("cannot export a model without variables".into()));
    }
    let mut out = String::new();
    let _ = writeln!(out, "\\ Problem: {}", model.name);
    // Every column appears in the objective so that readers keep the order.
    let mut dense = vec![0.0; model.variables.len()];
    for &(j, c) in &model.objective {
        dense[j] += c;
    }
    let all: Vec<(usize, f64)> = dense.into_iter().enumerate().collect();
    out.push_str("Minimize\n obj:");
    terms(&mut out, &all, &vars);
    if model.objective_constant != 0.0 {
        let c = model.objective_constant;
        let _ = write!(out, " {} {}", if c < 0.0 { "-" } else { "+" }, num(c.abs()));
    }
    out.push_str("\nSubject To\n");
    for (c, name) in model.constraints.iter().zip(&rows) {
        let _ = write!(out, " {name}:");
        terms(&mut out, &c.terms, &vars);
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", num(c.rhs));
    }
    out.push_str("Bounds\n");
    let pure_binary = |v: &super::model::Variable| v.kind == VarKind::Binary && v.lower == 0.0 && v.upper == 1.0;
    for (v, name) in model.variables.iter().zip(&vars) {
        if pure_binary(v) {
            continue;
        }
        if v.lower == v.upper {
            let _ = writeln!(out, " {name} = {}", num(v.lower));
        } else if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {name} free");
        } else if v.upper == f64::INFINITY {
            if v.lower != 0.0 {
                let _ = writeln!(out, " {name} >= {}", num(v.lower));
            }
        } else {
            let _ = writeln!(out, " {} <= {name} <= {}", num(v.lower), num(v.upper));
        }
    }
    let generals: Vec<&String> = model
        .variables
        .iter()
        .zip(&vars)
        .filter(|(v, _)| v.is_integral() && !pure_binary(v))
        .map(|(_, n)| n)
        .collect();
    let binaries: Vec<&String> = model.variables.iter().zip(&vars).filter(|(v, _)| pure_binary(v)).map(|(_, n)| n).collect();
    for (title, list) in [("Generals", generals), ("Binaries", binaries)] {
        if list.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{title}");
        for chunk in list.chunks(8) {
            let line: Vec<&str> = chunk.iter().map(|s| s.as_str()).collect();
            let _ = writeln!(out, " {}", line.join(" "));
        }
    }
    out.push_str("End\n");
    Ok(out)
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    None,
    Objective,
    Rows,
    Bounds,
    Generals,
    Binaries,
}

fn parse_num(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

fn perr(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("LP line {line}: {msg}"))
}

struct Reader {
    model: MilpModel,
    index: HashMap<String, usize>,
}

impl Reader {
    fn var(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        let j = self.model.add_var(name, VarKind::Continuous, 0.0, f64::INFINITY);
        self.index.insert(name.to_string(), j);
        j
    }

    /// Parses `[+|-] [coef] name ...` into an expression; constant terms are kept.
    fn expr(&mut self, toks: &[&str]) -> LinExpr {
        let mut e = LinExpr::new();
        let mut sign = 1.0;
        let mut coef: Option<f64> = None;
        for &t in toks {
            match t {
                "+" => sign = 1.0,
                "-" => sign = -sign,
                _ => {
                    if let Some(c) = parse_num(t) {
                        if coef.is_some() {
                            e = e.plus_const(sign * coef.unwrap());
                            sign = 1.0;
                        }
                        coef = Some(c);
                    } else {
                        let j = self.var(t);
                        e = e.add(j, sign * coef.take().unwrap_or(1.0));
                        sign = 1.0;
                    }
                }
            }
        }
        if let Some(c) = coef {
            e = e.plus_const(sign * c);
        }
        e
    }
}

pub fn parse_lp(text: &str) -> Result<MilpModel> {
    let mut r = Reader { model: MilpModel::new("lp"), index: HashMap::new() };
    let mut section = Section::None;
    let mut pending: Vec<String> = Vec::new();
    let mut pending_line = 0;
    let mut row_names = HashSet::new();
    let mut objective_seen = false;
    let mut bounds: Vec<(usize, String)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('\\').next().unwrap_or("").trim();
        if let Some(name) = raw.trim().strip_prefix("\\ Problem:") {
            r.model.name = name.trim().to_string();
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let lower = line.to_ascii_lowercase();
        let next = match lower.as_str() {
            "minimize" | "minimum" | "min" => Some(Section::Objective),
            "maximize" | "maximum" | "max" => return Err(perr(ln, "only minimization is supported")),
            "subject to" | "such that" | "st" | "s.t." => Some(Section::Rows),
            "bounds" | "bound" => Some(Section::Bounds),
            "generals" | "general" | "gen" => Some(Section::Generals),
            "binaries" | "binary" | "bin" => Some(Section::Binaries),
            "end" => Some(Section::None),
            _ => None,
        };
        if let Some(s) = next {
            if !pending.is_empty() {
                return Err(perr(pending_line, "incomplete row"));
            }
            section = s;
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::None => return Err(perr(ln, "text outside a section")),
            Section::Objective => {
                if objective_seen {
                    pending.extend(toks.iter().map(|s| s.to_string()));
                } else {
                    objective_seen = true;
                    let body = match toks.first() {
                        Some(t) if t.ends_with(':') => &toks[1..],
                        _ => &toks[..],
                    };
                    pending.extend(body.iter().map(|s| s.to_string()));
                }
                let p: Vec<&str> = pending.iter().map(|s| s.as_str()).collect();
                let e = r.expr(&p);
                let mut combined = LinExpr::new().plus(&LinExpr { terms: r.model.objective.clone(), constant: r.model.objective_constant }, 1.0);
                combined = combined.plus(&e, 1.0);
                r.model.set_objective(&combined);
                pending.clear();
            }
            Section::Rows => {
                if pending.is_empty() {
                    pending_line = ln;
                }
                pending.extend(toks.iter().map(|s| s.to_string()));
                let ops = ["<=", ">=", "=", "=<", "=>", "<", ">"];
                let Some(op_at) = pending.iter().position(|t| ops.contains(&t.as_str())) else { continue };
                if op_at + 1 >= pending.len() {
                    continue;
                }
                let (name, body_start) = match pending[0].strip_suffix(':') {
                    Some(n) => (n.to_string(), 1),
                    None => (format!("R{}", r.model.constraints.len() + 1), 0),
                };
                if !row_names.insert(name.clone()) {
                    return Err(perr(pending_line, format!("duplicate row {name}")));
                }
                let body: Vec<&str> = pending[body_start..op_at].iter().map(|s| s.as_str()).collect();
                let e = r.expr(&body);
                let rhs_toks: Vec<&str> = pending[op_at + 1..].iter().map(|s| s.as_str()).collect();
                let rhs = r.expr(&rhs_toks);
                if !rhs.terms.is_empty() {
                    return Err(perr(pending_line, "variables on the right-hand side"));
                }
                let sense = match pending[op_at].as_str() {
                    "<=" | "=<" | "<" => Sense::Le,
                    ">=" | "=>" | ">" => Sense::Ge,
                    _ => Sense::Eq,
                };
                r.model.add_row(name, &e, sense, rhs.constant, None);
                pending.clear();
            }
            Section::Bounds => bounds.push((ln, line.to_string())),
            Section::Generals | Section::Binaries => {
                for t in toks {
                    let j = r.var(t);
                    let v = &mut r.model.variables[j];
                    if section == Section::Binaries {
                        v.kind = VarKind::Binary;
                        v.lower = 0.0;
                        v.upper = 1.0;
                    } else {
                        v.kind = VarKind::Integer;
                    }
                }
            }
        }
    }
    if !pending.is_empty() {
        return Err(perr(pending_line, "incomplete row"));
    }
    for (ln, b) in bounds {
        apply_bound(&mut r, &b, ln)?;
    }
    Ok(r.model)
}

fn apply_bound(r: &mut Reader, line: &str, ln: usize) -> Result<()> {
    let t: Vec<&str> = line.split_whitespace().collect();
    let num_at = |i: usize| parse_num(t[i]).ok_or_else(|| perr(ln, format!("bad number {}", t[i])));
    match t.as_slice() {
        [name, free] if free.eq_ignore_ascii_case("free") => {
            let j = r.var(name);
            r.model.variables[j].lower = f64::NEG_INFINITY;
            r.model.variables[j].upper = f64::INFINITY;
        }
        [_, "<=", _, "<=", _] => {
            let (lo, hi) = (num_at(0)?, num_at(4)?);
            let j = r.var(t[2]);
            r.model.variables[j].lower = lo;
            r.model.variables[j].upper = hi;
        }
        [a, op, b] => {
            let (name, value, op) = match parse_num(a) {
                Some(v) => (*b, v, flip(op)),
                None => (*a, num_at(2)?, op.to_string()),
            };
            let j = r.var(name);
            let var = &mut r.model.variables[j];
            match op.as_str() {
                "=" => {
                    var.lower = value;
                    var.upper = value;
                }
                "<=" | "=<" | "<" => var.upper = value,
                ">=" | "=>" | ">" => var.lower = value,
                _ => return Err(perr(ln, format!("bad bound operator {op}"))),
            }
        }
        _ => return Err(perr(ln, format!("unreadable bound: {line}"))),
    }
    Ok(())
}

fn flip(op: &str) -> String {
    match op {
        "<=" | "=<" | "<" => ">=".into(),
        ">=" | "=>" | ">" => "<=".into(),
        o => o.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable_model_text() {
        let mut m = MilpModel::new("single");
        let x = m.add_var("x", VarKind::Continuous, 1.0, f64::INFINITY);
        m.set_objective(&LinExpr::var(x));
        let text = write_lp(&m).unwrap();
        assert_eq!(text, "\\ Problem: single\nMinimize\n obj: 1 x\nSubject To\nBounds\n x >= 1\nEnd\n");
        let back = parse_lp(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn names_are_sanitized_and_collisions_refused() {
        assert_eq!(lp_name("e(a,0)"), "_e(a,0)");
        assert_eq!(lp_name("C(a b,1)"), "C(a_b,1)");
        let mut m = MilpModel::new("c");
        m.add_var("a b", VarKind::Continuous, 0.0, 1.0);
        m.add_var("a_b", VarKind::Continuous, 0.0, 1.0);
        assert!(matches!(write_lp(&m), Err(Error::Internal { .. })));
    }

    #[test]
    fn mixed_model_round_trip() {
        let mut m = MilpModel::new("mix");
        let x = m.add_var("x", VarKind::Integer, -2.0, 7.0);
        let y = m.add_var("y", VarKind::Binary, 0.0, 1.0);
        let z = m.add_var("z", VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY);
        let w = m.add_var("w", VarKind::Integer, 3.0, 3.0);
        m.add_row("r1", &LinExpr::var(x).add(y, -2.5).add(z, 1e-7), Sense::Le, 4.0, None);
        m.add_row("r2", &LinExpr::var(z).add(w, 1.0), Sense::Ge, -1.0, None);
        m.add_row("r3", &LinExpr::var(x).add(y, 1.0), Sense::Eq, 0.0, None);
        m.set_objective(&LinExpr::var(x).add(z, -0.75));
        let back = parse_lp(&write_lp(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(parse_lp("Minimize\n obj: x\nSubject To\n c1: x + y <=\nEnd\n").is_err());
        assert!(parse_lp("Maximize\n obj: x\nEnd\n").is_err());
        assert!(parse_lp("x + y\n").is_err());
    }
}

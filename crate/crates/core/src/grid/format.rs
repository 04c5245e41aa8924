//! Line-oriented grid file format.
//!
//! ```text
//! [grid] name=t5 slack=0 vmin=0.9025 vmax=1.1025 bigm=0.5
//! [node] id=1 pl=0.10 ql=0.05 pgmin=0 pgmax=0 qgmin=0 qgmax=0
//! [line] from=0 to=1 r=0.05 x=0.05
//! [switch] from=2 to=3 r=0.05 x=0.05
//! ```
//!
//! Blank lines and `#` comments are ignored. Missing generation bounds on a
//! node default to zero.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{EdgeSpec, GridSpec, NodeSpec};
use crate::error::{Error, Result};

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_grid(&text)
}

struct Record<'a> {
    line: usize,
    fields: HashMap<&'a str, &'a str>,
}

impl<'a> Record<'a> {
    fn text(&self, key: &str) -> Result<&'a str> {
        self.fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::parse(self.line, format!("missing field `{key}`")))
    }

    fn float(&self, key: &str) -> Result<f64> {
        let raw = self.text(key)?;
        raw.parse()
            .map_err(|_| Error::parse(self.line, format!("`{key}`: not a number: {raw}")))
    }

    fn float_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.fields.contains_key(key) {
            self.float(key)
        } else {
            Ok(default)
        }
    }

    fn index(&self, key: &str) -> Result<usize> {
        let raw = self.text(key)?;
        raw.parse()
            .map_err(|_| Error::parse(self.line, format!("`{key}`: not a node id: {raw}")))
    }
}

pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let mut header: Option<Record> = None;
    let mut nodes = Vec::new();
    let mut lines = Vec::new();
    let mut switches = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let tag = tokens.next().unwrap_or_default();
        let mut fields = HashMap::new();
        for tok in tokens {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected key=value, got `{tok}`")))?;
            if fields.insert(key, value).is_some() {
                return Err(Error::parse(line_no, format!("duplicate field `{key}`")));
            }
        }
        let rec = Record {
            line: line_no,
            fields,
        };
        match tag {
            "[grid]" => {
                if header.is_some() {
                    return Err(Error::parse(line_no, "second [grid] record"));
                }
                header = Some(rec);
            }
            "[node]" => nodes.push(NodeSpec {
                id: rec.index("id")?,
                p_load_nominal: rec.float("pl")?,
                q_load_nominal: rec.float("ql")?,
                p_gen_min: rec.float_or("pgmin", 0.0)?,
                p_gen_max: rec.float_or("pgmax", 0.0)?,
                q_gen_min: rec.float_or("qgmin", 0.0)?,
                q_gen_max: rec.float_or("qgmax", 0.0)?,
            }),
            "[line]" | "[switch]" => {
                let arc = EdgeSpec::new(
                    rec.index("from")?,
                    rec.index("to")?,
                    rec.float("r")?,
                    rec.float("x")?,
                );
                if tag == "[line]" {
                    lines.push(arc);
                } else {
                    switches.push(arc);
                }
            }
            other => return Err(Error::parse(line_no, format!("unknown record `{other}`"))),
        }
    }

    let header = header.ok_or_else(|| Error::parse(0, "missing [grid] record"))?;
    let mut ids: Vec<_> = nodes.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("duplicate node id".into()));
    }
    GridSpec::new(
        header.fields.get("name").copied().unwrap_or("grid"),
        nodes,
        lines,
        switches,
        header.index("slack")?,
        header.float("vmin")?,
        header.float("vmax")?,
        header.float("bigm")?,
    )
}

/// Serialises a grid in the format accepted by [`parse_grid`].
pub fn write_grid(grid: &GridSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "[grid] name={} slack={} vmin={} vmax={} bigm={}",
        grid.name(),
        grid.slack(),
        grid.v_min(),
        grid.v_max(),
        grid.big_m()
    );
    for n in grid.nodes() {
        let _ = writeln!(
            out,
            "[node] id={} pl={} ql={} pgmin={} pgmax={} qgmin={} qgmax={}",
            n.id, n.p_load_nominal, n.q_load_nominal, n.p_gen_min, n.p_gen_max, n.q_gen_min, n.q_gen_max
        );
    }
    for (tag, arcs) in [("line", grid.lines()), ("switch", grid.switches())] {
        for a in arcs {
            let _ = writeln!(out, "[{tag}] from={} to={} r={} x={}", a.from, a.to, a.r, a.x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures;

    #[test]
    fn t5_fixture_counts() {
        let g = fixtures::t5();
        assert_eq!(g.num_nodes(), 5);
        assert_eq!(g.num_lines(), 3);
        assert_eq!(g.num_switches(), 3);
        assert_eq!(g.slack(), 0);
        assert_eq!(g.pv_nodes(), vec![2]);
    }

    #[test]
    fn write_then_parse_is_identity() {
        for g in [fixtures::t5(), fixtures::bw33()] {
            assert_eq!(parse_grid(&write_grid(&g)).unwrap(), g);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_grid("[grid] slack=0 vmin=0.9 vmax=1.1 bigm=0.5\n[node] id=0 pl=abc ql=0\n")
            .unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("pl"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_grid("[bus] id=0"), Err(Error::Parse { .. })));
        assert!(matches!(parse_grid("[node] id=0 pl=0 ql=0"), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_reactance_switch_is_rejected() {
        let text = fixtures::T5_GRID.replace("[switch] from=3 to=4 r=0.05 x=0.05", "[switch] from=3 to=4 r=0.05 x=0");
        let err = parse_grid(&text).unwrap_err();
        assert!(err.to_string().contains("nonpositive reactance"), "{err}");
    }

    #[test]
    fn disconnected_file_is_rejected() {
        let text = "[grid] slack=0 vmin=0.9 vmax=1.1 bigm=0.5\n\
                    [node] id=0 pl=0 ql=0\n[node] id=1 pl=0.1 ql=0\n\
                    [node] id=2 pl=0.1 ql=0\n[node] id=3 pl=0.1 ql=0\n\
                    [line] from=0 to=1 r=0.1 x=0.1\n[switch] from=2 to=3 r=0.1 x=0.1\n";
        let err = parse_grid(text).unwrap_err();
        assert!(err.to_string().contains("disconnected grid"), "{err}");
    }
}

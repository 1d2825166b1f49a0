//! Annotated Newick.
//!
//! ```text
//! ((A[&type=1,event=sample]:1.0,B[&type=1,event=sample]:1.0)[&type=1]:0.5)[&type=1];
//! ```
//!
//! Every node carries `type=<1-based int>` in a `[&key=value,...]` comment.
//! Leaves carry `event=sample` or `event=fossil`; single-child nodes carry
//! `event=typechange,to=<int>`; binary nodes need no event. The branch
//! length after `:` is the duration of the branch above the node.
//!
//! The stem above the oldest split is either the branch of an outermost
//! single-child node without length and without event (an origin), or the
//! branch length given on the outermost node itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Event, Node, PhyloError, PhyloTree};

/// Tolerance for sampled tips to count as contemporaneous.
pub const ULTRAMETRIC_TOL: f64 = 1e-9;

#[derive(Debug)]
struct RawNode {
    name: Option<String>,
    attrs: BTreeMap<String, String>,
    length: Option<f64>,
    children: Vec<RawNode>,
    /// Byte offset where the node starts.
    pos: usize,
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl<'a> Parser<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> PhyloError {
        let (line, column) = line_col(self.text, offset);
        PhyloError::Parse {
            offset,
            line,
            column,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), PhyloError> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(x) => Err(self.error(self.pos, format!("expected '{}', found '{}'", c as char, x as char))),
            None => Err(self.error(self.pos, format!("expected '{}', found end of input", c as char))),
        }
    }

    fn tree(&mut self) -> Result<RawNode, PhyloError> {
        let node = self.node()?;
        self.expect(b';')?;
        if let Some(c) = self.peek() {
            return Err(self.error(self.pos, format!("unexpected '{}' after ';'", c as char)));
        }
        Ok(node)
    }

    fn node(&mut self) -> Result<RawNode, PhyloError> {
        self.skip_ws();
        let pos = self.pos;
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.node()?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => return Err(self.error(self.pos, format!("expected ',' or ')', found '{}'", c as char))),
                    None => return Err(self.error(self.pos, "unclosed '('")),
                }
            }
        }
        let name = self.label()?;
        let mut attrs = None;
        let mut length = None;
        // the comment may sit before or after the branch length
        for _ in 0..2 {
            match self.peek() {
                Some(b'[') if attrs.is_none() => attrs = Some(self.comment()?),
                Some(b':') if length.is_none() => {
                    self.pos += 1;
                    length = Some(self.number()?);
                }
                _ => break,
            }
        }
        Ok(RawNode {
            name,
            attrs: attrs.unwrap_or_default(),
            length,
            children,
            pos,
        })
    }

    fn label(&mut self) -> Result<Option<String>, PhyloError> {
        match self.peek() {
            Some(b'\'') => {
                let start = self.pos;
                self.pos += 1;
                let mut out = String::new();
                loop {
                    let rest = &self.text[self.pos..];
                    let Some(k) = rest.find('\'') else {
                        return Err(self.error(start, "unterminated quoted label"));
                    };
                    out.push_str(&rest[..k]);
                    self.pos += k + 1;
                    if self.bytes.get(self.pos) == Some(&b'\'') {
                        out.push('\'');
                        self.pos += 1;
                    } else {
                        return Ok(Some(out));
                    }
                }
            }
            Some(c) if is_label_byte(c) => {
                let start = self.pos;
                while self.pos < self.bytes.len() && is_label_byte(self.bytes[self.pos]) {
                    self.pos += 1;
                }
                Ok(Some(self.text[start..self.pos].to_string()))
            }
            _ => Ok(None),
        }
    }

    fn comment(&mut self) -> Result<BTreeMap<String, String>, PhyloError> {
        let start = self.pos;
        self.pos += 1;
        if self.bytes.get(self.pos) != Some(&b'&') {
            return Err(self.error(self.pos, "node comments must start with '[&'"));
        }
        self.pos += 1;
        let Some(len) = self.text[self.pos..].find(']') else {
            return Err(self.error(start, "unterminated '['"));
        };
        let body_start = self.pos;
        let body = &self.text[body_start..body_start + len];
        self.pos = body_start + len + 1;
        let mut attrs = BTreeMap::new();
        let mut offset = body_start;
        for item in body.split(',') {
            let here = offset + (item.len() - item.trim_start().len());
            offset += item.len() + 1;
            let item = item.trim();
            if item.is_empty() {
                return Err(self.error(here, "empty annotation"));
            }
            let Some((k, v)) = item.split_once('=') else {
                return Err(self.error(here, format!("annotation '{item}' is not key=value")));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(self.error(here, format!("annotation '{item}' is not key=value")));
            }
            if attrs.insert(k.to_string(), v.to_string()).is_some() {
                return Err(self.error(here, format!("duplicate key '{k}'")));
            }
        }
        Ok(attrs)
    }

    fn number(&mut self) -> Result<f64, PhyloError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'0'..=b'9' | b'.' | b'e' | b'E' | b'+' | b'-') {
            self.pos += 1;
        }
        let s = &self.text[start..self.pos];
        if s.is_empty() {
            return Err(self.error(start, "expected a branch length"));
        }
        s.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.error(start, format!("invalid branch length '{s}'")))
    }
}

fn is_label_byte(c: u8) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, b'_' | b'.' | b'-' | b'/' | b'|' | b'*' | b'#') || c >= 0x80
}

struct Builder<'a> {
    text: &'a str,
    nodes: Vec<Node>,
    /// Source offset of each node.
    offsets: Vec<usize>,
}

impl Builder<'_> {
    fn invalid(&self, pos: usize, message: impl Into<String>) -> PhyloError {
        let (line, column) = line_col(self.text, pos);
        PhyloError::Invalid {
            offset: pos,
            line,
            column,
            message: message.into(),
        }
    }

    fn int_attr(&self, raw: &RawNode, key: &str) -> Result<usize, PhyloError> {
        let Some(v) = raw.attrs.get(key) else {
            return Err(self.invalid(raw.pos, format!("missing '{key}' annotation")));
        };
        match v.parse::<usize>() {
            Ok(x) if x >= 1 => Ok(x - 1),
            _ => Err(self.invalid(raw.pos, format!("'{key}={v}' is not a positive integer"))),
        }
    }

    /// Adds `raw` (whose branch starts at forward depth `top`) and its
    /// subtree in pre-order.
    fn add(&mut self, raw: RawNode, parent: Option<usize>, top: f64) -> Result<usize, PhyloError> {
        let ty = self.int_attr(&raw, "type")?;
        let Some(length) = raw.length else {
            return Err(self.invalid(raw.pos, "missing branch length"));
        };
        if length <= 0.0 {
            return Err(self.invalid(raw.pos, format!("branch length {length} is not positive")));
        }
        let event_key = raw.attrs.get("event").map(String::as_str);
        let event = match (raw.children.len(), event_key) {
            (0, Some("sample")) => Event::Sample,
            (0, Some("fossil")) => Event::Fossil,
            (0, Some(e)) => return Err(self.invalid(raw.pos, format!("leaf event must be sample or fossil, got '{e}'"))),
            (0, None) => return Err(self.invalid(raw.pos, "leaf needs event=sample or event=fossil")),
            (1, Some("typechange")) => {
                let to = self.int_attr(&raw, "to")?;
                if to == ty {
                    return Err(self.invalid(raw.pos, format!("type change from type {} to itself", ty + 1)));
                }
                Event::TypeChange { to }
            }
            (1, _) => return Err(self.invalid(raw.pos, "single-child node needs event=typechange,to=<type>")),
            (2, None | Some("split")) => Event::Split,
            (2, Some(e)) => return Err(self.invalid(raw.pos, format!("binary node cannot carry event '{e}'"))),
            (k, _) => return Err(self.invalid(raw.pos, format!("multifurcation with {k} children"))),
        };
        let allowed: &[&str] = match event {
            Event::TypeChange { .. } => &["type", "event", "to"],
            _ => &["type", "event"],
        };
        let extra: BTreeMap<String, String> = raw
            .attrs
            .iter()
            .filter(|(k, _)| !allowed.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if extra.contains_key("to") {
            return Err(self.invalid(raw.pos, "'to' is only allowed on type changes"));
        }
        let id = self.nodes.len();
        self.offsets.push(raw.pos);
        let bottom = top + length;
        self.nodes.push(Node {
            name: raw.name,
            ty,
            length,
            event,
            children: Vec::new(),
            parent,
            t_bottom: bottom,
            t_top: top,
            extra,
        });
        for child in raw.children {
            let cpos = child.pos;
            let c = self.add(child, Some(id), bottom)?;
            let expected = match event {
                Event::TypeChange { to } => to,
                _ => ty,
            };
            if self.nodes[c].ty != expected {
                return Err(self.invalid(
                    cpos,
                    format!("child has type {} but its parent branch ends in type {}", self.nodes[c].ty + 1, expected + 1),
                ));
            }
            self.nodes[id].children.push(c);
        }
        Ok(id)
    }
}

/// Parses one tree. Times are converted to backward time, with the most
/// recent sampled tip at 0.
pub fn parse_tree(text: &str) -> Result<PhyloTree, PhyloError> {
    let mut parser = Parser {
        text,
        bytes: text.as_bytes(),
        pos: 0,
    };
    let raw = parser.tree()?;
    let mut builder = Builder {
        text,
        nodes: Vec::new(),
        offsets: Vec::new(),
    };

    let is_origin = raw.children.len() == 1 && raw.length.is_none() && !raw.attrs.contains_key("event");
    let origin = if is_origin {
        let ty = builder.int_attr(&raw, "type")?;
        let mut raw = raw;
        let child = raw.children.pop().unwrap();
        let cpos = child.pos;
        builder.add(child, None, 0.0)?;
        if builder.nodes[0].ty != ty {
            return Err(builder.invalid(cpos, format!("stem has type {} but the origin has type {}", builder.nodes[0].ty + 1, ty + 1)));
        }
        let extra = raw.attrs.into_iter().filter(|(k, _)| k != "type").collect();
        Some(super::Origin { name: raw.name, extra })
    } else {
        if raw.length.is_none() {
            return Err(builder.invalid(
                raw.pos,
                "the tree needs a stem: give the outermost node a branch length or wrap it in an origin node",
            ));
        }
        builder.add(raw, None, 0.0)?;
        None
    };

    let nodes = std::mem::take(&mut builder.nodes);
    let samples: Vec<usize> = (0..nodes.len()).filter(|&k| nodes[k].event == Event::Sample).collect();
    if samples.is_empty() {
        return Err(builder.invalid(0, "tree has no sampled tip"));
    }
    let tau = samples.iter().map(|&k| nodes[k].t_bottom).fold(0.0, f64::max);
    let mut tree = PhyloTree {
        tau,
        nodes,
        origin,
    };
    for k in 0..tree.nodes.len() {
        let depth = tree.nodes[k].t_bottom;
        let pos_err = |msg: String| builder.invalid(builder.offsets[k], msg);
        match tree.nodes[k].event {
            Event::Sample if (tau - depth).abs() > ULTRAMETRIC_TOL => {
                return Err(pos_err(format!("sampled tip is {} before the present", tau - depth)));
            }
            Event::Fossil if tau - depth <= ULTRAMETRIC_TOL => {
                return Err(pos_err("fossil at or after the present".into()));
            }
            _ if depth > tau + ULTRAMETRIC_TOL => {
                return Err(pos_err("node lies after the present".into()));
            }
            _ => {}
        }
    }
    // forward depths to backward times
    for node in &mut tree.nodes {
        node.t_top = tau - node.t_top;
        node.t_bottom = if node.event == Event::Sample { 0.0 } else { tau - node.t_bottom };
    }
    Ok(tree)
}

fn write_label(out: &mut String, name: &str) {
    if !name.is_empty() && name.bytes().all(is_label_byte) {
        out.push_str(name);
    } else {
        out.push('\'');
        out.push_str(&name.replace('\'', "''"));
        out.push('\'');
    }
}

fn write_attrs(out: &mut String, ty: usize, event: Option<&Event>, extra: &BTreeMap<String, String>) {
    let _ = write!(out, "[&type={}", ty + 1);
    match event {
        Some(Event::Sample) => out.push_str(",event=sample"),
        Some(Event::Fossil) => out.push_str(",event=fossil"),
        Some(Event::TypeChange { to }) => {
            let _ = write!(out, ",event=typechange,to={}", to + 1);
        }
        Some(Event::Split) | None => {}
    }
    for (k, v) in extra {
        let _ = write!(out, ",{k}={v}");
    }
    out.push(']');
}

fn write_node(tree: &PhyloTree, k: usize, out: &mut String) {
    let node = &tree.nodes[k];
    if !node.children.is_empty() {
        out.push('(');
        for (i, &c) in node.children.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_node(tree, c, out);
        }
        out.push(')');
    }
    if let Some(name) = &node.name {
        write_label(out, name);
    }
    write_attrs(out, node.ty, Some(&node.event), &node.extra);
    let _ = write!(out, ":{}", node.length);
}

/// Writes the tree in the dialect read by [`parse_tree`].
pub fn write_tree(tree: &PhyloTree) -> String {
    let mut out = String::new();
    match &tree.origin {
        Some(origin) => {
            out.push('(');
            write_node(tree, tree.root(), &mut out);
            out.push(')');
            if let Some(name) = &origin.name {
                write_label(&mut out, name);
            }
            write_attrs(&mut out, tree.nodes[tree.root()].ty, None, &origin.extra);
        }
        None => write_node(tree, tree.root(), &mut out),
    }
    out.push(';');
    out
}

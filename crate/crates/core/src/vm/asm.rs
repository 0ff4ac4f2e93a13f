//! Line-oriented assembler.
//!
//! One instruction or directive per line, `;` starts a comment. Labels are
//! written `name:` (optionally followed by an instruction) or `.label name`.
//! Directives: `.org N`, `.word e[, e..]`, `.label name`, `.observe e[, e..]`,
//! `.equ name, e`, `.align N`, `.space N`. Expressions are sums/differences of
//! integers (decimal or `0x` hex) and symbols.
//!
//! Several sources can be assembled together with [`assemble_all`]; they share
//! one symbol namespace and each becomes its own [`Program`] segment.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::isa::{Instruction, Opcode, Operand};
use crate::htm::{Address, Word};

/// Default origin for a first segment without `.org`.
const DEFAULT_ORIGIN: u64 = 16;
/// Segments without `.org` start at the previous end rounded up to this.
const SEGMENT_ALIGN: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub origin: Address,
    pub words: Vec<Word>,
    pub labels: BTreeMap<String, Address>,
    pub observe: Vec<Address>,
}

impl Program {
    pub fn end(&self) -> u64 {
        self.origin.0 + self.words.len() as u64
    }

    pub fn label(&self, name: &str) -> Option<Address> {
        self.labels.get(name).copied()
    }

    /// `address: 0xWORD` per line, for golden files.
    pub fn hex_dump(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            let _ = writeln!(out, "{:06}: {:#018x}", self.origin.0 + i as u64, w);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("operand out of range: {0}")]
    OutOfRange(String),
    #[error("`.org` moves backwards to {0}")]
    BackwardOrg(u64),
    #[error("cyclic `.equ` involving `{0}`")]
    CyclicEqu(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("source {source_index}, line {line}: {kind}")]
pub struct AsmError {
    pub source_index: usize,
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone)]
struct Expr(Vec<(i128, Term)>);

#[derive(Debug, Clone)]
enum Term {
    Num(i128),
    Sym(String),
}

#[derive(Debug, Clone)]
enum Item {
    Insn {
        op: Opcode,
        regs: Vec<u8>,
        imm: Option<Expr>,
    },
    Words(Vec<Expr>),
    Observe(Vec<Expr>),
}

#[derive(Debug, Clone)]
enum Symbol {
    Addr(u64),
    Equ(Expr, usize, usize),
}

struct Placed {
    addr: u64,
    item: Item,
    line: usize,
}

struct Segment {
    origin: Option<u64>,
    cursor: u64,
    placed: Vec<Placed>,
    labels: BTreeMap<String, Address>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_number(s: &str) -> Option<i128> {
    let s = s.replace('_', "");
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest.to_string()),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i128::from_str_radix(hex, 16).ok()?
    } else if body.chars().all(|c| c.is_ascii_digit()) && !body.is_empty() {
        body.parse().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

fn parse_expr(s: &str) -> Result<Expr, AsmErrorKind> {
    let s = s.trim();
    if s.is_empty() {
        return Err(AsmErrorKind::Syntax("empty expression".into()));
    }
    let mut terms = Vec::new();
    let mut sign = 1i128;
    let mut current = String::new();
    let flush = |cur: &mut String, sign: i128, terms: &mut Vec<(i128, Term)>| {
        let t = cur.trim().to_string();
        cur.clear();
        if t.is_empty() {
            return Err(AsmErrorKind::Syntax("dangling operator".into()));
        }
        let term = if let Some(n) = parse_number(&t) {
            Term::Num(n)
        } else if is_ident(&t) {
            Term::Sym(t)
        } else {
            return Err(AsmErrorKind::Syntax(format!("bad term `{t}`")));
        };
        terms.push((sign, term));
        Ok(())
    };
    for c in s.chars() {
        if (c == '+' || c == '-') && !current.trim().is_empty() {
            flush(&mut current, sign, &mut terms)?;
            sign = if c == '+' { 1 } else { -1 };
        } else {
            current.push(c);
        }
    }
    flush(&mut current, sign, &mut terms)?;
    Ok(Expr(terms))
}

fn parse_reg(s: &str) -> Option<u8> {
    let s = s.trim().to_ascii_lowercase();
    if s == "sp" {
        return Some(15);
    }
    let n: u8 = s.strip_prefix('r')?.parse().ok()?;
    (n < 16).then_some(n)
}

fn split_operands(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        Vec::new()
    } else {
        s.split(',').map(|x| x.trim().to_string()).collect()
    }
}

fn parse_insn(op: Opcode, rest: &str) -> Result<Item, AsmErrorKind> {
    let ops = split_operands(rest);
    let layout = op.operands();
    let required = layout.iter().filter(|k| **k != Operand::OptImm).count();
    if ops.len() < required || ops.len() > layout.len() {
        return Err(AsmErrorKind::Syntax(format!(
            "{op} takes {} operand(s), got {}",
            layout.len(),
            ops.len()
        )));
    }
    let mut regs = Vec::new();
    let mut imm = None;
    for (kind, text) in layout.iter().zip(&ops) {
        match kind {
            Operand::Reg => regs.push(
                parse_reg(text)
                    .ok_or_else(|| AsmErrorKind::Syntax(format!("expected register, got `{text}`")))?,
            ),
            Operand::Imm | Operand::OptImm => imm = Some(parse_expr(text)?),
        }
    }
    Ok(Item::Insn { op, regs, imm })
}

struct Assembler {
    symbols: HashMap<String, Symbol>,
    segments: Vec<Segment>,
}

impl Assembler {
    fn define(&mut self, name: &str, sym: Symbol, seg: usize, line: usize) -> Result<(), AsmError> {
        if !is_ident(name) {
            return Err(AsmError {
                source_index: seg,
                line,
                kind: AsmErrorKind::Syntax(format!("bad label `{name}`")),
            });
        }
        if self.symbols.contains_key(name) {
            return Err(AsmError {
                source_index: seg,
                line,
                kind: AsmErrorKind::DuplicateLabel(name.to_string()),
            });
        }
        if let Symbol::Addr(a) = sym {
            self.segments[seg].labels.insert(name.to_string(), Address(a));
        }
        self.symbols.insert(name.to_string(), sym);
        Ok(())
    }

    fn layout(&mut self, seg: usize, source: &str, start: u64) -> Result<(), AsmError> {
        let err = |line, kind| AsmError {
            source_index: seg,
            line,
            kind,
        };
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let mut text = raw.split(';').next().unwrap_or("").trim();
            // leading `name:` labels
            while let Some(pos) = text.find(':') {
                let name = text[..pos].trim();
                if !is_ident(name) || name.starts_with('.') {
                    break;
                }
                let addr = self.segments[seg].cursor_or(start);
                self.define(name, Symbol::Addr(addr), seg, line)?;
                text = text[pos + 1..].trim();
            }
            if text.is_empty() {
                continue;
            }
            let (head, rest) = match text.find(char::is_whitespace) {
                Some(p) => (&text[..p], text[p..].trim()),
                None => (text, ""),
            };
            let cursor = self.segments[seg].cursor_or(start);
            let const_eval = |s: &str| -> Result<u64, AsmErrorKind> {
                let e = parse_expr(s)?;
                let mut v = 0i128;
                for (sign, t) in e.0 {
                    match t {
                        Term::Num(n) => v += sign * n,
                        Term::Sym(s) => {
                            return Err(AsmErrorKind::Syntax(format!(
                                "`{s}`: directive needs a constant"
                            )))
                        }
                    }
                }
                u64::try_from(v).map_err(|_| AsmErrorKind::OutOfRange(s.to_string()))
            };
            match head.to_ascii_lowercase().as_str() {
                ".org" => {
                    let target = const_eval(rest).map_err(|k| err(line, k))?;
                    let s = &mut self.segments[seg];
                    match s.origin {
                        None => {
                            s.origin = Some(target);
                            s.cursor = target;
                        }
                        Some(_) if target >= s.cursor => s.cursor = target,
                        Some(_) => return Err(err(line, AsmErrorKind::BackwardOrg(target))),
                    }
                }
                ".align" => {
                    let n = const_eval(rest).map_err(|k| err(line, k))?.max(1);
                    let s = &mut self.segments[seg];
                    let c = s.cursor_or(start);
                    s.origin.get_or_insert(c);
                    s.cursor = c.div_ceil(n) * n;
                }
                ".space" => {
                    let n = const_eval(rest).map_err(|k| err(line, k))?;
                    let s = &mut self.segments[seg];
                    let c = s.cursor_or(start);
                    s.origin.get_or_insert(c);
                    s.cursor = c + n;
                }
                ".label" => {
                    self.define(rest.trim(), Symbol::Addr(cursor), seg, line)?;
                }
                ".equ" => {
                    let (name, e) = rest.split_once(',').ok_or_else(|| {
                        err(line, AsmErrorKind::Syntax(".equ name, expr".into()))
                    })?;
                    let e = parse_expr(e).map_err(|k| err(line, k))?;
                    self.define(name.trim(), Symbol::Equ(e, seg, line), seg, line)?;
                }
                ".word" => {
                    let exprs = split_operands(rest)
                        .iter()
                        .map(|s| parse_expr(s))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|k| err(line, k))?;
                    if exprs.is_empty() {
                        return Err(err(line, AsmErrorKind::Syntax(".word needs a value".into())));
                    }
                    self.place(seg, start, Item::Words(exprs), line);
                }
                ".observe" => {
                    let exprs = split_operands(rest)
                        .iter()
                        .map(|s| parse_expr(s))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|k| err(line, k))?;
                    let s = &mut self.segments[seg];
                    s.placed.push(Placed {
                        addr: cursor,
                        item: Item::Observe(exprs),
                        line,
                    });
                }
                other if other.starts_with('.') => {
                    return Err(err(line, AsmErrorKind::Syntax(format!("unknown directive `{head}`"))))
                }
                _ => {
                    let op = Opcode::from_mnemonic(head).ok_or_else(|| {
                        err(line, AsmErrorKind::Syntax(format!("unknown mnemonic `{head}`")))
                    })?;
                    let item = parse_insn(op, rest).map_err(|k| err(line, k))?;
                    self.place(seg, start, item, line);
                }
            }
        }
        Ok(())
    }

    fn place(&mut self, seg: usize, start: u64, item: Item, line: usize) {
        let s = &mut self.segments[seg];
        let addr = s.cursor_or(start);
        s.origin.get_or_insert(addr);
        s.cursor = addr
            + match &item {
                Item::Words(v) => v.len() as u64,
                Item::Insn { .. } => 1,
                Item::Observe(_) => 0,
            };
        s.placed.push(Placed { addr, item, line });
    }

    fn resolve(&self, name: &str, seg: usize, line: usize, depth: usize) -> Result<i128, AsmError> {
        if depth > 64 {
            return Err(AsmError {
                source_index: seg,
                line,
                kind: AsmErrorKind::CyclicEqu(name.to_string()),
            });
        }
        match self.symbols.get(name) {
            Some(Symbol::Addr(a)) => Ok(*a as i128),
            Some(Symbol::Equ(e, s, l)) => self.eval(e, *s, *l, depth + 1),
            None => Err(AsmError {
                source_index: seg,
                line,
                kind: AsmErrorKind::UnresolvedLabel(name.to_string()),
            }),
        }
    }

    fn eval(&self, e: &Expr, seg: usize, line: usize, depth: usize) -> Result<i128, AsmError> {
        let mut v = 0i128;
        for (sign, t) in &e.0 {
            v += sign
                * match t {
                    Term::Num(n) => *n,
                    Term::Sym(s) => self.resolve(s, seg, line, depth)?,
                };
        }
        Ok(v)
    }

    fn emit(&self, seg: usize) -> Result<Program, AsmError> {
        let s = &self.segments[seg];
        let origin = s.origin.unwrap_or(s.cursor);
        let mut words = vec![0; (s.cursor - origin) as usize];
        let mut observe = Vec::new();
        let range_err = |line, what: String| AsmError {
            source_index: seg,
            line,
            kind: AsmErrorKind::OutOfRange(what),
        };
        for p in &s.placed {
            let at = (p.addr - origin) as usize;
            match &p.item {
                Item::Insn { op, regs, imm } => {
                    let imm = match imm {
                        Some(e) => {
                            let v = self.eval(e, seg, p.line, 0)?;
                            i32::try_from(v)
                                .map_err(|_| range_err(p.line, format!("immediate {v}")))?
                        }
                        None => 0,
                    };
                    let r = |i: usize| regs.get(i).copied().unwrap_or(0);
                    words[at] = Instruction::new(*op).regs(r(0), r(1), r(2)).imm(imm).encode();
                }
                Item::Words(exprs) => {
                    for (i, e) in exprs.iter().enumerate() {
                        let v = self.eval(e, seg, p.line, 0)?;
                        if v < i64::MIN as i128 || v > u64::MAX as i128 {
                            return Err(range_err(p.line, format!("word {v}")));
                        }
                        words[at + i] = v as u64;
                    }
                }
                Item::Observe(exprs) => {
                    for e in exprs {
                        let v = self.eval(e, seg, p.line, 0)?;
                        let a = u64::try_from(v)
                            .map_err(|_| range_err(p.line, format!("address {v}")))?;
                        observe.push(Address(a));
                    }
                }
            }
        }
        Ok(Program {
            origin: Address(origin),
            words,
            labels: s.labels.clone(),
            observe,
        })
    }
}

impl Segment {
    fn cursor_or(&self, start: u64) -> u64 {
        if self.origin.is_some() {
            self.cursor
        } else {
            start
        }
    }
}

/// Assembles several sources with a shared symbol table; one program per source.
pub fn assemble_all(sources: &[&str]) -> Result<Vec<Program>, AsmError> {
    let mut asm = Assembler {
        symbols: HashMap::new(),
        segments: Vec::new(),
    };
    let mut next_start = DEFAULT_ORIGIN;
    for (i, src) in sources.iter().enumerate() {
        asm.segments.push(Segment {
            origin: None,
            cursor: next_start,
            placed: Vec::new(),
            labels: BTreeMap::new(),
        });
        asm.layout(i, src, next_start)?;
        let s = &asm.segments[i];
        let end = s.origin.map_or(next_start, |_| s.cursor);
        next_start = end.div_ceil(SEGMENT_ALIGN) * SEGMENT_ALIGN;
    }
    (0..sources.len()).map(|i| asm.emit(i)).collect()
}

pub fn assemble(source: &str) -> Result<Program, AsmError> {
    Ok(assemble_all(&[source])?.remove(0))
}

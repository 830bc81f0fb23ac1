//! Line-oriented policy documents. See `docs/policy-format.md` for the
//! grammar. Parsing never panics; every rejection carries a line/column.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::codec::Fixed;

use super::{
    ActionKind, ActionParam, ActionTemplate, CmpOp, Expr, Limits, Operand, Policy, Predicate, RateLimit, Trigger,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParseCode {
    SyntaxError,
    UnboundedAction,
    UnknownPredicate,
    ExpiryMissing,
}

impl fmt::Display for ParseCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseCode::SyntaxError => "SYNTAX_ERROR",
            ParseCode::UnboundedAction => "UNBOUNDED_ACTION",
            ParseCode::UnknownPredicate => "UNKNOWN_PREDICATE",
            ParseCode::ExpiryMissing => "EXPIRY_MISSING",
        })
    }
}

/// 1-based line and column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: ParseCode,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.line, self.col, self.code, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Num(Fixed),
    Cmp(CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Assign,
    Star,
}

struct Lexed {
    toks: Vec<(usize, Tok)>,
    end_col: usize,
}

fn lex(line: &str, line_no: usize) -> Result<Lexed, Diagnostic> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |col: usize, message: String| Diagnostic {
        code: ParseCode::SyntaxError,
        line: line_no,
        col,
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let (tok, len) = match (c, two.as_str()) {
            (_, "<=") => (Tok::Cmp(CmpOp::Le), 2),
            (_, ">=") => (Tok::Cmp(CmpOp::Ge), 2),
            (_, "==") => (Tok::Cmp(CmpOp::Eq), 2),
            (_, "!=") => (Tok::Cmp(CmpOp::Ne), 2),
            ('<', _) => (Tok::Cmp(CmpOp::Lt), 1),
            ('>', _) => (Tok::Cmp(CmpOp::Gt), 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            ('[', _) => (Tok::LBracket, 1),
            (']', _) => (Tok::RBracket, 1),
            (',', _) => (Tok::Comma, 1),
            ('=', _) => (Tok::Assign, 1),
            ('*', _) => (Tok::Star, 1),
            _ if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let n: Fixed = text
                    .parse()
                    .map_err(|_| err(col, format!("invalid number {text:?}")))?;
                (Tok::Num(n), j - i)
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || matches!(chars[j], '_' | '-' | '.')) {
                    j += 1;
                }
                (Tok::Word(chars[i..j].iter().collect()), j - i)
            }
            _ => return Err(err(col, format!("unexpected character {c:?}"))),
        };
        toks.push((col, tok));
        i += len;
    }
    Ok(Lexed {
        toks,
        end_col: chars.len() + 1,
    })
}

struct Cursor<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    end_col: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(c, _)| *c)
    }

    fn error(&self, code: ParseCode, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            code,
            line: self.line,
            col: self.col(),
            message: message.into(),
        }
    }

    fn syntax(&self, message: impl Into<String>) -> Diagnostic {
        self.error(ParseCode::SyntaxError, message)
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), Diagnostic> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(format!("expected {what}")))
        }
    }

    fn word(&mut self, what: &str) -> Result<&'a str, Diagnostic> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.syntax(format!("expected {what}"))),
        }
    }

    fn number(&mut self, what: &str) -> Result<Fixed, Diagnostic> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(*n)
            }
            _ => Err(self.syntax(format!("expected {what}"))),
        }
    }

    fn integer(&mut self, what: &str) -> Result<u64, Diagnostic> {
        let col = self.col();
        let n = self.number(what)?;
        if n.is_negative() || n.raw() % crate::codec::SCALE != 0 {
            return Err(Diagnostic {
                code: ParseCode::SyntaxError,
                line: self.line,
                col,
                message: format!("{what} must be a non-negative integer"),
            });
        }
        Ok((n.raw() / crate::codec::SCALE) as u64)
    }

    fn finish(&self) -> Result<(), Diagnostic> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.syntax("unexpected trailing input")),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, Diagnostic> {
        let col = self.col();
        let name = self.word("predicate")?;
        Predicate::parse(name).ok_or_else(|| Diagnostic {
            code: ParseCode::UnknownPredicate,
            line: self.line,
            col,
            message: format!("unknown predicate {name:?}"),
        })
    }

    fn operand(&mut self) -> Result<Operand, Diagnostic> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Operand::Literal(*n))
            }
            Some(Tok::Word(_)) => {
                let p = self.predicate()?;
                if self.peek() == Some(&Tok::Star) {
                    self.pos += 1;
                    let k = self.number("scale factor")?;
                    Ok(Operand::Scaled(p, k))
                } else {
                    Ok(Operand::Predicate(p))
                }
            }
            _ => Err(self.syntax("expected number or predicate")),
        }
    }

    fn expr(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.conj()?;
        while self.peek() == Some(&Tok::Word("or".into())) {
            self.pos += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.conj()?));
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Word("and".into())) {
            self.pos += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, Diagnostic> {
        match self.peek() {
            Some(Tok::Word(w)) if w == "not" => {
                self.pos += 1;
                Ok(Expr::Not(Box::new(self.unary()?)))
            }
            Some(Tok::Word(w)) if w == "true" => {
                self.pos += 1;
                Ok(Expr::True)
            }
            Some(Tok::Word(w)) if w == "false" => {
                self.pos += 1;
                Ok(Expr::False)
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            _ => {
                let lhs = self.operand()?;
                let op = match self.peek() {
                    Some(Tok::Cmp(op)) => *op,
                    _ => return Err(self.syntax("expected comparison operator")),
                };
                self.pos += 1;
                let rhs = self.operand()?;
                Ok(Expr::Cmp(lhs, op, rhs))
            }
        }
    }

    /// `key=value` pairs with numeric values, until end of line.
    fn params(&mut self) -> Result<BTreeMap<String, Fixed>, Diagnostic> {
        let mut out = BTreeMap::new();
        while self.peek().is_some() {
            let key = self.word("parameter name")?;
            self.expect(&Tok::Assign, "'='")?;
            let v = self.number("numeric value")?;
            if out.insert(key.to_string(), v).is_some() {
                return Err(self.syntax(format!("duplicate parameter {key:?}")));
            }
        }
        Ok(out)
    }
}

fn trigger(cur: &mut Cursor<'_>) -> Result<Trigger, Diagnostic> {
    let kind = cur.word("trigger kind")?;
    let kind_col = cur.toks[cur.pos - 1].0;
    let params = cur.params()?;
    let allowed: &[&str] = match kind {
        "time-elapsed" => &["every"],
        "drift-exceeds" => &["threshold"],
        "proposal-submitted" | "attestation-changed" => &["min"],
        _ => {
            return Err(Diagnostic {
                code: ParseCode::SyntaxError,
                line: cur.line,
                col: kind_col,
                message: format!("unknown trigger kind {kind:?}"),
            })
        }
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Diagnostic {
            code: ParseCode::SyntaxError,
            line: cur.line,
            col: kind_col,
            message: format!("trigger {kind} does not take {k:?}"),
        });
    }
    let count = |key: &str, default: u64| -> Result<u64, Diagnostic> {
        match params.get(key) {
            None => Ok(default),
            Some(v) if !v.is_negative() && v.raw() % crate::codec::SCALE == 0 && !v.is_zero() => {
                Ok((v.raw() / crate::codec::SCALE) as u64)
            }
            Some(_) => Err(Diagnostic {
                code: ParseCode::SyntaxError,
                line: cur.line,
                col: kind_col,
                message: format!("{key} must be a positive integer"),
            }),
        }
    };
    Ok(match kind {
        "time-elapsed" => Trigger::TimeElapsed { every: count("every", 1)? },
        "drift-exceeds" => Trigger::DriftExceeds {
            threshold: *params.get("threshold").ok_or_else(|| Diagnostic {
                code: ParseCode::SyntaxError,
                line: cur.line,
                col: kind_col,
                message: "drift-exceeds needs threshold=".into(),
            })?,
        },
        "proposal-submitted" => Trigger::ProposalSubmitted { min: count("min", 1)? },
        _ => Trigger::AttestationChanged { min: count("min", 1)? },
    })
}

fn action(cur: &mut Cursor<'_>) -> Result<ActionTemplate, Diagnostic> {
    let kind_col = cur.col();
    let name = cur.word("action kind")?;
    let kind = ActionKind::parse(name).ok_or_else(|| Diagnostic {
        code: ParseCode::SyntaxError,
        line: cur.line,
        col: kind_col,
        message: format!("unknown action kind {name:?}"),
    })?;
    let mut params = BTreeMap::new();
    while cur.peek().is_some() {
        let param_col = cur.col();
        let pname = cur.word("parameter name")?;
        cur.expect(&Tok::Assign, "'='")?;
        let operand = cur.operand()?;
        if cur.peek() != Some(&Tok::Word("in".into())) {
            return Err(Diagnostic {
                code: ParseCode::UnboundedAction,
                line: cur.line,
                col: param_col,
                message: format!("parameter {pname:?} of {name} has no `in [lo, hi]` bound"),
            });
        }
        cur.pos += 1;
        cur.expect(&Tok::LBracket, "'['")?;
        let lo = cur.number("lower bound")?;
        cur.expect(&Tok::Comma, "','")?;
        let hi = cur.number("upper bound")?;
        cur.expect(&Tok::RBracket, "']'")?;
        if lo > hi {
            return Err(Diagnostic {
                code: ParseCode::SyntaxError,
                line: cur.line,
                col: param_col,
                message: "lower bound exceeds upper bound".into(),
            });
        }
        if kind == ActionKind::Rebalance && pname == "max_move" && lo.is_negative() {
            return Err(Diagnostic {
                code: ParseCode::SyntaxError,
                line: cur.line,
                col: param_col,
                message: "max_move cannot be bounded below zero".into(),
            });
        }
        if params
            .insert(pname.to_string(), ActionParam { operand, lo, hi })
            .is_some()
        {
            return Err(Diagnostic {
                code: ParseCode::SyntaxError,
                line: cur.line,
                col: param_col,
                message: format!("duplicate parameter {pname:?}"),
            });
        }
    }
    if params.is_empty() {
        return Err(Diagnostic {
            code: ParseCode::UnboundedAction,
            line: cur.line,
            col: kind_col,
            message: format!("action {name} declares no bounded parameter"),
        });
    }
    if kind == ActionKind::Rebalance && !params.contains_key("max_move") {
        return Err(Diagnostic {
            code: ParseCode::UnboundedAction,
            line: cur.line,
            col: kind_col,
            message: "rebalance needs a bounded max_move".into(),
        });
    }
    Ok(ActionTemplate { kind, params })
}

#[derive(Default)]
struct Draft {
    id: Option<String>,
    version: Option<u32>,
    expiry: Option<u64>,
    triggers: Vec<Trigger>,
    condition: Option<Expr>,
    actions: Vec<ActionTemplate>,
    limits: Limits,
    exceptions: BTreeSet<String>,
    timelock: Option<u64>,
}

pub const EXCEPTIONS: &[&str] = &["missing-data", "clipped", "infeasible"];

fn statement(draft: &mut Draft, cur: &mut Cursor<'_>) -> Result<(), Diagnostic> {
    let kw_col = cur.col();
    let kw = cur.word("keyword")?;
    let dup = |what: &str| Diagnostic {
        code: ParseCode::SyntaxError,
        line: cur.line,
        col: kw_col,
        message: format!("duplicate {what}"),
    };
    match kw {
        "policy" => {
            if draft.id.is_some() {
                return Err(dup("policy id"));
            }
            draft.id = Some(cur.word("policy id")?.to_string());
        }
        "version" => {
            if draft.version.is_some() {
                return Err(dup("version"));
            }
            let v = cur.integer("version")?;
            draft.version = Some(u32::try_from(v).map_err(|_| cur.syntax("version too large"))?);
        }
        "expiry" => {
            if draft.expiry.is_some() {
                return Err(dup("expiry"));
            }
            draft.expiry = Some(cur.integer("expiry epoch")?);
        }
        "timelock" => {
            if draft.timelock.is_some() {
                return Err(dup("timelock"));
            }
            draft.timelock = Some(cur.integer("timelock epochs")?);
        }
        "trigger" => draft.triggers.push(trigger(cur)?),
        "condition" => {
            if draft.condition.is_some() {
                return Err(dup("condition"));
            }
            draft.condition = Some(cur.expr()?);
        }
        "action" => draft.actions.push(action(cur)?),
        "limit" => {
            let which = cur.word("limit kind")?;
            match which {
                "per-action" => draft.limits.per_action = Some(cur.number("cap")?),
                "per-epoch" => draft.limits.per_epoch = Some(cur.number("cap")?),
                "rate" => {
                    let max = cur.integer("plan count")?;
                    let window = if cur.peek() == Some(&Tok::Word("per".into())) {
                        cur.pos += 1;
                        cur.integer("window epochs")?
                    } else {
                        1
                    };
                    if window == 0 {
                        return Err(cur.syntax("rate window must be positive"));
                    }
                    draft.limits.rate = Some(RateLimit {
                        max_plans: max,
                        window,
                    });
                }
                other => return Err(cur.syntax(format!("unknown limit {other:?}"))),
            }
        }
        "exception" => {
            let verb = cur.word("`escalate`")?;
            if verb != "escalate" {
                return Err(cur.syntax("only `escalate` exceptions are supported"));
            }
            let when = cur.word("exception condition")?;
            if !EXCEPTIONS.contains(&when) {
                return Err(cur.syntax(format!("unknown exception condition {when:?}")));
            }
            draft.exceptions.insert(when.to_string());
        }
        other => {
            return Err(Diagnostic {
                code: ParseCode::SyntaxError,
                line: cur.line,
                col: kw_col,
                message: format!("unknown keyword {other:?}"),
            })
        }
    }
    cur.finish()
}

/// Parses a policy document, collecting one diagnostic per bad line.
pub fn parse_policy(source: &[u8]) -> Result<Policy, Vec<Diagnostic>> {
    let text = match std::str::from_utf8(source) {
        Ok(t) => t,
        Err(e) => {
            let upto = &source[..e.valid_up_to()];
            let line = upto.iter().filter(|b| **b == b'\n').count() + 1;
            let col = upto.iter().rev().take_while(|b| **b != b'\n').count() + 1;
            return Err(vec![Diagnostic {
                code: ParseCode::SyntaxError,
                line,
                col,
                message: "document is not valid UTF-8".into(),
            }]);
        }
    };
    let mut draft = Draft::default();
    let mut diags = Vec::new();
    // Keywords of lines that failed; their absence is not reported again.
    let mut failed = BTreeSet::new();
    let mut last_line = 1;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let lexed = match lex(line, line_no) {
            Ok(l) => l,
            Err(d) => {
                diags.push(d);
                continue;
            }
        };
        if lexed.toks.is_empty() {
            continue;
        }
        let mut cur = Cursor {
            toks: &lexed.toks,
            pos: 0,
            end_col: lexed.end_col,
            line: line_no,
        };
        if let Err(d) = statement(&mut draft, &mut cur) {
            if let Some((_, Tok::Word(kw))) = lexed.toks.first() {
                failed.insert(kw.clone());
            }
            diags.push(d);
        }
    }
    let end = last_line + 1;
    let missing = |what: &str, code| Diagnostic {
        code,
        line: end,
        col: 1,
        message: format!("missing {what}"),
    };
    if draft.id.is_none() && !failed.contains("policy") {
        diags.push(missing("`policy <id>` line", ParseCode::SyntaxError));
    }
    if draft.expiry.is_none() && !failed.contains("expiry") {
        diags.push(missing("`expiry <epoch>` line", ParseCode::ExpiryMissing));
    }
    if draft.triggers.is_empty() && !failed.contains("trigger") {
        diags.push(missing("trigger", ParseCode::SyntaxError));
    }
    if draft.actions.is_empty() && !failed.contains("action") {
        diags.push(missing("action", ParseCode::SyntaxError));
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(Policy {
        id: draft.id.unwrap_or_default(),
        version: draft.version.unwrap_or(1),
        expiry: draft.expiry.unwrap_or_default(),
        triggers: draft.triggers,
        condition: draft.condition.unwrap_or(Expr::True),
        actions: draft.actions,
        limits: draft.limits,
        exceptions: draft.exceptions,
        timelock: draft.timelock.unwrap_or(1),
        source: text.to_string(),
    })
}

//! A stand-in guest runner for tests and offline simulation.
//!
//! It speaks the same wire protocol as the real guest but interprets a tiny
//! Python-flavoured language instead of Python:
//!
//! * `name = expr`, expression statements, `import …` / `from … import …`
//!   (no-ops), `pass`, `raise [expr]`
//! * statements separated by newlines or `;`, `#` comments
//! * ints, floats, strings, lists, `+ - * / // %`, parentheses
//! * builtins: `print`, `str`, `int`, `float`, `len`, `time.sleep` / `sleep`,
//!   `listdir` / `os.listdir`, `save_artifact(name, content)`, `savefig()`
//!
//! Any dotted name listed in `TOOLLOOP_DISABLED_APIS` raises
//! `DisabledApiError` when called.
//!
//! Fault-injection switches make it useful for protocol tests: stalling on
//! every exec, advertising another protocol version, answering with the wrong
//! id, or padding responses with unknown fields.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde_json::Value as Json;

use crate::sandbox::protocol::{encode, Handshake, Response, WireStatus, PROTOCOL_VERSION};

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// Never answer exec requests.
    pub stall: bool,
    /// Protocol version announced in the handshake.
    pub proto: Option<u32>,
    /// Append a suffix to every echoed id.
    pub wrong_id: bool,
    /// Add fields the host does not know about.
    pub extra_fields: bool,
    /// Omit `new_names` from responses.
    pub no_deltas: bool,
    pub disabled: Vec<String>,
    pub workdir: PathBuf,
}

impl MockOptions {
    /// Reads `--stall`, `--proto N`, `--wrong-id`, `--extra-fields`,
    /// `--no-deltas` plus the disabled-API list from the environment.
    pub fn from_args<I: IntoIterator<Item = String>>(args: I) -> Result<Self, String> {
        let mut opts = MockOptions {
            disabled: std::env::var("TOOLLOOP_DISABLED_APIS")
                .map(|s| {
                    s.split(',')
                        .filter(|x| !x.is_empty())
                        .map(String::from)
                        .collect()
                })
                .unwrap_or_default(),
            workdir: std::env::current_dir().map_err(|e| e.to_string())?,
            ..Default::default()
        };
        let mut it = args.into_iter();
        while let Some(a) = it.next() {
            match a.as_str() {
                "--stall" => opts.stall = true,
                "--wrong-id" => opts.wrong_id = true,
                "--extra-fields" => opts.extra_fields = true,
                "--no-deltas" => opts.no_deltas = true,
                "--proto" => {
                    let v = it.next().ok_or("--proto needs a value")?;
                    opts.proto = Some(v.parse().map_err(|_| format!("bad --proto {v}"))?);
                }
                other => return Err(format!("unknown mock guest flag {other}")),
            }
        }
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    None,
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
}

impl Value {
    fn repr(&self) -> String {
        match self {
            Value::Str(s) => format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")),
            other => other.to_string(),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::List(_) => "list",
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(i) => Some(i as f64),
            Value::Float(f) => Some(f),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::None => f.write_str("None"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e16 => {
                write!(f, "{x:.1}")
            }
            Value::Float(x) => write!(f, "{x}"),
            Value::Str(s) => f.write_str(s),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(&v.repr())?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyError {
    pub kind: &'static str,
    pub message: String,
}

impl PyError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        PyError {
            kind,
            message: message.into(),
        }
    }
}

type PyResult<T> = Result<T, PyError>;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Value),
    Str(String),
    Name(String),
    Op(&'static str),
}

fn lex(src: &str) -> PyResult<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == '_')
            {
                i += 1;
            }
            let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
            let v = if text.contains('.') {
                Value::Float(
                    text.parse()
                        .map_err(|_| PyError::new("SyntaxError", "invalid number"))?,
                )
            } else {
                Value::Int(
                    text.parse()
                        .map_err(|_| PyError::new("SyntaxError", "invalid number"))?,
                )
            };
            toks.push(Tok::Num(v));
        } else if c == '"' || c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(PyError::new("SyntaxError", "unterminated string literal")),
                    Some(&q) if q == c => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars
                            .get(i + 1)
                            .ok_or_else(|| PyError::new("SyntaxError", "bad escape"))?;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => *other,
                        });
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            toks.push(Tok::Str(s));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            toks.push(Tok::Name(chars[start..i].iter().collect()));
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op = match two.as_str() {
                "//" => Some("//"),
                "==" => Some("=="),
                _ => None,
            };
            if let Some(op) = op {
                toks.push(Tok::Op(op));
                i += 2;
                continue;
            }
            let op = match c {
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '/' => "/",
                '%' => "%",
                '(' => "(",
                ')' => ")",
                '[' => "[",
                ']' => "]",
                ',' => ",",
                '.' => ".",
                '=' => "=",
                _ => {
                    return Err(PyError::new(
                        "SyntaxError",
                        format!("invalid character '{c}'"),
                    ))
                }
            };
            toks.push(Tok::Op(op));
            i += 1;
        }
    }
    Ok(toks)
}

/// Splits a snippet into `(line_number, statement)` pairs, dropping comments
/// and blank statements.
fn split_statements(snippet: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (lineno, line) in snippet.lines().enumerate() {
        let mut cur = String::new();
        let mut quote: Option<char> = None;
        let mut chars = line.chars();
        while let Some(c) = chars.next() {
            match quote {
                Some(q) => {
                    cur.push(c);
                    if c == '\\' {
                        if let Some(n) = chars.next() {
                            cur.push(n);
                        }
                    } else if c == q {
                        quote = None;
                    }
                }
                None => match c {
                    '#' => break,
                    ';' => out.push((lineno + 1, std::mem::take(&mut cur))),
                    '"' | '\'' => {
                        quote = Some(c);
                        cur.push(c);
                    }
                    _ => cur.push(c),
                },
            }
        }
        out.push((lineno + 1, cur));
    }
    out.into_iter()
        .filter(|(_, s)| !s.trim().is_empty())
        .collect()
}

pub struct Interpreter {
    namespace: BTreeMap<String, Value>,
    disabled: BTreeSet<String>,
    workdir: PathBuf,
    artifact_counter: u32,
    stdout: String,
    artifacts: Vec<String>,
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> PyResult<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(PyError::new("SyntaxError", format!("expected '{op}'")))
        }
    }
}

impl Interpreter {
    pub fn new(disabled: Vec<String>, workdir: PathBuf) -> Self {
        Interpreter {
            namespace: BTreeMap::new(),
            disabled: disabled.into_iter().collect(),
            workdir,
            artifact_counter: 0,
            stdout: String::new(),
            artifacts: Vec::new(),
        }
    }

    /// Drops every binding. The artifact counter keeps counting.
    pub fn reset(&mut self) {
        self.namespace.clear();
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.namespace.get(name)
    }

    /// Runs a snippet. Statements before a failing one keep their effects,
    /// like Python; the host is responsible for reverting.
    pub fn exec(&mut self, snippet: &str) -> ExecOutcome {
        self.stdout.clear();
        self.artifacts.clear();
        let before: BTreeSet<String> = self.namespace.keys().cloned().collect();
        let mut error = None;
        for (lineno, stmt) in split_statements(snippet) {
            if let Err(e) = self.exec_statement(stmt.trim()) {
                error = Some((lineno, e));
                break;
            }
        }
        let new_names = self
            .namespace
            .keys()
            .filter(|k| !before.contains(*k))
            .cloned()
            .collect();
        ExecOutcome {
            stdout: std::mem::take(&mut self.stdout),
            stderr: error
                .map(|(line, e)| {
                    format!(
                        "Traceback (most recent call last):\n  File \"<snippet>\", line {line}, in <module>\n{}: {}\n",
                        e.kind, e.message
                    )
                })
                .unwrap_or_default(),
            artifacts: std::mem::take(&mut self.artifacts),
            new_names,
        }
    }

    fn exec_statement(&mut self, stmt: &str) -> PyResult<()> {
        let first_word = stmt.split_whitespace().next().unwrap_or("");
        match first_word {
            "import" | "from" | "pass" => return Ok(()),
            "raise" => {
                let rest = stmt["raise".len()..].trim();
                let (kind, msg) = if rest.is_empty() {
                    ("RuntimeError", "No active exception to reraise".to_string())
                } else {
                    ("Exception", rest.to_string())
                };
                return Err(PyError::new(kind, msg));
            }
            "if" | "for" | "while" | "def" | "class" | "with" | "try" | "else:" | "elif" => {
                return Err(PyError::new(
                    "SyntaxError",
                    "compound statements are not supported by the mock guest",
                ))
            }
            _ => {}
        }
        let toks = lex(stmt)?;
        // Assignment: NAME '=' expr
        if let [Tok::Name(name), Tok::Op("="), rest @ ..] = toks.as_slice() {
            let value = self.eval_all(rest)?;
            self.namespace.insert(name.clone(), value);
            return Ok(());
        }
        self.eval_all(&toks)?;
        Ok(())
    }

    fn eval_all(&mut self, toks: &[Tok]) -> PyResult<Value> {
        let mut p = Parser { toks, pos: 0 };
        let v = self.expr(&mut p)?;
        if p.pos != toks.len() {
            return Err(PyError::new("SyntaxError", "invalid syntax"));
        }
        Ok(v)
    }

    fn expr(&mut self, p: &mut Parser) -> PyResult<Value> {
        let mut lhs = self.term(p)?;
        loop {
            let op = if p.eat_op("+") {
                "+"
            } else if p.eat_op("-") {
                "-"
            } else {
                return Ok(lhs);
            };
            let rhs = self.term(p)?;
            lhs = binary(op, lhs, rhs)?;
        }
    }

    fn term(&mut self, p: &mut Parser) -> PyResult<Value> {
        let mut lhs = self.unary(p)?;
        loop {
            let op = ["*", "//", "/", "%"].into_iter().find(|op| p.eat_op(op));
            let Some(op) = op else { return Ok(lhs) };
            let rhs = self.unary(p)?;
            lhs = binary(op, lhs, rhs)?;
        }
    }

    fn unary(&mut self, p: &mut Parser) -> PyResult<Value> {
        if p.eat_op("-") {
            return match self.unary(p)? {
                Value::Int(i) => Ok(Value::Int(-i)),
                Value::Float(f) => Ok(Value::Float(-f)),
                v => Err(PyError::new(
                    "TypeError",
                    format!("bad operand type for unary -: '{}'", v.type_name()),
                )),
            };
        }
        self.primary(p)
    }

    fn primary(&mut self, p: &mut Parser) -> PyResult<Value> {
        match p.peek().cloned() {
            Some(Tok::Num(v)) => {
                p.pos += 1;
                Ok(v)
            }
            Some(Tok::Str(s)) => {
                p.pos += 1;
                Ok(Value::Str(s))
            }
            Some(Tok::Op("(")) => {
                p.pos += 1;
                let v = self.expr(p)?;
                p.expect_op(")")?;
                Ok(v)
            }
            Some(Tok::Op("[")) => {
                p.pos += 1;
                let items = self.args(p, "]")?;
                Ok(Value::List(items))
            }
            Some(Tok::Name(first)) => {
                p.pos += 1;
                let mut name = first;
                while p.eat_op(".") {
                    match p.peek() {
                        Some(Tok::Name(n)) => {
                            name = format!("{name}.{n}");
                            p.pos += 1;
                        }
                        _ => return Err(PyError::new("SyntaxError", "invalid syntax")),
                    }
                }
                if p.eat_op("(") {
                    if self.disabled.contains(&name) {
                        return Err(PyError::new(
                            "DisabledApiError",
                            format!("'{name}' is disabled in this sandbox"),
                        ));
                    }
                    let args = self.args(p, ")")?;
                    return self.call(&name, args);
                }
                match name.as_str() {
                    "None" => Ok(Value::None),
                    "True" => Ok(Value::Int(1)),
                    "False" => Ok(Value::Int(0)),
                    _ => self.namespace.get(&name).cloned().ok_or_else(|| {
                        PyError::new("NameError", format!("name '{name}' is not defined"))
                    }),
                }
            }
            _ => Err(PyError::new("SyntaxError", "invalid syntax")),
        }
    }

    fn args(&mut self, p: &mut Parser, close: &str) -> PyResult<Vec<Value>> {
        let mut out = Vec::new();
        if p.eat_op(close) {
            return Ok(out);
        }
        loop {
            out.push(self.expr(p)?);
            if p.eat_op(close) {
                return Ok(out);
            }
            p.expect_op(",")?;
            if p.eat_op(close) {
                return Ok(out);
            }
        }
    }

    fn call(&mut self, name: &str, args: Vec<Value>) -> PyResult<Value> {
        let arity = |n: usize| -> PyResult<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(PyError::new(
                    "TypeError",
                    format!("{name}() takes {n} arguments ({} given)", args.len()),
                ))
            }
        };
        match name {
            "print" => {
                let line: Vec<String> = args.iter().map(Value::to_string).collect();
                self.stdout.push_str(&line.join(" "));
                self.stdout.push('\n');
                Ok(Value::None)
            }
            "str" => {
                arity(1)?;
                Ok(Value::Str(args[0].to_string()))
            }
            "int" => {
                arity(1)?;
                match &args[0] {
                    Value::Int(i) => Ok(Value::Int(*i)),
                    Value::Float(f) => Ok(Value::Int(f.trunc() as i64)),
                    Value::Str(s) => s.trim().parse().map(Value::Int).map_err(|_| {
                        PyError::new(
                            "ValueError",
                            format!("invalid literal for int() with base 10: {}", args[0].repr()),
                        )
                    }),
                    v => Err(PyError::new(
                        "TypeError",
                        format!(
                            "int() argument must be a string or a number, not '{}'",
                            v.type_name()
                        ),
                    )),
                }
            }
            "float" => {
                arity(1)?;
                match &args[0] {
                    Value::Str(s) => s.trim().parse().map(Value::Float).map_err(|_| {
                        PyError::new(
                            "ValueError",
                            format!("could not convert string to float: {}", args[0].repr()),
                        )
                    }),
                    v => v.as_f64().map(Value::Float).ok_or_else(|| {
                        PyError::new("TypeError", "float() argument must be a string or a number")
                    }),
                }
            }
            "len" => {
                arity(1)?;
                match &args[0] {
                    Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
                    Value::List(l) => Ok(Value::Int(l.len() as i64)),
                    v => Err(PyError::new(
                        "TypeError",
                        format!("object of type '{}' has no len()", v.type_name()),
                    )),
                }
            }
            "time.sleep" | "sleep" => {
                arity(1)?;
                let secs = args[0].as_f64().filter(|s| *s >= 0.0).ok_or_else(|| {
                    PyError::new("ValueError", "sleep length must be non-negative")
                })?;
                std::thread::sleep(Duration::from_secs_f64(secs));
                Ok(Value::None)
            }
            "listdir" | "os.listdir" => {
                let mut names: Vec<String> = std::fs::read_dir(&self.workdir)
                    .map_err(|e| PyError::new("OSError", e.to_string()))?
                    .filter_map(|e| e.ok())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .collect();
                names.sort();
                Ok(Value::List(names.into_iter().map(Value::Str).collect()))
            }
            "save_artifact" => {
                arity(2)?;
                let Value::Str(file) = &args[0] else {
                    return Err(PyError::new("TypeError", "artifact name must be a string"));
                };
                self.write_artifact(file.clone(), args[1].to_string())
            }
            "savefig" => {
                self.artifact_counter += 1;
                let file = format!("figure_{:03}.png", self.artifact_counter);
                let content = args.first().map(Value::to_string).unwrap_or_default();
                self.write_artifact(file, content)
            }
            _ => Err(PyError::new(
                "NameError",
                format!("name '{name}' is not defined"),
            )),
        }
    }

    fn write_artifact(&mut self, file: String, content: String) -> PyResult<Value> {
        std::fs::write(self.workdir.join(&file), content)
            .map_err(|e| PyError::new("OSError", e.to_string()))?;
        self.artifacts.push(file.clone());
        Ok(Value::Str(file))
    }
}

fn binary(op: &str, lhs: Value, rhs: Value) -> PyResult<Value> {
    let type_err = |l: &Value, r: &Value| {
        PyError::new(
            "TypeError",
            format!(
                "unsupported operand type(s) for {op}: '{}' and '{}'",
                l.type_name(),
                r.type_name()
            ),
        )
    };
    match (op, &lhs, &rhs) {
        ("+", Value::Str(a), Value::Str(b)) => Ok(Value::Str(format!("{a}{b}"))),
        ("+", Value::List(a), Value::List(b)) => {
            Ok(Value::List(a.iter().chain(b.iter()).cloned().collect()))
        }
        ("*", Value::Str(s), Value::Int(n)) | ("*", Value::Int(n), Value::Str(s)) => {
            Ok(Value::Str(s.repeat((*n).max(0) as usize)))
        }
        (_, Value::Int(a), Value::Int(b)) => {
            let (a, b) = (*a, *b);
            match op {
                "+" => Ok(Value::Int(a.wrapping_add(b))),
                "-" => Ok(Value::Int(a.wrapping_sub(b))),
                "*" => Ok(Value::Int(a.wrapping_mul(b))),
                "/" if b == 0 => Err(PyError::new("ZeroDivisionError", "division by zero")),
                "/" => Ok(Value::Float(a as f64 / b as f64)),
                "//" | "%" if b == 0 => Err(PyError::new(
                    "ZeroDivisionError",
                    "integer division or modulo by zero",
                )),
                "//" => Ok(Value::Int(
                    a.div_euclid(b) - i64::from(b < 0 && a.rem_euclid(b) != 0),
                )),
                "%" => Ok(Value::Int(
                    a - b * (a.div_euclid(b) - i64::from(b < 0 && a.rem_euclid(b) != 0)),
                )),
                _ => Err(type_err(&lhs, &rhs)),
            }
        }
        _ => {
            let (Some(a), Some(b)) = (lhs.as_f64(), rhs.as_f64()) else {
                return Err(type_err(&lhs, &rhs));
            };
            match op {
                "+" => Ok(Value::Float(a + b)),
                "-" => Ok(Value::Float(a - b)),
                "*" => Ok(Value::Float(a * b)),
                "/" | "//" | "%" if b == 0.0 => {
                    Err(PyError::new("ZeroDivisionError", "float division by zero"))
                }
                "/" => Ok(Value::Float(a / b)),
                "//" => Ok(Value::Float((a / b).floor())),
                "%" => Ok(Value::Float(a - b * (a / b).floor())),
                _ => Err(type_err(&lhs, &rhs)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub stdout: String,
    pub stderr: String,
    pub artifacts: Vec<String>,
    pub new_names: Vec<String>,
}

impl ExecOutcome {
    pub fn is_ok(&self) -> bool {
        self.stderr.is_empty()
    }
}

fn respond(out: &mut impl Write, opts: &MockOptions, mut resp: Response) -> std::io::Result<()> {
    if opts.wrong_id {
        resp.id.push_str("-x");
    }
    let line = if opts.extra_fields {
        let mut v = serde_json::to_value(&resp).expect("response serializes");
        v["guest_version"] = Json::from("mock-0.1");
        v["mem_kb"] = Json::from(1234);
        v.to_string()
    } else {
        encode(&resp)
    };
    writeln!(out, "{line}")?;
    out.flush()
}

/// Request loop over arbitrary streams. Returns when input ends.
pub fn serve(
    input: impl BufRead,
    mut output: impl Write,
    opts: &MockOptions,
) -> std::io::Result<()> {
    let proto = opts.proto.unwrap_or(PROTOCOL_VERSION);
    writeln!(output, "{}", encode(&Handshake { proto }))?;
    output.flush()?;
    let mut interp = Interpreter::new(opts.disabled.clone(), opts.workdir.clone());
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Json = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let mut r = Response::ok("");
                r.status = WireStatus::Error;
                r.stderr = format!("ProtocolError: {e}");
                respond(&mut output, opts, r)?;
                continue;
            }
        };
        let id = req["id"].as_str().unwrap_or("").to_string();
        let mut resp = Response::ok(id);
        match req["op"].as_str() {
            Some("ping") => {}
            Some("reset") => interp.reset(),
            Some("exec") => {
                if opts.stall {
                    loop {
                        std::thread::sleep(Duration::from_secs(3600));
                    }
                }
                let started = Instant::now();
                let snippet = req["snippet"].as_str().unwrap_or("");
                let outcome = interp.exec(snippet);
                resp.status = if outcome.is_ok() {
                    WireStatus::Ok
                } else {
                    WireStatus::Error
                };
                resp.stdout = outcome.stdout;
                resp.stderr = outcome.stderr;
                resp.artifacts = outcome.artifacts;
                resp.duration_s = started.elapsed().as_secs_f64();
                if !opts.no_deltas {
                    resp.new_names = Some(outcome.new_names);
                }
            }
            other => {
                resp.status = WireStatus::Error;
                resp.stderr = format!("ProtocolError: unknown op {other:?}");
            }
        }
        respond(&mut output, opts, resp)?;
    }
    Ok(())
}

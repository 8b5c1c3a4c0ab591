//! Token definitions and the lexer.
//!
//! The input language is a closed C subset: no preprocessor beyond `#pragma`
//! lines, no typedefs, no struct/union/enum. `#pragma` directives become
//! single tokens carrying their raw payload; the parser re-lexes payloads of
//! pragmas it understands so operand positions stay accurate.

use crate::loc::Loc;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kw {
    Void,
    Char,
    Short,
    Int,
    Long,
    Float,
    Double,
    Signed,
    Unsigned,
    Const,
    Static,
    Extern,
    SizeT,
    Return,
    If,
    Else,
    For,
    Sizeof,
    Attribute,
    // OpenCL kernel dialect
    ClKernel,
    ClGlobal,
}

impl Kw {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kw::Void => "void",
            Kw::Char => "char",
            Kw::Short => "short",
            Kw::Int => "int",
            Kw::Long => "long",
            Kw::Float => "float",
            Kw::Double => "double",
            Kw::Signed => "signed",
            Kw::Unsigned => "unsigned",
            Kw::Const => "const",
            Kw::Static => "static",
            Kw::Extern => "extern",
            Kw::SizeT => "size_t",
            Kw::Return => "return",
            Kw::If => "if",
            Kw::Else => "else",
            Kw::For => "for",
            Kw::Sizeof => "sizeof",
            Kw::Attribute => "__attribute__",
            Kw::ClKernel => "__kernel",
            Kw::ClGlobal => "__global",
        }
    }

    fn from_ident(s: &str) -> Option<Kw> {
        Some(match s {
            "void" => Kw::Void,
            "char" => Kw::Char,
            "short" => Kw::Short,
            "int" => Kw::Int,
            "long" => Kw::Long,
            "float" => Kw::Float,
            "double" => Kw::Double,
            "signed" => Kw::Signed,
            "unsigned" => Kw::Unsigned,
            "const" => Kw::Const,
            "static" => Kw::Static,
            "extern" => Kw::Extern,
            "size_t" => Kw::SizeT,
            "return" => Kw::Return,
            "if" => Kw::If,
            "else" => Kw::Else,
            "for" => Kw::For,
            "sizeof" => Kw::Sizeof,
            "__attribute__" => Kw::Attribute,
            "__kernel" => Kw::ClKernel,
            "__global" => Kw::ClGlobal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Punct {
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Assign,
    PlusAssign,
    MinusAssign,
    StarAssign,
    SlashAssign,
    PlusPlus,
    MinusMinus,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    Ne,
    Amp,
}

impl Punct {
    pub fn as_str(&self) -> &'static str {
        match self {
            Punct::LParen => "(",
            Punct::RParen => ")",
            Punct::LBracket => "[",
            Punct::RBracket => "]",
            Punct::LBrace => "{",
            Punct::RBrace => "}",
            Punct::Semi => ";",
            Punct::Comma => ",",
            Punct::Assign => "=",
            Punct::PlusAssign => "+=",
            Punct::MinusAssign => "-=",
            Punct::StarAssign => "*=",
            Punct::SlashAssign => "/=",
            Punct::PlusPlus => "++",
            Punct::MinusMinus => "--",
            Punct::Plus => "+",
            Punct::Minus => "-",
            Punct::Star => "*",
            Punct::Slash => "/",
            Punct::Lt => "<",
            Punct::Gt => ">",
            Punct::Le => "<=",
            Punct::Ge => ">=",
            Punct::EqEq => "==",
            Punct::Ne => "!=",
            Punct::Amp => "&",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Ident(String),
    /// Integer literal value (decimal or hex spelling in the source).
    IntLit(u64),
    /// Floating literal value plus whether it carried an `f`/`F` suffix.
    FloatLit(f64, bool),
    StrLit(String),
    /// A `#pragma` line: the payload after the word `pragma`, with the
    /// location where the payload begins (for re-lexing operands).
    Pragma { payload: String, payload_loc: Loc },
    Kw(Kw),
    Punct(Punct),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokKind,
    pub loc: Loc,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Ident(s) => write!(f, "identifier '{}'", s),
            TokKind::IntLit(v) => write!(f, "integer literal {}", v),
            TokKind::FloatLit(v, _) => write!(f, "floating literal {}", v),
            TokKind::StrLit(s) => write!(f, "string literal \"{}\"", s),
            TokKind::Pragma { .. } => write!(f, "#pragma"),
            TokKind::Kw(k) => write!(f, "'{}'", k.as_str()),
            TokKind::Punct(p) => write!(f, "'{}'", p.as_str()),
            TokKind::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{loc}: {message}")]
pub struct LexError {
    pub loc: Loc,
    pub message: String,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
    file: Arc<str>,
    /// True until a non-whitespace character has been seen on the current
    /// line; `#` directives are only recognized in this position.
    at_line_start: bool,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, file: &Arc<str>) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1, file: Arc::clone(file), at_line_start: true }
    }

    fn loc(&self) -> Loc {
        Loc::new(&self.file, self.line, self.col)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
            self.at_line_start = true;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, loc: Loc, message: impl Into<String>) -> LexError {
        LexError { loc, message: message.into() }
    }

    /// Skip whitespace and comments; returns an error for an unterminated
    /// block comment.
    fn skip_trivia(&mut self) -> Result<(), LexError> {
        loop {
            match self.peek() {
                Some(c) if (c as char).is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.peek2() == Some(b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                Some(b'/') if self.peek2() == Some(b'*') => {
                    let start = self.loc();
                    self.bump();
                    self.bump();
                    loop {
                        match self.peek() {
                            Some(b'*') if self.peek2() == Some(b'/') => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            Some(_) => {
                                self.bump();
                            }
                            None => return Err(self.err(start, "unterminated block comment")),
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn lex_directive(&mut self) -> Result<Token, LexError> {
        let hash_loc = self.loc();
        self.bump(); // '#'
        // Skip horizontal whitespace between '#' and the directive name.
        while matches!(self.peek(), Some(b' ') | Some(b'\t')) {
            self.bump();
        }
        let name_start = self.pos;
        while matches!(self.peek(), Some(c) if (c as char).is_ascii_alphanumeric() || c == b'_') {
            self.bump();
        }
        let name = std::str::from_utf8(&self.src[name_start..self.pos]).unwrap();
        if name != "pragma" {
            return Err(self.err(hash_loc, format!("unsupported preprocessor directive '#{}'", name)));
        }
        while matches!(self.peek(), Some(b' ') | Some(b'\t')) {
            self.bump();
        }
        let payload_loc = self.loc();
        let payload_start = self.pos;
        while let Some(c) = self.peek() {
            if c == b'\n' {
                break;
            }
            self.bump();
        }
        let payload = std::str::from_utf8(&self.src[payload_start..self.pos]).unwrap().trim_end().to_string();
        Ok(Token { kind: TokKind::Pragma { payload, payload_loc }, loc: hash_loc })
    }

    fn lex_number(&mut self) -> Result<Token, LexError> {
        let loc = self.loc();
        let start = self.pos;
        if self.peek() == Some(b'0') && matches!(self.peek2(), Some(b'x') | Some(b'X')) {
            self.bump();
            self.bump();
            let digits_start = self.pos;
            while matches!(self.peek(), Some(c) if (c as char).is_ascii_hexdigit()) {
                self.bump();
            }
            if self.pos == digits_start {
                return Err(self.err(loc, "missing digits in hexadecimal literal"));
            }
            let text = std::str::from_utf8(&self.src[digits_start..self.pos]).unwrap();
            let value = u64::from_str_radix(text, 16)
                .map_err(|_| self.err(loc.clone(), "hexadecimal literal out of range"))?;
            return Ok(Token { kind: TokKind::IntLit(value), loc });
        }
        while matches!(self.peek(), Some(c) if (c as char).is_ascii_digit()) {
            self.bump();
        }
        let mut is_float = false;
        if self.peek() == Some(b'.') && matches!(self.peek2(), Some(c) if (c as char).is_ascii_digit()) {
            is_float = true;
            self.bump();
            while matches!(self.peek(), Some(c) if (c as char).is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mut ahead = self.pos + 1;
            if matches!(self.src.get(ahead), Some(b'+') | Some(b'-')) {
                ahead += 1;
            }
            if matches!(self.src.get(ahead), Some(c) if (*c as char).is_ascii_digit()) {
                is_float = true;
                self.bump(); // e
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.bump();
                }
                while matches!(self.peek(), Some(c) if (c as char).is_ascii_digit()) {
                    self.bump();
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if is_float {
            let suffix = matches!(self.peek(), Some(b'f') | Some(b'F'));
            if suffix {
                self.bump();
            }
            let value: f64 = text.parse().map_err(|_| self.err(loc.clone(), "malformed floating literal"))?;
            Ok(Token { kind: TokKind::FloatLit(value, suffix), loc })
        } else {
            let value: u64 = text.parse().map_err(|_| self.err(loc.clone(), "integer literal out of range"))?;
            Ok(Token { kind: TokKind::IntLit(value), loc })
        }
    }

    fn lex_string(&mut self) -> Result<Token, LexError> {
        let loc = self.loc();
        self.bump(); // opening quote
        let mut value = String::new();
        loop {
            match self.peek() {
                None | Some(b'\n') => return Err(self.err(loc, "unterminated string literal")),
                Some(b'"') => {
                    self.bump();
                    break;
                }
                Some(b'\\') => {
                    self.bump();
                    let esc_loc = self.loc();
                    match self.bump() {
                        Some(b'n') => value.push('\n'),
                        Some(b't') => value.push('\t'),
                        Some(b'\\') => value.push('\\'),
                        Some(b'"') => value.push('"'),
                        Some(b'0') => value.push('\0'),
                        _ => return Err(self.err(esc_loc, "unsupported escape sequence in string literal")),
                    }
                }
                Some(c) => {
                    self.bump();
                    value.push(c as char);
                }
            }
        }
        Ok(Token { kind: TokKind::StrLit(value), loc })
    }

    fn lex_punct(&mut self) -> Result<Token, LexError> {
        let loc = self.loc();
        let c = self.peek().unwrap();
        let two = |a: u8, b: Option<u8>| -> bool { self.peek() == Some(a) && self.peek2() == b };
        let (punct, len) = match c {
            b'(' => (Punct::LParen, 1),
            b')' => (Punct::RParen, 1),
            b'[' => (Punct::LBracket, 1),
            b']' => (Punct::RBracket, 1),
            b'{' => (Punct::LBrace, 1),
            b'}' => (Punct::RBrace, 1),
            b';' => (Punct::Semi, 1),
            b',' => (Punct::Comma, 1),
            b'+' if two(b'+', Some(b'+')) => (Punct::PlusPlus, 2),
            b'+' if two(b'+', Some(b'=')) => (Punct::PlusAssign, 2),
            b'+' => (Punct::Plus, 1),
            b'-' if two(b'-', Some(b'-')) => (Punct::MinusMinus, 2),
            b'-' if two(b'-', Some(b'=')) => (Punct::MinusAssign, 2),
            b'-' => (Punct::Minus, 1),
            b'*' if two(b'*', Some(b'=')) => (Punct::StarAssign, 2),
            b'*' => (Punct::Star, 1),
            b'/' if two(b'/', Some(b'=')) => (Punct::SlashAssign, 2),
            b'/' => (Punct::Slash, 1),
            b'<' if two(b'<', Some(b'=')) => (Punct::Le, 2),
            b'<' => (Punct::Lt, 1),
            b'>' if two(b'>', Some(b'=')) => (Punct::Ge, 2),
            b'>' => (Punct::Gt, 1),
            b'=' if two(b'=', Some(b'=')) => (Punct::EqEq, 2),
            b'=' => (Punct::Assign, 1),
            b'!' if two(b'!', Some(b'=')) => (Punct::Ne, 2),
            b'&' => (Punct::Amp, 1),
            _ => {
                return Err(self.err(loc, format!("illegal character '{}'", c as char)));
            }
        };
        for _ in 0..len {
            self.bump();
        }
        Ok(Token { kind: TokKind::Punct(punct), loc })
    }

    fn next_token(&mut self) -> Result<Token, LexError> {
        self.skip_trivia()?;
        let Some(c) = self.peek() else {
            return Ok(Token { kind: TokKind::Eof, loc: self.loc() });
        };
        if c == b'#' {
            if self.at_line_start {
                return self.lex_directive();
            }
            return Err(self.err(self.loc(), "'#' is only allowed at the start of a line"));
        }
        self.at_line_start = false;
        if (c as char).is_ascii_alphabetic() || c == b'_' {
            let loc = self.loc();
            let start = self.pos;
            while matches!(self.peek(), Some(c) if (c as char).is_ascii_alphanumeric() || c == b'_') {
                self.bump();
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let kind = match Kw::from_ident(text) {
                Some(kw) => TokKind::Kw(kw),
                None => TokKind::Ident(text.to_string()),
            };
            return Ok(Token { kind, loc });
        }
        if (c as char).is_ascii_digit() {
            return self.lex_number();
        }
        if c == b'"' {
            return self.lex_string();
        }
        self.lex_punct()
    }
}

/// Lex `src` into a token list ending with a single `Eof` token.
pub fn tokenize(src: &str, file: &str) -> Result<Vec<Token>, LexError> {
    let file: Arc<str> = Arc::from(file);
    tokenize_at(src, &file, 1, 1)
}

/// Lex a fragment that begins at an arbitrary position of `file`; used for
/// pragma payloads so operand diagnostics point into the original line.
pub fn tokenize_at(src: &str, file: &Arc<str>, line: u32, col: u32) -> Result<Vec<Token>, LexError> {
    let mut lexer = Lexer::new(src, file);
    lexer.line = line;
    lexer.col = col;
    let mut tokens = Vec::new();
    loop {
        let tok = lexer.next_token()?;
        let done = tok.kind == TokKind::Eof;
        tokens.push(tok);
        if done {
            return Ok(tokens);
        }
    }
}

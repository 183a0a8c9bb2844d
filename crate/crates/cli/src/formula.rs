//! Model formulas in the familiar `y ~ x1 + x2 + (1|group)` notation.
//!
//! The intercept is implicit. Random terms must be intercept-only; a
//! covariate on the left of the bar is a random slope and is rejected.

use quasiboot::ModelSpec;

use crate::error::ParseError;

/// A name together with the 1-based column where it appeared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub name: String,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub text: String,
    pub response: Term,
    pub fixed: Vec<Term>,
    pub random: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(String),
    Tilde,
    Plus,
    Bar,
    Open,
    Close,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '.'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        let single = match c {
            '~' => Some(Token::Tilde),
            '+' => Some(Token::Plus),
            '|' => Some(Token::Bar),
            '(' => Some(Token::Open),
            ')' => Some(Token::Close),
            _ => None,
        };
        if let Some(t) = single {
            tokens.push((t, pos));
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '`' {
            let end = chars[i + 1..]
                .iter()
                .position(|&d| d == '`')
                .ok_or_else(|| ParseError::new(pos, "unterminated backquoted name"))?;
            let name: String = chars[i + 1..i + 1 + end].iter().collect();
            if name.is_empty() {
                return Err(ParseError::new(pos, "empty backquoted name"));
            }
            tokens.push((Token::Ident(name), pos));
            i += end + 2;
        } else if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            tokens.push((Token::Ident(chars[start..i].iter().collect()), pos));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            tokens.push((Token::Number(chars[start..i].iter().collect()), pos));
        } else {
            return Err(ParseError::new(pos, format!("unexpected character `{c}`")));
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at).map(|(t, _)| t)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn next(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<usize, ParseError> {
        let pos = self.position();
        match self.next() {
            Some((t, p)) if t == want => Ok(p),
            Some(_) => Err(ParseError::new(pos, format!("expected {what}"))),
            None => Err(ParseError::new(pos, format!("expected {what} before end of formula"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<Term, ParseError> {
        let pos = self.position();
        match self.next() {
            Some((Token::Ident(name), p)) => Ok(Term { name, position: p }),
            Some(_) => Err(ParseError::new(pos, format!("expected {what}"))),
            None => Err(ParseError::new(pos, format!("expected {what} before end of formula"))),
        }
    }

    /// Parses `( 1 | factor )` after the opening parenthesis.
    fn random_term(&mut self, open: usize) -> Result<Term, ParseError> {
        let pos = self.position();
        match self.next() {
            Some((Token::Number(n), _)) if n == "1" => {}
            Some((Token::Ident(name), _)) => {
                return Err(ParseError::new(
                    pos,
                    format!("random slopes are not supported (`{name}` before `|`); use (1|factor)"),
                ))
            }
            _ => return Err(ParseError::new(pos, "expected `1` at the start of a random term")),
        }
        if self.peek() == Some(&Token::Plus) {
            return Err(ParseError::new(
                self.position(),
                "random slopes are not supported; use (1|factor)",
            ));
        }
        self.expect(Token::Bar, "`|` in random term")?;
        let factor = self.ident("grouping factor name after `|`")?;
        if self.peek() != Some(&Token::Close) {
            return Err(ParseError::new(
                self.position(),
                format!("expected `)` closing the random term opened at column {open}"),
            ));
        }
        self.next();
        Ok(factor)
    }
}

/// Parses `response ~ term (+ term)*` where a term is a column name, the
/// literal `1`, or `(1|factor)`.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        at: 0,
        end: text.chars().count() + 1,
    };
    let response = p.ident("response column name")?;
    p.expect(Token::Tilde, "`~` after the response")?;
    let mut fixed: Vec<Term> = Vec::new();
    let mut random: Vec<Term> = Vec::new();
    loop {
        let pos = p.position();
        match p.next() {
            Some((Token::Ident(name), position)) => {
                if name == response.name {
                    return Err(ParseError::new(position, format!("response `{name}` used as a covariate")));
                }
                if fixed.iter().any(|t| t.name == name) {
                    return Err(ParseError::new(position, format!("duplicate covariate `{name}`")));
                }
                fixed.push(Term { name, position });
            }
            Some((Token::Number(n), _)) if n == "1" => {}
            Some((Token::Open, open)) => {
                let factor = p.random_term(open)?;
                if random.iter().any(|t| t.name == factor.name) {
                    return Err(ParseError::new(
                        factor.position,
                        format!("duplicate random factor `{}`", factor.name),
                    ));
                }
                random.push(factor);
            }
            Some(_) => return Err(ParseError::new(pos, "expected a covariate name, `1`, or `(1|factor)`")),
            None => return Err(ParseError::new(pos, "expected a term after `~` or `+`")),
        }
        match p.next() {
            None => break,
            Some((Token::Plus, _)) => continue,
            Some((_, position)) => return Err(ParseError::new(position, "expected `+` between terms")),
        }
    }
    Ok(Formula {
        text: text.to_string(),
        response,
        fixed,
        random,
    })
}

impl Formula {
    /// Every column the formula reads from the data, response first.
    pub fn referenced(&self) -> impl Iterator<Item = &Term> {
        std::iter::once(&self.response)
            .chain(&self.fixed)
            .chain(&self.random)
    }

    /// Checks every referenced name against `columns` and builds the spec.
    pub fn resolve<S: AsRef<str>>(&self, columns: &[S]) -> Result<ModelSpec, ParseError> {
        for term in self.referenced() {
            if !columns.iter().any(|c| c.as_ref() == term.name) {
                return Err(ParseError::new(term.position, format!("unknown column `{}`", term.name)));
            }
        }
        self.spec()
    }

    /// The model specification, without checking names against any data.
    pub fn spec(&self) -> Result<ModelSpec, ParseError> {
        let fixed: Vec<&str> = self.fixed.iter().map(|t| t.name.as_str()).collect();
        let random: Vec<&str> = self.random.iter().map(|t| t.name.as_str()).collect();
        ModelSpec::from_names(&fixed, &random).map_err(|e| ParseError::new(1, e.to_string()))
    }
}

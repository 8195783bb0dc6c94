use super::SqlFault;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Bare or quoted identifier. Keywords are identifiers too; the parser
    /// matches them case-insensitively.
    Ident { text: String, quoted: bool },
    Number(String),
    Str(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Semi,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    /// 1-based character column in the statement.
    pub pos: usize,
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.tok {
            Tok::Ident { text, .. } => format!("'{text}'"),
            Tok::Number(n) => n.clone(),
            Tok::Str(s) => format!("'{s}'"),
            Tok::End => "end of statement".into(),
            other => format!("'{}'", symbol(other)),
        }
    }

    pub fn keyword(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Ident { text, quoted: false } if text.eq_ignore_ascii_case(kw))
    }
}

fn symbol(t: &Tok) -> &'static str {
    match t {
        Tok::Comma => ",",
        Tok::Dot => ".",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::Star => "*",
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Slash => "/",
        Tok::Eq => "=",
        Tok::Ne => "!=",
        Tok::Lt => "<",
        Tok::Le => "<=",
        Tok::Gt => ">",
        Tok::Ge => ">=",
        Tok::Semi => ";",
        _ => "?",
    }
}

pub fn tokenize(sql: &str) -> Result<Vec<Token>, SqlFault> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = |tok: Tok| Token { tok, pos };
        match c {
            ',' => out.push(single(Tok::Comma)),
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                out.push(single(Tok::Dot))
            }
            '(' => out.push(single(Tok::LParen)),
            ')' => out.push(single(Tok::RParen)),
            '*' => out.push(single(Tok::Star)),
            '+' => out.push(single(Tok::Plus)),
            '-' if chars.get(i + 1) == Some(&'-') => {
                // Line comment.
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '-' => out.push(single(Tok::Minus)),
            '/' => out.push(single(Tok::Slash)),
            ';' => out.push(single(Tok::Semi)),
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 1;
                }
                out.push(single(Tok::Eq));
            }
            '!' if chars.get(i + 1) == Some(&'=') => {
                i += 1;
                out.push(single(Tok::Ne));
            }
            '<' => match chars.get(i + 1) {
                Some('=') => {
                    i += 1;
                    out.push(single(Tok::Le));
                }
                Some('>') => {
                    i += 1;
                    out.push(single(Tok::Ne));
                }
                _ => out.push(single(Tok::Lt)),
            },
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 1;
                    out.push(single(Tok::Ge));
                } else {
                    out.push(single(Tok::Gt));
                }
            }
            '\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(SqlFault::new(pos, "unterminated string literal")),
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => break,
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    pos,
                });
            }
            '"' | '`' => {
                let close = c;
                let start = i + 1;
                let end = (start..chars.len())
                    .find(|&j| chars[j] == close)
                    .ok_or_else(|| SqlFault::new(pos, "unterminated quoted identifier"))?;
                out.push(Token {
                    tok: Tok::Ident {
                        text: chars[start..end].iter().collect(),
                        quoted: true,
                    },
                    pos,
                });
                i = end;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Number(chars[start..i].iter().collect()),
                    pos,
                });
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident {
                        text: chars[start..i].iter().collect(),
                        quoted: false,
                    },
                    pos,
                });
                continue;
            }
            other => {
                return Err(SqlFault::new(pos, format!("unexpected character '{other}'")));
            }
        }
        i += 1;
    }
    out.push(Token {
        tok: Tok::End,
        pos: chars.len() + 1,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_one_based_chars() {
        let toks = tokenize("SELECT a, 'x''y' FROM t WHERE b<>2").unwrap();
        assert_eq!(toks[0].pos, 1);
        assert_eq!(toks[1].pos, 8);
        assert_eq!(toks[3].tok, Tok::Str("x'y".into()));
        assert!(toks.iter().any(|t| t.tok == Tok::Ne));
        assert_eq!(toks.last().unwrap().tok, Tok::End);
    }

    #[test]
    fn unterminated_string() {
        let e = tokenize("SELECT 'abc").unwrap_err();
        assert_eq!(e.pos, 8);
    }
}

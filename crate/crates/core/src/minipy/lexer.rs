use super::Exc;

#[derive(Debug, Clone, PartialEq)]
pub enum T {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tok {
    pub t: T,
    pub line: usize,
}

const OPS: [&str; 38] = [
    "**=", "//=", "->", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "(", ")",
    "[", "]", "{", "}", ",", ":", ".", ";", "=", "+", "-", "*", "/", "%", "<", ">", "&", "|", "^",
    "~", "@", "!",
];

fn syntax(line: usize, msg: impl Into<String>) -> Exc {
    Exc::new("SyntaxError", msg, line)
}

/// Python-style tokenization with INDENT/DEDENT and implicit joining inside
/// brackets.
pub fn tokenize(src: &str) -> Result<Vec<Tok>, Exc> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize;
    let mut line = 1usize;
    let mut i = 0usize;
    let mut at_line_start = true;

    while i < chars.len() {
        if at_line_start && depth == 0 {
            let mut col = 0;
            let mut j = i;
            while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
                col = if chars[j] == '\t' { (col / 8 + 1) * 8 } else { col + 1 };
                j += 1;
            }
            // Blank and comment-only lines do not affect indentation.
            if j >= chars.len() || chars[j] == '\n' || chars[j] == '#' || chars[j] == '\r' {
                while j < chars.len() && chars[j] != '\n' {
                    j += 1;
                }
                i = j + 1;
                line += 1;
                continue;
            }
            let top = *indents.last().unwrap();
            if col > top {
                indents.push(col);
                out.push(Tok { t: T::Indent, line });
            } else {
                while col < *indents.last().unwrap() {
                    indents.pop();
                    out.push(Tok { t: T::Dedent, line });
                }
                if col != *indents.last().unwrap() {
                    return Err(Exc::new(
                        "IndentationError",
                        "unindent does not match any outer indentation level",
                        line,
                    ));
                }
            }
            i = j;
            at_line_start = false;
        }
        let c = chars[i];
        match c {
            '\n' => {
                if depth == 0 && !matches!(out.last(), Some(Tok { t: T::Newline, .. }) | None) {
                    out.push(Tok { t: T::Newline, line });
                }
                line += 1;
                i += 1;
                if depth == 0 {
                    at_line_start = true;
                }
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                i += 2;
                line += 1;
            }
            '\'' | '"' => {
                let start_line = line;
                let (s, next, lines) = read_string(&chars, i, start_line)?;
                out.push(Tok {
                    t: T::Str(s),
                    line: start_line,
                });
                line += lines;
                i = next;
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let (t, next) = read_number(&chars, i, line)?;
                out.push(Tok { t, line });
                i = next;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                // String prefixes are not supported beyond plain literals.
                if (word == "f" || word == "r" || word == "b") && matches!(chars.get(i), Some('\'' | '"')) {
                    return Err(syntax(line, format!("{word}-strings are not supported")));
                }
                out.push(Tok { t: T::Name(word), line });
            }
            _ => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let Some(op) = OPS.iter().find(|op| rest.starts_with(**op)) else {
                    return Err(syntax(line, format!("invalid character '{c}'")));
                };
                match *op {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        if depth == 0 {
                            return Err(syntax(line, format!("unmatched '{op}'")));
                        }
                        depth -= 1;
                    }
                    _ => {}
                }
                out.push(Tok { t: T::Op(op), line });
                i += op.chars().count();
            }
        }
    }
    if depth > 0 {
        return Err(syntax(line, "unexpected EOF: unclosed bracket"));
    }
    if !matches!(out.last(), Some(Tok { t: T::Newline, .. }) | None) {
        out.push(Tok { t: T::Newline, line });
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Tok { t: T::Dedent, line });
    }
    out.push(Tok { t: T::Eof, line });
    Ok(out)
}

/// Returns the decoded string, the index after it and the number of
/// newlines it spans.
fn read_string(chars: &[char], start: usize, line: usize) -> Result<(String, usize, usize), Exc> {
    let q = chars[start];
    let triple = chars.get(start + 1) == Some(&q) && chars.get(start + 2) == Some(&q);
    let mut i = start + if triple { 3 } else { 1 };
    let mut s = String::new();
    let mut lines = 0;
    loop {
        let Some(&c) = chars.get(i) else {
            return Err(syntax(line, "unterminated string literal"));
        };
        if triple {
            if c == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                return Ok((s, i + 3, lines));
            }
        } else if c == q {
            return Ok((s, i + 1, lines));
        } else if c == '\n' {
            return Err(syntax(line, "unterminated string literal"));
        }
        if c == '\\' {
            let Some(&e) = chars.get(i + 1) else {
                return Err(syntax(line, "unterminated string literal"));
            };
            match e {
                'n' => s.push('\n'),
                't' => s.push('\t'),
                'r' => s.push('\r'),
                '0' => s.push('\0'),
                '\\' | '\'' | '"' => s.push(e),
                '\n' => lines += 1,
                other => {
                    s.push('\\');
                    s.push(other);
                }
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            lines += 1;
        }
        s.push(c);
        i += 1;
    }
}

fn read_number(chars: &[char], start: usize, line: usize) -> Result<(T, usize), Exc> {
    let mut i = start;
    let mut float = false;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_digit() || c == '_' {
            i += 1;
        } else if c == '.' && !float {
            float = true;
            i += 1;
        } else if (c == 'e' || c == 'E')
            && chars
                .get(i + 1)
                .is_some_and(|d| d.is_ascii_digit() || ((*d == '-' || *d == '+') && chars.get(i + 2).is_some_and(|d| d.is_ascii_digit())))
        {
            float = true;
            i += 2;
        } else {
            break;
        }
    }
    if chars.get(i).is_some_and(|c| c.is_alphabetic() || *c == '_') {
        return Err(syntax(line, "invalid decimal literal"));
    }
    let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
    if !float {
        if let Ok(v) = text.parse::<i64>() {
            return Ok((T::Int(v), i));
        }
    }
    text.parse::<f64>()
        .map(|v| (T::Float(v), i))
        .map_err(|_| syntax(line, "invalid number literal"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<T> {
        tokenize(src).unwrap().into_iter().map(|t| t.t).collect()
    }

    #[test]
    fn indentation_tokens() {
        let toks = kinds("if x:\n    y = 1\n\n    # note\nz\n");
        assert_eq!(
            toks,
            vec![
                T::Name("if".into()),
                T::Name("x".into()),
                T::Op(":"),
                T::Newline,
                T::Indent,
                T::Name("y".into()),
                T::Op("="),
                T::Int(1),
                T::Newline,
                T::Dedent,
                T::Name("z".into()),
                T::Newline,
                T::Eof,
            ]
        );
    }

    #[test]
    fn brackets_join_lines_and_keep_numbers() {
        let toks = tokenize("f(1,\n  2.5)\nx = 'a\\'b'\n").unwrap();
        assert_eq!(toks[4].t, T::Float(2.5));
        assert_eq!(toks[7].line, 3);
        assert_eq!(toks[9].t, T::Str("a'b".into()));
    }

    #[test]
    fn triple_quotes_span_lines() {
        let toks = tokenize("s = \"\"\"a\nb\"\"\"\nx\n").unwrap();
        assert_eq!(toks[2].t, T::Str("a\nb".into()));
        assert_eq!(toks[4].line, 3);
    }

    #[test]
    fn bad_input() {
        assert_eq!(tokenize("x = 'abc\n").unwrap_err().error_type, "SyntaxError");
        assert_eq!(tokenize("if x:\n    a\n  b\n").unwrap_err().error_type, "IndentationError");
        assert_eq!(tokenize("f(1\n").unwrap_err().error_type, "SyntaxError");
    }
}

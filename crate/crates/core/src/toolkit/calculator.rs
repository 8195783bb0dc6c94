//! Arithmetic evaluator behind `Calculate`.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | primary
//! primary := NUMBER | '(' expr ')' | FUNC '(' expr (',' expr)* ')'
//! FUNC    := mean | max | min | sum
//! ```

use super::{ToolError, ToolErrorCode};

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

fn err(message: String) -> ToolError {
    ToolError::new(ToolErrorCode::BadExpression, message)
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn fail<T>(&self, what: &str) -> Result<T, ToolError> {
        let found = self.src[self.pos..]
            .chars()
            .next()
            .map(|c| format!("'{c}'"))
            .unwrap_or_else(|| "end of input".into());
        Err(err(format!(
            "cannot evaluate {:?}: expected {what} at position {}, found {found}",
            self.src,
            self.pos + 1
        )))
    }

    fn expect(&mut self, b: u8) -> Result<(), ToolError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(&format!("'{}'", b as char))
        }
    }

    fn expr(&mut self) -> Result<f64, ToolError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc += self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc -= self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<f64, ToolError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc *= self.unary()?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let at = self.pos;
                    let d = self.unary()?;
                    if d == 0.0 {
                        return Err(err(format!(
                            "cannot evaluate {:?}: division by zero at position {at}",
                            self.src
                        )));
                    }
                    acc /= d;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<f64, ToolError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<f64, ToolError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(b')')?;
                Ok(v)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => self.number(),
            Some(b) if b.is_ascii_alphabetic() => self.call(),
            _ => self.fail("a number, '(' or a function"),
        }
    }

    fn number(&mut self) -> Result<f64, ToolError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Optional exponent.
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'e' | b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>().or_else(|_| {
            self.pos = start;
            self.fail("a number")
        })
    }

    fn call(&mut self) -> Result<f64, ToolError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        let name = self.src[start..self.pos].to_ascii_lowercase();
        if !matches!(name.as_str(), "mean" | "max" | "min" | "sum") {
            self.pos = start;
            return self.fail("one of mean, max, min, sum");
        }
        self.expect(b'(')?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(b')')?;
        Ok(match name.as_str() {
            "mean" => args.iter().sum::<f64>() / args.len() as f64,
            "sum" => args.iter().sum(),
            "max" => args.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            _ => args.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

pub fn calculate(expression: &str) -> Result<f64, ToolError> {
    let mut p = Parser {
        src: expression,
        bytes: expression.as_bytes(),
        pos: 0,
    };
    let v = p.expr()?;
    if p.peek().is_some() {
        return p.fail("an operator or end of input");
    }
    if !v.is_finite() {
        return Err(err(format!("{expression:?} does not evaluate to a finite number")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(calculate("(2+3)*4").unwrap(), 20.0);
        assert_eq!(calculate("mean(2, 4, 9)").unwrap(), 5.0);
        assert_eq!(calculate("1/0").unwrap_err().code, ToolErrorCode::BadExpression);
    }

    #[test]
    fn precedence_and_unary() {
        assert_eq!(calculate("2+3*4").unwrap(), 14.0);
        assert_eq!(calculate("-2*-3").unwrap(), 6.0);
        assert_eq!(calculate("10-4-3").unwrap(), 3.0);
        assert_eq!(calculate("8/4/2").unwrap(), 1.0);
        assert_eq!(calculate("max(1, min(5, 3), -2) + sum(1,2)").unwrap(), 6.0);
        assert_eq!(calculate("1.5e2").unwrap(), 150.0);
        assert_eq!(calculate(" 3 ").unwrap(), 3.0);
    }

    #[test]
    fn rejects_junk() {
        for e in ["", "2+", "(1", "1)", "sqrt(4)", "2 3", "1..2", "mean()", "1/(2-2)"] {
            assert_eq!(calculate(e).unwrap_err().code, ToolErrorCode::BadExpression, "{e}");
        }
    }
}
